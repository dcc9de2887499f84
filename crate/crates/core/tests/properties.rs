use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtilde::expr::Expr;
use dtilde::forms::{self, FormField};
use dtilde::geometry::{build_manifold, CatalogId, ManifoldSpec};
use dtilde::grid::GridSpec;
use dtilde::io;
use dtilde::local_domain::{local_estimate_report, BoxDomain, Chart, Mode, WeightedField};

fn catalog() -> &'static [ManifoldSpec<f64>] {
    static CELL: OnceLock<Vec<ManifoldSpec<f64>>> = OnceLock::new();
    CELL.get_or_init(|| {
        vec![
            build_manifold(CatalogId::FlatTorusKahler, &GridSpec::cube(4), &BTreeMap::new()).unwrap(),
            build_manifold(CatalogId::TorusPerturbed, &GridSpec::cube(4), &BTreeMap::new()).unwrap(),
            build_manifold(CatalogId::KodairaThurston, &GridSpec::z_invariant(8), &BTreeMap::new()).unwrap(),
        ]
    })
}

fn random_form(spec: &ManifoldSpec<f64>, seed: u64, degree: usize) -> FormField<f64> {
    FormField::random(&spec.grid, &mut ChaCha8Rng::seed_from_u64(seed), degree, 1)
}

fn rel(a: &FormField<f64>, b: &FormField<f64>) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    a.sub(b).max_abs() / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn d_squared_vanishes(m in 0usize..3, p in 0usize..3, seed in any::<u64>()) {
        let spec = &catalog()[m];
        let a = random_form(spec, seed, p);
        let dda = forms::d(spec, &forms::d(spec, &a));
        prop_assert!(dda.max_abs() <= 1e-9 * forms::d(spec, &a).max_abs().max(1.0));
    }

    #[test]
    fn star_star_is_sign(m in 0usize..3, p in 0usize..5, seed in any::<u64>()) {
        let spec = &catalog()[m];
        let a = random_form(spec, seed, p);
        let ss = forms::hodge_star(spec, &forms::hodge_star(spec, &a));
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!(rel(&ss, &a.scale(sign)) < 1e-12);
    }

    #[test]
    fn wedge_is_graded_commutative(p in 0usize..5, q in 0usize..5, seed in any::<u64>()) {
        prop_assume!(p + q <= 4);
        let spec = &catalog()[0];
        let a = random_form(spec, seed, p);
        let b = random_form(spec, seed.wrapping_add(1), q);
        let ab = forms::wedge(&a, &b).unwrap();
        let ba = forms::wedge(&b, &a).unwrap();
        let sign = if (p * q) % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!(rel(&ab, &ba.scale(sign)) < 1e-13);
    }

    #[test]
    fn j_type_split_is_a_projection(m in 0usize..3, seed in any::<u64>()) {
        let spec = &catalog()[m];
        let a = random_form(spec, seed, 2);
        let (plus, minus) = forms::split_j(spec, &a);
        prop_assert!(rel(&plus.add(&minus), &a) < 1e-13);
        prop_assert!(rel(&forms::split_j(spec, &minus).1, &minus) < 1e-12);
        prop_assert!(forms::inner(spec, &plus, &minus).abs() < 1e-10 * forms::norm2(spec, &a));
    }

    #[test]
    fn d_star_is_adjoint(m in 0usize..3, p in 1usize..5, seed in any::<u64>()) {
        let spec = &catalog()[m];
        let a = random_form(spec, seed, p - 1);
        let b = random_form(spec, seed.wrapping_add(7), p);
        let lhs = forms::inner(spec, &forms::d(spec, &a), &b);
        let rhs = forms::inner(spec, &a, &forms::d_star(spec, &b));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (lhs.abs() + rhs.abs()).max(1.0));
    }

    #[test]
    fn sidecar_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| ((seed as f64) * 1e-3 + i as f64).sin()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        io::write_sidecar(&path, &shape, &data).unwrap();
        let sc = io::read_sidecar(&path).unwrap();
        prop_assert_eq!(sc.shape, shape);
        prop_assert_eq!(sc.data, data);
    }

    #[test]
    fn expressions_match_direct_evaluation(a in -3.0f64..3.0, kx in -3i64..4, ky in -3i64..4, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let op = if ky < 0 { '-' } else { '+' };
        let e = Expr::parse(&format!("{a}*sin({kx}*x {op} {}*y) - cos(y)", ky.abs())).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        let want = a * (tp * (kx as f64 * x + ky as f64 * y)).sin() - (tp * y).cos();
        prop_assert!((e.eval([0.0, x, y, 0.0], [1.0; 4]) - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Every term is a Hermitian quadratic form in `u`; the left side is only a
    /// real quadratic form, so it is checked under real scaling.
    #[test]
    fn local_terms_are_phase_invariant(theta in 0.0f64..6.28, scale in 0.2f64..3.0, seed in any::<u64>(), kt in any::<bool>()) {
        let chart = if kt { Chart::KodairaThurston } else { Chart::Flat };
        let dom = BoxDomain::centered(chart, 0.5, 1, 4).unwrap();
        let field = WeightedField::random(&mut ChaCha8Rng::seed_from_u64(seed), 2, 2.0, None);
        let rotate = |c: f64, s: f64| WeightedField {
            modes: field
                .modes
                .iter()
                .map(|m| Mode { k: m.k, c: m.c.map(|[re, im]| [c * re - s * im, c * im + s * re]) })
                .collect(),
            cutoff: field.cutoff,
        };
        let rotated = rotate(scale * theta.cos(), scale * theta.sin());
        let a = local_estimate_report(&dom, &field, 1).unwrap();
        let b = local_estimate_report(&dom, &rotated, 1).unwrap();
        let s2 = scale * scale;
        for (x, y) in a.terms.iter().zip(&b.terms) {
            prop_assert!((y.value - s2 * x.value).abs() <= 1e-9 * s2 * a.lhs.abs().max(1.0), "{} {} {}", x.name, x.value, y.value);
        }
        let scaled = local_estimate_report(&dom, &rotate(scale, 0.0), 1).unwrap();
        prop_assert!((scaled.lhs - s2 * a.lhs).abs() <= 1e-10 * s2 * a.lhs.abs().max(1.0));
    }
}
