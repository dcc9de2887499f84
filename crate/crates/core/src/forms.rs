//! Real differential forms on a catalog manifold, stored as coframe components
//! `α = Σ_I α_I ε^I` over the bitmask basis of [`crate::algebra`].

use num_complex::Complex;
use rand::Rng;

use crate::algebra::{self, PointMap};
use crate::error::{Error, Result};
use crate::geometry::ManifoldSpec;
use crate::grid::{ops, Grid};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct FormField<T> {
    pub degree: usize,
    /// `comps[k][p]`: coefficient of the `k`-th basis element at node `p`.
    pub comps: Vec<Vec<T>>,
}

impl<T: Real> FormField<T> {
    pub fn zeros(degree: usize, npts: usize) -> Self {
        Self { degree, comps: vec![vec![T::zero(); npts]; algebra::dim(degree)] }
    }

    pub fn from_scalar(f: Vec<T>) -> Self {
        Self { degree: 0, comps: vec![f] }
    }

    /// `f ε^{mask}`.
    pub fn monomial(mask: u8, f: Vec<T>) -> Self {
        let degree = mask.count_ones() as usize;
        let mut out = Self::zeros(degree, f.len());
        out.comps[algebra::index_of(mask)] = f;
        out
    }

    pub fn len(&self) -> usize {
        self.comps.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn component(&self, mask: u8) -> &[T] {
        &self.comps[algebra::index_of(mask)]
    }

    fn zip(&self, other: &Self, f: impl Fn(&[T], &[T]) -> Vec<T>) -> Self {
        assert_eq!(self.degree, other.degree, "degree mismatch");
        Self { degree: self.degree, comps: self.comps.iter().zip(&other.comps).map(|(a, b)| f(a, b)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, ops::add)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, ops::sub)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { degree: self.degree, comps: self.comps.iter().map(|c| ops::scale(c, s)).collect() }
    }

    pub fn axpy(&mut self, s: T, x: &Self) {
        for (y, x) in self.comps.iter_mut().zip(&x.comps) {
            ops::axpy(y, s, x);
        }
    }

    /// Multiplies by a function.
    pub fn mul_fn(&self, f: &[T]) -> Self {
        Self { degree: self.degree, comps: self.comps.iter().map(|c| ops::mul(c, f)).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.comps.iter().map(|c| ops::max_abs(c)).fold(T::zero(), |a, b| a.max(b))
    }

    pub fn map_comps(&self, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        Self { degree: self.degree, comps: self.comps.iter().map(|c| f(c)).collect() }
    }

    /// Flattens components into one vector (component-major).
    pub fn to_vec(&self) -> Vec<T> {
        self.comps.concat()
    }

    pub fn from_vec(degree: usize, v: &[T]) -> Self {
        let d = algebra::dim(degree);
        let n = v.len() / d;
        Self { degree, comps: (0..d).map(|k| v[k * n..(k + 1) * n].to_vec()).collect() }
    }

    /// Random band-limited form, every component mean zero.
    pub fn random<R: Rng>(grid: &Grid<T>, rng: &mut R, degree: usize, cutoff: usize) -> Self {
        Self { degree, comps: (0..algebra::dim(degree)).map(|_| grid.random_band_limited(rng, cutoff)).collect() }
    }
}

/// Complex-valued form `re + √−1 im`.
#[derive(Clone, Debug)]
pub struct ComplexForm<T> {
    pub re: FormField<T>,
    pub im: FormField<T>,
}

impl<T: Real> ComplexForm<T> {
    pub fn degree(&self) -> usize {
        self.re.degree
    }

    pub fn scale_i(&self) -> Self {
        Self { re: self.im.scale(-T::one()), im: self.re.clone() }
    }

    pub fn scale(&self, s: T) -> Self {
        Self { re: self.re.scale(s), im: self.im.scale(s) }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { re: self.re.sub(&o.re), im: self.im.sub(&o.im) }
    }

    pub fn max_abs(&self) -> T {
        self.re.max_abs().max(self.im.max_abs())
    }
}

pub fn wedge<T: Real>(a: &FormField<T>, b: &FormField<T>) -> Result<FormField<T>> {
    let deg = a.degree + b.degree;
    if deg > 4 {
        return Err(Error::DegreeOverflow { p: a.degree, q: b.degree });
    }
    let npts = a.len();
    let mut out = FormField::zeros(deg, npts);
    for (i, &ma) in algebra::basis(a.degree).iter().enumerate() {
        for (k, &mb) in algebra::basis(b.degree).iter().enumerate() {
            let s = algebra::wedge_sign(ma, mb);
            if s == 0 {
                continue;
            }
            let st = T::lit(s as f64);
            let dst = &mut out.comps[algebra::index_of(ma | mb)];
            for p in 0..npts {
                dst[p] += st * a.comps[i][p] * b.comps[k][p];
            }
        }
    }
    Ok(out)
}

fn apply_map<T: Real>(m: &PointMap<T>, a: &FormField<T>, degree: usize) -> FormField<T> {
    FormField { degree, comps: m.apply(&a.comps) }
}

pub fn hodge_star<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    apply_map(&spec.star[a.degree], a, 4 - a.degree)
}

/// `(Jα)(v₁,…,v_p) = α(Jv₁,…,Jv_p)`.
pub fn j_act<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    apply_map(&spec.j_forms[a.degree], a, a.degree)
}

/// Constant part `dε^I` as coefficients over the `(p+1)`-basis.
fn d_basis<T: Real>(spec: &ManifoldSpec<T>, mask: u8) -> Vec<(usize, T)> {
    let idx = algebra::indices(mask);
    let mut acc = vec![T::zero(); algebra::dim(idx.len() + 1)];
    for (k, &c) in idx.iter().enumerate() {
        let sign_k = if k % 2 == 0 { T::one() } else { -T::one() };
        let prefix: u8 = idx[..k].iter().fold(0, |m, &i| m | (1 << i));
        let suffix: u8 = idx[k + 1..].iter().fold(0, |m, &i| m | (1 << i));
        for a in 0..4 {
            for b in (a + 1)..4 {
                let s = spec.structure[c][a][b];
                if s == T::zero() {
                    continue;
                }
                let ab = (1u8 << a) | (1u8 << b);
                let s1 = algebra::wedge_sign(prefix, ab);
                let s2 = algebra::wedge_sign(prefix | ab, suffix);
                if s1 == 0 || s2 == 0 {
                    continue;
                }
                acc[algebra::index_of(prefix | ab | suffix)] += sign_k * s * T::lit((s1 * s2) as f64);
            }
        }
    }
    acc.into_iter().enumerate().filter(|(_, v)| *v != T::zero()).collect()
}

/// Exterior derivative `dα = Σ_{a,I} E_a(α_I) ε^a∧ε^I + α_I dε^I`. Panics on 4-forms.
pub fn d<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    let p = a.degree;
    let npts = a.len();
    assert!(p < 4, "d of a top-degree form");
    let mut out = FormField::zeros(p + 1, npts);
    for (i, &mi) in algebra::basis(p).iter().enumerate() {
        for e in 0..4 {
            let s = algebra::wedge_sign(1 << e, mi);
            if s == 0 || !frame_acts(spec, e) {
                continue;
            }
            let de = spec.frame_deriv(&a.comps[i], e);
            ops::axpy(&mut out.comps[algebra::index_of(mi | (1 << e))], T::lit(s as f64), &de);
        }
        for (k, c) in d_basis(spec, mi) {
            ops::axpy(&mut out.comps[k], c, &a.comps[i]);
        }
    }
    out
}

fn frame_acts<T: Real>(spec: &ManifoldSpec<T>, e: usize) -> bool {
    (0..4).any(|mu| spec.frame[e][mu] != T::zero() && spec.grid.is_active(mu))
}

/// `d* = −*d*`, the L² adjoint of [`d`]. Panics on functions.
pub fn d_star<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    assert!(a.degree > 0, "d* of a function");
    hodge_star(spec, &d(spec, &hodge_star(spec, a))).scale(-T::one())
}

/// Self-dual / anti-self-dual parts `½(α ± *α)` of a 2-form.
pub fn split_pm<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> (FormField<T>, FormField<T>) {
    let s = hodge_star(spec, a);
    (a.add(&s).scale(T::lit(0.5)), a.sub(&s).scale(T::lit(0.5)))
}

/// J-invariant and J-anti-invariant parts `½(ψ ± Jψ)` of a 2-form.
pub fn split_j<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> (FormField<T>, FormField<T>) {
    let j = j_act(spec, a);
    (a.add(&j).scale(T::lit(0.5)), a.sub(&j).scale(T::lit(0.5)))
}

/// `P⁻_J`: projection of 2-forms onto the J-anti-invariant bundle.
pub fn anti_invariant<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    split_j(spec, a).1
}

/// `(d⁺_J a, d⁻_J a) = ½(da ± J da)` for a 1-form `a`.
pub fn d_pm_j<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> (FormField<T>, FormField<T>) {
    split_j(spec, &d(spec, a))
}

/// `d⁺a = ½(da + *da)`.
pub fn d_plus<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    split_pm(spec, &d(spec, a)).0
}

pub fn d_minus<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    split_pm(spec, &d(spec, a)).1
}

/// Pointwise `⟨α, β⟩_g`.
pub fn pointwise_inner<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>, b: &FormField<T>) -> Vec<T> {
    assert_eq!(a.degree, b.degree);
    let m = &spec.inner[a.degree];
    let d = m.rows;
    let npts = a.len();
    let mut out = vec![T::zero(); npts];
    for (p, o) in out.iter_mut().enumerate() {
        let w = m.at(p);
        let mut s = T::zero();
        for i in 0..d {
            let ai = a.comps[i][p];
            if ai == T::zero() {
                continue;
            }
            for k in 0..d {
                s += ai * w[i * d + k] * b.comps[k][p];
            }
        }
        *o = s / spec.vol_density[p];
    }
    out
}

/// `Λ_F β = ⟨β, F⟩` pointwise, for 2-forms (so `Λ_F F = 2`).
pub fn lambda_contract<T: Real>(spec: &ManifoldSpec<T>, b: &FormField<T>) -> Vec<T> {
    pointwise_inner(spec, b, &spec.f_form)
}

/// `∫ ⟨α, β⟩ vol`.
pub fn inner<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>, b: &FormField<T>) -> T {
    assert_eq!(a.degree, b.degree);
    let m = &spec.inner[a.degree];
    let d = m.rows;
    let mut s = T::zero();
    if m.is_uniform() {
        let w = m.at(0);
        for i in 0..d {
            for k in 0..d {
                let wik = w[i * d + k];
                if wik == T::zero() {
                    continue;
                }
                let mut acc = T::zero();
                for (x, y) in a.comps[i].iter().zip(&b.comps[k]) {
                    acc += *x * *y;
                }
                s += wik * acc;
            }
        }
    } else {
        for p in 0..a.len() {
            let w = m.at(p);
            for i in 0..d {
                for k in 0..d {
                    s += a.comps[i][p] * w[i * d + k] * b.comps[k][p];
                }
            }
        }
    }
    s * spec.grid.cell_volume()
}

pub fn norm2<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> T {
    inner(spec, a, a)
}

pub fn norm<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> T {
    crate::scalar::sqrt(norm2(spec, a).max(T::zero()))
}

/// Top-degree form divided by the metric volume form.
pub fn top_density<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> Vec<T> {
    assert_eq!(a.degree, 4);
    a.comps[0].iter().zip(&spec.vol_density).map(|(v, mu)| *v / *mu).collect()
}

/// Components `α(f_{A₁}, …, f_{A_p})` of a real form in the complex coframe
/// `{θ¹, θ², θ̄¹, θ̄²}` (frame `f = (e₁, e₂, ē₁, ē₂)`), indexed by masks over
/// these four slots. The type of a slot mask `A` is `(|A ∩ {0,1}|, |A ∩ {2,3}|)`.
pub fn complex_components<T: Real>(frame: &crate::geometry::FrameField<T>, a: &FormField<T>) -> Vec<Vec<Complex<T>>> {
    let p = a.degree;
    let b = algebra::basis(p);
    let npts = a.len();
    let mut out = vec![vec![Complex::new(T::zero(), T::zero()); npts]; b.len()];
    for q in 0..npts {
        let cols: [[Complex<T>; 4]; 4] = [frame.e[q][0], frame.e[q][1], frame.e_bar(q, 0), frame.e_bar(q, 1)];
        for (r, &amask) in b.iter().enumerate() {
            let slots = algebra::indices(amask);
            let mut s = Complex::new(T::zero(), T::zero());
            for (k, &kmask) in b.iter().enumerate() {
                let rows = algebra::indices(kmask);
                let m = complex_minor(&cols, &rows, &slots);
                s += m * a.comps[k][q];
            }
            out[r][q] = s;
        }
    }
    out
}

/// `det[f_{slot_j}^{row_i}]`.
fn complex_minor<T: Real>(cols: &[[Complex<T>; 4]; 4], rows: &[usize], slots: &[usize]) -> Complex<T> {
    match rows.len() {
        0 => Complex::new(T::one(), T::zero()),
        1 => cols[slots[0]][rows[0]],
        n => {
            let mut s = Complex::new(T::zero(), T::zero());
            for c in 0..n {
                let sub: Vec<usize> = slots.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, v)| *v).collect();
                let t = cols[slots[c]][rows[0]] * complex_minor(cols, &rows[1..], &sub);
                if c % 2 == 0 {
                    s += t;
                } else {
                    s -= t;
                }
            }
            s
        }
    }
}

/// Bidegree of a complex-slot mask.
pub fn slot_type(mask: u8) -> (usize, usize) {
    ((mask & 0b0011).count_ones() as usize, (mask & 0b1100).count_ones() as usize)
}

/// Decomposition of a real form by type: for each `(p, q)` the real form
/// obtained by keeping only slot masks of that type.
pub struct TypeComponents<T> {
    pub parts: Vec<((usize, usize), ComplexForm<T>)>,
}

/// Splits a real form into its `(p, q)` parts, each returned as a complex form in
/// real-coframe components.
pub fn split_type<T: Real>(frame: &crate::geometry::FrameField<T>, a: &FormField<T>) -> TypeComponents<T> {
    let p = a.degree;
    let comps = complex_components(frame, a);
    let b = algebra::basis(p);
    let npts = a.len();
    let mut parts = Vec::new();
    for pp in 0..=p.min(2) {
        let qq = p - pp;
        if qq > 2 {
            continue;
        }
        let mut re = FormField::zeros(p, npts);
        let mut im = FormField::zeros(p, npts);
        for (r, &amask) in b.iter().enumerate() {
            if slot_type(amask) != (pp, qq) {
                continue;
            }
            // θ^A expanded in ε^K: coefficient is det[θ^{A_i}_{K_j}]
            for q in 0..npts {
                let th: [[Complex<T>; 4]; 4] = [frame.theta[q][0], frame.theta[q][1], frame.theta_bar(q, 0), frame.theta_bar(q, 1)];
                let slots = algebra::indices(amask);
                for (k, &kmask) in b.iter().enumerate() {
                    let ks = algebra::indices(kmask);
                    let m = coframe_minor(&th, &slots, &ks);
                    let v = comps[r][q] * m;
                    re.comps[k][q] += v.re;
                    im.comps[k][q] += v.im;
                }
            }
        }
        parts.push(((pp, qq), ComplexForm { re, im }));
    }
    TypeComponents { parts }
}

fn coframe_minor<T: Real>(th: &[[Complex<T>; 4]; 4], slots: &[usize], ks: &[usize]) -> Complex<T> {
    match slots.len() {
        0 => Complex::new(T::one(), T::zero()),
        1 => th[slots[0]][ks[0]],
        n => {
            let mut s = Complex::new(T::zero(), T::zero());
            for c in 0..n {
                let sub: Vec<usize> = ks.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, v)| *v).collect();
                let t = th[slots[0]][ks[c]] * coframe_minor(th, &slots[1..], &sub);
                if c % 2 == 0 {
                    s += t;
                } else {
                    s -= t;
                }
            }
            s
        }
    }
}

impl<T: Real> TypeComponents<T> {
    pub fn get(&self, p: usize, q: usize) -> Option<&ComplexForm<T>> {
        self.parts.iter().find(|(t, _)| *t == (p, q)).map(|(_, f)| f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_manifold, CatalogId};
    use crate::grid::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn flat(n: usize) -> ManifoldSpec<f64> {
        build_manifold(CatalogId::FlatTorusKahler, &GridSpec::cube(n), &BTreeMap::new()).unwrap()
    }

    fn kt(n: usize) -> ManifoldSpec<f64> {
        build_manifold(CatalogId::KodairaThurston, &GridSpec::z_invariant(n), &BTreeMap::new()).unwrap()
    }

    fn perturbed(n: usize) -> ManifoldSpec<f64> {
        let p = BTreeMap::from([("epsilon".to_string(), 0.1)]);
        build_manifold(CatalogId::TorusPerturbed, &GridSpec::cube(n), &p).unwrap()
    }

    fn all() -> Vec<ManifoldSpec<f64>> {
        vec![flat(8), kt(16), perturbed(8)]
    }

    #[test]
    fn j_on_dt_is_minus_dx() {
        let m = flat(4);
        let dt = FormField::monomial(0b0001, vec![1.0; m.npts()]);
        let j = j_act(&m, &dt);
        assert_eq!(j.component(0b0010)[0], -1.0);
        assert_eq!(j.component(0b0001)[0], 0.0);
    }

    #[test]
    fn star_star_sign_by_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in all() {
            for p in 0..=4 {
                let a = FormField::random(&m.grid, &mut rng, p, 2);
                let ss = hodge_star(&m, &hodge_star(&m, &a));
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                assert!(ss.sub(&a.scale(sign)).max_abs() < 1e-12, "{} p={p}", m.name());
            }
        }
    }

    #[test]
    fn fundamental_form_identities() {
        for m in all() {
            let f = &m.f_form;
            assert!(hodge_star(&m, f).sub(f).max_abs() < 1e-12);
            let ff = top_density(&m, &wedge(f, f).unwrap());
            assert!(ff.iter().all(|v| (v - 2.0).abs() < 1e-12));
            assert!(lambda_contract(&m, f).iter().all(|v| (v - 2.0).abs() < 1e-12));
            assert!(j_act(&m, f).sub(f).max_abs() < 1e-12);
            assert!(j_act(&m, &m.omega_minus).add(&m.omega_minus).max_abs() < 1e-12);
        }
    }

    #[test]
    fn d_squared_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in all() {
            for p in 0..3 {
                let a = FormField::random(&m.grid, &mut rng, p, 3);
                assert!(d(&m, &d(&m, &a)).max_abs() < 1e-10, "{} p={p}", m.name());
            }
        }
    }

    #[test]
    fn d_star_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in all() {
            for p in 0..3 {
                let a = FormField::random(&m.grid, &mut rng, p, 3);
                let b = FormField::random(&m.grid, &mut rng, p + 1, 3);
                let lhs = inner(&m, &d(&m, &a), &b);
                let rhs = inner(&m, &a, &d_star(&m, &b));
                assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()), "{} p={p}: {lhs} vs {rhs}", m.name());
            }
        }
    }

    #[test]
    fn star_j_is_wedge_with_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in all() {
            let a = FormField::random(&m.grid, &mut rng, 1, 2);
            let lhs = hodge_star(&m, &j_act(&m, &a));
            let rhs = wedge(&a, &m.f_form).unwrap();
            assert!(lhs.sub(&rhs).max_abs() < 1e-12, "{}", m.name());
        }
    }

    #[test]
    fn self_dual_split_of_da() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in all() {
            let a = FormField::random(&m.grid, &mut rng, 1, 3);
            let (dpj, dmj) = d_pm_j(&m, &a);
            let lam = lambda_contract(&m, &dpj);
            let rhs = dmj.add(&m.f_form.mul_fn(&lam).scale(0.5));
            assert!(d_plus(&m, &a).sub(&rhs).max_abs() < 1e-10, "{}", m.name());
            let (p, q) = (norm2(&m, &d_plus(&m, &a)), norm2(&m, &d_minus(&m, &a)));
            assert!((p - q).abs() < 1e-10 * p.max(1.0), "{}: {p} vs {q}", m.name());
        }
    }

    #[test]
    fn codifferential_of_f_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for m in all() {
            let f = m.grid.random_band_limited(&mut rng, 2);
            let df = d(&m, &FormField::from_scalar(f.clone()));
            let lhs = d_star(&m, &m.omega.mul_fn(&f));
            let rhs = j_act(&m, &df).sub(&hodge_star(&m, &wedge(&df, &m.omega_minus).unwrap()));
            assert!(lhs.sub(&rhs).max_abs() < 1e-9 * (1.0 + lhs.max_abs()), "{}", m.name());
        }
    }

    #[test]
    fn leibniz_on_resolved_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = flat(16);
        let a = FormField::random(&m.grid, &mut rng, 1, 3);
        let b = FormField::random(&m.grid, &mut rng, 1, 3);
        let lhs = d(&m, &wedge(&a, &b).unwrap());
        let rhs = wedge(&d(&m, &a), &b).unwrap().sub(&wedge(&a, &d(&m, &b)).unwrap());
        assert!(lhs.sub(&rhs).max_abs() < 1e-9);
    }

    #[test]
    fn unitary_coframe_reproduces_f() {
        for m in all() {
            let fr = m.unitary_frame().unwrap();
            assert!(fr.duality_residual() < 1e-12);
            for p in (0..m.npts()).step_by(97) {
                for (k, &mask) in algebra::basis(2).iter().enumerate() {
                    let ix = algebra::indices(mask);
                    let mut v = 0.0;
                    for i in 0..2 {
                        let th = fr.theta[p][i];
                        v += -2.0 * (th[ix[0]] * th[ix[1]].conj()).im;
                    }
                    assert!((v - m.f_form.comps[k][p]).abs() < 1e-12, "{}", m.name());
                }
            }
        }
    }

    #[test]
    fn type_split_reassembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for m in all() {
            let fr = m.unitary_frame().unwrap();
            let a = FormField::random(&m.grid, &mut rng, 2, 2);
            let parts = split_type(&fr, &a);
            let mut re = FormField::zeros(2, m.npts());
            let mut im = FormField::zeros(2, m.npts());
            for (_, c) in &parts.parts {
                re = re.add(&c.re);
                im = im.add(&c.im);
            }
            assert!(re.sub(&a).max_abs() < 1e-12 && im.max_abs() < 1e-12);
            // the (1,1) part is the J-invariant part
            let (inv, _) = split_j(&m, &a);
            assert!(parts.get(1, 1).unwrap().re.sub(&inv).max_abs() < 1e-12);
        }
    }
}
