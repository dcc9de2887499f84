//! Catalog manifolds presented by an invariant coframe `ε^a` on a periodic
//! grid, together with `J`, the taming form `ω` and the derived Hermitian data
//! `F = ω^{(1,1)}`, `ω⁻ = ω − F` and `g = F(·, J·)`.
//!
//! Frame conventions used throughout the crate:
//!
//! | object | convention |
//! |---|---|
//! | `J` | `J E_b = Σ_a J[a][b] E_a`, frame components |
//! | forms | `(Jψ)(v₁,…,v_p) = ψ(Jv₁,…,Jv_p)` |
//! | orientation | `vol = ε⁰∧ε¹∧ε²∧ε³`, so `F∧F = 2 vol` |
//! | complex frame | `e_i = (v_i − √−1 J v_i)/√2`, `{v₁,Jv₁,v₂,Jv₂}` g-orthonormal |
//! | `F` | `F = √−1(θ¹∧θ̄¹ + θ²∧θ̄²)` in the dual coframe |

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::algebra::{self, Mat4, PointMap};
use crate::error::{Error, Result};
use crate::forms::FormField;
use crate::grid::{Grid, GridSpec};
use crate::scalar::{cabs2, cplx, sqrt, two_pi, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogId {
    FlatTorusKahler,
    TorusPerturbed,
    KodairaThurston,
}

impl CatalogId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat_torus_kahler" => Ok(Self::FlatTorusKahler),
            "torus_perturbed" => Ok(Self::TorusPerturbed),
            "kodaira_thurston" => Ok(Self::KodairaThurston),
            other => Err(Error::UnknownManifold(other.into())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FlatTorusKahler => "flat_torus_kahler",
            Self::TorusPerturbed => "torus_perturbed",
            Self::KodairaThurston => "kodaira_thurston",
        }
    }

    pub fn all() -> [CatalogId; 3] {
        [Self::FlatTorusKahler, Self::TorusPerturbed, Self::KodairaThurston]
    }
}

/// Structure constants: `dε^c(E_a, E_b) = s[c][a][b]`.
pub type Structure<T> = [[[T; 4]; 4]; 4];

/// Perturbation amplitude parameter of `torus_perturbed`.
pub const PARAM_EPSILON: &str = "epsilon";

/// A complex frame `{e₁, e₂}` of `T^{1,0}` with its dual coframe, pointwise in
/// real-frame components: `e_i = Σ_a e[p][i][a] E_a`, `θ^i = Σ_a theta[p][i][a] ε^a`.
#[derive(Clone, Debug)]
pub struct FrameField<T: Real> {
    pub e: Vec<[[Complex<T>; 4]; 2]>,
    pub theta: Vec<[[Complex<T>; 4]; 2]>,
}

impl<T: Real> FrameField<T> {
    pub fn e_bar(&self, p: usize, i: usize) -> [Complex<T>; 4] {
        self.e[p][i].map(|z| z.conj())
    }

    pub fn theta_bar(&self, p: usize, i: usize) -> [Complex<T>; 4] {
        self.theta[p][i].map(|z| z.conj())
    }

    /// Largest deviation of `θ^i(e_j) = δ_ij`, `θ^i(ē_j) = 0` over the grid.
    pub fn duality_residual(&self) -> T {
        let mut worst = T::zero();
        for p in 0..self.e.len() {
            for i in 0..2 {
                for j in 0..2 {
                    let mut a = Complex::new(T::zero(), T::zero());
                    let mut b = Complex::new(T::zero(), T::zero());
                    for c in 0..4 {
                        a += self.theta[p][i][c] * self.e[p][j][c];
                        b += self.theta[p][i][c] * self.e[p][j][c].conj();
                    }
                    if i == j {
                        a -= Complex::new(T::one(), T::zero());
                    }
                    worst = worst.max(sqrt(cabs2(a))).max(sqrt(cabs2(b)));
                }
            }
        }
        worst
    }
}

/// Pointwise inversion of a complex frame: rows of `[e₁ e₂ ē₁ ē₂]⁻¹` give
/// `θ¹, θ², θ̄¹, θ̄²`.
pub fn dual_coframe<T: Real>(frame: &[[[Complex<T>; 4]; 2]]) -> Result<Vec<[[Complex<T>; 4]; 2]>> {
    let mut out = Vec::with_capacity(frame.len());
    for (p, e) in frame.iter().enumerate() {
        let m = nalgebra::Matrix4::<Complex<T>>::from_fn(|a, col| match col {
            0 => e[0][a],
            1 => e[1][a],
            2 => e[0][a].conj(),
            _ => e[1][a].conj(),
        });
        let inv = m.try_inverse().ok_or(Error::SingularFrame { point: p })?;
        let mut th = [[Complex::new(T::zero(), T::zero()); 4]; 2];
        for i in 0..2 {
            for a in 0..4 {
                th[i][a] = inv[(i, a)];
            }
        }
        if th.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::SingularFrame { point: p });
        }
        out.push(th);
    }
    Ok(out)
}

/// Output of [`build_hermitian_from_taming`].
#[derive(Clone, Debug)]
pub struct HermitianData<T: Real> {
    pub f_form: FormField<T>,
    pub omega_minus: FormField<T>,
    /// `g_ab = F(E_a, J E_b)`.
    pub metric: PointMap<T>,
}

fn two_form_matrix<T: Real>(w: &FormField<T>, p: usize) -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (k, &mask) in algebra::basis(2).iter().enumerate() {
        let ix = algebra::indices(mask);
        let v = w.comps[k][p];
        m[ix[0]][ix[1]] = v;
        m[ix[1]][ix[0]] = -v;
    }
    m
}

fn sym_min_eig<T: Real>(m: &Mat4<T>) -> T {
    let s = Matrix4::from_fn(|i, j| (m[i][j] + m[j][i]) * T::lit(0.5));
    SymmetricEigen::new(s).eigenvalues.iter().fold(T::max_value().unwrap(), |a, b| a.min(*b))
}

/// `F = ½(ω + Jω)`, `ω⁻ = ω − F`, `g(v, w) = F(v, Jw)`; fails when `g` is not
/// positive definite at some node (`ω` does not tame `J`).
pub fn build_hermitian_from_taming<T: Real>(j: &PointMap<T>, omega: &FormField<T>) -> Result<HermitianData<T>> {
    if omega.degree != 2 {
        return Err(Error::DegreeMismatch { expected: 2, got: omega.degree });
    }
    let npts = omega.len();
    let j2 = j_induced(j, npts, 2);
    let j_omega = FormField { degree: 2, comps: j2.apply(&omega.comps) };
    let f_form = omega.add(&j_omega).scale(T::lit(0.5));
    let omega_minus = omega.sub(&f_form);
    let mut min_eig = T::max_value().unwrap();
    let metric_of = |p: usize| -> Mat4<T> {
        let fm = two_form_matrix(&f_form, p);
        let jm = mat_at(j, p);
        algebra::mat_mul(&fm, &jm)
    };
    let mut mats = Vec::with_capacity(npts);
    for p in 0..npts {
        let g = metric_of(p);
        min_eig = min_eig.min(sym_min_eig(&g));
        mats.push(g);
    }
    if min_eig <= T::zero() {
        return Err(Error::TamingViolation { min: min_eig.to_f64() });
    }
    let uniform = j.is_uniform() && omega.comps.iter().all(|c| c.iter().all(|v| *v == c[0]));
    let flat = |g: &Mat4<T>| g.iter().flatten().copied().collect::<Vec<T>>();
    let metric = if uniform {
        PointMap::uniform(4, 4, flat(&mats[0]))
    } else {
        PointMap::from_fn(4, 4, npts, |p| flat(&mats[p]))
    };
    Ok(HermitianData { f_form, omega_minus, metric })
}

pub fn mat_at<T: Real>(m: &PointMap<T>, p: usize) -> Mat4<T> {
    let d = m.at(p);
    let mut out = [[T::zero(); 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            out[a][b] = d[a * 4 + b];
        }
    }
    out
}

fn j_induced<T: Real>(j: &PointMap<T>, npts: usize, p: usize) -> PointMap<T> {
    let d = algebra::dim(p);
    if j.is_uniform() {
        PointMap::uniform(d, d, algebra::induced(&mat_at(j, 0), p))
    } else {
        PointMap::from_fn(d, d, npts, |q| algebra::induced(&mat_at(j, q), p))
    }
}

/// Minimum over nodes of the smallest eigenvalue of the symmetric part of
/// `v ↦ ω(v, Jv)`, i.e. `min_{p, v} ω(v, Jv)/|v|²` with `|v|` the frame norm.
pub fn taming_margin<T: Real>(j: &PointMap<T>, omega: &FormField<T>) -> T {
    let mut min = T::max_value().unwrap();
    for p in 0..omega.len() {
        let w = two_form_matrix(omega, p);
        let wj = algebra::mat_mul(&w, &mat_at(j, p));
        min = min.min(sym_min_eig(&wj));
    }
    min
}

/// Immutable manifold description consumed by every other module.
#[derive(Clone, Debug)]
pub struct ManifoldSpec<T: Real> {
    pub id: CatalogId,
    pub params: BTreeMap<String, f64>,
    pub grid: Arc<Grid<T>>,
    /// `E_a = Σ_μ frame[a][μ] ∂_μ` on the active sector.
    pub frame: Mat4<T>,
    /// Coefficient `c` of the shear `E_y = ∂_y + c·x ∂_z` (Kodaira–Thurston); it
    /// acts trivially on the z-invariant sector and is recorded for export.
    pub z_shear: f64,
    pub structure: Structure<T>,
    pub j: PointMap<T>,
    pub omega: FormField<T>,
    pub f_form: FormField<T>,
    pub omega_minus: FormField<T>,
    pub metric: PointMap<T>,
    pub metric_inv: PointMap<T>,
    /// `√det g` relative to `ε⁰¹²³`.
    pub vol_density: Vec<T>,
    /// Induced `J` action on `Λ^p`, `p = 0..4`.
    pub j_forms: [PointMap<T>; 5],
    /// Hodge star `Λ^p → Λ^{4−p}`.
    pub star: [PointMap<T>; 5],
    /// `√det g · G^{-1}` on `Λ^p`: L² inner product weights.
    pub inner: [PointMap<T>; 5],
    pub integrable: bool,
    /// Largest perturbation amplitude keeping the taming condition (perturbed torus only).
    pub eps_max: Option<f64>,
    pub taming_margin: T,
}

fn j0<T: Real>() -> Mat4<T> {
    let mut j = [[T::zero(); 4]; 4];
    j[1][0] = T::one();
    j[0][1] = -T::one();
    j[3][2] = T::one();
    j[2][3] = -T::one();
    j
}

fn standard_omega<T: Real>(npts: usize) -> FormField<T> {
    let mut w = FormField::zeros(2, npts);
    w.comps[algebra::index_of(0b0011)] = vec![T::one(); npts];
    w.comps[algebra::index_of(0b1100)] = vec![T::one(); npts];
    w
}

/// Periodic matrix field `B(p)` used by `torus_perturbed`.
pub fn perturbation_field<T: Real>(x: [T; 4]) -> Mat4<T> {
    const S1: [[f64; 4]; 4] = [[0.3, -0.5, 0.2, 0.1], [0.4, 0.1, -0.3, 0.2], [-0.2, 0.6, 0.1, -0.4], [0.5, 0.2, -0.1, 0.3]];
    const S2: [[f64; 4]; 4] = [[-0.1, 0.2, 0.5, -0.3], [0.3, -0.4, 0.1, 0.6], [0.2, 0.1, -0.5, 0.2], [-0.6, 0.3, 0.2, 0.1]];
    const S3: [[f64; 4]; 4] = [[0.2, 0.4, -0.1, 0.3], [-0.3, 0.2, 0.4, -0.1], [0.1, -0.2, 0.3, 0.5], [0.4, -0.1, -0.3, 0.2]];
    let tp = two_pi::<T>();
    let a = (tp * x[0]).sin();
    let b = (tp * x[2]).cos();
    let c = (tp * (x[1] + x[3])).sin();
    let mut m = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            m[i][k] = T::lit(S1[i][k]) * a + T::lit(S2[i][k]) * b + T::lit(S3[i][k]) * c;
        }
    }
    m
}

fn perturbed_j<T: Real>(grid: &Grid<T>, eps: T) -> Result<PointMap<T>> {
    let jz = j0::<T>();
    let mut mats = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let b = perturbation_field(grid.coords(p));
        let mut a = algebra::identity::<T>();
        for i in 0..4 {
            for k in 0..4 {
                a[i][k] += eps * b[i][k];
            }
        }
        let ainv = algebra::inverse4(&a).ok_or(Error::InvalidParameter("I + εB is singular".into()))?;
        let jm = algebra::mat_mul(&algebra::mat_mul(&a, &jz), &ainv);
        mats.push(jm.iter().flatten().copied().collect::<Vec<T>>());
    }
    Ok(PointMap::from_fn(4, 4, grid.len(), |p| mats[p].clone()))
}

/// Largest `ε` for which `J_ε = A J₀ A⁻¹` stays tamed by the standard `ω`, by
/// bisection of the taming margin on (a subsample of) the grid.
pub fn find_eps_max<T: Real>(grid: &Grid<T>) -> f64 {
    let stride = (grid.len() / 4096).max(1);
    let nodes: Vec<usize> = (0..grid.len()).step_by(stride).collect();
    let omega = standard_omega::<T>(1);
    let jz = j0::<T>();
    let tamed = |eps: f64| -> bool {
        nodes.iter().all(|&p| {
            let b = perturbation_field(grid.coords(p));
            let mut a = algebra::identity::<T>();
            for i in 0..4 {
                for k in 0..4 {
                    a[i][k] += T::lit(eps) * b[i][k];
                }
            }
            let Some(ainv) = algebra::inverse4(&a) else { return false };
            let jm = algebra::mat_mul(&algebra::mat_mul(&a, &jz), &ainv);
            let w = two_form_matrix(&omega, 0);
            sym_min_eig(&algebra::mat_mul(&w, &jm)) > T::zero()
        })
    };
    let (mut lo, mut hi) = (0.0, 4.0);
    if tamed(hi) {
        return hi;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if tamed(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Builds a catalog manifold. `params` may carry `epsilon` for `torus_perturbed`.
pub fn build_manifold<T: Real>(id: CatalogId, grid: &GridSpec, params: &BTreeMap<String, f64>) -> Result<ManifoldSpec<T>> {
    let grid = Arc::new(Grid::<T>::new(grid)?);
    let npts = grid.len();
    let mut structure = [[[T::zero(); 4]; 4]; 4];
    let mut z_shear = 0.0;
    let mut eps_max = None;
    let mut params = params.clone();
    let (j, integrable) = match id {
        CatalogId::FlatTorusKahler => {
            reject_params(&params, &[])?;
            (PointMap::uniform(4, 4, j0::<T>().iter().flatten().copied().collect()), true)
        }
        CatalogId::KodairaThurston => {
            reject_params(&params, &[])?;
            if grid.is_active(3) {
                return Err(Error::InvalidGrid("kodaira_thurston fields live in the z-invariant sector; set z inactive".into()));
            }
            // γ = dz − x dy, dγ = −dx∧dy
            structure[3][1][2] = -T::one();
            structure[3][2][1] = T::one();
            z_shear = 1.0;
            (PointMap::uniform(4, 4, j0::<T>().iter().flatten().copied().collect()), false)
        }
        CatalogId::TorusPerturbed => {
            reject_params(&params, &[PARAM_EPSILON])?;
            let eps = *params.entry(PARAM_EPSILON.into()).or_insert(0.1);
            let emax = find_eps_max(&grid);
            eps_max = Some(emax);
            if !(0.0..emax).contains(&eps) {
                return Err(Error::TamingViolation { min: emax - eps });
            }
            (perturbed_j(&grid, T::lit(eps))?, eps == 0.0)
        }
    };
    let omega = standard_omega::<T>(npts);
    let margin = taming_margin(&j, &omega);
    if margin <= T::zero() {
        return Err(Error::TamingViolation { min: margin.to_f64() });
    }
    let herm = build_hermitian_from_taming(&j, &omega)?;
    let mut spec = assemble(id, params, grid, algebra::identity(), z_shear, structure, j, omega, herm, integrable, eps_max)?;
    spec.taming_margin = margin;
    spec.check_invariants()?;
    Ok(spec)
}

fn reject_params(params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::InvalidParameter(format!("unknown parameter `{k}`")));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble<T: Real>(
    id: CatalogId,
    params: BTreeMap<String, f64>,
    grid: Arc<Grid<T>>,
    frame: Mat4<T>,
    z_shear: f64,
    structure: Structure<T>,
    j: PointMap<T>,
    omega: FormField<T>,
    herm: HermitianData<T>,
    integrable: bool,
    eps_max: Option<f64>,
) -> Result<ManifoldSpec<T>> {
    let npts = grid.len();
    let uniform = herm.metric.is_uniform() && j.is_uniform();
    let per_point = |f: &dyn Fn(usize) -> Vec<T>, rows: usize, cols: usize| -> PointMap<T> {
        if uniform {
            PointMap::uniform(rows, cols, f(0))
        } else {
            PointMap::from_fn(rows, cols, npts, f)
        }
    };
    let mut inv_mats = Vec::with_capacity(if uniform { 1 } else { npts });
    let mut dens = Vec::with_capacity(npts);
    for p in 0..(if uniform { 1 } else { npts }) {
        let g = mat_at(&herm.metric, p);
        let inv = algebra::inverse4(&g).ok_or(Error::SingularMetric { point: p })?;
        let det = algebra::det4(&g);
        if det <= T::zero() {
            return Err(Error::SingularMetric { point: p });
        }
        inv_mats.push((inv, sqrt(det)));
    }
    for p in 0..npts {
        dens.push(inv_mats[if uniform { 0 } else { p }].1);
    }
    let ginv = |p: usize| inv_mats[if uniform { 0 } else { p }].0;
    let metric_inv = per_point(&|p| ginv(p).iter().flatten().copied().collect(), 4, 4);
    let jm = |p: usize| mat_at(&j, p);
    let j_forms: [PointMap<T>; 5] = std::array::from_fn(|deg| {
        let d = algebra::dim(deg);
        per_point(&|p| algebra::induced(&jm(p), deg), d, d)
    });
    let inner: [PointMap<T>; 5] = std::array::from_fn(|deg| {
        let d = algebra::dim(deg);
        per_point(
            &|p| {
                let mu = inv_mats[if uniform { 0 } else { p }].1;
                algebra::induced(&ginv(p), deg).into_iter().map(|v| v * mu).collect()
            },
            d,
            d,
        )
    });
    let star: [PointMap<T>; 5] = std::array::from_fn(|deg| {
        let din = algebra::dim(deg);
        let dout = algebra::dim(4 - deg);
        per_point(&|p| hodge_matrix(&ginv(p), inv_mats[if uniform { 0 } else { p }].1, deg), dout, din)
    });
    Ok(ManifoldSpec {
        id,
        params,
        grid,
        frame,
        z_shear,
        structure,
        j,
        omega,
        f_form: herm.f_form,
        omega_minus: herm.omega_minus,
        metric: herm.metric,
        metric_inv,
        vol_density: dens,
        j_forms,
        star,
        inner,
        integrable,
        eps_max,
        taming_margin: T::zero(),
    })
}

/// `(*α)_J = μ Σ_K sign(J^c, J) det(g⁻¹[J^c, K]) α_K`, so that `α∧*β = ⟨α,β⟩ vol`.
fn hodge_matrix<T: Real>(ginv: &Mat4<T>, mu: T, p: usize) -> Vec<T> {
    let bin = algebra::basis(p);
    let bout = algebra::basis(4 - p);
    let raise = algebra::induced(ginv, p);
    let din = bin.len();
    let mut out = vec![T::zero(); bout.len() * din];
    for (r, &jmask) in bout.iter().enumerate() {
        let imask = 0b1111 ^ jmask;
        let ii = algebra::index_of(imask);
        let s = T::lit(algebra::wedge_sign(imask, jmask) as f64);
        for c in 0..din {
            out[r * din + c] = mu * s * raise[ii * din + c];
        }
    }
    out
}

impl<T: Real> ManifoldSpec<T> {
    pub fn npts(&self) -> usize {
        self.grid.len()
    }

    pub fn name(&self) -> &'static str {
        self.id.as_str()
    }

    pub fn j_at(&self, p: usize) -> Mat4<T> {
        mat_at(&self.j, p)
    }

    pub fn metric_at(&self, p: usize) -> Mat4<T> {
        mat_at(&self.metric, p)
    }

    /// Whether `J`, `g` are constant in the frame, so every operator is a
    /// Fourier multiplier.
    pub fn constant_coefficients(&self) -> bool {
        self.j.is_uniform() && self.metric.is_uniform()
    }

    /// `[E_a, E_b] = Σ_c bracket[c] E_c = −Σ_c dε^c(E_a, E_b) E_c`.
    pub fn frame_bracket(&self, a: usize, b: usize) -> [T; 4] {
        std::array::from_fn(|c| -self.structure[c][a][b])
    }

    /// Frame derivation `E_a f` (spectral).
    pub fn frame_deriv(&self, f: &[T], a: usize) -> Vec<T> {
        let mut out = vec![T::zero(); f.len()];
        for mu in 0..4 {
            let c = self.frame[a][mu];
            if c == T::zero() || !self.grid.is_active(mu) {
                continue;
            }
            let d = self.grid.deriv(f, mu);
            for (o, v) in out.iter_mut().zip(d) {
                *o += c * v;
            }
        }
        out
    }

    pub fn frame_deriv_complex(&self, f: &[Complex<T>], a: usize) -> Vec<Complex<T>> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); f.len()];
        for mu in 0..4 {
            let c = self.frame[a][mu];
            if c == T::zero() || !self.grid.is_active(mu) {
                continue;
            }
            let d = self.grid.deriv_complex(f, mu);
            for (o, v) in out.iter_mut().zip(d) {
                *o += v * c;
            }
        }
        out
    }

    /// `div(E_a) = Σ_c dε^c(E_a, E_c)` for the invariant volume `ε⁰¹²³`.
    pub fn frame_divergence(&self, a: usize) -> T {
        let mut s = T::zero();
        for c in 0..4 {
            s += self.structure[c][a][c];
        }
        s
    }

    /// `∫ f vol` with the metric volume density.
    pub fn integrate(&self, f: &[T]) -> T {
        let mut s = T::zero();
        for (v, mu) in f.iter().zip(&self.vol_density) {
            s += *v * *mu;
        }
        s * self.grid.cell_volume()
    }

    pub fn volume(&self) -> T {
        self.integrate(&vec![T::one(); self.npts()])
    }

    /// Subtracts the volume-weighted mean.
    pub fn remove_mean(&self, f: &[T]) -> Vec<T> {
        let m = self.integrate(f) / self.volume();
        f.iter().map(|v| *v - m).collect()
    }

    /// Pointwise unitary frame `e_i = (v_i − √−1 J v_i)/√2` with `v₁ ∝ E₀` and
    /// `v₂` the Gram–Schmidt completion of `E₂`.
    pub fn unitary_frame(&self) -> Result<FrameField<T>> {
        let npts = self.npts();
        let s = T::one() / sqrt(T::lit(2.0));
        let mut e = Vec::with_capacity(npts);
        for p in 0..npts {
            let g = self.metric_at(p);
            let jm = self.j_at(p);
            let ip = |u: &[T; 4], v: &[T; 4]| -> T {
                let mut r = T::zero();
                for a in 0..4 {
                    for b in 0..4 {
                        r += u[a] * g[a][b] * v[b];
                    }
                }
                r
            };
            let jv = |v: &[T; 4]| -> [T; 4] { std::array::from_fn(|a| (0..4).fold(T::zero(), |acc, b| acc + jm[a][b] * v[b])) };
            let mut v1 = [T::one(), T::zero(), T::zero(), T::zero()];
            let n1 = sqrt(ip(&v1, &v1));
            v1 = v1.map(|x| x / n1);
            let jv1 = jv(&v1);
            let mut v2 = [T::zero(), T::zero(), T::one(), T::zero()];
            let c1 = ip(&v2, &v1);
            let c2 = ip(&v2, &jv1);
            for a in 0..4 {
                v2[a] -= c1 * v1[a] + c2 * jv1[a];
            }
            let n2 = sqrt(ip(&v2, &v2));
            if n2 <= T::eps() * T::lit(1e3) {
                return Err(Error::SingularFrame { point: p });
            }
            v2 = v2.map(|x| x / n2);
            let jv2 = jv(&v2);
            let make = |v: &[T; 4], w: &[T; 4]| -> [Complex<T>; 4] { std::array::from_fn(|a| cplx(v[a] * s, -w[a] * s)) };
            e.push([make(&v1, &jv1), make(&v2, &jv2)]);
        }
        let theta = dual_coframe(&e)?;
        Ok(FrameField { e, theta })
    }

    /// Frame `Z_i = ½(v_i − √−1 J v_i)` with `v₁ = E₀`, `v₂ = E₂` (not unitary
    /// unless `g` is the frame identity).
    pub fn coordinate_frame(&self) -> Result<FrameField<T>> {
        let npts = self.npts();
        let half = T::lit(0.5);
        let mut e = Vec::with_capacity(npts);
        for p in 0..npts {
            let jm = self.j_at(p);
            let mk = |a0: usize| -> [Complex<T>; 4] { std::array::from_fn(|a| cplx(if a == a0 { half } else { T::zero() }, -half * jm[a][a0])) };
            e.push([mk(0), mk(2)]);
        }
        let theta = dual_coframe(&e)?;
        Ok(FrameField { e, theta })
    }

    /// Verifies `J² = −1`, g symmetric positive definite and J-invariant, `F` J-invariant.
    pub fn check_invariants(&self) -> Result<()> {
        let tol = T::lit(1e-12).max(T::eps() * T::lit(100.0));
        let mut worst = T::zero();
        for p in 0..(if self.j.is_uniform() { 1 } else { self.npts() }) {
            let jm = self.j_at(p);
            let j2 = algebra::mat_mul(&jm, &jm);
            for a in 0..4 {
                for b in 0..4 {
                    let target = if a == b { -T::one() } else { T::zero() };
                    worst = worst.max(crate::scalar::abs(j2[a][b] - target));
                }
            }
        }
        if worst > tol * T::lit(10.0) {
            return Err(Error::NotAlmostComplex { residual: worst.to_f64() });
        }
        Ok(())
    }

    /// Residuals of the pointwise invariants, for reports.
    pub fn invariant_residuals(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let mut j2 = T::zero();
        let mut gsym = T::zero();
        let mut ginv = T::zero();
        let step = if self.constant_coefficients() { self.npts() } else { 1 };
        for p in (0..self.npts()).step_by(step) {
            let jm = self.j_at(p);
            let g = self.metric_at(p);
            let jj = algebra::mat_mul(&jm, &jm);
            let gj = algebra::mat_mul(&algebra::mat_mul(&algebra::transpose(&jm), &g), &jm);
            for a in 0..4 {
                for b in 0..4 {
                    let t = if a == b { -T::one() } else { T::zero() };
                    j2 = j2.max(crate::scalar::abs(jj[a][b] - t));
                    gsym = gsym.max(crate::scalar::abs(g[a][b] - g[b][a]));
                    ginv = ginv.max(crate::scalar::abs(gj[a][b] - g[a][b]));
                }
            }
        }
        out.insert("j_squared_plus_identity".into(), j2.to_f64());
        out.insert("metric_asymmetry".into(), gsym.to_f64());
        out.insert("metric_j_invariance".into(), ginv.to_f64());
        out.insert("taming_margin".into(), self.taming_margin.to_f64());
        out.insert("volume".into(), self.volume().to_f64());
        out
    }
}
