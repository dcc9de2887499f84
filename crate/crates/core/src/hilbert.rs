//! Truncated Hilbert complexes `H₁ →T H₂ →S H₃`, estimate constants
//! `‖h‖ ≤ C(‖T*h‖ + ‖Sh‖)`, minimal-norm solves of `Tw = v`, and the desk-scale
//! pipeline producing `f` with `D̃ f = da`.
//!
//! All matrices are written in L²-orthonormal bases, so adjoints are transposes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algebra;
use crate::elliptic::Elliptic;
use crate::error::{Error, Result};
use crate::forms::{self, FormField};
use crate::geometry::ManifoldSpec;
use crate::scalar::{sqrt, tiny, Real};

/// Constant of a dense complex restricted to `V`.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantReport {
    /// `C = 1/√λ_min(TT* + S*S)|_V` (quadratic-form constant; `∞` when degenerate).
    pub constant: f64,
    /// The sum-of-norms constant lies in `[constant/√2, constant]`.
    pub sum_of_norms_lower: f64,
    pub sum_of_norms_upper: f64,
    pub lambda_min: f64,
    /// Minimizer `h` in `H₂` coordinates.
    #[serde(skip)]
    pub minimizer: Vec<f64>,
}

/// `C` from the smallest eigenvalue of `TTᵀ + SᵀS` on the span of the orthonormal
/// columns of `v` (all of `H₂` when `None`).
pub fn best_constant_dense<T: Real>(t: &DMatrix<T>, s: &DMatrix<T>, v: Option<&DMatrix<T>>) -> Result<ConstantReport> {
    let n2 = t.nrows().max(s.ncols());
    let mut q = t * t.transpose();
    if q.nrows() == 0 {
        q = DMatrix::zeros(n2, n2);
    }
    if s.nrows() > 0 {
        q += s.transpose() * s;
    }
    let (q, basis) = match v {
        Some(vb) => (vb.transpose() * &q * vb, Some(vb)),
        None => (q, None),
    };
    if q.nrows() == 0 {
        return Err(Error::TrivialSpace);
    }
    let eig = SymmetricEigen::new(q);
    let (imin, lmin) = eig.eigenvalues.iter().enumerate().fold((0, T::max_value().unwrap()), |acc, (i, l)| if *l < acc.1 { (i, *l) } else { acc });
    let lam = lmin.to_f64();
    let c = if lam > 0.0 { 1.0 / lam.sqrt() } else { f64::INFINITY };
    let col = eig.eigenvectors.column(imin).into_owned();
    let h = match basis {
        Some(vb) => vb * col,
        None => col,
    };
    Ok(ConstantReport {
        constant: c,
        sum_of_norms_lower: c / 2f64.sqrt(),
        sum_of_norms_upper: c,
        lambda_min: lam,
        minimizer: h.iter().map(|x| x.to_f64()).collect(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HormanderSolution {
    #[serde(skip)]
    pub w: Vec<f64>,
    pub residual: f64,
    pub norm_w: f64,
    pub norm_v: f64,
    pub constant: f64,
    pub bound_holds: bool,
}

/// Minimal-norm solution `w = T⁺v` of `Tw = v` for `v ∈ ker S`, with
/// the check `‖w‖ ≤ C‖v‖`.
pub fn hormander_solve_dense<T: Real>(t: &DMatrix<T>, s: &DMatrix<T>, constant: f64, v: &DVector<T>, tol: f64) -> Result<HormanderSolution> {
    let vn = v.norm();
    if s.nrows() > 0 {
        let sv = (s * v).norm();
        if sv > T::lit(tol) * vn.max(tiny()) {
            return Err(Error::Precondition(format!("‖Sv‖ = {:.3e} relative", (sv / vn).to_f64())));
        }
    }
    // complete orthogonal decomposition; the normal equations would square the condition number
    let cp = t.clone().col_piv_qr();
    let (q, r) = (cp.q(), cp.r());
    let diag: Vec<T> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let rmax = diag.iter().fold(T::zero(), |a, b| a.max(*b));
    let k = diag.iter().take_while(|d| **d > rmax * T::lit(1e-12)).count();
    let mut w = DVector::zeros(t.ncols());
    if k > 0 {
        let c = (q.columns(0, k).transpose() * v).into_owned();
        let lower = r.rows(0, k).transpose().qr();
        let y = lower.r().transpose().solve_lower_triangular(&c).expect("nonzero pivots");
        w = lower.q() * y;
        cp.p().inv_permute_rows(&mut w);
    }
    let res = (t * &w - v).norm() / vn.max(tiny());
    if res > T::lit(tol.max(1e-9)) {
        return Err(Error::NotInRange { residual: res.to_f64() });
    }
    let nw = w.norm().to_f64();
    let nv = vn.to_f64();
    Ok(HormanderSolution {
        w: w.iter().map(|x| x.to_f64()).collect(),
        residual: res.to_f64(),
        norm_w: nw,
        norm_v: nv,
        constant,
        bound_holds: nw <= constant * nv * (1.0 + 1e-10) + 1e-14,
    })
}

/// Points per block in the dense kernels below.
const BLOCK: usize = 512;

/// Rows `(p − start)·d + i` of component `i` at point `p`, one column per field.
fn block_matrix<T: Real>(fields: &[FormField<T>], start: usize, end: usize) -> DMatrix<T> {
    let d = fields[0].comps.len();
    DMatrix::from_fn((end - start) * d, fields.len(), |r, j| fields[j].comps[r % d][start + r / d])
}

/// Applies the pointwise form inner product to the rows of a block.
fn weight_block<T: Real>(spec: &ManifoldSpec<T>, degree: usize, start: usize, m: &mut DMatrix<T>) {
    let w = &spec.inner[degree];
    let d = w.rows;
    let mut tmp = vec![T::zero(); d];
    for q in 0..m.nrows() / d {
        let wp = w.at(start + q);
        for j in 0..m.ncols() {
            for (i, t) in tmp.iter_mut().enumerate() {
                *t = (0..d).fold(T::zero(), |s, k| s + wp[i * d + k] * m[(q * d + k, j)]);
            }
            for (i, t) in tmp.iter().enumerate() {
                m[(q * d + i, j)] = *t;
            }
        }
    }
}

/// `G[(i, j)] = ⟨a_i, b_j⟩`.
fn cross_gram<T: Real>(spec: &ManifoldSpec<T>, a: &[FormField<T>], b: &[FormField<T>]) -> DMatrix<T> {
    let mut g = DMatrix::zeros(a.len(), b.len());
    if a.is_empty() || b.is_empty() {
        return g;
    }
    let n = a[0].len();
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let ab = block_matrix(a, start, end);
        let mut bb = block_matrix(b, start, end);
        weight_block(spec, b[0].degree, start, &mut bb);
        g += ab.transpose() * bb;
    }
    g * spec.grid.cell_volume()
}

/// `out_j = Σ_i c[(i, j)] fields_i`.
fn combine<T: Real>(fields: &[FormField<T>], c: &DMatrix<T>) -> Vec<FormField<T>> {
    let (degree, n) = (fields[0].degree, fields[0].len());
    let d = fields[0].comps.len();
    let mut out: Vec<FormField<T>> = (0..c.ncols()).map(|_| FormField::zeros(degree, n)).collect();
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let prod = block_matrix(fields, start, end) * c;
        for (j, o) in out.iter_mut().enumerate() {
            for r in 0..prod.nrows() {
                o.comps[r % d][start + r / d] = prod[(r, j)];
            }
        }
    }
    out
}

/// `‖x_j − Σ_i m[(i, j)] basis_i‖` for every column.
fn residual_norms<T: Real>(spec: &ManifoldSpec<T>, xs: &[FormField<T>], basis: &[FormField<T>], m: &DMatrix<T>) -> Vec<T> {
    let mut acc = vec![T::zero(); xs.len()];
    if xs.is_empty() {
        return acc;
    }
    let n = xs[0].len();
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let mut r = block_matrix(xs, start, end);
        if !basis.is_empty() {
            r -= block_matrix(basis, start, end) * m;
        }
        let mut wr = r.clone();
        weight_block(spec, xs[0].degree, start, &mut wr);
        for (j, a) in acc.iter_mut().enumerate() {
            *a += r.column(j).dot(&wr.column(j));
        }
    }
    acc.into_iter().map(|v| sqrt((v * spec.grid.cell_volume()).max(T::zero()))).collect()
}

fn orthonormal_pass<T: Real>(spec: &ManifoldSpec<T>, fields: &[FormField<T>]) -> Vec<FormField<T>> {
    let g = cross_gram(spec, fields, fields);
    let eig = SymmetricEigen::new((&g + g.transpose()) * T::lit(0.5));
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |a, b| a.max(*b));
    let mut order: Vec<usize> = (0..fields.len()).filter(|i| eig.eigenvalues[*i] > lmax * T::lit(1e-10)).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap());
    let c = DMatrix::from_fn(fields.len(), order.len(), |i, j| eig.eigenvectors[(i, order[j])] / sqrt(eig.eigenvalues[order[j]]));
    if c.ncols() == 0 {
        return Vec::new();
    }
    combine(fields, &c)
}

/// L²-orthonormal basis of the span of `fields` (rank-revealing, relative cut `1e−10`).
/// A second pass removes the loss of orthogonality from small Gram eigenvalues.
pub fn orthonormalize<T: Real>(spec: &ManifoldSpec<T>, fields: &[FormField<T>]) -> Vec<FormField<T>> {
    if fields.is_empty() {
        return Vec::new();
    }
    let once = orthonormal_pass(spec, fields);
    if once.is_empty() {
        return once;
    }
    orthonormal_pass(spec, &once)
}

fn gram_residual<T: Real>(spec: &ManifoldSpec<T>, basis: &[FormField<T>]) -> f64 {
    if basis.is_empty() {
        return 0.0;
    }
    let g = cross_gram(spec, basis, basis) - DMatrix::identity(basis.len(), basis.len());
    g.amax().to_f64()
}

/// Real Fourier fields `1, cos, sin` with `|k| <= cutoff` (constant first).
pub fn band_fields<T: Real>(spec: &ManifoldSpec<T>, cutoff: usize, constant: bool) -> Vec<Vec<T>> {
    let g = &spec.grid;
    let mut out = Vec::new();
    if constant {
        out.push(vec![T::one(); g.len()]);
    }
    for k in g.half_space_modes(cutoff) {
        out.push(g.cos_mode(&k));
        out.push(g.sin_mode(&k));
    }
    out
}

/// Band-limited `p`-forms: every band field times every basis covector.
pub fn band_forms<T: Real>(spec: &ManifoldSpec<T>, degree: usize, cutoff: usize, constant: bool) -> Vec<FormField<T>> {
    let mut out = Vec::new();
    for f in band_fields(spec, cutoff, constant) {
        for &mask in algebra::basis(degree) {
            out.push(FormField::monomial(mask, f.clone()));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorId {
    /// `d` on mean-zero functions, `S = d` on 1-forms.
    D0,
    /// `T = W̃` into `V = im d*`, `S = d⁻_J`.
    WTilde,
    /// `T = d⁺_J` on 1-forms, `S = 0`.
    DPlusJ,
}

impl OperatorId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "d0" | "d" => Ok(Self::D0),
            "w_tilde" => Ok(Self::WTilde),
            "d_plus_j" => Ok(Self::DPlusJ),
            other => Err(Error::InvalidParameter(format!("unknown operator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyConfig {
    /// Maximum number of dense matrix entries.
    pub budget: usize,
    pub threads: usize,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self { budget: 4_000_000, threads: 1 }
    }
}

/// Galerkin truncation of a complex on band-limited fields.
#[derive(Clone, Debug)]
pub struct TruncatedComplex<T: Real> {
    pub operator: OperatorId,
    pub cutoff: usize,
    pub h1: Vec<FormField<T>>,
    pub h2: Vec<FormField<T>>,
    pub h3: Vec<FormField<T>>,
    /// `t[(i, j)] = ⟨T h1_j, h2_i⟩`.
    pub t: DMatrix<T>,
    /// `s[(i, j)] = ⟨S h2_j, h3_i⟩`.
    pub s: DMatrix<T>,
    pub gram_residual: f64,
    /// `max_j ‖T h1_j − Σ_i t_ij h2_i‖ / ‖T h1_j‖`: part of `im T` outside `H₂`.
    pub projection_defect: f64,
    /// `‖S T‖` (spectral norm of the assembled product).
    pub st_norm: f64,
}

fn map_parallel<T: Real, F>(items: &[FormField<T>], threads: usize, f: F) -> Result<Vec<FormField<T>>>
where
    F: Fn(&FormField<T>) -> Result<FormField<T>> + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<FormField<T>>>> = std::thread::scope(|sc| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| sc.spawn(move || c.iter().map(f).collect::<Result<Vec<_>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("assembly worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn project<T: Real>(spec: &ManifoldSpec<T>, images: &[FormField<T>], basis: &[FormField<T>]) -> (DMatrix<T>, f64) {
    let m = cross_gram(spec, basis, images);
    let full = residual_norms(spec, images, &[], &m);
    let rest = residual_norms(spec, images, basis, &m);
    let defect = full.iter().zip(&rest).filter(|(n, _)| **n > tiny()).fold(0.0f64, |d, (n, r)| d.max((*r / *n).to_f64()));
    (m, defect)
}

fn spectral_norm<T: Real>(m: &DMatrix<T>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0f64, |a, b| a.max(b.to_f64()))
}

/// Assembles the truncated complex for `op` at Fourier cutoff `cutoff`;
/// `extra_h2` widens `H₂` by additional directions.
pub fn assemble<T: Real>(
    ctx: &Elliptic<'_, T>,
    op: OperatorId,
    cutoff: usize,
    extra_h2: &[FormField<T>],
    cfg: AssemblyConfig,
) -> Result<TruncatedComplex<T>> {
    let spec = ctx.spec;
    let h1: Vec<FormField<T>> = {
        let raw: Vec<FormField<T>> = band_fields(spec, cutoff, false).into_iter().map(|f| FormField::from_scalar(spec.remove_mean(&f))).collect();
        orthonormalize(spec, &raw)
    };
    let (mut h2_raw, h3_raw): (Vec<FormField<T>>, Vec<FormField<T>>) = match op {
        OperatorId::D0 => (band_forms(spec, 1, cutoff, true), band_forms(spec, 2, cutoff, true)),
        OperatorId::WTilde => (
            band_forms(spec, 2, cutoff, false).iter().map(|b| forms::d_star(spec, b)).collect(),
            band_forms(spec, 2, cutoff, true).iter().map(|b| forms::anti_invariant(spec, b)).collect(),
        ),
        OperatorId::DPlusJ => (band_forms(spec, 1, cutoff, true), band_forms(spec, 2, cutoff, true).iter().map(|b| forms::split_j(spec, b).0).collect()),
    };
    h2_raw.extend(extra_h2.iter().cloned());
    let n1 = h1.len();
    let est2 = h2_raw.len();
    let est3 = h3_raw.len();
    let needed = n1 * est2 + est2 * est3 + est2 * est2 + est3 * est3;
    if needed > cfg.budget {
        return Err(Error::BudgetExceeded { needed, budget: cfg.budget });
    }
    let h2 = orthonormalize(spec, &h2_raw);
    let h3 = orthonormalize(spec, &h3_raw);
    let images: Vec<FormField<T>> = match op {
        OperatorId::D0 => h1.iter().map(|f| forms::d(spec, f)).collect(),
        OperatorId::WTilde => map_parallel(&h1, cfg.threads, |f| ctx.w_tilde(&f.comps[0]))?,
        OperatorId::DPlusJ => h2.iter().map(|a| forms::d_pm_j(spec, a).0).collect(),
    };
    let (t, s, defect) = match op {
        OperatorId::DPlusJ => {
            let (t, d) = project(spec, &images, &h3);
            (t, DMatrix::zeros(0, h2.len()), d)
        }
        _ => {
            let (t, d) = project(spec, &images, &h2);
            let s_images: Vec<FormField<T>> = h2
                .iter()
                .map(|a| match op {
                    OperatorId::D0 => forms::d(spec, a),
                    _ => forms::d_pm_j(spec, a).1,
                })
                .collect();
            let (s, _) = project(spec, &s_images, &h3);
            (t, s, d)
        }
    };
    let st_norm = if s.nrows() > 0 && t.nrows() == s.ncols() { spectral_norm(&(&s * &t)) } else { 0.0 };
    let gram = gram_residual(spec, &h1).max(gram_residual(spec, &h2)).max(gram_residual(spec, &h3));
    Ok(TruncatedComplex { operator: op, cutoff, h1, h2, h3, t, s, gram_residual: gram, projection_defect: defect, st_norm })
}

impl<T: Real> TruncatedComplex<T> {
    pub fn best_constant(&self) -> Result<ConstantReport> {
        if self.h2.is_empty() {
            return Err(Error::TrivialSpace);
        }
        best_constant_dense(&self.t, &self.s, None)
    }

    /// Coordinates of a field in the `H₂` basis and the relative size of the part
    /// outside `H₂`.
    pub fn h2_coordinates(&self, spec: &ManifoldSpec<T>, a: &FormField<T>) -> (DVector<T>, f64) {
        let (m, d) = project(spec, std::slice::from_ref(a), &self.h2);
        (m.column(0).into_owned(), d)
    }

    /// Orthogonal projection of `H₂` coordinates onto `ker S`, with the relative
    /// size of the removed part.
    pub fn kernel_projection(&self, v: &DVector<T>) -> (DVector<T>, f64) {
        let vn = v.norm();
        if self.s.nrows() == 0 || vn == T::zero() {
            return (v.clone(), 0.0);
        }
        // orthonormal basis of the row space of S from a rank-revealing QR
        let cp = self.s.transpose().col_piv_qr();
        let (q, r) = (cp.q(), cp.r());
        let diag: Vec<T> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
        let rmax = diag.iter().fold(T::zero(), |a, b| a.max(*b));
        let k = diag.iter().take_while(|d| **d > rmax * T::lit(1e-10)).count();
        let rows = q.columns(0, k);
        let out = v - &rows * (rows.transpose() * v);
        let removed = ((&out - v).norm() / vn).to_f64();
        (out, removed)
    }

    pub fn h1_field(&self, coeffs: &[f64]) -> Vec<T> {
        let mut f = vec![T::zero(); self.h1.first().map(|h| h.len()).unwrap_or(0)];
        for (c, h) in coeffs.iter().zip(&self.h1) {
            crate::grid::ops::axpy(&mut f, T::lit(*c), &h.comps[0]);
        }
        f
    }
}

/// Smallest nonzero singular value of the truncated `T` per cutoff.
#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub cutoff: usize,
    pub smallest_nonzero: Option<f64>,
    pub largest: f64,
    pub rank: usize,
}

pub fn spectral_gap_report<T: Real>(ctx: &Elliptic<'_, T>, op: OperatorId, cutoffs: &[usize], cfg: AssemblyConfig) -> Result<Vec<GapRow>> {
    if cutoffs.len() < 2 {
        return Err(Error::InvalidParameter("spectral gap report needs at least two cutoffs".into()));
    }
    let mut rows = Vec::new();
    for &k in cutoffs {
        let cx = assemble(ctx, op, k, &[], cfg)?;
        rows.push(gap_row(k, &cx.t));
    }
    Ok(rows)
}

pub fn gap_row<T: Real>(cutoff: usize, t: &DMatrix<T>) -> GapRow {
    if t.nrows() == 0 || t.ncols() == 0 {
        return GapRow { cutoff, smallest_nonzero: None, largest: 0.0, rank: 0 };
    }
    let sv: Vec<f64> = t.clone().singular_values().iter().map(|x| x.to_f64()).collect();
    let largest = sv.iter().fold(0.0f64, |a, b| a.max(*b));
    let nz: Vec<f64> = sv.into_iter().filter(|s| *s > largest * 1e-9 && *s > 0.0).collect();
    GapRow { cutoff, smallest_nonzero: nz.iter().copied().reduce(f64::min), largest, rank: nz.len() }
}

fn euclid<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

fn resolvent<T: Real>(spec: &ManifoldSpec<T>, f: &[T], power: i32) -> Vec<T> {
    let shift = T::lit(4.0) * T::pi() * T::pi();
    spec.grid.apply_multiplier(f, |k2| T::one() / (k2 + shift).powi(power))
}

/// Solves `op x = rhs` for a self-adjoint nonnegative `op` on `degree`-forms,
/// with `rhs` orthogonal to the kernel. Runs Euclidean PCG on the weighted system.
fn weighted_solve<T: Real>(
    spec: &ManifoldSpec<T>,
    degree: usize,
    op: impl Fn(&FormField<T>) -> FormField<T>,
    rhs: &FormField<T>,
    opts: crate::solvers::SolverOptions,
) -> (FormField<T>, crate::solvers::SolveStats) {
    let weight = |a: &FormField<T>| FormField { degree, comps: spec.inner[degree].apply(&a.comps) };
    let b = weight(rhs).to_vec();
    let apply = |x: &[T]| weight(&op(&FormField::from_vec(degree, x))).to_vec();
    let precond = |x: &[T]| FormField::from_vec(degree, x).map_comps(|c| resolvent(spec, c, 1)).to_vec();
    let (x, st) = crate::solvers::pcg(apply, precond, euclid, &b, opts);
    (FormField::from_vec(degree, &x), st)
}

fn hodge_laplacian<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> FormField<T> {
    let mut out = FormField::zeros(a.degree, a.len());
    if a.degree > 0 {
        out = out.add(&forms::d(spec, &forms::d_star(spec, a)));
    }
    if a.degree < 4 {
        out = out.add(&forms::d_star(spec, &forms::d(spec, a)));
    }
    out
}

/// Coexact part `d*Δ⁻¹da` of a 1-form.
pub fn coexact_part<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>, opts: crate::solvers::SolverOptions) -> Result<FormField<T>> {
    let da = forms::d(spec, a);
    let (beta, st) = weighted_solve(spec, 2, |x| hodge_laplacian(spec, x), &da, opts);
    st.require("hodge-2")?;
    Ok(forms::d_star(spec, &beta))
}

/// L²-orthonormal harmonic 1-forms: each closed constant-coefficient 1-form minus
/// `dg` with `Δg = d*h`.
pub fn harmonic_one_forms<T: Real>(spec: &ManifoldSpec<T>, opts: crate::solvers::SolverOptions) -> Result<Vec<FormField<T>>> {
    let n = spec.npts();
    let consts: Vec<FormField<T>> = (0..4)
        .map(|a| FormField::monomial(algebra::basis(1)[a], vec![T::one(); n]))
        .collect();
    // closed combinations (d of a constant form is constant)
    let m = consts.len();
    let g = DMatrix::<T>::from_fn(m, m, |i, k| forms::inner(spec, &forms::d(spec, &consts[i]), &forms::d(spec, &consts[k])));
    let eig = SymmetricEigen::new(g);
    let scale = eig.eigenvalues.iter().fold(T::one(), |a, b| a.max(*b));
    let mut out = Vec::new();
    for idx in 0..m {
        if eig.eigenvalues[idx] > scale * T::lit(1e-12) {
            continue;
        }
        let mut h = FormField::zeros(1, n);
        for i in 0..m {
            h.axpy(eig.eigenvectors[(i, idx)], &consts[i]);
        }
        let rhs = FormField::from_scalar(forms::d_star(spec, &h).comps[0].clone());
        if forms::norm(spec, &rhs) > T::lit(1e-14) {
            let (g, st) = weighted_solve(spec, 0, |x| hodge_laplacian(spec, x), &rhs, opts);
            st.require("poisson")?;
            h = h.sub(&forms::d(spec, &g));
        }
        out.push(h);
    }
    Ok(orthonormalize(spec, &out))
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub kind: String,
    pub manifold: String,
    /// Quadratic-form constant.
    pub constant: f64,
    /// Range for the sum-of-norms constant.
    pub sum_of_norms_bracket: [f64; 2],
    pub cutoff: usize,
    pub grid: [usize; 4],
    pub residuals: std::collections::BTreeMap<String, f64>,
    pub defects: std::collections::BTreeMap<String, f64>,
    pub timings: std::collections::BTreeMap<String, f64>,
}

fn l21_gram<T: Real>(spec: &ManifoldSpec<T>, basis: &[FormField<T>]) -> DMatrix<T> {
    let n = basis.len();
    let derivs: Vec<Vec<FormField<T>>> =
        basis.iter().map(|b| (0..4).map(|a| b.map_comps(|c| spec.frame_deriv(c, a))).collect()).collect();
    DMatrix::from_fn(n, n, |i, k| {
        let mut s = forms::inner(spec, &basis[i], &basis[k]);
        for a in 0..4 {
            s += forms::inner(spec, &derivs[i][a], &derivs[k][a]);
        }
        s
    })
}

/// Best constant in `‖a‖_{L²₁} ≤ C(‖d⁺a‖ + ‖d*a‖ + ‖a_h‖)` over band-limited 1-forms.
pub fn ahs_constant<T: Real>(spec: &ManifoldSpec<T>, cutoff: usize) -> Result<EstimateReport> {
    let t0 = std::time::Instant::now();
    let opts = crate::solvers::SolverOptions { tol: 1e-12, max_iter: 2000 };
    let basis = orthonormalize(spec, &band_forms(spec, 1, cutoff, true));
    let harm = harmonic_one_forms(spec, opts)?;
    let n = basis.len();
    let dp: Vec<FormField<T>> = basis.iter().map(|a| forms::split_pm(spec, &forms::d(spec, a)).0).collect();
    let ds: Vec<FormField<T>> = basis.iter().map(|a| FormField::from_scalar(forms::d_star(spec, a).comps[0].clone())).collect();
    let hc = DMatrix::<T>::from_fn(harm.len(), n, |h, i| forms::inner(spec, &harm[h], &basis[i]));
    let b = DMatrix::<T>::from_fn(n, n, |i, k| forms::inner(spec, &dp[i], &dp[k]) + forms::inner(spec, &ds[i], &ds[k])) + hc.transpose() * &hc;
    let a = l21_gram(spec, &basis);
    let chol = nalgebra::Cholesky::new(b).ok_or(Error::TrivialSpace)?;
    let linv = chol.l().try_inverse().ok_or(Error::TrivialSpace)?;
    let m = &linv * a * linv.transpose();
    let eig = SymmetricEigen::new(m);
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |x, y| x.max(*y)).to_f64();
    let c = lmax.sqrt();
    let mut defects = std::collections::BTreeMap::new();
    defects.insert("gram".into(), gram_residual(spec, &basis));
    defects.insert("harmonic_gram".into(), gram_residual(spec, &harm));
    let mut residuals = std::collections::BTreeMap::new();
    residuals.insert("harmonic_dimension".into(), harm.len() as f64);
    let mut timings = std::collections::BTreeMap::new();
    timings.insert("total_s".into(), t0.elapsed().as_secs_f64());
    Ok(EstimateReport {
        kind: "ahs".into(),
        manifold: spec.name().into(),
        constant: c,
        sum_of_norms_bracket: [c / 3f64.sqrt(), c],
        cutoff,
        grid: spec.grid.shape(),
        residuals,
        defects,
        timings,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DPlusDecomposition {
    /// `‖d⁺a + d⁻a − da‖ / ‖da‖`.
    pub split: f64,
    /// `|‖d⁺a‖² − ‖d⁻a‖²| / ‖da‖²`.
    pub energy: f64,
}

pub fn dplus_decomposition_check<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>) -> DPlusDecomposition {
    let da = forms::d(spec, a);
    let (p, m) = forms::split_pm(spec, &da);
    let s = forms::norm2(spec, &da).max(tiny());
    DPlusDecomposition {
        split: (forms::norm(spec, &p.add(&m).sub(&da)) / sqrt(s)).to_f64(),
        energy: (crate::scalar::abs(forms::norm2(spec, &p) - forms::norm2(spec, &m)) / s).to_f64(),
    }
}

/// Coexact 1-form `c − d*z` with `P z = d⁻_J c`, where `c` is the coexact part of
/// `a`; its differential is then `J`-invariant.
pub fn admissible_one_form<T: Real>(ctx: &Elliptic<'_, T>, a: &FormField<T>) -> Result<FormField<T>> {
    let spec = ctx.spec;
    let c = coexact_part(spec, a, ctx.cfg.options())?;
    let z = ctx.solve_d_minus(&c)?;
    Ok(c.sub(&forms::d_star(spec, &z.sigma)))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cutoff: usize,
    /// Tolerance on `‖d⁻_J a‖ / ‖da‖`.
    pub admissibility_tol: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
    pub threads: usize,
    pub budget: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { cutoff: 2, admissibility_tol: 1e-8, solver_tol: 1e-10, max_iter: 400, threads: 1, budget: 4_000_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub manifold: String,
    pub cutoff: usize,
    pub grid: [usize; 4],
    /// `C₁` of the truncated `(W̃, d⁻_J)` complex.
    pub constant: f64,
    pub norms: std::collections::BTreeMap<String, f64>,
    pub residuals: std::collections::BTreeMap<String, f64>,
    pub defects: std::collections::BTreeMap<String, f64>,
    pub iterations: std::collections::BTreeMap<String, usize>,
    pub timings: std::collections::BTreeMap<String, f64>,
    pub bound_holds: bool,
    #[serde(skip)]
    pub f: Vec<f64>,
}

struct LsqProblem<'c, 'a, T: Real> {
    ctx: &'c Elliptic<'a, T>,
    /// 1 for `W̃`, 2 for `D̃`.
    order: i32,
}

impl<T: Real> LsqProblem<'_, '_, T> {
    fn apply(&self, f: &[T]) -> Result<FormField<T>> {
        if self.order == 1 {
            self.ctx.w_tilde(f)
        } else {
            self.ctx.d_tilde(f)
        }
    }

    fn adjoint(&self, y: &FormField<T>) -> Result<Vec<T>> {
        if self.order == 1 {
            self.ctx.adjoint_w_tilde_general(y)
        } else {
            self.ctx.adjoint_d_tilde(y)
        }
    }

    /// CGLS for `min ‖A(f0 + δ) − y‖`; returns `f0 + δ`.
    fn solve(&self, y: &FormField<T>, f0: &[T], opts: crate::solvers::SolverOptions) -> Result<(Vec<T>, crate::solvers::SolveStats)> {
        let spec = self.ctx.spec;
        let degree = y.degree;
        let r0 = y.sub(&self.apply(f0)?);
        let failure = std::cell::RefCell::new(None);
        let call = |r: Result<Vec<T>>, n: usize| match r {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![T::zero(); n]
            }
        };
        let n = spec.npts();
        let ny = y.to_vec().len();
        let (x, st) = crate::solvers::cgls(
            |f| call(self.apply(f).map(|v| v.to_vec()), ny),
            |v| call(self.adjoint(&FormField::from_vec(degree, v)), n),
            |s| {
                let mu_s: Vec<T> = s.iter().zip(&spec.vol_density).map(|(a, m)| *a * *m).collect();
                spec.remove_mean(&resolvent(spec, &mu_s, self.order))
            },
            |a, b| spec.integrate(&a.iter().zip(b).map(|(x, y)| *x * *y).collect::<Vec<_>>()),
            |a, b| forms::inner(spec, &FormField::from_vec(degree, a), &FormField::from_vec(degree, b)),
            &r0.to_vec(),
            opts,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok((crate::grid::ops::add(f0, &x), st))
    }
}

/// Produces `f` with `D̃ f = da` for an admissible 1-form `a` (`d⁻_J a = 0`) by the
/// Hörmander route (truncated minimal-norm solve, then full-grid refinement of
/// `W̃ f = c`), and checks it against a direct least-squares solve of `D̃ f = da`.
pub fn theorem1_pipeline<T: Real>(ctx: &Elliptic<'_, T>, a: &FormField<T>, cfg: PipelineConfig) -> Result<SolveReport> {
    let clock = std::time::Instant::now();
    let cx = assemble(ctx, OperatorId::WTilde, cfg.cutoff, &[], AssemblyConfig { budget: cfg.budget, threads: cfg.threads })?;
    let assembly = clock.elapsed().as_secs_f64();
    let mut rep = theorem1_with_complex(ctx, &cx, a, cfg)?;
    rep.timings.insert("assemble_s".into(), assembly);
    if let Some(t) = rep.timings.get_mut("total_s") {
        *t += assembly;
    }
    Ok(rep)
}

/// [`theorem1_pipeline`] on a complex already assembled for `OperatorId::WTilde`,
/// so that several inputs can share one assembly.
pub fn theorem1_with_complex<T: Real>(ctx: &Elliptic<'_, T>, cx: &TruncatedComplex<T>, a: &FormField<T>, cfg: PipelineConfig) -> Result<SolveReport> {
    use std::collections::BTreeMap;
    let spec = ctx.spec;
    let clock = std::time::Instant::now();
    let mut timings = BTreeMap::new();
    let mut norms = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    let mut defects = BTreeMap::new();
    let mut iterations = BTreeMap::new();
    if a.degree != 1 {
        return Err(Error::DegreeMismatch { expected: 1, got: a.degree });
    }
    let psi = forms::d(spec, a);
    let psi_n = forms::norm(spec, &psi).to_f64();
    let opts = crate::solvers::SolverOptions { tol: cfg.solver_tol, max_iter: cfg.max_iter };
    if cx.operator != OperatorId::WTilde {
        return Err(Error::InvalidParameter("pipeline needs the W̃ complex".into()));
    }
    let c1 = cx.best_constant()?.constant;
    timings.insert("constant_s".into(), clock.elapsed().as_secs_f64());
    defects.insert("gram".into(), cx.gram_residual);
    defects.insert("range_projection".into(), cx.projection_defect);
    defects.insert("st_norm".into(), cx.st_norm);
    norms.insert("psi".into(), psi_n);
    let grid = spec.grid.shape();
    if psi_n == 0.0 {
        norms.insert("f".into(), 0.0);
        return Ok(SolveReport {
            manifold: spec.name().into(),
            cutoff: cx.cutoff,
            grid,
            constant: c1,
            norms,
            residuals,
            defects,
            iterations,
            timings,
            bound_holds: true,
            f: vec![0.0; spec.npts()],
        });
    }
    let dm = (forms::norm(spec, &forms::d_pm_j(spec, a).1).to_f64()) / psi_n;
    if dm > cfg.admissibility_tol {
        return Err(Error::Precondition(format!("d⁻_J a = {dm:.3e} relative to ‖da‖")));
    }
    residuals.insert("d_minus_a".into(), dm);
    let c = coexact_part(spec, a, opts)?;
    let c_n = forms::norm(spec, &c).to_f64();
    norms.insert("coexact_part".into(), c_n);
    residuals.insert("coexact_closure".into(), forms::norm(spec, &forms::d(spec, &c).sub(&psi)).to_f64() / psi_n);

    // truncated Hörmander solve
    let (v, vdef) = cx.h2_coordinates(spec, &c);
    defects.insert("data_projection".into(), vdef);
    // with non-constant J the truncation of ker d⁻_J is only approximate
    let (v, kdef) = cx.kernel_projection(&v);
    defects.insert("data_outside_kernel".into(), kdef);
    let galerkin = hormander_solve_dense(&cx.t, &cx.s, c1, &v, 1e-6);
    let f0 = match galerkin {
        Ok(sol) => {
            residuals.insert("galerkin".into(), sol.residual);
            cx.h1_field(&sol.w)
        }
        Err(Error::NotInRange { residual }) => {
            residuals.insert("galerkin".into(), residual);
            vec![T::zero(); spec.npts()]
        }
        // truncated data left ker S: start the refinement from zero
        Err(Error::Precondition(_)) => {
            defects.insert("galerkin_skipped".into(), 1.0);
            vec![T::zero(); spec.npts()]
        }
        Err(e) => return Err(e),
    };
    timings.insert("galerkin_s".into(), clock.elapsed().as_secs_f64());
    let wt = LsqProblem { ctx, order: 1 };
    let (f_h, st_h) = wt.solve(&c, &f0, opts)?;
    iterations.insert("w_tilde_cgls".into(), st_h.iterations);
    let dt = LsqProblem { ctx, order: 2 };
    let zero = vec![T::zero(); spec.npts()];
    let (f_d, st_d) = dt.solve(&psi, &zero, opts)?;
    iterations.insert("d_tilde_cgls".into(), st_d.iterations);
    timings.insert("refine_s".into(), clock.elapsed().as_secs_f64());

    let w_h = ctx.w_tilde(&f_h)?;
    let img_h = forms::d(spec, &w_h);
    let img_d = ctx.d_tilde(&f_d)?;
    residuals.insert("w_tilde".into(), forms::norm(spec, &w_h.sub(&c)).to_f64() / c_n.max(1e-300));
    residuals.insert("hormander_route".into(), forms::norm(spec, &img_h.sub(&psi)).to_f64() / psi_n);
    residuals.insert("direct_route".into(), forms::norm(spec, &img_d.sub(&psi)).to_f64() / psi_n);
    residuals.insert("routes_agree".into(), forms::norm(spec, &img_h.sub(&img_d)).to_f64() / psi_n);
    let fnorm = |f: &[T]| sqrt(spec.integrate(&f.iter().map(|x| *x * *x).collect::<Vec<_>>())).to_f64();
    let f_n = fnorm(&f_h);
    norms.insert("f".into(), f_n);
    norms.insert("f_direct".into(), fnorm(&f_d));
    norms.insert("f_difference".into(), fnorm(&crate::grid::ops::sub(&f_h, &f_d)));
    let bound_holds = f_n <= c1 * c_n * (1.0 + 1e-6) && f_n <= c1 * psi_n * (1.0 + 1e-6);
    timings.insert("total_s".into(), clock.elapsed().as_secs_f64());
    Ok(SolveReport {
        manifold: spec.name().into(),
        cutoff: cx.cutoff,
        grid,
        constant: c1,
        norms,
        residuals,
        defects,
        iterations,
        timings,
        bound_holds,
        f: f_h.iter().map(|x| x.to_f64()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::EllipticSolveConfig;
    use crate::geometry::{build_manifold, CatalogId};
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn flat(n: usize) -> ManifoldSpec<f64> {
        build_manifold(CatalogId::FlatTorusKahler, &GridSpec::cube(n), &BTreeMap::new()).unwrap()
    }

    fn kt(n: usize) -> ManifoldSpec<f64> {
        build_manifold(CatalogId::KodairaThurston, &GridSpec::z_invariant(n), &BTreeMap::new()).unwrap()
    }

    fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        m.qr().q()
    }

    #[test]
    fn dense_constants() {
        let e = DMatrix::<f64>::zeros(0, 2);
        let c = best_constant_dense(&DMatrix::identity(2, 2), &e, None).unwrap();
        assert!((c.constant - 1.0).abs() < 1e-14);
        let c = best_constant_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), &e, None).unwrap();
        assert!((c.constant - 0.5).abs() < 1e-14);
        assert!((c.sum_of_norms_lower - 0.5 / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn constant_is_basis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = DMatrix::<f64>::from_fn(7, 4, |_, _| rng.gen_range(-1.0..1.0));
        let s = DMatrix::<f64>::from_fn(3, 7, |_, _| rng.gen_range(-1.0..1.0));
        let c0 = best_constant_dense(&t, &s, None).unwrap().constant;
        let u2 = random_orthogonal(&mut rng, 7);
        let u1 = random_orthogonal(&mut rng, 4);
        let u3 = random_orthogonal(&mut rng, 3);
        let c1 = best_constant_dense(&(&u2 * &t * &u1), &(&u3 * &s * u2.transpose()), None).unwrap().constant;
        assert!((c0 - c1).abs() < 1e-10 * c0);
    }

    #[test]
    fn hormander_matches_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n1, n2, n3, r) = (6, 10, 4, 4);
        let a = DMatrix::<f64>::from_fn(n2, r, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::<f64>::from_fn(r, n1, |_, _| rng.gen_range(-1.0..1.0));
        let t = &a * &b;
        // S kills im T
        let q = a.clone().qr().q();
        let proj = DMatrix::identity(n2, n2) - &q * q.transpose();
        let s = DMatrix::<f64>::from_fn(n3, n2, |_, _| rng.gen_range(-1.0..1.0)) * &proj;
        assert!((&s * &t).amax() < 1e-12);
        let v = &t * DVector::from_fn(n1, |_, _| rng.gen_range(-1.0..1.0));
        let c = best_constant_dense(&t, &s, None).unwrap().constant;
        let sol = hormander_solve_dense(&t, &s, c, &v, 1e-9).unwrap();
        let w = DVector::from_vec(sol.w.clone());
        let oracle = t.clone().svd(true, true).solve(&v, 1e-12).unwrap();
        assert!((&w - oracle).amax() < 1e-9);
        assert!(sol.bound_holds);
        // orthogonal to ker T
        let svd = t.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        for (i, sv) in svd.singular_values.iter().enumerate() {
            if *sv < 1e-10 {
                assert!(vt.row(i).dot(&w.transpose()).abs() < 1e-10);
            }
        }
        let outside = DVector::from_fn(n2, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let off = &proj * outside;
        let none = DMatrix::<f64>::zeros(0, n2);
        assert!(matches!(hormander_solve_dense(&t, &none, c, &off, 1e-9), Err(Error::NotInRange { .. })));
        assert!(matches!(hormander_solve_dense(&t, &s, c, &off, 1e-9), Err(Error::Precondition(_))));
    }

    #[test]
    fn flat_d_singular_values() {
        let m = flat(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let cx = assemble(&ctx, OperatorId::D0, 1, &[], AssemblyConfig::default()).unwrap();
        assert_eq!(cx.h1.len(), 8);
        assert!(cx.gram_residual < 1e-10 && cx.projection_defect < 1e-10 && cx.st_norm < 1e-10);
        for s in cx.t.clone().singular_values().iter() {
            assert!((s - 2.0 * PI).abs() < 1e-9);
        }
        assert!(assemble(&ctx, OperatorId::D0, 0, &[], AssemblyConfig::default()).unwrap().h1.is_empty());
        let rows = spectral_gap_report(&ctx, OperatorId::D0, &[1, 2], AssemblyConfig::default()).unwrap();
        for r in rows {
            assert!((r.smallest_nonzero.unwrap() - 2.0 * PI).abs() < 1e-9);
        }
        assert!(gap_row(1, &DMatrix::<f64>::zeros(3, 3)).smallest_nonzero.is_none());
        let small = AssemblyConfig { budget: 10, threads: 1 };
        assert!(matches!(assemble(&ctx, OperatorId::D0, 1, &[], small), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn flat_ahs_constant() {
        let m = flat(8);
        let r = ahs_constant(&m, 1).unwrap();
        let oracle = (2.0 + 1.0 / (2.0 * PI * PI)).sqrt();
        assert!((r.constant - oracle).abs() < 1e-8, "{} vs {}", r.constant, oracle);
        assert_eq!(r.residuals["harmonic_dimension"], 4.0);
    }

    #[test]
    fn kt_harmonic_forms() {
        let m = kt(8);
        let h = harmonic_one_forms(&m, crate::solvers::SolverOptions::default()).unwrap();
        assert_eq!(h.len(), 3);
        for x in &h {
            assert!(forms::norm(&m, &forms::d(&m, x)) < 1e-10 && forms::norm(&m, &forms::d_star(&m, x)) < 1e-10);
        }
    }

    #[test]
    fn kt_w_tilde_complex() {
        let m = kt(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let cx = assemble(&ctx, OperatorId::WTilde, 1, &[], AssemblyConfig { threads: 2, ..Default::default() }).unwrap();
        assert!(cx.st_norm < 1e-6, "{}", cx.st_norm);
        assert!(cx.projection_defect < 1e-8, "{}", cx.projection_defect);
        let c = cx.best_constant().unwrap();
        assert!(c.constant.is_finite());
        let harm = harmonic_one_forms(&m, crate::solvers::SolverOptions::default()).unwrap();
        let wide = assemble(&ctx, OperatorId::WTilde, 1, &harm, AssemblyConfig::default()).unwrap();
        assert!(wide.best_constant().unwrap().constant >= 10.0 * c.constant);
    }

    #[test]
    fn kahler_pipeline_recovers_potential() {
        let m = flat(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = m.grid.random_band_limited(&mut rng, 2);
        let a = forms::j_act(&m, &forms::d(&m, &FormField::from_scalar(g.clone())));
        let rep = theorem1_pipeline(&ctx, &a, PipelineConfig { cutoff: 1, ..Default::default() }).unwrap();
        let err = rep.f.iter().zip(&g).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        assert!(err < 1e-7, "{err}");
        assert!(rep.residuals["hormander_route"] < 1e-6 && rep.residuals["direct_route"] < 1e-6);
        assert!(rep.bound_holds);
        let zero = theorem1_pipeline(&ctx, &FormField::zeros(1, m.npts()), PipelineConfig { cutoff: 1, ..Default::default() }).unwrap();
        assert!(zero.f.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn kt_pipeline() {
        let m = kt(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = FormField::random(&m.grid, &mut rng, 1, 2);
        let a = admissible_one_form(&ctx, &raw).unwrap();
        let rep = theorem1_pipeline(&ctx, &a, PipelineConfig { cutoff: 2, ..Default::default() }).unwrap();
        println!("{}", serde_json::to_string_pretty(&rep).unwrap());
        assert!(rep.residuals["hormander_route"] < 1e-6);
        assert!(rep.residuals["direct_route"] < 1e-6);
        assert!(rep.residuals["routes_agree"] < 1e-6);
        assert!(rep.bound_holds);
        let bad = theorem1_pipeline(&ctx, &raw, PipelineConfig::default());
        assert!(matches!(bad, Err(Error::Precondition(_))));
    }
}
