//! Lejmi's operator `P = P⁻_J d d*` on `A⁻_J`, the corrections `σ¹_f`, `σ²_f`
//! and the operators `W`, `W̃`, `D̃ = d∘W̃` with their adjoints.
//!
//! With `ω⁻ = ω − F`:
//!
//! * `P σ¹ = −d⁻_J J df`
//! * `P σ² = d⁻_J *(df∧ω⁻)`
//! * `W f = J df + d*σ¹`, `W̃ f = d*(fω + σ¹ + σ²) = W f − *(df∧ω⁻) + d*σ²`

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algebra;
use crate::error::{Error, Result};
use crate::forms::{self, FormField};
use crate::geometry::ManifoldSpec;
use crate::grid::ops;
use crate::scalar::{sqrt, tiny, Real};
use crate::solvers::{self, SolveStats, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    #[default]
    InverseLaplacian,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipticSolveConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Deflate the discrete kernel of `P` (explicit basis on constant-coefficient manifolds).
    pub deflate: bool,
    pub preconditioner: Preconditioner,
}

impl Default for EllipticSolveConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000, deflate: true, preconditioner: Preconditioner::InverseLaplacian }
    }
}

impl EllipticSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 1e-4) {
            return Err(Error::InvalidParameter(format!("solver tolerance {} outside (0, 1e-4]", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter }
    }
}

/// Result of a `P`-solve.
#[derive(Clone, Debug)]
pub struct LejmiSolve<T> {
    pub sigma: FormField<T>,
    pub stats: SolveStats,
    /// `|Pσ − r| / |r|` recomputed after the solve.
    pub residual: f64,
    /// Relative size of the right-hand side's component in the deflated kernel.
    pub kernel_defect: f64,
}

/// `P⁻_J d d* ψ` (no projection of the input).
pub fn lejmi_apply<T: Real>(spec: &ManifoldSpec<T>, psi: &FormField<T>) -> FormField<T> {
    forms::anti_invariant(spec, &forms::d(spec, &forms::d_star(spec, psi)))
}

/// Solver context: manifold, configuration and the deflation basis of `ker P`.
pub struct Elliptic<'a, T: Real> {
    pub spec: &'a ManifoldSpec<T>,
    pub cfg: EllipticSolveConfig,
    /// L²-orthonormal basis of the deflated discrete kernel.
    pub kernel: Vec<FormField<T>>,
    coarse: Option<Coarse<T>>,
}

/// Coarse space for the balancing preconditioner `(I − QA)M(I − AQ) + Q`,
/// `Q = Z(ZᵀAZ)⁺Zᵀ`, in the Euclidean coordinates of the weighted system.
struct Coarse<T> {
    z: Vec<Vec<T>>,
    az: Vec<Vec<T>>,
    e_pinv: DMatrix<T>,
}

impl<T: Real> Coarse<T> {
    fn coords(&self, vs: &[Vec<T>], r: &[T]) -> nalgebra::DVector<T> {
        let c = nalgebra::DVector::from_fn(vs.len(), |i, _| ops::dot(&vs[i], r));
        &self.e_pinv * c
    }

    fn combine(vs: &[Vec<T>], c: &nalgebra::DVector<T>, out: &mut [T]) {
        for (v, ci) in vs.iter().zip(c.iter()) {
            ops::axpy(out, *ci, v);
        }
    }
}

impl<'a, T: Real> Elliptic<'a, T> {
    pub fn new(spec: &'a ManifoldSpec<T>, cfg: EllipticSolveConfig) -> Result<Self> {
        cfg.validate()?;
        let constant = spec.constant_coefficients();
        let kernel = if cfg.deflate && constant { pure_mode_kernel(spec) } else { Vec::new() };
        let mut ctx = Self { spec, cfg, kernel, coarse: None };
        if cfg.deflate && !constant {
            ctx.coarse = ctx.build_coarse();
        }
        Ok(ctx)
    }

    fn apply_weighted(&self, x: &[T]) -> Vec<T> {
        let psi = forms::anti_invariant(self.spec, &FormField::from_vec(2, x));
        self.weight(&lejmi_apply(self.spec, &psi)).to_vec()
    }

    /// Checkerboard modes times anti-invariant forms: with varying coefficients
    /// they are no longer in the kernel but leave eigenvalues far below the
    /// smooth spectrum, which stalls plain PCG.
    fn build_coarse(&self) -> Option<Coarse<T>> {
        let spec = self.spec;
        let grid = &spec.grid;
        let axes: Vec<usize> = grid.active_axes().collect();
        let consts = constant_anti_invariant(spec);
        let mut raw: Vec<Vec<T>> = Vec::new();
        for mask in 0..(1usize << axes.len()) {
            let sign: Vec<T> = (0..grid.len())
                .map(|p| {
                    let m = grid.multi_index(p);
                    let odd = axes.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &mu)| m[mu]).sum::<usize>() % 2;
                    if odd == 1 { -T::one() } else { T::one() }
                })
                .collect();
            for c in &consts {
                let comps = (0..6).map(|r| sign.iter().map(|s| *s * c[r]).collect()).collect();
                raw.push(forms::anti_invariant(spec, &FormField { degree: 2, comps }).to_vec());
            }
        }
        // Euclidean orthonormalization
        let n = raw.len();
        let g = DMatrix::<T>::from_fn(n, n, |i, k| ops::dot(&raw[i], &raw[k]));
        let eig = SymmetricEigen::new(g);
        let top = eig.eigenvalues.iter().fold(T::zero(), |a, b| a.max(*b));
        let mut z = Vec::new();
        for (idx, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam > top * T::lit(1e-10) {
                let mut v = vec![T::zero(); raw[0].len()];
                for i in 0..n {
                    ops::axpy(&mut v, eig.eigenvectors[(i, idx)] / sqrt(*lam), &raw[i]);
                }
                z.push(v);
            }
        }
        if z.is_empty() {
            return None;
        }
        let az: Vec<Vec<T>> = z.iter().map(|v| self.apply_weighted(v)).collect();
        let m = z.len();
        let e = DMatrix::<T>::from_fn(m, m, |i, k| (ops::dot(&z[i], &az[k]) + ops::dot(&z[k], &az[i])) * T::lit(0.5));
        let eig = SymmetricEigen::new(e);
        let top = eig.eigenvalues.iter().fold(T::zero(), |a, b| a.max(*b));
        let inv = eig.eigenvalues.map(|l| if l > top * T::lit(1e-12) { T::one() / l } else { T::zero() });
        let e_pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        Some(Coarse { z, az, e_pinv })
    }

    fn weight(&self, a: &FormField<T>) -> FormField<T> {
        FormField { degree: a.degree, comps: self.spec.inner[a.degree].apply(&a.comps) }
    }

    /// `Πᵀ v` with `Π = ½(1 − J)` on 2-forms (transpose in Euclidean components).
    fn project_transpose(&self, a: &FormField<T>) -> FormField<T> {
        let m = &self.spec.j_forms[2];
        let npts = a.len();
        let mut out = a.scale(T::lit(0.5));
        for p in 0..npts {
            let j = m.at(p);
            for r in 0..6 {
                let mut s = T::zero();
                for c in 0..6 {
                    s += j[c * 6 + r] * a.comps[c][p];
                }
                out.comps[r][p] -= T::lit(0.5) * s;
            }
        }
        out
    }

    fn inverse_laplacian(&self, a: &FormField<T>) -> FormField<T> {
        match self.cfg.preconditioner {
            Preconditioner::None => a.clone(),
            Preconditioner::InverseLaplacian => {
                let shift = T::lit(4.0) * T::pi() * T::pi();
                a.map_comps(|c| self.spec.grid.apply_multiplier(c, |k2| T::one() / (k2 + shift)))
            }
        }
    }

    fn remove_kernel(&self, a: &FormField<T>) -> (FormField<T>, T) {
        let mut out = a.clone();
        let mut removed = T::zero();
        for z in &self.kernel {
            let c = forms::inner(self.spec, &out, z);
            removed += c * c;
            out.axpy(-c, z);
        }
        (out, sqrt(removed))
    }

    /// Minimal-norm solution of `P σ = r` on `A⁻_J` (`r` anti-invariant).
    pub fn solve(&self, rhs: &FormField<T>) -> Result<LejmiSolve<T>> {
        self.solve_scaled(rhs, T::zero())
    }

    /// `P σ = d⁻_J v` for a 1-form `v`, with the tolerance taken relative to
    /// `‖dv‖`: when `d⁻_J v` is round-off the solve does not chase it.
    pub fn solve_d_minus(&self, v: &FormField<T>) -> Result<LejmiSolve<T>> {
        let dv = forms::d(self.spec, v);
        self.solve_scaled(&forms::anti_invariant(self.spec, &dv), forms::norm(self.spec, &dv))
    }

    /// Residuals are measured against `max(‖r‖, scale)`.
    fn solve_scaled(&self, rhs: &FormField<T>, scale: T) -> Result<LejmiSolve<T>> {
        let spec = self.spec;
        let rnorm = forms::norm(spec, rhs);
        if rnorm == T::zero() {
            return Ok(LejmiSolve { sigma: FormField::zeros(2, spec.npts()), stats: SolveStats { converged: true, ..Default::default() }, residual: 0.0, kernel_defect: 0.0 });
        }
        let (r, removed) = self.remove_kernel(rhs);
        let kernel_defect = (removed / rnorm).to_f64();
        let b = self.weight(&r).to_vec();
        let apply = |x: &[T]| self.apply_weighted(x);
        let smooth = |x: &[T]| {
            let v = self.project_transpose(&FormField::from_vec(2, x));
            forms::anti_invariant(spec, &self.inverse_laplacian(&v)).to_vec()
        };
        let precond = |x: &[T]| match &self.coarse {
            None => smooth(x),
            Some(c) => {
                let q = c.coords(&c.z, x);
                let mut r1 = x.to_vec();
                Coarse::combine(&c.az, &(-&q), &mut r1);
                let mut y = smooth(&r1);
                let back = c.coords(&c.az, &y);
                Coarse::combine(&c.z, &(-back), &mut y);
                Coarse::combine(&c.z, &q, &mut y);
                y
            }
        };
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
        let reference = rnorm.max(scale);
        let mut opts = self.cfg.options();
        opts.tol = (opts.tol * (reference / rnorm).to_f64()).min(1.0);
        let (x, stats) = solvers::pcg(apply, precond, dot, &b, opts);
        let sigma = forms::anti_invariant(spec, &FormField::from_vec(2, &x));
        let (sigma, _) = self.remove_kernel(&sigma);
        let res = forms::norm(spec, &lejmi_apply(spec, &sigma).sub(&r)) / reference.max(tiny::<T>());
        let out = LejmiSolve { sigma, stats, residual: res.to_f64(), kernel_defect };
        if !stats.converged && out.residual > self.cfg.tol * 10.0 {
            return Err(Error::Divergence { solver: "lejmi-pcg", residual: out.residual, iterations: stats.iterations });
        }
        Ok(out)
    }

    fn check_mean_zero(&self, f: &[T]) -> Result<()> {
        let spec = self.spec;
        let m = spec.integrate(f);
        let l2 = sqrt(spec.integrate(&f.iter().map(|v| *v * *v).collect::<Vec<_>>()) * spec.volume());
        if crate::scalar::abs(m) > T::lit(1e-9) * l2.max(T::one()) {
            return Err(Error::Precondition(format!("f must have zero mean (∫f vol = {:.3e})", m.to_f64())));
        }
        Ok(())
    }

    fn df(&self, f: &[T]) -> FormField<T> {
        forms::d(self.spec, &FormField::from_scalar(f.to_vec()))
    }

    /// `P σ¹ = −d⁻_J J df`.
    pub fn solve_sigma1(&self, f: &[T]) -> Result<LejmiSolve<T>> {
        self.check_mean_zero(f)?;
        let jdf = forms::j_act(self.spec, &self.df(f));
        self.solve_d_minus(&jdf.scale(-T::one()))
    }

    /// `P σ² = d⁻_J *(df∧ω⁻)`.
    pub fn solve_sigma2(&self, f: &[T]) -> Result<LejmiSolve<T>> {
        self.check_mean_zero(f)?;
        let v = forms::hodge_star(self.spec, &forms::wedge(&self.df(f), &self.spec.omega_minus)?);
        self.solve_d_minus(&v)
    }

    /// `W̃ f` without diagnostics.
    pub fn w_tilde(&self, f: &[T]) -> Result<FormField<T>> {
        let s1 = self.solve_sigma1(f)?;
        let s2 = self.solve_sigma2(f)?;
        let base = self.spec.omega.mul_fn(f).add(&s1.sigma).add(&s2.sigma);
        Ok(forms::d_star(self.spec, &base))
    }

    /// `D̃ f = d W̃ f`.
    pub fn d_tilde(&self, f: &[T]) -> Result<FormField<T>> {
        Ok(forms::d(self.spec, &self.w_tilde(f)?))
    }

    /// Builds every operator output for `f` with residual diagnostics.
    pub fn bundle(&self, f: &[T]) -> Result<WBundle<T>> {
        let spec = self.spec;
        let s1 = self.solve_sigma1(f)?;
        let s2 = self.solve_sigma2(f)?;
        let df = self.df(f);
        let jdf = forms::j_act(spec, &df);
        let w = jdf.add(&forms::d_star(spec, &s1.sigma));
        let correction = forms::hodge_star(spec, &forms::wedge(&df, &spec.omega_minus)?);
        let w_tilde = w.sub(&correction).add(&forms::d_star(spec, &s2.sigma));
        let w_tilde_direct = forms::d_star(spec, &spec.omega.mul_fn(f).add(&s1.sigma).add(&s2.sigma));
        let d_tilde = forms::d(spec, &w_tilde);
        let scale = forms::norm(spec, &jdf).max(tiny::<T>());
        let rel = |x: &FormField<T>| (forms::norm(spec, x) / scale).to_f64();
        let mut diag = BTreeMap::new();
        diag.insert("sigma1_residual".into(), s1.residual);
        diag.insert("sigma2_residual".into(), s2.residual);
        diag.insert("sigma1_kernel_defect".into(), s1.kernel_defect);
        diag.insert("sigma2_kernel_defect".into(), s2.kernel_defect);
        diag.insert("sigma1_iterations".into(), s1.stats.iterations as f64);
        diag.insert("sigma2_iterations".into(), s2.stats.iterations as f64);
        diag.insert("d_minus_w".into(), rel(&forms::d_pm_j(spec, &w).1));
        diag.insert("d_star_w_tilde".into(), rel(&forms::d_star(spec, &w_tilde)));
        diag.insert("d_minus_w_tilde".into(), rel(&forms::d_pm_j(spec, &w_tilde).1));
        diag.insert("w_tilde_two_routes".into(), rel(&w_tilde.sub(&w_tilde_direct)));
        let dt_scale = forms::norm(spec, &d_tilde).max(tiny::<T>());
        diag.insert(
            "d_tilde_anti_invariant".into(),
            (forms::norm(spec, &forms::anti_invariant(spec, &d_tilde)) / dt_scale).to_f64(),
        );
        // ∫ dW̃f ∧ F = ∫ W̃f ∧ dF
        let lhs = spec.grid.integrate(&forms::wedge(&d_tilde, &spec.f_form)?.comps[0]);
        let rhs = spec.grid.integrate(&forms::wedge(&w_tilde, &forms::d(spec, &spec.f_form))?.comps[0]);
        diag.insert("d_tilde_f_pairing".into(), ((lhs - rhs) / dt_scale.max(T::one())).to_f64().abs());
        Ok(WBundle { f: f.to_vec(), sigma1: s1.sigma, sigma2: s2.sigma, w, w_tilde, d_tilde, diagnostics: diag })
    }

    /// `W̃* a = Λ_F d⁺_J a − mean` for `d* a = 0 = d⁻_J a`; fails when a
    /// precondition residual exceeds `tol`.
    pub fn adjoint_w_tilde(&self, a: &FormField<T>, tol: f64) -> Result<Vec<T>> {
        let spec = self.spec;
        let (dp, dm) = forms::d_pm_j(spec, a);
        self.check_admissible(a, &dm, tol, true)?;
        Ok(spec.remove_mean(&forms::lambda_contract(spec, &dp)))
    }

    /// `W* a = 2(d⁺_J a∧F − a∧dF)/F² − mean`, valid for `d⁻_J a = 0`.
    pub fn adjoint_w(&self, a: &FormField<T>, tol: f64) -> Result<Vec<T>> {
        let spec = self.spec;
        let (dp, dm) = forms::d_pm_j(spec, a);
        self.check_admissible(a, &dm, tol, false)?;
        let num = forms::wedge(&dp, &spec.f_form)?.sub(&forms::wedge(a, &forms::d(spec, &spec.f_form))?);
        let ff = forms::wedge(&spec.f_form, &spec.f_form)?;
        let v: Vec<T> = num.comps[0].iter().zip(&ff.comps[0]).map(|(n, d)| T::lit(2.0) * *n / *d).collect();
        Ok(spec.remove_mean(&v))
    }

    fn check_admissible(&self, a: &FormField<T>, dm: &FormField<T>, tol: f64, coclosed: bool) -> Result<()> {
        let spec = self.spec;
        let scale = forms::norm(spec, &forms::d(spec, a)).max(forms::norm(spec, a)).max(tiny::<T>());
        let r = (forms::norm(spec, dm) / scale).to_f64();
        if r > tol {
            return Err(Error::Precondition(format!("d⁻_J a = {r:.3e} relative")));
        }
        if coclosed {
            let c = (forms::norm(spec, &forms::d_star(spec, a)) / scale).to_f64();
            if c > tol {
                return Err(Error::Precondition(format!("d* a = {c:.3e} relative")));
            }
        }
        Ok(())
    }

    /// L² adjoint of `W̃` on arbitrary 1-forms: `⟨ω, db − d d* z⟩ − mean` with
    /// `P z = d⁻_J b`.
    pub fn adjoint_w_tilde_general(&self, b: &FormField<T>) -> Result<Vec<T>> {
        let spec = self.spec;
        let db = forms::d(spec, b);
        let z = self.solve_d_minus(b)?.sigma;
        let t = db.sub(&forms::d(spec, &forms::d_star(spec, &z)));
        Ok(spec.remove_mean(&forms::pointwise_inner(spec, &spec.omega, &t)))
    }

    /// `D̃* ψ = W̃*(d*ψ)`.
    pub fn adjoint_d_tilde(&self, psi: &FormField<T>) -> Result<Vec<T>> {
        self.adjoint_w_tilde_general(&forms::d_star(self.spec, psi))
    }
}

/// Every output of the `W`-construction for one `f`.
#[derive(Clone, Debug)]
pub struct WBundle<T> {
    pub f: Vec<T>,
    pub sigma1: FormField<T>,
    pub sigma2: FormField<T>,
    pub w: FormField<T>,
    pub w_tilde: FormField<T>,
    pub d_tilde: FormField<T>,
    pub diagnostics: BTreeMap<String, f64>,
}

pub fn solve_sigma1<T: Real>(ctx: &Elliptic<'_, T>, f: &[T]) -> Result<LejmiSolve<T>> {
    ctx.solve_sigma1(f)
}

pub fn solve_sigma2<T: Real>(ctx: &Elliptic<'_, T>, f: &[T]) -> Result<LejmiSolve<T>> {
    ctx.solve_sigma2(f)
}

pub fn build_w<T: Real>(ctx: &Elliptic<'_, T>, f: &[T]) -> Result<FormField<T>> {
    Ok(ctx.bundle(f)?.w)
}

pub fn build_w_tilde<T: Real>(ctx: &Elliptic<'_, T>, f: &[T]) -> Result<FormField<T>> {
    ctx.w_tilde(f)
}

pub fn apply_d_tilde<T: Real>(ctx: &Elliptic<'_, T>, f: &[T]) -> Result<FormField<T>> {
    ctx.d_tilde(f)
}

/// Pointwise anti-invariant projections of the constant 2-forms, orthonormal at node 0.
fn constant_anti_invariant<T: Real>(spec: &ManifoldSpec<T>) -> Vec<[T; 6]> {
    let j = spec.j_forms[2].at(0);
    let w = spec.inner[2].at(0);
    let ip = |a: &[T; 6], b: &[T; 6]| {
        let mut s = T::zero();
        for i in 0..6 {
            for k in 0..6 {
                s += a[i] * w[i * 6 + k] * b[k];
            }
        }
        s
    };
    let mut out: Vec<[T; 6]> = Vec::new();
    for e in 0..6 {
        let mut v = [T::zero(); 6];
        for r in 0..6 {
            v[r] = T::lit(0.5) * ((if r == e { T::one() } else { T::zero() }) - j[r * 6 + e]);
        }
        for u in &out {
            let c = ip(&v, u);
            for r in 0..6 {
                v[r] -= c * u[r];
            }
        }
        let n = sqrt(ip(&v, &v));
        if n > T::lit(1e-8) {
            out.push(v.map(|x| x / n));
        }
    }
    out
}

/// Discrete kernel of `P` on modes whose wave numbers are 0 or Nyquist on every
/// active axis (spectral derivatives vanish there); constant-coefficient manifolds.
fn pure_mode_kernel<T: Real>(spec: &ManifoldSpec<T>) -> Vec<FormField<T>> {
    let grid = &spec.grid;
    let axes: Vec<usize> = grid.active_axes().collect();
    let consts = constant_anti_invariant(spec);
    let mut candidates = Vec::new();
    for mask in 0..(1usize << axes.len()) {
        let sign: Vec<T> = (0..grid.len())
            .map(|p| {
                let m = grid.multi_index(p);
                let odd = axes.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &mu)| m[mu]).sum::<usize>() % 2;
                if odd == 1 { -T::one() } else { T::one() }
            })
            .collect();
        let mut group = Vec::new();
        for c in &consts {
            let comps = (0..6).map(|r| sign.iter().map(|s| *s * c[r]).collect()).collect();
            group.push(FormField { degree: 2, comps });
        }
        candidates.push(group);
    }
    let mut kernel = Vec::new();
    for group in candidates {
        let n = group.len();
        let vol = spec.volume();
        let dstars: Vec<FormField<T>> = group.iter().map(|g| forms::d_star(spec, g)).collect();
        let gram = DMatrix::<T>::from_fn(n, n, |i, k| forms::inner(spec, &dstars[i], &dstars[k]) / vol);
        let eig = SymmetricEigen::new(gram);
        for (idx, lam) in eig.eigenvalues.iter().enumerate() {
            if *lam < T::lit(1e-10) {
                let mut z = FormField::zeros(2, spec.npts());
                for i in 0..n {
                    z.axpy(eig.eigenvectors[(i, idx)], &group[i]);
                }
                let nz = forms::norm(spec, &z);
                kernel.push(z.scale(T::one() / nz));
            }
        }
    }
    kernel
}

/// Galerkin kernel of `P` on anti-invariant forms with Fourier modes `|k| <= cutoff`
/// (cutoff 0: constant sector). Returns an L²-orthonormal basis.
pub fn lejmi_kernel<T: Real>(spec: &ManifoldSpec<T>, cutoff: usize) -> Vec<FormField<T>> {
    let grid = &spec.grid;
    let npts = spec.npts();
    let mut fields: Vec<Vec<T>> = vec![vec![T::one(); npts]];
    for k in grid.half_space_modes(cutoff) {
        fields.push(grid.cos_mode(&k));
        fields.push(grid.sin_mode(&k));
    }
    let mut basis: Vec<FormField<T>> = Vec::new();
    for f in &fields {
        for &mask in algebra::basis(2) {
            let b = forms::anti_invariant(spec, &FormField::monomial(mask, f.clone()));
            basis.push(b);
        }
    }
    let n = basis.len();
    let gram = DMatrix::<T>::from_fn(n, n, |i, k| forms::inner(spec, &basis[i], &basis[k]));
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().fold(T::zero(), |a, b| a.max(*b));
    // orthonormal basis of the span
    let mut ortho = Vec::new();
    for (idx, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > lmax * T::lit(1e-10) {
            let mut z = FormField::zeros(2, npts);
            for i in 0..n {
                z.axpy(eig.eigenvectors[(i, idx)] / sqrt(*lam), &basis[i]);
            }
            ortho.push(z);
        }
    }
    let m = ortho.len();
    let ds: Vec<FormField<T>> = ortho.iter().map(|z| forms::d_star(spec, z)).collect();
    let a = DMatrix::<T>::from_fn(m, m, |i, k| forms::inner(spec, &ds[i], &ds[k]));
    let eig = SymmetricEigen::new(a);
    let amax = eig.eigenvalues.iter().fold(T::one(), |a, b| a.max(*b));
    let mut out = Vec::new();
    for (idx, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam < amax * T::lit(1e-10) {
            let mut z = FormField::zeros(2, npts);
            for i in 0..m {
                z.axpy(eig.eigenvectors[(i, idx)], &ortho[i]);
            }
            out.push(z);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_manifold, CatalogId};
    use crate::grid::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    #[test]
    fn kahler_corrections_vanish() {
        let m = flat(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = m.grid.random_band_limited(&mut rng, 2);
        let b = ctx.bundle(&f).unwrap();
        assert!(b.sigma1.max_abs() < 1e-12 && b.sigma2.max_abs() < 1e-12);
        let jdf = forms::j_act(&m, &forms::d(&m, &FormField::from_scalar(f)));
        assert!(b.w_tilde.sub(&jdf).max_abs() < 1e-12);
    }

    #[test]
    fn kodaira_thurston_bundle_residuals() {
        let m = kt(16);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = m.grid.random_band_limited(&mut rng, 3);
        let b = ctx.bundle(&f).unwrap();
        assert!(b.sigma1.max_abs() > 1e-3);
        for key in ["d_minus_w", "d_star_w_tilde", "d_minus_w_tilde", "w_tilde_two_routes", "d_tilde_anti_invariant", "d_tilde_f_pairing"] {
            assert!(b.diagnostics[key] < 1e-8, "{key}: {}", b.diagnostics[key]);
        }
    }

    #[test]
    fn sigma1_matches_dense_galerkin() {
        // constant coefficients preserve Fourier modes, so a Galerkin solve on
        // the modes of f is exact
        let m = kt(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        // sin 2πt gives d⁻_J J df = 0; the dy-direction feels dγ = −dx∧dy
        let f0 = m.grid.sample(|x| (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!(ctx.solve_sigma1(&f0).unwrap().sigma.max_abs() < 1e-12);
        let f = m.grid.sample(|x| (2.0 * std::f64::consts::PI * x[2]).sin());
        let s = ctx.solve_sigma1(&f).unwrap();
        assert!(s.sigma.max_abs() > 1e-3);
        let mut basis = Vec::new();
        for k in m.grid.half_space_modes(1) {
            for field in [m.grid.cos_mode(&k), m.grid.sin_mode(&k)] {
                for &mask in algebra::basis(2) {
                    basis.push(forms::anti_invariant(&m, &FormField::monomial(mask, field.clone())));
                }
            }
        }
        let n = basis.len();
        let ds: Vec<_> = basis.iter().map(|b| forms::d_star(&m, b)).collect();
        let a = DMatrix::from_fn(n, n, |i, k| forms::inner(&m, &ds[i], &ds[k]));
        let g = DMatrix::from_fn(n, n, |i, k| forms::inner(&m, &basis[i], &basis[k]));
        let jdf = forms::j_act(&m, &forms::d(&m, &FormField::from_scalar(f)));
        let rhs = forms::d_pm_j(&m, &jdf).1.scale(-1.0);
        let r = nalgebra::DVector::from_fn(n, |i, _| forms::inner(&m, &rhs, &basis[i]));
        // minimal-norm in the L² metric: solve with the pseudo-inverse of A restricted to span
        let ge = SymmetricEigen::new(g);
        let keep: Vec<usize> = (0..n).filter(|&i| ge.eigenvalues[i] > 1e-10).collect();
        let q = DMatrix::from_fn(n, keep.len(), |i, c| ge.eigenvectors[(i, keep[c])] / ge.eigenvalues[keep[c]].sqrt());
        let ar = q.transpose() * &a * &q;
        let rr = q.transpose() * r;
        let y = ar.svd(true, true).solve(&rr, 1e-10).unwrap();
        let coef = &q * y;
        let mut oracle = FormField::zeros(2, m.npts());
        for i in 0..n {
            oracle.axpy(coef[i], &basis[i]);
        }
        assert!(s.residual < 1e-9);
        assert!(s.sigma.sub(&oracle).max_abs() < 1e-8 * oracle.max_abs(), "{}", s.sigma.sub(&oracle).max_abs());
    }

    #[test]
    fn lejmi_is_self_adjoint_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [kt(8), perturbed(8)] {
            let a = forms::anti_invariant(&m, &FormField::random(&m.grid, &mut rng, 2, 2));
            let b = forms::anti_invariant(&m, &FormField::random(&m.grid, &mut rng, 2, 2));
            let pa = lejmi_apply(&m, &a);
            let pb = lejmi_apply(&m, &b);
            let (x, y) = (forms::inner(&m, &pa, &b), forms::inner(&m, &a, &pb));
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0), "{}", m.name());
            assert!(forms::inner(&m, &pa, &a) >= 0.0);
        }
    }

    #[test]
    fn flat_constant_kernel_has_dimension_two() {
        let m = flat(4);
        assert_eq!(lejmi_kernel(&m, 0).len(), 2);
        let kt = kt(8);
        // on KT only ε⁰²−ε¹³ of the constant anti-invariant forms is closed
        assert_eq!(lejmi_kernel(&kt, 0).len(), 1);
    }

    #[test]
    fn adjoint_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [kt(8), perturbed(8)] {
            let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
            let g = m.remove_mean(&m.grid.random_band_limited(&mut rng, 2));
            let a = ctx.w_tilde(&g).unwrap();
            let f = m.remove_mean(&m.grid.random_band_limited(&mut rng, 2));
            let wf = ctx.w_tilde(&f).unwrap();
            let lhs = forms::inner(&m, &wf, &a);
            let rhs = m.integrate(&crate::grid::ops::mul(&f, &ctx.adjoint_w_tilde(&a, 1e-7).unwrap()));
            assert!((lhs - rhs).abs() < 1e-7 * lhs.abs(), "{}: W̃* {lhs} vs {rhs}", m.name());
            let w = ctx.bundle(&f).unwrap().w;
            let lhs = forms::inner(&m, &w, &a);
            let rhs = m.integrate(&crate::grid::ops::mul(&f, &ctx.adjoint_w(&a, 1e-7).unwrap()));
            assert!((lhs - rhs).abs() < 1e-7 * lhs.abs(), "{}: W* {lhs} vs {rhs}", m.name());
            let b = FormField::random(&m.grid, &mut rng, 1, 2);
            let lhs = forms::inner(&m, &wf, &b);
            let rhs = m.integrate(&crate::grid::ops::mul(&f, &ctx.adjoint_w_tilde_general(&b).unwrap()));
            assert!((lhs - rhs).abs() < 1e-7 * lhs.abs().max(1e-3), "{}: general {lhs} vs {rhs}", m.name());
        }
    }

    #[test]
    fn inadmissible_input_is_rejected() {
        let m = kt(8);
        let ctx = Elliptic::new(&m, EllipticSolveConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = FormField::random(&m.grid, &mut rng, 1, 2);
        assert!(matches!(ctx.adjoint_w_tilde(&a, 1e-8), Err(Error::Precondition(_))));
        let f = vec![1.0; m.npts()];
        assert!(matches!(ctx.solve_sigma1(&f), Err(Error::Precondition(_))));
    }
}
