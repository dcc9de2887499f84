//! Matrix-free Krylov solvers over flat real vectors with caller-supplied inner
//! products.

use crate::error::{Error, Result};
use crate::scalar::{sqrt, Real};

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual at exit (normal-equation residual for CGLS).
    pub residual: f64,
    /// Relative data residual `|b − Ax| / |b|` (CGLS only; equals `residual` for PCG).
    pub data_residual: f64,
    pub converged: bool,
}

impl SolveStats {
    pub fn require(self, solver: &'static str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Divergence { solver, residual: self.residual, iterations: self.iterations })
        }
    }
}

fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (u, v) in y.iter_mut().zip(x) {
        *u += a * *v;
    }
}

/// Preconditioned conjugate gradients for a self-adjoint positive semidefinite
/// operator, starting from zero. With a consistent right-hand side orthogonal to
/// the kernel the iterates stay in the range.
pub fn pcg<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    precond: impl Fn(&[T]) -> Vec<T>,
    dot: impl Fn(&[T], &[T]) -> T,
    b: &[T],
    opts: SolverOptions,
) -> (Vec<T>, SolveStats) {
    let mut x = vec![T::zero(); b.len()];
    let bnorm = sqrt(dot(b, b).max(T::zero()));
    if bnorm == T::zero() {
        return (x, SolveStats { converged: true, ..Default::default() });
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let tol = T::lit(opts.tol);
    let mut rel = T::one();
    for it in 0..opts.max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            return (x, SolveStats { iterations: it, residual: rel.to_f64(), data_residual: rel.to_f64(), converged: rel <= tol });
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        rel = sqrt(dot(&r, &r).max(T::zero())) / bnorm;
        if rel <= tol {
            return (x, SolveStats { iterations: it + 1, residual: rel.to_f64(), data_residual: rel.to_f64(), converged: true });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
    }
    (x, SolveStats { iterations: opts.max_iter, residual: rel.to_f64(), data_residual: rel.to_f64(), converged: false })
}

/// Preconditioned CGLS for `min |Ax − b|`, starting from zero. `precond` is a
/// symmetric positive definite approximation of `(A*A)⁻¹`. Convergence is measured
/// on the normal-equation residual `|A*(b − Ax)| / |A*b|`.
#[allow(clippy::too_many_arguments)]
pub fn cgls<T: Real>(
    apply: impl Fn(&[T]) -> Vec<T>,
    adjoint: impl Fn(&[T]) -> Vec<T>,
    precond: impl Fn(&[T]) -> Vec<T>,
    dot_x: impl Fn(&[T], &[T]) -> T,
    dot_y: impl Fn(&[T], &[T]) -> T,
    b: &[T],
    opts: SolverOptions,
) -> (Vec<T>, SolveStats) {
    let mut r = b.to_vec();
    let mut s = adjoint(&r);
    let mut x = vec![T::zero(); s.len()];
    let bnorm = sqrt(dot_y(b, b).max(T::zero()));
    let snorm0 = sqrt(dot_x(&s, &s).max(T::zero()));
    if snorm0 == T::zero() {
        return (x, SolveStats { converged: true, data_residual: 1.0, ..Default::default() });
    }
    let mut z = precond(&s);
    let mut p = z.clone();
    let mut gamma = dot_x(&s, &z);
    let tol = T::lit(opts.tol);
    let mut rel = T::one();
    for it in 0..opts.max_iter {
        let q = apply(&p);
        let qq = dot_y(&q, &q);
        if qq <= T::zero() {
            break;
        }
        let alpha = gamma / qq;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        s = adjoint(&r);
        rel = sqrt(dot_x(&s, &s).max(T::zero())) / snorm0;
        if rel <= tol {
            let dr = sqrt(dot_y(&r, &r).max(T::zero())) / bnorm;
            return (x, SolveStats { iterations: it + 1, residual: rel.to_f64(), data_residual: dr.to_f64(), converged: true });
        }
        z = precond(&s);
        let g_new = dot_x(&s, &z);
        let beta = g_new / gamma;
        gamma = g_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
    }
    let dr = sqrt(dot_y(&r, &r).max(T::zero())) / bnorm;
    (x, SolveStats { iterations: opts.max_iter, residual: rel.to_f64(), data_residual: dr.to_f64(), converged: rel <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn pcg_solves_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(n, n);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        let (x, st) = pcg(
            |v| (&a * DVector::from_column_slice(v)).as_slice().to_vec(),
            |v| v.iter().zip(&diag).map(|(x, d)| x / d).collect(),
            dot,
            &b,
            SolverOptions { tol: 1e-12, max_iter: 200 },
        );
        assert!(st.converged);
        let oracle = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!((DVector::from_column_slice(&x) - oracle).amax() < 1e-9);
    }

    #[test]
    fn cgls_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, n) = (40, 15);
        let a = DMatrix::<f64>::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, st) = cgls(
            |v| (&a * DVector::from_column_slice(v)).as_slice().to_vec(),
            |v| (a.transpose() * DVector::from_column_slice(v)).as_slice().to_vec(),
            |v| v.to_vec(),
            dot,
            dot,
            &b,
            SolverOptions { tol: 1e-12, max_iter: 200 },
        );
        assert!(st.converged);
        let oracle = a.clone().svd(true, true).solve(&DVector::from_column_slice(&b), 1e-14).unwrap();
        assert!((DVector::from_column_slice(&x) - oracle).amax() < 1e-9);
        assert!(st.data_residual > 0.1);
    }
}
