//! Second-order jets in four variables and Gauss–Legendre rules.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use num_traits::Zero;

use crate::scalar::{sqrt, Real};

/// Value, gradient and Hessian at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<S> {
    pub v: S,
    pub g: [S; 4],
    pub h: [[S; 4]; 4],
}

/// Value and gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1<S> {
    pub v: S,
    pub g: [S; 4],
}

pub trait Ring: Copy + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {}
impl<S: Copy + Zero + Add<Output = S> + Sub<Output = S> + Mul<Output = S> + Neg<Output = S>> Ring for S {}

impl<S: Ring> Jet<S> {
    pub fn constant(c: S) -> Self {
        Self { v: c, g: [S::zero(); 4], h: [[S::zero(); 4]; 4] }
    }

    pub fn map<R>(&self, f: impl Fn(S) -> R) -> Jet<R> {
        Jet { v: f(self.v), g: self.g.map(&f), h: self.h.map(|r| r.map(&f)) }
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for a in 0..4 {
            out.g[a] = self.g[a] * o.v + self.v * o.g[a];
            for b in 0..4 {
                out.h[a][b] = self.h[a][b] * o.v + self.g[a] * o.g[b] + self.g[b] * o.g[a] + self.v * o.h[a][b];
            }
        }
        out
    }

    /// `f(self)` for a scalar function with derivatives `(f, f', f'')` at `self.v`.
    pub fn compose(&self, f: S, f1: S, f2: S) -> Self {
        let mut out = Self::constant(f);
        for a in 0..4 {
            out.g[a] = f1 * self.g[a];
            for b in 0..4 {
                out.h[a][b] = f2 * self.g[a] * self.g[b] + f1 * self.h[a][b];
            }
        }
        out
    }

    pub fn first(&self) -> Jet1<S> {
        Jet1 { v: self.v, g: self.g }
    }
}

impl<S: Ring> Add for Jet<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        out.v = out.v + o.v;
        for a in 0..4 {
            out.g[a] = out.g[a] + o.g[a];
            for b in 0..4 {
                out.h[a][b] = out.h[a][b] + o.h[a][b];
            }
        }
        out
    }
}

impl<S: Ring> Sub for Jet<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + o.map(|x| -x)
    }
}

impl<S: Ring> Jet1<S> {
    pub fn constant(c: S) -> Self {
        Self { v: c, g: [S::zero(); 4] }
    }

    pub fn map<R>(&self, f: impl Fn(S) -> R) -> Jet1<R> {
        Jet1 { v: f(self.v), g: self.g.map(&f) }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut g = [S::zero(); 4];
        for a in 0..4 {
            g[a] = self.g[a] * o.v + self.v * o.g[a];
        }
        Self { v: self.v * o.v, g }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut g = self.g;
        for a in 0..4 {
            g[a] = g[a] + o.g[a];
        }
        Self { v: self.v + o.v, g }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.map(|x| -x))
    }
}

/// Coordinate function `x_mu` as a jet at `x`.
pub fn coordinate<T: Real>(x: [T; 4], mu: usize) -> Jet<T> {
    let mut j = Jet::constant(x[mu]);
    j.g[mu] = T::one();
    j
}

pub fn to_complex<T: Real>(j: &Jet<T>) -> Jet<Complex<T>> {
    j.map(|v| Complex::new(v, T::zero()))
}

pub fn conj<T: Real>(j: &Jet<Complex<T>>) -> Jet<Complex<T>> {
    j.map(|v| v.conj())
}

/// `exp(i k·x)`.
pub fn plane_wave<T: Real>(x: [T; 4], k: [T; 4]) -> Jet<Complex<T>> {
    let ph = (0..4).fold(T::zero(), |s, m| s + k[m] * x[m]);
    let e = Complex::new(ph.cos(), ph.sin());
    let i = Complex::new(T::zero(), T::one());
    let mut out = Jet::constant(e);
    for a in 0..4 {
        out.g[a] = i * e * k[a];
        for b in 0..4 {
            out.h[a][b] = -(e * (k[a] * k[b]));
        }
    }
    out
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Golub–Welsch).
pub fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1, "at least one node");
    let jm = DMatrix::<T>::from_fn(n, n, |i, k| {
        if i + 1 == k || k + 1 == i {
            let m = T::lit(i.max(k) as f64);
            m / sqrt(T::lit(4.0) * m * m - T::one())
        } else {
            T::zero()
        }
    });
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(T, T)> =
        (0..n).map(|i| (eig.eigenvalues[i], T::lit(2.0) * eig.eigenvectors[(0, i)] * eig.eigenvectors[(0, i)])).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Composite rule on `[lo, hi]` with `cells` equal cells of `order` nodes each.
pub fn composite_rule<T: Real>(lo: T, hi: T, cells: usize, order: usize) -> (Vec<T>, Vec<T>) {
    let (x, w) = gauss_legendre::<T>(order);
    let h = (hi - lo) / T::lit(cells as f64);
    let mut nodes = Vec::with_capacity(cells * order);
    let mut weights = Vec::with_capacity(cells * order);
    for c in 0..cells {
        let a = lo + h * T::lit(c as f64);
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(a + h * (*xi + T::one()) / T::lit(2.0));
            weights.push(*wi * h / T::lit(2.0));
        }
    }
    (nodes, weights)
}
