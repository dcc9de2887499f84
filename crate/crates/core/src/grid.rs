//! Periodic tensor grids over the four chart coordinates `(t, x, y, z)`,
//! spectral derivatives and band-limited Fourier data.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, two_pi, Real};

pub type ScalarField<T> = Vec<T>;

/// Integer wave vector on the four coordinates; inactive axes carry 0.
pub type WaveVector = [i64; 4];

pub const COORD_NAMES: [&str; 4] = ["t", "x", "y", "z"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: [usize; 4],
    #[serde(default = "unit_periods")]
    pub period: [f64; 4],
    #[serde(default = "all_active")]
    pub active: [bool; 4],
}

fn unit_periods() -> [f64; 4] {
    [1.0; 4]
}

fn all_active() -> [bool; 4] {
    [true; 4]
}

impl GridSpec {
    pub fn cube(n: usize) -> Self {
        Self { resolution: [n; 4], period: [1.0; 4], active: [true; 4] }
    }

    /// `n³` over `(t, x, y)`; the `z` direction is the invariant direction.
    pub fn z_invariant(n: usize) -> Self {
        Self { resolution: [n, n, n, 1], period: [1.0; 4], active: [true, true, true, false] }
    }

    pub fn validate(&self) -> Result<()> {
        for mu in 0..4 {
            if self.period[mu] <= 0.0 || !self.period[mu].is_finite() {
                return Err(Error::InvalidGrid(format!("period[{mu}] must be positive")));
            }
            if self.active[mu] {
                let n = self.resolution[mu];
                if n < 4 || !n.is_power_of_two() {
                    return Err(Error::InvalidGrid(format!(
                        "resolution[{mu}] = {n}: active axes need a power of two >= 4"
                    )));
                }
            }
        }
        if !self.active.iter().any(|a| *a) {
            return Err(Error::InvalidGrid("no active coordinate".into()));
        }
        Ok(())
    }
}

struct AxisPlan<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    /// `perm[i]` is the position of grid point `i` in the axis-line-major layout.
    perm: Vec<u32>,
    /// Angular wavenumber `2πk/L` per line position; zero at Nyquist.
    ik: Vec<T>,
    /// Signed integer frequency per line position.
    freq: Vec<i64>,
}

/// Immutable periodic grid with cached FFT plans.
pub struct Grid<T: Real> {
    spec: GridSpec,
    n: [usize; 4],
    strides: [usize; 4],
    len: usize,
    cell_volume: T,
    axes: [Option<AxisPlan<T>>; 4],
}

impl<T: Real> std::fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("active", &self.spec.active).finish()
    }
}

fn signed_freq(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl<T: Real> Grid<T> {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let mut n = [1usize; 4];
        for mu in 0..4 {
            if spec.active[mu] {
                n[mu] = spec.resolution[mu];
            }
        }
        let mut strides = [1usize; 4];
        for mu in (0..3).rev() {
            strides[mu] = strides[mu + 1] * n[mu + 1];
        }
        let len = n.iter().product::<usize>();
        let mut volume = 1.0;
        for p in spec.period {
            volume *= p;
        }
        let cell_volume = T::lit(volume / len as f64);
        let mut planner = FftPlanner::<T>::new();
        let mut axes: [Option<AxisPlan<T>>; 4] = [None, None, None, None];
        for mu in 0..4 {
            if !spec.active[mu] {
                continue;
            }
            let nm = n[mu];
            let mut perm = vec![0u32; len];
            for (i, slot) in perm.iter_mut().enumerate() {
                let j = (i / strides[mu]) % nm;
                let line = (i / (strides[mu] * nm)) * strides[mu] + i % strides[mu];
                *slot = (line * nm + j) as u32;
            }
            let scale = two_pi::<T>() / T::lit(spec.period[mu]);
            let freq: Vec<i64> = (0..nm).map(|j| signed_freq(j, nm)).collect();
            let ik = freq
                .iter()
                .map(|&k| if 2 * k.unsigned_abs() as usize == nm { T::zero() } else { scale * T::lit(k as f64) })
                .collect();
            axes[mu] = Some(AxisPlan {
                n: nm,
                forward: planner.plan_fft_forward(nm),
                inverse: planner.plan_fft_inverse(nm),
                perm,
                ik,
                freq,
            });
        }
        Ok(Self { spec: spec.clone(), n, strides, len, cell_volume, axes })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> [usize; 4] {
        self.n
    }

    pub fn is_active(&self, mu: usize) -> bool {
        self.spec.active[mu]
    }

    pub fn active_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(|&mu| self.spec.active[mu])
    }

    /// Quadrature weight of a single node (uniform rule).
    pub fn cell_volume(&self) -> T {
        self.cell_volume
    }

    pub fn total_volume(&self) -> T {
        self.cell_volume * from_usize(self.len)
    }

    pub fn multi_index(&self, i: usize) -> [usize; 4] {
        let mut m = [0; 4];
        for mu in 0..4 {
            m[mu] = (i / self.strides[mu]) % self.n[mu];
        }
        m
    }

    pub fn flat_index(&self, m: [usize; 4]) -> usize {
        (0..4).map(|mu| m[mu] * self.strides[mu]).sum()
    }

    /// Chart coordinates of node `i`; inactive coordinates are 0.
    pub fn coords(&self, i: usize) -> [T; 4] {
        let m = self.multi_index(i);
        let mut c = [T::zero(); 4];
        for mu in 0..4 {
            if self.spec.active[mu] {
                c[mu] = T::lit(self.spec.period[mu] * m[mu] as f64 / self.n[mu] as f64);
            }
        }
        c
    }

    pub fn coordinate_field(&self, mu: usize) -> ScalarField<T> {
        (0..self.len).map(|i| self.coords(i)[mu]).collect()
    }

    pub fn sample<F: Fn([T; 4]) -> T>(&self, f: F) -> ScalarField<T> {
        (0..self.len).map(|i| f(self.coords(i))).collect()
    }

    pub fn integrate(&self, f: &[T]) -> T {
        let mut s = T::zero();
        for &v in f {
            s += v;
        }
        s * self.cell_volume
    }

    pub fn mean(&self, f: &[T]) -> T {
        self.integrate(f) / self.total_volume()
    }

    fn gather(&self, plan: &AxisPlan<T>, f: impl Fn(usize) -> Complex<T>) -> Vec<Complex<T>> {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.len];
        for i in 0..self.len {
            buf[plan.perm[i] as usize] = f(i);
        }
        buf
    }

    /// Spectral derivative `∂f/∂x_mu`; zero along inactive axes.
    pub fn deriv(&self, f: &[T], mu: usize) -> ScalarField<T> {
        let Some(plan) = &self.axes[mu] else {
            return vec![T::zero(); self.len];
        };
        let mut buf = self.gather(plan, |i| Complex::new(f[i], T::zero()));
        self.spectral_multiply_axis(plan, &mut buf, |j| Complex::new(T::zero(), plan.ik[j]));
        let norm = T::one() / from_usize(plan.n);
        (0..self.len).map(|i| buf[plan.perm[i] as usize].re * norm).collect()
    }

    pub fn deriv_complex(&self, f: &[Complex<T>], mu: usize) -> Vec<Complex<T>> {
        let Some(plan) = &self.axes[mu] else {
            return vec![Complex::new(T::zero(), T::zero()); self.len];
        };
        let mut buf = self.gather(plan, |i| f[i]);
        self.spectral_multiply_axis(plan, &mut buf, |j| Complex::new(T::zero(), plan.ik[j]));
        let norm = T::one() / from_usize(plan.n);
        (0..self.len).map(|i| buf[plan.perm[i] as usize] * norm).collect()
    }

    fn spectral_multiply_axis(
        &self,
        plan: &AxisPlan<T>,
        buf: &mut [Complex<T>],
        mult: impl Fn(usize) -> Complex<T>,
    ) {
        plan.forward.process(buf);
        for (p, v) in buf.iter_mut().enumerate() {
            *v = *v * mult(p % plan.n);
        }
        plan.inverse.process(buf);
    }

    /// Full forward transform over the active axes (unnormalized).
    pub fn fft_forward(&self, data: &mut Vec<Complex<T>>) {
        self.fft_all(data, true);
    }

    /// Inverse of [`Grid::fft_forward`], including the `1/len` normalization.
    pub fn fft_inverse(&self, data: &mut Vec<Complex<T>>) {
        self.fft_all(data, false);
        let norm = T::one() / from_usize(self.len);
        for v in data.iter_mut() {
            *v = *v * norm;
        }
    }

    fn fft_all(&self, data: &mut Vec<Complex<T>>, forward: bool) {
        for plan in self.axes.iter().flatten() {
            let mut buf = self.gather(plan, |i| data[i]);
            if forward {
                plan.forward.process(&mut buf);
            } else {
                plan.inverse.process(&mut buf);
            }
            for i in 0..self.len {
                data[i] = buf[plan.perm[i] as usize];
            }
        }
    }

    /// Signed integer wave vector of spectral index `i` (after [`Grid::fft_forward`]).
    pub fn wave_vector(&self, i: usize) -> WaveVector {
        let m = self.multi_index(i);
        let mut k = [0i64; 4];
        for mu in 0..4 {
            if let Some(plan) = &self.axes[mu] {
                k[mu] = plan.freq[m[mu]];
            }
        }
        k
    }

    /// `|2πk/L|²` of spectral index `i`.
    /// Symbol of `−Δ` for the spectral derivative: Nyquist components count as 0.
    pub fn wave_norm2(&self, i: usize) -> T {
        let k = self.wave_vector(i);
        let mut s = T::zero();
        for mu in 0..4 {
            if 2 * k[mu].unsigned_abs() as usize == self.n[mu] {
                continue;
            }
            let w = two_pi::<T>() * T::lit(k[mu] as f64 / self.spec.period[mu]);
            s += w * w;
        }
        s
    }

    /// Applies the Fourier multiplier `m(wave_norm2)` to a real field.
    pub fn apply_multiplier(&self, f: &[T], m: impl Fn(T) -> T) -> ScalarField<T> {
        let mut data: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft_forward(&mut data);
        for (i, v) in data.iter_mut().enumerate() {
            *v = *v * m(self.wave_norm2(i));
        }
        self.fft_inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Keeps the Fourier modes with Euclidean `|k| <= cutoff` (integer wave vectors).
    pub fn band_project(&self, f: &[T], cutoff: usize) -> ScalarField<T> {
        let c2 = (cutoff * cutoff) as i64;
        let mut data: Vec<Complex<T>> = f.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft_forward(&mut data);
        for (i, v) in data.iter_mut().enumerate() {
            let k = self.wave_vector(i);
            let nyquist = (0..4).any(|mu| self.is_active(mu) && 2 * k[mu].unsigned_abs() as usize == self.n[mu]);
            if nyquist || k.iter().map(|x| x * x).sum::<i64>() > c2 {
                *v = Complex::new(T::zero(), T::zero());
            }
        }
        self.fft_inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Wave vectors with `0 < |k| <= cutoff` on the active axes, one per `±k` pair
    /// (first nonzero entry positive), in lexicographic order.
    pub fn half_space_modes(&self, cutoff: usize) -> Vec<WaveVector> {
        let c = cutoff as i64;
        let mut out = Vec::new();
        let range = |mu: usize| if self.is_active(mu) { -c..=c } else { 0..=0 };
        for k0 in range(0) {
            for k1 in range(1) {
                for k2 in range(2) {
                    for k3 in range(3) {
                        let k = [k0, k1, k2, k3];
                        let n2: i64 = k.iter().map(|x| x * x).sum();
                        if n2 == 0 || n2 > c * c {
                            continue;
                        }
                        let first = k.iter().find(|x| **x != 0).copied().unwrap_or(0);
                        let resolvable = (0..4).all(|mu| !self.is_active(mu) || 2 * (k[mu].unsigned_abs() as usize) < self.n[mu]);
                        if first > 0 && resolvable {
                            out.push(k);
                        }
                    }
                }
            }
        }
        out
    }

    /// Phase `2π k·x / L` at node `i`.
    pub fn phase(&self, k: &WaveVector, i: usize) -> T {
        let x = self.coords(i);
        let mut s = T::zero();
        for mu in 0..4 {
            if k[mu] != 0 {
                s += T::lit(k[mu] as f64 / self.spec.period[mu]) * x[mu];
            }
        }
        two_pi::<T>() * s
    }

    pub fn cos_mode(&self, k: &WaveVector) -> ScalarField<T> {
        (0..self.len).map(|i| self.phase(k, i).cos()).collect()
    }

    pub fn sin_mode(&self, k: &WaveVector) -> ScalarField<T> {
        (0..self.len).map(|i| self.phase(k, i).sin()).collect()
    }

    /// Random real field with modes `0 < |k| <= cutoff`, coefficients uniform in
    /// `[-1, 1]` and decaying like `1/(1+|k|²)`; mean zero.
    pub fn random_band_limited<R: Rng>(&self, rng: &mut R, cutoff: usize) -> ScalarField<T> {
        // a cos + b sin = Re((a − ib) e^{iθ}), split between ±k
        let half = T::lit(0.5) * from_usize::<T>(self.len);
        let mut data = vec![Complex::new(T::zero(), T::zero()); self.len];
        for k in self.half_space_modes(cutoff) {
            let n2: i64 = k.iter().map(|x| x * x).sum();
            let damp = 1.0 / (1.0 + n2 as f64);
            let a = T::lit(rng.gen_range(-1.0..1.0) * damp);
            let b = T::lit(rng.gen_range(-1.0..1.0) * damp);
            let c = Complex::new(a, -b) * half;
            data[self.spectral_index(&k)] += c;
            data[self.spectral_index(&k.map(|x| -x))] += c.conj();
        }
        self.fft_inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Spectral index of a resolvable wave vector (inverse of [`Grid::wave_vector`]).
    pub fn spectral_index(&self, k: &WaveVector) -> usize {
        let m: [usize; 4] = std::array::from_fn(|mu| if self.is_active(mu) { k[mu].rem_euclid(self.n[mu] as i64) as usize } else { 0 });
        self.flat_index(m)
    }
}

/// Elementwise helpers on scalar fields.
pub mod ops {
    use crate::scalar::Real;

    pub fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(x, y)| *x + *y).collect()
    }

    pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(x, y)| *x - *y).collect()
    }

    pub fn mul<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(x, y)| *x * *y).collect()
    }

    pub fn scale<T: Real>(a: &[T], s: T) -> Vec<T> {
        a.iter().map(|x| *x * s).collect()
    }

    pub fn axpy<T: Real>(y: &mut [T], s: T, x: &[T]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += s * *xi;
        }
    }

    pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
        a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
    }

    pub fn max_abs<T: Real>(a: &[T]) -> T {
        a.iter().fold(T::zero(), |m, x| m.max(crate::scalar::abs(*x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_field_matches_mode_sum() {
        for spec in [GridSpec::cube(8), GridSpec::z_invariant(8)] {
            let g = Grid::<f64>::new(&spec).unwrap();
            let f = g.random_band_limited(&mut ChaCha8Rng::seed_from_u64(3), 3);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut direct = vec![0.0; g.len()];
            for k in g.half_space_modes(3) {
                let damp = 1.0 / (1.0 + k.iter().map(|x| x * x).sum::<i64>() as f64);
                let a = rng.gen_range(-1.0..1.0) * damp;
                let b = rng.gen_range(-1.0..1.0) * damp;
                for (i, v) in direct.iter_mut().enumerate() {
                    let ph = g.phase(&k, i);
                    *v += a * ph.cos() + b * ph.sin();
                }
            }
            let err = f.iter().zip(&direct).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err < 1e-12, "{err}");
            for i in (0..g.len()).step_by(37) {
                assert_eq!(g.spectral_index(&g.wave_vector(i)), i);
            }
        }
    }
}
