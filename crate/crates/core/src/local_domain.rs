//! Weighted estimates for `W̃*_φ` and `d⁻_J` on a coordinate box of a chart,
//! evaluated term by term with exact second-order jets and Gauss quadrature.

use nalgebra::Matrix4;
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{self, composite_rule, Jet, Jet1};
use crate::scalar::{cabs2, sqrt, Real};

type C<T> = Complex<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// `ℂ²` with `J∂t = ∂x`, `J∂y = ∂z`.
    Flat,
    /// Nilmanifold chart: orthonormal frame `∂t, ∂x, ∂y + x∂z, ∂z`.
    KodairaThurston,
}

impl Chart {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "kodaira_thurston" => Ok(Self::KodairaThurston),
            other => Err(Error::InvalidParameter(format!("unknown chart `{other}`"))),
        }
    }

    /// Orthonormal real frame `E_a = Σ_μ A[a][μ] ∂_μ` with `J E₀ = E₁`, `J E₂ = E₃`.
    pub fn real_frame<T: Real>(&self, x: [T; 4]) -> [[Jet1<T>; 4]; 4] {
        let mut a = [[Jet1::constant(T::zero()); 4]; 4];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = Jet1::constant(T::one());
        }
        if *self == Chart::KodairaThurston {
            a[2][3] = jet::coordinate(x, 1).first();
        }
        a
    }
}

/// Complex vector field: coefficient jets in the coordinate basis.
pub type VField<T> = [Jet1<C<T>>; 4];

/// Unitary frame data at one point.
#[derive(Clone, Debug)]
pub struct FramePoint<T: Real> {
    pub e: [VField<T>; 2],
    pub e_bar: [VField<T>; 2],
    /// Rows `θ¹, θ², θ̄¹, θ̄²` in coordinate components.
    pub coframe: [[C<T>; 4]; 4],
}

fn real_to_complex<T: Real>(j: &Jet1<T>) -> Jet1<C<T>> {
    j.map(|v| C::new(v, T::zero()))
}

impl<T: Real> FramePoint<T> {
    pub fn at(chart: Chart, x: [T; 4]) -> Result<Self> {
        let a = chart.real_frame(x);
        let s = T::one() / sqrt(T::lit(2.0));
        let i = C::new(T::zero(), T::one());
        let mk = |j: usize, sign: T| -> VField<T> {
            std::array::from_fn(|mu| {
                let re = real_to_complex(&a[2 * j][mu]);
                let im = real_to_complex(&a[2 * j + 1][mu]).map(|v| v * i * sign);
                re.add(&im).map(|v| v * s)
            })
        };
        let e = [mk(0, -T::one()), mk(1, -T::one())];
        let e_bar = [mk(0, T::one()), mk(1, T::one())];
        let cols = [&e[0], &e[1], &e_bar[0], &e_bar[1]];
        let m = Matrix4::<C<T>>::from_fn(|mu, c| cols[c][mu].v);
        let inv = m.try_inverse().ok_or(Error::SingularFrame { point: 0 })?;
        let coframe = std::array::from_fn(|r| std::array::from_fn(|mu| inv[(r, mu)]));
        Ok(Self { e, e_bar, coframe })
    }

    /// Coefficients of a coordinate vector in `e₁, e₂, ē₁, ē₂`.
    pub fn decompose(&self, v: [C<T>; 4]) -> [C<T>; 4] {
        std::array::from_fn(|r| (0..4).fold(C::new(T::zero(), T::zero()), |s, mu| s + self.coframe[r][mu] * v[mu]))
    }
}

/// `X f` as a first-order jet.
pub fn apply2<T: Real>(x: &VField<T>, f: &Jet<C<T>>) -> Jet1<C<T>> {
    let z = C::new(T::zero(), T::zero());
    let mut out = Jet1 { v: z, g: [z; 4] };
    for mu in 0..4 {
        out.v += x[mu].v * f.g[mu];
        for nu in 0..4 {
            out.g[nu] += x[mu].g[nu] * f.g[mu] + x[mu].v * f.h[mu][nu];
        }
    }
    out
}

/// `X f` (value only).
pub fn apply1<T: Real>(x: &VField<T>, f: &Jet1<C<T>>) -> C<T> {
    (0..4).fold(C::new(T::zero(), T::zero()), |s, mu| s + x[mu].v * f.g[mu])
}

/// `[X, Y]` coordinate components.
pub fn bracket<T: Real>(x: &VField<T>, y: &VField<T>) -> [C<T>; 4] {
    std::array::from_fn(|mu| (0..4).fold(C::new(T::zero(), T::zero()), |s, nu| s + x[nu].v * y[mu].g[nu] - y[nu].v * x[mu].g[nu]))
}

/// Coordinate divergence `Σ_μ ∂_μ X^μ`.
pub fn divergence<T: Real>(x: &VField<T>) -> C<T> {
    (0..4).fold(C::new(T::zero(), T::zero()), |s, mu| s + x[mu].g[mu])
}

/// Bracket coefficients of the unitary frame at a point.
#[derive(Clone, Copy, Debug)]
pub struct LocalStructure<T> {
    /// `c[i][j] = ([e_i, ē_j]` in `e₁, e₂, ē₁, ē₂)`, i.e. `C^r_{ij̄}` then `C^{r̄}_{ij̄}`.
    pub c: [[[C<T>; 4]; 2]; 2],
    /// `[ē₁, ē₂]` in `e₁, e₂, ē₁, ē₂`.
    pub b: [C<T>; 4],
    /// `Σ_k C^{j̄}_{kk̄}`.
    pub trace_bar: [C<T>; 2],
}

pub fn local_structure<T: Real>(fp: &FramePoint<T>) -> LocalStructure<T> {
    let c = std::array::from_fn(|i| std::array::from_fn(|j| fp.decompose(bracket(&fp.e[i], &fp.e_bar[j]))));
    let b = fp.decompose(bracket(&fp.e_bar[0], &fp.e_bar[1]));
    let trace_bar = std::array::from_fn(|j| c[0][0][2 + j] + c[1][1][2 + j]);
    LocalStructure { c, b, trace_bar }
}

/// `Σ_k C^{j̄}_{kk̄}` as first-order jets (gradient by central differences).
fn trace_bar_jets<T: Real>(chart: Chart, x: [T; 4], st: &LocalStructure<T>) -> Result<[Jet1<C<T>>; 2]> {
    let h = T::lit(1e-4);
    let mut out = [Jet1::constant(st.trace_bar[0]), Jet1::constant(st.trace_bar[1])];
    for mu in 0..4 {
        let mut xp = x;
        let mut xm = x;
        xp[mu] += h;
        xm[mu] -= h;
        let p = local_structure(&FramePoint::at(chart, xp)?).trace_bar;
        let m = local_structure(&FramePoint::at(chart, xm)?).trace_bar;
        for j in 0..2 {
            out[j].g[mu] = (p[j] - m[j]) / (h + h);
        }
    }
    Ok(out)
}

/// `φ = scale · |x − center|²`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Weight {
    pub scale: f64,
    pub center: [f64; 4],
}

impl Weight {
    pub fn jet<T: Real>(&self, x: [T; 4]) -> Jet<T> {
        let mut out = Jet::constant(T::zero());
        let s = T::lit(self.scale);
        for mu in 0..4 {
            let d = x[mu] - T::lit(self.center[mu]);
            out.v += s * d * d;
            out.g[mu] = T::lit(2.0) * s * d;
            out.h[mu][mu] = T::lit(2.0) * s;
        }
        out
    }
}

/// `exp(i k·x)` with coefficients for `u₁, u₂`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Mode {
    pub k: [f64; 4],
    pub c: [[f64; 2]; 2],
}

/// Smooth cutoff `(1 − |x − center|²/radius²)^power` on a Euclidean ball.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BallCutoff {
    pub center: [f64; 4],
    pub radius: f64,
    pub power: i32,
}

impl BallCutoff {
    pub fn jet<T: Real>(&self, x: [T; 4]) -> Jet<T> {
        let r2 = T::lit(self.radius * self.radius);
        let mut s = Jet::constant(T::one());
        for mu in 0..4 {
            let d = x[mu] - T::lit(self.center[mu]);
            s.v -= d * d / r2;
            s.g[mu] = -T::lit(2.0) * d / r2;
            s.h[mu][mu] = -T::lit(2.0) / r2;
        }
        if s.v <= T::zero() {
            return Jet::constant(T::zero());
        }
        let m = self.power;
        let mt = T::lit(m as f64);
        s.compose(s.v.powi(m), mt * s.v.powi(m - 1), mt * (mt - T::one()) * s.v.powi(m - 2))
    }
}

/// Components `u₁, u₂` of `u = u₁θ̄¹ + u₂θ̄²`, the `(0,1)` part of `a = u + ū`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedField {
    pub modes: Vec<Mode>,
    pub cutoff: Option<BallCutoff>,
}

impl WeightedField {
    pub fn zero() -> Self {
        Self { modes: Vec::new(), cutoff: None }
    }

    /// `n` random modes with `|k_μ| <= kmax` and coefficients in the unit square.
    pub fn random<R: Rng>(rng: &mut R, n: usize, kmax: f64, cutoff: Option<BallCutoff>) -> Self {
        let modes = (0..n)
            .map(|_| Mode {
                k: std::array::from_fn(|_| rng.gen_range(-kmax..=kmax)),
                c: std::array::from_fn(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]),
            })
            .collect();
        Self { modes, cutoff }
    }

    /// The field with conjugated components.
    pub fn conjugate(&self) -> Self {
        let modes = self.modes.iter().map(|m| Mode { k: m.k.map(|v| -v), c: m.c.map(|[re, im]| [re, -im]) }).collect();
        Self { modes, cutoff: self.cutoff }
    }

    pub fn jets<T: Real>(&self, x: [T; 4]) -> [Jet<C<T>>; 2] {
        let z = Jet::constant(C::new(T::zero(), T::zero()));
        let mut u = [z, z];
        for m in &self.modes {
            let w = jet::plane_wave(x, m.k.map(T::lit));
            for j in 0..2 {
                u[j] = u[j] + w.scale(C::new(T::lit(m.c[j][0]), T::lit(m.c[j][1])));
            }
        }
        if let Some(b) = &self.cutoff {
            let bj = jet::to_complex(&b.jet(x));
            u = u.map(|uj| uj.mul(&bj));
        }
        u
    }
}

/// Coordinate box `[lo, hi]` with a composite Gauss rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxDomain {
    pub chart: Chart,
    pub lo: [f64; 4],
    pub hi: [f64; 4],
    pub cells: usize,
    pub order: usize,
    pub weight: Weight,
}

/// Quadrature node with weight; `normal` is set on boundary nodes.
#[derive(Clone, Copy, Debug)]
pub struct Node<T> {
    pub x: [T; 4],
    pub w: T,
    pub normal: Option<[T; 4]>,
}

impl BoxDomain {
    pub fn new(chart: Chart, lo: [f64; 4], hi: [f64; 4], cells: usize, order: usize, weight: Weight) -> Result<Self> {
        if (0..4).any(|m| !(hi[m] > lo[m])) {
            return Err(Error::InvalidParameter("box needs lo < hi on every axis".into()));
        }
        if cells == 0 || order == 0 {
            return Err(Error::InvalidParameter("quadrature needs at least one cell and one node".into()));
        }
        Ok(Self { chart, lo, hi, cells, order, weight })
    }

    /// Centered cube of half-width `h` with `φ = |x|²` scaled until the Levi form
    /// exceeds 0.1.
    pub fn centered(chart: Chart, h: f64, cells: usize, order: usize) -> Result<Self> {
        let mut d = Self::new(chart, [-h; 4], [h; 4], cells, order, Weight { scale: 1.0, center: [0.0; 4] })?;
        for _ in 0..12 {
            if d.psh_margin::<f64>()? > 0.1 {
                return Ok(d);
            }
            d.weight.scale *= 2.0;
        }
        Err(Error::Precondition("weight is not strictly J-plurisubharmonic on the box".into()))
    }

    pub fn refined(&self, cells: usize, order: usize) -> Self {
        Self { cells, order, ..self.clone() }
    }

    pub fn volume(&self) -> f64 {
        (0..4).map(|m| self.hi[m] - self.lo[m]).product()
    }

    /// `r = max_μ max(lo_μ − x_μ, x_μ − hi_μ)`: negative inside, zero on faces.
    pub fn defining_function<T: Real>(&self, x: [T; 4]) -> T {
        (0..4).fold(T::lit(-f64::MAX), |r, m| r.max(T::lit(self.lo[m]) - x[m]).max(x[m] - T::lit(self.hi[m])))
    }

    fn rules<T: Real>(&self) -> Vec<(Vec<T>, Vec<T>)> {
        (0..4).map(|m| composite_rule(T::lit(self.lo[m]), T::lit(self.hi[m]), self.cells, self.order)).collect()
    }

    pub fn interior_nodes<T: Real>(&self) -> Vec<Node<T>> {
        let r = self.rules::<T>();
        let n = r[0].0.len();
        let mut out = Vec::with_capacity(n.pow(4));
        for i0 in 0..n {
            for i1 in 0..n {
                for i2 in 0..n {
                    for i3 in 0..n {
                        let idx = [i0, i1, i2, i3];
                        let x = std::array::from_fn(|m| r[m].0[idx[m]]);
                        let w = (0..4).fold(T::one(), |s, m| s * r[m].1[idx[m]]);
                        out.push(Node { x, w, normal: None });
                    }
                }
            }
        }
        out
    }

    /// Face nodes with outward unit normals (`dr` on the face).
    pub fn boundary_nodes<T: Real>(&self) -> Vec<Node<T>> {
        let r = self.rules::<T>();
        let n = r[0].0.len();
        let mut out = Vec::new();
        for fixed in 0..4 {
            let others: Vec<usize> = (0..4).filter(|m| *m != fixed).collect();
            for (side, val) in [(-1.0, self.lo[fixed]), (1.0, self.hi[fixed])] {
                let mut normal = [T::zero(); 4];
                normal[fixed] = T::lit(side);
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            let idx = [a, b, c];
                            let mut x = [T::lit(val); 4];
                            let mut w = T::one();
                            for (k, m) in others.iter().enumerate() {
                                x[*m] = r[*m].0[idx[k]];
                                w *= r[*m].1[idx[k]];
                            }
                            out.push(Node { x, w, normal: Some(normal) });
                        }
                    }
                }
            }
        }
        out
    }

    /// `max |dr| − 1` over boundary nodes (one-sided derivative along the normal).
    pub fn dr_defect<T: Real>(&self) -> f64 {
        let h = T::lit(1e-7);
        self.boundary_nodes::<T>()
            .iter()
            .map(|nd| {
                let n = nd.normal.unwrap();
                let mut xin = nd.x;
                for m in 0..4 {
                    xin[m] -= n[m] * h;
                }
                let slope = (self.defining_function(nd.x) - self.defining_function(xin)) / h;
                (slope.to_f64() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Minimum eigenvalue over interior nodes of the Hermitian matrix
    /// `e_i ē_j φ − Σ_l C^{l̄}_{ij̄} ē_l φ`.
    pub fn psh_margin<T: Real>(&self) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for nd in self.interior_nodes::<T>() {
            let fp = FramePoint::at(self.chart, nd.x)?;
            let st = local_structure(&fp);
            let m = levi_matrix(&fp, &st, &jet::to_complex(&self.weight.jet(nd.x)));
            worst = worst.min(hermitian_min_eig(m).to_f64());
        }
        Ok(worst)
    }
}

/// `H_{ij̄} = e_i ē_j φ − Σ_l C^{l̄}_{ij̄} ē_l φ`.
pub fn levi_matrix<T: Real>(fp: &FramePoint<T>, st: &LocalStructure<T>, phi: &Jet<C<T>>) -> [[C<T>; 2]; 2] {
    let ebphi: [Jet1<C<T>>; 2] = std::array::from_fn(|l| apply2(&fp.e_bar[l], phi));
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut h = apply1(&fp.e[i], &ebphi[j]);
            for l in 0..2 {
                h -= st.c[i][j][2 + l] * ebphi[l].v;
            }
            h
        })
    })
}

fn hermitian_min_eig<T: Real>(m: [[C<T>; 2]; 2]) -> T {
    let a = m[0][0].re;
    let d = m[1][1].re;
    let b2 = cabs2((m[0][1] + m[1][0].conj()) * T::lit(0.5));
    (a + d) / T::lit(2.0) - sqrt(((a - d) / T::lit(2.0)).powi(2) + b2)
}

/// Both sides of `∫_Ω L f = ∫_{∂Ω} (L r) f − ∫_Ω div(L) f`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DivLemma {
    pub interior: f64,
    pub boundary: f64,
    pub divergence: f64,
    pub residual: f64,
}

/// `L = Σ_μ coeff(x)[μ] ∂_μ` (real coefficient jets), `f` a real first-order jet.
pub fn div_lemma_check<T: Real>(
    dom: &BoxDomain,
    coeff: impl Fn([T; 4]) -> [Jet1<T>; 4],
    f: impl Fn([T; 4]) -> Jet1<T>,
) -> DivLemma {
    let mut lhs = T::zero();
    let mut div = T::zero();
    for nd in dom.interior_nodes::<T>() {
        let l = coeff(nd.x);
        let fx = f(nd.x);
        for mu in 0..4 {
            lhs += nd.w * l[mu].v * fx.g[mu];
            div += nd.w * l[mu].g[mu] * fx.v;
        }
    }
    let mut bdy = T::zero();
    for nd in dom.boundary_nodes::<T>() {
        let l = coeff(nd.x);
        let n = nd.normal.unwrap();
        let lr = (0..4).fold(T::zero(), |s, mu| s + l[mu].v * n[mu]);
        bdy += nd.w * lr * f(nd.x).v;
    }
    let (lhs, bdy, div) = (lhs.to_f64(), bdy.to_f64(), div.to_f64());
    DivLemma { interior: lhs, boundary: bdy, divergence: div, residual: lhs - (bdy - div) }
}

/// Least-squares slope of `log|residual|` against `log h` over refinements.
pub fn convergence_order(cells: &[usize], residuals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = cells
        .iter()
        .zip(residuals)
        .filter(|(_, r)| r.abs() > 0.0)
        .map(|(c, r)| ((1.0 / *c as f64).ln(), r.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `e^{φ} Λ_F d⁺_J(e^{−φ} a)` and `|d⁻_J a|²` at a point, computed in the real
/// orthonormal frame from `a(E_{2j}) = √2 Re u_j`, `a(E_{2j+1}) = √2 Im u_j`.
fn form_route<T: Real>(chart: Chart, x: [T; 4], u: &[Jet<C<T>>; 2], phi: &Jet<T>) -> Result<(T, T)> {
    let a = chart.real_frame(x);
    let m = Matrix4::<T>::from_fn(|r, c| a[r][c].v);
    let minv = m.try_inverse().ok_or(Error::SingularFrame { point: 0 })?;
    let r2 = sqrt(T::lit(2.0));
    let alpha: [Jet1<T>; 4] = std::array::from_fn(|b| {
        let uj = u[b / 2].first();
        if b % 2 == 0 {
            uj.map(|z| z.re * r2)
        } else {
            uj.map(|z| z.im * r2)
        }
    });
    let ea = |k: usize, f: &[T; 4]| (0..4).fold(T::zero(), |s, mu| s + a[k][mu].v * f[mu]);
    let kappa = |p: usize, q: usize| -> [T; 4] {
        let v: [T; 4] = std::array::from_fn(|mu| (0..4).fold(T::zero(), |s, nu| s + a[p][nu].v * a[q][mu].g[nu] - a[q][nu].v * a[p][mu].g[nu]));
        std::array::from_fn(|c| (0..4).fold(T::zero(), |s, mu| s + minv[(mu, c)] * v[mu]))
    };
    let mut da = [[T::zero(); 4]; 4];
    let mut beta = [[T::zero(); 4]; 4];
    for p in 0..4 {
        for q in 0..4 {
            if p == q {
                continue;
            }
            let k = kappa(p, q);
            let v = ea(p, &alpha[q].g) - ea(q, &alpha[p].g) - (0..4).fold(T::zero(), |s, c| s + alpha[c].v * k[c]);
            da[p][q] = v;
            beta[p][q] = v - (ea(p, &phi.g) * alpha[q].v - ea(q, &phi.g) * alpha[p].v);
        }
    }
    // J E₀ = E₁, J E₂ = E₃
    let mut jm = [[T::zero(); 4]; 4];
    jm[1][0] = T::one();
    jm[0][1] = -T::one();
    jm[3][2] = T::one();
    jm[2][3] = -T::one();
    let jact = |b: &[[T; 4]; 4]| -> [[T; 4]; 4] {
        std::array::from_fn(|p| {
            std::array::from_fn(|q| {
                let mut s = T::zero();
                for c in 0..4 {
                    for d in 0..4 {
                        s += jm[c][p] * jm[d][q] * b[c][d];
                    }
                }
                s
            })
        })
    };
    let jb = jact(&beta);
    let jda = jact(&da);
    let half = T::lit(0.5);
    let lambda = half * (beta[0][1] + jb[0][1]) + half * (beta[2][3] + jb[2][3]);
    let mut dm2 = T::zero();
    for p in 0..4 {
        for q in (p + 1)..4 {
            let v = half * (da[p][q] - jda[p][q]);
            dm2 += v * v;
        }
    }
    Ok((lambda, dm2))
}

/// Pointwise integrands at one node.
#[derive(Clone, Copy, Debug, Default)]
struct Integrands {
    form_wstar: f64,
    exp_wstar: f64,
    lhs_wstar: f64,
    lhs_dminus: f64,
    eq_wstar: f64,
    eq_dminus: f64,
    printed_sum_delta: f64,
    printed_delta_sq: f64,
    printed_dminus: f64,
    t1: f64,
    t2: f64,
    t2_levi: f64,
    t2_first: f64,
    t4: f64,
    ibp_b: f64,
    first_order_magnitude: f64,
    /// `e^{−φ}`
    weight: f64,
}

struct Pointwise<T: Real> {
    fp: FramePoint<T>,
    st: LocalStructure<T>,
    u: [Jet<C<T>>; 2],
    phi: Jet<C<T>>,
    eu: [[Jet1<C<T>>; 2]; 2],
    ebu: [[Jet1<C<T>>; 2]; 2],
    ephi: [Jet1<C<T>>; 2],
    /// Printed `δ_i u_j` (with `+Σ_k C^{ī}_{kk̄}`) as first-order jets.
    delta: [[Jet1<C<T>>; 2]; 2],
    tb: [Jet1<C<T>>; 2],
}

impl<T: Real> Pointwise<T> {
    fn new(dom: &BoxDomain, field: &WeightedField, x: [T; 4]) -> Result<Self> {
        let fp = FramePoint::at(dom.chart, x)?;
        let st = local_structure(&fp);
        let tb = trace_bar_jets(dom.chart, x, &st)?;
        let u = field.jets(x);
        let phi = jet::to_complex(&dom.weight.jet(x));
        let eu = std::array::from_fn(|k| std::array::from_fn(|j| apply2(&fp.e[k], &u[j])));
        let ebu = std::array::from_fn(|k| std::array::from_fn(|j| apply2(&fp.e_bar[k], &u[j])));
        let ephi: [Jet1<C<T>>; 2] = std::array::from_fn(|k| apply2(&fp.e[k], &phi));
        let delta = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let uj = u[j].first();
                eu[i][j].sub(&ephi[i].mul(&uj)).add(&tb[i].mul(&uj))
            })
        });
        Ok(Self { fp, st, u, phi, eu, ebu, ephi, delta, tb })
    }

    /// `ē₁u₂ − ē₂u₁ − Σ_j(u_j θ̄^j + ū_j θ^j)([ē₁, ē₂])`.
    fn dminus_coefficient(&self) -> C<T> {
        let mut c = self.ebu[0][1].v - self.ebu[1][0].v;
        for j in 0..2 {
            c -= self.u[j].v * self.st.b[2 + j] + self.u[j].v.conj() * self.st.b[j];
        }
        c
    }

    fn integrands(&self, dom: &BoxDomain, x: [T; 4]) -> Result<Integrands> {
        let z = C::new(T::zero(), T::zero());
        let st = &self.st;
        let fp = &self.fp;
        let (form_w, dm2) = form_route(dom.chart, x, &self.u, &dom.weight.jet(x))?;
        // form-derived expansion carries −Σ_k C^{j̄}_{kk̄}
        let mut xt = z;
        let mut xp = z;
        for j in 0..2 {
            let core = self.eu[j][j].v - self.ephi[j].v * self.u[j].v;
            xt += core - st.trace_bar[j] * self.u[j].v;
            xp += self.delta[j][j].v;
        }
        let exp_w = T::lit(2.0) * xt.im;
        let c = self.dminus_coefficient();
        let nbar: [C<T>; 2] = std::array::from_fn(|t| (-st.b[t]).conj());
        let cp = self.ebu[0][1].v - self.ebu[1][0].v - (nbar[0] * self.u[0].v - nbar[1] * self.u[1].v);
        let mut t1 = T::zero();
        let mut delta_sq = T::zero();
        let mut t2 = z;
        let mut levi = z;
        let mut first = z;
        let mut t4 = z;
        let h = levi_matrix(fp, st, &self.phi);
        for i in 0..2 {
            for j in 0..2 {
                t1 += cabs2(self.ebu[i][j].v);
                delta_sq += cabs2(self.delta[i][j].v);
                let uj_bar = self.u[j].v.conj();
                // δ_i(ē_j u_i) − ē_j(δ_i u_i)
                let e_ebu = apply1(&fp.e[i], &self.ebu[j][i]);
                let d_eb = e_ebu + (self.tb[i].v - self.ephi[i].v) * self.ebu[j][i].v;
                let eb_d = apply1(&fp.e_bar[j], &self.delta[i][i]);
                t2 += (d_eb - eb_d) * uj_bar;
                levi += h[i][j] * self.u[i].v * uj_bar;
                let mut op = z;
                for r in 0..2 {
                    op += st.c[i][j][r] * self.eu[r][i].v + st.c[i][j][2 + r] * self.ebu[r][i].v;
                }
                first += op * uj_bar;
                let div_i = divergence(&fp.e_bar[i]);
                let div_j = divergence(&fp.e_bar[j]);
                t4 += div_i * self.u[j].v * self.ebu[j][i].v.conj() - div_j * self.delta[i][i].v * uj_bar;
            }
        }
        let wphi = (-dom.weight.jet(x).v).exp();
        Ok(Integrands {
            form_wstar: form_w.to_f64(),
            exp_wstar: exp_w.to_f64(),
            lhs_wstar: (form_w * form_w).to_f64(),
            lhs_dminus: dm2.to_f64(),
            eq_wstar: (exp_w * exp_w).to_f64(),
            eq_dminus: (T::lit(2.0) * cabs2(c)).to_f64(),
            printed_sum_delta: cabs2(xp).to_f64(),
            printed_delta_sq: delta_sq.to_f64(),
            printed_dminus: cabs2(cp).to_f64(),
            t1: t1.to_f64(),
            t2: t2.re.to_f64(),
            t2_levi: levi.re.to_f64(),
            t2_first: first.re.to_f64(),
            t4: t4.re.to_f64(),
            ibp_b: cabs2(self.ebu[0][1].v - self.ebu[1][0].v).to_f64(),
            first_order_magnitude: sqrt(cabs2(first)).to_f64(),
            weight: wphi.to_f64(),
        })
    }

    /// Boundary integrands `(reading as printed, reading from the integration by parts)`.
    fn boundary(&self, normal: [T; 4]) -> (f64, f64) {
        let z = C::new(T::zero(), T::zero());
        let ebr: [C<T>; 2] = std::array::from_fn(|i| (0..4).fold(z, |s, mu| s + self.fp.e_bar[i][mu].v * normal[mu]));
        let mut a = z;
        let mut b = z;
        for i in 0..2 {
            for j in 0..2 {
                let ui_bar = self.u[i].v.conj();
                let uj_bar = self.u[j].v.conj();
                a += ebr[i] * self.delta[i][j].v * ui_bar - ebr[i] * uj_bar * self.ebu[j][i].v;
                b += ebr[j] * self.delta[i][i].v * uj_bar - ebr[i] * self.u[j].v * self.ebu[j][i].v.conj();
            }
        }
        (a.re.to_f64(), b.re.to_f64())
    }
}

/// `W̃*_φ a` at the interior nodes by the form route, with the frame expansion
/// `2 Im Σ_j δ̃_j u_j` alongside.
#[derive(Clone, Debug, Serialize)]
pub struct WeightedAdjoint {
    pub nodes: Vec<[f64; 4]>,
    pub values: Vec<f64>,
    pub expansion: Vec<f64>,
    pub max_deviation: f64,
}

pub fn weighted_adjoint_phi(dom: &BoxDomain, field: &WeightedField) -> Result<WeightedAdjoint> {
    let mut out = WeightedAdjoint { nodes: Vec::new(), values: Vec::new(), expansion: Vec::new(), max_deviation: 0.0 };
    for nd in dom.interior_nodes::<f64>() {
        let ig = Pointwise::new(dom, field, nd.x)?.integrands(dom, nd.x)?;
        out.max_deviation = out.max_deviation.max((ig.form_wstar - ig.exp_wstar).abs());
        out.nodes.push(nd.x);
        out.values.push(ig.form_wstar);
        out.expansion.push(ig.exp_wstar);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct TermRow {
    pub name: String,
    pub value: f64,
}

/// Alternative readings of the weighted identity.
#[derive(Clone, Debug, Serialize)]
pub struct PrintedReadings {
    /// `∫ Σ|δ_i u_j|² e^{−φ}`
    pub delta_sq_minus: f64,
    /// `∫ Σ|δ_i u_j|² e^{+φ}`
    pub delta_sq_plus: f64,
    /// `∫ |Σ_j δ_j u_j|² e^{−φ}`
    pub sum_delta: f64,
    /// `∫ |c_p|² e^{−φ}` with `c_p` built from `N̄`.
    pub d_minus: f64,
    /// Weight (`"minus"` or `"plus"`) under which `Σ|δ_i u_j|²` is closer to the left side.
    pub balanced: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalEstimateReport {
    pub chart: Chart,
    pub cells: usize,
    pub order: usize,
    pub interior_nodes: usize,
    pub boundary_nodes: usize,
    pub weight_scale: f64,
    pub psh_margin: f64,
    pub dr_defect: f64,
    pub lhs_w_star: f64,
    pub lhs_d_minus: f64,
    pub lhs: f64,
    pub terms: Vec<TermRow>,
    /// `T1 + T2 + T3 + T4` with the boundary term as printed.
    pub rhs: f64,
    pub inequality_slack: f64,
    pub equality_rhs: f64,
    pub equality_residual: f64,
    pub ibp_lhs: f64,
    pub ibp_rhs: f64,
    pub ibp_residual: f64,
    pub max_expansion_deviation: f64,
    pub max_first_order: f64,
    pub printed: PrintedReadings,
    pub underresolved: bool,
    pub resolution_change: f64,
}

#[derive(Clone, Copy, Default)]
struct Sums {
    ig: Integrands,
    plus: f64,
    t3a: f64,
    t3b: f64,
    dev: f64,
    first_max: f64,
}

fn accumulate(dom: &BoxDomain, field: &WeightedField, interior: &[Node<f64>], boundary: &[Node<f64>]) -> Result<Sums> {
    let mut s = Sums::default();
    for nd in interior {
        let ig = Pointwise::new(dom, field, nd.x)?.integrands(dom, nd.x)?;
        let w = nd.w * ig.weight;
        let a = &mut s.ig;
        a.lhs_wstar += w * ig.lhs_wstar;
        a.lhs_dminus += w * ig.lhs_dminus;
        a.eq_wstar += w * ig.eq_wstar;
        a.eq_dminus += w * ig.eq_dminus;
        a.printed_sum_delta += w * ig.printed_sum_delta;
        a.printed_delta_sq += w * ig.printed_delta_sq;
        a.printed_dminus += w * ig.printed_dminus;
        a.t1 += w * ig.t1;
        a.t2 += w * ig.t2;
        a.t2_levi += w * ig.t2_levi;
        a.t2_first += w * ig.t2_first;
        a.t4 += w * ig.t4;
        a.ibp_b += w * ig.ibp_b;
        s.plus += nd.w * ig.printed_delta_sq / ig.weight;
        s.dev = s.dev.max((ig.form_wstar - ig.exp_wstar).abs());
        s.first_max = s.first_max.max(ig.first_order_magnitude);
    }
    for nd in boundary {
        let p = Pointwise::new(dom, field, nd.x)?;
        let (a, b) = p.boundary(nd.normal.unwrap());
        let w = nd.w * (-dom.weight.jet(nd.x).v).exp();
        s.t3a += w * a;
        s.t3b += w * b;
    }
    Ok(s)
}

fn parallel_sums(dom: &BoxDomain, field: &WeightedField, threads: usize) -> Result<(Sums, usize, usize)> {
    let interior = dom.interior_nodes::<f64>();
    let boundary = dom.boundary_nodes::<f64>();
    let t = threads.max(1);
    let ci = interior.len().div_ceil(t).max(1);
    let cb = boundary.len().div_ceil(t).max(1);
    let parts: Vec<Result<Sums>> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..t)
            .map(|k| {
                let i = &interior[(k * ci).min(interior.len())..((k + 1) * ci).min(interior.len())];
                let b = &boundary[(k * cb).min(boundary.len())..((k + 1) * cb).min(boundary.len())];
                sc.spawn(move || accumulate(dom, field, i, b))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("quadrature worker panicked")).collect()
    });
    let mut tot = Sums::default();
    for p in parts {
        let p = p?;
        let (a, b) = (&mut tot.ig, &p.ig);
        a.lhs_wstar += b.lhs_wstar;
        a.lhs_dminus += b.lhs_dminus;
        a.eq_wstar += b.eq_wstar;
        a.eq_dminus += b.eq_dminus;
        a.printed_sum_delta += b.printed_sum_delta;
        a.printed_delta_sq += b.printed_delta_sq;
        a.printed_dminus += b.printed_dminus;
        a.t1 += b.t1;
        a.t2 += b.t2;
        a.t2_levi += b.t2_levi;
        a.t2_first += b.t2_first;
        a.t4 += b.t4;
        a.ibp_b += b.ibp_b;
        tot.plus += p.plus;
        tot.t3a += p.t3a;
        tot.t3b += p.t3b;
        tot.dev = tot.dev.max(p.dev);
        tot.first_max = tot.first_max.max(p.first_max);
    }
    Ok((tot, interior.len(), boundary.len()))
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Term-by-term evaluation of the weighted estimate for `a = u + ū` on the box.
pub fn local_estimate_report(dom: &BoxDomain, field: &WeightedField, threads: usize) -> Result<LocalEstimateReport> {
    let margin = dom.psh_margin::<f64>()?;
    let (s, ni, nb) = parallel_sums(dom, field, threads)?;
    let g = &s.ig;
    let lhs = g.lhs_wstar + g.lhs_dminus;
    let rhs = g.t1 + g.t2 + s.t3a + g.t4;
    let equality_rhs = g.eq_wstar + g.eq_dminus;
    let ibp_lhs = g.printed_sum_delta + g.ibp_b;
    let ibp_rhs = g.t1 + g.t2 + s.t3b + g.t4;
    let scale = lhs.abs().max(g.t1.abs()).max(g.t2.abs());
    let finer = parallel_sums(&dom.refined(dom.cells, dom.order + 2), field, threads)?.0;
    let finer_lhs = finer.ig.lhs_wstar + finer.ig.lhs_dminus;
    let resolution_change = rel(lhs, finer_lhs, lhs.abs().max(finer_lhs.abs()));
    let terms = [
        ("t1_dbar_gradient", g.t1),
        ("t2_commutator", g.t2),
        ("t2_levi", g.t2_levi),
        ("t2_first_order", g.t2_first),
        ("t2_zeroth_order", g.t2 - g.t2_levi - g.t2_first),
        ("t3_boundary_printed", s.t3a),
        ("t3_boundary_derived", s.t3b),
        ("t4_divergence", g.t4),
    ]
    .into_iter()
    .map(|(n, v)| TermRow { name: n.into(), value: v })
    .collect();
    let balanced = if (g.printed_delta_sq - lhs).abs() <= (s.plus - lhs).abs() { "minus" } else { "plus" };
    Ok(LocalEstimateReport {
        chart: dom.chart,
        cells: dom.cells,
        order: dom.order,
        interior_nodes: ni,
        boundary_nodes: nb,
        weight_scale: dom.weight.scale,
        psh_margin: margin,
        dr_defect: dom.dr_defect::<f64>(),
        lhs_w_star: g.lhs_wstar,
        lhs_d_minus: g.lhs_dminus,
        lhs,
        terms,
        rhs,
        inequality_slack: lhs - rhs,
        equality_rhs,
        equality_residual: rel(lhs, equality_rhs, lhs.abs()),
        ibp_lhs,
        ibp_rhs,
        ibp_residual: rel(ibp_lhs, ibp_rhs, scale),
        max_expansion_deviation: s.dev,
        max_first_order: s.first_max,
        printed: PrintedReadings {
            delta_sq_minus: g.printed_delta_sq,
            delta_sq_plus: s.plus,
            sum_delta: g.printed_sum_delta,
            d_minus: g.printed_dminus,
            balanced: balanced.into(),
        },
        underresolved: resolution_change > 1e-6,
        resolution_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(seed: u64, cutoff: Option<BallCutoff>) -> WeightedField {
        WeightedField::random(&mut ChaCha8Rng::seed_from_u64(seed), 3, 2.0, cutoff)
    }

    #[test]
    fn zero_field_gives_zero() {
        let dom = BoxDomain::centered(Chart::KodairaThurston, 0.5, 1, 3).unwrap();
        let w = weighted_adjoint_phi(&dom, &WeightedField::zero()).unwrap();
        assert!(w.values.iter().all(|v| *v == 0.0));
        let r = local_estimate_report(&dom, &WeightedField::zero(), 1).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn expansion_matches_form_route() {
        for chart in [Chart::Flat, Chart::KodairaThurston] {
            let dom = BoxDomain::centered(chart, 0.7, 1, 4).unwrap();
            let w = weighted_adjoint_phi(&dom, &field(3, None)).unwrap();
            let scale = w.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(scale > 1e-3);
            assert!(w.max_deviation < 1e-12 * scale.max(1.0), "{chart:?}: {}", w.max_deviation);
        }
    }

    #[test]
    fn flat_compact_support() {
        let cut = BallCutoff { center: [0.0; 4], radius: 0.9, power: 4 };
        let f = field(7, Some(cut));
        let dom = BoxDomain::new(Chart::Flat, [-1.0; 4], [1.0; 4], 2, 6, Weight { scale: 0.5, center: [0.0; 4] }).unwrap();
        let r = local_estimate_report(&dom, &f, 4).unwrap();
        assert!(r.terms.iter().filter(|t| t.name.starts_with("t3")).all(|t| t.value.abs() < 1e-14));
        let mass: f64 = dom
            .interior_nodes::<f64>()
            .iter()
            .map(|nd| {
                let u = f.jets(nd.x);
                nd.w * (cabs2(u[0].v) + cabs2(u[1].v)) * (-dom.weight.jet(nd.x).v).exp()
            })
            .sum();
        let t2 = r.terms.iter().find(|t| t.name == "t2_commutator").unwrap().value;
        assert!((t2 - 2.0 * 0.5 * mass).abs() < 1e-10 * mass, "{t2} vs {mass}");
        assert!(r.equality_residual < 1e-12);
        assert!(r.ibp_residual < 1e-3, "{}", r.ibp_residual);
        assert!(r.inequality_slack >= -1e-3 * r.lhs);
    }

    #[test]
    fn div_lemma_examples() {
        let dom = BoxDomain::new(Chart::Flat, [0.0; 4], [1.0, 2.0, 1.0, 1.0], 1, 2, Weight { scale: 1.0, center: [0.0; 4] }).unwrap();
        let one = |_: [f64; 4]| Jet1::constant(1.0);
        let dx = |_: [f64; 4]| {
            let mut l = [Jet1::constant(0.0); 4];
            l[0] = Jet1::constant(1.0);
            l
        };
        let r = div_lemma_check(&dom, dx, one);
        assert!(r.interior.abs() < 1e-15 && r.residual.abs() < 1e-14);
        let xdx = |x: [f64; 4]| {
            let mut l = [Jet1::constant(0.0); 4];
            l[0] = jet::coordinate(x, 0).first();
            l
        };
        let r = div_lemma_check(&dom, xdx, one);
        assert!((r.boundary - dom.volume()).abs() < 1e-13 && r.residual.abs() < 1e-13);
        // residual decays with refinement for a non-polynomial integrand
        let coeff = |x: [f64; 4]| {
            let mut l = [Jet1::constant(0.0); 4];
            l[1] = jet::coordinate(x, 0).first().map(|v| v.sin());
            l[1].g[0] = x[0].cos();
            l
        };
        let f = |x: [f64; 4]| {
            let mut j = Jet1::constant((3.0 * x[1]).exp());
            j.g[1] = 3.0 * j.v;
            j
        };
        let cells = [1, 2, 4];
        let res: Vec<f64> = cells.iter().map(|c| div_lemma_check(&dom.refined(*c, 2), coeff, f).residual).collect();
        assert!(convergence_order(&cells, &res).unwrap() >= 2.0, "{res:?}");
    }

    #[test]
    fn kt_report_closes() {
        let dom = BoxDomain::centered(Chart::KodairaThurston, 0.5, 1, 6).unwrap();
        let r = local_estimate_report(&dom, &field(11, None), 4).unwrap();
        assert!(r.psh_margin > 0.1);
        assert!(r.dr_defect < 1e-6);
        assert!(r.equality_residual < 1e-12, "{}", r.equality_residual);
        let fine = local_estimate_report(&dom.refined(1, 10), &field(11, None), 4).unwrap();
        assert!(fine.ibp_residual < 1e-3 * r.ibp_residual.max(1e-12) || fine.ibp_residual < 1e-12, "{} {}", r.ibp_residual, fine.ibp_residual);
        assert!(r.max_first_order > 0.0);
    }
}
