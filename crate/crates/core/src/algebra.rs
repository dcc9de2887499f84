//! Exterior algebra of `ℝ⁴` in the basis `ε^I`, `I` a strictly increasing
//! multi-index stored as a 4-bit mask.

use crate::scalar::Real;

pub type Mat4<T> = [[T; 4]; 4];

const B0: [u8; 1] = [0b0000];
const B1: [u8; 4] = [0b0001, 0b0010, 0b0100, 0b1000];
const B2: [u8; 6] = [0b0011, 0b0101, 0b1001, 0b0110, 0b1010, 0b1100];
const B3: [u8; 4] = [0b0111, 0b1011, 0b1101, 0b1110];
const B4: [u8; 1] = [0b1111];

/// Basis masks of `Λ^p`, ordered lexicographically: `01, 02, 03, 12, 13, 23` for `p = 2`.
pub fn basis(p: usize) -> &'static [u8] {
    match p {
        0 => &B0,
        1 => &B1,
        2 => &B2,
        3 => &B3,
        4 => &B4,
        _ => &[],
    }
}

pub fn dim(p: usize) -> usize {
    basis(p).len()
}

pub fn index_of(mask: u8) -> usize {
    let p = mask.count_ones() as usize;
    basis(p).iter().position(|m| *m == mask).expect("mask in basis")
}

pub fn indices(mask: u8) -> Vec<usize> {
    (0..4).filter(|a| mask & (1 << a) != 0).collect()
}

pub fn label(mask: u8) -> String {
    if mask == 0 {
        return "1".into();
    }
    indices(mask).iter().map(|a| a.to_string()).collect()
}

/// Sign of `ε^A ∧ ε^B = sign · ε^{A∪B}`, or 0 when the masks overlap.
pub fn wedge_sign(a: u8, b: u8) -> i32 {
    if a & b != 0 {
        return 0;
    }
    // count inversions: pairs (i in A, j in B) with i > j
    let mut inv = 0;
    for i in indices(a) {
        for j in indices(b) {
            if i > j {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Matrix of the pullback `ψ ↦ ψ(M·, …, M·)` on `Λ^p`, row-major `dim × dim`:
/// `(M^*ψ)_I = Σ_K det(M[K, I]) ψ_K`.
pub fn induced<T: Real>(m: &Mat4<T>, p: usize) -> Vec<T> {
    let b = basis(p);
    let d = b.len();
    let mut out = vec![T::zero(); d * d];
    for (r, &i_mask) in b.iter().enumerate() {
        let cols = indices(i_mask);
        for (c, &k_mask) in b.iter().enumerate() {
            let rows = indices(k_mask);
            out[r * d + c] = minor(m, &rows, &cols);
        }
    }
    out
}

fn minor<T: Real>(m: &Mat4<T>, rows: &[usize], cols: &[usize]) -> T {
    match rows.len() {
        0 => T::one(),
        1 => m[rows[0]][cols[0]],
        2 => m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]],
        n => {
            // Laplace expansion along the first row
            let mut s = T::zero();
            for (c, &col) in cols.iter().enumerate() {
                let sub_cols: Vec<usize> = cols.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, v)| *v).collect();
                let term = m[rows[0]][col] * minor(m, &rows[1..n], &sub_cols);
                if c % 2 == 0 {
                    s += term;
                } else {
                    s -= term;
                }
            }
            s
        }
    }
}

pub fn det4<T: Real>(m: &Mat4<T>) -> T {
    minor(m, &[0, 1, 2, 3], &[0, 1, 2, 3])
}

pub fn mat_mul<T: Real>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    let mut c = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = T::zero();
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn identity<T: Real>() -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn transpose<T: Real>(a: &Mat4<T>) -> Mat4<T> {
    let mut t = *a;
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn inverse4<T: Real>(m: &Mat4<T>) -> Option<Mat4<T>> {
    let na = nalgebra::Matrix4::from_fn(|i, j| m[i][j]);
    let inv = na.try_inverse()?;
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = inv[(i, j)];
        }
    }
    Some(out)
}

/// A field of small dense linear maps, either uniform or one per grid node.
#[derive(Clone, Debug)]
pub struct PointMap<T> {
    pub rows: usize,
    pub cols: usize,
    uniform: bool,
    data: Vec<T>,
}

impl<T: Real> PointMap<T> {
    pub fn uniform(rows: usize, cols: usize, m: Vec<T>) -> Self {
        assert_eq!(m.len(), rows * cols);
        Self { rows, cols, uniform: true, data: m }
    }

    pub fn from_fn(rows: usize, cols: usize, npts: usize, f: impl Fn(usize) -> Vec<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols * npts);
        for p in 0..npts {
            let m = f(p);
            debug_assert_eq!(m.len(), rows * cols);
            data.extend_from_slice(&m);
        }
        Self { rows, cols, uniform: false, data }
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[T] {
        if self.uniform {
            &self.data
        } else {
            let s = self.rows * self.cols;
            &self.data[p * s..(p + 1) * s]
        }
    }

    /// Applies the map to component fields `input[c][p]`.
    pub fn apply(&self, input: &[Vec<T>]) -> Vec<Vec<T>> {
        assert_eq!(input.len(), self.cols);
        let npts = input.first().map(|v| v.len()).unwrap_or(0);
        let mut out = vec![vec![T::zero(); npts]; self.rows];
        for p in 0..npts {
            let m = self.at(p);
            for r in 0..self.rows {
                let mut s = T::zero();
                for c in 0..self.cols {
                    s += m[r * self.cols + c] * input[c][p];
                }
                out[r][p] = s;
            }
        }
        out
    }
}
