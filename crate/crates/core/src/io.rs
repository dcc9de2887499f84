//! Binary sidecar fields, the manifold JSON document and CSV slices.
//!
//! Sidecar layout (little endian):
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `DTFIELD1` |
//! | 4 | dtype, `f64\0` or `f32\0` |
//! | 4 | `ndim` as `u32` |
//! | 8·ndim | shape as `u64`, slowest axis first |
//! | rest | values in row-major order |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algebra::{self, PointMap};
use crate::error::{Error, Result};
use crate::forms::FormField;
use crate::geometry::ManifoldSpec;
use crate::grid::{GridSpec, COORD_NAMES};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"DTFIELD1";
pub const MANIFOLD_SCHEMA: &str = "dtilde.manifold/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> &'static [u8; 4] {
        match self {
            Dtype::F32 => b"f32\0",
            Dtype::F64 => b"f64\0",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sidecar {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_sidecar<T: Real>(path: &Path, shape: &[usize], data: &[T]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::Format(format!("shape {shape:?} holds {n} values, got {}", data.len())));
    }
    let dtype = if std::mem::size_of::<T>() == 4 { Dtype::F32 } else { Dtype::F64 };
    let mut buf = Vec::with_capacity(16 + 8 * shape.len() + data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(dtype.tag());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for s in shape {
        buf.extend_from_slice(&(*s as u64).to_le_bytes());
    }
    for v in data {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_f64().to_le_bytes()),
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if buf.len() < 16 || &buf[..8] != MAGIC {
        return Err(bad("missing sidecar magic"));
    }
    let dtype = match &buf[8..12] {
        b"f32\0" => Dtype::F32,
        b"f64\0" => Dtype::F64,
        _ => return Err(bad("unknown dtype")),
    };
    let ndim = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let head = 16 + 8 * ndim;
    if buf.len() < head {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = (0..ndim).map(|i| u64::from_le_bytes(buf[16 + 8 * i..24 + 8 * i].try_into().unwrap()) as usize).collect();
    let n: usize = shape.iter().product();
    let width = if dtype == Dtype::F32 { 4 } else { 8 };
    if buf.len() != head + n * width {
        return Err(bad("payload length does not match shape"));
    }
    let body = &buf[head..];
    let data = match dtype {
        Dtype::F32 => body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Sidecar { dtype, shape, data })
}

/// Shape `[components, n_t, n_x, n_y, n_z]`.
pub fn write_form<T: Real>(path: &Path, shape: [usize; 4], a: &FormField<T>) -> Result<()> {
    let mut s = vec![a.comps.len()];
    s.extend_from_slice(&shape);
    write_sidecar(path, &s, &a.to_vec())
}

pub fn read_form<T: Real>(path: &Path, degree: usize, shape: [usize; 4]) -> Result<FormField<T>> {
    let sc = read_sidecar(path)?;
    let ncomp = algebra::dim(degree);
    let mut want = vec![ncomp];
    want.extend_from_slice(&shape);
    if sc.shape != want {
        return Err(Error::Format(format!("{}: shape {:?}, expected {want:?}", path.display(), sc.shape)));
    }
    let v: Vec<T> = sc.data.iter().map(|x| T::lit(*x)).collect();
    Ok(FormField::from_vec(degree, &v))
}

/// Scalar field, shape `[n_t, n_x, n_y, n_z]`.
pub fn read_scalar<T: Real>(path: &Path, shape: [usize; 4]) -> Result<Vec<T>> {
    let sc = read_sidecar(path)?;
    if sc.shape != shape {
        return Err(Error::Format(format!("{}: shape {:?}, expected {shape:?}", path.display(), sc.shape)));
    }
    Ok(sc.data.iter().map(|x| T::lit(*x)).collect())
}

fn point_map_data<T: Real>(m: &PointMap<T>, npts: usize) -> Vec<T> {
    (0..npts).flat_map(|p| m.at(p).to_vec()).collect()
}

/// Versioned manifold description; point fields live in sidecars next to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifoldDocument {
    pub schema: String,
    pub version: String,
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub grid: GridSpec,
    /// `E_a = Σ_μ frame[4a + μ] ∂_μ`.
    pub frame: Vec<f64>,
    pub z_shear: f64,
    /// `dε^c(E_a, E_b)` at index `16c + 4a + b`.
    pub structure: Vec<f64>,
    pub integrable: bool,
    pub eps_max: Option<f64>,
    pub taming_margin: f64,
    /// Field name to sidecar file name (relative to the document).
    pub fields: BTreeMap<String, String>,
}

/// Writes `manifold.json` and its sidecars into `dir`.
pub fn export_manifold<T: Real>(spec: &ManifoldSpec<T>, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let shape = spec.grid.shape();
    let n = spec.npts();
    let mut fields = BTreeMap::new();
    for (name, m) in [("j", &spec.j), ("metric", &spec.metric)] {
        let file = format!("{name}.bin");
        write_sidecar(&dir.join(&file), &[n, 4, 4], &point_map_data(m, n))?;
        fields.insert(name.to_string(), file);
    }
    for (name, a) in [("omega", &spec.omega), ("f_form", &spec.f_form), ("omega_minus", &spec.omega_minus)] {
        let file = format!("{name}.bin");
        write_form(&dir.join(&file), shape, a)?;
        fields.insert(name.to_string(), file);
    }
    write_sidecar(&dir.join("vol_density.bin"), &shape, &spec.vol_density)?;
    fields.insert("vol_density".into(), "vol_density.bin".into());
    let doc = ManifoldDocument {
        schema: MANIFOLD_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        name: spec.name().into(),
        params: spec.params.clone(),
        grid: spec.grid.spec().clone(),
        frame: spec.frame.iter().flatten().map(|v| v.to_f64()).collect(),
        z_shear: spec.z_shear,
        structure: spec.structure.iter().flatten().flatten().map(|v| v.to_f64()).collect(),
        integrable: spec.integrable,
        eps_max: spec.eps_max,
        taming_margin: spec.taming_margin.to_f64(),
        fields,
    };
    let path = dir.join("manifold.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    Ok(path)
}

pub fn read_manifold_document(path: &Path) -> Result<ManifoldDocument> {
    let doc: ManifoldDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
    if doc.schema != MANIFOLD_SCHEMA {
        return Err(Error::Format(format!("unsupported schema `{}`", doc.schema)));
    }
    Ok(doc)
}

/// Two-dimensional slice of a form over `axes`, the other coordinates fixed at
/// grid indices `at`. Columns: the two coordinates, then one column per component.
pub fn slice_csv<T: Real>(spec: &ManifoldSpec<T>, a: &FormField<T>, axes: [usize; 2], at: [usize; 4]) -> Result<String> {
    let shape = spec.grid.shape();
    if axes[0] == axes[1] || axes.iter().any(|m| *m > 3) {
        return Err(Error::InvalidParameter(format!("bad slice axes {axes:?}")));
    }
    if (0..4).any(|m| at[m] >= shape[m]) {
        return Err(Error::InvalidParameter(format!("slice index {at:?} outside grid {shape:?}")));
    }
    let mut out = format!("{},{}", COORD_NAMES[axes[0]], COORD_NAMES[axes[1]]);
    for m in algebra::basis(a.degree) {
        let _ = write!(out, ",e{}", algebra::label(*m));
    }
    out.push('\n');
    for i in 0..shape[axes[0]] {
        for j in 0..shape[axes[1]] {
            let mut mi = at;
            mi[axes[0]] = i;
            mi[axes[1]] = j;
            let p = spec.grid.flat_index(mi);
            let x = spec.grid.coords(p);
            let _ = write!(out, "{},{}", x[axes[0]].to_f64(), x[axes[1]].to_f64());
            for c in &a.comps {
                let _ = write!(out, ",{:e}", c[p].to_f64());
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_manifold, CatalogId};

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.25 - 1.0).collect();
        write_sidecar(&p, &[2, 3, 4], &data).unwrap();
        let sc = read_sidecar(&p).unwrap();
        assert_eq!(sc.shape, vec![2, 3, 4]);
        assert_eq!(sc.dtype, Dtype::F64);
        assert_eq!(sc.data, data);
        let raw = fs::read(&p).unwrap();
        assert_eq!(&raw[..12], b"DTFIELD1f64\0");
        let f: Vec<f32> = data.iter().map(|v| *v as f32).collect();
        write_sidecar(&p, &[24], &f).unwrap();
        assert_eq!(read_sidecar(&p).unwrap().dtype, Dtype::F32);
        fs::write(&p, b"nonsense").unwrap();
        assert!(matches!(read_sidecar(&p), Err(Error::Format(_))));
        assert!(write_sidecar(&p, &[5], &data).is_err());
    }

    #[test]
    fn manifold_export() {
        let spec = build_manifold::<f64>(CatalogId::KodairaThurston, &GridSpec::z_invariant(4), &BTreeMap::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = export_manifold(&spec, dir.path()).unwrap();
        let doc = read_manifold_document(&path).unwrap();
        assert_eq!(doc.name, "kodaira_thurston");
        assert_eq!(doc.frame.len(), 16);
        let omega: FormField<f64> = read_form(&dir.path().join(&doc.fields["omega"]), 2, spec.grid.shape()).unwrap();
        assert_eq!(omega.comps, spec.omega.comps);
        let csv = slice_csv(&spec, &spec.omega, [0, 1], [0; 4]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 16);
        assert!(csv.starts_with("t,x,e01,"));
    }
}
