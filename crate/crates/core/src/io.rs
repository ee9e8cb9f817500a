//! Header + raw payload file format.
//!
//! A dataset `name` is stored as two files: `name.vh`, a JSON header, and
//! `name.vraw`, the little-endian payload with no padding.
//!
//! ```text
//! {"dims":[D,H,W],"spacing":[sz,sy,sx],"dtype":"f64","byte_order":"little","components":1}
//! ```
//!
//! Multi-component payloads (displacement fields, `components: 3`) are
//! component-planar: all `u_z`, then all `u_y`, then all `u_x`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, check_spacing, voxel_count, Dims, LabelMap, Spacing, Volume3D};
use crate::warp::DisplacementField;

pub const HEADER_EXT: &str = "vh";
pub const PAYLOAD_EXT: &str = "vraw";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U16,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::U16 => "u16",
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            "u16" => Ok(Dtype::U16),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: Dims,
    pub spacing: Spacing,
    pub dtype: String,
    pub byte_order: String,
    #[serde(default = "one")]
    pub components: usize,
}

fn one() -> usize {
    1
}

/// Resolves `name`, `name.vh` or `name.vraw` to the header/payload pair.
pub fn dataset_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some(HEADER_EXT) | Some(PAYLOAD_EXT) => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with_ext = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with_ext(HEADER_EXT), with_ext(PAYLOAD_EXT))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if header.byte_order != "little" {
        return Err(Error::Header {
            path: path.to_path_buf(),
            msg: format!("unsupported byte order `{}`", header.byte_order),
        });
    }
    if header.components == 0 {
        return Err(Error::Header {
            path: path.to_path_buf(),
            msg: "components must be >= 1".into(),
        });
    }
    check_dims(header.dims)?;
    check_spacing(header.spacing)?;
    Ok(header)
}

/// Reads and widens a payload to f64, checking the byte count against the header.
fn read_payload(header: &Header, path: &Path) -> Result<Vec<f64>> {
    let dtype = Dtype::parse(&header.dtype)?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let count = voxel_count(header.dims) * header.components;
    let expected = count * dtype.size();
    if bytes.len() != expected {
        return Err(Error::Payload {
            path: path.to_path_buf(),
            msg: format!(
                "{} bytes, header {:?} x{} {} requires {}",
                bytes.len(),
                header.dims,
                header.components,
                dtype.tag(),
                expected
            ),
        });
    }
    let values: Vec<f64> = match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Payload {
            path: path.to_path_buf(),
            msg: format!("non-finite value at element {i}"),
        });
    }
    Ok(values)
}

fn encode(values: &[f64], dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for (i, &v) in values.iter().enumerate() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::U16 => {
                if v < 0.0 || v > u16::MAX as f64 || v.fract() != 0.0 {
                    return Err(Error::InvalidLabel { index: i, value: v });
                }
                out.extend_from_slice(&(v as u16).to_le_bytes())
            }
        }
    }
    Ok(out)
}

fn write_dataset(
    path: &Path,
    dims: Dims,
    spacing: Spacing,
    components: usize,
    values: &[f64],
    dtype: Dtype,
) -> Result<()> {
    let (hpath, ppath) = dataset_paths(path);
    let payload = encode(values, dtype)?;
    let header = Header {
        dims,
        spacing,
        dtype: dtype.tag().to_string(),
        byte_order: "little".to_string(),
        components,
    };
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(&ppath, payload).map_err(io_err(&ppath))?;
    fs::write(&hpath, text + "\n").map_err(io_err(&hpath))?;
    Ok(())
}

fn read_dataset(path: &Path, components: usize) -> Result<(Header, Vec<f64>)> {
    let (hpath, ppath) = dataset_paths(path);
    let header = read_header(&hpath)?;
    if header.components != components {
        return Err(Error::Header {
            path: hpath,
            msg: format!(
                "expected {components} component(s), header declares {}",
                header.components
            ),
        });
    }
    let values = read_payload(&header, &ppath)?;
    Ok((header, values))
}

pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(v, path, Dtype::F64)
}

/// Saves with an explicit payload type. `F32` narrows, so only `F64` is bit-exact.
pub fn save_volume_as(v: &Volume3D, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    write_dataset(path.as_ref(), v.dims(), v.spacing(), 1, v.data(), dtype)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let (h, values) = read_dataset(path.as_ref(), 1)?;
    Volume3D::new(h.dims, h.spacing, values)
}

pub fn save_labels(l: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<f64> = l.labels().iter().map(|&v| v as f64).collect();
    write_dataset(path.as_ref(), l.dims(), l.spacing(), 1, &values, Dtype::U16)
}

/// Loads a label map. Float payloads are accepted when every value is a
/// non-negative integer.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (h, values) = read_dataset(path.as_ref(), 1)?;
    let mut labels = Vec::with_capacity(values.len());
    for (index, &value) in values.iter().enumerate() {
        if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
            return Err(Error::InvalidLabel { index, value });
        }
        labels.push(value as u32);
    }
    LabelMap::new(h.dims, h.spacing, labels)
}

pub fn save_field(f: &DisplacementField, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(path.as_ref(), f.dims(), f.spacing(), 3, f.planar(), Dtype::F64)
}

pub fn load_field(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let (h, values) = read_dataset(path.as_ref(), 3)?;
    DisplacementField::from_planar(h.dims, h.spacing, values)
}
