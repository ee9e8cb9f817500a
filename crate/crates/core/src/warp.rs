//! Displacement fields and the spatial transformer.
//!
//! A field stores `u(p)` in voxel units; the mapped location of voxel `p` is
//! `p' = p + u(p)`. Samples outside the grid are clamped to the boundary.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{
    check_dims, check_spacing, coords, offset, voxel_count, Dims, LabelMap, Spacing, Volume3D,
};

/// Per-voxel `(u_z, u_y, u_x)` displacement, component-planar in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn from_planar(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = 3 * voxel_count(dims);
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::from_planar(dims, spacing, vec![0.0; 3 * voxel_count(dims)])
    }

    pub fn constant(dims: Dims, spacing: Spacing, u: [f64; 3]) -> Result<Self> {
        Self::from_fn(dims, spacing, |_, _, _| u)
    }

    pub fn from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> [f64; 3],
    {
        check_dims(dims)?;
        let n = voxel_count(dims);
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let [z, y, x] = coords(dims, i);
            let u = f(z, y, x);
            for c in 0..3 {
                data[c * n + i] = u[c];
            }
        }
        Self::from_planar(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        voxel_count(self.dims)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// All three components, `u_z` block first.
    pub fn planar(&self) -> &[f64] {
        &self.data
    }

    pub fn into_planar(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        let n = self.len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        self.at(offset(self.dims, z, y, x))
    }

    /// Adds the same vector to every voxel.
    pub fn shifted(&self, t: [f64; 3]) -> Self {
        let n = self.len();
        let data = self.data.iter().enumerate().map(|(i, v)| v + t[i / n]).collect();
        Self { data, ..self.clone() }
    }

    pub fn mean_norm(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let u = self.at(i);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .sum::<f64>()
            / n as f64
    }
}

fn check_field(f: &DisplacementField, dims: Dims) -> Result<()> {
    if f.dims != dims {
        return Err(Error::DimsMismatch(f.dims, dims));
    }
    Ok(())
}

/// Clamped cell lookup along one axis: `(i0, i1, t, inside)` where the sample
/// is `(1 - t) * v[i0] + t * v[i1]` and `inside` is false when clamping was
/// active (derivative zero).
#[inline]
fn cell(c: f64, n: usize) -> (usize, usize, f64, bool) {
    let top = (n - 1) as f64;
    let inside = (0.0..=top).contains(&c);
    let c = c.clamp(0.0, top);
    let i0 = c.floor() as usize;
    if i0 >= n - 1 {
        (n - 1, n - 1, 0.0, inside && n > 1)
    } else {
        (i0, i0 + 1, c - i0 as f64, inside)
    }
}

/// Trilinear sample of `data` at continuous voxel position `pos`.
pub fn sample_trilinear(data: &[f64], dims: Dims, pos: [f64; 3]) -> f64 {
    sample_with_gradient(data, dims, pos).0
}

/// Trilinear sample and its derivative with respect to `pos`.
pub fn sample_with_gradient(data: &[f64], dims: Dims, pos: [f64; 3]) -> (f64, [f64; 3]) {
    let (z0, z1, tz, iz) = cell(pos[0], dims[0]);
    let (y0, y1, ty, iy) = cell(pos[1], dims[1]);
    let (x0, x1, tx, ix) = cell(pos[2], dims[2]);
    let at = |z, y, x| data[offset(dims, z, y, x)];
    let c000 = at(z0, y0, x0);
    let c001 = at(z0, y0, x1);
    let c010 = at(z0, y1, x0);
    let c011 = at(z0, y1, x1);
    let c100 = at(z1, y0, x0);
    let c101 = at(z1, y0, x1);
    let c110 = at(z1, y1, x0);
    let c111 = at(z1, y1, x1);

    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    // interpolate along x first
    let c00 = lerp(c000, c001, tx);
    let c01 = lerp(c010, c011, tx);
    let c10 = lerp(c100, c101, tx);
    let c11 = lerp(c110, c111, tx);
    let c0 = lerp(c00, c01, ty);
    let c1 = lerp(c10, c11, ty);
    let value = lerp(c0, c1, tz);

    let dz = if iz { c1 - c0 } else { 0.0 };
    let dy = if iy { lerp(c01 - c00, c11 - c10, tz) } else { 0.0 };
    let dx = if ix {
        let d0 = lerp(c001 - c000, c011 - c010, ty);
        let d1 = lerp(c101 - c100, c111 - c110, ty);
        lerp(d0, d1, tz)
    } else {
        0.0
    };
    (value, [dz, dy, dx])
}

#[inline]
fn mapped(f: &DisplacementField, i: usize) -> [f64; 3] {
    let [z, y, x] = coords(f.dims, i);
    let u = f.at(i);
    [z as f64 + u[0], y as f64 + u[1], x as f64 + u[2]]
}

/// `I_w(p) = I_m(p + u(p))` by trilinear interpolation with edge clamping.
pub fn warp_image(m: &Volume3D, f: &DisplacementField) -> Result<Volume3D> {
    check_field(f, m.dims())?;
    let dims = m.dims();
    let src = m.data();
    let data: Vec<f64> = (0..voxel_count(dims))
        .into_par_iter()
        .map(|i| sample_trilinear(src, dims, mapped(f, i)))
        .collect();
    m.with_data(data)
}

/// Warped image plus `dI_w(p) / du(p)` for every voxel.
pub fn warp_image_with_gradient(m: &Volume3D, f: &DisplacementField) -> Result<(Volume3D, Vec<[f64; 3]>)> {
    check_field(f, m.dims())?;
    let dims = m.dims();
    let src = m.data();
    let (values, grads): (Vec<f64>, Vec<[f64; 3]>) = (0..voxel_count(dims))
        .into_par_iter()
        .map(|i| sample_with_gradient(src, dims, mapped(f, i)))
        .unzip();
    Ok((m.with_data(values)?, grads))
}

/// Nearest-neighbour label warp with edge clamping.
pub fn warp_labels(l: &LabelMap, f: &DisplacementField) -> Result<LabelMap> {
    check_field(f, l.dims())?;
    let dims = l.dims();
    let src = l.labels();
    let labels = (0..voxel_count(dims))
        .into_par_iter()
        .map(|i| {
            let p = mapped(f, i);
            let pick = |c: f64, n: usize| c.round().clamp(0.0, (n - 1) as f64) as usize;
            src[offset(
                dims,
                pick(p[0], dims[0]),
                pick(p[1], dims[1]),
                pick(p[2], dims[2]),
            )]
        })
        .collect();
    LabelMap::new(dims, l.spacing(), labels)
}

/// Finite-difference derivative of `comp` along `axis` at voxel `pos`:
/// central in the interior, one-sided on the boundary.
#[inline]
fn diff(comp: &[f64], dims: Dims, pos: [usize; 3], axis: usize) -> f64 {
    let n = dims[axis];
    let at = |k: usize| {
        let mut q = pos;
        q[axis] = k;
        comp[offset(dims, q[0], q[1], q[2])]
    };
    let k = pos[axis];
    if k == 0 {
        at(1) - at(0)
    } else if k == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        0.5 * (at(k + 1) - at(k - 1))
    }
}

/// `I + grad u` at voxel `i`, rows indexed by component, columns by axis.
pub fn jacobian_matrix(f: &DisplacementField, i: usize) -> [[f64; 3]; 3] {
    let pos = coords(f.dims, i);
    let mut j = [[0.0; 3]; 3];
    for (c, row) in j.iter_mut().enumerate() {
        let comp = f.component(c);
        for (a, entry) in row.iter_mut().enumerate() {
            *entry = diff(comp, f.dims, pos, a) + if a == c { 1.0 } else { 0.0 };
        }
    }
    j
}

pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `det(I + grad u)` per voxel. Every axis needs at least two voxels.
pub fn jacobian_determinant(f: &DisplacementField) -> Result<Volume3D> {
    if f.dims.iter().any(|&d| d < 2) {
        return Err(Error::Shape(format!(
            "jacobian needs at least 2 voxels per axis, got {:?}",
            f.dims
        )));
    }
    let data = (0..f.len())
        .into_par_iter()
        .map(|i| det3(&jacobian_matrix(f, i)))
        .collect();
    Volume3D::new(f.dims, f.spacing, data)
}

/// Trilinear resampling of a field onto a new grid, with displacements
/// multiplied per component by `scale`. Grid corners are aligned.
pub fn resample_field(f: &DisplacementField, dims: Dims, scale: [f64; 3]) -> Result<DisplacementField> {
    check_dims(dims)?;
    let src = f.dims;
    let ratio = |a: usize| {
        if dims[a] > 1 && src[a] > 1 {
            (src[a] - 1) as f64 / (dims[a] - 1) as f64
        } else {
            0.0
        }
    };
    let r = [ratio(0), ratio(1), ratio(2)];
    let n = voxel_count(dims);
    let mut data = vec![0.0; 3 * n];
    for c in 0..3 {
        let comp = f.component(c);
        data[c * n..(c + 1) * n]
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, out)| {
                let [z, y, x] = coords(dims, i);
                let pos = [z as f64 * r[0], y as f64 * r[1], x as f64 * r[2]];
                *out = sample_trilinear(comp, src, pos) * scale[c];
            });
    }
    DisplacementField::from_planar(dims, f.spacing, data)
}
