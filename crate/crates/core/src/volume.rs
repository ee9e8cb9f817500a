//! Dense voxel containers shared by every other module.
//!
//! All grids are stored row-major with `x` fastest: element `(z, y, x)` of a
//! grid with dims `(D, H, W)` lives at offset `z*H*W + y*W + x`.

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Voxel counts along `(z, y, x)`.
pub type Dims = [usize; 3];

/// Millimetres per voxel along `(z, y, x)`.
pub type Spacing = [f64; 3];

pub const UNIT_SPACING: Spacing = [1.0, 1.0, 1.0];

#[inline]
pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn offset(dims: Dims, z: usize, y: usize, x: usize) -> usize {
    (z * dims[1] + y) * dims[2] + x
}

/// Inverse of [`offset`].
#[inline]
pub fn coords(dims: Dims, i: usize) -> [usize; 3] {
    let x = i % dims[2];
    let y = (i / dims[2]) % dims[1];
    let z = i / (dims[1] * dims[2]);
    [z, y, x]
}

pub(crate) fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims(dims));
    }
    Ok(())
}

pub(crate) fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidSpacing(spacing));
    }
    Ok(())
}

fn check_len(dims: Dims, actual: usize) -> Result<()> {
    let expected = voxel_count(dims);
    if expected != actual {
        return Err(Error::LengthMismatch {
            dims,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Real scalar field on a voxel grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![0.0; voxel_count(dims)])
    }

    /// Builds a volume by evaluating `f(z, y, x)` at every voxel.
    pub fn from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data[offset(self.dims, z, y, x)]
    }

    /// Same grid and spacing, new payload.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.spacing, data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn to_complex(&self) -> ComplexVolume3D {
        ComplexVolume3D {
            dims: self.dims,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Affine min-max rescale to `[0, 1]`.
pub fn normalize_unit(v: &Volume3D) -> Result<Volume3D> {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return Err(Error::DegenerateRange);
    }
    let scale = 1.0 / (hi - lo);
    let data = v
        .data
        .iter()
        .map(|&x| if x == hi { 1.0 } else { (x - lo) * scale })
        .collect();
    v.with_data(data)
}

/// Complex scalar field, same layout as [`Volume3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume3D {
    dims: Dims,
    data: Vec<Complex64>,
}

impl ComplexVolume3D {
    pub fn new(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        check_dims(dims)?;
        check_len(dims, data.len())?;
        if let Some(i) = data.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::new(dims, vec![Complex64::new(0.0, 0.0); voxel_count(dims)])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> Complex64 {
        self.data[offset(self.dims, z, y, x)]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real parts as a volume with the given spacing.
    pub fn re(&self, spacing: Spacing) -> Result<Volume3D> {
        Volume3D::new(self.dims, spacing, self.data.iter().map(|c| c.re).collect())
    }
}

/// Integer segmentation on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u32>,
    label_set: BTreeSet<u32>,
}

impl LabelMap {
    pub fn new(dims: Dims, spacing: Spacing, labels: Vec<u32>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        check_len(dims, labels.len())?;
        let label_set = labels.iter().copied().collect();
        Ok(Self {
            dims,
            spacing,
            labels,
            label_set,
        })
    }

    pub fn from_fn<F>(dims: Dims, spacing: Spacing, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> u32,
    {
        let mut labels = Vec::with_capacity(voxel_count(dims));
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    labels.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, labels)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_set(&self) -> &BTreeSet<u32> {
        &self.label_set
    }

    /// Labels other than background (0).
    pub fn foreground(&self) -> impl Iterator<Item = u32> + '_ {
        self.label_set.iter().copied().filter(|&l| l != 0)
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u32 {
        self.labels[offset(self.dims, z, y, x)]
    }

    pub fn mask(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_small_ramp() {
        let v = Volume3D::new([1, 1, 3], UNIT_SPACING, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize_unit(&v).unwrap().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_identity_on_unit_range() {
        let data = vec![0.0, 0.25, 1.0, 0.5, 0.125, 0.75, 0.0, 1.0];
        let v = Volume3D::new([2, 2, 2], UNIT_SPACING, data.clone()).unwrap();
        assert_eq!(normalize_unit(&v).unwrap().data(), data.as_slice());
    }

    #[test]
    fn normalize_rejects_constant() {
        let v = Volume3D::new([1, 2, 2], UNIT_SPACING, vec![3.0; 4]).unwrap();
        assert!(matches!(normalize_unit(&v), Err(Error::DegenerateRange)));
    }

    #[test]
    fn normalize_uniform_draws_match_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..4 * 5 * 6).map(|_| rng.gen_range(10.0..20.0)).collect();
        let v = Volume3D::new([4, 5, 6], [2.0, 1.0, 1.0], data.clone()).unwrap();
        let n = normalize_unit(&v).unwrap();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in n.data().iter().zip(&data) {
            assert!((a - (b - lo) / (hi - lo)).abs() <= 1e-15);
        }
        assert_eq!(n.min_max(), (0.0, 1.0));
        assert_eq!(n.dims(), v.dims());
        assert_eq!(n.spacing(), v.spacing());

        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let (ma, mb) = (mean(n.data()), mean(&data));
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in n.data().iter().zip(&data) {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        assert!((sab / (saa * sbb).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let v = Volume3D::from_fn([3, 4, 5], UNIT_SPACING, |z, y, x| {
            ((z * 7 + y * 3 + x) as f64).sin() * 40.0 - 3.0
        })
        .unwrap();
        let a = normalize_unit(&v).unwrap();
        let b = normalize_unit(&a).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn coordinate_stamping() {
        let dims = [3, 4, 5];
        let v = Volume3D::from_fn(dims, UNIT_SPACING, |z, y, x| (z * 100 + y * 10 + x) as f64).unwrap();
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let i = z * 4 * 5 + y * 5 + x;
                    assert_eq!(v.data()[i], (z * 100 + y * 10 + x) as f64);
                    assert_eq!(coords(dims, i), [z, y, x]);
                }
            }
        }
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Volume3D::new([2, 2, 2], UNIT_SPACING, vec![0.0; 7]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            Volume3D::new([1, 1, 2], UNIT_SPACING, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(Volume3D::new([0, 1, 1], UNIT_SPACING, vec![]).is_err());
        assert!(Volume3D::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn label_set_tracks_payload() {
        let l = LabelMap::new([1, 2, 3], UNIT_SPACING, vec![0, 3, 1, 3, 0, 2]).unwrap();
        assert_eq!(
            l.label_set().iter().copied().collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(l.foreground().collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
