//! Unsupervised registration objective.
//!
//! `L_total = -CC(I_f, I_m o u) + lambda * sum_p |grad u(p)|^2`, where CC is the
//! windowed squared normalized cross-correlation summed over all voxels.
//! Window sums are zero-padded and the local mean always divides by `n^3`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{coords, voxel_count, Dims, Volume3D};
use crate::warp::{warp_image, warp_image_with_gradient, DisplacementField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Side of the cubic CC window; odd.
    pub window: usize,
    pub lambda: f64,
    /// Added to both variance factors of the CC denominator.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            window: 9,
            lambda: 1.0,
            epsilon: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.window)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn check_window(n: usize) -> Result<()> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::Config(format!("window must be odd and positive, got {n}")));
    }
    Ok(())
}

fn check_same(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::DimsMismatch(a, b));
    }
    Ok(())
}

fn box_axis(data: &[f64], dims: Dims, axis: usize, radius: usize) -> Vec<f64> {
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let len = dims[axis];
    let mut out = vec![0.0; data.len()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let k = (i / stride) % len;
        let start = i - k * stride;
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(len - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += data[start + j * stride];
        }
        *o = acc;
    });
    out
}

/// Zero-padded `n^3` window sum centred on every voxel.
pub fn box_sum(data: &[f64], dims: Dims, n: usize) -> Vec<f64> {
    let r = n / 2;
    let a = box_axis(data, dims, 2, r);
    let b = box_axis(&a, dims, 1, r);
    box_axis(&b, dims, 0, r)
}

/// Local means over the `n^3` neighbourhood, zero-padded, divisor `n^3`.
pub fn local_means(v: &Volume3D, n: usize) -> Result<Volume3D> {
    check_window(n)?;
    let n3 = (n * n * n) as f64;
    let data = box_sum(v.data(), v.dims(), n)
        .into_iter()
        .map(|s| s / n3)
        .collect();
    v.with_data(data)
}

/// Window statistics for every voxel.
struct WindowSums {
    f: Vec<f64>,
    w: Vec<f64>,
    ff: Vec<f64>,
    ww: Vec<f64>,
    fw: Vec<f64>,
}

impl WindowSums {
    fn new(fixed: &[f64], warped: &[f64], dims: Dims, n: usize) -> Self {
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
        Self {
            f: box_sum(fixed, dims, n),
            w: box_sum(warped, dims, n),
            ff: box_sum(&prod(fixed, fixed), dims, n),
            ww: box_sum(&prod(warped, warped), dims, n),
            fw: box_sum(&prod(fixed, warped), dims, n),
        }
    }

    /// `(X, Y, Z)`: windowed covariance and the two eps-regularized variances.
    #[inline]
    fn moments(&self, i: usize, n3: f64, eps: f64) -> (f64, f64, f64) {
        let (sf, sw) = (self.f[i], self.w[i]);
        let cross = self.fw[i] - sf * sw / n3;
        let var_f = self.ff[i] - sf * sf / n3 + eps;
        let var_w = self.ww[i] - sw * sw / n3 + eps;
        (cross, var_f, var_w)
    }
}

fn first_non_finite(values: &[f64], dims: Dims, quantity: &'static str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let [z, y, x] = coords(dims, i);
        return Err(Error::NonFiniteAt { quantity, z, y, x });
    }
    Ok(())
}

/// Per-voxel squared local correlation.
pub fn local_cc_map(fixed: &Volume3D, warped: &Volume3D, cfg: &LossConfig) -> Result<Volume3D> {
    cfg.validate()?;
    check_same(fixed.dims(), warped.dims())?;
    let dims = fixed.dims();
    let n3 = (cfg.window.pow(3)) as f64;
    let sums = WindowSums::new(fixed.data(), warped.data(), dims, cfg.window);
    let data: Vec<f64> = (0..voxel_count(dims))
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = sums.moments(i, n3, cfg.epsilon);
            x * x / (y * z)
        })
        .collect();
    first_non_finite(&data, dims, "local correlation")?;
    fixed.with_data(data)
}

/// Sum of the squared local correlation over every voxel; in `[0, |grid|]`.
pub fn local_cc(fixed: &Volume3D, warped: &Volume3D, cfg: &LossConfig) -> Result<f64> {
    Ok(local_cc_map(fixed, warped, cfg)?.data().iter().sum())
}

pub fn similarity_loss(
    fixed: &Volume3D,
    moving: &Volume3D,
    f: &DisplacementField,
    cfg: &LossConfig,
) -> Result<f64> {
    check_same(fixed.dims(), moving.dims())?;
    let warped = warp_image(moving, f)?;
    Ok(-local_cc(fixed, &warped, cfg)?)
}

/// Forward-difference diffusion energy over all components and axes.
pub fn smoothness_loss(f: &DisplacementField) -> f64 {
    let dims = f.dims();
    let mut total = 0.0;
    for c in 0..3 {
        let comp = f.component(c);
        for i in 0..comp.len() {
            let p = coords(dims, i);
            for (axis, step) in [(0usize, dims[1] * dims[2]), (1, dims[2]), (2, 1)] {
                if p[axis] + 1 < dims[axis] {
                    let d = comp[i + step] - comp[i];
                    total += d * d;
                }
            }
        }
    }
    total
}

fn smoothness_grad(f: &DisplacementField, scale: f64) -> Vec<f64> {
    let dims = f.dims();
    let n = voxel_count(dims);
    let mut grad = vec![0.0; 3 * n];
    for c in 0..3 {
        let comp = f.component(c);
        let g = &mut grad[c * n..(c + 1) * n];
        for i in 0..n {
            let p = coords(dims, i);
            for (axis, step) in [(0usize, dims[1] * dims[2]), (1, dims[2]), (2, 1)] {
                if p[axis] + 1 < dims[axis] {
                    let d = 2.0 * scale * (comp[i + step] - comp[i]);
                    g[i + step] += d;
                    g[i] -= d;
                }
            }
        }
    }
    grad
}

/// The three objective values at one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub similarity: f64,
    pub smoothness: f64,
}

pub fn loss_terms(
    fixed: &Volume3D,
    moving: &Volume3D,
    f: &DisplacementField,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let similarity = similarity_loss(fixed, moving, f, cfg)?;
    let smoothness = smoothness_loss(f);
    Ok(LossTerms {
        total: similarity + cfg.lambda * smoothness,
        similarity,
        smoothness,
    })
}

pub fn total_loss(
    fixed: &Volume3D,
    moving: &Volume3D,
    f: &DisplacementField,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(loss_terms(fixed, moving, f, cfg)?.total)
}

/// Objective values and `dL_total / du` in one pass.
pub fn loss_and_grad(
    fixed: &Volume3D,
    moving: &Volume3D,
    f: &DisplacementField,
    cfg: &LossConfig,
) -> Result<(LossTerms, DisplacementField)> {
    cfg.validate()?;
    check_same(fixed.dims(), moving.dims())?;
    let dims = fixed.dims();
    let n = voxel_count(dims);
    let n3 = (cfg.window.pow(3)) as f64;
    let eps = cfg.epsilon;

    let (warped, dwarp) = warp_image_with_gradient(moving, f)?;
    let fx = fixed.data();
    let wp = warped.data();
    let sums = WindowSums::new(fx, wp, dims, cfg.window);

    // Per-window partials of -cc with respect to S_w, S_fw and S_ww.
    let (cc, partials): (Vec<f64>, Vec<[f64; 3]>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = sums.moments(i, n3, eps);
            let cc = x * x / (y * z);
            let g_fw = -2.0 * x / (y * z);
            let g_ww = x * x / (y * z * z);
            let g_w = g_fw * (-sums.f[i] / n3) + g_ww * (-2.0 * sums.w[i] / n3);
            (cc, [g_w, g_fw, g_ww])
        })
        .unzip();
    first_non_finite(&cc, dims, "local correlation")?;

    let split = |k: usize| -> Vec<f64> { partials.iter().map(|g| g[k]).collect() };
    let b_w = box_sum(&split(0), dims, cfg.window);
    let b_fw = box_sum(&split(1), dims, cfg.window);
    let b_ww = box_sum(&split(2), dims, cfg.window);

    let d_img: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|q| b_w[q] + fx[q] * b_fw[q] + 2.0 * wp[q] * b_ww[q])
        .collect();
    first_non_finite(&d_img, dims, "similarity gradient")?;

    let mut grad = smoothness_grad(f, cfg.lambda);
    for c in 0..3 {
        grad[c * n..(c + 1) * n]
            .par_iter_mut()
            .enumerate()
            .for_each(|(q, g)| *g += d_img[q] * dwarp[q][c]);
    }
    for c in 0..3 {
        first_non_finite(&grad[c * n..(c + 1) * n], dims, "loss gradient")?;
    }

    let similarity = -cc.iter().sum::<f64>();
    let smoothness = smoothness_loss(f);
    let terms = LossTerms {
        total: similarity + cfg.lambda * smoothness,
        similarity,
        smoothness,
    };
    Ok((terms, DisplacementField::from_planar(dims, f.spacing(), grad)?))
}

/// `dL_total / du` at every voxel and component.
pub fn total_loss_grad(
    fixed: &Volume3D,
    moving: &Volume3D,
    f: &DisplacementField,
    cfg: &LossConfig,
) -> Result<DisplacementField> {
    Ok(loss_and_grad(fixed, moving, f, cfg)?.1)
}
