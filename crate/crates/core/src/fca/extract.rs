use num_complex::Complex64;
use rayon::prelude::*;

use super::layers::{conv3d, layer_norm, linear};
use super::weights::{extractor_layout, WeightSet};
use super::{FcaConfig, TokenGrid};
use crate::dfrft::{frft_3d, Frft3dPlans, FrftOrder, PHASE_FLOOR};
use crate::error::{Error, Result};
use crate::volume::{ComplexVolume3D, Dims};

/// FrFT orders of the 0°, 45°, 90° and log-magnitude branches.
pub const BRANCH_ORDERS: [f64; 4] = [0.0, 0.5, 1.0, 1.0];

/// Raw (pre-normalization) outputs of the four branches, `alpha C` channels
/// each, plus the branch input and the untouched skip path.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutputs {
    pub normed: Vec<f64>,
    pub frft0: Vec<f64>,
    pub frft45: Vec<f64>,
    pub frft90: Vec<f64>,
    pub log: Vec<f64>,
    pub skip: Vec<f64>,
    pub branch_channels: usize,
}

/// Transforms every channel of `(tokens, ch)` data over the spatial grid.
fn transform_channels(
    data: &[Complex64],
    dims: Dims,
    ch: usize,
    p: FrftOrder,
    plans: &Frft3dPlans,
) -> Result<Vec<Complex64>> {
    let n = data.len() / ch;
    let per_channel = (0..ch)
        .into_par_iter()
        .map(|c| {
            let v = ComplexVolume3D::new(dims, (0..n).map(|i| data[i * ch + c]).collect())?;
            frft_3d(&v, p, plans).map(ComplexVolume3D::into_data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for (c, col) in per_channel.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * ch + c] = *v;
        }
    }
    Ok(out)
}

fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

fn slice_channels(data: &[f64], c: usize, keep: usize) -> Vec<f64> {
    if keep == c {
        return data.to_vec();
    }
    data.chunks(c).flat_map(|t| t[..keep].iter().copied()).collect()
}

/// 45° / 90° branch: real and imaginary parts stacked to `2a` channels around
/// the pointwise convolution, re-paired for the inverse transform.
fn complex_branch(
    x: &[f64],
    dims: Dims,
    a: usize,
    p: FrftOrder,
    name: &str,
    w: &WeightSet,
    plans: &Frft3dPlans,
) -> Result<Vec<f64>> {
    let spec = transform_channels(&to_complex(x), dims, a, p, plans)?;
    let stacked: Vec<f64> = spec
        .chunks(a)
        .flat_map(|t| t.iter().map(|c| c.re).chain(t.iter().map(|c| c.im)))
        .collect();
    let mut y = conv3d(
        &stacked,
        dims,
        w.get(&format!("{name}.kernel"))?,
        w.get(&format!("{name}.bias"))?,
    );
    relu(&mut y);
    let paired: Vec<Complex64> = y
        .chunks(2 * a)
        .flat_map(|t| (0..a).map(move |c| Complex64::new(t[c], t[a + c])))
        .collect();
    let back = transform_channels(&paired, dims, a, p.inverse(), plans)?;
    Ok(back.iter().map(|c| c.re).collect())
}

/// Log-magnitude branch on the order-1 spectrum; the phase bypasses the
/// convolution and is recombined before the inverse transform.
fn log_branch(
    x: &[f64],
    dims: Dims,
    a: usize,
    name: &str,
    w: &WeightSet,
    plans: &Frft3dPlans,
) -> Result<Vec<f64>> {
    let p = FrftOrder::new(BRANCH_ORDERS[3]);
    let spec = transform_channels(&to_complex(x), dims, a, p, plans)?;
    let (mag, phase): (Vec<f64>, Vec<Complex64>) = spec
        .iter()
        .map(|c| {
            let r = c.norm();
            let ph = if r < PHASE_FLOOR {
                Complex64::new(1.0, 0.0)
            } else {
                c / r
            };
            (r.ln_1p(), ph)
        })
        .unzip();
    let mut y = conv3d(
        &mag,
        dims,
        w.get(&format!("{name}.kernel"))?,
        w.get(&format!("{name}.bias"))?,
    );
    relu(&mut y);
    let rec: Vec<Complex64> = y.iter().zip(&phase).map(|(&m, &ph)| ph * m.exp_m1()).collect();
    let back = transform_channels(&rec, dims, a, p.inverse(), plans)?;
    Ok(back.iter().map(|c| c.re).collect())
}

fn norm_params<'a>(w: &'a WeightSet, name: &str) -> Result<(&'a [f64], &'a [f64])> {
    Ok((
        w.get(&format!("{name}.scale"))?.data(),
        w.get(&format!("{name}.offset"))?.data(),
    ))
}

/// Runs the four branches of the extractor under `prefix`.
pub fn extract_branches(
    t: &TokenGrid,
    cfg: &FcaConfig,
    w: &WeightSet,
    prefix: &str,
    plans: &Frft3dPlans,
) -> Result<BranchOutputs> {
    let c = t.channels();
    let dims = t.dims();
    w.audit(&extractor_layout(prefix, c, cfg)?)?;
    if plans.dims() != dims {
        return Err(Error::DimsMismatch(plans.dims(), dims));
    }
    let a = cfg.branch_channels(c)?;
    let (s, o) = norm_params(w, &format!("{prefix}.norm_in"))?;
    let normed = layer_norm(&slice_channels(t.data(), c, a), a, s, o);

    let x = &normed;
    let ((frft0, frft45), (frft90, log)) = rayon::join(
        || {
            rayon::join(
                || -> Result<Vec<f64>> {
                    let b = format!("{prefix}.b0");
                    let mut y = conv3d(
                        x,
                        dims,
                        w.get(&format!("{b}.kernel"))?,
                        w.get(&format!("{b}.bias"))?,
                    );
                    relu(&mut y);
                    Ok(y)
                },
                || {
                    let p = FrftOrder::new(BRANCH_ORDERS[1]);
                    complex_branch(x, dims, a, p, &format!("{prefix}.b45"), w, plans)
                },
            )
        },
        || {
            rayon::join(
                || {
                    let p = FrftOrder::new(BRANCH_ORDERS[2]);
                    complex_branch(x, dims, a, p, &format!("{prefix}.b90"), w, plans)
                },
                || log_branch(x, dims, a, &format!("{prefix}.blog"), w, plans),
            )
        },
    );
    Ok(BranchOutputs {
        frft0: frft0?,
        frft45: frft45?,
        frft90: frft90?,
        log: log?,
        normed,
        skip: t.data().to_vec(),
        branch_channels: a,
    })
}

/// Four-branch FrFT feature extractor with skip connection and pointwise
/// fusion back to the input channel count.
pub fn frft_feature_extract(
    t: &TokenGrid,
    cfg: &FcaConfig,
    w: &WeightSet,
    prefix: &str,
    plans: &Frft3dPlans,
) -> Result<TokenGrid> {
    let b = extract_branches(t, cfg, w, prefix, plans)?;
    let (a, c) = (b.branch_channels, t.channels());
    let normed = |name: &str, x: &[f64], ch: usize| -> Result<Vec<f64>> {
        let (s, o) = norm_params(w, &format!("{prefix}.{name}"))?;
        Ok(layer_norm(x, ch, s, o))
    };
    let parts = [
        (normed("bn0", &b.frft0, a)?, a),
        (normed("bn45", &b.frft45, a)?, a),
        (normed("bn90", &b.frft90, a)?, a),
        (normed("bnlog", &b.log, a)?, a),
        (normed("bnskip", &b.skip, c)?, c),
    ];
    let width = 4 * a + c;
    let mut cat = Vec::with_capacity(t.n_tokens() * width);
    for i in 0..t.n_tokens() {
        for (p, ch) in &parts {
            cat.extend_from_slice(&p[i * ch..(i + 1) * ch]);
        }
    }
    let fused = linear(
        &cat,
        w.get(&format!("{prefix}.fuse.kernel"))?,
        Some(w.get(&format!("{prefix}.fuse.bias"))?),
    );
    TokenGrid::new(t.level(), t.dims(), c, fused)
}
