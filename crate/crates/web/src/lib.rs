//! Browser demo: fractional Fourier spectra of a phantom slice, a swirl/pinch
//! warp with its Jacobian map, and a small live registration.
//!
//! Every image crosses the boundary as row-major RGBA bytes ready for
//! `ImageData`. The plain functions are what the `#[wasm_bindgen]` wrappers
//! call, so they can be tested natively.

use fractfield_core::dfrft::{frft_3d, Frft3dPlans, FrftOrder};
use fractfield_core::metrics::{dsc, folding_fraction};
use fractfield_core::regopt::{register, synth_pair, RegistrationConfig, SynthKind};
use fractfield_core::volume::{Volume3D, UNIT_SPACING};
use fractfield_core::warp::{jacobian_determinant, warp_image, warp_labels};
use fractfield_core::{DisplacementField, LabelMap, Result};
use wasm_bindgen::prelude::*;

const MAX_SIZE: usize = 256;

fn check_size(size: usize) -> Result<()> {
    if !(8..=MAX_SIZE).contains(&size) {
        return Err(fractfield_core::Error::Config(format!(
            "image size must lie in 8..={MAX_SIZE}, got {size}"
        )));
    }
    Ok(())
}

/// Min-max scaled grey levels; a constant input maps to black.
pub fn gray_rgba(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(4 * values.len());
    for &v in values {
        let g = if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        };
        out.extend_from_slice(&[g, g, g, 255]);
    }
    out
}

/// Jacobian determinants: white at 1, blue for compression, orange for
/// expansion, saturated red where the mapping folds (`det <= 0`).
pub fn jacobian_rgba(det: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * det.len());
    for &d in det {
        let px = if d <= 0.0 {
            [220, 20, 30]
        } else {
            let t = d.ln().clamp(-1.0, 1.0);
            let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
            if t < 0.0 {
                [fade(40.0), fade(90.0), fade(200.0)]
            } else {
                [fade(240.0), fade(140.0), fade(20.0)]
            }
        };
        out.extend_from_slice(&[px[0], px[1], px[2], 255]);
    }
    out
}

fn slice(v: &Volume3D, z: usize) -> Vec<f64> {
    let [_, h, w] = v.dims();
    v.data()[z * h * w..(z + 1) * h * w].to_vec()
}

/// A `size x size` slice of the two-ellipsoid phantom.
pub fn phantom(size: usize, seed: u64) -> Result<Volume3D> {
    check_size(size)?;
    let pair = synth_pair(
        SynthKind::Translate([0.0; 3]),
        [2, size, size],
        UNIT_SPACING,
        seed,
    )?;
    Volume3D::new([1, size, size], UNIT_SPACING, slice(&pair.moving, 0))
}

/// `|X|` (or `log(1 + |X|)`) of the order-`p` transform of the phantom slice.
pub fn spectrum(size: usize, seed: u64, order: f64, log: bool) -> Result<Vec<f64>> {
    let v = phantom(size, seed)?;
    let plans = Frft3dPlans::for_dims(v.dims())?;
    let x = frft_3d(&v.to_complex(), FrftOrder::new(order), &plans)?;
    Ok(x.data()
        .iter()
        .map(|c| if log { c.norm().ln_1p() } else { c.norm() })
        .collect())
}

/// In-plane swirl by `A g(r)` radians combined with a radial pinch
/// `r -> r (1 + k g(r))`, where `g(r) = exp(-r^2 / 2 sigma^2)`, constant in z.
/// The swirl alone preserves area; the pinch folds the centre for `k < -1`
/// and a ring around `r = sqrt(3) sigma` for `k > 2 e^1.5`.
pub fn swirl_field(
    dims: [usize; 3],
    amplitude: f64,
    pinch: f64,
    sigma_frac: f64,
) -> Result<DisplacementField> {
    let c = [(dims[1] as f64 - 1.0) / 2.0, (dims[2] as f64 - 1.0) / 2.0];
    let sigma = sigma_frac * dims[1].min(dims[2]) as f64;
    DisplacementField::from_fn(dims, UNIT_SPACING, |_, y, x| {
        let (dy, dx) = (y as f64 - c[0], x as f64 - c[1]);
        let g = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        let r = 1.0 + pinch * g;
        let (s, co) = (amplitude * g).sin_cos();
        [0.0, r * (co * dy - s * dx) - dy, r * (s * dy + co * dx) - dx]
    })
}

pub struct SwirlOutcome {
    pub warped: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub folding_pct: f64,
}

pub fn swirl(size: usize, seed: u64, amplitude: f64, pinch: f64, sigma_frac: f64) -> Result<SwirlOutcome> {
    let img = phantom(size, seed)?;
    // two identical slices so the Jacobian has a z neighbour
    let stack = Volume3D::new([2, size, size], UNIT_SPACING, [img.data(), img.data()].concat())?;
    let f = swirl_field([2, size, size], amplitude, pinch, sigma_frac)?;
    Ok(SwirlOutcome {
        warped: slice(&warp_image(&stack, &f)?, 0),
        jacobian: slice(&jacobian_determinant(&f)?, 0),
        folding_pct: folding_fraction(&f)?,
    })
}

pub struct RegistrationOutcome {
    pub fixed: Vec<f64>,
    pub moving: Vec<f64>,
    pub warped: Vec<f64>,
    pub dice_before: f64,
    pub dice_after: f64,
    pub folding_pct: f64,
    pub loss_trace: Vec<f64>,
}

fn mean_dice(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    Ok((dsc(a, b, 1)? + dsc(a, b, 2)?) / 2.0)
}

/// Registers a thin synthetic pair (`kind` = translate | scale | swirl) and
/// reports the middle slice.
pub fn register_pair(
    kind: &str,
    magnitude: &str,
    size: usize,
    iterations: usize,
    seed: u64,
) -> Result<RegistrationOutcome> {
    check_size(size)?;
    let kind = SynthKind::parse(kind, magnitude)?;
    let pair = synth_pair(kind, [4, size, size], UNIT_SPACING, seed)?;
    let cfg = RegistrationConfig {
        iterations,
        ..RegistrationConfig::default()
    };
    let r = register(&pair.fixed, &pair.moving, &cfg)?;
    let warped_labels = warp_labels(&pair.moving_labels, &r.field)?;
    Ok(RegistrationOutcome {
        fixed: slice(&pair.fixed, 2),
        moving: slice(&pair.moving, 2),
        warped: slice(&warp_image(&pair.moving, &r.field)?, 2),
        dice_before: mean_dice(&pair.fixed_labels, &pair.moving_labels)?,
        dice_after: mean_dice(&pair.fixed_labels, &warped_labels)?,
        folding_pct: folding_fraction(&r.field)?,
        loss_trace: r.loss_trace.iter().map(|e| e.terms.total).collect(),
    })
}

fn js(e: fractfield_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = phantomImage)]
pub fn phantom_image(size: usize, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
    Ok(gray_rgba(phantom(size, seed.into()).map_err(js)?.data()))
}

#[wasm_bindgen(js_name = frftImage)]
pub fn frft_image(size: usize, seed: u32, order: f64, log: bool) -> std::result::Result<Vec<u8>, JsError> {
    Ok(gray_rgba(&spectrum(size, seed.into(), order, log).map_err(js)?))
}

#[wasm_bindgen]
pub struct SwirlView {
    warped: Vec<u8>,
    jacobian: Vec<u8>,
    folding_pct: f64,
}

#[wasm_bindgen]
impl SwirlView {
    #[wasm_bindgen(getter)]
    pub fn warped(&self) -> Vec<u8> {
        self.warped.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn jacobian(&self) -> Vec<u8> {
        self.jacobian.clone()
    }

    #[wasm_bindgen(getter, js_name = foldingPct)]
    pub fn folding_pct(&self) -> f64 {
        self.folding_pct
    }
}

#[wasm_bindgen(js_name = swirlImage)]
pub fn swirl_image(
    size: usize,
    seed: u32,
    amplitude: f64,
    pinch: f64,
    sigma_frac: f64,
) -> std::result::Result<SwirlView, JsError> {
    let o = swirl(size, seed.into(), amplitude, pinch, sigma_frac).map_err(js)?;
    Ok(SwirlView {
        warped: gray_rgba(&o.warped),
        jacobian: jacobian_rgba(&o.jacobian),
        folding_pct: o.folding_pct,
    })
}

#[wasm_bindgen]
pub struct RegistrationView {
    inner: RegistrationOutcome,
}

#[wasm_bindgen]
impl RegistrationView {
    #[wasm_bindgen(getter)]
    pub fn fixed(&self) -> Vec<u8> {
        gray_rgba(&self.inner.fixed)
    }

    #[wasm_bindgen(getter)]
    pub fn moving(&self) -> Vec<u8> {
        gray_rgba(&self.inner.moving)
    }

    #[wasm_bindgen(getter)]
    pub fn warped(&self) -> Vec<u8> {
        gray_rgba(&self.inner.warped)
    }

    #[wasm_bindgen(getter, js_name = diceBefore)]
    pub fn dice_before(&self) -> f64 {
        self.inner.dice_before
    }

    #[wasm_bindgen(getter, js_name = diceAfter)]
    pub fn dice_after(&self) -> f64 {
        self.inner.dice_after
    }

    #[wasm_bindgen(getter, js_name = foldingPct)]
    pub fn folding_pct(&self) -> f64 {
        self.inner.folding_pct
    }

    #[wasm_bindgen(getter, js_name = lossTrace)]
    pub fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace.clone()
    }
}

#[wasm_bindgen(js_name = registerPair)]
pub fn register_pair_js(
    kind: &str,
    magnitude: &str,
    size: usize,
    iterations: usize,
    seed: u32,
) -> std::result::Result<RegistrationView, JsError> {
    Ok(RegistrationView {
        inner: register_pair(kind, magnitude, size, iterations, seed.into()).map_err(js)?,
    })
}
