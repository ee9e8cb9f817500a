//! Analytic phantom pairs with known ground-truth deformation.
//!
//! The moving image is a smooth two-ellipsoid phantom evaluated at voxel
//! centres; the fixed image is the same phantom evaluated at `p + u_true(p)`,
//! so `I_f(p) = I_m(p + u_true(p))` holds exactly in the continuum and no
//! resampling bias enters the pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMap, Spacing, Volume3D};
use crate::warp::DisplacementField;

/// Largest swirl amplitude for which `|grad u| < 1` everywhere, which rules out
/// folding: `A (1 + 2/e) < 1`.
pub const SWIRL_LIMIT: f64 = 1.0 / (1.0 + 2.0 / std::f64::consts::E);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Constant displacement `(z, y, x)` in voxels.
    Translate([f64; 3]),
    /// Isotropic scaling about the grid centre; `u = (s - 1)(p - c)`.
    Scale(f64),
    /// In-plane rotation by `A exp(-r^2 / 2 sigma^2)` radians about the z axis
    /// through the centre.
    Swirl(f64),
}

impl SynthKind {
    /// Parses a kind name and its magnitude string (`"0,2,3"` for translate,
    /// a scalar otherwise).
    pub fn parse(kind: &str, magnitude: &str) -> Result<Self> {
        let scalar = || -> Result<f64> {
            magnitude
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("magnitude `{magnitude}` is not a number")))
        };
        let k = match kind {
            "translate" => {
                let v: Vec<f64> = magnitude
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("translation `{magnitude}` is not z,y,x")))?;
                let t: [f64; 3] = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("translation `{magnitude}` needs 3 components")))?;
                SynthKind::Translate(t)
            }
            "scale" => SynthKind::Scale(scalar()?),
            "swirl" => SynthKind::Swirl(scalar()?),
            other => {
                return Err(Error::Config(format!(
                    "unknown kind `{other}` (expected translate, scale or swirl)"
                )))
            }
        };
        k.check()?;
        Ok(k)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Translate(_) => "translate",
            SynthKind::Scale(_) => "scale",
            SynthKind::Swirl(_) => "swirl",
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            SynthKind::Translate(t) => t.iter().all(|v| v.is_finite()),
            SynthKind::Scale(s) => s > 0.0 && s < 2.0,
            SynthKind::Swirl(a) => a.is_finite() && a.abs() < SWIRL_LIMIT,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{self:?} exceeds the fold-free bound (scale in (0, 2), |swirl| < {SWIRL_LIMIT:.4})"
            )))
        }
    }
}

/// Fixed/moving images, ground truth and labels of one synthetic pair.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub fixed: Volume3D,
    pub moving: Volume3D,
    pub truth: DisplacementField,
    pub fixed_labels: LabelMap,
    pub moving_labels: LabelMap,
}

struct Ellipsoid {
    centre: [f64; 3],
    radii: [f64; 3],
    level: f64,
}

impl Ellipsoid {
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.centre[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

struct Phantom {
    parts: [Ellipsoid; 2],
    dims: Dims,
    /// `(amplitude, wave vector, phase)` of the smooth texture.
    waves: Vec<(f64, [f64; 3], f64)>,
}

const EDGE_WIDTH: f64 = 0.04;

impl Phantom {
    fn new(dims: Dims, seed: u64) -> Self {
        let d = dims.map(|n| n as f64);
        let c = d.map(|n| (n - 1.0) / 2.0);
        let parts = [
            Ellipsoid {
                centre: [c[0], c[1] - 0.22 * d[1], c[2] - 0.03 * d[2]],
                radii: [0.40 * d[0], 0.21 * d[1], 0.31 * d[2]],
                level: 0.55,
            },
            Ellipsoid {
                centre: [c[0], c[1] + 0.23 * d[1], c[2] + 0.04 * d[2]],
                radii: [0.40 * d[0], 0.19 * d[1], 0.27 * d[2]],
                level: 0.8,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..6)
            .map(|_| {
                let k = [0, 1, 2].map(|a| rng.gen_range(1.0..3.0) * std::f64::consts::TAU / d[a].max(4.0));
                (
                    rng.gen_range(0.02..0.05),
                    k,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self { parts, dims, waves }
    }

    fn texture(&self, p: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(amp, k, ph)| amp * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum()
    }

    fn intensity(&self, p: [f64; 3]) -> f64 {
        let ramp = 0.1 * p[1] / self.dims[1] as f64;
        let tex = self.texture(p);
        self.parts
            .iter()
            .map(|e| {
                let inside = 1.0 / (1.0 + ((e.rho(p) - 1.0) / EDGE_WIDTH).exp());
                inside * (e.level + ramp + tex)
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    fn label(&self, p: [f64; 3]) -> u32 {
        self.parts
            .iter()
            .position(|e| e.rho(p) <= 1.0)
            .map_or(0, |i| i as u32 + 1)
    }
}

fn truth_at(kind: SynthKind, dims: Dims, p: [f64; 3]) -> [f64; 3] {
    let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
    match kind {
        SynthKind::Translate(t) => t,
        SynthKind::Scale(s) => [0, 1, 2].map(|a| (s - 1.0) * (p[a] - c[a])),
        SynthKind::Swirl(amp) => {
            let sigma = 0.3 * dims[1].min(dims[2]) as f64;
            let (dy, dx) = (p[1] - c[1], p[2] - c[2]);
            let theta = amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            let (s, co) = theta.sin_cos();
            [0.0, co * dy - s * dx - dy, s * dy + co * dx - dx]
        }
    }
}

/// Builds a synthetic pair. Magnitudes beyond the fold-free bound of the kind
/// are rejected.
pub fn synth_pair(kind: SynthKind, dims: Dims, spacing: Spacing, seed: u64) -> Result<SynthPair> {
    kind.check()?;
    let ph = Phantom::new(dims, seed);
    let at = |z: usize, y: usize, x: usize| [z as f64, y as f64, x as f64];
    let truth = DisplacementField::from_fn(dims, spacing, |z, y, x| truth_at(kind, dims, at(z, y, x)))?;
    let mapped = |z: usize, y: usize, x: usize| {
        let p = at(z, y, x);
        let u = truth_at(kind, dims, p);
        [p[0] + u[0], p[1] + u[1], p[2] + u[2]]
    };
    Ok(SynthPair {
        moving: Volume3D::from_fn(dims, spacing, |z, y, x| ph.intensity(at(z, y, x)))?,
        fixed: Volume3D::from_fn(dims, spacing, |z, y, x| ph.intensity(mapped(z, y, x)))?,
        moving_labels: LabelMap::from_fn(dims, spacing, |z, y, x| ph.label(at(z, y, x)))?,
        fixed_labels: LabelMap::from_fn(dims, spacing, |z, y, x| ph.label(mapped(z, y, x)))?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{dsc, folding_fraction};
    use crate::volume::UNIT_SPACING;
    use crate::warp::{jacobian_determinant, warp_labels};

    const DIMS: Dims = [16, 64, 64];

    #[test]
    fn parse_kinds() {
        assert_eq!(
            SynthKind::parse("translate", "0,2,3").unwrap(),
            SynthKind::Translate([0.0, 2.0, 3.0])
        );
        assert_eq!(SynthKind::parse("scale", "1.1").unwrap(), SynthKind::Scale(1.1));
        assert!(SynthKind::parse("scale", "2.5").is_err());
        assert!(SynthKind::parse("swirl", "0.6").is_err());
        assert!(SynthKind::parse("twist", "1").is_err());
        assert!(SynthKind::parse("translate", "1,2").is_err());
    }

    #[test]
    fn translate_truth_is_constant() {
        let p = synth_pair(SynthKind::Translate([0.0, 2.0, 3.0]), DIMS, UNIT_SPACING, 7).unwrap();
        for i in 0..p.truth.len() {
            assert_eq!(p.truth.at(i), [0.0, 2.0, 3.0]);
        }
        assert_eq!(folding_fraction(&p.truth).unwrap(), 0.0);
        // integer shift: the exact truth reproduces the fixed labels
        let w = warp_labels(&p.moving_labels, &p.truth).unwrap();
        for l in [1, 2] {
            assert!(dsc(&w, &p.fixed_labels, l).unwrap() > 0.99);
        }
        let (lo, hi) = p.fixed.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn scale_truth_is_affine() {
        let p = synth_pair(SynthKind::Scale(1.1), DIMS, UNIT_SPACING, 7).unwrap();
        let j = jacobian_determinant(&p.truth).unwrap();
        for (i, d) in j.data().iter().enumerate() {
            let c = crate::volume::coords(DIMS, i);
            if (0..3).all(|a| c[a] > 0 && c[a] + 1 < DIMS[a]) {
                assert!((d - 1.331).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn swirl_is_fold_free() {
        let p = synth_pair(SynthKind::Swirl(0.5), DIMS, UNIT_SPACING, 3).unwrap();
        assert_eq!(folding_fraction(&p.truth).unwrap(), 0.0);
        assert!(p.truth.mean_norm() > 0.5);
    }

    #[test]
    fn both_labels_present_and_seed_matters() {
        let a = synth_pair(SynthKind::Scale(1.1), DIMS, UNIT_SPACING, 1).unwrap();
        let b = synth_pair(SynthKind::Scale(1.1), DIMS, UNIT_SPACING, 2).unwrap();
        assert_eq!(
            a.moving_labels.label_set().iter().copied().collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_ne!(a.moving, b.moving);
        assert_eq!(a.moving_labels, b.moving_labels);
    }
}
