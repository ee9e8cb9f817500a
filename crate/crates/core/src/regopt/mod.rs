//! Direct variational registration: the displacement field itself is
//! optimized under the total loss with Adam, coarse to fine.

mod synth;

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
use std::time::Instant;
// std::time::Instant panics on bare wasm32
#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
use web_time::Instant;

pub use synth::{synth_pair, SynthKind, SynthPair, SWIRL_LIMIT};

use crate::error::{Error, Result};
use crate::losses::{loss_and_grad, LossConfig, LossTerms};
use crate::metrics::{evaluate, MetricReport};
use crate::volume::{coords, voxel_count, Dims, LabelMap, Volume3D};
use crate::warp::{sample_trilinear, warp_labels, DisplacementField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    /// Total iterations over all pyramid levels.
    pub iterations: usize,
    /// Adam step size in voxels of the current level.
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub pyramid_levels: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            step_size: 0.25,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            pyramid_levels: 2,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be > 0, got {}",
                self.step_size
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam epsilon must be > 0".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        Ok(())
    }

    /// Iterations per level, coarsest first; the remainder goes to the finest.
    pub fn schedule(&self) -> Vec<usize> {
        let l = self.pyramid_levels;
        let base = self.iterations / l;
        let mut s = vec![base; l];
        s[l - 1] += self.iterations - base * l;
        s
    }
}

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Pyramid level, 0 = full resolution.
    pub level: usize,
    pub terms: LossTerms,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub field: DisplacementField,
    pub loss_trace: Vec<TraceEntry>,
    pub metrics: Option<MetricReport>,
    pub wall_time: f64,
}

impl RegistrationResult {
    /// Fills `metrics` by warping the moving labels with the recovered field.
    pub fn evaluate_labels(&mut self, fixed: &LabelMap, moving: &LabelMap) -> Result<&MetricReport> {
        let warped = warp_labels(moving, &self.field)?;
        Ok(self.metrics.insert(evaluate(fixed, &warped, &self.field)?))
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,level,total,similarity,smoothness\n");
        for e in &self.loss_trace {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.iteration, e.level, e.terms.total, e.terms.similarity, e.terms.smoothness
            ));
        }
        s
    }
}

fn coarse_dims(d: Dims) -> Dims {
    d.map(|n| if n > 1 { n.div_ceil(2) } else { 1 })
}

/// 2x average pooling (axes of length 1 are kept).
pub fn downsample(v: &Volume3D) -> Result<Volume3D> {
    let d = v.dims();
    let cd = coarse_dims(d);
    let f = d.map(|n| if n > 1 { 2 } else { 1 });
    let sp = v.spacing();
    let spacing = [0, 1, 2].map(|a| sp[a] * f[a] as f64);
    Volume3D::from_fn(cd, spacing, |z, y, x| {
        let (mut acc, mut cnt) = (0.0, 0usize);
        for zz in z * f[0]..((z + 1) * f[0]).min(d[0]) {
            for yy in y * f[1]..((y + 1) * f[1]).min(d[1]) {
                for xx in x * f[2]..((x + 1) * f[2]).min(d[2]) {
                    acc += v.get(zz, yy, xx);
                    cnt += 1;
                }
            }
        }
        acc / cnt as f64
    })
}

/// Centre-aligned trilinear upsampling of a coarse field onto `dims`, with
/// displacements doubled along every pooled axis.
pub fn upsample_field(f: &DisplacementField, dims: Dims) -> Result<DisplacementField> {
    let cd = f.dims();
    let factor = [0, 1, 2].map(|a| if dims[a] > 1 && cd[a] < dims[a] { 2.0 } else { 1.0 });
    let n = voxel_count(dims);
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        let p = coords(dims, i);
        let pos = [0, 1, 2].map(|a| (p[a] as f64 + 0.5) / factor[a] - 0.5);
        for c in 0..3 {
            data[c * n + i] = sample_trilinear(f.component(c), cd, pos) * factor[c];
        }
    }
    DisplacementField::from_planar(dims, f.spacing(), data)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], cfg: &RegistrationConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= cfg.step_size * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Registers `moving` onto `fixed`. Returns the field `u` with
/// `I_m(p + u(p)) ~ I_f(p)`.
pub fn register(fixed: &Volume3D, moving: &Volume3D, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    if fixed.dims() != moving.dims() {
        return Err(Error::DimsMismatch(fixed.dims(), moving.dims()));
    }
    let start = Instant::now();

    let mut pyramid = vec![(fixed.clone(), moving.clone())];
    for _ in 1..cfg.pyramid_levels {
        let (f, m) = pyramid.last().unwrap();
        pyramid.push((downsample(f)?, downsample(m)?));
    }

    let schedule = cfg.schedule();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut field: Option<DisplacementField> = None;
    for (k, iters) in schedule.iter().enumerate() {
        let level = cfg.pyramid_levels - 1 - k;
        let (f, m) = &pyramid[level];
        let mut u = match field.take() {
            None => DisplacementField::zeros(f.dims(), f.spacing())?,
            Some(prev) => upsample_field(&prev, f.dims())?,
        };
        let mut data = u.planar().to_vec();
        let mut adam = Adam::new(data.len());
        for _ in 0..*iters {
            let iteration = trace.len();
            let (terms, grad) = match loss_and_grad(f, m, &u, &cfg.loss) {
                Ok(v) => v,
                Err(Error::NonFiniteAt { .. }) => return Err(Error::Diverged(iteration)),
                Err(e) => return Err(e),
            };
            if !terms.total.is_finite() {
                return Err(Error::Diverged(iteration));
            }
            trace.push(TraceEntry {
                iteration,
                level,
                terms,
            });
            adam.step(&mut data, grad.planar(), cfg);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(iteration));
            }
            u = DisplacementField::from_planar(f.dims(), f.spacing(), data.clone())?;
        }
        field = Some(u);
    }
    let mut field = field.expect("at least one level");
    if field.spacing() != fixed.spacing() {
        field = DisplacementField::from_planar(field.dims(), fixed.spacing(), field.into_planar())?;
    }
    Ok(RegistrationResult {
        field,
        loss_trace: trace,
        metrics: None,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::UNIT_SPACING;

    #[test]
    fn schedule_splits_iterations() {
        let mut c = RegistrationConfig::default();
        assert_eq!(c.schedule(), vec![100, 100]);
        c.iterations = 7;
        c.pyramid_levels = 3;
        assert_eq!(c.schedule(), vec![2, 2, 3]);
    }

    #[test]
    fn config_validation() {
        let ok = RegistrationConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            RegistrationConfig { iterations: 0, ..ok },
            RegistrationConfig { step_size: 0.0, ..ok },
            RegistrationConfig { beta1: 1.0, ..ok },
            RegistrationConfig {
                pyramid_levels: 0,
                ..ok
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn pooling_and_upsampling() {
        let v = Volume3D::from_fn([4, 6, 1], UNIT_SPACING, |z, y, _| (z * 10 + y) as f64).unwrap();
        let d = downsample(&v).unwrap();
        assert_eq!(d.dims(), [2, 3, 1]);
        assert_eq!(d.get(0, 0, 0), 5.5);
        assert_eq!(d.spacing(), [2.0, 2.0, 1.0]);

        let f = DisplacementField::constant([2, 3, 1], UNIT_SPACING, [0.5, -1.0, 0.25]).unwrap();
        let up = upsample_field(&f, [4, 6, 1]).unwrap();
        for i in 0..up.len() {
            assert_eq!(up.at(i), [1.0, -2.0, 0.25]);
        }
    }

    #[test]
    fn trace_length_matches_iterations() {
        let dims = [4, 8, 8];
        let f = Volume3D::from_fn(dims, UNIT_SPACING, |z, y, x| {
            ((z + 2 * y + 3 * x) as f64 * 0.3).sin() * 0.5 + 0.5
        })
        .unwrap();
        let cfg = RegistrationConfig {
            iterations: 9,
            loss: LossConfig {
                window: 3,
                ..LossConfig::default()
            },
            ..RegistrationConfig::default()
        };
        let r = register(&f, &f, &cfg).unwrap();
        assert_eq!(r.loss_trace.len(), 9);
        assert_eq!(r.loss_trace[0].level, 1);
        assert_eq!(r.loss_trace[8].level, 0);
        assert_eq!(r.field.dims(), dims);
        assert!(r.trace_csv().lines().count() == 10);
    }
}
