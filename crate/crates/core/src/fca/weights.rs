use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FcaConfig, PatchEmbedConfig};
use crate::error::{Error, Result};
use crate::volume::Dims;

/// Per-branch kernel-weight factors of `alpha^2 C^2`: 0°, 45°, 90°, log, total.
pub const BRANCH_PARAM_FACTORS: [u64; 5] = [27, 4, 4, 1, 36];

const INIT_RANGE: f64 = 0.02;

/// Dense real tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// `n x n` identity, or the leading `rows x cols` block of one.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut t = Self::zeros(vec![rows, cols]);
        for i in 0..rows.min(cols) {
            t.data[i * cols + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Expected tensor names and shapes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    entries: BTreeMap<String, Vec<usize>>,
}

impl Layout {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        self.entries.insert(name.into(), shape);
    }

    pub fn merge(mut self, other: Layout) -> Self {
        self.entries.extend(other.entries);
        self
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// One line of a shape audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub numel: usize,
}

/// Named weights for the FCA machinery.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded uniform `[-0.02, 0.02]` for kernels and biases; norm scales start
    /// at one and offsets at zero.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".scale") {
                    Tensor::filled(shape.to_vec(), 1.0)
                } else if name.ends_with(".offset") {
                    Tensor::zeros(shape.to_vec())
                } else {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect();
                    Tensor {
                        shape: shape.to_vec(),
                        data,
                    }
                };
                (name.to_string(), t)
            })
            .collect();
        Self { tensors }
    }

    /// Every tensor zero, norm scales one.
    pub fn zeros(layout: &Layout) -> Self {
        let tensors = layout
            .iter()
            .map(|(name, shape)| {
                let fill = if name.ends_with(".scale") { 1.0 } else { 0.0 };
                (name.to_string(), Tensor::filled(shape.to_vec(), fill))
            })
            .collect();
        Self { tensors }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::ShapeAudit(format!("missing tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::ShapeAudit(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Checks that every tensor in `layout` is present with the exact shape.
    /// Extra tensors are allowed (a set may serve several operations).
    pub fn audit(&self, layout: &Layout) -> Result<Vec<AuditRow>> {
        layout
            .iter()
            .map(|(name, shape)| {
                let t = self.get(name)?;
                if t.shape() != shape {
                    return Err(Error::ShapeAudit(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                Ok(AuditRow {
                    name: name.to_string(),
                    shape: shape.to_vec(),
                    numel: t.numel(),
                })
            })
            .collect()
    }
}

fn norm(layout: &mut Layout, name: &str, c: usize) {
    layout.insert(format!("{name}.scale"), vec![c]);
    layout.insert(format!("{name}.offset"), vec![c]);
}

fn conv(layout: &mut Layout, name: &str, k: usize, cin: usize, cout: usize) {
    layout.insert(format!("{name}.kernel"), vec![k, k, k, cin, cout]);
    layout.insert(format!("{name}.bias"), vec![cout]);
}

pub fn patch_embed_layout(cfg: &PatchEmbedConfig) -> Layout {
    let mut l = Layout::default();
    l.insert("patch.proj", vec![cfg.patch_volume(), cfg.embed_dim]);
    if cfg.bias {
        l.insert("patch.bias", vec![cfg.embed_dim]);
    }
    l
}

/// Feature-extractor tensors under `prefix` for `channels` input channels.
pub fn extractor_layout(prefix: &str, channels: usize, cfg: &FcaConfig) -> Result<Layout> {
    let a = cfg.branch_channels(channels)?;
    let mut l = Layout::default();
    norm(&mut l, &format!("{prefix}.norm_in"), a);
    conv(&mut l, &format!("{prefix}.b0"), cfg.spatial_kernel, a, a);
    conv(
        &mut l,
        &format!("{prefix}.b45"),
        cfg.spectral_kernel,
        2 * a,
        2 * a,
    );
    conv(
        &mut l,
        &format!("{prefix}.b90"),
        cfg.spectral_kernel,
        2 * a,
        2 * a,
    );
    conv(&mut l, &format!("{prefix}.blog"), cfg.spectral_kernel, a, a);
    for b in ["bn0", "bn45", "bn90", "bnlog"] {
        norm(&mut l, &format!("{prefix}.{b}"), a);
    }
    norm(&mut l, &format!("{prefix}.bnskip"), channels);
    l.insert(format!("{prefix}.fuse.kernel"), vec![4 * a + channels, channels]);
    l.insert(format!("{prefix}.fuse.bias"), vec![channels]);
    Ok(l)
}

pub fn attention_layout(prefix: &str, channels: usize) -> Layout {
    let mut l = Layout::default();
    for m in ["q", "k", "v", "out"] {
        l.insert(format!("{prefix}.attn.{m}"), vec![channels, channels]);
    }
    l.insert(format!("{prefix}.attn.out_bias"), vec![channels]);
    l
}

/// Both streams (`m`, `f`) of one block.
pub fn block_layout(channels: usize, cfg: &FcaConfig) -> Result<Layout> {
    cfg.validate_for(channels)?;
    let hidden = cfg.mlp_ratio * channels;
    let mut l = Layout::default();
    for s in ["m", "f"] {
        l = l.merge(extractor_layout(&format!("{s}.fe"), channels, cfg)?);
        l = l.merge(attention_layout(s, channels));
        norm(&mut l, &format!("{s}.norm"), channels);
        l.insert(format!("{s}.mlp.fc1"), vec![channels, hidden]);
        l.insert(format!("{s}.mlp.fc1_bias"), vec![hidden]);
        l.insert(format!("{s}.mlp.fc2"), vec![hidden, channels]);
        l.insert(format!("{s}.mlp.fc2_bias"), vec![channels]);
    }
    Ok(l)
}

/// 2x2x2 merge at `level` with `channels` inputs: `8C -> 2C`.
pub fn level_down_layout(level: usize, channels: usize) -> Layout {
    let mut l = Layout::default();
    l.insert(format!("down{level}.proj"), vec![8 * channels, 2 * channels]);
    l
}

/// Expansion from `level + 1` (2C channels) back to `level` (C channels).
pub fn level_up_layout(level: usize, channels: usize) -> Layout {
    let mut l = Layout::default();
    l.insert(format!("up{level}.expand"), vec![2 * channels, 8 * channels]);
    l.insert(format!("up{level}.fuse"), vec![2 * channels, channels]);
    l
}

/// Accepts `"1/3"`, `"1"` or a terminating decimal such as `"0.25"`.
pub fn parse_ratio(s: &str) -> Result<Ratio<u64>> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse `{s}` as a ratio"));
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 18 {
        return Err(bad());
    }
    let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return Err(bad());
    }
    let i: u64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let f: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse().map_err(|_| bad())?
    };
    let den = 10u64.pow(frac.len() as u32);
    Ok(Ratio::from_integer(i) + Ratio::new(f, den))
}

/// Exact branch weight counts `{27, 4, 4, 1, 36} * alpha^2 C^2`, defined for any
/// rational split.
pub fn branch_param_formula(channels: u64, alpha: Ratio<u64>) -> [Ratio<u64>; 5] {
    let ac = alpha * Ratio::from_integer(channels);
    let sq = ac * ac;
    BRANCH_PARAM_FACTORS.map(|f| sq * Ratio::from_integer(f))
}

/// Per-branch counts: 0°, 45°, 90°, log-magnitude, total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchCounts {
    pub frft0: u64,
    pub frft45: u64,
    pub frft90: u64,
    pub log: u64,
    pub total: u64,
}

impl BranchCounts {
    pub fn as_array(&self) -> [u64; 5] {
        [self.frft0, self.frft45, self.frft90, self.log, self.total]
    }

    fn scaled(self, k: u64) -> Self {
        Self {
            frft0: self.frft0 * k,
            frft45: self.frft45 * k,
            frft90: self.frft90 * k,
            log: self.log * k,
            total: self.total * k,
        }
    }
}

/// Branch convolution weights (biases excluded), counted from the kernel
/// shapes of the extractor layout.
pub fn count_branch_params(channels: usize, alpha: Ratio<u64>) -> Result<BranchCounts> {
    let cfg = FcaConfig {
        channel_coeff: alpha,
        ..FcaConfig::default()
    };
    let layout = extractor_layout("x", channels, &cfg)?;
    let numel = |b: &str| -> u64 {
        layout
            .get(&format!("x.{b}.kernel"))
            .map(|s| s.iter().product::<usize>() as u64)
            .unwrap_or(0)
    };
    let (frft0, frft45, frft90, log) = (numel("b0"), numel("b45"), numel("b90"), numel("blog"));
    Ok(BranchCounts {
        frft0,
        frft45,
        frft90,
        log,
        total: frft0 + frft45 + frft90 + log,
    })
}

/// Multiply-accumulates of the branch convolutions on a `D x H x W` grid.
pub fn count_flops(channels: usize, alpha: Ratio<u64>, dims: Dims) -> Result<BranchCounts> {
    let n = dims.iter().map(|&d| d as u64).product();
    Ok(count_branch_params(channels, alpha)?.scaled(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_params_c48() {
        let c = count_branch_params(48, Ratio::from_integer(1)).unwrap();
        assert_eq!(c.total, 82944);
        assert_eq!(c.frft0, 62208);
        let third = count_branch_params(48, Ratio::new(1, 3)).unwrap();
        assert_eq!(third.total, 9216);
        assert_eq!(Ratio::new(third.total, c.total), Ratio::new(1, 9));
        let one = count_branch_params(1, Ratio::from_integer(1)).unwrap();
        assert_eq!(one.as_array(), [27, 4, 4, 1, 36]);
    }

    #[test]
    fn non_integral_split_errors() {
        assert!(matches!(
            count_branch_params(1, Ratio::new(1, 3)),
            Err(Error::Config(_))
        ));
        let f = branch_param_formula(1, Ratio::new(1, 3));
        assert_eq!(f[4], Ratio::new(4, 1));
        assert_eq!(f[1], Ratio::new(4, 9));
    }

    #[test]
    fn flops() {
        let f = count_flops(48, Ratio::from_integer(1), [4, 32, 32]).unwrap();
        assert_eq!(f.total, 339_738_624);
        let p = count_branch_params(12, Ratio::from_integer(1)).unwrap();
        assert_eq!(count_flops(12, Ratio::from_integer(1), [1, 1, 1]).unwrap(), p);
    }

    #[test]
    fn ratios() {
        assert_eq!(parse_ratio("1/3").unwrap(), Ratio::new(1, 3));
        assert_eq!(parse_ratio("0.25").unwrap(), Ratio::new(1, 4));
        assert_eq!(parse_ratio("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_ratio(".5").unwrap(), Ratio::new(1, 2));
        for bad in ["", "a", "1/0", "1.2.3", "-1", "."] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn audit_detects_shape_errors() {
        let cfg = FcaConfig::default();
        let layout = extractor_layout("m.fe", 8, &cfg).unwrap();
        let mut w = WeightSet::init(&layout, 3);
        assert_eq!(w.audit(&layout).unwrap().len(), layout.len());
        w.insert("m.fe.b0.kernel", Tensor::zeros(vec![1, 1, 1, 8, 8]));
        assert!(matches!(w.audit(&layout), Err(Error::ShapeAudit(_))));
        let empty = WeightSet::new();
        assert!(empty.audit(&layout).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let layout = block_layout(8, &FcaConfig::default()).unwrap();
        let a = WeightSet::init(&layout, 11);
        assert_eq!(a, WeightSet::init(&layout, 11));
        assert_ne!(a, WeightSet::init(&layout, 12));
        for name in a.names() {
            let t = a.get(name).unwrap();
            if name.ends_with(".scale") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= INIT_RANGE));
            }
        }
    }
}
