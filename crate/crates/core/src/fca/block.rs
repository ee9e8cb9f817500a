use super::attention::cross_attention;
use super::extract::frft_feature_extract;
use super::layers::{gelu, layer_norm, linear};
use super::weights::{block_layout, level_down_layout, level_up_layout, patch_embed_layout, WeightSet};
use super::{FcaConfig, PatchEmbedConfig, TokenGrid};
use crate::dfrft::Frft3dPlans;
use crate::error::{Error, Result};
use crate::volume::{offset, voxel_count, Dims, Volume3D};

/// Splits the volume into non-overlapping patches and projects each flattened
/// patch (z, y, x order) with `patch.proj`.
pub fn patch_embed(v: &Volume3D, cfg: &PatchEmbedConfig, w: &WeightSet) -> Result<TokenGrid> {
    let dims = v.dims();
    let p = cfg.patch;
    if p.iter().any(|&q| q == 0) || (0..3).any(|a| dims[a] % p[a] != 0) {
        return Err(Error::Shape(format!(
            "volume {dims:?} is not divisible into {p:?} patches"
        )));
    }
    w.audit(&patch_embed_layout(cfg))?;
    let grid = [dims[0] / p[0], dims[1] / p[1], dims[2] / p[2]];
    let pv = cfg.patch_volume();
    let mut patches = Vec::with_capacity(voxel_count(grid) * pv);
    for gz in 0..grid[0] {
        for gy in 0..grid[1] {
            for gx in 0..grid[2] {
                for z in 0..p[0] {
                    for y in 0..p[1] {
                        for x in 0..p[2] {
                            patches.push(v.get(gz * p[0] + z, gy * p[1] + y, gx * p[2] + x));
                        }
                    }
                }
            }
        }
    }
    let bias = if cfg.bias {
        Some(w.get("patch.bias")?)
    } else {
        None
    };
    let tokens = linear(&patches, w.get("patch.proj")?, bias);
    TokenGrid::new(0, grid, cfg.embed_dim, tokens)
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Attention, output projection, query residual, norm, MLP, second residual.
fn stream_tail(
    s: &str,
    query_input: &TokenGrid,
    xq: &TokenGrid,
    xkv: &TokenGrid,
    cfg: &FcaConfig,
    w: &WeightSet,
) -> Result<TokenGrid> {
    let c = query_input.channels();
    let att = cross_attention(xq, xkv, w, s, cfg.heads)?;
    let mut a = linear(
        att.data(),
        w.get(&format!("{s}.attn.out"))?,
        Some(w.get(&format!("{s}.attn.out_bias"))?),
    );
    add(&mut a, query_input.data());
    let mut n = layer_norm(
        &a,
        c,
        w.get(&format!("{s}.norm.scale"))?.data(),
        w.get(&format!("{s}.norm.offset"))?.data(),
    );
    let mut h = linear(
        &n,
        w.get(&format!("{s}.mlp.fc1"))?,
        Some(w.get(&format!("{s}.mlp.fc1_bias"))?),
    );
    h.iter_mut().for_each(|v| *v = gelu(*v));
    let m = linear(
        &h,
        w.get(&format!("{s}.mlp.fc2"))?,
        Some(w.get(&format!("{s}.mlp.fc2_bias"))?),
    );
    add(&mut n, &m);
    TokenGrid::new(query_input.level(), query_input.dims(), c, n)
}

/// Dual-stream FCA block. Returns `(moving, fixed)` outputs; the moving stream
/// queries the fixed features and vice versa.
pub fn fca_block(
    f_m: &TokenGrid,
    f_f: &TokenGrid,
    cfg: &FcaConfig,
    w: &WeightSet,
    plans: &Frft3dPlans,
) -> Result<(TokenGrid, TokenGrid)> {
    f_m.same_shape(f_f)?;
    w.audit(&block_layout(f_m.channels(), cfg)?)?;
    let (xm, xf) = rayon::join(
        || frft_feature_extract(f_m, cfg, w, "m.fe", plans),
        || frft_feature_extract(f_f, cfg, w, "f.fe", plans),
    );
    let (xm, xf) = (xm?, xf?);
    let (om, of) = rayon::join(
        || stream_tail("m", f_m, &xm, &xf, cfg, w),
        || stream_tail("f", f_f, &xf, &xm, cfg, w),
    );
    Ok((om?, of?))
}

/// 2x2x2 patch merging: dims halve, channels double (`down{level}.proj`).
pub fn level_down(t: &TokenGrid, w: &WeightSet) -> Result<TokenGrid> {
    let d = t.dims();
    if d.iter().any(|&n| n % 2 != 0) {
        return Err(Error::Shape(format!("cannot halve odd dims {d:?}")));
    }
    let c = t.channels();
    let layout = level_down_layout(t.level(), c);
    w.audit(&layout)?;
    let half = [d[0] / 2, d[1] / 2, d[2] / 2];
    let mut merged = Vec::with_capacity(voxel_count(half) * 8 * c);
    for z in 0..half[0] {
        for y in 0..half[1] {
            for x in 0..half[2] {
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = offset(d, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                            merged.extend_from_slice(t.token(i));
                        }
                    }
                }
            }
        }
    }
    let out = linear(&merged, w.get(&format!("down{}.proj", t.level()))?, None);
    TokenGrid::new(t.level() + 1, half, 2 * c, out)
}

/// Inverse shape step: each token expands to its eight children
/// (`up{level}.expand`), is concatenated with the skip features and fused back
/// to the skip's channel count (`up{level}.fuse`).
pub fn level_up(t: &TokenGrid, skip: &TokenGrid, w: &WeightSet) -> Result<TokenGrid> {
    let d = t.dims();
    let doubled = [2 * d[0], 2 * d[1], 2 * d[2]];
    let c = skip.channels();
    if skip.dims() != doubled || t.channels() != 2 * c {
        return Err(Error::Shape(format!(
            "skip {:?}x{} does not match {:?}x{} upsampled",
            skip.dims(),
            c,
            d,
            t.channels()
        )));
    }
    let level = skip.level();
    w.audit(&level_up_layout(level, c))?;
    let expanded = linear(t.data(), w.get(&format!("up{level}.expand"))?, None);
    let mut cat = vec![0.0; voxel_count(doubled) * 2 * c];
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                let src = &expanded[offset(d, z, y, x) * 8 * c..][..8 * c];
                for k in 0..8 {
                    let (dz, dy, dx) = (k / 4, (k / 2) % 2, k % 2);
                    let i = offset(doubled, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                    let dst = &mut cat[i * 2 * c..(i + 1) * 2 * c];
                    dst[..c].copy_from_slice(&src[k * c..(k + 1) * c]);
                    dst[c..].copy_from_slice(skip.token(i));
                }
            }
        }
    }
    let out = linear(&cat, w.get(&format!("up{level}.fuse"))?, None);
    TokenGrid::new(level, doubled, c, out)
}

/// Encoder shapes for `levels` levels starting at `(dims, channels)`.
pub fn level_chain(dims: Dims, channels: usize, levels: usize) -> Result<Vec<(Dims, usize)>> {
    let mut out = vec![(dims, channels)];
    for _ in 1..levels {
        let (d, c) = *out.last().unwrap();
        if d.iter().any(|&n| n % 2 != 0) {
            return Err(Error::Shape(format!("cannot halve odd dims {d:?}")));
        }
        out.push(([d[0] / 2, d[1] / 2, d[2] / 2], 2 * c));
    }
    Ok(out)
}
