//! Straight-line re-implementation of the FCA block on a 1x2x2 grid with
//! C = 4, h = 2, compared against the library forward pass.

use std::f64::consts::PI;

use fractfield_core::dfrft::Frft3dPlans;
use fractfield_core::fca::{block_layout, fca_block, FcaConfig, TokenGrid, WeightSet};
use num_complex::Complex64 as C64;

const C: usize = 4;
const N: usize = 4; // tokens, index y * 2 + x

fn t<'a>(w: &'a WeightSet, name: &str) -> &'a [f64] {
    w.get(name).unwrap().data()
}

/// Closed-form order-p kernel for length 2: eigenvectors at indices 0 and 2.
fn k2(p: f64) -> [[C64; 2]; 2] {
    let (c, s) = ((PI / 8.0).cos(), (PI / 8.0).sin());
    let u0 = [c, s];
    let u2 = [s, -c];
    let ph = C64::from_polar(1.0, -PI / 2.0 * p * 2.0);
    let mut k = [[C64::new(0.0, 0.0); 2]; 2];
    for m in 0..2 {
        for n in 0..2 {
            k[m][n] = C64::new(u0[m] * u0[n], 0.0) + ph * u2[m] * u2[n];
        }
    }
    k
}

/// 2D transform of one channel laid out as `[y * 2 + x]`.
fn frft2(x: [C64; N], p: f64) -> [C64; N] {
    let k = k2(p);
    let mut out = [C64::new(0.0, 0.0); N];
    for y in 0..2 {
        for xx in 0..2 {
            for y2 in 0..2 {
                for x2 in 0..2 {
                    out[y * 2 + xx] += k[y][y2] * k[xx][x2] * x[y2 * 2 + x2];
                }
            }
        }
    }
    out
}

fn ln(x: &[f64], scale: &[f64], off: &[f64]) -> Vec<f64> {
    let c = scale.len();
    let mut out = Vec::new();
    for tok in x.chunks(c) {
        let m = tok.iter().sum::<f64>() / c as f64;
        let v = tok.iter().map(|a| (a - m).powi(2)).sum::<f64>() / c as f64;
        for i in 0..c {
            out.push((tok[i] - m) / (v + 1e-5).sqrt() * scale[i] + off[i]);
        }
    }
    out
}

/// Convolution on the 1x2x2 grid: only the centre z-slice of the kernel sees data.
fn conv(x: &[f64], kernel: &[f64], bias: &[f64], k: usize, cin: usize) -> Vec<f64> {
    let cout = bias.len();
    let r = (k / 2) as i64;
    let mut out = vec![0.0; N * cout];
    for y in 0..2i64 {
        for xx in 0..2i64 {
            let o = &mut out[((y * 2 + xx) as usize) * cout..][..cout];
            o.copy_from_slice(bias);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sy, sx) = (y + dy, xx + dx);
                    if !(0..2).contains(&sy) || !(0..2).contains(&sx) {
                        continue;
                    }
                    let tap = ((r * k as i64 + (dy + r)) * k as i64 + (dx + r)) as usize;
                    for ci in 0..cin {
                        let v = x[(sy * 2 + sx) as usize * cin + ci];
                        for co in 0..cout {
                            o[co] += v * kernel[(tap * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
    }
    out
}

fn matmul(x: &[f64], w: &[f64], cin: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let cout = w.len() / cin;
    let mut out = Vec::new();
    for tok in x.chunks(cin) {
        for j in 0..cout {
            let mut acc = bias.map_or(0.0, |b| b[j]);
            for i in 0..cin {
                acc += tok[i] * w[i * cout + j];
            }
            out.push(acc);
        }
    }
    out
}

fn channel(x: &[C64], ch: usize, c: usize) -> [C64; N] {
    std::array::from_fn(|i| x[i * c + ch])
}

fn transform(x: &[C64], c: usize, p: f64) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); x.len()];
    for ch in 0..c {
        let y = frft2(channel(x, ch, c), p);
        for i in 0..N {
            out[i * c + ch] = y[i];
        }
    }
    out
}

fn extractor(x: &[f64], w: &WeightSet, p: &str) -> Vec<f64> {
    let g = |n: &str| t(w, &format!("{p}.{n}"));
    let a = C;
    let xn = ln(x, g("norm_in.scale"), g("norm_in.offset"));
    let cx: Vec<C64> = xn.iter().map(|&v| C64::new(v, 0.0)).collect();

    let b0: Vec<f64> = conv(&xn, g("b0.kernel"), g("b0.bias"), 3, a)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();

    let complex_branch = |order: f64, name: &str| -> Vec<f64> {
        let s = transform(&cx, a, order);
        let mut stacked = Vec::new();
        for i in 0..N {
            stacked.extend((0..a).map(|c| s[i * a + c].re));
            stacked.extend((0..a).map(|c| s[i * a + c].im));
        }
        let y = conv(
            &stacked,
            g(&format!("{name}.kernel")),
            g(&format!("{name}.bias")),
            1,
            2 * a,
        );
        let mut z = Vec::new();
        for i in 0..N {
            for c in 0..a {
                z.push(C64::new(y[i * 2 * a + c].max(0.0), y[i * 2 * a + a + c].max(0.0)));
            }
        }
        transform(&z, a, -order).iter().map(|v| v.re).collect()
    };
    let b45 = complex_branch(0.5, "b45");
    let b90 = complex_branch(1.0, "b90");

    let s = transform(&cx, a, 1.0);
    let mag: Vec<f64> = s.iter().map(|v| (1.0 + v.norm()).ln()).collect();
    let y = conv(&mag, g("blog.kernel"), g("blog.bias"), 1, a);
    let rec: Vec<C64> = y
        .iter()
        .zip(&s)
        .map(|(m, v)| {
            let ph = if v.norm() == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                v / v.norm()
            };
            ph * (m.max(0.0).exp() - 1.0)
        })
        .collect();
    let blog: Vec<f64> = transform(&rec, a, -1.0).iter().map(|v| v.re).collect();

    let parts = [
        ln(&b0, g("bn0.scale"), g("bn0.offset")),
        ln(&b45, g("bn45.scale"), g("bn45.offset")),
        ln(&b90, g("bn90.scale"), g("bn90.offset")),
        ln(&blog, g("bnlog.scale"), g("bnlog.offset")),
        ln(x, g("bnskip.scale"), g("bnskip.offset")),
    ];
    let mut cat = Vec::new();
    for i in 0..N {
        for p in &parts {
            cat.extend_from_slice(&p[i * C..(i + 1) * C]);
        }
    }
    matmul(&cat, g("fuse.kernel"), 5 * C, Some(g("fuse.bias")))
}

fn attend(q_in: &[f64], kv_in: &[f64], w: &WeightSet, s: &str, heads: usize) -> Vec<f64> {
    let g = |n: &str| t(w, &format!("{s}.attn.{n}"));
    let q = matmul(q_in, g("q"), C, None);
    let k = matmul(kv_in, g("k"), C, None);
    let v = matmul(kv_in, g("v"), C, None);
    let dk = C / heads;
    let mut out = vec![0.0; N * C];
    for h in 0..heads {
        for i in 0..N {
            let logits: Vec<f64> = (0..N)
                .map(|j| {
                    (0..dk)
                        .map(|d| q[i * C + h * dk + d] * k[j * C + h * dk + d])
                        .sum::<f64>()
                        / (dk as f64).sqrt()
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..N {
                for d in 0..dk {
                    out[i * C + h * dk + d] += logits[j].exp() / z * v[j * C + h * dk + d];
                }
            }
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn tail(s: &str, f: &[f64], xq: &[f64], xkv: &[f64], w: &WeightSet) -> Vec<f64> {
    let g = |n: &str| t(w, &format!("{s}.{n}"));
    let att = attend(xq, xkv, w, s, 2);
    let proj = matmul(&att, g("attn.out"), C, Some(g("attn.out_bias")));
    let a: Vec<f64> = proj.iter().zip(f).map(|(p, r)| p + r).collect();
    let n = ln(&a, g("norm.scale"), g("norm.offset"));
    let h: Vec<f64> = matmul(&n, g("mlp.fc1"), C, Some(g("mlp.fc1_bias")))
        .into_iter()
        .map(gelu)
        .collect();
    let m = matmul(&h, g("mlp.fc2"), 4 * C, Some(g("mlp.fc2_bias")));
    n.iter().zip(&m).map(|(a, b)| a + b).collect()
}

#[test]
fn block_matches_straight_line_oracle() {
    let cfg = FcaConfig {
        heads: 2,
        ..FcaConfig::default()
    };
    let dims = [1, 2, 2];
    for seed in 0..5u64 {
        let mut w = WeightSet::init(&block_layout(C, &cfg).unwrap(), seed);
        // Scale weights up so every branch and the attention carry real signal.
        let names: Vec<String> = w.names().map(str::to_string).collect();
        for name in names {
            if !name.ends_with(".scale") && !name.ends_with(".offset") {
                w.get_mut(&name)
                    .unwrap()
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v *= 25.0);
            }
        }
        let fm: Vec<f64> = (0..N * C)
            .map(|i| ((i as f64 + seed as f64) * 0.7).sin())
            .collect();
        let ff: Vec<f64> = (0..N * C)
            .map(|i| ((i as f64 * 1.3 - seed as f64) * 0.4).cos())
            .collect();
        let gm = TokenGrid::new(0, dims, C, fm.clone()).unwrap();
        let gf = TokenGrid::new(0, dims, C, ff.clone()).unwrap();
        let plans = Frft3dPlans::for_dims(dims).unwrap();
        let (om, of) = fca_block(&gm, &gf, &cfg, &w, &plans).unwrap();

        let xm = extractor(&fm, &w, "m.fe");
        let xf = extractor(&ff, &w, "f.fe");
        let em = tail("m", &fm, &xm, &xf, &w);
        let ef = tail("f", &ff, &xf, &xm, &w);
        for (got, want) in om.data().iter().zip(&em).chain(of.data().iter().zip(&ef)) {
            assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
        }
    }
}
