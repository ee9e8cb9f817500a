use rayon::prelude::*;

use super::weights::Tensor;
use crate::volume::{coords, offset, voxel_count, Dims};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Layer norm over the channel axis of `(tokens, c)` data.
pub fn layer_norm(data: &[f64], c: usize, scale: &[f64], shift: &[f64]) -> Vec<f64> {
    debug_assert_eq!(data.len() % c, 0);
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(c).zip(data.par_chunks(c)).for_each(|(o, x)| {
        let mean = x.iter().sum::<f64>() / c as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..c {
            o[i] = (x[i] - mean) * inv * scale[i] + shift[i];
        }
    });
    out
}

/// Token-wise `x W + b` with `W` shaped `[cin, cout]`.
pub fn linear(data: &[f64], w: &Tensor, bias: Option<&Tensor>) -> Vec<f64> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(data.len() % cin, 0);
    let n = data.len() / cin;
    let mut out = vec![0.0; n * cout];
    let wd = w.data();
    out.par_chunks_mut(cout)
        .zip(data.par_chunks(cin))
        .for_each(|(o, x)| {
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &wd[i * cout..(i + 1) * cout];
                for (oj, wj) in o.iter_mut().zip(row) {
                    *oj += xi * wj;
                }
            }
        });
    out
}

/// Same-size 3D convolution (cross-correlation) with zero padding; kernel
/// `[k, k, k, cin, cout]`, data `(z, y, x, c)`.
pub fn conv3d(data: &[f64], dims: Dims, kernel: &Tensor, bias: &Tensor) -> Vec<f64> {
    let s = kernel.shape();
    let (k, cin, cout) = (s[0], s[3], s[4]);
    let r = (k / 2) as isize;
    let n = voxel_count(dims);
    debug_assert_eq!(data.len(), n * cin);
    let kd = kernel.data();
    let mut out = vec![0.0; n * cout];
    out.par_chunks_mut(cout).enumerate().for_each(|(i, o)| {
        o.copy_from_slice(bias.data());
        let [z, y, x] = coords(dims, i);
        for dz in 0..k {
            let zz = z as isize + dz as isize - r;
            if zz < 0 || zz >= dims[0] as isize {
                continue;
            }
            for dy in 0..k {
                let yy = y as isize + dy as isize - r;
                if yy < 0 || yy >= dims[1] as isize {
                    continue;
                }
                for dx in 0..k {
                    let xx = x as isize + dx as isize - r;
                    if xx < 0 || xx >= dims[2] as isize {
                        continue;
                    }
                    let src = offset(dims, zz as usize, yy as usize, xx as usize) * cin;
                    let tap = ((dz * k + dy) * k + dx) * cin * cout;
                    for ci in 0..cin {
                        let v = data[src + ci];
                        let row = &kd[tap + ci * cout..tap + (ci + 1) * cout];
                        for (oj, wj) in o.iter_mut().zip(row) {
                            *oj += v * wj;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_moments() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, -1.0, -1.0, -1.0];
        let y = layer_norm(&x, 4, &[1.0; 4], &[0.0; 4]);
        let t = &y[..4];
        assert!(t.iter().sum::<f64>().abs() < 1e-12);
        let var = t.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-12);
        assert!(y[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_matches_hand() {
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.5, 0.0, -0.5]).unwrap();
        let y = linear(&[1.0, -1.0, 2.0, 0.0], &w, Some(&b));
        assert_eq!(y, vec![-2.5, -3.0, -3.5, 2.5, 4.0, 5.5]);
    }

    #[test]
    fn conv_against_brute_force() {
        let dims = [3, 4, 2];
        let (cin, cout, k) = (2, 3, 3);
        let n = voxel_count(dims);
        let data: Vec<f64> = (0..n * cin).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let kd: Vec<f64> = (0..k * k * k * cin * cout)
            .map(|i| ((i * 13) % 17) as f64 / 17.0 - 0.5)
            .collect();
        let kernel = Tensor::new(vec![k, k, k, cin, cout], kd.clone()).unwrap();
        let bias = Tensor::new(vec![cout], vec![0.1, 0.2, 0.3]).unwrap();
        let got = conv3d(&data, dims, &kernel, &bias);
        for i in 0..n {
            let [z, y, x] = coords(dims, i);
            for co in 0..cout {
                let mut acc = bias.data()[co];
                for dz in 0..3i64 {
                    for dy in 0..3i64 {
                        for dx in 0..3i64 {
                            let (zz, yy, xx) = (z as i64 + dz - 1, y as i64 + dy - 1, x as i64 + dx - 1);
                            if zz < 0 || yy < 0 || xx < 0 || zz >= 3 || yy >= 4 || xx >= 2 {
                                continue;
                            }
                            for ci in 0..cin {
                                let v = data[offset(dims, zz as usize, yy as usize, xx as usize) * cin + ci];
                                let kk = ((((dz * 3 + dy) * 3 + dx) as usize * cin) + ci) * cout + co;
                                acc += v * kd[kk];
                            }
                        }
                    }
                }
                assert!((got[i * cout + co] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_9).abs() < 1e-12);
        assert!(gelu(-10.0).abs() < 1e-12);
    }
}
