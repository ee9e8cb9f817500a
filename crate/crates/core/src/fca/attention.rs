use rayon::prelude::*;

use super::layers::linear;
use super::weights::{attention_layout, WeightSet};
use super::TokenGrid;
use crate::error::{Error, Result};

/// Softmax attention probabilities, `[head][query][key]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub heads: usize,
    pub tokens: usize,
    pub probs: Vec<f64>,
}

impl AttentionWeights {
    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let n = self.tokens;
        let start = (head * n + query) * n;
        &self.probs[start..start + n]
    }
}

/// Multi-head `softmax(Q K^T / sqrt(d_k)) V` with queries from `q_src` and
/// keys/values from `kv_src`, projections `{prefix}.attn.{q,k,v}`.
pub fn cross_attention(
    q_src: &TokenGrid,
    kv_src: &TokenGrid,
    w: &WeightSet,
    prefix: &str,
    heads: usize,
) -> Result<TokenGrid> {
    cross_attention_with_probs(q_src, kv_src, w, prefix, heads).map(|(t, _)| t)
}

pub fn cross_attention_with_probs(
    q_src: &TokenGrid,
    kv_src: &TokenGrid,
    w: &WeightSet,
    prefix: &str,
    heads: usize,
) -> Result<(TokenGrid, AttentionWeights)> {
    q_src.same_shape(kv_src)?;
    let c = q_src.channels();
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!(
            "channels {c} not divisible by {heads} heads"
        )));
    }
    w.audit(&attention_layout(prefix, c))?;
    let q = linear(q_src.data(), w.get(&format!("{prefix}.attn.q"))?, None);
    let k = linear(kv_src.data(), w.get(&format!("{prefix}.attn.k"))?, None);
    let v = linear(kv_src.data(), w.get(&format!("{prefix}.attn.v"))?, None);

    let n = q_src.n_tokens();
    let dk = c / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    probs.par_chunks_mut(n).enumerate().for_each(|(row, p)| {
        let (h, i) = (row / n, row % n);
        let qi = &q[i * c + h * dk..i * c + (h + 1) * dk];
        for (j, pj) in p.iter_mut().enumerate() {
            let kj = &k[j * c + h * dk..j * c + (h + 1) * dk];
            *pj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        for pj in p.iter_mut() {
            *pj /= sum;
        }
    });

    let mut out = vec![0.0; n * c];
    out.par_chunks_mut(c).enumerate().for_each(|(i, o)| {
        for h in 0..heads {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let oh = &mut o[h * dk..(h + 1) * dk];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * c + h * dk..j * c + (h + 1) * dk];
                for (a, b) in oh.iter_mut().zip(vj) {
                    *a += pj * b;
                }
            }
        }
    });
    let grid = TokenGrid::new(q_src.level(), q_src.dims(), c, out)?;
    Ok((
        grid,
        AttentionWeights {
            heads,
            tokens: n,
            probs,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::weights::Tensor;
    use super::*;

    fn eye_weights(c: usize) -> WeightSet {
        let mut w = WeightSet::new();
        for m in ["q", "k", "v", "out"] {
            w.insert(format!("s.attn.{m}"), Tensor::eye(c, c));
        }
        w.insert("s.attn.out_bias", Tensor::zeros(vec![c]));
        w
    }

    #[test]
    fn singleton_attends_fully() {
        let q = TokenGrid::new(0, [1, 1, 1], 4, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let kv = TokenGrid::new(0, [1, 1, 1], 4, vec![0.3, 0.1, -0.7, 2.0]).unwrap();
        let mut w = eye_weights(4);
        let vproj = Tensor::new(vec![4, 4], (0..16).map(|i| i as f64 * 0.1).collect()).unwrap();
        w.insert("s.attn.v", vproj.clone());
        let (out, p) = cross_attention_with_probs(&q, &kv, &w, "s", 2).unwrap();
        assert!(p.probs.iter().all(|&x| x == 1.0));
        assert_eq!(out.data(), &linear(kv.data(), &vproj, None)[..]);
    }

    #[test]
    fn identical_keys_give_uniform_rows() {
        let n = 6;
        let q = TokenGrid::new(0, [1, 2, 3], 2, (0..2 * n).map(|i| i as f64).collect()).unwrap();
        let kv = TokenGrid::new(0, [1, 2, 3], 2, [0.4, -1.0].repeat(n)).unwrap();
        let (_, p) = cross_attention_with_probs(&q, &kv, &eye_weights(2), "s", 1).unwrap();
        for x in &p.probs {
            assert!((x - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn three_token_hand_oracle() {
        let qd = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let kd = [0.5, -0.5, 2.0, 0.0, -1.0, 1.5];
        let q = TokenGrid::new(0, [1, 1, 3], 2, qd.to_vec()).unwrap();
        let kv = TokenGrid::new(0, [1, 1, 3], 2, kd.to_vec()).unwrap();
        let out = cross_attention(&q, &kv, &eye_weights(2), "s", 1).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (qd[2 * i] * kd[2 * j] + qd[2 * i + 1] * kd[2 * j + 1]) * s)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for ch in 0..2 {
                let hand: f64 = (0..3).map(|j| logits[j].exp() / z * kd[2 * j + ch]).sum();
                assert!((out.data()[2 * i + ch] - hand).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let a = TokenGrid::zeros(0, [1, 1, 2], 4).unwrap();
        let b = TokenGrid::zeros(0, [1, 2, 1], 4).unwrap();
        assert!(matches!(
            cross_attention(&a, &b, &eye_weights(4), "s", 1),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            cross_attention(&a, &a, &eye_weights(4), "s", 3),
            Err(Error::Config(_))
        ));
    }
}
