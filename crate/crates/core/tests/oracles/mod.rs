//! Brute-force references for tests. Everything here is plain loops over
//! `Vec`s; nothing calls into the mask, model or cache code under test.

#![allow(dead_code)]

/// Weights copied out into nested vectors, row-major `[in][out]`.
pub struct NaiveLayer {
    pub attn_norm: Vec<f64>,
    pub wq: Vec<Vec<f64>>,
    pub wk: Vec<Vec<f64>>,
    pub wv: Vec<Vec<f64>>,
    pub wo: Vec<Vec<f64>>,
    pub ffn_norm: Vec<f64>,
    pub w_up: Vec<Vec<f64>>,
    pub w_down: Vec<Vec<f64>>,
}

pub struct NaiveModel {
    pub n_heads: usize,
    pub rope_base: f64,
    pub norm_eps: f64,
    pub tok_emb: Vec<Vec<f64>>,
    pub layers: Vec<NaiveLayer>,
    pub final_norm: Vec<f64>,
    pub head: Vec<Vec<f64>>,
}

pub struct OracleResult<T> {
    pub values: T,
    pub description: String,
}

fn matvec(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for c in 0..cols {
        let mut s = 0.0;
        for r in 0..x.len() {
            s += x[r] * w[r][c];
        }
        out[c] = s;
    }
    out
}

fn rms(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let mut ms = 0.0;
    for v in x {
        ms += v * v;
    }
    ms /= x.len() as f64;
    let r = (ms + eps).sqrt();
    (0..x.len()).map(|i| x[i] / r * gain[i]).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn rotate(x: &mut [f64], pos: usize, n_heads: usize, base: f64) {
    let hd = x.len() / n_heads;
    for h in 0..n_heads {
        for i in 0..hd / 2 {
            let theta = pos as f64 * base.powf(-(2.0 * i as f64) / hd as f64);
            let a = h * hd + 2 * i;
            let (x0, x1) = (x[a], x[a + 1]);
            x[a] = x0 * theta.cos() - x1 * theta.sin();
            x[a + 1] = x0 * theta.sin() + x1 * theta.cos();
        }
    }
}

/// Full-sequence forward pass: `mask[i][j]` says whether query `i` may read
/// key `j`. Returns one logits row per token.
pub fn naive_attention(
    m: &NaiveModel,
    ids: &[u32],
    mask: &[Vec<bool>],
    positions: &[usize],
) -> OracleResult<Vec<Vec<f64>>> {
    let t = ids.len();
    assert_eq!(mask.len(), t, "mask rows");
    assert_eq!(positions.len(), t, "positions");
    let d = m.tok_emb[0].len();
    let hd = d / m.n_heads;
    let mut h: Vec<Vec<f64>> = ids.iter().map(|&id| m.tok_emb[id as usize].clone()).collect();
    for layer in &m.layers {
        let mut q = Vec::new();
        let mut k = Vec::new();
        let mut v = Vec::new();
        for i in 0..t {
            let a = rms(&h[i], &layer.attn_norm, m.norm_eps);
            let mut qi = matvec(&a, &layer.wq);
            let mut ki = matvec(&a, &layer.wk);
            rotate(&mut qi, positions[i], m.n_heads, m.rope_base);
            rotate(&mut ki, positions[i], m.n_heads, m.rope_base);
            q.push(qi);
            k.push(ki);
            v.push(matvec(&a, &layer.wv));
        }
        for i in 0..t {
            let mut attn = vec![0.0; d];
            for head in 0..m.n_heads {
                let lo = head * hd;
                let mut scores = vec![f64::NEG_INFINITY; t];
                let mut best = f64::NEG_INFINITY;
                for j in 0..t {
                    if mask[i][j] {
                        let mut s = 0.0;
                        for c in lo..lo + hd {
                            s += q[i][c] * k[j][c];
                        }
                        scores[j] = s / (hd as f64).sqrt();
                        best = best.max(scores[j]);
                    }
                }
                let mut total = 0.0;
                for j in 0..t {
                    if mask[i][j] {
                        total += (scores[j] - best).exp();
                    }
                }
                for j in 0..t {
                    if mask[i][j] {
                        let p = (scores[j] - best).exp() / total;
                        for c in lo..lo + hd {
                            attn[c] += p * v[j][c];
                        }
                    }
                }
            }
            let o = matvec(&attn, &layer.wo);
            for c in 0..d {
                h[i][c] += o[c];
            }
        }
        for i in 0..t {
            let b = rms(&h[i], &layer.ffn_norm, m.norm_eps);
            let z: Vec<f64> = matvec(&b, &layer.w_up).into_iter().map(gelu).collect();
            let out = matvec(&z, &layer.w_down);
            for c in 0..d {
                h[i][c] += out[c];
            }
        }
    }
    let logits = h
        .iter()
        .map(|row| matvec(&rms(row, &m.final_norm, m.norm_eps), &m.head))
        .collect();
    OracleResult {
        values: logits,
        description: format!("naive forward over {t} tokens"),
    }
}

/// Direct transcription of the four mask cases.
pub fn naive_anchor_mask(is_anchor: &[bool], seqs: &[usize]) -> OracleResult<Vec<Vec<bool>>> {
    let n = is_anchor.len();
    let mut m = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = if j > i {
                false
            } else if !is_anchor[i] && !is_anchor[j] && seqs[j] < seqs[i] {
                false
            } else if is_anchor[i] && seqs[j] < seqs[i] {
                false
            } else {
                true
            };
        }
    }
    OracleResult {
        values: m,
        description: format!("anchor mask for {n} tokens"),
    }
}

/// Positions kept by one reduction over `(position, is_anchor)` entries.
pub fn naive_reduction(entries: &[(usize, bool)], protected_upto: usize) -> OracleResult<Vec<usize>> {
    let mut j = None;
    for &(pos, anchor) in entries {
        if anchor && pos >= protected_upto {
            j = Some(pos);
        }
    }
    let kept = entries
        .iter()
        .filter(|&&(pos, anchor)| match j {
            None => true,
            Some(j) => pos >= j || anchor || pos < protected_upto,
        })
        .map(|&(pos, _)| pos)
        .collect();
    OracleResult {
        values: kept,
        description: format!("reduction of {} entries", entries.len()),
    }
}
