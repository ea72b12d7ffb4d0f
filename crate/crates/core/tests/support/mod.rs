//! Random inputs and conversions shared by the integration tests.

#![allow(dead_code)]

use anchorlm::corpus::SegmentedText;
use anchorlm::model::{init_weights, ModelConfig, ModelWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{NaiveLayer, NaiveModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random valid segmentation of length `len`: anchors close sequences, and a
/// sequence occasionally ends without one.
pub fn random_segmentation(rng: &mut impl Rng, len: usize, p_anchor: f64) -> SegmentedText {
    let mut seg = SegmentedText::new();
    let mut seq = 0;
    for i in 0..len {
        if i > 0 && !seg.is_anchor[i - 1] && rng.random_bool(0.05) {
            seq += 1;
        }
        let anchor = rng.random_bool(p_anchor);
        seg.push(0, anchor, seq);
        if anchor {
            seq += 1;
        }
    }
    seg
}

pub fn random_config(rng: &mut impl Rng, context_len: usize) -> ModelConfig {
    let n_heads = rng.random_range(1..=3);
    let head_dim = 2 * rng.random_range(1..=4);
    ModelConfig {
        vocab_size: rng.random_range(5..=20),
        n_layers: rng.random_range(1..=3),
        n_heads,
        d_model: n_heads * head_dim,
        d_ff: rng.random_range(4..=24),
        context_len,
        rope_base: [100.0, 10_000.0][rng.random_range(0..2)],
        norm_eps: 1e-5,
    }
}

/// Initialised weights scaled up so attention patterns are far from uniform.
pub fn random_weights(rng: &mut impl Rng, config: &ModelConfig) -> ModelWeights {
    let mut w = init_weights(config, rng.random(), None).unwrap();
    let gains = w.is_gain();
    let scale: f64 = rng.random_range(5.0..25.0);
    for (t, g) in w.tensors_mut().into_iter().zip(gains) {
        for x in t.iter_mut() {
            if g {
                *x = rng.random_range(0.5..1.5);
            } else {
                *x *= scale;
            }
        }
    }
    w
}

pub fn random_ids(rng: &mut impl Rng, seg: &mut SegmentedText, vocab_size: usize, anchor_id: u32) {
    for i in 0..seg.len() {
        seg.ids[i] = if seg.is_anchor[i] {
            anchor_id
        } else {
            loop {
                let id = rng.random_range(0..vocab_size as u32);
                if id != anchor_id {
                    break id;
                }
            }
        };
    }
}

fn rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn naive_model(w: &ModelWeights) -> NaiveModel {
    NaiveModel {
        n_heads: w.config.n_heads,
        rope_base: w.config.rope_base,
        norm_eps: w.config.norm_eps,
        tok_emb: rows(&w.tok_emb),
        layers: w
            .layers
            .iter()
            .map(|l| NaiveLayer {
                attn_norm: l.attn_norm.to_vec(),
                wq: rows(&l.wq),
                wk: rows(&l.wk),
                wv: rows(&l.wv),
                wo: rows(&l.wo),
                ffn_norm: l.ffn_norm.to_vec(),
                w_up: rows(&l.w_up),
                w_down: rows(&l.w_down),
            })
            .collect(),
        final_norm: w.final_norm.to_vec(),
        head: rows(&w.head),
    }
}

/// `|a - b| / max(|b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, floor)).fold(0.0, f64::max)
}
