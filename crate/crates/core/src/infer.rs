//! Anchor-based autoregressive generation and continuation scoring.
//!
//! The prefix is processed in one forward pass under anchor masks, then the
//! cache is reduced. Each generated token is fed back with a mask row built
//! from the live cache; a generated anchor closes the running sequence and
//! triggers another reduction once its own keys/values are cached.

use std::time::{Duration, Instant};

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{AnchorKVCache, CacheEntry, CacheStats};
use crate::corpus::{SegmentedText, TokenFlags, TokenId};
use crate::error::{Error, Result};
use crate::mask::{causal_mask, decode_mask_row, MaskMatrix, MaskMode, MaskRow};
use crate::model::{forward, log_softmax, ForwardOutput, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { t: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub sampling: Sampling,
    pub eos_id: TokenId,
    /// Generated tokens with this id are anchors (`.` for the endpoint
    /// policy, `<AC>` otherwise).
    pub anchor_id: Option<TokenId>,
    pub reduction_enabled: bool,
    pub protected_upto: usize,
    pub mask_mode: MaskMode,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize, eos_id: TokenId, anchor_id: Option<TokenId>) -> Self {
        GenerationConfig {
            max_new_tokens,
            sampling: Sampling::Greedy,
            eos_id,
            anchor_id,
            reduction_enabled: true,
            protected_upto: 0,
            mask_mode: MaskMode::Ansan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be at least 1"));
        }
        if let Sampling::Temperature { t, .. } = self.sampling {
            if !(t > 0.0) {
                return Err(Error::config("temperature must be positive"));
            }
        }
        if self.reduction_enabled && self.mask_mode == MaskMode::Causal {
            return Err(Error::config(
                "cache reduction requires anchor masks; causal decoding reads every entry",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub generated: Vec<TokenId>,
    /// Live cache size after each generated token.
    pub live_sizes: Vec<usize>,
    /// Next-token logits behind each generated token.
    pub step_logits: Vec<Array1<f64>>,
    pub stats: CacheStats,
    pub final_live: usize,
    pub prefix_time: Duration,
    pub decode_time: Duration,
}

/// Lowest index wins ties.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// [`argmax`] over a slice.
pub fn argmax_scores(scores: &[f64]) -> usize {
    argmax(ArrayView1::from(scores))
}

struct Sampler {
    mode: Sampling,
    rng: Option<ChaCha8Rng>,
}

impl Sampler {
    fn new(mode: Sampling) -> Self {
        let rng = match mode {
            Sampling::Temperature { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Sampling::Greedy => None,
        };
        Sampler { mode, rng }
    }

    fn sample(&mut self, logits: ArrayView1<f64>) -> TokenId {
        match (self.mode, self.rng.as_mut()) {
            (Sampling::Temperature { t, .. }, Some(rng)) => {
                let probs = log_softmax(logits.mapv(|x| x / t).view()).mapv(f64::exp);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as TokenId;
                    }
                }
                (probs.len() - 1) as TokenId
            }
            _ => argmax(logits) as TokenId,
        }
    }
}

/// Appends one cache entry per processed row of `out`.
pub fn append_output(
    cache: &mut AnchorKVCache,
    out: &ForwardOutput,
    positions: &[usize],
    flags: &[TokenFlags],
) -> Result<()> {
    for (t, (&position, f)) in positions.iter().zip(flags).enumerate() {
        let (keys, values) = out.entry_tensors(t);
        cache.append(CacheEntry {
            position,
            is_anchor: f.is_anchor,
            seq_index: f.seq_index,
            keys,
            values,
        })?;
    }
    Ok(())
}

fn step_mask(mode: MaskMode, current: TokenFlags, live: &[TokenFlags]) -> Result<MaskMatrix> {
    let row = match mode {
        MaskMode::Ansan => decode_mask_row(current, live),
        MaskMode::Causal => MaskRow {
            bits: vec![true; live.len() + 1],
        },
    };
    MaskMatrix::from_rows(&[row]).ok_or_else(|| Error::contract("malformed decode mask row"))
}

pub fn generate(
    weights: &ModelWeights,
    prefix: &SegmentedText,
    cfg: &GenerationConfig,
) -> Result<GenerationResult> {
    cfg.validate()?;
    let context_len = weights.config.context_len;
    if prefix.is_empty() {
        return Err(Error::contract("generation needs a non-empty prefix"));
    }
    if prefix.len() > context_len {
        return Err(Error::contract(format!(
            "prefix of {} tokens exceeds the context window of {context_len}",
            prefix.len()
        )));
    }
    prefix.validate(None)?;

    let mut cache = AnchorKVCache::with_protected_prefix(cfg.protected_upto);
    let mut sampler = Sampler::new(cfg.sampling);
    let positions: Vec<usize> = (0..prefix.len()).collect();
    let mask = match cfg.mask_mode {
        MaskMode::Ansan => crate::mask::anchor_mask(prefix),
        MaskMode::Causal => causal_mask(prefix.len()),
    };

    let start = Instant::now();
    let out = forward(weights, &prefix.ids, &positions, &mask, None)?;
    let prefix_time = start.elapsed();
    append_output(&mut cache, &out, &positions, &prefix.all_flags())?;
    if cfg.reduction_enabled {
        cache.reduction();
    }

    let last = out.logits.row(prefix.len() - 1);
    let mut generated = vec![sampler.sample(last)];
    let mut step_logits = vec![last.to_owned()];
    let mut live_sizes = vec![cache.len()];

    let mut seq = prefix.next_seq_index();
    let mut position = prefix.len();
    let mut decode_time = Duration::ZERO;
    while generated.len() < cfg.max_new_tokens && *generated.last().unwrap() != cfg.eos_id {
        let token = *generated.last().unwrap();
        let flags = TokenFlags {
            is_anchor: Some(token) == cfg.anchor_id,
            seq_index: seq,
        };
        let mask = step_mask(cfg.mask_mode, flags, &cache.live_flags())?;
        let start = Instant::now();
        let out = forward(weights, &[token], &[position], &mask, Some(&cache))?;
        decode_time += start.elapsed();
        append_output(&mut cache, &out, &[position], &[flags])?;
        if flags.is_anchor {
            seq += 1;
            if cfg.reduction_enabled {
                cache.reduction();
            }
        }
        position += 1;
        let row = out.logits.row(0);
        generated.push(sampler.sample(row));
        step_logits.push(row.to_owned());
        live_sizes.push(cache.len());
    }

    Ok(GenerationResult {
        generated,
        live_sizes,
        step_logits,
        stats: cache.stats(),
        final_live: cache.len(),
        prefix_time,
        decode_time,
    })
}

/// Appends `continuation` as anchor-free tokens continuing the context.
pub fn with_continuation(context: &SegmentedText, continuation: &[TokenId]) -> SegmentedText {
    let mut seg = context.clone();
    let seq = context.next_seq_index();
    for &id in continuation {
        seg.push(id, false, seq);
    }
    seg
}

/// Sum of log-probabilities of `continuation` following `context`.
pub fn score_continuation(
    weights: &ModelWeights,
    context: &SegmentedText,
    continuation: &[TokenId],
    use_ansan: bool,
) -> Result<f64> {
    if continuation.is_empty() {
        return Ok(0.0);
    }
    if context.is_empty() {
        return Err(Error::contract("scoring needs a non-empty context"));
    }
    let total = context.len() + continuation.len();
    if total > weights.config.context_len {
        return Err(Error::contract(format!(
            "context plus continuation is {total} tokens, window is {}",
            weights.config.context_len
        )));
    }
    let seg = with_continuation(context, continuation);
    let mode = if use_ansan { MaskMode::Ansan } else { MaskMode::Causal };
    let positions: Vec<usize> = (0..seg.len()).collect();
    let out = forward(weights, &seg.ids, &positions, &mode.build(&seg), None)?;
    Ok(continuation_logprob(&out, context.len() - 1, continuation))
}

/// Log-likelihood of `continuation` where row `first_row` of `out` predicts
/// its first token and later rows follow consecutively.
pub fn continuation_logprob(out: &ForwardOutput, first_row: usize, continuation: &[TokenId]) -> f64 {
    continuation
        .iter()
        .enumerate()
        .map(|(i, &id)| log_softmax(out.logits.row(first_row + i))[id as usize])
        .sum()
}
