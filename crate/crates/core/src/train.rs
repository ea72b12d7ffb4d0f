//! Next-token training with AdamW, linear warmup and global-norm clipping.
//!
//! Batches are drawn from a per-epoch permutation seeded by `(seed, epoch)`,
//! so step `s` always sees the same blocks; resuming from a checkpoint
//! reproduces an uninterrupted run exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::corpus::{AnchorPolicy, SegmentedText, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::kvfile::KvFile;
use crate::mask::MaskMode;
use crate::model::{init_weights, loss_and_grads, ModelConfig, ModelWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Steps(u64),
    Epochs(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mask_mode: MaskMode,
    pub policy: AnchorPolicy,
    pub batch_size: usize,
    pub budget: Budget,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Periodic checkpoint interval in steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_mode: MaskMode::Ansan,
            policy: AnchorPolicy::AppendedToken,
            batch_size: 16,
            budget: Budget::Steps(200),
            learning_rate: 3e-4,
            warmup_steps: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Continual-pretraining settings of the large-scale recipe: constant
    /// 2e-5 after 20 warmup steps, AdamW(0.9, 0.95), batch 512, one epoch.
    pub fn continual_pretraining() -> Self {
        TrainConfig {
            batch_size: 512,
            budget: Budget::Epochs(1),
            learning_rate: 2e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be a finite non-negative number"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || !(self.adam_eps > 0.0) {
            return Err(Error::config("weight_decay, grad_clip and adam_eps must be non-negative"));
        }
        Ok(())
    }

    /// Overlays keys present in `kv` onto `self`.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<()> {
        if let Some(m) = kv.get("mask_mode") {
            self.mask_mode = m.parse()?;
        }
        if let Some(p) = kv.get("policy") {
            self.policy = p.parse()?;
        }
        if let Some(v) = kv.parsed("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.parsed("steps")? {
            self.budget = Budget::Steps(v);
        }
        if let Some(v) = kv.parsed("epochs")? {
            self.budget = Budget::Epochs(v);
        }
        if let Some(v) = kv.parsed("learning_rate")? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.parsed("warmup_steps")? {
            self.warmup_steps = v;
        }
        if let Some(v) = kv.parsed("adam_beta1")? {
            self.adam_beta1 = v;
        }
        if let Some(v) = kv.parsed("adam_beta2")? {
            self.adam_beta2 = v;
        }
        if let Some(v) = kv.parsed("adam_eps")? {
            self.adam_eps = v;
        }
        if let Some(v) = kv.parsed("weight_decay")? {
            self.weight_decay = v;
        }
        if let Some(v) = kv.parsed("grad_clip")? {
            self.grad_clip = v;
        }
        if let Some(v) = kv.parsed("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.parsed("checkpoint_every")? {
            self.checkpoint_every = v;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("mask_mode", self.mask_mode);
        kv.push("policy", self.policy);
        kv.push("batch_size", self.batch_size);
        match self.budget {
            Budget::Steps(n) => kv.push("steps", n),
            Budget::Epochs(n) => kv.push("epochs", n),
        }
        kv.push("learning_rate", self.learning_rate);
        kv.push("warmup_steps", self.warmup_steps);
        kv.push("adam_beta1", self.adam_beta1);
        kv.push("adam_beta2", self.adam_beta2);
        kv.push("adam_eps", self.adam_eps);
        kv.push("weight_decay", self.weight_decay);
        kv.push("grad_clip", self.grad_clip);
        kv.push("seed", self.seed);
        kv.push("checkpoint_every", self.checkpoint_every);
        kv
    }

    /// Learning rate at 1-based `step`: linear warmup, then constant.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        }
    }

    pub fn steps_per_epoch(&self, n_blocks: usize) -> u64 {
        n_blocks.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_blocks: usize) -> u64 {
        match self.budget {
            Budget::Steps(n) => n,
            Budget::Epochs(e) => e * self.steps_per_epoch(n_blocks),
        }
    }

    /// Block indices used at 0-based `step`.
    pub fn batch_indices(&self, step: u64, n_blocks: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n_blocks).max(1);
        let epoch = step / spe;
        let mut order: Vec<usize> = (0..n_blocks).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0xA24B_AED4_963E_E407));
        order.shuffle(&mut rng);
        let start = (step % spe) as usize * self.batch_size;
        order[start..(start + self.batch_size).min(n_blocks)].to_vec()
    }
}

/// Decoupled-weight-decay Adam over flat parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    /// One update at 1-based step `t`. Tensors flagged in `decay` also get
    /// weight decay.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &self,
        t: u64,
        lr: f64,
        params: Vec<&mut [f64]>,
        grads: Vec<&[f64]>,
        first: Vec<&mut [f64]>,
        second: Vec<&mut [f64]>,
        decay: &[bool],
    ) {
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for ((((p, g), m), v), &dk) in params.into_iter().zip(grads).zip(first).zip(second).zip(decay) {
            let wd = if dk { self.weight_decay } else { 0.0 };
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * p[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
    pub batch: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub final_checkpoint: Option<PathBuf>,
    pub tokens_seen: u64,
    pub wall_ms: f64,
    pub initial_weights_digest: String,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn batch_schedule(&self) -> Vec<Vec<usize>> {
        self.records.iter().map(|r| r.batch.clone()).collect()
    }

    /// Header of `# key = value` lines followed by one
    /// `step<TAB>loss<TAB>lr` record per step. Timings are left out so that
    /// reruns produce identical logs.
    pub fn to_log(&self, cfg: &TrainConfig) -> String {
        let mut s = String::new();
        for (k, v) in &cfg.to_kv().entries {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "# initial_weights_sha256 = {}", self.initial_weights_digest);
        let _ = writeln!(s, "step\tloss\tlr");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:.17e}\t{:.6e}", r.step, r.loss, r.lr);
        }
        s
    }
}

/// Owns the weights and optimizer state of one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub weights: ModelWeights,
    first: ModelWeights,
    second: ModelWeights,
    pub step: u64,
    pub vocab: Option<Vocab>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &ModelConfig, anchor_id: Option<TokenId>) -> Result<Self> {
        cfg.validate()?;
        let weights = init_weights(model, cfg.seed, anchor_id)?;
        Ok(Trainer {
            first: ModelWeights::zeros(model),
            second: ModelWeights::zeros(model),
            weights,
            cfg,
            step: 0,
            vocab: None,
        })
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let (first, second) = ck.optimizer.unwrap_or_else(|| {
            (
                ModelWeights::zeros(&ck.weights.config),
                ModelWeights::zeros(&ck.weights.config),
            )
        });
        Ok(Trainer {
            cfg,
            weights: ck.weights,
            first,
            second,
            step: ck.step,
            vocab: ck.vocab,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            step: self.step,
            vocab: self.vocab.clone(),
            policy: Some(self.cfg.policy),
            mask_mode: Some(self.cfg.mask_mode.to_string()),
            optimizer: Some((self.first.clone(), self.second.clone())),
        }
    }

    /// One optimizer step on the next scheduled batch.
    pub fn train_step(&mut self, blocks: &[SegmentedText]) -> Result<StepRecord> {
        let start = Instant::now();
        let batch = self.cfg.batch_indices(self.step, blocks.len());
        let mut grads = ModelWeights::zeros(&self.weights.config);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &b in &batch {
            let block = &blocks[b];
            let mask = self.cfg.mask_mode.build(block);
            let (l, g) = loss_and_grads(&self.weights, block, &mask)?;
            loss += l * scale;
            grads.add_scaled(&g, scale);
        }
        let t = self.step + 1;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at step {t}")));
        }
        if self.cfg.grad_clip > 0.0 {
            let norm = grads.squared_norm().sqrt();
            if norm > self.cfg.grad_clip {
                let s = self.cfg.grad_clip / norm;
                for g in grads.tensors_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        let lr = self.cfg.lr_at(t);
        let opt = AdamW {
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            eps: self.cfg.adam_eps,
            weight_decay: self.cfg.weight_decay,
        };
        let decay: Vec<bool> = self.weights.is_gain().iter().map(|g| !g).collect();
        opt.update(
            t,
            lr,
            self.weights.tensors_mut(),
            grads.tensors(),
            self.first.tensors_mut(),
            self.second.tensors_mut(),
            &decay,
        );
        if !self.weights.is_finite() {
            return Err(Error::Numeric(format!("weights became non-finite at step {t}")));
        }
        self.step = t;
        Ok(StepRecord {
            step: t,
            loss,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            batch,
        })
    }

    /// Trains until `self.step == until_step`, writing periodic checkpoints
    /// under `out/step-NNNNNN` and the final one into `out`.
    pub fn run(
        &mut self,
        blocks: &[SegmentedText],
        until_step: u64,
        out: Option<&Path>,
    ) -> Result<TrainReport> {
        if blocks.is_empty() {
            return Err(Error::contract("training needs at least one block"));
        }
        if let Some(i) = blocks.iter().position(|b| b.len() < 2) {
            return Err(Error::contract(format!("block {i} has fewer than two tokens")));
        }
        let start = Instant::now();
        let mut report = TrainReport {
            initial_weights_digest: self.weights.digest(),
            ..TrainReport::default()
        };
        while self.step < until_step {
            let rec = self.train_step(blocks)?;
            report.tokens_seen += rec.batch.iter().map(|&b| blocks[b].len() as u64).sum::<u64>();
            report.records.push(rec);
            if let (Some(dir), n) = (out, self.cfg.checkpoint_every) {
                if n > 0 && self.step % n == 0 && self.step < until_step {
                    self.checkpoint().save(&dir.join(format!("step-{:06}", self.step)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.checkpoint().save(dir)?;
            report.final_checkpoint = Some(dir.to_path_buf());
        }
        report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(report)
    }
}

/// Fresh training run over `blocks` for the configured budget.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    blocks: &[SegmentedText],
    anchor_id: Option<TokenId>,
) -> Result<(ModelWeights, TrainReport)> {
    let mut trainer = Trainer::new(cfg.clone(), model, anchor_id)?;
    let total = cfg.total_steps(blocks.len());
    let report = trainer.run(blocks, total, None)?;
    Ok((trainer.weights, report))
}

#[derive(Debug, Clone)]
pub struct ScratchArm {
    pub mask_mode: MaskMode,
    pub report: TrainReport,
    pub perplexity: f64,
    pub final_weights_digest: String,
}

#[derive(Debug, Clone)]
pub struct ScratchComparison {
    pub arms: Vec<ScratchArm>,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
}

/// Perplexities reported for an 18-layer model trained from scratch on
/// WikiText-103; recorded for context only.
pub const LARGE_SCALE_REFERENCE: [(&str, f64); 2] = [("ansan", 32.81), ("causal", 36.57)];

impl ScratchComparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# from-scratch comparison: causal vs anchor-masked training");
        let refs: Vec<String> = LARGE_SCALE_REFERENCE
            .iter()
            .map(|(m, p)| format!("{m} {p}"))
            .collect();
        let _ = writeln!(
            s,
            "# large-scale reference perplexity (not a target at this scale): {}",
            refs.join(", ")
        );
        let c = &self.model_config;
        let _ = writeln!(
            s,
            "# model: layers={} d_model={} heads={} d_ff={} context={} vocab={}",
            c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size
        );
        let _ = writeln!(
            s,
            "# train: steps={} batch={} lr={} warmup={} weight_decay={} grad_clip={} seed={}",
            self.arms.first().map_or(0, |a| a.report.records.len()),
            self.train_config.batch_size,
            self.train_config.learning_rate,
            self.train_config.warmup_steps,
            self.train_config.weight_decay,
            self.train_config.grad_clip,
            self.train_config.seed
        );
        let _ = writeln!(s, "arm\tfinal_loss\tperplexity\ttokens_seen\tinitial_weights");
        for a in &self.arms {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{}\t{}",
                a.mask_mode,
                a.report.losses().last().copied().unwrap_or(f64::NAN),
                a.perplexity,
                a.report.tokens_seen,
                &a.report.initial_weights_digest[..16]
            );
        }
        s
    }
}

/// Trains a causal arm and an anchor-masked arm that differ only in their
/// masks, then evaluates each under its own mask.
pub fn compare_from_scratch(
    model: &ModelConfig,
    base: &TrainConfig,
    blocks: &[SegmentedText],
    eval_text: &SegmentedText,
    eval_context_len: usize,
    anchor_id: Option<TokenId>,
    scaffold_id: Option<TokenId>,
) -> Result<ScratchComparison> {
    let mut arms = Vec::with_capacity(2);
    for mode in [MaskMode::Causal, MaskMode::Ansan] {
        let cfg = TrainConfig {
            mask_mode: mode,
            ..base.clone()
        };
        let (weights, report) = train(&cfg, model, blocks, anchor_id)?;
        let ppl = perplexity(&weights, eval_text, mode, eval_context_len, scaffold_id)?;
        arms.push(ScratchArm {
            mask_mode: mode,
            perplexity: ppl,
            final_weights_digest: weights.digest(),
            report,
        });
    }
    if arms[0].report.initial_weights_digest != arms[1].report.initial_weights_digest {
        return Err(Error::contract("comparison arms started from different weights"));
    }
    if arms[0].report.batch_schedule() != arms[1].report.batch_schedule() {
        return Err(Error::contract("comparison arms saw different batch schedules"));
    }
    Ok(ScratchComparison {
        arms,
        train_config: base.clone(),
        model_config: model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            context_len: 16,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
        }
    }

    fn blocks() -> Vec<SegmentedText> {
        (0..5)
            .map(|i| SegmentedText {
                ids: vec![5 + i % 3, 6, 4, 7, 8, 4],
                is_anchor: vec![false, false, true, false, false, true],
                seq_index: vec![0, 0, 0, 1, 1, 1],
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_equal() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            budget: Budget::Steps(1),
            ..TrainConfig::default()
        };
        let before = init_weights(&tiny_model(), cfg.seed, None).unwrap();
        let (after, _) = train(&cfg, &tiny_model(), &blocks(), None).unwrap();
        assert_eq!(before.digest(), after.digest());
    }

    #[test]
    fn warmup_is_linear_then_constant() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), cfg.learning_rate / 20.0);
        assert_eq!(cfg.lr_at(10), cfg.learning_rate * 0.5);
        assert_eq!(cfg.lr_at(20), cfg.learning_rate);
        assert_eq!(cfg.lr_at(500), cfg.learning_rate);
        let flat = TrainConfig {
            warmup_steps: 0,
            ..cfg
        };
        assert_eq!(flat.lr_at(1), flat.learning_rate);
    }

    #[test]
    fn adamw_contracts_a_quadratic() {
        let opt = AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let cfg = TrainConfig {
            learning_rate: 0.05,
            warmup_steps: 5,
            ..TrainConfig::default()
        };
        let mut w = vec![1.0, -2.0, 0.5, 3.0];
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        let mut prev = f64::INFINITY;
        for t in 1..=40u64 {
            let g = w.clone();
            opt.update(t, cfg.lr_at(t), vec![&mut w], vec![&g], vec![&mut m], vec![&mut v], &[true]);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if t > cfg.warmup_steps {
                assert!(norm < prev, "step {t}: {norm} >= {prev}");
            }
            prev = norm;
        }
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut seen: Vec<usize> = (0..3).flat_map(|s| cfg.batch_indices(s, 8)).collect();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        assert_eq!(cfg.batch_indices(2, 8).len(), 2);
        assert_eq!(cfg.total_steps(8), 200);
        let ep = TrainConfig {
            budget: Budget::Epochs(2),
            ..cfg
        };
        assert_eq!(ep.total_steps(8), 6);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = TrainConfig {
            batch_size: 2,
            budget: Budget::Steps(6),
            learning_rate: 1e-2,
            warmup_steps: 2,
            ..TrainConfig::default()
        };
        let (_, a) = train(&cfg, &tiny_model(), &blocks(), None).unwrap();
        let (_, b) = train(&cfg, &tiny_model(), &blocks(), None).unwrap();
        assert_eq!(a.losses(), b.losses());
        assert!(a.losses().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn resume_matches_continuous_run() {
        let cfg = TrainConfig {
            batch_size: 2,
            learning_rate: 1e-2,
            warmup_steps: 2,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut full = Trainer::new(cfg.clone(), &tiny_model(), None).unwrap();
        let whole = full.run(&blocks(), 6, None).unwrap();

        let mut first = Trainer::new(cfg.clone(), &tiny_model(), None).unwrap();
        let a = first.run(&blocks(), 3, Some(dir.path())).unwrap();
        let ck = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(ck.step, 3);
        let mut second = Trainer::from_checkpoint(cfg, ck).unwrap();
        let b = second.run(&blocks(), 6, None).unwrap();
        let mut split = a.losses();
        split.extend(b.losses());
        assert_eq!(split, whole.losses());
        assert_eq!(second.weights.digest(), full.weights.digest());
    }

    #[test]
    fn short_blocks_are_rejected() {
        let cfg = TrainConfig::default();
        let bad = vec![SegmentedText::plain(vec![1])];
        assert!(matches!(train(&cfg, &tiny_model(), &bad, None), Err(Error::Contract(_))));
        assert!(matches!(train(&cfg, &tiny_model(), &[], None), Err(Error::Contract(_))));
    }

    #[test]
    fn config_file_overrides() {
        let kv = KvFile::parse("mask_mode = causal\nsteps = 7\nlearning_rate = 0.001\npolicy = every:10").unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&kv).unwrap();
        assert_eq!(cfg.mask_mode, MaskMode::Causal);
        assert_eq!(cfg.budget, Budget::Steps(7));
        assert_eq!(cfg.policy, AnchorPolicy::EveryN(10));
        let mut back = TrainConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        let bad = KvFile::parse("adam_beta1 = 1.5").unwrap();
        assert!(TrainConfig::default().apply_kv(&bad).is_err());
    }
}
