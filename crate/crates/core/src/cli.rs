//! `anchorlm` command-line tool: prepare, train, generate, eval, synth.
//!
//! Every command writes its outputs plus a `manifest.json` into one run
//! directory: `--out` when given, otherwise
//! `$ANCHORLM_DATA_DIR/run-<unix-seconds>-<config-digest8>` (the variable
//! defaults to `runs`). Report bodies never contain timings; those go to
//! the manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    annotate, build_vocab, hex_digest, pack_training_blocks, AnchorPolicy, SegmentedText, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_anchor_positions, load_mc_items, perplexity_report, render_mc_items, run_mc_task,
    McConfig, McTask,
};
use crate::infer::{generate, GenerationConfig, Sampling};
use crate::kvfile::KvFile;
use crate::mask::MaskMode;
use crate::model::{ModelConfig, ModelWeights};
use crate::synth::{synth_corpus, synth_mc_items};
use crate::train::{Budget, TrainConfig, Trainer};

pub const DATA_DIR_ENV: &str = "ANCHORLM_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "anchorlm", version, about = "Anchor-attention language model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary and packed, anchor-annotated training blocks.
    Prepare(PrepareArgs),
    /// Train a model on a prepared data directory.
    Train(TrainArgs),
    /// Generate a continuation for a prompt.
    Generate(GenerateArgs),
    /// Perplexity, multiple-choice or anchor-position ablation evaluation.
    Eval(EvalArgs),
    /// Write a synthetic corpus and multiple-choice task files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Corpus files, one document per line.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// ep, ac, every:N or random:P[:SEED].
    #[arg(long, default_value = "ac", value_parser = parse_policy)]
    pub policy: AnchorPolicy,
    #[arg(long, default_value_t = 8000)]
    pub vocab_size: usize,
    /// Reuse an existing vocabulary file instead of building one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub context_len: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_mask_mode)]
    pub mask_mode: Option<MaskMode>,
    /// `key = value` file with training and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Continue from this checkpoint up to the configured step count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub prompt: String,
    /// Defaults to the checkpoint's policy.
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<AnchorPolicy>,
    #[arg(long, value_enum, default_value = "on")]
    pub reduce: OnOff,
    #[arg(long, default_value_t = 32)]
    pub max_new: usize,
    /// Drop `<AC>` tokens from the printed text.
    #[arg(long)]
    pub strip_anchors: bool,
    /// Sample at this temperature instead of greedy decoding.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Ppl,
    Mc,
    Ablation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: EvalTask,
    /// Held-out text for `ppl`, one document per line.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Multiple-choice items (JSON lines) for `mc` and `ablation`.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Demonstration pool; defaults to the items file.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    /// Score with anchor masks and anchor-reduced caching.
    #[arg(long)]
    pub ansan: bool,
    /// Recompute the full prompt for every choice.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<AnchorPolicy>,
    #[arg(long, value_parser = parse_mask_mode)]
    pub mask_mode: Option<MaskMode>,
    #[arg(long)]
    pub eval_context_len: Option<usize>,
    /// Ablation arm as `POLICY=CHECKPOINT_DIR`; repeat per arm.
    #[arg(long = "arm")]
    pub arms: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Approximate size of the training corpus in bytes.
    #[arg(long, default_value_t = 1_000_000)]
    pub bytes: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 4)]
    pub choices: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_policy(s: &str) -> std::result::Result<AnchorPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mask_mode(s: &str) -> std::result::Result<MaskMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// One per command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub wall_clock: serde_json::Value,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Digests of a file, or of every file under a directory in sorted order.
fn digests(path: &Path) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == "manifest.json") {
                continue;
            }
            out.extend(digests(&e)?);
        }
    } else {
        let bytes = fs::read(path).map_err(|e| Error::input(path, e.to_string()))?;
        out.push(FileDigest {
            path: path.display().to_string(),
            sha256: hex_digest(&bytes),
        });
    }
    Ok(out)
}

struct Run {
    command: &'static str,
    config: BTreeMap<String, String>,
    seeds: Vec<u64>,
    inputs: Vec<FileDigest>,
    started: u128,
    dir: PathBuf,
}

impl Run {
    fn start(command: &'static str, out: Option<&Path>, config: BTreeMap<String, String>) -> Result<Run> {
        let started = unix_ms();
        let dir = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let root = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                let mut key = command.to_string();
                for (k, v) in &config {
                    key.push_str(&format!("\n{k}={v}"));
                }
                let digest = hex_digest(key.as_bytes());
                root.join(format!("run-{}-{}", started / 1000, &digest[..8]))
            }
        };
        fs::create_dir_all(&dir)?;
        Ok(Run {
            command,
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            started,
            dir,
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(digests(path)?);
        Ok(())
    }

    fn finish(self, wall_clock: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: digests(&self.dir)?,
            started_unix_ms: self.started,
            finished_unix_ms: unix_ms(),
            wall_clock,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.dir)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))
}

fn documents(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<PathBuf> {
    if a.context_len < 2 {
        return Err(Error::config("context_len must be at least 2"));
    }
    let mut config = BTreeMap::new();
    config.insert("policy".into(), a.policy.to_string());
    config.insert("vocab_size".into(), a.vocab_size.to_string());
    config.insert("context_len".into(), a.context_len.to_string());
    let mut run = Run::start("prepare", a.out.as_deref(), config)?;
    if let AnchorPolicy::RandomP { seed, .. } = a.policy {
        run.seeds.push(seed);
    }
    for p in &a.corpus {
        run.input(p)?;
    }
    let vocab = match &a.vocab {
        Some(p) => {
            run.input(p)?;
            Vocab::load(p)?
        }
        None => build_vocab(&a.corpus, &a.policy, a.vocab_size)?,
    };
    vocab.anchor_id_for(&a.policy)?;

    let mut docs = Vec::new();
    for p in &a.corpus {
        let text = read_text(p)?;
        for doc in documents(&text) {
            let policy = a.policy.for_document(docs.len());
            docs.push(annotate(doc, &vocab, &policy)?);
        }
    }
    let blocks = pack_training_blocks(&docs, a.context_len);
    if blocks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    vocab.save(&run.dir.join("vocab.txt"))?;
    let lines: String = blocks.iter().map(|b| b.to_line() + "\n").collect();
    fs::write(run.dir.join("blocks.txt"), lines)?;
    let mut info = KvFile::default();
    info.push("policy", a.policy);
    info.push("context_len", a.context_len);
    info.push("vocab_size", vocab.len());
    info.push("vocab_sha256", vocab.digest());
    info.push("blocks", blocks.len());
    info.push("tokens", blocks.iter().map(SegmentedText::len).sum::<usize>());
    fs::write(run.dir.join("dataset.txt"), info.render())?;
    run.finish(serde_json::Value::Null)
}

pub struct Dataset {
    pub vocab: Vocab,
    pub policy: AnchorPolicy,
    pub context_len: usize,
    pub blocks: Vec<SegmentedText>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ipath = dir.join("dataset.txt");
    let info = KvFile::parse(&read_text(&ipath)?).map_err(|e| Error::input(&ipath, e.to_string()))?;
    let bad = |e: Error| Error::input(&ipath, e.to_string());
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    if info.get("vocab_sha256") != Some(vocab.digest().as_str()) {
        return Err(Error::input(dir.join("vocab.txt"), "vocabulary does not match dataset.txt"));
    }
    let bpath = dir.join("blocks.txt");
    let mut blocks = Vec::new();
    for (n, line) in read_text(&bpath)?.lines().enumerate() {
        let seg = SegmentedText::parse_line(line).map_err(|e| Error::input_at(&bpath, n + 1, e.to_string()))?;
        if seg.ids.iter().any(|&id| id as usize >= vocab.len()) {
            return Err(Error::input_at(&bpath, n + 1, "token id outside the vocabulary"));
        }
        blocks.push(seg);
    }
    Ok(Dataset {
        vocab,
        policy: info.required("policy").map_err(bad)?,
        context_len: info.required("context_len").map_err(bad)?,
        blocks,
    })
}

fn apply_model_kv(cfg: &mut ModelConfig, kv: &KvFile) -> Result<()> {
    if let Some(v) = kv.parsed("n_layers")? {
        cfg.n_layers = v;
    }
    if let Some(v) = kv.parsed("n_heads")? {
        cfg.n_heads = v;
    }
    if let Some(v) = kv.parsed("d_model")? {
        cfg.d_model = v;
    }
    if let Some(v) = kv.parsed("d_ff")? {
        cfg.d_ff = v;
    }
    if let Some(v) = kv.parsed("context_len")? {
        cfg.context_len = v;
    }
    if let Some(v) = kv.parsed("rope_base")? {
        cfg.rope_base = v;
    }
    if let Some(v) = kv.parsed("norm_eps")? {
        cfg.norm_eps = v;
    }
    cfg.validate()
}

pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let data = load_dataset(&a.data)?;
    let mut cfg = TrainConfig {
        policy: data.policy,
        ..TrainConfig::default()
    };
    let mut model = ModelConfig::desk(data.vocab.len());
    model.context_len = data.context_len;
    if let Some(p) = &a.config {
        let kv = KvFile::parse(&read_text(p)?)?;
        cfg.apply_kv(&kv)?;
        apply_model_kv(&mut model, &kv)?;
    }
    cfg.policy = data.policy;
    if let Some(m) = a.mask_mode {
        cfg.mask_mode = m;
    }
    if let Some(s) = a.steps {
        cfg.budget = Budget::Steps(s);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    if model.context_len < data.context_len {
        return Err(Error::config("model context_len is shorter than the prepared blocks"));
    }
    let anchor_id = data.vocab.anchor();

    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(&checkpoint_dir(p))?;
            if ck.vocab.as_ref().is_some_and(|v| v.digest() != data.vocab.digest()) {
                return Err(Error::config("checkpoint vocabulary differs from the dataset"));
            }
            model = ck.weights.config.clone();
            Trainer::from_checkpoint(cfg.clone(), ck)?
        }
        None => Trainer::new(cfg.clone(), &model, anchor_id)?,
    };
    trainer.vocab = Some(data.vocab.clone());

    let mut config: BTreeMap<String, String> = cfg.to_kv().entries.into_iter().collect();
    for (k, v) in [
        ("n_layers", model.n_layers.to_string()),
        ("n_heads", model.n_heads.to_string()),
        ("d_model", model.d_model.to_string()),
        ("d_ff", model.d_ff.to_string()),
        ("context_len", model.context_len.to_string()),
        ("rope_base", model.rope_base.to_string()),
        ("norm_eps", model.norm_eps.to_string()),
        ("vocab_size", model.vocab_size.to_string()),
    ] {
        config.insert(k.into(), v);
    }
    if let Some(p) = &a.resume {
        config.insert("resume".into(), p.display().to_string());
    }
    let mut run = Run::start("train", a.out.as_deref(), config)?;
    run.seeds.push(cfg.seed);
    run.input(&a.data)?;
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    if let Some(p) = &a.resume {
        run.input(&checkpoint_dir(p))?;
    }

    let total = cfg.total_steps(data.blocks.len());
    let ckpt_dir = run.dir.join("checkpoint");
    let report = trainer.run(&data.blocks, total, Some(&ckpt_dir))?;
    fs::write(run.dir.join("train_log.tsv"), report.to_log(&cfg))?;
    let step_ms: Vec<f64> = report.records.iter().map(|r| r.wall_ms).collect();
    run.finish(serde_json::json!({
        "total_ms": report.wall_ms,
        "tokens_seen": report.tokens_seen,
        "step_ms": step_ms,
    }))
}

/// `p` itself if it holds a checkpoint, else `p/checkpoint` (a run dir).
pub fn checkpoint_dir(p: &Path) -> PathBuf {
    if p.join("manifest.txt").exists() {
        p.to_path_buf()
    } else {
        p.join("checkpoint")
    }
}

/// A checkpoint with its vocabulary and the annotation it was trained with.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub weights: ModelWeights,
    pub vocab: Vocab,
    pub policy: AnchorPolicy,
    pub mask_mode: MaskMode,
}

pub fn load_model(p: &Path, policy: Option<AnchorPolicy>) -> Result<Loaded> {
    let dir = checkpoint_dir(p);
    let ck = Checkpoint::load(&dir)?;
    let vocab = ck
        .vocab
        .ok_or_else(|| Error::input(&dir, "checkpoint has no vocabulary"))?;
    let mask_mode = match &ck.mask_mode {
        Some(m) => m.parse()?,
        None => MaskMode::Ansan,
    };
    let policy = policy.or(ck.policy).unwrap_or(AnchorPolicy::AppendedToken);
    Ok(Loaded {
        weights: ck.weights,
        vocab,
        policy,
        mask_mode,
    })
}

/// Annotates a prompt. An unfinished last sentence gets no `<AC>`, so the
/// model continues it rather than starting a new one.
pub fn annotate_prompt(prompt: &str, vocab: &Vocab, policy: &AnchorPolicy, mask_mode: MaskMode) -> Result<SegmentedText> {
    if mask_mode == MaskMode::Causal {
        return Ok(SegmentedText::plain(vocab.encode(prompt)));
    }
    let mut seg = annotate(prompt, vocab, policy)?;
    let finished = prompt.trim_end().ends_with(['.', '!', '?']);
    if *policy == AnchorPolicy::AppendedToken && !finished && seg.is_anchor.last() == Some(&true) {
        seg.ids.pop();
        seg.is_anchor.pop();
        seg.seq_index.pop();
    }
    Ok(seg)
}

#[derive(Debug, Serialize)]
struct GenerationReport {
    prompt: String,
    policy: String,
    mask_mode: String,
    reduce: bool,
    prompt_tokens: usize,
    generated_ids: Vec<u32>,
    text: String,
    live_sizes: Vec<usize>,
    final_live: usize,
    peak_live: usize,
    total_appends: usize,
    total_discards: usize,
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(PathBuf, String)> {
    let m = load_model(&a.ckpt, a.policy)?;
    let prefix = annotate_prompt(&a.prompt, &m.vocab, &m.policy, m.mask_mode)?;
    if prefix.is_empty() {
        return Err(Error::contract("prompt has no tokens"));
    }
    let anchor_id = match m.mask_mode {
        MaskMode::Ansan => Some(m.vocab.anchor_id_for(&m.policy)?),
        MaskMode::Causal => None,
    };
    let mut gen = GenerationConfig::greedy(a.max_new, m.vocab.eos(), anchor_id);
    gen.mask_mode = m.mask_mode;
    gen.reduction_enabled = a.reduce == OnOff::On;
    if let Some(t) = a.temperature {
        gen.sampling = Sampling::Temperature { t, seed: a.seed };
    }
    gen.validate()?;

    let mut config = BTreeMap::new();
    config.insert("prompt".into(), a.prompt.clone());
    config.insert("policy".into(), m.policy.to_string());
    config.insert("mask_mode".into(), m.mask_mode.to_string());
    config.insert("reduce".into(), gen.reduction_enabled.to_string());
    config.insert("max_new".into(), a.max_new.to_string());
    config.insert("strip_anchors".into(), a.strip_anchors.to_string());
    if let Some(t) = a.temperature {
        config.insert("temperature".into(), t.to_string());
    }
    let mut run = Run::start("generate", a.out.as_deref(), config)?;
    run.seeds.push(a.seed);
    run.input(&checkpoint_dir(&a.ckpt))?;

    let res = generate(&m.weights, &prefix, &gen)?;
    let shown: Vec<u32> = res
        .generated
        .iter()
        .copied()
        .filter(|&id| !(a.strip_anchors && Some(id) == m.vocab.anchor()))
        .collect();
    let text = m.vocab.decode(&shown);
    let report = GenerationReport {
        prompt: a.prompt.clone(),
        policy: m.policy.to_string(),
        mask_mode: m.mask_mode.to_string(),
        reduce: gen.reduction_enabled,
        prompt_tokens: prefix.len(),
        generated_ids: res.generated.clone(),
        text: text.clone(),
        live_sizes: res.live_sizes.clone(),
        final_live: res.final_live,
        peak_live: res.stats.peak_live_count,
        total_appends: res.stats.total_appends,
        total_discards: res.stats.total_discards,
    };
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(run.dir.join("generation.json"), &body)?;
    fs::write(run.dir.join("generation.txt"), format!("{text}\n"))?;
    let dir = run.finish(serde_json::json!({
        "prefix_ms": res.prefix_time.as_secs_f64() * 1e3,
        "decode_ms": res.decode_time.as_secs_f64() * 1e3,
    }))?;
    Ok((dir, text))
}

/// Documents of `text`, each annotated and starting a fresh sequence.
pub fn eval_text(text: &str, vocab: &Vocab, policy: &AnchorPolicy, mask_mode: MaskMode) -> Result<SegmentedText> {
    let mut seg = SegmentedText::new();
    for (i, doc) in documents(text).enumerate() {
        let d = match mask_mode {
            MaskMode::Ansan => annotate(doc, vocab, &policy.for_document(i))?,
            MaskMode::Causal => SegmentedText::plain(vocab.encode(doc)),
        };
        seg.extend_with(&d, false);
    }
    Ok(seg)
}

fn mc_task(a: &EvalArgs, run: &mut Run) -> Result<McTask> {
    let items_path = a
        .items
        .as_ref()
        .ok_or_else(|| Error::Usage("--items is required for this task".into()))?;
    run.input(items_path)?;
    let items = load_mc_items(items_path)?;
    let demo_pool = match &a.demos {
        Some(p) => {
            run.input(p)?;
            load_mc_items(p)?
        }
        None => items.clone(),
    };
    let name = items_path
        .file_stem()
        .map_or("mc".into(), |s| s.to_string_lossy().into_owned());
    Ok(McTask {
        name,
        items,
        demo_pool,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(PathBuf, String)> {
    let mut config = BTreeMap::new();
    config.insert("task".into(), format!("{:?}", a.task).to_lowercase());
    config.insert("shots".into(), a.shots.to_string());
    config.insert("ansan".into(), a.ansan.to_string());
    config.insert("no_cache".into(), a.no_cache.to_string());
    if let Some(p) = a.policy {
        config.insert("policy".into(), p.to_string());
    }
    if let Some(m) = a.mask_mode {
        config.insert("mask_mode".into(), m.to_string());
    }
    if let Some(n) = a.eval_context_len {
        config.insert("eval_context_len".into(), n.to_string());
    }
    for (i, arm) in a.arms.iter().enumerate() {
        config.insert(format!("arm{i}"), arm.clone());
    }

    if a.task == EvalTask::Ablation {
        if a.arms.is_empty() {
            return Err(Error::Usage("ablation needs at least one --arm POLICY=CHECKPOINT".into()));
        }
        let mut run = Run::start("eval", a.out.as_deref(), config)?;
        run.seeds.push(a.seed);
        let task = mc_task(a, &mut run)?;
        let mut loaded = Vec::new();
        for arm in &a.arms {
            let (p, dir) = arm
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("arm `{arm}` is not POLICY=CHECKPOINT")))?;
            let policy: AnchorPolicy = p.parse()?;
            run.input(&checkpoint_dir(Path::new(dir)))?;
            loaded.push((policy, load_model(Path::new(dir), Some(policy))?));
        }
        let vocab = &loaded[0].1.vocab;
        if loaded.iter().any(|(_, m)| m.vocab.digest() != vocab.digest()) {
            return Err(Error::config("ablation arms must share one vocabulary"));
        }
        let arms: Vec<(AnchorPolicy, &ModelWeights)> = loaded.iter().map(|(p, m)| (*p, &m.weights)).collect();
        let mut base = McConfig::new(a.shots, AnchorPolicy::AppendedToken);
        base.seed = a.seed;
        base.reuse_demo_cache = !a.no_cache;
        let report = ablation_anchor_positions(&arms, vocab, &task, &base)?;
        let body = report.render();
        fs::write(run.dir.join("report.tsv"), &body)?;
        let walls: Vec<serde_json::Value> = report.rows.iter().map(|(_, r)| r.wall_clock_json()).collect();
        let dir = run.finish(serde_json::Value::Array(walls))?;
        return Ok((dir, body));
    }

    let ckpt = a
        .ckpt
        .as_ref()
        .ok_or_else(|| Error::Usage("--ckpt is required for this task".into()))?;
    let m = load_model(ckpt, a.policy)?;
    let mut run = Run::start("eval", a.out.as_deref(), config)?;
    run.seeds.push(a.seed);
    run.input(&checkpoint_dir(ckpt))?;
    let report = match a.task {
        EvalTask::Ppl => {
            let path = a
                .text
                .as_ref()
                .ok_or_else(|| Error::Usage("--text is required for ppl".into()))?;
            run.input(path)?;
            let mode = a.mask_mode.unwrap_or(m.mask_mode);
            let seg = eval_text(&read_text(path)?, &m.vocab, &m.policy, mode)?;
            let scaffold = match mode {
                MaskMode::Ansan if m.policy.uses_anchor_token() => m.vocab.anchor(),
                _ => None,
            };
            let len = a.eval_context_len.unwrap_or(m.weights.config.context_len);
            let policy = (mode == MaskMode::Ansan).then_some(m.policy);
            perplexity_report(&m.weights, &seg, mode, len, scaffold, policy)?
        }
        EvalTask::Mc => {
            let task = mc_task(a, &mut run)?;
            let cfg = McConfig {
                shots: a.shots,
                policy: m.policy,
                use_ansan: a.ansan,
                reuse_demo_cache: !a.no_cache,
                seed: a.seed,
                measure_speed: a.ansan && !a.no_cache,
            };
            run_mc_task(&m.weights, &m.vocab, &task, &cfg)?
        }
        EvalTask::Ablation => unreachable!(),
    };
    let body = report.to_json();
    fs::write(run.dir.join("report.json"), &body)?;
    let dir = run.finish(report.wall_clock_json())?;
    Ok((dir, body))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf> {
    let mut config = BTreeMap::new();
    config.insert("bytes".into(), a.bytes.to_string());
    config.insert("items".into(), a.items.to_string());
    config.insert("choices".into(), a.choices.to_string());
    let mut run = Run::start("synth", a.out.as_deref(), config)?;
    run.seeds.push(a.seed);
    fs::write(run.dir.join("corpus.txt"), synth_corpus(a.seed, 0, a.bytes))?;
    fs::write(run.dir.join("heldout.txt"), synth_corpus(a.seed, 1, (a.bytes / 20).max(1)))?;
    fs::write(
        run.dir.join("mc_test.jsonl"),
        render_mc_items(&synth_mc_items(a.seed, 2, a.items, a.choices)),
    )?;
    fs::write(
        run.dir.join("mc_demos.jsonl"),
        render_mc_items(&synth_mc_items(a.seed, 3, a.items.max(10), a.choices)),
    )?;
    run.finish(serde_json::Value::Null)
}

/// Runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let start = Instant::now();
    let result = match &cli.command {
        Command::Prepare(a) => cmd_prepare(a).map(|d| format!("wrote {}", d.display())),
        Command::Train(a) => cmd_train(a).map(|d| format!("wrote {}", d.display())),
        Command::Generate(a) => cmd_generate(a).map(|(d, text)| format!("{text}\n(wrote {})", d.display())),
        Command::Eval(a) => cmd_eval(a).map(|(d, body)| format!("{}(wrote {})", body, d.display())),
        Command::Synth(a) => cmd_synth(a).map(|d| format!("wrote {}", d.display())),
    };
    match result {
        Ok(msg) => {
            let _ = writeln!(std::io::stdout(), "{msg}");
            eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("anchorlm: {e}");
            e.exit_code()
        }
    }
}
