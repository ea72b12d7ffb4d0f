//! A small pre-norm decoder-only transformer in double precision.
//!
//! Each block is RMS norm, multi-head attention with rotary positions, a
//! residual add, RMS norm, a GELU feed-forward layer and another residual
//! add. Attention honours an explicit binary mask: masked keys contribute
//! exactly zero and every row is renormalised over its visible keys.
//! Gradients are derived by hand for the cache-free training path.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cache::AnchorKVCache;
use crate::corpus::{hex_digest, SegmentedText, TokenId};
use crate::error::{Error, Result};
use crate::mask::MaskMatrix;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub rope_base: f64,
    pub norm_eps: f64,
}

impl ModelConfig {
    /// Default desk-scale shape for a given vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            context_len: 256,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("context_len", self.context_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config("d_model must be divisible by n_heads"));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::config("head dimension must be even for rotary positions"));
        }
        if !(self.rope_base > 0.0) || !(self.norm_eps > 0.0) {
            return Err(Error::config("rope_base and norm_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ffn_norm: Array1<f64>,
    /// `d_model x d_ff`
    pub w_up: Array2<f64>,
    /// `d_ff x d_model`
    pub w_down: Array2<f64>,
}

/// Model parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `vocab_size x d_model`
    pub tok_emb: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Array1<f64>,
    /// `d_model x vocab_size`
    pub head: Array2<f64>,
}

impl ModelWeights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
        let layer = LayerWeights {
            attn_norm: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ffn_norm: Array1::zeros(d),
            w_up: Array2::zeros((d, f)),
            w_down: Array2::zeros((f, d)),
        };
        ModelWeights {
            config: config.clone(),
            tok_emb: Array2::zeros((v, d)),
            layers: vec![layer; config.n_layers],
            final_norm: Array1::zeros(d),
            head: Array2::zeros((d, v)),
        }
    }

    /// Names and shapes of every tensor, in serialization order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = vec![("tok_emb".to_string(), self.tok_emb.shape().to_vec())];
        for (i, l) in self.layers.iter().enumerate() {
            let named: [(&str, &[usize]); 8] = [
                ("attn_norm", l.attn_norm.shape()),
                ("wq", l.wq.shape()),
                ("wk", l.wk.shape()),
                ("wv", l.wv.shape()),
                ("wo", l.wo.shape()),
                ("ffn_norm", l.ffn_norm.shape()),
                ("w_up", l.w_up.shape()),
                ("w_down", l.w_down.shape()),
            ];
            for (n, shape) in named {
                specs.push((format!("layers.{i}.{n}"), shape.to_vec()));
            }
        }
        specs.push(("final_norm".into(), self.final_norm.shape().to_vec()));
        specs.push(("head".into(), self.head.shape().to_vec()));
        specs
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.tok_emb.as_slice().unwrap()];
        for l in &self.layers {
            out.extend([
                l.attn_norm.as_slice().unwrap(),
                l.wq.as_slice().unwrap(),
                l.wk.as_slice().unwrap(),
                l.wv.as_slice().unwrap(),
                l.wo.as_slice().unwrap(),
                l.ffn_norm.as_slice().unwrap(),
                l.w_up.as_slice().unwrap(),
                l.w_down.as_slice().unwrap(),
            ]);
        }
        out.push(self.final_norm.as_slice().unwrap());
        out.push(self.head.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.tok_emb.as_slice_mut().unwrap()];
        for l in &mut self.layers {
            out.extend([
                l.attn_norm.as_slice_mut().unwrap(),
                l.wq.as_slice_mut().unwrap(),
                l.wk.as_slice_mut().unwrap(),
                l.wv.as_slice_mut().unwrap(),
                l.wo.as_slice_mut().unwrap(),
                l.ffn_norm.as_slice_mut().unwrap(),
                l.w_up.as_slice_mut().unwrap(),
                l.w_down.as_slice_mut().unwrap(),
            ]);
        }
        out.push(self.final_norm.as_slice_mut().unwrap());
        out.push(self.head.as_slice_mut().unwrap());
        out
    }

    /// Which tensors are normalization gains (1-D).
    pub fn is_gain(&self) -> Vec<bool> {
        self.tensor_specs().iter().map(|(_, s)| s.len() == 1).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Content hash over the raw little-endian parameter bytes.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_params() * 8);
        for t in self.tensors() {
            for x in t {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        hex_digest(&bytes)
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelWeights, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum()
    }
}

/// Scaled-normal initialisation; gains start at one. When `anchor_id` is
/// given, that embedding row becomes the mean of all other rows.
pub fn init_weights(
    config: &ModelConfig,
    seed: u64,
    anchor_id: Option<TokenId>,
) -> Result<ModelWeights> {
    config.validate()?;
    let mut w = ModelWeights::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let gains = w.is_gain();
    for (t, is_gain) in w.tensors_mut().into_iter().zip(gains) {
        if is_gain {
            t.fill(1.0);
        } else {
            t.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
    }
    if let Some(a) = anchor_id {
        let a = a as usize;
        if a >= config.vocab_size {
            return Err(Error::config("anchor id outside the vocabulary"));
        }
        if config.vocab_size > 1 {
            let mut mean = Array1::<f64>::zeros(config.d_model);
            for (r, row) in w.tok_emb.axis_iter(Axis(0)).enumerate() {
                if r != a {
                    mean += &row;
                }
            }
            mean /= (config.vocab_size - 1) as f64;
            w.tok_emb.row_mut(a).assign(&mean);
        }
    }
    Ok(w)
}

/// Keys and values produced for the processed positions of one layer.
#[derive(Debug, Clone)]
pub struct LayerKv {
    /// Rotated keys, `T x d_model`.
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `T x vocab_size`
    pub logits: Array2<f64>,
    pub new_kv: Vec<LayerKv>,
}

impl ForwardOutput {
    /// Keys and values of row `t` across all layers, concatenated in the
    /// layout a [`CacheEntry`](crate::cache::CacheEntry) expects.
    pub fn entry_tensors(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for kv in &self.new_kv {
            keys.extend(kv.keys.row(t).iter());
            values.extend(kv.values.row(t).iter());
        }
        (keys, values)
    }
}

struct Rope {
    inv_freq: Vec<f64>,
    head_dim: usize,
    n_heads: usize,
}

impl Rope {
    fn new(config: &ModelConfig) -> Self {
        let hd = config.head_dim();
        let inv_freq = (0..hd / 2)
            .map(|i| config.rope_base.powf(-((2 * i) as f64) / hd as f64))
            .collect();
        Rope {
            inv_freq,
            head_dim: hd,
            n_heads: config.n_heads,
        }
    }

    /// Rotates each pair `(2i, 2i+1)` of every head by `sign * pos * freq_i`.
    fn apply(&self, x: &mut Array2<f64>, positions: &[usize], sign: f64) {
        for (mut row, &pos) in x.axis_iter_mut(Axis(0)).zip(positions) {
            for (i, &f) in self.inv_freq.iter().enumerate() {
                let (sin, cos) = (sign * pos as f64 * f).sin_cos();
                for h in 0..self.n_heads {
                    let a = h * self.head_dim + 2 * i;
                    let (x0, x1) = (row[a], row[a + 1]);
                    row[a] = x0 * cos - x1 * sin;
                    row[a + 1] = x0 * sin + x1 * cos;
                }
            }
        }
    }
}

/// Returns `(y, normalized, inverse_rms)` with `y = normalized * gain`.
fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>, eps: f64) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let inv_r: Array1<f64> = x
        .axis_iter(Axis(0))
        .map(|row| 1.0 / (row.dot(&row) / d + eps).sqrt())
        .collect();
    let n = x * &inv_r.view().insert_axis(Axis(1));
    let y = &n * gain;
    (y, n, inv_r)
}

fn rms_norm_backward(
    dy: &Array2<f64>,
    n: &Array2<f64>,
    inv_r: &Array1<f64>,
    gain: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let dgain = (dy * n).sum_axis(Axis(0));
    let dn = dy * gain;
    let d = n.ncols() as f64;
    let mut dx = dn.clone();
    for ((mut dx_row, n_row), &ir) in dx.axis_iter_mut(Axis(0)).zip(n.axis_iter(Axis(0))).zip(inv_r) {
        let proj = dx_row.dot(&n_row) / d;
        Zip::from(&mut dx_row)
            .and(&n_row)
            .for_each(|g, &nv| *g = ir * (*g - nv * proj));
    }
    (dx, dgain)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Masked softmax of each row in place. Masked entries become exactly 0.
fn masked_softmax(scores: &mut Array2<f64>, mask: &MaskMatrix) {
    for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let bits = mask.row(i);
        let max = row
            .iter()
            .zip(bits)
            .filter(|(_, &b)| b)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (s, &b) in row.iter_mut().zip(bits) {
            if b {
                *s = (*s - max).exp();
                sum += *s;
            } else {
                *s = 0.0;
            }
        }
        row /= sum;
    }
}

struct LayerTape {
    n1: Array2<f64>,
    inv_r1: Array1<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    n2: Array2<f64>,
    inv_r2: Array1<f64>,
    b: Array2<f64>,
    u: Array2<f64>,
    z: Array2<f64>,
}

struct Tape {
    layers: Vec<LayerTape>,
    nf: Array2<f64>,
    inv_rf: Array1<f64>,
    f: Array2<f64>,
}

fn check_inputs(
    weights: &ModelWeights,
    ids: &[TokenId],
    positions: &[usize],
    mask: &MaskMatrix,
    cache: Option<&AnchorKVCache>,
) -> Result<usize> {
    let cfg = &weights.config;
    let t = ids.len();
    if positions.len() != t {
        return Err(Error::contract(format!(
            "{} positions for {t} tokens",
            positions.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::contract(format!("token id {bad} outside vocabulary")));
    }
    if positions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::contract("positions must be strictly increasing"));
    }
    let live = cache.map_or(0, AnchorKVCache::len);
    if let (Some(last), Some(&first)) = (cache.and_then(AnchorKVCache::last_position), positions.first()) {
        if first <= last {
            return Err(Error::contract(format!(
                "position {first} does not follow cached position {last}"
            )));
        }
    }
    if mask.rows() != t || mask.cols() != live + t {
        return Err(Error::contract(format!(
            "mask is {}x{}, expected {t}x{}",
            mask.rows(),
            mask.cols(),
            live + t
        )));
    }
    for i in 0..t {
        if !mask.get(i, live + i) {
            return Err(Error::contract(format!("mask row {i} hides the token from itself")));
        }
        if mask.row(i)[live + i + 1..].iter().any(|&b| b) {
            return Err(Error::contract(format!("mask row {i} attends to the future")));
        }
    }
    if let Some(c) = cache {
        let width = cfg.n_layers * cfg.d_model;
        if c.entries().iter().any(|e| e.keys.len() != width || e.values.len() != width) {
            return Err(Error::contract("cache entry dimensions do not match the model"));
        }
    }
    Ok(live)
}

fn cached_layer(cache: Option<&AnchorKVCache>, layer: usize, d: usize) -> (Array2<f64>, Array2<f64>) {
    let entries = cache.map_or(&[][..], AnchorKVCache::entries);
    let mut k = Array2::zeros((entries.len(), d));
    let mut v = Array2::zeros((entries.len(), d));
    for (r, e) in entries.iter().enumerate() {
        k.row_mut(r)
            .assign(&ArrayView1::from(&e.keys[layer * d..(layer + 1) * d]));
        v.row_mut(r)
            .assign(&ArrayView1::from(&e.values[layer * d..(layer + 1) * d]));
    }
    (k, v)
}

fn forward_impl(
    weights: &ModelWeights,
    ids: &[TokenId],
    positions: &[usize],
    mask: &MaskMatrix,
    cache: Option<&AnchorKVCache>,
    mut tape: Option<&mut Tape>,
) -> Result<ForwardOutput> {
    check_inputs(weights, ids, positions, mask, cache)?;
    let cfg = &weights.config;
    let (t, d, hd) = (ids.len(), cfg.d_model, cfg.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let rope = Rope::new(cfg);

    let mut h = Array2::<f64>::zeros((t, d));
    for (mut row, &id) in h.axis_iter_mut(Axis(0)).zip(ids) {
        row.assign(&weights.tok_emb.row(id as usize));
    }

    let mut new_kv = Vec::with_capacity(cfg.n_layers);
    for (li, layer) in weights.layers.iter().enumerate() {
        let (a, n1, inv_r1) = rms_norm(&h, &layer.attn_norm, cfg.norm_eps);
        let mut q = a.dot(&layer.wq);
        let mut k = a.dot(&layer.wk);
        let v = a.dot(&layer.wv);
        rope.apply(&mut q, positions, 1.0);
        rope.apply(&mut k, positions, 1.0);

        let (ck, cv) = cached_layer(cache, li, d);
        let k_all = concatenate(Axis(0), &[ck.view(), k.view()]).unwrap();
        let v_all = concatenate(Axis(0), &[cv.view(), v.view()]).unwrap();

        let mut attn = Array2::<f64>::zeros((t, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let cols = s![.., head * hd..(head + 1) * hd];
            let mut scores = q.slice(cols).dot(&k_all.slice(cols).t()) * scale;
            masked_softmax(&mut scores, mask);
            attn.slice_mut(cols).assign(&scores.dot(&v_all.slice(cols)));
            probs.push(scores);
        }
        let h_mid = &h + &attn.dot(&layer.wo);

        let (b, n2, inv_r2) = rms_norm(&h_mid, &layer.ffn_norm, cfg.norm_eps);
        let u = b.dot(&layer.w_up);
        let z = u.mapv(gelu);
        h = &h_mid + &z.dot(&layer.w_down);

        if let Some(tp) = tape.as_deref_mut() {
            tp.layers.push(LayerTape {
                n1,
                inv_r1,
                a,
                q,
                k: k.clone(),
                v: v.clone(),
                probs,
                attn,
                n2,
                inv_r2,
                b,
                u,
                z,
            });
        }
        new_kv.push(LayerKv { keys: k, values: v });
    }

    let (f, nf, inv_rf) = rms_norm(&h, &weights.final_norm, cfg.norm_eps);
    let logits = f.dot(&weights.head);
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    if let Some(tp) = tape {
        tp.nf = nf;
        tp.inv_rf = inv_rf;
        tp.f = f;
    }
    Ok(ForwardOutput { logits, new_kv })
}

/// Runs the model over `ids` at absolute `positions`, attending to the live
/// entries of `cache` (if any) and to the new tokens, as allowed by `mask`.
pub fn forward(
    weights: &ModelWeights,
    ids: &[TokenId],
    positions: &[usize],
    mask: &MaskMatrix,
    cache: Option<&AnchorKVCache>,
) -> Result<ForwardOutput> {
    forward_impl(weights, ids, positions, mask, cache, None)
}

/// Log-softmax of one logits row.
pub fn log_softmax(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.mapv(|x| x - lse)
}

/// Mean next-token cross-entropy over `block` and its exact gradient.
pub fn loss_and_grads(
    weights: &ModelWeights,
    block: &SegmentedText,
    mask: &MaskMatrix,
) -> Result<(f64, ModelWeights)> {
    let len = block.len();
    if len < 2 {
        return Err(Error::contract("training block needs at least two tokens"));
    }
    let cfg = &weights.config;
    let positions: Vec<usize> = (0..len).collect();
    let mut tape = Tape {
        layers: Vec::with_capacity(cfg.n_layers),
        nf: Array2::zeros((0, 0)),
        inv_rf: Array1::zeros(0),
        f: Array2::zeros((0, 0)),
    };
    let out = forward_impl(weights, &block.ids, &positions, mask, None, Some(&mut tape))?;

    let n_targets = (len - 1) as f64;
    let mut loss = 0.0;
    let mut dlogits = Array2::<f64>::zeros(out.logits.raw_dim());
    for t in 0..len - 1 {
        let lp = log_softmax(out.logits.row(t));
        let target = block.ids[t + 1] as usize;
        loss -= lp[target];
        let mut drow = dlogits.row_mut(t);
        Zip::from(&mut drow).and(&lp).for_each(|g, &l| *g = l.exp() / n_targets);
        drow[target] -= 1.0 / n_targets;
    }
    loss /= n_targets;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }

    let mut grads = ModelWeights::zeros(cfg);
    let (d, hd) = (cfg.d_model, cfg.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let rope = Rope::new(cfg);

    grads.head = tape.f.t().dot(&dlogits);
    let df = dlogits.dot(&weights.head.t());
    let (mut dh, dgf) = rms_norm_backward(&df, &tape.nf, &tape.inv_rf, &weights.final_norm);
    grads.final_norm = dgf;

    for (li, layer) in weights.layers.iter().enumerate().rev() {
        let lt = &tape.layers[li];
        let g = &mut grads.layers[li];

        g.w_down = lt.z.t().dot(&dh);
        let mut du = dh.dot(&layer.w_down.t());
        Zip::from(&mut du).and(&lt.u).for_each(|g, &u| *g *= gelu_grad(u));
        g.w_up = lt.b.t().dot(&du);
        let db = du.dot(&layer.w_up.t());
        let (dh_ffn, dg2) = rms_norm_backward(&db, &lt.n2, &lt.inv_r2, &layer.ffn_norm);
        g.ffn_norm = dg2;
        let dh_mid = dh + dh_ffn;

        g.wo = lt.attn.t().dot(&dh_mid);
        let dattn = dh_mid.dot(&layer.wo.t());
        let mut dq = Array2::<f64>::zeros((len, d));
        let mut dk = Array2::<f64>::zeros((len, d));
        let mut dv = Array2::<f64>::zeros((len, d));
        for head in 0..cfg.n_heads {
            let cols = s![.., head * hd..(head + 1) * hd];
            let p = &lt.probs[head];
            let d_out = dattn.slice(cols);
            let dp = d_out.dot(&lt.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            let mut ds = p * &dp;
            let row_dot = ds.sum_axis(Axis(1));
            Zip::from(&mut ds)
                .and(p)
                .and_broadcast(&row_dot.view().insert_axis(Axis(1)))
                .for_each(|g, &pv, &rd| *g -= pv * rd);
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
        }
        rope.apply(&mut dq, &positions, -1.0);
        rope.apply(&mut dk, &positions, -1.0);
        g.wq = lt.a.t().dot(&dq);
        g.wk = lt.a.t().dot(&dk);
        g.wv = lt.a.t().dot(&dv);
        let da = dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
        let (dh_attn, dg1) = rms_norm_backward(&da, &lt.n1, &lt.inv_r1, &layer.attn_norm);
        g.attn_norm = dg1;
        dh = dh_mid + dh_attn;
    }

    for (row, &id) in dh.axis_iter(Axis(0)).zip(&block.ids) {
        let mut dst = grads.tok_emb.row_mut(id as usize);
        dst += &row;
    }
    Ok((loss, grads))
}
