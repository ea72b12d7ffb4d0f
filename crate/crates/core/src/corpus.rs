//! Text ingestion: word-level vocabulary, sentence splitting, anchor
//! annotation and packing into training blocks.
//!
//! Anchor tokens always close the sequence they belong to. Under the
//! endpoint policy the sentence-final `.` is the anchor; every other policy
//! inserts the dedicated `<AC>` token.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const ANCHOR: &str = "<AC>";
pub const ENDPOINT: &str = ".";

const TERMINATORS: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorPolicy {
    /// Sentence-final `.` is the anchor.
    Endpoint,
    /// `<AC>` appended after every sentence.
    AppendedToken,
    /// `<AC>` inserted after every `n` content tokens.
    EveryN(usize),
    /// `<AC>` inserted after each content token with probability `p`.
    RandomP { p: f64, seed: u64 },
}

impl AnchorPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AnchorPolicy::EveryN(0) => Err(Error::config("every-n policy requires n >= 1")),
            AnchorPolicy::RandomP { p, .. } if !(p > 0.0 && p < 1.0) => Err(Error::config(
                format!("random policy requires 0 < p < 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// Whether the policy inserts the dedicated anchor token.
    pub fn uses_anchor_token(&self) -> bool {
        !matches!(self, AnchorPolicy::Endpoint)
    }

    /// Per-document variant of the policy. Only the random policy changes:
    /// its seed is mixed with the document index so that documents do not
    /// share one insertion pattern.
    pub fn for_document(&self, index: usize) -> AnchorPolicy {
        match *self {
            AnchorPolicy::RandomP { p, seed } => AnchorPolicy::RandomP {
                p,
                seed: seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            },
            other => other,
        }
    }
}

impl fmt::Display for AnchorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorPolicy::Endpoint => write!(f, "ep"),
            AnchorPolicy::AppendedToken => write!(f, "ac"),
            AnchorPolicy::EveryN(n) => write!(f, "every:{n}"),
            AnchorPolicy::RandomP { p, seed } => write!(f, "random:{p}:{seed}"),
        }
    }
}

impl FromStr for AnchorPolicy {
    type Err = Error;

    /// Accepts `ep`, `ac`, `every:N` and `random:P[:SEED]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Usage(format!("unrecognised anchor policy `{s}`"));
        let policy = match parts.as_slice() {
            ["ep"] => AnchorPolicy::Endpoint,
            ["ac"] => AnchorPolicy::AppendedToken,
            ["every", n] => AnchorPolicy::EveryN(n.parse().map_err(|_| bad())?),
            ["random", p] => AnchorPolicy::RandomP {
                p: p.parse().map_err(|_| bad())?,
                seed: 0,
            },
            ["random", p, seed] => AnchorPolicy::RandomP {
                p: p.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Word-level vocabulary. Specials occupy the first ids in the order
/// pad, bos, eos, unk and, when built for an anchor-token policy, `<AC>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    anchor: Option<TokenId>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::config(format!("duplicate vocabulary entry `{tok}`")));
            }
        }
        let specials = [PAD, BOS, EOS, UNK];
        if tokens.len() < specials.len() || tokens[..4] != specials {
            return Err(Error::config(
                "vocabulary must start with <pad>, <bos>, <eos>, <unk>",
            ));
        }
        let anchor = (tokens.get(4).map(String::as_str) == Some(ANCHOR)).then_some(4);
        if anchor.is_none() && token_to_id.contains_key(ANCHOR) {
            return Err(Error::config("<AC> must directly follow the fixed specials"));
        }
        Ok(Vocab {
            token_to_id,
            id_to_token: tokens,
            anchor,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        0
    }

    pub fn bos(&self) -> TokenId {
        1
    }

    pub fn eos(&self) -> TokenId {
        2
    }

    pub fn unk(&self) -> TokenId {
        3
    }

    pub fn anchor(&self) -> Option<TokenId> {
        self.anchor
    }

    pub fn endpoint(&self) -> Option<TokenId> {
        self.id(ENDPOINT)
    }

    /// Number of special ids at the head of the table.
    pub fn num_specials(&self) -> usize {
        4 + usize::from(self.anchor.is_some())
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.unk())
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Id that marks anchors under `policy`.
    pub fn anchor_id_for(&self, policy: &AnchorPolicy) -> Result<TokenId> {
        if policy.uses_anchor_token() {
            self.anchor.ok_or_else(|| {
                Error::config(format!(
                    "policy `{policy}` needs the <AC> token but the vocabulary was built without it"
                ))
            })
        } else {
            self.endpoint()
                .ok_or_else(|| Error::config("vocabulary has no `.` endpoint token"))
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).map(|t| self.id_or_unk(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or(UNK);
            let glue = tok.len() == 1 && tok.chars().all(|c| c.is_ascii_punctuation());
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Vocab::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        Vocab::parse(&text).map_err(|e| Error::input(path, e.to_string()))
    }

    /// Content hash of the serialized table.
    pub fn digest(&self) -> String {
        hex_digest(self.to_file_string().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Splits on whitespace; each ASCII punctuation character is its own token.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().flat_map(|chunk| {
        let mut pieces = Vec::new();
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if c.is_ascii_punctuation() {
                if let Some(s) = start.take() {
                    pieces.push(&chunk[s..i]);
                }
                pieces.push(&chunk[i..i + 1]);
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            pieces.push(&chunk[s..]);
        }
        pieces
    })
}

/// Builds a vocabulary from UTF-8 files (one document per line) holding the
/// `max_size` most frequent tokens, ties broken lexicographically.
pub fn build_vocab<P: AsRef<Path>>(
    corpus_paths: &[P],
    policy: &AnchorPolicy,
    max_size: usize,
) -> Result<Vocab> {
    let mut texts = Vec::with_capacity(corpus_paths.len());
    for path in corpus_paths {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        texts.push(text);
    }
    build_vocab_from_texts(texts.iter().map(String::as_str), policy, max_size)
}

pub fn build_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    policy: &AnchorPolicy,
    max_size: usize,
) -> Result<Vocab> {
    policy.validate()?;
    if max_size == 0 {
        return Err(Error::config("vocabulary size must be positive"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut kept: Vec<&str> = ranked.iter().take(max_size).map(|(t, _)| *t).collect();
    // The endpoint policy cannot mark anchors unless `.` survives the cap.
    if !policy.uses_anchor_token()
        && !kept.contains(&ENDPOINT)
        && ranked.iter().any(|(t, _)| *t == ENDPOINT)
    {
        kept.pop();
        kept.push(ENDPOINT);
    }

    let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
    if policy.uses_anchor_token() {
        tokens.push(ANCHOR.to_string());
    }
    tokens.extend(kept.into_iter().map(str::to_owned));
    Vocab::from_tokens(tokens)
}

/// Splits text into sentences, each ending at `.`, `!` or `?` followed by
/// whitespace or end of text, or at end of text. Sentences are returned
/// trimmed; only whitespace lies between consecutive sentences.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if TERMINATORS.contains(&c) {
            let at_boundary = chars.peek().is_none_or(|&(_, next)| next.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Attention-relevant annotation of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenFlags {
    pub is_anchor: bool,
    pub seq_index: usize,
}

/// Token ids with sequence and anchor annotations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentedText {
    pub ids: Vec<TokenId>,
    pub is_anchor: Vec<bool>,
    pub seq_index: Vec<usize>,
}

impl SegmentedText {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single anchor-free sequence.
    pub fn plain(ids: Vec<TokenId>) -> Self {
        let n = ids.len();
        SegmentedText {
            ids,
            is_anchor: vec![false; n],
            seq_index: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn flags(&self, i: usize) -> TokenFlags {
        TokenFlags {
            is_anchor: self.is_anchor[i],
            seq_index: self.seq_index[i],
        }
    }

    pub fn all_flags(&self) -> Vec<TokenFlags> {
        (0..self.len()).map(|i| self.flags(i)).collect()
    }

    pub fn push(&mut self, id: TokenId, is_anchor: bool, seq_index: usize) {
        self.ids.push(id);
        self.is_anchor.push(is_anchor);
        self.seq_index.push(seq_index);
    }

    /// Sequence index a token appended after the current end would get.
    pub fn next_seq_index(&self) -> usize {
        match (self.is_anchor.last(), self.seq_index.last()) {
            (Some(true), Some(&k)) => k + 1,
            (Some(false), Some(&k)) => k,
            _ => 0,
        }
    }

    /// Appends `other` after `self`, shifting its sequence indices so that
    /// its first sequence starts a fresh sequence (or continues the current
    /// one when `self` does not end on an anchor and `continue_seq` is set).
    pub fn extend_with(&mut self, other: &SegmentedText, continue_seq: bool) {
        if other.is_empty() {
            return;
        }
        let base = if self.is_empty() {
            0
        } else if continue_seq {
            self.next_seq_index()
        } else {
            self.seq_index[self.len() - 1] + 1
        };
        for i in 0..other.len() {
            self.push(other.ids[i], other.is_anchor[i], base + other.seq_index[i]);
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.is_anchor.iter().filter(|&&a| a).count()
    }

    /// Checks structural invariants; `anchor_id`, when given, must be the
    /// id of every anchor.
    pub fn validate(&self, anchor_id: Option<TokenId>) -> Result<()> {
        let n = self.ids.len();
        if self.is_anchor.len() != n || self.seq_index.len() != n {
            return Err(Error::contract("segmented text lists differ in length"));
        }
        for i in 0..n {
            if i == 0 {
                if self.seq_index[0] != 0 {
                    return Err(Error::contract("first sequence index must be 0"));
                }
            } else {
                let step = self.seq_index[i].checked_sub(self.seq_index[i - 1]);
                match step {
                    Some(0) if self.is_anchor[i - 1] => {
                        return Err(Error::contract(format!(
                            "token {i} shares a sequence with the anchor before it"
                        )))
                    }
                    Some(0) | Some(1) => {}
                    _ => {
                        return Err(Error::contract(format!(
                            "sequence index jumps irregularly at token {i}"
                        )))
                    }
                }
            }
            if let (true, Some(a)) = (self.is_anchor[i], anchor_id) {
                if self.ids[i] != a {
                    return Err(Error::contract(format!("anchor at {i} has id {}", self.ids[i])));
                }
            }
        }
        Ok(())
    }

    /// Copies `start..end` with sequence indices rebased to start at zero.
    pub fn window(&self, start: usize, end: usize) -> SegmentedText {
        let base = self.seq_index.get(start).copied().unwrap_or(0);
        SegmentedText {
            ids: self.ids[start..end].to_vec(),
            is_anchor: self.is_anchor[start..end].to_vec(),
            seq_index: self.seq_index[start..end].iter().map(|k| k - base).collect(),
        }
    }

    /// Compact text form: ids separated by spaces, `*` marks an anchor and
    /// `|` separates sequences.
    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            if i > 0 {
                out.push(' ');
                if self.seq_index[i] != self.seq_index[i - 1] {
                    out.push_str("| ");
                }
            }
            out.push_str(&self.ids[i].to_string());
            if self.is_anchor[i] {
                out.push('*');
            }
        }
        out
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut seg = SegmentedText::new();
        let mut seq = 0;
        let mut pending_break = false;
        for field in line.split_whitespace() {
            if field == "|" {
                pending_break = true;
                continue;
            }
            if pending_break && !seg.is_empty() {
                seq += 1;
            }
            pending_break = false;
            let (num, anchor) = match field.strip_suffix('*') {
                Some(n) => (n, true),
                None => (field, false),
            };
            let id = num
                .parse()
                .map_err(|_| Error::contract(format!("bad token field `{field}`")))?;
            seg.push(id, anchor, seq);
        }
        seg.validate(None)?;
        Ok(seg)
    }
}

/// Tokenizes `text` and marks anchors according to `policy`.
pub fn annotate(text: &str, vocab: &Vocab, policy: &AnchorPolicy) -> Result<SegmentedText> {
    policy.validate()?;
    let anchor_id = vocab.anchor_id_for(policy)?;
    let mut seg = SegmentedText::new();
    match *policy {
        AnchorPolicy::Endpoint => {
            for (k, sentence) in split_sentences(text).into_iter().enumerate() {
                let toks: Vec<&str> = tokenize(sentence).collect();
                let last = toks.len().saturating_sub(1);
                for (i, tok) in toks.iter().enumerate() {
                    let id = vocab.id_or_unk(tok);
                    seg.push(id, i == last && id == anchor_id, k);
                }
            }
        }
        AnchorPolicy::AppendedToken => {
            for (k, sentence) in split_sentences(text).into_iter().enumerate() {
                for tok in tokenize(sentence) {
                    seg.push(vocab.id_or_unk(tok), false, k);
                }
                seg.push(anchor_id, true, k);
            }
        }
        AnchorPolicy::EveryN(n) => {
            let mut k = 0;
            let mut run = 0;
            for tok in tokenize(text) {
                seg.push(vocab.id_or_unk(tok), false, k);
                run += 1;
                if run == n {
                    seg.push(anchor_id, true, k);
                    k += 1;
                    run = 0;
                }
            }
        }
        AnchorPolicy::RandomP { p, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut k = 0;
            for tok in tokenize(text) {
                seg.push(vocab.id_or_unk(tok), false, k);
                if rng.random_bool(p) {
                    seg.push(anchor_id, true, k);
                    k += 1;
                }
            }
        }
    }
    Ok(seg)
}

/// Right-truncates each document to `context_len` tokens. Documents with
/// fewer than two tokens carry no prediction target and are dropped.
pub fn pack_training_blocks(texts: &[SegmentedText], context_len: usize) -> Vec<SegmentedText> {
    texts
        .iter()
        .filter(|t| t.len() >= 2)
        .map(|t| t.window(0, t.len().min(context_len)))
        .collect()
}
