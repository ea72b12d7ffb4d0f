//! Causal and anchor-based attention masks.
//!
//! A mask row for query `i` over key `j <= i` (with `k = seq(i)`) is
//!
//! * 0 when neither token is an anchor and `seq(j) < k`,
//! * 0 when the query is an anchor and `seq(j) < k`,
//! * 1 otherwise.
//!
//! Non-anchor tokens therefore see their own sequence plus earlier anchors,
//! and anchors see only their own sequence.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{SegmentedText, TokenFlags};
use crate::error::Error;

/// Which attention mask a model is trained or evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskMode {
    Causal,
    Ansan,
}

impl MaskMode {
    pub fn build(self, seg: &SegmentedText) -> MaskMatrix {
        match self {
            MaskMode::Causal => causal_mask(seg.len()),
            MaskMode::Ansan => anchor_mask(seg),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::Causal => "causal",
            MaskMode::Ansan => "ansan",
        })
    }
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "causal" => Ok(MaskMode::Causal),
            "ansan" | "anchor" => Ok(MaskMode::Ansan),
            other => Err(Error::Usage(format!(
                "unknown mask mode `{other}` (expected causal or ansan)"
            ))),
        }
    }
}

/// Visibility of key `key` from query `query` when `key` precedes the query.
#[inline]
pub fn anchor_visible(query: TokenFlags, key: TokenFlags) -> bool {
    let earlier_seq = key.seq_index < query.seq_index;
    if !query.is_anchor && !key.is_anchor && earlier_seq {
        return false;
    }
    if query.is_anchor && earlier_seq {
        return false;
    }
    true
}

/// Dense binary mask. Row `i` is a query; column `j` a key. When the mask
/// covers cached keys, the first `cols - rows` columns are the cache and
/// query `i` sits at column `cols - rows + i`.
#[derive(Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of key columns ahead of the first query's own column.
    pub fn offset(&self) -> usize {
        self.cols - self.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    /// Stacks decode rows for consecutive queries. Row `i` must have length
    /// `offset + i + 1`; later columns are zero.
    pub fn from_rows(rows: &[MaskRow]) -> Option<Self> {
        let n = rows.len();
        let cols = rows.last().map_or(0, |r| r.len());
        let offset = cols.checked_sub(n)?;
        let mut m = MaskMatrix::zeros(n, cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != offset + i + 1 {
                return None;
            }
            m.bits[i * cols..i * cols + r.len()].copy_from_slice(&r.bits);
        }
        Some(m)
    }

    /// Text grid of `0`/`1`, one row per line.
    pub fn to_grid(&self) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            s.extend(self.row(i).iter().map(|&b| if b { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }

    pub fn parse_grid(grid: &str) -> Option<Self> {
        let lines: Vec<&str> = grid.lines().filter(|l| !l.is_empty()).collect();
        let cols = lines.first().map_or(0, |l| l.len());
        let mut m = MaskMatrix::zeros(lines.len(), cols);
        for (i, line) in lines.iter().enumerate() {
            if line.len() != cols {
                return None;
            }
            for (j, c) in line.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => m.set(i, j, true),
                    _ => return None,
                }
            }
        }
        Some(m)
    }
}

impl fmt::Debug for MaskMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MaskMatrix {}x{}", self.rows, self.cols)?;
        f.write_str(&self.to_grid())
    }
}

/// Mask for one decoding step: one bit per live cache entry, then the
/// current token's own bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRow {
    pub bits: Vec<bool>,
}

impl MaskRow {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub fn causal_mask(len: usize) -> MaskMatrix {
    let mut m = MaskMatrix::zeros(len, len);
    for i in 0..len {
        for j in 0..=i {
            m.set(i, j, true);
        }
    }
    m
}

pub fn anchor_mask(seg: &SegmentedText) -> MaskMatrix {
    let len = seg.len();
    let mut m = MaskMatrix::zeros(len, len);
    for i in 0..len {
        let q = seg.flags(i);
        for j in 0..=i {
            m.set(i, j, anchor_visible(q, seg.flags(j)));
        }
    }
    m
}

pub fn decode_mask_row(current: TokenFlags, live_entries: &[TokenFlags]) -> MaskRow {
    let mut bits: Vec<bool> = live_entries
        .iter()
        .map(|&e| anchor_visible(current, e))
        .collect();
    bits.push(true);
    MaskRow { bits }
}

/// Mask for a chunk of new tokens processed against live cache entries.
/// With `anchored` false the chunk attends causally to everything.
pub fn chunk_mask(live: &[TokenFlags], chunk: &[TokenFlags], anchored: bool) -> MaskMatrix {
    let offset = live.len();
    let mut m = MaskMatrix::zeros(chunk.len(), offset + chunk.len());
    for (i, &q) in chunk.iter().enumerate() {
        for (j, &k) in live.iter().chain(&chunk[..i]).enumerate() {
            m.set(i, j, !anchored || anchor_visible(q, k));
        }
        m.set(i, offset + i, true);
    }
    m
}
