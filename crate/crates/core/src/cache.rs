//! Anchor-aware keys/values cache.
//!
//! Entries are keyed by absolute position. Reduction keeps anchors, the
//! protected prefix, and everything at or after the last anchor; positions
//! of survivors are never renumbered.

use crate::corpus::TokenFlags;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub position: usize,
    pub is_anchor: bool,
    pub seq_index: usize,
    /// Rotated keys for every layer, `n_layers * d_model` values.
    pub keys: Vec<f64>,
    /// Values for every layer, `n_layers * d_model` values.
    pub values: Vec<f64>,
}

impl CacheEntry {
    /// Entry carrying only annotations, for bookkeeping without tensors.
    pub fn bare(position: usize, is_anchor: bool, seq_index: usize) -> Self {
        CacheEntry {
            position,
            is_anchor,
            seq_index,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn flags(&self) -> TokenFlags {
        TokenFlags {
            is_anchor: self.is_anchor,
            seq_index: self.seq_index,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct CacheStats {
    pub peak_live_count: usize,
    pub total_appends: usize,
    pub total_discards: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorKVCache {
    entries: Vec<CacheEntry>,
    protected_upto: usize,
    stats: CacheStats,
}

impl AnchorKVCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Entries with position below `protected_upto` are never discarded.
    pub fn with_protected_prefix(protected_upto: usize) -> Self {
        AnchorKVCache {
            protected_upto,
            ..Self::default()
        }
    }

    pub fn protected_upto(&self) -> usize {
        self.protected_upto
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn last_position(&self) -> Option<usize> {
        self.entries.last().map(|e| e.position)
    }

    /// Position the next appended entry must exceed, if any.
    pub fn next_position(&self) -> usize {
        self.last_position().map_or(0, |p| p + 1)
    }

    pub fn append(&mut self, entry: CacheEntry) -> Result<()> {
        if let Some(last) = self.last_position() {
            if entry.position <= last {
                return Err(Error::contract(format!(
                    "cache append at position {} after position {last}",
                    entry.position
                )));
            }
        }
        self.entries.push(entry);
        self.stats.total_appends += 1;
        self.stats.peak_live_count = self.stats.peak_live_count.max(self.entries.len());
        Ok(())
    }

    /// Discards every unprotected non-anchor entry that precedes the last
    /// unprotected anchor. Returns the number of entries discarded.
    pub fn reduction(&mut self) -> usize {
        let protected = self.protected_upto;
        let last_anchor = self
            .entries
            .iter()
            .rev()
            .find(|e| e.is_anchor && e.position >= protected)
            .map(|e| e.position);
        let Some(j) = last_anchor else {
            return 0;
        };
        let before = self.entries.len();
        self.entries
            .retain(|e| e.position >= j || e.is_anchor || e.position < protected);
        let discarded = before - self.entries.len();
        self.stats.total_discards += discarded;
        discarded
    }

    pub fn live_flags(&self) -> Vec<TokenFlags> {
        self.entries.iter().map(CacheEntry::flags).collect()
    }

    pub fn live_positions(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.position).collect()
    }

    /// Fraction of all entries ever appended that reductions discarded.
    pub fn cache_reduction_metric(&self) -> Result<f64> {
        if self.stats.total_appends == 0 {
            return Err(Error::UndefinedMetric(
                "cache reduction needs at least one appended entry".into(),
            ));
        }
        Ok(self.stats.total_discards as f64 / self.stats.total_appends as f64)
    }
}
