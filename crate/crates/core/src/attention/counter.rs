use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Multiply-accumulate counters bumped by the kernels as they execute, by the
/// exact loop extents of every tile they process.
#[derive(Debug, Default)]
pub struct MacCounter {
    dense: AtomicU64,
    sparse: AtomicU64,
    linear: AtomicU64,
    linear_norm: AtomicU64,
    selection: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounts {
    /// Full softmax attention: `QK^T` plus `PV`.
    pub dense: u64,
    /// Softmax branch restricted to the selected blocks: `QK^T` plus `PV`.
    pub sparse: u64,
    /// Linear branch numerator: key/value summaries plus query application.
    pub linear: u64,
    /// Linear branch denominator terms.
    pub linear_norm: u64,
    /// Pooled block score matrix.
    pub selection: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add_dense(c: Option<&Self>, n: u64) {
        if let Some(c) = c {
            c.dense.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub(crate) fn add_sparse(c: Option<&Self>, n: u64) {
        if let Some(c) = c {
            c.sparse.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub(crate) fn add_linear(c: Option<&Self>, n: u64) {
        if let Some(c) = c {
            c.linear.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub(crate) fn add_linear_norm(c: Option<&Self>, n: u64) {
        if let Some(c) = c {
            c.linear_norm.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub(crate) fn add_selection(c: Option<&Self>, n: u64) {
        if let Some(c) = c {
            c.selection.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> MacCounts {
        MacCounts {
            dense: self.dense.load(Ordering::Relaxed),
            sparse: self.sparse.load(Ordering::Relaxed),
            linear: self.linear.load(Ordering::Relaxed),
            linear_norm: self.linear_norm.load(Ordering::Relaxed),
            selection: self.selection.load(Ordering::Relaxed),
        }
    }
}
