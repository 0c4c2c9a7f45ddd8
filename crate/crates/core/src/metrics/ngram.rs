use std::collections::BTreeMap;

use crate::textdata::TokenId;

pub const MAX_N: usize = 4;

pub type NGram = Vec<TokenId>;

/// Counts of every n-gram of orders `1..=MAX_N`. Ordered maps keep every
/// floating-point accumulation over n-grams in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NGramCounts {
    by_order: [BTreeMap<NGram, usize>; MAX_N],
}

impl NGramCounts {
    pub fn new(tokens: &[TokenId]) -> Self {
        let mut by_order: [BTreeMap<NGram, usize>; MAX_N] = Default::default();
        for (k, map) in by_order.iter_mut().enumerate() {
            let n = k + 1;
            if tokens.len() < n {
                continue;
            }
            for w in tokens.windows(n) {
                *map.entry(w.to_vec()).or_default() += 1;
            }
        }
        Self { by_order }
    }

    /// Counts of order `n` (1-based).
    pub fn order(&self, n: usize) -> &BTreeMap<NGram, usize> {
        &self.by_order[n - 1]
    }

    /// Total n-gram mass of order `n`: `max(0, len - n + 1)`.
    pub fn total(&self, n: usize) -> usize {
        self.order(n).values().sum()
    }
}
