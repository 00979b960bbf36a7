//! Per-path store of demonstrations that hit the target.

use crate::metric::EffectDScore;
use crate::optimizer::Demonstration;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub demo: Demonstration,
    pub score: EffectDScore,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest score, earliest entry on ties.
    pub fn best(&self) -> Option<&MemoryEntry> {
        self.entries.iter().fold(None, |best: Option<&MemoryEntry>, e| match best {
            Some(b) if b.score.value >= e.score.value => Some(b),
            _ => Some(e),
        })
    }

    pub fn best_score(&self) -> f64 {
        self.best().map_or(0.0, |e| e.score.value)
    }

    /// Stores a hit. When full, the lowest-scoring entry (oldest on ties) is
    /// evicted, which may be the candidate itself. Returns whether it was kept.
    pub fn admit(&mut self, demo: Demonstration, score: EffectDScore, iteration: usize) -> bool {
        if !score.is_hit() {
            return false;
        }
        if self.entries.len() == self.capacity {
            let (worst, low) = self.entries.iter().enumerate().fold((0, f64::INFINITY), |(wi, wv), (i, e)| {
                if e.score.value < wv {
                    (i, e.score.value)
                } else {
                    (wi, wv)
                }
            });
            if score.value <= low {
                return false;
            }
            self.entries.remove(worst);
        }
        self.entries.push(MemoryEntry { demo, score, iteration });
        true
    }
}
