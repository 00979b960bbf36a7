//! Position-based scores for a single target token.

use crate::error::{Error, Result};

/// A demonstration's score together with the hit that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectDScore {
    pub value: f64,
    pub hit_position: Option<usize>,
}

impl EffectDScore {
    pub fn from_hit(hit_position: Option<usize>) -> Result<Self> {
        Ok(Self { value: effect_d(hit_position)?, hit_position })
    }

    pub fn miss() -> Self {
        Self { value: 0.0, hit_position: None }
    }

    pub fn is_hit(&self) -> bool {
        self.hit_position.is_some()
    }
}

/// 1-based index of the first occurrence of `target`.
pub fn hit_position(ids: &[usize], target: usize) -> Option<usize> {
    ids.iter().position(|&id| id == target).map(|i| i + 1)
}

/// `1 / log2(pos + 1)`, and 0 when the target never appeared.
pub fn effect_d(pos: Option<usize>) -> Result<f64> {
    match pos {
        None => Ok(0.0),
        Some(0) => Err(Error::InvalidParameter("hit positions are 1-based".into())),
        Some(p) => Ok(1.0 / ((p + 1) as f64).log2()),
    }
}

pub fn score_ids(ids: &[usize], target: usize) -> EffectDScore {
    let hit = hit_position(ids, target);
    EffectDScore::from_hit(hit).expect("hit positions are 1-based")
}

pub fn ndcg_at_k(ranked: &[usize], target: usize, k: usize) -> Result<f64> {
    check_cutoff(k)?;
    match hit_position(ranked, target) {
        Some(r) if r <= k => effect_d(Some(r)),
        _ => Ok(0.0),
    }
}

pub fn recall_at_k(ranked: &[usize], target: usize, k: usize) -> Result<f64> {
    check_cutoff(k)?;
    Ok(match hit_position(ranked, target) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    })
}

fn check_cutoff(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("cutoff k must be at least 1".into()));
    }
    Ok(())
}
