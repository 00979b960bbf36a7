//! Token tables and greedy decoding.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Decode table, rows in `R^{d_o}`.
    output: Vec<DVector<f64>>,
    /// Feedback table, rows in `R^{d_i}`.
    input: Vec<DVector<f64>>,
}

impl Vocabulary {
    pub fn new(output: Vec<DVector<f64>>, input: Vec<DVector<f64>>) -> Result<Self> {
        if output.is_empty() || output.len() != input.len() {
            return Err(Error::InvalidDimension(format!(
                "vocabulary tables must be non-empty and equal length ({} vs {})",
                output.len(),
                input.len()
            )));
        }
        let same_dim = |t: &[DVector<f64>]| t.iter().all(|r| r.len() == t[0].len());
        if !same_dim(&output) || !same_dim(&input) {
            return Err(Error::InvalidDimension("vocabulary rows must share a dimension".into()));
        }
        if output.iter().chain(&input).any(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidParameter("vocabulary rows must be finite".into()));
        }
        Ok(Self { output, input })
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    pub fn output_embedding(&self, id: usize) -> &DVector<f64> {
        &self.output[id]
    }

    pub fn input_embedding(&self, id: usize) -> &DVector<f64> {
        &self.input[id]
    }

    pub fn output_dim(&self) -> usize {
        self.output[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.input[0].len()
    }
}

/// Greedy decode: argmax of `h . e_v` over the (masked) vocabulary, ties to the
/// smallest id.
pub fn decode(vocab: &Vocabulary, h: &DVector<f64>, mask: Option<&BTreeSet<usize>>) -> Result<usize> {
    if h.len() != vocab.output_dim() {
        return Err(Error::InvalidDimension(format!(
            "hidden dimension {} does not match vocabulary {}",
            h.len(),
            vocab.output_dim()
        )));
    }
    let score = |id: usize| vocab.output_embedding(id).dot(h);
    let mut best: Option<(usize, f64)> = None;
    let mut consider = |id: usize| {
        let s = score(id);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    };
    match mask {
        Some(m) => {
            if m.is_empty() {
                return Err(Error::EmptyCandidateSet);
            }
            if let Some(&bad) = m.iter().find(|&&id| id >= vocab.len()) {
                return Err(Error::InvalidIndex(format!("candidate {bad} outside vocabulary of {}", vocab.len())));
            }
            // BTreeSet iterates ascending, so strict `>` keeps the smallest id on ties.
            m.iter().for_each(|&id| consider(id));
        }
        None => (0..vocab.len()).for_each(&mut consider),
    }
    Ok(best.expect("non-empty candidate set").0)
}
