//! Segmented prompts.
//!
//! Positions are 1-based throughout the public API. A canonical prompt is laid
//! out as `[instruction | demonstration | perturbation | lead]`, so with no
//! perturbation tokens the `k`-th lead token sits at `t(k) = N_T + N_D + k`.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    /// Task instruction (`X_T_instr`).
    Instruction,
    /// Tokens generated so far (`X_T_lead`).
    Lead,
    /// Current demonstration (`X_D_curr`).
    Demo,
    /// Perturbation demonstration (`X_D_per`).
    Perturbation,
}

impl Segment {
    /// Instruction and lead tokens form the task part `X_T`.
    pub fn is_task(self) -> bool {
        matches!(self, Segment::Instruction | Segment::Lead)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSequence {
    dim: usize,
    normalize: bool,
    tokens: Vec<DVector<f64>>,
    tags: Vec<Segment>,
    candidate_mask: Option<BTreeSet<usize>>,
}

impl SegmentedSequence {
    /// Empty sequence whose pushed tokens are scaled to unit norm.
    pub fn new(dim: usize) -> Self {
        Self { dim, normalize: true, tokens: Vec::new(), tags: Vec::new(), candidate_mask: None }
    }

    /// Empty sequence that stores tokens as given.
    pub fn raw(dim: usize) -> Self {
        Self { normalize: false, ..Self::new(dim) }
    }

    /// Builds the canonical layout.
    pub fn from_parts(
        dim: usize,
        normalize: bool,
        instruction: &[DVector<f64>],
        demo: &[DVector<f64>],
        perturbation: &[DVector<f64>],
        lead: &[DVector<f64>],
    ) -> Result<Self> {
        let mut seq = if normalize { Self::new(dim) } else { Self::raw(dim) };
        for (tag, part) in [
            (Segment::Instruction, instruction),
            (Segment::Demo, demo),
            (Segment::Perturbation, perturbation),
            (Segment::Lead, lead),
        ] {
            for x in part {
                seq.push(tag, x.clone())?;
            }
        }
        Ok(seq)
    }

    pub fn push(&mut self, tag: Segment, x: DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidDimension(format!(
                "token has dimension {}, sequence expects {}",
                x.len(),
                self.dim
            )));
        }
        let x = if self.normalize {
            let n = x.norm();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::InvalidParameter("cannot normalize a zero or non-finite token".into()));
            }
            x / n
        } else {
            x
        };
        self.tokens.push(x);
        self.tags.push(tag);
        Ok(())
    }

    pub fn with_candidate_mask(mut self, mask: BTreeSet<usize>) -> Self {
        self.candidate_mask = Some(mask);
        self
    }

    pub fn candidate_mask(&self) -> Option<&BTreeSet<usize>> {
        self.candidate_mask.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at 1-based `pos`.
    pub fn token(&self, pos: usize) -> Result<&DVector<f64>> {
        self.check_pos(pos)?;
        Ok(&self.tokens[pos - 1])
    }

    pub fn tag(&self, pos: usize) -> Result<Segment> {
        self.check_pos(pos)?;
        Ok(self.tags[pos - 1])
    }

    pub fn tokens(&self) -> &[DVector<f64>] {
        &self.tokens
    }

    pub fn tags(&self) -> &[Segment] {
        &self.tags
    }

    fn check_pos(&self, pos: usize) -> Result<()> {
        if pos == 0 || pos > self.tokens.len() {
            return Err(Error::InvalidIndex(format!("position {pos} outside 1..={}", self.tokens.len())));
        }
        Ok(())
    }

    fn indices_where(&self, pred: impl Fn(Segment) -> bool) -> Vec<usize> {
        self.tags.iter().enumerate().filter(|(_, t)| pred(**t)).map(|(i, _)| i + 1).collect()
    }

    fn count(&self, tag: Segment) -> usize {
        self.tags.iter().filter(|t| **t == tag).count()
    }

    /// `N_T`: instruction tokens.
    pub fn n_instruction(&self) -> usize {
        self.count(Segment::Instruction)
    }

    /// `N_D`: current-demonstration tokens.
    pub fn n_demo(&self) -> usize {
        self.count(Segment::Demo)
    }

    pub fn n_perturbation(&self) -> usize {
        self.count(Segment::Perturbation)
    }

    /// `k`: lead tokens.
    pub fn n_lead(&self) -> usize {
        self.count(Segment::Lead)
    }

    /// `I_T`: instruction and lead positions.
    pub fn task_indices(&self) -> Vec<usize> {
        self.indices_where(Segment::is_task)
    }

    /// `I_D`: current-demonstration positions.
    pub fn demo_indices(&self) -> Vec<usize> {
        self.indices_where(|t| t == Segment::Demo)
    }

    /// `I_D_per`.
    pub fn perturbation_indices(&self) -> Vec<usize> {
        self.indices_where(|t| t == Segment::Perturbation)
    }

    /// Position of the `k`-th lead token in the canonical layout.
    pub fn lead_position(&self, k: usize) -> usize {
        self.n_instruction() + self.n_demo() + self.n_perturbation() + k
    }

    /// Position of the last token, the query for the next generated output.
    pub fn last_position(&self) -> usize {
        self.tokens.len()
    }
}
