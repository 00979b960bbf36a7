//! Stage-1 demonstration proposals.

use rand::Rng;

use crate::error::{Error, Result};
use crate::optimizer::memory::MemoryBank;
use crate::optimizer::Demonstration;
use crate::rng::StreamRng;

/// What a generator sees when proposing the next demonstration for a path.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    pub path: usize,
    pub iteration: usize,
    pub memory: &'a MemoryBank,
    pub previous: Option<&'a Demonstration>,
    /// Demonstration from another path to splice in as perturbation.
    pub donor: Option<&'a Demonstration>,
}

pub trait Generator: Sync {
    fn propose(&self, ctx: &ProposalContext<'_>, rng: &mut StreamRng) -> Result<Demonstration>;
}

/// Mutates one token of the path's best remembered demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSearch {
    vocab_size: usize,
    demo_len: usize,
    max_len: usize,
}

impl LocalSearch {
    pub fn new(vocab_size: usize, demo_len: usize, max_len: usize) -> Result<Self> {
        if vocab_size == 0 || demo_len == 0 {
            return Err(Error::InvalidParameter("vocabulary and demonstration must be non-empty".into()));
        }
        if max_len <= demo_len {
            return Err(Error::InvalidParameter(format!(
                "maximum length {max_len} leaves no room for perturbation after {demo_len} tokens"
            )));
        }
        Ok(Self { vocab_size, demo_len, max_len })
    }

    pub fn demo_len(&self) -> usize {
        self.demo_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

impl Generator for LocalSearch {
    fn propose(&self, ctx: &ProposalContext<'_>, rng: &mut StreamRng) -> Result<Demonstration> {
        if let Some(d) = ctx.donor {
            if d.origin.0 == ctx.path {
                return Err(Error::InvalidDonor(format!("donor comes from path {} itself", ctx.path)));
            }
        }
        let (mut current, mut perturbation) = match ctx.memory.best() {
            None => ((0..self.demo_len).map(|_| rng.random_range(0..self.vocab_size)).collect(), Vec::new()),
            Some(best) => {
                let mut cur = best.demo.current.clone();
                let at = rng.random_range(0..cur.len());
                cur[at] = rng.random_range(0..self.vocab_size);
                (cur, best.demo.perturbation.clone())
            }
        };
        if let Some(donor) = ctx.donor {
            let room = self.max_len.saturating_sub(current.len()).max(1);
            let span = room.min(donor.current.len());
            let start = rng.random_range(0..=donor.current.len() - span);
            perturbation = donor.current[start..start + span].to_vec();
        }
        current.truncate(self.max_len);
        perturbation.truncate(self.max_len - current.len());
        Ok(Demonstration { id: 0, current, perturbation, origin: (ctx.path, ctx.iteration) })
    }
}

/// Always proposes the same demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedProposal(pub Vec<usize>);

impl Generator for FixedProposal {
    fn propose(&self, ctx: &ProposalContext<'_>, _rng: &mut StreamRng) -> Result<Demonstration> {
        Ok(Demonstration {
            id: 0,
            current: self.0.clone(),
            perturbation: Vec::new(),
            origin: (ctx.path, ctx.iteration),
        })
    }
}
