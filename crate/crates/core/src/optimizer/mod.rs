//! Two-stage multi-path demonstration search.
//!
//! Each iteration, every path proposes a demonstration (stage 1) and scores it
//! by generating from the toy model (stage 2). Hits go into the path's memory.
//! When a path stagnates and perturbation is enabled, a span of another
//! path's demonstration is appended as perturbation tokens.

pub mod generator;
pub mod memory;

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::metric::{score_ids, EffectDScore};
use crate::model::{generate, AttentionMode, Segment, SegmentedSequence, ToyModel, Vocabulary};
use crate::par::{map_range, Execution};
use crate::rng::{derive_indexed, indexed_stream, stream};
use crate::testkit::{random_attention, random_unit, random_vocabulary};

pub use generator::{FixedProposal, Generator, LocalSearch, ProposalContext};
pub use memory::{MemoryBank, MemoryEntry};

/// Demonstration tokens as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Demonstration {
    pub id: u64,
    pub current: Vec<usize>,
    pub perturbation: Vec<usize>,
    /// `(path, iteration)` that proposed it.
    pub origin: (usize, usize),
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.current.len() + self.perturbation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.current.iter().chain(&self.perturbation).copied()
    }
}

/// Everything needed to score a demonstration.
#[derive(Debug, Clone)]
pub struct Environment {
    pub model: ToyModel,
    /// Instruction and lead tokens; demonstrations are spliced between them.
    pub base_seq: SegmentedSequence,
    pub target_id: usize,
    pub vocab: Vocabulary,
    pub mask: Option<BTreeSet<usize>>,
    pub steps: usize,
}

impl Environment {
    pub fn splice(&self, demo: &Demonstration) -> Result<SegmentedSequence> {
        if demo.is_empty() {
            return Err(Error::InvalidParameter("demonstration is empty".into()));
        }
        let embed = |ids: &[usize]| -> Result<Vec<DVector<f64>>> {
            ids.iter()
                .map(|&id| {
                    if id >= self.vocab.len() {
                        return Err(Error::InvalidIndex(format!(
                            "token {id} outside vocabulary of {}",
                            self.vocab.len()
                        )));
                    }
                    Ok(self.vocab.input_embedding(id).clone())
                })
                .collect()
        };
        let of = |tag: Segment| -> Vec<DVector<f64>> {
            let base = &self.base_seq;
            base.tokens().iter().zip(base.tags()).filter(|(_, &t)| t == tag).map(|(x, _)| x.clone()).collect()
        };
        let seq = SegmentedSequence::from_parts(
            self.base_seq.dim(),
            self.base_seq.normalizes(),
            &of(Segment::Instruction),
            &embed(&demo.current)?,
            &embed(&demo.perturbation)?,
            &of(Segment::Lead),
        )?;
        Ok(match self.base_seq.candidate_mask() {
            Some(m) => seq.with_candidate_mask(m.clone()),
            None => seq,
        })
    }
}

pub fn evaluate_demo(env: &Environment, demo: &Demonstration) -> Result<EffectDScore> {
    let seq = env.splice(demo)?;
    let trace = generate(&env.model, &seq, env.steps, &env.vocab, env.mask.as_ref())?;
    Ok(score_ids(&trace.ids(), env.target_id))
}

/// Cosine of the mean input embeddings of all tokens in each demonstration.
pub fn similarity(vocab: &Vocabulary, a: &Demonstration, b: &Demonstration) -> Result<f64> {
    let mean = |d: &Demonstration| -> Result<DVector<f64>> {
        if d.is_empty() {
            return Err(Error::InvalidParameter("demonstration is empty".into()));
        }
        let mut m = DVector::zeros(vocab.input_dim());
        for id in d.all_ids() {
            if id >= vocab.len() {
                return Err(Error::InvalidIndex(format!("token {id} outside vocabulary of {}", vocab.len())));
            }
            m += vocab.input_embedding(id);
        }
        let m = m / d.len() as f64;
        if m.norm() < 1e-12 {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(m)
    };
    let (ma, mb) = (mean(a)?, mean(b)?);
    Ok((ma.dot(&mb) / (ma.norm() * mb.norm())).clamp(-1.0, 1.0))
}

/// Thresholds for calling a path collapsed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseRule {
    pub tau_sim: f64,
    pub eps_imp: f64,
    pub window: usize,
}

impl Default for CollapseRule {
    fn default() -> Self {
        Self { tau_sim: 0.95, eps_imp: 0.01, window: 3 }
    }
}

/// One path's history, oldest first. Collapsed when the latest demonstration
/// is a near-duplicate of the one before, or when the best score so far has
/// not improved by `eps_imp` in any of the last `window` iterations.
pub fn detect_collapse(history: &[OptimizationRecord], rule: &CollapseRule) -> Result<bool> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory { needed: 2, got: history.len() });
    }
    if history.last().and_then(|r| r.similarity).is_some_and(|s| s >= rule.tau_sim) {
        return Ok(true);
    }
    let running: Vec<f64> = history
        .iter()
        .scan(f64::NEG_INFINITY, |best, r| {
            *best = best.max(r.effect_d);
            Some(*best)
        })
        .collect();
    let span = rule.window.min(running.len() - 1);
    let gain = running[running.len() - span - 1..].windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(gain < rule.eps_imp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub paths: usize,
    pub iterations: usize,
    pub collapse: CollapseRule,
    pub master_seed: u64,
    pub perturbation_enabled: bool,
    pub memory_capacity: usize,
    pub execution: Execution,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            paths: 3,
            iterations: 15,
            collapse: CollapseRule::default(),
            master_seed: 0,
            perturbation_enabled: false,
            memory_capacity: 8,
            execution: Execution::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.paths == 0 {
            return bad("at least one path is required".into());
        }
        if self.perturbation_enabled && self.paths < 2 {
            return bad("perturbation needs a donor path, so at least two paths".into());
        }
        let CollapseRule { tau_sim, eps_imp, window } = self.collapse;
        if !(tau_sim > 0.0 && tau_sim <= 1.0) {
            return bad(format!("similarity threshold {tau_sim} outside (0, 1]"));
        }
        if eps_imp.is_nan() || eps_imp < 0.0 || window == 0 {
            return bad("improvement threshold must be non-negative and the window positive".into());
        }
        if self.memory_capacity == 0 {
            return bad("memory capacity must be positive".into());
        }
        Ok(())
    }
}

/// One row per `(iteration, path)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationRecord {
    pub iteration: usize,
    pub path: usize,
    pub effect_d: f64,
    pub hit_position: Option<usize>,
    /// Against the path's previous demonstration; absent on the first iteration.
    pub similarity: Option<f64>,
    pub collapse: bool,
    pub perturbed: bool,
    pub donor_path: Option<usize>,
    pub demo_id: u64,
    /// Best score in the path's memory after this iteration.
    pub best_effect_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace {
    pub paths: usize,
    pub records: Vec<OptimizationRecord>,
    /// Every proposed demonstration, indexed by `demo_id`.
    pub demos: Vec<Demonstration>,
    pub memories: Vec<MemoryBank>,
}

impl OptimizationTrace {
    pub fn path_records(&self, path: usize) -> Vec<&OptimizationRecord> {
        self.records.iter().filter(|r| r.path == path).collect()
    }

    pub fn first_collapse(&self) -> Option<usize> {
        self.records.iter().find(|r| r.collapse).map(|r| r.iteration)
    }

    /// Mean consecutive similarity over iterations `>= from`.
    pub fn mean_similarity_from(&self, from: usize) -> Option<f64> {
        let s: Vec<f64> = self.records.iter().filter(|r| r.iteration >= from).filter_map(|r| r.similarity).collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Mean over paths of the final best remembered score.
    pub fn mean_best_effect_d(&self) -> f64 {
        self.memories.iter().map(MemoryBank::best_score).sum::<f64>() / self.memories.len() as f64
    }
}

struct Proposal {
    demo: Demonstration,
    score: EffectDScore,
    similarity: Option<f64>,
    collapse: bool,
    donor_path: Option<usize>,
}

pub fn run_two_stage(
    config: &OptimizerConfig,
    env: &Environment,
    generator: &dyn Generator,
) -> Result<OptimizationTrace> {
    config.validate()?;
    let m = config.paths;
    let mut memories = vec![MemoryBank::new(config.memory_capacity); m];
    let mut histories: Vec<Vec<OptimizationRecord>> = vec![Vec::new(); m];
    let mut latest: Vec<Option<Demonstration>> = vec![None; m];
    let mut proposed: Vec<Vec<Demonstration>> = vec![Vec::new(); m];
    let mut trace = OptimizationTrace { paths: m, records: Vec::new(), demos: Vec::new(), memories: Vec::new() };

    for t in 0..config.iterations {
        let step = |p: usize| -> Result<Proposal> {
            let collapse = histories[p].len() >= 2 && detect_collapse(&histories[p], &config.collapse)?;
            let donor_path = (collapse && config.perturbation_enabled).then(|| {
                let mut rng =
                    indexed_stream(derive_indexed(config.master_seed, "donor", p as u64), "iteration", t as u64);
                let r = rng.random_range(0..m - 1);
                let d = if r >= p { r + 1 } else { r };
                (d, rng.random_range(0..proposed[d].len()))
            });
            let donor = donor_path.map(|(d, i)| &proposed[d][i]);
            let donor_path = donor_path.map(|(d, _)| d);
            let ctx =
                ProposalContext { path: p, iteration: t, memory: &memories[p], previous: latest[p].as_ref(), donor };
            let mut rng =
                indexed_stream(derive_indexed(config.master_seed, "proposal", p as u64), "iteration", t as u64);
            let mut demo = generator.propose(&ctx, &mut rng)?;
            demo.id = (t * m + p) as u64;
            let score = evaluate_demo(env, &demo)?;
            let similarity = latest[p].as_ref().map(|prev| similarity(&env.vocab, &demo, prev)).transpose()?;
            Ok(Proposal { demo, score, similarity, collapse, donor_path })
        };
        let proposals = map_range(config.execution, m, step).into_iter().collect::<Result<Vec<_>>>()?;

        for (p, prop) in proposals.into_iter().enumerate() {
            memories[p].admit(prop.demo.clone(), prop.score, t);
            let record = OptimizationRecord {
                iteration: t,
                path: p,
                effect_d: prop.score.value,
                hit_position: prop.score.hit_position,
                similarity: prop.similarity,
                collapse: prop.collapse,
                perturbed: prop.donor_path.is_some(),
                donor_path: prop.donor_path,
                demo_id: prop.demo.id,
                best_effect_d: memories[p].best_score(),
            };
            histories[p].push(record.clone());
            trace.records.push(record);
            trace.demos.push(prop.demo.clone());
            proposed[p].push(prop.demo.clone());
            latest[p] = Some(prop.demo);
        }
    }
    trace.memories = memories;
    Ok(trace)
}

/// Shape of a randomly drawn optimization environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub n_instruction: usize,
    pub n_lead: usize,
    pub vocab_size: usize,
    pub demo_len: usize,
    pub steps: usize,
    pub probes: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { d_in: 8, d_out: 4, n_instruction: 6, n_lead: 1, vocab_size: 24, demo_len: 6, steps: 5, probes: 64 }
    }
}

impl SyntheticSpec {
    /// Random exact-attention model and vocabulary. The target is the token
    /// that random demonstrations reach closest to a quarter of the time, so
    /// it is attainable but not free.
    pub fn build(&self, seed: u64) -> Result<Environment> {
        if self.vocab_size == 0 || self.demo_len == 0 || self.steps == 0 || self.probes == 0 {
            return Err(Error::InvalidParameter("synthetic sizes must be positive".into()));
        }
        let instr: Vec<_> =
            (0..self.n_instruction).map(|i| random_unit(seed, &format!("env/instr{i}"), self.d_in)).collect();
        let lead: Vec<_> = (0..self.n_lead).map(|i| random_unit(seed, &format!("env/lead{i}"), self.d_in)).collect();
        let mut env = Environment {
            model: ToyModel::Attention {
                params: random_attention(seed, self.d_in, self.d_out),
                mode: AttentionMode::Exact,
            },
            base_seq: SegmentedSequence::from_parts(self.d_in, true, &instr, &[], &[], &lead)?,
            target_id: 0,
            vocab: random_vocabulary(seed, self.vocab_size, self.d_out, self.d_in),
            mask: None,
            steps: self.steps,
        };
        let mut rng = stream(seed, "env/probes");
        let mut reached = vec![0usize; self.vocab_size];
        for i in 0..self.probes {
            let current = (0..self.demo_len).map(|_| rng.random_range(0..self.vocab_size)).collect();
            let demo = Demonstration { id: i as u64, current, perturbation: Vec::new(), origin: (0, 0) };
            let seq = env.splice(&demo)?;
            let ids: BTreeSet<usize> =
                generate(&env.model, &seq, self.steps, &env.vocab, None)?.ids().into_iter().collect();
            ids.into_iter().for_each(|id| reached[id] += 1);
        }
        let goal = self.probes as f64 / 4.0;
        env.target_id = (0..self.vocab_size)
            .filter(|&id| reached[id] > 0)
            .min_by(|&a, &b| (reached[a] as f64 - goal).abs().total_cmp(&(reached[b] as f64 - goal).abs()))
            .ok_or(Error::ConstructionFailed("no probe demonstration produced any token".into()))?;
        Ok(env)
    }
}
