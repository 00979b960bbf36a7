//! Engineered good and bad demonstrations for the single-head equivalence
//! experiment.
//!
//! Demonstration tokens are solved for by least squares so that every one has
//! the same pre-rotation key `b * k_dir` and value `a * u`, where `u` is the
//! direction separating the target's output embedding from the decoy's. With
//! the keys fixed the attention weights do not depend on `a`, so "emit the
//! target (or the decoy) at output step t" is a half-line in `a`. The bad
//! demonstration must produce decoy, decoy, target; the good one target first.
//! Every candidate is confirmed by running generation.

use std::collections::BTreeSet;

use dualgrad_core::dual::{build_dual_attention, descend, DescentState, Schedule, SeRecord};
use dualgrad_core::metric::{score_ids, EffectDScore};
use dualgrad_core::model::attention::kernel_prescale;
use dualgrad_core::model::{
    generate, kernel_attention, kernel_terms, AttentionMode, AttentionParams, Segment, SegmentedSequence, ToyModel,
    Vocabulary,
};
use dualgrad_core::optimizer::{evaluate_demo, Demonstration, Environment};
use dualgrad_core::rng::{derive_indexed, derive_seed, stream};
use dualgrad_core::testkit::{random_attention, random_unit, random_vector};
use dualgrad_core::{Error, FourierFeatureMap};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::ExperimentConfig;

/// Squared-norm budget for the least-squares part of a token; the rest goes
/// to a null-space component.
const NORM_BUDGET: f64 = 0.95;
const DECOY_CANDIDATES: usize = 256;
const KEY_FRACTIONS: [f64; 11] = [0.9, 0.75, 0.6, 0.45, 0.3, 0.15, 0.0, -0.15, -0.3, -0.6, -0.9];

#[derive(Debug, Clone, PartialEq)]
pub struct Fig7Settings {
    pub d_in: usize,
    pub d_out: usize,
    pub n_instruction: usize,
    pub n_lead: usize,
    pub good_len: usize,
    pub bad_len: usize,
    pub features: usize,
    pub vocab_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub schedule: Schedule,
    /// Overrides the default decode mask (all item tokens).
    pub mask: Option<BTreeSet<usize>>,
    pub attempts: usize,
}

impl Default for Fig7Settings {
    fn default() -> Self {
        Self::from(&ExperimentConfig::defaults(crate::config::Kind::Fig7))
    }
}

impl From<&ExperimentConfig> for Fig7Settings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            d_in: c.d_in,
            d_out: c.d_out,
            n_instruction: c.n_instruction,
            n_lead: c.n_lead,
            good_len: c.n_demo,
            bad_len: c.n_demo_bad,
            features: c.features,
            vocab_size: c.vocab,
            steps: c.steps,
            seed: c.seed,
            schedule: c.schedule,
            mask: c.mask.clone(),
            attempts: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeCurve {
    /// 1-based output token index.
    pub output_index: usize,
    pub records: Vec<SeRecord>,
}

impl SeCurve {
    pub fn terminal_se(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.se)
    }
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub label: &'static str,
    pub demo: Demonstration,
    pub ids: Vec<usize>,
    pub score: EffectDScore,
    pub curves: Vec<SeCurve>,
}

#[derive(Debug, Clone)]
pub struct Fig7Report {
    pub attempt: usize,
    pub target_id: usize,
    pub decoy_id: usize,
    pub env: Environment,
    pub good: DemoOutcome,
    pub bad: DemoOutcome,
}

struct Scene {
    settings: Fig7Settings,
    params: AttentionParams,
    map: FourierFeatureMap,
    instruction: Vec<DVector<f64>>,
    lead: Vec<DVector<f64>>,
    items: Vocabulary,
    target_id: usize,
    decoy_id: usize,
    /// Output direction on which target and decoy sit at `+1` and `-1`.
    direction: DVector<f64>,
    key_dir: DVector<f64>,
    /// Pseudo-inverse of the stacked `[W_v; W_k]`.
    solve: DMatrix<f64>,
    projector: DMatrix<f64>,
    seed: u64,
}

impl Scene {
    fn new(settings: &Fig7Settings, seed: u64) -> Result<Self, Error> {
        let s = settings;
        if s.vocab_size < 2 {
            return Err(Error::ConstructionFailed("need at least a target and a decoy token".into()));
        }
        if 2 * s.d_out >= s.d_in {
            return Err(Error::ConstructionFailed(format!(
                "fixing {} value and key coordinates leaves no freedom in {} input dimensions",
                2 * s.d_out,
                s.d_in
            )));
        }
        let params = random_attention(seed, s.d_in, s.d_out);
        let map = FourierFeatureMap::sample(s.d_out, s.features, 1.0, derive_seed(seed, "fig7/map"))?;
        let mut rng = stream(seed, "fig7/vocab");
        let target_id = rng.random_range(0..s.vocab_size);
        let decoy_id = (target_id + rng.random_range(1..s.vocab_size)) % s.vocab_size;
        let direction = if s.d_out == 1 { DVector::from_element(1, 1.0) } else { random_unit(seed, "fig7/u", s.d_out) };

        // Decoy whose own value points at the target and which attends strongly to itself.
        let scale = kernel_prescale(s.d_out).powi(2);
        let decoy_input = (0..DECOY_CANDIDATES)
            .map(|i| random_unit(seed, &format!("fig7/decoy{i}"), s.d_in))
            .filter(|x| params.value(x).dot(&direction) > 0.0)
            .max_by(|a, b| {
                let score = |x: &DVector<f64>| {
                    params.value(x).dot(&direction) * ((params.w_q() * x).dot(&(params.w_k() * x)) * scale).exp()
                };
                score(a).total_cmp(&score(b))
            })
            .ok_or_else(|| Error::ConstructionFailed("no decoy embedding with a positive value".into()))?;

        let mut output = Vec::with_capacity(s.vocab_size);
        let mut input = Vec::with_capacity(s.vocab_size);
        for id in 0..s.vocab_size {
            output.push(if id == target_id {
                direction.clone()
            } else if id == decoy_id {
                -&direction
            } else {
                let mut e = random_vector(seed, &format!("fig7/out{id}"), s.d_out, 0.5);
                if e.norm() > 0.5 {
                    e *= 0.5 / e.norm();
                }
                e
            });
            input.push(if id == decoy_id {
                decoy_input.clone()
            } else {
                random_unit(seed, &format!("fig7/in{id}"), s.d_in)
            });
        }
        let items = Vocabulary::new(output, input)?;

        let instruction = (0..s.n_instruction).map(|i| random_unit(seed, &format!("fig7/instr{i}"), s.d_in)).collect();
        // The most recent lead token is the decoy, as if it had just been generated.
        let mut lead: Vec<DVector<f64>> =
            (0..s.n_lead - 1).map(|i| random_unit(seed, &format!("fig7/lead{i}"), s.d_in)).collect();
        lead.push(decoy_input.clone());

        let q = params.w_q() * &decoy_input;
        let key_dir = if q.norm() > 1e-12 { q.normalize() } else { direction.clone() };
        let stacked = DMatrix::from_fn(2 * s.d_out, s.d_in, |r, c| {
            if r < s.d_out {
                params.w_v()[(r, c)]
            } else {
                params.w_k()[(r - s.d_out, c)]
            }
        });
        if stacked.clone().svd(false, false).singular_values.min() < 1e-9 {
            return Err(Error::ConstructionFailed("value and key projections are rank deficient".into()));
        }
        let solve = stacked.clone().pseudo_inverse(1e-12).map_err(|e| Error::ConstructionFailed(e.into()))?;
        let projector = DMatrix::identity(s.d_in, s.d_in) - &solve * &stacked;
        Ok(Self {
            settings: settings.clone(),
            params,
            map,
            instruction,
            lead,
            items,
            target_id,
            decoy_id,
            direction,
            key_dir,
            solve,
            projector,
            seed,
        })
    }

    fn least_squares(&self, a: f64, b: f64) -> DVector<f64> {
        let d = self.settings.d_out;
        let rhs = DVector::from_fn(2 * d, |r, _| if r < d { a * self.direction[r] } else { b * self.key_dir[r - d] });
        &self.solve * rhs
    }

    /// Range of `a` keeping the least-squares part inside the norm budget.
    fn feasible(&self, b: f64) -> Option<(f64, f64)> {
        let p = self.least_squares(1.0, 0.0);
        let r = self.least_squares(0.0, b);
        let (qa, qb, qc) = (p.norm_squared(), 2.0 * p.dot(&r), r.norm_squared() - NORM_BUDGET);
        let disc = qb * qb - 4.0 * qa * qc;
        (disc > 0.0).then(|| ((-qb - disc.sqrt()) / (2.0 * qa), (-qb + disc.sqrt()) / (2.0 * qa)))
    }

    fn max_key(&self) -> f64 {
        (NORM_BUDGET / self.least_squares(0.0, 1.0).norm_squared()).sqrt()
    }

    /// Unit token with value `a * u` and pre-rotation key `b * k_dir`.
    fn token(&self, a: f64, b: f64, label: &str, j: usize) -> Option<DVector<f64>> {
        let x0 = self.least_squares(a, b);
        let rest = 1.0 - x0.norm_squared();
        if rest < 0.0 {
            return None;
        }
        let n = &self.projector * random_vector(self.seed, &format!("fig7/{label}/null{j}"), self.settings.d_in, 1.0);
        (n.norm() > 1e-9).then(|| x0 + n.normalize() * rest.sqrt())
    }

    fn demo_tokens(&self, a: f64, b: f64, label: &str, len: usize) -> Option<Vec<DVector<f64>>> {
        (0..len).map(|j| self.token(a, b, label, j)).collect()
    }

    fn sequence(&self, demo: &[DVector<f64>]) -> Result<SegmentedSequence, Error> {
        SegmentedSequence::from_parts(self.settings.d_in, true, &self.instruction, demo, &[], &self.lead)
    }

    /// Value of `a` that decodes `pattern` (true = target) at the first
    /// output steps, or `None` when the half-lines do not meet.
    fn fit(&self, pattern: &[bool], b: f64, label: &str, len: usize) -> Result<Option<f64>, Error> {
        let Some((mut lo, mut hi)) = self.feasible(b) else { return Ok(None) };
        let Some(zero) = self.demo_tokens(0.0, b, label, len) else { return Ok(None) };
        let mut seq = self.sequence(&zero)?;
        for &want_target in pattern {
            let terms = kernel_terms(&self.params, &self.map, &seq, seq.len())?;
            let (mut n, mut m, mut z) = (0.0, 0.0, 0.0);
            for ((w, v), tag) in terms.weights.iter().zip(&terms.projection.values).zip(&terms.projection.tags) {
                z += w;
                if *tag == Segment::Demo {
                    m += w;
                } else {
                    n += w * v.dot(&self.direction);
                }
            }
            let sign = if want_target { 1.0 } else { -1.0 } * z.signum();
            let (n, m) = (sign * n, sign * m);
            // need n + a m > 0
            if m.abs() < 1e-300 {
                if n <= 0.0 {
                    return Ok(None);
                }
            } else if m > 0.0 {
                lo = lo.max(-n / m);
            } else {
                hi = hi.min(-n / m);
            }
            let emitted = if want_target { self.target_id } else { self.decoy_id };
            seq.push(Segment::Lead, self.items.input_embedding(emitted).clone())?;
        }
        Ok((hi - lo > 1e-9 * (1.0 + hi.abs().max(lo.abs()))).then_some(0.5 * (lo + hi)))
    }

    fn decodes(&self, demo: &[DVector<f64>], pattern: &[bool]) -> Result<bool, Error> {
        let model = ToyModel::Attention { params: self.params.clone(), mode: AttentionMode::Kernel(self.map.clone()) };
        let mask: BTreeSet<usize> = (0..self.items.len()).collect();
        let trace = generate(&model, &self.sequence(demo)?, pattern.len(), &self.items, Some(&mask))?;
        let want: Vec<usize> = pattern.iter().map(|&t| if t { self.target_id } else { self.decoy_id }).collect();
        Ok(trace.ids() == want)
    }

    fn engineer(&self, pattern: &[bool], label: &str, len: usize) -> Result<Option<Vec<DVector<f64>>>, Error> {
        let b_max = self.max_key();
        for frac in KEY_FRACTIONS {
            let b = frac * b_max;
            if let Some(a) = self.fit(pattern, b, label, len)? {
                if let Some(tokens) = self.demo_tokens(a, b, label, len) {
                    if self.decodes(&tokens, pattern)? {
                        return Ok(Some(tokens));
                    }
                }
            }
        }
        Ok(None)
    }
}

const GOOD_PATTERN: [bool; 1] = [true];
const BAD_PATTERN: [bool; 3] = [false, false, true];

pub fn run_fig7(settings: &Fig7Settings) -> Result<Fig7Report, Error> {
    if settings.steps < BAD_PATTERN.len() {
        return Err(Error::InvalidParameter(format!("need at least {} output steps", BAD_PATTERN.len())));
    }
    if settings.n_lead == 0 || settings.good_len == 0 || settings.bad_len == 0 {
        return Err(Error::InvalidParameter("lead and demonstration segments must be non-empty".into()));
    }
    for attempt in 0..settings.attempts.max(1) {
        let scene = Scene::new(settings, derive_indexed(settings.seed, "fig7/attempt", attempt as u64))?;
        let Some(good) = scene.engineer(&GOOD_PATTERN, "good", settings.good_len)? else { continue };
        let Some(bad) = scene.engineer(&BAD_PATTERN, "bad", settings.bad_len)? else { continue };
        return report(scene, attempt, good, bad);
    }
    Err(Error::ConstructionFailed(format!(
        "no engineered demonstrations found in {} attempts for d_in={} d_out={}",
        settings.attempts, settings.d_in, settings.d_out
    )))
}

fn report(scene: Scene, attempt: usize, good: Vec<DVector<f64>>, bad: Vec<DVector<f64>>) -> Result<Fig7Report, Error> {
    let items = scene.items.len();
    let zero = DVector::zeros(scene.settings.d_out);
    let mut output: Vec<DVector<f64>> = (0..items).map(|id| scene.items.output_embedding(id).clone()).collect();
    let mut input: Vec<DVector<f64>> = (0..items).map(|id| scene.items.input_embedding(id).clone()).collect();
    // Demonstration tokens join the vocabulary with a zero output embedding and
    // are kept out of decoding by the default mask.
    let mut ids_of = |tokens: &[DVector<f64>]| -> Vec<usize> {
        tokens
            .iter()
            .map(|x| {
                output.push(zero.clone());
                input.push(x.clone());
                input.len() - 1
            })
            .collect()
    };
    let good_ids = ids_of(&good);
    let bad_ids = ids_of(&bad);
    let base_seq = SegmentedSequence::from_parts(scene.settings.d_in, true, &scene.instruction, &[], &[], &scene.lead)?;
    let env = Environment {
        model: ToyModel::Attention { params: scene.params.clone(), mode: AttentionMode::Kernel(scene.map.clone()) },
        base_seq,
        target_id: scene.target_id,
        vocab: Vocabulary::new(output, input)?,
        mask: Some(scene.settings.mask.clone().unwrap_or_else(|| (0..items).collect())),
        steps: scene.settings.steps,
    };
    let outcome = |label: &'static str, ids: Vec<usize>| -> Result<DemoOutcome, Error> {
        let demo = Demonstration { id: 0, current: ids, perturbation: Vec::new(), origin: (0, 0) };
        run_demo(&env, &scene.params, &scene.map, scene.settings.schedule, label, demo)
    };
    let good = outcome("good", good_ids)?;
    let bad = outcome("bad", bad_ids)?;
    Ok(Fig7Report { attempt, target_id: scene.target_id, decoy_id: scene.decoy_id, env, good, bad })
}

fn run_demo(
    env: &Environment,
    params: &AttentionParams,
    map: &FourierFeatureMap,
    schedule: Schedule,
    label: &'static str,
    demo: Demonstration,
) -> Result<DemoOutcome, Error> {
    let mut seq = env.splice(&demo)?;
    let trace = generate(&env.model, &seq, env.steps, &env.vocab, env.mask.as_ref())?;
    let ids = trace.ids();
    let score = score_ids(&ids, env.target_id);
    debug_assert_eq!(score, evaluate_demo(env, &demo)?);
    let last = score.hit_position.unwrap_or(ids.len());
    let mut curves = Vec::with_capacity(last);
    for (t, &id) in ids.iter().enumerate().take(last) {
        let pos = seq.len();
        let dual = build_dual_attention(params, map, &seq, pos)?;
        let h = kernel_attention(params, map, &seq, pos)?;
        let state = descend(&dual, DescentState::new(&dual, schedule)?.with_reference(&dual, h), usize::MAX);
        curves.push(SeCurve { output_index: t + 1, records: state.se_log().to_vec() });
        seq.push(Segment::Lead, env.vocab.input_embedding(id).clone())?;
    }
    Ok(DemoOutcome { label, demo, ids, score, curves })
}
