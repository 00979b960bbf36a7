//! Randomized invariant suites, runnable outside the test harness.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dual::{
    build_dual_attention, build_dual_transformer, descend, grad_full, loss_icl, with_value_regularization,
    DescentState, Schedule,
};
use crate::error::Result;
use crate::metric::{effect_d, ndcg_at_k, score_ids};
use crate::model::attention::kernel_terms;
use crate::model::rope::rotation;
use crate::model::{kernel_attention, layer_forward, split_attention, Activation, AttentionMode, Segment};
use crate::optimizer::{evaluate_demo, run_two_stage, LocalSearch, OptimizerConfig, SyntheticSpec};
use crate::par::{map_range, Execution};
use crate::rng::{derive_indexed, stream};
use crate::testkit::{random_ffn, random_vector, rel_diff, rel_diff_matrix, AttentionCase};
use crate::FourierFeatureMap;

/// Deliberate defects used to check that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the full dual gradient before it is compared.
    FlipGradientSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropsOptions {
    pub seed: u64,
    pub cases: usize,
    pub fault: Option<Fault>,
    pub execution: Execution,
}

impl Default for PropsOptions {
    fn default() -> Self {
        Self { seed: 0, cases: 20, fault: None, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    /// One line per failed case.
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

type Check = fn(u64, &PropsOptions) -> Result<Option<String>>;

const SUITES: &[(&str, Check)] = &[
    ("kernelmap", kernelmap_case),
    ("rope", rope_case),
    ("dual-equivalence", equivalence_case),
    ("gradient", gradient_case),
    ("descent", descent_case),
    ("regularization", regularization_case),
    ("transformer", transformer_case),
    ("effect-metric", metric_case),
    ("optimizer", optimizer_case),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(n, _)| *n).collect()
}

pub fn run_suites(opts: &PropsOptions) -> Vec<SuiteReport> {
    SUITES.iter().map(|&(name, check)| run_suite(name, check, opts)).collect()
}

pub fn all_passed(reports: &[SuiteReport]) -> bool {
    reports.iter().all(SuiteReport::ok)
}

fn run_suite(name: &'static str, check: Check, opts: &PropsOptions) -> SuiteReport {
    // The optimizer suite runs whole optimizations, so it gets fewer cases.
    let cases = if name == "optimizer" { opts.cases.min(3) } else { opts.cases };
    let outcomes = map_range(opts.execution, cases, |i| {
        let seed = derive_indexed(opts.seed, name, i as u64);
        match check(seed, opts) {
            Ok(None) => None,
            Ok(Some(msg)) => Some(format!("case {i} (seed {seed}): {msg}")),
            Err(e) => Some(format!("case {i} (seed {seed}): error: {e}")),
        }
    });
    let failures: Vec<String> = outcomes.into_iter().flatten().collect();
    SuiteReport { name, cases, passed: cases - failures.len(), failures }
}

fn expect(ok: bool, msg: impl FnOnce() -> String) -> Option<String> {
    (!ok).then(msg)
}

fn kernelmap_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let mut rng = stream(seed, "props/kernelmap");
    let dim = rng.random_range(1..=8);
    let map = FourierFeatureMap::sample(dim, 2 * rng.random_range(1..=64), 1.0, seed)?;
    let x = random_vector(seed, "x", dim, rng.random_range(0.1..3.0));
    let phi = map.phi(&x)?;
    let want = (x.norm_squared()).exp() / 2.0;
    let err = (phi.norm_squared() - want).abs() / want;
    Ok(expect(err <= 1e-12, || format!("feature norm off by {err:e}")))
}

fn rope_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let mut rng = stream(seed, "props/rope");
    let dim = rng.random_range(1..=9);
    let (m, n) = (rng.random_range(0..200i64), rng.random_range(0..200i64));
    let lhs = rotation(m, dim, 10_000.0)?.transpose() * rotation(n, dim, 10_000.0)?;
    let rhs = rotation(n - m, dim, 10_000.0)?;
    let err = (lhs - rhs).amax();
    Ok(expect(err <= 1e-12, || format!("relative rotation off by {err:e}")))
}

fn equivalence_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let cs = AttentionCase::sample(seed, 128);
    let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos())?;
    let h = kernel_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos())?;
    let err = rel_diff(&dual.forward_at_build(), &h);
    Ok(expect(err <= 1e-9, || format!("dual output off by {err:e}")))
}

/// `beta * dL/dW` at `W_0` is the full gradient; checked by central differences.
fn gradient_case(seed: u64, opts: &PropsOptions) -> Result<Option<String>> {
    let mut rng = stream(seed, "props/gradient");
    let cs = AttentionCase::sample(seed, 16);
    let alpha = if rng.random_bool(0.5) { rng.random_range(0.0..1.0) } else { 0.0 };
    let beta = rng.random_range(0.25..2.0);
    let dual = with_value_regularization(&build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos())?, alpha)?
        .with_beta(beta)?;
    let mut analytic = grad_full(&dual);
    if opts.fault == Some(Fault::FlipGradientSign) {
        analytic = -analytic;
    }
    let w0 = dual.w0().clone();
    let h = 1e-5;
    let mut numeric = DMatrix::zeros(w0.nrows(), w0.ncols());
    for r in 0..w0.nrows() {
        for c in 0..w0.ncols() {
            let (mut plus, mut minus) = (w0.clone(), w0.clone());
            plus[(r, c)] += h;
            minus[(r, c)] -= h;
            numeric[(r, c)] = beta * (loss_icl(&dual, &plus)? - loss_icl(&dual, &minus)?) / (2.0 * h);
        }
    }
    let err = (numeric - analytic).amax();
    Ok(expect(err <= 1e-5, || format!("gradient off by {err:e}")))
}

fn descent_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let cs = AttentionCase::sample(seed, 128);
    let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos())?;
    let h = kernel_attention(&cs.params, &cs.map, &cs.seq, cs.query_pos())?;
    let schedule = if seed.is_multiple_of(2) { Schedule::PerTokenSequential } else { Schedule::FractionalUniform(3) };
    let state = descend(&dual, DescentState::new(&dual, schedule)?.with_reference(&dual, h.clone()), usize::MAX);
    let err = rel_diff_matrix(&state.weights(&dual), &(dual.w0() - grad_full(&dual)));
    let se = state.se_log().last().map_or(f64::NAN, |r| r.se) / h.norm_squared().max(1.0);
    Ok(expect(err <= 1e-12 && se <= 1e-9, || format!("end of pass off by {err:e}, terminal SE {se:e}")))
}

fn regularization_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let cs = AttentionCase::sample(seed, 128);
    let p = cs.query_pos();
    let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, p)?;
    let terms = kernel_terms(&cs.params, &cs.map, &cs.seq, p)?;
    for alpha in [0.0, 0.3, 1.0] {
        let want = terms.weighted_sum(|t| !t.is_task()) + terms.weighted_sum(Segment::is_task) * (1.0 - alpha);
        let got = with_value_regularization(&dual, alpha)?.forward_at_build();
        let err = rel_diff(&got, &want);
        if err > 1e-10 {
            return Ok(Some(format!("alpha {alpha}: off by {err:e}")));
        }
    }
    let (task, demo) = split_attention(&cs.params, &cs.map, &cs.seq, p)?;
    let err = rel_diff(&(task + demo), &dual.forward_at_build());
    Ok(expect(err <= 1e-9, || format!("split parts off by {err:e}")))
}

fn transformer_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let cs = AttentionCase::sample(seed, 128);
    let ffn = random_ffn(seed, cs.shape.d_out, 2 * cs.shape.d_out + 1, Activation::Relu);
    let p = cs.query_pos();
    let dual = build_dual_transformer(&cs.params, &ffn, &cs.map, &cs.seq, p)?;
    let want = layer_forward(&cs.params, &ffn, &AttentionMode::Kernel(cs.map.clone()), &cs.seq, p)?;
    let err = rel_diff(&dual.forward_at_build(), &want);
    Ok(expect(err <= 1e-9, || format!("layer dual off by {err:e}")))
}

fn metric_case(seed: u64, _: &PropsOptions) -> Result<Option<String>> {
    let mut rng = stream(seed, "props/metric");
    let p = rng.random_range(1..=1000);
    if effect_d(Some(p))? <= effect_d(Some(p + 1))? {
        return Ok(Some(format!("not decreasing at {p}")));
    }
    let ids: Vec<usize> = (0..40).map(|_| rng.random_range(0..30)).collect();
    let target = ids[rng.random_range(0..ids.len())];
    let score = score_ids(&ids, target);
    let ndcg = ndcg_at_k(&ids, target, ids.len())?;
    Ok(expect(score.value == ndcg, || format!("nDCG {ndcg} differs from Effect_D {}", score.value)))
}

fn optimizer_case(seed: u64, opts: &PropsOptions) -> Result<Option<String>> {
    let spec = SyntheticSpec::default();
    let env = spec.build(seed)?;
    let gen = LocalSearch::new(spec.vocab_size, spec.demo_len, 2 * spec.demo_len)?;
    let config = OptimizerConfig {
        master_seed: seed,
        iterations: 6,
        perturbation_enabled: true,
        execution: opts.execution,
        ..Default::default()
    };
    let a = run_two_stage(&config, &env, &gen)?;
    let b = run_two_stage(&OptimizerConfig { execution: Execution::Sequential, ..config }, &env, &gen)?;
    if a != b {
        return Ok(Some("trace depends on execution mode".into()));
    }
    for mem in &a.memories {
        for entry in mem.entries() {
            if !evaluate_demo(&env, &entry.demo)?.is_hit() {
                return Ok(Some(format!("memory holds a miss (demo {})", entry.demo.id)));
            }
        }
    }
    let bad = a.records.iter().find(|r| r.perturbed && r.donor_path == Some(r.path));
    Ok(bad.map(|r| format!("path {} perturbed by itself", r.path)))
}
