//! Multi-path demonstration search on a synthetic environment.

use dualgrad_core::optimizer::{
    run_two_stage, CollapseRule, Environment, LocalSearch, OptimizationTrace, OptimizerConfig, SyntheticSpec,
};
use dualgrad_core::Error;

use crate::config::ExperimentConfig;
use crate::execution;
use crate::output::float;

pub const HEADER: [&str; 7] = ["iteration", "path", "effect_d", "similarity", "collapse", "perturbed", "demo_id"];

pub fn synthetic_spec(cfg: &ExperimentConfig) -> SyntheticSpec {
    SyntheticSpec {
        d_in: cfg.d_in,
        d_out: cfg.d_out,
        n_instruction: cfg.n_instruction,
        n_lead: cfg.n_lead,
        vocab_size: cfg.vocab,
        demo_len: cfg.demo_len,
        steps: cfg.steps,
        ..SyntheticSpec::default()
    }
}

pub fn optimizer_config(cfg: &ExperimentConfig, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        paths: cfg.paths,
        iterations: cfg.iterations,
        collapse: CollapseRule { tau_sim: cfg.tau_sim, eps_imp: cfg.eps_imp, window: cfg.window },
        master_seed: seed,
        perturbation_enabled: cfg.perturbation,
        memory_capacity: cfg.memory_capacity,
        execution: execution(cfg),
    }
}

pub fn environment(cfg: &ExperimentConfig, seed: u64) -> Result<Environment, Error> {
    let mut env = synthetic_spec(cfg).build(seed)?;
    if cfg.mask.is_some() {
        env.mask = cfg.mask.clone();
    }
    Ok(env)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub first_collapse: Option<usize>,
    pub mean_similarity_after_collapse: Option<f64>,
    pub mean_best_effect_d: f64,
}

impl ArmSummary {
    pub fn of(trace: &OptimizationTrace) -> Self {
        let first_collapse = trace.first_collapse();
        Self {
            first_collapse,
            mean_similarity_after_collapse: first_collapse.and_then(|t| trace.mean_similarity_from(t)),
            mean_best_effect_d: trace.mean_best_effect_d(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: OptimizationTrace,
    pub baseline: Option<OptimizationTrace>,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, Error> {
    let env = environment(cfg, seed)?;
    let generator = LocalSearch::new(cfg.vocab, cfg.demo_len, 2 * cfg.demo_len)?;
    let config = optimizer_config(cfg, seed);
    let trace = run_two_stage(&config, &env, &generator)?;
    let baseline = if cfg.paired {
        let base =
            OptimizerConfig { paths: cfg.baseline_paths.unwrap_or(cfg.paths), perturbation_enabled: false, ..config };
        Some(run_two_stage(&base, &env, &generator)?)
    } else {
        None
    };
    Ok(SeedRun { seed, trace, baseline })
}

pub fn csv_rows(trace: &OptimizationTrace) -> Vec<Vec<String>> {
    trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.path.to_string(),
                float(r.effect_d),
                r.similarity.map(float).unwrap_or_default(),
                r.collapse.to_string(),
                r.perturbed.to_string(),
                r.demo_id.to_string(),
            ]
        })
        .collect()
}
