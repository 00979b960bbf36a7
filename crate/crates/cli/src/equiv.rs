//! Random single-head configurations: build the dual, descend, and log the
//! squared error against the attention output after every step.

use dualgrad_core::dual::{build_dual_attention, descend, DescentState};
use dualgrad_core::model::{exact_attention, kernel_attention};
use dualgrad_core::par::map_range;
use dualgrad_core::rng::derive_seed;
use dualgrad_core::testkit::{random_attention, random_sequence};
use dualgrad_core::{Error, FourierFeatureMap};

use crate::config::{schedule_name, ExperimentConfig, ModeKind};
use crate::execution;
use crate::output::float;

pub const HEADER: [&str; 6] = ["seed", "n_d", "step", "se", "schedule", "mode"];

#[derive(Debug, Clone, PartialEq)]
pub struct SeRow {
    pub seed: u64,
    pub n_d: usize,
    pub step: usize,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivRun {
    pub rows: Vec<SeRow>,
    /// Largest squared error left after a complete pass, over all seeds.
    pub max_terminal_se: f64,
}

impl EquivRun {
    pub fn csv_rows(&self, cfg: &ExperimentConfig) -> Vec<Vec<String>> {
        let schedule = schedule_name(cfg.schedule);
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    r.n_d.to_string(),
                    r.step.to_string(),
                    float(r.se),
                    schedule.clone(),
                    cfg.mode.name().to_string(),
                ]
            })
            .collect()
    }
}

fn one_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<SeRow>, Error> {
    let params = random_attention(seed, cfg.d_in, cfg.d_out);
    let map = FourierFeatureMap::sample(cfg.d_out, cfg.features, 1.0, derive_seed(seed, "equiv/map"))?;
    let seq = random_sequence(seed, cfg.d_in, cfg.n_instruction, cfg.n_demo, cfg.n_lead);
    let pos = seq.len();
    let dual = build_dual_attention(&params, &map, &seq, pos)?;
    let reference = match cfg.mode {
        ModeKind::Kernel => kernel_attention(&params, &map, &seq, pos)?,
        ModeKind::Exact => exact_attention(&params, &seq, pos)?,
    };
    let state = descend(&dual, DescentState::new(&dual, cfg.schedule)?.with_reference(&dual, reference), usize::MAX);
    Ok(state.se_log().iter().map(|r| SeRow { seed, n_d: cfg.n_demo, step: r.step, se: r.se }).collect())
}

pub fn run_equiv(cfg: &ExperimentConfig) -> Result<EquivRun, Error> {
    let per_seed = map_range(execution(cfg), cfg.reps, |r| one_seed(cfg, cfg.seed + r as u64));
    let mut rows = Vec::new();
    let mut max_terminal_se: f64 = 0.0;
    for seed_rows in per_seed {
        let seed_rows = seed_rows?;
        if let Some(last) = seed_rows.last() {
            max_terminal_se = max_terminal_se.max(last.se);
        }
        rows.extend(seed_rows);
    }
    Ok(EquivRun { rows, max_terminal_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Kind;
    use dualgrad_core::dual::Schedule;

    #[test]
    fn defaults_converge() {
        let cfg = ExperimentConfig::defaults(Kind::Equiv);
        let run = run_equiv(&cfg).unwrap();
        assert!(run.max_terminal_se <= 1e-9);
        assert_eq!(run.rows.len(), cfg.reps * (cfg.n_demo + 1));
        let seeds: Vec<u64> = run.rows.iter().map(|r| r.seed).collect();
        assert!(seeds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn step_zero_is_the_demonstration_share() {
        let cfg = ExperimentConfig { reps: 1, ..ExperimentConfig::defaults(Kind::Equiv) };
        let run = run_equiv(&cfg).unwrap();
        let params = random_attention(0, cfg.d_in, cfg.d_out);
        let map = FourierFeatureMap::sample(cfg.d_out, cfg.features, 1.0, derive_seed(0, "equiv/map")).unwrap();
        let seq = random_sequence(0, cfg.d_in, cfg.n_instruction, cfg.n_demo, cfg.n_lead);
        let (_, demo) = dualgrad_core::model::split_attention(&params, &map, &seq, seq.len()).unwrap();
        let se0 = run.rows[0].se;
        assert!((se0 - demo.norm_squared()).abs() <= 1e-12 * demo.norm_squared().max(1e-300));
    }

    #[test]
    fn fractional_schedule_has_more_steps() {
        let cfg = ExperimentConfig {
            reps: 2,
            schedule: Schedule::FractionalUniform(3),
            ..ExperimentConfig::defaults(Kind::Equiv)
        };
        let run = run_equiv(&cfg).unwrap();
        assert_eq!(run.rows.len(), 2 * (3 * cfg.n_demo + 1));
        assert!(run.max_terminal_se <= 1e-9);
    }

    #[test]
    fn caption_dimensions_converge() {
        let cfg = ExperimentConfig { reps: 3, ..ExperimentConfig::defaults(Kind::Fig7) };
        assert!(run_equiv(&cfg).unwrap().max_terminal_se <= 1e-9);
    }
}
