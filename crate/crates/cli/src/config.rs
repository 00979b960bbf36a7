//! Flat key-value experiment configuration.
//!
//! Values resolve as command-line flag, then config file, then
//! `DUALGRAD_SEED` (seed only), then the per-command default.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use dualgrad_core::dual::Schedule;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Equiv,
    Fig7,
    Props,
    Optimize,
    Generate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Exact,
    Kernel,
}

impl FromStr for ModeKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "exact" => Ok(ModeKind::Exact),
            "kernel" => Ok(ModeKind::Kernel),
            other => Err(CliError::Config(format!("unknown mode `{other}` (expected exact or kernel)"))),
        }
    }
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            ModeKind::Exact => "exact",
            ModeKind::Kernel => "kernel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Attention,
    Layer,
    Stack,
    Gqa,
}

impl FromStr for ModelKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "attention" => Ok(ModelKind::Attention),
            "layer" => Ok(ModelKind::Layer),
            "stack" => Ok(ModelKind::Stack),
            "gqa" => Ok(ModelKind::Gqa),
            other => Err(CliError::Config(format!("unknown model `{other}`"))),
        }
    }
}

pub fn parse_schedule(s: &str) -> CliResult<Schedule> {
    if s == "per-token" {
        return Ok(Schedule::PerTokenSequential);
    }
    match s.strip_prefix("fractional:").map(str::parse::<usize>) {
        Some(Ok(n)) if n > 0 => Ok(Schedule::FractionalUniform(n)),
        _ => Err(CliError::Config(format!("unknown schedule `{s}` (expected per-token or fractional:<S>)"))),
    }
}

pub fn schedule_name(s: Schedule) -> String {
    match s {
        Schedule::PerTokenSequential => "per-token".into(),
        Schedule::FractionalUniform(n) => format!("fractional:{n}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub reps: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub d_hidden: usize,
    pub features: usize,
    pub n_instruction: usize,
    pub n_demo: usize,
    pub n_demo_bad: usize,
    pub n_lead: usize,
    pub layers: usize,
    pub heads: usize,
    pub groups: usize,
    pub vocab: usize,
    pub steps: usize,
    pub schedule: Schedule,
    pub mode: ModeKind,
    pub model: ModelKind,
    pub mask: Option<BTreeSet<usize>>,
    pub target: Option<usize>,
    pub cases: usize,
    pub paths: usize,
    pub baseline_paths: Option<usize>,
    pub iterations: usize,
    pub perturbation: bool,
    pub paired: bool,
    pub tau_sim: f64,
    pub eps_imp: f64,
    pub window: usize,
    pub memory_capacity: usize,
    pub demo_len: usize,
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn defaults(kind: Kind) -> Self {
        let base = Self {
            kind,
            seed: 0,
            reps: 10,
            d_in: 16,
            d_out: 8,
            d_hidden: 16,
            features: 128,
            n_instruction: 12,
            n_demo: 8,
            n_demo_bad: 10,
            n_lead: 2,
            layers: 2,
            heads: 2,
            groups: 2,
            vocab: 24,
            steps: 5,
            schedule: Schedule::PerTokenSequential,
            mode: ModeKind::Kernel,
            model: ModelKind::Attention,
            mask: None,
            target: None,
            cases: 20,
            paths: 3,
            baseline_paths: None,
            iterations: 15,
            perturbation: true,
            paired: false,
            tau_sim: 0.95,
            eps_imp: 0.01,
            window: 3,
            memory_capacity: 8,
            demo_len: 6,
            parallel: true,
        };
        match kind {
            Kind::Fig7 => Self {
                d_in: 11,
                d_out: 1,
                n_instruction: 15,
                n_demo: 15,
                n_demo_bad: 10,
                n_lead: 2,
                vocab: 16,
                steps: 3,
                ..base
            },
            Kind::Generate => Self { d_in: 8, d_out: 4, n_instruction: 6, n_demo: 4, n_lead: 1, ..base },
            Kind::Optimize => Self { d_in: 8, d_out: 4, n_instruction: 6, n_lead: 1, reps: 1, ..base },
            Kind::Equiv | Kind::Props => base,
        }
    }

    pub fn from_toml(kind: Kind, text: &str) -> CliResult<Self> {
        let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let mut cfg = Self::defaults(kind);
        for (key, value) in &table {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(kind: Kind, path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(kind, &text)
    }

    fn set(&mut self, key: &str, value: &toml::Value) -> CliResult<()> {
        let int = || -> CliResult<i64> {
            value.as_integer().ok_or_else(|| CliError::Config(format!("`{key}` must be an integer")))
        };
        let size = || -> CliResult<usize> {
            usize::try_from(int()?).map_err(|_| CliError::Config(format!("`{key}` must be non-negative")))
        };
        let float = || -> CliResult<f64> {
            value
                .as_float()
                .or_else(|| value.as_integer().map(|i| i as f64))
                .ok_or_else(|| CliError::Config(format!("`{key}` must be a number")))
        };
        let boolean = || -> CliResult<bool> {
            value.as_bool().ok_or_else(|| CliError::Config(format!("`{key}` must be true or false")))
        };
        let text = || -> CliResult<&str> {
            value.as_str().ok_or_else(|| CliError::Config(format!("`{key}` must be a string")))
        };
        match key {
            "seed" => {
                self.seed = u64::try_from(int()?).map_err(|_| CliError::Config("`seed` must be non-negative".into()))?
            }
            "reps" => self.reps = size()?,
            "d_in" => self.d_in = size()?,
            "d_out" => self.d_out = size()?,
            "d_hidden" => self.d_hidden = size()?,
            "features" => self.features = size()?,
            "n_instruction" => self.n_instruction = size()?,
            "n_demo" => self.n_demo = size()?,
            "n_demo_bad" => self.n_demo_bad = size()?,
            "n_lead" => self.n_lead = size()?,
            "layers" => self.layers = size()?,
            "heads" => self.heads = size()?,
            "groups" => self.groups = size()?,
            "vocab" => self.vocab = size()?,
            "steps" => self.steps = size()?,
            "schedule" => self.schedule = parse_schedule(text()?)?,
            "mode" => self.mode = text()?.parse()?,
            "model" => self.model = text()?.parse()?,
            "mask" => {
                let items =
                    value.as_array().ok_or_else(|| CliError::Config("`mask` must be an array of ids".into()))?;
                let ids = items
                    .iter()
                    .map(|v| v.as_integer().and_then(|i| usize::try_from(i).ok()))
                    .collect::<Option<BTreeSet<usize>>>()
                    .ok_or_else(|| CliError::Config("`mask` entries must be non-negative integers".into()))?;
                self.mask = Some(ids);
            }
            "target" => self.target = Some(size()?),
            "cases" => self.cases = size()?,
            "paths" => self.paths = size()?,
            "baseline_paths" => self.baseline_paths = Some(size()?),
            "iterations" => self.iterations = size()?,
            "perturbation" => self.perturbation = boolean()?,
            "paired" => self.paired = boolean()?,
            "tau_sim" => self.tau_sim = float()?,
            "eps_imp" => self.eps_imp = float()?,
            "window" => self.window = size()?,
            "memory_capacity" => self.memory_capacity = size()?,
            "demo_len" => self.demo_len = size()?,
            "parallel" => self.parallel = boolean()?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let dims = [
            ("d_in", self.d_in),
            ("d_out", self.d_out),
            ("d_hidden", self.d_hidden),
            ("features", self.features),
            ("n_instruction", self.n_instruction),
            ("n_lead", self.n_lead),
            ("layers", self.layers),
            ("heads", self.heads),
            ("groups", self.groups),
            ("vocab", self.vocab),
            ("steps", self.steps),
            ("reps", self.reps),
            ("cases", self.cases),
            ("paths", self.paths),
            ("iterations", self.iterations),
            ("demo_len", self.demo_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("`{name}` must be positive")));
        }
        if !self.features.is_multiple_of(2) {
            return Err(CliError::Config(format!("`features` must be even, got {}", self.features)));
        }
        if self.baseline_paths == Some(0) {
            return Err(CliError::Config("`baseline_paths` must be positive".into()));
        }
        Ok(())
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub mode: Option<ModeKind>,
    pub schedule: Option<Schedule>,
}

pub fn resolve(
    kind: Kind,
    file: Option<&Path>,
    flags: &Overrides,
    env_seed: Option<&str>,
) -> CliResult<ExperimentConfig> {
    let (mut cfg, file_seed) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let has_seed = text.parse::<toml::Table>().map(|t| t.contains_key("seed")).unwrap_or(false);
            (ExperimentConfig::from_toml(kind, &text)?, has_seed)
        }
        None => (ExperimentConfig::defaults(kind), false),
    };
    if !file_seed {
        if let Some(s) = env_seed {
            cfg.seed =
                s.trim().parse().map_err(|_| CliError::Config(format!("DUALGRAD_SEED `{s}` is not an integer")))?;
        }
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(r) = flags.reps {
        cfg.reps = r;
    }
    if let Some(m) = flags.mode {
        cfg.mode = m;
    }
    if let Some(s) = flags.schedule {
        cfg.schedule = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
