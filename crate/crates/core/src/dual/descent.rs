//! Stepwise descent from `W_0` toward `W_0 - grad`.

use nalgebra::{DMatrix, DVector};

use crate::dual::DualModel;
use crate::error::{Error, Result};

/// How a full pass over the demonstration tokens is cut into steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Step `i` applies contribution `i` in full.
    #[default]
    PerTokenSequential,
    /// Each contribution is applied in `S` equal sub-steps, token by token.
    FractionalUniform(usize),
}

impl Schedule {
    pub fn substeps(self) -> usize {
        match self {
            Schedule::PerTokenSequential => 1,
            Schedule::FractionalUniform(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeRecord {
    pub step: usize,
    /// `|reference - f(q)|^2`.
    pub se: f64,
}

/// Descent trajectory for one dual.
#[derive(Debug, Clone)]
pub struct DescentState {
    /// Accumulated update; the current weights are `W_0 + delta`.
    delta: DMatrix<f64>,
    steps_applied: usize,
    schedule: Schedule,
    reference: Option<DVector<f64>>,
    se_log: Vec<SeRecord>,
}

impl DescentState {
    pub fn new(dual: &DualModel, schedule: Schedule) -> Result<Self> {
        if schedule.substeps() == 0 {
            return Err(Error::InvalidParameter("fractional schedule needs S >= 1".into()));
        }
        Ok(Self {
            delta: DMatrix::zeros(dual.w0().nrows(), dual.w0().ncols()),
            steps_applied: 0,
            schedule,
            reference: None,
            se_log: Vec::new(),
        })
    }

    /// Logs squared error against `reference` at step 0 and after every step.
    pub fn with_reference(mut self, dual: &DualModel, reference: DVector<f64>) -> Self {
        self.reference = Some(reference);
        self.se_log.clear();
        self.log(dual);
        self
    }

    pub fn steps_applied(&self) -> usize {
        self.steps_applied
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn se_log(&self) -> &[SeRecord] {
        &self.se_log
    }

    /// Steps in one complete pass.
    pub fn total_steps(&self, dual: &DualModel) -> usize {
        let n = dual.contributions().len() * self.schedule.substeps();
        if n == 0 && dual.alpha() != 0.0 {
            1
        } else {
            n
        }
    }

    pub fn is_complete(&self, dual: &DualModel) -> bool {
        self.steps_applied >= self.total_steps(dual)
    }

    pub fn weights(&self, dual: &DualModel) -> DMatrix<f64> {
        dual.w0() + &self.delta
    }

    /// `W phi(q~) + b` at the dual's build query.
    pub fn output(&self, dual: &DualModel) -> DVector<f64> {
        dual.eval(&self.weights(dual), dual.query_features())
    }

    fn log(&mut self, dual: &DualModel) {
        if let Some(r) = &self.reference {
            let se = (r - self.output(dual)).norm_squared();
            self.se_log.push(SeRecord { step: self.steps_applied, se });
        }
    }

    fn step(&mut self, dual: &DualModel) {
        let s = self.schedule.substeps();
        let idx = self.steps_applied;
        if idx == 0 && dual.alpha() != 0.0 {
            // L2 gradient taken at W_0, applied once.
            self.delta -= dual.w0() * dual.alpha();
        }
        if let Some(r) = dual.contributions().get(idx / s) {
            let scale = if s == 1 { 1.0 } else { 1.0 / s as f64 };
            self.delta.ger(scale, &r.left, &r.right, 1.0);
        }
        self.steps_applied += 1;
        self.log(dual);
    }
}

/// Applies up to `n_steps` more steps; stops at the end of the pass.
pub fn descend(dual: &DualModel, mut state: DescentState, n_steps: usize) -> DescentState {
    let remaining = state.total_steps(dual).saturating_sub(state.steps_applied);
    for _ in 0..n_steps.min(remaining) {
        state.step(dual);
    }
    state
}
