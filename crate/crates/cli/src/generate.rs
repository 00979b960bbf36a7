//! Greedy generation from a randomly drawn toy model.

use dualgrad_core::metric::{score_ids, EffectDScore};
use dualgrad_core::model::{generate, Activation, AttentionMode, GenerationTrace, ToyModel};
use dualgrad_core::rng::derive_seed;
use dualgrad_core::testkit::{
    random_attention, random_ffn, random_gqa, random_sequence, random_stack, random_vocabulary,
};
use dualgrad_core::{Error, FourierFeatureMap};

use crate::config::{ExperimentConfig, ModeKind, ModelKind};
use crate::output::float;

pub const HEADER: [&str; 4] = ["step", "position", "token_id", "score"];

pub fn build_model(cfg: &ExperimentConfig) -> Result<ToyModel, Error> {
    let seed = cfg.seed;
    let map = |dim: usize| FourierFeatureMap::sample(dim, cfg.features, 1.0, derive_seed(seed, "generate/map"));
    let mode = |dim: usize| -> Result<AttentionMode, Error> {
        Ok(match cfg.mode {
            ModeKind::Exact => AttentionMode::Exact,
            ModeKind::Kernel => AttentionMode::Kernel(map(dim)?),
        })
    };
    Ok(match cfg.model {
        ModelKind::Attention => {
            ToyModel::Attention { params: random_attention(seed, cfg.d_in, cfg.d_out), mode: mode(cfg.d_out)? }
        }
        ModelKind::Layer => ToyModel::Layer {
            params: random_attention(seed, cfg.d_in, cfg.d_out),
            ffn: random_ffn(seed, cfg.d_out, cfg.d_hidden, Activation::Relu),
            mode: mode(cfg.d_out)?,
        },
        // Layers chain, so the stack runs at the input width throughout.
        ModelKind::Stack => {
            ToyModel::Stack { stack: random_stack(seed, cfg.layers, cfg.d_in, cfg.d_hidden), mode: mode(cfg.d_in)? }
        }
        ModelKind::Gqa => {
            let heads = cfg.heads * cfg.groups;
            if !cfg.d_out.is_multiple_of(heads) {
                return Err(Error::InvalidConfig(format!("d_out {} is not divisible into {heads} heads", cfg.d_out)));
            }
            ToyModel::Gqa {
                params: random_gqa(seed, cfg.heads, cfg.groups, cfg.d_in, cfg.d_out),
                map: map(cfg.d_out / heads)?,
            }
        }
    })
}

pub struct GenerateRun {
    pub trace: GenerationTrace,
    /// `e_id . h` for each emitted token.
    pub scores: Vec<f64>,
    pub effect: Option<EffectDScore>,
}

pub fn run_generate(cfg: &ExperimentConfig) -> Result<GenerateRun, Error> {
    let model = build_model(cfg)?;
    let vocab = random_vocabulary(cfg.seed, cfg.vocab, model.d_out(), cfg.d_in);
    let seq = random_sequence(cfg.seed, cfg.d_in, cfg.n_instruction, cfg.n_demo, cfg.n_lead);
    let trace = generate(&model, &seq, cfg.steps, &vocab, cfg.mask.as_ref())?;
    let scores = trace.steps.iter().map(|s| vocab.output_embedding(s.token_id).dot(&s.hidden)).collect();
    let effect = cfg.target.map(|t| score_ids(&trace.ids(), t));
    Ok(GenerateRun { trace, scores, effect })
}

pub fn csv_rows(run: &GenerateRun) -> Vec<Vec<String>> {
    run.trace
        .steps
        .iter()
        .zip(&run.scores)
        .enumerate()
        .map(|(i, (s, &score))| vec![(i + 1).to_string(), s.position.to_string(), s.token_id.to_string(), float(score)])
        .collect()
}
