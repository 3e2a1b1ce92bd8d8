//! Multi-agent trajectory prediction with learned relational structure.
//!
//! The model reads a short per-agent history window and infers two layers of
//! latent structure: a distribution over relation types for every ordered
//! agent pair, and a hypergraph whose hyperedges collect candidate groups of
//! agents, each hyperedge carrying its own relation-type distribution. A
//! decoder conditioned on both produces multi-step position forecasts, and a
//! recurrent unit can evolve the relation distributions from one prediction
//! period to the next. Training combines a reconstruction loss with KL,
//! smoothness, sharpness, and sparsity regularizers, preceded by a warm-up
//! stage that updates only the pairwise-reasoning modules.

pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod evolve;
pub mod hypergraph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod train;

pub use config::{AblationConfig, PredictorConfig, TrainConfig};
pub use dataset::{Window, WindowDataset};
pub use loss::{compute_losses, LossBreakdown, PROB_FLOOR};
pub use metrics::{gaussian_log_density, majority_cluster_accuracy, minade_minfde};
pub use model::{FrozenNoise, PredictorModel, RelationSampling, RolloutOutput};
pub use train::{
    train_predictor, write_curves_csv, BestEval, EpochStats, TrainReport, WARMUP_FROZEN_PREFIXES,
};

use thiserror::Error;

/// Pins a test closure to the shape `for<'t> Fn(&ParamStore, &'t Tape) ->
/// Var<'t>`, so one graph builder can serve both the analytic backward pass
/// and the re-evaluations of a finite-difference check.
#[cfg(test)]
pub(crate) fn tape_eval<F>(f: F) -> F
where
    F: for<'t> Fn(&evolvenav_nnet::ParamStore, &'t evolvenav_nnet::Tape) -> evolvenav_nnet::Var<'t>,
{
    f
}

/// Replaces every parameter with fresh uniform values, biases included.
///
/// Finite-difference tests need this: at the zero-bias initialization, rows
/// that pass through several near-dead ReLU layers can land pre-activations
/// within the probe step of the kink, where central differences and the
/// (correct) analytic subgradient legitimately disagree. A generic random
/// point keeps every activation well clear of its kink.
#[cfg(test)]
pub(crate) fn randomize_params(store: &mut evolvenav_nnet::ParamStore, rng: &mut impl rand::Rng) {
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in names {
        let dim = store.get(&name).dim();
        let fresh = ndarray::Array2::from_shape_fn(dim, |_| rng.gen_range(-0.5..0.5));
        store.set(&name, fresh).expect("known parameter");
    }
}

/// Errors surfaced by the prediction stack.
#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("relational inference needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("metrics need at least one sampled rollout")]
    NoSamples,
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("non-finite loss at epoch {epoch}, window {window}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        window: usize,
        detail: String,
    },
    #[error(transparent)]
    Nnet(#[from] evolvenav_nnet::NnetError),
    #[error(transparent)]
    Sim(#[from] evolvenav_sim::SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
