//! Social robot navigation on top of the crowd simulator.
//!
//! The crate turns [`evolvenav_sim`]'s world into a sequential decision
//! problem: the robot senses nearby pedestrians, forecasts their near future
//! with the trajectory predictor (or a constant-velocity stand-in), and is
//! scored by a reward that combines goal progress, clearance from people and
//! obstacles, and a group term built on the convex hulls of pedestrian
//! groups. An attention-based recurrent policy maps those observations to
//! planar velocity commands and is trained with clipped-surrogate policy
//! optimization across parallel environments.

pub mod env;
pub mod hull;
pub mod policy;
pub mod ppo;
pub mod reward;

pub use env::{EpisodeOutcome, EpisodeTrace, Forecaster, NavEnv, NavEnvConfig, TraceStep};
pub use hull::{brute_force_hull, convex_hull, GroupHull, HullSide};
pub use policy::{PolicyConfig, PolicyInput, PolicyNet, PolicyOutput};
pub use ppo::{train_policy, PpoConfig, PpoReport, RolloutBuffer};
pub use reward::{classify_events, group_reward, total_reward, RewardConfig, StepOutcome};

use thiserror::Error;

/// Errors surfaced by the navigation stack.
#[derive(Debug, Error)]
pub enum NavError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Sim(#[from] evolvenav_sim::SimError),
    #[error("prediction: {0}")]
    Predictor(#[from] evolvenav_predictor::PredictorError),
    #[error("parameters: {0}")]
    Nnet(#[from] evolvenav_nnet::NnetError),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse: {0}")]
    Parse(String),
}
