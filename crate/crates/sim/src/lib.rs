//! Crowd simulation for social-navigation experiments.
//!
//! Pedestrians move in a square arena in small groups: each group shares a
//! destination on the arena boundary and a speed limit, members are spawned
//! inside a disjoint group circle, and every pedestrian plans with reciprocal
//! collision avoidance (ORCA) against nearby pedestrians, static circular
//! obstacles, and optionally a robot. The crate also defines the plain-text
//! episode file format used to exchange recorded trajectories with the
//! prediction stack.

pub mod episode;
pub mod orca;
pub mod scenario;
pub mod vec2;
pub mod world;

pub use episode::{generate_dataset, EpisodeRecord};
pub use scenario::{init_scenario, ObstacleSpec, PedestrianState, RobotBody, ScenarioConfig};
pub use vec2::Vec2;
pub use world::SimWorld;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario rejection budget exhausted while placing {stage}")]
    RejectionBudget { stage: &'static str },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("episode io: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode parse: {0}")]
    Parse(String),
}
