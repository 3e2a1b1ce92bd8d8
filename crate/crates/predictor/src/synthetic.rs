//! Deterministic generator of small co-moving-group scenes.
//!
//! Each scene places a few groups far apart, gives every group one shared
//! velocity, and lets members drift with light positional noise. The group
//! structure is unambiguous by construction, which makes these scenes useful
//! for overfitting sanity runs and for checking that inferred hyperedges
//! recover the ground-truth grouping.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::dataset::{Window, WindowDataset};
use crate::PredictorError;

/// Parameters of the scene generator.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Number of groups per scene.
    pub n_groups: usize,
    /// Agents per group.
    pub group_size: usize,
    /// Steps per scene.
    pub t_total: usize,
    /// Step duration in seconds.
    pub dt: f64,
    /// Group speed range in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Radius of the disk members are scattered in around the group centre.
    pub spread: f64,
    /// Minimum initial distance between group centres.
    pub separation: f64,
    /// Standard deviation of the per-step positional noise.
    pub noise_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_groups: 2,
            group_size: 3,
            t_total: 12,
            dt: 0.25,
            speed_min: 0.5,
            speed_max: 1.5,
            spread: 0.5,
            separation: 8.0,
            noise_std: 0.02,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let fail = |msg: String| Err(PredictorError::Config(msg));
        if self.n_groups == 0 || self.group_size == 0 {
            return fail("need at least one group with one member".into());
        }
        if self.t_total == 0 {
            return fail("t_total must be positive".into());
        }
        if !(self.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.speed_min > 0.0) || self.speed_max < self.speed_min {
            return fail("speed range must satisfy 0 < speed_min <= speed_max".into());
        }
        if !(self.spread >= 0.0) || !(self.separation >= 0.0) || !(self.noise_std >= 0.0) {
            return fail("spread, separation, and noise_std must be non-negative".into());
        }
        Ok(())
    }
}

/// Standard normal draw via Box-Muller.
fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Generates one scene: groups of agents that share a velocity and diverge
/// from each other over time.
pub fn co_moving_scene(
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<Window, PredictorError> {
    cfg.validate()?;
    let g = cfg.n_groups;
    let n = g * cfg.group_size;

    // Group centres on a regular polygon so every pair is at least
    // `separation` apart; a random rotation varies the layout.
    let circumradius = if g >= 2 {
        cfg.separation / (2.0 * (PI / g as f64).sin())
    } else {
        0.0
    };
    let phase: f64 = rng.gen::<f64>() * 2.0 * PI;

    let mut positions = Array2::zeros((n, cfg.t_total * 2));
    let mut group_ids = Vec::with_capacity(n);
    for gi in 0..g {
        let angle = phase + 2.0 * PI * gi as f64 / g as f64;
        let cx = circumradius * angle.cos();
        let cy = circumradius * angle.sin();

        // Heading points outward (plus jitter) so groups separate over time.
        let heading = angle + (rng.gen::<f64>() - 0.5) * 0.6;
        let speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
        let (vx, vy) = (speed * heading.cos(), speed * heading.sin());

        for _ in 0..cfg.group_size {
            let i = group_ids.len();
            group_ids.push(gi);
            // Member offset: uniform in the spread disk.
            let r = cfg.spread * rng.gen::<f64>().sqrt();
            let theta = rng.gen::<f64>() * 2.0 * PI;
            let (ox, oy) = (r * theta.cos(), r * theta.sin());

            let (mut nx, mut ny) = (0.0, 0.0);
            for t in 0..cfg.t_total {
                if t > 0 {
                    nx += cfg.noise_std * gauss(rng);
                    ny += cfg.noise_std * gauss(rng);
                }
                let tt = t as f64 * cfg.dt;
                positions[(i, 2 * t)] = cx + ox + vx * tt + nx;
                positions[(i, 2 * t + 1)] = cy + oy + vy * tt + ny;
            }
        }
    }
    Window::new(positions, group_ids)
}

/// Generates `n_scenes` independent scenes as one dataset.
pub fn co_moving_dataset(
    n_scenes: usize,
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<WindowDataset, PredictorError> {
    let windows = (0..n_scenes)
        .map(|_| co_moving_scene(cfg, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WindowDataset { windows })
}
