//! Training windows sliced out of recorded episodes.
//!
//! A window holds every agent's track over `t_h + t_f` consecutive steps as
//! one row-major matrix: row `i` is `[x_0, y_0, x_1, y_1, ...]` for agent
//! `i`. Group labels ride along for group-recovery evaluation.

use std::path::Path;

use evolvenav_sim::episode::load_split;
use evolvenav_sim::EpisodeRecord;
use ndarray::Array2;

use crate::PredictorError;

/// One multi-agent track snippet plus group labels.
#[derive(Debug, Clone)]
pub struct Window {
    positions: Array2<f64>,
    /// Group label per agent (row).
    pub group_ids: Vec<usize>,
}

impl Window {
    /// Wraps a `(N, T*2)` position matrix. `group_ids` must have one entry
    /// per row; all coordinates must be finite.
    pub fn new(positions: Array2<f64>, group_ids: Vec<usize>) -> Result<Self, PredictorError> {
        let (n, cols) = positions.dim();
        if n == 0 || cols == 0 || cols % 2 != 0 {
            return Err(PredictorError::Dataset(format!(
                "window shape ({n}, {cols}) is not (agents, steps*2)"
            )));
        }
        if group_ids.len() != n {
            return Err(PredictorError::Dataset(format!(
                "{} group labels for {n} agents",
                group_ids.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::Dataset("non-finite coordinate".into()));
        }
        Ok(Self { positions, group_ids })
    }

    pub fn n_agents(&self) -> usize {
        self.positions.dim().0
    }

    pub fn t_total(&self) -> usize {
        self.positions.dim().1 / 2
    }

    /// Position of agent `i` at step `t`.
    pub fn pos(&self, i: usize, t: usize) -> (f64, f64) {
        (self.positions[(i, 2 * t)], self.positions[(i, 2 * t + 1)])
    }

    /// The full `(N, T*2)` track matrix.
    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    /// The first `t_h` steps as an owned `(N, t_h*2)` matrix.
    pub fn history(&self, t_h: usize) -> Array2<f64> {
        self.positions.slice(ndarray::s![.., ..t_h * 2]).to_owned()
    }

    /// Everything after the first `t_h` steps as an owned matrix.
    pub fn future(&self, t_h: usize) -> Array2<f64> {
        self.positions.slice(ndarray::s![.., t_h * 2..]).to_owned()
    }
}

/// A set of windows ready for training or evaluation.
#[derive(Debug, Clone, Default)]
pub struct WindowDataset {
    pub windows: Vec<Window>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Slices `t_h + t_f`-step windows out of each episode, advancing the
    /// start by `stride` steps between windows.
    pub fn from_episodes(
        episodes: &[EpisodeRecord],
        t_h: usize,
        t_f: usize,
        stride: usize,
    ) -> Result<Self, PredictorError> {
        if stride == 0 {
            return Err(PredictorError::Dataset("stride must be positive".into()));
        }
        let t_total = t_h + t_f;
        let mut windows = Vec::new();
        for ep in episodes {
            let n = ep.n_agents();
            let steps = ep.n_steps();
            if n == 0 || steps < t_total {
                continue;
            }
            let mut start = 0;
            while start + t_total <= steps {
                let mut positions = Array2::zeros((n, t_total * 2));
                for (k, frame) in ep.positions[start..start + t_total].iter().enumerate() {
                    for (i, p) in frame.iter().enumerate() {
                        positions[(i, 2 * k)] = p.x;
                        positions[(i, 2 * k + 1)] = p.y;
                    }
                }
                windows.push(Window::new(positions, ep.group_ids.clone())?);
                start += stride;
            }
        }
        Ok(Self { windows })
    }

    /// Loads every episode file under `dir` and windows it.
    pub fn from_dir(
        dir: &Path,
        t_h: usize,
        t_f: usize,
        stride: usize,
    ) -> Result<Self, PredictorError> {
        let episodes = load_split(dir)?;
        Self::from_episodes(&episodes, t_h, t_f, stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evolvenav_sim::Vec2;

    fn toy_episode(n: usize, steps: usize) -> EpisodeRecord {
        let positions = (0..steps)
            .map(|t| {
                (0..n)
                    .map(|i| Vec2::new(i as f64 + 0.1 * t as f64, t as f64))
                    .collect()
            })
            .collect();
        EpisodeRecord {
            dt: 0.25,
            obstacles: vec![],
            group_ids: (0..n).collect(),
            positions,
        }
    }

    #[test]
    fn windows_tile_an_episode_with_the_given_stride() {
        let ep = toy_episode(3, 20);
        let ds = WindowDataset::from_episodes(&[ep.clone()], 4, 8, 8).unwrap();
        // Starts 0 and 8 fit a 12-step window into 20 steps at stride 8.
        assert_eq!(ds.len(), 2);
        let w = &ds.windows[1];
        assert_eq!(w.n_agents(), 3);
        assert_eq!(w.t_total(), 12);
        // Window 1 starts at step 8: agent 2 at its step 0 sits at x = 2.8.
        let (x, y) = w.pos(2, 0);
        assert!((x - 2.8).abs() < 1e-12);
        assert!((y - 8.0).abs() < 1e-12);
        assert_eq!(w.group_ids, vec![0, 1, 2]);
    }

    #[test]
    fn history_and_future_split_the_window() {
        let ep = toy_episode(2, 12);
        let ds = WindowDataset::from_episodes(&[ep], 4, 8, 12).unwrap();
        let w = &ds.windows[0];
        let hist = w.history(4);
        let fut = w.future(4);
        assert_eq!(hist.dim(), (2, 8));
        assert_eq!(fut.dim(), (2, 16));
        assert_eq!(hist[(1, 0)], w.pos(1, 0).0);
        assert_eq!(fut[(1, 0)], w.pos(1, 4).0);
    }

    #[test]
    fn short_episodes_are_skipped() {
        let ep = toy_episode(2, 5);
        let ds = WindowDataset::from_episodes(&[ep], 4, 8, 1).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn zero_stride_is_rejected() {
        let ep = toy_episode(2, 20);
        assert!(WindowDataset::from_episodes(&[ep], 4, 8, 0).is_err());
    }

    #[test]
    fn non_finite_coordinates_are_rejected() {
        let mut positions = Array2::zeros((2, 4));
        positions[(0, 0)] = f64::NAN;
        assert!(Window::new(positions, vec![0, 1]).is_err());
    }
}
