//! The navigation MDP: one environment instance is one live episode.
//!
//! Each step clamps the commanded velocity, advances the crowd world,
//! classifies the step (goal / human collision / obstacle collision /
//! timeout / ordinary), assembles the next observation from the robot's
//! sensor ring, and scores the reward. Observations censor pedestrians
//! beyond the sensor range and carry a rolling position history for each
//! visible pedestrian plus a forecast of their near future, produced either
//! by the trajectory predictor (noise-free mode), by constant-velocity
//! extrapolation, or not at all. Every episode accumulates a trace with the
//! ground-truth positions of all pedestrians, which the evaluation metrics
//! and plots consume.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use ndarray::Array2;

use evolvenav_nnet::ParamStore;
use evolvenav_predictor::PredictorModel;
use evolvenav_sim::{ObstacleSpec, SimWorld, Vec2};

use crate::hull::{convex_hull, GroupHull};
use crate::reward::{classify_events, total_reward, OrdinaryContext, RewardConfig, StepOutcome};
use crate::NavError;

/// Robot kinematics plus task parameters, as exposed in observations.
#[derive(Debug, Clone, Copy)]
pub struct RobotState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub goal: Vec2,
    pub v_max: f64,
    pub radius: f64,
    pub sensor_range: f64,
}

/// One pedestrian currently inside the sensor ring.
#[derive(Debug, Clone, Copy)]
pub struct VisibleHuman {
    /// Index into the simulator's pedestrian list.
    pub index: usize,
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub group_id: usize,
}

/// The observation the policy acts on.
#[derive(Debug, Clone)]
pub struct MdpState {
    pub robot: RobotState,
    /// Pedestrians within sensor range, in simulator index order.
    pub humans: Vec<VisibleHuman>,
    /// Observed window per visible human, `(n_vis, t_h * 2)`, oldest step
    /// first; windows start filled with the spawn position.
    pub histories: Array2<f64>,
    /// Forecast positions per visible human, `(n_vis, t_f * 2)`; zero
    /// columns when forecasting is disabled.
    pub predictions: Array2<f64>,
    /// All static obstacles (treated as global knowledge, not censored).
    pub obstacles: Vec<ObstacleSpec>,
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOutcome {
    Success,
    HumanCollision,
    ObstacleCollision,
    Timeout,
}

/// Where the per-step forecast of pedestrian motion comes from.
pub enum Forecaster<'a> {
    /// No look-ahead at all: observations carry an empty forecast block and
    /// the reward's human-clearance term scores current positions instead.
    None,
    /// Straight-line extrapolation of each pedestrian's current velocity.
    ConstantVelocity,
    /// The trained relational predictor in noise-free mode. Falls back to
    /// constant velocity when inference fails (and silently when fewer than
    /// two pedestrians are visible, which relational inference cannot
    /// handle by construction).
    Model {
        model: &'a PredictorModel,
        store: &'a ParamStore,
    },
}

/// Environment shape: simulation config plus observation and reward wiring.
#[derive(Debug, Clone)]
pub struct NavEnvConfig {
    pub scenario: evolvenav_sim::ScenarioConfig,
    pub reward: RewardConfig,
    /// History steps per pedestrian in the observation.
    pub t_h: usize,
    /// Forecast steps per pedestrian in the observation.
    pub t_f: usize,
    /// Forecast steps scored by the reward's human-clearance term
    /// (clamped to `t_f`; intrusion metrics use the same horizon).
    pub scored_horizon: usize,
    /// Build group hulls from hyperedge memberships inferred by the model
    /// forecaster instead of ground-truth group ids.
    pub hulls_from_predictor: bool,
}

impl Default for NavEnvConfig {
    fn default() -> Self {
        Self {
            scenario: evolvenav_sim::ScenarioConfig::default(),
            reward: RewardConfig::default(),
            t_h: 8,
            t_f: 12,
            scored_horizon: 5,
            hulls_from_predictor: false,
        }
    }
}

impl NavEnvConfig {
    pub fn validate(&self) -> Result<(), NavError> {
        self.reward.validate()?;
        if self.t_h == 0 {
            return Err(NavError::Config("t_h must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// One recorded step: the world after it, the reward it paid, and how it was
/// classified. The first entry of a trace is the initial state with zero
/// reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub robot_pos: Vec2,
    pub reward: f64,
    pub event: StepOutcome,
    /// Ground-truth positions of all pedestrians (not just visible ones).
    pub humans: Vec<Vec2>,
}

/// Full record of one episode, sufficient to recompute every navigation
/// metric offline.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub robot_radius: f64,
    pub goal: Vec2,
    pub human_radii: Vec<f64>,
    pub group_ids: Vec<usize>,
    pub steps: Vec<TraceStep>,
    /// `None` while the episode is still running.
    pub outcome: Option<EpisodeOutcome>,
}

/// What one environment step hands back.
pub struct StepFeedback {
    pub state: MdpState,
    pub reward: f64,
    pub outcome: StepOutcome,
    pub done: Option<EpisodeOutcome>,
}

/// One live episode over a crowd world.
pub struct NavEnv {
    cfg: NavEnvConfig,
    world: SimWorld,
    /// Rolling window of the last `t_h` positions per pedestrian.
    histories: Vec<VecDeque<Vec2>>,
    steps_taken: usize,
    prev_goal_dist: f64,
    trace: EpisodeTrace,
    done: Option<EpisodeOutcome>,
}

impl NavEnv {
    /// Wraps an explicitly constructed world (the world must carry a robot).
    pub fn from_world(cfg: NavEnvConfig, world: SimWorld) -> Result<Self, NavError> {
        cfg.validate()?;
        let robot = world
            .robot
            .ok_or_else(|| NavError::Config("navigation needs a robot in the world".to_string()))?;
        let histories = world
            .peds
            .iter()
            .map(|p| {
                let mut q = VecDeque::with_capacity(cfg.t_h);
                q.extend(std::iter::repeat(p.pos).take(cfg.t_h));
                q
            })
            .collect();
        let trace = EpisodeTrace {
            dt: world.cfg.dt,
            robot_radius: robot.radius,
            goal: robot.goal,
            human_radii: world.peds.iter().map(|p| p.radius).collect(),
            group_ids: world.peds.iter().map(|p| p.group_id).collect(),
            steps: vec![TraceStep {
                robot_pos: robot.pos,
                reward: 0.0,
                event: StepOutcome::Ordinary,
                humans: world.peds.iter().map(|p| p.pos).collect(),
            }],
            outcome: None,
        };
        Ok(Self {
            prev_goal_dist: robot.pos.dist(robot.goal),
            cfg,
            world,
            histories,
            steps_taken: 0,
            trace,
            done: None,
        })
    }

    /// Samples a fresh scenario from the configured generator.
    pub fn sample(cfg: NavEnvConfig, rng: &mut impl rand::Rng) -> Result<Self, NavError> {
        let world = evolvenav_sim::init_scenario(&cfg.scenario, rng, true)?;
        Self::from_world(cfg, world)
    }

    pub fn config(&self) -> &NavEnvConfig {
        &self.cfg
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn is_done(&self) -> Option<EpisodeOutcome> {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    fn robot_state(&self) -> RobotState {
        let r = self.world.robot.expect("constructor enforced a robot");
        RobotState {
            pos: r.pos,
            vel: r.vel,
            goal: r.goal,
            v_max: r.max_speed,
            radius: r.radius,
            sensor_range: self.world.cfg.neighbor_range,
        }
    }

    fn visible_humans(&self) -> Vec<VisibleHuman> {
        let robot = self.world.robot.expect("constructor enforced a robot");
        let range = self.world.cfg.neighbor_range;
        self.world
            .peds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.pos.dist(robot.pos) <= range)
            .map(|(index, p)| VisibleHuman {
                index,
                pos: p.pos,
                vel: p.vel,
                radius: p.radius,
                group_id: p.group_id,
            })
            .collect()
    }

    fn history_matrix(&self, visible: &[VisibleHuman]) -> Array2<f64> {
        let t_h = self.cfg.t_h;
        let mut hist = Array2::zeros((visible.len(), t_h * 2));
        for (row, h) in visible.iter().enumerate() {
            for (t, p) in self.histories[h.index].iter().enumerate() {
                hist[(row, 2 * t)] = p.x;
                hist[(row, 2 * t + 1)] = p.y;
            }
        }
        hist
    }

    fn constant_velocity_forecast(&self, visible: &[VisibleHuman]) -> Array2<f64> {
        let (t_f, dt) = (self.cfg.t_f, self.world.cfg.dt);
        let mut pred = Array2::zeros((visible.len(), t_f * 2));
        for (row, h) in visible.iter().enumerate() {
            for k in 1..=t_f {
                let p = h.pos + h.vel * (k as f64 * dt);
                pred[(row, 2 * (k - 1))] = p.x;
                pred[(row, 2 * (k - 1) + 1)] = p.y;
            }
        }
        pred
    }

    fn forecast(
        &self,
        visible: &[VisibleHuman],
        hist: &Array2<f64>,
        forecaster: &Forecaster<'_>,
    ) -> Result<Array2<f64>, NavError> {
        match forecaster {
            Forecaster::None => Ok(Array2::zeros((visible.len(), 0))),
            Forecaster::ConstantVelocity => Ok(self.constant_velocity_forecast(visible)),
            Forecaster::Model { model, store } => {
                if model.cfg.t_h != self.cfg.t_h || model.cfg.t_f != self.cfg.t_f {
                    return Err(NavError::Config(format!(
                        "forecaster horizon ({}, {}) does not match the environment ({}, {})",
                        model.cfg.t_h, model.cfg.t_f, self.cfg.t_h, self.cfg.t_f
                    )));
                }
                if visible.len() < 2 {
                    return Ok(self.constant_velocity_forecast(visible));
                }
                match model.predict_expected(store, hist) {
                    Ok(pred) => Ok(pred),
                    Err(err) => {
                        log::warn!("trajectory prediction failed ({err}); extrapolating at constant velocity");
                        Ok(self.constant_velocity_forecast(visible))
                    }
                }
            }
        }
    }

    /// Group hulls for the reward: by default one hull per ground-truth
    /// group with visible members, built from those members' current
    /// positions. With `hulls_from_predictor` and a model forecaster, the
    /// model's thresholded hyperedge memberships define the grouping
    /// instead (hyperedges gate to at least two members).
    fn reward_hulls(
        &self,
        visible: &[VisibleHuman],
        hist: &Array2<f64>,
        forecaster: &Forecaster<'_>,
    ) -> Vec<GroupHull> {
        if self.cfg.hulls_from_predictor {
            if let Forecaster::Model { model, store } = forecaster {
                if visible.len() >= 2 {
                    if let Ok((hard, _)) = model.infer_expected_incidence(store, hist) {
                        let mut hulls = Vec::new();
                        for m in 0..hard.ncols() {
                            let pts: Vec<Vec2> = visible
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| hard[(*i, m)] > 0.5)
                                .map(|(_, h)| h.pos)
                                .collect();
                            if pts.len() >= 2 {
                                if let Ok(hull) = convex_hull(&pts, m) {
                                    hulls.push(hull);
                                }
                            }
                        }
                        return hulls;
                    }
                }
            }
        }
        let mut gids: Vec<usize> = visible.iter().map(|h| h.group_id).collect();
        gids.sort_unstable();
        gids.dedup();
        gids.iter()
            .filter_map(|&gid| {
                let pts: Vec<Vec2> = visible
                    .iter()
                    .filter(|h| h.group_id == gid)
                    .map(|h| h.pos)
                    .collect();
                convex_hull(&pts, gid).ok()
            })
            .collect()
    }

    /// Assembles the observation for the current world state.
    pub fn observe(&self, forecaster: &Forecaster<'_>) -> Result<MdpState, NavError> {
        let visible = self.visible_humans();
        let histories = self.history_matrix(&visible);
        let predictions = self.forecast(&visible, &histories, forecaster)?;
        Ok(MdpState {
            robot: self.robot_state(),
            humans: visible,
            histories,
            predictions,
            obstacles: self.world.obstacles.clone(),
        })
    }

    /// Advances one step with the commanded velocity (clamped to the speed
    /// limit by the simulator) and returns the next observation, the reward,
    /// and the episode status.
    pub fn step(&mut self, action: Vec2, forecaster: &Forecaster<'_>) -> Result<StepFeedback, NavError> {
        if self.done.is_some() {
            return Err(NavError::Config("step called on a finished episode".to_string()));
        }
        if !(action.x.is_finite() && action.y.is_finite()) {
            return Err(NavError::Config(format!(
                "non-finite action ({}, {})",
                action.x, action.y
            )));
        }

        self.world.step(Some(action));
        self.steps_taken += 1;
        for (q, p) in self.histories.iter_mut().zip(&self.world.peds) {
            q.pop_front();
            q.push_back(p.pos);
        }

        let robot = self.robot_state();
        let human_collision = self
            .world
            .peds
            .iter()
            .any(|p| p.pos.dist(robot.pos) < robot.radius + p.radius);
        let obstacle_collision = self
            .world
            .obstacles
            .iter()
            .any(|o| o.center.dist(robot.pos) < robot.radius + o.radius);
        let reached_goal = robot.pos.dist(robot.goal) <= robot.radius;
        let outcome = classify_events(reached_goal, human_collision, obstacle_collision);

        let state = self.observe(forecaster)?;
        let hulls = self.reward_hulls(&state.humans, &state.histories, forecaster);
        let scored = self
            .cfg
            .scored_horizon
            .min(self.cfg.t_f)
            .min(state.predictions.ncols() / 2);
        let mut predicted = Vec::with_capacity(state.humans.len() * scored.max(1));
        if scored == 0 {
            // Forecast-free observations: score current positions so the
            // human-clearance penalty stays in force.
            predicted.extend(state.humans.iter().map(|h| h.pos));
        } else {
            for row in 0..state.predictions.nrows() {
                for k in 0..scored {
                    predicted.push(Vec2::new(
                        state.predictions[(row, 2 * k)],
                        state.predictions[(row, 2 * k + 1)],
                    ));
                }
            }
        }
        let ctx = OrdinaryContext {
            robot_pos: robot.pos,
            goal: robot.goal,
            prev_goal_dist: Some(self.prev_goal_dist),
            predicted_humans: &predicted,
            obstacles: &state.obstacles,
            hulls: &hulls,
        };
        let reward = total_reward(&self.cfg.reward, outcome, &ctx);
        self.prev_goal_dist = robot.pos.dist(robot.goal);

        let done = match outcome {
            StepOutcome::HumanCollision => Some(EpisodeOutcome::HumanCollision),
            StepOutcome::ObstacleCollision => Some(EpisodeOutcome::ObstacleCollision),
            StepOutcome::ReachedGoal => Some(EpisodeOutcome::Success),
            StepOutcome::Ordinary if self.steps_taken >= self.cfg.reward.timeout_steps => {
                Some(EpisodeOutcome::Timeout)
            }
            StepOutcome::Ordinary => None,
        };
        self.done = done;
        self.trace.steps.push(TraceStep {
            robot_pos: robot.pos,
            reward,
            event: outcome,
            humans: self.world.peds.iter().map(|p| p.pos).collect(),
        });
        self.trace.outcome = done;

        Ok(StepFeedback {
            state,
            reward,
            outcome,
            done,
        })
    }
}

fn outcome_word(o: Option<EpisodeOutcome>) -> &'static str {
    match o {
        Some(EpisodeOutcome::Success) => "success",
        Some(EpisodeOutcome::HumanCollision) => "human_collision",
        Some(EpisodeOutcome::ObstacleCollision) => "obstacle_collision",
        Some(EpisodeOutcome::Timeout) => "timeout",
        None => "running",
    }
}

fn event_word(e: StepOutcome) -> &'static str {
    match e {
        StepOutcome::Ordinary => "ordinary",
        StepOutcome::ReachedGoal => "goal",
        StepOutcome::HumanCollision => "human_collision",
        StepOutcome::ObstacleCollision => "obstacle_collision",
    }
}

impl EpisodeTrace {
    /// Plain-text export: a small header, then per step one
    /// `t robot_x robot_y reward event` line followed by an `h ...` line
    /// carrying all pedestrian positions.
    pub fn write(&self, w: &mut impl Write) -> Result<(), NavError> {
        writeln!(w, "# navigation trace v1")?;
        writeln!(w, "dt {}", self.dt)?;
        writeln!(w, "robot_radius {}", self.robot_radius)?;
        writeln!(w, "goal {} {}", self.goal.x, self.goal.y)?;
        writeln!(w, "outcome {}", outcome_word(self.outcome))?;
        writeln!(w, "n_humans {}", self.human_radii.len())?;
        for (r, g) in self.human_radii.iter().zip(&self.group_ids) {
            writeln!(w, "human {r} {g}")?;
        }
        for (t, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{t} {} {} {} {}",
                s.robot_pos.x,
                s.robot_pos.y,
                s.reward,
                event_word(s.event)
            )?;
            let coords: Vec<String> = s
                .humans
                .iter()
                .flat_map(|p| [p.x.to_string(), p.y.to_string()])
                .collect();
            writeln!(w, "h {}", coords.join(" "))?;
        }
        Ok(())
    }

    /// Parses the text format written by [`EpisodeTrace::write`]; errors
    /// name the 1-based line they arise on.
    pub fn read(r: impl BufRead) -> Result<Self, NavError> {
        let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
        let mut cur = LineCursor { lines: &lines, pos: 0 };

        let _ = cur.next("header")?;
        let (no, l) = cur.next("dt")?;
        let dt: f64 = parse_num(no, &keyed_field(no, &l, "dt")?)?;
        let (no, l) = cur.next("robot_radius")?;
        let robot_radius: f64 = parse_num(no, &keyed_field(no, &l, "robot_radius")?)?;
        let (no, l) = cur.next("goal")?;
        let goal_parts = keyed_field(no, &l, "goal")?;
        let mut it = goal_parts.split_whitespace();
        let goal = Vec2::new(
            parse_num(no, it.next().unwrap_or(""))?,
            parse_num(no, it.next().unwrap_or(""))?,
        );
        let (no, l) = cur.next("outcome")?;
        let outcome = match keyed_field(no, &l, "outcome")?.as_str() {
            "success" => Some(EpisodeOutcome::Success),
            "human_collision" => Some(EpisodeOutcome::HumanCollision),
            "obstacle_collision" => Some(EpisodeOutcome::ObstacleCollision),
            "timeout" => Some(EpisodeOutcome::Timeout),
            "running" => None,
            other => return Err(NavError::Parse(format!("line {no}: unknown outcome `{other}`"))),
        };
        let (no, l) = cur.next("n_humans")?;
        let n: usize = parse_num(no, &keyed_field(no, &l, "n_humans")?)?;
        let mut human_radii = Vec::with_capacity(n);
        let mut group_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let (no, l) = cur.next("human")?;
            let rest = keyed_field(no, &l, "human")?;
            let mut it = rest.split_whitespace();
            human_radii.push(parse_num(no, it.next().unwrap_or(""))?);
            group_ids.push(parse_num::<usize>(no, it.next().unwrap_or(""))?);
        }

        let mut steps = Vec::new();
        while let Some((no, line)) = cur.next_nonempty() {
            let mut it = line.split_whitespace();
            let t: usize = parse_num(no, it.next().unwrap_or(""))?;
            if t != steps.len() {
                return Err(NavError::Parse(format!(
                    "line {no}: step index {t} out of order (expected {})",
                    steps.len()
                )));
            }
            let rx: f64 = parse_num(no, it.next().unwrap_or(""))?;
            let ry: f64 = parse_num(no, it.next().unwrap_or(""))?;
            let reward: f64 = parse_num(no, it.next().unwrap_or(""))?;
            let event = match it.next().unwrap_or("") {
                "ordinary" => StepOutcome::Ordinary,
                "goal" => StepOutcome::ReachedGoal,
                "human_collision" => StepOutcome::HumanCollision,
                "obstacle_collision" => StepOutcome::ObstacleCollision,
                other => return Err(NavError::Parse(format!("line {no}: unknown event `{other}`"))),
            };
            let (no_h, hline) = cur.next("human positions")?;
            let rest = keyed_field(no_h, &hline, "h")?;
            let coords: Result<Vec<f64>, NavError> =
                rest.split_whitespace().map(|s| parse_num(no_h, s)).collect();
            let coords = coords?;
            if coords.len() != 2 * n {
                return Err(NavError::Parse(format!(
                    "line {no_h}: expected {} coordinates, got {}",
                    2 * n,
                    coords.len()
                )));
            }
            steps.push(TraceStep {
                robot_pos: Vec2::new(rx, ry),
                reward,
                event,
                humans: coords.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect(),
            });
        }
        Ok(Self {
            dt,
            robot_radius,
            goal,
            human_radii,
            group_ids,
            steps,
            outcome,
        })
    }
}

/// Sequential line reader tracking 1-based line numbers for error messages.
struct LineCursor<'a> {
    lines: &'a [String],
    pos: usize,
}

impl LineCursor<'_> {
    fn next(&mut self, what: &str) -> Result<(usize, String), NavError> {
        match self.lines.get(self.pos) {
            Some(l) => {
                self.pos += 1;
                Ok((self.pos, l.clone()))
            }
            None => Err(NavError::Parse(format!("unexpected end of trace, expected {what}"))),
        }
    }

    /// Next non-blank line, or `None` at the end of input.
    fn next_nonempty(&mut self) -> Option<(usize, String)> {
        while let Some(l) = self.lines.get(self.pos) {
            self.pos += 1;
            if !l.trim().is_empty() {
                return Some((self.pos, l.clone()));
            }
        }
        None
    }
}

fn keyed_field(no: usize, line: &str, key: &str) -> Result<String, NavError> {
    line.strip_prefix(key)
        .map(|rest| rest.trim().to_string())
        .ok_or_else(|| NavError::Parse(format!("line {no}: expected `{key} ...`, got `{line}`")))
}

fn parse_num<T: std::str::FromStr>(line_no: usize, s: &str) -> Result<T, NavError> {
    s.parse()
        .map_err(|_| NavError::Parse(format!("line {line_no}: cannot parse `{s}`")))
}
