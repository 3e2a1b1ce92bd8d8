//! Reward function for social navigation.
//!
//! Every step falls into exactly one of four cases: reaching the goal, a
//! human collision, an obstacle collision, or an ordinary step. Collisions
//! and goal arrival pay fixed constants; an ordinary step is scored as the
//! sum of a goal-progress term, clearance terms against predicted human
//! positions and static obstacles, and a group term that pushes the robot
//! out of (and away from) the convex hulls of pedestrian groups.
//!
//! Two scoring conventions exist for the clearance terms. The default treats
//! them as penalties that activate only inside a discomfort band around
//! people and obstacles and vanish beyond it, which keeps the reward bounded.
//! The alternative (`literal_distance_reward`) pays proportionally to the
//! minimum distance itself, growing without bound as the robot retreats; it
//! is kept selectable because some reward schedules are specified that way.

use evolvenav_sim::{ObstacleSpec, Vec2};

use crate::hull::{GroupHull, HullSide};
use crate::NavError;

/// Scales and constants of the reward, plus the episode step limit.
#[derive(Debug, Clone)]
pub struct RewardConfig {
    /// Paid once when the robot reaches its goal.
    pub r_success: f64,
    /// Paid once on collision with a pedestrian.
    pub r_coll_h: f64,
    /// Paid once on collision with a static obstacle.
    pub r_coll_o: f64,
    /// Goal-progress scale.
    pub alpha: f64,
    /// Clearance scale against predicted human positions.
    pub beta_h: f64,
    /// Clearance scale against obstacle surfaces.
    pub beta_o: f64,
    /// Group-term scale.
    pub gamma_group: f64,
    /// Clearance terms act only within this distance (meters) in the default
    /// penalty convention.
    pub discomfort_band: f64,
    /// Lower bound on the hull area used as the group-term denominator, so
    /// tight or degenerate groups do not blow the term up.
    pub area_floor: f64,
    /// Episodes time out after this many steps without a terminal event.
    pub timeout_steps: usize,
    /// Score clearances as `β · min-distance` (unbounded, increasing with
    /// distance) instead of the banded penalty.
    pub literal_distance_reward: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_success: 10.0,
            r_coll_h: -20.0,
            r_coll_o: -10.0,
            alpha: 0.1,
            beta_h: 2.0,
            beta_o: 2.0,
            gamma_group: 0.1,
            discomfort_band: 1.0,
            area_floor: 0.25,
            timeout_steps: 120,
            literal_distance_reward: false,
        }
    }
}

impl RewardConfig {
    /// Checks signs and orderings: success pays, collisions cost, and human
    /// collisions cost at least as much as obstacle collisions.
    pub fn validate(&self) -> Result<(), NavError> {
        if !(self.r_success > 0.0) {
            return Err(NavError::Config(format!(
                "r_success must be positive, got {}",
                self.r_success
            )));
        }
        if !(self.r_coll_o < 0.0) || !(self.r_coll_h <= self.r_coll_o) {
            return Err(NavError::Config(format!(
                "collision penalties must satisfy r_coll_h <= r_coll_o < 0, got {} and {}",
                self.r_coll_h, self.r_coll_o
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta_h", self.beta_h),
            ("beta_o", self.beta_o),
            ("gamma_group", self.gamma_group),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NavError::Config(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if !(self.discomfort_band > 0.0) || !(self.area_floor > 0.0) {
            return Err(NavError::Config(
                "discomfort_band and area_floor must be positive".to_string(),
            ));
        }
        if self.timeout_steps == 0 {
            return Err(NavError::Config("timeout_steps must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// The mutually exclusive step classification driving the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    ReachedGoal,
    HumanCollision,
    ObstacleCollision,
    Ordinary,
}

/// Resolves simultaneous events into one outcome. A collision with a human
/// dominates everything, an obstacle collision dominates goal arrival: a step
/// that ends inside both a pedestrian and the goal disk is still a failure.
pub fn classify_events(reached_goal: bool, human_collision: bool, obstacle_collision: bool) -> StepOutcome {
    if human_collision {
        StepOutcome::HumanCollision
    } else if obstacle_collision {
        StepOutcome::ObstacleCollision
    } else if reached_goal {
        StepOutcome::ReachedGoal
    } else {
        StepOutcome::Ordinary
    }
}

/// Everything an ordinary (non-terminal) step is scored on.
#[derive(Debug, Clone, Copy)]
pub struct OrdinaryContext<'a> {
    pub robot_pos: Vec2,
    pub goal: Vec2,
    /// Goal distance before the step. When present, goal progress is scored
    /// as the potential difference `α · (prev − current)`; when absent, as
    /// the absolute potential `−α · current`.
    pub prev_goal_dist: Option<f64>,
    /// Predicted human positions over the scored horizon, flattened across
    /// agents and steps.
    pub predicted_humans: &'a [Vec2],
    pub obstacles: &'a [ObstacleSpec],
    /// Convex hulls of the currently visible pedestrian groups.
    pub hulls: &'a [GroupHull],
}

/// Group term: find the hull nearest by boundary distance and score
/// `γ · c · d / max(Area, area_floor)` with `c = +1` outside, `−1` inside,
/// and `0` on the boundary. No hulls means no group term.
pub fn group_reward(robot_pos: Vec2, hulls: &[GroupHull], cfg: &RewardConfig) -> f64 {
    let Some(hull) = hulls
        .iter()
        .min_by(|a, b| a.boundary_distance(robot_pos).total_cmp(&b.boundary_distance(robot_pos)))
    else {
        return 0.0;
    };
    let d = hull.boundary_distance(robot_pos);
    let c = match hull.classify(robot_pos) {
        HullSide::Outside => 1.0,
        HullSide::Inside => -1.0,
        HullSide::Boundary => 0.0,
    };
    cfg.gamma_group * c * d / hull.area().max(cfg.area_floor)
}

/// Clearance term for one minimum distance, or 0 when there was nothing to
/// measure against.
fn clearance_term(min_dist: Option<f64>, beta: f64, cfg: &RewardConfig) -> f64 {
    let Some(d) = min_dist else { return 0.0 };
    if cfg.literal_distance_reward {
        beta * d
    } else if d < cfg.discomfort_band {
        -beta * (cfg.discomfort_band - d)
    } else {
        0.0
    }
}

fn min_over(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
}

/// The full reward: constants on terminal outcomes, the four-term sum on an
/// ordinary step. Distances are robot-center to predicted human positions and
/// robot-center to obstacle surfaces.
pub fn total_reward(cfg: &RewardConfig, outcome: StepOutcome, ctx: &OrdinaryContext<'_>) -> f64 {
    match outcome {
        StepOutcome::HumanCollision => cfg.r_coll_h,
        StepOutcome::ObstacleCollision => cfg.r_coll_o,
        StepOutcome::ReachedGoal => cfg.r_success,
        StepOutcome::Ordinary => {
            let goal_dist = ctx.robot_pos.dist(ctx.goal);
            let r_goal = match ctx.prev_goal_dist {
                Some(prev) => cfg.alpha * (prev - goal_dist),
                None => -cfg.alpha * goal_dist,
            };
            let human_min = min_over(ctx.predicted_humans.iter().map(|p| ctx.robot_pos.dist(*p)));
            let obstacle_min = min_over(
                ctx.obstacles
                    .iter()
                    .map(|o| ctx.robot_pos.dist(o.center) - o.radius),
            );
            group_reward(ctx.robot_pos, ctx.hulls, cfg)
                + clearance_term(human_min, cfg.beta_h, cfg)
                + clearance_term(obstacle_min, cfg.beta_o, cfg)
                + r_goal
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::convex_hull;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn empty_ctx() -> OrdinaryContext<'static> {
        OrdinaryContext {
            robot_pos: Vec2::ZERO,
            goal: Vec2::ZERO,
            prev_goal_dist: None,
            predicted_humans: &[],
            obstacles: &[],
            hulls: &[],
        }
    }

    #[test]
    fn default_config_is_valid_and_ordered() {
        let cfg = RewardConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.r_success > 0.0);
        assert!(0.0 > cfg.r_coll_o);
        assert!(cfg.r_coll_o >= cfg.r_coll_h);
    }

    #[test]
    fn misordered_penalties_are_rejected() {
        let cfg = RewardConfig {
            r_coll_h: -5.0,
            r_coll_o: -10.0,
            ..RewardConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(NavError::Config(_))));
    }

    #[test]
    fn terminal_outcomes_pay_their_constants() {
        let cfg = RewardConfig::default();
        let ctx = empty_ctx();
        assert_eq!(total_reward(&cfg, StepOutcome::ReachedGoal, &ctx), 10.0);
        assert_eq!(total_reward(&cfg, StepOutcome::HumanCollision, &ctx), -20.0);
        assert_eq!(total_reward(&cfg, StepOutcome::ObstacleCollision, &ctx), -10.0);
    }

    #[test]
    fn event_priority_is_human_then_obstacle_then_goal() {
        use StepOutcome::*;
        assert_eq!(classify_events(true, true, true), HumanCollision);
        assert_eq!(classify_events(false, true, true), HumanCollision);
        assert_eq!(classify_events(true, false, true), ObstacleCollision);
        assert_eq!(classify_events(true, false, false), ReachedGoal);
        assert_eq!(classify_events(false, false, false), Ordinary);
    }

    #[test]
    fn lone_goal_term_scores_the_absolute_potential() {
        let cfg = RewardConfig::default();
        let ctx = OrdinaryContext {
            robot_pos: Vec2::ZERO,
            goal: v(3.0, 0.0),
            ..empty_ctx()
        };
        assert_abs_diff_eq!(total_reward(&cfg, StepOutcome::Ordinary, &ctx), -0.3);
    }

    #[test]
    fn goal_term_with_history_scores_progress() {
        let cfg = RewardConfig::default();
        let ctx = OrdinaryContext {
            robot_pos: Vec2::ZERO,
            goal: v(3.0, 0.0),
            prev_goal_dist: Some(3.5),
            ..empty_ctx()
        };
        // Moved 0.5 m closer at alpha = 0.1.
        assert_abs_diff_eq!(total_reward(&cfg, StepOutcome::Ordinary, &ctx), 0.05);
    }

    #[test]
    fn literal_form_matches_a_hand_computed_sum() {
        // Distinct betas so a swapped term cannot cancel out.
        let cfg = RewardConfig {
            beta_h: 2.0,
            beta_o: 0.7,
            literal_distance_reward: true,
            ..RewardConfig::default()
        };
        let hull = convex_hull(
            &[v(0.5, -0.5), v(1.5, -0.5), v(1.5, 0.5), v(0.5, 0.5)],
            0,
        )
        .unwrap();
        let obstacles = [ObstacleSpec {
            center: v(0.0, 4.0),
            radius: 2.0,
        }];
        let humans = [v(1.0, 0.0)];
        let ctx = OrdinaryContext {
            robot_pos: Vec2::ZERO,
            goal: v(3.0, 0.0),
            prev_goal_dist: None,
            predicted_humans: &humans,
            obstacles: &obstacles,
            hulls: std::slice::from_ref(&hull),
        };
        // human min distance 1, obstacle surface distance 4 - 2 = 2, hull
        // boundary distance 0.5 with area 1, goal distance 3:
        //   2.0*1 + 0.7*2 + 0.1*0.5/1 - 0.1*3 = 2 + 1.4 + 0.05 - 0.3
        assert_abs_diff_eq!(total_reward(&cfg, StepOutcome::Ordinary, &ctx), 3.15, epsilon = 1e-12);
    }

    #[test]
    fn penalty_form_activates_only_inside_the_band() {
        let cfg = RewardConfig {
            beta_h: 2.0,
            beta_o: 0.7,
            ..RewardConfig::default()
        };
        let obstacles = [ObstacleSpec {
            center: v(0.0, 4.0),
            radius: 2.0,
        }];
        let humans = [v(0.4, 0.0)];
        let ctx = OrdinaryContext {
            robot_pos: Vec2::ZERO,
            goal: v(3.0, 0.0),
            prev_goal_dist: None,
            predicted_humans: &humans,
            obstacles: &obstacles,
            hulls: &[],
        };
        // Human at 0.4 m is 0.6 m into the band: -2.0*0.6 = -1.2. Obstacle
        // surface at 2 m is outside the band: 0. Goal: -0.3.
        assert_abs_diff_eq!(total_reward(&cfg, StepOutcome::Ordinary, &ctx), -1.5, epsilon = 1e-12);
    }

    #[test]
    fn group_term_formula_on_a_plain_outside_case() {
        // Boundary distance 2, area 4, gamma 0.1 -> 0.05.
        let cfg = RewardConfig::default();
        let hull = convex_hull(&[v(2.0, -1.0), v(4.0, -1.0), v(4.0, 1.0), v(2.0, 1.0)], 0).unwrap();
        assert_abs_diff_eq!(group_reward(Vec2::ZERO, &[hull], &cfg), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn inside_a_triangle_matches_the_per_edge_oracle() {
        let cfg = RewardConfig::default();
        let tri = [v(0.0, 0.0), v(6.0, 0.0), v(0.0, 6.0)];
        let hull = convex_hull(&tri, 0).unwrap();
        let robot = v(1.0, 1.0);
        let r = group_reward(robot, std::slice::from_ref(&hull), &cfg);
        assert!(r < 0.0, "strictly inside must be penalized, got {r}");

        // Independent per-edge distance computation.
        let mut d_min = f64::INFINITY;
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            let ab = b - a;
            let t = ((robot - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
            d_min = d_min.min(robot.dist(a + ab * t));
        }
        assert_abs_diff_eq!(
            r.abs(),
            cfg.gamma_group * d_min / hull.area().max(cfg.area_floor),
            epsilon = 1e-12
        );
    }

    #[test]
    fn boundary_point_scores_exactly_zero() {
        let cfg = RewardConfig::default();
        let hull = convex_hull(&[v(0.0, 0.0), v(4.0, 0.0), v(4.0, 4.0), v(0.0, 4.0)], 0).unwrap();
        assert_eq!(group_reward(v(2.0, 0.0), &[hull], &cfg), 0.0);
    }

    #[test]
    fn two_member_groups_use_segment_distance_and_the_area_floor() {
        let cfg = RewardConfig::default();
        let hull = convex_hull(&[v(1.0, 0.0), v(3.0, 0.0)], 0).unwrap();
        // Robot 1.5 m above the segment midpoint; area floor 0.25.
        let r = group_reward(v(2.0, 1.5), &[hull], &cfg);
        assert_abs_diff_eq!(r, 0.1 * 1.5 / 0.25, epsilon = 1e-12);
    }

    #[test]
    fn nearest_hull_wins_and_no_hulls_scores_zero() {
        let cfg = RewardConfig::default();
        assert_eq!(group_reward(Vec2::ZERO, &[], &cfg), 0.0);

        let near = convex_hull(&[v(1.0, -1.0), v(2.0, -1.0), v(2.0, 1.0), v(1.0, 1.0)], 0).unwrap();
        let far = convex_hull(&[v(8.0, -1.0), v(9.0, -1.0), v(9.0, 1.0), v(8.0, 1.0)], 1).unwrap();
        let r_both = group_reward(Vec2::ZERO, &[far, near.clone()], &cfg);
        let r_near = group_reward(Vec2::ZERO, &[near], &cfg);
        assert_eq!(r_both, r_near, "the closer hull decides the group term");
    }

    #[test]
    fn group_sign_invariant_on_random_hulls() {
        // Lattice-valued vertices make edge midpoints exactly representable,
        // so the boundary case can be checked with equality rather than
        // tolerance.
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 100 {
            let pts: Vec<Vec2> = (0..rng.gen_range(3..=8))
                .map(|_| v(rng.gen_range(-16..=16) as f64 * 0.5, rng.gen_range(-16..=16) as f64 * 0.5))
                .collect();
            let hull = convex_hull(&pts, 0).unwrap();
            if hull.area() == 0.0 {
                continue; // need an interior for the inside case
            }
            let verts = hull.vertices().to_vec();
            let centroid = verts.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / verts.len() as f64);
            if hull.classify(centroid) == HullSide::Inside {
                assert!(group_reward(centroid, std::slice::from_ref(&hull), &cfg) < 0.0);
            }
            let outside = v(30.0, 30.0);
            assert!(group_reward(outside, std::slice::from_ref(&hull), &cfg) > 0.0);
            let mid = verts[0] + (verts[1] - verts[0]) * 0.5;
            assert_eq!(group_reward(mid, std::slice::from_ref(&hull), &cfg), 0.0);
            checked += 1;
        }
    }

    proptest! {
        // Exactly one branch fires: the three terminal branches ignore the
        // context entirely, and the ordinary branch never returns a terminal
        // constant by accident on a plain state.
        #[test]
        fn outcome_maps_to_exactly_one_branch(goal in any::<bool>(), h in any::<bool>(), o in any::<bool>()) {
            let cfg = RewardConfig::default();
            let outcome = classify_events(goal, h, o);
            let expected_terminal = match outcome {
                StepOutcome::HumanCollision => Some(cfg.r_coll_h),
                StepOutcome::ObstacleCollision => Some(cfg.r_coll_o),
                StepOutcome::ReachedGoal => Some(cfg.r_success),
                StepOutcome::Ordinary => None,
            };
            prop_assert_eq!(h, outcome == StepOutcome::HumanCollision);
            prop_assert_eq!(!h && o, outcome == StepOutcome::ObstacleCollision);
            prop_assert_eq!(goal && !h && !o, outcome == StepOutcome::ReachedGoal);
            let r = total_reward(&cfg, outcome, &empty_ctx());
            match expected_terminal {
                Some(c) => prop_assert_eq!(r, c),
                None => prop_assert_eq!(r, 0.0), // empty context scores zero
            }
        }
    }
}
