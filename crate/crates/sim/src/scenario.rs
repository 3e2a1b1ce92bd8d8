//! Scenario sampling: groups, obstacles, and robot start/goal placement.
//!
//! All placement is rejection sampling from a caller-supplied RNG with a hard
//! budget, so a given `(config, seed)` pair either deterministically yields
//! the same scenario or deterministically fails.

use rand::Rng;

use crate::vec2::Vec2;
use crate::world::SimWorld;
use crate::SimError;

/// Static circular obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSpec {
    pub center: Vec2,
    pub radius: f64,
}

/// One simulated pedestrian.
#[derive(Debug, Clone, Copy)]
pub struct PedestrianState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub max_speed: f64,
    pub dest: Vec2,
    pub group_id: usize,
    pub arrived: bool,
}

/// The robot's physical state inside the simulation.
#[derive(Debug, Clone, Copy)]
pub struct RobotBody {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub max_speed: f64,
    pub goal: Vec2,
}

/// Everything that shapes scenario generation and stepping.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Number of pedestrian groups.
    pub n_groups: usize,
    /// Group size is drawn uniformly from `group_size_min..=group_size_max`.
    pub group_size_min: usize,
    pub group_size_max: usize,
    /// Half side length of the square arena (arena is `[-h, h]^2`).
    pub arena_half_extent: f64,
    /// Pedestrian body radius range.
    pub ped_radius_min: f64,
    pub ped_radius_max: f64,
    /// Shared per-group speed limit range.
    pub group_speed_min: f64,
    pub group_speed_max: f64,
    /// Obstacle count is drawn uniformly from `1..=n_groups`.
    pub obstacle_radius_min: f64,
    pub obstacle_radius_max: f64,
    /// Obstacle centers fall inside this disk around the arena center.
    pub obstacle_disk_radius: f64,
    /// Minimum straight-line distance between robot start and goal.
    pub robot_goal_min_dist: f64,
    pub robot_radius: f64,
    pub robot_max_speed: f64,
    /// Simulation step in seconds.
    pub dt: f64,
    /// ORCA avoidance horizon in seconds.
    pub tau_orca: f64,
    /// Pedestrians react to bodies within this range (also the robot's sensor
    /// range).
    pub neighbor_range: f64,
    /// Whether pedestrians see (and reciprocally avoid) the robot.
    pub robot_visible: bool,
    /// Pedestrians reaching their destination: re-assign a fresh group
    /// destination (`true`) or stop in place (`false`).
    pub respawn: bool,
    /// A pedestrian counts as arrived within this distance of the shared
    /// destination point. Must comfortably exceed a body diameter so a whole
    /// group can settle around one point without shoving each other.
    pub arrival_radius: f64,
    /// Total rejection-sampling draw budget for one scenario.
    pub max_rejections: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_groups: 5,
            group_size_min: 2,
            group_size_max: 5,
            arena_half_extent: 6.0,
            ped_radius_min: 0.3,
            ped_radius_max: 0.5,
            group_speed_min: 0.5,
            group_speed_max: 1.5,
            obstacle_radius_min: 0.6,
            obstacle_radius_max: 1.0,
            obstacle_disk_radius: 6.0,
            robot_goal_min_dist: 10.0,
            robot_radius: 0.3,
            robot_max_speed: 1.0,
            dt: 0.25,
            tau_orca: 2.0,
            neighbor_range: 5.0,
            robot_visible: true,
            respawn: false,
            arrival_radius: 1.0,
            max_rejections: 10_000,
        }
    }
}

impl ScenarioConfig {
    /// Range and consistency checks with field-specific messages.
    pub fn validate(&self) -> Result<(), SimError> {
        fn positive(name: &str, v: f64) -> Result<(), SimError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be positive, got {v}")))
            }
        }
        fn ordered(name: &str, lo: f64, hi: f64) -> Result<(), SimError> {
            if lo <= hi {
                Ok(())
            } else {
                Err(SimError::Config(format!(
                    "{name}: min {lo} exceeds max {hi}"
                )))
            }
        }
        if self.n_groups == 0 {
            return Err(SimError::Config("n_groups must be at least 1".into()));
        }
        if self.group_size_min == 0 {
            return Err(SimError::Config("group_size_min must be at least 1".into()));
        }
        if self.group_size_min > self.group_size_max {
            return Err(SimError::Config(format!(
                "group_size: min {} exceeds max {}",
                self.group_size_min, self.group_size_max
            )));
        }
        positive("arena_half_extent", self.arena_half_extent)?;
        positive("ped_radius_min", self.ped_radius_min)?;
        ordered("ped_radius", self.ped_radius_min, self.ped_radius_max)?;
        positive("group_speed_min", self.group_speed_min)?;
        ordered("group_speed", self.group_speed_min, self.group_speed_max)?;
        positive("obstacle_radius_min", self.obstacle_radius_min)?;
        ordered(
            "obstacle_radius",
            self.obstacle_radius_min,
            self.obstacle_radius_max,
        )?;
        positive("obstacle_disk_radius", self.obstacle_disk_radius)?;
        positive("robot_radius", self.robot_radius)?;
        positive("robot_max_speed", self.robot_max_speed)?;
        positive("dt", self.dt)?;
        positive("tau_orca", self.tau_orca)?;
        positive("neighbor_range", self.neighbor_range)?;
        positive("arrival_radius", self.arrival_radius)?;
        if self.robot_goal_min_dist < 0.0 {
            return Err(SimError::Config(format!(
                "robot_goal_min_dist must be non-negative, got {}",
                self.robot_goal_min_dist
            )));
        }
        let diag = 2.0 * self.arena_half_extent * std::f64::consts::SQRT_2;
        if self.robot_goal_min_dist >= diag {
            return Err(SimError::Config(format!(
                "robot_goal_min_dist {} cannot fit in an arena of diagonal {diag:.2}",
                self.robot_goal_min_dist
            )));
        }
        if self.max_rejections == 0 {
            return Err(SimError::Config("max_rejections must be at least 1".into()));
        }
        Ok(())
    }
}

/// Spawn circle radius sized from the actual member radii: enough area that
/// rejection packing at ~50% density succeeds quickly.
fn group_circle_radius(member_radii: &[f64]) -> f64 {
    let packing_area: f64 = member_radii
        .iter()
        .map(|r| std::f64::consts::PI * (r + MEMBER_MARGIN) * (r + MEMBER_MARGIN))
        .sum();
    let max_r = member_radii.iter().cloned().fold(0.0, f64::max);
    (packing_area / (std::f64::consts::PI * 0.5)).sqrt().max(2.2 * max_r)
}

/// Minimum surface clearance between two freshly placed pedestrians.
const MEMBER_MARGIN: f64 = 0.1;

/// Outcome of one placement attempt: either the stage should be retried from
/// a clean slate, or the global draw budget ran dry.
enum Stuck {
    Restart,
    Budget(&'static str),
}

/// Global rejection budget shared by all stages of one `init_scenario` call.
pub(crate) struct Budget {
    left: usize,
}

impl Budget {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            left: cfg.max_rejections,
        }
    }
    fn spend(&mut self, stage: &'static str) -> Result<(), Stuck> {
        if self.left == 0 {
            return Err(Stuck::Budget(stage));
        }
        self.left -= 1;
        Ok(())
    }
}

fn sample_in_disk(rng: &mut impl Rng, center: Vec2, radius: f64) -> Vec2 {
    let r = radius * rng.gen::<f64>().sqrt();
    let ang = rng.gen::<f64>() * std::f64::consts::TAU;
    center + Vec2::new(ang.cos(), ang.sin()) * r
}

fn sample_on_perimeter(rng: &mut impl Rng, half: f64) -> Vec2 {
    let side = rng.gen_range(0..4u8);
    let t = rng.gen_range(-half..half);
    match side {
        0 => Vec2::new(t, half),
        1 => Vec2::new(t, -half),
        2 => Vec2::new(half, t),
        _ => Vec2::new(-half, t),
    }
}

/// Per-stage caps on consecutive draws before the whole attempt is abandoned
/// and placement restarts from a clean slate. Restarting escapes unlucky
/// partial layouts (e.g. three well-spread circles that leave no room for a
/// fourth) far more cheaply than grinding on them.
const LOCAL_OBSTACLE_CAP: usize = 200;
const LOCAL_CIRCLE_CAP: usize = 400;
const LOCAL_MEMBER_CAP: usize = 400;
const LOCAL_DEST_CAP: usize = 200;
const LOCAL_ROBOT_CAP: usize = 600;

/// Samples a full scenario: obstacles, grouped pedestrians with shared
/// boundary destinations, and a robot start/goal pair. With `with_robot`
/// false the robot slot is left empty (dataset recording runs robot-free).
///
/// The total draw budget is `cfg.max_rejections`; within it, placement may
/// restart from scratch any number of times, so a `(config, seed)` pair
/// either deterministically yields the same scenario or deterministically
/// fails with the stage that starved.
pub fn init_scenario(
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
    with_robot: bool,
) -> Result<SimWorld, SimError> {
    cfg.validate()?;
    let mut budget = Budget::new(cfg);
    loop {
        match try_build(cfg, rng, with_robot, &mut budget) {
            Ok(world) => return Ok(world),
            Err(Stuck::Restart) => continue,
            Err(Stuck::Budget(stage)) => return Err(SimError::RejectionBudget { stage }),
        }
    }
}

fn try_build(
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
    with_robot: bool,
    budget: &mut Budget,
) -> Result<SimWorld, Stuck> {
    let half = cfg.arena_half_extent;

    // Obstacles first: centers inside the central disk, mutually clear.
    let n_obstacles = rng.gen_range(1..=cfg.n_groups);
    let mut obstacles: Vec<ObstacleSpec> = Vec::with_capacity(n_obstacles);
    while obstacles.len() < n_obstacles {
        let mut tries = 0;
        loop {
            budget.spend("obstacles")?;
            tries += 1;
            if tries > LOCAL_OBSTACLE_CAP {
                return Err(Stuck::Restart);
            }
            let radius = rng.gen_range(cfg.obstacle_radius_min..=cfg.obstacle_radius_max);
            let center = sample_in_disk(rng, Vec2::ZERO, cfg.obstacle_disk_radius);
            let clear = obstacles
                .iter()
                .all(|o| o.center.dist(center) > o.radius + radius + 0.1);
            if clear {
                obstacles.push(ObstacleSpec { center, radius });
                break;
            }
        }
    }

    // Group compositions: size, member radii (which set the spawn circle
    // size), and the shared speed limit.
    let sizes: Vec<usize> = (0..cfg.n_groups)
        .map(|_| rng.gen_range(cfg.group_size_min..=cfg.group_size_max))
        .collect();
    let radii: Vec<Vec<f64>> = sizes
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| rng.gen_range(cfg.ped_radius_min..=cfg.ped_radius_max))
                .collect()
        })
        .collect();

    // Disjoint spawn circles. Obstacles only need to stay clear of the circle
    // center region: members dodge them individually below.
    let mut circles: Vec<(Vec2, f64)> = Vec::with_capacity(cfg.n_groups);
    for member_radii in &radii {
        let r_g = group_circle_radius(member_radii);
        let margin = half - r_g;
        if margin <= 0.0 {
            return Err(Stuck::Budget("group circles"));
        }
        let mut tries = 0;
        loop {
            budget.spend("group circles")?;
            tries += 1;
            if tries > LOCAL_CIRCLE_CAP {
                return Err(Stuck::Restart);
            }
            let c = Vec2::new(rng.gen_range(-margin..margin), rng.gen_range(-margin..margin));
            let clear_groups = circles.iter().all(|(cc, rr)| cc.dist(c) > rr + r_g + 0.1);
            let clear_obst = obstacles
                .iter()
                .all(|o| o.center.dist(c) > o.radius + 0.4 * r_g);
            if clear_groups && clear_obst {
                circles.push((c, r_g));
                break;
            }
        }
    }

    // Members inside their circle, mutually and obstacle clear; shared
    // destination and speed limit per group.
    let mut peds: Vec<PedestrianState> = Vec::new();
    for (gid, (member_radii, &(center, r_g))) in radii.iter().zip(circles.iter()).enumerate() {
        let speed = rng.gen_range(cfg.group_speed_min..=cfg.group_speed_max);
        let dest = sample_group_destination(cfg, rng, center, &obstacles, budget)?;
        let mut placed: Vec<(Vec2, f64)> = Vec::with_capacity(member_radii.len());
        let mut tries = 0;
        while placed.len() < member_radii.len() {
            budget.spend("pedestrians")?;
            tries += 1;
            if tries > LOCAL_MEMBER_CAP {
                return Err(Stuck::Restart);
            }
            let radius = member_radii[placed.len()];
            let pos = sample_in_disk(rng, center, (r_g - radius).max(0.0));
            let clear_peds = placed
                .iter()
                .all(|(p, r)| p.dist(pos) > r + radius + MEMBER_MARGIN);
            let clear_obst = obstacles
                .iter()
                .all(|o| o.center.dist(pos) > o.radius + radius + 0.05);
            if clear_peds && clear_obst {
                placed.push((pos, radius));
            }
        }
        for (pos, radius) in placed {
            peds.push(PedestrianState {
                pos,
                vel: Vec2::ZERO,
                radius,
                max_speed: speed,
                dest,
                group_id: gid,
                arrived: false,
            });
        }
    }

    // Robot start and goal.
    let robot = if with_robot {
        let mut tries = 0;
        let (start, goal) = loop {
            budget.spend("robot start/goal")?;
            tries += 1;
            if tries > LOCAL_ROBOT_CAP {
                return Err(Stuck::Restart);
            }
            let start = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
            let goal = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
            if start.dist(goal) < cfg.robot_goal_min_dist {
                continue;
            }
            let start_clear = peds
                .iter()
                .all(|p| p.pos.dist(start) > p.radius + cfg.robot_radius + 0.1)
                && obstacles
                    .iter()
                    .all(|o| o.center.dist(start) > o.radius + cfg.robot_radius + 0.1);
            let goal_clear = obstacles
                .iter()
                .all(|o| o.center.dist(goal) > o.radius + cfg.robot_radius + 0.1);
            if start_clear && goal_clear {
                break (start, goal);
            }
        };
        Some(RobotBody {
            pos: start,
            vel: Vec2::ZERO,
            radius: cfg.robot_radius,
            max_speed: cfg.robot_max_speed,
            goal,
        })
    } else {
        None
    };

    Ok(SimWorld::from_parts(cfg.clone(), peds, obstacles, robot))
}

/// A point on the arena boundary at least one half-extent away from the group
/// center (so every group actually has to cross open space) and clear of
/// obstacles (so the group can physically gather around it).
fn sample_group_destination(
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
    group_center: Vec2,
    obstacles: &[ObstacleSpec],
    budget: &mut Budget,
) -> Result<Vec2, Stuck> {
    let mut tries = 0;
    loop {
        budget.spend("destinations")?;
        tries += 1;
        if tries > LOCAL_DEST_CAP {
            return Err(Stuck::Restart);
        }
        let dest = sample_on_perimeter(rng, cfg.arena_half_extent);
        let far_enough = dest.dist(group_center) >= cfg.arena_half_extent;
        let reachable = obstacles
            .iter()
            .all(|o| o.center.dist(dest) > o.radius + cfg.ped_radius_max + 0.3);
        if far_enough && reachable {
            return Ok(dest);
        }
    }
}

/// Re-sampling entry point used by the respawn flag at runtime.
pub(crate) fn fresh_destination(
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
    group_center: Vec2,
    obstacles: &[ObstacleSpec],
) -> Result<Vec2, SimError> {
    let mut budget = Budget::new(cfg);
    loop {
        match sample_group_destination(cfg, rng, group_center, obstacles, &mut budget) {
            Ok(dest) => return Ok(dest),
            Err(Stuck::Restart) => continue,
            Err(Stuck::Budget(_)) => {
                return Err(SimError::RejectionBudget {
                    stage: "respawn destination",
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_validates() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_ranges_are_reported_by_field() {
        let mut cfg = ScenarioConfig::default();
        cfg.ped_radius_min = 0.9;
        cfg.ped_radius_max = 0.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("ped_radius"), "{msg}");
    }

    #[test]
    fn scenario_respects_geometry_invariants() {
        let cfg = ScenarioConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let world = init_scenario(&cfg, &mut rng, true).unwrap();
            let n_peds = world.peds.len();
            assert!((cfg.n_groups * cfg.group_size_min..=cfg.n_groups * cfg.group_size_max)
                .contains(&n_peds));
            assert!(!world.obstacles.is_empty() && world.obstacles.len() <= cfg.n_groups);
            for o in &world.obstacles {
                assert!(o.center.norm() <= cfg.obstacle_disk_radius + 1e-9);
            }
            // No initial interpenetration anywhere.
            assert!(world.max_penetration() < 0.0, "seed {seed}");
            // Members of one group share destination and speed limit.
            for gid in 0..cfg.n_groups {
                let members: Vec<_> =
                    world.peds.iter().filter(|p| p.group_id == gid).collect();
                assert!(!members.is_empty());
                for m in &members {
                    assert_eq!(m.dest, members[0].dest);
                    assert_eq!(m.max_speed, members[0].max_speed);
                }
            }
            let robot = world.robot.unwrap();
            assert!(robot.pos.dist(robot.goal) >= cfg.robot_goal_min_dist);
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let cfg = ScenarioConfig::default();
        let w1 = init_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
        let w2 = init_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
        for (a, b) in w1.peds.iter().zip(w2.peds.iter()) {
            assert_eq!(a.pos, b.pos);
            assert_eq!(a.dest, b.dest);
        }
    }

    #[test]
    fn impossible_packing_exhausts_the_budget() {
        let mut cfg = ScenarioConfig::default();
        cfg.n_groups = 40; // 40 disjoint circles cannot fit the arena
        cfg.max_rejections = 2_000;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match init_scenario(&cfg, &mut rng, false) {
            Err(SimError::RejectionBudget { .. }) => {}
            other => panic!("expected rejection-budget error, got {other:?}"),
        }
    }
}
