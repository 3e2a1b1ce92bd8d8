//! World state and synchronous stepping.
//!
//! All pedestrians plan from the same pre-step snapshot, then every body
//! integrates simultaneously with holonomic kinematics (commanded velocities
//! are adopted instantly). Bodies are rigid disks: a contact-resolution pass
//! removes any overlap the velocity planner's infeasibility fallback let
//! through. The robot, when present, moves by externally supplied action; it
//! participates in pedestrian planning only while `robot_visible` is set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::orca::{self, BodyView, Responsibility};
use crate::scenario::{self, ObstacleSpec, PedestrianState, RobotBody, ScenarioConfig};
use crate::vec2::Vec2;

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub cfg: ScenarioConfig,
    pub peds: Vec<PedestrianState>,
    pub obstacles: Vec<ObstacleSpec>,
    pub robot: Option<RobotBody>,
    /// Steps taken since initialization.
    pub t: usize,
    /// Internal stream for respawn destinations; seeded once so that stepping
    /// is a pure function of the initial state.
    respawn_rng: ChaCha8Rng,
}

impl SimWorld {
    /// Builds a world from explicitly placed bodies, bypassing scenario
    /// sampling. Useful for hand-crafted arenas: fixtures, empty training
    /// worlds, regression cases. The caller is responsible for placements
    /// that make sense (no initial overlap, destinations in bounds).
    pub fn new(
        cfg: ScenarioConfig,
        peds: Vec<PedestrianState>,
        obstacles: Vec<ObstacleSpec>,
        robot: Option<RobotBody>,
    ) -> Self {
        Self::from_parts(cfg, peds, obstacles, robot)
    }

    pub(crate) fn from_parts(
        cfg: ScenarioConfig,
        peds: Vec<PedestrianState>,
        obstacles: Vec<ObstacleSpec>,
        robot: Option<RobotBody>,
    ) -> Self {
        // Derive the respawn stream from the initial geometry so that two
        // identical scenarios replay identically without carrying the
        // scenario RNG around.
        let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
        for p in &peds {
            h = h
                .rotate_left(13)
                .wrapping_add(p.pos.x.to_bits())
                .wrapping_add(p.pos.y.to_bits());
        }
        Self {
            cfg,
            peds,
            obstacles,
            robot,
            t: 0,
            respawn_rng: ChaCha8Rng::seed_from_u64(h),
        }
    }

    fn ped_view(p: &PedestrianState) -> BodyView {
        BodyView {
            pos: p.pos,
            vel: p.vel,
            radius: p.radius,
        }
    }

    /// Advances one step. `robot_action` is the commanded robot velocity (it
    /// is clamped to the robot's speed limit); pass `None` to keep a present
    /// robot stationary or when there is no robot at all.
    pub fn step(&mut self, robot_action: Option<Vec2>) {
        let dt = self.cfg.dt;
        let range = self.cfg.neighbor_range;
        let snapshot: Vec<BodyView> = self.peds.iter().map(Self::ped_view).collect();
        let robot_view = self.robot.as_ref().map(|r| BodyView {
            pos: r.pos,
            vel: r.vel,
            radius: r.radius,
        });

        let mut new_vels = Vec::with_capacity(self.peds.len());
        for (i, ped) in self.peds.iter().enumerate() {
            let pref = if ped.arrived {
                Vec2::ZERO
            } else {
                (ped.dest - ped.pos).normalized() * ped.max_speed
            };
            let obstacles: Vec<BodyView> = self
                .obstacles
                .iter()
                .filter(|o| o.center.dist(ped.pos) - o.radius <= range)
                .map(|o| BodyView {
                    pos: o.center,
                    vel: Vec2::ZERO,
                    radius: o.radius,
                })
                .collect();
            let mut neighbors: Vec<(BodyView, Responsibility)> = snapshot
                .iter()
                .enumerate()
                .filter(|(j, b)| *j != i && b.pos.dist(ped.pos) <= range)
                .map(|(_, b)| (*b, Responsibility::Shared))
                .collect();
            if self.cfg.robot_visible {
                if let Some(rv) = robot_view {
                    if rv.pos.dist(ped.pos) <= range {
                        // The robot does not run ORCA, so the pedestrian
                        // cannot count on reciprocity.
                        neighbors.push((rv, Responsibility::Full));
                    }
                }
            }
            let v = orca::compute_new_velocity(
                &snapshot[i],
                pref,
                ped.max_speed,
                &obstacles,
                &neighbors,
                self.cfg.tau_orca,
                dt,
            );
            new_vels.push(v);
        }

        for (ped, v) in self.peds.iter_mut().zip(new_vels) {
            ped.vel = v;
            ped.pos += v * dt;
        }
        if let Some(robot) = self.robot.as_mut() {
            let v = robot_action.unwrap_or(Vec2::ZERO).clamped(robot.max_speed);
            robot.vel = v;
            robot.pos += v * dt;
        }
        self.resolve_contacts();
        self.t += 1;

        self.handle_arrivals();
    }

    /// Projects out any residual body overlap after integration.
    ///
    /// Velocity planning minimizes the worst constraint violation when the
    /// avoidance constraints go infeasible (dense pack converging on one
    /// destination), which can command a few millimetres of overlap per step.
    /// Bodies are rigid disks, so that overlap is resolved by a deterministic
    /// Gauss-Seidel pass: each overlapping pair separates symmetrically along
    /// the centre line, obstacles are immovable. Commanded velocities are left
    /// untouched; they are what the avoidance model reasons about next step.
    fn resolve_contacts(&mut self) {
        const SLACK: f64 = 1e-9;
        const MAX_PASSES: usize = 256;
        for _ in 0..MAX_PASSES {
            let mut moved = false;
            for i in 0..self.peds.len() {
                for j in (i + 1)..self.peds.len() {
                    let comb_r = self.peds[i].radius + self.peds[j].radius;
                    let delta = self.peds[j].pos - self.peds[i].pos;
                    let d = delta.norm();
                    if d < comb_r {
                        let dir = if d > SLACK {
                            delta * (1.0 / d)
                        } else {
                            Vec2::new(1.0, 0.0)
                        };
                        let push = dir * (0.5 * (comb_r - d + SLACK));
                        self.peds[i].pos -= push;
                        self.peds[j].pos += push;
                        moved = true;
                    }
                }
                for k in 0..self.obstacles.len() {
                    let o = self.obstacles[k];
                    let comb_r = self.peds[i].radius + o.radius;
                    let delta = self.peds[i].pos - o.center;
                    let d = delta.norm();
                    if d < comb_r {
                        let dir = if d > SLACK {
                            delta * (1.0 / d)
                        } else {
                            Vec2::new(1.0, 0.0)
                        };
                        self.peds[i].pos = o.center + dir * (comb_r + SLACK);
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }

    fn handle_arrivals(&mut self) {
        // Group members share one destination point, so "arrived" has to
        // trigger at a radius large enough for the whole group to settle
        // around it without shoving whoever got there first.
        let arrive_at = self.cfg.arrival_radius;
        for ped in self.peds.iter_mut() {
            if !ped.arrived && ped.pos.dist(ped.dest) < arrive_at.max(ped.radius) {
                ped.arrived = true;
            }
        }
        if !self.cfg.respawn {
            return;
        }
        // A group whose members have all arrived gets one fresh shared
        // destination and sets off again.
        let n_groups = self.cfg.n_groups;
        for gid in 0..n_groups {
            let members: Vec<usize> = (0..self.peds.len())
                .filter(|&i| self.peds[i].group_id == gid)
                .collect();
            if members.is_empty() || !members.iter().all(|&i| self.peds[i].arrived) {
                continue;
            }
            let center = members
                .iter()
                .fold(Vec2::ZERO, |acc, &i| acc + self.peds[i].pos)
                * (1.0 / members.len() as f64);
            if let Ok(dest) = scenario::fresh_destination(
                &self.cfg,
                &mut self.respawn_rng,
                center,
                &self.obstacles,
            ) {
                for &i in &members {
                    self.peds[i].dest = dest;
                    self.peds[i].arrived = false;
                }
            }
        }
    }

    /// Robot velocity under the reciprocal-avoidance baseline: the robot
    /// plans like a pedestrian toward its goal among visible bodies. When the
    /// crowd cannot see the robot it takes full avoidance responsibility.
    pub fn robot_orca_action(&self) -> Option<Vec2> {
        let robot = self.robot.as_ref()?;
        let me = BodyView {
            pos: robot.pos,
            vel: robot.vel,
            radius: robot.radius,
        };
        let range = self.cfg.neighbor_range;
        let pref = (robot.goal - robot.pos).normalized() * robot.max_speed;
        let obstacles: Vec<BodyView> = self
            .obstacles
            .iter()
            .filter(|o| o.center.dist(robot.pos) - o.radius <= range)
            .map(|o| BodyView {
                pos: o.center,
                vel: Vec2::ZERO,
                radius: o.radius,
            })
            .collect();
        let resp = if self.cfg.robot_visible {
            Responsibility::Shared
        } else {
            Responsibility::Full
        };
        let neighbors: Vec<(BodyView, Responsibility)> = self
            .peds
            .iter()
            .filter(|p| p.pos.dist(robot.pos) <= range)
            .map(|p| (Self::ped_view(p), resp))
            .collect();
        Some(orca::compute_new_velocity(
            &me,
            pref,
            robot.max_speed,
            &obstacles,
            &neighbors,
            self.cfg.tau_orca,
            self.cfg.dt,
        ))
    }

    /// Largest overlap in the scene: positive means two bodies interpenetrate.
    /// Pedestrian-pedestrian and pedestrian-obstacle pairs only; robot
    /// contact is an episode event, not a simulation defect.
    pub fn max_penetration(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.peds.len() {
            for j in (i + 1)..self.peds.len() {
                let overlap = self.peds[i].radius + self.peds[j].radius
                    - self.peds[i].pos.dist(self.peds[j].pos);
                worst = worst.max(overlap);
            }
            for o in &self.obstacles {
                let overlap = self.peds[i].radius + o.radius - self.peds[i].pos.dist(o.center);
                worst = worst.max(overlap);
            }
        }
        worst
    }
}
