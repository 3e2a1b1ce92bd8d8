//! Optimal reciprocal collision avoidance for holonomic disk agents.
//!
//! Each neighbour induces one half-plane constraint on the agent's new
//! velocity; the velocity closest to the preferred velocity inside the
//! intersection (and inside the speed circle) is found with the incremental
//! two-dimensional linear program of van den Berg et al., including the
//! three-dimensional fallback that minimizes the worst violation when the
//! constraints are infeasible. Static obstacles are handled as zero-velocity
//! disks for which the agent takes *full* avoidance responsibility; their
//! constraints are placed first and are never relaxed by the fallback.
//!
//! Exactly symmetric encounters (relative velocity on the cut-off circle
//! centre) are broken deterministically with the counter-clockwise
//! perpendicular of the relative position, so mirrored agents make mirrored
//! choices without any hidden randomness.

use crate::vec2::Vec2;

const EPS: f64 = 1e-10;

/// Directed line; the feasible half-plane is to the *left* of `dir`.
#[derive(Debug, Clone, Copy)]
pub struct Line {
    pub point: Vec2,
    pub dir: Vec2,
}

/// Kinematic state another body exposes to the planner.
#[derive(Debug, Clone, Copy)]
pub struct BodyView {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
}

/// How much of the required avoidance this agent performs: 0.5 when the other
/// body reciprocates (another ORCA agent), 1.0 when it does not (a static
/// obstacle, or a robot that ignores the crowd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Responsibility {
    Shared,
    Full,
}

/// Builds the half-plane constraint induced on `me` by `other`.
///
/// `tau` is the avoidance horizon for non-colliding pairs; `dt` the simulation
/// step, used as the (much shorter) horizon for resolving an existing overlap.
pub fn avoidance_line(
    me: &BodyView,
    other: &BodyView,
    tau: f64,
    dt: f64,
    resp: Responsibility,
) -> Line {
    let rel_pos = other.pos - me.pos;
    let rel_vel = me.vel - other.vel;
    let dist_sq = rel_pos.norm_sq();
    let comb_r = me.radius + other.radius;
    let comb_r_sq = comb_r * comb_r;

    let (dir, u);
    if dist_sq > comb_r_sq {
        // No current collision: velocity obstacle truncated at horizon tau.
        let w = rel_vel - rel_pos * (1.0 / tau);
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > comb_r_sq * w_len_sq {
            // Project on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = tie_broken_unit(w, w_len, rel_pos);
            dir = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (comb_r / tau - w_len);
        } else {
            // Project on the nearest leg of the cone.
            let leg = (dist_sq - comb_r_sq).sqrt();
            if rel_pos.det(w) > 0.0 {
                dir = Vec2::new(
                    rel_pos.x * leg - rel_pos.y * comb_r,
                    rel_pos.x * comb_r + rel_pos.y * leg,
                ) * (1.0 / dist_sq);
            } else {
                dir = -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * comb_r,
                    -rel_pos.x * comb_r + rel_pos.y * leg,
                ) * (1.0 / dist_sq);
            }
            let dot2 = rel_vel.dot(dir);
            u = dir * dot2 - rel_vel;
        }
    } else {
        // Already overlapping: push apart within one step.
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = tie_broken_unit(w, w_len, rel_pos);
        dir = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (comb_r * inv_dt - w_len);
    }
    let factor = match resp {
        Responsibility::Shared => 0.5,
        Responsibility::Full => 1.0,
    };
    Line {
        point: me.vel + u * factor,
        dir,
    }
}

/// Unit vector of `w`, falling back to the CCW perpendicular of the relative
/// position when `w` vanishes (exactly symmetric head-on encounters). Both
/// agents of a mirrored pair compute perpendiculars of opposite relative
/// positions, so their dodges mirror each other.
fn tie_broken_unit(w: Vec2, w_len: f64, rel_pos: Vec2) -> Vec2 {
    if w_len > EPS {
        w * (1.0 / w_len)
    } else {
        let p = rel_pos.perp().normalized();
        if p == Vec2::ZERO {
            Vec2::new(1.0, 0.0)
        } else {
            p
        }
    }
}

/// Computes the new velocity for an agent with preferred velocity `pref_vel`
/// and speed limit `max_speed`, given obstacle bodies (full responsibility,
/// never relaxed) and reciprocating neighbour bodies.
pub fn compute_new_velocity(
    me: &BodyView,
    pref_vel: Vec2,
    max_speed: f64,
    obstacles: &[BodyView],
    neighbors: &[(BodyView, Responsibility)],
    tau: f64,
    dt: f64,
) -> Vec2 {
    let mut lines = Vec::with_capacity(obstacles.len() + neighbors.len());
    for obst in obstacles {
        lines.push(avoidance_line(me, obst, tau, dt, Responsibility::Full));
    }
    let n_obst_lines = lines.len();
    for (body, resp) in neighbors {
        lines.push(avoidance_line(me, body, tau, dt, *resp));
    }

    let mut result = Vec2::ZERO;
    let fail = linear_program2(&lines, max_speed, pref_vel, false, &mut result);
    if fail < lines.len() {
        #[cfg(test)]
        diag::LP3_CALLS.with(|c| c.set(c.get() + 1));
        linear_program3(&lines, n_obst_lines, fail, max_speed, &mut result);
    }
    result
}


/// Optimizes along `lines[line_no]` subject to the earlier lines and the
/// speed circle. Returns false when infeasible.
fn linear_program1(
    lines: &[Line],
    line_no: usize,
    radius: f64,
    opt_vel: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.dir);
    let discriminant = dot * dot + radius * radius - line.point.norm_sq();
    if discriminant < 0.0 {
        return false; // line misses the speed circle
    }
    let sqrt_d = discriminant.sqrt();
    let mut t_left = -dot - sqrt_d;
    let mut t_right = -dot + sqrt_d;

    for prev in lines.iter().take(line_no) {
        let denominator = line.dir.det(prev.dir);
        let numerator = prev.dir.det(line.point - prev.point);
        if denominator.abs() <= EPS {
            if numerator < 0.0 {
                return false; // parallel and fully infeasible
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    let t = if direction_opt {
        if opt_vel.dot(line.dir) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        (line.dir.dot(opt_vel - line.point)).clamp(t_left, t_right)
    };
    *result = line.point + line.dir * t;
    true
}

/// Incremental 2D LP over half-planes inside the speed circle. Returns the
/// number of lines satisfied (== `lines.len()` on success, else the index of
/// the first infeasible line).
fn linear_program2(
    lines: &[Line],
    radius: f64,
    opt_vel: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    *result = if direction_opt {
        opt_vel * radius
    } else if opt_vel.norm_sq() > radius * radius {
        opt_vel.normalized() * radius
    } else {
        opt_vel
    };
    for i in 0..lines.len() {
        if lines[i].dir.det(lines[i].point - *result) > 0.0 {
            let temp = *result;
            if !linear_program1(lines, i, radius, opt_vel, direction_opt, result) {
                *result = temp;
                return i;
            }
        }
    }
    lines.len()
}

/// Fallback for infeasible constraint sets: minimizes the largest violation
/// over the relaxable lines (indices >= `n_obst_lines`), keeping obstacle
/// lines hard.
fn linear_program3(
    lines: &[Line],
    n_obst_lines: usize,
    begin_line: usize,
    radius: f64,
    result: &mut Vec2,
) {
    let mut distance = 0.0;
    for i in begin_line..lines.len() {
        if lines[i].dir.det(lines[i].point - *result) > distance {
            let mut proj: Vec<Line> = lines[..n_obst_lines].to_vec();
            for j in n_obst_lines..i {
                let denominator = lines[i].dir.det(lines[j].dir);
                let point = if denominator.abs() <= EPS {
                    if lines[i].dir.dot(lines[j].dir) > 0.0 {
                        continue; // same direction: line j is redundant here
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].dir
                            * (lines[j].dir.det(lines[i].point - lines[j].point) / denominator)
                };
                let dir = (lines[j].dir - lines[i].dir).normalized();
                proj.push(Line { point, dir });
            }
            let temp = *result;
            let opt = Vec2::new(-lines[i].dir.y, lines[i].dir.x);
            if linear_program2(&proj, radius, opt, true, result) < proj.len() {
                // This should not happen by construction; keep the previous
                // best answer if it does.
                *result = temp;
            }
            distance = lines[i].dir.det(lines[i].point - *result);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(px: f64, py: f64, vx: f64, vy: f64, r: f64) -> BodyView {
        BodyView {
            pos: Vec2::new(px, py),
            vel: Vec2::new(vx, vy),
            radius: r,
        }
    }

    #[test]
    fn free_agent_keeps_preferred_velocity() {
        let me = agent(0.0, 0.0, 0.5, 0.0, 0.3);
        let v = compute_new_velocity(&me, Vec2::new(0.7, 0.1), 1.0, &[], &[], 2.0, 0.25);
        assert!((v - Vec2::new(0.7, 0.1)).norm() < 1e-12);
    }

    #[test]
    fn preferred_velocity_above_limit_is_clamped_to_the_circle() {
        let me = agent(0.0, 0.0, 0.0, 0.0, 0.3);
        let v = compute_new_velocity(&me, Vec2::new(3.0, 4.0), 1.0, &[], &[], 2.0, 0.25);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!(v.det(Vec2::new(3.0, 4.0)).abs() < 1e-12, "same direction");
    }

    #[test]
    fn head_on_pair_makes_mirrored_choices() {
        // Exactly symmetric: relative velocity equals rel_pos / tau, so the
        // deterministic tie-break decides. The scenario is invariant under a
        // half-turn about the midpoint, and so must be the solution.
        let a = agent(0.0, 0.0, 1.0, 0.0, 0.3);
        let b = agent(4.0, 0.0, -1.0, 0.0, 0.3);
        let va = compute_new_velocity(
            &a,
            Vec2::new(1.0, 0.0),
            1.0,
            &[],
            &[(b, Responsibility::Shared)],
            2.0,
            0.25,
        );
        let vb = compute_new_velocity(
            &b,
            Vec2::new(-1.0, 0.0),
            1.0,
            &[],
            &[(a, Responsibility::Shared)],
            2.0,
            0.25,
        );
        assert!((va + vb).norm() < 1e-9, "va {va:?} vb {vb:?}");
        assert!((va.norm() - vb.norm()).abs() < 1e-9);
        // Both must still make forward progress.
        assert!(va.x > 0.5 && vb.x < -0.5);
    }

    #[test]
    fn constraint_halves_speed_exactly_when_following_too_fast() {
        // Agent chasing a slower agent straight ahead within the horizon must
        // give way; the resulting velocity has to satisfy its own ORCA line.
        let me = agent(0.0, 0.0, 1.0, 0.0, 0.3);
        let other = agent(1.0, 0.0, 0.2, 0.0, 0.3);
        let line = avoidance_line(&me, &other, 2.0, 0.25, Responsibility::Shared);
        let v = compute_new_velocity(
            &me,
            Vec2::new(1.0, 0.0),
            1.0,
            &[],
            &[(other, Responsibility::Shared)],
            2.0,
            0.25,
        );
        assert!(line.dir.det(line.point - v) <= 1e-9, "solution feasible");
        assert!(v.x < 1.0, "must slow or swerve");
    }

    #[test]
    fn obstacle_constraint_uses_full_responsibility() {
        let me = agent(0.0, 0.0, 1.0, 0.0, 0.3);
        let obst = agent(1.0, 0.0, 0.0, 0.0, 0.6);
        let shared = avoidance_line(&me, &obst, 2.0, 0.25, Responsibility::Shared);
        let full = avoidance_line(&me, &obst, 2.0, 0.25, Responsibility::Full);
        // Same direction, but the full-responsibility line is displaced twice
        // as far from the current velocity.
        let d_shared = shared.point - me.vel;
        let d_full = full.point - me.vel;
        assert!((d_full - d_shared * 2.0).norm() < 1e-12);
    }

    #[test]
    fn infeasible_crowd_falls_back_without_panicking() {
        // Surrounded on all sides at close range with conflicting demands:
        // LP2 fails and LP3 must produce a finite answer.
        let me = agent(0.0, 0.0, 0.0, 0.0, 0.4);
        let ring: Vec<(BodyView, Responsibility)> = (0..8)
            .map(|k| {
                let ang = std::f64::consts::TAU * (k as f64) / 8.0;
                let pos = Vec2::new(ang.cos(), ang.sin()) * 0.85;
                (
                    BodyView {
                        pos,
                        vel: -pos, // all converging on me
                        radius: 0.4,
                    },
                    Responsibility::Shared,
                )
            })
            .collect();
        let v = compute_new_velocity(&me, Vec2::new(1.0, 0.0), 1.0, &[], &ring, 2.0, 0.25);
        assert!(v.x.is_finite() && v.y.is_finite());
        assert!(v.norm() <= 1.0 + 1e-9);
    }
}
