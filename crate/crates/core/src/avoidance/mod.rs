//! Reciprocal collision avoidance: path following, per-neighbor ORCA
//! half-planes, static obstacle half-planes and the velocity LP.

mod lp;

use crate::geometry::{Point, Segment, Vec2};
use crate::pathfinding::Path;
use crate::protocol::AgentId;
use crate::workspace::GridMap;

use lp::Line;

/// Angle applied to the preferred velocity in exact head-on encounters.
const SYMMETRY_BREAK_ANGLE: f64 = 1e-3;

/// Half-plane `{ v : (v - point) . normal >= 0 }` in velocity space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    pub fn new(point: Vec2, normal: Vec2) -> Self {
        HalfPlane { point, normal: normal.normalized() }
    }

    /// Signed distance of `v` into the permitted side (negative = violated).
    pub fn margin(&self, v: Vec2) -> f64 {
        (v - self.point).dot(self.normal)
    }

    pub fn permits(&self, v: Vec2, tol: f64) -> bool {
        self.margin(v) >= -tol
    }

    fn to_line(self) -> Line {
        Line { point: self.point, direction: Vec2::new(self.normal.y, -self.normal.x) }
    }

    fn from_line(line: Line) -> Self {
        HalfPlane { point: line.point, normal: line.direction.perp() }
    }
}

/// What an agent broadcasts about its motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub id: AgentId,
    pub position: Point,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvoidanceParams {
    pub u_max: f64,
    pub r_safe: f64,
    pub tau_agent: f64,
    pub tau_obst: f64,
}

impl Default for AvoidanceParams {
    fn default() -> Self {
        AvoidanceParams { u_max: 0.1, r_safe: 0.49, tau_agent: 10.0, tau_obst: 10.0 }
    }
}

/// Follows a reference path waypoint by waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFollower {
    path: Path,
    next: usize,
}

impl PathFollower {
    pub fn new(path: Path) -> Self {
        let next = usize::from(path.waypoints.len() > 1);
        PathFollower { path, next }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn goal(&self) -> Point {
        self.path.end()
    }

    pub fn current_index(&self) -> usize {
        self.next
    }

    /// Velocity of magnitude `min(u_max, distance)` towards the current
    /// waypoint. Waypoints other than the last are skipped once `p` is within
    /// `reach` of them or of the leg leaving them (an agent pushed past a
    /// corner should not turn back to it).
    pub fn preferred_velocity(&mut self, p: Point, u_max: f64, reach: f64) -> Vec2 {
        let w = &self.path.waypoints;
        let last = w.len() - 1;
        while self.next < last
            && (p.dist(w[self.next]) <= reach
                || crate::geometry::point_segment_distance(p, w[self.next], w[self.next + 1]) <= reach)
        {
            self.next += 1;
        }
        let offset = self.path.waypoints[self.next] - p;
        let d = offset.norm();
        if d <= u_max {
            offset
        } else {
            offset * (u_max / d)
        }
    }

    /// `p` followed by the waypoints still ahead.
    pub fn remaining(&self, p: Point) -> Vec<Point> {
        std::iter::once(p)
            .chain(self.path.waypoints[self.next..].iter().copied())
            .collect()
    }

    /// Distance from `p` to the part of the path starting at the previous
    /// waypoint.
    pub fn deviation(&self, p: Point) -> f64 {
        let from = self.next.saturating_sub(1);
        crate::geometry::point_polyline_distance(p, &self.path.waypoints[from..])
    }
}

/// Preferred velocity for a fresh follower of `path` at `p`.
pub fn preferred_velocity(path: &Path, p: Point, u_max: f64, reach: f64) -> Vec2 {
    PathFollower::new(path.clone()).preferred_velocity(p, u_max, reach)
}

/// Deterministic unit direction for a pair of coincident agents; the two
/// agents get opposite directions.
fn pair_direction(a: AgentId, b: AgentId) -> Vec2 {
    let (lo, hi) = if a < b { (a.0, b.0) } else { (b.0, a.0) };
    let mix = (lo as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (hi as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let angle = (mix % 3600) as f64 / 3600.0 * std::f64::consts::TAU;
    let dir = Vec2::new(angle.cos(), angle.sin());
    if a < b {
        dir
    } else {
        -dir
    }
}

fn orca_line(me: &Kinematics, other: &Kinematics, r_safe: f64, tau: f64) -> Line {
    let rel_pos = other.position - me.position;
    let rel_vel = me.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined = 2.0 * r_safe;
    let combined_sq = combined * combined;
    let inv_tau = 1.0 / tau;

    let (direction, u) = if dist_sq > combined_sq {
        // vector from cutoff circle center to relative velocity
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_sq * w_len_sq {
            // project on the cut-off circle
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (Vec2::new(unit_w.y, -unit_w.x), unit_w * (combined * inv_tau - w_len))
        } else {
            // project on the legs
            let leg = (dist_sq - combined_sq).sqrt();
            let direction = if rel_pos.det(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(direction);
            (direction, direction * dot2 - rel_vel)
        }
    } else {
        // Already overlapping: leave the overlap within one step.
        let w = rel_vel - rel_pos;
        let w_len = w.norm();
        let unit_w = if w_len > 1e-12 { w / w_len } else { pair_direction(me.id, other.id) };
        (Vec2::new(unit_w.y, -unit_w.x), unit_w * (combined - w_len))
    };
    Line { point: me.velocity + u * 0.5, direction }
}

/// Reciprocal constraint on `me`'s velocity induced by `other`: if both take
/// half of the correction, disks of radius `r_safe` do not meet within `tau`
/// steps.
pub fn orca_halfplane(me: &Kinematics, other: &Kinematics, r_safe: f64, tau: f64) -> HalfPlane {
    assert!(tau > 0.0);
    HalfPlane::from_line(orca_line(me, other, r_safe, tau))
}

/// Constraint keeping a disk of radius `r` at `p` outside `segment` for
/// `tau` steps: the separating line through the closest boundary point may
/// be approached at no more than `(d - r) / tau` per step.
pub fn obstacle_halfplane(p: Point, segment: &Segment, r: f64, tau: f64) -> HalfPlane {
    let closest = segment.closest_point(p);
    let away = p - closest;
    let d = away.norm();
    let normal = if d > 1e-12 { away / d } else { segment.free_normal() };
    HalfPlane { point: normal * ((r - d) / tau), normal }
}

/// Velocity closest to `v_pref` (within `u_max`) satisfying the ORCA
/// constraints of `neighbors` and the obstacle constraints of nearby
/// `obstacles`. Obstacle constraints stay hard when the program is
/// infeasible.
pub fn compute_action(
    me: &Kinematics,
    neighbors: &[Kinematics],
    obstacles: &[Segment],
    v_pref: Vec2,
    params: &AvoidanceParams,
) -> Vec2 {
    let reach = params.r_safe + params.tau_obst * params.u_max;
    let mut lines: Vec<Line> = obstacles
        .iter()
        .filter(|s| {
            crate::geometry::point_segment_distance(me.position, s.a, s.b) < reach
        })
        .map(|s| obstacle_halfplane(me.position, s, params.r_safe, params.tau_obst).to_line())
        .collect();
    let hard = lines.len();

    let mut preferred = v_pref;
    for other in neighbors {
        if other.id == me.id {
            continue;
        }
        let rel_pos = other.position - me.position;
        let rel_vel = me.velocity - other.velocity;
        let scale = rel_pos.norm() * rel_vel.norm();
        let head_on = scale > 0.0
            && rel_pos.det(rel_vel).abs() <= 1e-9 * scale
            && rel_vel.dot(rel_pos) > 0.0
            && v_pref.det(rel_pos).abs() <= 1e-9 * rel_pos.norm() * v_pref.norm();
        if head_on && preferred == v_pref {
            preferred = v_pref.rotated(SYMMETRY_BREAK_ANGLE);
        }
        lines.push(orca_line(me, other, params.r_safe, params.tau_agent));
    }
    lp::solve(&lines, hard, preferred, params.u_max)
}

/// Every obstacle half-plane for `p`, in the order `compute_action` builds
/// them, followed by the agent ones. Exposed for inspection in tests.
pub fn constraints(
    me: &Kinematics,
    neighbors: &[Kinematics],
    obstacles: &[Segment],
    params: &AvoidanceParams,
) -> Vec<HalfPlane> {
    let reach = params.r_safe + params.tau_obst * params.u_max;
    obstacles
        .iter()
        .filter(|s| crate::geometry::point_segment_distance(me.position, s.a, s.b) < reach)
        .map(|s| obstacle_halfplane(me.position, s, params.r_safe, params.tau_obst))
        .chain(
            neighbors
                .iter()
                .filter(|o| o.id != me.id)
                .map(|o| orca_halfplane(me, o, params.r_safe, params.tau_agent)),
        )
        .collect()
}

/// Solves the velocity program directly over half-planes: the first `hard`
/// stay hard in the infeasible case.
pub fn solve_halfplanes(planes: &[HalfPlane], hard: usize, preferred: Vec2, max_speed: f64) -> Vec2 {
    let lines: Vec<Line> = planes.iter().map(|h| h.to_line()).collect();
    lp::solve(&lines, hard, preferred, max_speed)
}

/// Obstacle segments bucketed by grid cell: each cell lists the segments
/// within `range` of any point of the cell.
#[derive(Debug, Clone)]
pub struct ObstacleIndex {
    width: usize,
    height: usize,
    segments: Vec<Segment>,
    buckets: Vec<Vec<usize>>,
}

impl ObstacleIndex {
    pub fn new(map: &GridMap, range: f64) -> Self {
        let segments = map.extract_obstacle_segments();
        let (w, h) = (map.width(), map.height());
        let mut buckets = vec![Vec::new(); w * h];
        for (i, s) in segments.iter().enumerate() {
            let c0 = ((s.a.x.min(s.b.x) - range).floor().max(0.0)) as usize;
            let c1 = ((s.a.x.max(s.b.x) + range).floor() as usize).min(w - 1);
            let r0 = ((s.a.y.min(s.b.y) - range).floor().max(0.0)) as usize;
            let r1 = ((s.a.y.max(s.b.y) + range).floor() as usize).min(h - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let rect = crate::geometry::Rect::new(
                        Point::new(c as f64, r as f64),
                        Point::new(c as f64 + 1.0, r as f64 + 1.0),
                    );
                    if crate::geometry::segment_rect_distance(s.a, s.b, &rect) <= range {
                        buckets[r * w + c].push(i);
                    }
                }
            }
        }
        ObstacleIndex { width: w, height: h, segments, buckets }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Segments possibly within `range` of `p`.
    pub fn near(&self, p: Point) -> impl Iterator<Item = &Segment> + '_ {
        let c = (p.x.floor().max(0.0) as usize).min(self.width - 1);
        let r = (p.y.floor().max(0.0) as usize).min(self.height - 1);
        self.buckets[r * self.width + c].iter().map(|&i| &self.segments[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kin(id: u32, p: (f64, f64), v: (f64, f64)) -> Kinematics {
        Kinematics { id: AgentId(id), position: Point::new(p.0, p.1), velocity: Vec2::new(v.0, v.1) }
    }

    #[test]
    fn follower_basics() {
        let path = Path::new(vec![Point::new(0.0, 0.0), Point::new(5.0, 0.0), Point::new(5.0, 5.0)]);
        let mut f = PathFollower::new(path.clone());
        let v = f.preferred_velocity(Point::new(0.0, 0.0), 0.1, 0.3);
        assert!((v.x - 0.1).abs() < 1e-12 && v.y.abs() < 1e-12);
        // within reach of waypoint 1: heading switches to waypoint 2
        let v = f.preferred_velocity(Point::new(4.8, 0.0), 0.1, 0.3);
        assert!(v.y > 0.09, "{v:?}");
        assert_eq!(f.current_index(), 2);
        // at the final waypoint: zero
        let v = f.preferred_velocity(Point::new(5.0, 5.0), 0.1, 0.3);
        assert_eq!(v, Vec2::ZERO);
        // near the final waypoint: exact offset
        let v = f.preferred_velocity(Point::new(5.0, 4.95), 0.1, 0.3);
        assert!((v.y - 0.05).abs() < 1e-12);

        // pushed past the corner onto the next leg: keep going forward
        let mut f = PathFollower::new(path);
        let v = f.preferred_velocity(Point::new(5.1, 1.0), 0.1, 0.3);
        assert_eq!(f.current_index(), 2);
        assert!(v.y > 0.09, "{v:?}");
    }

    #[test]
    fn distant_agents_do_not_constrain_rest() {
        let a = kin(0, (0.0, 0.0), (0.0, 0.0));
        let b = kin(1, (100.0, 0.0), (0.0, 0.0));
        let h = orca_halfplane(&a, &b, 0.49, 10.0);
        assert!(h.permits(Vec2::ZERO, 0.0));
    }

    #[test]
    fn reciprocity_negates_correction() {
        let a = kin(0, (0.0, 0.0), (0.1, 0.0));
        let b = kin(1, (2.0, 0.3), (-0.1, 0.02));
        let ha = orca_halfplane(&a, &b, 0.49, 10.0);
        let hb = orca_halfplane(&b, &a, 0.49, 10.0);
        let ua = (ha.point - a.velocity) * 2.0;
        let ub = (hb.point - b.velocity) * 2.0;
        assert!((ua + ub).norm() < 1e-12, "{ua:?} {ub:?}");
    }

    #[test]
    fn coincident_agents_repel() {
        let a = kin(3, (1.0, 1.0), (0.0, 0.0));
        let b = kin(7, (1.0, 1.0), (0.0, 0.0));
        let ha = orca_halfplane(&a, &b, 0.49, 10.0);
        let hb = orca_halfplane(&b, &a, 0.49, 10.0);
        assert!((ha.normal + hb.normal).norm() < 1e-12);
        assert!(!ha.permits(Vec2::ZERO, 0.0));
    }

    #[test]
    fn free_agent_keeps_preferred_velocity() {
        let a = kin(0, (5.0, 5.0), (0.0, 0.0));
        let v = compute_action(&a, &[], &[], Vec2::new(0.06, -0.03), &AvoidanceParams::default());
        assert_eq!(v, Vec2::new(0.06, -0.03));
        let v = compute_action(&a, &[], &[], Vec2::ZERO, &AvoidanceParams::default());
        assert_eq!(v, Vec2::ZERO);
    }

    #[test]
    fn wall_blocks_motion() {
        // wall along x = 6, agent at distance 0.5 pushing into it
        let wall = Segment::new(Point::new(6.0, 0.0), Point::new(6.0, 10.0));
        let a = kin(0, (5.5, 5.0), (0.0, 0.0));
        let v = compute_action(&a, &[], &[wall], Vec2::new(0.1, 0.0), &AvoidanceParams::default());
        assert!(v.x <= 0.001 + 1e-12, "{v:?}");
    }

    #[test]
    fn point_symmetric_pair_gets_mirrored_actions() {
        let params = AvoidanceParams::default();
        let a = kin(0, (-1.0, 0.05), (0.1, 0.0));
        let b = kin(1, (1.0, -0.05), (-0.1, 0.0));
        let va = compute_action(&a, &[b], &[], Vec2::new(0.1, 0.0), &params);
        let vb = compute_action(&b, &[a], &[], Vec2::new(-0.1, 0.0), &params);
        assert!((va + vb).norm() < 1e-12, "{va:?} {vb:?}");
    }

    #[test]
    fn index_finds_nearby_walls() {
        let m = GridMap::new(10, 10, [(5, 5)]);
        let idx = ObstacleIndex::new(&m, 1.5);
        // three sides of the blocked cell are within 1.5 of cell (5,7)
        assert_eq!(idx.near(Point::new(5.5, 7.0)).count(), 3);
        assert_eq!(idx.near(Point::new(1.2, 1.2)).count(), 2);
    }
}
