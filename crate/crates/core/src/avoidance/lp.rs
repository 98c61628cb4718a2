//! Low-dimensional linear programs over velocity half-planes, in the
//! incremental form used by RVO2: a 2D program that finds the velocity closest
//! to the preferred one inside a speed disk, and a 3D fallback that minimizes
//! the largest violation of the soft constraints when the 2D program is
//! infeasible.

use crate::geometry::Vec2;

const EPS: f64 = 1e-10;

/// Boundary line of a half-plane; permitted velocities lie to the left of
/// `direction` (on the side `direction.perp()` points to).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Line {
    pub point: Vec2,
    pub direction: Vec2,
}

impl Line {
    /// Positive when `v` is on the forbidden side.
    fn violation(&self, v: Vec2) -> f64 {
        self.direction.det(self.point - v)
    }
}

/// Optimizes along line `line_no` subject to the earlier lines and the disk.
fn program_1d(
    lines: &[Line],
    line_no: usize,
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
) -> Option<Vec2> {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < 0.0 {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denom = line.direction.det(other.direction);
        let numer = other.direction.det(line.point - other.point);
        if denom.abs() <= EPS {
            // parallel lines
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction.dot(opt - line.point).clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Closest point to `opt` (or furthest along `opt` with `direction_opt`)
/// satisfying all lines. On failure returns the index of the first line
/// that could not be satisfied and the partial result.
fn program_2d(lines: &[Line], radius: f64, opt: Vec2, direction_opt: bool) -> Result<Vec2, (usize, Vec2)> {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].violation(result) > 0.0 {
            match program_1d(lines, i, radius, opt, direction_opt) {
                Some(v) => result = v,
                None => return Err((i, result)),
            }
        }
    }
    Ok(result)
}

/// Minimizes the maximum violation of lines `hard..` while keeping
/// lines `..hard` satisfied, starting from the partial result of the failed
/// 2D program.
fn program_3d(lines: &[Line], hard: usize, begin: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if lines[i].violation(result) <= distance {
            continue;
        }
        let mut projected: Vec<Line> = lines[..hard].to_vec();
        for j in hard..i {
            let det = lines[i].direction.det(lines[j].direction);
            let point = if det.abs() <= EPS {
                if lines[i].direction.dot(lines[j].direction) > 0.0 {
                    // same direction
                    continue;
                }
                (lines[i].point + lines[j].point) * 0.5
            } else {
                lines[i].point
                    + lines[i].direction
                        * (lines[j].direction.det(lines[i].point - lines[j].point) / det)
            };
            let direction = (lines[j].direction - lines[i].direction).normalized();
            projected.push(Line { point, direction });
        }
        let previous = result;
        let towards = Vec2::new(-lines[i].direction.y, lines[i].direction.x);
        result = match program_2d(&projected, radius, towards, true) {
            Ok(v) => v,
            // Only reachable through round-off; keep the previous value.
            Err(_) => previous,
        };
        distance = lines[i].violation(result);
    }
    result
}

/// Velocity within `max_speed` of the preferred one satisfying every line,
/// or, when no such velocity exists, the one minimizing the largest violation
/// of the soft lines (`hard..`) while honoring the hard ones (`..hard`).
/// If the hard lines alone are infeasible all lines are treated as soft.
pub(crate) fn solve(lines: &[Line], hard: usize, preferred: Vec2, max_speed: f64) -> Vec2 {
    match program_2d(lines, max_speed, preferred, false) {
        Ok(v) => v,
        Err((failed, partial)) if failed >= hard => program_3d(lines, hard, failed, max_speed, partial),
        Err((failed, partial)) => program_3d(lines, 0, failed, max_speed, partial),
    }
}
