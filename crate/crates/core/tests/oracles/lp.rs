use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unav_core::avoidance::{solve_halfplanes, HalfPlane};
use unav_core::Vec2;

const FEAS_TOL: f64 = 1e-9;

fn feasible(planes: &[HalfPlane], max_speed: f64, v: Vec2) -> bool {
    v.norm() <= max_speed + FEAS_TOL && planes.iter().all(|h| h.margin(v) >= -FEAS_TOL)
}

/// Closest point to `pref` in the intersection, by enumerating every point
/// where the optimum can sit: `pref` itself, its projections onto each line
/// and onto the circle, line/line and line/circle intersections.
pub fn brute_force(planes: &[HalfPlane], pref: Vec2, max_speed: f64) -> Vec2 {
    let mut candidates = vec![pref];
    if pref.norm() > 0.0 {
        candidates.push(pref.normalized() * max_speed);
    }
    for h in planes {
        let d = Vec2::new(h.normal.y, -h.normal.x);
        candidates.push(h.point + d * (pref - h.point).dot(d));
        // line/circle: |point + t d| = max_speed
        let b = h.point.dot(d);
        let disc = b * b - (h.point.norm_sq() - max_speed * max_speed);
        if disc >= 0.0 {
            candidates.push(h.point + d * (-b + disc.sqrt()));
            candidates.push(h.point + d * (-b - disc.sqrt()));
        }
    }
    for (i, a) in planes.iter().enumerate() {
        for b in &planes[i + 1..] {
            let det = a.normal.det(b.normal);
            if det.abs() < 1e-12 {
                continue;
            }
            // a.normal . v = a.normal . a.point, same for b
            let ca = a.normal.dot(a.point);
            let cb = b.normal.dot(b.point);
            let x = (ca * b.normal.y - cb * a.normal.y) / det;
            let y = (a.normal.x * cb - b.normal.x * ca) / det;
            candidates.push(Vec2::new(x, y));
        }
    }
    candidates
        .into_iter()
        .filter(|&v| feasible(planes, max_speed, v))
        .min_by(|a, b| a.dist(pref).total_cmp(&b.dist(pref)))
        .expect("constraint set is feasible by construction")
}

/// Random half-planes that all admit `anchor`, which lies inside the disk.
pub fn random_feasible_set(rng: &mut ChaCha8Rng, max_speed: f64) -> (Vec<HalfPlane>, Vec2) {
    let r = max_speed * rng.gen_range(0.0..0.9);
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    let anchor = Vec2::new(r * a.cos(), r * a.sin());
    let count = rng.gen_range(1..=8);
    let planes = (0..count)
        .map(|_| {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let normal = Vec2::new(t.cos(), t.sin());
            let slack = rng.gen_range(0.0..max_speed * 0.5);
            HalfPlane::new(anchor - normal * slack, normal)
        })
        .collect();
    (planes, anchor)
}

/// Compares the solver with the enumeration on `cases` random feasible
/// sets; returns the largest deviation, or a description of the first case
/// off by more than 1e-6.
pub fn check(seed: u64, cases: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_speed = 0.1;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (planes, _) = random_feasible_set(&mut rng, max_speed);
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let m = max_speed * rng.gen_range(0.0..1.5);
        let pref = Vec2::new(m * a.cos(), m * a.sin());
        let got = solve_halfplanes(&planes, planes.len(), pref, max_speed);
        let want = brute_force(&planes, pref, max_speed);
        let err = got.dist(want);
        if err > 1e-6 {
            return Err(format!("case {case}: lp {got:?} vs oracle {want:?} ({err:e})"));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}
