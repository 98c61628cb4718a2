use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unav_core::{construct_path, GridMap, Point};

pub const R: f64 = 0.49;

fn point_segment(p: Point, a: Point, b: Point) -> f64 {
    let d = b - a;
    let t = if d.norm_sq() == 0.0 { 0.0 } else { ((p - a).dot(d) / d.norm_sq()).clamp(0.0, 1.0) };
    p.dist(a + d * t)
}

fn point_box(p: Point, lo: Point, hi: Point) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    dx.hypot(dy)
}

/// Does segment ab come within `r` of the unit box at (c, row)? Checked as a
/// dense sample along the segment plus the corner distances, which is exact
/// enough at the tolerances used here.
fn segment_hits_box(a: Point, b: Point, c: i64, row: i64, r: f64) -> bool {
    let lo = Point::new(c as f64, row as f64);
    let hi = Point::new(c as f64 + 1.0, row as f64 + 1.0);
    let corners = [lo, hi, Point::new(lo.x, hi.y), Point::new(hi.x, lo.y)];
    if corners.iter().any(|&q| point_segment(q, a, b) < r) {
        return true;
    }
    let steps = (a.dist(b) * 200.0).ceil() as usize + 1;
    (0..=steps).any(|i| {
        let t = i as f64 / steps as f64;
        point_box(a + (b - a) * t, lo, hi) < r
    })
}

pub fn visible(map: &GridMap, a: Point, b: Point) -> bool {
    let (w, h) = (map.width() as f64, map.height() as f64);
    for p in [a, b] {
        if p.x < R || p.y < R || w - p.x < R || h - p.y < R {
            return false;
        }
    }
    map.blocked_cells().into_iter().all(|(c, row)| !segment_hits_box(a, b, c as i64, row as i64, R))
}

/// Dijkstra over the complete visibility graph of free cell centers.
pub fn visibility_shortest(map: &GridMap, start: Point, goal: Point) -> Option<f64> {
    let nodes: Vec<Point> = map.free_cells().map(|c| map.center(c)).collect();
    let s = nodes.iter().position(|&p| p == start)?;
    let t = nodes.iter().position(|&p| p == goal)?;
    let n = nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&i| !done[i]).min_by(|&i, &j| dist[i].total_cmp(&dist[j]))?;
        if dist[u].is_infinite() {
            break;
        }
        done[u] = true;
        for v in 0..n {
            if !done[v] && visible(map, nodes[u], nodes[v]) {
                dist[v] = dist[v].min(dist[u] + nodes[u].dist(nodes[v]));
            }
        }
    }
    dist[t].is_finite().then_some(dist[t])
}

/// Runs both planners on `maps` random 8x8 maps (20% blocked, random
/// connected start and goal). Returns the worst length ratio, or the first
/// map where Theta* is more than 1% longer or its path clips an obstacle.
pub fn check(seed: u64, maps: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    let mut worst: f64 = 1.0;
    while done < maps {
        let blocked: Vec<(usize, usize)> =
            (0..8).flat_map(|r| (0..8).map(move |c| (c, r))).filter(|_| rng.gen_bool(0.2)).collect();
        let map = GridMap::new(8, 8, blocked);
        let free: Vec<_> = map.free_cells().collect();
        if free.len() < 2 {
            continue;
        }
        let a = free[rng.gen_range(0..free.len())];
        let b = free[rng.gen_range(0..free.len())];
        let (start, goal) = (map.center(a), map.center(b));
        let Some(best) = visibility_shortest(&map, start, goal) else {
            if construct_path(&map, start, goal, R).is_some() {
                return Err(format!("map {done}: path found between disconnected cells"));
            }
            continue;
        };
        if a == b {
            continue;
        }
        let Some(path) = construct_path(&map, start, goal, R) else {
            return Err(format!("map {done}: no path between connected cells"));
        };
        if let Some(w) = path.waypoints.windows(2).find(|w| !visible(&map, w[0], w[1])) {
            return Err(format!("map {done}: segment {:?} -> {:?} clips an obstacle", w[0], w[1]));
        }
        let ratio = path.length() / best;
        if !(1.0 - 1e-9..=1.01).contains(&ratio) {
            return Err(format!("map {done}: theta* {} vs optimum {best}", path.length()));
        }
        worst = worst.max(ratio);
        done += 1;
    }
    Ok(worst)
}
