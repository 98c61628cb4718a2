//! Reference paths and path-length queries.
//!
//! [`construct_path`] runs Theta* over cell centers with capsule
//! line-of-sight checks. Path-length queries used for goal selection go
//! through per-goal [`DistanceField`]s (8-connected Dijkstra), so every agent
//! asking the same question gets the same answer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, OnceLock};

use crate::geometry::Point;
use crate::workspace::{Cell, GridMap};

/// 8-neighborhood offsets: orthogonal first, then diagonal.
const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Point>,
}

impl Path {
    pub fn new(waypoints: Vec<Point>) -> Self {
        assert!(!waypoints.is_empty(), "path needs at least one waypoint");
        Path { waypoints }
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn start(&self) -> Point {
        self.waypoints[0]
    }

    pub fn end(&self) -> Point {
        *self.waypoints.last().unwrap()
    }
}

/// Cells usable by an agent of radius `r`: free, with the center at least
/// `r` away from every obstacle.
fn passable_cells(map: &GridMap, r: f64) -> Vec<bool> {
    (0..map.cell_count())
        .map(|i| {
            let cell = map.cell_of_index(i);
            !map.is_blocked(cell) && (r <= 0.5 || map.clearance(map.center(cell), r) >= r)
        })
        .collect()
}

/// Valid 8-connected moves out of `cell`; diagonals need both orthogonal
/// neighbors passable.
fn moves<'a>(
    map: &'a GridMap,
    passable: &'a [bool],
    (c, r): Cell,
) -> impl Iterator<Item = (usize, f64)> + 'a {
    let ok = move |c: i64, r: i64| map.in_bounds(c, r) && passable[r as usize * map.width() + c as usize];
    NEIGHBORS.iter().filter_map(move |&(dc, dr)| {
        let (nc, nr) = (c as i64 + dc, r as i64 + dr);
        if !ok(nc, nr) {
            return None;
        }
        if dc != 0 && dr != 0 && !(ok(c as i64 + dc, r as i64) && ok(c as i64, r as i64 + dr)) {
            return None;
        }
        let cost = if dc != 0 && dr != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
        Some((nr as usize * map.width() + nc as usize, cost))
    })
}

#[derive(Debug, Clone, Copy)]
struct DistEntry {
    dist: f64,
    idx: usize,
}

impl PartialEq for DistEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for DistEntry {}
impl PartialOrd for DistEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for DistEntry {
    // max-heap: smaller distance, then smaller index, pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Shortest 8-connected distances from a goal cell to every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    goal: Point,
    width: usize,
    height: usize,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn goal(&self) -> Point {
        self.goal
    }

    /// Distance of a cell's center from the goal cell; infinite when blocked
    /// or disconnected.
    pub fn cell_distance(&self, (c, r): Cell) -> f64 {
        self.dist[r * self.width + c]
    }

    /// Field value of `p`'s cell plus the offset from `p` to the cell center.
    pub fn path_len(&self, p: Point) -> f64 {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64) {
            return f64::INFINITY;
        }
        let c = (p.x.floor() as usize).min(self.width - 1);
        let r = (p.y.floor() as usize).min(self.height - 1);
        let d = self.dist[r * self.width + c];
        if d.is_finite() {
            d + p.dist(Point::new(c as f64 + 0.5, r as f64 + 0.5))
        } else {
            f64::INFINITY
        }
    }
}

pub fn build_distance_field(map: &GridMap, goal: Point, r: f64) -> DistanceField {
    let passable = passable_cells(map, r);
    let mut dist = vec![f64::INFINITY; map.cell_count()];
    let mut heap = BinaryHeap::new();
    if let Some(cell) = map.cell_at(goal) {
        let idx = map.index(cell);
        if passable[idx] {
            dist[idx] = 0.0;
            heap.push(DistEntry { dist: 0.0, idx });
        }
    }
    while let Some(DistEntry { dist: d, idx }) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        for (next, cost) in moves(map, &passable, map.cell_of_index(idx)) {
            let nd = d + cost;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(DistEntry { dist: nd, idx: next });
            }
        }
    }
    DistanceField { goal, width: map.width(), height: map.height(), dist }
}

pub fn path_len(field: &DistanceField, p: Point) -> f64 {
    field.path_len(p)
}

/// Lazily built distance fields, one per goal, shared by every agent of a
/// run.
#[derive(Debug)]
pub struct FieldCache {
    map: Arc<GridMap>,
    goals: Vec<Point>,
    radius: f64,
    fields: Vec<OnceLock<DistanceField>>,
}

impl FieldCache {
    pub fn new(map: Arc<GridMap>, goals: Vec<Point>, radius: f64) -> Self {
        let fields = goals.iter().map(|_| OnceLock::new()).collect();
        FieldCache { map, goals, radius, fields }
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn goals(&self) -> &[Point] {
        &self.goals
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn field(&self, goal: usize) -> &DistanceField {
        self.fields[goal].get_or_init(|| build_distance_field(&self.map, self.goals[goal], self.radius))
    }

    pub fn path_len(&self, goal: usize, p: Point) -> f64 {
        self.field(goal).path_len(p)
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    g: f64,
    idx: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // smaller f first; ties prefer larger g, then smaller index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Any-angle path from `start` to `goal` for a disk of radius `r` (Theta*).
///
/// Nodes are cell centers, except that the start and goal nodes sit at the
/// query points. Segments leaving the start are checked at
/// `min(r, clearance(start))` so that agents nudged towards a wall can still
/// replan; the start's own cell is always reachable from it. Returns `None`
/// when the goal cell is not connected to the start cell.
pub fn construct_path(map: &GridMap, start: Point, goal: Point, r: f64) -> Option<Path> {
    let start_cell = map.cell_at(start)?;
    let goal_cell = map.cell_at(goal)?;
    let passable = passable_cells(map, r);
    if !passable[map.index(start_cell)] || !passable[map.index(goal_cell)] {
        return None;
    }
    let n = map.cell_count();
    let virtual_start = n;
    let goal_idx = map.index(goal_cell);
    let start_radius = r.min(map.clearance(start, r));

    let point = |idx: usize| -> Point {
        if idx == virtual_start {
            start
        } else if idx == goal_idx {
            goal
        } else {
            map.center(map.cell_of_index(idx))
        }
    };
    let line_of_sight = |a: usize, b: usize| -> bool {
        let radius = if a == virtual_start || b == virtual_start { start_radius } else { r };
        map.segment_traversable(point(a), point(b), radius)
    };
    let h = |idx: usize| point(idx).dist(goal);

    let mut g = vec![f64::INFINITY; n + 1];
    let mut parent = vec![usize::MAX; n + 1];
    let mut closed = vec![false; n + 1];
    let mut open = BinaryHeap::new();
    g[virtual_start] = 0.0;
    parent[virtual_start] = virtual_start;
    open.push(OpenEntry { f: h(virtual_start), g: 0.0, idx: virtual_start });

    let start_idx = map.index(start_cell);
    while let Some(OpenEntry { g: gs, idx: s, .. }) = open.pop() {
        if closed[s] || gs > g[s] {
            continue;
        }
        if s == goal_idx {
            let mut pts = vec![point(s)];
            let mut cur = s;
            while cur != virtual_start {
                cur = parent[cur];
                pts.push(point(cur));
            }
            pts.reverse();
            pts.dedup();
            if pts.len() == 1 {
                pts.push(pts[0]);
            }
            return Some(Path::new(pts));
        }
        closed[s] = true;

        let successors: Vec<(usize, bool)> = if s == virtual_start {
            std::iter::once((start_idx, true))
                .chain(moves(map, &passable, start_cell).map(|(i, _)| (i, false)))
                .collect()
        } else {
            moves(map, &passable, map.cell_of_index(s)).map(|(i, _)| (i, false)).collect()
        };
        for (next, forced) in successors {
            if closed[next] {
                continue;
            }
            let ps = parent[s];
            let mut best = if ps != s && line_of_sight(ps, next) {
                Some((g[ps] + point(ps).dist(point(next)), ps))
            } else if forced || line_of_sight(s, next) {
                Some((g[s] + point(s).dist(point(next)), s))
            } else {
                None
            };
            // Parents of already reached neighbors are tried too; plain
            // Theta* misses bends that only a sibling branch can see.
            for (nb, _) in moves(map, &passable, map.cell_of_index(next)) {
                let pn = parent[nb];
                if pn == usize::MAX || pn == ps || pn == next {
                    continue;
                }
                let cand = g[pn] + point(pn).dist(point(next));
                if best.is_none_or(|(b, _)| cand < b) && line_of_sight(pn, next) {
                    best = Some((cand, pn));
                }
            }
            let Some((cand, par)) = best else { continue };
            if cand < g[next] {
                g[next] = cand;
                parent[next] = par;
                open.push(OpenEntry { f: cand + h(next), g: cand, idx: next });
            }
        }
    }
    None
}
