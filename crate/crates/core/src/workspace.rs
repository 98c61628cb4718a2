//! Grid workspace: MovingAI map loading, free-space predicates for
//! disk-shaped agents, and obstacle boundary extraction.
//!
//! Cell `(c, r)` covers the closed square `[c, c+1] x [r, r+1]`; rows follow
//! the order of the map file. Everything outside the map rectangle counts as
//! obstacle.

use std::collections::BTreeSet;

use crate::error::MapError;
use crate::geometry::{point_rect_distance, segment_rect_distance, Point, Rect, Segment};

/// Integer cell coordinates `(col, row)`.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

impl GridMap {
    /// Builds a map from explicit blocked cells. Panics if a cell lies outside
    /// the rectangle or a dimension is zero.
    pub fn new(width: usize, height: usize, blocked: impl IntoIterator<Item = Cell>) -> Self {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        let mut cells = vec![false; width * height];
        for (c, r) in blocked {
            assert!(c < width && r < height, "blocked cell ({c},{r}) outside map");
            cells[r * width + c] = true;
        }
        GridMap { width, height, blocked: cells }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, std::iter::empty())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, (c, r): Cell) -> usize {
        r * self.width + c
    }

    pub fn cell_of_index(&self, idx: usize) -> Cell {
        (idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, c: i64, r: i64) -> bool {
        c >= 0 && r >= 0 && (c as usize) < self.width && (r as usize) < self.height
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.blocked[self.index(cell)]
    }

    /// Blocked test tolerant of out-of-range coordinates (outside = blocked).
    pub fn is_blocked_at(&self, c: i64, r: i64) -> bool {
        !self.in_bounds(c, r) || self.blocked[r as usize * self.width + c as usize]
    }

    pub fn blocked_cells(&self) -> BTreeSet<Cell> {
        (0..self.cell_count())
            .filter(|&i| self.blocked[i])
            .map(|i| self.cell_of_index(i))
            .collect()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count())
            .filter(|&i| !self.blocked[i])
            .map(|i| self.cell_of_index(i))
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    pub fn center(&self, (c, r): Cell) -> Point {
        Point::new(c as f64 + 0.5, r as f64 + 0.5)
    }

    /// Cell containing `p`, clamping points on the far map edges inward.
    /// `None` outside the map rectangle.
    pub fn cell_at(&self, p: Point) -> Option<Cell> {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64) {
            return None;
        }
        let c = (p.x.floor() as usize).min(self.width - 1);
        let r = (p.y.floor() as usize).min(self.height - 1);
        Some((c, r))
    }

    fn cell_rect(c: i64, r: i64) -> Rect {
        Rect::new(Point::new(c as f64, r as f64), Point::new(c as f64 + 1.0, r as f64 + 1.0))
    }

    fn boundary_distance(&self, p: Point) -> f64 {
        p.x.min(p.y)
            .min(self.width as f64 - p.x)
            .min(self.height as f64 - p.y)
    }

    /// Closed disk of radius `r` at `p` lies inside the free space.
    pub fn disk_in_free_space(&self, p: Point, r: f64) -> bool {
        debug_assert!(r > 0.0 && p.is_finite());
        if self.boundary_distance(p) < r {
            return false;
        }
        let (c0, c1) = ((p.x - r).floor() as i64, (p.x + r).floor() as i64);
        let (r0, r1) = ((p.y - r).floor() as i64, (p.y + r).floor() as i64);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if self.in_bounds(col, row)
                    && self.is_blocked_at(col, row)
                    && point_rect_distance(p, &Self::cell_rect(col, row)) < r
                {
                    return false;
                }
            }
        }
        true
    }

    /// Distance from `p` to the nearest obstacle (blocked cell or map
    /// boundary), saturated at `limit`. Zero inside obstacles.
    pub fn clearance(&self, p: Point, limit: f64) -> f64 {
        let mut best = self.boundary_distance(p).max(0.0).min(limit);
        let (c0, c1) = ((p.x - best).floor() as i64, (p.x + best).floor() as i64);
        let (r0, r1) = ((p.y - best).floor() as i64, (p.y + best).floor() as i64);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if self.in_bounds(col, row) && self.is_blocked_at(col, row) {
                    best = best.min(point_rect_distance(p, &Self::cell_rect(col, row)));
                }
            }
        }
        best
    }

    /// The capsule of radius `r` swept from `a` to `b` avoids every blocked
    /// cell and stays inside the map rectangle.
    pub fn segment_traversable(&self, a: Point, b: Point, r: f64) -> bool {
        debug_assert!(r >= 0.0);
        // Extremal capsule coordinates sit at the endpoints.
        if self.boundary_distance(a) < r || self.boundary_distance(b) < r {
            return false;
        }
        let y_lo = a.y.min(b.y) - r;
        let y_hi = a.y.max(b.y) + r;
        let d = b - a;
        for row in (y_lo.floor() as i64)..=(y_hi.floor() as i64) {
            if row < 0 || row as usize >= self.height {
                continue;
            }
            // x-extent of the part of the segment within reach of this row.
            let band_lo = row as f64 - r;
            let band_hi = row as f64 + 1.0 + r;
            let (t0, t1) = if d.y == 0.0 {
                if a.y < band_lo || a.y > band_hi {
                    continue;
                }
                (0.0, 1.0)
            } else {
                let ta = (band_lo - a.y) / d.y;
                let tb = (band_hi - a.y) / d.y;
                let (lo, hi) = (ta.min(tb).max(0.0), ta.max(tb).min(1.0));
                if lo > hi {
                    continue;
                }
                (lo, hi)
            };
            let xa = a.x + d.x * t0;
            let xb = a.x + d.x * t1;
            let col_lo = (xa.min(xb) - r).floor() as i64;
            let col_hi = (xa.max(xb) + r).floor() as i64;
            for col in col_lo.max(0)..=col_hi.min(self.width as i64 - 1) {
                if self.is_blocked_at(col, row) {
                    let dist = segment_rect_distance(a, b, &Self::cell_rect(col, row));
                    // zero-radius capsules fail only on contact
                    if dist < r || (r == 0.0 && dist == 0.0) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Boundary between free cells and obstacles (blocked cells or the area
    /// outside the map), merged into maximal collinear pieces. Each segment
    /// keeps free space on its left.
    pub fn extract_obstacle_segments(&self) -> Vec<Segment> {
        let (w, h) = (self.width as i64, self.height as i64);
        let free = |c: i64, r: i64| !self.is_blocked_at(c, r);
        let mut out = Vec::new();

        // Horizontal edges on the line y = row, between (c, row-1) and (c, row).
        for row in 0..=h {
            let mut run: Option<(i64, bool)> = None; // (start col, free below)
            for col in 0..=w {
                let side = if col < w {
                    let above = free(col, row - 1);
                    let below = free(col, row);
                    (above != below).then_some(below)
                } else {
                    None
                };
                match (run, side) {
                    (Some((_, s)), Some(t)) if s == t => {}
                    _ => {
                        if let Some((start, below)) = run.take() {
                            let (x0, x1, y) = (start as f64, col as f64, row as f64);
                            out.push(if below {
                                Segment::new(Point::new(x0, y), Point::new(x1, y))
                            } else {
                                Segment::new(Point::new(x1, y), Point::new(x0, y))
                            });
                        }
                        run = side.map(|s| (col, s));
                    }
                }
            }
        }

        // Vertical edges on the line x = col, between (col-1, r) and (col, r).
        for col in 0..=w {
            let mut run: Option<(i64, bool)> = None; // (start row, free on the left)
            for row in 0..=h {
                let side = if row < h {
                    let left = free(col - 1, row);
                    let right = free(col, row);
                    (left != right).then_some(left)
                } else {
                    None
                };
                match (run, side) {
                    (Some((_, s)), Some(t)) if s == t => {}
                    _ => {
                        if let Some((start, left)) = run.take() {
                            let (y0, y1, x) = (start as f64, row as f64, col as f64);
                            out.push(if left {
                                Segment::new(Point::new(x, y0), Point::new(x, y1))
                            } else {
                                Segment::new(Point::new(x, y1), Point::new(x, y0))
                            });
                        }
                        run = side.map(|s| (row, s));
                    }
                }
            }
        }
        out
    }
}

/// Parses the MovingAI `.map` format.
pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines().enumerate();
    let mut height = None;
    let mut width = None;
    let mut saw_type = false;
    loop {
        let Some((no, raw)) = lines.next() else {
            return Err(MapError::Header { line: 0, reason: "missing `map` line".into() });
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let header = |reason: &str| MapError::Header { line: no + 1, reason: reason.to_string() };
        match key {
            "type" => saw_type = true,
            "height" | "width" => {
                let value: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .filter(|&v| v > 0)
                    .ok_or_else(|| header(&format!("`{key}` needs a positive integer")))?;
                if key == "height" {
                    height = Some(value);
                } else {
                    width = Some(value);
                }
            }
            "map" => break,
            other => return Err(header(&format!("unexpected header entry `{other}`"))),
        }
    }
    let missing = |what: &str| MapError::Header { line: 0, reason: format!("missing `{what}`") };
    if !saw_type {
        return Err(missing("type"));
    }
    let height = height.ok_or_else(|| missing("height"))?;
    let width = width.ok_or_else(|| missing("width"))?;

    let rows: Vec<&str> = lines
        .map(|(_, l)| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .collect();
    if rows.len() != height {
        return Err(MapError::RowCount { expected: height, found: rows.len() });
    }
    let mut blocked = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let chars: Vec<char> = row.chars().collect();
        if chars.len() != width {
            return Err(MapError::RowLength { row: r, expected: width, found: chars.len() });
        }
        for (c, ch) in chars.into_iter().enumerate() {
            match ch {
                '.' | 'G' => {}
                '@' | 'O' | 'T' | 'W' => blocked.push((c, r)),
                _ => return Err(MapError::UnknownCell { row: r, col: c, ch }),
            }
        }
    }
    Ok(GridMap::new(width, height, blocked))
}

/// Renders a map back to MovingAI text.
pub fn write_map(map: &GridMap) -> String {
    let mut s = format!("type octile\nheight {}\nwidth {}\nmap\n", map.height, map.width);
    for r in 0..map.height {
        for c in 0..map.width {
            s.push(if map.is_blocked((c, r)) { '@' } else { '.' });
        }
        s.push('\n');
    }
    s
}
