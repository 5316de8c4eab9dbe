//! Occupancy grids, an 8-connected A* planner and a holonomic pure-pursuit
//! follower. The same stack drives the real robot and the simulated people.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{polyline_length, Pose2, Shape, Vec2};

pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_LOOKAHEAD: f64 = 0.3;
/// Start and goal are moved to the nearest free cell within this distance.
pub const SNAP_RADIUS: f64 = 0.3;
/// The follower stops once this close to the final waypoint.
pub const ARRIVAL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NavError {
    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),
    #[error("resolution must be > 0, got {0}")]
    BadResolution(f64),
    #[error("start ({x:.3}, {y:.3}) lies outside the grid")]
    StartOutOfBounds { x: f64, y: f64 },
    #[error("empty path")]
    EmptyPath,
    #[error("speed must be > 0, got {0}")]
    BadSpeed(f64),
}

/// Axis-aligned planning area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    /// A `width` × `depth` room centred on the origin.
    pub fn centered(width: f64, depth: f64) -> Self {
        Self::new(Vec2::new(-width / 2.0, -depth / 2.0), Vec2::new(width / 2.0, depth / 2.0))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from an interior point to the nearest side.
    pub fn clearance(&self, p: Vec2) -> f64 {
        (p.x - self.min.x)
            .min(self.max.x - p.x)
            .min(p.y - self.min.y)
            .min(self.max.y - p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub resolution: f64,
    pub margin: f64,
    /// Treat the bounds as walls and inflate them like any obstacle.
    pub walls: bool,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            margin: DEFAULT_MARGIN,
            walls: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cell {
    pub ix: usize,
    pub iy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    /// World position of the lower-left corner of cell (0, 0).
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(bounds: Bounds, resolution: f64) -> Result<Self, NavError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(NavError::BadResolution(resolution));
        }
        let span = bounds.max - bounds.min;
        if !(span.x > 0.0 && span.y > 0.0 && span.x.is_finite() && span.y.is_finite()) {
            return Err(NavError::DegenerateBounds(format!("{bounds:?}")));
        }
        let width = (span.x / resolution - 1e-9).ceil().max(1.0) as usize;
        let height = (span.y / resolution - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            origin: bounds.min,
            resolution,
            width,
            height,
            occupied: vec![false; width * height],
        })
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn center_of(&self, index: usize) -> Vec2 {
        let (ix, iy) = self.coords(index);
        self.center(ix, iy)
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<usize> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some(self.index(fx as usize, fy as usize))
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.occupied[index]
    }

    pub fn set_occupied(&mut self, index: usize, value: bool) {
        self.occupied[index] = value;
    }

    /// True when `p` is inside the grid and its cell is free.
    pub fn is_free_at(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some_and(|i| !self.occupied[i])
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.occupied
    }

    /// Marks every cell whose centre is within `inflation` of the footprint.
    pub fn rasterize(&mut self, pose: &Pose2, shape: &Shape, inflation: f64) {
        let reach = shape.bounding_radius() + inflation;
        let c = pose.position();
        let lo_x = ((c.x - reach - self.origin.x) / self.resolution).floor().max(0.0) as usize;
        let lo_y = ((c.y - reach - self.origin.y) / self.resolution).floor().max(0.0) as usize;
        let hi_x = ((c.x + reach - self.origin.x) / self.resolution).ceil();
        let hi_y = ((c.y + reach - self.origin.y) / self.resolution).ceil();
        if hi_x < 0.0 || hi_y < 0.0 {
            return;
        }
        let hi_x = (hi_x as usize).min(self.width);
        let hi_y = (hi_y as usize).min(self.height);
        for iy in lo_y..hi_y {
            for ix in lo_x..hi_x {
                if shape.distance_to_point(pose, self.center(ix, iy)) <= inflation {
                    let i = self.index(ix, iy);
                    self.occupied[i] = true;
                }
            }
        }
    }

    fn rasterize_walls(&mut self, bounds: &Bounds, inflation: f64) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                if bounds.clearance(self.center(ix, iy)) <= inflation {
                    let i = self.index(ix, iy);
                    self.occupied[i] = true;
                }
            }
        }
    }

    /// True when every cell the segment passes through is free. Exact grid
    /// traversal; passing through a cell corner counts both side cells.
    pub fn segment_free(&self, a: Vec2, b: Vec2) -> bool {
        let (Some(first), Some(last)) = (self.cell_of(a), self.cell_of(b)) else {
            return false;
        };
        if self.occupied[first] || self.occupied[last] {
            return false;
        }
        let ga = (a - self.origin) * (1.0 / self.resolution);
        let gb = (b - self.origin) * (1.0 / self.resolution);
        let d = gb - ga;
        let (mut ix, mut iy) = self.coords(first);
        let (end_x, end_y) = self.coords(last);
        let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |g: f64, i: usize, step: i64| if step > 0 { i as f64 + 1.0 - g } else { g - i as f64 };
        let mut t_max_x = if d.x != 0.0 { next_boundary(ga.x, ix, step_x) / d.x.abs() } else { f64::INFINITY };
        let mut t_max_y = if d.y != 0.0 { next_boundary(ga.y, iy, step_y) / d.y.abs() } else { f64::INFINITY };
        let t_dx = if d.x != 0.0 { 1.0 / d.x.abs() } else { f64::INFINITY };
        let t_dy = if d.y != 0.0 { 1.0 / d.y.abs() } else { f64::INFINITY };
        let free = |x: i64, y: i64| {
            x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
                && !self.occupied[self.index(x as usize, y as usize)]
        };
        let limit = self.width + self.height + 2;
        for _ in 0..limit {
            if (ix, iy) == (end_x, end_y) || t_max_x.min(t_max_y) > 1.0 {
                return true;
            }
            let (x, y) = (ix as i64, iy as i64);
            let (nx, ny) = if (t_max_x - t_max_y).abs() < 1e-9 {
                if !free(x + step_x, y) || !free(x, y + step_y) {
                    return false;
                }
                t_max_x += t_dx;
                t_max_y += t_dy;
                (x + step_x, y + step_y)
            } else if t_max_x < t_max_y {
                t_max_x += t_dx;
                (x + step_x, y)
            } else {
                t_max_y += t_dy;
                (x, y + step_y)
            };
            if !free(nx, ny) {
                return false;
            }
            ix = nx as usize;
            iy = ny as usize;
        }
        true
    }
}

/// Grid of the given obstacles, each inflated by `mover_radius + margin`.
pub fn build_grid(
    obstacles: &[(Pose2, Shape)],
    mover_radius: f64,
    bounds: Bounds,
    params: &GridParams,
) -> Result<OccupancyGrid, NavError> {
    let mut grid = OccupancyGrid::empty(bounds, params.resolution)?;
    let inflation = mover_radius + params.margin;
    if params.walls {
        grid.rasterize_walls(&bounds, inflation);
    }
    for (pose, shape) in obstacles {
        grid.rasterize(pose, shape, inflation);
    }
    Ok(grid)
}

/// Exact grid path cost: `straight + diagonal·√2`, kept as integer counts so
/// equal costs compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GridCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl GridCost {
    pub const ZERO: GridCost = GridCost {
        straight: 0,
        diagonal: 0,
    };
    const STRAIGHT: GridCost = GridCost {
        straight: 1,
        diagonal: 0,
    };
    const DIAGONAL: GridCost = GridCost {
        straight: 0,
        diagonal: 1,
    };

    pub fn value(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2
    }

    /// Octile distance between two cells.
    pub fn octile(a: (usize, usize), b: (usize, usize)) -> GridCost {
        let dx = a.0.abs_diff(b.0) as u32;
        let dy = a.1.abs_diff(b.1) as u32;
        GridCost {
            straight: dx.max(dy) - dx.min(dy),
            diagonal: dx.min(dy),
        }
    }
}

impl std::ops::Add for GridCost {
    type Output = GridCost;
    fn add(self, o: GridCost) -> GridCost {
        GridCost {
            straight: self.straight + o.straight,
            diagonal: self.diagonal + o.diagonal,
        }
    }
}

impl Ord for GridCost {
    fn cmp(&self, other: &Self) -> Ordering {
        if self == other {
            return Ordering::Equal;
        }
        // Distinct count pairs never have equal value because √2 is irrational,
        // and the gap is far above f64 resolution at the grid sizes used here.
        self.value().total_cmp(&other.value())
    }
}

impl PartialOrd for GridCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The 8-connected moves, in a fixed order.
pub const NEIGHBOURS: [(i64, i64); 8] = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1)];

/// Neighbours of `index` reachable in one move, with the move cost. A diagonal
/// move needs both cells it squeezes between to be free too.
pub fn neighbours(grid: &OccupancyGrid, index: usize) -> impl Iterator<Item = (usize, GridCost)> + '_ {
    let (ix, iy) = grid.coords(index);
    NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
        let nx = ix as i64 + dx;
        let ny = iy as i64 + dy;
        if nx < 0 || ny < 0 || nx >= grid.width as i64 || ny >= grid.height as i64 {
            return None;
        }
        let n = grid.index(nx as usize, ny as usize);
        if grid.is_occupied(n) {
            return None;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal
            && (grid.is_occupied(grid.index(nx as usize, iy)) || grid.is_occupied(grid.index(ix, ny as usize)))
        {
            return None;
        }
        let cost = if diagonal { GridCost::DIAGONAL } else { GridCost::STRAIGHT };
        Some((n, cost))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unreachable {
    /// No free cell within the snap radius of the start.
    StartBlocked,
    /// No free cell within the snap radius of the goal.
    GoalBlocked,
    /// Both ends are free but disconnected.
    NoRoute,
}

impl std::fmt::Display for Unreachable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unreachable::StartBlocked => "start blocked",
            Unreachable::GoalBlocked => "goal blocked",
            Unreachable::NoRoute => "no route",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Pose2>,
    pub total_length: f64,
    /// Cost of the raw cell path before shortcutting.
    pub grid_cost: GridCost,
    /// Raw cell sequence from snapped start to snapped goal.
    pub cells: Vec<usize>,
}

impl Path {
    pub fn start(&self) -> Vec2 {
        self.waypoints[0].position()
    }

    pub fn end(&self) -> Vec2 {
        self.waypoints[self.waypoints.len() - 1].position()
    }

    pub fn points(&self) -> Vec<Vec2> {
        self.waypoints.iter().map(Pose2::position).collect()
    }

    /// A straight two-point path, used where no grid search is wanted.
    pub fn straight(a: Vec2, b: Vec2) -> Path {
        let waypoints = poses_along(&[a, b]);
        Path {
            total_length: polyline_length(&waypoints),
            waypoints,
            grid_cost: GridCost::ZERO,
            cells: Vec::new(),
        }
    }
}

/// Nearest free cell to `p` whose centre lies within `radius`; ties by index.
pub fn snap_to_free(grid: &OccupancyGrid, p: Vec2, radius: f64) -> Option<usize> {
    if let Some(i) = grid.cell_of(p) {
        if !grid.is_occupied(i) {
            return Some(i);
        }
    }
    let reach = (radius / grid.resolution).ceil() as i64 + 1;
    let cx = ((p.x - grid.origin.x) / grid.resolution).floor() as i64;
    let cy = ((p.y - grid.origin.y) / grid.resolution).floor() as i64;
    let mut best: Option<(f64, usize)> = None;
    for iy in (cy - reach).max(0)..=(cy + reach).min(grid.height as i64 - 1) {
        for ix in (cx - reach).max(0)..=(cx + reach).min(grid.width as i64 - 1) {
            let i = grid.index(ix as usize, iy as usize);
            if grid.is_occupied(i) {
                continue;
            }
            let d = grid.center_of(i).distance(p);
            if d <= radius && best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                best = Some((d, i));
            }
        }
    }
    best.map(|(_, i)| i)
}

#[derive(PartialEq, Eq)]
struct OpenEntry {
    f: GridCost,
    g: GridCost,
    h: GridCost,
    index: usize,
}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse so the smallest key pops first.
        (other.f, other.g, other.h, other.index).cmp(&(self.f, self.g, self.h, self.index))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* between two free cells. Returns the cell sequence and its exact cost.
pub fn astar_cells(grid: &OccupancyGrid, start: usize, goal: usize) -> Option<(Vec<usize>, GridCost)> {
    let n = grid.len();
    let goal_xy = grid.coords(goal);
    let mut g = vec![None::<GridCost>; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let h0 = GridCost::octile(grid.coords(start), goal_xy);
    g[start] = Some(GridCost::ZERO);
    open.push(OpenEntry {
        f: h0,
        g: GridCost::ZERO,
        h: h0,
        index: start,
    });
    while let Some(OpenEntry { g: gc, index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == goal {
            let mut cells = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                cells.push(cur);
            }
            cells.reverse();
            return Some((cells, gc));
        }
        for (next, step) in neighbours(grid, index) {
            if closed[next] {
                continue;
            }
            let ng = gc + step;
            if g[next].is_none_or(|old| ng < old) {
                g[next] = Some(ng);
                parent[next] = index;
                let h = GridCost::octile(grid.coords(next), goal_xy);
                open.push(OpenEntry {
                    f: ng + h,
                    g: ng,
                    h,
                    index: next,
                });
            }
        }
    }
    None
}

fn poses_along(points: &[Vec2]) -> Vec<Pose2> {
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let heading = if i + 1 < points.len() {
            (points[i + 1] - *p).angle()
        } else if i > 0 {
            (*p - points[i - 1]).angle()
        } else {
            0.0
        };
        out.push(Pose2::from_position(*p, heading));
    }
    out
}

/// Greedy line-of-sight shortcut: from each anchor, jump to the last point
/// still visible before the first blocked one.
fn shortcut(grid: &OccupancyGrid, points: &[Vec2]) -> Vec<Vec2> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut anchor = 0;
    while anchor < points.len() - 1 {
        let mut reach = anchor + 1;
        for j in anchor + 2..points.len() {
            if grid.segment_free(points[anchor], points[j]) {
                reach = j;
            } else {
                break;
            }
        }
        out.push(points[reach]);
        anchor = reach;
    }
    out
}

/// Inserts points so no segment is longer than `spacing`.
fn densify(points: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(points.len());
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        let n = ((len / spacing).ceil() as usize).max(1);
        for k in 0..n {
            out.push(w[0].lerp(w[1], k as f64 / n as f64));
        }
    }
    if let Some(last) = points.last() {
        out.push(*last);
    }
    out
}

/// Plans from `start` to `goal` on `grid`.
///
/// Each end is snapped to the nearest free cell within [`SNAP_RADIUS`]. The
/// path begins at the true start and ends at the true goal when the goal
/// cell is free, otherwise at the snapped goal cell's centre.
pub fn plan(grid: &OccupancyGrid, start: Vec2, goal: Vec2) -> Result<Result<Path, Unreachable>, NavError> {
    if grid.cell_of(start).is_none() {
        return Err(NavError::StartOutOfBounds { x: start.x, y: start.y });
    }
    let Some(s) = snap_to_free(grid, start, SNAP_RADIUS) else {
        return Ok(Err(Unreachable::StartBlocked));
    };
    let Some(g) = snap_to_free(grid, goal, SNAP_RADIUS) else {
        return Ok(Err(Unreachable::GoalBlocked));
    };
    let Some((cells, grid_cost)) = astar_cells(grid, s, g) else {
        return Ok(Err(Unreachable::NoRoute));
    };

    let mut points = Vec::with_capacity(cells.len() + 2);
    points.push(start);
    points.extend(cells.iter().map(|&c| grid.center_of(c)));
    let goal_free = grid.cell_of(goal) == Some(g);
    if goal_free {
        points.push(goal);
    }
    points.dedup_by(|a, b| a.distance(*b) < 1e-12);

    let short = shortcut(grid, &points);
    let dense = densify(&short, grid.resolution);
    let waypoints = poses_along(&dense);
    Ok(Ok(Path {
        total_length: polyline_length(&waypoints),
        waypoints,
        grid_cost,
        cells,
    }))
}

/// Holonomic pure-pursuit controller over a fixed path.
#[derive(Debug, Clone)]
pub struct Follower {
    points: Vec<Vec2>,
    /// Cumulative arc length at each point.
    arc: Vec<f64>,
    speed: f64,
    lookahead: f64,
    /// Deceleration used to slow down ahead of the goal, if any.
    braking: Option<f64>,
    /// Arc length of the last projection; never decreases.
    progress: f64,
    segment: usize,
    done: bool,
}

impl Follower {
    pub fn new(path: &Path, speed: f64, lookahead: f64) -> Result<Self, NavError> {
        Self::from_points(path.points(), speed, lookahead)
    }

    pub fn from_points(points: Vec<Vec2>, speed: f64, lookahead: f64) -> Result<Self, NavError> {
        if points.is_empty() {
            return Err(NavError::EmptyPath);
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(NavError::BadSpeed(speed));
        }
        let mut arc = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            arc.push(acc);
        }
        Ok(Self {
            points,
            arc,
            speed,
            lookahead,
            braking: None,
            progress: 0.0,
            segment: 0,
            done: false,
        })
    }

    /// Caps the command so a mover limited to `decel` can stop at the goal.
    pub fn with_braking(mut self, decel: f64) -> Self {
        self.braking = Some(decel);
        self
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn goal(&self) -> Vec2 {
        self.points[self.points.len() - 1]
    }

    fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.total_length());
        let i = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => return self.points[i],
            Err(i) => i.clamp(1, self.points.len() - 1),
        };
        let (a0, a1) = (self.arc[i - 1], self.arc[i]);
        let t = if a1 > a0 { (s - a0) / (a1 - a0) } else { 1.0 };
        self.points[i - 1].lerp(self.points[i], t)
    }

    /// Projects `p` onto the path, searching forward from the current segment
    /// over a window of roughly two lookaheads. Progress never decreases and
    /// advances by at most `max_advance` per call, so a mover that cuts a
    /// corner does not drag the carrot ahead of itself.
    fn project(&mut self, p: Vec2, max_advance: f64) {
        let window_end = self.progress + 2.0 * self.lookahead.max(0.1) + self.speed;
        let mut best = (f64::INFINITY, self.progress, self.segment);
        let mut i = self.segment;
        while i + 1 < self.points.len() && self.arc[i] <= window_end {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a.lerp(b, t);
            let d = q.distance(p);
            let s = self.arc[i] + t * (self.arc[i + 1] - self.arc[i]);
            if d < best.0 - 1e-12 && s >= self.progress {
                best = (d, s, i);
            }
            i += 1;
        }
        let s = best.1.min(self.progress + max_advance);
        while self.segment + 1 < self.points.len() - 1 && self.arc[self.segment + 1] <= s {
            self.segment += 1;
        }
        self.progress = s;
    }

    /// World-frame velocity command for the mover at `position`, or `None`
    /// once it is within [`ARRIVAL_TOLERANCE`] of the goal.
    pub fn command(&mut self, position: Vec2, dt: f64) -> Option<Vec2> {
        if self.done {
            return None;
        }
        let goal = self.goal();
        let to_goal = position.distance(goal);
        if to_goal <= ARRIVAL_TOLERANCE {
            self.done = true;
            return None;
        }
        self.project(position, self.speed * dt);
        let carrot_s = self.progress + self.lookahead;
        let (target, mut magnitude, remaining) = if carrot_s >= self.total_length() {
            (goal, self.speed.min(to_goal / dt), to_goal)
        } else {
            (self.point_at(carrot_s), self.speed, self.total_length() - self.progress)
        };
        if let Some(decel) = self.braking {
            magnitude = magnitude.min((2.0 * decel * remaining).sqrt());
        }
        let dir = (target - position).normalized()?;
        Some(dir * magnitude)
    }
}
