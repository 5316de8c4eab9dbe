//! Independent reference implementations used by the integration tests.

use std::cmp::Ordering;

use atm_core::navigation::OccupancyGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact comparison of `a + b·√2` against `c + d·√2` in integer arithmetic.
pub fn cmp_octile(a: (u32, u32), b: (u32, u32)) -> Ordering {
    let ds = a.0 as i64 - b.0 as i64;
    let dd = b.1 as i64 - a.1 as i64;
    // Compare ds with dd·√2.
    match (ds.signum(), dd.signum()) {
        (0, 0) => Ordering::Equal,
        (s, d) if s >= 0 && d <= 0 => Ordering::Greater,
        (s, d) if s <= 0 && d >= 0 => Ordering::Less,
        (s, _) => {
            // Same sign: compare squares, flipping for negatives.
            let mag = (ds * ds).cmp(&(2 * dd * dd));
            if s > 0 {
                mag
            } else {
                mag.reverse()
            }
        }
    }
}

/// Brute-force Dijkstra over the same 8-connected move set: a diagonal needs
/// both side cells free. Returns the exact cost as (straight, diagonal) counts.
pub fn dijkstra(grid: &OccupancyGrid, start: usize, goal: usize) -> Option<(u32, u32)> {
    let n = grid.width * grid.height;
    let mut dist: Vec<Option<(u32, u32)>> = vec![None; n];
    let mut done = vec![false; n];
    dist[start] = Some((0, 0));
    loop {
        // Linear scan for the cheapest open cell: slow but obviously right.
        let mut best: Option<usize> = None;
        for i in 0..n {
            if done[i] || dist[i].is_none() {
                continue;
            }
            if best.is_none_or(|b| cmp_octile(dist[i].unwrap(), dist[b].unwrap()) == Ordering::Less) {
                best = Some(i);
            }
        }
        let u = best?;
        if u == goal {
            return dist[u];
        }
        done[u] = true;
        let (ux, uy) = (u % grid.width, u / grid.width);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (vx, vy) = (ux as i64 + dx, uy as i64 + dy);
                if vx < 0 || vy < 0 || vx >= grid.width as i64 || vy >= grid.height as i64 {
                    continue;
                }
                let v = vy as usize * grid.width + vx as usize;
                if grid.is_occupied(v) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal
                    && (grid.is_occupied(uy * grid.width + vx as usize)
                        || grid.is_occupied(vy as usize * grid.width + ux))
                {
                    continue;
                }
                let (s, d) = dist[u].unwrap();
                let cand = if diagonal { (s, d + 1) } else { (s + 1, d) };
                if dist[v].is_none_or(|old| cmp_octile(cand, old) == Ordering::Less) {
                    dist[v] = Some(cand);
                }
            }
        }
    }
}

/// A seeded random 20×20 grid at 0.05 m cells with two distinct free cells.
pub fn random_grid(seed: u64) -> (OccupancyGrid, usize, usize) {
    use atm_core::navigation::Bounds;
    use atm_core::Vec2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = OccupancyGrid::empty(Bounds::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)), 0.05).unwrap();
    let density = rng.random_range(0.1..0.4);
    for i in 0..grid.len() {
        grid.set_occupied(i, rng.random_bool(density));
    }
    // A wall with a single gap on some grids, to force detours.
    if seed % 3 == 0 {
        let row = rng.random_range(5..15);
        let gap = rng.random_range(0..20);
        for ix in 0..20 {
            let i = grid.index(ix, row);
            grid.set_occupied(i, ix != gap);
        }
    }
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !grid.is_occupied(i)).collect();
    let start = free[rng.random_range(0..free.len())];
    let mut goal = free[rng.random_range(0..free.len())];
    while goal == start {
        goal = free[rng.random_range(0..free.len())];
    }
    (grid, start, goal)
}
