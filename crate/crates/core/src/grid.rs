//! Occupancy-grid environment: obstacle generation, field-of-view sensing and
//! coverage accounting.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer grid coordinate. `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn dist_sq(self, other: Cell) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Cell) -> f64 {
        (self.dist_sq(other) as f64).sqrt()
    }
}

/// Static obstacle layout plus the monotone explored mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    obstacle: Vec<bool>,
    explored: Vec<bool>,
    free_cell_count: usize,
    /// Explored free cells in reveal order; used for uniform RRT sampling.
    explored_free: Vec<u32>,
}

impl GridMap {
    /// An obstacle-free, fully unexplored map.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            obstacle: vec![false; width * height],
            explored: vec![false; width * height],
            free_cell_count: width * height,
            explored_free: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    fn cell_at(&self, idx: usize) -> Cell {
        Cell::new((idx % self.width) as i32, (idx / self.width) as i32)
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.obstacle[self.index(c)]
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.obstacle[self.index(c)]
    }

    pub fn is_explored(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.explored[self.index(c)]
    }

    pub fn is_explored_free(&self, c: Cell) -> bool {
        self.is_free(c) && self.explored[self.index(c)]
    }

    pub fn free_cell_count(&self) -> usize {
        self.free_cell_count
    }

    pub fn explored_free_count(&self) -> usize {
        self.explored_free.len()
    }

    pub fn explored_free_cell(&self, i: usize) -> Cell {
        self.cell_at(self.explored_free[i] as usize)
    }

    /// Marks an obstacle cell. Only meant for building maps and fixtures; the
    /// explored mask is left untouched.
    pub fn set_obstacle(&mut self, c: Cell) {
        assert!(self.in_bounds(c), "cell {c:?} out of bounds");
        let idx = self.index(c);
        if !self.obstacle[idx] {
            self.obstacle[idx] = true;
            self.free_cell_count -= 1;
            if self.explored[idx] {
                self.explored_free.retain(|&i| i as usize != idx);
            }
        }
    }

    pub fn fill_rect(&mut self, x0: i32, y0: i32, w: i32, h: i32) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let c = Cell::new(x, y);
                if self.in_bounds(c) {
                    self.set_obstacle(c);
                }
            }
        }
    }

    /// Marks a cell explored. Returns `true` if it was not explored before.
    pub fn mark_explored(&mut self, c: Cell) -> bool {
        let idx = self.index(c);
        if self.explored[idx] {
            return false;
        }
        self.explored[idx] = true;
        if !self.obstacle[idx] {
            self.explored_free.push(idx as u32);
        }
        true
    }

    /// Marks every cell explored.
    pub fn explore_all(&mut self) {
        for idx in 0..self.explored.len() {
            let c = self.cell_at(idx);
            self.mark_explored(c);
        }
    }

    /// Fraction of free cells that have been explored.
    pub fn coverage(&self) -> f64 {
        if self.free_cell_count == 0 {
            return 0.0;
        }
        self.explored_free.len() as f64 / self.free_cell_count as f64
    }

    /// A free cell with at least one unexplored 4-neighbour, itself explored.
    pub fn is_frontier_cell(&self, c: Cell) -> bool {
        if !self.is_explored_free(c) {
            return false;
        }
        NEIGHBOURS4
            .iter()
            .map(|&(dx, dy)| Cell::new(c.x + dx, c.y + dy))
            .any(|n| self.in_bounds(n) && !self.explored[self.index(n)])
    }

    /// Full-scan count of free cells, for auditing the cached count.
    pub fn count_free_cells(&self) -> usize {
        self.obstacle.iter().filter(|&&o| !o).count()
    }

    /// Number of free cells 4-connected to `start`.
    fn connected_free_count(&self, start: Cell) -> usize {
        let mut seen = vec![false; self.width * self.height];
        let mut queue = VecDeque::from([start]);
        seen[self.index(start)] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            for &(dx, dy) in &NEIGHBOURS4 {
                let n = Cell::new(c.x + dx, c.y + dy);
                if self.is_free(n) && !seen[self.index(n)] {
                    seen[self.index(n)] = true;
                    queue.push_back(n);
                }
            }
        }
        count
    }

    pub fn obstacle_mask(&self) -> &[bool] {
        &self.obstacle
    }

    pub fn explored_mask(&self) -> &[bool] {
        &self.explored
    }
}

const NEIGHBOURS4: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Cell,
    pub fov_radius: u32,
    pub moves_taken: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of rectangle counts.
    pub obstacle_count: (u32, u32),
    /// Inclusive range of rectangle side lengths, in cells.
    pub obstacle_size: (u32, u32),
    pub fov_radius: u32,
    pub max_generation_attempts: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            width: 250,
            height: 250,
            obstacle_count: (8, 16),
            obstacle_size: (10, 50),
            fov_radius: 25,
            max_generation_attempts: 100,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::InvalidConfig(format!("{key}: {msg}")));
        if self.width == 0 || self.height == 0 {
            return bad("env_dimensions", "must be positive");
        }
        if self.obstacle_count.0 > self.obstacle_count.1 {
            return bad("obstacle_count", "empty range");
        }
        if self.obstacle_size.0 == 0 || self.obstacle_size.0 > self.obstacle_size.1 {
            return bad("obstacle_size", "empty range or zero side");
        }
        if self.fov_radius == 0 {
            return bad("fov_radius", "must be >= 1");
        }
        if self.max_generation_attempts == 0 {
            return bad("max_generation_attempts", "must be >= 1");
        }
        Ok(())
    }
}

/// Builds a random map and a robot start. The same `(config, seed)` always
/// yields the same map and start; the start field of view is revealed.
pub fn generate_environment(config: &EnvConfig, seed: u64) -> Result<(GridMap, RobotState)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clearance_sq = {
        let c = (config.fov_radius / 2) as i64;
        c * c
    };
    for _ in 0..config.max_generation_attempts {
        let mut map = GridMap::new(config.width, config.height);
        let count = rng.random_range(config.obstacle_count.0..=config.obstacle_count.1);
        for _ in 0..count {
            let w = rng.random_range(config.obstacle_size.0..=config.obstacle_size.1) as usize;
            let h = rng.random_range(config.obstacle_size.0..=config.obstacle_size.1) as usize;
            let w = w.min(config.width);
            let h = h.min(config.height);
            let x0 = rng.random_range(0..=config.width - w) as i32;
            let y0 = rng.random_range(0..=config.height - h) as i32;
            map.fill_rect(x0, y0, w as i32, h as i32);
        }
        if map.free_cell_count == 0 {
            continue;
        }

        let Some(start) = pick_start(&map, clearance_sq, &mut rng) else {
            continue;
        };
        if map.connected_free_count(start) != map.free_cell_count {
            continue;
        }
        let mut robot = RobotState {
            position: start,
            fov_radius: config.fov_radius,
            moves_taken: 0,
        };
        reveal(&mut map, &mut robot);
        return Ok((map, robot));
    }
    Err(Error::Generation {
        attempts: config.max_generation_attempts,
    })
}

fn pick_start(map: &GridMap, clearance_sq: i64, rng: &mut ChaCha8Rng) -> Option<Cell> {
    let r = (clearance_sq as f64).sqrt().ceil() as i32;
    'sample: for _ in 0..1000 {
        let c = Cell::new(
            rng.random_range(0..map.width as i32),
            rng.random_range(0..map.height as i32),
        );
        if !map.is_free(c) {
            continue;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                let n = Cell::new(c.x + dx, c.y + dy);
                if c.dist_sq(n) <= clearance_sq && map.is_obstacle(n) {
                    continue 'sample;
                }
            }
        }
        return Some(c);
    }
    None
}

/// Visits every cell touched by the segment between the centres of `a` and
/// `b`, in order from `a`. When the segment passes exactly through a cell
/// corner both side cells are visited. Stops early when `visit` returns false;
/// the return value says whether the walk completed.
pub fn walk_ray(a: Cell, b: Cell, mut visit: impl FnMut(Cell) -> bool) -> bool {
    let nx = (b.x - a.x).abs() as i64;
    let ny = (b.y - a.y).abs() as i64;
    let sx = if b.x >= a.x { 1 } else { -1 };
    let sy = if b.y >= a.y { 1 } else { -1 };
    let (mut x, mut y) = (a.x, a.y);
    if !visit(a) {
        return false;
    }
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        let decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx;
        if decision == 0 {
            if !visit(Cell::new(x + sx, y)) || !visit(Cell::new(x, y + sy)) {
                return false;
            }
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        if !visit(Cell::new(x, y)) {
            return false;
        }
    }
    true
}

/// True iff no cell on the ray between the two cell centres is an obstacle.
pub fn line_of_sight(map: &GridMap, a: Cell, b: Cell) -> bool {
    walk_ray(a, b, |c| map.is_free(c))
}

/// Whether `target` is visible from `from`: every ray cell before the target
/// must be free. The target itself may be an obstacle (its face is seen).
pub fn visible(map: &GridMap, from: Cell, target: Cell) -> bool {
    walk_ray(from, target, |c| c == target || map.is_free(c))
}

/// Marks every cell inside the field-of-view disc that is visible from the
/// robot. Returns the number of newly explored cells.
pub fn reveal(map: &mut GridMap, robot: &mut RobotState) -> usize {
    reveal_from(map, robot.position, robot.fov_radius)
}

pub fn reveal_from(map: &mut GridMap, position: Cell, fov_radius: u32) -> usize {
    let r = fov_radius as i32;
    let r_sq = (r as i64) * (r as i64);
    let mut newly = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let c = Cell::new(position.x + dx, position.y + dy);
            if !map.in_bounds(c) || position.dist_sq(c) > r_sq || map.is_explored(c) {
                continue;
            }
            if visible(map, position, c) && map.mark_explored(c) {
                newly += 1;
            }
        }
    }
    newly
}
