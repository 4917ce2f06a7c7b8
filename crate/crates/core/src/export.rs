//! Palette snapshots of the map as binary PPM images.
//!
//! Colours: obstacles magenta, explored free cells gray, unexplored cells
//! black, the robot's field of view yellow, tree nodes and edges blue, and the
//! robot itself white.

use std::io::{self, Write};

use crate::grid::{walk_ray, Cell, GridMap, RobotState};
use crate::tree::ExplorationTree;

pub const OBSTACLE: [u8; 3] = [255, 0, 255];
pub const EXPLORED: [u8; 3] = [128, 128, 128];
pub const UNEXPLORED: [u8; 3] = [0, 0, 0];
pub const TREE: [u8; 3] = [0, 0, 255];
pub const FOV: [u8; 3] = [255, 255, 0];
pub const ROBOT: [u8; 3] = [255, 255, 255];

/// RGB raster of the current state, row-major.
pub fn palette_image(map: &GridMap, tree: &ExplorationTree, robot: &RobotState) -> Vec<[u8; 3]> {
    let w = map.width();
    let mut px = vec![UNEXPLORED; w * map.height()];
    let idx = |c: Cell| c.y as usize * w + c.x as usize;
    for y in 0..map.height() as i32 {
        for x in 0..w as i32 {
            let c = Cell::new(x, y);
            if map.is_obstacle(c) {
                px[idx(c)] = OBSTACLE;
            } else if map.is_explored(c) {
                px[idx(c)] = EXPLORED;
            }
        }
    }
    let r = robot.fov_radius as i64;
    for y in 0..map.height() as i32 {
        for x in 0..w as i32 {
            let c = Cell::new(x, y);
            if map.is_explored_free(c) && c.dist_sq(robot.position) <= r * r {
                px[idx(c)] = FOV;
            }
        }
    }
    for (_, node) in tree.nodes() {
        if let Some(p) = node.parent {
            walk_ray(tree.pos(p), node.pos, |c| {
                if map.in_bounds(c) {
                    px[idx(c)] = TREE;
                }
                true
            });
        }
        px[idx(node.pos)] = TREE;
    }
    px[idx(robot.position)] = ROBOT;
    px
}

pub fn write_ppm(
    mut out: impl Write,
    width: usize,
    height: usize,
    pixels: &[[u8; 3]],
) -> io::Result<()> {
    write!(out, "P6\n{width} {height}\n255\n")?;
    for p in pixels {
        out.write_all(p)?;
    }
    Ok(())
}

/// 8-bit grayscale PGM of one channel of values in `[0, 1]`.
pub fn write_pgm(mut out: impl Write, width: usize, height: usize, values: &[f64]) -> io::Result<()> {
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}
