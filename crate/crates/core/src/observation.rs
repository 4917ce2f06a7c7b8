//! Rasterises the map, tree and robot into a multi-channel image and cuts it
//! into patch tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{walk_ray, Cell, GridMap, RobotState};
use crate::tree::ExplorationTree;

pub const CHANNELS: usize = 4;
/// Known obstacle cells.
pub const CH_OBSTACLE: usize = 0;
/// Explored free cells.
pub const CH_EXPLORED: usize = 1;
/// Tree overlay: nodes 1.0, edges 0.5.
pub const CH_GRAPH: usize = 2;
/// Robot cell 1.0, field-of-view disc 0.5.
pub const CH_ROBOT: usize = 3;

pub const NODE_INTENSITY: f64 = 1.0;
pub const EDGE_INTENSITY: f64 = 0.5;
pub const ROBOT_INTENSITY: f64 = 1.0;
pub const FOV_INTENSITY: f64 = 0.5;

/// Row-major `height x width x CHANNELS` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl ObservationImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + ch]
    }

    fn raise(&mut self, c: Cell, ch: usize, v: f64) {
        let i = (c.y as usize * self.width + c.x as usize) * CHANNELS + ch;
        if self.pixels[i] < v {
            self.pixels[i] = v;
        }
    }

    pub fn channel_nonzero(&self, ch: usize) -> usize {
        self.pixels
            .chunks_exact(CHANNELS)
            .filter(|p| p[ch] != 0.0)
            .count()
    }
}

pub fn render(map: &GridMap, tree: &ExplorationTree, robot: &RobotState) -> ObservationImage {
    let (w, h) = (map.width(), map.height());
    let mut img = ObservationImage::zeros(h, w);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let c = Cell::new(x, y);
            if map.is_explored(c) {
                if map.is_obstacle(c) {
                    img.raise(c, CH_OBSTACLE, 1.0);
                } else {
                    img.raise(c, CH_EXPLORED, 1.0);
                }
            }
        }
    }
    for (_, node) in tree.nodes() {
        if let Some(p) = node.parent {
            walk_ray(tree.pos(p), node.pos, |c| {
                if map.in_bounds(c) {
                    img.raise(c, CH_GRAPH, EDGE_INTENSITY);
                }
                true
            });
        }
    }
    for (_, node) in tree.nodes() {
        img.raise(node.pos, CH_GRAPH, NODE_INTENSITY);
    }
    let r = robot.fov_radius as i32;
    let r_sq = (r as i64) * (r as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let c = Cell::new(robot.position.x + dx, robot.position.y + dy);
            if map.in_bounds(c) && robot.position.dist_sq(c) <= r_sq {
                img.raise(c, CH_ROBOT, FOV_INTENSITY);
            }
        }
    }
    img.raise(robot.position, CH_ROBOT, ROBOT_INTENSITY);
    img
}

/// Patch tokens in row-major patch order; each token is the patch flattened
/// as `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    /// `rows * cols` tokens, each `token_len()` long, stored contiguously.
    pub data: Vec<f64>,
}

impl TokenSequence {
    pub fn token_len(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, i: usize) -> &[f64] {
        let n = self.token_len();
        &self.data[i * n..(i + 1) * n]
    }
}

pub fn check_patch_size(height: usize, width: usize, patch: usize) -> Result<()> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(Error::PatchSize { height, width, patch });
    }
    Ok(())
}

pub fn tokenize(img: &ObservationImage, patch: usize) -> Result<TokenSequence> {
    check_patch_size(img.height, img.width, patch)?;
    let rows = img.height / patch;
    let cols = img.width / patch;
    let mut data = Vec::with_capacity(img.pixels.len());
    for pr in 0..rows {
        for pc in 0..cols {
            for y in pr * patch..(pr + 1) * patch {
                let start = (y * img.width + pc * patch) * CHANNELS;
                data.extend_from_slice(&img.pixels[start..start + patch * CHANNELS]);
            }
        }
    }
    Ok(TokenSequence {
        rows,
        cols,
        patch_size: patch,
        data,
    })
}

pub fn detokenize(tokens: &TokenSequence) -> ObservationImage {
    let p = tokens.patch_size;
    let mut img = ObservationImage::zeros(tokens.rows * p, tokens.cols * p);
    let mut src = tokens.data.chunks_exact(p * CHANNELS);
    for pr in 0..tokens.rows {
        for pc in 0..tokens.cols {
            for y in pr * p..(pr + 1) * p {
                let start = (y * img.width + pc * p) * CHANNELS;
                img.pixels[start..start + p * CHANNELS].copy_from_slice(src.next().unwrap());
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_environment, EnvConfig};
    use proptest::prelude::*;

    #[test]
    fn fresh_render() {
        let cfg = EnvConfig {
            width: 50,
            height: 50,
            obstacle_count: (0, 0),
            fov_radius: 5,
            ..EnvConfig::default()
        };
        let (map, robot) = generate_environment(&cfg, 1).unwrap();
        let tree = ExplorationTree::new(robot.position);
        let img = render(&map, &tree, &robot);
        assert_eq!(img.channel_nonzero(CH_GRAPH), 1);
        let p = robot.position;
        assert_eq!(img.get(p.y as usize, p.x as usize, CH_GRAPH), NODE_INTENSITY);
        assert_eq!(img.channel_nonzero(CH_EXPLORED), map.explored_free_count());
        assert_eq!(img, render(&map, &tree, &robot));
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn new_node_changes_a_pixel() {
        let mut map = GridMap::new(20, 20);
        map.explore_all();
        let robot = RobotState {
            position: Cell::new(2, 2),
            fov_radius: 1,
            moves_taken: 0,
        };
        let mut tree = ExplorationTree::new(robot.position);
        let before = render(&map, &tree, &robot);
        tree.add_child(tree.root(), Cell::new(15, 15));
        assert_ne!(before, render(&map, &tree, &robot));
    }

    #[test]
    fn paper_size_token_shape() {
        let img = ObservationImage::zeros(250, 250);
        let t = tokenize(&img, 25).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(t.token_len(), 25 * 25 * CHANNELS);
    }

    #[test]
    fn single_patch_is_whole_image() {
        let mut img = ObservationImage::zeros(6, 6);
        for (i, v) in img.pixels.iter_mut().enumerate() {
            *v = i as f64 / 1000.0;
        }
        let t = tokenize(&img, 6).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.data, img.pixels);
    }

    #[test]
    fn indivisible_patch_rejected() {
        let img = ObservationImage::zeros(10, 10);
        assert_eq!(
            tokenize(&img, 3),
            Err(Error::PatchSize { height: 10, width: 10, patch: 3 })
        );
    }

    proptest! {
        #[test]
        fn tokenize_roundtrip(rows in 1usize..4, cols in 1usize..4, patch in 1usize..5, seed in any::<u64>()) {
            let mut img = ObservationImage::zeros(rows * patch, cols * patch);
            let mut s = seed;
            for v in img.pixels.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = (s >> 11) as f64 / (1u64 << 53) as f64;
            }
            let t = tokenize(&img, patch).unwrap();
            prop_assert_eq!(detokenize(&t), img);
        }
    }
}
