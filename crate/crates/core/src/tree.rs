//! Global RRT used for frontier detection and path planning, with node removal
//! that reconnects orphaned children to the removed node's parent.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{reveal_from, walk_ray, Cell, GridMap, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub pos: Cell,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTree {
    slots: Vec<Option<Node>>,
    root: NodeId,
    len: usize,
    nodes_added_since_prune: usize,
}

impl ExplorationTree {
    pub fn new(root_pos: Cell) -> Self {
        Self {
            slots: vec![Some(Node {
                pos: root_pos,
                parent: None,
                children: Vec::new(),
            })],
            root: NodeId(0),
            len: 1,
            nodes_added_since_prune: 0,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total number of ids ever handed out.
    pub fn ids_issued(&self) -> usize {
        self.slots.len()
    }

    pub fn nodes_added_since_prune(&self) -> usize {
        self.nodes_added_since_prune
    }

    pub fn reset_growth_counter(&mut self) {
        self.nodes_added_since_prune = 0;
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.slots.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }

    pub fn pos(&self, id: NodeId) -> Cell {
        self.node(id).pos
    }

    fn node(&self, id: NodeId) -> &Node {
        self.get(id).unwrap_or_else(|| panic!("node {id} missing"))
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.slots[id.0 as usize]
            .as_mut()
            .unwrap_or_else(|| panic!("node {id} missing"))
    }

    /// Live node ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| NodeId(i as u32))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|n| (NodeId(i as u32), n)))
    }

    /// Attaches a new node under `parent` without any geometric checks.
    pub fn add_child(&mut self, parent: NodeId, pos: Cell) -> NodeId {
        let id = NodeId(self.slots.len() as u32);
        self.node_mut(parent).children.push(id);
        self.slots.push(Some(Node {
            pos,
            parent: Some(parent),
            children: Vec::new(),
        }));
        self.len += 1;
        self.nodes_added_since_prune += 1;
        id
    }

    /// Node closest to `pos`; ties go to the lowest id.
    pub fn nearest(&self, pos: Cell) -> NodeId {
        let mut best = (i64::MAX, self.root);
        for (id, node) in self.nodes() {
            let d = node.pos.dist_sq(pos);
            if d < best.0 {
                best = (d, id);
            }
        }
        best.1
    }

    /// Deletes `id` and re-parents its children onto its parent. The root and
    /// the robot's anchor node are refused.
    pub fn remove_node(&mut self, id: NodeId, anchor: NodeId) -> Result<()> {
        if !self.contains(id) {
            return Err(Error::UnknownNode(id));
        }
        if id == self.root || id == anchor {
            return Err(Error::ProtectedNode(id));
        }
        let node = self.slots[id.0 as usize].take().expect("checked above");
        let parent = node.parent.expect("non-root node has a parent");
        let p = self.node_mut(parent);
        p.children.retain(|&c| c != id);
        p.children.extend_from_slice(&node.children);
        for child in node.children {
            self.node_mut(child).parent = Some(parent);
        }
        self.len -= 1;
        Ok(())
    }

    /// Tree path from `from` to `to`, both inclusive.
    pub fn path(&self, from: NodeId, to: NodeId) -> Vec<NodeId> {
        let ancestors = |mut id: NodeId| {
            let mut out = vec![id];
            while let Some(p) = self.node(id).parent {
                out.push(p);
                id = p;
            }
            out
        };
        let up = ancestors(from);
        let on_up: HashSet<NodeId> = up.iter().copied().collect();
        let mut down = Vec::new();
        let mut cur = to;
        while !on_up.contains(&cur) {
            down.push(cur);
            cur = self.node(cur).parent.expect("tree is connected");
        }
        let lca = cur;
        let mut path: Vec<NodeId> = up.into_iter().take_while(|&n| n != lca).collect();
        path.push(lca);
        path.extend(down.into_iter().rev());
        path
    }

    /// Full structural check: single root, consistent links, no cycles, and
    /// (when a map is given) every node on an explored free cell.
    pub fn audit(&self, map: Option<&GridMap>) -> std::result::Result<(), String> {
        let root = self.get(self.root).ok_or("root missing")?;
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }
        let mut count = 0;
        for (id, node) in self.nodes() {
            count += 1;
            if id != self.root {
                let p = node.parent.ok_or(format!("{id} has no parent"))?;
                let pn = self.get(p).ok_or(format!("{id} has dangling parent {p}"))?;
                if pn.children.iter().filter(|&&c| c == id).count() != 1 {
                    return Err(format!("{p} does not list child {id} exactly once"));
                }
            }
            for &c in &node.children {
                let cn = self.get(c).ok_or(format!("{id} has dangling child {c}"))?;
                if cn.parent != Some(id) {
                    return Err(format!("child {c} of {id} points elsewhere"));
                }
            }
            let mut cur = id;
            let mut steps = 0;
            while let Some(p) = self.node(cur).parent {
                cur = p;
                steps += 1;
                if steps > self.len {
                    return Err(format!("cycle through {id}"));
                }
            }
            if cur != self.root {
                return Err(format!("{id} does not reach the root"));
            }
            if let Some(map) = map {
                if !map.is_explored_free(node.pos) {
                    return Err(format!("{id} at {:?} is not on an explored free cell", node.pos));
                }
            }
        }
        if count != self.len {
            return Err(format!("len {} but {count} live nodes", self.len));
        }
        Ok(())
    }

    /// Line-delimited `id x y parent` records; the root's parent is `-1`.
    pub fn write_snapshot(&self, mut out: impl Write) -> io::Result<()> {
        for (id, node) in self.nodes() {
            let parent = node.parent.map_or(-1, |p| p.0 as i64);
            writeln!(out, "{}\t{}\t{}\t{}", id.0, node.pos.x, node.pos.y, parent)?;
        }
        Ok(())
    }
}

/// Runs `attempts` RRT extension attempts inside explored free space and
/// returns the ids of nodes that were added.
pub fn grow<R: Rng + ?Sized>(
    tree: &mut ExplorationTree,
    map: &GridMap,
    attempts: usize,
    step: f64,
    rng: &mut R,
) -> Vec<NodeId> {
    let mut added = Vec::new();
    for _ in 0..attempts {
        let n = map.explored_free_count();
        if n == 0 {
            break;
        }
        let sample = map.explored_free_cell(rng.random_range(0..n));
        let near = tree.nearest(sample);
        let from = tree.pos(near);
        let new = steer(from, sample, step);
        if walk_ray(from, new, |c| map.is_explored_free(c)) {
            added.push(tree.add_child(near, new));
        }
    }
    added
}

/// Moves from `from` towards `sample` by at most `step` cells.
pub fn steer(from: Cell, sample: Cell, step: f64) -> Cell {
    let d = from.dist(sample);
    if d <= step {
        return sample;
    }
    let t = step / d;
    Cell::new(
        from.x + ((sample.x - from.x) as f64 * t).round() as i32,
        from.y + ((sample.y - from.y) as f64 * t).round() as i32,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeClass {
    pub is_frontier: bool,
    pub is_leaf: bool,
    pub is_split: bool,
}

/// Leaf and split flags come from the tree structure. A node is on the
/// frontier when some unexplored cell within `frontier_distance` can be reached
/// by a ray that crosses only explored free cells, so standing there is
/// guaranteed to reveal something.
pub fn classify_nodes(
    tree: &ExplorationTree,
    map: &GridMap,
    frontier_distance: f64,
) -> BTreeMap<NodeId, NodeClass> {
    let r = frontier_distance.floor() as i32;
    let r_sq = frontier_distance * frontier_distance;
    let sees_unexplored = |p: Cell| {
        for dy in -r..=r {
            for dx in -r..=r {
                let u = Cell::new(p.x + dx, p.y + dy);
                if !map.in_bounds(u) || ((dx * dx + dy * dy) as f64) > r_sq || map.is_explored(u) {
                    continue;
                }
                if walk_ray(p, u, |c| c == p || c == u || map.is_explored_free(c)) {
                    return true;
                }
            }
        }
        false
    };
    tree.nodes()
        .map(|(id, node)| {
            let class = NodeClass {
                is_frontier: sees_unexplored(node.pos),
                is_leaf: node.children.is_empty(),
                is_split: node.children.len() >= 2,
            };
            (id, class)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierChoice {
    /// Accepted target, or `None` when no candidate is acceptable.
    pub target: Option<NodeId>,
    /// Candidates rejected before acceptance (all candidates on no-move).
    pub attempts: usize,
}

/// Ordering key for frontier candidates: nearest first, lowest id on ties.
fn candidate_key(tree: &ExplorationTree, robot: Cell, id: NodeId) -> (i64, NodeId) {
    (tree.pos(id).dist_sq(robot), id)
}

/// Picks the nearest frontier node on a free cell. The tree is connected, so
/// every candidate has a path from the robot's anchor. Frontier nodes sitting
/// on the robot's own cell are not candidates.
pub fn select_frontier(
    tree: &ExplorationTree,
    map: &GridMap,
    robot: &RobotState,
    classes: &BTreeMap<NodeId, NodeClass>,
) -> FrontierChoice {
    let mut candidates: Vec<NodeId> = classes
        .iter()
        .filter(|(&id, c)| c.is_frontier && tree.contains(id) && tree.pos(id) != robot.position)
        .map(|(&id, _)| id)
        .collect();
    candidates.sort_by_key(|&id| candidate_key(tree, robot.position, id));
    for (examined, &id) in candidates.iter().enumerate() {
        if map.is_free(tree.pos(id)) {
            return FrontierChoice {
                target: Some(id),
                attempts: examined,
            };
        }
    }
    FrontierChoice {
        target: None,
        attempts: candidates.len(),
    }
}

/// Walks the robot along the tree path to `target`, revealing at every path
/// node. Counts as one move.
pub fn move_robot(
    tree: &ExplorationTree,
    map: &mut GridMap,
    robot: &mut RobotState,
    target: NodeId,
    max_moves: u32,
) -> Result<usize> {
    if robot.moves_taken >= max_moves {
        return Err(Error::MovesExhausted(max_moves));
    }
    let node = tree.get(target).ok_or(Error::UnknownNode(target))?;
    if !map.is_explored_free(node.pos) {
        return Err(Error::InvalidTarget(target));
    }
    let anchor = tree.nearest(robot.position);
    let mut revealed = 0;
    for id in tree.path(anchor, target) {
        robot.position = tree.pos(id);
        revealed += reveal_from(map, robot.position, robot.fov_radius);
    }
    robot.moves_taken += 1;
    Ok(revealed)
}
