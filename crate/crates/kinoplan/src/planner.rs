//! Tree search over steered edges: sampling-based optimal planning with
//! either partially free or fully pinned arrival states, plus a delayed
//! arrival-time variant of each.
//!
//! One iteration samples the reduced (or full) space, shrinks the sample
//! toward its nearest tree node, steers, and inserts the arrival state with
//! the cheapest collision-free parent among the Euclidean neighbors, then
//! tries to reroute those neighbors through the new node. The four
//! [`Mode`]s share this loop verbatim and differ only in what is sampled
//! and which terminal condition steers growth, so a degenerate partition
//! (`n1 = n`) makes the reduced and full planners bitwise identical.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{LinearSystem, TerminalPenalty};
use crate::steering::{
    heuristic_arrival_time, steer, Horizon, HorizonCache, SteerKind, SteeringSolution, Trajectory,
};
use crate::world::Environment;

/// Failure modes of planner construction.
#[derive(Debug, Error)]
pub enum PlanError {
    /// The start state collides or leaves the sampling bounds.
    #[error("start state is in collision or outside the position bounds")]
    StartInCollision,
    /// Two inputs disagree about a dimension.
    #[error("{field} has dimension {got}, expected {expected}")]
    Dim {
        /// Which input is malformed.
        field: &'static str,
        /// Required dimension.
        expected: usize,
        /// Actual dimension.
        got: usize,
    },
    /// A configuration value is out of range.
    #[error("config: {what}")]
    BadConfig {
        /// Which constraint failed.
        what: &'static str,
    },
}

/// Which planner variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Sample the reduced space, steer with the partially-free-state
    /// controller (penalized tail when the system ships a penalty).
    Kino,
    /// Sample the full space, steer with the pinned-full-state controller.
    Baseline,
    /// [`Mode::Kino`] grown with heuristic arrival times and periodic
    /// re-optimization.
    KinoDelayed,
    /// [`Mode::Baseline`] grown with heuristic arrival times and periodic
    /// re-optimization.
    BaselineDelayed,
}

impl Mode {
    /// All variants, in display order.
    pub const ALL: [Mode; 4] =
        [Mode::Kino, Mode::Baseline, Mode::KinoDelayed, Mode::BaselineDelayed];

    /// Canonical lowercase name, as used in scenario files and CSV output.
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Kino => "kino",
            Mode::Baseline => "baseline",
            Mode::KinoDelayed => "kino_delayed",
            Mode::BaselineDelayed => "baseline_delayed",
        }
    }

    /// True for the modes that sample complete states and pin them.
    pub fn samples_full_state(self) -> bool {
        matches!(self, Mode::Baseline | Mode::BaselineDelayed)
    }

    /// True for the modes that grow with heuristic arrival times.
    pub fn is_delayed(self) -> bool {
        matches!(self, Mode::KinoDelayed | Mode::BaselineDelayed)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kino" => Ok(Mode::Kino),
            "baseline" => Ok(Mode::Baseline),
            "kino_delayed" => Ok(Mode::KinoDelayed),
            "baseline_delayed" => Ok(Mode::BaselineDelayed),
            other => Err(format!(
                "unknown mode `{other}` (expected kino, baseline, kino_delayed, baseline_delayed)"
            )),
        }
    }
}

/// Planner tuning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Sampling iterations to run (zero is allowed and grows nothing).
    pub iterations: usize,
    /// Maximum segment length: samples are pulled to within this position
    /// distance of their nearest node before steering.
    pub max_segment_length: f64,
    /// Euclidean neighbor-ball radius over the position block.
    pub neighbor_radius: f64,
    /// Heuristic speed used by the delayed modes to guess arrival times.
    pub v_des: f64,
    /// Insertions between arrival-time re-optimizations in the delayed
    /// modes; zero disables the periodic update.
    pub delayed_update_period: usize,
    /// Collision-sampling spacing along trajectories.
    pub collision_delta: f64,
    /// Arrival-time search window for every free-time solve.
    pub t_bounds: (f64, f64),
    /// Seed for the per-run random stream.
    pub seed: u64,
    /// Planner variant.
    pub mode: Mode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            max_segment_length: 5.0,
            neighbor_radius: 6.0,
            v_des: 1.5,
            delayed_update_period: 500,
            collision_delta: 0.05,
            t_bounds: (0.05, 20.0),
            seed: 0,
            mode: Mode::Kino,
        }
    }
}

impl PlannerConfig {
    /// Validates every numeric range.
    pub fn validate(&self) -> Result<(), PlanError> {
        let positive: [(&'static str, f64); 4] = [
            ("max_segment_length must be > 0", self.max_segment_length),
            ("neighbor_radius must be > 0", self.neighbor_radius),
            ("v_des must be > 0", self.v_des),
            ("collision_delta must be > 0", self.collision_delta),
        ];
        for (what, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlanError::BadConfig { what });
            }
        }
        let (lo, hi) = self.t_bounds;
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(PlanError::BadConfig { what: "t_bounds must satisfy 0 < t_min <= t_max" });
        }
        Ok(())
    }
}

/// One vertex of the search tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    /// Index into the tree's node table.
    pub id: usize,
    /// Full state (length `n`).
    pub state: DVector<f64>,
    /// Parent id; `None` exactly for the root.
    pub parent: Option<usize>,
    /// Steered edge from the parent into this node; `None` for the root.
    pub edge: Option<SteeringSolution>,
    /// Accumulated cost of the root-to-here path.
    pub cost_to_come: f64,
    pub(crate) children: Vec<usize>,
}

impl TreeNode {
    fn position<'a>(&'a self, n1: usize) -> &'a [f64] {
        &self.state.as_slice()[..n1]
    }
}

/// Uniform-grid index over position blocks; cell edge equals the neighbor
/// radius so a radius query touches at most three cells per axis.
struct GridIndex {
    cell: f64,
    dim: usize,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    positions: Vec<Vec<f64>>,
    min_cell: Vec<i64>,
    max_cell: Vec<i64>,
}

impl GridIndex {
    fn new(dim: usize, cell: f64) -> Self {
        Self {
            cell,
            dim,
            buckets: HashMap::new(),
            positions: Vec::new(),
            min_cell: vec![i64::MAX; dim],
            max_cell: vec![i64::MIN; dim],
        }
    }

    fn cell_of(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|v| (v / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, id: usize, p: &[f64]) {
        debug_assert_eq!(id, self.positions.len());
        let key = self.cell_of(p);
        for axis in 0..self.dim {
            self.min_cell[axis] = self.min_cell[axis].min(key[axis]);
            self.max_cell[axis] = self.max_cell[axis].max(key[axis]);
        }
        self.buckets.entry(key).or_default().push(id);
        self.positions.push(p.to_vec());
    }

    fn distance(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Id of the closest stored position, ties broken by lowest id.
    fn nearest(&self, z: &[f64]) -> usize {
        assert!(!self.positions.is_empty(), "nearest on an empty index");
        let center = self.cell_of(z);
        let ring_cap = (0..self.dim)
            .map(|i| (center[i] - self.min_cell[i]).max(self.max_cell[i] - center[i]).max(0))
            .max()
            .unwrap_or(0);

        let mut best: Option<(f64, usize)> = None;
        let consider = |id: usize, best: &mut Option<(f64, usize)>| {
            let d = Self::distance(&self.positions[id], z);
            let better = match best {
                None => true,
                Some((bd, bid)) => d < *bd || (d == *bd && id < *bid),
            };
            if better {
                *best = Some((d, id));
            }
        };

        for k in 0..=ring_cap {
            let ring_volume = (2 * k + 1).pow(self.dim as u32);
            if ring_volume as usize > self.positions.len().max(64) {
                // the ring outgrew the point set: finish with a full scan
                for id in 0..self.positions.len() {
                    consider(id, &mut best);
                }
                break;
            }
            let ranges: Vec<(i64, i64)> =
                center.iter().map(|c| (c - k, c + k)).collect();
            for_each_cell(&ranges, |key| {
                let on_ring = key
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).abs())
                    .max()
                    .unwrap_or(0)
                    == k;
                if !on_ring {
                    return;
                }
                if let Some(ids) = self.buckets.get(key) {
                    for &id in ids {
                        consider(id, &mut best);
                    }
                }
            });
            if let Some((bd, _)) = best {
                // everything in farther rings is at least k * cell away
                if bd < k as f64 * self.cell {
                    break;
                }
            }
        }
        best.expect("a non-empty index always yields a nearest point").1
    }

    /// Ids within closed Euclidean distance `r` of `z`, ascending.
    fn near(&self, z: &[f64], r: f64) -> Vec<usize> {
        let ranges: Vec<(i64, i64)> = (0..self.dim)
            .map(|i| {
                let lo = (((z[i] - r) / self.cell).floor() as i64).max(self.min_cell[i]);
                let hi = (((z[i] + r) / self.cell).floor() as i64).min(self.max_cell[i]);
                (lo, hi)
            })
            .collect();
        let mut out = Vec::new();
        if ranges.iter().any(|(lo, hi)| lo > hi) {
            return out;
        }
        let volume: i64 = ranges.iter().map(|(lo, hi)| hi - lo + 1).product();
        if volume as usize > self.positions.len() {
            for (id, p) in self.positions.iter().enumerate() {
                if Self::distance(p, z) <= r {
                    out.push(id);
                }
            }
            return out;
        }
        for_each_cell(&ranges, |key| {
            if let Some(ids) = self.buckets.get(key) {
                for &id in ids {
                    if Self::distance(&self.positions[id], z) <= r {
                        out.push(id);
                    }
                }
            }
        });
        out.sort_unstable();
        out
    }
}

fn for_each_cell(ranges: &[(i64, i64)], mut f: impl FnMut(&[i64])) {
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&cur);
        let mut axis = 0;
        loop {
            if axis == ranges.len() {
                return;
            }
            cur[axis] += 1;
            if cur[axis] <= ranges[axis].1 {
                break;
            }
            cur[axis] = ranges[axis].0;
            axis += 1;
        }
    }
}

/// The search tree: a node table plus a spatial index over positions.
pub struct Tree {
    nodes: Vec<TreeNode>,
    index: GridIndex,
    n1: usize,
}

impl Tree {
    /// A tree holding only the root.
    pub fn new(root_state: DVector<f64>, n1: usize, index_cell: f64) -> Self {
        assert!(n1 >= 1 && n1 <= root_state.len(), "position block out of range");
        assert!(index_cell > 0.0 && index_cell.is_finite());
        let mut index = GridIndex::new(n1, index_cell);
        index.insert(0, &root_state.as_slice()[..n1]);
        let root = TreeNode {
            id: 0,
            state: root_state,
            parent: None,
            edge: None,
            cost_to_come: 0.0,
            children: Vec::new(),
        };
        Self { nodes: vec![root], index, n1 }
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// A tree is never empty; provided for completeness.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dimension of the indexed position block.
    pub fn position_dim(&self) -> usize {
        self.n1
    }

    /// Node by id. Panics on an invalid id.
    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    /// All nodes in insertion order.
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Id of the node whose position block is Euclidean-closest to `z`,
    /// ties broken by lowest id.
    pub fn nearest(&self, z: &[f64]) -> usize {
        assert_eq!(z.len(), self.n1, "query dimension mismatch");
        self.index.nearest(z)
    }

    /// Ids of all nodes whose position block lies within distance `r` of
    /// `z`, ascending.
    pub fn near(&self, z: &[f64], r: f64) -> Vec<usize> {
        assert_eq!(z.len(), self.n1, "query dimension mismatch");
        assert!(r > 0.0, "radius must be positive");
        self.index.near(z, r)
    }

    pub(crate) fn insert(&mut self, parent: usize, edge: SteeringSolution) -> usize {
        let id = self.nodes.len();
        let state = edge.x_end.clone();
        let cost = self.nodes[parent].cost_to_come + edge.cost;
        self.index.insert(id, &state.as_slice()[..self.n1]);
        self.nodes[parent].children.push(id);
        self.nodes.push(TreeNode {
            id,
            state,
            parent: Some(parent),
            edge: Some(edge),
            cost_to_come: cost,
            children: Vec::new(),
        });
        id
    }

    pub(crate) fn reparent(&mut self, id: usize, new_parent: usize, edge: SteeringSolution) {
        debug_assert!(!self.is_ancestor(id, new_parent), "reparenting would create a cycle");
        let old_parent = self.nodes[id].parent.expect("the root is never reparented");
        let slot = self.nodes[old_parent]
            .children
            .iter()
            .position(|&c| c == id)
            .expect("child link consistent");
        self.nodes[old_parent].children.swap_remove(slot);
        self.nodes[new_parent].children.push(id);
        self.nodes[id].parent = Some(new_parent);
        self.nodes[id].cost_to_come = self.nodes[new_parent].cost_to_come + edge.cost;
        self.nodes[id].edge = Some(edge);
        self.propagate_costs(id);
    }

    /// Recomputes `cost_to_come` below `id` from the stored edges.
    fn propagate_costs(&mut self, id: usize) {
        let mut stack = vec![id];
        while let Some(at) = stack.pop() {
            let base = self.nodes[at].cost_to_come;
            let children = self.nodes[at].children.clone();
            for child in children {
                let edge_cost = self.nodes[child]
                    .edge
                    .as_ref()
                    .expect("non-root nodes store an edge")
                    .cost;
                self.nodes[child].cost_to_come = base + edge_cost;
                stack.push(child);
            }
        }
    }

    pub(crate) fn recompute_all_costs(&mut self) {
        self.nodes[0].cost_to_come = 0.0;
        self.propagate_costs(0);
    }

    /// True iff `candidate` lies on the root path of `id` (inclusive).
    fn is_ancestor(&self, candidate: usize, id: usize) -> bool {
        let mut at = Some(id);
        while let Some(i) = at {
            if i == candidate {
                return true;
            }
            at = self.nodes[i].parent;
        }
        false
    }

    /// Structural and numeric invariants: the parent graph is a tree
    /// reaching every node, child links mirror parent links, cost-to-come
    /// satisfies the recursion within `1e-9`, and every edge's endpoints
    /// match its incident nodes within `1e-7`.
    pub fn check_consistency(&self) -> Result<(), String> {
        let root = &self.nodes[0];
        if root.parent.is_some() || root.edge.is_some() || root.cost_to_come != 0.0 {
            return Err("malformed root".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0_usize];
        let mut visited = 0_usize;
        while let Some(at) = stack.pop() {
            if seen[at] {
                return Err(format!("node {at} reached twice; parent graph has a cycle"));
            }
            seen[at] = true;
            visited += 1;
            for &child in &self.nodes[at].children {
                if self.nodes[child].parent != Some(at) {
                    return Err(format!("child link {at} -> {child} not mirrored"));
                }
                stack.push(child);
            }
        }
        if visited != self.nodes.len() {
            return Err(format!(
                "{} of {} nodes unreachable from the root",
                self.nodes.len() - visited,
                self.nodes.len()
            ));
        }
        for node in &self.nodes[1..] {
            let parent = match node.parent {
                Some(p) if p < self.nodes.len() => &self.nodes[p],
                _ => return Err(format!("node {} has an invalid parent", node.id)),
            };
            let edge = node.edge.as_ref().ok_or(format!("node {} has no edge", node.id))?;
            let recursion = (node.cost_to_come - (parent.cost_to_come + edge.cost)).abs();
            if recursion > 1e-9 {
                return Err(format!(
                    "node {}: cost recursion off by {recursion:.3e}",
                    node.id
                ));
            }
            let end_gap = (&edge.x_end - &node.state).amax();
            if end_gap > 1e-7 {
                return Err(format!("node {}: edge lands {end_gap:.3e} from the state", node.id));
            }
            let start_gap = (&edge.x_start - &parent.state).amax();
            if start_gap > 1e-7 {
                return Err(format!(
                    "node {}: edge departs {start_gap:.3e} from its parent",
                    node.id
                ));
            }
            if !node.cost_to_come.is_finite() || edge.cost <= 0.0 {
                return Err(format!("node {}: non-positive or non-finite cost", node.id));
            }
        }
        Ok(())
    }

    /// Re-verifies that every stored edge is collision-free at spacing
    /// `delta`. Separate from [`Self::check_consistency`] because it is by
    /// far the most expensive invariant.
    pub fn check_edges_clear(
        &self,
        sys: &LinearSystem,
        env: &Environment,
        delta: f64,
    ) -> Result<(), String> {
        for node in &self.nodes[1..] {
            let edge = node.edge.as_ref().expect("non-root nodes store an edge");
            let traj = Trajectory::new(sys, edge.clone())
                .map_err(|e| format!("node {}: {e}", node.id))?;
            if !env.collision_free_trajectory(&traj, delta) {
                return Err(format!("node {}: stored edge collides", node.id));
            }
        }
        Ok(())
    }
}

/// Pulls `toward` to within `max_len` of `from` (both position-block
/// vectors); inputs closer than `max_len` pass through unchanged, and
/// coincident inputs return `toward` as-is.
pub fn shrink(from: &DVector<f64>, toward: &DVector<f64>, max_len: f64) -> DVector<f64> {
    assert_eq!(from.len(), toward.len(), "dimension mismatch");
    assert!(max_len > 0.0, "max_len must be positive");
    let diff = toward - from;
    let dist = diff.norm();
    if dist <= max_len {
        toward.clone()
    } else {
        from + diff * (max_len / dist)
    }
}

/// One row of the convergence log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Sampling iteration the row was recorded at.
    pub iteration: usize,
    /// Tree size at that point.
    pub nodes: usize,
    /// Wall-clock seconds since the planner was created.
    pub elapsed_s: f64,
    /// Cheapest goal-reaching cost so far, if any.
    pub best_cost: Option<f64>,
}

/// Result bundle of a finished run.
pub struct PlanOutcome {
    /// The grown tree.
    pub tree: Tree,
    /// Convergence rows: one per improvement plus one per 100 iterations.
    pub log: Vec<LogEntry>,
    /// Cheapest goal-reaching cost in the final tree, if any.
    pub best_cost: Option<f64>,
}

/// Incremental planner: owns the tree, the random stream, and the
/// per-run steering cache. Drive it with [`Planner::step`] or
/// [`Planner::run`].
pub struct Planner<'a> {
    sys: &'a LinearSystem,
    env: &'a Environment,
    penalty: Option<&'a TerminalPenalty>,
    cfg: PlannerConfig,
    tree: Tree,
    rng: ChaCha8Rng,
    cache: HorizonCache,
    iteration: usize,
    inserted_since_update: usize,
    goal_nodes: Vec<usize>,
    best_cost: Option<f64>,
    log: Vec<LogEntry>,
    started: Instant,
}

impl<'a> Planner<'a> {
    /// Validates the scenario pieces against each other and seeds the run.
    ///
    /// `penalty` only affects the reduced-space modes; when present its
    /// dimension must match the system's free tail.
    pub fn new(
        sys: &'a LinearSystem,
        env: &'a Environment,
        penalty: Option<&'a TerminalPenalty>,
        start: DVector<f64>,
        cfg: PlannerConfig,
    ) -> Result<Self, PlanError> {
        cfg.validate()?;
        if env.position_dim() != sys.n1() {
            return Err(PlanError::Dim {
                field: "environment position bounds",
                expected: sys.n1(),
                got: env.position_dim(),
            });
        }
        if cfg.mode.samples_full_state() && env.full_sample_dim() != sys.dim() {
            return Err(PlanError::Dim {
                field: "environment full-state bounds",
                expected: sys.dim() - sys.n1(),
                got: env.full_sample_bounds().dim(),
            });
        }
        if let Some(p) = penalty {
            if p.dim() != sys.n2() {
                return Err(PlanError::Dim {
                    field: "terminal penalty",
                    expected: sys.n2(),
                    got: p.dim(),
                });
            }
        }
        if start.len() != sys.dim() {
            return Err(PlanError::Dim {
                field: "start state",
                expected: sys.dim(),
                got: start.len(),
            });
        }
        if start.iter().any(|v| !v.is_finite()) || !env.collision_point(&start) {
            return Err(PlanError::StartInCollision);
        }

        let tree = Tree::new(start, sys.n1(), cfg.neighbor_radius);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut planner = Self {
            sys,
            env,
            penalty,
            cfg,
            tree,
            rng,
            cache: HorizonCache::new(),
            iteration: 0,
            inserted_since_update: 0,
            goal_nodes: Vec::new(),
            best_cost: None,
            log: Vec::new(),
            started: Instant::now(),
        };
        if planner.env.in_goal(&planner.tree.node(0).state) {
            planner.goal_nodes.push(0);
            planner.best_cost = Some(0.0);
        }
        Ok(planner)
    }

    /// The tree grown so far.
    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    /// Convergence rows recorded so far.
    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Sampling iterations executed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Cheapest goal-reaching cost so far.
    pub fn best_cost(&self) -> Option<f64> {
        self.best_cost
    }

    /// Runs one sampling iteration; returns true when a node was inserted.
    pub fn step(&mut self) -> bool {
        self.iteration += 1;
        let inserted = self.grow();
        self.refresh_best();
        if self.iteration % 100 == 0 {
            self.snapshot();
        }
        inserted
    }

    /// Runs the remaining iterations and closes the log with a final row.
    pub fn run(&mut self) {
        while self.iteration < self.cfg.iterations {
            self.step();
        }
        if self.iteration > 0 && self.log.last().map(|e| e.iteration) != Some(self.iteration) {
            self.snapshot();
        }
    }

    /// Finishes the run and hands out the results.
    pub fn into_outcome(mut self) -> PlanOutcome {
        self.run();
        PlanOutcome { tree: self.tree, log: self.log, best_cost: self.best_cost }
    }

    fn grow(&mut self) -> bool {
        let n1 = self.sys.n1();

        // sample; the reduced draw is the position prefix of the full draw,
        // so both families consume the random stream identically when the
        // tail is empty
        let (z_rand, tail): (DVector<f64>, Option<DVector<f64>>) =
            if self.cfg.mode.samples_full_state() {
                match self.env.sample_full(&mut self.rng) {
                    Ok(x) => {
                        let z = x.rows(0, n1).clone_owned();
                        let t = x.rows(n1, x.len() - n1).clone_owned();
                        (z, Some(t))
                    }
                    Err(_) => return false,
                }
            } else {
                match self.env.sample_pff(&mut self.rng) {
                    Ok(z) => (z, None),
                    Err(_) => return false,
                }
            };

        let nearest_id = self.tree.nearest(z_rand.as_slice());
        let nearest_pos =
            DVector::from_column_slice(self.tree.node(nearest_id).position(n1));
        let z_new = shrink(&nearest_pos, &z_rand, self.cfg.max_segment_length);

        let target = match &tail {
            None => z_new.clone(),
            Some(t) => {
                let mut full = DVector::zeros(n1 + t.len());
                full.rows_mut(0, n1).copy_from(&z_new);
                full.rows_mut(n1, t.len()).copy_from(t);
                full
            }
        };

        // the nearest edge gates the iteration before any neighbor work
        let Some(edge) = self.steer_growth(nearest_id, &target, &z_new) else {
            return false;
        };
        if !self.edge_clear(&edge) {
            return false;
        }

        let near_ids = self.tree.near(z_new.as_slice(), self.cfg.neighbor_radius);
        let (parent, edge) = self.choose_parent(&near_ids, nearest_id, &target, &z_new, edge);
        let new_id = self.tree.insert(parent, edge);
        if self.env.in_goal(&self.tree.node(new_id).state) {
            self.goal_nodes.push(new_id);
        }
        self.rewire(&near_ids, new_id);

        self.inserted_since_update += 1;
        let period = self.cfg.delayed_update_period;
        if self.cfg.mode.is_delayed() && period > 0 && self.inserted_since_update >= period {
            delayed_time_update_cached(
                &mut self.tree,
                self.sys,
                self.env,
                self.cfg.t_bounds,
                self.cfg.collision_delta,
                Some(&self.cache),
            );
            self.inserted_since_update = 0;
        }
        true
    }

    /// Growth steering from a tree node toward `target`: the reduced modes
    /// pin the position block (with the system's penalty when present), the
    /// full modes pin everything; the delayed modes swap the arrival-time
    /// search for a straight-line-time guess.
    fn steer_growth(
        &self,
        from_id: usize,
        target: &DVector<f64>,
        target_pos: &DVector<f64>,
    ) -> Option<SteeringSolution> {
        let node = self.tree.node(from_id);
        let kind = self.growth_kind();
        let horizon = if self.cfg.mode.is_delayed() {
            let tf = heuristic_arrival_time(
                node.position(self.sys.n1()),
                target_pos.as_slice(),
                self.cfg.v_des,
            );
            Horizon::Fixed(tf)
        } else {
            Horizon::Free(self.cfg.t_bounds.0, self.cfg.t_bounds.1)
        };
        steer(self.sys, kind, &node.state, target, horizon, Some(&self.cache)).ok()
    }

    fn growth_kind(&self) -> SteerKind<'a> {
        if self.cfg.mode.samples_full_state() {
            SteerKind::FixedState
        } else {
            match self.penalty {
                Some(p) => SteerKind::Penalty(p),
                None => SteerKind::Pff,
            }
        }
    }

    fn edge_clear(&self, edge: &SteeringSolution) -> bool {
        match Trajectory::new(self.sys, edge.clone()) {
            Ok(traj) => self.env.collision_free_trajectory(&traj, self.cfg.collision_delta),
            Err(_) => false,
        }
    }

    /// Scans the neighbor set for the cheapest collision-free connection
    /// into `target`, starting from the already-verified nearest edge.
    /// Neighbors whose cost-to-come alone reaches the incumbent total are
    /// skipped without steering, which cannot change the outcome because
    /// segment costs are strictly positive.
    fn choose_parent(
        &self,
        near_ids: &[usize],
        nearest_id: usize,
        target: &DVector<f64>,
        target_pos: &DVector<f64>,
        nearest_edge: SteeringSolution,
    ) -> (usize, SteeringSolution) {
        let mut best_parent = nearest_id;
        let mut c_min = self.tree.node(nearest_id).cost_to_come + nearest_edge.cost;
        let mut best_edge = nearest_edge;
        for &id in near_ids {
            if id == nearest_id {
                continue;
            }
            let node = self.tree.node(id);
            if node.cost_to_come >= c_min {
                continue;
            }
            let Some(sol) = self.steer_growth(id, target, target_pos) else {
                continue;
            };
            let total = node.cost_to_come + sol.cost;
            if total >= c_min {
                continue;
            }
            if !self.edge_clear(&sol) {
                continue;
            }
            best_parent = id;
            c_min = total;
            best_edge = sol;
        }
        (best_parent, best_edge)
    }

    /// Tries to reroute each neighbor through the fresh node with a
    /// pinned-full-state edge. Neighbors at most as expensive as the new
    /// node are skipped without steering (positive segment costs again);
    /// that same argument keeps ancestors of the new node unrewired, so no
    /// cycle can form.
    fn rewire(&mut self, near_ids: &[usize], new_id: usize) {
        let new_cost = self.tree.node(new_id).cost_to_come;
        let new_parent = self.tree.node(new_id).parent;
        let new_state = self.tree.node(new_id).state.clone();
        let n1 = self.sys.n1();
        for &id in near_ids {
            if Some(id) == new_parent {
                continue;
            }
            let node = self.tree.node(id);
            if node.cost_to_come <= new_cost {
                continue;
            }
            let horizon = if self.cfg.mode.is_delayed() {
                let tf = heuristic_arrival_time(
                    &new_state.as_slice()[..n1],
                    node.position(n1),
                    self.cfg.v_des,
                );
                Horizon::Fixed(tf)
            } else {
                Horizon::Free(self.cfg.t_bounds.0, self.cfg.t_bounds.1)
            };
            let Ok(sol) = steer(
                self.sys,
                SteerKind::FixedState,
                &new_state,
                &node.state,
                horizon,
                Some(&self.cache),
            ) else {
                continue;
            };
            if new_cost + sol.cost >= node.cost_to_come {
                continue;
            }
            if !self.edge_clear(&sol) {
                continue;
            }
            self.tree.reparent(id, new_id, sol);
        }
    }

    fn refresh_best(&mut self) {
        let mut current: Option<f64> = None;
        for &id in &self.goal_nodes {
            let c = self.tree.node(id).cost_to_come;
            if current.is_none_or(|b| c < b) {
                current = Some(c);
            }
        }
        let improved = match (self.best_cost, current) {
            (None, Some(_)) => true,
            (Some(old), Some(new)) => new < old,
            _ => false,
        };
        if improved {
            self.best_cost = current;
            self.snapshot();
        }
    }

    fn snapshot(&mut self) {
        if self.log.last().map(|e| (e.iteration, e.best_cost)) ==
            Some((self.iteration, self.best_cost))
        {
            return;
        }
        self.log.push(LogEntry {
            iteration: self.iteration,
            nodes: self.tree.len(),
            elapsed_s: self.started.elapsed().as_secs_f64(),
            best_cost: self.best_cost,
        });
    }
}

/// Re-optimizes the arrival time of every edge in place: each edge is
/// re-solved as a pinned-full-state free-time problem between its existing
/// endpoints, and the replacement is kept only when it is strictly cheaper
/// and collision-free. All costs are then recomputed root-down. Returns the
/// number of edges replaced.
pub fn delayed_time_update(
    tree: &mut Tree,
    sys: &LinearSystem,
    env: &Environment,
    t_bounds: (f64, f64),
    delta: f64,
) -> usize {
    delayed_time_update_cached(tree, sys, env, t_bounds, delta, None)
}

fn delayed_time_update_cached(
    tree: &mut Tree,
    sys: &LinearSystem,
    env: &Environment,
    t_bounds: (f64, f64),
    delta: f64,
    cache: Option<&HorizonCache>,
) -> usize {
    let mut replaced = 0;
    for id in 1..tree.len() {
        let parent_state = {
            let node = tree.node(id);
            let parent = node.parent.expect("non-root nodes have a parent");
            tree.node(parent).state.clone()
        };
        let node_state = tree.node(id).state.clone();
        let old_cost = tree.node(id).edge.as_ref().expect("non-root edge").cost;
        let Ok(sol) = steer(
            sys,
            SteerKind::FixedState,
            &parent_state,
            &node_state,
            Horizon::Free(t_bounds.0, t_bounds.1),
            cache,
        ) else {
            continue;
        };
        if sol.cost >= old_cost {
            continue;
        }
        let Ok(traj) = Trajectory::new(sys, sol.clone()) else {
            continue;
        };
        if !env.collision_free_trajectory(&traj, delta) {
            continue;
        }
        tree.nodes[id].edge = Some(sol);
        replaced += 1;
    }
    if replaced > 0 {
        tree.recompute_all_costs();
    }
    replaced
}

/// Cheapest goal-reaching path: the root-to-node edge chain and its total
/// cost, or `None` when no tree node lies in the goal region. Ties go to
/// the lowest node id.
pub fn best_solution(
    tree: &Tree,
    env: &Environment,
) -> Option<(Vec<SteeringSolution>, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for node in tree.nodes() {
        if !env.in_goal(&node.state) {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, c)) => node.cost_to_come < c,
        };
        if better {
            best = Some((node.id, node.cost_to_come));
        }
    }
    let (goal_id, cost) = best?;
    let mut chain = Vec::new();
    let mut at = goal_id;
    while let Some(parent) = tree.node(at).parent {
        chain.push(tree.node(at).edge.clone().expect("non-root edge"));
        at = parent;
    }
    chain.reverse();
    Some((chain, cost))
}

/// Runs a full planning episode and returns the tree, the convergence log,
/// and the final best cost.
pub fn plan(
    sys: &LinearSystem,
    env: &Environment,
    penalty: Option<&TerminalPenalty>,
    start: &DVector<f64>,
    cfg: &PlannerConfig,
) -> Result<PlanOutcome, PlanError> {
    let planner = Planner::new(sys, env, penalty, start.clone(), cfg.clone())?;
    Ok(planner.into_outcome())
}
