//! The finite probabilistic world: time grid, branching tree of path
//! increments, intervention histories, kernel sets and problem data.
//!
//! The tree is non-recombining. A node is identified by its depth and by its
//! index within that depth, which is the base-`B` number formed by the branch
//! choices taken from the root (first step most significant). Node paths are
//! never stored; they are rebuilt from prefix sums of the increment table, so a
//! lattice costs `O(n * B * d)` memory regardless of its node count.

mod history;
mod kernel;
mod problem;
mod validate;

pub use history::{InterventionHistory, Intervention};
pub use kernel::{
    ConstantKernels, DepthKernels, KernelProvider, KernelSet, RandomKernels, KERNEL_TOLERANCE,
};
pub use problem::{
    AffineReward, ConstantCost, CostFn, ImpulseProblem, InterventionCost, PerImpulseCost, RandomCost,
    RandomReward, TerminalReward,
};
pub use validate::{
    validate_instance, validate_with_cap, ValidationReport, Violation, ViolationKind,
    DEFAULT_SCAN_CAP,
};
pub(crate) use history::{for_each_history, history_count};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of lattice nodes.
pub const DEFAULT_NODE_CAP: u128 = 10_000_000;

/// Uniform grid `t_i = i * T / n` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { steps, horizon })
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step length; zero for the degenerate single-point grid.
    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.horizon / self.steps as f64
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            return self.horizon;
        }
        i as f64 * self.horizon / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// A node of the tree: its depth and its index among the `B^depth` nodes at
/// that depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub depth: usize,
    pub index: u64,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { depth: 0, index: 0 };

    pub fn new(depth: usize, index: u64) -> Self {
        Self { depth, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node(depth={}, index={})", self.depth, self.index)
    }
}

/// Read-only view of a node path `(w_{t_0}, ..., w_{t_i})`, stored flat.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> PathView<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len() % dim == 0 && !data.is_empty());
        Self { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Depth of the last point, i.e. the number of steps taken.
    pub fn depth(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &'a [f64] {
        self.point(self.depth())
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    /// Prefix of the path up to and including `depth`.
    pub fn prefix(&self, depth: usize) -> PathView<'a> {
        PathView {
            data: &self.data[..(depth + 1) * self.dim],
            dim: self.dim,
        }
    }
}

/// Growable path used by depth-first traversals.
#[derive(Clone, Debug)]
pub struct PathBuffer {
    data: Vec<f64>,
    dim: usize,
}

impl PathBuffer {
    pub fn root(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
            dim,
        }
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Self {
        Self { data, dim }
    }

    pub fn view(&self) -> PathView<'_> {
        PathView::new(&self.data, self.dim)
    }

    pub fn push_increment(&mut self, increment: &[f64]) {
        let start = self.data.len() - self.dim;
        for (k, inc) in increment.iter().enumerate() {
            let v = self.data[start + k] + inc;
            self.data.push(v);
        }
    }

    pub fn pop(&mut self) {
        let len = self.data.len() - self.dim;
        self.data.truncate(len);
    }
}

/// Branching tree of path increments on a time grid.
#[derive(Clone, Debug)]
pub struct Lattice {
    grid: TimeGrid,
    branch_count: usize,
    dimension: usize,
    /// Flattened `[step][branch][dim]`.
    increments: Vec<f64>,
}

impl Lattice {
    /// Builds a lattice with the default node cap.
    ///
    /// `increments[i][m]` is the displacement of the path on step `i` along
    /// branch `m`.
    pub fn new(
        grid: TimeGrid,
        branch_count: usize,
        increments: &[Vec<Vec<f64>>],
        dimension: usize,
    ) -> Result<Self> {
        Self::with_node_cap(grid, branch_count, increments, dimension, DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(
        grid: TimeGrid,
        branch_count: usize,
        increments: &[Vec<Vec<f64>>],
        dimension: usize,
        node_cap: u128,
    ) -> Result<Self> {
        if branch_count == 0 {
            return Err(Error::InvalidArgument("branch count must be positive".into()));
        }
        if dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let n = grid.steps();
        if increments.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected increments for {n} steps, got {}",
                increments.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * branch_count * dimension);
        for (i, step) in increments.iter().enumerate() {
            if step.len() != branch_count {
                return Err(Error::DimensionMismatch(format!(
                    "step {i} has {} branches, expected {branch_count}",
                    step.len()
                )));
            }
            for (m, inc) in step.iter().enumerate() {
                if inc.len() != dimension {
                    return Err(Error::DimensionMismatch(format!(
                        "increment (step {i}, branch {m}) has dimension {}, expected {dimension}",
                        inc.len()
                    )));
                }
                if inc.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "increment (step {i}, branch {m}) is not finite"
                    )));
                }
                flat.extend_from_slice(inc);
            }
        }
        let count = node_count(n, branch_count).unwrap_or(u128::MAX);
        if count > node_cap {
            return Err(Error::InstanceTooLarge {
                what: "lattice nodes",
                count,
                cap: node_cap,
            });
        }
        Ok(Self {
            grid,
            branch_count,
            dimension,
            increments: flat,
        })
    }

    /// Same increments on every step.
    pub fn uniform(grid: TimeGrid, step_increments: &[Vec<f64>], dimension: usize) -> Result<Self> {
        let table = vec![step_increments.to_vec(); grid.steps()];
        Self::new(grid, step_increments.len(), &table, dimension)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn increment(&self, step: usize, branch: usize) -> &[f64] {
        let start = (step * self.branch_count + branch) * self.dimension;
        &self.increments[start..start + self.dimension]
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        node.depth == self.steps()
    }

    /// Number of nodes at `depth`.
    pub fn width(&self, depth: usize) -> u64 {
        (self.branch_count as u64).pow(depth as u32)
    }

    /// Total node count `sum_{i=0}^{n} B^i`.
    pub fn node_count(&self) -> u128 {
        node_count(self.steps(), self.branch_count).expect("checked at construction")
    }

    pub fn child(&self, node: NodeId, branch: usize) -> NodeId {
        NodeId {
            depth: node.depth + 1,
            index: node.index * self.branch_count as u64 + branch as u64,
        }
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let count = if self.is_leaf(node) { 0 } else { self.branch_count };
        (0..count).map(move |m| self.child(node, m))
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        (node.depth > 0).then(|| NodeId {
            depth: node.depth - 1,
            index: node.index / self.branch_count as u64,
        })
    }

    /// Branch indices taken from the root to reach `node`.
    pub fn branches(&self, node: NodeId) -> Vec<usize> {
        let b = self.branch_count as u64;
        let mut out = vec![0; node.depth];
        let mut idx = node.index;
        for slot in out.iter_mut().rev() {
            *slot = (idx % b) as usize;
            idx /= b;
        }
        out
    }

    /// Node reached by following `branches` from the root.
    pub fn node_from_branches(&self, branches: &[usize]) -> NodeId {
        branches
            .iter()
            .fold(self.root(), |node, &m| self.child(node, m))
    }

    /// Flattened path of `node`, reconstructed by prefix sums.
    pub fn path(&self, node: NodeId) -> PathBuffer {
        let mut buf = PathBuffer::root(self.dimension);
        for (step, m) in self.branches(node).into_iter().enumerate() {
            buf.push_increment(self.increment(step, m));
        }
        buf
    }

    /// Position of `node` in breadth-first order.
    pub fn global_index(&self, node: NodeId) -> u64 {
        let offset: u64 = (0..node.depth).map(|i| self.width(i)).sum();
        offset + node.index
    }

    /// All nodes at `depth`, in index order.
    pub fn level(&self, depth: usize) -> impl Iterator<Item = NodeId> {
        (0..self.width(depth)).map(move |index| NodeId { depth, index })
    }
}

fn node_count(steps: usize, branch_count: usize) -> Option<u128> {
    let b = branch_count as u128;
    let mut total: u128 = 0;
    let mut width: u128 = 1;
    for i in 0..=steps {
        total = total.checked_add(width)?;
        if i < steps {
            width = width.checked_mul(b)?;
        }
    }
    Some(total)
}
