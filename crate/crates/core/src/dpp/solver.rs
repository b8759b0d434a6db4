use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use dashmap::DashMap;
use rayon::prelude::*;

use super::{argmin, FieldKey};
use crate::error::{Error, Result};
use crate::expectation::sup_expectation;
use crate::lattice::{ImpulseProblem, InterventionHistory, NodeId, PathBuffer};

/// Knobs for the recursive solver.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Largest number of memoised `(node, history, budget)` entries.
    pub max_entries: usize,
    /// Children of nodes shallower than this are solved in parallel.
    pub parallel_depth: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_entries: 10_000_000,
            parallel_depth: 3,
        }
    }
}

pub(crate) trait Memo: Sync {
    fn get(&self, node: NodeId, history: &InterventionHistory, budget: usize) -> Option<f64>;
    fn insert(&self, node: NodeId, history: &InterventionHistory, budget: usize, value: f64) -> Result<()>;
}

pub(crate) struct FieldMemo {
    map: DashMap<FieldKey, f64>,
    count: AtomicUsize,
    cap: usize,
}

impl FieldMemo {
    pub(crate) fn new(cap: usize) -> Self {
        Self {
            map: DashMap::new(),
            count: AtomicUsize::new(0),
            cap,
        }
    }

    pub(crate) fn into_table(self) -> HashMap<FieldKey, f64> {
        self.map.into_iter().collect()
    }
}

impl Memo for FieldMemo {
    fn get(&self, node: NodeId, history: &InterventionHistory, budget: usize) -> Option<f64> {
        self.map
            .get(&FieldKey::new(node, history.clone(), budget))
            .map(|v| *v)
    }

    fn insert(&self, node: NodeId, history: &InterventionHistory, budget: usize, value: f64) -> Result<()> {
        let mut fresh = false;
        self.map
            .entry(FieldKey::new(node, history.clone(), budget))
            .or_insert_with(|| {
                fresh = true;
                value
            });
        if fresh {
            let n = self.count.fetch_add(1, Ordering::Relaxed) + 1;
            if n > self.cap {
                return Err(Error::InstanceTooLarge {
                    what: "value-field entries",
                    count: n as u128,
                    cap: self.cap as u128,
                });
            }
        }
        Ok(())
    }
}

/// No memoisation: every subtree is recomputed. Memory stays proportional to
/// the recursion depth, which is what large refinement runs need.
struct NoMemo;

impl Memo for NoMemo {
    fn get(&self, _: NodeId, _: &InterventionHistory, _: usize) -> Option<f64> {
        None
    }

    fn insert(&self, _: NodeId, _: &InterventionHistory, _: usize, _: f64) -> Result<()> {
        Ok(())
    }
}

pub(crate) struct Solver<'a, M: Memo> {
    problem: &'a ImpulseProblem,
    memo: &'a M,
    parallel_depth: usize,
}

impl<'a, M: Memo> Solver<'a, M> {
    pub(crate) fn new(problem: &'a ImpulseProblem, memo: &'a M, options: &SolveOptions) -> Self {
        Self {
            problem,
            memo,
            parallel_depth: options.parallel_depth,
        }
    }

    pub(crate) fn root(&self, budget: usize) -> Result<f64> {
        let lattice = &self.problem.lattice;
        let mut path = PathBuffer::root(lattice.dimension());
        self.value(lattice.root(), &mut path, &InterventionHistory::empty(), budget)
    }

    fn value(&self, node: NodeId, path: &mut PathBuffer, history: &InterventionHistory, budget: usize) -> Result<f64> {
        if let Some(v) = self.memo.get(node, history, budget) {
            return Ok(v);
        }
        let lattice = &self.problem.lattice;
        let v = if lattice.is_leaf(node) {
            self.problem.reward.reward(path.view(), history)
        } else {
            let cont = self.continuation(node, path, history, budget)?;
            match self.obstacle(node, path, history, budget)? {
                Some(o) => o.min(cont),
                None => cont,
            }
        };
        self.memo.insert(node, history, budget, v)?;
        Ok(v)
    }

    fn continuation(
        &self,
        node: NodeId,
        path: &mut PathBuffer,
        history: &InterventionHistory,
        budget: usize,
    ) -> Result<f64> {
        let lattice = &self.problem.lattice;
        let b = lattice.branch_count();
        let child_values = if node.depth < self.parallel_depth {
            let base: &PathBuffer = path;
            (0..b)
                .into_par_iter()
                .map(|m| {
                    let mut p = base.clone();
                    p.push_increment(lattice.increment(node.depth, m));
                    self.value(lattice.child(node, m), &mut p, history, budget)
                })
                .collect::<Result<Vec<f64>>>()?
        } else {
            let mut values = Vec::with_capacity(b);
            for m in 0..b {
                path.push_increment(lattice.increment(node.depth, m));
                let v = self.value(lattice.child(node, m), path, history, budget);
                path.pop();
                values.push(v?);
            }
            values
        };
        let set = self.problem.kernels.kernel_set(node, path.view(), history);
        if set.is_empty() {
            return Err(Error::EmptyKernelSet(format!(" at {node}")));
        }
        Ok(sup_expectation(&child_values, &set).0)
    }

    fn obstacle(
        &self,
        node: NodeId,
        path: &mut PathBuffer,
        history: &InterventionHistory,
        budget: usize,
    ) -> Result<Option<f64>> {
        let count = self.problem.impulse_count();
        if budget == 0 || count == 0 {
            return Ok(None);
        }
        let mut candidates = Vec::with_capacity(count);
        for b in 0..count {
            let next = history.appended(node.depth, b);
            let c = self.problem.cost.cost(path.view(), &next);
            candidates.push(self.value(node, path, &next, budget - 1)? + c);
        }
        Ok(Some(argmin(&candidates).0))
    }
}

/// Root value `Y^k` without a memo table. Runs in memory proportional to the
/// tree depth, at the price of recomputing shared subproblems.
pub fn solve_root_value(problem: &ImpulseProblem, k: usize, options: &SolveOptions) -> Result<f64> {
    problem.require_positive_constants()?;
    Solver::new(problem, &NoMemo, options).root(k)
}
