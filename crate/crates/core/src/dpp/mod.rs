//! Truncated dynamic programming for impulse control under nonlinear
//! expectation.
//!
//! `value(node, v, r)` is the value at `node` given the intervention history
//! `v` and at most `r` further interventions:
//!
//! ```text
//! value(leaf, v, r) = phi(leaf, v)
//! value(node, v, r) = min( min_b { value(node, v + (t_i, b), r - 1) + c(v + (t_i, b)) },
//!                          max_p sum_m p_m value(child_m, v, r) )
//! ```
//!
//! The intervention obstacle re-enters the recursion at the same node with a
//! smaller budget, so repeated interventions at one time are allowed and the
//! recursion terminates. Nothing is ever decided at the terminal slice.

mod io;
mod solver;

pub use io::{read_field_csv, write_field_csv};
pub use solver::{solve_root_value, SolveOptions};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::{solve_optimal_stopping, sup_expectation, ObstacleProcess, ARGMAX_TOLERANCE};
use crate::lattice::{ImpulseProblem, InterventionHistory, NodeId, PathView};

/// Key of one value-field entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldKey {
    pub node: NodeId,
    pub history: InterventionHistory,
    pub budget: usize,
}

impl FieldKey {
    pub fn new(node: NodeId, history: InterventionHistory, budget: usize) -> Self {
        Self { node, history, budget }
    }
}

/// Solved table of truncated values `Y^{v,r}` at every reachable
/// `(node, history, budget)`.
#[derive(Clone, Debug)]
pub struct ValueField {
    problem: ImpulseProblem,
    budget: usize,
    table: HashMap<FieldKey, f64>,
}

impl ValueField {
    pub fn from_table(problem: ImpulseProblem, budget: usize, table: HashMap<FieldKey, f64>) -> Self {
        Self { problem, budget, table }
    }

    pub fn problem(&self) -> &ImpulseProblem {
        &self.problem
    }

    /// Intervention budget available at the root.
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn root_value(&self) -> Result<f64> {
        self.lookup(NodeId::ROOT, &InterventionHistory::empty(), self.budget)
    }

    pub fn get(&self, node: NodeId, history: &InterventionHistory, budget: usize) -> Option<f64> {
        // avoid cloning the history for the lookup key in the common case
        self.table
            .get(&FieldKey::new(node, history.clone(), budget))
            .copied()
    }

    pub(crate) fn lookup(&self, node: NodeId, history: &InterventionHistory, budget: usize) -> Result<f64> {
        self.get(node, history, budget).ok_or_else(|| {
            Error::MissingValue(format!(
                "no field entry at {node}, history [{history}], budget {budget}"
            ))
        })
    }

    /// Entries in canonical order.
    pub fn sorted_entries(&self) -> Vec<(&FieldKey, f64)> {
        let mut out: Vec<_> = self.table.iter().map(|(k, v)| (k, *v)).collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn keys_sorted(&self) -> Vec<FieldKey> {
        let mut keys: Vec<FieldKey> = self.table.keys().cloned().collect();
        keys.sort();
        keys
    }

    /// Adds `delta` to one entry; returns the previous value.
    pub fn adjust(&mut self, key: &FieldKey, delta: f64) -> Result<f64> {
        let slot = self
            .table
            .get_mut(key)
            .ok_or_else(|| Error::MissingValue(format!("no field entry {key:?}")))?;
        let old = *slot;
        *slot += delta;
        Ok(old)
    }

    pub fn set(&mut self, key: &FieldKey, value: f64) -> Result<()> {
        let slot = self
            .table
            .get_mut(key)
            .ok_or_else(|| Error::MissingValue(format!("no field entry {key:?}")))?;
        *slot = value;
        Ok(())
    }

    /// Remaining budget at `(node, v)` along play started from the root.
    pub fn remaining_budget(&self, history: &InterventionHistory) -> Option<usize> {
        self.budget.checked_sub(history.len())
    }

    /// `min_b { value(node, v + (t_i, b), r - 1) + c(v + (t_i, b)) }` and its
    /// smallest minimising impulse index, read from stored entries. `None`
    /// when no intervention is possible (terminal node, `r = 0`, or no
    /// impulses).
    pub fn intervention_obstacle_at(
        &self,
        node: NodeId,
        path: PathView<'_>,
        history: &InterventionHistory,
        budget: usize,
    ) -> Result<Option<(f64, usize)>> {
        if self.problem.lattice.is_leaf(node) || budget == 0 || self.problem.impulses.is_empty() {
            return Ok(None);
        }
        let mut candidates = Vec::with_capacity(self.problem.impulse_count());
        for b in 0..self.problem.impulse_count() {
            let next = history.appended(node.depth, b);
            let c = self.problem.cost.cost(path, &next);
            candidates.push(self.lookup(node, &next, budget - 1)? + c);
        }
        Ok(Some(argmin(&candidates)))
    }

    /// Worst-case continuation `max_p sum_m p_m value(child_m, v, r)` and its
    /// canonical kernel index, read from stored entries.
    pub fn continuation_at(
        &self,
        node: NodeId,
        path: PathView<'_>,
        history: &InterventionHistory,
        budget: usize,
    ) -> Result<(f64, usize)> {
        let lattice = &self.problem.lattice;
        let children = lattice
            .children(node)
            .map(|c| self.lookup(c, history, budget))
            .collect::<Result<Vec<_>>>()?;
        let set = self.problem.kernels.kernel_set(node, path, history);
        if set.is_empty() {
            return Err(Error::EmptyKernelSet(format!(" at {node}")));
        }
        Ok(sup_expectation(&children, &set))
    }

    /// Right-hand side of the recursion for one entry, from stored neighbours.
    pub fn recompute(&self, key: &FieldKey) -> Result<f64> {
        let lattice = &self.problem.lattice;
        let path = lattice.path(key.node);
        let view = path.view();
        if lattice.is_leaf(key.node) {
            return Ok(self.problem.reward.reward(view, &key.history));
        }
        let (cont, _) = self.continuation_at(key.node, view, &key.history, key.budget)?;
        Ok(match self.intervention_obstacle_at(key.node, view, &key.history, key.budget)? {
            Some((obstacle, _)) => obstacle.min(cont),
            None => cont,
        })
    }
}

/// Smallest value and the first index within [`ARGMAX_TOLERANCE`] of it.
pub(crate) fn argmin(values: &[f64]) -> (f64, usize) {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let index = values
        .iter()
        .position(|&v| v <= best + ARGMAX_TOLERANCE)
        .unwrap_or(0);
    (best, index)
}

/// Solves with budget `k` from `(root, empty history)`.
pub fn solve_truncated(problem: &ImpulseProblem, k: usize) -> Result<ValueField> {
    solve_truncated_with(problem, k, &SolveOptions::default())
}

pub fn solve_truncated_with(problem: &ImpulseProblem, k: usize, options: &SolveOptions) -> Result<ValueField> {
    problem.require_positive_constants()?;
    let memo = solver::FieldMemo::new(options.max_entries);
    solver::Solver::new(problem, &memo, options).root(k)?;
    Ok(ValueField::from_table(problem.clone(), k, memo.into_table()))
}

/// Result of [`solve_adaptive`].
#[derive(Clone, Debug)]
pub struct AdaptiveSolution {
    pub field: ValueField,
    pub k_used: usize,
    pub certified_gap: f64,
    /// Root value for each budget `0..=k_used`.
    pub root_values: Vec<f64>,
}

/// Raises the budget `k = 0, 1, ...` until the truncation bound
/// `4 C0^2 / ((k + 1) delta)` drops to `tol` or the root value moves by less
/// than `tol` between consecutive budgets, never beyond `k_hard`.
pub fn solve_adaptive(problem: &ImpulseProblem, tol: f64) -> Result<AdaptiveSolution> {
    solve_adaptive_with(problem, tol, &SolveOptions::default())
}

pub fn solve_adaptive_with(problem: &ImpulseProblem, tol: f64, options: &SolveOptions) -> Result<AdaptiveSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    problem.require_positive_constants()?;
    let k_hard = problem.k_hard();
    let memo = solver::FieldMemo::new(options.max_entries);
    let solver = solver::Solver::new(problem, &memo, options);
    let mut root_values: Vec<f64> = Vec::new();
    let mut k = 0;
    loop {
        let v = solver.root(k)?;
        let stalled = root_values.last().is_some_and(|prev| prev - v < tol);
        root_values.push(v);
        if problem.truncation_gap(k) <= tol || stalled || k >= k_hard {
            break;
        }
        k += 1;
    }
    Ok(AdaptiveSolution {
        field: ValueField::from_table(problem.clone(), k, memo.into_table()),
        k_used: k,
        certified_gap: problem.truncation_gap(k),
        root_values,
    })
}

/// Largest `|stored - recomputed|` over all entries of the field.
pub fn dpp_residual(field: &ValueField) -> Result<f64> {
    let keys: Vec<&FieldKey> = field.table.keys().collect();
    let residuals = keys
        .par_iter()
        .map(|key| Ok((field.table[*key] - field.recompute(key)?).abs()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}

/// Root discrepancy between the field and the optimal-stopping form of the
/// recursion: stop at the first intervention time, paying the obstacle, or
/// run to the horizon and collect `phi(., empty)`.
pub fn stopping_form_residual(field: &ValueField) -> Result<f64> {
    let problem = field.problem();
    let lattice = &problem.lattice;
    let empty = InterventionHistory::empty();
    let k = field.budget();
    let mut levels = Vec::with_capacity(lattice.steps() + 1);
    for depth in 0..=lattice.steps() {
        let mut level = Vec::with_capacity(lattice.width(depth) as usize);
        for node in lattice.level(depth) {
            let path = lattice.path(node);
            let x = if lattice.is_leaf(node) {
                problem.reward.reward(path.view(), &empty)
            } else {
                field
                    .intervention_obstacle_at(node, path.view(), &empty, k)?
                    .map_or(f64::INFINITY, |(o, _)| o)
            };
            level.push(x);
        }
        levels.push(level);
    }
    let obstacle = ObstacleProcess { values: levels };
    let snell = solve_optimal_stopping(lattice, &obstacle, &empty, problem.kernels.as_ref());
    Ok((snell.root_value() - field.root_value()?).abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationRow {
    pub k: usize,
    pub root_value: f64,
    pub gap_to_reference: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationReport {
    pub reference_k: usize,
    pub reference_value: f64,
    pub rows: Vec<TruncationRow>,
    /// `Y^{k+1} <= Y^k + 1e-12` for consecutive rows.
    pub monotone: bool,
    /// `Y^k - Y^{ref} <= bound(k) + 1e-9` for every row.
    pub within_bound: bool,
}

/// Root values `Y^k` for each `k` in `ks`, compared against `Y^{reference_k}`
/// and the truncation bound.
pub fn truncation_monotonicity_report(
    problem: &ImpulseProblem,
    ks: &[usize],
    reference_k: usize,
) -> Result<TruncationReport> {
    problem.require_positive_constants()?;
    let options = SolveOptions::default();
    let memo = solver::FieldMemo::new(options.max_entries);
    let solver = solver::Solver::new(problem, &memo, &options);
    let reference_value = solver.root(reference_k)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let root_value = solver.root(k)?;
        rows.push(TruncationRow {
            k,
            root_value,
            gap_to_reference: root_value - reference_value,
            bound: problem.truncation_gap(k),
        });
    }
    let mut sorted: Vec<&TruncationRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.k);
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].root_value <= w[0].root_value + 1e-12);
    let within_bound = rows
        .iter()
        .filter(|r| r.k <= reference_k)
        .all(|r| r.gap_to_reference <= r.bound + 1e-9);
    Ok(TruncationReport {
        reference_k,
        reference_value,
        rows,
        monotone,
        within_bound,
    })
}
