//! Optimal control and worst-case adversary read off a solved field, exact
//! evaluation of fixed (control, strategy) pairs, and saddle-point checks.

mod tables;

pub use tables::{write_control_csv, write_strategy_csv};

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::dpp::ValueField;
use crate::error::{Error, Result};
use crate::expectation::dot;
use crate::lattice::{ImpulseProblem, InterventionHistory, NodeId, PathBuffer, PathView};
use crate::oracle::{enumerate_controls, EnumerationCaps};
use crate::random::seeded;

/// Hitting tolerance: intervene when the obstacle is within this of the
/// continuation value.
pub const INTERVENTION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Action {
    Wait,
    Impulse(usize),
}

/// Controller decision at a node given everything done so far, including
/// earlier interventions at the same time.
pub trait ControlRule: Sync {
    fn decide(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> Result<Action>;
}

/// Adversary kernel choice at a node, after the controller has acted there.
pub trait StrategyRule: Sync {
    fn choose(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> Result<usize>;
}

/// `u*`: intervene at the first node where the intervention obstacle reaches
/// the continuation value, with the smallest minimising impulse.
#[derive(Clone, Copy, Debug)]
pub struct OptimalControl<'a> {
    field: &'a ValueField,
}

pub fn extract_optimal_control(field: &ValueField) -> OptimalControl<'_> {
    OptimalControl { field }
}

impl ControlRule for OptimalControl<'_> {
    fn decide(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> Result<Action> {
        let Some(budget) = self.field.remaining_budget(history) else {
            return Ok(Action::Wait);
        };
        let Some((obstacle, b)) = self.field.intervention_obstacle_at(node, path, history, budget)? else {
            return Ok(Action::Wait);
        };
        let (cont, _) = self.field.continuation_at(node, path, history, budget)?;
        Ok(if obstacle <= cont + INTERVENTION_TOLERANCE {
            Action::Impulse(b)
        } else {
            Action::Wait
        })
    }
}

/// `P*`: the kernel attaining the worst-case continuation of the field.
#[derive(Clone, Copy, Debug)]
pub struct WorstCaseStrategy<'a> {
    field: &'a ValueField,
}

pub fn extract_worst_case_strategy(field: &ValueField) -> WorstCaseStrategy<'_> {
    WorstCaseStrategy { field }
}

impl StrategyRule for WorstCaseStrategy<'_> {
    fn choose(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> Result<usize> {
        let budget = self.field.remaining_budget(history).ok_or_else(|| {
            Error::MissingValue(format!("history [{history}] exceeds the field budget"))
        })?;
        Ok(self.field.continuation_at(node, path, history, budget)?.1)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WaitEverywhere;

impl ControlRule for WaitEverywhere {
    fn decide(&self, _: NodeId, _: PathView<'_>, _: &InterventionHistory) -> Result<Action> {
        Ok(Action::Wait)
    }
}

/// Same kernel index at every node.
#[derive(Clone, Copy, Debug)]
pub struct FixedKernel(pub usize);

impl StrategyRule for FixedKernel {
    fn choose(&self, _: NodeId, _: PathView<'_>, _: &InterventionHistory) -> Result<usize> {
        Ok(self.0)
    }
}

/// Node-adapted control: the impulses applied, in order, at each node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TableControl {
    pub impulses: HashMap<NodeId, Vec<usize>>,
}

impl ControlRule for TableControl {
    fn decide(&self, node: NodeId, _: PathView<'_>, history: &InterventionHistory) -> Result<Action> {
        let done = history.count_at(node.depth);
        Ok(match self.impulses.get(&node).and_then(|s| s.get(done)) {
            Some(&b) => Action::Impulse(b),
            None => Action::Wait,
        })
    }
}

/// Kernel index per `(node, history)` pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TableStrategy {
    pub choices: HashMap<(NodeId, InterventionHistory), usize>,
}

impl StrategyRule for TableStrategy {
    fn choose(&self, node: NodeId, _: PathView<'_>, history: &InterventionHistory) -> Result<usize> {
        self.choices
            .get(&(node, history.clone()))
            .copied()
            .ok_or_else(|| Error::MissingValue(format!("strategy undefined at {node}, history [{history}]")))
    }
}

/// Kernel index per node, whatever the history: a fixed measure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeMeasure {
    pub choices: HashMap<NodeId, usize>,
}

impl StrategyRule for NodeMeasure {
    fn choose(&self, node: NodeId, _: PathView<'_>, _: &InterventionHistory) -> Result<usize> {
        self.choices
            .get(&node)
            .copied()
            .ok_or_else(|| Error::MissingValue(format!("measure undefined at {node}")))
    }
}

/// Exact expected total `phi(final history) + sum of intervention costs`
/// when `control` plays against `strategy`, by a forward pass over the tree.
pub fn evaluate_pair(
    problem: &ImpulseProblem,
    control: &dyn ControlRule,
    strategy: &dyn StrategyRule,
    budget: usize,
) -> Result<f64> {
    let mut path = PathBuffer::root(problem.lattice.dimension());
    forward(problem, control, strategy, budget, NodeId::ROOT, &mut path, InterventionHistory::empty())
}

/// Applies the control at `node`, returning the updated history and the
/// costs paid there.
fn act(
    problem: &ImpulseProblem,
    control: &dyn ControlRule,
    budget: usize,
    node: NodeId,
    path: PathView<'_>,
    mut history: InterventionHistory,
) -> Result<(InterventionHistory, f64)> {
    let mut paid = 0.0;
    if problem.lattice.is_leaf(node) {
        return Ok((history, paid));
    }
    while let Action::Impulse(b) = control.decide(node, path, &history)? {
        if history.len() >= budget {
            return Err(Error::BudgetExceeded { node, budget });
        }
        if b >= problem.impulse_count() {
            return Err(Error::InvalidArgument(format!("impulse index {b} out of range at {node}")));
        }
        history = history.appended(node.depth, b);
        paid += problem.cost.cost(path, &history);
    }
    Ok((history, paid))
}

fn forward(
    problem: &ImpulseProblem,
    control: &dyn ControlRule,
    strategy: &dyn StrategyRule,
    budget: usize,
    node: NodeId,
    path: &mut PathBuffer,
    history: InterventionHistory,
) -> Result<f64> {
    let lattice = &problem.lattice;
    if lattice.is_leaf(node) {
        return Ok(problem.reward.reward(path.view(), &history));
    }
    let (history, paid) = act(problem, control, budget, node, path.view(), history)?;
    let index = strategy.choose(node, path.view(), &history)?;
    let set = problem.kernels.kernel_set(node, path.view(), &history);
    let kernel = set.get(index).ok_or(Error::KernelIndexOutOfRange {
        node,
        index,
        available: set.len(),
    })?;
    let mut child_values = Vec::with_capacity(kernel.len());
    for m in 0..lattice.branch_count() {
        path.push_increment(lattice.increment(node.depth, m));
        let v = forward(problem, control, strategy, budget, lattice.child(node, m), path, history.clone());
        path.pop();
        child_values.push(v?);
    }
    Ok(paid + dot(&child_values, kernel))
}

/// Largest number of interventions `control` makes along any path.
pub fn max_interventions(problem: &ImpulseProblem, control: &dyn ControlRule, budget: usize) -> Result<usize> {
    fn rec(
        problem: &ImpulseProblem,
        control: &dyn ControlRule,
        budget: usize,
        node: NodeId,
        path: &mut PathBuffer,
        history: InterventionHistory,
    ) -> Result<usize> {
        let lattice = &problem.lattice;
        let (history, _) = act(problem, control, budget, node, path.view(), history)?;
        if lattice.is_leaf(node) {
            return Ok(history.len());
        }
        let mut most = 0;
        for m in 0..lattice.branch_count() {
            path.push_increment(lattice.increment(node.depth, m));
            let v = rec(problem, control, budget, lattice.child(node, m), path, history.clone());
            path.pop();
            most = most.max(v?);
        }
        Ok(most)
    }
    let mut path = PathBuffer::root(problem.lattice.dimension());
    rec(problem, control, budget, NodeId::ROOT, &mut path, InterventionHistory::empty())
}

/// History reached at every interior node when `control` is played, after
/// its interventions at that node.
pub fn induced_histories(
    problem: &ImpulseProblem,
    control: &dyn ControlRule,
    budget: usize,
) -> Result<Vec<(NodeId, InterventionHistory)>> {
    let mut out = Vec::new();
    let lattice = &problem.lattice;
    let mut stack = vec![(NodeId::ROOT, InterventionHistory::empty())];
    while let Some((node, history)) = stack.pop() {
        if lattice.is_leaf(node) {
            continue;
        }
        let path = lattice.path(node);
        let (history, _) = act(problem, control, budget, node, path.view(), history)?;
        for child in lattice.children(node) {
            stack.push((child, history.clone()));
        }
        out.push((node, history));
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SaddleReport {
    pub root_value: f64,
    /// `evaluate_pair(u*, P*)`.
    pub pair_value: f64,
    pub pair_ok: bool,
    pub controls_checked: usize,
    /// `min_u evaluate_pair(u, P*)` over the checked controls.
    pub best_deviation_value: f64,
    pub controls_ok: bool,
    pub measures_checked: usize,
    /// `max_P evaluate_pair(u*, P)` over the checked measures.
    pub worst_measure_value: f64,
    pub measures_ok: bool,
    pub max_interventions: usize,
    pub intervention_bound: usize,
    pub interventions_ok: bool,
    /// Set when a cap forced a random subset of controls or measures.
    pub sampled: bool,
    pub pass: bool,
}

/// Number of controls or measures drawn when full enumeration is capped.
const SAMPLE_SIZE: usize = 2000;

/// Checks that `(u*, P*)` is a saddle point: its value equals the root value,
/// no control does better against `P*`, and no fixed measure does worse
/// against `u*`.
pub fn verify_saddle(field: &ValueField, caps: &EnumerationCaps, seed: u64) -> Result<SaddleReport> {
    let problem = field.problem();
    let k = field.budget();
    let root_value = field.root_value()?;
    let u_star = extract_optimal_control(field);
    let p_star = extract_worst_case_strategy(field);
    let pair_value = evaluate_pair(problem, &u_star, &p_star, k)?;

    let mut sampled = false;
    let controls = match enumerate_controls(problem, k, caps) {
        Ok(c) => c,
        Err(Error::InstanceTooLarge { .. }) => {
            sampled = true;
            let mut rng = seeded(seed);
            (0..SAMPLE_SIZE).map(|_| random_control(problem, k, &mut rng)).collect()
        }
        Err(e) => return Err(e),
    };
    let mut best_deviation_value = f64::INFINITY;
    for u in &controls {
        best_deviation_value = best_deviation_value.min(evaluate_pair(problem, u, &p_star, k)?);
    }

    let induced = induced_histories(problem, &u_star, k)?;
    let radices: Vec<usize> = induced
        .iter()
        .map(|(node, h)| {
            let path = problem.lattice.path(*node);
            problem.kernels.kernel_set(*node, path.view(), h).len()
        })
        .collect();
    let count = radices.iter().try_fold(1u128, |acc, &r| acc.checked_mul(r as u128));
    let mut measures = Vec::new();
    match count {
        Some(c) if c <= caps.max_strategies as u128 => {
            let mut digits = vec![0usize; radices.len()];
            loop {
                measures.push(node_measure(&induced, &digits));
                if !crate::expectation::advance_mixed_radix(&mut digits, &radices) {
                    break;
                }
            }
        }
        _ => {
            sampled = true;
            let mut rng = seeded(seed ^ 0x5eed);
            for _ in 0..SAMPLE_SIZE {
                let digits: Vec<usize> = radices.iter().map(|&r| rng.random_range(0..r)).collect();
                measures.push(node_measure(&induced, &digits));
            }
        }
    }
    let mut worst_measure_value = f64::NEG_INFINITY;
    for p in &measures {
        worst_measure_value = worst_measure_value.max(evaluate_pair(problem, &u_star, p, k)?);
    }

    let most = max_interventions(problem, &u_star, k)?;
    let bound = problem.intervention_bound();
    let pair_ok = (pair_value - root_value).abs() <= 1e-9;
    let controls_ok = best_deviation_value >= root_value - 1e-9;
    let measures_ok = worst_measure_value <= root_value + 1e-9;
    let interventions_ok = most <= bound;
    Ok(SaddleReport {
        root_value,
        pair_value,
        pair_ok,
        controls_checked: controls.len(),
        best_deviation_value,
        controls_ok,
        measures_checked: measures.len(),
        worst_measure_value,
        measures_ok,
        max_interventions: most,
        intervention_bound: bound,
        interventions_ok,
        sampled,
        pass: pair_ok && controls_ok && measures_ok && interventions_ok,
    })
}

fn node_measure(induced: &[(NodeId, InterventionHistory)], digits: &[usize]) -> NodeMeasure {
    NodeMeasure {
        choices: induced.iter().map(|(n, _)| *n).zip(digits.iter().copied()).collect(),
    }
}

/// Uniformly random number of impulses (within the remaining budget) at each
/// interior node, with uniformly random marks.
pub fn random_control<R: Rng>(problem: &ImpulseProblem, budget: usize, rng: &mut R) -> TableControl {
    let lattice = &problem.lattice;
    let mut control = TableControl::default();
    let mut stack = vec![(NodeId::ROOT, budget)];
    while let Some((node, left)) = stack.pop() {
        if lattice.is_leaf(node) {
            continue;
        }
        let count = if problem.impulse_count() == 0 { 0 } else { rng.random_range(0..=left) };
        if count > 0 {
            let seq = (0..count)
                .map(|_| rng.random_range(0..problem.impulse_count()))
                .collect();
            control.impulses.insert(node, seq);
        }
        for child in lattice.children(node) {
            stack.push((child, left - count));
        }
    }
    control
}
