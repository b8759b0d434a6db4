//! Optimal stopping under the nonlinear expectation: the controller picks a
//! stopping rule to minimise the payoff, nature picks kernels to maximise it.

use serde::Serialize;

use super::{dot, sup_expectation};
use crate::error::{Error, Result};
use crate::lattice::{InterventionHistory, KernelProvider, KernelSet, Lattice, NodeId, PathBuffer, PathView};
use crate::oracle::EnumerationCaps;

/// Stopping membership tolerance: a node is in the stopping region when
/// `Y <= X + STOP_TOLERANCE`.
pub const STOP_TOLERANCE: f64 = 1e-9;

/// Obstacle `X` on every node, stored per depth.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleProcess {
    pub values: Vec<Vec<f64>>,
}

impl ObstacleProcess {
    pub fn new(lattice: &Lattice, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != lattice.steps() + 1 {
            return Err(Error::MissingValue(format!(
                "obstacle has {} levels, lattice has {}",
                values.len(),
                lattice.steps() + 1
            )));
        }
        for (depth, level) in values.iter().enumerate() {
            if level.len() as u64 != lattice.width(depth) {
                return Err(Error::MissingValue(format!(
                    "obstacle level {depth} has {} values",
                    level.len()
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn from_fn<F>(lattice: &Lattice, mut f: F) -> Self
    where
        F: FnMut(NodeId, PathView<'_>) -> f64,
    {
        let values = (0..=lattice.steps())
            .map(|d| {
                lattice
                    .level(d)
                    .map(|node| f(node, lattice.path(node).view()))
                    .collect()
            })
            .collect();
        Self { values }
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.values[node.depth][node.index as usize]
    }
}

/// Snell envelope of an obstacle, with its stopping region and the canonical
/// worst-case kernel index at every interior node.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingSolution {
    pub values: Vec<Vec<f64>>,
    pub stop: Vec<Vec<bool>>,
    pub worst_kernel: Vec<Vec<usize>>,
}

impl StoppingSolution {
    pub fn root_value(&self) -> f64 {
        self.values[0][0]
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.values[node.depth][node.index as usize]
    }

    pub fn stops_at(&self, node: NodeId) -> bool {
        self.stop[node.depth][node.index as usize]
    }
}

/// `Y(leaf) = X(leaf)`, `Y = min(X, max_p E^p[Y(children)])`; the stopping
/// region is `{Y = X}` within [`STOP_TOLERANCE`] and `tau*` is its first
/// hitting time.
pub fn solve_optimal_stopping(
    lattice: &Lattice,
    obstacle: &ObstacleProcess,
    history: &InterventionHistory,
    kernels: &dyn KernelProvider,
) -> StoppingSolution {
    let levels = lattice.steps() + 1;
    let mut sol = StoppingSolution {
        values: (0..levels).map(|d| vec![0.0; lattice.width(d) as usize]).collect(),
        stop: (0..levels).map(|d| vec![false; lattice.width(d) as usize]).collect(),
        worst_kernel: (0..levels).map(|d| vec![0; lattice.width(d) as usize]).collect(),
    };
    let mut path = PathBuffer::root(lattice.dimension());
    snell(lattice, obstacle, history, kernels, lattice.root(), &mut path, &mut sol);
    sol
}

fn snell(
    lattice: &Lattice,
    obstacle: &ObstacleProcess,
    history: &InterventionHistory,
    kernels: &dyn KernelProvider,
    node: NodeId,
    path: &mut PathBuffer,
    sol: &mut StoppingSolution,
) -> f64 {
    let (d, i) = (node.depth, node.index as usize);
    let x = obstacle.get(node);
    if lattice.is_leaf(node) {
        sol.values[d][i] = x;
        sol.stop[d][i] = true;
        return x;
    }
    let b = lattice.branch_count();
    let mut child_values = Vec::with_capacity(b);
    for m in 0..b {
        path.push_increment(lattice.increment(d, m));
        child_values.push(snell(lattice, obstacle, history, kernels, lattice.child(node, m), path, sol));
        path.pop();
    }
    let set = kernels.kernel_set(node, path.view(), history);
    let (cont, worst) = sup_expectation(&child_values, &set);
    let y = x.min(cont);
    sol.values[d][i] = y;
    sol.stop[d][i] = y >= x - STOP_TOLERANCE;
    sol.worst_kernel[d][i] = worst;
    y
}

/// Largest amount by which `Y(node) < sum_m p_m Y(child_m)` for some kernel
/// `p`, over interior nodes that neither lie in nor follow the stopping region.
pub fn supermartingale_violation(
    lattice: &Lattice,
    solution: &StoppingSolution,
    history: &InterventionHistory,
    kernels: &dyn KernelProvider,
) -> f64 {
    fn rec(
        lattice: &Lattice,
        sol: &StoppingSolution,
        history: &InterventionHistory,
        kernels: &dyn KernelProvider,
        node: NodeId,
        path: &mut PathBuffer,
    ) -> f64 {
        if lattice.is_leaf(node) || sol.stops_at(node) {
            return 0.0;
        }
        let children: Vec<f64> = lattice.children(node).map(|c| sol.value(c)).collect();
        let set = kernels.kernel_set(node, path.view(), history);
        let mut worst = set
            .iter()
            .map(|p| dot(&children, p) - sol.value(node))
            .fold(0.0, f64::max);
        for m in 0..lattice.branch_count() {
            path.push_increment(lattice.increment(node.depth, m));
            worst = worst.max(rec(lattice, sol, history, kernels, lattice.child(node, m), path));
            path.pop();
        }
        worst
    }
    let mut path = PathBuffer::root(lattice.dimension());
    rec(lattice, solution, history, kernels, lattice.root(), &mut path)
}

/// Linear expectation of `X_tau` where `tau` is the first node flagged in
/// `stop` (leaves always stop) and the measure takes kernel `measure[d][i]` at
/// each interior node.
pub fn evaluate_stopping(
    lattice: &Lattice,
    obstacle: &ObstacleProcess,
    stop: &[Vec<bool>],
    measure: &[Vec<usize>],
    history: &InterventionHistory,
    kernels: &dyn KernelProvider,
) -> Result<f64> {
    fn rec(
        lattice: &Lattice,
        obstacle: &ObstacleProcess,
        stop: &[Vec<bool>],
        measure: &[Vec<usize>],
        history: &InterventionHistory,
        kernels: &dyn KernelProvider,
        node: NodeId,
        path: &mut PathBuffer,
    ) -> Result<f64> {
        let (d, i) = (node.depth, node.index as usize);
        if lattice.is_leaf(node) || stop[d][i] {
            return Ok(obstacle.get(node));
        }
        let set = kernels.kernel_set(node, path.view(), history);
        let p = set.get(measure[d][i]).ok_or(Error::KernelIndexOutOfRange {
            node,
            index: measure[d][i],
            available: set.len(),
        })?;
        let mut total = 0.0;
        for m in 0..lattice.branch_count() {
            path.push_increment(lattice.increment(d, m));
            let v = rec(lattice, obstacle, stop, measure, history, kernels, lattice.child(node, m), path)?;
            path.pop();
            total += p[m] * v;
        }
        Ok(total)
    }
    let mut path = PathBuffer::root(lattice.dimension());
    rec(lattice, obstacle, stop, measure, history, kernels, lattice.root(), &mut path)
}

/// Brute-force upper and lower values of the stopping game at the root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoppingOracleValues {
    /// `min_tau max_P E^P[X_tau]`
    pub upper: f64,
    /// `max_P min_tau E^P[X_tau]`
    pub lower: f64,
    pub stopping_rules: u64,
    pub measures: u64,
}

/// Flat breadth-first tables used by the enumeration.
struct FlatTree {
    obstacle: Vec<f64>,
    /// Kernel set per interior node (empty for leaves).
    kernels: Vec<KernelSet>,
    first_child: Vec<usize>,
    interior: usize,
    branch_count: usize,
}

impl FlatTree {
    fn build(
        lattice: &Lattice,
        obstacle: &ObstacleProcess,
        history: &InterventionHistory,
        provider: &dyn KernelProvider,
    ) -> Self {
        let n = lattice.steps();
        let b = lattice.branch_count();
        let mut flat_obstacle = Vec::new();
        let mut kernels = Vec::new();
        let mut first_child = Vec::new();
        let mut interior = 0;
        for depth in 0..=n {
            for node in lattice.level(depth) {
                flat_obstacle.push(obstacle.get(node));
                if depth < n {
                    interior += 1;
                    kernels.push(provider.kernel_set(node, lattice.path(node).view(), history));
                    first_child.push(lattice.global_index(lattice.child(node, 0)) as usize);
                }
            }
        }
        Self {
            obstacle: flat_obstacle,
            kernels,
            first_child,
            interior,
            branch_count: b,
        }
    }

    /// Stopping rules as flags on interior nodes; only distinct stopping times
    /// are produced (nothing below a stopping node is branched on).
    fn stopping_rules(&self, cap: u64) -> Result<Vec<Vec<bool>>> {
        let count = self.rule_count(0);
        if count > cap as u128 {
            return Err(Error::InstanceTooLarge {
                what: "stopping rules",
                count,
                cap: cap as u128,
            });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut rule = vec![false; self.interior];
        self.expand(vec![0], &mut rule, &mut out);
        Ok(out)
    }

    fn rule_count(&self, g: usize) -> u128 {
        if g >= self.interior {
            return 1;
        }
        let fc = self.first_child[g];
        1u128.saturating_add(
            (0..self.branch_count)
                .map(|m| self.rule_count(fc + m))
                .fold(1u128, |a, c| a.saturating_mul(c)),
        )
    }

    /// Enumerates all completions of `rule` given a frontier of undecided
    /// interior nodes.
    fn expand(&self, mut frontier: Vec<usize>, rule: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
        while let Some(&g) = frontier.last() {
            if g >= self.interior {
                frontier.pop();
            } else {
                break;
            }
        }
        let Some(g) = frontier.pop() else {
            out.push(rule.clone());
            return;
        };
        // stop at g
        rule[g] = true;
        self.expand(frontier.clone(), rule, out);
        rule[g] = false;
        // continue at g
        let fc = self.first_child[g];
        let mut next = frontier;
        next.extend(fc..fc + self.branch_count);
        self.expand(next, rule, out);
    }

    /// Linear (per-node kernel) or nonlinear (`None`) value of a stopping rule.
    fn evaluate(&self, rule: &[bool], measure: Option<&[usize]>, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(&self.obstacle);
        let b = self.branch_count;
        let mut children = vec![0.0; b];
        for g in (0..self.interior).rev() {
            if rule[g] {
                continue;
            }
            let fc = self.first_child[g];
            children.copy_from_slice(&scratch[fc..fc + b]);
            scratch[g] = match measure {
                Some(m) => dot(&children, self.kernels[g].get(m[g]).expect("index in range")),
                None => sup_expectation(&children, &self.kernels[g]).0,
            };
        }
        scratch[0]
    }
}

/// Upper value: minimum over every stopping rule of the nonlinear expectation
/// of the stopped obstacle. Lower value: maximum over every node-wise kernel
/// assignment of the minimum over stopping rules of the linear expectation.
/// Both are computed by exhaustive enumeration, independently of the Snell
/// recursion.
pub fn stopping_value_oracle(
    lattice: &Lattice,
    obstacle: &ObstacleProcess,
    history: &InterventionHistory,
    kernels: &dyn KernelProvider,
    caps: &EnumerationCaps,
) -> Result<StoppingOracleValues> {
    let nodes = lattice.node_count();
    if nodes > caps.max_nodes as u128 {
        return Err(Error::InstanceTooLarge {
            what: "stopping oracle nodes",
            count: nodes,
            cap: caps.max_nodes as u128,
        });
    }
    let tree = FlatTree::build(lattice, obstacle, history, kernels);
    let rules = tree.stopping_rules(caps.max_controls)?;

    let measure_count = tree
        .kernels
        .iter()
        .fold(1u128, |a, k| a.saturating_mul(k.len() as u128));
    if measure_count > caps.max_strategies as u128 {
        return Err(Error::InstanceTooLarge {
            what: "measure assignments",
            count: measure_count,
            cap: caps.max_strategies as u128,
        });
    }

    let mut scratch = Vec::new();
    let upper = rules
        .iter()
        .map(|r| tree.evaluate(r, None, &mut scratch))
        .fold(f64::INFINITY, f64::min);

    let radices: Vec<usize> = tree.kernels.iter().map(KernelSet::len).collect();
    let mut measure = vec![0usize; tree.interior];
    let mut lower = f64::NEG_INFINITY;
    loop {
        let best_response = rules
            .iter()
            .map(|r| tree.evaluate(r, Some(&measure), &mut scratch))
            .fold(f64::INFINITY, f64::min);
        lower = lower.max(best_response);
        if !advance_mixed_radix(&mut measure, &radices) {
            break;
        }
    }
    Ok(StoppingOracleValues {
        upper,
        lower,
        stopping_rules: rules.len() as u64,
        measures: measure_count as u64,
    })
}

/// Increments a mixed-radix counter; returns `false` after the last value.
pub(crate) fn advance_mixed_radix(digits: &mut [usize], radices: &[usize]) -> bool {
    for (d, &r) in digits.iter_mut().zip(radices) {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ConstantKernels, TimeGrid};

    fn t1() -> (Lattice, ConstantKernels) {
        let lat = Lattice::uniform(TimeGrid::new(1, 1.0).unwrap(), &[vec![1.0], vec![-1.0]], 1).unwrap();
        let k = ConstantKernels(KernelSet::new(vec![vec![0.5, 0.5], vec![0.9, 0.1]]));
        (lat, k)
    }

    fn obstacle(lat: &Lattice, root: f64) -> ObstacleProcess {
        ObstacleProcess::new(lat, vec![vec![root], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn constant_obstacle_stops_immediately() {
        let (lat, k) = t1();
        let x = ObstacleProcess::new(&lat, vec![vec![5.0], vec![5.0, 5.0]]).unwrap();
        let sol = solve_optimal_stopping(&lat, &x, &InterventionHistory::empty(), &k);
        assert_eq!(sol.values, vec![vec![5.0], vec![5.0, 5.0]]);
        assert!(sol.stops_at(lat.root()));
    }

    #[test]
    fn t1_stop_at_root() {
        let (lat, k) = t1();
        let sol = solve_optimal_stopping(&lat, &obstacle(&lat, 0.3), &InterventionHistory::empty(), &k);
        assert_eq!(sol.root_value(), 0.3);
        assert!(sol.stops_at(lat.root()));
        assert_eq!(sol.worst_kernel[0][0], 1);
    }

    #[test]
    fn t1_continue_from_root() {
        let (lat, k) = t1();
        let sol = solve_optimal_stopping(&lat, &obstacle(&lat, 2.0), &InterventionHistory::empty(), &k);
        assert!((sol.root_value() - 0.9).abs() < 1e-15);
        assert!(!sol.stops_at(lat.root()));
    }

    #[test]
    fn oracle_on_t1_stop() {
        let (lat, k) = t1();
        let v = stopping_value_oracle(
            &lat,
            &obstacle(&lat, 0.3),
            &InterventionHistory::empty(),
            &k,
            &EnumerationCaps::default(),
        )
        .unwrap();
        assert_eq!(v.stopping_rules, 2);
        assert_eq!(v.measures, 2);
        assert!((v.upper - 0.3).abs() < 1e-15);
        assert!((v.lower - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rule_enumeration_counts_distinct_stopping_times() {
        let lat = Lattice::uniform(
            TimeGrid::new(3, 1.0).unwrap(),
            &[vec![1.0], vec![0.0], vec![-1.0]],
            1,
        )
        .unwrap();
        let k = ConstantKernels(KernelSet::single(vec![0.2, 0.3, 0.5]));
        let x = ObstacleProcess::from_fn(&lat, |_, _| 0.0);
        let tree = FlatTree::build(&lat, &x, &InterventionHistory::empty(), &k);
        // depth 2: 2 rules, depth 1: 1 + 2^3, root: 1 + 9^3
        assert_eq!(tree.stopping_rules(u64::MAX).unwrap().len(), 730);
    }

    #[test]
    fn worst_case_measure_attains_value() {
        let (lat, k) = t1();
        for root in [0.3, 2.0] {
            let x = obstacle(&lat, root);
            let h = InterventionHistory::empty();
            let sol = solve_optimal_stopping(&lat, &x, &h, &k);
            let v = evaluate_stopping(&lat, &x, &sol.stop, &sol.worst_kernel, &h, &k).unwrap();
            assert!((v - sol.root_value()).abs() < 1e-12);
            assert!(supermartingale_violation(&lat, &sol, &h, &k) <= 1e-12);
        }
    }

    #[test]
    fn mixed_radix_visits_every_assignment() {
        let radices = [2, 3, 1];
        let mut d = vec![0; 3];
        let mut n = 1;
        while advance_mixed_radix(&mut d, &radices) {
            n += 1;
        }
        assert_eq!(n, 6);
    }
}
