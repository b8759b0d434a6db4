//! Brute-force game values by exhaustive enumeration of controls and
//! adversary strategies, an independent classical impulse-control DP, and a
//! fixed-point uniqueness probe.

mod classical;

pub use classical::classical_impulse_value;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpp::{dpp_residual, solve_truncated, FieldKey, ValueField};
use crate::error::{Error, Result};
use crate::expectation::{dot, sup_expectation};
use crate::extraction::{TableControl, TableStrategy};
use crate::lattice::{for_each_history, ImpulseProblem, InterventionHistory, KernelSet, NodeId, PathBuffer};
use crate::random::seeded;

/// Limits on exhaustive enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCaps {
    pub max_controls: u64,
    pub max_strategies: u64,
    pub max_nodes: u64,
}

impl Default for EnumerationCaps {
    fn default() -> Self {
        Self {
            max_controls: 1_000_000,
            max_strategies: 1_000_000,
            max_nodes: 10_000,
        }
    }
}

/// Flattened instance: nodes in breadth-first order, every reachable
/// `(interior node, history)` pair numbered, and the kernel set of each pair.
struct Enumerator<'a> {
    problem: &'a ImpulseProblem,
    budget: usize,
    nodes: Vec<NodeId>,
    paths: Vec<PathBuffer>,
    interior: usize,
    first_child: Vec<usize>,
    pairs: Vec<(NodeId, InterventionHistory)>,
    pair_index: HashMap<(NodeId, InterventionHistory), usize>,
    pair_kernels: Vec<KernelSet>,
}

impl<'a> Enumerator<'a> {
    fn new(problem: &'a ImpulseProblem, budget: usize, caps: &EnumerationCaps) -> Result<Self> {
        let lattice = &problem.lattice;
        let count = lattice.node_count();
        if count > caps.max_nodes as u128 {
            return Err(Error::InstanceTooLarge {
                what: "lattice nodes",
                count,
                cap: caps.max_nodes as u128,
            });
        }
        let n = lattice.steps();
        let mut nodes = Vec::with_capacity(count as usize);
        let mut first_child = Vec::new();
        for depth in 0..=n {
            for node in lattice.level(depth) {
                nodes.push(node);
                if depth < n {
                    first_child.push(lattice.global_index(lattice.child(node, 0)) as usize);
                }
            }
        }
        let paths: Vec<PathBuffer> = nodes.iter().map(|&node| lattice.path(node)).collect();
        let mut pairs = Vec::new();
        for &node in nodes.iter().take(first_child.len()) {
            for_each_history(0, node.depth, budget, problem.impulse_count(), &mut |h| {
                pairs.push((node, h.clone()));
            });
        }
        let pair_index = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let pair_kernels = pairs
            .iter()
            .map(|(node, h)| {
                let g = lattice.global_index(*node) as usize;
                problem.kernels.kernel_set(*node, paths[g].view(), h)
            })
            .collect();
        Ok(Self {
            problem,
            budget,
            interior: first_child.len(),
            nodes,
            paths,
            first_child,
            pairs,
            pair_index,
            pair_kernels,
        })
    }

    fn branch_count(&self) -> usize {
        self.problem.lattice.branch_count()
    }

    /// Number of node-adapted controls with at most `budget` interventions
    /// per path.
    fn control_count(&self) -> u128 {
        let n = self.problem.lattice.steps();
        let b = self.branch_count() as u32;
        let u = self.problem.impulse_count() as u128;
        // below[r]: controls of a subtree rooted at the current depth
        let mut below = vec![1u128; self.budget + 1];
        for _ in 0..n {
            let next = (0..=self.budget)
                .map(|r| {
                    (0..=r).fold(0u128, |acc, j| {
                        let seqs = if j == 0 { 1 } else { u.saturating_pow(j as u32) };
                        acc.saturating_add(seqs.saturating_mul(below[r - j].saturating_pow(b)))
                    })
                })
                .collect();
            below = next;
        }
        below[self.budget]
    }

    fn strategy_count(&self) -> u128 {
        self.pair_kernels
            .iter()
            .fold(1u128, |acc, k| acc.saturating_mul(k.len() as u128))
    }

    /// Every control as impulse sequences per interior node (breadth-first
    /// index).
    fn controls(&self, cap: u64) -> Result<Vec<Vec<Vec<usize>>>> {
        let count = self.control_count();
        if count > cap as u128 {
            return Err(Error::InstanceTooLarge {
                what: "controls",
                count,
                cap: cap as u128,
            });
        }
        let mut sequences_by_len: Vec<Vec<Vec<usize>>> = vec![vec![vec![]]];
        for len in 1..=self.budget {
            let prev = &sequences_by_len[len - 1];
            let mut next = Vec::new();
            for s in prev {
                for b in 0..self.problem.impulse_count() {
                    let mut t = s.clone();
                    t.push(b);
                    next.push(t);
                }
            }
            sequences_by_len.push(next);
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut current = vec![Vec::new(); self.interior];
        self.expand(vec![(0, self.budget)], &mut current, &sequences_by_len, &mut out);
        Ok(out)
    }

    fn expand(
        &self,
        mut frontier: Vec<(usize, usize)>,
        current: &mut Vec<Vec<usize>>,
        sequences: &[Vec<Vec<usize>>],
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        while frontier.last().is_some_and(|&(g, _)| g >= self.interior) {
            frontier.pop();
        }
        let Some((g, left)) = frontier.pop() else {
            out.push(current.clone());
            return;
        };
        let fc = self.first_child[g];
        for len in 0..=left {
            for seq in &sequences[len] {
                current[g].clone_from(seq);
                let mut next = frontier.clone();
                next.extend((fc..fc + self.branch_count()).map(|c| (c, left - len)));
                self.expand(next, current, sequences, out);
            }
        }
        current[g].clear();
    }

    /// Costs paid, pair visited after acting, and terminal rewards, for one
    /// control.
    fn plan(&self, control: &[Vec<usize>]) -> Plan {
        let problem = self.problem;
        let mut histories: Vec<InterventionHistory> = vec![InterventionHistory::empty(); self.nodes.len()];
        let mut cost = vec![0.0; self.interior];
        let mut pair = vec![0; self.interior];
        let mut reward = vec![0.0; self.nodes.len() - self.interior];
        for g in 0..self.nodes.len() {
            let node = self.nodes[g];
            let view = self.paths[g].view();
            if g >= self.interior {
                reward[g - self.interior] = problem.reward.reward(view, &histories[g]);
                continue;
            }
            let mut h = std::mem::take(&mut histories[g]);
            for &b in &control[g] {
                h = h.appended(node.depth, b);
                cost[g] += problem.cost.cost(view, &h);
            }
            pair[g] = self.pair_index[&(node, h.clone())];
            let fc = self.first_child[g];
            for c in fc..fc + self.branch_count() {
                histories[c] = h.clone();
            }
        }
        Plan { cost, pair, reward }
    }

    /// Value of a plan when the adversary maximises node by node. For a fixed
    /// control the kernel choices at distinct nodes do not interact, so the
    /// supremum over measures is attained by the per-node maximisers and this
    /// is exact.
    fn upper(&self, plan: &Plan, scratch: &mut Vec<f64>) -> f64 {
        self.backward(plan, scratch, |g, children| sup_expectation(children, &self.pair_kernels[plan.pair[g]]).0)
    }

    /// Value of a plan against a strategy given as kernel digits per pair.
    fn against(&self, plan: &Plan, digits: &[usize], scratch: &mut Vec<f64>) -> f64 {
        self.backward(plan, scratch, |g, children| {
            let p = plan.pair[g];
            dot(children, self.pair_kernels[p].get(digits[p]).expect("digit within radix"))
        })
    }

    fn backward<F>(&self, plan: &Plan, scratch: &mut Vec<f64>, mut expect: F) -> f64
    where
        F: FnMut(usize, &[f64]) -> f64,
    {
        let b = self.branch_count();
        scratch.clear();
        scratch.resize(self.interior, 0.0);
        scratch.extend_from_slice(&plan.reward);
        let mut children = vec![0.0; b];
        for g in (0..self.interior).rev() {
            let fc = self.first_child[g];
            children.copy_from_slice(&scratch[fc..fc + b]);
            scratch[g] = plan.cost[g] + expect(g, &children);
        }
        scratch[0]
    }

    fn radices(&self) -> Vec<usize> {
        self.pair_kernels.iter().map(KernelSet::len).collect()
    }

    fn table_control(&self, control: &[Vec<usize>]) -> TableControl {
        TableControl {
            impulses: control
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_empty())
                .map(|(g, s)| (self.nodes[g], s.clone()))
                .collect(),
        }
    }

    fn table_strategy(&self, digits: &[usize]) -> TableStrategy {
        TableStrategy {
            choices: self.pairs.iter().cloned().zip(digits.iter().copied()).collect(),
        }
    }
}

struct Plan {
    cost: Vec<f64>,
    pair: Vec<usize>,
    reward: Vec<f64>,
}

fn decode(mut index: u128, radices: &[usize], digits: &mut [usize]) {
    for (d, &r) in digits.iter_mut().zip(radices) {
        *d = (index % r as u128) as usize;
        index /= r as u128;
    }
}

/// All node-adapted controls with at most `k` interventions on every path,
/// none at the terminal slice, repeated same-time impulses allowed.
pub fn enumerate_controls(problem: &ImpulseProblem, k: usize, caps: &EnumerationCaps) -> Result<Vec<TableControl>> {
    let e = Enumerator::new(problem, k, caps)?;
    Ok(e.controls(caps.max_controls)?
        .iter()
        .map(|c| e.table_control(c))
        .collect())
}

/// All maps from reachable `(interior node, history)` pairs to kernel indices.
pub fn enumerate_strategies(problem: &ImpulseProblem, k: usize, caps: &EnumerationCaps) -> Result<Vec<TableStrategy>> {
    let e = Enumerator::new(problem, k, caps)?;
    let count = strategy_cap(&e, caps)?;
    let radices = e.radices();
    let mut digits = vec![0; radices.len()];
    Ok((0..count)
        .map(|i| {
            decode(i, &radices, &mut digits);
            e.table_strategy(&digits)
        })
        .collect())
}

fn strategy_cap(e: &Enumerator<'_>, caps: &EnumerationCaps) -> Result<u128> {
    let count = e.strategy_count();
    if count > caps.max_strategies as u128 {
        return Err(Error::InstanceTooLarge {
            what: "adversary strategies",
            count,
            cap: caps.max_strategies as u128,
        });
    }
    Ok(count)
}

/// `min_u max_P E^P[phi + costs]` over every enumerated control.
pub fn brute_upper_value(problem: &ImpulseProblem, k: usize, caps: &EnumerationCaps) -> Result<f64> {
    let e = Enumerator::new(problem, k, caps)?;
    let plans: Vec<Plan> = e.controls(caps.max_controls)?.iter().map(|c| e.plan(c)).collect();
    Ok(upper_of(&e, &plans))
}

fn upper_of(e: &Enumerator<'_>, plans: &[Plan]) -> f64 {
    plans
        .par_iter()
        .map_init(Vec::new, |scratch, plan| e.upper(plan, scratch))
        .reduce(|| f64::INFINITY, f64::min)
}

/// `max_S min_u E^{S(u)}[phi + costs]` over every enumerated strategy and
/// control.
pub fn brute_lower_value(problem: &ImpulseProblem, k: usize, caps: &EnumerationCaps) -> Result<f64> {
    let e = Enumerator::new(problem, k, caps)?;
    let count = strategy_cap(&e, caps)?;
    let plans: Vec<Plan> = e.controls(caps.max_controls)?.iter().map(|c| e.plan(c)).collect();
    Ok(lower_of(&e, &plans, count))
}

fn lower_of(e: &Enumerator<'_>, plans: &[Plan], count: u128) -> f64 {
    let radices = e.radices();
    (0..count as u64)
        .into_par_iter()
        .map_init(
            || (vec![0usize; radices.len()], Vec::new()),
            |(digits, scratch), i| {
                decode(i as u128, &radices, digits);
                plans
                    .iter()
                    .map(|plan| e.against(plan, digits, scratch))
                    .fold(f64::INFINITY, f64::min)
            },
        )
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnumerationCounts {
    pub controls: u64,
    pub strategies: u64,
    pub pairs: u64,
}

/// Oracle comparison of the brute-force game values with the solver.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GameValueReport {
    pub upper: f64,
    pub lower: f64,
    pub dp_value: f64,
    pub k: usize,
    pub counts: EnumerationCounts,
    pub seed: Option<u64>,
    pub pass: bool,
}

/// Checks `upper = lower = Y^k(root)` within 1e-9.
pub fn check_game_value(
    problem: &ImpulseProblem,
    k: usize,
    caps: &EnumerationCaps,
    seed: Option<u64>,
) -> Result<GameValueReport> {
    let e = Enumerator::new(problem, k, caps)?;
    let count = strategy_cap(&e, caps)?;
    let plans: Vec<Plan> = e.controls(caps.max_controls)?.iter().map(|c| e.plan(c)).collect();
    let upper = upper_of(&e, &plans);
    let lower = lower_of(&e, &plans, count);
    let dp_value = solve_truncated(problem, k)?.root_value()?;
    let pass = (upper - lower).abs() <= 1e-9 && (upper - dp_value).abs() <= 1e-9 && (lower - dp_value).abs() <= 1e-9;
    Ok(GameValueReport {
        upper,
        lower,
        dp_value,
        k,
        counts: EnumerationCounts {
            controls: plans.len() as u64,
            strategies: count as u64,
            pairs: e.pairs.len() as u64,
        },
        seed,
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PerturbationTrial {
    pub depth: usize,
    pub node_id: u64,
    pub history: String,
    pub budget: usize,
    pub epsilon: f64,
    pub residual: f64,
    pub detected: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UniquenessReport {
    pub base_residual: f64,
    pub trials: Vec<PerturbationTrial>,
    pub seed: u64,
    pub pass: bool,
}

/// Perturbs one random entry of the field per trial by a random
/// `eps in [0.01, 1]` and checks the recursion residual rises to at least
/// `eps - 1e-9`.
pub fn uniqueness_probe(field: &ValueField, trials: usize, seed: u64) -> Result<UniquenessReport> {
    let base_residual = dpp_residual(field)?;
    let keys: Vec<FieldKey> = field.keys_sorted();
    if keys.is_empty() {
        return Err(Error::MissingValue("empty field".into()));
    }
    let mut work = field.clone();
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let key = &keys[rng.random_range(0..keys.len())];
        let epsilon = rng.random_range(0.01..=1.0);
        let old = work.adjust(key, epsilon)?;
        let residual = dpp_residual(&work)?;
        work.set(key, old)?;
        out.push(PerturbationTrial {
            depth: key.node.depth,
            node_id: key.node.index,
            history: key.history.encode(),
            budget: key.budget,
            epsilon,
            residual,
            detected: residual >= epsilon - 1e-9,
        });
    }
    let pass = base_residual <= 1e-12 && out.iter().all(|t| t.detected);
    Ok(UniquenessReport {
        base_residual,
        trials: out,
        seed,
        pass,
    })
}

/// Number of controls and strategies that full enumeration would visit,
/// without enumerating.
pub fn enumeration_counts(problem: &ImpulseProblem, k: usize, caps: &EnumerationCaps) -> Result<(u128, u128)> {
    let e = Enumerator::new(problem, k, caps)?;
    Ok((e.control_count(), e.strategy_count()))
}
