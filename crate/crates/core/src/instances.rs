//! Reference instances and a seeded random instance generator.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::{
    AffineReward, ConstantCost, ConstantKernels, ImpulseProblem, KernelSet, Lattice, RandomCost, RandomKernels,
    RandomReward, TimeGrid,
};
use crate::random::seeded;

/// One step, two branches `+1/-1`, kernels `{(0.5, 0.5), (0.9, 0.1)}`, a
/// single impulse that lowers the terminal payoff by 2 at unit cost.
pub fn t1() -> ImpulseProblem {
    t1_with_cost(1.0, 1.0, 3.0)
}

/// T1 with a different constant cost, `delta` and `C0`.
pub fn t1_with_cost(cost: f64, delta: f64, c0: f64) -> ImpulseProblem {
    let lattice = Lattice::uniform(TimeGrid::new(1, 1.0).expect("valid grid"), &[vec![1.0], vec![-1.0]], 1)
        .expect("valid lattice");
    ImpulseProblem::new(
        lattice,
        vec![vec![-2.0]],
        Arc::new(ConstantKernels(KernelSet::new(vec![vec![0.5, 0.5], vec![0.9, 0.1]]))),
        Arc::new(AffineReward {
            weights: vec![1.0],
            impulse_shift: vec![-2.0],
            max_effective: Some(1),
            clamp: None,
        }),
        Arc::new(ConstantCost(cost)),
        delta,
        c0,
    )
}

/// T1 with intervention cost `2 C0 = 6`, so intervening never pays.
pub fn t1_costly() -> ImpulseProblem {
    t1_with_cost(6.0, 6.0, 3.0)
}

/// Shape of a random instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub steps: usize,
    pub branches: usize,
    pub kernels: usize,
    pub impulses: usize,
    #[serde(default)]
    pub history_dependent_kernels: bool,
    /// Bound on `|phi|`; also `C0`.
    #[serde(default = "default_bound")]
    pub bound: f64,
    /// Cost lower bound `delta`; costs are uniform on `[delta, bound]`.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_bound() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.25
}

impl InstanceShape {
    pub fn new(steps: usize, branches: usize, kernels: usize, impulses: usize) -> Self {
        Self {
            steps,
            branches,
            kernels,
            impulses,
            history_dependent_kernels: true,
            bound: default_bound(),
            delta: default_delta(),
        }
    }
}

const INCREMENT_CHOICES: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// Random instance: increments uniform in `{-2, -1, 1, 2}`, kernel entries
/// drawn from the seed and normalised, and `phi`, `c` bounded random tables.
pub fn random_instance(seed: u64, shape: &InstanceShape) -> Result<ImpulseProblem> {
    let mut rng = seeded(seed);
    let increments: Vec<Vec<Vec<f64>>> = (0..shape.steps)
        .map(|_| {
            (0..shape.branches)
                .map(|_| vec![INCREMENT_CHOICES[rng.random_range(0..INCREMENT_CHOICES.len())]])
                .collect()
        })
        .collect();
    let lattice = Lattice::new(TimeGrid::new(shape.steps, 1.0)?, shape.branches, &increments, 1)?;
    let impulses = (0..shape.impulses)
        .map(|_| vec![INCREMENT_CHOICES[rng.random_range(0..INCREMENT_CHOICES.len())]])
        .collect();
    let kernel_seed = rng.random();
    let reward_seed = rng.random();
    let cost_seed = rng.random();
    Ok(ImpulseProblem::new(
        lattice,
        impulses,
        Arc::new(RandomKernels::new(
            kernel_seed,
            shape.kernels,
            shape.branches,
            shape.history_dependent_kernels,
        )?),
        Arc::new(RandomReward {
            seed: reward_seed,
            bound: shape.bound,
        }),
        Arc::new(RandomCost {
            seed: cost_seed,
            low: shape.delta,
            high: shape.bound,
        }),
        shape.delta,
        shape.bound,
    ))
}
