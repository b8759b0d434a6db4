//! Trinomial-lattice realisation of the uncertain-volatility game.

use std::sync::Arc;

use super::SdeInstance;
use crate::error::{Error, Result};
use crate::lattice::{
    history_count, for_each_history, ImpulseProblem, InterventionCost, InterventionHistory, KernelProvider,
    KernelSet, Lattice, NodeId, PathBuffer, PathView, TerminalReward, TimeGrid, DEFAULT_NODE_CAP, DEFAULT_SCAN_CAP,
};

/// Knobs for [`build_lattice_problem_with`].
#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub node_cap: u128,
    /// Histories up to this length are scanned when `C0` is inferred.
    pub c0_scan_budget: usize,
    pub scan_cap: u128,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            node_cap: DEFAULT_NODE_CAP,
            c0_scan_budget: 2,
            scan_cap: DEFAULT_SCAN_CAP,
        }
    }
}

/// Values of `I^{[v]_m}(path)` for a one-dimensional lattice path, applying
/// the first `m` entries of `v`.
fn jumped(sde: &SdeInstance, path: &[f64], v: &InterventionHistory, m: usize) -> Vec<f64> {
    let mut values = path.to_vec();
    for e in &v.entries()[..m] {
        if e.time >= values.len() {
            break;
        }
        let size = sde.jump.size(&[values[e.time]], &sde.impulses[e.impulse])[0];
        for x in &mut values[e.time..] {
            *x += size;
        }
    }
    values
}

/// Kernel set `{(p_a, 1 - 2 p_a, p_a) : a}` with
/// `p_a = sigma(t_i, I^v(path), a)^2 dt / (2 h^2)`. The middle weight is
/// clamped at zero so that `lambda = 1` does not leave a `-1e-17` entry.
#[derive(Clone, Debug)]
pub struct SdeKernels {
    pub sde: Arc<SdeInstance>,
    pub dt: f64,
    pub h: f64,
}

impl SdeKernels {
    fn probabilities(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> Vec<f64> {
        let values = jumped(&self.sde, path.as_slice(), history, history.len());
        let x = values[node.depth];
        let mean = if self.sde.sigma.uses_path() {
            values.iter().sum::<f64>() / values.len() as f64
        } else {
            x
        };
        self.sde
            .controls
            .iter()
            .map(|&a| {
                let s = self.sde.sigma.eval(x, mean, a);
                s * s * self.dt / (2.0 * self.h * self.h)
            })
            .collect()
    }
}

impl KernelProvider for SdeKernels {
    fn kernel_set(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory) -> KernelSet {
        KernelSet::new(
            self.probabilities(node, path, history)
                .into_iter()
                .map(|p| vec![p, (1.0 - 2.0 * p).max(0.0), p])
                .collect(),
        )
    }
}

/// `phi(path, v) = sum_{i<n} phi~(x_i) dt + psi(x_n)` with `x = I^v(path)`.
#[derive(Clone, Debug)]
pub struct SdeReward {
    pub sde: Arc<SdeInstance>,
    pub dt: f64,
}

impl TerminalReward for SdeReward {
    fn reward(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        let values = jumped(&self.sde, path.as_slice(), history, history.len());
        let n = values.len() - 1;
        let mut total = 0.0;
        for &x in &values[..n] {
            total += self.sde.running.eval(x) * self.dt;
        }
        total + self.sde.terminal.eval(values[n])
    }
}

/// `c(path, v) = l(t_i, x, b)` for the last entry `(i, b)` of `v`, where `x`
/// is the state after every earlier jump but before this one.
#[derive(Clone, Debug)]
pub struct SdeCost {
    pub sde: Arc<SdeInstance>,
}

impl InterventionCost for SdeCost {
    fn cost(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        let Some(last) = history.last() else {
            return 0.0;
        };
        let values = jumped(&self.sde, path.as_slice(), history, history.len() - 1);
        self.sde.cost.eval(values[last.time.min(values.len() - 1)], last.impulse)
    }
}

/// Terminal reward and intervention cost of the game, for `steps` grid steps.
pub fn make_costs(sde: &SdeInstance, steps: usize) -> (SdeReward, SdeCost) {
    let sde = Arc::new(sde.clone());
    (
        SdeReward {
            sde: sde.clone(),
            dt: sde.dt(steps),
        },
        SdeCost { sde },
    )
}

/// Mean and variance of a trinomial kernel on `{+h, 0, -h}`.
pub fn kernel_moments(kernel: &[f64], h: f64) -> (f64, f64) {
    let mean = (kernel[0] - kernel[2]) * h;
    let second = (kernel[0] + kernel[2]) * h * h;
    (mean, second - mean * mean)
}

pub fn build_lattice_problem(sde: &SdeInstance, n: usize, lambda: f64) -> Result<ImpulseProblem> {
    build_lattice_problem_with(sde, n, lambda, &CompileOptions::default())
}

/// Compiles the game onto a trinomial tree with `n` steps and spacing
/// `h = lambda * sigma_max * sqrt(dt)`.
pub fn build_lattice_problem_with(
    sde: &SdeInstance,
    n: usize,
    lambda: f64,
    options: &CompileOptions,
) -> Result<ImpulseProblem> {
    sde.validate()?;
    if sde.dimension != 1 {
        return Err(Error::DimensionMismatch(format!(
            "the lattice compiler needs a one-dimensional state, got {}",
            sde.dimension
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("the lattice needs at least one step".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let dt = sde.dt(n);
    let (_, sigma_max) = sde.sigma.bounds(&sde.controls);
    let h = lambda * sigma_max * dt.sqrt();
    let step = vec![vec![h], vec![0.0], vec![-h]];
    let lattice = Lattice::with_node_cap(TimeGrid::new(n, sde.horizon)?, 3, &vec![step; n], 1, options.node_cap)?;
    let shared = Arc::new(sde.clone());
    let kernels = SdeKernels {
        sde: shared.clone(),
        dt,
        h,
    };
    if lambda < 1.0 {
        check_discretization(&lattice, &kernels)?;
    }
    let (reward, cost) = make_costs(sde, n);
    let c0 = match sde.c0 {
        Some(c0) => c0,
        None => infer_c0(&lattice, sde, &reward, &cost, options)?.max(sde.delta),
    };
    Ok(ImpulseProblem::new(
        lattice,
        sde.impulses.clone(),
        Arc::new(kernels),
        Arc::new(reward),
        Arc::new(cost),
        sde.delta,
        c0,
    ))
}

/// Fails with the first `(node, control)` whose up/down probability exceeds
/// 1/2, scanning with the empty history.
pub fn check_discretization(lattice: &Lattice, kernels: &SdeKernels) -> Result<()> {
    let empty = InterventionHistory::empty();
    for depth in 0..lattice.steps() {
        for node in lattice.level(depth) {
            let path = lattice.path(node);
            let probs = kernels.probabilities(node, path.view(), &empty);
            if let Some((control, &probability)) = probs.iter().enumerate().find(|(_, &p)| p > 0.5 + 1e-12) {
                return Err(Error::InvalidDiscretization {
                    node,
                    control,
                    probability,
                });
            }
        }
    }
    Ok(())
}

/// Largest `|phi|` and `|c|` over histories up to the scan budget.
fn infer_c0(
    lattice: &Lattice,
    sde: &SdeInstance,
    reward: &SdeReward,
    cost: &SdeCost,
    options: &CompileOptions,
) -> Result<f64> {
    let n = lattice.steps();
    let k = options.c0_scan_budget;
    let u = sde.impulses.len();
    let per_leaf = history_count(n, k, u);
    let count = lattice.node_count().saturating_mul(per_leaf);
    if count > options.scan_cap {
        return Err(Error::InstanceTooLarge {
            what: "C0 inference scan (set sdg.c0)",
            count,
            cap: options.scan_cap,
        });
    }
    let mut bound: f64 = 0.0;
    let mut path = PathBuffer::root(1);
    scan(lattice, NodeId::ROOT, &mut path, k, u, reward, cost, &mut bound);
    Ok(bound)
}

#[allow(clippy::too_many_arguments)]
fn scan(
    lattice: &Lattice,
    node: NodeId,
    path: &mut PathBuffer,
    k: usize,
    u: usize,
    reward: &SdeReward,
    cost: &SdeCost,
    bound: &mut f64,
) {
    let n = lattice.steps();
    if lattice.is_leaf(node) {
        for_each_history(0, n - 1, k, u, &mut |h| {
            *bound = bound.max(reward.reward(path.view(), h).abs());
        });
        return;
    }
    for_each_history(0, node.depth, k, u, &mut |h| {
        if h.last().is_some_and(|e| e.time == node.depth) {
            *bound = bound.max(cost.cost(path.view(), h).abs());
        }
    });
    for m in 0..lattice.branch_count() {
        path.push_increment(lattice.increment(node.depth, m));
        scan(lattice, lattice.child(node, m), path, k, u, reward, cost, bound);
        path.pop();
    }
}
