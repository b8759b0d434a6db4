//! Nonlinear expectations on the lattice.
//!
//! The conditional nonlinear expectation of a functional is the backward
//! recursion `V(node) = max_{p in K(node, v)} sum_m p_m V(child_m)`: a
//! supremum of linear expectations over every measure that can be assembled
//! from the node-wise kernel sets. On a finite tree the supremum is attained,
//! and the recursion is exact.

mod stopping;
mod sweep;

pub use stopping::{
    evaluate_stopping, solve_optimal_stopping, stopping_value_oracle, supermartingale_violation,
    ObstacleProcess, StoppingOracleValues, StoppingSolution, STOP_TOLERANCE,
};
pub(crate) use stopping::advance_mixed_radix;
pub use sweep::{random_functional, random_obstacle, stopping_check, tower_sweep, StoppingCheck, TowerReport};

use crate::error::{Error, Result};
use crate::lattice::{InterventionHistory, KernelProvider, KernelSet, Lattice, NodeId, PathBuffer, PathView};

/// Ties in the argmax are broken towards the smallest index within this
/// tolerance.
pub const ARGMAX_TOLERANCE: f64 = 1e-12;

/// `sum_m p_m * value_m`, summed in branch order.
pub fn one_step_expectation(child_values: &[f64], kernel: &[f64]) -> Result<f64> {
    if child_values.len() != kernel.len() {
        return Err(Error::LengthMismatch {
            expected: kernel.len(),
            actual: child_values.len(),
        });
    }
    Ok(dot(child_values, kernel))
}

#[inline]
pub(crate) fn dot(values: &[f64], kernel: &[f64]) -> f64 {
    values.iter().zip(kernel).map(|(v, p)| v * p).sum()
}

/// Largest one-step expectation over the set, with the smallest index whose
/// expectation is within [`ARGMAX_TOLERANCE`] of it.
pub fn one_step_nonlinear_expectation(child_values: &[f64], kernels: &KernelSet) -> Result<(f64, usize)> {
    if kernels.is_empty() {
        return Err(Error::EmptyKernelSet(String::new()));
    }
    for k in kernels.iter() {
        if k.len() != child_values.len() {
            return Err(Error::LengthMismatch {
                expected: k.len(),
                actual: child_values.len(),
            });
        }
    }
    Ok(sup_expectation(child_values, kernels))
}

/// Unchecked variant used inside the solvers, where lengths are guaranteed by
/// validation.
#[inline]
pub(crate) fn sup_expectation(child_values: &[f64], kernels: &KernelSet) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut expectations = [0.0f64; 16];
    let mut spill = Vec::new();
    let many = kernels.len() > expectations.len();
    for (j, k) in kernels.iter().enumerate() {
        let e = dot(child_values, k);
        if many {
            spill.push(e);
        } else {
            expectations[j] = e;
        }
        if e > best {
            best = e;
        }
    }
    let list: &[f64] = if many { &spill } else { &expectations[..kernels.len()] };
    let index = list
        .iter()
        .position(|&e| e >= best - ARGMAX_TOLERANCE)
        .unwrap_or(0);
    (best, index)
}

/// Real-valued map on all nodes of one depth, indexed by node index.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFunctional {
    pub depth: usize,
    pub values: Vec<f64>,
}

impl NodeFunctional {
    pub fn new(lattice: &Lattice, depth: usize, values: Vec<f64>) -> Result<Self> {
        if depth > lattice.steps() {
            return Err(Error::InvalidArgument(format!(
                "depth {depth} beyond the horizon {}",
                lattice.steps()
            )));
        }
        let width = lattice.width(depth) as usize;
        if values.len() != width {
            return Err(Error::MissingValue(format!(
                "functional at depth {depth} has {} values for {width} nodes",
                values.len()
            )));
        }
        Ok(Self { depth, values })
    }

    pub fn from_fn<F>(lattice: &Lattice, depth: usize, mut f: F) -> Self
    where
        F: FnMut(NodeId, PathView<'_>) -> f64,
    {
        let values = lattice
            .level(depth)
            .map(|node| f(node, lattice.path(node).view()))
            .collect();
        Self { depth, values }
    }

    pub fn constant(lattice: &Lattice, depth: usize, c: f64) -> Self {
        Self {
            depth,
            values: vec![c; lattice.width(depth) as usize],
        }
    }

    pub fn get(&self, node: NodeId) -> f64 {
        debug_assert_eq!(node.depth, self.depth);
        self.values[node.index as usize]
    }
}

/// `E^v_t[f]` at `node` for a functional `f` on a deeper level, with the kernel
/// sets read under the fixed history `v`.
pub fn conditional_nonlinear_expectation(
    lattice: &Lattice,
    kernels: &dyn KernelProvider,
    node: NodeId,
    history: &InterventionHistory,
    f: &NodeFunctional,
) -> Result<f64> {
    check_functional(lattice, node, f)?;
    let mut path = lattice.path(node);
    Ok(recurse(lattice, kernels, node, history, f, &mut path))
}

fn check_functional(lattice: &Lattice, node: NodeId, f: &NodeFunctional) -> Result<()> {
    if node.depth > f.depth {
        return Err(Error::InvalidArgument(format!(
            "{node} lies below the functional's depth {}",
            f.depth
        )));
    }
    if f.values.len() != lattice.width(f.depth) as usize {
        return Err(Error::MissingValue(format!(
            "functional at depth {} is missing node values",
            f.depth
        )));
    }
    Ok(())
}

fn recurse(
    lattice: &Lattice,
    kernels: &dyn KernelProvider,
    node: NodeId,
    history: &InterventionHistory,
    f: &NodeFunctional,
    path: &mut PathBuffer,
) -> f64 {
    if node.depth == f.depth {
        return f.get(node);
    }
    let b = lattice.branch_count();
    let mut child_values = Vec::with_capacity(b);
    for m in 0..b {
        path.push_increment(lattice.increment(node.depth, m));
        child_values.push(recurse(lattice, kernels, lattice.child(node, m), history, f, path));
        path.pop();
    }
    let set = kernels.kernel_set(node, path.view(), history);
    sup_expectation(&child_values, &set).0
}

/// Collapses `f` to the functional `E^v_t[f]` on level `depth`.
pub fn collapse(
    lattice: &Lattice,
    kernels: &dyn KernelProvider,
    history: &InterventionHistory,
    f: &NodeFunctional,
    depth: usize,
) -> Result<NodeFunctional> {
    if depth > f.depth {
        return Err(Error::InvalidArgument(format!(
            "cannot collapse depth-{} functional to depth {depth}",
            f.depth
        )));
    }
    check_functional(lattice, lattice.root(), f)?;
    let values = lattice
        .level(depth)
        .map(|node| {
            let mut path = lattice.path(node);
            recurse(lattice, kernels, node, history, f, &mut path)
        })
        .collect();
    Ok(NodeFunctional { depth, values })
}

/// `|E_s[E_t[f]] - E_s[f]|` at `node` (of depth `s`), evaluating the nested
/// form by first collapsing `f` onto level `t`.
pub fn tower_check(
    lattice: &Lattice,
    kernels: &dyn KernelProvider,
    node: NodeId,
    intermediate_depth: usize,
    history: &InterventionHistory,
    f: &NodeFunctional,
) -> Result<f64> {
    if intermediate_depth < node.depth || intermediate_depth > f.depth {
        return Err(Error::InvalidArgument(format!(
            "intermediate depth {intermediate_depth} outside [{}, {}]",
            node.depth, f.depth
        )));
    }
    let inner = collapse(lattice, kernels, history, f, intermediate_depth)?;
    let nested = conditional_nonlinear_expectation(lattice, kernels, node, history, &inner)?;
    let direct = conditional_nonlinear_expectation(lattice, kernels, node, history, f)?;
    Ok((nested - direct).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ConstantKernels, TimeGrid};

    fn t1_kernels() -> KernelSet {
        KernelSet::new(vec![vec![0.5, 0.5], vec![0.9, 0.1]])
    }

    fn pm_one(n: usize) -> Lattice {
        Lattice::uniform(TimeGrid::new(n, 1.0).unwrap(), &[vec![1.0], vec![-1.0]], 1).unwrap()
    }

    #[test]
    fn linear_one_step() {
        assert_eq!(one_step_expectation(&[1.0, -1.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((one_step_expectation(&[1.0, -1.0], &[0.9, 0.1]).unwrap() - 0.8).abs() < 1e-15);
        assert!((one_step_expectation(&[2.5; 3], &[0.2, 0.3, 0.5]).unwrap() - 2.5).abs() < 1e-15);
        assert!(one_step_expectation(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn nonlinear_one_step() {
        let (v, i) = one_step_nonlinear_expectation(&[1.0, -1.0], &t1_kernels()).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(i, 1);
        let (v, i) = one_step_nonlinear_expectation(&[3.0, 3.0], &t1_kernels()).unwrap();
        assert_eq!((v, i), (3.0, 0));
        let single = KernelSet::single(vec![0.3, 0.7]);
        let (v, _) = one_step_nonlinear_expectation(&[1.0, 2.0], &single).unwrap();
        assert_eq!(v, one_step_expectation(&[1.0, 2.0], &[0.3, 0.7]).unwrap());
        assert!(one_step_nonlinear_expectation(&[1.0], &KernelSet::new(vec![])).is_err());
    }

    #[test]
    fn many_kernels_take_the_spill_path() {
        let kernels: Vec<Vec<f64>> = (0..20)
            .map(|j| {
                let p = j as f64 / 19.0;
                vec![p, 1.0 - p]
            })
            .collect();
        let (v, i) = sup_expectation(&[1.0, 0.0], &KernelSet::new(kernels));
        assert_eq!((v, i), (1.0, 19));
    }

    #[test]
    fn conditional_on_t1() {
        let lat = pm_one(1);
        let k = ConstantKernels(t1_kernels());
        let h = InterventionHistory::empty();
        let f = NodeFunctional::from_fn(&lat, 1, |_, p| p.last()[0]);
        let v = conditional_nonlinear_expectation(&lat, &k, lat.root(), &h, &f).unwrap();
        assert!((v - 0.8).abs() < 1e-15);
        let c = NodeFunctional::constant(&lat, 1, 3.0);
        assert_eq!(conditional_nonlinear_expectation(&lat, &k, lat.root(), &h, &c).unwrap(), 3.0);
        let leaf = NodeId::new(1, 1);
        assert_eq!(conditional_nonlinear_expectation(&lat, &k, leaf, &h, &f).unwrap(), -1.0);
    }

    #[test]
    fn missing_leaf_values_are_rejected() {
        let lat = pm_one(2);
        let k = ConstantKernels(t1_kernels());
        let f = NodeFunctional { depth: 2, values: vec![1.0; 3] };
        assert!(conditional_nonlinear_expectation(&lat, &k, lat.root(), &InterventionHistory::empty(), &f).is_err());
    }

    #[test]
    fn tower_on_t1_and_constants() {
        let lat = pm_one(1);
        let k = ConstantKernels(t1_kernels());
        let h = InterventionHistory::empty();
        let f = NodeFunctional::from_fn(&lat, 1, |_, p| p.last()[0].powi(3));
        for t in 0..=1 {
            assert!(tower_check(&lat, &k, lat.root(), t, &h, &f).unwrap() <= 1e-12);
        }
        let lat3 = pm_one(3);
        let c = NodeFunctional::constant(&lat3, 3, -1.5);
        assert!(tower_check(&lat3, &k, lat3.root(), 2, &h, &c).unwrap() <= 1e-12);
    }
}
