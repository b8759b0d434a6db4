//! Batch checks over a whole lattice: the tower property on every pair of
//! levels, and the stopping recursion against its brute-force oracle.

use serde::Serialize;

use super::{collapse, solve_optimal_stopping, stopping_value_oracle, supermartingale_violation, NodeFunctional};
use super::ObstacleProcess;
use crate::error::Result;
use crate::lattice::{InterventionHistory, KernelProvider, Lattice};
use crate::oracle::EnumerationCaps;
use crate::random::KeyHash;

/// Leaf functional with values uniform on `[-bound, bound]`, keyed by the
/// seed and the node.
pub fn random_functional(lattice: &Lattice, seed: u64, bound: f64) -> NodeFunctional {
    let depth = lattice.steps();
    NodeFunctional::from_fn(lattice, depth, |node, _| {
        bound * (2.0 * KeyHash::new(seed).word(node.depth as u64).word(node.index).unit() - 1.0)
    })
}

/// Obstacle with values uniform on `[-bound, bound]` at every node.
pub fn random_obstacle(lattice: &Lattice, seed: u64, bound: f64) -> ObstacleProcess {
    ObstacleProcess::from_fn(lattice, |node, _| {
        bound * (2.0 * KeyHash::new(seed ^ 0x0B57).word(node.depth as u64).word(node.index).unit() - 1.0)
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TowerReport {
    pub functionals: usize,
    /// Number of `(s, t)` level pairs times functionals.
    pub checks: usize,
    pub max_discrepancy: f64,
    pub pass: bool,
}

/// `max |E_s[E_t[f]] - E_s[f]|` over every node, every `s <= t <= n` and
/// `functionals` seeded leaf functionals, under the empty history.
pub fn tower_sweep(lattice: &Lattice, kernels: &dyn KernelProvider, functionals: usize, seed: u64) -> Result<TowerReport> {
    let n = lattice.steps();
    let empty = InterventionHistory::empty();
    let mut max_discrepancy: f64 = 0.0;
    let mut checks = 0;
    for j in 0..functionals {
        let f = random_functional(lattice, KeyHash::new(seed).word(j as u64).finish(), 1.0);
        let direct: Vec<NodeFunctional> = (0..=n)
            .map(|s| collapse(lattice, kernels, &empty, &f, s))
            .collect::<Result<_>>()?;
        for t in 0..=n {
            let inner = &direct[t];
            for (s, reference) in direct.iter().enumerate().take(t + 1) {
                let nested = collapse(lattice, kernels, &empty, inner, s)?;
                for (a, b) in nested.values.iter().zip(&reference.values) {
                    max_discrepancy = max_discrepancy.max((a - b).abs());
                }
                checks += 1;
            }
        }
    }
    Ok(TowerReport {
        functionals,
        checks,
        max_discrepancy,
        pass: max_discrepancy <= 1e-12,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StoppingCheck {
    pub recursion: f64,
    pub upper: f64,
    pub lower: f64,
    pub stopping_rules: u64,
    pub measures: u64,
    pub supermartingale_violation: f64,
    pub pass: bool,
}

/// Snell recursion against the enumerated upper and lower values (1e-9), and
/// the supermartingale inequality before stopping (1e-12).
pub fn stopping_check(
    lattice: &Lattice,
    kernels: &dyn KernelProvider,
    obstacle: &ObstacleProcess,
    caps: &EnumerationCaps,
) -> Result<StoppingCheck> {
    let empty = InterventionHistory::empty();
    let solution = solve_optimal_stopping(lattice, obstacle, &empty, kernels);
    let oracle = stopping_value_oracle(lattice, obstacle, &empty, kernels, caps)?;
    let violation = supermartingale_violation(lattice, &solution, &empty, kernels);
    let recursion = solution.root_value();
    Ok(StoppingCheck {
        recursion,
        upper: oracle.upper,
        lower: oracle.lower,
        stopping_rules: oracle.stopping_rules,
        measures: oracle.measures,
        supermartingale_violation: violation,
        pass: (recursion - oracle.upper).abs() <= 1e-9 && (recursion - oracle.lower).abs() <= 1e-9 && violation <= 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_instance, t1, InstanceShape};

    #[test]
    fn tower_holds_on_t1_and_a_random_tree() {
        let p = t1();
        let r = tower_sweep(&p.lattice, p.kernels.as_ref(), 5, 1).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.checks, 5 * 3);
        let p = random_instance(4, &InstanceShape::new(4, 3, 3, 1)).unwrap();
        let r = tower_sweep(&p.lattice, p.kernels.as_ref(), 3, 2).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn stopping_matches_oracle_on_a_small_tree() {
        let p = random_instance(9, &InstanceShape::new(3, 2, 2, 1)).unwrap();
        let x = random_obstacle(&p.lattice, 5, 1.0);
        let r = stopping_check(&p.lattice, p.kernels.as_ref(), &x, &EnumerationCaps::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.measures, 1 << 7);
    }

    #[test]
    fn random_tables_are_bounded_and_seeded() {
        let p = t1();
        let a = random_functional(&p.lattice, 3, 2.0);
        assert_eq!(a, random_functional(&p.lattice, 3, 2.0));
        assert_ne!(a, random_functional(&p.lattice, 4, 2.0));
        assert!(a.values.iter().all(|v| v.abs() <= 2.0));
    }
}
