//! Path-dependent stochastic differential game of impulse control against an
//! uncertain volatility: model description, the impulse operator, a
//! trinomial-lattice compiler and an Euler Monte Carlo simulator.
//!
//! The state is `X = int sigma(t, X, alpha) dB + sum of jumps Gamma`, with a
//! classical control `alpha` valued in a finite set and impulses from a finite
//! set. The cost functional is
//! `int phi~(t, X_t) dt + psi(X_T) + sum_j l(tau_j, X^{[u]_{j-1}}_{tau_j}, beta_j)`.

mod compile;
mod families;
mod mc;

pub use compile::{
    build_lattice_problem, build_lattice_problem_with, check_discretization, kernel_moments, make_costs,
    CompileOptions, SdeCost, SdeKernels, SdeReward,
};
pub use families::{CostModel, JumpModel, ScalarFn, SigmaModel};
pub use mc::{
    euler_simulate, mc_evaluate, stability_probe, ClassicalRule, FixedClassical, LatticeReplay, McEstimate,
    SimControl, SimulatedPath, StabilityProbe, StabilityRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::InterventionHistory;

/// Coefficients of the controlled SDE and its cost functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeInstance {
    pub horizon: f64,
    /// State dimension for simulation; the lattice compiler needs 1.
    #[serde(default = "one")]
    pub dimension: usize,
    pub sigma: SigmaModel,
    pub jump: JumpModel,
    /// Running reward `phi~`, applied to the sum of the state components.
    pub running: ScalarFn,
    /// Terminal reward `psi`, applied to the sum of the state components.
    pub terminal: ScalarFn,
    /// Intervention cost `l`.
    pub cost: CostModel,
    /// Discretised classical control set.
    pub controls: Vec<f64>,
    /// Impulse values, each of length `dimension`.
    pub impulses: Vec<Vec<f64>>,
    pub delta: f64,
    /// Bound on `|phi|` and `|c|` for the compiled problem. Inferred by a scan
    /// when absent.
    #[serde(default)]
    pub c0: Option<f64>,
}

fn one() -> usize {
    1
}

impl SdeInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("sdg horizon must be positive, got {}", self.horizon)));
        }
        if self.dimension == 0 {
            return Err(Error::Config("sdg dimension must be positive".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::Config("sdg needs at least one classical control value".into()));
        }
        if let Some(b) = self.impulses.iter().find(|b| b.len() != self.dimension) {
            return Err(Error::DimensionMismatch(format!(
                "impulse {b:?} does not have dimension {}",
                self.dimension
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("sdg delta must be positive, got {}", self.delta)));
        }
        self.sigma.validate(&self.controls)?;
        self.running.validate()?;
        self.terminal.validate()?;
        self.cost.validate(self.impulses.len())?;
        Ok(())
    }

    pub fn dt(&self, steps: usize) -> f64 {
        self.horizon / steps as f64
    }
}

/// One recorded jump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub index: usize,
    pub size: Vec<f64>,
}

/// A path on the time grid split into its continuous part and its jumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub dimension: usize,
    /// Continuous part, flattened `[time][component]`.
    pub continuous: Vec<f64>,
    pub jumps: Vec<Jump>,
}

impl DiscretePath {
    pub fn from_continuous(continuous: Vec<f64>, dimension: usize) -> Result<Self> {
        if dimension == 0 || continuous.is_empty() || continuous.len() % dimension != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form points of dimension {dimension}",
                continuous.len()
            )));
        }
        Ok(Self {
            dimension,
            continuous,
            jumps: Vec::new(),
        })
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.continuous.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.continuous.is_empty()
    }

    /// `x_{t_i}` in component `c`: continuous part plus every jump at or
    /// before `i`.
    pub fn value(&self, i: usize, c: usize) -> f64 {
        let mut x = self.continuous[i * self.dimension + c];
        for j in &self.jumps {
            if j.index <= i {
                x += j.size[c];
            }
        }
        x
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        (0..self.dimension).map(|c| self.value(i, c)).collect()
    }

    /// Sum of the components of `x_{t_i}`.
    pub fn total(&self, i: usize) -> f64 {
        (0..self.dimension).map(|c| self.value(i, c)).sum()
    }

    /// Mean of component `c` over the points `0..=i`.
    pub fn mean_to(&self, i: usize, c: usize) -> f64 {
        (0..=i).map(|k| self.value(k, c)).sum::<f64>() / (i + 1) as f64
    }

    /// The continuous part `C(x)` as a path without jumps.
    pub fn without_jumps(&self) -> Self {
        Self {
            dimension: self.dimension,
            continuous: self.continuous.clone(),
            jumps: Vec::new(),
        }
    }

    pub fn push_jump(&mut self, index: usize, size: Vec<f64>) {
        self.jumps.push(Jump { index, size });
    }

    /// Values `x_{t_0}, ..., x_{t_m}` of a one-dimensional path.
    pub fn scalar_values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i, 0)).collect()
    }
}

/// `I^v(omega)`: inserts the jumps of `v` one after another, each computed
/// from the path carrying all earlier jumps. Jumps already present in `omega`
/// are kept. The shipped jump families are time-homogeneous, so no grid is
/// needed.
pub fn impulse_operator(sde: &SdeInstance, omega: &DiscretePath, v: &InterventionHistory) -> Result<DiscretePath> {
    let mut path = omega.clone();
    for e in v.entries() {
        if e.time >= path.len() {
            return Err(Error::InvalidArgument(format!(
                "intervention at time index {} beyond a path of {} points",
                e.time,
                path.len()
            )));
        }
        let b = sde.impulses.get(e.impulse).ok_or_else(|| {
            Error::InvalidArgument(format!("impulse index {} out of range", e.impulse))
        })?;
        let size = sde.jump.size(&path.state(e.time), b);
        path.push_jump(e.time, size);
    }
    Ok(path)
}

#[cfg(test)]
mod tests;
