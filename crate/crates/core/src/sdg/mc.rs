//! Euler Monte Carlo for the controlled SDE.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DiscretePath, SdeInstance};
use crate::dpp::ValueField;
use crate::error::{Error, Result};
use crate::extraction::{
    extract_optimal_control, extract_worst_case_strategy, Action, ControlRule, StrategyRule, WaitEverywhere,
};
use crate::lattice::{InterventionHistory, PathBuffer};
use crate::random::path_stream;

/// Upper limit on interventions in one simulated path, guarding against rules
/// that never stop intervening.
const MAX_SIMULATED_INTERVENTIONS: usize = 10_000;

/// Impulse rule in simulation: decides at grid step `step` from the path so
/// far (including jumps already made at this step).
pub trait SimControl: Sync {
    fn decide(&self, step: usize, path: &DiscretePath, history: &InterventionHistory) -> Result<Action>;
}

/// Classical control in simulation: an index into the control set, chosen
/// after the step's interventions and held for the step.
pub trait ClassicalRule: Sync {
    fn choose(&self, step: usize, path: &DiscretePath, history: &InterventionHistory) -> Result<usize>;
}

impl SimControl for WaitEverywhere {
    fn decide(&self, _: usize, _: &DiscretePath, _: &InterventionHistory) -> Result<Action> {
        Ok(Action::Wait)
    }
}

/// The same classical control value throughout.
#[derive(Clone, Copy, Debug)]
pub struct FixedClassical(pub usize);

impl ClassicalRule for FixedClassical {
    fn choose(&self, _: usize, _: &DiscretePath, _: &InterventionHistory) -> Result<usize> {
        Ok(self.0)
    }
}

/// Plays the lattice rules `u*` and `P*` of a solved field in simulation.
///
/// The continuous part of the simulated path is mapped to a lattice node by
/// rounding every increment to the nearest of `{+h, 0, -h}`; the kernel index
/// chosen by `P*` is the index of the classical control value.
#[derive(Clone, Copy, Debug)]
pub struct LatticeReplay<'a> {
    pub field: &'a ValueField,
    pub h: f64,
}

impl LatticeReplay<'_> {
    fn node(&self, step: usize, path: &DiscretePath) -> (crate::lattice::NodeId, PathBuffer) {
        let lattice = &self.field.problem().lattice;
        let mut branches = Vec::with_capacity(step);
        let mut buffer = PathBuffer::root(1);
        for i in 0..step {
            let d = path.continuous[i + 1] - path.continuous[i];
            let m = if d > 0.5 * self.h {
                0
            } else if d < -0.5 * self.h {
                2
            } else {
                1
            };
            branches.push(m);
            buffer.push_increment(lattice.increment(i, m));
        }
        (lattice.node_from_branches(&branches), buffer)
    }
}

impl SimControl for LatticeReplay<'_> {
    fn decide(&self, step: usize, path: &DiscretePath, history: &InterventionHistory) -> Result<Action> {
        let (node, buffer) = self.node(step, path);
        extract_optimal_control(self.field).decide(node, buffer.view(), history)
    }
}

impl ClassicalRule for LatticeReplay<'_> {
    fn choose(&self, step: usize, path: &DiscretePath, history: &InterventionHistory) -> Result<usize> {
        let (node, buffer) = self.node(step, path);
        extract_worst_case_strategy(self.field).choose(node, buffer.view(), history)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub path: DiscretePath,
    pub history: InterventionHistory,
    /// Realised `int phi~ dt + psi(X_T) + sum of intervention costs`.
    pub cost: f64,
}

/// One Euler path with `steps` steps. The normal draws come from the stream
/// keyed by `(seed, path_id)`, one per step and component in order, so a path
/// does not depend on how paths are scheduled.
pub fn euler_simulate(
    sde: &SdeInstance,
    control: &dyn SimControl,
    classical: &dyn ClassicalRule,
    steps: usize,
    seed: u64,
    path_id: u64,
) -> Result<SimulatedPath> {
    let d = sde.dimension;
    let dt = sde.dt(steps);
    let sqrt_dt = dt.sqrt();
    let mut rng = path_stream(seed, path_id);
    let mut x = DiscretePath::from_continuous(vec![0.0; d], d)?;
    let mut history = InterventionHistory::empty();
    let mut running = 0.0;
    let mut paid = 0.0;
    for i in 0..steps {
        while let Action::Impulse(b) = control.decide(i, &x, &history)? {
            if history.len() >= MAX_SIMULATED_INTERVENTIONS {
                return Err(Error::InvalidArgument("control keeps intervening without end".into()));
            }
            let impulse = sde
                .impulses
                .get(b)
                .ok_or_else(|| Error::InvalidArgument(format!("impulse index {b} out of range")))?;
            let state = x.state(i);
            paid += sde.cost.eval(state.iter().sum(), b);
            let size = sde.jump.size(&state, impulse);
            x.push_jump(i, size);
            history = history.appended(i, b);
        }
        running += sde.running.eval(x.total(i)) * dt;
        let a_index = classical.choose(i, &x, &history)?;
        let a = *sde
            .controls
            .get(a_index)
            .ok_or_else(|| Error::InvalidArgument(format!("classical control index {a_index} out of range")))?;
        let mut next = Vec::with_capacity(d);
        for c in 0..d {
            let current = x.value(i, c);
            let mean = if sde.sigma.uses_path() { x.mean_to(i, c) } else { current };
            let s = sde.sigma.eval(current, mean, a);
            let xi: f64 = rng.sample(StandardNormal);
            next.push(x.continuous[i * d + c] + s * sqrt_dt * xi);
        }
        x.continuous.extend(next);
    }
    let cost = running + sde.terminal.eval(x.total(steps)) + paid;
    Ok(SimulatedPath { path: x, history, cost })
}

/// Sample mean and standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n_paths: usize,
    pub seed: u64,
}

fn estimate(samples: &[f64], seed: u64) -> McEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    McEstimate {
        mean,
        se: (var / n).sqrt(),
        n_paths: samples.len(),
        seed,
    }
}

/// Mean realised cost over `n_paths` independent paths. Paths are simulated
/// in parallel and reduced in path order.
pub fn mc_evaluate(
    sde: &SdeInstance,
    control: &dyn SimControl,
    classical: &dyn ClassicalRule,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    let costs = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| euler_simulate(sde, control, classical, steps, seed, id).map(|p| p.cost))
        .collect::<Result<Vec<f64>>>()?;
    Ok(estimate(&costs, seed))
}

/// Inputs of the stability probe: a common starting segment `omega` on
/// `0..=start`, a perturbation direction on the same points, two intervention
/// histories with the same number of entries, and a fixed classical control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityProbe {
    pub steps: usize,
    pub start: usize,
    pub omega: Vec<f64>,
    pub perturbation: Vec<f64>,
    pub v: InterventionHistory,
    pub v_prime: InterventionHistory,
    #[serde(default)]
    pub control: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub scale: f64,
    /// Estimate of `E[sup |X - X'|]` over grid times outside the window where
    /// the two jump counts differ.
    pub mean: f64,
    pub se: f64,
}

/// For each scale `s`, simulates two paths driven by the same noise: one from
/// `(omega, v)` and one from `(omega + s * perturbation, v_s)`, where `v_s`
/// moves each intervention time of `v` a fraction `s` of the way towards `v'`.
pub fn stability_probe(
    sde: &SdeInstance,
    probe: &StabilityProbe,
    scales: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    let d = sde.dimension;
    if probe.v.len() != probe.v_prime.len() {
        return Err(Error::InvalidArgument(format!(
            "histories must have equal length, got {} and {}",
            probe.v.len(),
            probe.v_prime.len()
        )));
    }
    let points = probe.start + 1;
    if probe.omega.len() != points * d || probe.perturbation.len() != points * d {
        return Err(Error::DimensionMismatch(format!(
            "starting segment needs {} values",
            points * d
        )));
    }
    if probe.start > probe.steps || probe.v.entries().iter().chain(probe.v_prime.entries()).any(|e| e.time >= probe.steps) {
        return Err(Error::InvalidArgument("probe times must lie before the horizon".into()));
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &s in scales {
        let pairs: Vec<(usize, usize)> = probe
            .v
            .entries()
            .iter()
            .zip(probe.v_prime.entries())
            .map(|(a, b)| {
                let shift = (s * (b.time as f64 - a.time as f64)).round() as i64;
                ((a.time as i64 + shift) as usize, b.impulse)
            })
            .collect();
        let v_s = InterventionHistory::from_pairs(&pairs)?;
        let window: Vec<(usize, usize)> = probe
            .v
            .entries()
            .iter()
            .zip(v_s.entries())
            .map(|(a, b)| (a.time.min(b.time), a.time.max(b.time)))
            .collect();
        let start_b: Vec<f64> = probe
            .omega
            .iter()
            .zip(&probe.perturbation)
            .map(|(w, p)| w + s * p)
            .collect();
        let sups = (0..n_paths as u64)
            .into_par_iter()
            .map(|id| {
                let x = paired_path(sde, probe, &probe.omega, &probe.v, seed, id)?;
                let y = paired_path(sde, probe, &start_b, &v_s, seed, id)?;
                let mut sup: f64 = 0.0;
                for i in 0..=probe.steps {
                    if window.iter().any(|&(lo, hi)| lo <= i && i < hi) {
                        continue;
                    }
                    let dist = (0..d)
                        .map(|c| (x.value(i, c) - y.value(i, c)).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    sup = sup.max(dist);
                }
                Ok(sup)
            })
            .collect::<Result<Vec<f64>>>()?;
        let e = estimate(&sups, seed);
        rows.push(StabilityRow {
            scale: s,
            mean: e.mean,
            se: e.se,
        });
    }
    Ok(rows)
}

/// Path that follows `start` up to `probe.start`, then runs the Euler scheme
/// with the noise stream of `(seed, id)`, applying the jumps of `v` at their
/// times.
fn paired_path(
    sde: &SdeInstance,
    probe: &StabilityProbe,
    start: &[f64],
    v: &InterventionHistory,
    seed: u64,
    id: u64,
) -> Result<DiscretePath> {
    let d = sde.dimension;
    let dt = sde.dt(probe.steps);
    let mut rng = path_stream(seed, id);
    let a = *sde
        .controls
        .get(probe.control)
        .ok_or_else(|| Error::InvalidArgument(format!("classical control index {} out of range", probe.control)))?;
    let mut x = DiscretePath::from_continuous(start[..d].to_vec(), d)?;
    let mut next_entry = 0;
    let entries = v.entries();
    for i in 0..=probe.steps {
        if i > 0 && i <= probe.start {
            x.continuous.extend_from_slice(&start[i * d..(i + 1) * d]);
        }
        while next_entry < entries.len() && entries[next_entry].time == i {
            let e = entries[next_entry];
            let b = sde
                .impulses
                .get(e.impulse)
                .ok_or_else(|| Error::InvalidArgument(format!("impulse index {} out of range", e.impulse)))?;
            let size = sde.jump.size(&x.state(i), b);
            x.push_jump(i, size);
            next_entry += 1;
        }
        if i >= probe.start && i < probe.steps {
            let mut next = Vec::with_capacity(d);
            for c in 0..d {
                let current = x.value(i, c);
                let mean = if sde.sigma.uses_path() { x.mean_to(i, c) } else { current };
                let s = sde.sigma.eval(current, mean, a);
                let xi: f64 = rng.sample(StandardNormal);
                next.push(x.continuous[i * d + c] + s * dt.sqrt() * xi);
            }
            x.continuous.extend(next);
        }
    }
    Ok(x)
}
