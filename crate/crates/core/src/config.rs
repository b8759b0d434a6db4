//! JSON instance files. See `docs/config-schema.md` for the format.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::InstanceShape;
use crate::lattice::{
    AffineReward, ConstantCost, ConstantKernels, DepthKernels, ImpulseProblem, InterventionCost, KernelProvider,
    KernelSet, Lattice, PerImpulseCost, RandomCost, RandomKernels, RandomReward, TerminalReward, TimeGrid,
    DEFAULT_NODE_CAP,
};
use crate::sdg::{build_lattice_problem_with, CompileOptions, SdeInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Either one list of branch increments used on every step, or one list per
/// step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Increments {
    Uniform(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub branch_count: usize,
    pub increments: Increments,
    #[serde(default = "one")]
    pub dimension: usize,
    #[serde(default)]
    pub node_cap: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelConfig {
    /// One kernel set used everywhere, or one set per depth.
    Table { sets: Vec<Vec<Vec<f64>>> },
    Random {
        seed: u64,
        count: usize,
        #[serde(default)]
        history_dependent: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseConfig {
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardConfig {
    /// `weights . w_T` plus `impulse_shift[b]` for each of the first
    /// `max_effective` interventions, optionally clamped to `[-clamp, clamp]`.
    Affine {
        weights: Vec<f64>,
        #[serde(default)]
        impulse_shift: Vec<f64>,
        #[serde(default)]
        max_effective: Option<usize>,
        #[serde(default)]
        clamp: Option<f64>,
    },
    Random {
        seed: u64,
        bound: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostConfig {
    Constant { value: f64 },
    PerImpulse { values: Vec<f64> },
    Random { seed: u64, low: f64, high: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostsConfig {
    pub delta: f64,
    pub c0: f64,
    pub reward: RewardConfig,
    pub cost: CostConfig,
}

/// SDE game plus its lattice discretisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdgConfig {
    #[serde(flatten)]
    pub model: SdeInstance,
    /// Lattice steps `n`.
    pub steps: usize,
    #[serde(default = "unit")]
    pub lambda: f64,
    #[serde(default)]
    pub node_cap: Option<u64>,
}

fn unit() -> f64 {
    1.0
}

impl SdgConfig {
    pub fn compile(&self) -> Result<ImpulseProblem> {
        let mut options = CompileOptions::default();
        if let Some(cap) = self.node_cap {
            options.node_cap = cap as u128;
        }
        build_lattice_problem_with(&self.model, self.steps, self.lambda, &options)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub kernels: Option<KernelConfig>,
    #[serde(default)]
    pub impulses: Option<ImpulseConfig>,
    #[serde(default)]
    pub costs: Option<CostsConfig>,
    #[serde(default)]
    pub sdg: Option<SdgConfig>,
    /// Shape of the random instances drawn by `verify --random`.
    #[serde(default)]
    pub random: Option<InstanceShape>,
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Whether the file describes a lattice instance directly.
    pub fn has_lattice(&self) -> bool {
        self.grid.is_some() || self.lattice.is_some()
    }

    /// The lattice instance, compiled from the `sdg` section when the lattice
    /// sections are absent.
    pub fn problem(&self) -> Result<ImpulseProblem> {
        if !self.has_lattice() {
            return match &self.sdg {
                Some(sdg) => sdg.compile(),
                None => Err(Error::Config("config has neither a lattice instance nor an sdg section".into())),
            };
        }
        let grid = need(&self.grid, "grid")?;
        let lattice = need(&self.lattice, "lattice")?;
        let kernels = need(&self.kernels, "kernels")?;
        let impulses = need(&self.impulses, "impulses")?;
        let costs = need(&self.costs, "costs")?;

        let increments = match &lattice.increments {
            Increments::Uniform(step) => vec![step.clone(); grid.n],
            Increments::PerStep(table) => table.clone(),
        };
        let built = Lattice::with_node_cap(
            TimeGrid::new(grid.n, grid.horizon)?,
            lattice.branch_count,
            &increments,
            lattice.dimension,
            lattice.node_cap.map_or(DEFAULT_NODE_CAP, u128::from),
        )?;
        if impulses.values.is_empty() {
            return Err(Error::Config("impulses.values must not be empty".into()));
        }
        Ok(ImpulseProblem::new(
            built,
            impulses.values.clone(),
            kernel_provider(kernels, lattice.branch_count)?,
            reward(&costs.reward),
            cost(&costs.cost, impulses.values.len())?,
            costs.delta,
            costs.c0,
        ))
    }
}

fn need<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing section \"{name}\"")))
}

fn kernel_provider(config: &KernelConfig, branch_count: usize) -> Result<Arc<dyn KernelProvider>> {
    Ok(match config {
        KernelConfig::Table { sets } => match sets.len() {
            0 => return Err(Error::Config("kernels.sets must not be empty".into())),
            1 => Arc::new(ConstantKernels(KernelSet::new(sets[0].clone()))),
            _ => Arc::new(DepthKernels(sets.iter().cloned().map(KernelSet::new).collect())),
        },
        KernelConfig::Random {
            seed,
            count,
            history_dependent,
        } => Arc::new(RandomKernels::new(*seed, *count, branch_count, *history_dependent)?),
    })
}

fn reward(config: &RewardConfig) -> Arc<dyn TerminalReward> {
    match config {
        RewardConfig::Affine {
            weights,
            impulse_shift,
            max_effective,
            clamp,
        } => Arc::new(AffineReward {
            weights: weights.clone(),
            impulse_shift: impulse_shift.clone(),
            max_effective: *max_effective,
            clamp: *clamp,
        }),
        RewardConfig::Random { seed, bound } => Arc::new(RandomReward {
            seed: *seed,
            bound: *bound,
        }),
    }
}

fn cost(config: &CostConfig, impulses: usize) -> Result<Arc<dyn InterventionCost>> {
    Ok(match config {
        CostConfig::Constant { value } => Arc::new(ConstantCost(*value)),
        CostConfig::PerImpulse { values } => {
            if values.len() != impulses {
                return Err(Error::Config(format!(
                    "per-impulse cost has {} values for {impulses} impulses",
                    values.len()
                )));
            }
            Arc::new(PerImpulseCost(values.clone()))
        }
        CostConfig::Random { seed, low, high } => Arc::new(RandomCost {
            seed: *seed,
            low: *low,
            high: *high,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::solve_truncated;
    use crate::lattice::validate_instance;

    const T1: &str = r#"{
        "grid": {"n": 1, "T": 1.0},
        "lattice": {"branch_count": 2, "increments": [[1.0], [-1.0]], "dimension": 1},
        "kernels": {"type": "table", "sets": [[[0.5, 0.5], [0.9, 0.1]]]},
        "impulses": {"values": [[-2.0]]},
        "costs": {
            "delta": 1.0, "c0": 3.0,
            "reward": {"type": "affine", "weights": [1.0], "impulse_shift": [-2.0], "max_effective": 1},
            "cost": {"type": "constant", "value": 1.0}
        }
    }"#;

    #[test]
    fn t1_file_matches_builtin() {
        let p = InstanceConfig::from_json(T1).unwrap().problem().unwrap();
        assert!(validate_instance(&p, 3).unwrap().passed);
        let a = solve_truncated(&p, 3).unwrap().root_value().unwrap();
        let b = solve_truncated(&crate::instances::t1(), 3).unwrap().root_value().unwrap();
        assert_eq!(a, b);
        assert!((a + 0.2).abs() < 1e-12);
    }

    #[test]
    fn per_step_increments_parse() {
        let text = T1.replace("[[1.0], [-1.0]]", "[[[1.0], [-1.0]]]");
        let cfg = InstanceConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.lattice.as_ref().unwrap().increments, Increments::PerStep(_)));
        assert!(cfg.problem().is_ok());
    }

    #[test]
    fn missing_sections_are_reported() {
        let err = InstanceConfig::from_json(r#"{"grid": {"n": 1, "T": 1.0}}"#)
            .unwrap()
            .problem()
            .unwrap_err();
        assert!(err.to_string().contains("\"lattice\""));
        assert!(InstanceConfig::from_json("{}").unwrap().problem().is_err());
        assert!(InstanceConfig::from_json(r#"{"grdi": {}}"#).is_err());
    }

    #[test]
    fn sdg_section_compiles() {
        let text = r#"{"sdg": {
            "horizon": 1.0, "steps": 4, "lambda": 1.0,
            "sigma": {"type": "constant", "value": 0.2},
            "jump": {"type": "shift"},
            "running": {"type": "constant", "value": 0.0},
            "terminal": {"type": "affine", "slope": 1.0},
            "cost": {"type": "constant", "value": 1.0},
            "controls": [0.2], "impulses": [[-2.0]], "delta": 1.0, "c0": 3.0
        }}"#;
        let cfg = InstanceConfig::from_json(text).unwrap();
        let p = cfg.problem().unwrap();
        assert_eq!(p.lattice.branch_count(), 3);
        assert_eq!(p.lattice.steps(), 4);
        assert_eq!(p.c0, 3.0);
    }
}
