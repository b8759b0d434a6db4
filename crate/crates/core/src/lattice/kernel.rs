use std::sync::Arc;

use super::{InterventionHistory, NodeId, PathView};
use crate::error::{Error, Result};
use crate::random::KeyHash;

/// Tolerance on kernel normalisation.
pub const KERNEL_TOLERANCE: f64 = 1e-12;

/// Non-empty, ordered list of one-step transition probability vectors.
///
/// The order is part of the contract: argmax ties resolve to the smallest
/// index, so two providers with the same kernels in different order define
/// different canonical worst-case measures.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet {
    kernels: Arc<[Vec<f64>]>,
}

impl KernelSet {
    pub fn new(kernels: Vec<Vec<f64>>) -> Self {
        Self {
            kernels: kernels.into(),
        }
    }

    pub fn single(kernel: Vec<f64>) -> Self {
        Self::new(vec![kernel])
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.kernels.get(i).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.kernels.iter().map(Vec::as_slice)
    }

    /// First problem found with the set, if any.
    pub fn check(&self, branch_count: usize) -> Option<String> {
        if self.kernels.is_empty() {
            return Some("empty kernel set".into());
        }
        for (j, k) in self.kernels.iter().enumerate() {
            if k.len() != branch_count {
                return Some(format!(
                    "kernel {j} has length {}, expected {branch_count}",
                    k.len()
                ));
            }
            if k.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Some(format!("kernel {j} has a negative entry"));
            }
            let total: f64 = k.iter().sum();
            if (total - 1.0).abs() > KERNEL_TOLERANCE {
                return Some(format!("kernel {j} not normalized (sum {total})"));
            }
        }
        None
    }
}

/// Source of the adversary's admissible kernels at a node.
///
/// The history passed in contains every intervention up to and including the
/// node's own time, and nothing later, so any implementation is automatically
/// non-anticipative.
pub trait KernelProvider: Send + Sync {
    fn kernel_set(&self, node: NodeId, path: PathView<'_>, history: &InterventionHistory)
        -> KernelSet;
}

impl<F> KernelProvider for F
where
    F: Fn(NodeId, PathView<'_>, &InterventionHistory) -> KernelSet + Send + Sync,
{
    fn kernel_set(
        &self,
        node: NodeId,
        path: PathView<'_>,
        history: &InterventionHistory,
    ) -> KernelSet {
        self(node, path, history)
    }
}

/// Same set everywhere.
#[derive(Clone, Debug)]
pub struct ConstantKernels(pub KernelSet);

impl KernelProvider for ConstantKernels {
    fn kernel_set(&self, _: NodeId, _: PathView<'_>, _: &InterventionHistory) -> KernelSet {
        self.0.clone()
    }
}

/// One set per depth.
#[derive(Clone, Debug)]
pub struct DepthKernels(pub Vec<KernelSet>);

impl KernelProvider for DepthKernels {
    fn kernel_set(&self, node: NodeId, _: PathView<'_>, _: &InterventionHistory) -> KernelSet {
        let i = node.depth.min(self.0.len() - 1);
        self.0[i].clone()
    }
}

/// Seeded pseudo-random kernels, a fixed function of `(seed, node)` and,
/// optionally, of the intervention history.
#[derive(Clone, Debug)]
pub struct RandomKernels {
    pub seed: u64,
    pub count: usize,
    pub branch_count: usize,
    pub history_dependent: bool,
}

impl RandomKernels {
    pub fn new(seed: u64, count: usize, branch_count: usize, history_dependent: bool) -> Result<Self> {
        if count == 0 || branch_count == 0 {
            return Err(Error::InvalidArgument(
                "random kernels need a positive count and branch count".into(),
            ));
        }
        Ok(Self {
            seed,
            count,
            branch_count,
            history_dependent,
        })
    }
}

impl KernelProvider for RandomKernels {
    fn kernel_set(
        &self,
        node: NodeId,
        _: PathView<'_>,
        history: &InterventionHistory,
    ) -> KernelSet {
        let mut key = KeyHash::new(self.seed)
            .word(node.depth as u64)
            .word(node.index);
        if self.history_dependent {
            key = key.word(history.len() as u64);
            for e in history.entries() {
                key = key.word(e.time as u64).word(e.impulse as u64);
            }
        }
        let kernels = (0..self.count)
            .map(|j| {
                let raw: Vec<f64> = (0..self.branch_count)
                    .map(|m| 0.05 + key.word(j as u64).word(m as u64).unit())
                    .collect();
                normalize(raw)
            })
            .collect();
        KernelSet::new(kernels)
    }
}

/// Rescales to unit sum and pushes the rounding residue into the largest entry.
pub(crate) fn normalize(mut raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    for p in raw.iter_mut() {
        *p /= total;
    }
    let residue = 1.0 - raw.iter().sum::<f64>();
    if let Some(big) = raw
        .iter_mut()
        .max_by(|a, b| a.partial_cmp(b).unwrap())
    {
        *big += residue;
    }
    raw
}
