use std::fmt;
use std::sync::Arc;

use super::{InterventionHistory, KernelProvider, Lattice, PathView};
use crate::error::{Error, Result};
use crate::random::KeyHash;

/// Terminal reward `phi(path, v)` evaluated on a leaf path.
pub trait TerminalReward: Send + Sync {
    fn reward(&self, path: PathView<'_>, history: &InterventionHistory) -> f64;
}

/// Intervention cost `c(path, v)`; `path` ends at the time of the last entry
/// of `history`, which is the intervention being charged.
pub trait InterventionCost: Send + Sync {
    fn cost(&self, path: PathView<'_>, history: &InterventionHistory) -> f64;
}

impl<F> TerminalReward for F
where
    F: Fn(PathView<'_>, &InterventionHistory) -> f64 + Send + Sync,
{
    fn reward(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        self(path, history)
    }
}

/// Wrapper so closures can serve as costs without clashing with the reward
/// blanket impl.
pub struct CostFn<F>(pub F);

impl<F> InterventionCost for CostFn<F>
where
    F: Fn(PathView<'_>, &InterventionHistory) -> f64 + Send + Sync,
{
    fn cost(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        (self.0)(path, history)
    }
}

/// `phi = clamp(w . w_T + sum_j shift[b_j])`, where only the first
/// `max_effective` interventions shift the payoff.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineReward {
    pub weights: Vec<f64>,
    pub impulse_shift: Vec<f64>,
    pub max_effective: Option<usize>,
    pub clamp: Option<f64>,
}

impl TerminalReward for AffineReward {
    fn reward(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        let terminal = path.last();
        let mut value: f64 = self
            .weights
            .iter()
            .zip(terminal)
            .map(|(w, x)| w * x)
            .sum();
        let effective = self.max_effective.unwrap_or(usize::MAX);
        for e in history.entries().iter().take(effective) {
            value += self.impulse_shift.get(e.impulse).copied().unwrap_or(0.0);
        }
        match self.clamp {
            Some(c) => value.clamp(-c, c),
            None => value,
        }
    }
}

/// Bounded random table: uniform on `[-bound, bound]`, keyed by the leaf path
/// and the full history.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomReward {
    pub seed: u64,
    pub bound: f64,
}

impl TerminalReward for RandomReward {
    fn reward(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        let u = history_key(path_key(KeyHash::new(self.seed), path), history).unit();
        self.bound * (2.0 * u - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantCost(pub f64);

impl InterventionCost for ConstantCost {
    fn cost(&self, _: PathView<'_>, _: &InterventionHistory) -> f64 {
        self.0
    }
}

/// Cost determined by the impulse of the charged intervention.
#[derive(Clone, Debug, PartialEq)]
pub struct PerImpulseCost(pub Vec<f64>);

impl InterventionCost for PerImpulseCost {
    fn cost(&self, _: PathView<'_>, history: &InterventionHistory) -> f64 {
        let b = history.last().map_or(0, |e| e.impulse);
        self.0[b.min(self.0.len() - 1)]
    }
}

/// Bounded random table: uniform on `[low, high]`, keyed by the path up to the
/// intervention time and the history.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomCost {
    pub seed: u64,
    pub low: f64,
    pub high: f64,
}

impl InterventionCost for RandomCost {
    fn cost(&self, path: PathView<'_>, history: &InterventionHistory) -> f64 {
        let u = history_key(path_key(KeyHash::new(self.seed ^ 0xC057), path), history).unit();
        self.low + (self.high - self.low) * u
    }
}

fn path_key(mut key: KeyHash, path: PathView<'_>) -> KeyHash {
    key = key.word(path.as_slice().len() as u64);
    for &x in path.as_slice() {
        key = key.float(x);
    }
    key
}

fn history_key(mut key: KeyHash, history: &InterventionHistory) -> KeyHash {
    key = key.word(0xFFFF ^ history.len() as u64);
    for e in history.entries() {
        key = key.word(e.time as u64).word(e.impulse as u64);
    }
    key
}

/// A complete impulse-control instance on a lattice.
///
/// Cloning is cheap: the lattice and all callbacks are shared.
#[derive(Clone)]
pub struct ImpulseProblem {
    pub lattice: Arc<Lattice>,
    /// Impulse set `U`, in fixed order.
    pub impulses: Vec<Vec<f64>>,
    pub kernels: Arc<dyn KernelProvider>,
    pub reward: Arc<dyn TerminalReward>,
    pub cost: Arc<dyn InterventionCost>,
    /// Lower bound on intervention costs.
    pub delta: f64,
    /// Uniform bound on `|phi|` and `|c|`.
    pub c0: f64,
}

impl fmt::Debug for ImpulseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImpulseProblem")
            .field("lattice", &self.lattice)
            .field("impulses", &self.impulses)
            .field("delta", &self.delta)
            .field("c0", &self.c0)
            .finish_non_exhaustive()
    }
}

impl ImpulseProblem {
    pub fn new(
        lattice: Lattice,
        impulses: Vec<Vec<f64>>,
        kernels: Arc<dyn KernelProvider>,
        reward: Arc<dyn TerminalReward>,
        cost: Arc<dyn InterventionCost>,
        delta: f64,
        c0: f64,
    ) -> Self {
        Self {
            lattice: Arc::new(lattice),
            impulses,
            kernels,
            reward,
            cost,
            delta,
            c0,
        }
    }

    pub fn impulse_count(&self) -> usize {
        self.impulses.len()
    }

    /// Default intervention cap `ceil(2 C0 / delta) + 2`. Controls with more
    /// expected interventions than `2 C0 / delta` are dominated by never
    /// intervening.
    pub fn k_hard(&self) -> usize {
        self.intervention_bound() + 2
    }

    /// `ceil(2 C0 / delta)`.
    pub fn intervention_bound(&self) -> usize {
        (2.0 * self.c0 / self.delta).ceil() as usize
    }

    /// Truncation bound `4 C0^2 / ((k + 1) delta)` on `Y^k - Y`.
    pub fn truncation_gap(&self, k: usize) -> f64 {
        4.0 * self.c0 * self.c0 / ((k as f64 + 1.0) * self.delta)
    }

    pub(crate) fn require_positive_constants(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.c0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta and C0 must be positive (delta={}, C0={})",
                self.delta, self.c0
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_reward_saturates_after_max_effective() {
        let r = AffineReward {
            weights: vec![1.0],
            impulse_shift: vec![-2.0],
            max_effective: Some(1),
            clamp: None,
        };
        let data = [0.0, 1.0];
        let p = PathView::new(&data, 1);
        let h0 = InterventionHistory::empty();
        let h1 = h0.appended(0, 0);
        let h2 = h1.appended(0, 0);
        assert_eq!(r.reward(p, &h0), 1.0);
        assert_eq!(r.reward(p, &h1), -1.0);
        assert_eq!(r.reward(p, &h2), -1.0);
    }

    #[test]
    fn random_tables_stay_in_range() {
        let r = RandomReward { seed: 1, bound: 2.0 };
        let c = RandomCost { seed: 1, low: 0.5, high: 1.5 };
        let data = [0.0, 1.0, -1.0];
        let p = PathView::new(&data, 1);
        let mut h = InterventionHistory::empty();
        for j in 0..10 {
            h = h.appended(j % 3, j % 2);
            let v = r.reward(p, &h);
            assert!((-2.0..=2.0).contains(&v));
            let w = c.cost(p.prefix(h.last().unwrap().time), &h);
            assert!((0.5..=1.5).contains(&w));
        }
    }
}
