use serde::Serialize;

use super::history::{for_each_history, history_count};
use super::{ImpulseProblem, InterventionHistory, NodeId, PathBuffer};
use crate::error::{Error, Result};

/// Cap on `(node, history)` pairs scanned by [`validate_instance`].
pub const DEFAULT_SCAN_CAP: u128 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonPositiveDelta,
    NonPositiveBound,
    CostBelowDelta,
    CostAboveBound,
    RewardAboveBound,
    NonFinite,
    EmptyKernelSet,
    KernelWrongLength,
    KernelNegative,
    KernelNotNormalized,
}

impl ViolationKind {
    pub fn message(self) -> &'static str {
        match self {
            Self::NonPositiveDelta => "delta not positive",
            Self::NonPositiveBound => "bound C0 not positive",
            Self::CostBelowDelta => "cost below delta",
            Self::CostAboveBound => "cost above bound C0",
            Self::RewardAboveBound => "reward above bound C0",
            Self::NonFinite => "non-finite reward or cost",
            Self::EmptyKernelSet => "empty kernel set",
            Self::KernelWrongLength => "kernel has wrong length",
            Self::KernelNegative => "kernel has negative entry",
            Self::KernelNotNormalized => "kernel not normalized",
        }
    }
}

/// First offending tuple of one kind, with the number of tuples of that kind.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: &'static str,
    pub node: Option<NodeId>,
    pub history: Option<String>,
    pub value: Option<f64>,
    pub detail: String,
    pub occurrences: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub pairs_scanned: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn record(
        &mut self,
        kind: ViolationKind,
        node: Option<NodeId>,
        history: Option<&InterventionHistory>,
        value: Option<f64>,
        detail: String,
    ) {
        if let Some(v) = self.violations.iter_mut().find(|v| v.kind == kind) {
            v.occurrences += 1;
            return;
        }
        self.violations.push(Violation {
            kind,
            message: kind.message(),
            node,
            history: history.map(InterventionHistory::encode),
            value,
            detail,
            occurrences: 1,
        });
    }
}

/// Checks the standing assumptions on every reachable `(path, history)` pair
/// with at most `k_max` interventions: `delta > 0`, `delta <= c <= C0`,
/// `|phi| <= C0`, and valid kernel sets. The scan never stops early; each
/// violated condition is reported once with its first offending tuple.
///
/// Interventions at the terminal time are excluded structurally: histories are
/// only ever generated with times below `n`.
pub fn validate_instance(problem: &ImpulseProblem, k_max: usize) -> Result<ValidationReport> {
    validate_with_cap(problem, k_max, DEFAULT_SCAN_CAP)
}

pub fn validate_with_cap(
    problem: &ImpulseProblem,
    k_max: usize,
    scan_cap: u128,
) -> Result<ValidationReport> {
    let lattice = &problem.lattice;
    let n = lattice.steps();
    let imps = problem.impulse_count();

    let mut total: u128 = 0;
    for depth in 0..=n {
        let slots = if depth == n { n } else { depth + 1 };
        let per_node = history_count(slots, k_max, imps);
        total = total.saturating_add(per_node.saturating_mul(lattice.width(depth) as u128));
    }
    if total > scan_cap {
        return Err(Error::InstanceTooLarge {
            what: "validation scan pairs",
            count: total,
            cap: scan_cap,
        });
    }

    let mut report = ValidationReport {
        passed: true,
        pairs_scanned: 0,
        violations: Vec::new(),
    };
    if !(problem.delta > 0.0) {
        report.record(
            ViolationKind::NonPositiveDelta,
            None,
            None,
            Some(problem.delta),
            format!("delta = {}", problem.delta),
        );
    }
    if !(problem.c0 > 0.0) {
        report.record(
            ViolationKind::NonPositiveBound,
            None,
            None,
            Some(problem.c0),
            format!("C0 = {}", problem.c0),
        );
    }

    let mut path = PathBuffer::root(lattice.dimension());
    scan_node(problem, k_max, lattice.root(), &mut path, &mut report);
    report.passed = report.violations.is_empty();
    Ok(report)
}

fn scan_node(
    problem: &ImpulseProblem,
    k_max: usize,
    node: NodeId,
    path: &mut PathBuffer,
    report: &mut ValidationReport,
) {
    let lattice = &problem.lattice;
    let n = lattice.steps();
    let imps = problem.impulse_count();
    let view = path.view();

    if node.depth == n {
        let mut visit = |h: &InterventionHistory| {
            report.pairs_scanned += 1;
            let r = problem.reward.reward(view, h);
            if !r.is_finite() {
                report.record(ViolationKind::NonFinite, Some(node), Some(h), Some(r), "reward".into());
            } else if r.abs() > problem.c0 {
                report.record(
                    ViolationKind::RewardAboveBound,
                    Some(node),
                    Some(h),
                    Some(r),
                    format!("|phi| = {} > C0 = {}", r.abs(), problem.c0),
                );
            }
        };
        if n == 0 {
            visit(&InterventionHistory::empty());
        } else {
            for_each_history(0, n - 1, k_max, imps, &mut visit);
        }
        return;
    }

    let depth = node.depth;
    let branch_count = lattice.branch_count();
    for_each_history(0, depth, k_max, imps, &mut |h: &InterventionHistory| {
        report.pairs_scanned += 1;
        let set = problem.kernels.kernel_set(node, view, h);
        if let Some(problem_text) = set.check(branch_count) {
            let kind = if set.is_empty() {
                ViolationKind::EmptyKernelSet
            } else if problem_text.contains("length") {
                ViolationKind::KernelWrongLength
            } else if problem_text.contains("negative") {
                ViolationKind::KernelNegative
            } else {
                ViolationKind::KernelNotNormalized
            };
            report.record(kind, Some(node), Some(h), None, problem_text);
        }
        if h.last().is_some_and(|e| e.time == depth) {
            let c = problem.cost.cost(view, h);
            if !c.is_finite() {
                report.record(ViolationKind::NonFinite, Some(node), Some(h), Some(c), "cost".into());
            } else if c < problem.delta {
                report.record(
                    ViolationKind::CostBelowDelta,
                    Some(node),
                    Some(h),
                    Some(c),
                    format!("c = {c} < delta = {}", problem.delta),
                );
            } else if c > problem.c0 {
                report.record(
                    ViolationKind::CostAboveBound,
                    Some(node),
                    Some(h),
                    Some(c),
                    format!("c = {c} > C0 = {}", problem.c0),
                );
            }
        }
    });

    for m in 0..branch_count {
        path.push_increment(lattice.increment(depth, m));
        scan_node(problem, k_max, lattice.child(node, m), path, report);
        path.pop();
    }
}
