use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::lattice::{for_each_history, ImpulseProblem, InterventionHistory, NodeId};

/// Classical (single-measure) impulse-control value by slice-by-slice
/// backward induction over every `(node, history)` with at most `k`
/// interventions.
///
/// Works only when every kernel set holds exactly one kernel. Within a node,
/// longer histories are tabulated first so that the intervention branch can
/// look them up.
pub fn classical_impulse_value(problem: &ImpulseProblem, k: usize) -> Result<f64> {
    let lattice = &problem.lattice;
    let n = lattice.steps();
    let impulses = problem.impulse_count();
    let mut next: HashMap<(u64, InterventionHistory), f64> = HashMap::new();
    for depth in (0..=n).rev() {
        let max_time = if depth == n { n.saturating_sub(1) } else { depth };
        let mut histories = Vec::new();
        if n > 0 {
            for_each_history(0, max_time, k, impulses, &mut |h| histories.push(h.clone()));
        } else {
            histories.push(InterventionHistory::empty());
        }
        histories.sort_by_key(|h| std::cmp::Reverse(h.len()));
        let mut level: HashMap<(u64, InterventionHistory), f64> = HashMap::new();
        for node in lattice.level(depth) {
            let path = lattice.path(node);
            for h in &histories {
                let value = if depth == n {
                    problem.reward.reward(path.view(), h)
                } else {
                    let set = problem.kernels.kernel_set(node, path.view(), h);
                    if set.len() != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "classical DP needs one kernel per node, found {} at {node}",
                            set.len()
                        )));
                    }
                    let p = set.get(0).expect("one kernel");
                    let mut wait = 0.0;
                    for (m, child) in lattice.children(node).enumerate() {
                        wait += p[m] * next[&(child.index, h.clone())];
                    }
                    let mut best = wait;
                    if h.len() < k {
                        for b in 0..impulses {
                            let h2 = h.appended(depth, b);
                            let jump = level[&(node.index, h2.clone())] + problem.cost.cost(path.view(), &h2);
                            best = best.min(jump);
                        }
                    }
                    best
                };
                level.insert((node.index, h.clone()), value);
            }
        }
        next = level;
    }
    Ok(next[&(NodeId::ROOT.index, InterventionHistory::empty())])
}
