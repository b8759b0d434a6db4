use std::io::Write;

use serde::Serialize;

use super::{extract_optimal_control, extract_worst_case_strategy, Action, ControlRule, StrategyRule};
use crate::dpp::ValueField;
use crate::error::Result;

#[derive(Serialize)]
struct ControlRow {
    depth: usize,
    node_id: u64,
    history: String,
    action: String,
}

#[derive(Serialize)]
struct StrategyRow {
    depth: usize,
    node_id: u64,
    history: String,
    kernel: usize,
}

/// Interior `(node, history)` pairs of the field at their full remaining
/// budget, in canonical order.
fn decision_pairs(field: &ValueField) -> Vec<crate::dpp::FieldKey> {
    let lattice = &field.problem().lattice;
    field
        .keys_sorted()
        .into_iter()
        .filter(|key| !lattice.is_leaf(key.node))
        .filter(|key| field.remaining_budget(&key.history) == Some(key.budget))
        .collect()
}

/// Writes the intervention rows of `u*` as `depth,node_id,history,action`,
/// where `action` is `b<index>`. Pairs where `u*` waits are omitted.
pub fn write_control_csv<W: Write>(field: &ValueField, out: W) -> Result<()> {
    let lattice = &field.problem().lattice;
    let control = extract_optimal_control(field);
    let mut writer = csv::Writer::from_writer(out);
    for key in decision_pairs(field) {
        let path = lattice.path(key.node);
        if let Action::Impulse(b) = control.decide(key.node, path.view(), &key.history)? {
            writer.serialize(ControlRow {
                depth: key.node.depth,
                node_id: key.node.index,
                history: key.history.encode(),
                action: format!("b{b}"),
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes `P*` as `depth,node_id,history,kernel` for every interior pair.
pub fn write_strategy_csv<W: Write>(field: &ValueField, out: W) -> Result<()> {
    let lattice = &field.problem().lattice;
    let strategy = extract_worst_case_strategy(field);
    let mut writer = csv::Writer::from_writer(out);
    for key in decision_pairs(field) {
        let path = lattice.path(key.node);
        writer.serialize(StrategyRow {
            depth: key.node.depth,
            node_id: key.node.index,
            history: key.history.encode(),
            kernel: strategy.choose(key.node, path.view(), &key.history)?,
        })?;
    }
    writer.flush()?;
    Ok(())
}
