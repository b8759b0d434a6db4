use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FieldKey, ValueField};
use crate::error::{Error, Result};
use crate::lattice::{ImpulseProblem, InterventionHistory, NodeId};

#[derive(Serialize, Deserialize)]
struct Row {
    depth: usize,
    node_id: u64,
    history: String,
    budget: usize,
    value: f64,
}

/// Writes the field as `depth,node_id,history,budget,value`, one row per
/// entry in canonical order.
pub fn write_field_csv<W: Write>(field: &ValueField, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for (key, value) in field.sorted_entries() {
        writer.serialize(Row {
            depth: key.node.depth,
            node_id: key.node.index,
            history: key.history.encode(),
            budget: key.budget,
            value,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`] for `problem`. The root budget
/// is the largest budget stored at `(root, empty history)`.
pub fn read_field_csv<R: Read>(problem: &ImpulseProblem, input: R) -> Result<ValueField> {
    let mut reader = csv::Reader::from_reader(input);
    let mut table = HashMap::new();
    let mut budget = None;
    for row in reader.deserialize() {
        let row: Row = row?;
        let node = NodeId::new(row.depth, row.node_id);
        if row.depth > problem.lattice.steps() || row.node_id >= problem.lattice.width(row.depth) {
            return Err(Error::Config(format!("field row names unknown node {node}")));
        }
        let history = InterventionHistory::parse(&row.history)?;
        if node == NodeId::ROOT && history.is_empty() {
            budget = Some(budget.map_or(row.budget, |b: usize| b.max(row.budget)));
        }
        table.insert(FieldKey::new(node, history, row.budget), row.value);
    }
    let budget = budget.ok_or_else(|| Error::MissingValue("field has no root entry".into()))?;
    Ok(ValueField::from_table(problem.clone(), budget, table))
}
