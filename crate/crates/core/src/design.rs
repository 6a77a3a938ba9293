//! Headless model of the canvas editor: a pure reducer over edit commands.
//!
//! The editable state is an IR model plus presentation data (positions,
//! selection). Dropping the presentation data always leaves a document that
//! serializes; designs with lint errors are allowed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ir::{self, serialize_ir, Layer, LayerKind, LayerParams, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Edit {
    AddNode {
        #[serde(default)]
        id: Option<String>,
        kind: LayerKind,
        /// Overrides on top of the kind's default parameters.
        #[serde(default)]
        params: Option<Value>,
        #[serde(default)]
        x: f64,
        #[serde(default)]
        y: f64,
    },
    MoveNode {
        id: String,
        x: f64,
        y: f64,
    },
    Connect {
        from: String,
        to: String,
    },
    Disconnect {
        from: String,
        to: String,
    },
    SetParam {
        id: String,
        key: String,
        value: Value,
    },
    /// Removes a node and its edges.
    Delete {
        id: String,
    },
    SetMetadata {
        key: String,
        value: Option<String>,
    },
    Select {
        id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    pub model: Model,
    pub positions: BTreeMap<String, (f64, f64)>,
    pub selection: Option<String>,
    /// Set by every accepted edit that changes the model.
    pub dirty: bool,
    /// Nodes edited since the last validation result was applied.
    pub pending: BTreeSet<String>,
    /// Incremented by every accepted edit; validation responses carrying an
    /// older revision are stale.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub state: DesignState,
    /// Why the edit was refused; the state is then unchanged.
    pub rejected: Option<String>,
}

impl DesignState {
    pub fn new(name: &str) -> Self {
        DesignState::from_model(Model::new(name))
    }

    /// Loads a model, placing nodes in a column by topological order.
    pub fn from_model(model: Model) -> Self {
        let positions = ir::topo_order_lenient(&model)
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, (0.0, 80.0 * i as f64)))
            .collect();
        DesignState {
            model,
            positions,
            selection: None,
            dirty: false,
            pending: BTreeSet::new(),
            revision: 0,
        }
    }

    /// The IR document for this design.
    pub fn to_document(&self) -> String {
        serialize_ir(&self.model)
    }

    /// Clears pending badges when a validation result for `revision` arrives;
    /// returns false for stale results.
    pub fn accept_validation(&mut self, revision: u64) -> bool {
        if revision != self.revision {
            return false;
        }
        self.pending.clear();
        true
    }
}

fn reject(state: &DesignState, reason: impl Into<String>) -> EditOutcome {
    EditOutcome {
        state: state.clone(),
        rejected: Some(reason.into()),
    }
}

fn merge_params(kind: LayerKind, base: &LayerParams, patch: Value) -> Result<LayerParams, String> {
    let mut merged = base.to_json();
    match (merged.as_object_mut(), patch) {
        (Some(obj), Value::Object(patch)) => obj.extend(patch),
        (_, Value::Null) => {}
        (_, other) => return Err(format!("params must be an object, got {other}")),
    }
    LayerParams::from_json(kind, merged)
}

/// Applies one edit. Pure: `state` is not modified.
pub fn apply_edit(state: &DesignState, edit: &Edit) -> EditOutcome {
    let mut next = state.clone();
    let mut touches_model = true;
    match edit {
        Edit::AddNode { id, kind, params, x, y } => {
            let id = match id {
                Some(id) if next.model.contains(id) => return reject(state, format!("id `{id}` already in use")),
                Some(id) => id.clone(),
                None => next.model.fresh_id(&kind.as_str().to_ascii_lowercase()),
            };
            let params = match merge_params(*kind, &kind.default_params(), params.clone().unwrap_or(Value::Null)) {
                Ok(p) => p,
                Err(e) => return reject(state, e),
            };
            let layer = match Layer::new(id.clone(), *kind, params) {
                Ok(l) => l,
                Err(e) => return reject(state, e.to_string()),
            };
            next.model.insert_layer(layer).expect("id checked above");
            next.positions.insert(id.clone(), (*x, *y));
            next.pending.insert(id);
        }
        Edit::MoveNode { id, x, y } => {
            if !next.model.contains(id) {
                return reject(state, format!("no node `{id}`"));
            }
            next.positions.insert(id.clone(), (*x, *y));
            touches_model = false;
        }
        Edit::Connect { from, to } => {
            if from == to || next.model.edges.contains(&(to.clone(), from.clone())) || reaches(&next.model, to, from) {
                return reject(state, "would create cycle");
            }
            if let Err(e) = next.model.insert_edge(from, to) {
                return reject(state, e.to_string());
            }
            next.pending.insert(to.clone());
        }
        Edit::Disconnect { from, to } => {
            if !next.model.remove_edge(from, to) {
                return reject(state, format!("no edge {from} -> {to}"));
            }
            next.pending.insert(to.clone());
        }
        Edit::SetParam { id, key, value } => {
            let Some(layer) = next.model.layer(id) else {
                return reject(state, format!("no node `{id}`"));
            };
            let patch = Value::Object([(key.clone(), value.clone())].into_iter().collect());
            match merge_params(layer.kind, &layer.params, patch) {
                Ok(p) => next.model.layer_mut(id).expect("looked up above").params = p,
                Err(e) => return reject(state, e),
            }
            next.pending.insert(id.clone());
        }
        Edit::Delete { id } => {
            if next.model.remove_layer(id).is_none() {
                return reject(state, format!("no node `{id}`"));
            }
            next.positions.remove(id);
            next.pending.remove(id);
            if next.selection.as_deref() == Some(id) {
                next.selection = None;
            }
        }
        Edit::SetMetadata { key, value } => match value {
            Some(v) => {
                next.model.metadata.insert(key.clone(), v.clone());
            }
            None => {
                next.model.metadata.remove(key);
            }
        },
        Edit::Select { id } => {
            if let Some(id) = id {
                if !next.model.contains(id) {
                    return reject(state, format!("no node `{id}`"));
                }
            }
            next.selection = id.clone();
            touches_model = false;
        }
    }
    if touches_model {
        next.dirty = true;
    }
    next.revision += 1;
    EditOutcome {
        state: next,
        rejected: None,
    }
}

/// Applies edits in order, stopping at the first rejection.
pub fn replay(mut state: DesignState, edits: &[Edit]) -> Result<DesignState, (usize, String)> {
    for (i, edit) in edits.iter().enumerate() {
        let out = apply_edit(&state, edit);
        if let Some(reason) = out.rejected {
            return Err((i, reason));
        }
        state = out.state;
    }
    Ok(state)
}

fn reaches(model: &Model, from: &str, target: &str) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if n == target {
            return true;
        }
        if seen.insert(n) {
            stack.extend(model.successors(n));
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn add(id: &str, kind: LayerKind) -> Edit {
        Edit::AddNode {
            id: Some(id.into()),
            kind,
            params: None,
            x: 100.0,
            y: 80.0,
        }
    }

    #[test]
    fn add_node_marks_dirty() {
        let s = DesignState::new("d");
        let out = apply_edit(&s, &add("c", LayerKind::Conv2D));
        assert!(out.rejected.is_none());
        assert_eq!(out.state.model.layers.len(), 1);
        assert!(out.state.dirty);
        assert_eq!(out.state.positions["c"], (100.0, 80.0));
        assert!(!s.dirty);
    }

    #[test]
    fn cycle_rejected_in_place() {
        let s = replay(
            DesignState::new("d"),
            &[
                add("a", LayerKind::Dense),
                add("b", LayerKind::Dense),
                Edit::Connect {
                    from: "a".into(),
                    to: "b".into(),
                },
            ],
        )
        .unwrap();
        let out = apply_edit(
            &s,
            &Edit::Connect {
                from: "b".into(),
                to: "a".into(),
            },
        );
        assert_eq!(out.rejected.as_deref(), Some("would create cycle"));
        assert_eq!(out.state, s);
    }

    #[test]
    fn zero_filters_accepted_and_pending() {
        let s = replay(DesignState::new("d"), &[add("c", LayerKind::Conv2D)]).unwrap();
        let mut s = s;
        s.pending.clear();
        let out = apply_edit(
            &s,
            &Edit::SetParam {
                id: "c".into(),
                key: "filters".into(),
                value: json!(0),
            },
        );
        assert!(out.rejected.is_none());
        assert!(out.state.pending.contains("c"));
        let bad = apply_edit(
            &s,
            &Edit::SetParam {
                id: "c".into(),
                key: "filters".into(),
                value: json!(-1),
            },
        );
        assert!(bad.rejected.is_some());
        assert_eq!(bad.state, s);
    }

    #[test]
    fn edits_deserialize() {
        let e: Edit =
            serde_json::from_value(json!({"op": "add-node", "kind": "Conv2D", "params": {"filters": 6}})).unwrap();
        assert!(matches!(
            e,
            Edit::AddNode {
                kind: LayerKind::Conv2D,
                ..
            }
        ));
        let e: Edit = serde_json::from_value(json!({"op": "set-metadata", "key": "k", "value": "v"})).unwrap();
        assert_eq!(
            e,
            Edit::SetMetadata {
                key: "k".into(),
                value: Some("v".into())
            }
        );
    }

    #[test]
    fn stale_validation_ignored() {
        let mut s = replay(DesignState::new("d"), &[add("a", LayerKind::Input)]).unwrap();
        assert!(!s.accept_validation(0));
        assert!(s.accept_validation(1));
        assert!(s.pending.is_empty());
    }
}
