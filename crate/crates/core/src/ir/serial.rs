//! The `darviz-ir` JSON interchange format.
//!
//! Output is byte-deterministic: object keys are sorted, layers appear in
//! topological order with lexicographic tie-breaking, and edges follow the
//! position of their endpoints in that order. Each layer and edge sits on
//! its own line so diffs of fixture files stay readable.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{graph, IrError, LayerKind, LayerParams, Model};
use crate::ir::Layer;

pub const IR_FORMAT: &str = "darviz-ir";
pub const IR_VERSION: u64 = 1;

fn sorted(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let entries: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sorted(v))).collect();
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, v);
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Renders a model as a `darviz-ir` document.
///
/// Cyclic models are still serialized; the layers that cannot be ordered
/// topologically follow the rest in id order.
pub fn serialize_ir(model: &Model) -> String {
    let order = graph::topo_order_lenient(model);
    let position: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let mut edges: Vec<&(String, String)> = model.edges.iter().collect();
    edges.sort_by_key(|(f, t)| (position.get(f.as_str()).copied(), position.get(t.as_str()).copied()));

    let mut out = String::from("{\n");
    out.push_str("  \"edges\": [");
    for (i, (from, to)) in edges.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(out, "    [{}, {}]", json_string(from), json_string(to));
    }
    out.push_str(if edges.is_empty() { "],\n" } else { "\n  ],\n" });

    let _ = writeln!(out, "  \"format\": {},", json_string(IR_FORMAT));

    out.push_str("  \"layers\": [");
    for (i, id) in order.iter().enumerate() {
        let layer = model.layer(id).expect("ordered ids come from the model");
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(layer.id.clone()));
        obj.insert("kind".into(), Value::String(layer.kind.as_str().into()));
        obj.insert("name".into(), Value::String(layer.name.clone()));
        obj.insert("params".into(), sorted(layer.params.to_json()));
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(out, "    {}", Value::Object(obj));
    }
    out.push_str(if order.is_empty() { "],\n" } else { "\n  ],\n" });

    out.push_str("  \"metadata\": {");
    for (i, (k, v)) in model.metadata.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(out, "    {}: {}", json_string(k), json_string(v));
    }
    out.push_str(if model.metadata.is_empty() { "},\n" } else { "\n  },\n" });

    let _ = writeln!(out, "  \"name\": {},", json_string(&model.name));
    let _ = writeln!(out, "  \"version\": {IR_VERSION}");
    out.push_str("}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    format: String,
    // checked before this struct is parsed
    #[serde(rename = "version")]
    _version: u64,
    name: String,
    layers: Vec<RawLayer>,
    #[serde(default)]
    edges: Vec<(String, String)>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    id: String,
    kind: String,
    #[serde(default)]
    params: Value,
    #[serde(default)]
    name: Option<String>,
}

fn located(err: serde_json::Error) -> IrError {
    IrError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Parses a `darviz-ir` document.
pub fn parse_ir(text: &str) -> Result<Model, IrError> {
    let value: Value = serde_json::from_str(text).map_err(located)?;
    let Value::Object(top) = &value else {
        return Err(IrError::Schema("document must be a JSON object".into()));
    };
    match top.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(IR_VERSION) => {}
        Some(Value::Number(n)) => {
            return Err(IrError::UnsupportedVersion(n.as_u64().unwrap_or(0)));
        }
        Some(_) => return Err(IrError::Schema("`version` must be an integer".into())),
        None => return Err(IrError::Schema("missing `version`".into())),
    }
    let raw: RawDoc = serde_json::from_str(text).map_err(located)?;
    if raw.format != IR_FORMAT {
        return Err(IrError::Schema(format!(
            "expected format `{IR_FORMAT}`, found `{}`",
            raw.format
        )));
    }

    let mut model = Model {
        name: raw.name,
        layers: Vec::with_capacity(raw.layers.len()),
        edges: Default::default(),
        metadata: raw.metadata,
    };
    for rl in raw.layers {
        let kind: LayerKind = rl.kind.parse()?;
        let params =
            LayerParams::from_json(kind, rl.params).map_err(|e| IrError::Schema(format!("layer `{}`: {e}", rl.id)))?;
        let name = rl.name.unwrap_or_else(|| rl.id.clone());
        model.insert_layer(Layer {
            id: rl.id,
            kind,
            params,
            name,
        })?;
    }
    for (from, to) in raw.edges {
        model.insert_edge(&from, &to)?;
    }
    Ok(model)
}
