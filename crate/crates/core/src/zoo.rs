//! Built-in architecture fixtures, shipped as IR documents under `zoo/`.

use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{parse_ir, LayerKind, Model};

const FIXTURES: &[(&str, &str)] = &[
    ("inception_block", include_str!("../zoo/inception_block.json")),
    ("lenet5", include_str!("../zoo/lenet5.json")),
    ("vgg16", include_str!("../zoo/vgg16.json")),
    ("vgg19", include_str!("../zoo/vgg19.json")),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no zoo model named `{0}`")]
pub struct NotFound(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct ZooEntry {
    pub name: &'static str,
    pub description: String,
    /// Default input extents, `HxWxC`.
    pub input_shape: String,
    pub model: Model,
    /// The fixture document as shipped.
    pub source: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZooSummary {
    pub name: String,
    pub description: String,
    pub input_shape: String,
    pub layers: usize,
}

fn registry() -> &'static [ZooEntry] {
    static REGISTRY: OnceLock<Vec<ZooEntry>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        FIXTURES
            .iter()
            .map(|(name, source)| {
                let model = parse_ir(source).unwrap_or_else(|e| panic!("zoo fixture {name} is invalid: {e}"));
                let input = model
                    .layers
                    .iter()
                    .find(|l| l.kind == LayerKind::Input)
                    .and_then(|l| model.default_input_shape(&l.id))
                    .unwrap_or_default()
                    .to_string();
                ZooEntry {
                    name,
                    description: model.metadata.get("description").cloned().unwrap_or_default(),
                    input_shape: input,
                    model,
                    source,
                }
            })
            .collect()
    })
}

pub fn zoo_entries() -> &'static [ZooEntry] {
    registry()
}

/// Summaries in alphabetical order.
pub fn zoo_list() -> Vec<ZooSummary> {
    registry()
        .iter()
        .map(|e| ZooSummary {
            name: e.name.to_string(),
            description: e.description.clone(),
            input_shape: e.input_shape.clone(),
            layers: e.model.layers.len(),
        })
        .collect()
}

/// A fresh copy of the named fixture.
pub fn zoo_get(name: &str) -> Result<Model, NotFound> {
    registry()
        .iter()
        .find(|e| e.name == name)
        .map(|e| e.model.clone())
        .ok_or_else(|| NotFound(name.to_string()))
}
