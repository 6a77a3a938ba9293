//! Layer-level model representation.
//!
//! A [`Model`] is a directed graph of typed [`Layer`]s. Edges are a set of
//! `(from, to)` id pairs, so connecting the same pair twice is a no-op.
//! Acyclicity is not enforced on construction; designs in progress may be
//! broken and the linter needs to see them. [`topo_order`] and the shape
//! engine reject cycles.
//!
//! All public operations that "change" a model return a new value and leave
//! the receiver untouched. The `insert_*` / `remove_*` methods are the
//! in-place counterparts used by builders and importers.

mod graph;
mod iso;
mod serial;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{dfs_back_edges, reachable_from_inputs, topo_order, topo_order_lenient, BackEdge};
pub use iso::graph_isomorphic;
pub use serial::{parse_ir, serialize_ir, IR_FORMAT, IR_VERSION};

/// Metadata key carrying the IR version.
pub const META_IR_VERSION: &str = "ir_version";
/// Metadata key for the training learning rate (checked by lint rule L9).
pub const META_LEARNING_RATE: &str = "learning_rate";
/// Metadata key prefix for default input shapes: `input_shape.<layer-id>` = `HxWxC`.
pub const META_INPUT_SHAPE_PREFIX: &str = "input_shape.";
/// Metadata key for a free-text model description.
pub const META_DESCRIPTION: &str = "description";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("duplicate layer id `{0}`")]
    DuplicateId(String),
    #[error("unknown layer id `{0}`")]
    UnknownId(String),
    #[error("self-loop on layer `{0}`")]
    SelfLoop(String),
    #[error("invalid layer id `{0}` (expected [A-Za-z0-9_./-]+)")]
    InvalidId(String),
    #[error("layer `{id}`: parameters do not match kind {kind}")]
    ParamsMismatch { id: String, kind: LayerKind },
    #[error("cycle detected: {}", .ids.join(" -> "))]
    CycleDetected { ids: Vec<String> },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported IR version {0}")]
    UnsupportedVersion(u64),
    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),
    #[error("invalid document: {0}")]
    Schema(String),
}

/// The closed set of layer kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    Input,
    Conv2D,
    MaxPool2D,
    AvgPool2D,
    Dense,
    Flatten,
    Dropout,
    BatchNorm,
    Activation,
    Concat,
    Add,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 12] = [
        LayerKind::Input,
        LayerKind::Conv2D,
        LayerKind::MaxPool2D,
        LayerKind::AvgPool2D,
        LayerKind::Dense,
        LayerKind::Flatten,
        LayerKind::Dropout,
        LayerKind::BatchNorm,
        LayerKind::Activation,
        LayerKind::Concat,
        LayerKind::Add,
        LayerKind::Softmax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Input => "Input",
            LayerKind::Conv2D => "Conv2D",
            LayerKind::MaxPool2D => "MaxPool2D",
            LayerKind::AvgPool2D => "AvgPool2D",
            LayerKind::Dense => "Dense",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dropout => "Dropout",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::Activation => "Activation",
            LayerKind::Concat => "Concat",
            LayerKind::Add => "Add",
            LayerKind::Softmax => "Softmax",
        }
    }

    pub fn is_pool(self) -> bool {
        matches!(self, LayerKind::MaxPool2D | LayerKind::AvgPool2D)
    }

    /// Layers whose output shape equals their input shape.
    pub fn preserves_shape(self) -> bool {
        matches!(
            self,
            LayerKind::Activation | LayerKind::Dropout | LayerKind::BatchNorm | LayerKind::Softmax
        )
    }

    /// Parameters a freshly created layer of this kind starts with.
    pub fn default_params(self) -> LayerParams {
        match self {
            LayerKind::Conv2D => LayerParams::Conv2D(ConvParams::new(1, (1, 1))),
            LayerKind::MaxPool2D | LayerKind::AvgPool2D => LayerParams::Pool(PoolParams::new((2, 2), (2, 2))),
            LayerKind::Dense => LayerParams::Dense(DenseParams { units: 1 }),
            LayerKind::Dropout => LayerParams::Dropout(DropoutParams { rate: 0.5 }),
            LayerKind::Activation => LayerParams::Activation(ActivationParams {
                function: ActivationFn::Relu,
            }),
            LayerKind::Concat => LayerParams::Concat(ConcatParams::default()),
            _ => LayerParams::Empty,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = IrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| IrError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Floor,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFn {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

impl ActivationFn {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivationFn::Relu => "relu",
            ActivationFn::Sigmoid => "sigmoid",
            ActivationFn::Tanh => "tanh",
            ActivationFn::Softmax => "softmax",
        }
    }
}

impl FromStr for ActivationFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(ActivationFn::Relu),
            "sigmoid" => Ok(ActivationFn::Sigmoid),
            "tanh" => Ok(ActivationFn::Tanh),
            "softmax" => Ok(ActivationFn::Softmax),
            other => Err(format!("unknown activation function `{other}`")),
        }
    }
}

fn unit_pair() -> (u32, u32) {
    (1, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub filters: u32,
    pub kernel: (u32, u32),
    #[serde(default = "unit_pair")]
    pub stride: (u32, u32),
    #[serde(default)]
    pub pad: (u32, u32),
    #[serde(default)]
    pub rounding: Rounding,
}

impl ConvParams {
    pub fn new(filters: u32, kernel: (u32, u32)) -> Self {
        ConvParams {
            filters,
            kernel,
            stride: (1, 1),
            pad: (0, 0),
            rounding: Rounding::Floor,
        }
    }

    pub fn with_stride(mut self, stride: (u32, u32)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad: (u32, u32)) -> Self {
        self.pad = pad;
        self
    }

    pub fn window(&self) -> Window {
        Window {
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            rounding: self.rounding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolParams {
    pub kernel: (u32, u32),
    #[serde(default = "unit_pair")]
    pub stride: (u32, u32),
    #[serde(default)]
    pub pad: (u32, u32),
    #[serde(default)]
    pub rounding: Rounding,
}

impl PoolParams {
    pub fn new(kernel: (u32, u32), stride: (u32, u32)) -> Self {
        PoolParams {
            kernel,
            stride,
            pad: (0, 0),
            rounding: Rounding::Floor,
        }
    }

    pub fn with_pad(mut self, pad: (u32, u32)) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn window(&self) -> Window {
        Window {
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            rounding: self.rounding,
        }
    }
}

/// The sliding-window geometry shared by convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: (u32, u32),
    pub stride: (u32, u32),
    pub pad: (u32, u32),
    pub rounding: Rounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseParams {
    pub units: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutParams {
    /// Valid rates lie in the open interval (0, 1); anything else is kept
    /// as-is and reported by the linter.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationParams {
    #[serde(rename = "fn")]
    pub function: ActivationFn,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcatAxis {
    #[default]
    Channel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcatParams {
    #[serde(default)]
    pub axis: ConcatAxis,
}

/// Kind-specific hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerParams {
    Conv2D(ConvParams),
    Pool(PoolParams),
    Dense(DenseParams),
    Dropout(DropoutParams),
    Activation(ActivationParams),
    Concat(ConcatParams),
    Empty,
}

impl LayerParams {
    pub fn fits(&self, kind: LayerKind) -> bool {
        matches!(
            (kind, self),
            (LayerKind::Conv2D, LayerParams::Conv2D(_))
                | (LayerKind::MaxPool2D | LayerKind::AvgPool2D, LayerParams::Pool(_))
                | (LayerKind::Dense, LayerParams::Dense(_))
                | (LayerKind::Dropout, LayerParams::Dropout(_))
                | (LayerKind::Activation, LayerParams::Activation(_))
                | (LayerKind::Concat, LayerParams::Concat(_))
                | (
                    LayerKind::Input | LayerKind::Flatten | LayerKind::BatchNorm | LayerKind::Add | LayerKind::Softmax,
                    LayerParams::Empty
                )
        )
    }

    pub fn window(&self) -> Option<Window> {
        match self {
            LayerParams::Conv2D(c) => Some(c.window()),
            LayerParams::Pool(p) => Some(p.window()),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let value = match self {
            LayerParams::Conv2D(p) => serde_json::to_value(p),
            LayerParams::Pool(p) => serde_json::to_value(p),
            LayerParams::Dense(p) => serde_json::to_value(p),
            LayerParams::Dropout(p) => serde_json::to_value(p),
            LayerParams::Activation(p) => serde_json::to_value(p),
            LayerParams::Concat(p) => serde_json::to_value(p),
            LayerParams::Empty => Ok(serde_json::Value::Object(Default::default())),
        };
        value.expect("layer params always serialize")
    }

    pub fn from_json(kind: LayerKind, value: serde_json::Value) -> Result<Self, String> {
        fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        Ok(match kind {
            LayerKind::Conv2D => LayerParams::Conv2D(de(value)?),
            LayerKind::MaxPool2D | LayerKind::AvgPool2D => LayerParams::Pool(de(value)?),
            LayerKind::Dense => LayerParams::Dense(de(value)?),
            LayerKind::Dropout => LayerParams::Dropout(de(value)?),
            LayerKind::Activation => LayerParams::Activation(de(value)?),
            LayerKind::Concat => LayerParams::Concat(de(value)?),
            _ => match value {
                serde_json::Value::Object(map) if map.is_empty() => LayerParams::Empty,
                serde_json::Value::Null => LayerParams::Empty,
                other => return Err(format!("{kind} takes no parameters, got {other}")),
            },
        })
    }
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'/' | b'-'))
}

/// Maps an arbitrary label onto the layer-id alphabet.
pub fn sanitize_id(raw: &str) -> String {
    let s: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "_".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: String,
    pub kind: LayerKind,
    pub params: LayerParams,
    pub name: String,
}

impl Layer {
    /// Builds a layer, checking the id alphabet and that `params` belongs to `kind`.
    pub fn new(id: impl Into<String>, kind: LayerKind, params: LayerParams) -> Result<Self, IrError> {
        let id = id.into();
        if !is_valid_id(&id) {
            return Err(IrError::InvalidId(id));
        }
        if !params.fits(kind) {
            return Err(IrError::ParamsMismatch { id, kind });
        }
        Ok(Layer {
            name: id.clone(),
            id,
            kind,
            params,
        })
    }

    fn unchecked(id: &str, kind: LayerKind, params: LayerParams) -> Self {
        Layer::new(id, kind, params).expect("constructor called with a valid id")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    // Shorthand constructors. They panic on ids outside the id alphabet, so
    // only use them with literal or sanitized ids.

    pub fn input(id: &str) -> Self {
        Self::unchecked(id, LayerKind::Input, LayerParams::Empty)
    }

    pub fn conv2d(id: &str, params: ConvParams) -> Self {
        Self::unchecked(id, LayerKind::Conv2D, LayerParams::Conv2D(params))
    }

    pub fn max_pool(id: &str, params: PoolParams) -> Self {
        Self::unchecked(id, LayerKind::MaxPool2D, LayerParams::Pool(params))
    }

    pub fn avg_pool(id: &str, params: PoolParams) -> Self {
        Self::unchecked(id, LayerKind::AvgPool2D, LayerParams::Pool(params))
    }

    pub fn dense(id: &str, units: u32) -> Self {
        Self::unchecked(id, LayerKind::Dense, LayerParams::Dense(DenseParams { units }))
    }

    pub fn flatten(id: &str) -> Self {
        Self::unchecked(id, LayerKind::Flatten, LayerParams::Empty)
    }

    pub fn dropout(id: &str, rate: f64) -> Self {
        Self::unchecked(id, LayerKind::Dropout, LayerParams::Dropout(DropoutParams { rate }))
    }

    pub fn batch_norm(id: &str) -> Self {
        Self::unchecked(id, LayerKind::BatchNorm, LayerParams::Empty)
    }

    pub fn activation(id: &str, function: ActivationFn) -> Self {
        Self::unchecked(
            id,
            LayerKind::Activation,
            LayerParams::Activation(ActivationParams { function }),
        )
    }

    pub fn concat(id: &str) -> Self {
        Self::unchecked(id, LayerKind::Concat, LayerParams::Concat(ConcatParams::default()))
    }

    pub fn add(id: &str) -> Self {
        Self::unchecked(id, LayerKind::Add, LayerParams::Empty)
    }

    pub fn softmax(id: &str) -> Self {
        Self::unchecked(id, LayerKind::Softmax, LayerParams::Empty)
    }

    /// True for Softmax layers and softmax activations.
    pub fn is_softmax(&self) -> bool {
        match (self.kind, &self.params) {
            (LayerKind::Softmax, _) => true,
            (LayerKind::Activation, LayerParams::Activation(a)) => a.function == ActivationFn::Softmax,
            _ => false,
        }
    }
}

/// A directed graph of layers plus free-form string metadata.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub layers: Vec<Layer>,
    pub edges: BTreeSet<(String, String)>,
    pub metadata: BTreeMap<String, String>,
}

impl Default for Model {
    fn default() -> Self {
        Model::new("model")
    }
}

/// Structural equality: layer order is irrelevant, everything else must match.
impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        if self.name != other.name
            || self.edges != other.edges
            || self.metadata != other.metadata
            || self.layers.len() != other.layers.len()
        {
            return false;
        }
        let mut theirs: Vec<&Layer> = other.layers.iter().collect();
        let mut ours: Vec<&Layer> = self.layers.iter().collect();
        ours.sort_by(|a, b| a.id.cmp(&b.id));
        theirs.sort_by(|a, b| a.id.cmp(&b.id));
        ours == theirs
    }
}

impl Model {
    pub fn new(name: impl Into<String>) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert(META_IR_VERSION.to_string(), IR_VERSION.to_string());
        Model {
            name: name.into(),
            layers: Vec::new(),
            edges: BTreeSet::new(),
            metadata,
        }
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_mut(&mut self, id: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.layer(id).is_some()
    }

    /// Returns a copy of the model with `layer` added.
    pub fn add_layer(&self, layer: Layer) -> Result<Model, IrError> {
        let mut next = self.clone();
        next.insert_layer(layer)?;
        Ok(next)
    }

    /// Returns a copy of the model with the edge `from -> to` added.
    pub fn connect(&self, from: &str, to: &str) -> Result<Model, IrError> {
        let mut next = self.clone();
        next.insert_edge(from, to)?;
        Ok(next)
    }

    pub fn insert_layer(&mut self, layer: Layer) -> Result<(), IrError> {
        if !is_valid_id(&layer.id) {
            return Err(IrError::InvalidId(layer.id));
        }
        if !layer.params.fits(layer.kind) {
            return Err(IrError::ParamsMismatch {
                id: layer.id,
                kind: layer.kind,
            });
        }
        if self.contains(&layer.id) {
            return Err(IrError::DuplicateId(layer.id));
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn insert_edge(&mut self, from: &str, to: &str) -> Result<(), IrError> {
        for id in [from, to] {
            if !self.contains(id) {
                return Err(IrError::UnknownId(id.to_string()));
            }
        }
        if from == to {
            return Err(IrError::SelfLoop(from.to_string()));
        }
        self.edges.insert((from.to_string(), to.to_string()));
        Ok(())
    }

    /// Adds `layer` and connects it after `from`.
    pub fn append(&mut self, from: &str, layer: Layer) -> Result<(), IrError> {
        let id = layer.id.clone();
        self.insert_layer(layer)?;
        self.insert_edge(from, &id)
    }

    pub fn remove_edge(&mut self, from: &str, to: &str) -> bool {
        self.edges.remove(&(from.to_string(), to.to_string()))
    }

    /// Removes a layer and every edge touching it.
    pub fn remove_layer(&mut self, id: &str) -> Option<Layer> {
        let pos = self.layers.iter().position(|l| l.id == id)?;
        self.edges.retain(|(a, b)| a != id && b != id);
        Some(self.layers.remove(pos))
    }

    /// Ids of direct predecessors, sorted by id.
    pub fn predecessors(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, to)| to == id)
            .map(|(from, _)| from.as_str())
            .collect()
    }

    /// Ids of direct successors, sorted by id.
    pub fn successors(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(from, _)| from == id)
            .map(|(_, to)| to.as_str())
            .collect()
    }

    pub fn input_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Input)
            .map(|l| l.id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Layers without outgoing edges, sorted by id.
    pub fn terminal_ids(&self) -> Vec<&str> {
        let sources: BTreeSet<&str> = self.edges.iter().map(|(f, _)| f.as_str()).collect();
        let mut ids: Vec<&str> = self
            .layers
            .iter()
            .map(|l| l.id.as_str())
            .filter(|id| !sources.contains(id))
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Returns a fresh id derived from `base` that is not used by any layer.
    pub fn fresh_id(&self, base: &str) -> String {
        let base = sanitize_id(base);
        if !self.contains(&base) {
            return base;
        }
        (1..)
            .map(|n| format!("{base}_{n}"))
            .find(|id| !self.contains(id))
            .expect("unbounded search")
    }

    pub fn learning_rate(&self) -> Option<&str> {
        self.metadata.get(META_LEARNING_RATE).map(String::as_str)
    }

    /// Default input extents recorded under `input_shape.<id>`.
    pub fn default_input_shape(&self, input_id: &str) -> Option<&str> {
        self.metadata
            .get(&format!("{META_INPUT_SHAPE_PREFIX}{input_id}"))
            .map(String::as_str)
    }

    pub fn set_default_input_shape(&mut self, input_id: &str, dims: &[usize]) {
        let rendered = dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        self.metadata
            .insert(format!("{META_INPUT_SHAPE_PREFIX}{input_id}"), rendered);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str) -> Layer {
        Layer::conv2d(id, ConvParams::new(64, (3, 3)).with_pad((1, 1)))
    }

    #[test]
    fn add_layer_to_empty_model() {
        let empty = Model::new("m");
        let m = empty.add_layer(Layer::input("in")).unwrap();
        assert_eq!(m.layers.len(), 1);
        assert!(empty.layers.is_empty(), "input value must not change");
    }

    #[test]
    fn add_second_layer_without_edges() {
        let m = Model::new("m").add_layer(Layer::input("in")).unwrap();
        let m2 = m.add_layer(conv("c1")).unwrap();
        assert_eq!(m2.layers.len(), 2);
        assert!(m2.edges.is_empty());
        assert_eq!(m.layers.len(), 1);
    }

    #[test]
    fn add_duplicate_id_fails() {
        let m = Model::new("m").add_layer(Layer::input("in")).unwrap();
        assert_eq!(m.add_layer(Layer::input("in")), Err(IrError::DuplicateId("in".into())));
    }

    #[test]
    fn connect_is_idempotent() {
        let m = Model::new("m")
            .add_layer(Layer::input("in"))
            .unwrap()
            .add_layer(conv("c1"))
            .unwrap();
        let once = m.connect("in", "c1").unwrap();
        assert!(once.edges.contains(&("in".to_string(), "c1".to_string())));
        let twice = once.connect("in", "c1").unwrap();
        assert_eq!(twice.edges.len(), 1);
        assert!(m.edges.is_empty());
    }

    #[test]
    fn connect_errors() {
        let m = Model::new("m").add_layer(conv("c1")).unwrap();
        assert_eq!(m.connect("c1", "c1"), Err(IrError::SelfLoop("c1".into())));
        assert_eq!(m.connect("c1", "x"), Err(IrError::UnknownId("x".into())));
    }

    #[test]
    fn id_alphabet() {
        assert!(is_valid_id("conv1_1/a.b-c"));
        assert!(!is_valid_id(""));
        assert!(!is_valid_id("a b"));
        assert!(matches!(
            Layer::new("a b", LayerKind::Flatten, LayerParams::Empty),
            Err(IrError::InvalidId(_))
        ));
        assert_eq!(sanitize_id("conv 1:x"), "conv_1_x");
    }

    #[test]
    fn params_must_fit_kind() {
        let err = Layer::new("d", LayerKind::Dense, LayerParams::Empty).unwrap_err();
        assert!(matches!(err, IrError::ParamsMismatch { .. }));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in LayerKind::ALL {
            assert_eq!(kind.as_str().parse::<LayerKind>().unwrap(), kind);
        }
        assert_eq!("LSTM".parse::<LayerKind>(), Err(IrError::UnknownKind("LSTM".into())));
    }

    #[test]
    fn structural_equality_ignores_layer_order() {
        let mut a = Model::new("m");
        a.insert_layer(Layer::input("in")).unwrap();
        a.insert_layer(Layer::flatten("f")).unwrap();
        let mut b = Model::new("m");
        b.insert_layer(Layer::flatten("f")).unwrap();
        b.insert_layer(Layer::input("in")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn remove_layer_drops_edges() {
        let mut m = Model::new("m");
        m.insert_layer(Layer::input("in")).unwrap();
        m.append("in", Layer::flatten("f")).unwrap();
        m.remove_layer("f").unwrap();
        assert!(m.edges.is_empty());
    }

    #[test]
    fn fresh_id_avoids_collisions() {
        let mut m = Model::new("m");
        m.insert_layer(Layer::flatten("flatten")).unwrap();
        m.insert_layer(Layer::flatten("flatten_1")).unwrap();
        assert_eq!(m.fresh_id("flatten"), "flatten_2");
        assert_eq!(m.fresh_id("bn"), "bn");
    }
}
