//! Keras model-config JSON importer (Sequential and functional documents).

use std::collections::HashMap;

use serde_json::{Map, Value};

use super::{ImportError, ImportReport};
use crate::ir::{
    sanitize_id, ActivationFn, ActivationParams, ConcatParams, ConvParams, DenseParams, DropoutParams, Layer,
    LayerKind, LayerParams, Model, PoolParams,
};

type Obj = Map<String, Value>;

fn invalid(layer: &str, reason: impl Into<String>) -> ImportError {
    ImportError::Invalid {
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

fn unsupported(layer: &str, reason: impl Into<String>) -> ImportError {
    ImportError::Unsupported {
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

fn positive(layer: &str, key: &str, v: &Value) -> Result<u32, ImportError> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(layer, format!("`{key}` must be a positive integer, got {v}")))
}

/// An int or a two-element list of ints.
fn spatial(layer: &str, cfg: &Obj, key: &str, default: Option<(u32, u32)>) -> Result<(u32, u32), ImportError> {
    match cfg.get(key) {
        None | Some(Value::Null) => default.ok_or_else(|| invalid(layer, format!("missing `{key}`"))),
        Some(Value::Array(items)) => match items.as_slice() {
            [a, b] => Ok((positive(layer, key, a)?, positive(layer, key, b)?)),
            _ => Err(unsupported(layer, format!("`{key}` with {} axes", items.len()))),
        },
        Some(v) => {
            let n = positive(layer, key, v)?;
            Ok((n, n))
        }
    }
}

fn same_padding(layer: &str, cfg: &Obj, kernel: (u32, u32)) -> Result<(u32, u32), ImportError> {
    match cfg.get("padding").and_then(Value::as_str).unwrap_or("valid") {
        "valid" => Ok((0, 0)),
        "same" => {
            if kernel.0.is_multiple_of(2) || kernel.1.is_multiple_of(2) {
                return Err(ImportError::UnsupportedPadding {
                    layer: layer.to_string(),
                    kernel,
                });
            }
            Ok(((kernel.0 - 1) / 2, (kernel.1 - 1) / 2))
        }
        other => Err(unsupported(layer, format!("padding \"{other}\""))),
    }
}

fn channels_last(layer: &str, cfg: &Obj) -> Result<(), ImportError> {
    match cfg.get("data_format") {
        None | Some(Value::Null) => Ok(()),
        Some(Value::String(s)) if s == "channels_last" => Ok(()),
        Some(other) => Err(unsupported(layer, format!("data_format {other}"))),
    }
}

fn last_axis(layer: &str, cfg: &Obj) -> Result<(), ImportError> {
    let axis = match cfg.get("axis") {
        None => return Ok(()),
        Some(Value::Array(a)) if a.len() == 1 => &a[0],
        Some(v) => v,
    };
    match axis.as_i64() {
        Some(-1 | 3) => Ok(()),
        _ => Err(unsupported(
            layer,
            format!("axis {axis} (only the channel axis is supported)"),
        )),
    }
}

fn activation_fn(layer: &str, v: Option<&Value>) -> Result<Option<ActivationFn>, ImportError> {
    let name = match v {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::String(s)) => s.as_str(),
        Some(other) => return Err(unsupported(layer, format!("activation {other}"))),
    };
    match name {
        "linear" => Ok(None),
        other => other
            .parse()
            .map(Some)
            .map_err(|_| unsupported(layer, format!("activation \"{other}\""))),
    }
}

/// Nodes created for one Keras layer: `head` receives the inbound edges,
/// `tail` feeds the consumers. They differ when a fused activation was
/// split off.
struct Mapped {
    head: String,
    tail: String,
}

struct Importer {
    model: Model,
    notes: Vec<String>,
}

impl Importer {
    fn input(&mut self, name: &str, shape: Option<&Value>) -> Result<String, ImportError> {
        let id = self.model.fresh_id(&sanitize_id(name));
        self.model.insert_layer(Layer::input(&id).with_name(name))?;
        if let Some(Value::Array(dims)) = shape {
            // leading entry is the batch dimension
            let dims: Option<Vec<usize>> = dims
                .iter()
                .skip(1)
                .map(|d| d.as_u64().and_then(|d| usize::try_from(d).ok()).filter(|&d| d > 0))
                .collect();
            match dims {
                Some(d) if d.len() == 3 || d.len() == 1 => self.model.set_default_input_shape(&id, &d),
                _ => self.notes.push(format!("input `{name}`: shape not recorded")),
            }
        }
        Ok(id)
    }

    fn map(&mut self, class: &str, name: &str, cfg: &Obj) -> Result<Mapped, ImportError> {
        if class == "InputLayer" {
            let shape = cfg.get("batch_input_shape").or_else(|| cfg.get("batch_shape"));
            let id = self.input(name, shape)?;
            return Ok(Mapped {
                head: id.clone(),
                tail: id,
            });
        }

        let (kind, params, fused) = match class {
            "Conv2D" | "Convolution2D" => {
                channels_last(name, cfg)?;
                if spatial(name, cfg, "dilation_rate", Some((1, 1)))? != (1, 1) {
                    return Err(unsupported(name, "dilated convolution"));
                }
                if cfg.get("groups").and_then(Value::as_u64).unwrap_or(1) != 1 {
                    return Err(unsupported(name, "grouped convolution"));
                }
                let filters = positive(name, "filters", cfg.get("filters").unwrap_or(&Value::Null))?;
                let kernel = spatial(name, cfg, "kernel_size", None)?;
                let stride = spatial(name, cfg, "strides", Some((1, 1)))?;
                let pad = same_padding(name, cfg, kernel)?;
                let conv = ConvParams::new(filters, kernel).with_stride(stride).with_pad(pad);
                (
                    LayerKind::Conv2D,
                    LayerParams::Conv2D(conv),
                    activation_fn(name, cfg.get("activation"))?,
                )
            }
            "MaxPooling2D" | "AveragePooling2D" | "MaxPool2D" | "AvgPool2D" | "AveragePool2D" => {
                channels_last(name, cfg)?;
                let kernel = spatial(name, cfg, "pool_size", Some((2, 2)))?;
                let stride = spatial(name, cfg, "strides", Some(kernel))?;
                let pad = same_padding(name, cfg, kernel)?;
                let kind = if class.starts_with("Max") {
                    LayerKind::MaxPool2D
                } else {
                    LayerKind::AvgPool2D
                };
                (
                    kind,
                    LayerParams::Pool(PoolParams::new(kernel, stride).with_pad(pad)),
                    None,
                )
            }
            "Dense" => {
                let units = positive(name, "units", cfg.get("units").unwrap_or(&Value::Null))?;
                let act = activation_fn(name, cfg.get("activation"))?;
                (LayerKind::Dense, LayerParams::Dense(DenseParams { units }), act)
            }
            "Flatten" => (LayerKind::Flatten, LayerParams::Empty, None),
            "Dropout" => {
                let rate = cfg
                    .get("rate")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| invalid(name, "`rate` must be a number"))?;
                (LayerKind::Dropout, LayerParams::Dropout(DropoutParams { rate }), None)
            }
            "Activation" => {
                let function = activation_fn(name, cfg.get("activation"))?
                    .ok_or_else(|| unsupported(name, "linear activation layer"))?;
                (
                    LayerKind::Activation,
                    LayerParams::Activation(ActivationParams { function }),
                    None,
                )
            }
            "ReLU" => {
                let plain = ["max_value", "negative_slope", "threshold"]
                    .iter()
                    .all(|k| matches!(cfg.get(*k), None | Some(Value::Null)) || cfg[*k].as_f64() == Some(0.0));
                if !plain {
                    return Err(unsupported(name, "parameterized ReLU"));
                }
                let params = LayerParams::Activation(ActivationParams {
                    function: ActivationFn::Relu,
                });
                (LayerKind::Activation, params, None)
            }
            "Softmax" => {
                last_axis(name, cfg)?;
                (LayerKind::Softmax, LayerParams::Empty, None)
            }
            "Concatenate" => {
                last_axis(name, cfg)?;
                (LayerKind::Concat, LayerParams::Concat(ConcatParams::default()), None)
            }
            "Add" => (LayerKind::Add, LayerParams::Empty, None),
            "BatchNormalization" => {
                last_axis(name, cfg)?;
                (LayerKind::BatchNorm, LayerParams::Empty, None)
            }
            other => return Err(ImportError::UnsupportedClass(other.to_string())),
        };

        let head = self.model.fresh_id(&sanitize_id(name));
        self.model
            .insert_layer(Layer::new(head.clone(), kind, params)?.with_name(name))?;
        let tail = match fused {
            None => head.clone(),
            Some(function) => {
                let id = self.model.fresh_id(&format!("{head}_{}", function.as_str()));
                self.model.append(&head, Layer::activation(&id, function))?;
                self.notes.push(format!(
                    "layer `{name}`: fused {} activation materialized as `{id}`",
                    function.as_str()
                ));
                id
            }
        };
        Ok(Mapped { head, tail })
    }

    fn sequential(&mut self, layers: &[Value]) -> Result<(), ImportError> {
        let mut prev: Option<String> = None;
        for (i, entry) in layers.iter().enumerate() {
            let (class, name, cfg) = layer_header(entry, i)?;
            if prev.is_none() && class != "InputLayer" {
                let shape = cfg.get("batch_input_shape").or_else(|| cfg.get("batch_shape"));
                let shape = match (shape, cfg.get("input_shape")) {
                    (Some(s), _) => Some(s.clone()),
                    // `input_shape` omits the batch dimension
                    (None, Some(Value::Array(dims))) => Some(Value::Array(
                        std::iter::once(Value::Null).chain(dims.iter().cloned()).collect(),
                    )),
                    _ => None,
                };
                if shape.is_none() {
                    self.notes.push("no input shape declared; input left unbound".into());
                }
                let id = self.input("input", shape.as_ref())?;
                prev = Some(id);
            }
            let mapped = self.map(&class, &name, cfg)?;
            if let Some(p) = &prev {
                if class == "InputLayer" {
                    return Err(invalid(&name, "InputLayer after the first position"));
                }
                self.model.insert_edge(p, &mapped.head)?;
            }
            prev = Some(mapped.tail);
        }
        Ok(())
    }

    fn functional(&mut self, layers: &[Value]) -> Result<(), ImportError> {
        let mut tails: HashMap<String, String> = HashMap::new();
        let mut pending: Vec<(String, String, Vec<String>)> = Vec::new();
        for (i, entry) in layers.iter().enumerate() {
            let (class, name, cfg) = layer_header(entry, i)?;
            let inbound = inbound_names(&name, entry.get("inbound_nodes"))?;
            let mapped = self.map(&class, &name, cfg)?;
            if tails.insert(name.clone(), mapped.tail).is_some() {
                return Err(invalid(&name, "duplicate layer name"));
            }
            pending.push((name, mapped.head, inbound));
        }
        for (name, head, inbound) in pending {
            for src in inbound {
                let tail = tails
                    .get(&src)
                    .ok_or_else(|| invalid(&name, format!("inbound layer `{src}` not found")))?;
                self.model.insert_edge(tail, &head)?;
            }
        }
        Ok(())
    }
}

fn layer_header(entry: &Value, index: usize) -> Result<(String, String, &Obj), ImportError> {
    let class = entry
        .get("class_name")
        .and_then(Value::as_str)
        .ok_or_else(|| ImportError::Document(format!("layer #{index} has no `class_name`")))?;
    let cfg = entry
        .get("config")
        .and_then(Value::as_object)
        .ok_or_else(|| ImportError::Document(format!("layer #{index} has no `config` object")))?;
    let name = cfg
        .get("name")
        .or_else(|| entry.get("name"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}_{index}", class.to_ascii_lowercase()));
    Ok((class.to_string(), name, cfg))
}

/// Source layer names of a functional layer, in argument order.
fn inbound_names(layer: &str, nodes: Option<&Value>) -> Result<Vec<String>, ImportError> {
    let nodes = match nodes {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(nodes)) => nodes,
        Some(other) => return Err(invalid(layer, format!("malformed inbound_nodes {other}"))),
    };
    match nodes.as_slice() {
        [] => Ok(Vec::new()),
        [node] => {
            let mut names = Vec::new();
            match node {
                // [[name, node_index, tensor_index, kwargs], ...]
                Value::Array(tensors) => {
                    for t in tensors {
                        match t.get(0).and_then(Value::as_str) {
                            Some(n) => names.push(n.to_string()),
                            None => return Err(invalid(layer, format!("malformed inbound tensor {t}"))),
                        }
                    }
                }
                // {"args": [...], "kwargs": {...}} with keras_history markers
                Value::Object(call) => collect_history(call.get("args").unwrap_or(&Value::Null), &mut names),
                other => return Err(invalid(layer, format!("malformed inbound node {other}"))),
            }
            Ok(names)
        }
        _ => Err(unsupported(layer, "shared layer called more than once")),
    }
}

fn collect_history(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(obj) => {
            if let Some(name) = obj
                .get("config")
                .and_then(|c| c.get("keras_history"))
                .and_then(|h| h.get(0))
                .and_then(Value::as_str)
            {
                out.push(name.to_string());
            } else {
                obj.values().for_each(|x| collect_history(x, out));
            }
        }
        Value::Array(items) => items.iter().for_each(|x| collect_history(x, out)),
        _ => {}
    }
}

/// Imports a Keras model-config document.
///
/// `"same"` padding maps to a symmetric pad of `(k-1)/2`, which reproduces
/// the framework's output extent exactly for odd kernels at any stride;
/// even kernels need asymmetric padding and are rejected.
pub fn import_keras_json(text: &str) -> Result<ImportReport, ImportError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ImportError::Syntax {
        line: e.line(),
        column: e.column(),
        expected: e.to_string(),
    })?;
    let class = doc
        .get("class_name")
        .and_then(Value::as_str)
        .ok_or_else(|| ImportError::Document("missing top-level `class_name`".into()))?;
    let cfg = doc.get("config").unwrap_or(&Value::Null);
    let (name, layers) = match cfg {
        // early Sequential documents store the layer list directly
        Value::Array(layers) => (None, layers),
        Value::Object(obj) => match obj.get("layers") {
            Some(Value::Array(layers)) => (obj.get("name").and_then(Value::as_str), layers),
            _ => return Err(ImportError::Document("config has no `layers` list".into())),
        },
        _ => return Err(ImportError::Document("missing model `config`".into())),
    };
    let mut imp = Importer {
        model: Model::new(name.unwrap_or("imported")),
        notes: Vec::new(),
    };
    match class {
        "Sequential" => imp.sequential(layers)?,
        "Model" | "Functional" => imp.functional(layers)?,
        other => return Err(ImportError::UnsupportedClass(other.to_string())),
    }
    Ok(ImportReport {
        model: imp.model,
        notes: imp.notes,
    })
}
