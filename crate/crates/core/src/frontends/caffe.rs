//! Network-definition prototxt importer.

use std::collections::HashMap;

use super::prototxt::{parse_text_proto, Message, Value};
use super::{ImportError, ImportReport};
use crate::ir::{
    sanitize_id, ActivationFn, ActivationParams, ConcatParams, ConvParams, DenseParams, DropoutParams, Layer,
    LayerKind, LayerParams, Model, PoolParams, Rounding,
};

/// Fields that carry no layer-level meaning (fillers, solver hints, data
/// plumbing) and are dropped without a note.
const SILENT_LAYER_FIELDS: &[&str] = &[
    "name",
    "type",
    "bottom",
    "top",
    "param",
    "include",
    "exclude",
    "phase",
    "loss_weight",
    "propagate_down",
    "transform_param",
    "data_param",
    "image_data_param",
    "blobs_lr",
    "weight_decay",
];
const SILENT_PARAM_FIELDS: &[&str] = &["weight_filler", "bias_filler", "bias_term", "engine"];

#[derive(Clone)]
struct Blob {
    node: String,
    rank: Option<usize>,
}

struct Importer {
    model: Model,
    notes: Vec<String>,
    blobs: HashMap<String, Blob>,
}

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

fn uint(layer: &str, field: &str, v: &Value) -> Result<u32, ImportError> {
    v.as_i64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| invalid(layer, format!("`{field}` must be a non-negative integer, got {v}")))
}

fn opt_uint(layer: &str, msg: &Message, field: &str) -> Result<Option<u32>, ImportError> {
    msg.get(field).map(|v| uint(layer, field, v)).transpose()
}

/// Reads a spatial pair given either as a repeated `base` field (one value
/// for both axes, or one per axis) or as `base_h`/`base_w`.
fn pair(layer: &str, msg: &Message, base: &str, default: Option<u32>) -> Result<(u32, u32), ImportError> {
    let h = opt_uint(layer, msg, &format!("{base}_h"))?;
    let w = opt_uint(layer, msg, &format!("{base}_w"))?;
    let repeated: Vec<u32> = msg.all(base).map(|v| uint(layer, base, v)).collect::<Result<_, _>>()?;
    let from_repeated = match repeated.as_slice() {
        [] => None,
        [v] => Some((*v, *v)),
        [a, b] => Some((*a, *b)),
        _ => return Err(unsupported(layer, format!("`{base}` with more than two spatial axes"))),
    };
    match (h, w, from_repeated) {
        (Some(h), Some(w), _) => Ok((h, w)),
        (None, None, Some(p)) => Ok(p),
        (None, None, None) => default
            .map(|d| (d, d))
            .ok_or_else(|| invalid(layer, format!("missing `{base}`"))),
        _ => Err(invalid(
            layer,
            format!("`{base}_h` and `{base}_w` must be given together"),
        )),
    }
}

fn enum_field<'a>(msg: &'a Message, field: &str) -> Option<&'a str> {
    msg.get(field).and_then(Value::as_scalar)
}

impl Importer {
    fn note(&mut self, text: String) {
        self.notes.push(text);
    }

    fn note_unknown(&mut self, layer: &str, block: &str, msg: &Message, known: &[&str]) {
        for f in &msg.fields {
            if !known.contains(&f.name.as_str()) && !SILENT_PARAM_FIELDS.contains(&f.name.as_str()) {
                self.notes.push(format!(
                    "layer `{layer}`: field `{block}.{}` (line {}) ignored",
                    f.name, f.line
                ));
            }
        }
    }

    fn lookup(&self, blob: &str) -> Result<Blob, ImportError> {
        self.blobs
            .get(blob)
            .cloned()
            .ok_or_else(|| ImportError::DanglingBlob(blob.to_string()))
    }

    fn add_input(
        &mut self,
        name: &str,
        blob: &str,
        dims: Option<Vec<i64>>,
        mut rank: Option<usize>,
    ) -> Result<(), ImportError> {
        let id = self.model.fresh_id(&sanitize_id(name));
        self.model.insert_layer(Layer::input(&id).with_name(name))?;
        if let Some(dims) = dims {
            let positive: Option<Vec<usize>> = dims
                .iter()
                .map(|&d| usize::try_from(d).ok().filter(|&d| d > 0))
                .collect();
            match positive.as_deref() {
                Some([_, c, h, w]) => {
                    self.model.set_default_input_shape(&id, &[*h, *w, *c]);
                    self.note(format!("input `{name}`: channel-first shape converted to {h}x{w}x{c}"));
                    rank = Some(3);
                }
                Some([_, f]) => {
                    self.model.set_default_input_shape(&id, &[*f]);
                    rank = Some(1);
                }
                _ => self.note(format!("input `{name}`: shape {dims:?} not recorded")),
            }
        }
        self.blobs.insert(blob.to_string(), Blob { node: id, rank });
        Ok(())
    }

    fn legacy_inputs(&mut self, net: &Message) -> Result<(), ImportError> {
        let names: Vec<String> = net
            .all("input")
            .filter_map(|v| v.as_scalar().map(str::to_string))
            .collect();
        let shapes: Vec<Vec<i64>> = net
            .all("input_shape")
            .filter_map(Value::as_message)
            .map(|m| m.all("dim").filter_map(Value::as_i64).collect())
            .collect();
        let flat_dims: Vec<i64> = net.all("input_dim").filter_map(Value::as_i64).collect();
        for (i, name) in names.iter().enumerate() {
            let dims = shapes
                .get(i)
                .cloned()
                .or_else(|| flat_dims.get(i * 4..i * 4 + 4).map(<[i64]>::to_vec));
            self.add_input(name, name, dims, None)?;
        }
        Ok(())
    }

    fn layer(&mut self, msg: &Message, index: usize) -> Result<(), ImportError> {
        let ty = msg
            .str("type")
            .ok_or_else(|| invalid(&format!("#{index}"), "missing `type`"))?
            .to_string();
        let name = msg
            .str("name")
            .map(str::to_string)
            .unwrap_or_else(|| format!("{}{index}", ty.to_ascii_lowercase()));

        if let Some(include) = msg.message("include") {
            if enum_field(include, "phase") == Some("TEST") {
                self.note(format!("layer `{name}`: TEST-phase layer ignored"));
                return Ok(());
            }
        }

        let bottoms: Vec<String> = msg
            .all("bottom")
            .filter_map(|v| v.as_scalar().map(str::to_string))
            .collect();
        let tops: Vec<String> = msg
            .all("top")
            .filter_map(|v| v.as_scalar().map(str::to_string))
            .collect();

        for f in &msg.fields {
            let known = SILENT_LAYER_FIELDS.contains(&f.name.as_str()) || f.name.ends_with("_param");
            if !known {
                self.notes
                    .push(format!("layer `{name}`: field `{}` (line {}) ignored", f.name, f.line));
            }
        }

        if matches!(ty.as_str(), "Input" | "Data") {
            return self.input_layer(&name, &ty, msg, &tops);
        }

        let (kind, params) = self.map_layer(&name, &ty, msg)?;
        if tops.len() > 1 {
            return Err(unsupported(&name, "layers with several top blobs"));
        }
        let sources: Vec<Blob> = bottoms.iter().map(|b| self.lookup(b)).collect::<Result<_, _>>()?;
        if sources.is_empty() {
            return Err(invalid(&name, "missing `bottom`"));
        }

        let id = self.model.fresh_id(&sanitize_id(&name));
        let mut preds: Vec<String> = sources.iter().map(|b| b.node.clone()).collect();

        if kind == LayerKind::Dense && sources[0].rank == Some(3) {
            let flat = self.model.fresh_id(&format!("{id}_flatten"));
            self.model.insert_layer(Layer::flatten(&flat))?;
            self.model.insert_edge(&preds[0], &flat)?;
            self.note(format!("layer `{name}`: implicit flatten materialized as `{flat}`"));
            preds[0] = flat;
        }

        self.model
            .insert_layer(Layer::new(id.clone(), kind, params)?.with_name(name.clone()))?;
        for p in &preds {
            self.model.insert_edge(p, &id)?;
        }

        let rank = match kind {
            LayerKind::Conv2D | LayerKind::MaxPool2D | LayerKind::AvgPool2D | LayerKind::Concat => Some(3),
            LayerKind::Dense | LayerKind::Flatten => Some(1),
            _ => sources[0].rank,
        };
        if let Some(top) = tops.first() {
            if bottoms.contains(top) {
                let what = if kind == LayerKind::Activation {
                    "activation".to_string()
                } else {
                    ty.clone()
                };
                self.note(format!("layer `{name}`: in-place {what} materialized"));
            }
            self.blobs.insert(top.clone(), Blob { node: id, rank });
        }
        Ok(())
    }

    fn input_layer(&mut self, name: &str, ty: &str, msg: &Message, tops: &[String]) -> Result<(), ImportError> {
        let Some(top) = tops.first() else {
            return Err(invalid(name, "input layer without `top`"));
        };
        let dims = msg
            .message("input_param")
            .and_then(|p| p.message("shape"))
            .map(|s| s.all("dim").filter_map(Value::as_i64).collect::<Vec<_>>());
        if tops.len() > 1 {
            self.note(format!("layer `{name}`: {ty} tops after `{top}` dropped"));
        }
        let rank = if ty == "Data" { Some(3) } else { None };
        self.add_input(name, top, dims, rank)
    }

    fn map_layer(&mut self, name: &str, ty: &str, msg: &Message) -> Result<(LayerKind, LayerParams), ImportError> {
        let empty = Message::default();
        let block = |field: &str| msg.message(field).unwrap_or(&empty);
        Ok(match ty {
            "Convolution" => {
                let p = block("convolution_param");
                self.note_unknown(
                    name,
                    "convolution_param",
                    p,
                    &[
                        "num_output",
                        "kernel_size",
                        "kernel_h",
                        "kernel_w",
                        "stride",
                        "stride_h",
                        "stride_w",
                        "pad",
                        "pad_h",
                        "pad_w",
                        "group",
                        "dilation",
                    ],
                );
                let filters = opt_uint(name, p, "num_output")?
                    .filter(|&f| f > 0)
                    .ok_or_else(|| invalid(name, "`num_output` must be positive"))?;
                if opt_uint(name, p, "group")?.unwrap_or(1) != 1 {
                    return Err(unsupported(name, "grouped convolution"));
                }
                if p.all("dilation").any(|v| v.as_i64() != Some(1)) {
                    return Err(unsupported(name, "dilated convolution"));
                }
                let kernel = pair(name, p, "kernel_size", None)?;
                let stride = pair(name, p, "stride", Some(1))?;
                let pad = pair(name, p, "pad", Some(0))?;
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(invalid(name, "kernel and stride must be positive"));
                }
                let conv = ConvParams::new(filters, kernel).with_stride(stride).with_pad(pad);
                (LayerKind::Conv2D, LayerParams::Conv2D(conv))
            }
            "Pooling" => {
                let p = block("pooling_param");
                self.note_unknown(
                    name,
                    "pooling_param",
                    p,
                    &[
                        "pool",
                        "kernel_size",
                        "kernel_h",
                        "kernel_w",
                        "stride",
                        "stride_h",
                        "stride_w",
                        "pad",
                        "pad_h",
                        "pad_w",
                        "round_mode",
                        "global_pooling",
                    ],
                );
                if p.get("global_pooling").and_then(Value::as_bool) == Some(true) {
                    return Err(unsupported(name, "global pooling"));
                }
                let kind = match enum_field(p, "pool").unwrap_or("MAX") {
                    "MAX" | "0" => LayerKind::MaxPool2D,
                    "AVE" | "1" => LayerKind::AvgPool2D,
                    other => return Err(unsupported(name, format!("pooling method {other}"))),
                };
                let rounding = match enum_field(p, "round_mode").unwrap_or("CEIL") {
                    "CEIL" | "0" => Rounding::Ceil,
                    "FLOOR" | "1" => Rounding::Floor,
                    other => return Err(invalid(name, format!("unknown round_mode {other}"))),
                };
                let kernel = pair(name, p, "kernel_size", None)?;
                let stride = pair(name, p, "stride", Some(1))?;
                let pad = pair(name, p, "pad", Some(0))?;
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(invalid(name, "kernel and stride must be positive"));
                }
                let pool = PoolParams::new(kernel, stride).with_pad(pad).with_rounding(rounding);
                (kind, LayerParams::Pool(pool))
            }
            "InnerProduct" => {
                let p = block("inner_product_param");
                self.note_unknown(name, "inner_product_param", p, &["num_output", "axis"]);
                if p.get("axis").is_some_and(|a| a.as_i64() != Some(1)) {
                    return Err(unsupported(name, "inner product over an axis other than 1"));
                }
                let units = opt_uint(name, p, "num_output")?
                    .filter(|&u| u > 0)
                    .ok_or_else(|| invalid(name, "`num_output` must be positive"))?;
                (LayerKind::Dense, LayerParams::Dense(DenseParams { units }))
            }
            "ReLU" => {
                let p = block("relu_param");
                self.note_unknown(name, "relu_param", p, &["negative_slope"]);
                if p.get("negative_slope")
                    .and_then(Value::as_f64)
                    .is_some_and(|s| s != 0.0)
                {
                    return Err(unsupported(name, "leaky ReLU"));
                }
                activation(ActivationFn::Relu)
            }
            "Sigmoid" => activation(ActivationFn::Sigmoid),
            "TanH" => activation(ActivationFn::Tanh),
            "Softmax" => {
                let p = block("softmax_param");
                self.note_unknown(name, "softmax_param", p, &["axis"]);
                (LayerKind::Softmax, LayerParams::Empty)
            }
            "Dropout" => {
                let p = block("dropout_param");
                self.note_unknown(name, "dropout_param", p, &["dropout_ratio"]);
                let rate = match p.get("dropout_ratio") {
                    Some(v) => v
                        .as_f64()
                        .ok_or_else(|| invalid(name, format!("`dropout_ratio` must be a number, got {v}")))?,
                    None => 0.5,
                };
                (LayerKind::Dropout, LayerParams::Dropout(DropoutParams { rate }))
            }
            "BatchNorm" => {
                let p = block("batch_norm_param");
                self.note_unknown(
                    name,
                    "batch_norm_param",
                    p,
                    &["use_global_stats", "moving_average_fraction", "eps"],
                );
                (LayerKind::BatchNorm, LayerParams::Empty)
            }
            "Flatten" => {
                let p = block("flatten_param");
                self.note_unknown(name, "flatten_param", p, &["axis"]);
                if p.get("axis").is_some_and(|a| a.as_i64() != Some(1)) {
                    return Err(unsupported(name, "flatten from an axis other than 1"));
                }
                (LayerKind::Flatten, LayerParams::Empty)
            }
            "Concat" => {
                let p = block("concat_param");
                self.note_unknown(name, "concat_param", p, &["axis", "concat_dim"]);
                let axis = p
                    .get("axis")
                    .or_else(|| p.get("concat_dim"))
                    .map(|v| v.as_i64().unwrap_or(i64::MIN))
                    .unwrap_or(1);
                if axis != 1 && axis != -3 {
                    return Err(unsupported(name, format!("concatenation along axis {axis}")));
                }
                (LayerKind::Concat, LayerParams::Concat(ConcatParams::default()))
            }
            "Eltwise" => {
                let p = block("eltwise_param");
                self.note_unknown(name, "eltwise_param", p, &["operation", "coeff"]);
                match enum_field(p, "operation").unwrap_or("SUM") {
                    "SUM" | "1" => {}
                    other => return Err(unsupported(name, format!("elementwise {other}"))),
                }
                if p.all("coeff").any(|c| c.as_f64() != Some(1.0)) {
                    return Err(unsupported(name, "weighted elementwise sum"));
                }
                (LayerKind::Add, LayerParams::Empty)
            }
            other => return Err(ImportError::UnsupportedLayer(other.to_string())),
        })
    }
}

fn activation(function: ActivationFn) -> (LayerKind, LayerParams) {
    (
        LayerKind::Activation,
        LayerParams::Activation(ActivationParams { function }),
    )
}

/// Imports a network definition in protobuf text format.
///
/// Layers whose top names their own bottom (in-place layers) become
/// separate nodes; later consumers of the blob are wired to the newest
/// producer. Pooling defaults to ceil rounding, convolution to floor.
pub fn import_caffe(text: &str) -> Result<ImportReport, ImportError> {
    let net = parse_text_proto(text)?;
    let mut imp = Importer {
        model: Model::new(net.str("name").unwrap_or("imported")),
        notes: Vec::new(),
        blobs: HashMap::new(),
    };
    imp.legacy_inputs(&net)?;
    for f in &net.fields {
        match f.name.as_str() {
            "name" | "input" | "input_shape" | "input_dim" => {}
            "layer" => {}
            "layers" => {
                return Err(ImportError::Document(
                    "legacy V1 `layers` blocks are not supported".into(),
                ))
            }
            other => imp.note(format!("network field `{other}` (line {}) ignored", f.line)),
        }
    }
    let layers: Vec<&Message> = net
        .fields
        .iter()
        .filter(|f| f.name == "layer")
        .map(|f| {
            f.value.as_message().ok_or_else(|| ImportError::Syntax {
                line: f.line,
                column: 1,
                expected: "`layer { ... }` block".into(),
            })
        })
        .collect::<Result<_, _>>()?;
    for (i, layer) in layers.into_iter().enumerate() {
        imp.layer(layer, i)?;
    }
    Ok(ImportReport {
        model: imp.model,
        notes: imp.notes,
    })
}
