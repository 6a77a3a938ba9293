use std::fmt::Write as _;

use serde_json::{json, Value};

use super::{prepare, py_tuple, quoted, unrepresentable, CodegenError, CodegenTarget, Plan};
use crate::ir::{LayerKind, LayerParams, Model, Window};

const TARGET: CodegenTarget = CodegenTarget::TensorFlowKerasSource;

enum Padding {
    Valid,
    Same,
    /// Only convolutions may take explicit zero padding.
    Explicit(u32, u32),
}

/// Maps a window onto the framework's padding modes. `"same"` with an odd
/// kernel `k` pads `(k-1)/2` per side, giving `ceil(extent/stride)`
/// windows, which equals the floor count of the symmetric padding.
fn padding(plan: &Plan<'_>, id: &str, w: Window, zero_pad_ok: bool) -> Result<Padding, CodegenError> {
    if !plan.floor_equivalent(id) {
        return Err(unrepresentable(
            TARGET,
            id,
            "ceil rounding that differs from floor at this input",
        ));
    }
    let same = |k: u32, p: u32| k % 2 == 1 && p == (k - 1) / 2;
    Ok(if w.pad == (0, 0) {
        Padding::Valid
    } else if same(w.kernel.0, w.pad.0) && same(w.kernel.1, w.pad.1) {
        Padding::Same
    } else if zero_pad_ok {
        Padding::Explicit(w.pad.0, w.pad.1)
    } else {
        Err(unrepresentable(
            TARGET,
            id,
            format!("asymmetric-equivalent padding {:?}", w.pad),
        ))?
    })
}

fn pair((a, b): (u32, u32)) -> String {
    format!("({a}, {b})")
}

/// Variable/layer name carrying the output of `id` (absorbed activations
/// are represented by their producer).
fn var<'p>(plan: &'p Plan<'_>, absorbed: &std::collections::BTreeMap<String, String>, id: &str) -> &'p str {
    match absorbed.get(id) {
        Some(producer) => plan.ident(producer),
        None => plan.ident(id),
    }
}

fn list(items: Vec<&str>) -> String {
    match items.as_slice() {
        [one] => one.to_string(),
        _ => format!("[{}]", items.join(", ")),
    }
}

pub(crate) fn emit_source(plan: &Plan<'_>) -> Result<String, CodegenError> {
    let absorbed = plan.absorbed();
    let mut body = String::new();
    let mut inputs = Vec::new();
    for id in &plan.order {
        if absorbed.contains_key(id) {
            continue;
        }
        let layer = plan.model.layer(id).expect("planned ids exist");
        let name = plan.ident(id);
        let srcs: Vec<&str> = plan.inputs(id).iter().map(|s| var(plan, &absorbed, s)).collect();
        let arg = list(srcs.clone());
        let activation = plan
            .fused_activation(id)
            .map(|(_, f)| format!(", activation={}", quoted(f.as_str())))
            .unwrap_or_default();
        let call = match &layer.params {
            _ if layer.kind == LayerKind::Input => {
                let Some(shape) = plan.shapes.get(id) else {
                    return Err(unrepresentable(TARGET, id, "input shape unknown"));
                };
                let dims: Vec<String> = shape.dims().iter().map(usize::to_string).collect();
                inputs.push(name);
                let _ = writeln!(
                    body,
                    "    {name} = layers.Input(shape={}, name={})",
                    py_tuple(&dims),
                    quoted(name)
                );
                continue;
            }
            LayerParams::Conv2D(c) => {
                let mut src = arg;
                let mode = match padding(plan, id, c.window(), true)? {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                    Padding::Explicit(ph, pw) => {
                        let _ = writeln!(
                            body,
                            "    {name}_pad = layers.ZeroPadding2D(padding=({ph}, {pw}), name={})({src})",
                            quoted(&format!("{name}_pad"))
                        );
                        src = format!("{name}_pad");
                        "valid"
                    }
                };
                let _ = writeln!(
                    body,
                    "    {name} = layers.Conv2D({}, {}, strides={}, padding={}{activation}, name={})({src})",
                    c.filters,
                    pair(c.kernel),
                    pair(c.stride),
                    quoted(mode),
                    quoted(name)
                );
                continue;
            }
            LayerParams::Pool(p) => {
                let class = if layer.kind == LayerKind::MaxPool2D {
                    "MaxPooling2D"
                } else {
                    "AveragePooling2D"
                };
                let mode = match padding(plan, id, p.window(), false)? {
                    Padding::Same => "same",
                    _ => "valid",
                };
                format!(
                    "layers.{class}(pool_size={}, strides={}, padding={}",
                    pair(p.kernel),
                    pair(p.stride),
                    quoted(mode)
                )
            }
            LayerParams::Dense(d) => format!("layers.Dense({}{activation}", d.units),
            LayerParams::Dropout(d) => format!("layers.Dropout({}", d.rate),
            LayerParams::Activation(a) => format!("layers.Activation({}", quoted(a.function.as_str())),
            LayerParams::Concat(_) => "layers.Concatenate(axis=-1".to_string(),
            _ => match layer.kind {
                LayerKind::Flatten => "layers.Flatten(".to_string(),
                LayerKind::BatchNorm => "layers.BatchNormalization(axis=-1".to_string(),
                LayerKind::Add => "layers.Add(".to_string(),
                LayerKind::Softmax => "layers.Softmax(axis=-1".to_string(),
                kind => return Err(unrepresentable(TARGET, id, format!("{kind} layer"))),
            },
        };
        let sep = if call.ends_with('(') { "" } else { ", " };
        let _ = writeln!(body, "    {name} = {call}{sep}name={})({arg})", quoted(name));
    }

    let outputs: Vec<&str> = plan.outputs().iter().map(|o| var(plan, &absorbed, o)).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"\"\"Keras model generated by darviz from {}.\"\"\"",
        quoted(&plan.model.name)
    );
    out.push_str("\nfrom tensorflow import keras\nfrom tensorflow.keras import layers\n\n\n");
    out.push_str("def build_model():\n");
    out.push_str(&body);
    let _ = writeln!(
        out,
        "    return keras.Model(inputs={}, outputs={}, name={})",
        list(inputs),
        list(outputs),
        quoted(&super::py_ident(&plan.model.name))
    );
    out.push_str("\n\nif __name__ == \"__main__\":\n    build_model().summary()\n");
    Ok(out)
}

/// Emits the model as a functional model-config JSON document of the kind
/// the Keras importer reads. Every layer is representable except
/// convolutions with padding other than `"valid"`/`"same"`.
pub fn emit_keras_config(model: &Model) -> Result<String, CodegenError> {
    let plan = prepare(model)?;
    let plan = &plan;
    let absorbed = plan.absorbed();
    let mut layers = Vec::new();
    for id in &plan.order {
        if absorbed.contains_key(id) {
            continue;
        }
        let layer = plan.model.layer(id).expect("planned ids exist");
        let name = plan.ident(id);
        let activation = plan.fused_activation(id).map(|(_, f)| f.as_str()).unwrap_or("linear");
        let mode = |w: Window| -> Result<&'static str, CodegenError> {
            Ok(match padding(plan, id, w, false)? {
                Padding::Same => "same",
                _ => "valid",
            })
        };
        let (class, config) = match &layer.params {
            _ if layer.kind == LayerKind::Input => {
                let Some(shape) = plan.shapes.get(id) else {
                    return Err(unrepresentable(TARGET, id, "input shape unknown"));
                };
                let mut dims = vec![Value::Null];
                dims.extend(shape.dims().iter().map(|&d| json!(d)));
                ("InputLayer", json!({"batch_input_shape": dims, "dtype": "float32"}))
            }
            LayerParams::Conv2D(c) => (
                "Conv2D",
                json!({
                    "filters": c.filters,
                    "kernel_size": [c.kernel.0, c.kernel.1],
                    "strides": [c.stride.0, c.stride.1],
                    "padding": mode(c.window())?,
                    "data_format": "channels_last",
                    "activation": activation,
                    "use_bias": true,
                }),
            ),
            LayerParams::Pool(p) => (
                if layer.kind == LayerKind::MaxPool2D {
                    "MaxPooling2D"
                } else {
                    "AveragePooling2D"
                },
                json!({
                    "pool_size": [p.kernel.0, p.kernel.1],
                    "strides": [p.stride.0, p.stride.1],
                    "padding": mode(p.window())?,
                    "data_format": "channels_last",
                }),
            ),
            LayerParams::Dense(d) => (
                "Dense",
                json!({"units": d.units, "activation": activation, "use_bias": true}),
            ),
            LayerParams::Dropout(d) => ("Dropout", json!({"rate": d.rate})),
            LayerParams::Activation(a) => ("Activation", json!({"activation": a.function.as_str()})),
            LayerParams::Concat(_) => ("Concatenate", json!({"axis": -1})),
            _ => match layer.kind {
                LayerKind::Flatten => ("Flatten", json!({"data_format": "channels_last"})),
                LayerKind::BatchNorm => ("BatchNormalization", json!({"axis": -1})),
                LayerKind::Add => ("Add", json!({})),
                LayerKind::Softmax => ("Softmax", json!({"axis": -1})),
                kind => return Err(unrepresentable(TARGET, id, format!("{kind} layer"))),
            },
        };
        let mut config = config;
        config["name"] = json!(name);
        config["trainable"] = json!(true);
        let inbound: Vec<Value> = plan
            .inputs(id)
            .iter()
            .map(|s| json!([var(plan, &absorbed, s), 0, 0, {}]))
            .collect();
        let inbound_nodes = if inbound.is_empty() {
            json!([])
        } else {
            json!([inbound])
        };
        layers.push(json!({
            "class_name": class,
            "name": name,
            "config": config,
            "inbound_nodes": inbound_nodes,
        }));
    }
    let endpoints = |ids: Vec<&str>| -> Value { ids.iter().map(|i| json!([var(plan, &absorbed, i), 0, 0])).collect() };
    let doc = json!({
        "class_name": "Functional",
        "config": {
            "name": plan.model.name,
            "layers": layers,
            "input_layers": endpoints(plan.model.input_ids()),
            "output_layers": endpoints(plan.outputs()),
        },
        "backend": "tensorflow",
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    text.push('\n');
    Ok(text)
}
