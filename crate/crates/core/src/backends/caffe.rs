use std::fmt::Write as _;

use super::{quoted, unrepresentable, CodegenError, CodegenTarget, Plan};
use crate::ir::{ActivationFn, LayerKind, LayerParams, Rounding};

const TARGET: CodegenTarget = CodegenTarget::CaffePrototxt;

/// `kernel_size: 3` for square windows, `kernel_h`/`kernel_w` otherwise.
fn spatial(out: &mut String, base: &str, (h, w): (u32, u32), default: Option<u32>) {
    if h == w {
        if Some(h) != default {
            let _ = writeln!(out, "    {base}: {h}");
        }
    } else {
        let stem = base.strip_suffix("_size").unwrap_or(base);
        let _ = writeln!(out, "    {stem}_h: {h}\n    {stem}_w: {w}");
    }
}

/// Writes the network in protobuf text format. Tops are named after the
/// producing layer id; feature maps are described channel-first.
pub(crate) fn emit_prototxt(plan: &Plan<'_>) -> Result<String, CodegenError> {
    let mut out = String::new();
    let _ = writeln!(out, "name: {}", quoted(&plan.model.name));
    for id in &plan.order {
        let layer = plan.model.layer(id).expect("planned ids exist");
        let ty = match (&layer.kind, &layer.params) {
            (LayerKind::Input, _) => "Input",
            (LayerKind::Conv2D, _) => "Convolution",
            (LayerKind::MaxPool2D | LayerKind::AvgPool2D, _) => "Pooling",
            (LayerKind::Dense, _) => "InnerProduct",
            (LayerKind::Flatten, _) => "Flatten",
            (LayerKind::Dropout, _) => "Dropout",
            (LayerKind::BatchNorm, _) => "BatchNorm",
            (LayerKind::Activation, LayerParams::Activation(a)) => match a.function {
                ActivationFn::Relu => "ReLU",
                ActivationFn::Sigmoid => "Sigmoid",
                ActivationFn::Tanh => "TanH",
                ActivationFn::Softmax => "Softmax",
            },
            (LayerKind::Concat, _) => "Concat",
            (LayerKind::Add, _) => "Eltwise",
            (LayerKind::Softmax, _) => "Softmax",
            (kind, _) => return Err(unrepresentable(TARGET, id, format!("{kind} without parameters"))),
        };
        let _ = writeln!(out, "layer {{\n  name: {}\n  type: {}", quoted(id), quoted(ty));
        for src in plan.inputs(id) {
            let _ = writeln!(out, "  bottom: {}", quoted(src));
        }
        let _ = writeln!(out, "  top: {}", quoted(id));
        match &layer.params {
            _ if layer.kind == LayerKind::Input => {
                let Some(shape) = plan.shapes.get(id) else {
                    return Err(unrepresentable(TARGET, id, "input shape unknown"));
                };
                let dims = match shape.dims() {
                    [h, w, c] => vec![1, *c, *h, *w],
                    [f] => vec![1, *f],
                    _ => return Err(unrepresentable(TARGET, id, format!("input shape {shape}"))),
                };
                let dims: Vec<String> = dims.iter().map(|d| format!("dim: {d}")).collect();
                let _ = writeln!(out, "  input_param {{ shape {{ {} }} }}", dims.join(" "));
            }
            LayerParams::Conv2D(c) => {
                if !plan.floor_equivalent(id) {
                    return Err(unrepresentable(TARGET, id, "convolution with ceil rounding"));
                }
                let _ = writeln!(out, "  convolution_param {{\n    num_output: {}", c.filters);
                spatial(&mut out, "kernel_size", c.kernel, None);
                spatial(&mut out, "stride", c.stride, Some(1));
                spatial(&mut out, "pad", c.pad, Some(0));
                out.push_str("  }\n");
            }
            LayerParams::Pool(p) => {
                let method = if layer.kind == LayerKind::MaxPool2D {
                    "MAX"
                } else {
                    "AVE"
                };
                let _ = writeln!(out, "  pooling_param {{\n    pool: {method}");
                spatial(&mut out, "kernel_size", p.kernel, None);
                spatial(&mut out, "stride", p.stride, Some(1));
                spatial(&mut out, "pad", p.pad, Some(0));
                if p.rounding == Rounding::Floor {
                    out.push_str("    round_mode: FLOOR\n");
                }
                out.push_str("  }\n");
            }
            LayerParams::Dense(d) => {
                let _ = writeln!(out, "  inner_product_param {{\n    num_output: {}\n  }}", d.units);
            }
            LayerParams::Dropout(d) => {
                let _ = writeln!(out, "  dropout_param {{\n    dropout_ratio: {}\n  }}", d.rate);
            }
            LayerParams::Concat(_) => out.push_str("  concat_param {\n    axis: 1\n  }\n"),
            _ if layer.kind == LayerKind::Add => {
                out.push_str("  eltwise_param {\n    operation: SUM\n  }\n");
            }
            _ => {}
        }
        out.push_str("}\n");
    }
    Ok(out)
}
