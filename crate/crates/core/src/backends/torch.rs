use std::fmt::Write as _;

use super::{unrepresentable, CodegenError, CodegenTarget, Plan};
use crate::ir::{ActivationFn, LayerKind, LayerParams, PoolParams, Rounding};

const TARGET: CodegenTarget = CodegenTarget::TorchModuleSource;

fn class_name(model: &str) -> String {
    let mut out: String = model
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut cs = p.chars();
            let first = cs.next().expect("non-empty part").to_ascii_uppercase();
            std::iter::once(first).chain(cs).collect::<String>()
        })
        .collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert_str(0, "Model");
    }
    out
}

fn pair((a, b): (u32, u32)) -> String {
    format!("({a}, {b})")
}

fn activation_module(f: ActivationFn) -> &'static str {
    match f {
        ActivationFn::Relu => "nn.ReLU()",
        ActivationFn::Sigmoid => "nn.Sigmoid()",
        ActivationFn::Tanh => "nn.Tanh()",
        ActivationFn::Softmax => "nn.Softmax(dim=1)",
    }
}

/// Checks the framework's pooling constraints: padding at most half the
/// kernel, and in ceil mode no window may start inside the trailing
/// padding (such windows are dropped there but counted by the IR).
fn check_pool(plan: &Plan<'_>, id: &str, p: &PoolParams) -> Result<(), CodegenError> {
    if p.pad.0 > p.kernel.0 / 2 || p.pad.1 > p.kernel.1 / 2 {
        return Err(unrepresentable(
            TARGET,
            id,
            "pooling padding larger than half the kernel",
        ));
    }
    if p.rounding == Rounding::Ceil {
        if let Some(input) = crate::shape::input_shape_of(plan.model, &plan.shapes, id) {
            if let [h, w, _] = input.dims() {
                for (extent, k, s, pad) in [
                    (*h, p.kernel.0, p.stride.0, p.pad.0),
                    (*w, p.kernel.1, p.stride.1, p.pad.1),
                ] {
                    let (extent, k, s, pad) = (extent as u64, k as u64, s as u64, pad as u64);
                    let span = (extent + 2 * pad).saturating_sub(k);
                    let last_start = span.div_ceil(s) * s;
                    if last_start >= extent + pad {
                        return Err(unrepresentable(TARGET, id, "ceil-mode window starting in padding"));
                    }
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn emit_source(plan: &Plan<'_>) -> Result<String, CodegenError> {
    let mut init = String::new();
    let mut forward = String::new();
    let mut args = Vec::new();
    for id in &plan.order {
        let layer = plan.model.layer(id).expect("planned ids exist");
        let name = plan.ident(id);
        let srcs: Vec<&str> = plan.inputs(id).iter().map(|s| plan.ident(s)).collect();
        let in_shape = crate::shape::input_shape_of(plan.model, &plan.shapes, id);
        let module = match (&layer.kind, &layer.params) {
            (LayerKind::Input, _) => {
                args.push(name);
                continue;
            }
            (LayerKind::Concat, _) => {
                let _ = writeln!(forward, "        {name} = torch.cat([{}], dim=1)", srcs.join(", "));
                continue;
            }
            (LayerKind::Add, _) => {
                let _ = writeln!(forward, "        {name} = {}", srcs.join(" + "));
                continue;
            }
            (_, LayerParams::Conv2D(c)) => {
                if !plan.floor_equivalent(id) {
                    return Err(unrepresentable(TARGET, id, "convolution with ceil rounding"));
                }
                let geometry = format!(
                    "kernel_size={}, stride={}, padding={}",
                    pair(c.kernel),
                    pair(c.stride),
                    pair(c.pad)
                );
                match in_shape {
                    Some(s) if s.rank() == 3 => format!("nn.Conv2d({}, {}, {geometry})", s.channels(), c.filters),
                    _ => format!("nn.LazyConv2d({}, {geometry})", c.filters),
                }
            }
            (kind, LayerParams::Pool(p)) => {
                check_pool(plan, id, p)?;
                let class = if *kind == LayerKind::MaxPool2D {
                    "MaxPool2d"
                } else {
                    "AvgPool2d"
                };
                format!(
                    "nn.{class}(kernel_size={}, stride={}, padding={}, ceil_mode={})",
                    pair(p.kernel),
                    pair(p.stride),
                    pair(p.pad),
                    if p.rounding == Rounding::Ceil { "True" } else { "False" }
                )
            }
            (_, LayerParams::Dense(d)) => match in_shape {
                Some(s) if s.rank() == 1 => format!("nn.Linear({}, {})", s.dims()[0], d.units),
                _ => format!("nn.LazyLinear({})", d.units),
            },
            (_, LayerParams::Dropout(d)) => format!("nn.Dropout(p={})", d.rate),
            (_, LayerParams::Activation(a)) => activation_module(a.function).to_string(),
            (LayerKind::Flatten, _) => "nn.Flatten()".to_string(),
            (LayerKind::Softmax, _) => "nn.Softmax(dim=1)".to_string(),
            (LayerKind::BatchNorm, _) => match in_shape.map(|s| s.dims()) {
                Some([_, _, c]) => format!("nn.BatchNorm2d({c})"),
                Some([f]) => format!("nn.BatchNorm1d({f})"),
                _ => "nn.LazyBatchNorm2d()".to_string(),
            },
            (kind, _) => return Err(unrepresentable(TARGET, id, format!("{kind} layer"))),
        };
        let _ = writeln!(init, "        self.{name} = {module}");
        let _ = writeln!(forward, "        {name} = self.{name}({})", srcs.join(", "));
    }

    let outputs: Vec<&str> = plan.outputs().iter().map(|o| plan.ident(o)).collect();
    let class = class_name(&plan.model.name);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"\"\"PyTorch module generated by darviz from {}.\n\nTensors are NCHW.\n\"\"\"",
        super::quoted(&plan.model.name)
    );
    out.push_str("\nimport torch\nfrom torch import nn\n\n\n");
    let _ = writeln!(out, "class {class}(nn.Module):");
    out.push_str("    def __init__(self):\n        super().__init__()\n");
    out.push_str(&init);
    let mut params = vec!["self"];
    params.extend(args);
    let _ = writeln!(out, "\n    def forward({}):", params.join(", "));
    out.push_str(&forward);
    let _ = writeln!(out, "        return {}", outputs.join(", "));
    let _ = write!(out, "\n\nif __name__ == \"__main__\":\n    print({class}())\n");
    Ok(out)
}
