//! Source generators for the supported target frameworks, plus weight
//! layout tooling.

mod caffe;
mod keras;
mod torch;
pub mod weights;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ir::{self, ActivationFn, LayerKind, LayerParams, Model, Rounding};
use crate::lint::{lint_model, Diagnostic};
use crate::shape::ShapeMap;

pub use keras::emit_keras_config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodegenTarget {
    TensorFlowKerasSource,
    TorchModuleSource,
    CaffePrototxt,
}

impl CodegenTarget {
    pub const ALL: [CodegenTarget; 3] = [
        CodegenTarget::TensorFlowKerasSource,
        CodegenTarget::TorchModuleSource,
        CodegenTarget::CaffePrototxt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodegenTarget::TensorFlowKerasSource => "keras",
            CodegenTarget::TorchModuleSource => "torch",
            CodegenTarget::CaffePrototxt => "caffe",
        }
    }

    fn file_suffix(self) -> &'static str {
        match self {
            CodegenTarget::TensorFlowKerasSource => "_keras.py",
            CodegenTarget::TorchModuleSource => "_torch.py",
            CodegenTarget::CaffePrototxt => ".prototxt",
        }
    }
}

impl fmt::Display for CodegenTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodegenTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keras" => Ok(CodegenTarget::TensorFlowKerasSource),
            "torch" => Ok(CodegenTarget::TorchModuleSource),
            "caffe" => Ok(CodegenTarget::CaffePrototxt),
            other => Err(format!("unknown target `{other}` (expected keras, torch or caffe)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceArtifact {
    pub target: CodegenTarget,
    pub filename: String,
    pub source: String,
    pub line_count: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("model has {} lint error(s); first: {}", .0.len(), .0[0].render())]
    LintErrorsPresent(Vec<Diagnostic>),
    #[error("{target} cannot represent layer `{layer}`: {reason}")]
    UnrepresentableConstruct {
        target: CodegenTarget,
        layer: String,
        reason: String,
    },
}

fn unrepresentable(target: CodegenTarget, layer: &str, reason: impl Into<String>) -> CodegenError {
    CodegenError::UnrepresentableConstruct {
        target,
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

/// Everything a generator needs: the model in emission order, inferred
/// shapes, and per-layer identifiers.
pub(crate) struct Plan<'a> {
    pub model: &'a Model,
    pub order: Vec<String>,
    pub shapes: ShapeMap,
    pub names: HashMap<String, String>,
    position: HashMap<String, usize>,
}

impl<'a> Plan<'a> {
    fn new(model: &'a Model, shapes: ShapeMap) -> Self {
        let order = ir::topo_order_lenient(model);
        let position = order.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let names = identifiers(&order);
        Plan {
            model,
            order,
            shapes,
            names,
            position,
        }
    }

    pub fn ident(&self, id: &str) -> &str {
        &self.names[id]
    }

    /// Predecessors in emission order. Concat channel order follows this.
    pub fn inputs(&self, id: &str) -> Vec<&str> {
        let mut preds = self.model.predecessors(id);
        preds.sort_by_key(|p| self.position[*p]);
        preds
    }

    pub fn outputs(&self) -> Vec<&str> {
        self.model.terminal_ids()
    }

    /// Activation folded into its producer: `id` is a Conv2D or Dense whose
    /// only consumer is an Activation fed by nothing else.
    pub fn fused_activation(&self, id: &str) -> Option<(&str, ActivationFn)> {
        let layer = self.model.layer(id)?;
        if !matches!(layer.kind, LayerKind::Conv2D | LayerKind::Dense) {
            return None;
        }
        let [succ] = self.model.successors(id)[..] else {
            return None;
        };
        let act = self.model.layer(succ)?;
        match &act.params {
            LayerParams::Activation(p) if self.model.predecessors(succ).len() == 1 => Some((succ, p.function)),
            _ => None,
        }
    }

    /// Ids of activations absorbed by their producer, mapped to it.
    pub fn absorbed(&self) -> BTreeMap<String, String> {
        self.order
            .iter()
            .filter_map(|id| self.fused_activation(id).map(|(a, _)| (a.to_string(), id.clone())))
            .collect()
    }

    /// True when the window positions counted with `rounding` equal the floor count
    /// for this layer's actual input, so the layer can be emitted for
    /// floor-only frameworks.
    pub fn floor_equivalent(&self, id: &str) -> bool {
        let layer = self.model.layer(id).expect("planned ids exist");
        let Some(w) = layer.params.window() else {
            return true;
        };
        if w.rounding == Rounding::Floor {
            return true;
        }
        let Some(input) = crate::shape::input_shape_of(self.model, &self.shapes, id) else {
            return w.stride == (1, 1);
        };
        let dims = input.dims();
        if dims.len() != 3 {
            return false;
        }
        [
            (dims[0], w.kernel.0, w.stride.0, w.pad.0),
            (dims[1], w.kernel.1, w.stride.1, w.pad.1),
        ]
        .iter()
        .all(|&(extent, k, s, p)| {
            let span = extent as i64 + 2 * p as i64 - k as i64;
            span < 0 || span % s as i64 == 0
        })
    }
}

const PY_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield", "tf", "keras", "torch", "nn", "layers",
    "self", "input", "print", "super",
];

/// Maps an arbitrary label to a Python identifier.
pub(crate) fn py_ident(raw: &str) -> String {
    let mut s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    if PY_KEYWORDS.contains(&s.as_str()) {
        s.push('_');
    }
    s
}

/// Assigns each layer a distinct identifier, in emission order.
fn identifiers(order: &[String]) -> HashMap<String, String> {
    let mut taken = HashSet::new();
    let mut out = HashMap::new();
    for id in order {
        let base = py_ident(id);
        let mut name = base.clone();
        let mut n = 1;
        while !taken.insert(name.clone()) {
            name = format!("{base}_{n}");
            n += 1;
        }
        out.insert(id.clone(), name);
    }
    out
}

/// Lints the model and prepares the emission plan; shared by all targets.
pub(crate) fn prepare(model: &Model) -> Result<Plan<'_>, CodegenError> {
    let analysis = lint_model(model, None);
    if analysis.has_errors() {
        let errors = analysis.diagnostics.into_iter().filter(Diagnostic::is_error).collect();
        return Err(CodegenError::LintErrorsPresent(errors));
    }
    Ok(Plan::new(model, analysis.shapes.shapes))
}

/// Generates source for `target`.
///
/// The model must lint without errors. Output is a pure function of the
/// model: LF line endings, a trailing newline, layers in topological
/// order with lexicographic tie-breaking.
pub fn emit(model: &Model, target: CodegenTarget) -> Result<SourceArtifact, CodegenError> {
    let plan = prepare(model)?;
    let source = match target {
        CodegenTarget::TensorFlowKerasSource => keras::emit_source(&plan)?,
        CodegenTarget::TorchModuleSource => torch::emit_source(&plan)?,
        CodegenTarget::CaffePrototxt => caffe::emit_prototxt(&plan)?,
    };
    debug_assert!(source.ends_with('\n'));
    Ok(SourceArtifact {
        target,
        filename: format!("{}{}", py_ident(&model.name), target.file_suffix()),
        line_count: source.lines().count(),
        source,
    })
}

/// Python tuple literal.
pub(crate) fn py_tuple(items: &[String]) -> String {
    match items {
        [one] => format!("({one},)"),
        _ => format!("({})", items.join(", ")),
    }
}

/// Python/JSON string literal for ids and names (ASCII-safe).
pub(crate) fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}
