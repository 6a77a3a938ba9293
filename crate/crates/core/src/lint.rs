//! Static design checks.
//!
//! | rule | severity | finding |
//! |------|----------|---------|
//! | L1 | error | cycle in the layer graph |
//! | L2 | error | no Input layer, or no terminal layer |
//! | L3 | warning | layer unreachable from every Input |
//! | L4 | error | Dense fed a rank-3 tensor without a Flatten |
//! | L5 | error/warning | Dropout rate outside (0, 1); exactly 0 is a warning |
//! | L6 | error | kernel larger than the padded input (needs shapes) |
//! | L7 | warning | Softmax with consumers |
//! | L8 | error | Concat inputs disagree outside the channel axis (needs shapes) |
//! | L9 | warning | `learning_rate` metadata outside `[1e-6, 1.0]` |
//!
//! Weight-manifest checks in [`crate::backends::weights`] reuse
//! [`Diagnostic`] with the W-series ids.
//!
//! Rules are values implementing [`Rule`]; [`Linter::with_rule`] adds more.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ir::{self, IrError, Layer, LayerKind, LayerParams, Model, META_LEARNING_RATE};
use crate::shape::{self, Bindings, PartialShapes, ShapeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    L1,
    L2,
    L3,
    L4,
    L5,
    L6,
    L7,
    L8,
    L9,
    /// Weight tensor expected but absent from the manifest.
    W1,
    /// Manifest entry that matches no expected tensor.
    W2,
    /// Tensor shape disagrees with the layer.
    W3,
    /// Malformed manifest entry (layout/rank, dtype, byte order, file size).
    W4,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// Where a `set-param` suggestion applies.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamTarget {
    Layer(String),
    Metadata,
}

/// A concrete model edit that resolves a finding.
#[derive(Debug, Clone, PartialEq)]
pub enum Suggestion {
    /// Insert `layer` after `from`, splicing it into the edge `from -> to`
    /// when `to` is given.
    InsertLayer {
        from: String,
        to: Option<String>,
        layer: Layer,
    },
    SetParam {
        target: ParamTarget,
        key: String,
        value: Value,
    },
    RemoveEdge {
        from: String,
        to: String,
    },
}

impl Suggestion {
    pub fn action(&self) -> &'static str {
        match self {
            Suggestion::InsertLayer { .. } => "insert-layer",
            Suggestion::SetParam { .. } => "set-param",
            Suggestion::RemoveEdge { .. } => "remove-edge",
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Suggestion::InsertLayer { from, to, layer } => json!({
                "action": self.action(),
                "target": { "from": from, "to": to },
                "value": {
                    "id": layer.id,
                    "kind": layer.kind.as_str(),
                    "params": layer.params.to_json(),
                },
            }),
            Suggestion::SetParam { target, key, value } => {
                let target = match target {
                    ParamTarget::Layer(id) => json!({ "layer": id, "key": key }),
                    ParamTarget::Metadata => json!({ "metadata": key }),
                };
                json!({ "action": self.action(), "target": target, "value": value })
            }
            Suggestion::RemoveEdge { from, to } => json!({
                "action": self.action(),
                "target": { "from": from, "to": to },
            }),
        }
    }
}

impl fmt::Display for Suggestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Suggestion::InsertLayer {
                from,
                to: Some(to),
                layer,
            } => {
                write!(f, "insert {} between {from} and {to}", layer.kind)
            }
            Suggestion::InsertLayer { from, to: None, layer } => {
                write!(f, "insert {} after {from}", layer.kind)
            }
            Suggestion::SetParam {
                target: ParamTarget::Layer(id),
                key,
                value,
            } => {
                write!(f, "set {id}.{key} = {value}")
            }
            Suggestion::SetParam {
                target: ParamTarget::Metadata,
                key,
                value,
            } => {
                write!(f, "set metadata {key} = {value}")
            }
            Suggestion::RemoveEdge { from, to } => write!(f, "remove edge {from} -> {to}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub rule: RuleId,
    pub severity: Severity,
    pub layers: Vec<String>,
    pub message: String,
    pub suggestion: Option<Suggestion>,
}

impl Diagnostic {
    pub fn new(rule: RuleId, severity: Severity, layers: Vec<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            rule,
            severity,
            layers,
            message: message.into(),
            suggestion: None,
        }
    }

    pub fn with_suggestion(mut self, suggestion: Suggestion) -> Self {
        self.suggestion = Some(suggestion);
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// One line: `RULE severity layer-ids message`.
    pub fn render(&self) -> String {
        let layers = if self.layers.is_empty() {
            "-".to_string()
        } else {
            self.layers.join(",")
        };
        format!("{} {} {} {}", self.rule, self.severity, layers, self.message)
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "rule": self.rule.to_string(),
            "severity": self.severity.to_string(),
            "layers": self.layers,
            "message": self.message,
        });
        if let Some(s) = &self.suggestion {
            v["suggestion"] = s.to_json();
        }
        v
    }

    fn sort_key(&self) -> (RuleId, &str, &str) {
        (
            self.rule,
            self.layers.first().map(String::as_str).unwrap_or(""),
            &self.message,
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Orders diagnostics by rule id, then first layer id, then message.
pub fn sort_diagnostics(diags: &mut [Diagnostic]) {
    diags.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Clone, PartialEq)]
pub struct LintConfig {
    pub min_learning_rate: f64,
    pub max_learning_rate: f64,
    /// Proposed when the model records no learning rate.
    pub default_learning_rate: f64,
    /// Unnormalized Conv2D run length after which BatchNorm is proposed.
    pub conv_run_threshold: usize,
}

impl Default for LintConfig {
    fn default() -> Self {
        LintConfig {
            min_learning_rate: 1e-6,
            max_learning_rate: 1.0,
            default_learning_rate: 1e-3,
            conv_run_threshold: 6,
        }
    }
}

pub struct LintContext<'a> {
    pub model: &'a Model,
    pub shapes: Option<&'a ShapeMap>,
    pub config: &'a LintConfig,
}

impl LintContext<'_> {
    fn input_shape(&self, id: &str) -> Option<&shape::TensorShape> {
        shape::input_shape_of(self.model, self.shapes?, id)
    }

    /// Rank of a layer's output: from shapes when known, otherwise derived
    /// from the kinds along the producer chain.
    fn output_rank(&self, id: &str) -> Option<usize> {
        if let Some(s) = self.shapes.and_then(|m| m.get(id)) {
            return Some(s.rank());
        }
        let mut seen = BTreeSet::new();
        let mut cur = id.to_string();
        loop {
            if !seen.insert(cur.clone()) {
                return None;
            }
            let layer = self.model.layer(&cur)?;
            match layer.kind {
                LayerKind::Conv2D | LayerKind::MaxPool2D | LayerKind::AvgPool2D | LayerKind::Concat => return Some(3),
                LayerKind::Flatten | LayerKind::Dense => return Some(1),
                LayerKind::Input => {
                    let shape = self.model.default_input_shape(&cur)?;
                    return shape.parse::<shape::TensorShape>().ok().map(|s| s.rank());
                }
                _ => cur = self.model.predecessors(&cur).first()?.to_string(),
            }
        }
    }
}

/// A single check in the catalog.
pub trait Rule: Send + Sync {
    fn id(&self) -> RuleId;
    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>);
}

struct Cycles;
struct Endpoints;
struct Unreachable;
struct DenseNeedsFlatten;
struct DropoutRate;
struct KernelFits;
struct SoftmaxTerminal;
struct ConcatAgrees;
struct LearningRate;

impl Rule for Cycles {
    fn id(&self) -> RuleId {
        RuleId::L1
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        for back in ir::dfs_back_edges(cx.model) {
            let mut path = back.cycle.clone();
            path.push(back.cycle[0].clone());
            out.push(
                Diagnostic::new(
                    RuleId::L1,
                    Severity::Error,
                    back.cycle.clone(),
                    format!("cycle {}", path.join(" -> ")),
                )
                .with_suggestion(Suggestion::RemoveEdge {
                    from: back.from,
                    to: back.to,
                }),
            );
        }
    }
}

impl Rule for Endpoints {
    fn id(&self) -> RuleId {
        RuleId::L2
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        if cx.model.input_ids().is_empty() {
            out.push(Diagnostic::new(
                RuleId::L2,
                Severity::Error,
                vec![],
                "model has no Input layer",
            ));
        }
        if cx.model.terminal_ids().is_empty() {
            out.push(Diagnostic::new(
                RuleId::L2,
                Severity::Error,
                vec![],
                "model has no terminal layer",
            ));
        }
    }
}

impl Rule for Unreachable {
    fn id(&self) -> RuleId {
        RuleId::L3
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        // with no Input at all L2 already says everything
        if cx.model.input_ids().is_empty() {
            return;
        }
        let reachable = ir::reachable_from_inputs(cx.model);
        for layer in &cx.model.layers {
            if !reachable.contains(&layer.id) {
                out.push(Diagnostic::new(
                    RuleId::L3,
                    Severity::Warning,
                    vec![layer.id.clone()],
                    format!("{} `{}` is unreachable from every Input", layer.kind, layer.id),
                ));
            }
        }
    }
}

impl Rule for DenseNeedsFlatten {
    fn id(&self) -> RuleId {
        RuleId::L4
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        for layer in cx.model.layers.iter().filter(|l| l.kind == LayerKind::Dense) {
            for pred in cx.model.predecessors(&layer.id) {
                if cx.output_rank(pred) != Some(3) {
                    continue;
                }
                let flatten = Layer::flatten(&cx.model.fresh_id(&format!("{}_flatten", layer.id)));
                out.push(
                    Diagnostic::new(
                        RuleId::L4,
                        Severity::Error,
                        vec![layer.id.clone(), pred.to_string()],
                        format!(
                            "Dense `{}` receives rank-3 input from `{pred}` without Flatten",
                            layer.id
                        ),
                    )
                    .with_suggestion(Suggestion::InsertLayer {
                        from: pred.to_string(),
                        to: Some(layer.id.clone()),
                        layer: flatten,
                    }),
                );
            }
        }
    }
}

impl Rule for DropoutRate {
    fn id(&self) -> RuleId {
        RuleId::L5
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        for layer in &cx.model.layers {
            let LayerParams::Dropout(p) = layer.params else {
                continue;
            };
            let severity = if p.rate > 0.0 && p.rate < 1.0 {
                continue;
            } else if p.rate == 0.0 {
                Severity::Warning
            } else {
                Severity::Error
            };
            let message = if p.rate == 0.0 {
                format!("Dropout `{}` has rate 0 and does nothing", layer.id)
            } else {
                format!("Dropout `{}` rate {} is outside (0, 1)", layer.id, p.rate)
            };
            out.push(
                Diagnostic::new(RuleId::L5, severity, vec![layer.id.clone()], message).with_suggestion(
                    Suggestion::SetParam {
                        target: ParamTarget::Layer(layer.id.clone()),
                        key: "rate".into(),
                        value: json!(0.5),
                    },
                ),
            );
        }
    }
}

impl Rule for KernelFits {
    fn id(&self) -> RuleId {
        RuleId::L6
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        for layer in &cx.model.layers {
            let Some(window) = layer.params.window() else {
                continue;
            };
            let Some(input) = cx.input_shape(&layer.id) else {
                continue;
            };
            let [h, w, _] = input.dims() else {
                continue;
            };
            let padded = (h + 2 * window.pad.0 as usize, w + 2 * window.pad.1 as usize);
            let (kh, kw) = (window.kernel.0 as usize, window.kernel.1 as usize);
            if kh <= padded.0 && kw <= padded.1 {
                continue;
            }
            out.push(
                Diagnostic::new(
                    RuleId::L6,
                    Severity::Error,
                    vec![layer.id.clone()],
                    format!(
                        "kernel {kh}x{kw} of `{}` exceeds padded input {}x{}",
                        layer.id, padded.0, padded.1
                    ),
                )
                .with_suggestion(Suggestion::SetParam {
                    target: ParamTarget::Layer(layer.id.clone()),
                    key: "kernel".into(),
                    value: json!([kh.min(padded.0), kw.min(padded.1)]),
                }),
            );
        }
    }
}

impl Rule for SoftmaxTerminal {
    fn id(&self) -> RuleId {
        RuleId::L7
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        for layer in cx.model.layers.iter().filter(|l| l.is_softmax()) {
            let consumers = cx.model.successors(&layer.id);
            if !consumers.is_empty() {
                out.push(Diagnostic::new(
                    RuleId::L7,
                    Severity::Warning,
                    vec![layer.id.clone()],
                    format!("softmax `{}` feeds {}", layer.id, consumers.join(", ")),
                ));
            }
        }
    }
}

impl Rule for ConcatAgrees {
    fn id(&self) -> RuleId {
        RuleId::L8
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        let Some(shapes) = cx.shapes else {
            return;
        };
        for layer in cx.model.layers.iter().filter(|l| l.kind == LayerKind::Concat) {
            let preds = cx.model.predecessors(&layer.id);
            let inputs: Option<Vec<_>> = preds.iter().map(|p| shapes.get(*p)).collect();
            let Some(inputs) = inputs else {
                continue;
            };
            let Some(first) = inputs.first() else {
                continue;
            };
            let spatial = |s: &shape::TensorShape| s.dims()[..s.rank().saturating_sub(1)].to_vec();
            if inputs
                .iter()
                .all(|s| s.rank() == first.rank() && spatial(s) == spatial(first))
            {
                continue;
            }
            let rendered: Vec<String> = preds.iter().zip(&inputs).map(|(p, s)| format!("{p}={s}")).collect();
            out.push(Diagnostic::new(
                RuleId::L8,
                Severity::Error,
                vec![layer.id.clone()],
                format!(
                    "Concat `{}` inputs disagree outside the channel axis: {}",
                    layer.id,
                    rendered.join(" ")
                ),
            ));
        }
    }
}

impl Rule for LearningRate {
    fn id(&self) -> RuleId {
        RuleId::L9
    }

    fn check(&self, cx: &LintContext<'_>, out: &mut Vec<Diagnostic>) {
        let Some(raw) = cx.model.learning_rate() else {
            return;
        };
        let ok = raw
            .trim()
            .parse::<f64>()
            .map(|lr| lr >= cx.config.min_learning_rate && lr <= cx.config.max_learning_rate)
            .unwrap_or(false);
        if ok {
            return;
        }
        out.push(
            Diagnostic::new(
                RuleId::L9,
                Severity::Warning,
                vec![],
                format!(
                    "learning rate `{raw}` is outside [{:e}, {}]",
                    cx.config.min_learning_rate, cx.config.max_learning_rate
                ),
            )
            .with_suggestion(Suggestion::SetParam {
                target: ParamTarget::Metadata,
                key: META_LEARNING_RATE.into(),
                value: json!(cx.config.default_learning_rate),
            }),
        );
    }
}

/// A rule catalog plus configuration.
pub struct Linter {
    rules: Vec<Box<dyn Rule>>,
    config: LintConfig,
}

impl Default for Linter {
    fn default() -> Self {
        Linter::new(LintConfig::default())
    }
}

impl Linter {
    /// The standard L1..L9 catalog.
    pub fn new(config: LintConfig) -> Self {
        Linter {
            rules: vec![
                Box::new(Cycles),
                Box::new(Endpoints),
                Box::new(Unreachable),
                Box::new(DenseNeedsFlatten),
                Box::new(DropoutRate),
                Box::new(KernelFits),
                Box::new(SoftmaxTerminal),
                Box::new(ConcatAgrees),
                Box::new(LearningRate),
            ],
            config,
        }
    }

    pub fn with_rule(mut self, rule: Box<dyn Rule>) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn config(&self) -> &LintConfig {
        &self.config
    }

    pub fn rule_ids(&self) -> Vec<RuleId> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn lint(&self, model: &Model, shapes: Option<&ShapeMap>) -> Vec<Diagnostic> {
        let cx = LintContext {
            model,
            shapes,
            config: &self.config,
        };
        let mut out = Vec::new();
        for rule in &self.rules {
            rule.check(&cx, &mut out);
        }
        sort_diagnostics(&mut out);
        out
    }
}

/// Lints with the default catalog. Shape-dependent rules (L6, L8) only run
/// when `shapes` is given.
pub fn lint(model: &Model, shapes: Option<&ShapeMap>) -> Vec<Diagnostic> {
    Linter::default().lint(model, shapes)
}

/// Result of [`lint_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub shapes: PartialShapes,
    pub diagnostics: Vec<Diagnostic>,
}

impl Analysis {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }
}

/// Infers whatever shapes it can (from `bindings`, or the model's
/// `input_shape.*` metadata when `None`) and lints with them. This is the
/// check behind the CLI `validate` command and `POST /api/validate`.
pub fn lint_model(model: &Model, bindings: Option<&Bindings>) -> Analysis {
    let defaults;
    let bindings = match bindings {
        Some(b) => b,
        None => {
            defaults = shape::default_bindings(model).unwrap_or_default();
            &defaults
        }
    };
    let shapes = shape::infer_shapes_partial(model, bindings);
    let diagnostics = lint(model, Some(&shapes.shapes));
    Analysis { shapes, diagnostics }
}

/// Suggestions for a model: the fix attached to each diagnostic, then a
/// default learning rate when none is recorded, then BatchNorm after every
/// `conv_run_threshold` consecutive unnormalized convolutions.
pub fn suggest_hyperparams(model: &Model, diagnostics: &[Diagnostic], config: &LintConfig) -> Vec<Suggestion> {
    let mut out: Vec<Suggestion> = diagnostics.iter().filter_map(|d| d.suggestion.clone()).collect();
    if model.learning_rate().is_none() {
        out.push(Suggestion::SetParam {
            target: ParamTarget::Metadata,
            key: META_LEARNING_RATE.into(),
            value: json!(config.default_learning_rate),
        });
    }
    if config.conv_run_threshold > 0 {
        let mut taken = BTreeSet::new();
        for conv in conv_run_ends(model, config.conv_run_threshold) {
            let next = model.successors(&conv).first().map(|s| s.to_string());
            let mut id = model.fresh_id(&format!("{conv}_bn"));
            while !taken.insert(id.clone()) {
                id = format!("{id}_");
            }
            out.push(Suggestion::InsertLayer {
                from: conv,
                to: next,
                layer: Layer::batch_norm(&id),
            });
        }
    }
    out
}

/// Convolutions that close a run of `threshold` (or a multiple of it)
/// consecutive Conv2D layers. Activations and dropouts may sit between
/// the convolutions; anything else, or any fan-in/fan-out, ends the run.
fn conv_run_ends(model: &Model, threshold: usize) -> Vec<String> {
    let order = match ir::topo_order(model) {
        Ok(order) => order,
        Err(_) => return Vec::new(),
    };
    let mut run: std::collections::HashMap<&str, usize> = Default::default();
    let mut ends = Vec::new();
    for id in &order {
        let layer = model.layer(id).expect("topo ids exist");
        if layer.kind != LayerKind::Conv2D {
            continue;
        }
        let len = previous_conv(model, id)
            .and_then(|p| run.get(p.as_str()).copied())
            .unwrap_or(0)
            + 1;
        run.insert(id, len);
        let normalized = model
            .successors(id)
            .iter()
            .any(|s| model.layer(s).map(|l| l.kind) == Some(LayerKind::BatchNorm));
        if len.is_multiple_of(threshold) && !normalized {
            ends.push(id.clone());
        }
    }
    ends
}

fn previous_conv(model: &Model, id: &str) -> Option<String> {
    let mut cur = id.to_string();
    loop {
        let [pred] = model.predecessors(&cur)[..] else {
            return None;
        };
        if model.successors(pred).len() != 1 {
            return None;
        }
        let layer = model.layer(pred)?;
        match layer.kind {
            LayerKind::Conv2D => return Some(pred.to_string()),
            LayerKind::Activation | LayerKind::Dropout => cur = pred.to_string(),
            _ => return None,
        }
    }
}

/// Applies a suggestion, returning the edited copy.
pub fn apply_suggestion(model: &Model, suggestion: &Suggestion) -> Result<Model, IrError> {
    let mut next = model.clone();
    match suggestion {
        Suggestion::InsertLayer { from, to, layer } => {
            next.insert_layer(layer.clone())?;
            if let Some(to) = to {
                if !next.remove_edge(from, to) {
                    return Err(IrError::Schema(format!("no edge {from} -> {to}")));
                }
                next.insert_edge(&layer.id, to)?;
            }
            next.insert_edge(from, &layer.id)?;
        }
        Suggestion::SetParam {
            target: ParamTarget::Layer(id),
            key,
            value,
        } => {
            let layer = next.layer_mut(id).ok_or_else(|| IrError::UnknownId(id.clone()))?;
            let mut params = layer.params.to_json();
            params[key.as_str()] = value.clone();
            layer.params = LayerParams::from_json(layer.kind, params)
                .map_err(|e| IrError::Schema(format!("layer `{id}`: {e}")))?;
        }
        Suggestion::SetParam {
            target: ParamTarget::Metadata,
            key,
            value,
        } => {
            let text = match value {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            next.metadata.insert(key.clone(), text);
        }
        Suggestion::RemoveEdge { from, to } => {
            next.remove_edge(from, to);
        }
    }
    Ok(next)
}
