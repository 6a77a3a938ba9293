//! Shape inference and parameter counting.
//!
//! Activation shapes exclude the batch dimension. Spatial tensors are
//! `(height, width, channels)`, flat tensors are `(features)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{self, IrError, Layer, LayerKind, LayerParams, Model, Rounding, Window, META_INPUT_SHAPE_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorShape(pub Vec<usize>);

impl TensorShape {
    pub fn spatial(h: usize, w: usize, c: usize) -> Self {
        TensorShape(vec![h, w, c])
    }

    pub fn flat(features: usize) -> Self {
        TensorShape(vec![features])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn channels(&self) -> usize {
        *self.0.last().unwrap_or(&0)
    }

    pub fn elements(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).product()
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("x"))
    }
}

impl FromStr for TensorShape {
    type Err = ShapeError;

    /// Accepts `HxWxC` or a single feature count.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dims: Result<Vec<usize>, _> = s
            .trim()
            .split(['x', 'X', ','])
            .map(|d| d.trim().parse::<usize>())
            .collect();
        let bad = || ShapeError::BadShape(s.to_string());
        let dims = dims.map_err(|_| bad())?;
        if !matches!(dims.len(), 1 | 3) || dims.contains(&0) {
            return Err(bad());
        }
        Ok(TensorShape(dims))
    }
}

/// Output shape per layer id.
pub type ShapeMap = BTreeMap<String, TensorShape>;

/// Input layer id to bound shape.
pub type Bindings = BTreeMap<String, TensorShape>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{kind} expects {expected} input(s), got {found}")]
    ArityMismatch {
        kind: LayerKind,
        expected: &'static str,
        found: usize,
    },
    #[error("kernel {kernel} exceeds padded input extent {padded}")]
    KernelExceedsInput { kernel: u32, padded: usize },
    #[error("{kind} expects rank-{expected} input, got {found}")]
    RankMismatch {
        kind: LayerKind,
        expected: usize,
        found: TensorShape,
    },
    #[error("concat inputs disagree outside the channel axis: {0} vs {1}")]
    ConcatMismatch(TensorShape, TensorShape),
    #[error("add inputs differ: {0} vs {1}")]
    AddMismatch(TensorShape, TensorShape),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("input layer `{0}` has no bound shape")]
    UnboundInput(String),
    #[error("`{0}` is not an Input layer")]
    NotAnInput(String),
    #[error("no shape for layer `{0}`")]
    MissingShape(String),
    #[error("malformed shape `{0}` (expected HxWxC or N)")]
    BadShape(String),
    #[error(transparent)]
    Graph(#[from] IrError),
    #[error("layer `{layer}`: {source}")]
    AtLayer {
        layer: String,
        #[source]
        source: Box<ShapeError>,
    },
}

impl ShapeError {
    fn at(self, layer: &str) -> Self {
        ShapeError::AtLayer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with layer annotations stripped.
    pub fn root(&self) -> &ShapeError {
        match self {
            ShapeError::AtLayer { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Number of window positions along one axis:
/// `round((extent + 2*pad - kernel) / stride) + 1`.
pub fn window_count(
    extent: usize,
    kernel: u32,
    stride: u32,
    pad: u32,
    rounding: Rounding,
) -> Result<usize, ShapeError> {
    if kernel == 0 || stride == 0 {
        return Err(ShapeError::InvalidParam(format!(
            "kernel and stride must be positive (kernel {kernel}, stride {stride})"
        )));
    }
    let padded = extent + 2 * pad as usize;
    let (kernel, stride) = (kernel as usize, stride as usize);
    if kernel > padded {
        return Err(ShapeError::KernelExceedsInput {
            kernel: kernel as u32,
            padded,
        });
    }
    let span = padded - kernel;
    let steps = match rounding {
        Rounding::Floor => span / stride,
        Rounding::Ceil => span.div_ceil(stride),
    };
    Ok(steps + 1)
}

fn windowed(window: &Window, input: &TensorShape, channels: usize) -> Result<TensorShape, ShapeError> {
    let [h, w, _] = input.dims() else {
        unreachable!("caller checks rank")
    };
    let oh = window_count(*h, window.kernel.0, window.stride.0, window.pad.0, window.rounding)?;
    let ow = window_count(*w, window.kernel.1, window.stride.1, window.pad.1, window.rounding)?;
    Ok(TensorShape::spatial(oh, ow, channels))
}

fn require_rank(kind: LayerKind, shape: &TensorShape, rank: usize) -> Result<(), ShapeError> {
    if shape.rank() != rank {
        return Err(ShapeError::RankMismatch {
            kind,
            expected: rank,
            found: shape.clone(),
        });
    }
    Ok(())
}

/// Output shape of a single layer given its input shapes.
pub fn layer_output_shape(
    kind: LayerKind,
    params: &LayerParams,
    inputs: &[TensorShape],
) -> Result<TensorShape, ShapeError> {
    let multi = matches!(kind, LayerKind::Concat | LayerKind::Add);
    if (multi && inputs.len() < 2) || (!multi && inputs.len() != 1) {
        return Err(ShapeError::ArityMismatch {
            kind,
            expected: if multi { "at least 2" } else { "exactly 1" },
            found: inputs.len(),
        });
    }
    if !params.fits(kind) {
        return Err(ShapeError::InvalidParam(format!("parameters do not belong to {kind}")));
    }
    let first = &inputs[0];
    match (kind, params) {
        (LayerKind::Input, _) => {
            if first.dims().contains(&0) {
                return Err(ShapeError::BadShape(first.to_string()));
            }
            Ok(first.clone())
        }
        (LayerKind::Conv2D, LayerParams::Conv2D(p)) => {
            require_rank(kind, first, 3)?;
            if p.filters == 0 {
                return Err(ShapeError::InvalidParam("filters must be positive".into()));
            }
            windowed(&p.window(), first, p.filters as usize)
        }
        (LayerKind::MaxPool2D | LayerKind::AvgPool2D, LayerParams::Pool(p)) => {
            require_rank(kind, first, 3)?;
            windowed(&p.window(), first, first.channels())
        }
        (LayerKind::Dense, LayerParams::Dense(p)) => {
            require_rank(kind, first, 1)?;
            if p.units == 0 {
                return Err(ShapeError::InvalidParam("units must be positive".into()));
            }
            Ok(TensorShape::flat(p.units as usize))
        }
        (LayerKind::Flatten, _) => Ok(TensorShape::flat(first.elements() as usize)),
        (LayerKind::Concat, _) => {
            let mut channels = 0;
            for shape in inputs {
                let (a, b) = (first.dims(), shape.dims());
                if a.len() != b.len() || a[..a.len() - 1] != b[..b.len() - 1] {
                    return Err(ShapeError::ConcatMismatch(first.clone(), shape.clone()));
                }
                channels += shape.channels();
            }
            let mut dims = first.0.clone();
            *dims.last_mut().expect("nonempty shape") = channels;
            Ok(TensorShape(dims))
        }
        (LayerKind::Add, _) => {
            if let Some(other) = inputs.iter().find(|s| *s != first) {
                return Err(ShapeError::AddMismatch(first.clone(), other.clone()));
            }
            Ok(first.clone())
        }
        (k, _) if k.preserves_shape() => Ok(first.clone()),
        _ => unreachable!("params checked against kind"),
    }
}

/// Reads default bindings from `input_shape.<id>` metadata entries.
pub fn default_bindings(model: &Model) -> Result<Bindings, ShapeError> {
    let mut out = Bindings::new();
    for (key, value) in &model.metadata {
        let Some(id) = key.strip_prefix(META_INPUT_SHAPE_PREFIX) else {
            continue;
        };
        if model.layer(id).map(|l| l.kind) != Some(LayerKind::Input) {
            continue;
        }
        out.insert(id.to_string(), value.parse()?);
    }
    Ok(out)
}

fn input_shapes(model: &Model, layer: &Layer, shapes: &ShapeMap, bindings: &Bindings) -> Option<Vec<TensorShape>> {
    if layer.kind == LayerKind::Input && model.predecessors(&layer.id).is_empty() {
        return bindings.get(&layer.id).map(|s| vec![s.clone()]);
    }
    // sorted by id; multi-input shape rules are order-free
    let preds = model.predecessors(&layer.id);
    if preds.is_empty() {
        return None;
    }
    preds.iter().map(|p| shapes.get(*p).cloned()).collect()
}

fn check_bindings(model: &Model, bindings: &Bindings) -> Result<(), ShapeError> {
    for id in bindings.keys() {
        if model.layer(id).map(|l| l.kind) != Some(LayerKind::Input) {
            return Err(ShapeError::NotAnInput(id.clone()));
        }
    }
    Ok(())
}

/// Infers output shapes in topological order.
///
/// A layer gets a shape when all its predecessors have one; layers not
/// reachable from a bound input are absent from the result.
pub fn infer_shapes(model: &Model, bindings: &Bindings) -> Result<ShapeMap, ShapeError> {
    check_bindings(model, bindings)?;
    for id in model.input_ids() {
        if !bindings.contains_key(id) && model.predecessors(id).is_empty() {
            return Err(ShapeError::UnboundInput(id.to_string()));
        }
    }
    let order = ir::topo_order(model)?;
    let mut shapes = ShapeMap::new();
    for id in &order {
        let layer = model.layer(id).expect("topo ids exist");
        let Some(inputs) = input_shapes(model, layer, &shapes, bindings) else {
            continue;
        };
        let out = layer_output_shape(layer.kind, &layer.params, &inputs).map_err(|e| e.at(id))?;
        shapes.insert(id.clone(), out);
    }
    Ok(shapes)
}

/// Best-effort inference for models that may be broken: never fails,
/// collects per-layer errors and keeps every shape it could compute.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialShapes {
    pub shapes: ShapeMap,
    pub errors: Vec<ShapeError>,
}

pub fn infer_shapes_partial(model: &Model, bindings: &Bindings) -> PartialShapes {
    let mut result = PartialShapes::default();
    let order = ir::topo_order_lenient(model);
    for id in &order {
        let layer = model.layer(id).expect("ordered ids exist");
        let Some(inputs) = input_shapes(model, layer, &result.shapes, bindings) else {
            continue;
        };
        match layer_output_shape(layer.kind, &layer.params, &inputs) {
            Ok(shape) => {
                result.shapes.insert(id.clone(), shape);
            }
            Err(e) => result.errors.push(e.at(id)),
        }
    }
    result
}

/// The shape of the tensor feeding a single-input layer.
pub fn input_shape_of<'a>(model: &Model, shapes: &'a ShapeMap, id: &str) -> Option<&'a TensorShape> {
    match model.predecessors(id).as_slice() {
        [only] => shapes.get(*only),
        _ => None,
    }
}

/// Named weight tensors of a layer in canonical layout (`HWIO` kernels,
/// `IO` dense matrices, per-channel vectors), given the layer's input shape.
pub fn weight_shapes(layer: &Layer, input: &TensorShape) -> Vec<(&'static str, Vec<usize>)> {
    match &layer.params {
        LayerParams::Conv2D(p) => {
            let f = p.filters as usize;
            vec![
                (
                    "kernel",
                    vec![p.kernel.0 as usize, p.kernel.1 as usize, input.channels(), f],
                ),
                ("bias", vec![f]),
            ]
        }
        LayerParams::Dense(p) => {
            let u = p.units as usize;
            vec![("kernel", vec![input.elements() as usize, u]), ("bias", vec![u])]
        }
        _ if layer.kind == LayerKind::BatchNorm => {
            let c = input.channels();
            ["gamma", "beta", "moving_mean", "moving_variance"]
                .into_iter()
                .map(|n| (n, vec![c]))
                .collect()
        }
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub per_layer: BTreeMap<String, u64>,
    pub total: u64,
}

/// Trainable parameter counts (BatchNorm counts scale, shift and both
/// moving statistics, i.e. four per channel).
pub fn count_params(model: &Model, shapes: &ShapeMap) -> Result<ParamReport, ShapeError> {
    let mut report = ParamReport::default();
    for layer in &model.layers {
        if !shapes.contains_key(&layer.id) {
            return Err(ShapeError::MissingShape(layer.id.clone()));
        }
        let count = match layer.kind {
            LayerKind::Conv2D | LayerKind::Dense | LayerKind::BatchNorm => {
                let input = input_shape_of(model, shapes, &layer.id)
                    .ok_or_else(|| ShapeError::MissingShape(format!("input of {}", layer.id)))?;
                weight_shapes(layer, input)
                    .iter()
                    .map(|(_, dims)| dims.iter().map(|&d| d as u64).product::<u64>())
                    .sum()
            }
            _ => 0,
        };
        report.per_layer.insert(layer.id.clone(), count);
        report.total += count;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ConvParams, DenseParams, PoolParams};

    /// Counts window start positions by walking them one stride at a time.
    /// Floor keeps windows that fit entirely; ceil keeps adding windows
    /// until one reaches the end of the padded input.
    fn brute_force_windows(extent: usize, k: usize, s: usize, p: usize, rounding: Rounding) -> usize {
        let padded = extent + 2 * p;
        let mut count = 0;
        let mut start = 0;
        loop {
            match rounding {
                Rounding::Floor => {
                    if start + k > padded {
                        break;
                    }
                    count += 1;
                }
                Rounding::Ceil => {
                    count += 1;
                    if start + k >= padded {
                        break;
                    }
                }
            }
            start += s;
        }
        count
    }

    #[test]
    fn window_count_matches_enumeration() {
        for h in 1..=32 {
            for k in 1..=h {
                for s in 1..=4 {
                    for p in 0..=3 {
                        for r in [Rounding::Floor, Rounding::Ceil] {
                            let got = window_count(h, k as u32, s as u32, p as u32, r).unwrap();
                            assert_eq!(got, brute_force_windows(h, k, s, p, r), "h={h} k={k} s={s} p={p} {r:?}");
                        }
                    }
                }
            }
        }
    }

    fn conv(f: u32, k: u32, s: u32, p: u32) -> LayerParams {
        LayerParams::Conv2D(ConvParams::new(f, (k, k)).with_stride((s, s)).with_pad((p, p)))
    }

    fn pool(k: u32, s: u32, r: Rounding) -> LayerParams {
        LayerParams::Pool(PoolParams::new((k, k), (s, s)).with_rounding(r))
    }

    #[test]
    fn conv_same_padding() {
        let out = layer_output_shape(
            LayerKind::Conv2D,
            &conv(64, 3, 1, 1),
            &[TensorShape::spatial(224, 224, 3)],
        );
        assert_eq!(out.unwrap(), TensorShape::spatial(224, 224, 64));
    }

    #[test]
    fn max_pool_halves() {
        let out = layer_output_shape(
            LayerKind::MaxPool2D,
            &pool(2, 2, Rounding::Floor),
            &[TensorShape::spatial(224, 224, 64)],
        );
        assert_eq!(out.unwrap(), TensorShape::spatial(112, 112, 64));
    }

    #[test]
    fn flatten_multiplies() {
        let out = layer_output_shape(
            LayerKind::Flatten,
            &LayerParams::Empty,
            &[TensorShape::spatial(7, 7, 512)],
        );
        assert_eq!(out.unwrap(), TensorShape::flat(25088));
    }

    #[test]
    fn pool_rounding_modes() {
        let input = [TensorShape::spatial(224, 224, 64)];
        let ceil = layer_output_shape(LayerKind::MaxPool2D, &pool(3, 2, Rounding::Ceil), &input).unwrap();
        let floor = layer_output_shape(LayerKind::MaxPool2D, &pool(3, 2, Rounding::Floor), &input).unwrap();
        assert_eq!(ceil, TensorShape::spatial(112, 112, 64));
        assert_eq!(floor, TensorShape::spatial(111, 111, 64));
    }

    #[test]
    fn error_cases() {
        let sp = TensorShape::spatial(7, 7, 512);
        assert!(matches!(
            layer_output_shape(LayerKind::Conv2D, &conv(8, 11, 1, 0), std::slice::from_ref(&sp)),
            Err(ShapeError::KernelExceedsInput { kernel: 11, padded: 7 })
        ));
        assert!(matches!(
            layer_output_shape(
                LayerKind::Dense,
                &LayerParams::Dense(DenseParams { units: 10 }),
                std::slice::from_ref(&sp)
            ),
            Err(ShapeError::RankMismatch { expected: 1, .. })
        ));
        assert!(matches!(
            layer_output_shape(
                LayerKind::Concat,
                &LayerParams::Concat(Default::default()),
                std::slice::from_ref(&sp)
            ),
            Err(ShapeError::ArityMismatch { found: 1, .. })
        ));
        assert!(matches!(
            layer_output_shape(
                LayerKind::Concat,
                &LayerParams::Concat(Default::default()),
                &[sp.clone(), TensorShape::spatial(8, 7, 3)]
            ),
            Err(ShapeError::ConcatMismatch(..))
        ));
        assert!(matches!(
            layer_output_shape(LayerKind::Flatten, &LayerParams::Empty, &[sp.clone(), sp]),
            Err(ShapeError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn concat_sums_channels() {
        let inputs: Vec<TensorShape> = [64, 128, 32, 32]
            .iter()
            .map(|&c| TensorShape::spatial(28, 28, c))
            .collect();
        let out = layer_output_shape(LayerKind::Concat, &LayerParams::Concat(Default::default()), &inputs);
        assert_eq!(out.unwrap(), TensorShape::spatial(28, 28, 256));
    }

    fn tiny() -> Model {
        let mut m = Model::new("tiny");
        m.insert_layer(Layer::input("in")).unwrap();
        m.append("in", Layer::conv2d("c1", ConvParams::new(64, (3, 3))))
            .unwrap();
        m.append("c1", Layer::activation("a1", crate::ir::ActivationFn::Relu))
            .unwrap();
        m.append("a1", Layer::flatten("f")).unwrap();
        m.append("f", Layer::dense("fc", 10)).unwrap();
        m
    }

    #[test]
    fn infer_and_count() {
        let m = tiny();
        let bindings = Bindings::from([("in".to_string(), TensorShape::spatial(5, 5, 3))]);
        let shapes = infer_shapes(&m, &bindings).unwrap();
        assert_eq!(shapes["c1"], TensorShape::spatial(3, 3, 64));
        assert_eq!(shapes["fc"], TensorShape::flat(10));
        let report = count_params(&m, &shapes).unwrap();
        assert_eq!(report.per_layer["c1"], 1792);
        assert_eq!(report.per_layer["a1"], 0);
        assert_eq!(report.per_layer["fc"], 576 * 10 + 10);
        assert_eq!(report.total, report.per_layer.values().sum::<u64>());
        assert_eq!(infer_shapes(&m, &bindings).unwrap(), shapes);
    }

    #[test]
    fn dense_param_count() {
        let mut m = Model::new("d");
        m.insert_layer(Layer::input("in")).unwrap();
        m.append("in", Layer::dense("fc6", 4096)).unwrap();
        let bindings = Bindings::from([("in".to_string(), TensorShape::flat(25088))]);
        let shapes = infer_shapes(&m, &bindings).unwrap();
        assert_eq!(count_params(&m, &shapes).unwrap().total, 102_764_544);
    }

    #[test]
    fn unbound_and_annotated_errors() {
        let m = tiny();
        assert_eq!(
            infer_shapes(&m, &Bindings::new()),
            Err(ShapeError::UnboundInput("in".into()))
        );
        let bindings = Bindings::from([("in".to_string(), TensorShape::spatial(2, 2, 3))]);
        let err = infer_shapes(&m, &bindings).unwrap_err();
        assert!(
            matches!(&err, ShapeError::AtLayer { layer, .. } if layer == "c1"),
            "{err}"
        );
        assert!(matches!(err.root(), ShapeError::KernelExceedsInput { .. }));
        let bad = Bindings::from([("c1".to_string(), TensorShape::flat(3))]);
        assert_eq!(infer_shapes(&m, &bad), Err(ShapeError::NotAnInput("c1".into())));
    }

    #[test]
    fn partial_inference_keeps_going() {
        let mut m = tiny();
        m.remove_layer("f");
        m.insert_edge("a1", "fc").unwrap();
        let bindings = Bindings::from([("in".to_string(), TensorShape::spatial(5, 5, 3))]);
        let partial = infer_shapes_partial(&m, &bindings);
        assert_eq!(partial.shapes["a1"], TensorShape::spatial(3, 3, 64));
        assert!(!partial.shapes.contains_key("fc"));
        assert_eq!(partial.errors.len(), 1);
    }

    #[test]
    fn unreachable_layers_have_no_shape() {
        let mut m = tiny();
        m.insert_layer(Layer::flatten("orphan")).unwrap();
        let bindings = Bindings::from([("in".to_string(), TensorShape::spatial(5, 5, 3))]);
        let shapes = infer_shapes(&m, &bindings).unwrap();
        assert!(!shapes.contains_key("orphan"));
        assert_eq!(
            count_params(&m, &shapes),
            Err(ShapeError::MissingShape("orphan".into()))
        );
    }

    #[test]
    fn shape_text() {
        assert_eq!(
            "224x224x3".parse::<TensorShape>().unwrap(),
            TensorShape::spatial(224, 224, 3)
        );
        assert_eq!("784".parse::<TensorShape>().unwrap(), TensorShape::flat(784));
        assert!("2x2".parse::<TensorShape>().is_err());
        assert!("0x2x2".parse::<TensorShape>().is_err());
        assert_eq!(TensorShape::spatial(7, 7, 512).to_string(), "7x7x512");
    }

    #[test]
    fn bindings_from_metadata() {
        let mut m = tiny();
        m.set_default_input_shape("in", &[32, 32, 1]);
        let b = default_bindings(&m).unwrap();
        assert_eq!(b["in"], TensorShape::spatial(32, 32, 1));
    }
}
