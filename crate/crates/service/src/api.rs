//! Request handlers. Compute endpoints are pure functions of the request
//! body; only the design endpoints touch the store.

use std::collections::BTreeMap;

use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use darviz_core::backends::{emit, CodegenError, CodegenTarget, SourceArtifact};
use darviz_core::frontends::{import, ImportFormat};
use darviz_core::ir::{parse_ir, LayerKind, Model};
use darviz_core::lint::{lint_model, Diagnostic};
use darviz_core::shape::{default_bindings, infer_shapes, Bindings, ShapeError, ShapeMap, TensorShape};
use darviz_core::trace::{lint_trace, parse_trace, DetectorConfig, TraceFinding, TraceFormat};
use darviz_core::zoo::{zoo_entries, zoo_list};

use crate::error::{ApiError, Body};
use crate::store::document_value;
use crate::AppState;

/// Accepts the IR document either inline as a JSON object or as a string
/// holding the document text.
pub fn parse_document(doc: &Value) -> Result<Model, ApiError> {
    let parsed = match doc {
        Value::String(text) => parse_ir(text),
        Value::Object(_) => parse_ir(&doc.to_string()),
        _ => return Err(ApiError::bad_request("`model` must be an IR document object or string")),
    };
    parsed.map_err(|e| ApiError::unprocessable("invalid-document", e.to_string()))
}

pub fn diagnostics_json(diags: &[Diagnostic]) -> Value {
    Value::Array(diags.iter().map(Diagnostic::to_json).collect())
}

pub fn shapes_json(shapes: &ShapeMap) -> Value {
    json!({ "shapes": shapes })
}

pub fn findings_json(findings: &[TraceFinding]) -> Value {
    json!({ "findings": findings })
}

pub fn artifact_json(artifact: &SourceArtifact) -> Value {
    json!({
        "target": artifact.target.as_str(),
        "filename": artifact.filename,
        "source": artifact.source,
        "line_count": artifact.line_count,
    })
}

pub fn shape_error(e: &ShapeError) -> ApiError {
    let err = ApiError::unprocessable("shape", e.to_string());
    match e {
        ShapeError::AtLayer { layer, .. } => err.with_details(json!({ "layer": layer })),
        _ => err,
    }
}

pub fn codegen_error(e: &CodegenError) -> ApiError {
    match e {
        CodegenError::LintErrorsPresent(diags) => ApiError::unprocessable("lint", e.to_string())
            .with_details(json!({ "diagnostics": diagnostics_json(diags) })),
        CodegenError::UnrepresentableConstruct { target, layer, .. } => {
            ApiError::unprocessable("unrepresentable", e.to_string())
                .with_details(json!({ "target": target.as_str(), "layer": layer }))
        }
    }
}

fn bindings(model: &Model, inputs: Option<BTreeMap<String, Vec<usize>>>) -> Result<Option<Bindings>, ApiError> {
    let Some(inputs) = inputs else {
        return Ok(None);
    };
    let mut out = Bindings::new();
    for (id, dims) in inputs {
        let text: Vec<String> = dims.iter().map(usize::to_string).collect();
        let shape: TensorShape = text.join("x").parse().map_err(|e: ShapeError| shape_error(&e))?;
        out.insert(id, shape);
    }
    for id in out.keys() {
        if model.layer(id).map(|l| l.kind) != Some(LayerKind::Input) {
            return Err(shape_error(&ShapeError::NotAnInput(id.clone())));
        }
    }
    Ok(Some(out))
}

#[derive(Deserialize)]
pub struct ModelRequest {
    model: Value,
    #[serde(default)]
    inputs: Option<BTreeMap<String, Vec<usize>>>,
}

pub async fn validate(Body(req): Body<ModelRequest>) -> Result<Json<Value>, ApiError> {
    let model = parse_document(&req.model)?;
    let bindings = bindings(&model, req.inputs)?;
    let analysis = lint_model(&model, bindings.as_ref());
    Ok(Json(json!({ "diagnostics": diagnostics_json(&analysis.diagnostics) })))
}

pub async fn shapes(Body(req): Body<ModelRequest>) -> Result<Json<Value>, ApiError> {
    let model = parse_document(&req.model)?;
    let bindings = match bindings(&model, req.inputs)? {
        Some(b) => b,
        None => default_bindings(&model).map_err(|e| shape_error(&e))?,
    };
    let shapes = infer_shapes(&model, &bindings).map_err(|e| shape_error(&e))?;
    Ok(Json(shapes_json(&shapes)))
}

#[derive(Deserialize)]
pub struct CodegenRequest {
    model: Value,
    target: String,
}

pub async fn codegen(Body(req): Body<CodegenRequest>) -> Result<Json<Value>, ApiError> {
    let target: CodegenTarget = req.target.parse().map_err(ApiError::bad_request)?;
    let model = parse_document(&req.model)?;
    let artifact = emit(&model, target).map_err(|e| codegen_error(&e))?;
    Ok(Json(artifact_json(&artifact)))
}

#[derive(Deserialize)]
pub struct ImportRequest {
    format: String,
    text: String,
}

pub async fn import_model(Body(req): Body<ImportRequest>) -> Result<Json<Value>, ApiError> {
    let format: ImportFormat = req.format.parse().map_err(ApiError::bad_request)?;
    let report = import(format, &req.text).map_err(|e| ApiError::unprocessable("import", e.to_string()))?;
    Ok(Json(json!({
        "model": document_value(&report.model),
        "notes": report.notes,
    })))
}

#[derive(Deserialize)]
pub struct TraceRequest {
    format: String,
    text: String,
    #[serde(default)]
    config: Option<DetectorConfig>,
}

pub async fn lint_trace_text(Body(req): Body<TraceRequest>) -> Result<Json<Value>, ApiError> {
    let format: TraceFormat = req.format.parse().map_err(ApiError::bad_request)?;
    let trace = parse_trace(&req.text, format).map_err(|e| ApiError::unprocessable("trace", e.to_string()))?;
    let findings = lint_trace(&trace, &req.config.unwrap_or_default());
    Ok(Json(findings_json(&findings)))
}

pub async fn zoo_index() -> Json<Value> {
    Json(json!(zoo_list()))
}

/// The fixture document exactly as shipped.
pub async fn zoo_model(Path(name): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let entry = zoo_entries()
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| ApiError::not_found(format!("no zoo model named `{name}`")))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], entry.source))
}

/// Layer kinds with their default parameters, for building palettes.
pub async fn catalog() -> Json<Value> {
    let kinds: Vec<Value> = LayerKind::ALL
        .iter()
        .map(|k| json!({ "kind": k.as_str(), "params": k.default_params().to_json() }))
        .collect();
    Json(Value::Array(kinds))
}

#[derive(Deserialize)]
pub struct DesignRequest {
    model: Value,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

pub async fn create_design(
    State(state): State<AppState>,
    Body(req): Body<DesignRequest>,
) -> Result<Json<Value>, ApiError> {
    let model = parse_document(&req.model)?;
    let record = blocking(move || Ok(state.store.save(None, &model)?)).await?;
    Ok(Json(record.to_json()))
}

pub async fn update_design(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Body(req): Body<DesignRequest>,
) -> Result<Json<Value>, ApiError> {
    let model = parse_document(&req.model)?;
    let record = blocking(move || Ok(state.store.save(Some(&id), &model)?)).await?;
    Ok(Json(record.to_json()))
}

pub async fn get_design(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let record = blocking(move || Ok(state.store.load(&id)?)).await?;
    Ok(Json(record.to_json()))
}

pub async fn delete_design(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let deleted = id.clone();
    blocking(move || Ok(state.store.delete(&id)?)).await?;
    Ok(Json(json!({ "id": deleted, "deleted": true })))
}

pub async fn list_designs(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let ids = blocking(move || Ok(state.store.list()?)).await?;
    Ok(Json(json!({ "ids": ids })))
}
