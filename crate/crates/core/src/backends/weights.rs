//! Weight manifests: per-layer tensor listings with axis-layout tags, the
//! permutations between layouts, and compatibility checks against a model.
//!
//! Tensor payloads are raw little-endian `f32` streams, one file per tensor,
//! referenced from the manifest by relative path.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::Model;
use crate::lint::{Diagnostic, RuleId, Severity};
use crate::shape::{input_shape_of, weight_shapes, ShapeMap};

pub const MANIFEST_FORMAT: &str = "darviz-weights";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutTag {
    /// Convolution kernel: height, width, input channels, output channels.
    HWIO,
    OIHW,
    /// Dense matrix, input features first.
    IO,
    OI,
    /// Per-channel vector.
    C,
}

impl LayoutTag {
    pub const ALL: [LayoutTag; 5] = [
        LayoutTag::HWIO,
        LayoutTag::OIHW,
        LayoutTag::IO,
        LayoutTag::OI,
        LayoutTag::C,
    ];

    pub fn axes(self) -> &'static [char] {
        match self {
            LayoutTag::HWIO => &['H', 'W', 'I', 'O'],
            LayoutTag::OIHW => &['O', 'I', 'H', 'W'],
            LayoutTag::IO => &['I', 'O'],
            LayoutTag::OI => &['O', 'I'],
            LayoutTag::C => &['C'],
        }
    }

    pub fn rank(self) -> usize {
        self.axes().len()
    }

    /// Layout in which the shape engine describes tensors of this rank.
    pub fn canonical_for_rank(rank: usize) -> Option<LayoutTag> {
        match rank {
            4 => Some(LayoutTag::HWIO),
            2 => Some(LayoutTag::IO),
            1 => Some(LayoutTag::C),
            _ => None,
        }
    }
}

impl fmt::Display for LayoutTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for LayoutTag {
    type Err = WeightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayoutTag::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| WeightsError::UnknownLayout(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("layouts {0} and {1} describe different axes")]
    IncompatibleLayouts(LayoutTag, LayoutTag),
    #[error("unknown layout tag `{0}`")]
    UnknownLayout(String),
    #[error("tensor has {found} elements, shape {shape:?} needs {expected}")]
    SizeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("shape {shape:?} has rank {}, layout {layout} needs {}", shape.len(), layout.rank())]
    RankMismatch { shape: Vec<usize>, layout: LayoutTag },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Axis permutation converting `from` to `to`: output axis `i` is input
/// axis `perm[i]`.
pub fn layout_permutation(from: LayoutTag, to: LayoutTag) -> Result<Vec<usize>, WeightsError> {
    let (src, dst) = (from.axes(), to.axes());
    if src.len() != dst.len() {
        return Err(WeightsError::IncompatibleLayouts(from, to));
    }
    dst.iter()
        .map(|axis| src.iter().position(|a| a == axis))
        .collect::<Option<Vec<_>>>()
        .ok_or(WeightsError::IncompatibleLayouts(from, to))
}

pub fn permute_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&i| shape[i]).collect()
}

/// Reorders a row-major tensor's elements according to `perm`.
pub fn permute_tensor(data: Vec<f32>, shape: &[usize], perm: &[usize]) -> Result<Vec<f32>, WeightsError> {
    let expected: usize = shape.iter().product();
    let found = data.len();
    let array = ArrayD::from_shape_vec(IxDyn(shape), data).map_err(|_| WeightsError::SizeMismatch {
        shape: shape.to_vec(),
        expected,
        found,
    })?;
    Ok(array.permuted_axes(IxDyn(perm)).iter().copied().collect())
}

fn default_dtype() -> String {
    "f32".into()
}

fn default_byte_order() -> String {
    "little".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    pub shape: Vec<usize>,
    pub layout: LayoutTag,
    pub file: String,
    #[serde(default = "default_byte_order")]
    pub byte_order: String,
}

impl TensorEntry {
    /// Problems that make the entry unusable regardless of the model.
    pub fn defects(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dtype != "f32" {
            out.push(format!("dtype `{}` (only f32 is supported)", self.dtype));
        }
        if self.byte_order != "little" {
            out.push(format!("byte order `{}` (only little is supported)", self.byte_order));
        }
        if self.shape.len() != self.layout.rank() {
            out.push(format!("shape {:?} does not fit layout {}", self.shape, self.layout));
        }
        if self.shape.contains(&0) {
            out.push(format!("shape {:?} has an empty axis", self.shape));
        }
        out
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    /// Shape in the layout the shape engine uses for this rank.
    pub fn canonical_shape(&self) -> Option<Vec<usize>> {
        let canonical = LayoutTag::canonical_for_rank(self.layout.rank())?;
        let perm = layout_permutation(self.layout, canonical).ok()?;
        (self.shape.len() == perm.len()).then(|| permute_shape(&self.shape, &perm))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsManifest {
    #[serde(default = "manifest_format")]
    pub format: String,
    /// Layer id to its tensors.
    pub layers: BTreeMap<String, Vec<TensorEntry>>,
}

fn manifest_format() -> String {
    MANIFEST_FORMAT.into()
}

impl WeightsManifest {
    pub fn parse(text: &str) -> Result<Self, WeightsError> {
        let m: WeightsManifest = serde_json::from_str(text).map_err(|e| WeightsError::Manifest(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(WeightsError::Manifest(format!("unexpected format `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// A manifest listing every weight tensor of `model` in canonical layout,
    /// with files under `tensors/`.
    pub fn for_model(model: &Model, shapes: &ShapeMap) -> Self {
        let mut layers = BTreeMap::new();
        for layer in &model.layers {
            let Some(input) = input_shape_of(model, shapes, &layer.id) else {
                continue;
            };
            let entries: Vec<TensorEntry> = weight_shapes(layer, input)
                .into_iter()
                .map(|(name, shape)| TensorEntry {
                    name: name.to_string(),
                    dtype: default_dtype(),
                    layout: LayoutTag::canonical_for_rank(shape.len()).expect("weights have rank 1, 2 or 4"),
                    file: format!("tensors/{}.{name}.bin", layer.id.replace('/', "_")),
                    byte_order: default_byte_order(),
                    shape,
                })
                .collect();
            if !entries.is_empty() {
                layers.insert(layer.id.clone(), entries);
            }
        }
        WeightsManifest {
            format: manifest_format(),
            layers,
        }
    }
}

/// Reads a tensor payload relative to the manifest directory.
pub fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f32>, WeightsError> {
    let bytes = std::fs::read(dir.join(&entry.file))?;
    if bytes.len() != entry.elements() * 4 {
        return Err(WeightsError::SizeMismatch {
            shape: entry.shape.clone(),
            expected: entry.elements(),
            found: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_tensor(dir: &Path, entry: &TensorEntry, data: &[f32]) -> Result<(), WeightsError> {
    if data.len() != entry.elements() {
        return Err(WeightsError::SizeMismatch {
            shape: entry.shape.clone(),
            expected: entry.elements(),
            found: data.len(),
        });
    }
    let path = dir.join(&entry.file);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Compares a manifest with the tensors `model` expects at `shapes`.
///
/// Entry shapes are normalized to the canonical layout before comparison,
/// so an `OIHW` kernel matches an `HWIO` expectation with permuted extents.
pub fn check_weights_compat(model: &Model, shapes: &ShapeMap, manifest: &WeightsManifest) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut expected_layers = BTreeMap::new();
    for layer in &model.layers {
        let Some(input) = input_shape_of(model, shapes, &layer.id) else {
            continue;
        };
        let expected = weight_shapes(layer, input);
        if !expected.is_empty() {
            expected_layers.insert(layer.id.as_str(), expected);
        }
    }

    for (id, expected) in &expected_layers {
        let entries = manifest.layers.get(*id).map(Vec::as_slice).unwrap_or(&[]);
        for (name, shape) in expected {
            let Some(entry) = entries.iter().find(|e| e.name == *name) else {
                out.push(Diagnostic::new(
                    RuleId::W1,
                    Severity::Error,
                    vec![id.to_string()],
                    format!("missing tensor `{name}` {shape:?}"),
                ));
                continue;
            };
            let defects = entry.defects();
            if !defects.is_empty() {
                out.push(Diagnostic::new(
                    RuleId::W4,
                    Severity::Error,
                    vec![id.to_string()],
                    format!("tensor `{name}`: {}", defects.join("; ")),
                ));
                continue;
            }
            match entry.canonical_shape() {
                Some(actual) if actual == *shape => {}
                actual => out.push(Diagnostic::new(
                    RuleId::W3,
                    Severity::Error,
                    vec![id.to_string()],
                    format!(
                        "tensor `{name}` has shape {:?} ({}), expected {shape:?} in {} layout{}",
                        entry.shape,
                        entry.layout,
                        LayoutTag::canonical_for_rank(shape.len()).expect("weights have rank 1, 2 or 4"),
                        actual.map(|a| format!(" (normalized {a:?})")).unwrap_or_default()
                    ),
                )),
            }
        }
        for entry in entries {
            if !expected.iter().any(|(n, _)| *n == entry.name) {
                out.push(Diagnostic::new(
                    RuleId::W2,
                    Severity::Warning,
                    vec![id.to_string()],
                    format!("unexpected tensor `{}`", entry.name),
                ));
            }
        }
    }
    for (id, entries) in &manifest.layers {
        if !expected_layers.contains_key(id.as_str()) {
            let what = if model.contains(id) {
                "layer has no weights"
            } else {
                "no such layer"
            };
            for entry in entries {
                out.push(Diagnostic::new(
                    RuleId::W2,
                    Severity::Warning,
                    vec![id.clone()],
                    format!("unexpected tensor `{}`: {what}", entry.name),
                ));
            }
        }
    }
    crate::lint::sort_diagnostics(&mut out);
    out
}
