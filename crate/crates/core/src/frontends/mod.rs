//! Importers for foreign model-definition formats.

mod caffe;
mod keras;
pub mod prototxt;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ir::{IrError, Model};

pub use caffe::import_caffe;
pub use keras::import_keras_json;

/// Result of a successful import.
///
/// Constructs that cannot be mapped abort the import with an error, so a
/// report never carries skipped layers; `notes` lists the lossless
/// rewrites and ignored fields encountered on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportReport {
    pub model: Model,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImportError {
    #[error("syntax error at line {line}, column {column}: expected {expected}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("unsupported layer type `{0}`")]
    UnsupportedLayer(String),
    #[error("unsupported layer class `{0}`")]
    UnsupportedClass(String),
    #[error("bottom blob `{0}` has no producer")]
    DanglingBlob(String),
    #[error("layer `{layer}`: \"same\" padding with even kernel {}x{} needs asymmetric padding", kernel.0, kernel.1)]
    UnsupportedPadding { layer: String, kernel: (u32, u32) },
    #[error("layer `{layer}`: {reason}")]
    Unsupported { layer: String, reason: String },
    #[error("layer `{layer}`: {reason}")]
    Invalid { layer: String, reason: String },
    #[error("document: {0}")]
    Document(String),
    #[error(transparent)]
    Ir(#[from] IrError),
}

impl From<prototxt::SyntaxError> for ImportError {
    fn from(e: prototxt::SyntaxError) -> Self {
        ImportError::Syntax {
            line: e.line,
            column: e.column,
            expected: e.expected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImportFormat {
    Caffe,
    Keras,
}

impl ImportFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ImportFormat::Caffe => "caffe",
            ImportFormat::Keras => "keras",
        }
    }
}

impl fmt::Display for ImportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caffe" => Ok(ImportFormat::Caffe),
            "keras" => Ok(ImportFormat::Keras),
            other => Err(format!("unknown import format `{other}` (expected caffe or keras)")),
        }
    }
}

pub fn import(format: ImportFormat, text: &str) -> Result<ImportReport, ImportError> {
    match format {
        ImportFormat::Caffe => import_caffe(text),
        ImportFormat::Keras => import_keras_json(text),
    }
}
