//! The `darviz` command line. Subcommands mirror the HTTP API; `--json`
//! output uses the same shapes as the API responses.
//!
//! Exit status: 0 on success, 1 when the input was read but the toolkit
//! rejects it (lint errors, shape failures, fatal trace findings,
//! unrepresentable layers), 2 for usage errors and unreadable or
//! unparsable input.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use darviz_core::backends::{emit, CodegenError, CodegenTarget, SourceArtifact};
use darviz_core::frontends::{import, ImportFormat};
use darviz_core::ir::{parse_ir, serialize_ir, topo_order_lenient, LayerKind, Model};
use darviz_core::lint::{lint_model, Diagnostic};
use darviz_core::shape::{default_bindings, infer_shapes, Bindings, TensorShape};
use darviz_core::trace::{lint_trace, parse_trace, DetectorConfig, TraceFormat, TraceSeverity};
use darviz_core::zoo::{zoo_entries, zoo_list};
use darviz_service::api::{artifact_json, diagnostics_json, findings_json, shapes_json};
use darviz_service::store::document_value;

#[derive(Debug, Parser)]
#[command(
    name = "darviz",
    version,
    about = "Design, check and convert deep-learning model architectures"
)]
pub struct Cli {
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceFormat {
    Caffe,
    Keras,
}

impl From<SourceFormat> for ImportFormat {
    fn from(f: SourceFormat) -> Self {
        match f {
            SourceFormat::Caffe => ImportFormat::Caffe,
            SourceFormat::Keras => ImportFormat::Keras,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Target {
    Keras,
    Torch,
    Caffe,
}

impl From<Target> for CodegenTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Keras => CodegenTarget::TensorFlowKerasSource,
            Target::Torch => CodegenTarget::TorchModuleSource,
            Target::Caffe => CodegenTarget::CaffePrototxt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TraceFileFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a Caffe prototxt or Keras JSON config into an IR document.
    Import {
        #[arg(long)]
        from: SourceFormat,
        #[arg(short, long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Lint an IR document.
    Validate {
        file: PathBuf,
        /// `HxWxC` (or `N`) for the sole input, or `ID=HxWxC`; repeatable.
        #[arg(long = "input-shape")]
        input_shape: Vec<String>,
    },
    /// Print the inferred output shape of every layer.
    Shapes {
        file: PathBuf,
        /// Falls back to the document's recorded input shapes.
        #[arg(long = "input-shape")]
        input_shape: Vec<String>,
    },
    /// Generate framework source from an IR document.
    Codegen {
        file: PathBuf,
        #[arg(long)]
        target: Target,
        /// Defaults to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Import, lint and generate in one step.
    Convert {
        #[arg(long)]
        from: SourceFormat,
        #[arg(long)]
        to: Target,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Built-in reference architectures.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Scan a training log for faults.
    LintTrace {
        file: PathBuf,
        /// Defaults to jsonl for `.jsonl` files, csv otherwise.
        #[arg(long)]
        format: Option<TraceFileFormat>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "DARVIZ_PORT", default_value_t = darviz_service::DEFAULT_PORT)]
        port: u16,
        #[arg(long, env = "DARVIZ_STORE", default_value = "darviz-store")]
        store: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ZooAction {
    List,
    /// Write a zoo model's IR document.
    Export {
        name: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Input missing, unreadable or unparsable.
    #[error("{stage}: {message}")]
    Input { stage: &'static str, message: String },
    /// Input understood but rejected.
    #[error("{stage}: {message}")]
    Rejected {
        stage: &'static str,
        message: String,
        diagnostics: Vec<Diagnostic>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Rejected { .. } => 1,
            CliError::Usage(_) | CliError::Input { .. } => 2,
        }
    }

    fn to_json(&self) -> Value {
        let (stage, message) = match self {
            CliError::Usage(m) => ("usage", m.as_str()),
            CliError::Input { stage, message } | CliError::Rejected { stage, message, .. } => {
                (*stage, message.as_str())
            }
        };
        let mut v = json!({ "error": stage, "message": message });
        if let CliError::Rejected { diagnostics, .. } = self {
            if !diagnostics.is_empty() {
                v["diagnostics"] = diagnostics_json(diagnostics);
            }
        }
        v
    }
}

fn input_error(stage: &'static str, e: impl ToString) -> CliError {
    CliError::Input {
        stage,
        message: e.to_string(),
    }
}

fn rejected(stage: &'static str, e: impl ToString) -> CliError {
    CliError::Rejected {
        stage,
        message: e.to_string(),
        diagnostics: Vec::new(),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_error("read", format!("{}: {e}", path.display())))
}

/// Writes via a temp file in the target directory, so a failed run never
/// leaves a partial file behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |e: io::Error| input_error("write", format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    parse_ir(&read(path)?).map_err(|e| input_error("parse", e))
}

fn parse_bindings(model: &Model, specs: &[String]) -> Result<Option<Bindings>, CliError> {
    if specs.is_empty() {
        return Ok(None);
    }
    let inputs: Vec<&str> = model
        .layers
        .iter()
        .filter(|l| l.kind == LayerKind::Input)
        .map(|l| l.id.as_str())
        .collect();
    let mut out = Bindings::new();
    for spec in specs {
        let (id, dims) = match spec.split_once('=') {
            Some((id, dims)) => (id.to_string(), dims),
            None => match inputs.as_slice() {
                [only] => (only.to_string(), spec.as_str()),
                _ => {
                    return Err(CliError::Usage(format!(
                        "--input-shape {spec}: model has {} inputs, use ID=HxWxC",
                        inputs.len()
                    )))
                }
            },
        };
        if !inputs.contains(&id.as_str()) {
            return Err(CliError::Usage(format!("--input-shape: `{id}` is not an Input layer")));
        }
        let shape: TensorShape = dims
            .parse()
            .map_err(|e| CliError::Usage(format!("--input-shape: {e}")))?;
        out.insert(id, shape);
    }
    Ok(Some(out))
}

fn lint_errors(diags: Vec<Diagnostic>) -> CliError {
    let errors: Vec<Diagnostic> = diags.into_iter().filter(Diagnostic::is_error).collect();
    CliError::Rejected {
        stage: "lint",
        message: format!("{} error(s)", errors.len()),
        diagnostics: errors,
    }
}

fn codegen(model: &Model, target: CodegenTarget) -> Result<SourceArtifact, CliError> {
    emit(model, target).map_err(|e| match e {
        CodegenError::LintErrorsPresent(diags) => lint_errors(diags),
        other => rejected("codegen", other),
    })
}

/// What a command prints. A report whose findings fail the run carries
/// the failure message; it is still printed in full.
struct Output {
    text: String,
    json: Value,
    failure: Option<String>,
}

impl Output {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Output {
            text: text.into(),
            json,
            failure: None,
        }
    }

    fn failing(mut self, message: String) -> Self {
        self.failure = Some(message);
        self
    }
}

fn render_lines<T>(items: &[T], render: impl Fn(&T) -> String) -> String {
    items.iter().map(|i| render(i) + "\n").collect()
}

fn execute(cli: &Cli, notes: &mut Vec<String>) -> Result<Output, CliError> {
    match &cli.command {
        Command::Import { from, input, output } => {
            let report = import((*from).into(), &read(input)?).map_err(|e| input_error("import", e))?;
            notes.extend(report.notes.iter().cloned());
            let doc = serialize_ir(&report.model);
            let mut out = json!({ "notes": report.notes });
            match output {
                Some(path) => {
                    write_atomic(path, &doc)?;
                    out["output"] = json!(path.display().to_string());
                    Ok(Output::new("", out))
                }
                None => {
                    out["model"] = document_value(&report.model);
                    Ok(Output::new(doc, out))
                }
            }
        }
        Command::Validate { file, input_shape } => {
            let model = load_model(file)?;
            let bindings = parse_bindings(&model, input_shape)?;
            let analysis = lint_model(&model, bindings.as_ref());
            let text = render_lines(&analysis.diagnostics, Diagnostic::render);
            let out = Output::new(text, json!({ "diagnostics": diagnostics_json(&analysis.diagnostics) }));
            let errors = analysis.diagnostics.iter().filter(|d| d.is_error()).count();
            Ok(match errors {
                0 => out,
                n => out.failing(format!("validate: {n} error(s)")),
            })
        }
        Command::Shapes { file, input_shape } => {
            let model = load_model(file)?;
            let bindings = match parse_bindings(&model, input_shape)? {
                Some(b) => b,
                None => default_bindings(&model).map_err(|e| input_error("parse", e))?,
            };
            let shapes = infer_shapes(&model, &bindings).map_err(|e| rejected("shapes", e))?;
            let text: String = topo_order_lenient(&model)
                .iter()
                .filter_map(|id| shapes.get(id).map(|s| format!("{id}\t{s}\n")))
                .collect();
            Ok(Output::new(text, shapes_json(&shapes)))
        }
        Command::Codegen { file, target, output } => {
            let model = load_model(file)?;
            let artifact = codegen(&model, (*target).into())?;
            emit_artifact(&artifact, output.as_deref())
        }
        Command::Convert {
            from,
            to,
            input,
            output,
        } => {
            let report = import((*from).into(), &read(input)?).map_err(|e| input_error("import", e))?;
            notes.extend(report.notes);
            let artifact = codegen(&report.model, (*to).into())?;
            emit_artifact(&artifact, Some(output))
        }
        Command::Zoo {
            action: ZooAction::List,
        } => {
            let list = zoo_list();
            let text = render_lines(&list, |e| {
                format!("{}\t{}\t{} layers\t{}", e.name, e.input_shape, e.layers, e.description)
            });
            Ok(Output::new(text, json!(list)))
        }
        Command::Zoo {
            action: ZooAction::Export { name, output },
        } => {
            let entry = zoo_entries()
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| CliError::Usage(format!("no zoo model named `{name}`")))?;
            match output {
                Some(path) => {
                    write_atomic(path, entry.source)?;
                    Ok(Output::new("", json!({ "output": path.display().to_string() })))
                }
                None => Ok(Output::new(entry.source, document_value(&entry.model))),
            }
        }
        Command::LintTrace { file, format } => {
            let format = match format {
                Some(TraceFileFormat::Csv) => TraceFormat::Csv,
                Some(TraceFileFormat::Jsonl) => TraceFormat::JsonLines,
                None if file.extension().is_some_and(|e| e == "jsonl") => TraceFormat::JsonLines,
                None => TraceFormat::Csv,
            };
            let trace = parse_trace(&read(file)?, format).map_err(|e| input_error("parse", e))?;
            let findings = lint_trace(&trace, &DetectorConfig::default());
            let out = Output::new(render_lines(&findings, |f| f.render()), findings_json(&findings));
            if findings.iter().any(|f| f.severity == TraceSeverity::Fatal) {
                return Ok(out.failing("lint-trace: fatal fault detected".into()));
            }
            Ok(out)
        }
        Command::Serve { port, store } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| input_error("serve", e))?;
            runtime
                .block_on(darviz_service::serve(*port, store))
                .map_err(|e| input_error("serve", e))?;
            Ok(Output::new("", Value::Null))
        }
    }
}

fn emit_artifact(artifact: &SourceArtifact, output: Option<&Path>) -> Result<Output, CliError> {
    let json = artifact_json(artifact);
    match output {
        Some(path) => {
            write_atomic(path, &artifact.source)?;
            Ok(Output::new("", json))
        }
        None => Ok(Output::new(artifact.source.clone(), json)),
    }
}

fn print_output(json: bool, out: &Output) {
    let mut stdout = io::stdout().lock();
    let _ = if json {
        writeln!(stdout, "{}", out.json)
    } else {
        stdout.write_all(out.text.as_bytes())
    };
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut notes = Vec::new();
    let result = execute(&cli, &mut notes);
    if !cli.json {
        for note in &notes {
            eprintln!("note: {note}");
        }
    }
    match result {
        Ok(out) => {
            print_output(cli.json, &out);
            match &out.failure {
                Some(message) => {
                    if !cli.json {
                        eprintln!("darviz: {message}");
                    }
                    1
                }
                None => 0,
            }
        }
        Err(e) => {
            if cli.json {
                println!("{}", e.to_json());
            } else {
                if let CliError::Rejected { diagnostics, .. } = &e {
                    for d in diagnostics {
                        println!("{}", d.render());
                    }
                }
                eprintln!("darviz: {e}");
            }
            e.exit_code()
        }
    }
}
