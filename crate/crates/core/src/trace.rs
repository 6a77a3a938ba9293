//! Training-trace fault detection.
//!
//! [`TraceMonitor`] consumes one epoch at a time, so the same detector
//! works on a finished log ([`lint_trace`]) or on a live stream. Findings
//! for a prefix of a trace are always a prefix of the findings for the
//! whole trace.
//!
//! | rule | severity | finding |
//! |------|----------|---------|
//! | R1 | fatal | loss is NaN or infinite |
//! | R2 | fatal | loss exceeds `divergence_factor` times the best loss so far |
//! | R3 | warning | best loss improved by less than `plateau_epsilon` (relative) for `window` epochs |
//! | R4 | warning | val_loss rose while loss fell for `window` epochs |
//!
//! Monitoring stops after the first fatal finding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

impl EpochRecord {
    pub fn new(epoch: u32, loss: f64) -> Self {
        EpochRecord {
            epoch,
            loss,
            val_loss: None,
            accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    epochs: Vec<EpochRecord>,
}

impl TrainingTrace {
    /// Epoch numbers must be positive and strictly increasing.
    pub fn new(epochs: Vec<EpochRecord>) -> Result<Self, TraceError> {
        if epochs.is_empty() {
            return Err(TraceError::EmptyTrace);
        }
        let mut prev = 0;
        for (i, e) in epochs.iter().enumerate() {
            if e.epoch <= prev {
                return Err(TraceError::NonIncreasingEpoch {
                    index: i,
                    epoch: e.epoch,
                });
            }
            prev = e.epoch;
        }
        Ok(TrainingTrace { epochs })
    }

    /// Builds a trace numbering the losses 1, 2, 3, ...
    pub fn from_losses(losses: &[f64]) -> Result<Self, TraceError> {
        Self::new(
            losses
                .iter()
                .enumerate()
                .map(|(i, &l)| EpochRecord::new(i as u32 + 1, l))
                .collect(),
        )
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// The first `n` epochs (at least one).
    pub fn prefix(&self, n: usize) -> TrainingTrace {
        TrainingTrace {
            epochs: self.epochs[..n.clamp(1, self.epochs.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("trace has no epochs")]
    EmptyTrace,
    #[error("epoch {epoch} at row {index} does not increase")]
    NonIncreasingEpoch { index: usize, epoch: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    JsonLines,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "jsonl" | "jsonlines" | "json-lines" => Ok(TraceFormat::JsonLines),
            other => Err(format!("unknown trace format `{other}` (expected csv or jsonl)")),
        }
    }
}

const COLUMNS: [&str; 4] = ["epoch", "loss", "val_loss", "accuracy"];

/// Parses a real number; `nan`, `inf` and `-inf` (any case) included.
fn parse_real(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok()
}

#[derive(Default)]
struct RowFields {
    epoch: Option<u32>,
    loss: Option<f64>,
    val_loss: Option<f64>,
    accuracy: Option<f64>,
}

fn finish_row(fields: RowFields, line: u64, index: usize) -> Result<EpochRecord, TraceError> {
    let malformed = |reason: &str| TraceError::MalformedRow {
        line,
        reason: reason.to_string(),
    };
    let loss = fields.loss.ok_or_else(|| malformed("missing loss"))?;
    if let Some(acc) = fields.accuracy {
        if !(0.0..=1.0).contains(&acc) {
            return Err(malformed("accuracy outside [0, 1]"));
        }
    }
    Ok(EpochRecord {
        epoch: fields.epoch.unwrap_or(index as u32 + 1),
        loss,
        val_loss: fields.val_loss,
        accuracy: fields.accuracy,
    })
}

fn set_field(fields: &mut RowFields, column: &str, token: &str) -> Result<(), String> {
    let token = token.trim();
    let optional = column != "loss" && column != "epoch";
    if token.is_empty() && optional {
        return Ok(());
    }
    match column {
        "epoch" => {
            fields.epoch = Some(token.parse().map_err(|_| format!("bad epoch `{token}`"))?);
        }
        _ => {
            let v = parse_real(token).ok_or_else(|| format!("bad {column} `{token}`"))?;
            match column {
                "loss" => fields.loss = Some(v),
                "val_loss" => fields.val_loss = Some(v),
                _ => fields.accuracy = Some(v),
            }
        }
    }
    Ok(())
}

fn checked(records: Vec<(u64, EpochRecord)>) -> Result<TrainingTrace, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut prev = 0;
    for (line, r) in &records {
        if r.epoch <= prev {
            return Err(TraceError::MalformedRow {
                line: *line,
                reason: format!("epoch {} does not increase", r.epoch),
            });
        }
        prev = r.epoch;
    }
    TrainingTrace::new(records.into_iter().map(|(_, r)| r).collect())
}

fn parse_csv(text: &str) -> Result<TrainingTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TraceError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let columns: Vec<String> = headers.iter().map(str::to_string).collect();
    for c in &columns {
        if !COLUMNS.contains(&c.as_str()) {
            return Err(TraceError::UnknownColumn(c.clone()));
        }
    }
    if !columns.iter().any(|c| c == "loss") {
        return Err(TraceError::MissingColumn("loss".into()));
    }
    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| TraceError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mut fields = RowFields::default();
        for (column, token) in columns.iter().zip(row.iter()) {
            set_field(&mut fields, column, token).map_err(|reason| TraceError::MalformedRow { line, reason })?;
        }
        records.push((line, finish_row(fields, line, index)?));
    }
    checked(records)
}

fn parse_jsonl(text: &str) -> Result<TrainingTrace, TraceError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| TraceError::MalformedRow { line, reason };
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        let mut fields = RowFields::default();
        for (key, v) in obj {
            if !COLUMNS.contains(&key.as_str()) {
                return Err(TraceError::UnknownColumn(key.clone()));
            }
            let token = match v {
                serde_json::Value::Null => String::new(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::String(s) => s.clone(),
                other => return Err(malformed(format!("bad {key} `{other}`"))),
            };
            set_field(&mut fields, key, &token).map_err(malformed)?;
        }
        if fields.loss.is_none() && !obj.contains_key("loss") {
            return Err(TraceError::MissingColumn("loss".into()));
        }
        let index = records.len();
        records.push((line, finish_row(fields, line, index)?));
    }
    checked(records)
}

/// Parses a metric log. CSV is header-driven; JSON-lines holds one object
/// per epoch. Columns: `epoch`, `loss` (required), `val_loss`, `accuracy`.
pub fn parse_trace(text: &str, format: TraceFormat) -> Result<TrainingTrace, TraceError> {
    if text.trim().is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    match format {
        TraceFormat::Csv => parse_csv(text),
        TraceFormat::JsonLines => parse_jsonl(text),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraceRule {
    R1,
    R2,
    R3,
    R4,
}

impl fmt::Display for TraceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSeverity {
    Fatal,
    Warning,
}

impl fmt::Display for TraceSeverity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceSeverity::Fatal => "fatal",
            TraceSeverity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceFinding {
    pub rule: TraceRule,
    pub epoch: u32,
    pub severity: TraceSeverity,
    pub message: String,
}

impl TraceFinding {
    /// `RULE severity epoch message`, matching the design-lint rendering.
    pub fn render(&self) -> String {
        format!("{} {} epoch={} {}", self.rule, self.severity, self.epoch, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub divergence_factor: f64,
    pub plateau_epsilon: f64,
    pub window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            divergence_factor: 10.0,
            plateau_epsilon: 1e-3,
            window: 5,
        }
    }
}

/// Online detector state.
#[derive(Debug, Clone)]
pub struct TraceMonitor {
    config: DetectorConfig,
    halted: bool,
    best: Option<f64>,
    prev: Option<EpochRecord>,
    plateau_streak: usize,
    plateau_reported: bool,
    gap_streak: usize,
    gap_reported: bool,
}

impl TraceMonitor {
    pub fn new(config: DetectorConfig) -> Self {
        TraceMonitor {
            config,
            halted: false,
            best: None,
            prev: None,
            plateau_streak: 0,
            plateau_reported: false,
            gap_streak: 0,
            gap_reported: false,
        }
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    /// Feeds one epoch and returns the findings it triggers, in rule order.
    pub fn observe(&mut self, record: &EpochRecord) -> Vec<TraceFinding> {
        let mut out = Vec::new();
        if self.halted {
            return out;
        }
        let t = record.epoch;
        let finding = |rule, severity, message: String| TraceFinding {
            rule,
            epoch: t,
            severity,
            message,
        };

        if !record.loss.is_finite() {
            out.push(finding(
                TraceRule::R1,
                TraceSeverity::Fatal,
                format!("loss is {}", record.loss),
            ));
            self.halted = true;
            return out;
        }

        let prev_best = self.best;
        let best = prev_best.map_or(record.loss, |b| b.min(record.loss));
        self.best = Some(best);
        let c = self.config.divergence_factor;
        if best > 0.0 && record.loss > c * best {
            out.push(finding(
                TraceRule::R2,
                TraceSeverity::Fatal,
                format!("loss {} exceeds {c} x best loss {best}", record.loss),
            ));
            self.halted = true;
            return out;
        }

        let window = self.config.window.max(1);
        if let Some(prev_best) = prev_best {
            let improvement = if prev_best == 0.0 {
                0.0
            } else {
                (prev_best - best) / prev_best.abs()
            };
            // the slack absorbs rounding when the decay rate equals epsilon exactly
            if improvement < self.config.plateau_epsilon * (1.0 - 1e-9) {
                self.plateau_streak += 1;
            } else {
                self.plateau_streak = 0;
                self.plateau_reported = false;
            }
            if self.plateau_streak >= window && !self.plateau_reported {
                self.plateau_reported = true;
                out.push(finding(
                    TraceRule::R3,
                    TraceSeverity::Warning,
                    format!(
                        "best loss improved by less than {} for {window} epochs",
                        self.config.plateau_epsilon
                    ),
                ));
            }
        }

        if let Some(prev) = &self.prev {
            let widening = match (prev.val_loss, record.val_loss) {
                (Some(pv), Some(v)) => v > pv && record.loss < prev.loss,
                _ => false,
            };
            if widening {
                self.gap_streak += 1;
            } else {
                self.gap_streak = 0;
                self.gap_reported = false;
            }
            if self.gap_streak >= window && !self.gap_reported {
                self.gap_reported = true;
                out.push(finding(
                    TraceRule::R4,
                    TraceSeverity::Warning,
                    format!("val_loss rising while loss falls for {window} epochs"),
                ));
            }
        }
        self.prev = Some(*record);
        out
    }
}

/// Runs the detector over a whole trace. Findings are ordered by epoch,
/// then rule.
pub fn lint_trace(trace: &TrainingTrace, config: &DetectorConfig) -> Vec<TraceFinding> {
    let mut monitor = TraceMonitor::new(*config);
    trace.epochs().iter().flat_map(|e| monitor.observe(e)).collect()
}
