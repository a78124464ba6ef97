//! Run orchestration: dispatch one isolated completion per persona with
//! bounded concurrency, journal every outcome to an append-only NDJSON
//! ledger, and assemble the analysis dataset from the ledger.
//!
//! The ledger is the source of truth. Replaying it (last record wins per
//! `(run_id, persona_id)`) reconstructs run state exactly, so interrupted
//! runs resume without re-querying completed personas.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{
    submit_completion, CompletionProvider, CompletionRequest, ProviderConfig, RequestContext,
};
use crate::persona::{build_prompt, Persona, PersonaError};
use crate::stats::{welch_t_test, StatError, TestOutcome};
use crate::study::{Condition, Measure, ResponseType, StudySpec};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("ledger i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ledger line {line} is not a valid record: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error("persona {persona} assigned to unknown condition {condition:?}")]
    UnknownCondition { persona: u32, condition: String },
    #[error("no usable rows for measure {0:?}")]
    NoRows(String),
    #[error("condition cell {0:?} has no usable rows")]
    EmptyCell(String),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("study has no manipulation check")]
    NoManipulationCheck,
}

/// A parsed answer value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl AnswerValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AnswerValue::Int(i) => Some(*i as f64),
            AnswerValue::Real(v) => Some(*v),
            AnswerValue::Text(_) => None,
        }
    }
}

impl std::fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnswerValue::Int(i) => write!(f, "{i}"),
            AnswerValue::Real(v) => write!(f, "{v}"),
            AnswerValue::Text(s) => write!(f, "{s}"),
        }
    }
}

/// One measure's answer as extracted from raw completion text. `valid`
/// is false when the line is missing, unparseable, or out of range.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParsedAnswer {
    pub measure_id: String,
    pub raw: Option<String>,
    pub value: Option<AnswerValue>,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pending,
    Done,
    Failed { kind: String },
}

/// One journal entry: everything needed to replay a persona's outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub persona_id: u32,
    pub condition_id: String,
    /// Persona attributes as strings, for dataset reconstruction.
    pub attributes: BTreeMap<String, String>,
    /// SHA-256 hex of the full prompt text.
    pub prompt_hash: String,
    pub raw_response: Option<String>,
    pub parsed: Vec<ParsedAnswer>,
    pub status: RecordStatus,
    /// Prompt attempts made (1, or 2 after a re-prompt on invalid parse).
    pub attempt_count: u32,
    pub updated_ms: u64,
}

/// Append-only NDJSON journal. Opening loads existing records with
/// last-record-wins semantics per `(run_id, persona_id)`.
#[derive(Debug)]
pub struct RunLedger {
    path: PathBuf,
    writer: File,
    records: BTreeMap<(String, u32), RunRecord>,
}

impl RunLedger {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|source| OrchestratorError::Io {
                path: path.clone(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| OrchestratorError::Io {
                    path: path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: RunRecord =
                    serde_json::from_str(&line).map_err(|e| OrchestratorError::Corrupt {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                records.insert((record.run_id.clone(), record.persona_id), record);
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| OrchestratorError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(RunLedger {
            path,
            writer,
            records,
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<(), OrchestratorError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.writer, "{line}").map_err(|source| OrchestratorError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.writer.flush().map_err(|source| OrchestratorError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.records
            .insert((record.run_id.clone(), record.persona_id), record.clone());
        Ok(())
    }

    pub fn get(&self, run_id: &str, persona_id: u32) -> Option<&RunRecord> {
        self.records.get(&(run_id.to_string(), persona_id))
    }

    /// All current records for a run, in persona order.
    pub fn records_for(&self, run_id: &str) -> Vec<&RunRecord> {
        self.records
            .iter()
            .filter(|((r, _), _)| r == run_id)
            .map(|(_, rec)| rec)
            .collect()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn prompt_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of one dispatch pass.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub skipped_done: usize,
    pub requests_sent: usize,
}

/// Dispatch one isolated request per persona with at most
/// `config.max_parallel` in flight, journaling each outcome. Personas whose
/// record is already `Done` in the ledger are skipped, which makes resuming
/// an interrupted run a plain re-invocation. Per-persona failures are
/// recorded, not fatal. A persona whose first response parses invalid for
/// any measure is re-prompted exactly once.
pub fn execute_run(
    study: &StudySpec,
    personas: &[Persona],
    provider: &dyn CompletionProvider,
    config: &ProviderConfig,
    ledger: &mut RunLedger,
    run_id: &str,
) -> Result<RunSummary, OrchestratorError> {
    let conditions: BTreeMap<&str, &Condition> = study
        .conditions
        .iter()
        .map(|c| (c.condition_id.as_str(), c))
        .collect();

    // Pre-build every prompt up front so blinding or assignment errors
    // abort before any request is sent.
    struct Job {
        persona_index: usize,
        request: CompletionRequest,
        retry_request: CompletionRequest,
    }
    let mut jobs: Vec<Job> = Vec::new();
    let mut skipped_done = 0usize;
    for (idx, persona) in personas.iter().enumerate() {
        if matches!(
            ledger.get(run_id, persona.persona_id).map(|r| &r.status),
            Some(RecordStatus::Done)
        ) {
            skipped_done += 1;
            continue;
        }
        let condition_id = persona
            .condition_id
            .as_deref()
            .ok_or(PersonaError::Unassigned(persona.persona_id))?;
        let condition =
            *conditions
                .get(condition_id)
                .ok_or_else(|| OrchestratorError::UnknownCondition {
                    persona: persona.persona_id,
                    condition: condition_id.to_string(),
                })?;
        let prompt = build_prompt(persona, condition, &study.measures, study)?;
        let context = RequestContext {
            condition_levels: condition.level_assignment.clone(),
            persona_attributes: persona
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect(),
            measures: study.measures.clone(),
        };
        let base_id = format!("{run_id}:p{}", persona.persona_id);
        jobs.push(Job {
            persona_index: idx,
            request: CompletionRequest {
                request_id: base_id.clone(),
                prompt: prompt.clone(),
                context: context.clone(),
            },
            retry_request: CompletionRequest {
                request_id: format!("{base_id}:r1"),
                prompt,
                context,
            },
        });
    }

    enum WorkOutcome {
        Answered {
            raw: String,
            parsed: Vec<ParsedAnswer>,
            attempts: u32,
            requests: usize,
        },
        Failed {
            kind: String,
            attempts: u32,
            requests: usize,
        },
    }

    let next_job = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, WorkOutcome)>();
    let workers = config.max_parallel.max(1).min(jobs.len().max(1));
    let measures = &study.measures;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let jobs = &jobs;
            let next_job = &next_job;
            scope.spawn(move || loop {
                let i = next_job.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let mut requests = 0usize;
                let outcome = match {
                    requests += 1;
                    submit_completion(&job.request, provider, config)
                } {
                    Ok(raw) => {
                        let parsed = parse_answers(&raw, measures);
                        if parsed.iter().all(|a| a.valid) {
                            WorkOutcome::Answered {
                                raw,
                                parsed,
                                attempts: 1,
                                requests,
                            }
                        } else {
                            requests += 1;
                            match submit_completion(&job.retry_request, provider, config) {
                                Ok(raw2) => {
                                    let parsed2 = parse_answers(&raw2, measures);
                                    // keep the better of the two parses
                                    let (raw, parsed) = if parsed2.iter().filter(|a| a.valid).count()
                                        >= parsed.iter().filter(|a| a.valid).count()
                                    {
                                        (raw2, parsed2)
                                    } else {
                                        (raw, parsed)
                                    };
                                    WorkOutcome::Answered {
                                        raw,
                                        parsed,
                                        attempts: 2,
                                        requests,
                                    }
                                }
                                Err(e) => WorkOutcome::Failed {
                                    kind: error_kind(&e),
                                    attempts: 2,
                                    requests,
                                },
                            }
                        }
                    }
                    Err(e) => WorkOutcome::Failed {
                        kind: error_kind(&e),
                        attempts: 1,
                        requests,
                    },
                };
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // single writer: the scope owner is the only thread touching the file
        let mut completed = 0usize;
        let mut failed = 0usize;
        let mut requests_sent = 0usize;
        for (i, outcome) in rx {
            let job = &jobs[i];
            let persona = &personas[job.persona_index];
            let hash = prompt_hash(&job.request.prompt.full_text());
            let attributes: BTreeMap<String, String> = persona
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect();
            let record = match outcome {
                WorkOutcome::Answered {
                    raw,
                    parsed,
                    attempts,
                    requests,
                } => {
                    requests_sent += requests;
                    completed += 1;
                    RunRecord {
                        run_id: run_id.to_string(),
                        persona_id: persona.persona_id,
                        condition_id: persona.condition_id.clone().unwrap_or_default(),
                        attributes,
                        prompt_hash: hash,
                        raw_response: Some(raw),
                        parsed,
                        status: RecordStatus::Done,
                        attempt_count: attempts,
                        updated_ms: now_ms(),
                    }
                }
                WorkOutcome::Failed {
                    kind,
                    attempts,
                    requests,
                } => {
                    requests_sent += requests;
                    failed += 1;
                    RunRecord {
                        run_id: run_id.to_string(),
                        persona_id: persona.persona_id,
                        condition_id: persona.condition_id.clone().unwrap_or_default(),
                        attributes,
                        prompt_hash: hash,
                        raw_response: None,
                        parsed: vec![],
                        status: RecordStatus::Failed { kind },
                        attempt_count: attempts,
                        updated_ms: now_ms(),
                    }
                }
            };
            ledger.append(&record)?;
        }

        Ok(RunSummary {
            run_id: run_id.to_string(),
            total: personas.len(),
            completed,
            failed,
            skipped_done,
            requests_sent,
        })
    })
}

fn error_kind(e: &crate::gateway::GatewayError) -> String {
    use crate::gateway::GatewayError as G;
    match e {
        G::Transport { .. } => "transport".to_string(),
        G::Auth(_) => "auth".to_string(),
        G::ProviderRefusal(_) => "refusal".to_string(),
        G::ImageUnsupported(_) => "image_unsupported".to_string(),
        G::ModelCoverage(_) => "model_coverage".to_string(),
        G::Config(_) => "config".to_string(),
    }
}

/// Extract one answer per measure from raw completion text. Measures are
/// matched to lines of the form `Q{i}: value` (1-based, in measure order).
/// Currency symbols and thousands separators are stripped from numeric
/// answers; anything missing, unparseable, or out of range is invalid.
pub fn parse_answers(raw: &str, measures: &[Measure]) -> Vec<ParsedAnswer> {
    let mut by_index: BTreeMap<usize, String> = BTreeMap::new();
    for line in raw.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('Q').or_else(|| line.strip_prefix('q')) else {
            continue;
        };
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let after = &rest[digits.len()..];
        let Some(body) = after.trim_start().strip_prefix(':') else {
            continue;
        };
        if let Ok(idx) = digits.parse::<usize>() {
            // first occurrence wins
            by_index.entry(idx).or_insert_with(|| body.trim().to_string());
        }
    }

    measures
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let raw_answer = by_index.get(&(i + 1)).cloned();
            let (value, valid) = match &raw_answer {
                None => (None, false),
                Some(text) => interpret_answer(text, &m.response_type),
            };
            ParsedAnswer {
                measure_id: m.measure_id.clone(),
                raw: raw_answer,
                value,
                valid,
            }
        })
        .collect()
}

fn clean_numeric(text: &str) -> String {
    text.chars()
        .filter(|c| !matches!(c, '$' | '€' | '£' | ',' | ' '))
        .collect()
}

fn interpret_answer(text: &str, response_type: &ResponseType) -> (Option<AnswerValue>, bool) {
    match response_type {
        ResponseType::Likert { min, max, .. } => match clean_numeric(text).parse::<i64>() {
            Ok(v) => {
                let in_range = v >= *min && v <= *max;
                (Some(AnswerValue::Int(v)), in_range)
            }
            Err(_) => (None, false),
        },
        ResponseType::NumericOpen { min, max, .. } => match clean_numeric(text).parse::<f64>() {
            Ok(v) if v.is_finite() => {
                let in_range =
                    min.map_or(true, |lo| v >= lo) && max.map_or(true, |hi| v <= hi);
                (Some(AnswerValue::Real(v)), in_range)
            }
            _ => (None, false),
        },
        ResponseType::Choice { options } => match clean_numeric(text).parse::<i64>() {
            Ok(v) => {
                let in_range = v >= 1 && v <= options.len() as i64;
                (Some(AnswerValue::Int(v)), in_range)
            }
            Err(_) => (None, false),
        },
        ResponseType::FreeText => {
            if text.trim().is_empty() {
                (None, false)
            } else {
                (Some(AnswerValue::Text(text.trim().to_string())), true)
            }
        }
    }
}

/// One usable dataset row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetRow {
    pub persona_id: u32,
    pub attributes: BTreeMap<String, String>,
    pub condition_id: String,
    pub answers: BTreeMap<String, AnswerValue>,
}

/// The analysis-ready dataset: one row per persona with a usable response
/// set, plus the ids of excluded personas.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisDataset {
    pub rows: Vec<DatasetRow>,
    /// Personas dropped: failed requests or any invalid answer on a measure
    /// the analysis plan (or manipulation check) depends on.
    pub excluded: Vec<u32>,
}

impl AnalysisDataset {
    /// Numeric values of `measure_id` for rows matching `filter`, listwise
    /// on that measure only.
    pub fn numeric_column<F: Fn(&DatasetRow) -> bool>(
        &self,
        measure_id: &str,
        filter: F,
    ) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| filter(r))
            .filter_map(|r| r.answers.get(measure_id).and_then(|v| v.as_f64()))
            .collect()
    }

    /// CSV export: `persona_id,<attributes...>,condition,<measure ids...>`.
    /// Attribute columns are in lexical order; measure columns follow the
    /// study's declaration order.
    pub fn to_csv(&self, study: &StudySpec) -> String {
        let attr_names: Vec<&str> = study
            .sample
            .attributes
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        let mut attr_names: Vec<&str> = attr_names;
        attr_names.sort();
        let mut out = String::from("persona_id");
        for a in &attr_names {
            out.push(',');
            out.push_str(a);
        }
        out.push_str(",condition");
        for m in &study.measures {
            out.push(',');
            out.push_str(&m.measure_id);
        }
        out.push('\n');
        let mut rows: Vec<&DatasetRow> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.persona_id);
        for row in rows {
            out.push_str(&row.persona_id.to_string());
            for a in &attr_names {
                out.push(',');
                out.push_str(&csv_field(
                    &row.attributes.get(*a).cloned().unwrap_or_default(),
                ));
            }
            out.push(',');
            out.push_str(&csv_field(&row.condition_id));
            for m in &study.measures {
                out.push(',');
                if let Some(v) = row.answers.get(&m.measure_id) {
                    out.push_str(&csv_field(&v.to_string()));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Build the analysis dataset from a run's ledger records. A persona is
/// excluded when its request failed or any answer on a plan-relevant
/// measure is invalid.
pub fn build_dataset(study: &StudySpec, records: &[&RunRecord]) -> AnalysisDataset {
    let mut relevant: Vec<&str> = study.analysis_plan.iter().map(|p| p.dv.as_str()).collect();
    if let Some(check) = &study.manipulation_check {
        relevant.push(check.measure_id.as_str());
    }
    if relevant.is_empty() {
        relevant = study.measures.iter().map(|m| m.measure_id.as_str()).collect();
    }

    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut sorted: Vec<&&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.persona_id);
    for record in sorted {
        if !matches!(record.status, RecordStatus::Done) {
            excluded.push(record.persona_id);
            continue;
        }
        let bad_relevant = relevant.iter().any(|id| {
            record
                .parsed
                .iter()
                .find(|a| a.measure_id == *id)
                .map_or(true, |a| !a.valid)
        });
        if bad_relevant {
            excluded.push(record.persona_id);
            continue;
        }
        let answers: BTreeMap<String, AnswerValue> = record
            .parsed
            .iter()
            .filter(|a| a.valid)
            .filter_map(|a| a.value.clone().map(|v| (a.measure_id.clone(), v)))
            .collect();
        rows.push(DatasetRow {
            persona_id: record.persona_id,
            attributes: record.attributes.clone(),
            condition_id: record.condition_id.clone(),
            answers,
        });
    }
    AnalysisDataset { rows, excluded }
}

/// Manipulation-check result: a Welch test on the check measure across the
/// expected contrast. Passes when p <= alpha and the observed direction
/// matches the expected one.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManipulationOutcome {
    pub checked: bool,
    pub passed: bool,
    pub p: Option<f64>,
    pub direction_sign: i8,
}

impl ManipulationOutcome {
    pub fn not_applicable() -> Self {
        ManipulationOutcome {
            checked: false,
            passed: true,
            p: None,
            direction_sign: 0,
        }
    }
}

/// Levels of `factor` for a condition id within the study.
fn level_of<'a>(study: &'a StudySpec, condition_id: &str, factor: &str) -> Option<&'a str> {
    study
        .conditions
        .iter()
        .find(|c| c.condition_id == condition_id)
        .and_then(|c| c.level_assignment.get(factor))
        .map(|s| s.as_str())
}

/// Run the study's manipulation check against the dataset.
pub fn apply_manipulation_check(
    study: &StudySpec,
    dataset: &AnalysisDataset,
) -> Result<ManipulationOutcome, OrchestratorError> {
    let Some(check) = &study.manipulation_check else {
        return Ok(ManipulationOutcome::not_applicable());
    };
    let contrast = &check.expected_direction;
    let high = dataset.numeric_column(&check.measure_id, |r| {
        level_of(study, &r.condition_id, &contrast.factor) == Some(contrast.high_level.as_str())
    });
    let low = dataset.numeric_column(&check.measure_id, |r| {
        level_of(study, &r.condition_id, &contrast.factor) == Some(contrast.low_level.as_str())
    });
    if high.is_empty() || low.is_empty() {
        return Err(OrchestratorError::EmptyCell(format!(
            "manipulation check on {:?}",
            check.measure_id
        )));
    }
    match welch_t_test(&high, &low)? {
        TestOutcome::Computed(result) => Ok(ManipulationOutcome {
            checked: true,
            passed: result.p <= check.alpha && result.direction_sign == 1,
            p: Some(result.p),
            direction_sign: result.direction_sign,
        }),
        TestOutcome::InsufficientVariance(iv) => Ok(ManipulationOutcome {
            checked: true,
            // a constant separation in the expected direction still
            // demonstrates the manipulation registered
            passed: iv.mean_difference_sign == 1,
            p: None,
            direction_sign: iv.mean_difference_sign,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::parse_study_spec;

    fn likert(id: &str) -> Measure {
        Measure {
            measure_id: id.to_string(),
            prompt_text: "How so?".into(),
            response_type: ResponseType::Likert {
                min: 1,
                max: 7,
                low_anchor: "low".into(),
                high_anchor: "high".into(),
            },
        }
    }

    fn wtp(id: &str) -> Measure {
        Measure {
            measure_id: id.to_string(),
            prompt_text: "How much would you pay?".into(),
            response_type: ResponseType::NumericOpen {
                units: "dollars".into(),
                min: Some(0.0),
                max: None,
            },
        }
    }

    #[test]
    fn parses_well_formed_answers() {
        let measures = vec![likert("m1"), wtp("m2")];
        let parsed = parse_answers("Q1: 5\nQ2: $1,250.50", &measures);
        assert!(parsed.iter().all(|a| a.valid));
        assert_eq!(parsed[0].value, Some(AnswerValue::Int(5)));
        assert_eq!(parsed[1].value, Some(AnswerValue::Real(1250.5)));
    }

    #[test]
    fn missing_and_out_of_range_are_invalid() {
        let measures = vec![likert("m1"), wtp("m2")];
        let parsed = parse_answers("Q1: 9", &measures);
        assert!(!parsed[0].valid); // out of 1..=7
        assert_eq!(parsed[0].value, Some(AnswerValue::Int(9)));
        assert!(!parsed[1].valid); // missing
        assert_eq!(parsed[1].value, None);
    }

    #[test]
    fn prose_around_answers_is_tolerated() {
        let measures = vec![likert("m1")];
        let parsed = parse_answers(
            "Sure, here are my answers.\n\nQ1: 6\n\nThanks for asking!",
            &measures,
        );
        assert!(parsed[0].valid);
        assert_eq!(parsed[0].value, Some(AnswerValue::Int(6)));
    }

    #[test]
    fn first_occurrence_wins_on_duplicates() {
        let measures = vec![likert("m1")];
        let parsed = parse_answers("Q1: 3\nQ1: 7", &measures);
        assert_eq!(parsed[0].value, Some(AnswerValue::Int(3)));
    }

    fn record(run_id: &str, persona_id: u32, status: RecordStatus) -> RunRecord {
        RunRecord {
            run_id: run_id.into(),
            persona_id,
            condition_id: "A".into(),
            attributes: BTreeMap::new(),
            prompt_hash: "00".into(),
            raw_response: Some("Q1: 4".into()),
            parsed: vec![ParsedAnswer {
                measure_id: "m1".into(),
                raw: Some("4".into()),
                value: Some(AnswerValue::Int(4)),
                valid: true,
            }],
            status,
            attempt_count: 1,
            updated_ms: 0,
        }
    }

    #[test]
    fn ledger_round_trip_and_last_record_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        {
            let mut ledger = RunLedger::open(&path).unwrap();
            ledger.append(&record("r", 0, RecordStatus::Pending)).unwrap();
            ledger.append(&record("r", 1, RecordStatus::Done)).unwrap();
            ledger.append(&record("r", 0, RecordStatus::Done)).unwrap();
        }
        let ledger = RunLedger::open(&path).unwrap();
        assert_eq!(ledger.records_for("r").len(), 2);
        assert!(matches!(
            ledger.get("r", 0).unwrap().status,
            RecordStatus::Done
        ));
    }

    #[test]
    fn corrupt_ledger_line_is_reported_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        std::fs::write(&path, "not json\n").unwrap();
        match RunLedger::open(&path) {
            Err(OrchestratorError::Corrupt { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected corrupt-line error, got {other:?}"),
        }
    }

    fn two_condition_study() -> StudySpec {
        parse_study_spec(
            &serde_json::json!({
                "study_id": "s",
                "factors": [{"name": "packaging", "levels": ["complex", "simple"]}],
                "conditions": [
                    {"condition_id": "A", "level_assignment": {"packaging": "complex"}, "stimuli": []},
                    {"condition_id": "B", "level_assignment": {"packaging": "simple"}, "stimuli": []}
                ],
                "measures": [{
                    "measure_id": "m1",
                    "prompt_text": "How premium does this seem?",
                    "response_type": {"likert": {"min": 1, "max": 7, "low_anchor": "not at all", "high_anchor": "very"}}
                }],
                "sample": {"attributes": [], "description_template": "an adult consumer"},
                "n": 8,
                "analysis_plan": [{
                    "finding_id": "f1",
                    "dv": "m1",
                    "effect_kind": {"main": {"factor": "packaging"}},
                    "test": "welch_t",
                    "direction_convention": {"factor": "packaging", "high_level": "complex", "low_level": "simple"},
                    "original": {"human_p": "<0.001", "direction_sign": 1}
                }],
                "manipulation_check": {
                    "measure_id": "m1",
                    "expected_direction": {"factor": "packaging", "high_level": "complex", "low_level": "simple"}
                }
            })
            .to_string(),
        )
        .unwrap()
    }

    fn dataset_from_values(values: &[(&str, i64)]) -> AnalysisDataset {
        AnalysisDataset {
            rows: values
                .iter()
                .enumerate()
                .map(|(i, (cond, v))| DatasetRow {
                    persona_id: i as u32,
                    attributes: BTreeMap::new(),
                    condition_id: cond.to_string(),
                    answers: [("m1".to_string(), AnswerValue::Int(*v))].into(),
                })
                .collect(),
            excluded: vec![],
        }
    }

    #[test]
    fn manipulation_check_passes_in_expected_direction() {
        let study = two_condition_study();
        let dataset = dataset_from_values(&[
            ("A", 6),
            ("A", 7),
            ("A", 6),
            ("A", 5),
            ("B", 2),
            ("B", 3),
            ("B", 2),
            ("B", 1),
        ]);
        let outcome = apply_manipulation_check(&study, &dataset).unwrap();
        assert!(outcome.checked);
        assert!(outcome.passed);
        assert!(outcome.p.unwrap() < 0.05);
    }

    #[test]
    fn manipulation_check_fails_when_reversed() {
        let study = two_condition_study();
        let dataset = dataset_from_values(&[
            ("A", 2),
            ("A", 1),
            ("A", 2),
            ("A", 3),
            ("B", 6),
            ("B", 7),
            ("B", 6),
            ("B", 5),
        ]);
        let outcome = apply_manipulation_check(&study, &dataset).unwrap();
        assert!(outcome.checked);
        assert!(!outcome.passed);
    }

    #[test]
    fn build_dataset_excludes_invalid_and_failed() {
        let study = two_condition_study();
        let good = record("r", 0, RecordStatus::Done);
        let failed = record("r", 1, RecordStatus::Failed { kind: "refusal".into() });
        let mut invalid = record("r", 2, RecordStatus::Done);
        invalid.parsed[0].valid = false;
        let records = vec![&good, &failed, &invalid];
        let dataset = build_dataset(&study, &records);
        assert_eq!(dataset.rows.len(), 1);
        assert_eq!(dataset.excluded, vec![1, 2]);
    }

    #[test]
    fn csv_export_shape() {
        let study = two_condition_study();
        let dataset = dataset_from_values(&[("A", 5), ("B", 3)]);
        let csv = dataset.to_csv(&study);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "persona_id,condition,m1");
        assert_eq!(lines.next().unwrap(), "0,A,5");
        assert_eq!(lines.next().unwrap(), "1,B,3");
    }

    #[test]
    fn execute_run_resumes_without_reissuing_done_work() {
        use crate::gateway::{SimulatedProvider, SimulatedRespondentModel};
        use crate::persona::{assign_conditions, sample_personas};

        let study = two_condition_study();
        let personas = assign_conditions(
            sample_personas(&study.sample, study.n, 11).unwrap(),
            &study.conditions,
            13,
        );
        let model = SimulatedRespondentModel {
            base_means: [("m1".to_string(), 4.0)].into(),
            condition_offsets: [(
                "m1".to_string(),
                [
                    ("packaging=complex".to_string(), 1.0),
                    ("packaging=simple".to_string(), -1.0),
                ]
                .into(),
            )]
            .into(),
            attribute_modifiers: Default::default(),
            persona_noise_sd: 0.5,
            residual_noise_sd: 0.5,
        };
        let provider = SimulatedProvider { model, seed: 3 };
        let config = ProviderConfig::default();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndjson");
        let mut ledger = RunLedger::open(&path).unwrap();
        let summary = execute_run(&study, &personas, &provider, &config, &mut ledger, "r1").unwrap();
        assert_eq!(summary.completed, 8);
        assert_eq!(summary.failed, 0);

        // a second pass issues zero new requests
        let mut ledger = RunLedger::open(&path).unwrap();
        let again = execute_run(&study, &personas, &provider, &config, &mut ledger, "r1").unwrap();
        assert_eq!(again.skipped_done, 8);
        assert_eq!(again.requests_sent, 0);
    }
}
