//! Parsing of benchmark findings tables (CSV).
//!
//! Expected header:
//! `paper_id,study_id,n,human_p,ai_p,finding_label,effect_kind,recorded_outcome,note`
//! The p columns accept decimals or censored strings like `<0.001`; `note`
//! is empty, `NA*`, or `NA**`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::study::{PValueEntry, TableNote};

#[derive(Debug, Error)]
pub enum FindingsError {
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MainOrInteraction {
    Main,
    Interaction,
}

/// One row of a findings table: identifiers, the original and replication
/// p-values, and the recorded verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FindingRecord {
    pub paper_id: String,
    pub study_id: String,
    pub n: u32,
    pub human_p: PValueEntry,
    /// Absent when the replication produced no p-value (see `note`).
    pub ai_p: Option<PValueEntry>,
    pub finding_label: String,
    pub effect_kind: MainOrInteraction,
    pub recorded_outcome: Option<bool>,
    pub note: Option<TableNote>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    paper_id: String,
    study_id: String,
    n: u32,
    human_p: String,
    ai_p: String,
    finding_label: String,
    effect_kind: String,
    recorded_outcome: String,
    note: String,
}

/// Parse a findings table. `effect_kind` falls back to inference from the
/// finding label ("Interaction" prefix) when the column is blank.
pub fn parse_findings_table(document: &str) -> Result<Vec<FindingRecord>, FindingsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(document.as_bytes());
    let mut out = Vec::new();
    for (i, raw) in reader.deserialize::<RawRow>().enumerate() {
        let row = i + 2; // 1-based, after the header
        let raw = raw.map_err(|e| FindingsError::Row {
            row,
            message: e.to_string(),
        })?;
        let human_p = PValueEntry::parse(&raw.human_p).map_err(|m| FindingsError::Row {
            row,
            message: format!("human_p: {m}"),
        })?;
        let note = match raw.note.trim() {
            "" => None,
            "NA*" => Some(TableNote::NaStar),
            "NA**" => Some(TableNote::NaDoubleStar),
            other => {
                return Err(FindingsError::Row {
                    row,
                    message: format!("unknown note {other:?}"),
                })
            }
        };
        let ai_p = match raw.ai_p.trim() {
            "" => {
                if note.is_none() {
                    return Err(FindingsError::Row {
                        row,
                        message: "ai_p empty without a note".to_string(),
                    });
                }
                None
            }
            s => Some(PValueEntry::parse(s).map_err(|m| FindingsError::Row {
                row,
                message: format!("ai_p: {m}"),
            })?),
        };
        let effect_kind = match raw.effect_kind.trim() {
            "main" => MainOrInteraction::Main,
            "interaction" => MainOrInteraction::Interaction,
            "" => {
                if raw
                    .finding_label
                    .trim_start()
                    .to_ascii_lowercase()
                    .starts_with("interaction")
                {
                    MainOrInteraction::Interaction
                } else {
                    MainOrInteraction::Main
                }
            }
            other => {
                return Err(FindingsError::Row {
                    row,
                    message: format!("unknown effect kind {other:?}"),
                })
            }
        };
        let recorded_outcome = match raw.recorded_outcome.trim() {
            "" => None,
            "Yes" | "yes" => Some(true),
            "No" | "no" => Some(false),
            other => {
                return Err(FindingsError::Row {
                    row,
                    message: format!("unknown outcome label {other:?}"),
                })
            }
        };
        out.push(FindingRecord {
            paper_id: raw.paper_id,
            study_id: raw.study_id,
            n: raw.n,
            human_p,
            ai_p,
            finding_label: raw.finding_label.trim().to_string(),
            effect_kind,
            recorded_outcome,
            note,
        });
    }
    Ok(out)
}
