//! Replication assessment: classify each finding as replicated or not,
//! aggregate outcome rates, audit a benchmark table against its recorded
//! verdicts, and bin findings for calibration plots.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::findings::{FindingRecord, MainOrInteraction};
use crate::orchestrator::{AnalysisDataset, DatasetRow, OrchestratorError};
use crate::stats::{
    chi_square_independence, one_way_anova, ols_fit, student_t_test, two_way_anova, welch_t_test,
    EffectSize, EffectSizeKind, TestOutcome, TestResult,
};
use crate::study::{
    EffectKindSpec, FindingPlan, OriginalFinding, PValueEntry, ResponseType, SignedContrast,
    StudySpec, TableNote, TestKind,
};

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("finding {0:?}: original direction is required to judge a significant replication")]
    MissingDirection(String),
    #[error("row {0:?} cannot be assigned to any p-value bin")]
    UnbinnableRow(String),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Stat(#[from] crate::stats::StatError),
    #[error("finding {finding_id:?}: {message}")]
    BadPlan { finding_id: String, message: String },
}

/// Significance conventions for original and replication p-values. Both
/// boundaries are inclusive by default (p = alpha counts as significant).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SignificancePolicy {
    pub alpha: f64,
    pub original_boundary_inclusive: bool,
    pub replication_boundary_inclusive: bool,
}

impl Default for SignificancePolicy {
    fn default() -> Self {
        SignificancePolicy {
            alpha: 0.05,
            original_boundary_inclusive: true,
            replication_boundary_inclusive: true,
        }
    }
}

impl SignificancePolicy {
    pub fn original_significant(&self, p: &PValueEntry) -> bool {
        if self.original_boundary_inclusive {
            p.at_most(self.alpha)
        } else {
            p.below(self.alpha)
        }
    }

    pub fn replication_significant(&self, p: f64) -> bool {
        if self.replication_boundary_inclusive {
            p <= self.alpha
        } else {
            p < self.alpha
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Replicated,
    NotReplicated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Replicated => write!(f, "replicated"),
            Verdict::NotReplicated => write!(f, "not_replicated"),
        }
    }
}

/// Why a verdict came out the way it did.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Both significant, same direction.
    SigSigSameDirection,
    /// Both non-significant.
    NullNull,
    /// Original significant, replication not.
    SigMissed,
    /// Original non-significant, replication significant.
    SpuriousSig,
    /// Both significant but in opposite directions.
    DirectionFlip,
    /// Replication responses had no variance; judged on the mean
    /// difference direction alone.
    InsufficientVarianceResolved,
    /// The manipulation check failed, so the replication is uninformative.
    ManipulationCheckFailed,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct ReplicationOutcome {
    pub verdict: Verdict,
    pub mechanism: Mechanism,
}

/// What the replication produced for one finding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationEvidence {
    /// A computed test.
    Test { p: f64, direction_sign: i8 },
    /// Zero response variance: only a mean-difference direction exists.
    InsufficientVariance { mean_difference_sign: i8 },
}

/// Decide replicated / not replicated for one finding.
///
/// Rule order: a failed manipulation check overrides everything; then
/// zero-variance evidence is judged on direction alone; then a significant
/// original replicates only as a significant same-direction result, and a
/// null original replicates only as a null.
pub fn classify_finding(
    finding_id: &str,
    original: &OriginalFinding,
    evidence: &ReplicationEvidence,
    manipulation_passed: bool,
    policy: &SignificancePolicy,
) -> Result<ReplicationOutcome, AssessError> {
    if !manipulation_passed {
        return Ok(ReplicationOutcome {
            verdict: Verdict::NotReplicated,
            mechanism: Mechanism::ManipulationCheckFailed,
        });
    }
    let orig_sig = policy.original_significant(&original.human_p);

    if let ReplicationEvidence::InsufficientVariance {
        mean_difference_sign,
    } = evidence
    {
        let verdict = if orig_sig {
            let expected = original
                .direction_sign
                .ok_or_else(|| AssessError::MissingDirection(finding_id.to_string()))?;
            if *mean_difference_sign == expected {
                Verdict::Replicated
            } else {
                Verdict::NotReplicated
            }
        } else {
            // a constant response is as null as it gets
            Verdict::Replicated
        };
        return Ok(ReplicationOutcome {
            verdict,
            mechanism: Mechanism::InsufficientVarianceResolved,
        });
    }

    let ReplicationEvidence::Test { p, direction_sign } = evidence else {
        unreachable!()
    };
    let repl_sig = policy.replication_significant(*p);

    let outcome = match (orig_sig, repl_sig) {
        (true, true) => {
            let expected = original
                .direction_sign
                .ok_or_else(|| AssessError::MissingDirection(finding_id.to_string()))?;
            if *direction_sign == expected {
                ReplicationOutcome {
                    verdict: Verdict::Replicated,
                    mechanism: Mechanism::SigSigSameDirection,
                }
            } else {
                ReplicationOutcome {
                    verdict: Verdict::NotReplicated,
                    mechanism: Mechanism::DirectionFlip,
                }
            }
        }
        (true, false) => ReplicationOutcome {
            verdict: Verdict::NotReplicated,
            mechanism: Mechanism::SigMissed,
        },
        (false, true) => ReplicationOutcome {
            verdict: Verdict::NotReplicated,
            mechanism: Mechanism::SpuriousSig,
        },
        (false, false) => ReplicationOutcome {
            verdict: Verdict::Replicated,
            mechanism: Mechanism::NullNull,
        },
    };
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Analysis driver
// ---------------------------------------------------------------------------

/// One planned finding, analyzed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FindingAnalysis {
    pub finding_id: String,
    pub dv: String,
    pub n_used: usize,
    pub outcome: TestOutcome,
    pub replication: ReplicationOutcome,
}

fn level_of<'a>(study: &'a StudySpec, condition_id: &str, factor: &str) -> Option<&'a str> {
    study
        .conditions
        .iter()
        .find(|c| c.condition_id == condition_id)
        .and_then(|c| c.level_assignment.get(factor))
        .map(|s| s.as_str())
}

fn contrast_groups(
    study: &StudySpec,
    dataset: &AnalysisDataset,
    dv: &str,
    contrast: &SignedContrast,
) -> (Vec<f64>, Vec<f64>) {
    let pick = |level: &str| {
        dataset.numeric_column(dv, |r: &DatasetRow| {
            level_of(study, &r.condition_id, &contrast.factor) == Some(level)
        })
    };
    (pick(&contrast.high_level), pick(&contrast.low_level))
}

/// Sign of the planned contrast (high level mean minus low level mean).
fn contrast_sign(
    study: &StudySpec,
    dataset: &AnalysisDataset,
    dv: &str,
    contrast: &SignedContrast,
) -> i8 {
    let (high, low) = contrast_groups(study, dataset, dv, contrast);
    if high.is_empty() || low.is_empty() {
        return 0;
    }
    let mh = high.iter().sum::<f64>() / high.len() as f64;
    let ml = low.iter().sum::<f64>() / low.len() as f64;
    if mh > ml {
        1
    } else if mh < ml {
        -1
    } else {
        0
    }
}

/// Run one planned test against the dataset, returning the outcome and the
/// number of observations used.
pub fn run_planned_test(
    study: &StudySpec,
    dataset: &AnalysisDataset,
    plan: &FindingPlan,
) -> Result<(TestOutcome, usize), AssessError> {
    let dv = plan.dv.as_str();
    match plan.test {
        TestKind::WelchT | TestKind::StudentT => {
            let (high, low) = contrast_groups(study, dataset, dv, &plan.direction_convention);
            if high.is_empty() || low.is_empty() {
                return Err(OrchestratorError::EmptyCell(format!("contrast on {dv:?}")).into());
            }
            let n_used = high.len() + low.len();
            let outcome = if plan.test == TestKind::WelchT {
                welch_t_test(&high, &low)?
            } else {
                student_t_test(&high, &low)?
            };
            Ok((outcome, n_used))
        }
        TestKind::Anova1 => {
            let EffectKindSpec::Main { factor } = &plan.effect_kind else {
                return Err(AssessError::BadPlan {
                    finding_id: plan.finding_id.clone(),
                    message: "one-way anova needs a main effect".into(),
                });
            };
            let factor_spec = study
                .factors
                .iter()
                .find(|f| f.name == *factor)
                .ok_or_else(|| AssessError::BadPlan {
                    finding_id: plan.finding_id.clone(),
                    message: format!("unknown factor {factor:?}"),
                })?;
            let groups: Vec<Vec<f64>> = factor_spec
                .levels
                .iter()
                .map(|level| {
                    dataset.numeric_column(dv, |r| {
                        level_of(study, &r.condition_id, factor) == Some(level.as_str())
                    })
                })
                .collect();
            if groups.iter().any(|g| g.is_empty()) {
                return Err(OrchestratorError::EmptyCell(format!("anova on {dv:?}")).into());
            }
            let n_used = groups.iter().map(|g| g.len()).sum();
            let mut outcome = one_way_anova(&groups)?;
            // direction by the planned contrast, not group declaration order
            if let TestOutcome::Computed(result) = &mut outcome {
                result.direction_sign =
                    contrast_sign(study, dataset, dv, &plan.direction_convention);
            }
            Ok((outcome, n_used))
        }
        TestKind::Anova2 => {
            let (factor_a, factor_b) = match &plan.effect_kind {
                EffectKindSpec::Interaction { factor_a, factor_b } => {
                    (factor_a.as_str(), factor_b.as_str())
                }
                EffectKindSpec::Main { factor } => {
                    let other = study
                        .factors
                        .iter()
                        .map(|f| f.name.as_str())
                        .find(|name| name != factor)
                        .ok_or_else(|| AssessError::BadPlan {
                            finding_id: plan.finding_id.clone(),
                            message: "two-way anova needs a second factor".into(),
                        })?;
                    (factor.as_str(), other)
                }
            };
            let rows: Vec<(String, String, f64)> = dataset
                .rows
                .iter()
                .filter_map(|r| {
                    let la = level_of(study, &r.condition_id, factor_a)?;
                    let lb = level_of(study, &r.condition_id, factor_b)?;
                    let y = r.answers.get(dv).and_then(|v| v.as_f64())?;
                    Some((la.to_string(), lb.to_string(), y))
                })
                .collect();
            let n_used = rows.len();
            let result = two_way_anova(&rows)?;
            let mut term = match &plan.effect_kind {
                EffectKindSpec::Interaction { .. } => result.interaction,
                EffectKindSpec::Main { .. } => result.factor_a,
            };
            if matches!(plan.effect_kind, EffectKindSpec::Main { .. }) {
                term.direction_sign = contrast_sign(study, dataset, dv, &plan.direction_convention);
            }
            Ok((TestOutcome::Computed(term), n_used))
        }
        TestKind::Chi2 => {
            let measure = study
                .measures
                .iter()
                .find(|m| m.measure_id == dv)
                .ok_or_else(|| AssessError::BadPlan {
                    finding_id: plan.finding_id.clone(),
                    message: format!("unknown measure {dv:?}"),
                })?;
            let ResponseType::Choice { options } = &measure.response_type else {
                return Err(AssessError::BadPlan {
                    finding_id: plan.finding_id.clone(),
                    message: "chi-squared needs a choice measure".into(),
                });
            };
            let contrast = &plan.direction_convention;
            let levels = [&contrast.high_level, &contrast.low_level];
            let mut table = vec![vec![0u64; options.len()]; 2];
            let mut n_used = 0usize;
            for r in &dataset.rows {
                let Some(level) = level_of(study, &r.condition_id, &contrast.factor) else {
                    continue;
                };
                let Some(row_idx) = levels.iter().position(|l| l.as_str() == level) else {
                    continue;
                };
                let Some(choice) = r.answers.get(dv).and_then(|v| v.as_f64()) else {
                    continue;
                };
                let col = (choice as usize).saturating_sub(1).min(options.len() - 1);
                table[row_idx][col] += 1;
                n_used += 1;
            }
            let result = chi_square_independence(&table)?;
            Ok((TestOutcome::Computed(result), n_used))
        }
        TestKind::Ols => {
            let contrast = &plan.direction_convention;
            let mut design = Vec::new();
            let mut y = Vec::new();
            for r in &dataset.rows {
                let Some(level) = level_of(study, &r.condition_id, &contrast.factor) else {
                    continue;
                };
                let code = if level == contrast.high_level {
                    1.0
                } else if level == contrast.low_level {
                    -1.0
                } else {
                    continue;
                };
                let Some(v) = r.answers.get(dv).and_then(|v| v.as_f64()) else {
                    continue;
                };
                design.push(vec![1.0, code]);
                y.push(v);
            }
            let n_used = y.len();
            let fit = ols_fit(&design, &y)?;
            let coef = &fit.coefficients[1];
            let result = TestResult {
                test_kind: "ols".into(),
                statistic: coef.t,
                df: crate::stats::Df::One(fit.df_residual),
                p: coef.p,
                direction_sign: if coef.estimate > 0.0 {
                    1
                } else if coef.estimate < 0.0 {
                    -1
                } else {
                    0
                },
                effect_size: None,
                cell_summaries: vec![],
            };
            Ok((TestOutcome::Computed(result), n_used))
        }
    }
}

/// Run every planned test on the dataset and classify each finding.
pub fn run_analysis_plan(
    study: &StudySpec,
    dataset: &AnalysisDataset,
    manipulation_passed: bool,
    policy: &SignificancePolicy,
) -> Result<Vec<FindingAnalysis>, AssessError> {
    study
        .analysis_plan
        .iter()
        .map(|plan| {
            let (outcome, n_used) = run_planned_test(study, dataset, plan)?;
            let evidence = match &outcome {
                TestOutcome::Computed(r) => ReplicationEvidence::Test {
                    p: r.p,
                    direction_sign: r.direction_sign,
                },
                TestOutcome::InsufficientVariance(iv) => {
                    ReplicationEvidence::InsufficientVariance {
                        mean_difference_sign: iv.mean_difference_sign,
                    }
                }
            };
            let replication = classify_finding(
                &plan.finding_id,
                &plan.original,
                &evidence,
                manipulation_passed,
                policy,
            )?;
            Ok(FindingAnalysis {
                finding_id: plan.finding_id.clone(),
                dv: plan.dv.clone(),
                n_used,
                outcome,
                replication,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// One finding's contribution to the aggregate rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct OutcomeLine {
    pub effect_kind: MainOrInteraction,
    pub replicated: bool,
}

/// A replicated / total pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct RateCell {
    pub replicated: usize,
    pub total: usize,
}

impl RateCell {
    pub fn rate(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(self.replicated as f64 / self.total as f64)
        }
    }
}

impl fmt::Display for RateCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rate() {
            None => write!(f, "—"),
            Some(rate) => write!(f, "{}/{} ({:.0}%)", self.replicated, self.total, rate * 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct AggregateReport {
    pub overall: RateCell,
    pub main: RateCell,
    pub interaction: RateCell,
}

/// Tally replication rates overall and by effect kind.
pub fn aggregate_outcomes(lines: &[OutcomeLine]) -> AggregateReport {
    let mut report = AggregateReport::default();
    for line in lines {
        report.overall.total += 1;
        let cell = match line.effect_kind {
            MainOrInteraction::Main => &mut report.main,
            MainOrInteraction::Interaction => &mut report.interaction,
        };
        cell.total += 1;
        if line.replicated {
            report.overall.replicated += 1;
            cell.replicated += 1;
        }
    }
    report
}

/// Outcome lines from a benchmark table's recorded verdicts. Rows with no
/// recorded verdict are skipped.
pub fn recorded_outcome_lines(records: &[FindingRecord]) -> Vec<OutcomeLine> {
    records
        .iter()
        .filter_map(|r| {
            r.recorded_outcome.map(|replicated| OutcomeLine {
                effect_kind: r.effect_kind,
                replicated,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Audit against recorded verdicts
// ---------------------------------------------------------------------------

/// One audited row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditItem {
    pub paper_id: String,
    pub study_id: String,
    pub finding_label: String,
    pub human_p: String,
    pub ai_p: Option<String>,
    pub recorded: Option<bool>,
    pub rule_verdict: Verdict,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditReport {
    pub total: usize,
    /// Rows where the direction-free rule matches the recorded verdict, or
    /// where the gap is explainable by direction data the table omits.
    pub agreements: usize,
    /// Both p-values significant but recorded "No": a direction flip would
    /// explain the verdict, so these need direction data, and are not
    /// counted as hard disagreements.
    pub direction_dependent: Vec<AuditItem>,
    /// Rows where no direction information could reconcile the rule with
    /// the recorded verdict.
    pub hard_disagreements: Vec<AuditItem>,
}

fn rule_verdict(record: &FindingRecord, policy: &SignificancePolicy) -> (Verdict, bool) {
    // returns (verdict under the direction-free rule, direction_dependent)
    match record.note {
        Some(TableNote::NaDoubleStar) => return (Verdict::NotReplicated, false),
        Some(TableNote::NaStar) => return (Verdict::Replicated, false),
        None => {}
    }
    let orig_sig = policy.original_significant(&record.human_p);
    let repl_sig = record
        .ai_p
        .as_ref()
        .map(|p| policy.original_significant(p))
        .unwrap_or(false);
    match (orig_sig, repl_sig) {
        // both significant: replicated assuming the direction matched, but
        // only direction data can confirm
        (true, true) => (Verdict::Replicated, true),
        (true, false) => (Verdict::NotReplicated, false),
        (false, true) => (Verdict::NotReplicated, false),
        (false, false) => (Verdict::Replicated, false),
    }
}

/// Re-derive every row's verdict from its p-values alone and compare with
/// the recorded verdict. The benchmark table carries no direction data, so
/// both-significant rows recorded "No" are reported as direction-dependent
/// rather than as disagreements.
pub fn audit_against_recorded(
    records: &[FindingRecord],
    policy: &SignificancePolicy,
) -> AuditReport {
    let mut report = AuditReport {
        total: records.len(),
        agreements: 0,
        direction_dependent: vec![],
        hard_disagreements: vec![],
    };
    for record in records {
        let (verdict, direction_dependent) = rule_verdict(record, policy);
        let recorded = record.recorded_outcome;
        let matches = match recorded {
            Some(true) => verdict == Verdict::Replicated,
            Some(false) => verdict == Verdict::NotReplicated,
            None => true,
        };
        let item = |reason: &str| AuditItem {
            paper_id: record.paper_id.clone(),
            study_id: record.study_id.clone(),
            finding_label: record.finding_label.clone(),
            human_p: record.human_p.to_string(),
            ai_p: record.ai_p.as_ref().map(|p| p.to_string()),
            recorded,
            rule_verdict: verdict,
            reason: reason.to_string(),
        };
        if matches {
            report.agreements += 1;
        } else if direction_dependent && recorded == Some(false) {
            // explainable by a direction flip the table does not show
            report.agreements += 1;
            report.direction_dependent.push(item(
                "both p-values significant but recorded No; requires direction data",
            ));
        } else {
            report
                .hard_disagreements
                .push(item("rule verdict contradicts the recorded outcome"));
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

/// One bin of a calibration table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BinRow {
    pub label: String,
    pub total: usize,
    pub replicated: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BinTable {
    pub bins: Vec<BinRow>,
    /// Documents any convention applied when assigning edge cases.
    pub convention_note: String,
}

/// A p-value bin over exact values in `(lo, hi]`. Censored entries belong
/// to the first bin when their bound is at most `censored_cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct PBin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

/// The seven calibration bins. The first bin collects every censored entry
/// with bound <= 0.01 together with exact values <= 0.001; later bins are
/// left-open, right-closed intervals over exact values.
pub fn default_p_bins() -> Vec<PBin> {
    let edges = [
        ("<= .001", 0.0, 0.001),
        ("(.001, .01]", 0.001, 0.01),
        ("(.01, .03]", 0.01, 0.03),
        ("(.03, .05]", 0.03, 0.05),
        ("(.05, .1]", 0.05, 0.1),
        ("(.1, .5]", 0.1, 0.5),
        ("(.5, 1]", 0.5, 1.0),
    ];
    edges
        .iter()
        .map(|(label, lo, hi)| PBin {
            label: label.to_string(),
            lo: *lo,
            hi: *hi,
        })
        .collect()
}

const CENSORED_CUTOFF: f64 = 0.01;

fn bin_index(p: &PValueEntry, bins: &[PBin]) -> Option<usize> {
    match p {
        PValueEntry::CensoredBelow(c) => {
            if *c <= CENSORED_CUTOFF {
                Some(0)
            } else {
                // place by the open upper bound
                bins.iter().position(|b| *c > b.lo && *c <= b.hi)
            }
        }
        PValueEntry::Exact(v) => {
            if *v <= bins[0].hi {
                Some(0)
            } else {
                bins.iter().position(|b| *v > b.lo && *v <= b.hi)
            }
        }
    }
}

/// Bin findings by their original (human) p-value. Every row must land in
/// exactly one bin; the bin totals partition the input.
pub fn bin_by_original_p(records: &[FindingRecord]) -> Result<BinTable, AssessError> {
    let bins = default_p_bins();
    let mut rows: Vec<BinRow> = bins
        .iter()
        .map(|b| BinRow {
            label: b.label.clone(),
            total: 0,
            replicated: 0,
        })
        .collect();
    for record in records {
        let idx = bin_index(&record.human_p, &bins).ok_or_else(|| {
            AssessError::UnbinnableRow(format!(
                "{} {} {}",
                record.paper_id, record.study_id, record.finding_label
            ))
        })?;
        rows[idx].total += 1;
        if record.recorded_outcome == Some(true) {
            rows[idx].replicated += 1;
        }
    }
    Ok(BinTable {
        bins: rows,
        convention_note: format!(
            "censored p-values with bound <= {CENSORED_CUTOFF} are assigned to the first bin \
             alongside exact values <= .001; exact values use left-open right-closed intervals"
        ),
    })
}

/// One effect size paired with its replication verdict.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EffectSizeObservation {
    pub effect_size: Option<EffectSize>,
    pub replicated: bool,
}

/// Bin findings by standardized effect magnitude, using the conventional
/// small / medium / large thresholds for each effect-size family. Findings
/// with no effect size are counted separately.
pub fn bin_by_effect_size(observations: &[EffectSizeObservation]) -> BinTable {
    let labels = ["negligible", "small", "medium", "large", "unavailable"];
    let mut counts: BTreeMap<&str, BinRow> = labels
        .iter()
        .map(|l| {
            (
                *l,
                BinRow {
                    label: l.to_string(),
                    total: 0,
                    replicated: 0,
                },
            )
        })
        .collect();
    for obs in observations {
        let label = match &obs.effect_size {
            None => "unavailable",
            Some(es) => {
                let v = es.value.abs();
                let (small, medium, large) = match es.kind {
                    EffectSizeKind::CohenD => (0.2, 0.5, 0.8),
                    EffectSizeKind::EtaSquaredPartial => (0.01, 0.06, 0.14),
                    EffectSizeKind::CramersV => (0.1, 0.3, 0.5),
                };
                if v < small {
                    "negligible"
                } else if v < medium {
                    "small"
                } else if v < large {
                    "medium"
                } else {
                    "large"
                }
            }
        };
        let row = counts.get_mut(label).unwrap();
        row.total += 1;
        if obs.replicated {
            row.replicated += 1;
        }
    }
    BinTable {
        bins: labels.iter().map(|l| counts[*l].clone()).collect(),
        convention_note:
            "thresholds: d 0.2/0.5/0.8; partial eta-squared 0.01/0.06/0.14; Cramer's V 0.1/0.3/0.5"
                .to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn original(p: PValueEntry, sign: Option<i8>) -> OriginalFinding {
        OriginalFinding {
            human_p: p,
            direction_sign: sign,
            effect_size: None,
            recorded_outcome: None,
            note: None,
        }
    }

    fn policy() -> SignificancePolicy {
        SignificancePolicy::default()
    }

    #[test]
    fn sig_sig_same_direction_replicates() {
        let out = classify_finding(
            "f",
            &original(PValueEntry::CensoredBelow(0.001), Some(1)),
            &ReplicationEvidence::Test {
                p: 0.002,
                direction_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::Replicated);
        assert_eq!(out.mechanism, Mechanism::SigSigSameDirection);
    }

    #[test]
    fn direction_flip_does_not_replicate() {
        let out = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.01), Some(1)),
            &ReplicationEvidence::Test {
                p: 0.001,
                direction_sign: -1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::NotReplicated);
        assert_eq!(out.mechanism, Mechanism::DirectionFlip);
    }

    #[test]
    fn null_null_replicates_and_spurious_does_not() {
        let null = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.4), None),
            &ReplicationEvidence::Test {
                p: 0.6,
                direction_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(null.verdict, Verdict::Replicated);
        assert_eq!(null.mechanism, Mechanism::NullNull);

        let spurious = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.4), None),
            &ReplicationEvidence::Test {
                p: 0.01,
                direction_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(spurious.verdict, Verdict::NotReplicated);
        assert_eq!(spurious.mechanism, Mechanism::SpuriousSig);
    }

    #[test]
    fn boundary_p_is_significant_under_inclusive_policy() {
        let out = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.05), Some(1)),
            &ReplicationEvidence::Test {
                p: 0.05,
                direction_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::Replicated);
    }

    #[test]
    fn manipulation_failure_overrides_everything() {
        let out = classify_finding(
            "f",
            &original(PValueEntry::CensoredBelow(0.001), Some(1)),
            &ReplicationEvidence::Test {
                p: 0.0001,
                direction_sign: 1,
            },
            false,
            &policy(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::NotReplicated);
        assert_eq!(out.mechanism, Mechanism::ManipulationCheckFailed);
    }

    #[test]
    fn insufficient_variance_judged_on_direction() {
        let matching = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.01), Some(1)),
            &ReplicationEvidence::InsufficientVariance {
                mean_difference_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(matching.verdict, Verdict::Replicated);
        assert_eq!(matching.mechanism, Mechanism::InsufficientVarianceResolved);

        let mismatched = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.01), Some(1)),
            &ReplicationEvidence::InsufficientVariance {
                mean_difference_sign: -1,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(mismatched.verdict, Verdict::NotReplicated);

        let null_original = classify_finding(
            "f",
            &original(PValueEntry::Exact(0.5), None),
            &ReplicationEvidence::InsufficientVariance {
                mean_difference_sign: 0,
            },
            true,
            &policy(),
        )
        .unwrap();
        assert_eq!(null_original.verdict, Verdict::Replicated);
    }

    #[test]
    fn missing_direction_is_an_error_when_needed() {
        let err = classify_finding(
            "f9",
            &original(PValueEntry::Exact(0.01), None),
            &ReplicationEvidence::Test {
                p: 0.01,
                direction_sign: 1,
            },
            true,
            &policy(),
        )
        .unwrap_err();
        assert!(matches!(err, AssessError::MissingDirection(id) if id == "f9"));
    }

    #[test]
    fn aggregate_rates_and_empty_display() {
        let lines = vec![
            OutcomeLine {
                effect_kind: MainOrInteraction::Main,
                replicated: true,
            },
            OutcomeLine {
                effect_kind: MainOrInteraction::Main,
                replicated: false,
            },
        ];
        let report = aggregate_outcomes(&lines);
        assert_eq!(report.overall.total, 2);
        assert_eq!(report.main.replicated, 1);
        assert_eq!(report.interaction.total, 0);
        assert_eq!(report.interaction.to_string(), "—");
        assert_eq!(report.main.to_string(), "1/2 (50%)");
    }

    #[test]
    fn bins_partition_their_input() {
        let bins = default_p_bins();
        assert_eq!(bins.len(), 7);
        // every representative value lands in exactly one bin
        for entry in [
            PValueEntry::CensoredBelow(0.001),
            PValueEntry::CensoredBelow(0.01),
            PValueEntry::Exact(0.001),
            PValueEntry::Exact(0.005),
            PValueEntry::Exact(0.03),
            PValueEntry::Exact(0.05),
            PValueEntry::Exact(0.07),
            PValueEntry::Exact(0.4),
            PValueEntry::Exact(1.0),
        ] {
            assert!(bin_index(&entry, &bins).is_some(), "{entry}");
        }
        assert_eq!(bin_index(&PValueEntry::CensoredBelow(0.01), &bins), Some(0));
        assert_eq!(bin_index(&PValueEntry::Exact(0.001), &bins), Some(0));
        assert_eq!(bin_index(&PValueEntry::Exact(0.0011), &bins), Some(1));
        assert_eq!(bin_index(&PValueEntry::Exact(0.05), &bins), Some(3));
    }

    #[test]
    fn effect_size_bins_use_family_thresholds() {
        let obs = vec![
            EffectSizeObservation {
                effect_size: Some(EffectSize {
                    kind: EffectSizeKind::CohenD,
                    value: -0.9,
                }),
                replicated: true,
            },
            EffectSizeObservation {
                effect_size: Some(EffectSize {
                    kind: EffectSizeKind::EtaSquaredPartial,
                    value: 0.07,
                }),
                replicated: false,
            },
            EffectSizeObservation {
                effect_size: None,
                replicated: true,
            },
        ];
        let table = bin_by_effect_size(&obs);
        let get = |label: &str| table.bins.iter().find(|b| b.label == label).unwrap();
        assert_eq!(get("large").total, 1);
        assert_eq!(get("medium").total, 1);
        assert_eq!(get("unavailable").total, 1);
        let total: usize = table.bins.iter().map(|b| b.total).sum();
        assert_eq!(total, obs.len());
    }
}
