//! `replab` — replay human-subject experiments with simulated persona
//! samples: validate study definitions, collect responses, run the planned
//! analyses, classify replication outcomes, and replay the bundled
//! benchmark table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use replab_core::assess::{
    self, run_planned_test, EffectSizeObservation, OutcomeLine,
    ReplicationEvidence, SignificancePolicy,
};
use replab_core::findings::MainOrInteraction;
use replab_core::gateway::{LiveProvider, ProviderKind, SimulatedProvider};
use replab_core::orchestrator::{
    AnalysisDataset, AnswerValue, DatasetRow, ManipulationOutcome, RunLedger,
};
use replab_core::study::{validate_study_spec_at, EffectKindSpec, ResponseType};
use replab_core::{
    aggregate_outcomes, apply_manipulation_check, audit_against_recorded, bin_by_effect_size,
    bin_by_original_p, build_dataset, classify_finding, execute_run, parse_findings_table,
    parse_study_spec, CompletionProvider, ProviderConfig, SimulatedRespondentModel, StudySpec,
    TestOutcome,
};

const TABLE2_CSV: &str = include_str!("../data/table2.csv");
const FIXTURE_STUDY: &str = include_str!("../data/fixture_study.json");
const FIXTURE_MODEL: &str = include_str!("../data/fixture_model.json");

#[derive(Parser)]
#[command(
    name = "replab",
    about = "Replay behavioral experiments with simulated persona samples",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProviderArg {
    Simulated,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Check a study definition for schema and runnability problems.
    Validate {
        /// Study definition JSON file ("fixture" for the bundled study).
        study: String,
    },
    /// Collect one response per persona and write ledger, dataset, manifest.
    Run {
        /// Study definition JSON file ("fixture" for the bundled study).
        study: String,
        #[arg(long, value_enum, default_value = "simulated")]
        provider: ProviderArg,
        /// Simulated respondent model JSON (defaults to the bundled model).
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed_personas: u64,
        #[arg(long, default_value_t = 2)]
        seed_assign: u64,
        #[arg(long, default_value_t = 3)]
        seed_provider: u64,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 8)]
        max_parallel: usize,
        /// Continue an interrupted run instead of refusing to reuse its ledger.
        #[arg(long)]
        resume: bool,
        /// Run identifier (defaults to a seed-derived id).
        #[arg(long)]
        run_id: Option<String>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the planned statistical tests on a collected dataset.
    Analyze {
        /// Study definition JSON file ("fixture" for the bundled study).
        study: String,
        /// Dataset CSV produced by `run`.
        dataset: PathBuf,
        /// Report output path (JSON; a .csv sibling is written too).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify analyzed findings as replicated or not and aggregate rates.
    Assess {
        /// Study definition JSON file ("fixture" for the bundled study).
        study: String,
        /// Analysis report produced by `analyze`.
        analysis: PathBuf,
        /// Policy overrides, e.g. --policy alpha=0.01 (repeatable).
        #[arg(long)]
        policy: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the bundled 133-row benchmark table: headline aggregates,
    /// calibration bins, and the rule-vs-recorded audit.
    BenchmarkTable2 {
        /// Policy overrides, e.g. --policy alpha=0.01 (repeatable).
        #[arg(long)]
        policy: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot-ready CSV series from a report produced by
    /// `benchmark-table2` or `assess`.
    Plotdata {
        report: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

/// Errors mapped to exit code 1 (validation) vs 2 (runtime).
enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { study } => cmd_validate(&study),
        Command::Run {
            study,
            provider,
            model_file,
            seed_personas,
            seed_assign,
            seed_provider,
            temperature,
            max_parallel,
            resume,
            run_id,
            out,
        } => cmd_run(RunArgs {
            study,
            provider,
            model_file,
            seed_personas,
            seed_assign,
            seed_provider,
            temperature,
            max_parallel,
            resume,
            run_id,
            out,
        }),
        Command::Analyze {
            study,
            dataset,
            out,
        } => cmd_analyze(&study, &dataset, out.as_deref()),
        Command::Assess {
            study,
            analysis,
            policy,
            out,
        } => cmd_assess(&study, &analysis, &policy, out.as_deref()),
        Command::BenchmarkTable2 { policy, out } => cmd_benchmark_table2(&policy, out.as_deref()),
        Command::Plotdata { report, out } => cmd_plotdata(&report, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            eprintln!("{message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Load a study: the literal name "fixture" selects the bundled study.
fn load_study(arg: &str) -> Result<(StudySpec, Option<PathBuf>), CliError> {
    let (text, base_dir) = if arg == "fixture" {
        (FIXTURE_STUDY.to_string(), None)
    } else {
        let path = Path::new(arg);
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading study file {arg}"))
            .map_err(CliError::Runtime)?;
        (text, path.parent().map(|p| p.to_path_buf()))
    };
    let spec = parse_study_spec(&text)
        .map_err(|e| CliError::Validation(format!("study definition rejected: {e}")))?;
    Ok((spec, base_dir))
}

fn cmd_validate(study: &str) -> Result<(), CliError> {
    let (spec, base_dir) = load_study(study)?;
    let violations = validate_study_spec_at(&spec, base_dir.as_deref());
    if violations.is_empty() {
        println!("{}: ok ({} conditions, {} measures, n = {})",
            spec.study_id,
            spec.conditions.len(),
            spec.measures.len(),
            spec.n
        );
        Ok(())
    } else {
        let mut message = format!("{}: {} violation(s)\n", spec.study_id, violations.len());
        for v in &violations {
            message.push_str(&format!("  {v}\n"));
        }
        Err(CliError::Validation(message.trim_end().to_string()))
    }
}

struct RunArgs {
    study: String,
    provider: ProviderArg,
    model_file: Option<PathBuf>,
    seed_personas: u64,
    seed_assign: u64,
    seed_provider: u64,
    temperature: f64,
    max_parallel: usize,
    resume: bool,
    run_id: Option<String>,
    out: PathBuf,
}

/// Everything needed to reproduce a simulated run byte-identically.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    study_file: String,
    study_id: String,
    run_id: String,
    n: u32,
    seed_personas: u64,
    seed_assign: u64,
    seed_provider: u64,
    provider: String,
    model_name: String,
    temperature: f64,
    max_parallel: usize,
    out_dir: String,
    created_ms: u64,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (spec, base_dir) = load_study(&args.study)?;
    let violations = validate_study_spec_at(&spec, base_dir.as_deref());
    if !violations.is_empty() {
        let listing: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        return Err(CliError::Validation(format!(
            "study is not runnable:\n{}",
            listing.join("\n")
        )));
    }

    let config = ProviderConfig {
        provider_kind: match args.provider {
            ProviderArg::Simulated => ProviderKind::Simulated,
            ProviderArg::Live => ProviderKind::Live,
        },
        temperature: args.temperature,
        max_parallel: args.max_parallel,
        ..ProviderConfig::default()
    };
    config
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let run_id = args.run_id.clone().unwrap_or_else(|| {
        format!(
            "run-p{}-a{}-s{}",
            args.seed_personas, args.seed_assign, args.seed_provider
        )
    });

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::Runtime)?;
    let ledger_path = args.out.join("ledger.ndjson");
    if ledger_path.exists() && !args.resume {
        return Err(CliError::Runtime(anyhow!(
            "{} already exists; pass --resume to continue it or choose another --out",
            ledger_path.display()
        )));
    }

    let provider: Box<dyn CompletionProvider> = match args.provider {
        ProviderArg::Simulated => {
            let model_text = match &args.model_file {
                Some(path) => std::fs::read_to_string(path)
                    .with_context(|| format!("reading model file {}", path.display()))
                    .map_err(CliError::Runtime)?,
                None => FIXTURE_MODEL.to_string(),
            };
            let model: SimulatedRespondentModel = serde_json::from_str(&model_text)
                .map_err(|e| CliError::Validation(format!("respondent model rejected: {e}")))?;
            Box::new(SimulatedProvider {
                model,
                seed: args.seed_provider,
            })
        }
        ProviderArg::Live => Box::new(
            LiveProvider::from_env(config.clone())
                .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?,
        ),
    };

    let personas = replab_core::sample_personas(&spec.sample, spec.n, args.seed_personas)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
    let personas = replab_core::assign_conditions(personas, &spec.conditions, args.seed_assign);

    let mut ledger = RunLedger::open(&ledger_path)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
    let summary = execute_run(&spec, &personas, provider.as_ref(), &config, &mut ledger, &run_id)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;

    let dataset = build_dataset(&spec, &ledger.records_for(&run_id));
    let dataset_path = args.out.join("dataset.csv");
    std::fs::write(&dataset_path, dataset.to_csv(&spec))
        .context("writing dataset")
        .map_err(CliError::Runtime)?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        study_file: args.study.clone(),
        study_id: spec.study_id.clone(),
        run_id: run_id.clone(),
        n: spec.n,
        seed_personas: args.seed_personas,
        seed_assign: args.seed_assign,
        seed_provider: args.seed_provider,
        provider: format!("{:?}", args.provider).to_lowercase(),
        model_name: config.model_name.clone(),
        temperature: args.temperature,
        max_parallel: args.max_parallel,
        out_dir: args.out.display().to_string(),
        created_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    };
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .context("writing manifest")
    .map_err(CliError::Runtime)?;

    println!(
        "run {run_id}: {} completed, {} failed, {} skipped (already done), {} request(s); dataset rows {}, excluded {}",
        summary.completed,
        summary.failed,
        summary.skipped_done,
        summary.requests_sent,
        dataset.rows.len(),
        dataset.excluded.len()
    );
    println!("wrote {}", dataset_path.display());
    Ok(())
}

/// Parse a dataset CSV (as written by `run`) back into an analysis dataset.
fn read_dataset(path: &Path, study: &StudySpec) -> anyhow::Result<AnalysisDataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading dataset {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let columns: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    let measure_types: BTreeMap<&str, &ResponseType> = study
        .measures
        .iter()
        .map(|m| (m.measure_id.as_str(), &m.response_type))
        .collect();
    for m in &study.measures {
        if !columns.iter().any(|c| c == &m.measure_id) {
            anyhow::bail!("dataset is missing measure column {:?}", m.measure_id);
        }
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut persona_id = 0u32;
        let mut condition_id = String::new();
        let mut attributes = BTreeMap::new();
        let mut answers = BTreeMap::new();
        for (name, field) in columns.iter().zip(record.iter()) {
            match name.as_str() {
                "persona_id" => persona_id = field.parse()?,
                "condition" => condition_id = field.to_string(),
                _ => {
                    if let Some(rt) = measure_types.get(name.as_str()) {
                        if field.is_empty() {
                            continue;
                        }
                        let value = match rt {
                            ResponseType::Likert { .. } | ResponseType::Choice { .. } => {
                                AnswerValue::Int(field.parse()?)
                            }
                            ResponseType::NumericOpen { .. } => AnswerValue::Real(field.parse()?),
                            ResponseType::FreeText => AnswerValue::Text(field.to_string()),
                        };
                        answers.insert(name.clone(), value);
                    } else {
                        attributes.insert(name.clone(), field.to_string());
                    }
                }
            }
        }
        rows.push(DatasetRow {
            persona_id,
            attributes,
            condition_id,
            answers,
        });
    }
    Ok(AnalysisDataset {
        rows,
        excluded: vec![],
    })
}

/// Per-finding analysis entry: a computed outcome or a surfaced error.
#[derive(Serialize, Deserialize)]
struct AnalyzedFinding {
    finding_id: String,
    dv: String,
    n_used: usize,
    outcome: Option<TestOutcome>,
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct AnalysisReport {
    study_id: String,
    manipulation: ManipulationOutcome,
    findings: Vec<AnalyzedFinding>,
}

fn cmd_analyze(study: &str, dataset_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (spec, _) = load_study(study)?;
    let dataset = read_dataset(dataset_path, &spec).map_err(CliError::Runtime)?;
    let manipulation = apply_manipulation_check(&spec, &dataset)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;

    let mut findings = Vec::new();
    for plan in &spec.analysis_plan {
        match run_planned_test(&spec, &dataset, plan) {
            Ok((outcome, n_used)) => findings.push(AnalyzedFinding {
                finding_id: plan.finding_id.clone(),
                dv: plan.dv.clone(),
                n_used,
                outcome: Some(outcome),
                error: None,
            }),
            Err(e) => findings.push(AnalyzedFinding {
                finding_id: plan.finding_id.clone(),
                dv: plan.dv.clone(),
                n_used: 0,
                outcome: None,
                error: Some(e.to_string()),
            }),
        }
    }

    println!(
        "manipulation check: {}",
        if !manipulation.checked {
            "not defined".to_string()
        } else if manipulation.passed {
            format!("passed (p = {:.3e})", manipulation.p.unwrap_or(f64::NAN))
        } else {
            "FAILED".to_string()
        }
    );
    let mut csv_out = String::from(
        "finding_id,dv,n_used,test,statistic,df1,df2,p,direction_sign,effect_size_kind,effect_size,error\n",
    );
    for f in &findings {
        match &f.outcome {
            Some(TestOutcome::Computed(r)) => {
                let (df1, df2) = match r.df {
                    replab_core::Df::One(d) => (d, f64::NAN),
                    replab_core::Df::Two(a, b) => (a, b),
                };
                let (es_kind, es_value) = r
                    .effect_size
                    .map(|es| (format!("{:?}", es.kind), format!("{:.4}", es.value)))
                    .unwrap_or_default();
                println!(
                    "{}: {} = {:.3}, p = {:.4e}, direction {}",
                    f.finding_id, r.test_kind, r.statistic, r.p, r.direction_sign
                );
                csv_out.push_str(&format!(
                    "{},{},{},{},{:.6},{},{},{:.6e},{},{},{},\n",
                    f.finding_id,
                    f.dv,
                    f.n_used,
                    r.test_kind,
                    r.statistic,
                    df1,
                    if df2.is_nan() { String::new() } else { df2.to_string() },
                    r.p,
                    r.direction_sign,
                    es_kind,
                    es_value
                ));
            }
            Some(TestOutcome::InsufficientVariance(iv)) => {
                println!(
                    "{}: insufficient variance (mean difference sign {})",
                    f.finding_id, iv.mean_difference_sign
                );
                csv_out.push_str(&format!(
                    "{},{},{},insufficient_variance,,,,,{},,,\n",
                    f.finding_id, f.dv, f.n_used, iv.mean_difference_sign
                ));
            }
            None => {
                println!(
                    "{}: error: {}",
                    f.finding_id,
                    f.error.as_deref().unwrap_or("unknown")
                );
                csv_out.push_str(&format!(
                    "{},{},0,,,,,,,,,{}\n",
                    f.finding_id,
                    f.dv,
                    f.error.as_deref().unwrap_or("unknown")
                ));
            }
        }
    }

    let report = AnalysisReport {
        study_id: spec.study_id.clone(),
        manipulation,
        findings,
    };
    if let Some(path) = out {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .context("writing analysis report")
        .map_err(CliError::Runtime)?;
        std::fs::write(path.with_extension("csv"), csv_out)
            .context("writing analysis csv")
            .map_err(CliError::Runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_policy(args: &[String]) -> Result<SignificancePolicy, CliError> {
    let mut policy = SignificancePolicy::default();
    for arg in args {
        let Some((key, value)) = arg.split_once('=') else {
            return Err(CliError::Validation(format!(
                "policy override {arg:?} is not key=value"
            )));
        };
        match key {
            "alpha" => {
                policy.alpha = value.parse().map_err(|_| {
                    CliError::Validation(format!("alpha {value:?} is not a number"))
                })?;
                if !(0.0 < policy.alpha && policy.alpha < 1.0) {
                    return Err(CliError::Validation(format!(
                        "alpha {} outside (0, 1)",
                        policy.alpha
                    )));
                }
            }
            "original_inclusive" => {
                policy.original_boundary_inclusive = value.parse().map_err(|_| {
                    CliError::Validation(format!("{value:?} is not true/false"))
                })?
            }
            "replication_inclusive" => {
                policy.replication_boundary_inclusive = value.parse().map_err(|_| {
                    CliError::Validation(format!("{value:?} is not true/false"))
                })?
            }
            other => {
                return Err(CliError::Validation(format!(
                    "unknown policy key {other:?} (expected alpha, original_inclusive, replication_inclusive)"
                )))
            }
        }
    }
    Ok(policy)
}

#[derive(Serialize)]
struct AssessReport {
    study_id: String,
    policy: SignificancePolicy,
    summary: assess::AggregateReport,
    outcomes: Vec<AssessedFinding>,
    effect_size_bins: assess::BinTable,
}

#[derive(Serialize)]
struct AssessedFinding {
    finding_id: String,
    verdict: String,
    mechanism: assess::Mechanism,
}

fn cmd_assess(
    study: &str,
    analysis_path: &Path,
    policy_args: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (spec, _) = load_study(study)?;
    let policy = parse_policy(policy_args)?;
    let text = std::fs::read_to_string(analysis_path)
        .with_context(|| format!("reading analysis report {}", analysis_path.display()))
        .map_err(CliError::Runtime)?;
    let report: AnalysisReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(anyhow!("analysis report rejected: {e}")))?;

    let mut outcomes = Vec::new();
    let mut lines = Vec::new();
    let mut observations = Vec::new();
    for plan in &spec.analysis_plan {
        let Some(finding) = report.findings.iter().find(|f| f.finding_id == plan.finding_id)
        else {
            continue;
        };
        let Some(outcome) = &finding.outcome else {
            continue;
        };
        let evidence = match outcome {
            TestOutcome::Computed(r) => ReplicationEvidence::Test {
                p: r.p,
                direction_sign: r.direction_sign,
            },
            TestOutcome::InsufficientVariance(iv) => ReplicationEvidence::InsufficientVariance {
                mean_difference_sign: iv.mean_difference_sign,
            },
        };
        let replication = classify_finding(
            &plan.finding_id,
            &plan.original,
            &evidence,
            report.manipulation.passed,
            &policy,
        )
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
        let effect_kind = match plan.effect_kind {
            EffectKindSpec::Main { .. } => MainOrInteraction::Main,
            EffectKindSpec::Interaction { .. } => MainOrInteraction::Interaction,
        };
        lines.push(OutcomeLine {
            effect_kind,
            replicated: replication.verdict == assess::Verdict::Replicated,
        });
        observations.push(EffectSizeObservation {
            effect_size: match outcome {
                TestOutcome::Computed(r) => r.effect_size,
                _ => None,
            },
            replicated: replication.verdict == assess::Verdict::Replicated,
        });
        println!(
            "{}: {} ({:?})",
            plan.finding_id, replication.verdict, replication.mechanism
        );
        outcomes.push(AssessedFinding {
            finding_id: plan.finding_id.clone(),
            verdict: replication.verdict.to_string(),
            mechanism: replication.mechanism,
        });
    }

    let summary = aggregate_outcomes(&lines);
    println!(
        "replicated: overall {}, main effects {}, interactions {}",
        summary.overall, summary.main, summary.interaction
    );
    let assess_report = AssessReport {
        study_id: spec.study_id.clone(),
        policy,
        summary,
        outcomes,
        effect_size_bins: bin_by_effect_size(&observations),
    };
    if let Some(path) = out {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&assess_report).expect("report serializes"),
        )
        .context("writing assessment report")
        .map_err(CliError::Runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkReport {
    policy: SignificancePolicy,
    summary: assess::AggregateReport,
    p_bins: assess::BinTable,
    audit: assess::AuditReport,
    /// Rows whose bin assignment depends on the documented censored /
    /// boundary convention.
    convention_assignments: Vec<String>,
}

fn cmd_benchmark_table2(policy_args: &[String], out: Option<&Path>) -> Result<(), CliError> {
    let policy = parse_policy(policy_args)?;
    let records = parse_findings_table(TABLE2_CSV)
        .map_err(|e| CliError::Runtime(anyhow!("bundled table rejected: {e}")))?;

    let summary = aggregate_outcomes(&assess::recorded_outcome_lines(&records));
    println!(
        "recorded outcomes: overall {}, main effects {}, interactions {}",
        summary.overall, summary.main, summary.interaction
    );

    let p_bins = bin_by_original_p(&records)
        .map_err(|e| CliError::Runtime(anyhow!(e.to_string())))?;
    println!("\ncalibration by original p-value ({}):", p_bins.convention_note);
    for bin in &p_bins.bins {
        println!(
            "  {:>12}  {:>3} replicated / {:>3} total",
            bin.label, bin.replicated, bin.total
        );
    }
    let convention_assignments: Vec<String> = records
        .iter()
        .filter(|r| {
            matches!(r.human_p, replab_core::PValueEntry::CensoredBelow(c) if c > 0.001)
                || matches!(r.human_p, replab_core::PValueEntry::Exact(v) if v == 0.001)
        })
        .map(|r| {
            format!(
                "{} {} {} (p = {}) assigned to bin \"<= .001\" by convention",
                r.paper_id, r.study_id, r.finding_label, r.human_p
            )
        })
        .collect();
    if !convention_assignments.is_empty() {
        println!("\nboundary-convention assignments:");
        for line in &convention_assignments {
            println!("  {line}");
        }
    }

    let audit = audit_against_recorded(&records, &policy);
    println!(
        "\nrule audit: {}/{} rows agree with the recorded outcome",
        audit.agreements, audit.total
    );
    if !audit.direction_dependent.is_empty() {
        println!("rows requiring direction data (counted as explainable):");
        for item in &audit.direction_dependent {
            println!(
                "  {} {} {} (human p {}, replication p {}): {}",
                item.paper_id,
                item.study_id,
                item.finding_label,
                item.human_p,
                item.ai_p.as_deref().unwrap_or("—"),
                item.reason
            );
        }
    }
    if !audit.hard_disagreements.is_empty() {
        println!("rule-inconsistent rows:");
        for item in &audit.hard_disagreements {
            println!(
                "  {} {} {} (human p {}, replication p {}, recorded {:?}, rule {})",
                item.paper_id,
                item.study_id,
                item.finding_label,
                item.human_p,
                item.ai_p.as_deref().unwrap_or("—"),
                item.recorded,
                item.rule_verdict
            );
        }
    }

    let report = BenchmarkReport {
        policy,
        summary,
        p_bins,
        audit,
        convention_assignments,
    };
    if let Some(path) = out {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .context("writing benchmark report")
        .map_err(CliError::Runtime)?;
        println!("\nwrote {}", path.display());
    }
    Ok(())
}

fn cmd_plotdata(report_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(report_path)
        .with_context(|| format!("reading report {}", report_path.display()))
        .map_err(CliError::Runtime)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(anyhow!("report rejected: {e}")))?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(CliError::Runtime)?;

    let mut written = 0;
    for (key, file) in [
        ("p_bins", "p_bins.csv"),
        ("effect_size_bins", "effect_size_bins.csv"),
    ] {
        let Some(bins) = value
            .get(key)
            .and_then(|t| t.get("bins"))
            .and_then(|b| b.as_array())
        else {
            continue;
        };
        let mut csv_out = String::from("label,replicated,failed\n");
        for bin in bins {
            let label = bin.get("label").and_then(|v| v.as_str()).unwrap_or("");
            let total = bin.get("total").and_then(|v| v.as_u64()).unwrap_or(0);
            let replicated = bin.get("replicated").and_then(|v| v.as_u64()).unwrap_or(0);
            // drop empty trailing categories (e.g. no finding lacked an
            // effect size) so the series matches what a bar chart shows
            if total == 0 && label == "unavailable" {
                continue;
            }
            csv_out.push_str(&format!(
                "{},{},{}\n",
                label,
                replicated,
                total - replicated
            ));
        }
        let path = out.join(file);
        std::fs::write(&path, csv_out)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Runtime)?;
        println!("wrote {}", path.display());
        written += 1;
    }
    if written == 0 {
        println!("report contains no bin tables; nothing to emit");
    }
    Ok(())
}
