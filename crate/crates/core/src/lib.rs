//! Core library for replaying media-effects experiments with simulated
//! persona samples.
//!
//! The pipeline is: parse a declarative study definition ([`study`]),
//! generate a quota-matched persona population ([`persona`]), collect one
//! isolated completion per persona ([`gateway`], [`orchestrator`]), run the
//! planned statistical tests ([`stats`]), and classify each finding as
//! replicated or not ([`assess`]).

pub mod assess;
pub mod findings;
pub mod gateway;
pub mod orchestrator;
pub mod persona;
pub mod stats;
pub mod study;

pub use assess::{
    aggregate_outcomes, audit_against_recorded, bin_by_effect_size, bin_by_original_p,
    classify_finding, default_p_bins, AuditReport, BinTable, Mechanism, ReplicationEvidence,
    ReplicationOutcome, SignificancePolicy, Verdict,
};
pub use findings::{parse_findings_table, FindingRecord};
pub use gateway::{
    CompletionProvider, CompletionRequest, GatewayError, ProviderConfig, ProviderKind,
    RequestContext, RetryPolicy, SimulatedProvider, SimulatedRespondentModel,
};
pub use orchestrator::{
    apply_manipulation_check, build_dataset, execute_run, parse_answers, AnalysisDataset,
    AnswerValue, ManipulationOutcome, ParsedAnswer, RecordStatus, RunLedger, RunRecord,
};
pub use persona::{
    assign_conditions, build_prompt, render_persona_description, sample_personas, AttrValue,
    Persona, PersonaError, PromptBundle,
};
pub use stats::{
    chi_square_independence, cohen_d, one_way_anova, ols_fit, student_t_test, two_way_anova,
    welch_t_test, Df, EffectSize, EffectSizeKind, InsufficientVariance, StatError, TestOutcome,
    TestResult,
};
pub use study::{
    parse_study_spec, serialize_study_spec, validate_study_spec, Condition, Distribution,
    EffectKindSpec, Factor,
    FindingPlan, ManipulationCheck, Measure, OriginalFinding, PValueEntry, ResponseType,
    SampleSpec, SignedContrast, StimulusKind, StimulusPayload, StimulusRef, StudyError, StudySpec,
    TableNote, TestKind, Violation,
};
