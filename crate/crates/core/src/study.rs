//! Study definitions: domain types, JSON parsing, and validation.
//!
//! A study file is a single UTF-8 JSON document describing factors,
//! conditions, stimuli, measures, the persona sample, and the analysis
//! plan. Parsing rejects structural problems outright; runnability checks
//! are reported as machine-readable [`Violation`]s.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("semantic error at {path}: {message}")]
    Semantic { path: String, message: String },
}

/// Machine-readable validation finding. An empty violation list means the
/// study is runnable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Violation {
    pub code: String,
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(code: &str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            code: code.to_string(),
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

/// Full declarative experiment definition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub study_id: String,
    /// Provenance metadata (paper title, authors, journal). Never injected
    /// into prompts; used to build the blinding list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_label: Option<String>,
    pub factors: Vec<Factor>,
    pub conditions: Vec<Condition>,
    pub measures: Vec<Measure>,
    pub sample: SampleSpec,
    /// Number of personas to generate.
    pub n: u32,
    pub analysis_plan: Vec<FindingPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation_check: Option<ManipulationCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub condition_id: String,
    /// factor name -> level name; exactly one level per factor.
    pub level_assignment: BTreeMap<String, String>,
    #[serde(default)]
    pub stimuli: Vec<StimulusRef>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Text,
    Image,
    Video,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum StimulusPayload {
    /// Inline text content.
    Inline(String),
    /// Opaque attachment reference (path or URI), resolved at run time.
    Attachment(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StimulusRef {
    pub kind: StimulusKind,
    pub payload: StimulusPayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Measure {
    pub measure_id: String,
    pub prompt_text: String,
    pub response_type: ResponseType,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Likert {
        min: i64,
        max: i64,
        low_anchor: String,
        high_anchor: String,
    },
    NumericOpen {
        units: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Choice {
        options: Vec<String>,
    },
    FreeText,
}

/// Persona sample definition: marginal attribute distributions plus a
/// description template over attribute names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub attributes: Vec<AttributeSpec>,
    pub description_template: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Categorical {
        /// value -> probability; must sum to 1 within 1e-9.
        weights: BTreeMap<String, f64>,
    },
    NumericUniform {
        lo: f64,
        hi: f64,
        integer_valued: bool,
    },
    NumericEmpirical {
        values: Vec<WeightedValue>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightedValue {
    pub value: f64,
    pub weight: f64,
}

/// One planned finding: which DV, which effect, which test, and what the
/// original study reported.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FindingPlan {
    pub finding_id: String,
    pub dv: String,
    pub effect_kind: EffectKindSpec,
    pub test: TestKind,
    /// Defines the signed contrast: positive means the `high_level` cell is
    /// hypothesized higher than the `low_level` cell.
    pub direction_convention: SignedContrast,
    pub original: OriginalFinding,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum EffectKindSpec {
    Main { factor: String },
    Interaction { factor_a: String, factor_b: String },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    StudentT,
    Anova1,
    Anova2,
    Chi2,
    Ols,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SignedContrast {
    pub factor: String,
    pub high_level: String,
    pub low_level: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OriginalFinding {
    pub human_p: PValueEntry,
    /// Sign of the original contrast, when known (±1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_sign: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<EffectSizeEntry>,
    /// Ground-truth verdict carried by benchmark data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_outcome: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<TableNote>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EffectSizeEntry {
    pub kind: String,
    pub value: f64,
}

/// Benchmark-table annotations: `NA*` marks a replication without enough
/// response variance for a p-value; `NA**` marks a failed manipulation check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TableNote {
    NaStar,
    NaDoubleStar,
}

/// A reported p-value: either an exact number or a censored bound such as
/// "< .001". Censored entries are never coerced to numbers; comparison
/// against a threshold t is defined as censored_below(c) <= t iff c <= t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PValueEntry {
    Exact(f64),
    CensoredBelow(f64),
}

impl PValueEntry {
    /// True when the entry is known to be at or below `threshold`.
    pub fn at_most(&self, threshold: f64) -> bool {
        match *self {
            PValueEntry::Exact(v) => v <= threshold,
            PValueEntry::CensoredBelow(c) => c <= threshold,
        }
    }

    /// True when the entry is known to be strictly below `threshold`.
    pub fn below(&self, threshold: f64) -> bool {
        match *self {
            PValueEntry::Exact(v) => v < threshold,
            PValueEntry::CensoredBelow(c) => c <= threshold,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, PValueEntry::CensoredBelow(_))
    }

    /// Parse "0.03" or "<0.001" (also accepts "< .001").
    pub fn parse(s: &str) -> Result<PValueEntry, String> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('<') {
            let rest = rest.trim();
            let norm = if rest.starts_with('.') {
                format!("0{rest}")
            } else {
                rest.to_string()
            };
            let c: f64 = norm
                .parse()
                .map_err(|_| format!("bad censored p-value {s:?}"))?;
            if c <= 0.0 || c > 1.0 {
                return Err(format!("censored bound {c} outside (0, 1]"));
            }
            Ok(PValueEntry::CensoredBelow(c))
        } else {
            let v: f64 = s.parse().map_err(|_| format!("bad p-value {s:?}"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("p-value {v} outside [0, 1]"));
            }
            Ok(PValueEntry::Exact(v))
        }
    }
}

impl fmt::Display for PValueEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PValueEntry::Exact(v) => write!(f, "{v}"),
            PValueEntry::CensoredBelow(c) => write!(f, "<{c}"),
        }
    }
}

impl Serialize for PValueEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            PValueEntry::Exact(v) => serializer.serialize_f64(*v),
            PValueEntry::CensoredBelow(c) => serializer.serialize_str(&format!("<{c}")),
        }
    }
}

impl<'de> Deserialize<'de> for PValueEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = PValueEntry;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number in [0,1] or a censored string like \"<0.001\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<PValueEntry, E> {
                if (0.0..=1.0).contains(&v) {
                    Ok(PValueEntry::Exact(v))
                } else {
                    Err(E::custom(format!("p-value {v} outside [0, 1]")))
                }
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<PValueEntry, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<PValueEntry, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: serde::de::Error>(self, s: &str) -> Result<PValueEntry, E> {
                PValueEntry::parse(s).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManipulationCheck {
    pub measure_id: String,
    pub expected_direction: SignedContrast,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

/// Parse a study definition document and enforce all type invariants.
pub fn parse_study_spec(document: &str) -> Result<StudySpec, StudyError> {
    let spec: StudySpec = serde_json::from_str(document).map_err(|e| StudyError::Schema {
        path: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if let Some(v) = structural_violations(&spec).into_iter().next() {
        return Err(StudyError::Semantic {
            path: v.path,
            message: v.message,
        });
    }
    Ok(spec)
}

/// Type-invariant checks: these make a spec malformed, not merely
/// unrunnable.
fn structural_violations(spec: &StudySpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let factor_names: BTreeSet<&str> = spec.factors.iter().map(|f| f.name.as_str()).collect();

    for (i, f) in spec.factors.iter().enumerate() {
        let path = format!("factors[{i}]");
        if f.levels.len() < 2 {
            out.push(Violation::new(
                "TOO_FEW_LEVELS",
                &path,
                format!("factor {:?} has {} level(s), need >= 2", f.name, f.levels.len()),
            ));
        }
        let mut seen = BTreeSet::new();
        for l in &f.levels {
            if !seen.insert(l) {
                out.push(Violation::new(
                    "DUPLICATE_LEVEL",
                    &path,
                    format!("level {l:?} repeated in factor {:?}", f.name),
                ));
            }
        }
    }

    let mut cond_ids = BTreeSet::new();
    for (i, c) in spec.conditions.iter().enumerate() {
        let path = format!("conditions[{i}]");
        if !cond_ids.insert(&c.condition_id) {
            out.push(Violation::new(
                "DUPLICATE_CONDITION_ID",
                &path,
                format!("condition id {:?} repeated", c.condition_id),
            ));
        }
        for f in &spec.factors {
            match c.level_assignment.get(&f.name) {
                None => out.push(Violation::new(
                    "MISSING_LEVEL_ASSIGNMENT",
                    &path,
                    format!("condition {:?} assigns no level of factor {:?}", c.condition_id, f.name),
                )),
                Some(level) if !f.levels.contains(level) => out.push(Violation::new(
                    "UNKNOWN_LEVEL",
                    &path,
                    format!("condition {:?} uses unknown level {level:?} of factor {:?}", c.condition_id, f.name),
                )),
                _ => {}
            }
        }
        for name in c.level_assignment.keys() {
            if !factor_names.contains(name.as_str()) {
                out.push(Violation::new(
                    "UNKNOWN_FACTOR",
                    &path,
                    format!("condition {:?} references unknown factor {name:?}", c.condition_id),
                ));
            }
        }
        for (j, s) in c.stimuli.iter().enumerate() {
            if s.kind == StimulusKind::Text {
                if let StimulusPayload::Inline(t) = &s.payload {
                    if t.trim().is_empty() {
                        out.push(Violation::new(
                            "EMPTY_STIMULUS",
                            format!("{path}.stimuli[{j}]"),
                            "text stimulus is empty",
                        ));
                    }
                }
            }
        }
    }

    let mut measure_ids = BTreeSet::new();
    for (i, m) in spec.measures.iter().enumerate() {
        let path = format!("measures[{i}]");
        if !measure_ids.insert(m.measure_id.as_str()) {
            out.push(Violation::new(
                "DUPLICATE_MEASURE_ID",
                &path,
                format!("measure id {:?} repeated", m.measure_id),
            ));
        }
        match &m.response_type {
            ResponseType::Likert { min, max, .. } if min >= max => out.push(Violation::new(
                "BAD_LIKERT_BOUNDS",
                &path,
                format!("likert min {min} must be < max {max}"),
            )),
            ResponseType::NumericOpen {
                min: Some(lo),
                max: Some(hi),
                ..
            } if lo > hi => out.push(Violation::new(
                "BAD_NUMERIC_BOUNDS",
                &path,
                format!("numeric min {lo} must be <= max {hi}"),
            )),
            ResponseType::Choice { options } if options.len() < 2 => out.push(Violation::new(
                "TOO_FEW_OPTIONS",
                &path,
                format!("choice measure needs >= 2 options, got {}", options.len()),
            )),
            _ => {}
        }
    }

    for (i, a) in spec.sample.attributes.iter().enumerate() {
        let path = format!("sample.attributes[{i}]");
        match &a.distribution {
            Distribution::Categorical { weights } => {
                let total: f64 = weights.values().sum();
                if (total - 1.0).abs() > 1e-9 {
                    out.push(Violation::new(
                        "WEIGHTS_NOT_NORMALIZED",
                        &path,
                        format!("weights of attribute {:?} sum to {total}, expected 1", a.name),
                    ));
                }
                if weights.values().any(|w| *w < 0.0) {
                    out.push(Violation::new(
                        "NEGATIVE_WEIGHT",
                        &path,
                        format!("attribute {:?} has a negative weight", a.name),
                    ));
                }
            }
            Distribution::NumericUniform { lo, hi, .. } => {
                if lo > hi {
                    out.push(Violation::new(
                        "BAD_RANGE",
                        &path,
                        format!("attribute {:?}: lo {lo} > hi {hi}", a.name),
                    ));
                }
            }
            Distribution::NumericEmpirical { values } => {
                if values.is_empty() {
                    out.push(Violation::new(
                        "EMPTY_EMPIRICAL",
                        &path,
                        format!("attribute {:?} has no empirical values", a.name),
                    ));
                } else if values.iter().any(|v| v.weight < 0.0)
                    || values.iter().map(|v| v.weight).sum::<f64>() <= 0.0
                {
                    out.push(Violation::new(
                        "BAD_EMPIRICAL_WEIGHTS",
                        &path,
                        format!("attribute {:?} has invalid empirical weights", a.name),
                    ));
                }
            }
        }
    }

    if (spec.n as usize) < spec.conditions.len() {
        out.push(Violation::new(
            "N_TOO_SMALL",
            "n",
            format!("n = {} is less than the number of conditions ({})", spec.n, spec.conditions.len()),
        ));
    }

    for (i, p) in spec.analysis_plan.iter().enumerate() {
        let path = format!("analysis_plan[{i}]");
        if !measure_ids.contains(p.dv.as_str()) {
            out.push(Violation::new(
                "DANGLING_REFERENCE",
                &path,
                format!("finding {:?} references unknown measure {:?}", p.finding_id, p.dv),
            ));
        }
        let referenced: Vec<&str> = match &p.effect_kind {
            EffectKindSpec::Main { factor } => vec![factor.as_str()],
            EffectKindSpec::Interaction { factor_a, factor_b } => {
                vec![factor_a.as_str(), factor_b.as_str()]
            }
        };
        for name in referenced {
            if !factor_names.contains(name) {
                out.push(Violation::new(
                    "DANGLING_REFERENCE",
                    &path,
                    format!("finding {:?} references unknown factor {name:?}", p.finding_id),
                ));
            }
        }
        if matches!(p.effect_kind, EffectKindSpec::Interaction { .. }) && spec.factors.len() < 2 {
            out.push(Violation::new(
                "INTERACTION_NEEDS_TWO_FACTORS",
                &path,
                format!("finding {:?} plans an interaction but the study has {} factor(s)", p.finding_id, spec.factors.len()),
            ));
        }
        if p.test == TestKind::Chi2 {
            let dv_measure = spec.measures.iter().find(|m| m.measure_id == p.dv);
            if let Some(m) = dv_measure {
                if !matches!(m.response_type, ResponseType::Choice { .. }) {
                    out.push(Violation::new(
                        "CHI2_NEEDS_CHOICE_DV",
                        &path,
                        format!("finding {:?} uses chi2 on a non-choice measure {:?}", p.finding_id, p.dv),
                    ));
                }
            }
        }
        if !factor_names.contains(p.direction_convention.factor.as_str()) {
            out.push(Violation::new(
                "DANGLING_REFERENCE",
                &path,
                format!("direction convention references unknown factor {:?}", p.direction_convention.factor),
            ));
        }
        if let Some(sign) = p.original.direction_sign {
            if sign != 1 && sign != -1 {
                out.push(Violation::new(
                    "BAD_DIRECTION_SIGN",
                    &path,
                    format!("direction_sign must be -1 or +1, got {sign}"),
                ));
            }
        }
    }

    if let Some(check) = &spec.manipulation_check {
        if !measure_ids.contains(check.measure_id.as_str()) {
            out.push(Violation::new(
                "DANGLING_REFERENCE",
                "manipulation_check",
                format!("manipulation check references unknown measure {:?}", check.measure_id),
            ));
        }
        if !(0.0 < check.alpha && check.alpha < 1.0) {
            out.push(Violation::new(
                "BAD_ALPHA",
                "manipulation_check",
                format!("alpha {} outside (0, 1)", check.alpha),
            ));
        }
    }

    out
}

/// Runnability check. Includes all type invariants plus design rules
/// (a real manipulation, resolvable attachments, resolvable template
/// placeholders).
pub fn validate_study_spec(spec: &StudySpec) -> Vec<Violation> {
    validate_study_spec_at(spec, None)
}

/// Like [`validate_study_spec`], resolving attachment paths relative to
/// `base_dir` when given.
pub fn validate_study_spec_at(spec: &StudySpec, base_dir: Option<&Path>) -> Vec<Violation> {
    let mut out = structural_violations(spec);

    if spec.conditions.len() < 2 {
        out.push(Violation::new(
            "NO_MANIPULATION",
            "conditions",
            format!("a true experiment needs >= 2 conditions, got {}", spec.conditions.len()),
        ));
    }

    for (i, c) in spec.conditions.iter().enumerate() {
        for (j, s) in c.stimuli.iter().enumerate() {
            if let StimulusPayload::Attachment(path) = &s.payload {
                let resolved = match base_dir {
                    Some(dir) => dir.join(path),
                    None => Path::new(path).to_path_buf(),
                };
                if !resolved.exists() {
                    out.push(Violation::new(
                        "UNRESOLVED_ATTACHMENT",
                        format!("conditions[{i}].stimuli[{j}]"),
                        format!("attachment {path:?} not found"),
                    ));
                }
            }
        }
    }

    let attr_names: BTreeSet<&str> = spec
        .sample
        .attributes
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    for placeholder in crate::persona::template_placeholders(&spec.sample.description_template) {
        if !attr_names.contains(placeholder.as_str()) {
            out.push(Violation::new(
                "DANGLING_REFERENCE",
                "sample.description_template",
                format!("template references unknown attribute {placeholder:?}"),
            ));
        }
    }

    out
}

/// Serialize a spec back to JSON (round-trip stable with
/// [`parse_study_spec`]).
pub fn serialize_study_spec(spec: &StudySpec) -> String {
    serde_json::to_string_pretty(spec).expect("study spec serializes")
}
