//! Persona population generation: deterministic quota sampling, condition
//! assignment, description rendering, and blinded prompt construction.
//!
//! Everything here is a pure function of (inputs, seed). Per-persona random
//! streams are derived from (seed, attribute, persona index) so parallel
//! generation equals sequential generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::study::{
    Condition, Distribution, Measure, ResponseType, SampleSpec, StimulusPayload, StudySpec,
};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("template references missing attribute {0:?}")]
    MissingAttribute(String),
    #[error("blinding violation: prompt would contain forbidden substring {0:?}")]
    BlindingViolation(String),
    #[error("persona {0} is not assigned to a condition")]
    Unassigned(u32),
    #[error("persona {persona} assigned to unknown condition {condition:?}")]
    UnknownCondition { persona: u32, condition: String },
}

/// One virtual participant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Persona {
    pub persona_id: u32,
    pub attributes: BTreeMap<String, AttrValue>,
    pub description: String,
    /// Set by [`assign_conditions`].
    pub condition_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AttrValue {
    Text(String),
    Int(i64),
    Real(f64),
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Text(s) => write!(f, "{s}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Real(v) => write!(f, "{v}"),
        }
    }
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Real(v) => Some(*v),
            AttrValue::Text(_) => None,
        }
    }
}

/// Three-part prompt: embodiment, stimuli, then questions. The blind list
/// holds substrings that must never appear in any prompt text.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptBundle {
    pub system_instructions: String,
    pub stimulus_block: Vec<String>,
    pub question_block: Vec<String>,
    pub blind_list: BTreeSet<String>,
}

impl PromptBundle {
    /// All prompt text in presentation order.
    pub fn full_text(&self) -> String {
        let mut parts = vec![self.system_instructions.clone()];
        parts.extend(self.stimulus_block.iter().cloned());
        parts.extend(self.question_block.iter().cloned());
        parts.join("\n\n")
    }

    /// The user-facing message (stimuli followed by questions).
    pub fn user_text(&self) -> String {
        let mut parts: Vec<String> = self.stimulus_block.clone();
        parts.extend(self.question_block.iter().cloned());
        parts.join("\n\n")
    }
}

/// Derive an RNG from a base seed and a sequence of context tags. The
/// digest-based derivation keeps streams independent and platform-stable.
pub(crate) fn derive_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for tag in tags {
        hasher.update([0u8]);
        hasher.update(tag.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw (Box-Muller) from the given stream.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate `n` personas matching the sample spec.
///
/// Categorical attributes are realized by exact largest-remainder quotas
/// (ties broken by value lexical order) and then deterministically
/// shuffled; numeric attributes are drawn from per-persona streams.
pub fn sample_personas(sample: &SampleSpec, n: u32, seed: u64) -> Result<Vec<Persona>, PersonaError> {
    let n = n as usize;
    let mut columns: BTreeMap<String, Vec<AttrValue>> = BTreeMap::new();

    for attr in &sample.attributes {
        let values: Vec<AttrValue> = match &attr.distribution {
            Distribution::Categorical { weights } => {
                let mut col: Vec<AttrValue> = largest_remainder_quota(weights, n)
                    .into_iter()
                    .flat_map(|(value, count)| {
                        std::iter::repeat(AttrValue::Text(value)).take(count)
                    })
                    .collect();
                let mut rng = derive_rng(seed, &["cat", &attr.name]);
                col.shuffle(&mut rng);
                col
            }
            Distribution::NumericUniform {
                lo,
                hi,
                integer_valued,
            } => (0..n)
                .map(|i| {
                    let mut rng = derive_rng(seed, &["num", &attr.name, &i.to_string()]);
                    if *integer_valued {
                        AttrValue::Int(rng.gen_range(lo.round() as i64..=hi.round() as i64))
                    } else if lo == hi {
                        AttrValue::Real(*lo)
                    } else {
                        AttrValue::Real(rng.gen_range(*lo..*hi))
                    }
                })
                .collect(),
            Distribution::NumericEmpirical { values } => {
                let total: f64 = values.iter().map(|v| v.weight).sum();
                (0..n)
                    .map(|i| {
                        let mut rng = derive_rng(seed, &["emp", &attr.name, &i.to_string()]);
                        let mut target: f64 = rng.gen_range(0.0..total);
                        let mut picked = values[values.len() - 1].value;
                        for v in values {
                            if target < v.weight {
                                picked = v.value;
                                break;
                            }
                            target -= v.weight;
                        }
                        if picked.fract() == 0.0 {
                            AttrValue::Int(picked as i64)
                        } else {
                            AttrValue::Real(picked)
                        }
                    })
                    .collect()
            }
        };
        columns.insert(attr.name.clone(), values);
    }

    let mut personas = Vec::with_capacity(n);
    for i in 0..n {
        let attributes: BTreeMap<String, AttrValue> = columns
            .iter()
            .map(|(name, col)| (name.clone(), col[i].clone()))
            .collect();
        let description = render_persona_description(&attributes, &sample.description_template)?;
        personas.push(Persona {
            persona_id: i as u32,
            attributes,
            description,
            condition_id: None,
        });
    }
    Ok(personas)
}

/// Exact apportionment of `n` slots to weighted values: floor(n*w) each,
/// remainders distributed by descending fractional part, ties by lexical
/// order of the value.
fn largest_remainder_quota(weights: &BTreeMap<String, f64>, n: usize) -> Vec<(String, usize)> {
    let mut rows: Vec<(String, usize, f64)> = weights
        .iter()
        .map(|(value, w)| {
            let exact = n as f64 * w;
            (value.clone(), exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = rows.iter().map(|r| r.1).sum();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    // BTreeMap iteration is lexical, so stable sort by remainder keeps the
    // lexical tie-break.
    order.sort_by(|&a, &b| rows[b].2.partial_cmp(&rows[a].2).unwrap());
    for &idx in order.iter().take(n.saturating_sub(assigned)) {
        rows[idx].1 += 1;
    }
    rows.into_iter().map(|(v, c, _)| (v, c)).collect()
}

/// Balanced deterministic assignment: condition counts differ by at most 1.
pub fn assign_conditions(
    personas: Vec<Persona>,
    conditions: &[Condition],
    seed: u64,
) -> Vec<Persona> {
    assert!(!conditions.is_empty(), "need at least one condition");
    let n = personas.len();
    let mut slots: Vec<&str> = (0..n)
        .map(|i| conditions[i % conditions.len()].condition_id.as_str())
        .collect();
    let mut rng = derive_rng(seed, &["assign"]);
    slots.shuffle(&mut rng);
    personas
        .into_iter()
        .zip(slots)
        .map(|(mut p, c)| {
            p.condition_id = Some(c.to_string());
            p
        })
        .collect()
}

/// Names referenced by `{name}` placeholders in a template.
pub fn template_placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + end];
                if !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    out.push(name.to_string());
                }
                i += end + 2;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Substitute `{name}` placeholders with attribute values.
pub fn render_persona_description(
    attributes: &BTreeMap<String, AttrValue>,
    template: &str,
) -> Result<String, PersonaError> {
    let mut rendered = template.to_string();
    for name in template_placeholders(template) {
        let value = attributes
            .get(&name)
            .ok_or_else(|| PersonaError::MissingAttribute(name.clone()))?;
        rendered = rendered.replace(&format!("{{{name}}}"), &value.to_string());
    }
    Ok(rendered)
}

/// The response-format directive appended to each measure prompt so answers
/// are machine-parseable.
pub fn response_directive(index: usize, measure: &Measure) -> String {
    match &measure.response_type {
        ResponseType::Likert {
            min,
            max,
            low_anchor,
            high_anchor,
        } => format!(
            "Answer with a single integer from {min} ({low_anchor}) to {max} ({high_anchor}), on its own line in the form \"Q{index}: <integer>\"."
        ),
        ResponseType::NumericOpen { units, min, max } => {
            let mut bounds = String::new();
            if let Some(lo) = min {
                bounds.push_str(&format!(" no less than {lo}"));
            }
            if let Some(hi) = max {
                if min.is_some() {
                    bounds.push_str(" and");
                }
                bounds.push_str(&format!(" no more than {hi}"));
            }
            format!(
                "Answer with a single number in {units}{bounds}, on its own line in the form \"Q{index}: <number>\"."
            )
        }
        ResponseType::Choice { options } => format!(
            "Answer with the number of your chosen option (1-{}), on its own line in the form \"Q{index}: <number>\".",
            options.len()
        ),
        ResponseType::FreeText => format!(
            "Answer in one or two sentences on a single line in the form \"Q{index}: <your answer>\"."
        ),
    }
}

/// Build the three-part prompt for one assigned persona. Enforces blinding:
/// no token derived from the study's source label may appear anywhere.
pub fn build_prompt(
    persona: &Persona,
    condition: &Condition,
    measures: &[Measure],
    study: &StudySpec,
) -> Result<PromptBundle, PersonaError> {
    let assigned = persona
        .condition_id
        .as_deref()
        .ok_or(PersonaError::Unassigned(persona.persona_id))?;
    if assigned != condition.condition_id {
        return Err(PersonaError::UnknownCondition {
            persona: persona.persona_id,
            condition: assigned.to_string(),
        });
    }

    let system_instructions = format!(
        "You are taking part in a consumer survey. Embody the following person and answer \
         every question exactly as they would, staying in character throughout: {}.",
        persona.description
    );

    let mut stimulus_block = Vec::new();
    for s in &condition.stimuli {
        let mut text = match (&s.kind, &s.payload) {
            (_, StimulusPayload::Inline(t)) => t.clone(),
            (kind, StimulusPayload::Attachment(path)) => {
                format!("[{} attachment: {path}]", kind_label(kind))
            }
        };
        if let Some(caption) = &s.caption {
            text.push_str(&format!("\n({caption})"));
        }
        stimulus_block.push(text);
    }

    let question_block: Vec<String> = measures
        .iter()
        .enumerate()
        .map(|(i, m)| {
            format!(
                "Q{n}: {prompt}\n{directive}",
                n = i + 1,
                prompt = m.prompt_text,
                directive = response_directive(i + 1, m)
            )
        })
        .collect();

    let blind_list = blind_list_for(study);
    let bundle = PromptBundle {
        system_instructions,
        stimulus_block,
        question_block,
        blind_list,
    };

    let haystack = bundle.full_text().to_lowercase();
    for token in &bundle.blind_list {
        if haystack.contains(&token.to_lowercase()) {
            return Err(PersonaError::BlindingViolation(token.clone()));
        }
    }
    Ok(bundle)
}

fn kind_label(kind: &crate::study::StimulusKind) -> &'static str {
    match kind {
        crate::study::StimulusKind::Text => "text",
        crate::study::StimulusKind::Image => "image",
        crate::study::StimulusKind::Video => "video",
    }
}

/// Forbidden substrings derived from provenance metadata: the whole source
/// label plus each comma- or semicolon-separated part of nontrivial length.
pub fn blind_list_for(study: &StudySpec) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if let Some(label) = &study.source_label {
        let trimmed = label.trim();
        if !trimmed.is_empty() {
            out.insert(trimmed.to_string());
            for part in trimmed.split([',', ';']) {
                let part = part.trim();
                if part.len() >= 4 {
                    out.insert(part.to_string());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::AttributeSpec;

    fn categorical(name: &str, pairs: &[(&str, f64)]) -> AttributeSpec {
        AttributeSpec {
            name: name.to_string(),
            distribution: Distribution::Categorical {
                weights: pairs
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
            },
        }
    }

    fn sample_with(attrs: Vec<AttributeSpec>, template: &str) -> SampleSpec {
        SampleSpec {
            attributes: attrs,
            description_template: template.to_string(),
        }
    }

    #[test]
    fn n_zero_gives_empty_population() {
        let sample = sample_with(vec![], "someone");
        assert!(sample_personas(&sample, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn degenerate_distribution_is_constant() {
        let sample = sample_with(vec![categorical("gender", &[("female", 1.0)])], "{gender}");
        let personas = sample_personas(&sample, 5, 7).unwrap();
        assert_eq!(personas.len(), 5);
        assert!(personas
            .iter()
            .all(|p| p.attributes["gender"] == AttrValue::Text("female".into())));
    }

    #[test]
    fn half_half_at_362_splits_exactly() {
        let sample = sample_with(
            vec![categorical("gender", &[("female", 0.5), ("male", 0.5)])],
            "{gender}",
        );
        let personas = sample_personas(&sample, 362, 42).unwrap();
        let female = personas
            .iter()
            .filter(|p| p.attributes["gender"] == AttrValue::Text("female".into()))
            .count();
        assert_eq!(female, 181);
    }

    #[test]
    fn quota_ties_break_lexically() {
        // three values at 1/3 with n=4: one remainder slot, lexically first value wins
        let sample = sample_with(
            vec![categorical(
                "v",
                &[("a", 1.0 / 3.0), ("b", 1.0 / 3.0), ("c", 1.0 / 3.0)],
            )],
            "{v}",
        );
        let personas = sample_personas(&sample, 4, 3).unwrap();
        let count = |x: &str| {
            personas
                .iter()
                .filter(|p| p.attributes["v"] == AttrValue::Text(x.into()))
                .count()
        };
        assert_eq!((count("a"), count("b"), count("c")), (2, 1, 1));
    }

    #[test]
    fn sampling_is_deterministic() {
        let sample = sample_with(
            vec![
                categorical("gender", &[("female", 0.6), ("male", 0.4)]),
                AttributeSpec {
                    name: "age".into(),
                    distribution: Distribution::NumericUniform {
                        lo: 18.0,
                        hi: 65.0,
                        integer_valued: true,
                    },
                },
            ],
            "{age}-year-old {gender}",
        );
        let a = sample_personas(&sample, 50, 99).unwrap();
        let b = sample_personas(&sample, 50, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_personas(&sample, 50, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_assignment_counts() {
        let conditions: Vec<Condition> = ["x", "y", "z"]
            .iter()
            .map(|id| Condition {
                condition_id: id.to_string(),
                level_assignment: BTreeMap::new(),
                stimuli: vec![],
            })
            .collect();
        let personas: Vec<Persona> = (0..7)
            .map(|i| Persona {
                persona_id: i,
                attributes: BTreeMap::new(),
                description: String::new(),
                condition_id: None,
            })
            .collect();
        let assigned = assign_conditions(personas.clone(), &conditions, 5);
        let mut counts: Vec<usize> = ["x", "y", "z"]
            .iter()
            .map(|id| {
                assigned
                    .iter()
                    .filter(|p| p.condition_id.as_deref() == Some(id))
                    .count()
            })
            .collect();
        counts.sort();
        assert_eq!(counts, vec![2, 2, 3]);
        // determinism
        let again = assign_conditions(personas, &conditions, 5);
        assert_eq!(assigned, again);
    }

    #[test]
    fn renders_the_managerial_description() {
        let mut attributes = BTreeMap::new();
        attributes.insert("age".into(), AttrValue::Int(45));
        attributes.insert("gender".into(), AttrValue::Text("woman".into()));
        attributes.insert("tenure".into(), AttrValue::Int(20));
        attributes.insert("industry".into(), AttrValue::Text("manufacturing".into()));
        let rendered = render_persona_description(
            &attributes,
            "{age}-year-old {gender} with {tenure} years of managerial experience in the {industry} industry",
        )
        .unwrap();
        assert_eq!(
            rendered,
            "45-year-old woman with 20 years of managerial experience in the manufacturing industry"
        );
    }

    #[test]
    fn empty_template_renders_empty() {
        assert_eq!(
            render_persona_description(&BTreeMap::new(), "").unwrap(),
            ""
        );
    }

    #[test]
    fn missing_attribute_is_named() {
        let err = render_persona_description(&BTreeMap::new(), "a {ghost}").unwrap_err();
        assert!(matches!(err, PersonaError::MissingAttribute(name) if name == "ghost"));
    }
}
