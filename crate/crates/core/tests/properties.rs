//! Cross-module integration and property tests for the core library.

use std::collections::BTreeMap;

use proptest::prelude::*;
use replab_core::gateway::{SimulatedProvider, SimulatedRespondentModel};
use replab_core::orchestrator::RunLedger;
use replab_core::stats::{chi2_p_upper, f_p_upper, t_p_two_sided};
use replab_core::{
    assign_conditions, build_dataset, execute_run, ols_fit, parse_study_spec, sample_personas,
    serialize_study_spec, AttrValue, Distribution, ProviderConfig, StudySpec,
};

// ---------------------------------------------------------------------------
// OLS against a frozen external fixture
// ---------------------------------------------------------------------------

#[test]
fn ols_matches_frozen_reference_fit() {
    let x1 = [
        3.745401, 9.507143, 7.319939, 5.986585, 1.560186, 1.559945, 0.580836, 8.661761, 6.01115,
        7.080726, 0.205845, 9.699099, 8.324426, 2.123391, 1.81825, 1.834045, 3.042422, 5.247564,
        4.31945, 2.912291,
    ];
    let x2 = [
        1.118529, -3.605061, -2.078554, -1.336382, -0.4393, 2.85176, -3.003262, 0.142344,
        0.924146, -4.535496, 1.075449, -3.294759, -4.349484, 4.488855, 4.65632, 3.083973,
        -1.953862, -4.023279, 1.84233, -0.598475,
    ];
    let y = [
        8.194335, 21.980118, 18.417411, 13.187793, 5.136747, 0.663989, 3.43577, 18.920743,
        13.613865, 19.007667, 1.043228, 22.903424, 19.71497, 1.884739, 1.416436, 4.066431,
        9.296167, 13.048384, 9.173353, 7.358433,
    ];
    let design: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, x1[i], x2[i]]).collect();
    let fit = ols_fit(&design, &y).unwrap();

    let expected_coef = [0.9048624440917967, 2.065105718849719, -0.5895411077051692];
    let expected_se = [
        0.40653327619475543,
        0.08218909836967124,
        0.08684865321495158,
    ];
    let expected_t = [
        2.2258016676064414,
        25.126272946337217,
        -6.788143349166821,
    ];
    let expected_p = [
        0.03984577166061829,
        6.982967359398477e-15,
        3.1639473835780923e-6,
    ];
    for j in 0..3 {
        let c = &fit.coefficients[j];
        assert!((c.estimate - expected_coef[j]).abs() < 1e-9, "coef {j}");
        assert!((c.se - expected_se[j]).abs() < 1e-9, "se {j}");
        assert!((c.t - expected_t[j]).abs() < 1e-7, "t {j}");
        assert!((c.p - expected_p[j]).abs() < 1e-12, "p {j}");
    }
    assert!((fit.residual_ss - 13.472212966968264).abs() < 1e-8);
    assert_eq!(fit.df_residual, 17.0);
}

// ---------------------------------------------------------------------------
// Orchestrator determinism: worker count must not affect the dataset
// ---------------------------------------------------------------------------

fn tiny_study() -> StudySpec {
    parse_study_spec(
        &serde_json::json!({
            "study_id": "tiny",
            "factors": [{"name": "f", "levels": ["a", "b"]}],
            "conditions": [
                {"condition_id": "A", "level_assignment": {"f": "a"},
                 "stimuli": [{"kind": "text", "payload": {"inline": "Variant one."}}]},
                {"condition_id": "B", "level_assignment": {"f": "b"},
                 "stimuli": [{"kind": "text", "payload": {"inline": "Variant two."}}]}
            ],
            "measures": [{
                "measure_id": "m1",
                "prompt_text": "Rate the product.",
                "response_type": {"likert": {"min": 1, "max": 7, "low_anchor": "low", "high_anchor": "high"}}
            }],
            "sample": {
                "attributes": [{"name": "age", "distribution": {"numeric_uniform": {"lo": 18.0, "hi": 70.0, "integer_valued": true}}}],
                "description_template": "a {age}-year-old shopper"
            },
            "n": 61,
            "analysis_plan": []
        })
        .to_string(),
    )
    .unwrap()
}

fn tiny_model() -> SimulatedRespondentModel {
    SimulatedRespondentModel {
        base_means: [("m1".to_string(), 4.0)].into(),
        condition_offsets: [(
            "m1".to_string(),
            [("f=a".to_string(), 0.7), ("f=b".to_string(), -0.7)].into(),
        )]
        .into(),
        attribute_modifiers: BTreeMap::new(),
        persona_noise_sd: 0.8,
        residual_noise_sd: 0.6,
    }
}

#[test]
fn dataset_is_independent_of_worker_count() {
    let study = tiny_study();
    let personas = assign_conditions(
        sample_personas(&study.sample, study.n, 5).unwrap(),
        &study.conditions,
        6,
    );
    let provider = SimulatedProvider {
        model: tiny_model(),
        seed: 7,
    };
    let dir = tempfile::tempdir().unwrap();

    let mut outputs = Vec::new();
    for parallel in [1usize, 3, 8] {
        let mut config = ProviderConfig::default();
        config.max_parallel = parallel;
        let path = dir.path().join(format!("l{parallel}.ndjson"));
        let mut ledger = RunLedger::open(&path).unwrap();
        execute_run(&study, &personas, &provider, &config, &mut ledger, "r").unwrap();
        let ledger = RunLedger::open(&path).unwrap();
        outputs.push(build_dataset(&study, &ledger.records_for("r")).to_csv(&study));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

// ---------------------------------------------------------------------------
// Property tests
// ---------------------------------------------------------------------------

proptest! {
    /// Quota sampling puts every categorical count within 1 of its target.
    #[test]
    fn quota_counts_within_one(
        raw_weights in proptest::collection::vec(1u32..100, 2..6),
        n in 5u32..300,
        seed in 0u64..1000,
    ) {
        let total: f64 = raw_weights.iter().map(|w| *w as f64).sum();
        let weights: BTreeMap<String, f64> = raw_weights
            .iter()
            .enumerate()
            .map(|(i, w)| (format!("v{i}"), *w as f64 / total))
            .collect();
        let spec = parse_study_spec(
            &serde_json::json!({
                "study_id": "q",
                "factors": [{"name": "f", "levels": ["a", "b"]}],
                "conditions": [
                    {"condition_id": "A", "level_assignment": {"f": "a"},
                     "stimuli": [{"kind": "text", "payload": {"inline": "One."}}]},
                    {"condition_id": "B", "level_assignment": {"f": "b"},
                     "stimuli": [{"kind": "text", "payload": {"inline": "Two."}}]}
                ],
                "measures": [{
                    "measure_id": "m1", "prompt_text": "Rate it.",
                    "response_type": {"likert": {"min": 1, "max": 7, "low_anchor": "low", "high_anchor": "high"}}
                }],
                "sample": {
                    "attributes": [{"name": "g", "distribution": {"categorical": {"weights": weights}}}],
                    "description_template": "a member of group {g}"
                },
                "n": n,
                "analysis_plan": []
            })
            .to_string(),
        )
        .unwrap();
        let personas = sample_personas(&spec.sample, n, seed).unwrap();
        prop_assert_eq!(personas.len(), n as usize);
        let Distribution::Categorical { weights } = &spec.sample.attributes[0].distribution else {
            unreachable!()
        };
        for (value, w) in weights {
            let count = personas
                .iter()
                .filter(|p| p.attributes["g"] == AttrValue::Text(value.clone()))
                .count();
            prop_assert!((count as f64 - n as f64 * w).abs() < 1.0);
        }
    }

    /// Condition assignment is balanced: group sizes differ by at most 1.
    #[test]
    fn condition_assignment_is_balanced(n in 4u32..200, seed in 0u64..1000) {
        let study = tiny_study();
        let mut personas = sample_personas(&study.sample, n, seed).unwrap();
        personas = assign_conditions(personas, &study.conditions, seed + 1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &personas {
            *counts.entry(p.condition_id.as_deref().unwrap()).or_default() += 1;
        }
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        prop_assert!(max - min <= 1);
    }

    /// Study specs survive a serialize/parse round trip.
    #[test]
    fn study_round_trips(n in 4u32..500, seed in 0u64..50) {
        let mut study = tiny_study();
        study.n = n;
        study.study_id = format!("round-{seed}");
        let json = serialize_study_spec(&study);
        let back = parse_study_spec(&json).unwrap();
        prop_assert_eq!(study, back);
    }

    /// Tail p-values stay in [0, 1] and decrease as the statistic grows.
    #[test]
    fn p_values_bounded_and_monotone(
        t in 0.0f64..50.0,
        df in 1.0f64..300.0,
        bump in 0.1f64..10.0,
    ) {
        let p1 = t_p_two_sided(t, df);
        let p2 = t_p_two_sided(t + bump, df);
        prop_assert!((0.0..=1.0).contains(&p1));
        prop_assert!(p2 <= p1 + 1e-12);

        let f1 = f_p_upper(t.max(1e-6), df.max(1.0), df);
        prop_assert!((0.0..=1.0).contains(&f1));

        let c1 = chi2_p_upper(t, df);
        let c2 = chi2_p_upper(t + bump, df);
        prop_assert!((0.0..=1.0).contains(&c1));
        prop_assert!(c2 <= c1 + 1e-12);
    }
}
