use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::gateway::{FixtureEntry, FixtureStore, MockBackend};

fn stats(s_min: f64, s_mean: f64) -> TokenStats {
    TokenStats {
        s_min,
        s_mean,
        count: 3,
    }
}

fn post(entries: Vec<FixtureEntry>) -> PostAnswer {
    let gw = Gateway::with_default_templates(Arc::new(MockBackend::new(
        FixtureStore::from_entries(entries).unwrap(),
    )));
    PostAnswer::new(Arc::new(gw), VerifierConfig::default())
}

fn parts(answer: &str, probs: &[f64]) -> AnswerParts {
    AnswerParts {
        reason: "because".into(),
        answer: answer.into(),
        stats: TokenStats::from_probs(probs),
    }
}

#[test]
fn stats_arithmetic() {
    let s = TokenStats::from_probs(&[0.5, 1.0, 0.9]).unwrap();
    assert_eq!(s.s_min, 0.5);
    assert!((s.s_mean - 0.8).abs() < 1e-12);
}

#[test]
fn white_box_examples() {
    let cfg = VerifierConfig {
        w_min: 0.5,
        w_mean: 0.5,
        tau_white: 0.9,
    };
    assert!(white_box_verify(&stats(1.0, 1.0), &cfg));
    assert!((white_box_score(&stats(0.5, 0.8), &cfg) - 0.65).abs() < 1e-12);
    assert!(!white_box_verify(&stats(0.5, 0.8), &cfg));
    let open = VerifierConfig {
        tau_white: 0.0,
        ..cfg
    };
    assert!(white_box_verify(&stats(0.01, 0.02), &open));
}

#[test]
fn verdict_parsing() {
    assert_eq!(
        parse_verdict("**Reason:** Supported.\n**Response:** Correct Answer"),
        Verdict::Correct
    );
    assert_eq!(
        parse_verdict("**Reason:** No support.\n**Response:** Incorrect Answer"),
        Verdict::Incorrect
    );
    assert_eq!(parse_verdict("lorem ipsum"), Verdict::Incorrect);
    assert_eq!(parse_verdict("**Response:** maybe"), Verdict::Incorrect);
}

#[test]
fn answer_parsing() {
    let (r, a) = parse_answer("reason: The sign reads OPEN.\nanswer: It says OPEN.");
    assert_eq!(
        (r.as_str(), a.as_str()),
        ("The sign reads OPEN.", "It says OPEN.")
    );
    let (r, a) = parse_answer("- **reason:** I don't know.\n- **answer:** Probably 1990.");
    assert_eq!(r, "I don't know.");
    assert_eq!(a, FALLBACK_ANSWER);
    let (r, a) = parse_answer("Just 42");
    assert_eq!((r.as_str(), a.as_str()), ("", "Just 42"));
}

#[test]
fn finalize_truth_table() {
    for (white, verdict, accepted) in [
        (true, Verdict::Correct, true),
        (true, Verdict::Incorrect, false),
        (false, Verdict::Correct, false),
        (false, Verdict::Incorrect, false),
    ] {
        let v = finalize(parts("Paris", &[0.9]), white, verdict);
        assert_eq!(v.fallback, !accepted);
        assert_eq!(
            v.final_answer,
            if accepted { "Paris" } else { FALLBACK_ANSWER }
        );
    }
}

#[test]
fn generate_and_verify_through_gateway() {
    let p = post(vec![
        FixtureEntry::new(
            templates::POST_ANSWER,
            "k",
            "reason: Evidence names the founder.\nanswer: Jane Roe founded it.",
            vec![0.95, 0.9, 0.99],
        ),
        FixtureEntry::new(
            templates::VERIFIER,
            "k",
            "**Reason:** Supported.\n**Response:** Correct Answer",
            vec![0.9],
        ),
    ]);
    let ctx = CallContext::new("k");
    let ev = AssembledContext {
        text: "[web:w]\nJane Roe founded the cafe.".into(),
        chunks: Vec::new(),
    };
    let img = ImageRef::new("i");
    let g = p
        .generate_answer(&ctx, "Who founded this cafe?", Some(&img), &ev)
        .unwrap();
    assert_eq!(g.answer, "Jane Roe founded it.");
    let v = p.verify(&ctx, "Who founded this cafe?", Some(&img), &ev, g);
    assert!(!v.fallback && v.white_box_pass);
    assert_eq!(v.final_answer, "Jane Roe founded it.");
}

#[test]
fn missing_verifier_fixture_is_incorrect() {
    let p = post(vec![]);
    let ctx = CallContext::new("k");
    let v = p.verify(
        &ctx,
        "q",
        Some(&ImageRef::new("i")),
        &AssembledContext::default(),
        parts("x", &[1.0]),
    );
    assert_eq!(v.model_verdict, Verdict::Incorrect);
    assert!(v.fallback);
}

proptest! {
    #[test]
    fn white_box_monotone(a in 0.01f64..1.0, b in 0.01f64..1.0, da in 0.0f64..0.5, db in 0.0f64..0.5,
                          w1 in 0.0f64..1.0, w2 in 0.0f64..1.0, tau in 0.0f64..1.0) {
        let cfg = VerifierConfig { w_min: w1, w_mean: w2, tau_white: tau };
        let lo = stats(a, b);
        let hi = stats(a + da, b + db);
        prop_assert!(white_box_score(&hi, &cfg) >= white_box_score(&lo, &cfg));
        if white_box_verify(&lo, &cfg) {
            prop_assert!(white_box_verify(&hi, &cfg));
        }
    }

    #[test]
    fn fallback_iff_not_both(white in any::<bool>(), correct in any::<bool>()) {
        let verdict = if correct { Verdict::Correct } else { Verdict::Incorrect };
        let v = finalize(parts("a", &[0.5]), white, verdict);
        prop_assert_eq!(v.fallback, !(white && correct));
        if v.fallback {
            prop_assert_eq!(v.final_answer.as_str(), FALLBACK_ANSWER);
        }
    }
}
