use super::*;
use proptest::prelude::*;

fn class(s: &str) -> InstructionClass {
    s.parse().unwrap()
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize("Take a right."), vec!["take", "a", "right"]);
    assert_eq!(normalize("STOP!"), vec!["stop"]);
    assert!(normalize("").is_empty());
    assert_eq!(normalize("There's a stop-sign"), vec!["theres", "a", "stop", "sign"]);
}

#[test]
fn classify_examples() {
    let c = RuleClassifier;
    let r = c.classify("take a right");
    assert_eq!(r.class, class("Action/TurnRight"));
    assert!(r.confidence >= 0.9);
    assert_eq!(c.classify("yeah, you are doing well").class, class("Reward/Great"));
    assert_eq!(
        c.classify("there's a stop sign so we have to stop").class,
        class("Action/Stop")
    );
    assert_eq!(c.classify("the weather is nice").class, InstructionClass::Unrecognized);
}

#[test]
fn every_table_row_classifies_to_its_label() {
    let c = RuleClassifier;
    for row in table1_corpus() {
        assert_eq!(c.classify(&row.text).class, row.label, "{:?}", row.text);
    }
}

#[test]
fn right_is_not_always_a_direction() {
    let c = RuleClassifier;
    assert_eq!(c.classify("All right. It's ok.").class, class("Reward/Good"));
    assert_eq!(c.classify("that's not right").class, class("Reward/Bad"));
    assert_eq!(c.classify("stop right here").class, class("Action/Stop"));
    assert_eq!(c.classify("there's a truck on the left").class, InstructionClass::State);
}

#[test]
fn negation_flips_praise_and_suppresses_commands() {
    let c = RuleClassifier;
    assert_eq!(c.classify("not good").class, class("Reward/Bad"));
    assert_eq!(c.classify("not bad").class, class("Reward/Good"));
    assert_eq!(c.classify("no need to stop").class, InstructionClass::Reasoning);
}

#[test]
fn directive_mapping() {
    let d = to_directive(class("Action/TurnLeft"), 1.0);
    assert_eq!(
        d,
        Directive::ActionOverride {
            action: ActionOverride {
                steer_set: Some(-0.2),
                ..Default::default()
            },
            duration: 1.0,
        }
    );
    assert_eq!(
        to_directive(class("Reward/Terrible"), 1.0),
        Directive::HumanReward { reward: -30.0 }
    );
    assert_eq!(to_directive(InstructionClass::Reasoning, 1.0), Directive::Informational);

    let expected = [
        ("Action/GoStraight", "steer=0 for 1s"),
        ("Action/TurnRight", "steer=0.2 for 1s"),
        ("Action/SpeedUp", "throttle+0.15 for 1s"),
        ("Action/SlowDown", "throttle-0.15 for 1s"),
        ("Action/Stop", "brake=1 for 1s"),
        ("Reward/Great", "r_h=+30"),
        ("Reward/Good", "r_h=+10"),
        ("Reward/Bad", "r_h=-10"),
        ("Reward/Mistake", "r_h=-30"),
        ("Reward/Accident", "r_h=-30"),
        ("State", "informational"),
        ("Unrecognized", "informational"),
    ];
    for (c, summary) in expected {
        assert_eq!(to_directive(class(c), 1.0).summary(), summary, "{c}");
    }
}

#[test]
fn directives_are_exhaustive_and_valid() {
    for c in InstructionClass::ALL {
        let d = to_directive(c, 1.0);
        assert!(d.is_valid(), "{c}: {d:?}");
        let informational = matches!(d, Directive::Informational);
        assert_eq!(informational, !matches!(c.top(), TopClass::Action | TopClass::Reward));
    }
}

#[test]
fn class_serde_shape() {
    let json = serde_json::to_string(&class("Action/SpeedUp")).unwrap();
    assert_eq!(json, r#"{"top":"Action","sub":"SpeedUp"}"#);
    assert_eq!(
        serde_json::to_string(&InstructionClass::State).unwrap(),
        r#"{"top":"State"}"#
    );
    assert!(serde_json::from_str::<InstructionClass>(r#"{"top":"State","sub":"Great"}"#).is_err());
    assert!(serde_json::from_str::<InstructionClass>(r#"{"top":"Action"}"#).is_err());
}

#[test]
fn evaluate_counts() {
    let mut corpus = table1_corpus();
    let report = evaluate_classifier(&corpus, &RuleClassifier).unwrap();
    assert_eq!(report.accuracy, 1.0);

    corpus[0].label = class("Reward/Bad");
    let n = corpus.len();
    let report = evaluate_classifier(&corpus, &RuleClassifier).unwrap();
    assert_eq!(report.correct, n - 1);
    assert_eq!(report.accuracy, (n - 1) as f64 / n as f64);
    let trace: usize = (0..report.labels.len()).map(|i| report.confusion[i][i]).sum();
    assert_eq!(trace, report.correct);
    assert_eq!(report.errors.len(), 1);

    assert!(matches!(
        evaluate_classifier(&[], &RuleClassifier),
        Err(Error::EmptyCorpus)
    ));
}

#[test]
fn corpus_rejects_empty_text() {
    let bad = "{\"text\":\"stop\",\"top\":\"Action\",\"sub\":\"Stop\"}\n{\"text\":\"  \",\"top\":\"State\"}\n";
    assert!(matches!(
        parse_corpus(bad.as_bytes()),
        Err(Error::Corpus { line: 2, .. })
    ));
}

proptest! {
    #[test]
    fn classification_is_total_and_deterministic(text in "\\PC{0,60}") {
        let a = RuleClassifier.classify(&text);
        let b = RuleClassifier.classify(&text);
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a.confidence));
    }
}

#[test]
fn paraphrase_accuracy() {
    let report = evaluate_classifier(&paraphrase_corpus(), &RuleClassifier).unwrap();
    for e in &report.errors {
        eprintln!("{:?}: expected {} got {}", e.text, e.expected, e.predicted);
    }
    assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
}
