use super::wire::*;
use super::*;
use crate::instruction::{ActionKind, InstructionClass, RewardKind};

#[test]
fn phase_transitions() {
    use ControlCommand::*;
    assert_eq!(Phase::Training.apply(Pause).unwrap(), Phase::Paused);
    assert_eq!(Phase::Paused.apply(Resume).unwrap(), Phase::Training);
    assert_eq!(Phase::Idle.apply(Resume).unwrap(), Phase::Training);
    assert_eq!(Phase::Training.apply(Stop).unwrap(), Phase::Done);
    assert_eq!(Phase::Paused.apply(Stop).unwrap(), Phase::Done);
    for (from, cmd) in [
        (Phase::Done, Pause),
        (Phase::Done, Resume),
        (Phase::Done, Stop),
        (Phase::Paused, Pause),
        (Phase::Training, Resume),
        (Phase::Idle, Pause),
    ] {
        assert!(
            matches!(from.apply(cmd), Err(Error::IllegalTransition { .. })),
            "{from:?} + {cmd:?}"
        );
    }
}

fn text(t: &str) -> InstructionPayload {
    InstructionPayload {
        text: Some(t.into()),
        ..Default::default()
    }
}

#[test]
fn slow_down_lowers_throttle() {
    let (_, c) = intake(&text("slow down")).unwrap();
    assert_eq!(c.class, InstructionClass::Action(ActionKind::SlowDown));
    let d = to_directive(c.class, 1.0);
    let Directive::ActionOverride { action, .. } = d else {
        panic!("{d:?}")
    };
    assert_eq!(action.throttle_delta, Some(-0.15));
}

#[test]
fn what_are_you_doing_is_terrible() {
    let (_, c) = intake(&text("what are you doing?")).unwrap();
    assert_eq!(c.class, InstructionClass::Reward(RewardKind::Terrible));
    assert_eq!(to_directive(c.class, 1.0), Directive::HumanReward { reward: -30.0 });
}

#[test]
fn gibberish_is_informational() {
    let (_, c) = intake(&text("hmm interesting")).unwrap();
    assert_eq!(c.class, InstructionClass::Unrecognized);
    assert_eq!(to_directive(c.class, 1.0), Directive::Informational);
}

#[test]
fn empty_text_is_rejected() {
    assert!(intake(&text("   ")).is_err());
    assert!(intake(&InstructionPayload::default()).is_err());
}

#[test]
fn button_class_beats_text() {
    let p = InstructionPayload {
        text: None,
        class: Some(InstructionClass::Reward(RewardKind::Great)),
        client_sent_ms: None,
    };
    let (label, c) = intake(&p).unwrap();
    assert_eq!(c.class, InstructionClass::Reward(RewardKind::Great));
    assert_eq!(c.confidence, 1.0);
    assert_eq!(label, "Reward/Great");
}

#[test]
fn wire_round_trip() {
    let msg = WireMessage::new(
        MessageType::Control,
        4,
        120,
        &ControlPayload {
            command: ControlCommand::Pause,
        },
    )
    .unwrap();
    let text = msg.to_text();
    assert_eq!(
        text,
        r#"{"type":"control","seq":4,"ts":120,"payload":{"command":"pause"}}"#
    );
    assert_eq!(WireMessage::parse(&text).unwrap(), msg);
}

#[test]
fn unknown_and_malformed_frames_are_rejected() {
    for bad in [
        r#"{"type":"dance","seq":1,"ts":0,"payload":{}}"#,
        r#"{"type":"control","seq":1,"ts":0}"#,
        r#"{"type":"control","seq":1,"ts":0,"payload":{},"extra":1}"#,
        "not json",
    ] {
        assert!(matches!(WireMessage::parse(bad), Err(Error::Protocol(_))), "{bad}");
    }
    let msg = WireMessage::parse(r#"{"type":"instruction","seq":1,"ts":0,"payload":{"txt":"hi"}}"#).unwrap();
    assert!(msg.payload_as::<InstructionPayload>().is_err());
}

#[test]
fn instruction_payload_parses_button_classes() {
    let msg = WireMessage::parse(
        r#"{"type":"instruction","seq":2,"ts":5,"payload":{"class":{"top":"Action","sub":"TurnLeft"}}}"#,
    )
    .unwrap();
    let p: InstructionPayload = msg.payload_as().unwrap();
    assert_eq!(p.class, Some(InstructionClass::Action(ActionKind::TurnLeft)));
}

#[test]
fn only_instruction_and_control_come_from_clients() {
    for t in [MessageType::Instruction, MessageType::Control] {
        assert!(t.from_client());
    }
    for t in [
        MessageType::Hello,
        MessageType::State,
        MessageType::EpochMetrics,
        MessageType::InstructionAck,
        MessageType::Error,
    ] {
        assert!(!t.from_client());
    }
}

#[test]
fn newer_state_replaces_unsent_state() {
    let c = Client {
        id: 0,
        outbox: Mutex::new(VecDeque::new()),
    };
    let f = |kind, n: u64| Frame {
        kind,
        ts: n,
        payload: serde_json::Value::Null,
    };
    c.push(f(MessageType::State, 1));
    c.push(f(MessageType::EpochMetrics, 2));
    c.push(f(MessageType::State, 3));
    c.push(f(MessageType::InstructionAck, 4));
    c.push(f(MessageType::State, 5));
    let q: Vec<(MessageType, u64)> = lock(&c.outbox).iter().map(|f| (f.kind, f.ts)).collect();
    assert_eq!(
        q,
        vec![
            (MessageType::EpochMetrics, 2),
            (MessageType::InstructionAck, 4),
            (MessageType::State, 5)
        ]
    );
}

#[test]
fn live_service_needs_live_coach() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    assert!(matches!(
        LiveSession::start(cfg, dir.path(), "127.0.0.1:0"),
        Err(Error::Config(_))
    ));
}
