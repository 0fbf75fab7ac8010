//! Protocol-level tests against a running live session.

use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use drivecoach::jsonl::read_file;
use drivecoach::service::wire::{
    AckPayload, ErrorCode, ErrorPayload, HelloPayload, MessageType, StatePayload, WireMessage,
};
use drivecoach::service::{ControlCommand, LiveSession, Phase};
use drivecoach::trainer::{CoachMode, DirectiveEvent, DirectiveSource, RunConfig};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn live_config(step_hz: f64) -> RunConfig {
    let mut cfg = RunConfig {
        coach: CoachMode::Live,
        max_epochs: 50,
        coach_start_epoch: 1,
        // Long epochs keep the policy update out of the measured windows.
        trajectories_per_epoch: 50,
        horizon: Some(400),
        log_replay: false,
        ..RunConfig::default()
    };
    cfg.live.step_hz = step_hz;
    cfg
}

struct Coach {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Coach {
    fn connect(addr: SocketAddr) -> Self {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
        }
        Self { ws, seq: 0 }
    }

    fn send(&mut self, kind: &str, payload: Value) -> u64 {
        self.seq += 1;
        let frame = json!({"type": kind, "seq": self.seq, "ts": 0, "payload": payload});
        self.ws.send(Message::text(frame.to_string())).unwrap();
        self.seq
    }

    fn say(&mut self, text: &str) -> u64 {
        self.send("instruction", json!({ "text": text }))
    }

    /// Next frame, or None on timeout or close.
    fn recv(&mut self, timeout: Duration) -> Option<WireMessage> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            match self.ws.read() {
                Ok(Message::Text(t)) => return Some(WireMessage::parse(&t).unwrap()),
                Ok(Message::Close(_)) => return None,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(_) => return None,
            }
        }
        None
    }

    fn expect(&mut self, kind: MessageType, timeout: Duration) -> WireMessage {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if let Some(m) = self.recv(deadline - Instant::now()) {
                if m.kind == kind {
                    return m;
                }
            }
        }
        panic!("no {kind:?} frame within {timeout:?}");
    }

    /// True when the server closes the connection within the timeout.
    fn closed_within(&mut self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            match self.ws.read() {
                Ok(Message::Close(_)) => return true,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(_) => return true,
            }
        }
        false
    }
}

const WAIT: Duration = Duration::from_secs(10);

fn start(cfg: RunConfig) -> (LiveSession, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let session = LiveSession::start(cfg, &dir.path().join("live"), "127.0.0.1:0").unwrap();
    (session, dir)
}

fn finish(session: LiveSession) {
    let _ = session.control(ControlCommand::Stop);
    session.join().unwrap();
}

#[test]
fn hello_then_training_starts() {
    let (session, _dir) = start(live_config(50.0));
    assert_eq!(session.state().phase, Phase::Idle);
    let mut c = Coach::connect(session.local_addr());
    let hello: HelloPayload = c.expect(MessageType::Hello, WAIT).payload_as().unwrap();
    assert_eq!(hello.protocol, 1);
    assert_eq!(hello.run_id, session.state().run_id);
    assert_eq!(hello.config_digest.len(), 64);
    assert_eq!(hello.track.name, "desk_loop");
    assert!(hello.centerline.len() > 100);
    let state: StatePayload = c.expect(MessageType::State, WAIT).payload_as().unwrap();
    assert_eq!(state.epoch, 1);
    assert_eq!(session.state().phase, Phase::Training);
    assert_eq!(session.state().connected_clients, 1);
    finish(session);
}

#[test]
fn state_stream_keeps_ten_hertz() {
    let (session, _dir) = start(live_config(10.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    let window = Duration::from_secs(3);
    let t0 = Instant::now();
    let mut states = 0;
    let mut last_seq = 0;
    while t0.elapsed() < window {
        if let Some(m) = c.recv(window.saturating_sub(t0.elapsed())) {
            assert!(m.seq > last_seq);
            last_seq = m.seq;
            if m.kind == MessageType::State {
                states += 1;
            }
        }
    }
    // 10 Hz with a 10% allowance.
    assert!(states >= 27, "{states} state frames in {window:?}");
    assert!(states <= 33, "{states} state frames in {window:?}");
    finish(session);
}

#[test]
fn instructions_are_acked_with_class_and_attribution() {
    let (session, dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    // Let the episode run past the latency window.
    loop {
        let s: StatePayload = c.expect(MessageType::State, WAIT).payload_as().unwrap();
        if s.step >= 15 && s.terminal.is_none() {
            break;
        }
    }
    let seq = c.say("slow down");
    let ack: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
    assert_eq!(ack.ref_seq, seq);
    assert_eq!(ack.class.sub(), Some("SlowDown"));
    assert_eq!(ack.summary, "throttle-0.15 for 1s");
    assert_eq!(ack.attributed_step, None);

    let seq = c.say("What are you doing?");
    let ack: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
    assert_eq!(ack.ref_seq, seq);
    assert_eq!(ack.class.sub(), Some("Terrible"));
    assert_eq!(ack.summary, "r_h=-30");
    if ack.arrival_step > 0 {
        assert_eq!(ack.attributed_step, Some(ack.arrival_step.saturating_sub(10)));
    }

    let seq = c.say("hmm interesting");
    let ack: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
    assert_eq!(ack.ref_seq, seq);
    assert_eq!(ack.summary, "informational");

    let seq = c.send("instruction", json!({"class": {"top": "Action", "sub": "TurnLeft"}}));
    let ack: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
    assert_eq!(ack.ref_seq, seq);
    assert_eq!(ack.summary, "steer=-0.2 for 1s");

    finish(session);
    let events: Vec<DirectiveEvent> = read_file(dir.path().join("live").join("instructions.jsonl")).unwrap();
    assert_eq!(events.len(), 4);
    assert!(events.iter().all(|e| e.source == DirectiveSource::Live));
}

#[test]
fn burst_of_instructions_keeps_arrival_order() {
    let (session, _dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    let sent: Vec<u64> = (0..12)
        .map(|i| c.say(if i % 2 == 0 { "turn left" } else { "good" }))
        .collect();
    let mut acks = Vec::new();
    while acks.len() < sent.len() {
        let a: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
        acks.push(a);
    }
    assert_eq!(acks.iter().map(|a| a.ref_seq).collect::<Vec<_>>(), sent);
    for w in acks.windows(2) {
        let key = |a: &AckPayload| (a.epoch, a.episode, a.arrival_step);
        assert!(key(&w[0]) <= key(&w[1]));
    }
    finish(session);
}

#[test]
fn accepted_instruction_is_logged_after_disconnect() {
    let (session, dir) = start(live_config(20.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    c.say("speed up");
    drop(c);
    std::thread::sleep(Duration::from_millis(300));
    finish(session);
    let events: Vec<DirectiveEvent> = read_file(dir.path().join("live").join("instructions.jsonl")).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].raw_text, "speed up");
}

#[test]
fn pause_freezes_the_world_and_resume_continues() {
    let (session, _dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    c.send("control", json!({"command": "pause"}));
    let frozen = loop {
        let s: StatePayload = c.expect(MessageType::State, WAIT).payload_as().unwrap();
        if s.phase == Phase::Paused {
            break s;
        }
    };
    for _ in 0..3 {
        let s: StatePayload = c.expect(MessageType::State, WAIT).payload_as().unwrap();
        assert_eq!(s.phase, Phase::Paused);
        assert_eq!(
            (s.epoch, s.episode, s.step),
            (frozen.epoch, frozen.episode, frozen.step)
        );
        assert_eq!(s.car, frozen.car);
    }

    let seq = c.say("turn left");
    let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
    assert_eq!(err.code, ErrorCode::NotTraining);
    assert_eq!(err.ref_seq, Some(seq));

    let seq = c.send("control", json!({"command": "pause"}));
    let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
    assert_eq!(err.code, ErrorCode::IllegalTransition);
    assert_eq!(err.ref_seq, Some(seq));

    c.send("control", json!({"command": "resume"}));
    loop {
        let s: StatePayload = c.expect(MessageType::State, WAIT).payload_as().unwrap();
        if s.phase == Phase::Training && s.step != frozen.step {
            break;
        }
    }
    c.send("control", json!({"command": "stop"}));
    let artifacts = session.join().unwrap();
    assert_eq!(artifacts.stop, drivecoach::trainer::StopReason::Stopped);
}

#[test]
fn done_session_rejects_pause() {
    let (session, _dir) = start(live_config(50.0));
    assert_eq!(session.control(ControlCommand::Stop).unwrap(), Phase::Done);
    assert!(session.control(ControlCommand::Pause).is_err());
    assert_eq!(session.state().phase, Phase::Done);
    session.join().unwrap();
}

#[test]
fn malformed_frame_gets_error_then_close() {
    let (session, _dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::Hello, WAIT);
    c.ws.send(Message::text("{not json")).unwrap();
    let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
    assert_eq!(err.code, ErrorCode::Protocol);
    assert!(c.closed_within(WAIT));
    finish(session);
}

#[test]
fn unknown_type_and_server_types_are_rejected() {
    let (session, _dir) = start(live_config(50.0));
    for kind in ["dance", "state"] {
        let mut c = Coach::connect(session.local_addr());
        c.expect(MessageType::Hello, WAIT);
        c.send(kind, json!({}));
        let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
        assert_eq!(err.code, ErrorCode::Protocol, "{kind}");
        assert!(c.closed_within(WAIT), "{kind}");
    }
    finish(session);
}

#[test]
fn repeated_seq_is_a_protocol_error() {
    let (session, _dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    c.say("good");
    c.seq -= 1;
    c.say("good");
    let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
    assert_eq!(err.code, ErrorCode::Protocol);
    finish(session);
}

#[test]
fn empty_text_is_rejected_without_closing() {
    let (session, _dir) = start(live_config(50.0));
    let mut c = Coach::connect(session.local_addr());
    c.expect(MessageType::State, WAIT);
    c.say("   ");
    let err: ErrorPayload = c.expect(MessageType::Error, WAIT).payload_as().unwrap();
    assert_eq!(err.code, ErrorCode::EmptyText);
    let seq = c.say("good job");
    let ack: AckPayload = c.expect(MessageType::InstructionAck, WAIT).payload_as().unwrap();
    assert_eq!(ack.ref_seq, seq);
    finish(session);
}

#[test]
fn busy_port_fails_startup() {
    let (session, _dir) = start(live_config(50.0));
    let dir = tempfile::tempdir().unwrap();
    let again = LiveSession::start(live_config(50.0), dir.path(), &session.local_addr().to_string());
    assert!(again.is_err());
    finish(session);
}

#[test]
fn epoch_metrics_reach_the_client() {
    let mut cfg = live_config(0.0);
    cfg.trajectories_per_epoch = 1;
    cfg.horizon = Some(30);
    cfg.max_epochs = 2;
    let (session, _dir) = start(cfg);
    let mut c = Coach::connect(session.local_addr());
    let m = c.expect(MessageType::EpochMetrics, WAIT);
    assert_eq!(m.payload["epoch"], 1);
    let artifacts = session.join().unwrap();
    assert_eq!(artifacts.metrics.len(), 2);
}
