//! Live coaching service: streams the run to connected coaches over
//! WebSocket and feeds their instructions to the trainer.
//!
//! The trainer runs on its own thread with a [`LiveCoach`] as its instruction
//! source. Each client connection gets a thread that polls its socket and
//! writes queued frames. The only state shared with the trainer is the
//! bounded instruction queue and the session phase.

pub mod wire;

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use crate::error::{Error, Result};
use crate::instruction::{to_directive, Classification, Classifier, Directive, RuleClassifier};
use crate::reward::attribute_step;
use crate::sim::Env;
use crate::trainer::{
    Boundary, CoachMode, CoachSource, DirectiveSource, EpochMetrics, Incoming, RunArtifacts, RunConfig, StepView,
    Trainer,
};
use wire::{
    AckPayload, ActorView, ControlPayload, ErrorCode, ErrorPayload, HelloPayload, InstructionPayload, MessageType,
    StatePayload, WireMessage, PROTOCOL_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Training,
    Paused,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCommand {
    Pause,
    Resume,
    Stop,
}

impl Phase {
    /// Phase after a control command. Resume also starts an idle session.
    pub fn apply(self, cmd: ControlCommand) -> Result<Phase> {
        use ControlCommand as C;
        use Phase as P;
        match (self, cmd) {
            (P::Training, C::Pause) => Ok(P::Paused),
            (P::Paused | P::Idle, C::Resume) => Ok(P::Training),
            (P::Idle | P::Training | P::Paused, C::Stop) => Ok(P::Done),
            (from, cmd) => Err(Error::IllegalTransition { from, cmd }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub run_id: String,
    pub phase: Phase,
    pub connected_clients: usize,
}

/// An outbound frame before it is stamped with a per-connection seq.
#[derive(Clone, Debug)]
struct Frame {
    kind: MessageType,
    ts: u64,
    payload: serde_json::Value,
}

struct Client {
    id: u64,
    outbox: Mutex<VecDeque<Frame>>,
}

impl Client {
    /// Queues a frame. A new state frame replaces any unsent one.
    fn push(&self, frame: Frame) {
        let mut q = lock(&self.outbox);
        if frame.kind.droppable() {
            q.retain(|f| !f.kind.droppable());
        }
        q.push_back(frame);
    }
}

struct Pending {
    client: Arc<Client>,
    ref_seq: u64,
    text: String,
    classification: Classification,
    directive: Directive,
    client_latency_ms: Option<f64>,
}

struct Session {
    phase: Phase,
    clients: Vec<Arc<Client>>,
    next_client: u64,
    /// Latest state frame, re-sent while paused and to new clients.
    last_state: Option<StatePayload>,
}

struct Shared {
    start: Instant,
    run_id: String,
    hello: HelloPayload,
    override_duration: f64,
    wait_for_client: bool,
    capacity: usize,
    session: Mutex<Session>,
    phase_changed: Condvar,
    queue: Mutex<VecDeque<Pending>>,
    shutdown: AtomicBool,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn unix_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64() * 1000.0)
}

impl Shared {
    fn ts(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn frame<T: Serialize>(&self, kind: MessageType, payload: &T) -> Frame {
        Frame {
            kind,
            ts: self.ts(),
            payload: serde_json::to_value(payload).expect("payload serializes"),
        }
    }

    fn phase(&self) -> Phase {
        lock(&self.session).phase
    }

    fn broadcast(&self, frame: Frame) {
        for c in &lock(&self.session).clients {
            c.push(frame.clone());
        }
    }

    fn control(&self, cmd: ControlCommand) -> Result<Phase> {
        let mut s = lock(&self.session);
        let next = s.phase.apply(cmd)?;
        info!(from = ?s.phase, to = ?next, ?cmd, "phase change");
        s.phase = next;
        self.phase_changed.notify_all();
        Ok(next)
    }

    fn set_phase(&self, phase: Phase) {
        lock(&self.session).phase = phase;
        self.phase_changed.notify_all();
    }

    fn state(&self) -> SessionState {
        let s = lock(&self.session);
        SessionState {
            run_id: self.run_id.clone(),
            phase: s.phase,
            connected_clients: s.clients.len(),
        }
    }

    /// Validates and queues an instruction. Acks come from the trainer when
    /// it takes the instruction; errors go back right away.
    fn submit(&self, client: &Arc<Client>, seq: u64, payload: InstructionPayload) -> Result<(), ErrorPayload> {
        let phase = self.phase();
        if phase != Phase::Training {
            return Err(ErrorPayload::new(
                ErrorCode::NotTraining,
                format!("instructions are only taken while training (phase is {phase:?})"),
                Some(seq),
            ));
        }
        let (text, classification) =
            intake(&payload).map_err(|m| ErrorPayload::new(ErrorCode::EmptyText, m, Some(seq)))?;
        let pending = Pending {
            client: Arc::clone(client),
            ref_seq: seq,
            directive: to_directive(classification.class, self.override_duration),
            text,
            classification,
            client_latency_ms: payload.client_sent_ms.map(|sent| (unix_ms() - sent).max(0.0)),
        };
        let mut q = lock(&self.queue);
        if q.len() >= self.capacity {
            return Err(ErrorPayload::new(
                ErrorCode::QueueFull,
                format!("instruction queue is full ({} pending)", q.len()),
                Some(seq),
            ));
        }
        q.push_back(pending);
        Ok(())
    }
}

/// Classifies an instruction payload. A button class wins over text; text
/// alone goes through the rule classifier.
pub fn intake(payload: &InstructionPayload) -> std::result::Result<(String, Classification), String> {
    let text = payload.text.as_deref().map(str::trim).unwrap_or("");
    match payload.class {
        Some(class) => {
            let label = if text.is_empty() {
                match class.sub() {
                    Some(sub) => format!("{:?}/{sub}", class.top()),
                    None => format!("{:?}", class.top()),
                }
            } else {
                text.to_owned()
            };
            Ok((label, Classification { class, confidence: 1.0 }))
        }
        None if text.is_empty() => Err("instruction text is empty".into()),
        None => Ok((text.to_owned(), RuleClassifier.classify(text))),
    }
}

/// The trainer's view of the live session.
pub struct LiveCoach {
    shared: Arc<Shared>,
    tick: Option<Duration>,
    next_tick: Option<Instant>,
    latency: crate::reward::LatencyConfig,
    env: Env,
}

impl LiveCoach {
    fn state_payload(&self, view: &StepView, phase: Phase) -> StatePayload {
        StatePayload {
            phase,
            epoch: view.epoch,
            episode: view.episode,
            step: view.step,
            car: view.world.car.clone(),
            actors: view
                .world
                .actors
                .iter()
                .map(|a| ActorView {
                    kind: a.kind,
                    x: a.x,
                    y: a.y,
                    heading: a.heading,
                    radius: a.radius,
                })
                .collect(),
            features: view.features.clone(),
            action: view.last.map(|s| s.action),
            overridden: view.last.is_some_and(|s| s.was_override),
            reward: view.last.map(|s| s.reward),
            episode_return: view.episode_return,
            beta: view.beta,
            terminal: view.world.terminal,
            completion: self.env.completion(view.world),
        }
    }

    fn publish(&self, state: StatePayload) {
        let frame = self.shared.frame(MessageType::State, &state);
        let mut s = lock(&self.shared.session);
        for c in &s.clients {
            c.push(frame.clone());
        }
        s.last_state = Some(state);
    }

    /// Blocks while the session is idle or paused, re-sending the frozen
    /// state. Returns the phase that ended the wait.
    fn wait_while_held(&self, state: &StatePayload) -> Phase {
        let period = self.tick.unwrap_or(Duration::from_millis(100));
        let mut s = lock(&self.shared.session);
        loop {
            match s.phase {
                Phase::Idle | Phase::Paused => {
                    let frozen = StatePayload {
                        phase: s.phase,
                        ..state.clone()
                    };
                    let frame = self.shared.frame(MessageType::State, &frozen);
                    for c in &s.clients {
                        c.push(frame.clone());
                    }
                    s = self
                        .shared
                        .phase_changed
                        .wait_timeout(s, period)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
                p => return p,
            }
        }
    }

    fn pace(&mut self) {
        let Some(tick) = self.tick else { return };
        let now = Instant::now();
        let due = match self.next_tick {
            Some(t) if t > now => {
                std::thread::sleep(t - now);
                t
            }
            // Fell behind (an update ran, or a pause): restart the clock.
            _ => now,
        };
        self.next_tick = Some(due + tick);
    }
}

impl CoachSource for LiveCoach {
    fn episode_start(&mut self, _epoch: usize, _episode: usize) {
        self.next_tick = None;
    }

    fn boundary(&mut self, view: &StepView) -> Boundary {
        let state = self.state_payload(view, self.shared.phase());
        let phase = match state.phase {
            Phase::Idle | Phase::Paused => {
                self.publish(state.clone());
                let p = self.wait_while_held(&state);
                self.next_tick = None;
                p
            }
            p => {
                self.pace();
                self.publish(state);
                p
            }
        };

        let pending: Vec<Pending> = lock(&self.shared.queue).drain(..).collect();
        let mut incoming = Vec::with_capacity(pending.len());
        for p in pending {
            let (effective, attributed_step) = match p.directive {
                Directive::HumanReward { .. } if view.step > 0 => {
                    (true, Some(attribute_step(view.step, &self.latency)))
                }
                Directive::HumanReward { .. } => (false, None),
                Directive::ActionOverride { .. } => (!view.post_terminal, None),
                Directive::Informational => (true, None),
            };
            let ack = AckPayload {
                ref_seq: p.ref_seq,
                text: p.text.clone(),
                class: p.classification.class,
                confidence: p.classification.confidence,
                directive: p.directive,
                summary: p.directive.summary(),
                epoch: view.epoch,
                episode: view.episode,
                arrival_step: view.step,
                attributed_step,
                effective,
            };
            p.client.push(self.shared.frame(MessageType::InstructionAck, &ack));
            incoming.push(Incoming {
                text: p.text,
                classification: p.classification,
                directive: p.directive,
                source: DirectiveSource::Live,
                client_latency_ms: p.client_latency_ms,
            });
        }
        Boundary {
            incoming,
            stop: phase == Phase::Done,
        }
    }

    fn epoch_end(&mut self, metrics: &EpochMetrics) {
        self.shared
            .broadcast(self.shared.frame(MessageType::EpochMetrics, metrics));
    }

    fn finished(&mut self) {
        self.shared.set_phase(Phase::Done);
        let last = lock(&self.shared.session).last_state.clone();
        if let Some(state) = last {
            let done = StatePayload {
                phase: Phase::Done,
                ..state
            };
            self.shared.broadcast(self.shared.frame(MessageType::State, &done));
        }
    }
}

const POLL: Duration = Duration::from_millis(5);
const CLOSE_GRACE: Duration = Duration::from_millis(500);

/// One connection: handshake, hello, then alternate between draining the
/// outbox and reading client frames.
fn connection(stream: TcpStream, shared: Arc<Shared>) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            debug!(?peer, error = %e, "handshake failed");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let client = {
        let mut s = lock(&shared.session);
        let client = Arc::new(Client {
            id: s.next_client,
            outbox: Mutex::new(VecDeque::new()),
        });
        s.next_client += 1;
        let hello = HelloPayload {
            phase: s.phase,
            ..shared.hello.clone()
        };
        client.push(shared.frame(MessageType::Hello, &hello));
        if let Some(state) = &s.last_state {
            client.push(shared.frame(MessageType::State, state));
        }
        s.clients.push(Arc::clone(&client));
        if s.phase == Phase::Idle && shared.wait_for_client {
            s.phase = Phase::Training;
            shared.phase_changed.notify_all();
        }
        client
    };
    info!(?peer, client = client.id, "coach connected");

    let mut out_seq = 0u64;
    let mut last_in_seq: Option<u64> = None;
    let result = serve_client(&mut ws, &shared, &client, &mut out_seq, &mut last_in_seq);
    if let Err(e) = &result {
        debug!(client = client.id, error = %e, "connection ended");
    }
    lock(&shared.session).clients.retain(|c| c.id != client.id);
    info!(?peer, client = client.id, "coach disconnected");
}

fn send(ws: &mut WebSocket<TcpStream>, frame: Frame, seq: &mut u64) -> Result<()> {
    *seq += 1;
    let msg = WireMessage {
        kind: frame.kind,
        seq: *seq,
        ts: frame.ts,
        payload: frame.payload,
    };
    ws.send(Message::text(msg.to_text())).map_err(ws_error)
}

fn ws_error(e: tungstenite::Error) -> Error {
    match e {
        tungstenite::Error::Io(io) => Error::Io(io),
        other => Error::Protocol(other.to_string()),
    }
}

fn flush_outbox(ws: &mut WebSocket<TcpStream>, client: &Client, seq: &mut u64) -> Result<()> {
    loop {
        let Some(frame) = lock(&client.outbox).pop_front() else {
            return Ok(());
        };
        send(ws, frame, seq)?;
    }
}

fn serve_client(
    ws: &mut WebSocket<TcpStream>,
    shared: &Arc<Shared>,
    client: &Arc<Client>,
    out_seq: &mut u64,
    last_in_seq: &mut Option<u64>,
) -> Result<()> {
    loop {
        flush_outbox(ws, client, out_seq)?;
        if shared.shutdown.load(Ordering::Acquire) {
            flush_outbox(ws, client, out_seq)?;
            return close(ws);
        }
        let text = match ws.read() {
            Ok(Message::Text(t)) => t,
            Ok(Message::Binary(_)) => {
                return reject(
                    ws,
                    client,
                    out_seq,
                    shared,
                    "binary frames are not part of the protocol",
                    None,
                )
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => continue,
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                continue
            }
            Err(e) => return Err(ws_error(e)),
        };
        let msg = match WireMessage::parse(&text) {
            Ok(m) => m,
            Err(e) => return reject(ws, client, out_seq, shared, &e.to_string(), None),
        };
        if !msg.kind.from_client() {
            let m = format!("clients may not send {:?} frames", msg.kind);
            return reject(ws, client, out_seq, shared, &m, Some(msg.seq));
        }
        if last_in_seq.is_some_and(|s| msg.seq <= s) {
            let m = format!("seq {} does not increase", msg.seq);
            return reject(ws, client, out_seq, shared, &m, Some(msg.seq));
        }
        *last_in_seq = Some(msg.seq);

        match msg.kind {
            MessageType::Instruction => {
                let payload = match msg.payload_as::<InstructionPayload>() {
                    Ok(p) => p,
                    Err(e) => return reject(ws, client, out_seq, shared, &e.to_string(), Some(msg.seq)),
                };
                if let Err(err) = shared.submit(client, msg.seq, payload) {
                    client.push(shared.frame(MessageType::Error, &err));
                }
            }
            MessageType::Control => {
                let payload = match msg.payload_as::<ControlPayload>() {
                    Ok(p) => p,
                    Err(e) => return reject(ws, client, out_seq, shared, &e.to_string(), Some(msg.seq)),
                };
                if let Err(e) = shared.control(payload.command) {
                    let err = ErrorPayload::new(ErrorCode::IllegalTransition, e.to_string(), Some(msg.seq));
                    client.push(shared.frame(MessageType::Error, &err));
                }
            }
            _ => unreachable!("filtered above"),
        }
    }
}

/// Sends a protocol error and closes the connection.
fn reject(
    ws: &mut WebSocket<TcpStream>,
    client: &Client,
    seq: &mut u64,
    shared: &Shared,
    message: &str,
    ref_seq: Option<u64>,
) -> Result<()> {
    warn!(client = client.id, message, "protocol violation");
    flush_outbox(ws, client, seq)?;
    let err = ErrorPayload::new(ErrorCode::Protocol, message, ref_seq);
    send(ws, shared.frame(MessageType::Error, &err), seq)?;
    close(ws)
}

fn close(ws: &mut WebSocket<TcpStream>) -> Result<()> {
    let _ = ws.close(None);
    let deadline = Instant::now() + CLOSE_GRACE;
    while Instant::now() < deadline {
        match ws.read() {
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    Ok(())
}

fn acceptor(listener: TcpListener, shared: Arc<Shared>) -> Vec<JoinHandle<()>> {
    let mut handles = Vec::new();
    while !shared.shutdown.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let shared = Arc::clone(&shared);
                handles.push(std::thread::spawn(move || connection(stream, shared)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!(error = %e, "accept failed");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        handles.retain(|h| !h.is_finished());
    }
    handles
}

/// Centerline points one meter apart.
fn centerline(env: &Env) -> Vec<[f64; 2]> {
    let track = env.track();
    let n = track.length().ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let (x, y) = track.lateral_point(i as f64 * track.length() / n as f64, 0.0);
            [x, y]
        })
        .collect()
}

/// A running live session: the service threads plus the training thread.
pub struct LiveSession {
    shared: Arc<Shared>,
    addr: SocketAddr,
    trainer: Option<JoinHandle<Result<RunArtifacts>>>,
    acceptor: Option<JoinHandle<Vec<JoinHandle<()>>>>,
}

impl LiveSession {
    /// Binds `bind`, then starts training with a live coach. With
    /// `wait_for_client` set, training holds at its first step until a
    /// client connects or sends resume.
    pub fn start(config: RunConfig, run_dir: &Path, bind: &str) -> Result<Self> {
        if config.coach != CoachMode::Live {
            return Err(Error::Config("the live service needs coach = \"live\"".into()));
        }
        config.validate()?;
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;

        let digest = hex::encode(Sha256::digest(config.to_toml().as_bytes()));
        let name = run_dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
        let run_id = format!("{name}-{}", &digest[..8]);
        let env = config.build_env()?;
        let phase = if config.live.wait_for_client {
            Phase::Idle
        } else {
            Phase::Training
        };
        let shared = Arc::new(Shared {
            start: Instant::now(),
            hello: HelloPayload {
                protocol: PROTOCOL_VERSION,
                run_id: run_id.clone(),
                config_digest: digest,
                phase,
                task: config.task,
                step_hz: config.live.step_hz,
                track: env.track().spec().clone(),
                centerline: centerline(&env),
                lane_half_width: env.track().lane_half_width(),
            },
            run_id,
            override_duration: config.override_duration,
            wait_for_client: config.live.wait_for_client,
            capacity: config.live.queue_capacity.max(1),
            session: Mutex::new(Session {
                phase,
                clients: Vec::new(),
                next_client: 0,
                last_state: None,
            }),
            phase_changed: Condvar::new(),
            queue: Mutex::new(VecDeque::new()),
            shutdown: AtomicBool::new(false),
        });

        let coach = LiveCoach {
            shared: Arc::clone(&shared),
            tick: (config.live.step_hz > 0.0).then(|| Duration::from_secs_f64(1.0 / config.live.step_hz)),
            next_tick: None,
            latency: config.latency,
            env,
        };
        let mut trainer = Trainer::new(config, Some(run_dir))?;
        trainer.set_coach(Box::new(coach));

        let acc_shared = Arc::clone(&shared);
        let acceptor = std::thread::spawn(move || acceptor(listener, acc_shared));
        let trainer = std::thread::spawn(move || trainer.run());
        info!(%addr, "live coaching service listening");
        Ok(Self {
            shared,
            addr,
            trainer: Some(trainer),
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> SessionState {
        self.shared.state()
    }

    /// Applies a control command as if a client had sent it.
    pub fn control(&self, cmd: ControlCommand) -> Result<Phase> {
        self.shared.control(cmd)
    }

    /// Waits for training to finish, flushes every client, and shuts down.
    pub fn join(mut self) -> Result<RunArtifacts> {
        let result = match self.trainer.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(Error::Protocol("training thread panicked".into())),
            None => unreachable!("joined twice"),
        };
        self.shutdown();
        result
    }

    fn shutdown(&mut self) {
        self.shared.set_phase(Phase::Done);
        self.shared.shutdown.store(true, Ordering::Release);
        if let Some(acc) = self.acceptor.take() {
            if let Ok(conns) = acc.join() {
                for c in conns {
                    let _ = c.join();
                }
            }
        }
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        if self.trainer.is_some() {
            let _ = self.shared.control(ControlCommand::Stop);
            if let Some(t) = self.trainer.take() {
                let _ = t.join();
            }
            self.shutdown();
        }
    }
}

/// Serves a live run on `bind` until training ends.
pub fn serve_training(config: RunConfig, run_dir: &Path, bind: &str) -> Result<RunArtifacts> {
    LiveSession::start(config, run_dir, bind)?.join()
}

#[cfg(test)]
mod tests;
