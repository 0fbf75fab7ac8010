//! Deterministic stand-in for a human coach.
//!
//! Rules look at the car's state and emit plain-language utterances drawn
//! from template pools. The utterances then go through the same classifier
//! and directive mapping a live instruction would.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{Boundary, CoachSource, Incoming, StepView};
use super::DirectiveSource;
use crate::instruction::{to_directive, Classifier, RuleClassifier};
use crate::rng::RngStream;
use crate::sim::Terminal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoachRule {
    Accident,
    /// The car just left the road.
    OffRoad,
    /// Far from center: steer back toward it.
    TurnBack,
    /// Bend ahead while steering straight.
    Curve,
    SpeedUp,
    Praise,
}

impl CoachRule {
    pub const ALL: [CoachRule; 6] = [
        CoachRule::Accident,
        CoachRule::OffRoad,
        CoachRule::TurnBack,
        CoachRule::Curve,
        CoachRule::SpeedUp,
        CoachRule::Praise,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Template pools, keyed by intent.
pub struct Templates {
    pub turn_left: &'static [&'static str],
    pub turn_right: &'static [&'static str],
    pub speed_up: &'static [&'static str],
    pub accident: &'static [&'static str],
    pub off_road: &'static [&'static str],
    pub praise: &'static [&'static str],
}

pub const TEMPLATES: Templates = Templates {
    turn_left: &["take a left", "turn left", "go left a bit", "steer left"],
    turn_right: &["take a right", "turn right", "go right a bit", "steer right"],
    speed_up: &["speed up", "go faster", "a bit faster please"],
    accident: &["you ran into a wall", "you hit something", "you crashed"],
    off_road: &["you went off the road", "you drove off the road"],
    praise: &["good job", "that's fine", "okay keep going"],
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoachRules {
    /// |deviation| above which the car is told to turn back, meters.
    pub deviation_trigger: f64,
    /// Which lookahead point to watch for bends.
    pub curve_lookahead: usize,
    /// |curvature| that counts as a bend, 1/m.
    pub curve_trigger: f64,
    /// |steer| below which the car counts as going straight.
    pub steer_deadband: f64,
    /// Speed below which the car is told to speed up, km/h.
    pub min_speed: f64,
    /// |deviation| that counts as centered, meters.
    pub praise_band: f64,
    /// Consecutive centered steps at or above `min_speed` that earn praise.
    pub praise_streak: usize,
    /// Steps before the same rule may fire again.
    pub cooldown: usize,
}

impl Default for CoachRules {
    fn default() -> Self {
        Self {
            deviation_trigger: 1.0,
            curve_lookahead: 1,
            curve_trigger: 0.02,
            steer_deadband: 0.05,
            min_speed: 10.0,
            praise_band: 0.3,
            praise_streak: 50,
            cooldown: 20,
        }
    }
}

/// Per-episode coach memory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCoachState {
    /// Step at which each rule last fired.
    pub last_fired: [Option<usize>; 6],
    pub centered_streak: usize,
}

impl ScriptedCoachState {
    fn ready(&self, rule: CoachRule, step: usize, cooldown: usize) -> bool {
        self.last_fired[rule.index()].is_none_or(|s| step >= s + cooldown)
    }
}

fn pick<R: Rng + ?Sized>(pool: &[&'static str], rng: &mut R) -> &'static str {
    pool[rng.random_range(0..pool.len())]
}

/// Picks at most one utterance for this boundary. Rules are tried in order:
/// accident, off road, turn back, bend ahead, speed up, praise.
pub fn scripted_utterance<R: Rng + ?Sized>(
    view: &StepView,
    rules: &CoachRules,
    state: &mut ScriptedCoachState,
    rng: &mut R,
) -> Option<(CoachRule, &'static str)> {
    let f = view.features;
    let t = view.step;
    if !view.post_terminal {
        if f.deviation.abs() < rules.praise_band && f.speed >= rules.min_speed {
            state.centered_streak += 1;
        } else {
            state.centered_streak = 0;
        }
    }

    let steer = view.last.map_or(0.0, |s| s.action.steer);
    let bend = f
        .lookahead_curvatures
        .get(rules.curve_lookahead)
        .copied()
        .unwrap_or(0.0);
    let mut candidates: Vec<(CoachRule, &'static [&'static str])> = Vec::new();
    if view.world.terminal == Some(Terminal::Collision) {
        candidates.push((CoachRule::Accident, TEMPLATES.accident));
    }
    if view.world.terminal == Some(Terminal::OffTrack) {
        candidates.push((CoachRule::OffRoad, TEMPLATES.off_road));
    }
    if !view.post_terminal {
        if f.deviation.abs() > rules.deviation_trigger {
            let pool = if f.deviation > 0.0 {
                TEMPLATES.turn_right
            } else {
                TEMPLATES.turn_left
            };
            candidates.push((CoachRule::TurnBack, pool));
        }
        if bend.abs() > rules.curve_trigger && steer.abs() < rules.steer_deadband {
            // Positive curvature bends left.
            let pool = if bend > 0.0 {
                TEMPLATES.turn_left
            } else {
                TEMPLATES.turn_right
            };
            candidates.push((CoachRule::Curve, pool));
        }
        if f.speed < rules.min_speed && f.nearest_obstacle.is_none() {
            candidates.push((CoachRule::SpeedUp, TEMPLATES.speed_up));
        }
        if state.centered_streak >= rules.praise_streak {
            candidates.push((CoachRule::Praise, TEMPLATES.praise));
        }
    }

    let (rule, pool) = candidates
        .into_iter()
        .find(|(rule, _)| state.ready(*rule, t, rules.cooldown))?;
    state.last_fired[rule.index()] = Some(t);
    if rule == CoachRule::Praise {
        state.centered_streak = 0;
    }
    Some((rule, pick(pool, rng)))
}

/// Scripted coach as an instruction source.
#[derive(Clone, Debug)]
pub struct ScriptedCoach {
    pub rules: CoachRules,
    override_duration: f64,
    rng: RngStream,
    state: ScriptedCoachState,
}

impl ScriptedCoach {
    pub fn new(rules: CoachRules, override_duration: f64, rng: RngStream) -> Self {
        Self {
            rules,
            override_duration,
            rng,
            state: ScriptedCoachState::default(),
        }
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }
}

impl CoachSource for ScriptedCoach {
    fn episode_start(&mut self, _epoch: usize, _episode: usize) {
        self.state = ScriptedCoachState::default();
    }

    fn boundary(&mut self, view: &StepView) -> Boundary {
        if !view.coach_active {
            return Boundary::default();
        }
        let Some((_, text)) = scripted_utterance(view, &self.rules, &mut self.state, &mut self.rng) else {
            return Boundary::default();
        };
        let classification = RuleClassifier.classify(text);
        Boundary {
            incoming: vec![Incoming {
                text: text.to_owned(),
                classification,
                directive: to_directive(classification.class, self.override_duration),
                source: DirectiveSource::Scripted,
                client_latency_ms: None,
            }],
            stop: false,
        }
    }
}
