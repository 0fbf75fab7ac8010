use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopClass {
    Action,
    Reward,
    Reasoning,
    State,
    Unrecognized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    GoStraight,
    TurnLeft,
    TurnRight,
    SpeedUp,
    SlowDown,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    Great,
    Good,
    Bad,
    Terrible,
    Mistake,
    Accident,
}

impl RewardKind {
    /// Human reward level for the class.
    pub fn value(self) -> f64 {
        match self {
            RewardKind::Great => 30.0,
            RewardKind::Good => 10.0,
            RewardKind::Bad => -10.0,
            RewardKind::Terrible | RewardKind::Mistake | RewardKind::Accident => -30.0,
        }
    }
}

/// Two-level instruction class. Only actions and rewards carry a subclass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstructionClass {
    Action(ActionKind),
    Reward(RewardKind),
    Reasoning,
    State,
    Unrecognized,
}

impl InstructionClass {
    pub const ALL: [InstructionClass; 15] = [
        InstructionClass::Action(ActionKind::GoStraight),
        InstructionClass::Action(ActionKind::TurnLeft),
        InstructionClass::Action(ActionKind::TurnRight),
        InstructionClass::Action(ActionKind::SpeedUp),
        InstructionClass::Action(ActionKind::SlowDown),
        InstructionClass::Action(ActionKind::Stop),
        InstructionClass::Reward(RewardKind::Great),
        InstructionClass::Reward(RewardKind::Good),
        InstructionClass::Reward(RewardKind::Bad),
        InstructionClass::Reward(RewardKind::Terrible),
        InstructionClass::Reward(RewardKind::Mistake),
        InstructionClass::Reward(RewardKind::Accident),
        InstructionClass::Reasoning,
        InstructionClass::State,
        InstructionClass::Unrecognized,
    ];

    pub fn top(&self) -> TopClass {
        match self {
            InstructionClass::Action(_) => TopClass::Action,
            InstructionClass::Reward(_) => TopClass::Reward,
            InstructionClass::Reasoning => TopClass::Reasoning,
            InstructionClass::State => TopClass::State,
            InstructionClass::Unrecognized => TopClass::Unrecognized,
        }
    }

    pub fn sub(&self) -> Option<&'static str> {
        match self {
            InstructionClass::Action(a) => Some(match a {
                ActionKind::GoStraight => "GoStraight",
                ActionKind::TurnLeft => "TurnLeft",
                ActionKind::TurnRight => "TurnRight",
                ActionKind::SpeedUp => "SpeedUp",
                ActionKind::SlowDown => "SlowDown",
                ActionKind::Stop => "Stop",
            }),
            InstructionClass::Reward(r) => Some(match r {
                RewardKind::Great => "Great",
                RewardKind::Good => "Good",
                RewardKind::Bad => "Bad",
                RewardKind::Terrible => "Terrible",
                RewardKind::Mistake => "Mistake",
                RewardKind::Accident => "Accident",
            }),
            _ => None,
        }
    }

    pub fn from_parts(top: TopClass, sub: Option<&str>) -> Result<Self, Error> {
        let bad = || Error::Config(format!("invalid class {top:?}/{sub:?}"));
        let class = match (top, sub) {
            (TopClass::Action, Some(s)) => InstructionClass::Action(match s {
                "GoStraight" => ActionKind::GoStraight,
                "TurnLeft" => ActionKind::TurnLeft,
                "TurnRight" => ActionKind::TurnRight,
                "SpeedUp" => ActionKind::SpeedUp,
                "SlowDown" => ActionKind::SlowDown,
                "Stop" => ActionKind::Stop,
                _ => return Err(bad()),
            }),
            (TopClass::Reward, Some(s)) => InstructionClass::Reward(match s {
                "Great" => RewardKind::Great,
                "Good" => RewardKind::Good,
                "Bad" => RewardKind::Bad,
                "Terrible" => RewardKind::Terrible,
                "Mistake" => RewardKind::Mistake,
                "Accident" => RewardKind::Accident,
                _ => return Err(bad()),
            }),
            (TopClass::Reasoning, None) => InstructionClass::Reasoning,
            (TopClass::State, None) => InstructionClass::State,
            (TopClass::Unrecognized, None) => InstructionClass::Unrecognized,
            _ => return Err(bad()),
        };
        Ok(class)
    }
}

impl fmt::Display for InstructionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub() {
            Some(sub) => write!(f, "{:?}/{sub}", self.top()),
            None => write!(f, "{:?}", self.top()),
        }
    }
}

impl FromStr for InstructionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (top, sub) = match s.split_once('/') {
            Some((t, s)) => (t, Some(s)),
            None => (s, None),
        };
        let top = match top {
            "Action" => TopClass::Action,
            "Reward" => TopClass::Reward,
            "Reasoning" => TopClass::Reasoning,
            "State" => TopClass::State,
            "Unrecognized" => TopClass::Unrecognized,
            _ => return Err(Error::Config(format!("unknown class {s:?}"))),
        };
        Self::from_parts(top, sub)
    }
}

#[derive(Serialize, Deserialize)]
struct ClassRepr {
    top: TopClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub: Option<String>,
}

impl Serialize for InstructionClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ClassRepr {
            top: self.top(),
            sub: self.sub().map(str::to_owned),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InstructionClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ClassRepr::deserialize(deserializer)?;
        Self::from_parts(repr.top, repr.sub.as_deref()).map_err(serde::de::Error::custom)
    }
}

/// Partial action that replaces or adjusts components of the sampled action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throttle_delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brake_set: Option<f64>,
}

/// What the trainer does with a classified instruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    ActionOverride {
        #[serde(rename = "override")]
        action: ActionOverride,
        /// Seconds the override stays active.
        duration: f64,
    },
    HumanReward {
        reward: f64,
    },
    Informational,
}

pub const TURN_STEER: f64 = 0.2;
pub const THROTTLE_STEP: f64 = 0.15;

pub fn to_directive(class: InstructionClass, duration: f64) -> Directive {
    let action = |o: ActionOverride| Directive::ActionOverride { action: o, duration };
    match class {
        InstructionClass::Action(kind) => action(match kind {
            ActionKind::GoStraight => ActionOverride {
                steer_set: Some(0.0),
                ..Default::default()
            },
            ActionKind::TurnLeft => ActionOverride {
                steer_set: Some(-TURN_STEER),
                ..Default::default()
            },
            ActionKind::TurnRight => ActionOverride {
                steer_set: Some(TURN_STEER),
                ..Default::default()
            },
            ActionKind::SpeedUp => ActionOverride {
                throttle_delta: Some(THROTTLE_STEP),
                ..Default::default()
            },
            ActionKind::SlowDown => ActionOverride {
                throttle_delta: Some(-THROTTLE_STEP),
                ..Default::default()
            },
            ActionKind::Stop => ActionOverride {
                brake_set: Some(1.0),
                ..Default::default()
            },
        }),
        InstructionClass::Reward(kind) => Directive::HumanReward { reward: kind.value() },
        InstructionClass::Reasoning | InstructionClass::State | InstructionClass::Unrecognized => {
            Directive::Informational
        }
    }
}

impl Directive {
    /// Checks the value ranges a directive may carry.
    pub fn is_valid(&self) -> bool {
        match self {
            Directive::ActionOverride { action, duration } => {
                let populated =
                    action.steer_set.is_some() || action.throttle_delta.is_some() || action.brake_set.is_some();
                populated
                    && *duration >= 0.0
                    && action.steer_set.is_none_or(|s| (-1.0..=1.0).contains(&s))
                    && action.brake_set.is_none_or(|b| b == 1.0)
                    && action
                        .throttle_delta
                        .is_none_or(|d| d == THROTTLE_STEP || d == -THROTTLE_STEP)
            }
            Directive::HumanReward { reward } => [30.0, 10.0, -10.0, -30.0].contains(reward),
            Directive::Informational => true,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Directive::ActionOverride { action, duration } => {
                let mut parts = Vec::new();
                if let Some(s) = action.steer_set {
                    parts.push(format!("steer={s}"));
                }
                if let Some(d) = action.throttle_delta {
                    parts.push(format!("throttle{d:+}"));
                }
                if let Some(b) = action.brake_set {
                    parts.push(format!("brake={b}"));
                }
                format!("{} for {duration}s", parts.join(","))
            }
            Directive::HumanReward { reward } => format!("r_h={reward:+}"),
            Directive::Informational => "informational".into(),
        }
    }
}
