//! Keyword and phrase rules for the default classifier.
//!
//! Each family detector looks at the normalized token list. Families are
//! tried in priority order (action, reward, reasoning, state) and the first
//! that fires decides the class.

use super::taxonomy::{ActionKind, InstructionClass, RewardKind};

const NEGATORS: &[&str] = &["no", "not", "dont", "didnt", "never", "without", "doesnt", "cant"];
const OSCILLATION: &[&str] = &[
    "weaving",
    "weave",
    "swerving",
    "swerve",
    "zigzag",
    "zigzagging",
    "wobbling",
    "wobble",
    "oscillation",
    "oscillating",
    "swaying",
];
const DIRECTION_LEAD: &[&str] = &[
    "turn", "go", "take", "a", "bear", "steer", "veer", "move", "it", "bit", "more", "over", "hard", "slightly",
    "little", "to", "left", "right", "towards", "toward",
];
const NOT_DIRECTION_NEXT: &[&str] = &["here", "there", "now", "away", "after", "behind", "on", "at", "in"];
const VIOLATION_VERBS: &[&str] = &["blew", "blow", "ran", "run", "jumped", "missed", "through", "went"];

pub(super) struct Match {
    pub class: InstructionClass,
    pub confidence: f64,
}

fn m(class: InstructionClass, confidence: f64) -> Option<Match> {
    Some(Match { class, confidence })
}

struct Tokens<'a>(&'a [String]);

impl Tokens<'_> {
    fn has(&self, w: &str) -> bool {
        self.0.iter().any(|t| t == w)
    }

    fn any(&self, ws: &[&str]) -> bool {
        ws.iter().any(|w| self.has(w))
    }

    fn seq(&self, phrase: &[&str]) -> bool {
        self.0
            .windows(phrase.len())
            .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
    }

    fn any_seq(&self, phrases: &[&[&str]]) -> bool {
        phrases.iter().any(|p| self.seq(p))
    }

    fn get(&self, i: usize) -> Option<&str> {
        self.0.get(i).map(String::as_str)
    }

    /// True when one of the three tokens before `i` negates it.
    fn negated_at(&self, i: usize) -> bool {
        self.0[i.saturating_sub(3)..i]
            .iter()
            .any(|t| NEGATORS.contains(&t.as_str()))
    }

    /// Positions where `w` appears.
    fn positions<'b>(&'b self, w: &'b str) -> impl Iterator<Item = usize> + 'b {
        self.0.iter().enumerate().filter(move |(_, t)| *t == w).map(|(i, _)| i)
    }
}

pub(super) fn classify_tokens(tokens: &[String]) -> Option<Match> {
    let t = Tokens(tokens);
    action(&t)
        .or_else(|| reward(&t))
        .or_else(|| reasoning(&t))
        .or_else(|| state(&t))
}

fn action(t: &Tokens) -> Option<Match> {
    use ActionKind::*;
    let a = InstructionClass::Action;

    if t.any_seq(&[&["too", "slow"], &["so", "slow"]]) {
        return m(a(SpeedUp), 0.95);
    }
    if t.any(OSCILLATION) {
        return m(a(GoStraight), 0.95);
    }
    if slow_down(t) {
        return m(a(SlowDown), 0.95);
    }
    if stop(t) {
        return m(a(Stop), 0.95);
    }
    if speed_up(t) {
        return m(a(SpeedUp), 0.95);
    }
    if t.any(&["straight", "straighten", "steady"]) || t.seq(&["hold", "your", "line"]) {
        return m(a(GoStraight), 0.95);
    }
    match (direction(t, "left"), direction(t, "right")) {
        (true, false) => m(a(TurnLeft), 0.95),
        (false, true) => m(a(TurnRight), 0.95),
        _ => None,
    }
}

fn slow_down(t: &Tokens) -> bool {
    let slow = ["slow", "slower", "slowly", "decelerate"]
        .iter()
        .flat_map(|w| t.positions(w).collect::<Vec<_>>())
        .any(|i| !t.negated_at(i));
    slow || t.any_seq(&[
        &["ease", "off"],
        &["too", "fast"],
        &["so", "fast"],
        &["reduce", "your", "speed"],
        &["reduce", "speed"],
        &["lower", "your", "speed"],
        &["lower", "speed"],
        &["back", "off"],
        &["take", "it", "easy"],
        &["brake", "a", "little"],
        &["brake", "gently"],
    ])
}

fn stop(t: &Tokens) -> bool {
    let stop_word = t.positions("stop").any(|i| {
        let descriptive_sign = i > 0 && t.get(i + 1) == Some("sign");
        !descriptive_sign && !t.negated_at(i)
    });
    let brake = ["brake", "brakes"]
        .iter()
        .flat_map(|w| t.positions(w).collect::<Vec<_>>())
        .any(|i| !t.negated_at(i));
    stop_word || brake || t.has("halt")
}

fn speed_up(t: &Tokens) -> bool {
    t.any(&["faster", "quicker", "accelerate", "gas", "hurry", "throttle"])
        || t.any_seq(&[
            &["speed", "up"],
            &["speed", "it", "up"],
            &["step", "on", "it"],
            &["pick", "up", "the", "pace"],
            &["go", "go"],
        ])
}

/// Whether `word` is used as a steering direction rather than, say, "all right".
fn direction(t: &Tokens, word: &str) -> bool {
    t.positions(word).any(|i| {
        if i == 0 {
            return t.get(1).is_none_or(|next| !NOT_DIRECTION_NEXT.contains(&next));
        }
        let prev = t.get(i - 1).unwrap_or_default();
        if prev == "the" {
            return i >= 2 && matches!(t.get(i - 2), Some("to" | "take" | "towards" | "toward"));
        }
        DIRECTION_LEAD.contains(&prev) && !t.negated_at(i)
    })
}

fn reward(t: &Tokens) -> Option<Match> {
    use RewardKind::*;
    let r = InstructionClass::Reward;
    let violation = t.any(VIOLATION_VERBS);

    let stop_sign_violation = violation && t.seq(&["stop", "sign"]);
    if stop_sign_violation
        || t.any(&["crash", "crashed", "collided", "smashed", "bumped", "hit"])
        || t.any_seq(&[&["ran", "into"], &["ran", "over"], &["run", "into"]])
    {
        return m(r(Accident), 0.95);
    }

    let light_violation = violation && t.has("light");
    let you = t.any(&["you", "youre"]);
    let off_road = you
        && (t.any(&["sidewalk", "curb", "grass"])
            || t.any_seq(&[&["off", "the", "road"], &["wrong", "lane"], &["crossed", "the", "line"]]));
    if light_violation || off_road || t.seq(&["light", "was", "red"]) {
        return m(r(Mistake), 0.95);
    }

    if t.any(&["terrible", "awful", "horrible", "disaster", "kidding"])
        || t.any_seq(&[
            &["what", "are", "you", "doing"],
            &["what", "was", "that"],
            &["what", "on", "earth"],
            &["cant", "do"],
            &["cant", "drive"],
            &["never", "do", "that"],
            &["really", "bad"],
            &["completely", "wrong"],
        ])
    {
        return m(r(Terrible), 0.95);
    }

    let negated_praise = ["good", "great", "right", "fine", "ok", "okay", "like"]
        .iter()
        .any(|w| {
            t.positions(w)
                .any(|i| i > 0 && matches!(t.get(i - 1), Some("not" | "wasnt" | "isnt")))
        });
    let plain_bad = t.positions("bad").any(|i| i == 0 || t.get(i - 1) != Some("not"));
    if negated_praise
        || plain_bad
        || t.any(&["nope", "poor"])
        || t.any_seq(&[&["oh", "no"], &["no", "no"], &["hmm", "no"], &["uh", "oh"]])
    {
        return m(r(Bad), 0.95);
    }

    if t.any(&[
        "great",
        "awesome",
        "perfect",
        "excellent",
        "wonderful",
        "fantastic",
        "amazing",
        "cool",
        "nicely",
    ]) || t.any_seq(&[
        &["well", "done"],
        &["doing", "well"],
        &["really", "good"],
        &["nice", "work"],
        &["nice", "job"],
    ]) {
        return m(r(Great), 0.95);
    }

    if t.any(&["good", "ok", "okay", "alright", "fine", "decent", "works"])
        || t.any_seq(&[&["all", "right"], &["not", "bad"]])
    {
        return m(r(Good), 0.9);
    }
    None
}

fn reasoning(t: &Tokens) -> Option<Match> {
    let fires = t.any(&["because", "since"])
        || t.any_seq(&[
            &["so", "we"],
            &["so", "you"],
            &["so", "look"],
            &["so", "no"],
            &["no", "need"],
            &["didnt", "need"],
            &["dont", "need"],
            &["may", "want"],
            &["might", "want"],
        ]);
    fires.then_some(Match {
        class: InstructionClass::Reasoning,
        confidence: 0.8,
    })
}

fn state(t: &Tokens) -> Option<Match> {
    let fires = t.any(&["theres", "careful", "ahead", "approaching"])
        || t.any_seq(&[
            &["there", "is"],
            &["there", "are"],
            &["youre", "at"],
            &["you", "are", "at"],
            &["watch", "out"],
            &["look", "out"],
            &["light", "is"],
        ]);
    fires.then_some(Match {
        class: InstructionClass::State,
        confidence: 0.8,
    })
}
