//! Scripted pedestrians and vehicles for the avoidance task.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::track::Track;
use super::{SimConfig, DT};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
}

/// Schedule that fixes an actor's position at every step index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActorPath {
    /// Walks across the lane at arc position `s`, once per `period` steps.
    Crossing {
        s: f64,
        period: u64,
        phase: u64,
        cross_steps: u64,
        half_span: f64,
    },
    /// Drives along the centerline at constant speed.
    Following { s0: f64, speed: f64, offset: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub kind: ActorKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub path: ActorPath,
    pub radius: f64,
}

pub(super) fn spawn(track: &Track, config: &SimConfig, car_s: f64, rng: &mut RngStream) -> Vec<ActorState> {
    let mut out = Vec::new();
    let half_span = track.lane_half_width() + 1.0;
    for i in 0..config.pedestrians {
        let s = car_s + 40.0 + 60.0 * f64::from(i) + 20.0 * rng.random::<f64>();
        let period = 120 + rng.random_range(0..80);
        out.push(ActorState {
            kind: ActorKind::Pedestrian,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            path: ActorPath::Crossing {
                s: track.wrap_s(s),
                period,
                phase: rng.random_range(0..period),
                cross_steps: 50,
                half_span,
            },
            radius: 0.4,
        });
    }
    for i in 0..config.vehicles {
        let s = car_s + 30.0 + 80.0 * f64::from(i) + 10.0 * rng.random::<f64>();
        out.push(ActorState {
            kind: ActorKind::Vehicle,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            path: ActorPath::Following {
                s0: track.wrap_s(s),
                speed: 2.5 + rng.random::<f64>(),
                offset: 0.0,
            },
            radius: 1.0,
        });
    }
    out
}

/// Moves every actor to its scheduled pose at `step`.
pub(super) fn advance(track: &Track, actors: &mut [ActorState], step: u64) {
    for actor in actors {
        match actor.path {
            ActorPath::Crossing {
                s,
                period,
                phase,
                cross_steps,
                half_span,
            } => {
                let t = (step + phase) % period;
                let frac = if t < cross_steps {
                    t as f64 / cross_steps as f64
                } else {
                    0.0
                };
                let offset = -half_span + 2.0 * half_span * frac;
                let (x, y) = track.lateral_point(s, offset);
                actor.x = x;
                actor.y = y;
                actor.heading = track.pose_at(s).heading + std::f64::consts::FRAC_PI_2;
            }
            ActorPath::Following { s0, speed, offset } => {
                let s = s0 + speed * step as f64 * DT;
                let (x, y) = track.lateral_point(s, offset);
                actor.x = x;
                actor.y = y;
                actor.heading = track.pose_at(s).heading;
            }
        }
    }
}
