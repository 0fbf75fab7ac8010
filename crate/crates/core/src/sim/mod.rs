//! Deterministic fixed-timestep 2D driving world.
//!
//! The car follows a kinematic bicycle model on a closed track. Scripted
//! pedestrians and vehicles are pure functions of the step index, so a world
//! is fully described by its serializable [`WorldState`].

mod actors;
mod features;
mod track;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use actors::{ActorKind, ActorPath, ActorState};
pub use features::{extract_features, FeatureVector, Obstacle, FEATURE_DIM};
pub use track::{wrap_angle, Pose, Projection, SegmentKind, SegmentSpec, Track, TrackSpec};

/// Control period in seconds (10 Hz).
pub const DT: f64 = 0.1;
/// Control rate in steps per second.
pub const FPS: f64 = 10.0;

const KMH_PER_MPS: f64 = 3.6;

/// `[steer, throttle, brake]`. Steer is in [-1, 1] with positive to the right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ActionCommand {
    /// Builds a command, clamping every component into its legal range.
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        Self {
            steer: clamp_finite(steer, -1.0, 1.0),
            throttle: clamp_finite(throttle, 0.0, 1.0),
            brake: clamp_finite(brake, 0.0, 1.0),
        }
    }

    pub fn idle() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.steer, self.throttle, self.brake]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn in_bounds(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer) && (0.0..=1.0).contains(&self.throttle) && (0.0..=1.0).contains(&self.brake)
    }
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        lo.max(0.0).min(hi)
    } else {
        v.clamp(lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// km/h.
    pub speed: f64,
    /// Centerline position in [0, track length).
    pub arc_progress: f64,
    /// Net centerline distance covered since reset, in meters.
    pub distance: f64,
    pub stalled_steps: u32,
}

impl CarState {
    pub fn speed_mps(&self) -> f64 {
        self.speed / KMH_PER_MPS
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    OffTrack,
    Collision,
    Stalled,
    LapComplete,
}

impl Terminal {
    /// Terminals that count as a failed episode.
    pub fn is_failure(self) -> bool {
        !matches!(self, Terminal::LapComplete)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub car: CarState,
    pub actors: Vec<ActorState>,
    pub step_index: u64,
    pub rng_stream: RngStream,
    pub terminal: Option<Terminal>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: WorldState,
    pub features: FeatureVector,
    pub terminal: Option<Terminal>,
}

/// Vehicle and episode constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub wheelbase: f64,
    /// Wheel angle at full steer, degrees.
    pub max_wheel_angle_deg: f64,
    /// m/s^2 at full throttle.
    pub max_accel: f64,
    /// m/s^2 at full brake.
    pub max_decel: f64,
    /// Linear drag, 1/s.
    pub drag: f64,
    pub car_radius: f64,
    /// km/h below which the car counts as stopped.
    pub stall_speed: f64,
    pub stall_limit: u32,
    /// Laps after which the episode ends with `LapComplete`.
    pub laps: u32,
    /// Initial lateral offset drawn uniformly from +-this, meters.
    pub start_offset: f64,
    /// Initial heading error drawn uniformly from +-this, degrees.
    pub start_heading_deg: f64,
    /// Initial speed drawn uniformly from this range, km/h.
    pub start_speed: (f64, f64),
    /// Lookahead distances for curvature features, meters.
    pub lookahead: Vec<f64>,
    /// Obstacles further than this are not reported, meters.
    pub obstacle_range: f64,
    pub pedestrians: u32,
    pub vehicles: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            max_wheel_angle_deg: 35.0,
            max_accel: 3.0,
            max_decel: 8.0,
            drag: 0.36,
            car_radius: 1.0,
            stall_speed: 1.0,
            stall_limit: 50,
            laps: 1,
            start_offset: 0.5,
            start_heading_deg: 5.0,
            start_speed: (5.0, 12.0),
            lookahead: vec![3.0, 8.0, 15.0],
            obstacle_range: 40.0,
            pedestrians: 0,
            vehicles: 0,
        }
    }
}

/// A track plus vehicle constants: everything needed to step a world.
#[derive(Clone, Debug)]
pub struct Env {
    track: Track,
    config: SimConfig,
}

impl Env {
    pub fn new(track: Track, config: SimConfig) -> Self {
        Self { track, config }
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Draws a fresh world from `seed`: random start position, small pose
    /// perturbation, and scripted actors.
    pub fn reset(&self, seed: u64) -> WorldState {
        use rand::Rng;
        let mut rng = RngStream::new(seed, "world");
        let c = &self.config;
        let s = rng.random::<f64>() * self.track.length();
        let offset = c.start_offset * (2.0 * rng.random::<f64>() - 1.0);
        let heading_err = c.start_heading_deg.to_radians() * (2.0 * rng.random::<f64>() - 1.0);
        let (lo, hi) = c.start_speed;
        let speed = lo + (hi - lo) * rng.random::<f64>();
        let actors = actors::spawn(&self.track, c, s, &mut rng);
        self.place(s, offset, heading_err, speed, actors, rng)
    }

    /// A world with the car at a chosen pose relative to the centerline.
    pub fn place(
        &self,
        s: f64,
        offset: f64,
        heading_err: f64,
        speed_kmh: f64,
        actors: Vec<ActorState>,
        rng_stream: RngStream,
    ) -> WorldState {
        let (x, y) = self.track.lateral_point(s, offset);
        let heading = wrap_angle(self.track.pose_at(s).heading + heading_err);
        let mut world = WorldState {
            car: CarState {
                x,
                y,
                heading,
                speed: speed_kmh.max(0.0),
                arc_progress: self.track.wrap_s(s),
                distance: 0.0,
                stalled_steps: 0,
            },
            actors,
            step_index: 0,
            rng_stream,
            terminal: None,
        };
        actors::advance(&self.track, &mut world.actors, 0);
        world
    }

    pub fn features(&self, world: &WorldState) -> FeatureVector {
        extract_features(&self.track, &self.config, world)
    }

    pub fn step(&self, world: &WorldState, action: ActionCommand, dt: f64) -> Result<StepOutcome> {
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::NonPositiveTimestep(dt));
        }
        if let Some(t) = world.terminal {
            return Err(Error::AlreadyTerminal(t));
        }
        let action = ActionCommand::new(action.steer, action.throttle, action.brake);
        let c = &self.config;
        let mut next = world.clone();
        let car = &mut next.car;

        let v = car.speed_mps();
        let decel = if v > 0.0 { c.max_decel * action.brake } else { 0.0 };
        let accel = c.max_accel * action.throttle - decel - c.drag * v;
        let v_next = (v + accel * dt).max(0.0);

        // Positive steer turns right (clockwise), matching the coach's
        // "turn right" override of +0.2.
        let wheel = (action.steer * c.max_wheel_angle_deg).to_radians();
        let yaw_rate = -v_next / c.wheelbase * wheel.tan();
        let (sin, cos) = car.heading.sin_cos();
        car.x += v_next * cos * dt;
        car.y += v_next * sin * dt;
        car.heading = wrap_angle(car.heading + yaw_rate * dt);
        car.speed = v_next * KMH_PER_MPS;

        let proj = self.track.project(car.x, car.y);
        car.distance += self.track.arc_delta(car.arc_progress, proj.s);
        car.arc_progress = proj.s;
        if car.speed < c.stall_speed {
            car.stalled_steps += 1;
        } else {
            car.stalled_steps = 0;
        }

        next.step_index += 1;
        actors::advance(&self.track, &mut next.actors, next.step_index);

        let collided = next
            .actors
            .iter()
            .any(|a| (a.x - next.car.x).hypot(a.y - next.car.y) < a.radius + c.car_radius);
        let terminal = if collided {
            Some(Terminal::Collision)
        } else if proj.offset.abs() > self.track.lane_half_width() {
            Some(Terminal::OffTrack)
        } else if next.car.distance >= f64::from(c.laps) * self.track.length() {
            Some(Terminal::LapComplete)
        } else if next.car.stalled_steps >= c.stall_limit {
            Some(Terminal::Stalled)
        } else {
            None
        };
        next.terminal = terminal;
        let features = self.features(&next);
        Ok(StepOutcome {
            next,
            features,
            terminal,
        })
    }

    /// Lap completion in percent: net distance over lap length, cumulative
    /// across laps.
    pub fn completion(&self, world: &WorldState) -> f64 {
        completion(world, &self.track)
    }
}

pub fn completion(world: &WorldState, track: &Track) -> f64 {
    world.car.distance.max(0.0) / track.length() * 100.0
}
