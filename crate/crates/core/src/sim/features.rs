use serde::{Deserialize, Serialize};

use super::track::{wrap_angle, Track};
use super::{SimConfig, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub distance: f64,
    /// Radians relative to the car heading, positive to the left.
    pub bearing: f64,
}

/// Ground-truth observation of the car relative to the track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Meters, positive when the car is left of the centerline.
    pub deviation: f64,
    /// Degrees in (-180, 180], positive when the car points counterclockwise
    /// of the road tangent.
    pub heading_error: f64,
    /// km/h.
    pub speed: f64,
    /// 1/m, sampled at the configured lookahead distances.
    pub lookahead_curvatures: Vec<f64>,
    pub nearest_obstacle: Option<Obstacle>,
}

/// Length of [`FeatureVector::to_input`] for the default three lookahead points.
pub const FEATURE_DIM: usize = 9;

// Input scales: lane half-width, orientation tolerance, top target speed, and
// a 20 m reference radius.
const DEV_SCALE: f64 = 2.5;
const HEADING_SCALE: f64 = 20.0;
const SPEED_SCALE: f64 = 20.0;
const CURV_SCALE: f64 = 20.0;
const INPUT_CLIP: f64 = 5.0;

impl FeatureVector {
    /// Normalized network input.
    pub fn to_input(&self, obstacle_range: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.lookahead_curvatures.len());
        v.push(self.deviation / DEV_SCALE);
        v.push(self.heading_error / HEADING_SCALE);
        v.push(self.speed / SPEED_SCALE);
        v.extend(self.lookahead_curvatures.iter().map(|k| k * CURV_SCALE));
        match self.nearest_obstacle {
            Some(o) => {
                v.push(1.0);
                v.push(o.distance / obstacle_range);
                v.push(o.bearing / std::f64::consts::PI);
            }
            None => v.extend([0.0, 1.0, 0.0]),
        }
        for x in &mut v {
            *x = x.clamp(-INPUT_CLIP, INPUT_CLIP);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.deviation.is_finite()
            && self.heading_error.is_finite()
            && self.speed.is_finite()
            && self.lookahead_curvatures.iter().all(|k| k.is_finite())
    }
}

pub fn extract_features(track: &Track, config: &SimConfig, world: &WorldState) -> FeatureVector {
    let car = &world.car;
    let proj = track.project(car.x, car.y);
    let heading_error = wrap_angle(car.heading - proj.point.heading).to_degrees();
    // wrap_angle yields (-pi, pi]; converting can round -180 exactly.
    let heading_error = if heading_error <= -180.0 { 180.0 } else { heading_error };
    let lookahead_curvatures = config
        .lookahead
        .iter()
        .map(|ahead| track.curvature_at(proj.s + ahead))
        .collect();
    let nearest_obstacle = world
        .actors
        .iter()
        .map(|a| {
            let dx = a.x - car.x;
            let dy = a.y - car.y;
            Obstacle {
                distance: dx.hypot(dy),
                bearing: wrap_angle(dy.atan2(dx) - car.heading),
            }
        })
        .filter(|o| o.distance <= config.obstacle_range && o.bearing.abs() < std::f64::consts::FRAC_PI_2)
        .min_by(|a, b| a.distance.total_cmp(&b.distance));
    FeatureVector {
        deviation: proj.offset,
        heading_error,
        speed: car.speed,
        lookahead_curvatures,
        nearest_obstacle,
    }
}
