//! Closed-loop track geometry parameterized by centerline arc length.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLOSURE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Straight,
    Arc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    /// Meters along the centerline.
    pub length: f64,
    /// 1/m, positive turns left. Ignored for straights.
    #[serde(default)]
    pub curvature: f64,
}

impl SegmentSpec {
    pub fn straight(length: f64) -> Self {
        Self {
            kind: SegmentKind::Straight,
            length,
            curvature: 0.0,
        }
    }

    /// Arc of the given signed radius sweeping `angle` radians.
    pub fn arc(radius: f64, angle: f64) -> Self {
        Self {
            kind: SegmentKind::Arc,
            length: radius.abs() * angle.abs(),
            curvature: 1.0 / radius,
        }
    }

    fn curvature(&self) -> f64 {
        match self.kind {
            SegmentKind::Straight => 0.0,
            SegmentKind::Arc => self.curvature,
        }
    }
}

/// Track description as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub name: String,
    #[serde(default = "default_lane_half_width")]
    pub lane_half_width: f64,
    pub segments: Vec<SegmentSpec>,
}

fn default_lane_half_width() -> f64 {
    2.5
}

impl TrackSpec {
    /// Single circular arc of the given radius, driven counterclockwise.
    pub fn circle(radius: f64) -> Self {
        Self {
            name: "circle".into(),
            lane_half_width: default_lane_half_width(),
            segments: vec![SegmentSpec::arc(radius, TAU)],
        }
    }

    /// Stadium: two straights joined by two half-circles.
    pub fn oval(straight: f64, radius: f64) -> Self {
        Self {
            name: "oval".into(),
            lane_half_width: default_lane_half_width(),
            segments: vec![
                SegmentSpec::straight(straight),
                SegmentSpec::arc(radius, PI),
                SegmentSpec::straight(straight),
                SegmentSpec::arc(radius, PI),
            ],
        }
    }

    /// The default desk-scale lap: left and right bends of about 22 m radius.
    ///
    /// Heading sweeps +90, +90, -90, +90, +90, +90 degrees; straight lengths
    /// are chosen so the chain closes exactly.
    pub fn desk_loop() -> Self {
        let r = 22.0;
        let q = PI / 2.0;
        Self {
            name: "desk_loop".into(),
            lane_half_width: default_lane_half_width(),
            segments: vec![
                SegmentSpec::straight(60.0),
                SegmentSpec::arc(r, q),
                SegmentSpec::straight(20.0),
                SegmentSpec::arc(r, q),
                SegmentSpec::straight(20.0),
                SegmentSpec::arc(-r, q),
                SegmentSpec::straight(20.0),
                SegmentSpec::arc(r, q),
                SegmentSpec::straight(40.0),
                SegmentSpec::arc(r, q),
                SegmentSpec::straight(40.0 + 2.0 * r),
                SegmentSpec::arc(r, q),
                SegmentSpec::straight(2.0 * r),
            ],
        }
    }

    /// Looks up one of the bundled tracks by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "circle" => Some(Self::circle(30.0)),
            "oval" => Some(Self::oval(50.0, 20.0)),
            "desk_loop" => Some(Self::desk_loop()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Pose after travelling `s` meters along a path of constant curvature.
    pub fn advance(&self, s: f64, curvature: f64) -> Pose {
        let (sin0, cos0) = self.heading.sin_cos();
        if curvature == 0.0 {
            return Pose {
                x: self.x + s * cos0,
                y: self.y + s * sin0,
                heading: self.heading,
            };
        }
        let heading = self.heading + curvature * s;
        let (sin1, cos1) = heading.sin_cos();
        Pose {
            x: self.x + (sin1 - sin0) / curvature,
            y: self.y + (cos0 - cos1) / curvature,
            heading,
        }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    start: Pose,
    s0: f64,
    length: f64,
    curvature: f64,
}

/// Nearest point on the centerline to a query position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc position in [0, length).
    pub s: f64,
    pub point: Pose,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub offset: f64,
    pub curvature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    spec: TrackSpec,
    segments: Vec<Segment>,
    length: f64,
}

impl Track {
    pub fn build(spec: TrackSpec) -> Result<Self> {
        if spec.segments.is_empty() {
            return Err(Error::InvalidTrack("no segments".into()));
        }
        if spec.lane_half_width.is_nan() || spec.lane_half_width <= 0.0 {
            return Err(Error::InvalidTrack(format!(
                "lane_half_width must be positive, got {}",
                spec.lane_half_width
            )));
        }
        let mut pose = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let mut s0 = 0.0;
        let mut segments = Vec::with_capacity(spec.segments.len());
        for (i, seg) in spec.segments.iter().enumerate() {
            if !seg.length.is_finite() || seg.length <= 0.0 {
                return Err(Error::InvalidTrack(format!(
                    "segment {i} has non-positive length {}",
                    seg.length
                )));
            }
            let curvature = seg.curvature();
            if !curvature.is_finite() || (seg.kind == SegmentKind::Arc && curvature == 0.0) {
                return Err(Error::InvalidTrack(format!(
                    "segment {i} has invalid curvature {curvature}"
                )));
            }
            segments.push(Segment {
                start: pose,
                s0,
                length: seg.length,
                curvature,
            });
            pose = pose.advance(seg.length, curvature);
            s0 += seg.length;
        }
        let gap_m = pose.x.hypot(pose.y);
        let gap_rad = wrap_angle(pose.heading).abs();
        if gap_m > CLOSURE_TOL || gap_rad > CLOSURE_TOL {
            return Err(Error::TrackNotClosed { gap_m, gap_rad });
        }
        Ok(Self {
            spec,
            segments,
            length: s0,
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn lane_half_width(&self) -> f64 {
        self.spec.lane_half_width
    }

    fn segment_at(&self, s: f64) -> &Segment {
        let idx = self.segments.partition_point(|seg| seg.s0 <= s).saturating_sub(1);
        &self.segments[idx]
    }

    /// Wraps any arc position into [0, length).
    pub fn wrap_s(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.length);
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        let s = self.wrap_s(s);
        let seg = self.segment_at(s);
        let mut pose = seg.start.advance(s - seg.s0, seg.curvature);
        pose.heading = wrap_angle(pose.heading);
        pose
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.segment_at(self.wrap_s(s)).curvature
    }

    /// Point `offset` meters to the left of the centerline at `s`.
    pub fn lateral_point(&self, s: f64, offset: f64) -> (f64, f64) {
        let p = self.pose_at(s);
        let (sin, cos) = p.heading.sin_cos();
        (p.x - offset * sin, p.y + offset * cos)
    }

    /// Signed difference `b - a` along the loop, in (-length/2, length/2].
    pub fn arc_delta(&self, a: f64, b: f64) -> f64 {
        let mut d = (b - a).rem_euclid(self.length);
        if d > self.length / 2.0 {
            d -= self.length;
        }
        d
    }

    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best: Option<(f64, f64)> = None;
        for seg in &self.segments {
            let local = project_segment(seg, x, y);
            let p = seg.start.advance(local, seg.curvature);
            let dist2 = (x - p.x).powi(2) + (y - p.y).powi(2);
            if best.is_none_or(|(_, d)| dist2 < d) {
                best = Some((seg.s0 + local, dist2));
            }
        }
        let (s, _) = best.expect("track has at least one segment");
        let s = self.wrap_s(s);
        let seg = self.segment_at(s);
        let mut point = seg.start.advance(s - seg.s0, seg.curvature);
        point.heading = wrap_angle(point.heading);
        let (sin, cos) = point.heading.sin_cos();
        let offset = -(x - point.x) * sin + (y - point.y) * cos;
        Projection {
            s,
            point,
            offset,
            curvature: seg.curvature,
        }
    }
}

/// Arc parameter of the point on `seg` closest to (x, y), in [0, seg.length].
fn project_segment(seg: &Segment, x: f64, y: f64) -> f64 {
    let (sin0, cos0) = seg.start.heading.sin_cos();
    let dx = x - seg.start.x;
    let dy = y - seg.start.y;
    if seg.curvature == 0.0 {
        return (dx * cos0 + dy * sin0).clamp(0.0, seg.length);
    }
    let k = seg.curvature;
    let r = 1.0 / k;
    // Circle center sits at signed radius r to the left of the start pose.
    let cx = seg.start.x - r * sin0;
    let cy = seg.start.y + r * cos0;
    let start_angle = (seg.start.y - cy).atan2(seg.start.x - cx);
    let point_angle = (y - cy).atan2(x - cx);
    let swept = (point_angle - start_angle) * k.signum();
    let s = swept.rem_euclid(TAU) * r.abs();
    if s <= seg.length {
        return s;
    }
    // Outside the arc's span: pick whichever endpoint is closer.
    let end = seg.start.advance(seg.length, k);
    let d_start = dx * dx + dy * dy;
    let d_end = (x - end.x).powi(2) + (y - end.y).powi(2);
    if d_start <= d_end {
        0.0
    } else {
        seg.length
    }
}
