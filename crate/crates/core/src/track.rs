//! Reference path, obstacle and road-edge geometry.
//!
//! The path is sampled by travelled distance and evaluated with a C1
//! piecewise-cubic Hermite; the heading is unwrapped before interpolation so
//! evaluations never jump across the -pi/pi seam.

use serde::{Deserialize, Serialize};

use crate::math::{DualN, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// Travelled distance along the path [m]
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("reference path needs at least two samples")]
    EmptyPath,
    #[error("path distance must be strictly increasing (sample {0})")]
    NonMonotonicTheta(usize),
    #[error("heading at sample {index} deviates {deviation:.3} rad from the tangent")]
    HeadingMismatch { index: usize, deviation: f64 },
    #[error("obstacle {index} at ({x:.1}, {y:.1}) leaves no avoidance corridor")]
    ObstacleOutsideRoad { index: usize, x: f64, y: f64 },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
    /// Heading unwrapped to a continuous sequence.
    psi_unwrapped: Vec<f64>,
    /// Road width [m]
    pub width: f64,
}

impl ReferencePath {
    /// Validates monotone distance and heading/tangent consistency
    /// (finite-difference tangent within 0.1 rad).
    pub fn new(samples: Vec<PathSample>, width: f64) -> Result<Self, TrackError> {
        if samples.len() < 2 {
            return Err(TrackError::EmptyPath);
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(TrackError::InvalidConfig("road width must be positive".into()));
        }
        for i in 1..samples.len() {
            if samples[i].theta <= samples[i - 1].theta {
                return Err(TrackError::NonMonotonicTheta(i));
            }
        }
        for i in 0..samples.len() - 1 {
            let dx = samples[i + 1].x - samples[i].x;
            let dy = samples[i + 1].y - samples[i].y;
            let tangent = dy.atan2(dx);
            let dev = wrap_angle(samples[i].psi - tangent).abs();
            if dev > 0.1 {
                return Err(TrackError::HeadingMismatch { index: i, deviation: dev });
            }
        }
        let mut psi_unwrapped = Vec::with_capacity(samples.len());
        let mut prev = samples[0].psi;
        psi_unwrapped.push(prev);
        for s in &samples[1..] {
            let next = prev + wrap_angle(s.psi - prev);
            psi_unwrapped.push(next);
            prev = next;
        }
        Ok(ReferencePath { samples, psi_unwrapped, width })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn theta_min(&self) -> f64 {
        self.samples[0].theta
    }

    pub fn theta_max(&self) -> f64 {
        self.samples[self.samples.len() - 1].theta
    }

    pub fn start_pose(&self) -> (f64, f64, f64) {
        let s = &self.samples[0];
        (s.x, s.y, s.psi)
    }

    /// Position and heading at travelled distance `theta` (clamped to range).
    pub fn sample<R: Real>(&self, theta: R) -> (R, R, R) {
        let lo = self.theta_min();
        let hi = self.theta_max();
        let th = theta.clamp_by_value(R::from_f64(lo), R::from_f64(hi));
        let k = self.interval_of(th.value());
        let t0 = self.samples[k].theta;
        let t1 = self.samples[k + 1].theta;
        let h = t1 - t0;
        let s = (th - R::from_f64(t0)) * R::from_f64(1.0 / h);

        let x = self.hermite(k, s, h, |i| self.samples[i].x);
        let y = self.hermite(k, s, h, |i| self.samples[i].y);
        let psi = self.hermite(k, s, h, |i| self.psi_unwrapped[i]);
        (x, y, psi)
    }

    /// Path curvature d(psi)/d(theta) at `theta` [1/m].
    pub fn curvature(&self, theta: f64) -> f64 {
        let th = DualN::<1>::variable(theta, 0);
        let (_, _, psi) = self.sample(th);
        psi.eps[0]
    }

    fn interval_of(&self, theta: f64) -> usize {
        let n = self.samples.len();
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.samples[mid].theta <= theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Catmull-Rom tangent at knot `i` for the quantity `f`.
    fn tangent(&self, i: usize, f: &impl Fn(usize) -> f64) -> f64 {
        let n = self.samples.len();
        if i == 0 {
            (f(1) - f(0)) / (self.samples[1].theta - self.samples[0].theta)
        } else if i == n - 1 {
            (f(n - 1) - f(n - 2)) / (self.samples[n - 1].theta - self.samples[n - 2].theta)
        } else {
            (f(i + 1) - f(i - 1)) / (self.samples[i + 1].theta - self.samples[i - 1].theta)
        }
    }

    fn hermite<R: Real>(&self, k: usize, s: R, h: f64, f: impl Fn(usize) -> f64) -> R {
        let p0 = R::from_f64(f(k));
        let p1 = R::from_f64(f(k + 1));
        let m0 = R::from_f64(self.tangent(k, &f) * h);
        let m1 = R::from_f64(self.tangent(k + 1, &f) * h);
        let one = R::from_f64(1.0);
        let two = R::from_f64(2.0);
        let three = R::from_f64(3.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = two * s3 - three * s2 + one;
        let h10 = s3 - two * s2 + s;
        let h01 = three * s2 - two * s3;
        let h11 = s3 - s2;
        h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    } else if x < -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Circle-to-circle clearance; negative means the circles overlap.
pub fn v2o_distance<R: Real>(x: R, y: R, obs: &Obstacle, rveh: f64) -> R {
    let dx = x - R::from_f64(obs.x);
    let dy = y - R::from_f64(obs.y);
    (dx * dx + dy * dy).sqrt() - R::from_f64(obs.radius + rveh)
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: ReferencePath,
    pub obstacles: Vec<Obstacle>,
    /// Lateral edge offsets from the centerline, left positive [m].
    pub edge_offsets: Vec<f64>,
    /// Vehicle circle radius [m]
    pub rveh: f64,
    /// Desired speed [m/s]
    pub vdes: f64,
    /// Activation distance of the obstacle-avoidance cost [m]
    pub dsft_obstacle: f64,
    /// Activation distance of the edge-avoidance cost [m]
    pub dsft_edge: f64,
}

impl Scenario {
    /// Signed lateral offset of (x, y) from the centerline point matched at
    /// `theta`, left of the path positive.
    pub fn lateral_offset<R: Real>(&self, x: R, y: R, theta: R) -> R {
        let (xt, yt, psit) = self.path.sample(theta);
        -(x - xt) * psit.sin() + (y - yt) * psit.cos()
    }

    /// Clearance to every road edge, ordered as `edge_offsets`.
    pub fn edge_clearances<R: Real>(&self, x: R, y: R, theta: R) -> Vec<R> {
        let e_lat = self.lateral_offset(x, y, theta);
        self.edge_offsets
            .iter()
            .map(|&off| {
                let signed = if off >= 0.0 {
                    R::from_f64(off) - e_lat
                } else {
                    e_lat - R::from_f64(off)
                };
                signed - R::from_f64(self.rveh)
            })
            .collect()
    }

    /// Clearance to every obstacle.
    pub fn obstacle_clearances<R: Real>(&self, x: R, y: R) -> Vec<R> {
        self.obstacles
            .iter()
            .map(|o| v2o_distance(x, y, o, self.rveh))
            .collect()
    }

    /// Checks that every obstacle leaves an avoidance corridor of at least
    /// its own radius plus the vehicle radius inside the edges.
    pub fn validate(&self) -> Result<(), TrackError> {
        let half = self.path.width / 2.0;
        for (index, o) in self.obstacles.iter().enumerate() {
            if o.radius <= 0.0 {
                return Err(TrackError::InvalidConfig(format!(
                    "obstacle {index} radius must be positive"
                )));
            }
            let theta = self.theta_at_x(o.x);
            let offset = self
                .lateral_offset(o.x, o.y, theta)
                .abs();
            if offset > half - (o.radius + self.rveh) {
                return Err(TrackError::ObstacleOutsideRoad { index, x: o.x, y: o.y });
            }
        }
        if !(self.dsft_obstacle > 0.0 && self.dsft_edge > 0.0) {
            return Err(TrackError::InvalidConfig(
                "safety distances must be positive".into(),
            ));
        }
        if !self.edge_offsets.is_empty() && self.edge_offsets.len() != 2 {
            return Err(TrackError::InvalidConfig(
                "road must have zero or two edges".into(),
            ));
        }
        Ok(())
    }

    /// Travelled distance of the centerline point nearest in x; assumes the
    /// path advances monotonically in x (true for the lane-change layouts).
    fn theta_at_x(&self, x: f64) -> f64 {
        let samples = self.path.samples();
        let mut best = samples[0].theta;
        let mut best_d = f64::INFINITY;
        for s in samples {
            let d = (s.x - x).abs();
            if d < best_d {
                best_d = d;
                best = s.theta;
            }
        }
        best
    }
}

/// Double-lane-change layout parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlcConfig {
    /// Total course length [m]
    pub length: f64,
    /// Lateral offset of the evasion lane [m]
    pub lane_offset: f64,
    /// Road width [m]
    pub road_width: f64,
    /// Start of the outbound transition [m]
    pub ramp_out_start: f64,
    /// Length of the outbound transition [m]
    pub ramp_out_length: f64,
    /// Start of the return transition [m]
    pub ramp_back_start: f64,
    /// Length of the return transition [m]
    pub ramp_back_length: f64,
    /// Spacing of the path samples [m]
    pub knot_spacing: f64,
    /// First obstacle: blocks the original lane [m]
    pub obstacle1_x: f64,
    /// Second obstacle: blocks the evasion lane past the return [m]
    pub obstacle2_x: f64,
    pub obstacle_radius: f64,
    pub vehicle_radius: f64,
    /// Desired speed [m/s]
    pub vdes: f64,
    /// Obstacle-cost activation distance [m]
    pub dsft_obstacle: f64,
    /// Edge-cost activation distance [m]
    pub dsft_edge: f64,
}

impl Default for DlcConfig {
    fn default() -> Self {
        DlcConfig {
            length: 200.0,
            lane_offset: 3.5,
            road_width: 7.0,
            ramp_out_start: 93.0,
            ramp_out_length: 20.0,
            ramp_back_start: 130.0,
            ramp_back_length: 20.0,
            knot_spacing: 1.0,
            obstacle1_x: 99.0,
            obstacle2_x: 135.0,
            obstacle_radius: 1.0,
            vehicle_radius: 1.0,
            vdes: 19.4,
            dsft_obstacle: 5.0,
            dsft_edge: 1.0,
        }
    }
}

impl DlcConfig {
    /// Lateral centerline position at longitudinal position `x`.
    pub fn profile(&self, x: f64) -> f64 {
        let out = smoothstep((x - self.ramp_out_start) / self.ramp_out_length);
        let back = smoothstep((x - self.ramp_back_start) / self.ramp_back_length);
        self.lane_offset * (out - back)
    }

    fn profile_slope(&self, x: f64) -> f64 {
        let out = smoothstep_slope((x - self.ramp_out_start) / self.ramp_out_length)
            / self.ramp_out_length;
        let back = smoothstep_slope((x - self.ramp_back_start) / self.ramp_back_length)
            / self.ramp_back_length;
        self.lane_offset * (out - back)
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn smoothstep_slope(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        6.0 * t * (1.0 - t)
    } else {
        0.0
    }
}

/// Build the double-lane-change scenario: straight approach, offset lane
/// around the first obstacle, return across the second.
pub fn build_dlc_scenario(cfg: &DlcConfig) -> Result<Scenario, TrackError> {
    if cfg.knot_spacing <= 0.0 || cfg.length <= 0.0 {
        return Err(TrackError::InvalidConfig(
            "length and knot spacing must be positive".into(),
        ));
    }
    let n = (cfg.length / cfg.knot_spacing).ceil() as usize + 1;
    let mut samples = Vec::with_capacity(n);
    let mut theta = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..n {
        let x = (i as f64 * cfg.knot_spacing).min(cfg.length);
        let y = cfg.profile(x);
        if let Some((px, py)) = prev {
            theta += ((x - px).powi(2) + (y - py).powi(2)).sqrt();
        }
        let psi = cfg.profile_slope(x).atan();
        samples.push(PathSample { theta, x, y, psi });
        prev = Some((x, y));
    }
    let path = ReferencePath::new(samples, cfg.road_width)?;
    let scenario = Scenario {
        path,
        obstacles: vec![
            Obstacle { x: cfg.obstacle1_x, y: 0.0, radius: cfg.obstacle_radius },
            Obstacle {
                x: cfg.obstacle2_x,
                y: cfg.lane_offset,
                radius: cfg.obstacle_radius,
            },
        ],
        edge_offsets: vec![cfg.road_width / 2.0, -cfg.road_width / 2.0],
        rveh: cfg.vehicle_radius,
        vdes: cfg.vdes,
        dsft_obstacle: cfg.dsft_obstacle,
        dsft_edge: cfg.dsft_edge,
    };
    scenario.validate()?;
    Ok(scenario)
}
