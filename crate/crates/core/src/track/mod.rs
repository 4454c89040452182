//! Multi-lane driving simulator.
//!
//! Roads are straight and periodic: a car leaving at `x = length` re-enters
//! at `x = 0`. Lanes are indexed from the right edge (`y = 0`), so lane `i`
//! has its centerline at `y = (i + 0.5) * lane_width` and "left" means larger
//! `y`. The ego car follows a unicycle model integrated with explicit Euler
//! steps; traffic holds its lane at constant speed and does not react.
//!
//! Every controller observes the same six features, in this order:
//!
//! | index | feature    | meaning                                            |
//! |-------|------------|----------------------------------------------------|
//! | 0     | `dist_dev` | signed offset from the current lane centre, m      |
//! | 1     | `theta_dev`| heading error against the road direction, rad      |
//! | 2     | `dist_l`   | nearest frontal car in the lane to the left, m     |
//! | 3     | `dist_c`   | nearest frontal car in the current lane, m         |
//! | 4     | `dist_r`   | nearest frontal car in the lane to the right, m    |
//! | 5     | `v`        | commanded speed, m/s                               |

mod episode;
mod eval;
mod expert;
mod io;
mod pipeline;
mod rhc;
mod scenario;

pub use episode::{run_episode, Driver, EpisodeStats, Simulation, TrackEpisode, TrajRecord};
pub use eval::{
    eval_trained, eval_transferred, Hist2d, HistRanges, TrainedMetrics, TransferredMetrics,
    HIST_BINS, METRIC_PAIRS,
};
pub use expert::{ScriptedExpert, K_HEADING, K_LATERAL};
pub use io::{read_trajectories, records_to_demo_set, write_trajectories};
pub use pipeline::{drive_rhc, expert_demos, learn_track_reward, TrackLearnConfig, TRACK_BANDWIDTH_SCALE};
pub use rhc::{rhc_plan, Plan, RhcConfig, RhcDriver, TrackReward, ACTION_GRID_V, ACTION_GRID_W};
pub use scenario::{
    trained_scenarios, transferred_scenarios, CarSpec, EgoStart, Scenario, Style, TRAFFIC_SPEED,
};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const LANE_WIDTH: f64 = 4.0;
pub const CAR_LENGTH: f64 = 4.0;
pub const CAR_WIDTH: f64 = 2.0;
/// Frontal distances are clipped to this range, and a missing lane reports it.
pub const D_MAX: f64 = 60.0;
pub const DT: f64 = 0.1;
pub const W_MAX: f64 = 1.0;
pub const FEATURE_DIM: usize = 6;

pub type Features = [f64; FEATURE_DIM];

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl CarState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v: f64,
    pub w: f64,
}

impl Action {
    pub fn new(v: f64, w: f64) -> Result<Self> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("speed must be >= 0, got {v}")));
        }
        if !(w.abs() <= W_MAX) {
            return Err(Error::InvalidInput(format!(
                "angular velocity must lie in [-{W_MAX}, {W_MAX}], got {w}"
            )));
        }
        Ok(Self { v, w })
    }
}

/// One explicit Euler step of the unicycle model.
pub fn step(s: &CarState, a: &Action, dt: f64) -> CarState {
    CarState {
        x: s.x + a.v * s.theta.cos() * dt,
        y: s.y + a.v * s.theta.sin() * dt,
        theta: wrap_angle(s.theta + a.w * dt),
    }
}

/// Position of one traffic car; traffic is always aligned with the road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficCar {
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
}

/// Signed along-road offset `to - from` on a ring of `length`, in
/// `[-length/2, length/2)`.
pub fn ring_offset(from: f64, to: f64, length: f64) -> f64 {
    (to - from + 0.5 * length).rem_euclid(length) - 0.5 * length
}

/// Index of the lane containing `y`, clamped to the road.
pub fn lane_index(y: f64, lanes: usize, lane_width: f64) -> usize {
    if y <= 0.0 {
        0
    } else {
        ((y / lane_width) as usize).min(lanes - 1)
    }
}

pub fn lane_center(lane: usize, lane_width: f64) -> f64 {
    (lane as f64 + 0.5) * lane_width
}

/// Distance to the nearest car ahead in `lane`, clipped to [`D_MAX`].
///
/// Distances run centre to centre along the road. A car overlapping the ego
/// lengthwise counts as directly ahead (distance 0).
pub fn frontal_distance(ego_x: f64, lane: usize, traffic: &[TrafficCar], length: f64) -> f64 {
    traffic
        .iter()
        .filter(|c| c.lane == lane)
        .map(|c| ring_offset(ego_x, c.x, length))
        .filter(|&ds| ds > -CAR_LENGTH)
        .fold(D_MAX, |m, ds| m.min(ds.max(0.0)))
}

/// The six observed features for the ego at `s` commanding speed `v`.
pub fn features_at(
    s: &CarState,
    v: f64,
    scenario: &Scenario,
    traffic: &[TrafficCar],
) -> Result<Features> {
    if !scenario.on_road(s.y) {
        return Err(Error::OffTrack { y: s.y });
    }
    Ok(observe(s, v, scenario, traffic))
}

/// [`features_at`] for a state already known to be on the road.
pub(crate) fn observe(s: &CarState, v: f64, scenario: &Scenario, traffic: &[TrafficCar]) -> Features {
    let width = scenario.lane_width;
    let lane = lane_index(s.y, scenario.lanes, width);
    let side = |l: Option<usize>| match l {
        Some(l) if l < scenario.lanes => frontal_distance(s.x, l, traffic, scenario.length),
        _ => D_MAX,
    };
    [
        s.y - lane_center(lane, width),
        s.theta,
        side(Some(lane + 1)),
        side(Some(lane)),
        side(lane.checked_sub(1)),
        v,
    ]
}

/// [`features_at`] with traffic placed at time `t`.
pub fn features(s: &CarState, v: f64, scenario: &Scenario, t: f64) -> Result<Features> {
    features_at(s, v, scenario, &scenario.traffic_at(t))
}

/// Separating-axis overlap test between the ego box and an aligned traffic
/// box whose centre is `(dx, dy)` away. Touching boxes do not overlap.
pub fn boxes_overlap(theta_a: f64, theta_b: f64, dx: f64, dy: f64) -> bool {
    let (hl, hw) = (0.5 * CAR_LENGTH, 0.5 * CAR_WIDTH);
    if dx.abs() >= CAR_LENGTH + CAR_WIDTH || dy.abs() >= CAR_LENGTH + CAR_WIDTH {
        return false;
    }
    let axes = |t: f64| {
        let (s, c) = t.sin_cos();
        [(c, s), (-s, c)]
    };
    let a = axes(theta_a);
    let b = axes(theta_b);
    let radius = |box_axes: &[(f64, f64); 2], n: (f64, f64)| {
        hl * (box_axes[0].0 * n.0 + box_axes[0].1 * n.1).abs()
            + hw * (box_axes[1].0 * n.0 + box_axes[1].1 * n.1).abs()
    };
    a.iter().chain(b.iter()).all(|&n| {
        let sep = (dx * n.0 + dy * n.1).abs();
        sep < radius(&a, n) + radius(&b, n)
    })
}

/// Whether the ego box overlaps any traffic car.
pub fn collides(s: &CarState, traffic: &[TrafficCar], scenario: &Scenario) -> bool {
    traffic.iter().any(|c| {
        let dx = ring_offset(s.x, c.x, scenario.length);
        let dy = lane_center(c.lane, scenario.lane_width) - s.y;
        boxes_overlap(s.theta, 0.0, dx, dy)
    })
}
