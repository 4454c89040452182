use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{lane_center, CarState, TrafficCar, CAR_LENGTH, D_MAX, LANE_WIDTH};
use crate::error::{Error, Result};
use crate::rng::SeedStreams;

/// 30 km/h.
pub const TRAFFIC_SPEED: f64 = 30.0 / 3.6;

const TRAINED_LANES: usize = 3;
const TRAINED_LENGTH: f64 = 300.0;
const TRAINED_CONFIGS: usize = 10;
const TRANSFERRED_LANES: usize = 5;
const TRANSFERRED_LENGTH: f64 = 600.0;
const TRANSFERRED_EPISODES: usize = 10;
/// Road kept free of traffic ahead of and behind the ego start.
const START_CLEAR_AHEAD: f64 = 35.0;
const START_CLEAR_BEHIND: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Safe,
    Speedy,
    Tailgate,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Safe, Style::Speedy, Style::Tailgate];

    /// Cruising speed, m/s.
    pub fn nominal_speed(self) -> f64 {
        match self {
            Style::Safe | Style::Tailgate => 10.0,
            Style::Speedy => 20.0,
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Safe => "safe",
            Style::Speedy => "speedy",
            Style::Tailgate => "tailgate",
        })
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe" => Ok(Style::Safe),
            "speedy" => Ok(Style::Speedy),
            "tailgate" => Ok(Style::Tailgate),
            other => Err(Error::InvalidInput(format!(
                "unknown style {other:?} (expected safe, speedy or tailgate)"
            ))),
        }
    }
}

/// A traffic car: lane, start position along the road and constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarSpec {
    pub lane: usize,
    pub s0: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoStart {
    pub lane: usize,
    #[serde(default)]
    pub s0: f64,
}

fn default_lane_width() -> f64 {
    LANE_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lanes: usize,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    /// Ring length, m.
    pub length: f64,
    #[serde(default)]
    pub cars: Vec<CarSpec>,
    pub style: Style,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ego: EgoStart,
}

impl Scenario {
    pub fn empty(lanes: usize, length: f64, style: Style) -> Self {
        Self {
            lanes,
            lane_width: LANE_WIDTH,
            length,
            cars: Vec::new(),
            style,
            seed: 0,
            ego: EgoStart::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.lanes == 0 {
            return bad("a road needs at least one lane".into());
        }
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return bad(format!("lane width must be > 0, got {}", self.lane_width));
        }
        let min_len = 2.0 * (D_MAX + CAR_LENGTH);
        if !(self.length >= min_len && self.length.is_finite()) {
            return bad(format!(
                "road length must be at least {min_len} m, got {}",
                self.length
            ));
        }
        if self.ego.lane >= self.lanes || !self.ego.s0.is_finite() {
            return bad(format!("ego start lane {} is not on the road", self.ego.lane));
        }
        for (i, c) in self.cars.iter().enumerate() {
            if c.lane >= self.lanes {
                return bad(format!("car {i} is in lane {} of {}", c.lane, self.lanes));
            }
            if !(c.speed >= 0.0 && c.speed.is_finite() && c.s0.is_finite()) {
                return bad(format!("car {i} needs a finite position and speed >= 0"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn road_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width
    }

    pub fn on_road(&self, y: f64) -> bool {
        (0.0..=self.road_width()).contains(&y)
    }

    pub fn ego_start(&self) -> CarState {
        CarState::new(
            self.ego.s0.rem_euclid(self.length),
            lane_center(self.ego.lane, self.lane_width),
            0.0,
        )
    }

    pub fn traffic_at(&self, t: f64) -> Vec<TrafficCar> {
        let mut out = Vec::with_capacity(self.cars.len());
        self.traffic_into(t, &mut out);
        out
    }

    pub fn traffic_into(&self, t: f64, out: &mut Vec<TrafficCar>) {
        out.clear();
        out.extend(self.cars.iter().map(|c| TrafficCar {
            lane: c.lane,
            x: (c.s0 + c.speed * t).rem_euclid(self.length),
            speed: c.speed,
        }));
    }
}

/// Places `n` cars in evenly spaced slots along the road with jitter and a
/// random lane each, leaving room around the ego start.
///
/// Consecutive cars sit at least ~20 m apart along the road regardless of
/// lane, so there is always a lane to pass in.
fn place_traffic(
    rng: &mut crate::rng::Rng,
    n: usize,
    lanes: usize,
    length: f64,
    ego_s0: f64,
) -> Vec<CarSpec> {
    let span = length - START_CLEAR_AHEAD - START_CLEAR_BEHIND;
    let spacing = span / n.max(1) as f64;
    let jitter = (spacing / 6.0).min(5.0);
    (0..n)
        .map(|k| {
            let centre = START_CLEAR_AHEAD + (k as f64 + 0.5) * spacing;
            CarSpec {
                lane: rng.gen_range(0..lanes),
                s0: (ego_s0 + centre + rng.gen_range(-jitter..=jitter)).rem_euclid(length),
                speed: TRAFFIC_SPEED,
            }
        })
        .collect()
}

/// The 30 trained-track episodes for one style.
///
/// Ten traffic configurations of one to five cars on a 300 m three-lane road,
/// each driven once from every lane. Traffic depends on `seed` only, so all
/// styles see the same roads.
pub fn trained_scenarios(style: Style, seed: u64) -> Vec<Scenario> {
    let streams = SeedStreams::new(seed);
    (0..TRAINED_CONFIGS * TRAINED_LANES)
        .map(|e| {
            let config = e / TRAINED_LANES;
            let mut rng = streams.indexed("traffic", config as u64);
            let n = 1 + config % 5;
            Scenario {
                lanes: TRAINED_LANES,
                lane_width: LANE_WIDTH,
                length: TRAINED_LENGTH,
                cars: place_traffic(&mut rng, n, TRAINED_LANES, TRAINED_LENGTH, 0.0),
                style,
                seed,
                ego: EgoStart {
                    lane: e % TRAINED_LANES,
                    s0: 0.0,
                },
            }
        })
        .collect()
}

/// The 10 transferred-track episodes: a 600 m five-lane road with five to ten
/// cars at 30 km/h.
pub fn transferred_scenarios(style: Style, seed: u64) -> Vec<Scenario> {
    let streams = SeedStreams::new(seed);
    (0..TRANSFERRED_EPISODES)
        .map(|e| {
            let mut rng = streams.indexed("traffic-transfer", e as u64);
            let n = 5 + e % 6;
            Scenario {
                lanes: TRANSFERRED_LANES,
                lane_width: LANE_WIDTH,
                length: TRANSFERRED_LENGTH,
                cars: place_traffic(&mut rng, n, TRANSFERRED_LANES, TRANSFERRED_LENGTH, 0.0),
                style,
                seed,
                ego: EgoStart {
                    lane: e % TRANSFERRED_LANES,
                    s0: 0.0,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::ring_offset;

    #[test]
    fn trained_set_shape() {
        let all = trained_scenarios(Style::Safe, 7);
        assert_eq!(all.len(), 30);
        for s in &all {
            s.validate().unwrap();
            assert!((1..=5).contains(&s.cars.len()));
            assert_eq!(s.lanes, 3);
        }
        assert_eq!(all[0].cars, all[2].cars);
        assert_ne!(all[0].ego.lane, all[1].ego.lane);
    }

    #[test]
    fn transferred_set_shape() {
        let all = transferred_scenarios(Style::Speedy, 7);
        assert_eq!(all.len(), 10);
        for s in &all {
            s.validate().unwrap();
            assert!((5..=10).contains(&s.cars.len()));
            assert!(s.cars.iter().all(|c| c.speed == TRAFFIC_SPEED));
        }
    }

    #[test]
    fn traffic_leaves_room_at_the_start_and_between_cars() {
        for seed in 0..20 {
            for s in trained_scenarios(Style::Safe, seed) {
                for c in &s.cars {
                    let ds = ring_offset(0.0, c.s0, s.length);
                    assert!(ds >= 30.0 || ds <= -10.0, "car at {ds}");
                }
                let mut xs: Vec<f64> = s.cars.iter().map(|c| c.s0).collect();
                xs.sort_by(f64::total_cmp);
                assert!(xs.windows(2).all(|w| w[1] - w[0] >= 19.9));
            }
        }
    }

    #[test]
    fn scenario_json_round_trip_and_defaults() {
        let s = &trained_scenarios(Style::Tailgate, 1)[4];
        let back = Scenario::from_json(&serde_json::to_string(s).unwrap()).unwrap();
        assert_eq!(&back, s);
        let minimal = r#"{"lanes":3,"length":200,"cars":[{"lane":1,"s0":40,"speed":8}],"style":"safe","seed":3}"#;
        let m = Scenario::from_json(minimal).unwrap();
        assert_eq!(m.lane_width, LANE_WIDTH);
        assert_eq!(m.ego, EgoStart::default());
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = Scenario::empty(3, 200.0, Style::Safe);
        s.cars.push(CarSpec { lane: 3, s0: 0.0, speed: 1.0 });
        assert!(s.validate().is_err());
        assert!(Scenario::empty(0, 200.0, Style::Safe).validate().is_err());
        assert!(Scenario::empty(3, 50.0, Style::Safe).validate().is_err());
        assert!("reckless".parse::<Style>().is_err());
    }

    #[test]
    fn traffic_moves_at_constant_speed_around_the_ring() {
        let mut s = Scenario::empty(2, 200.0, Style::Safe);
        s.cars.push(CarSpec { lane: 1, s0: 190.0, speed: 10.0 });
        let t = s.traffic_at(2.0);
        assert!((t[0].x - 10.0).abs() < 1e-9);
    }
}
