use super::episode::Driver;
use super::rhc::ACTION_GRID_V;
use super::scenario::{Scenario, Style};
use super::{lane_center, lane_index, ring_offset, Action, CarState, TrafficCar, CAR_LENGTH, D_MAX};
use crate::error::Result;

/// Lateral-offset gain, rad/(s m).
pub const K_LATERAL: f64 = 0.2;
/// Heading gain, 1/s: `2 sqrt(10 K_LATERAL)`, critically damped at 10 m/s.
pub const K_HEADING: f64 = 2.828_427_124_746_190_3;

/// Steering is quantized like keyboard input, and speed to the planner's
/// grid, so demonstrations stay inside the planner's action set.
const W_STEP: f64 = 0.5;
const W_THRESHOLD: f64 = 0.05;

const FOLLOW_GAIN: f64 = 0.5;
const TAILGATE_GAP: f64 = 10.0;
/// A tailgater only picks a new leader at least this far ahead.
const TAILGATE_MIN_LEAD: f64 = 12.0;
/// Cars this close behind block a lane change.
const REAR_CLEARANCE: f64 = 8.0;
/// A lane change starts only once the car has settled in its lane.
const SETTLED_OFFSET: f64 = 0.5;
const SETTLED_HEADING: f64 = 0.1;

/// Hand-written driver for one style.
///
/// Steers proportionally toward the centre of a target lane and picks the
/// target lane by style:
/// safe and speedy drivers leave a lane whose leader is closer than 30 m
/// (45 m when speedy) for a free neighbour, slowing behind the leader when no
/// neighbour is free; a tailgater moves into the lane of the nearest car
/// ahead and holds a 10 m gap behind it.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    style: Style,
    target_lane: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Lead {
    gap: f64,
    speed: f64,
}

fn lead_in(ego_x: f64, lane: usize, traffic: &[TrafficCar], length: f64) -> Option<Lead> {
    traffic
        .iter()
        .filter(|c| c.lane == lane)
        .map(|c| (ring_offset(ego_x, c.x, length), c.speed))
        .filter(|&(ds, _)| ds > -CAR_LENGTH)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(ds, speed)| Lead {
            gap: ds.max(0.0),
            speed,
        })
}

fn quantize(w: f64) -> f64 {
    if w > W_THRESHOLD {
        W_STEP
    } else if w < -W_THRESHOLD {
        -W_STEP
    } else {
        0.0
    }
}

/// The grid speed `m * v0` nearest to `v`; ties go to the slower one.
///
/// Behind a leader only grid speeds on the same side of the leader's speed
/// as `v` are candidates, so the gap closes exactly when the command asks
/// for it to close.
fn quantize_speed(v: f64, v0: f64, lead_speed: Option<f64>) -> f64 {
    let grid = ACTION_GRID_V.map(|m| m * v0);
    let nearest = |candidates: &mut dyn Iterator<Item = f64>| {
        candidates.min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
    };
    let side = lead_speed.and_then(|u| {
        nearest(&mut grid.iter().copied().filter(|&g| (g > u) == (v > u)))
    });
    side.or_else(|| nearest(&mut grid.iter().copied()))
        .expect("non-empty grid")
}

impl ScriptedExpert {
    pub fn new(style: Style) -> Self {
        Self {
            style,
            target_lane: None,
        }
    }


    pub fn style(&self) -> Style {
        self.style
    }

    pub fn target_lane(&self) -> Option<usize> {
        self.target_lane
    }

    fn change_threshold(&self) -> f64 {
        match self.style {
            Style::Speedy => 45.0,
            _ => 30.0,
        }
    }

    pub fn act(&mut self, s: &CarState, scenario: &Scenario, traffic: &[TrafficCar]) -> Action {
        let width = scenario.lane_width;
        let length = scenario.length;
        let current = lane_index(s.y, scenario.lanes, width);
        let mut target = *self.target_lane.get_or_insert(current);
        let settled = (s.y - lane_center(target, width)).abs() < SETTLED_OFFSET
            && s.theta.abs() < SETTLED_HEADING;
        let gap_in = |lane: usize| lead_in(s.x, lane, traffic, length).map_or(f64::INFINITY, |l| l.gap);
        let rear_clear = |lane: usize| {
            traffic
                .iter()
                .filter(|c| c.lane == lane)
                .map(|c| ring_offset(s.x, c.x, length))
                .all(|ds| ds >= CAR_LENGTH || ds <= -REAR_CLEARANCE)
        };
        let neighbours = |lane: usize| {
            [lane + 1, lane.wrapping_sub(1)]
                .into_iter()
                .filter(|&l| l < scenario.lanes)
        };
        let v0 = self.style.nominal_speed();

        let v = match self.style {
            Style::Safe | Style::Speedy => {
                let threshold = self.change_threshold();
                let here = gap_in(target);
                if settled && here < threshold {
                    let best = neighbours(target)
                        .filter(|&l| rear_clear(l))
                        .map(|l| (l, gap_in(l)))
                        .filter(|&(_, g)| g >= threshold || g > here + 10.0)
                        .max_by(|a, b| a.1.total_cmp(&b.1));
                    if let Some((l, _)) = best {
                        target = l;
                    }
                }
                match lead_in(s.x, target, traffic, length) {
                    Some(lead) if lead.gap < threshold => {
                        let follow = lead.speed + FOLLOW_GAIN * (lead.gap - 0.5 * threshold);
                        quantize_speed(follow.clamp(0.0, v0), v0, Some(lead.speed))
                    }
                    _ => v0,
                }
            }
            Style::Tailgate => {
                if settled && gap_in(target) > D_MAX {
                    let nearest = (0..scenario.lanes)
                        .filter_map(|l| lead_in(s.x, l, traffic, length).map(|lead| (l, lead.gap)))
                        .filter(|&(_, g)| (TAILGATE_MIN_LEAD..=D_MAX).contains(&g))
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    if let Some((l, _)) = nearest {
                        let (lo, hi) = (l.min(target), l.max(target));
                        if (lo..=hi).filter(|&m| m != target).all(rear_clear) {
                            target = l;
                        }
                    }
                }
                match lead_in(s.x, target, traffic, length) {
                    Some(lead) if lead.gap <= D_MAX => {
                        let follow = lead.speed + FOLLOW_GAIN * (lead.gap - TAILGATE_GAP);
                        quantize_speed(follow.clamp(0.0, 1.2 * v0), v0, Some(lead.speed))
                    }
                    _ => v0,
                }
            }
        };
        self.target_lane = Some(target);
        let offset = s.y - lane_center(target, width);
        let w = quantize(-K_LATERAL * offset - K_HEADING * s.theta);
        Action { v, w }
    }
}

impl Driver for ScriptedExpert {
    fn act(
        &mut self,
        s: &CarState,
        scenario: &Scenario,
        _t: f64,
        traffic: &[TrafficCar],
    ) -> Result<Action> {
        Ok(ScriptedExpert::act(self, s, scenario, traffic))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{run_episode, CarSpec, EgoStart, TRAFFIC_SPEED};

    fn road(style: Style, cars: Vec<CarSpec>, ego_lane: usize) -> Scenario {
        let mut s = Scenario::empty(3, 200.0, style);
        s.cars = cars;
        s.ego = EgoStart { lane: ego_lane, s0: 0.0 };
        s
    }

    #[test]
    fn cruising_speeds_on_an_empty_road() {
        for (style, v) in [(Style::Safe, 10.0), (Style::Speedy, 20.0), (Style::Tailgate, 10.0)] {
            let sc = road(style, vec![], 1);
            let ep = run_episode(&mut ScriptedExpert::new(style), &sc, 20.0, 0).unwrap();
            assert!(ep.records.iter().all(|r| r.v == v && r.w == 0.0));
            assert_eq!(ep.stats.lane_changes, 0);
            assert!(!ep.stats.collided);
        }
    }

    #[test]
    fn safe_driver_changes_lane_around_a_slow_car() {
        let car = CarSpec { lane: 1, s0: 40.0, speed: TRAFFIC_SPEED };
        let sc = road(Style::Safe, vec![car], 1);
        let ep = run_episode(&mut ScriptedExpert::new(Style::Safe), &sc, 30.0, 0).unwrap();
        assert!(ep.stats.lane_changes >= 1);
        assert!(!ep.stats.collided && !ep.stats.off_track);
    }

    #[test]
    fn tailgater_holds_a_ten_metre_gap() {
        let car = CarSpec { lane: 1, s0: 10.0, speed: TRAFFIC_SPEED };
        let sc = road(Style::Tailgate, vec![car], 1);
        let mut e = ScriptedExpert::new(Style::Tailgate);
        let ep = run_episode(&mut e, &sc, 20.0, 0).unwrap();
        assert_eq!(ep.stats.lane_changes, 0);
        let tail = &ep.records[ep.records.len() - 50..];
        let gap = tail.iter().map(|r| r.features[3]).sum::<f64>() / 50.0;
        let v = tail.iter().map(|r| r.v).sum::<f64>() / 50.0;
        assert!((gap - 10.0).abs() < 0.25, "gap {gap}");
        assert!((v - TRAFFIC_SPEED).abs() < 0.3, "v {v}");
        assert!(tail.iter().all(|r| (r.features[3] - 10.0).abs() < 1.0));
    }

    #[test]
    fn tailgater_moves_behind_the_nearest_car() {
        let car = CarSpec { lane: 2, s0: 30.0, speed: TRAFFIC_SPEED };
        let sc = road(Style::Tailgate, vec![car], 0);
        let mut e = ScriptedExpert::new(Style::Tailgate);
        let ep = run_episode(&mut e, &sc, 30.0, 0).unwrap();
        assert_eq!(e.target_lane(), Some(2));
        assert!(!ep.stats.collided);
        let tail = &ep.records[ep.records.len() - 50..];
        let gap = tail.iter().map(|r| r.features[3]).sum::<f64>() / 50.0;
        assert!((gap - 10.0).abs() < 0.5, "gap {gap}");
    }

    #[test]
    fn experts_drive_the_trained_roads_cleanly() {
        for style in Style::ALL {
            for sc in crate::track::trained_scenarios(style, 11) {
                let ep = run_episode(&mut ScriptedExpert::new(style), &sc, 20.0, 0).unwrap();
                assert!(!ep.stats.collided && !ep.stats.off_track, "{style} {sc:?}");
            }
        }
    }
}
