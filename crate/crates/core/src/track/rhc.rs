use serde::{Deserialize, Serialize};

use super::episode::Driver;
use super::scenario::Scenario;
use super::{observe, step, Action, CarState, Features, TrafficCar};
use crate::error::{Error, Result};
use crate::reward::RewardModel;

/// Speed multipliers of the nominal speed.
pub const ACTION_GRID_V: [f64; 3] = [0.6, 1.0, 1.2];
/// Angular velocities, rad/s.
pub const ACTION_GRID_W: [f64; 3] = [-0.5, 0.0, 0.5];
const N_ACTIONS: usize = ACTION_GRID_V.len() * ACTION_GRID_W.len();

/// Relative score difference below which two sequences tie.
const TIE_EPS: f64 = 1e-12;

/// A reward over the six track features.
pub trait TrackReward {
    fn reward(&self, f: &Features) -> f64;
}

impl TrackReward for RewardModel {
    fn reward(&self, f: &Features) -> f64 {
        self.eval_unchecked(f)
    }
}

impl<F: Fn(&Features) -> f64> TrackReward for F {
    fn reward(&self, f: &Features) -> f64 {
        self(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhcConfig {
    /// Number of constant-action segments per plan.
    pub depth: usize,
    /// Simulation ticks per segment.
    pub segment_steps: usize,
    pub dt: f64,
}

impl Default for RhcConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            segment_steps: 6,
            dt: super::DT,
        }
    }
}

impl RhcConfig {
    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.segment_steps == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidInput(
                "planner needs depth >= 1, segment_steps >= 1 and dt > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn horizon_steps(&self) -> usize {
        self.depth * self.segment_steps
    }
}

/// Result of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub action: Action,
    pub score: f64,
    /// Indices into the 9-action grid, one per segment.
    pub sequence: Vec<usize>,
    /// No sequence stayed on the road.
    pub distress: bool,
}

fn grid_action(index: usize, v0: f64) -> Action {
    Action {
        v: ACTION_GRID_V[index / ACTION_GRID_W.len()] * v0,
        w: ACTION_GRID_W[index % ACTION_GRID_W.len()],
    }
}

struct Search<'a> {
    reward: &'a dyn TrackReward,
    scenario: &'a Scenario,
    traffic: Vec<Vec<TrafficCar>>,
    cfg: RhcConfig,
    v0: f64,
    seq: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    fn tie_key(seq: &[usize]) -> (u64, &[usize]) {
        let w = ACTION_GRID_W[seq[0] % ACTION_GRID_W.len()].abs();
        (w.to_bits(), seq)
    }

    fn consider(&mut self, score: f64) {
        let better = match &self.best {
            None => true,
            Some((best, best_seq)) => {
                let eps = TIE_EPS * best.abs().max(score.abs());
                if score > best + eps {
                    true
                } else if score >= best - eps {
                    Self::tie_key(&self.seq) < Self::tie_key(best_seq)
                } else {
                    false
                }
            }
        };
        if better {
            self.best = Some((score, self.seq.clone()));
        }
    }

    fn descend(&mut self, level: usize, from: CarState, score: f64) {
        for index in 0..N_ACTIONS {
            let a = grid_action(index, self.v0);
            let mut s = from;
            let mut total = score;
            let mut on_road = true;
            for k in 0..self.cfg.segment_steps {
                let j = level * self.cfg.segment_steps + k;
                total += self.reward.reward(&observe(&s, a.v, self.scenario, &self.traffic[j]));
                s = step(&s, &a, self.cfg.dt);
                if !self.scenario.on_road(s.y) {
                    on_road = false;
                    break;
                }
            }
            if !on_road {
                continue;
            }
            self.seq.push(index);
            if level + 1 == self.cfg.depth {
                self.consider(total);
            } else {
                self.descend(level + 1, s, total);
            }
            self.seq.pop();
        }
    }
}

/// Exhaustive search over `9^depth` constant-action segment sequences.
///
/// A sequence scores the summed reward of every simulated tick, with traffic
/// advanced at its constant speed. Sequences that leave the road are
/// discarded. Ties go to the smaller `|w|` of the first action, then to the
/// lexicographically smaller sequence. `v0` is the style's nominal speed.
pub fn rhc_plan(
    reward: &dyn TrackReward,
    s: &CarState,
    scenario: &Scenario,
    t: f64,
    v0: f64,
    cfg: &RhcConfig,
) -> Result<Plan> {
    cfg.validate()?;
    if !scenario.on_road(s.y) {
        return Err(Error::OffTrack { y: s.y });
    }
    let traffic = (0..cfg.horizon_steps())
        .map(|j| scenario.traffic_at(t + j as f64 * cfg.dt))
        .collect();
    let mut search = Search {
        reward,
        scenario,
        traffic,
        cfg: *cfg,
        v0,
        seq: Vec::with_capacity(cfg.depth),
        best: None,
    };
    search.descend(0, *s, 0.0);
    Ok(match search.best {
        Some((score, sequence)) => Plan {
            action: grid_action(sequence[0], v0),
            score,
            sequence,
            distress: false,
        },
        None => Plan {
            action: Action {
                v: ACTION_GRID_V[0] * v0,
                w: 0.0,
            },
            score: f64::NEG_INFINITY,
            sequence: Vec::new(),
            distress: true,
        },
    })
}

/// Replans every tick and executes the first action of the best sequence.
pub struct RhcDriver<'a> {
    reward: &'a dyn TrackReward,
    v0: f64,
    cfg: RhcConfig,
    distress: usize,
}

impl<'a> RhcDriver<'a> {
    pub fn new(reward: &'a dyn TrackReward, v0: f64, cfg: RhcConfig) -> Self {
        Self {
            reward,
            v0,
            cfg,
            distress: 0,
        }
    }
}

impl Driver for RhcDriver<'_> {
    fn act(&mut self, s: &CarState, scenario: &Scenario, t: f64, _: &[TrafficCar]) -> Result<Action> {
        let plan = rhc_plan(self.reward, s, scenario, t, self.v0, &self.cfg)?;
        if plan.distress {
            self.distress += 1;
        }
        Ok(plan.action)
    }

    fn distress_count(&self) -> usize {
        self.distress
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{lane_center, run_episode, Style, LANE_WIDTH};

    fn centre_seeking(f: &Features) -> f64 {
        -f[0] * f[0]
    }

    fn road() -> Scenario {
        Scenario::empty(3, 200.0, Style::Safe)
    }

    /// Scores every sequence independently, without prefix sharing.
    fn brute_force(reward: &dyn TrackReward, s: &CarState, sc: &Scenario, v0: f64, cfg: &RhcConfig) -> Vec<(Vec<usize>, Option<f64>)> {
        let n = N_ACTIONS.pow(cfg.depth as u32);
        (0..n)
            .map(|mut code| {
                let mut seq = vec![0; cfg.depth];
                for slot in seq.iter_mut().rev() {
                    *slot = code % N_ACTIONS;
                    code /= N_ACTIONS;
                }
                let mut st = *s;
                let mut total = 0.0;
                for (level, &i) in seq.iter().enumerate() {
                    let a = grid_action(i, v0);
                    for k in 0..cfg.segment_steps {
                        let t = (level * cfg.segment_steps + k) as f64 * cfg.dt;
                        let f = crate::track::features(&st, a.v, sc, t).unwrap();
                        total += reward.reward(&f);
                        st = step(&st, &a, cfg.dt);
                        if !sc.on_road(st.y) {
                            return (seq, None);
                        }
                    }
                }
                (seq, Some(total))
            })
            .collect()
    }

    /// One 0.6 s segment at 0.5 rad/s overshoots offsets below ~0.47 m, so
    /// the planner only steers beyond that.
    #[test]
    fn steers_back_toward_the_centre() {
        let sc = road();
        let cfg = RhcConfig::default();
        for dev in [-1.5, -1.0, -0.5, 0.5, 1.0, 1.5] {
            let s = CarState::new(0.0, lane_center(1, LANE_WIDTH) + dev, 0.0);
            let plan = rhc_plan(&centre_seeking, &s, &sc, 0.0, 10.0, &cfg).unwrap();
            assert!(plan.action.w * dev < 0.0, "dev {dev} chose w {}", plan.action.w);
        }
    }

    #[test]
    fn centred_car_goes_straight() {
        let sc = road();
        let s = CarState::new(0.0, lane_center(1, LANE_WIDTH), 0.0);
        let plan = rhc_plan(&centre_seeking, &s, &sc, 0.0, 10.0, &RhcConfig::default()).unwrap();
        assert_eq!(plan.action.w, 0.0);
    }

    #[test]
    fn returned_sequence_dominates_every_other() {
        let sc = crate::track::trained_scenarios(Style::Safe, 2)[5].clone();
        let reward = |f: &Features| -f[0] * f[0] - 0.1 * f[1] * f[1] + 0.01 * f[3] - 0.02 * (f[5] - 10.0).abs();
        let cfg = RhcConfig { depth: 2, ..RhcConfig::default() };
        let s = CarState::new(0.0, lane_center(0, LANE_WIDTH) + 0.7, 0.05);
        let plan = rhc_plan(&reward, &s, &sc, 0.0, 10.0, &cfg).unwrap();
        let all = brute_force(&reward, &s, &sc, 10.0, &cfg);
        let best = all.iter().filter_map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        assert!((plan.score - best).abs() <= 1e-9 * best.abs().max(1.0));
        for (_, v) in all.iter().filter(|(_, v)| v.is_some()) {
            assert!(plan.score >= v.unwrap() - 1e-9);
        }
        let mine = all.iter().find(|(q, _)| *q == plan.sequence).unwrap();
        assert!((mine.1.unwrap() - plan.score).abs() < 1e-9);
    }

    #[test]
    fn hugging_the_edge_avoids_leaving_the_road() {
        let sc = road();
        let s = CarState::new(0.0, 1.0, -0.2);
        let plan = rhc_plan(&|_: &Features| 0.0, &s, &sc, 0.0, 10.0, &RhcConfig::default()).unwrap();
        assert!(!plan.distress);
        assert!(plan.action.w > 0.0);
    }

    #[test]
    fn no_feasible_sequence_is_distress() {
        let sc = road();
        let s = CarState::new(0.0, 0.05, -1.5);
        let plan = rhc_plan(&|_: &Features| 0.0, &s, &sc, 0.0, 10.0, &RhcConfig::default()).unwrap();
        assert!(plan.distress);
        assert_eq!(plan.action, Action { v: 6.0, w: 0.0 });
    }

    #[test]
    fn closed_loop_keeps_to_the_lane_centre() {
        let sc = road();
        let mut driver = RhcDriver::new(&centre_seeking, 10.0, RhcConfig::default());
        let ep = run_episode(&mut driver, &sc, 60.0, 0).unwrap();
        assert_eq!(ep.records.len(), 600);
        let worst = ep.records.iter().map(|r| r.features[0].abs()).fold(0.0, f64::max);
        assert!(worst < 0.3, "max |dist_dev| {worst}");
        assert!(!ep.stats.crashed());
    }
}
