use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::{collides, features_at, lane_index, step, Action, CarState, Features, TrafficCar, DT};
use crate::error::{Error, Result};

/// Anything that picks an ego action each tick.
pub trait Driver {
    fn act(
        &mut self,
        s: &CarState,
        scenario: &Scenario,
        t: f64,
        traffic: &[TrafficCar],
    ) -> Result<Action>;

    /// Ticks on which the driver had no acceptable option.
    fn distress_count(&self) -> usize {
        0
    }
}

/// One logged tick: the state, the action taken from it, and the features
/// observed for that state-action pair. `t` is the tick index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub episode: usize,
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
    pub features: Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub steps: usize,
    pub collided: bool,
    pub off_track: bool,
    pub lane_changes: usize,
    pub mean_abs_dev: f64,
    pub mean_abs_theta: f64,
    pub mean_v: f64,
    pub distress: usize,
}

impl EpisodeStats {
    /// A collision or leaving the road.
    pub fn crashed(&self) -> bool {
        self.collided || self.off_track
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEpisode {
    pub records: Vec<TrajRecord>,
    pub stats: EpisodeStats,
}

/// A live ego car on a scenario, advanced one tick at a time.
///
/// The simulation stops accepting actions once the ego collides or leaves
/// the road. Every accepted tick is logged.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    episode: usize,
    state: CarState,
    tick: usize,
    traffic: Vec<TrafficCar>,
    lane: usize,
    records: Vec<TrajRecord>,
    stats: EpisodeStats,
}

impl Simulation {
    pub fn new(scenario: Scenario, episode: usize) -> Result<Self> {
        scenario.validate()?;
        let state = scenario.ego_start();
        let traffic = scenario.traffic_at(0.0);
        let lane = lane_index(state.y, scenario.lanes, scenario.lane_width);
        let mut sim = Self {
            scenario,
            episode,
            state,
            tick: 0,
            traffic,
            lane,
            records: Vec::new(),
            stats: EpisodeStats::default(),
        };
        sim.stats.collided = collides(&sim.state, &sim.traffic, &sim.scenario);
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }

    pub fn traffic(&self) -> &[TrafficCar] {
        &self.traffic
    }

    pub fn records(&self) -> &[TrajRecord] {
        &self.records
    }

    pub fn is_over(&self) -> bool {
        self.stats.crashed()
    }

    pub fn collided(&self) -> bool {
        self.stats.collided
    }

    /// Features of the current state under speed `v`.
    pub fn features(&self, v: f64) -> Result<Features> {
        features_at(&self.state, v, &self.scenario, &self.traffic)
    }

    /// Logs the current tick with `a` and advances by [`DT`]. Does nothing
    /// once the episode is over.
    pub fn advance(&mut self, a: Action) -> Result<()> {
        if self.is_over() {
            return Ok(());
        }
        let s = self.state;
        self.records.push(TrajRecord {
            episode: self.episode,
            t: self.tick,
            x: s.x,
            y: s.y,
            theta: s.theta,
            v: a.v,
            w: a.w,
            features: self.features(a.v)?,
        });
        let now = lane_index(s.y, self.scenario.lanes, self.scenario.lane_width);
        if now != self.lane {
            self.stats.lane_changes += 1;
            self.lane = now;
        }
        let mut next = step(&s, &a, DT);
        next.x = next.x.rem_euclid(self.scenario.length);
        self.state = next;
        self.tick += 1;
        if !self.scenario.on_road(next.y) {
            self.stats.off_track = true;
            return Ok(());
        }
        self.scenario.traffic_into(self.time(), &mut self.traffic);
        self.stats.collided = collides(&self.state, &self.traffic, &self.scenario);
        Ok(())
    }

    /// Closes the log and computes the per-episode averages.
    pub fn finish(self, distress: usize) -> TrackEpisode {
        let records = self.records;
        let mut stats = self.stats;
        let n = records.len().max(1) as f64;
        stats.steps = records.len();
        stats.mean_abs_dev = records.iter().map(|r| r.features[0].abs()).sum::<f64>() / n;
        stats.mean_abs_theta = records.iter().map(|r| r.features[1].abs()).sum::<f64>() / n;
        stats.mean_v = records.iter().map(|r| r.v).sum::<f64>() / n;
        stats.distress = distress;
        TrackEpisode { records, stats }
    }
}

/// Drives `scenario` for `duration` seconds at the fixed tick [`DT`].
///
/// The episode stops early on a collision or when the ego leaves the road;
/// the log then holds every tick before the crash.
pub fn run_episode(
    driver: &mut dyn Driver,
    scenario: &Scenario,
    duration: f64,
    episode: usize,
) -> Result<TrackEpisode> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidInput(format!("duration must be > 0, got {duration}")));
    }
    let ticks = ((duration / DT).round() as usize).max(1);
    let mut sim = Simulation::new(scenario.clone(), episode)?;
    while sim.tick() < ticks && !sim.is_over() {
        let a = driver.act(sim.state(), scenario, sim.time(), sim.traffic())?;
        sim.advance(a)?;
    }
    Ok(sim.finish(driver.distress_count()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{CarSpec, ScriptedExpert, Style};

    struct Still;

    impl Driver for Still {
        fn act(&mut self, _: &CarState, _: &Scenario, _: f64, _: &[TrafficCar]) -> Result<Action> {
            Ok(Action { v: 0.0, w: 0.0 })
        }
    }

    #[test]
    fn overlap_at_start_is_an_immediate_collision() {
        let mut sc = Scenario::empty(3, 200.0, Style::Safe);
        sc.cars.push(CarSpec { lane: 0, s0: 1.0, speed: 0.0 });
        let ep = run_episode(&mut Still, &sc, 5.0, 0).unwrap();
        assert!(ep.stats.collided);
        assert!(ep.records.is_empty());
    }

    #[test]
    fn stationary_ego_on_an_empty_road() {
        let sc = Scenario::empty(5, 600.0, Style::Safe);
        let ep = run_episode(&mut Still, &sc, 60.0, 3).unwrap();
        assert_eq!(ep.records.len(), 600);
        assert_eq!(ep.stats.lane_changes, 0);
        assert!(!ep.stats.crashed());
        assert!(ep.records.iter().all(|r| r.episode == 3));
    }

    #[test]
    fn zero_duration_is_rejected() {
        let sc = Scenario::empty(3, 200.0, Style::Safe);
        assert!(run_episode(&mut Still, &sc, 0.0, 0).is_err());
    }

    #[test]
    fn episodes_are_deterministic() {
        let sc = &crate::track::trained_scenarios(Style::Speedy, 5)[7];
        let a = run_episode(&mut ScriptedExpert::new(Style::Speedy), sc, 20.0, 0).unwrap();
        let b = run_episode(&mut ScriptedExpert::new(Style::Speedy), sc, 20.0, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn driving_off_the_road_ends_the_episode() {
        struct Swerve;
        impl Driver for Swerve {
            fn act(&mut self, _: &CarState, _: &Scenario, _: f64, _: &[TrafficCar]) -> Result<Action> {
                Ok(Action { v: 10.0, w: 1.0 })
            }
        }
        let sc = Scenario::empty(3, 200.0, Style::Safe);
        let ep = run_episode(&mut Swerve, &sc, 20.0, 0).unwrap();
        assert!(ep.stats.off_track);
        assert!(ep.records.len() < 200);
    }
}
