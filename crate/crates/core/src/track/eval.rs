use serde::{Deserialize, Serialize};

use super::episode::{TrackEpisode, TrajRecord};
use super::scenario::Scenario;
use super::D_MAX;
use crate::error::{check_dim, Error, Result};
use crate::metrics::d_var_slices;

pub const HIST_BINS: usize = 16;

/// The six feature pairs compared by [`eval_trained`], as column names.
pub const METRIC_PAIRS: [&str; 6] = [
    "x_y",
    "distc_w",
    "distc_distdev",
    "distc_thetadev",
    "distr_w",
    "distl_w",
];

/// Fixed histogram ranges. Samples outside a range land in its edge bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistRanges {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub dist: (f64, f64),
    pub w: (f64, f64),
    pub dist_dev: (f64, f64),
    pub theta_dev: (f64, f64),
}

impl HistRanges {
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            x: (0.0, s.length),
            y: (0.0, s.road_width()),
            dist: (0.0, D_MAX),
            w: (-1.0, 1.0),
            dist_dev: (-2.0, 2.0),
            theta_dev: (-0.5, 0.5),
        }
    }

    fn pair_ranges(&self, index: usize) -> ((f64, f64), (f64, f64)) {
        match index {
            0 => (self.x, self.y),
            1 | 4 | 5 => (self.dist, self.w),
            2 => (self.dist, self.dist_dev),
            3 => (self.dist, self.theta_dev),
            _ => unreachable!("six metric pairs"),
        }
    }
}

fn pair_values(index: usize, r: &TrajRecord) -> (f64, f64) {
    let f = &r.features;
    match index {
        0 => (r.x, r.y),
        1 => (f[3], r.w),
        2 => (f[3], f[0]),
        3 => (f[3], f[1]),
        4 => (f[4], r.w),
        5 => (f[2], r.w),
        _ => unreachable!("six metric pairs"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hist2d {
    bins: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
    counts: Vec<f64>,
    total: f64,
}

impl Hist2d {
    pub fn new(bins: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if bins == 0 || !ok(x_range) || !ok(y_range) {
            return Err(Error::InvalidInput("histogram needs bins > 0 and non-empty ranges".into()));
        }
        Ok(Self {
            bins,
            x_range,
            y_range,
            counts: vec![0.0; bins * bins],
            total: 0.0,
        })
    }

    fn bin(&self, v: f64, (lo, hi): (f64, f64)) -> usize {
        let u = ((v - lo) / (hi - lo) * self.bins as f64).floor();
        if u.is_nan() || u < 0.0 {
            0
        } else {
            (u as usize).min(self.bins - 1)
        }
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let i = self.bin(x, self.x_range) * self.bins + self.bin(y, self.y_range);
        self.counts[i] += 1.0;
        self.total += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Variational distance between the normalized histograms. Two empty
    /// histograms are at distance 0 and an empty one is at distance 1 from
    /// any other.
    pub fn d_var(&self, other: &Hist2d) -> Result<f64> {
        check_dim(self.counts.len(), other.counts.len())?;
        match (self.total > 0.0, other.total > 0.0) {
            (false, false) => Ok(0.0),
            (true, false) | (false, true) => Ok(1.0),
            (true, true) => {
                let p: Vec<f64> = self.counts.iter().map(|c| c / self.total).collect();
                let q: Vec<f64> = other.counts.iter().map(|c| c / other.total).collect();
                d_var_slices(&p, &q)
            }
        }
    }
}

fn histograms<'a>(
    records: impl Iterator<Item = &'a TrajRecord> + Clone,
    ranges: &HistRanges,
) -> Result<Vec<Hist2d>> {
    (0..METRIC_PAIRS.len())
        .map(|i| {
            let (rx, ry) = ranges.pair_ranges(i);
            let mut h = Hist2d::new(HIST_BINS, rx, ry)?;
            for r in records.clone() {
                let (a, b) = pair_values(i, r);
                h.add(a, b);
            }
            Ok(h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedMetrics {
    /// One variational distance per entry of [`METRIC_PAIRS`].
    pub distances: [f64; 6],
    pub mean_distance: f64,
    /// Fraction of run episodes that collided or left the road.
    pub collision_ratio: f64,
    pub episodes: usize,
}

/// Compares runs against reference demonstrations on the six 16x16
/// histograms and reports the collision ratio of the runs.
pub fn eval_trained(
    reference: &[TrackEpisode],
    runs: &[TrackEpisode],
    ranges: &HistRanges,
) -> Result<TrainedMetrics> {
    if reference.is_empty() || runs.is_empty() {
        return Err(Error::InvalidInput("need reference and run episodes".into()));
    }
    let hr = histograms(reference.iter().flat_map(|e| e.records.iter()), ranges)?;
    let hx = histograms(runs.iter().flat_map(|e| e.records.iter()), ranges)?;
    let mut distances = [0.0; 6];
    for (d, (a, b)) in distances.iter_mut().zip(hr.iter().zip(&hx)) {
        *d = a.d_var(b)?;
    }
    let crashed = runs.iter().filter(|e| e.stats.crashed()).count();
    Ok(TrainedMetrics {
        distances,
        mean_distance: distances.iter().sum::<f64>() / distances.len() as f64,
        collision_ratio: crashed as f64 / runs.len() as f64,
        episodes: runs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferredMetrics {
    pub episodes: usize,
    /// Episodes that collided or left the road.
    pub collisions: usize,
    pub mean_abs_dev: f64,
    pub mean_abs_theta: f64,
    pub mean_v: f64,
    pub mean_lane_changes: f64,
    pub max_lane_changes: usize,
}

/// Per-episode averages over the transferred runs.
pub fn eval_transferred(runs: &[TrackEpisode]) -> Result<TransferredMetrics> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("need at least one run episode".into()));
    }
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&TrackEpisode) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Ok(TransferredMetrics {
        episodes: runs.len(),
        collisions: runs.iter().filter(|e| e.stats.crashed()).count(),
        mean_abs_dev: mean(&|e| e.stats.mean_abs_dev),
        mean_abs_theta: mean(&|e| e.stats.mean_abs_theta),
        mean_v: mean(&|e| e.stats.mean_v),
        mean_lane_changes: mean(&|e| e.stats.lane_changes as f64),
        max_lane_changes: runs.iter().map(|e| e.stats.lane_changes).max().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{run_episode, trained_scenarios, EpisodeStats, ScriptedExpert, Style};

    fn episode(records: Vec<TrajRecord>) -> TrackEpisode {
        TrackEpisode {
            records,
            stats: EpisodeStats::default(),
        }
    }

    fn rec(x: f64, y: f64, w: f64, f: [f64; 6]) -> TrajRecord {
        TrajRecord {
            episode: 0,
            t: 0,
            x,
            y,
            theta: f[1],
            v: f[5],
            w,
            features: f,
        }
    }

    #[test]
    fn identical_sets_are_at_distance_zero() {
        let sc = &trained_scenarios(Style::Safe, 1)[3];
        let ep = run_episode(&mut ScriptedExpert::new(Style::Safe), sc, 20.0, 0).unwrap();
        let m = eval_trained(&[ep.clone()], &[ep], &HistRanges::for_scenario(sc)).unwrap();
        assert_eq!(m.distances, [0.0; 6]);
        assert_eq!(m.collision_ratio, 0.0);
    }

    #[test]
    fn disjoint_sets_are_at_distance_one() {
        let sc = Scenario::empty(3, 200.0, Style::Safe);
        let a = episode(vec![rec(10.0, 1.0, -0.9, [-1.9, -0.4, 1.0, 1.0, 1.0, 5.0])]);
        let b = episode(vec![rec(190.0, 11.0, 0.9, [1.9, 0.4, 59.0, 59.0, 59.0, 5.0])]);
        let m = eval_trained(&[a], &[b], &HistRanges::for_scenario(&sc)).unwrap();
        assert_eq!(m.distances, [1.0; 6]);
        assert_eq!(m.mean_distance, 1.0);
    }

    #[test]
    fn out_of_range_samples_fall_in_edge_bins() {
        let mut h = Hist2d::new(4, (0.0, 1.0), (0.0, 1.0)).unwrap();
        h.add(-5.0, 0.5);
        h.add(7.0, 1.0);
        assert_eq!(h.total(), 2.0);
        assert_eq!(h.counts()[2], 1.0);
        assert_eq!(h.counts()[15], 1.0);
    }

    #[test]
    fn distances_are_bounded() {
        let sc = &trained_scenarios(Style::Speedy, 2)[0];
        let a = run_episode(&mut ScriptedExpert::new(Style::Speedy), sc, 10.0, 0).unwrap();
        let b = run_episode(&mut ScriptedExpert::new(Style::Safe), sc, 10.0, 0).unwrap();
        let m = eval_trained(&[a], &[b], &HistRanges::for_scenario(sc)).unwrap();
        assert!(m.distances.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn transferred_summary_counts_crashes() {
        let mut a = episode(vec![]);
        a.stats.lane_changes = 3;
        a.stats.collided = true;
        let mut b = episode(vec![]);
        b.stats.lane_changes = 1;
        b.stats.mean_v = 4.0;
        let m = eval_transferred(&[a, b]).unwrap();
        assert_eq!(m.collisions, 1);
        assert_eq!(m.mean_lane_changes, 2.0);
        assert_eq!(m.max_lane_changes, 3);
        assert_eq!(m.mean_v, 2.0);
    }
}
