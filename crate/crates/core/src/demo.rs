//! Demonstration containers.
//!
//! A [`DemoSet`] holds `N` episodes, each an ordered sequence of
//! state-action feature vectors. The position of a sample inside its
//! episode is its time index, which the leveraged density estimate uses.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    samples: Vec<Vec<f64>>,
}

impl Episode {
    pub fn new(samples: Vec<Vec<f64>>) -> Self {
        Self { samples }
    }

    /// Episode length `T`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// One sample seen through its episode: features plus `T - t`.
#[derive(Debug, Clone, Copy)]
pub struct DemoSample<'a> {
    pub features: &'a [f64],
    pub episode: usize,
    /// Zero-based time index `t` within the episode.
    pub t: usize,
    /// `T - t` with the final sample at zero.
    pub steps_to_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    episodes: Vec<Episode>,
    dim: usize,
}

impl DemoSet {
    /// Builds a demo set, rejecting ragged feature dimensions. Empty
    /// episodes are dropped.
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        let episodes: Vec<Episode> = episodes.into_iter().filter(|e| !e.is_empty()).collect();
        let dim = episodes
            .first()
            .and_then(|e| e.samples.first())
            .map_or(0, Vec::len);
        for sample in episodes.iter().flat_map(|e| e.samples.iter()) {
            if sample.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: sample.len(),
                });
            }
            if sample.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite demo feature".into()));
            }
        }
        Ok(Self { episodes, dim })
    }

    /// Every row becomes its own single-sample episode.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(|r| Episode::new(vec![r])).collect())
    }

    pub fn empty() -> Self {
        Self {
            episodes: Vec::new(),
            dim: 0,
        }
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    /// Number of trajectories `N`.
    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Total number of samples `N_D`.
    pub fn n_samples(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> impl Iterator<Item = DemoSample<'_>> + '_ {
        self.episodes.iter().enumerate().flat_map(|(ep, episode)| {
            let len = episode.len();
            episode
                .samples
                .iter()
                .enumerate()
                .map(move |(t, features)| DemoSample {
                    features,
                    episode: ep,
                    t,
                    steps_to_end: len - 1 - t,
                })
        })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.samples().map(|s| s.features.to_vec()).collect()
    }

    /// Keeps every `stride`-th sample of each episode, always retaining the
    /// final one so `T - t = 0` survives thinning.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let episodes = self
            .episodes
            .iter()
            .map(|e| {
                let len = e.len();
                let samples = e
                    .samples
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| (len - 1 - t) % stride == 0)
                    .map(|(_, s)| s.clone())
                    .collect();
                Episode::new(samples)
            })
            .collect();
        Self {
            episodes,
            dim: self.dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_rows() {
        let err = DemoSet::new(vec![Episode::new(vec![vec![1.0, 2.0], vec![3.0]])]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn time_indices_count_down_to_zero() {
        let demos = DemoSet::new(vec![
            Episode::new(vec![vec![0.0], vec![1.0], vec![2.0]]),
            Episode::new(vec![vec![5.0]]),
        ])
        .unwrap();
        let ends: Vec<usize> = demos.samples().map(|s| s.steps_to_end).collect();
        assert_eq!(ends, vec![2, 1, 0, 0]);
        assert_eq!(demos.n_samples(), 4);
        assert_eq!(demos.n_episodes(), 2);
    }

    #[test]
    fn thinning_keeps_the_final_sample() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64]).collect();
        let demos = DemoSet::new(vec![Episode::new(rows)]).unwrap();
        let thin = demos.thinned(3);
        assert_eq!(thin.rows(), vec![vec![0.0], vec![3.0], vec![6.0]]);
    }
}
