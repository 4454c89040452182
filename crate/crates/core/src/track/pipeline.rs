use serde::{Deserialize, Serialize};

use super::episode::{run_episode, TrackEpisode};
use super::expert::ScriptedExpert;
use super::rhc::{RhcConfig, RhcDriver, TrackReward};
use super::scenario::Scenario;
use super::FEATURE_DIM;
use crate::demo::DemoSet;
use crate::error::{check_dim, Error, Result};
use crate::reward::{build_inducing, fit_kdmrl_with_report, FeatureBox, FitReport, KdmrlParams, RewardModel};

/// Median-trick multiplier used for driving rewards.
pub const TRACK_BANDWIDTH_SCALE: f64 = 0.15;

/// How a driving reward is fitted from demonstrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackLearnConfig {
    pub kdmrl: KdmrlParams,
    /// Every `inducing_stride`-th tick of each episode becomes an inducing
    /// point (after deduplication).
    pub inducing_stride: usize,
    /// Extra inducing points drawn uniformly from the demo bounding box
    /// inflated by 10%.
    pub random_inducing: usize,
}

impl Default for TrackLearnConfig {
    fn default() -> Self {
        Self {
            kdmrl: KdmrlParams {
                bandwidth_scale: TRACK_BANDWIDTH_SCALE,
                ..KdmrlParams::default()
            },
            inducing_stride: 10,
            random_inducing: 0,
        }
    }
}

pub fn learn_track_reward(demos: &DemoSet, cfg: &TrackLearnConfig) -> Result<(RewardModel, FitReport)> {
    if cfg.inducing_stride == 0 {
        return Err(Error::InvalidInput("inducing stride must be >= 1".into()));
    }
    if demos.is_empty() {
        return Err(Error::InvalidInput("empty demo set".into()));
    }
    check_dim(FEATURE_DIM, demos.dim())?;
    let bounds = FeatureBox::around(&demos.rows(), 0.1)?;
    let inducing = build_inducing(
        &demos.thinned(cfg.inducing_stride),
        cfg.random_inducing,
        &bounds,
        cfg.kdmrl.seed,
    )?;
    fit_kdmrl_with_report(demos, &inducing, &cfg.kdmrl)
}

/// One scripted-expert episode per scenario, in the scenario's style.
pub fn expert_demos(scenarios: &[Scenario], duration: f64) -> Result<Vec<TrackEpisode>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| run_episode(&mut ScriptedExpert::new(s.style), s, duration, i))
        .collect()
}

/// One receding-horizon episode per scenario at the scenario style's
/// nominal speed.
pub fn drive_rhc(
    reward: &dyn TrackReward,
    scenarios: &[Scenario],
    duration: f64,
    cfg: &RhcConfig,
) -> Result<Vec<TrackEpisode>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut driver = RhcDriver::new(reward, s.style.nominal_speed(), *cfg);
            run_episode(&mut driver, s, duration, i)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{records_to_demo_set, trained_scenarios, Style, TrajRecord};

    #[test]
    fn learned_reward_prefers_demonstrated_speed() {
        let scenarios: Vec<_> = trained_scenarios(Style::Speedy, 3).into_iter().take(6).collect();
        let demos = expert_demos(&scenarios, 10.0).unwrap();
        let records: Vec<TrajRecord> = demos.iter().flat_map(|e| e.records.iter().copied()).collect();
        let set = records_to_demo_set(&records).unwrap();
        let (model, report) = learn_track_reward(&set, &TrackLearnConfig::default()).unwrap();
        assert!(report.n_inducing > 0 && report.n_inducing < report.n_samples);
        let fast = model.eval(&[0.0, 0.0, 60.0, 60.0, 60.0, 20.0]).unwrap();
        let slow = model.eval(&[0.0, 0.0, 60.0, 60.0, 60.0, 12.0]).unwrap();
        assert!(fast > slow, "fast {fast} slow {slow}");
    }

    #[test]
    fn wrong_feature_dimension_is_rejected() {
        let set = DemoSet::from_rows(vec![vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert!(matches!(
            learn_track_reward(&set, &TrackLearnConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
