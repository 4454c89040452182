use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dmrl_core::gridworld::{median_evd_by_n, run_grid_experiment, write_grid_csv, GridConfig, GRID_BANDWIDTH_SCALE};
use dmrl_core::metrics::{fuzz_lemma2, fuzz_theorem1, FuzzConfig};
use dmrl_core::reward::RewardModel;
use dmrl_core::rng::resolve_seed;
use dmrl_core::track::{
    drive_rhc, eval_trained, eval_transferred, expert_demos, learn_track_reward, read_trajectories,
    records_to_demo_set, trained_scenarios, transferred_scenarios, write_trajectories, EpisodeStats,
    HistRanges, RhcConfig, Scenario, TrackEpisode, TrackLearnConfig, TrajRecord, FEATURE_DIM,
    METRIC_PAIRS, TRACK_BANDWIDTH_SCALE,
};
use serde::Serialize;

use crate::artifact::{self, in_file};
use crate::{exit, CliError, CliResult, DemoArgs, DriveArgs, GridArgs, LearnArgs, ScenarioArgs, VerifyArgs};

pub fn grid(a: &GridArgs) -> CliResult<i32> {
    if a.size < 2 || a.maps == 0 || a.demo_sets == 0 {
        return Err(CliError::bad_config("need --size >= 2, --maps >= 1 and --demo-sets >= 1"));
    }
    let seed = resolve_seed(a.seed);
    let cfg = GridConfig {
        size: a.size,
        mode: a.mode,
        n_traj: a.n_traj.clone(),
        maps: a.maps,
        demo_sets: a.demo_sets,
        peaks: a.peaks,
        traj_len: a.traj_len,
        discount: a.discount,
        kdmrl: a.fit.params(GRID_BANDWIDTH_SCALE, seed),
        seed,
        timing: !a.no_timing,
    };
    let rows = run_grid_experiment(&cfg)?;
    match &a.out {
        Some(path) => {
            write_grid_csv(&rows, artifact::create(path)?)?;
            artifact::write_sidecar(path, &cfg)?;
        }
        None => write_grid_csv(&rows, std::io::stdout().lock())?,
    }
    for (n, median) in median_evd_by_n(&rows, &cfg.n_traj) {
        eprintln!("n_traj {n:>5}: median EVD {median:.6}");
    }
    Ok(exit::OK)
}

#[derive(Serialize)]
struct LearnRecord<'a> {
    command: &'static str,
    demos: String,
    seed: u64,
    learn: &'a TrackLearnConfig,
    episodes: usize,
    samples: usize,
    inducing: usize,
    lengthscale: f64,
}

pub fn learn(a: &LearnArgs) -> CliResult<i32> {
    let seed = resolve_seed(a.seed);
    let records = read_trajectories(artifact::open(&a.demos)?).map_err(in_file(&a.demos))?;
    let demos = records_to_demo_set(&records)?;
    let cfg = TrackLearnConfig {
        kdmrl: a.fit.params(TRACK_BANDWIDTH_SCALE, seed),
        inducing_stride: a.inducing_stride,
        random_inducing: a.random_inducing,
    };
    let started = Instant::now();
    let (model, report) = learn_track_reward(&demos, &cfg)?;
    let elapsed = started.elapsed();
    let record = LearnRecord {
        command: "learn",
        demos: a.demos.display().to_string(),
        seed,
        learn: &cfg,
        episodes: demos.n_episodes(),
        samples: report.n_samples,
        inducing: report.n_inducing,
        lengthscale: report.lengthscale,
    };
    let config = serde_json::to_value(&record).map_err(|e| CliError::new(exit::FAILURE, e.to_string()))?;
    artifact::write_text(&a.out, &(model.to_json(Some(config))? + "\n"))?;
    eprintln!(
        "fitted {} samples from {} episodes on {} inducing points (lengthscale {:.4}, residual {:.2e}) in {:.3} s",
        report.n_samples,
        demos.n_episodes(),
        report.n_inducing,
        report.lengthscale,
        report.stationarity_residual,
        elapsed.as_secs_f64()
    );
    Ok(exit::OK)
}

#[derive(Debug, Clone, Serialize)]
struct ScenarioRecord {
    scenario: String,
    style: Option<String>,
    seed: u64,
    episodes: usize,
    duration: f64,
}

fn resolve_scenarios(a: &ScenarioArgs) -> CliResult<(Vec<Scenario>, f64, ScenarioRecord)> {
    let seed = resolve_seed(a.seed);
    let builtin = |make: fn(dmrl_core::track::Style, u64) -> Vec<Scenario>| {
        let style = a
            .style
            .ok_or_else(|| CliError::bad_config(format!("--scenario {} needs --style", a.scenario)))?;
        Ok::<_, CliError>(make(style, seed))
    };
    let (mut all, default_duration, from_file) = match a.scenario.as_str() {
        "trained" => (builtin(trained_scenarios)?, 20.0, false),
        "transferred" => (builtin(transferred_scenarios)?, 60.0, false),
        path => {
            let path = Path::new(path);
            let mut s = Scenario::from_json(&artifact::read_text(path)?).map_err(in_file(path))?;
            if let Some(style) = a.style {
                s.style = style;
            }
            (vec![s], 60.0, true)
        }
    };
    let episodes = a.episodes.unwrap_or(all.len());
    if episodes == 0 {
        return Err(CliError::bad_config("--episodes must be >= 1"));
    }
    if from_file {
        all = vec![all[0].clone(); episodes];
    } else if episodes > all.len() {
        return Err(CliError::bad_config(format!(
            "the {} set has {} episodes, asked for {episodes}",
            a.scenario,
            all.len()
        )));
    } else {
        all.truncate(episodes);
    }
    let duration = a.duration.unwrap_or(default_duration);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(CliError::bad_config(format!("--duration must be > 0, got {duration}")));
    }
    let record = ScenarioRecord {
        scenario: a.scenario.clone(),
        style: a.style.map(|s| s.to_string()),
        seed,
        episodes,
        duration,
    };
    Ok((all, duration, record))
}

fn all_records(episodes: &[TrackEpisode]) -> impl Iterator<Item = &TrajRecord> {
    episodes.iter().flat_map(|e| e.records.iter())
}

fn episodes_from_records(records: Vec<TrajRecord>) -> Vec<TrackEpisode> {
    let mut by_episode: BTreeMap<usize, Vec<TrajRecord>> = BTreeMap::new();
    for r in records {
        by_episode.entry(r.episode).or_default().push(r);
    }
    by_episode
        .into_values()
        .map(|records| TrackEpisode {
            records,
            stats: EpisodeStats::default(),
        })
        .collect()
}

#[derive(Serialize)]
struct DriveRecord {
    command: &'static str,
    model: String,
    reference: Option<String>,
    #[serde(flatten)]
    scenarios: ScenarioRecord,
    rhc: RhcConfig,
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let csv_failed = |e: csv::Error| CliError::new(exit::FAILURE, format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_writer(artifact::create(path)?);
    w.write_record(header).map_err(csv_failed)?;
    for row in rows {
        w.write_record(&row).map_err(csv_failed)?;
    }
    w.flush().map_err(|e| csv_failed(e.into()))?;
    Ok(())
}

pub fn drive(a: &DriveArgs) -> CliResult<i32> {
    let model = RewardModel::from_json(&artifact::read_text(&a.model)?).map_err(in_file(&a.model))?;
    if model.feature_dim() != FEATURE_DIM {
        return Err(CliError::new(
            exit::DIMENSION_MISMATCH,
            format!(
                "{}: model has {} features, driving scenarios have {FEATURE_DIM}",
                a.model.display(),
                model.feature_dim()
            ),
        ));
    }
    if a.depth == 0 {
        return Err(CliError::bad_config("--depth must be >= 1"));
    }
    let (scenarios, duration, scenario_record) = resolve_scenarios(&a.scenario)?;
    let rhc = RhcConfig {
        depth: a.depth,
        ..RhcConfig::default()
    };
    let reference = match &a.reference {
        Some(path) => episodes_from_records(read_trajectories(artifact::open(path)?).map_err(in_file(path))?),
        None => expert_demos(&scenarios, duration)?,
    };
    let runs = drive_rhc(&model, &scenarios, duration, &rhc)?;

    let trained = eval_trained(&reference, &runs, &HistRanges::for_scenario(&scenarios[0]))?;
    let transferred = eval_transferred(&runs)?;

    let out = &a.out;
    write_trajectories(artifact::create(&out.join("trajectories.jsonl"))?, all_records(&runs))?;
    let mut header = vec!["episodes", "collision_ratio"];
    header.extend(METRIC_PAIRS);
    header.push("mean_distance");
    let mut row = vec![trained.episodes.to_string(), trained.collision_ratio.to_string()];
    row.extend(trained.distances.iter().map(f64::to_string));
    row.push(trained.mean_distance.to_string());
    write_csv(&out.join("trained_metrics.csv"), &header, [row])?;
    write_csv(
        &out.join("transferred_metrics.csv"),
        &["episodes", "collisions", "mean_abs_dev", "mean_abs_theta", "mean_v", "mean_lane_changes", "max_lane_changes"],
        [vec![
            transferred.episodes.to_string(),
            transferred.collisions.to_string(),
            transferred.mean_abs_dev.to_string(),
            transferred.mean_abs_theta.to_string(),
            transferred.mean_v.to_string(),
            transferred.mean_lane_changes.to_string(),
            transferred.max_lane_changes.to_string(),
        ]],
    )?;
    write_csv(
        &out.join("episodes.csv"),
        &["episode", "steps", "collided", "off_track", "lane_changes", "mean_abs_dev", "mean_abs_theta", "mean_v", "distress"],
        runs.iter().enumerate().map(|(i, e)| {
            let s = &e.stats;
            vec![
                i.to_string(),
                s.steps.to_string(),
                s.collided.to_string(),
                s.off_track.to_string(),
                s.lane_changes.to_string(),
                s.mean_abs_dev.to_string(),
                s.mean_abs_theta.to_string(),
                s.mean_v.to_string(),
                s.distress.to_string(),
            ]
        }),
    )?;
    artifact::write_json(
        &out.join("config.json"),
        &DriveRecord {
            command: "drive",
            model: a.model.display().to_string(),
            reference: a.reference.as_ref().map(|p| p.display().to_string()),
            scenarios: scenario_record,
            rhc,
        },
    )?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "episodes {}  collision ratio {:.3}  mean distance {:.4}  mean v {:.3}  lane changes {:.2}",
        trained.episodes,
        trained.collision_ratio,
        trained.mean_distance,
        transferred.mean_v,
        transferred.mean_lane_changes
    );
    Ok(exit::OK)
}

#[derive(Serialize)]
struct DemoRecord {
    command: &'static str,
    #[serde(flatten)]
    scenarios: ScenarioRecord,
    crashed_episodes: usize,
}

pub fn demo(a: &DemoArgs) -> CliResult<i32> {
    let (scenarios, duration, scenario_record) = resolve_scenarios(&a.scenario)?;
    let episodes = expert_demos(&scenarios, duration)?;
    write_trajectories(artifact::create(&a.out)?, all_records(&episodes))?;
    let crashed = episodes.iter().filter(|e| e.stats.crashed()).count();
    artifact::write_sidecar(
        &a.out,
        &DemoRecord {
            command: "demo",
            scenarios: scenario_record,
            crashed_episodes: crashed,
        },
    )?;
    eprintln!("recorded {} episodes ({crashed} crashed)", episodes.len());
    Ok(exit::OK)
}

pub fn verify(a: &VerifyArgs) -> CliResult<i32> {
    if a.trials == 0 {
        return Err(CliError::bad_config("--trials must be >= 1"));
    }
    let cfg = FuzzConfig {
        trials: a.trials,
        seed: resolve_seed(a.seed),
        rhs_scale: if a.inject_violation { 0.0 } else { 1.0 },
        ..FuzzConfig::default()
    };
    let theorem1 = fuzz_theorem1(&cfg)?;
    let lemma2 = fuzz_lemma2(&cfg)?;
    println!("theorem1: {}/{} hold", theorem1.holds, theorem1.trials);
    println!("lemma2: {}/{} hold", lemma2.holds, lemma2.trials);
    if theorem1.violations() + lemma2.violations() > 0 {
        Ok(exit::FAILURE)
    } else {
        Ok(exit::OK)
    }
}
