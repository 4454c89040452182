//! Gridworld bench: random peak rewards, value iteration, greedy experts and
//! expected value difference (EVD) scoring of learned rewards.
//!
//! States are cells `(x, y)` with `x < width`, `y < height`, indexed
//! `y * width + x`. Moves are deterministic and clamp at the walls. The
//! reward is collected in the current state: `V(s) = R(s) + gamma max_a V(s')`.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{DemoSet, Episode};
use crate::error::{check_dim, Error, Result};
use crate::reward::{build_inducing, fit_kdmrl, FeatureBox, KdmrlParams};
use crate::rng::SeedStreams;

pub const DEFAULT_DISCOUNT: f64 = 0.95;
pub const DEFAULT_PEAKS: usize = 8;
pub const VI_TOLERANCE: f64 = 1e-8;

/// Relative gap below which two action values count as tied.
const TIE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl GridAction {
    /// Tie-breaking order.
    pub const ALL: [GridAction; 5] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
        GridAction::Stay,
    ];

    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Down => (0, -1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
            GridAction::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMdp {
    width: usize,
    height: usize,
    discount: f64,
    reward: Vec<f64>,
    next: Vec<[usize; 5]>,
}

impl GridMdp {
    pub fn new(width: usize, height: usize, discount: f64, reward: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid must be at least 1x1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidInput(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        check_dim(width * height, reward.len())?;
        let next = (0..width * height)
            .map(|s| {
                let (x, y) = ((s % width) as i64, (s / width) as i64);
                GridAction::ALL.map(|a| {
                    let (dx, dy) = a.delta();
                    let nx = (x + dx).clamp(0, width as i64 - 1) as usize;
                    let ny = (y + dy).clamp(0, height as i64 - 1) as usize;
                    ny * width + nx
                })
            })
            .collect();
        Ok(Self {
            width,
            height,
            discount,
            reward,
            next,
        })
    }

    /// Same dynamics, different reward field.
    pub fn with_reward(&self, reward: Vec<f64>) -> Result<Self> {
        check_dim(self.n_states(), reward.len())?;
        Ok(Self {
            reward,
            ..self.clone()
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    pub fn next_state(&self, s: usize, a: GridAction) -> usize {
        self.next[s][a as usize]
    }
}

/// `R(s) = sum_i sign_i exp(-|s - c_i|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReward {
    pub centers: Vec<[f64; 2]>,
    pub signs: Vec<f64>,
}

impl PeakReward {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.signs)
            .map(|(c, s)| s * (-((x - c[0]).powi(2) + (y - c[1]).powi(2))).exp())
            .sum()
    }

    pub fn field(&self, width: usize, height: usize) -> Vec<f64> {
        (0..width * height)
            .map(|s| self.eval((s % width) as f64, (s / width) as f64))
            .collect()
    }
}

/// `k` peaks with centres uniform over the continuous grid extent and
/// signs uniform over {-1, +1}.
pub fn gen_reward(width: usize, height: usize, k: usize, seed: u64) -> PeakReward {
    let mut rng = SeedStreams::new(seed).stream("map-gen");
    let mut centers = Vec::with_capacity(k);
    let mut signs = Vec::with_capacity(k);
    for _ in 0..k {
        centers.push([
            rng.gen::<f64>() * (width as f64 - 1.0),
            rng.gen::<f64>() * (height as f64 - 1.0),
        ]);
        signs.push(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    }
    PeakReward { centers, signs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FeatureMode::Linear),
            "nonlinear" => Ok(FeatureMode::Nonlinear),
            other => Err(Error::InvalidInput(format!("unknown feature mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Linear => "linear",
            FeatureMode::Nonlinear => "nonlinear",
        })
    }
}

/// State observation `Phi(s) = (exp(-|(s - y_j) / l|^2))_j`.
///
/// `l` is one cell per axis for the linear map and one lattice spacing for the
/// nonlinear map. Measuring in cells there would leave the cells between
/// lattice points with an all-but-zero observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub mode: FeatureMode,
    pub centers: Vec<[f64; 2]>,
    pub spacing: [f64; 2],
}

/// Default multiplier on the median-trick bandwidth for gridworld fits.
pub const GRID_BANDWIDTH_SCALE: f64 = 0.2;

impl FeatureMap {
    /// Observes the true peak bases, so the reward is linear in `Phi`.
    pub fn linear(peaks: &PeakReward) -> Self {
        Self {
            mode: FeatureMode::Linear,
            centers: peaks.centers.clone(),
            spacing: [1.0, 1.0],
        }
    }

    /// 25 bases on an evenly spaced 5x5 lattice covering the grid.
    pub fn nonlinear(width: usize, height: usize) -> Self {
        let axis = |n: usize| -> Vec<f64> {
            (0..5)
                .map(|j| (j as f64 + 0.5) * n as f64 / 5.0 - 0.5)
                .collect()
        };
        let xs = axis(width);
        let ys = axis(height);
        let centers = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
            .collect();
        Self {
            mode: FeatureMode::Nonlinear,
            centers,
            spacing: [width as f64 / 5.0, height as f64 / 5.0],
        }
    }

    pub fn for_mode(mode: FeatureMode, peaks: &PeakReward, width: usize, height: usize) -> Self {
        match mode {
            FeatureMode::Linear => Self::linear(peaks),
            FeatureMode::Nonlinear => Self::nonlinear(width, height),
        }
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    pub fn phi(&self, x: f64, y: f64) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| {
                let dx = (x - c[0]) / self.spacing[0];
                let dy = (y - c[1]) / self.spacing[1];
                (-(dx * dx + dy * dy)).exp()
            })
            .collect()
    }

    pub fn phi_state(&self, mdp: &GridMdp, s: usize) -> Vec<f64> {
        let (x, y) = mdp.coords(s);
        self.phi(x as f64, y as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub policy: Vec<GridAction>,
    pub sweeps: usize,
    /// `|T V - V|_inf` of the returned values.
    pub residual: f64,
}

fn bellman_backup(mdp: &GridMdp, values: &[f64], out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        let best = mdp.next[s]
            .iter()
            .map(|&n| values[n])
            .fold(f64::NEG_INFINITY, f64::max);
        *slot = mdp.reward[s] + mdp.discount * best;
    }
}

/// Value iteration until the sup-norm Bellman residual drops below `tol`.
pub fn value_iteration(mdp: &GridMdp, tol: f64) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be > 0, got {tol}")));
    }
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        bellman_backup(mdp, &values, &mut next);
        sweeps += 1;
        let residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual < tol {
            break;
        }
    }
    bellman_backup(mdp, &values, &mut next);
    let residual = values
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let policy = greedy_policy(mdp, &values);
    Ok(Solution {
        values,
        policy,
        sweeps,
        residual,
    })
}

/// Scale-free: learned rewards can be many orders of magnitude below one.
fn tie_eps(values: &[f64]) -> f64 {
    TIE_EPS * values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Greedy policy w.r.t. `values`; ties go to the earliest action in
/// [`GridAction::ALL`].
pub fn greedy_policy(mdp: &GridMdp, values: &[f64]) -> Vec<GridAction> {
    let eps = tie_eps(values);
    (0..mdp.n_states())
        .map(|s| {
            let best = mdp.next[s]
                .iter()
                .map(|&n| values[n])
                .fold(f64::NEG_INFINITY, f64::max);
            GridAction::ALL
                .into_iter()
                .find(|&a| values[mdp.next_state(s, a)] >= best - eps)
                .expect("at least one action attains the max")
        })
        .collect()
}

/// Exact discounted value of a deterministic policy under `reward`.
///
/// Every trajectory ends in a cycle; cycle values come from the closed-form
/// geometric sum and the rest by back-substitution.
pub fn evaluate_policy(mdp: &GridMdp, reward: &[f64], policy: &[GridAction]) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    check_dim(n, reward.len())?;
    check_dim(n, policy.len())?;
    let g = mdp.discount;
    let succ: Vec<usize> = (0..n).map(|s| mdp.next_state(s, policy[s])).collect();

    const UNSEEN: u8 = 0;
    const ON_PATH: u8 = 1;
    const DONE: u8 = 2;
    let mut state = vec![UNSEEN; n];
    let mut values = vec![0.0; n];
    let mut path = Vec::new();

    for start in 0..n {
        if state[start] == DONE {
            continue;
        }
        path.clear();
        let mut s = start;
        while state[s] == UNSEEN {
            state[s] = ON_PATH;
            path.push(s);
            s = succ[s];
        }
        let mut tail_end = path.len();
        if state[s] == ON_PATH {
            // `s` closes a new cycle inside the current path.
            let pos = path.iter().position(|&p| p == s).expect("cycle start on path");
            let cycle = &path[pos..];
            let len = cycle.len();
            let mut v0 = 0.0;
            let mut gk = 1.0;
            for &c in cycle {
                v0 += gk * reward[c];
                gk *= g;
            }
            v0 /= 1.0 - gk;
            values[cycle[0]] = v0;
            for i in (1..len).rev() {
                let c = cycle[i];
                let nxt = cycle[(i + 1) % len];
                values[c] = reward[c] + g * values[nxt];
            }
            for &c in cycle {
                state[c] = DONE;
            }
            tail_end = pos;
        }
        for &p in path[..tail_end].iter().rev() {
            values[p] = reward[p] + g * values[succ[p]];
            state[p] = DONE;
        }
    }
    Ok(values)
}

/// Value iteration followed by policy-iteration polishing with exact
/// evaluation, so the result is optimal rather than `tol`-optimal.
pub fn optimal_policy(mdp: &GridMdp) -> Result<Vec<GridAction>> {
    let mut policy = value_iteration(mdp, VI_TOLERANCE)?.policy;
    for _ in 0..mdp.n_states() + 1 {
        let values = evaluate_policy(mdp, &mdp.reward, &policy)?;
        let eps = tie_eps(&values);
        let mut changed = false;
        for s in 0..mdp.n_states() {
            let current = values[mdp.next_state(s, policy[s])];
            let best = GridAction::ALL
                .into_iter()
                .max_by(|&a, &b| {
                    values[mdp.next_state(s, a)]
                        .total_cmp(&values[mdp.next_state(s, b)])
                        .then_with(|| (b as usize).cmp(&(a as usize)))
                })
                .expect("non-empty action set");
            if values[mdp.next_state(s, best)] > current + eps {
                policy[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(policy)
}

/// One demonstration in the MDP: `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridTrajectory {
    pub steps: Vec<(usize, GridAction)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridDemos {
    pub trajectories: Vec<GridTrajectory>,
}

impl GridDemos {
    /// Demo set over state features (actions are not featurized).
    pub fn to_demo_set(&self, mdp: &GridMdp, features: &FeatureMap) -> Result<DemoSet> {
        DemoSet::new(
            self.trajectories
                .iter()
                .map(|t| {
                    Episode::new(
                        t.steps
                            .iter()
                            .map(|&(s, _)| features.phi_state(mdp, s))
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn truncated(&self, n_traj: usize) -> Self {
        Self {
            trajectories: self.trajectories.iter().take(n_traj).cloned().collect(),
        }
    }
}

/// `n_traj` rollouts of exactly `len` pairs from uniform start states.
pub fn sample_demos(
    mdp: &GridMdp,
    policy: &[GridAction],
    n_traj: usize,
    len: usize,
    seed: u64,
) -> Result<GridDemos> {
    if len == 0 {
        return Err(Error::InvalidInput("trajectory length must be >= 1".into()));
    }
    check_dim(mdp.n_states(), policy.len())?;
    let mut rng = SeedStreams::new(seed).stream("demo");
    let trajectories = (0..n_traj)
        .map(|_| {
            let mut s = rng.gen_range(0..mdp.n_states());
            let steps = (0..len)
                .map(|_| {
                    let a = policy[s];
                    let pair = (s, a);
                    s = mdp.next_state(s, a);
                    pair
                })
                .collect();
            GridTrajectory { steps }
        })
        .collect();
    Ok(GridDemos { trajectories })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvdReport {
    pub evd: f64,
    /// `V*(s) - V^learned(s)` under the true reward, before averaging.
    pub gaps: Vec<f64>,
}

/// Expected value difference over uniform start states.
pub fn evd(true_mdp: &GridMdp, learned_reward: &[f64]) -> Result<f64> {
    evd_detail(true_mdp, learned_reward).map(|r| r.evd)
}

pub fn evd_detail(true_mdp: &GridMdp, learned_reward: &[f64]) -> Result<EvdReport> {
    let learned_mdp = true_mdp.with_reward(learned_reward.to_vec())?;
    let expert = optimal_policy(true_mdp)?;
    let learner = optimal_policy(&learned_mdp)?;
    let v_star = evaluate_policy(true_mdp, true_mdp.reward(), &expert)?;
    let v_hat = evaluate_policy(true_mdp, true_mdp.reward(), &learner)?;
    let gaps: Vec<f64> = v_star.iter().zip(&v_hat).map(|(a, b)| a - b).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    // Rounding can leave a mean of order -1e-15 when both policies are optimal.
    Ok(EvdReport {
        evd: mean.max(0.0),
        gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub size: usize,
    pub mode: FeatureMode,
    pub n_traj: Vec<usize>,
    pub maps: usize,
    pub demo_sets: usize,
    pub peaks: usize,
    /// Defaults to 8 on 16x16 and 16 on 32x32 (`size / 2`).
    pub traj_len: Option<usize>,
    pub discount: f64,
    pub kdmrl: KdmrlParams,
    pub seed: u64,
    /// Record wall-clock fit times; off gives byte-identical reruns.
    pub timing: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 16,
            mode: FeatureMode::Nonlinear,
            n_traj: vec![8, 16, 32, 64, 128, 256],
            maps: 10,
            demo_sets: 5,
            peaks: DEFAULT_PEAKS,
            traj_len: None,
            discount: DEFAULT_DISCOUNT,
            kdmrl: KdmrlParams {
                bandwidth_scale: GRID_BANDWIDTH_SCALE,
                ..KdmrlParams::default()
            },
            seed: 0,
            timing: true,
        }
    }
}

impl GridConfig {
    pub fn trajectory_len(&self) -> usize {
        self.traj_len.unwrap_or((self.size / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub map_seed: u64,
    pub demo_seed: u64,
    pub grid: String,
    pub mode: FeatureMode,
    pub n_traj: usize,
    pub evd: f64,
    pub fit_ms: f64,
}

/// Learns a reward from grid demos over `features` and returns it as a
/// field over states.
pub fn learn_grid_reward(
    mdp: &GridMdp,
    features: &FeatureMap,
    demos: &GridDemos,
    params: &KdmrlParams,
) -> Result<Vec<f64>> {
    let demo_set = demos.to_demo_set(mdp, features)?;
    let rows = demo_set.rows();
    let bounds = FeatureBox::around(&rows, 0.1)?;
    let inducing = build_inducing(&demo_set, 0, &bounds, params.seed)?;
    let model = fit_kdmrl(&demo_set, &inducing, params)?;
    (0..mdp.n_states())
        .map(|s| model.eval(&features.phi_state(mdp, s)))
        .collect()
}

/// Runs every (map, demo set, n) combination of `cfg`.
///
/// Demo sets are nested: the run with `n` trajectories uses the first `n`
/// of one shared draw, so differences across `n` reflect data, not luck.
pub fn run_grid_experiment(cfg: &GridConfig) -> Result<Vec<GridRow>> {
    if cfg.size == 0 || cfg.n_traj.is_empty() || cfg.n_traj.contains(&0) {
        return Err(Error::InvalidInput(
            "grid size and every trajectory count must be positive".into(),
        ));
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut map_rng = streams.stream("map-gen");
    let mut demo_rng = streams.stream("demo");
    let max_n = *cfg.n_traj.iter().max().expect("non-empty");
    let len = cfg.trajectory_len();
    let grid = format!("{0}x{0}", cfg.size);
    let mut rows = Vec::new();

    for _ in 0..cfg.maps {
        let map_seed: u64 = map_rng.gen();
        let peaks = gen_reward(cfg.size, cfg.size, cfg.peaks, map_seed);
        let mdp = GridMdp::new(cfg.size, cfg.size, cfg.discount, peaks.field(cfg.size, cfg.size))?;
        let features = FeatureMap::for_mode(cfg.mode, &peaks, cfg.size, cfg.size);
        let expert = optimal_policy(&mdp)?;

        for _ in 0..cfg.demo_sets {
            let demo_seed: u64 = demo_rng.gen();
            let all = sample_demos(&mdp, &expert, max_n, len, demo_seed)?;
            for &n in &cfg.n_traj {
                let params = KdmrlParams {
                    seed: demo_seed,
                    ..cfg.kdmrl
                };
                let started = Instant::now();
                let learned = if features.dim() == 0 {
                    vec![0.0; mdp.n_states()]
                } else {
                    learn_grid_reward(&mdp, &features, &all.truncated(n), &params)?
                };
                let fit_ms = if cfg.timing {
                    started.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                rows.push(GridRow {
                    map_seed,
                    demo_seed,
                    grid: grid.clone(),
                    mode: cfg.mode,
                    n_traj: n,
                    evd: evd(&mdp, &learned)?,
                    fit_ms,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_grid_csv<W: std::io::Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Median EVD per trajectory count, in the order of `cfg.n_traj`.
pub fn median_evd_by_n(rows: &[GridRow], n_traj: &[usize]) -> Vec<(usize, f64)> {
    n_traj
        .iter()
        .map(|&n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.n_traj == n).map(|r| r.evd).collect();
            v.sort_by(f64::total_cmp);
            let med = if v.is_empty() {
                f64::NAN
            } else if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
            };
            (n, med)
        })
        .collect()
}
