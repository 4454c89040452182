//! Density matching reward solvers.
//!
//! The discrete solver maximizes `<mu, R>` over the unit L2 ball, whose
//! maximizer is the normalized density itself. The kernelized solver puts
//! the reward in the span of kernels centred on inducing points,
//!
//! ```text
//! R(x) = sum_i alpha_i k(x, u_i)
//! ```
//!
//! and maximizes the concave quadratic
//!
//! ```text
//! V(alpha) = alpha' K_U K_D w - (lambda/2) alpha' K_U alpha - (beta/2) alpha' alpha
//! ```
//!
//! where `[K_U]_ij = k(u_i, u_j)`, `[K_D]_ij = k_mu(u_i, x_j)` is the
//! basis density of demo sample `j` at inducing point `i`, and `w` holds the
//! normalized leverage weights (uniform `1/N_D` without leverage). Setting the
//! gradient to zero gives `(lambda K_U + beta I) alpha = K_U K_D w`, which is
//! what [`fit_kdmrl`] solves.
//!
//! Note the system matrix is `lambda K_U + beta I`: a commonly quoted form
//! with the two regularizers swapped, `(beta K_U + lambda I)^-1`, does not
//! zero the gradient of `V` and is not used here.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::demo::DemoSet;
use crate::density::{
    gaussian_basis, leverage_weights, median_trick, se_kernel_unchecked, sq_dist, KernelParams,
    Standardizer,
};
use crate::error::{check_dim, Error, Result};
use crate::rng::SeedStreams;

/// Tolerance for "sums to one".
const SIMPLEX_TOL: f64 = 1e-9;

/// Inducing points closer than this (infinity norm, standardized units) are
/// merged.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative masses into a distribution.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) || masses.iter().any(|&m| m < 0.0) {
            return Err(Error::InvalidInput(
                "masses must be nonnegative with a positive finite total".into(),
            ));
        }
        Self::new(masses.into_iter().map(|m| m / total).collect())
    }

    pub fn one_hot(len: usize, at: usize) -> Result<Self> {
        if at >= len {
            return Err(Error::InvalidInput(format!("index {at} out of range {len}")));
        }
        let mut probs = vec![0.0; len];
        probs[at] = 1.0;
        Self::new(probs)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        Ok(Self {
            probs: vec![1.0 / len as f64; len],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteReward {
    pub values: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl DiscreteReward {
    /// Reward with bounds taken from its own extreme values.
    pub fn from_values(values: Vec<f64>) -> Self {
        let r_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            values,
            r_min,
            r_max,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Exact maximizer of `<mu, R>` subject to `|R|_2 <= 1`: `R = mu / |mu|_2`.
///
/// The returned reward carries the unit-ball bounds `[-1, 1]`.
pub fn solve_discrete(mu: &DiscreteDistribution) -> Result<DiscreteReward> {
    let norm = mu.probs.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput("density is identically zero".into()));
    }
    Ok(DiscreteReward {
        values: mu.probs.iter().map(|p| p / norm).collect(),
        r_min: -1.0,
        r_max: 1.0,
    })
}

/// `<mu, R>`.
pub fn value_of(mu: &DiscreteDistribution, reward: &DiscreteReward) -> Result<f64> {
    check_dim(mu.len(), reward.values.len())?;
    Ok(mu.probs.iter().zip(&reward.values).map(|(p, r)| p * r).sum())
}

/// Hyperparameters of a kernelized fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdmrlParams {
    /// RKHS-norm regularizer.
    pub lambda: f64,
    /// L2 regularizer on `alpha`.
    pub beta: f64,
    /// Leverage decay; 1 disables leverage.
    pub delta: f64,
    /// Overrides the median-trick lengthscale (standardized units).
    pub lengthscale: Option<f64>,
    /// Multiplier applied to the median-trick lengthscale.
    #[serde(default = "unit_scale")]
    pub bandwidth_scale: f64,
    /// Seed for median-trick subsampling.
    pub seed: u64,
}

impl Default for KdmrlParams {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            beta: 1e-4,
            delta: 0.75,
            lengthscale: None,
            bandwidth_scale: 1.0,
            seed: 0,
        }
    }
}

fn unit_scale() -> f64 {
    1.0
}

impl KdmrlParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bandwidth scale must be > 0, got {}",
                self.bandwidth_scale
            )));
        }
        crate::density::check_delta(self.delta)
    }
}

/// The assembled quadratic program for one fit, in standardized units.
#[derive(Debug, Clone)]
pub struct KdmrlSystem {
    pub k_u: DMatrix<f64>,
    /// `K_D w`: the (leveraged) density estimate at each inducing point.
    pub density_at_inducing: DVector<f64>,
    pub lambda: f64,
    pub beta: f64,
}

/// Collapses bit-identical rows into one centre carrying their summed weight.
/// Steady driving repeats feature vectors for many ticks in a row.
fn merge_repeated_rows(rows: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut centres = Vec::new();
    let mut merged: Vec<f64> = Vec::new();
    for (row, w) in rows.iter().zip(weights) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&k) => merged[k] += w,
            None => {
                index.insert(key, merged.len());
                centres.extend_from_slice(row);
                merged.push(*w);
            }
        }
    }
    (centres, merged)
}

impl KdmrlSystem {
    /// Builds `K_U` and `K_D w` from standardized inducing points and demo rows.
    pub fn assemble(
        inducing: &[Vec<f64>],
        demo_rows: &[Vec<f64>],
        weights: &[f64],
        kernel: &KernelParams,
        lambda: f64,
        beta: f64,
    ) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::InvalidInput("no inducing points".into()));
        }
        if demo_rows.is_empty() {
            return Err(Error::InvalidInput("empty demo set".into()));
        }
        check_dim(demo_rows.len(), weights.len())?;
        let d = inducing[0].len();
        for row in inducing.iter().chain(demo_rows) {
            check_dim(d, row.len())?;
        }

        let n_u = inducing.len();
        let mut k_u = DMatrix::zeros(n_u, n_u);
        for i in 0..n_u {
            k_u[(i, i)] = kernel.amplitude;
            for j in 0..i {
                let v = se_kernel_unchecked(&inducing[i], &inducing[j], kernel);
                k_u[(i, j)] = v;
                k_u[(j, i)] = v;
            }
        }

        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("leverage weights sum to zero".into()));
        }
        let (centres, merged) = merge_repeated_rows(demo_rows, weights);
        let h = kernel.lengthscale;
        let norm = gaussian_basis(&inducing[0], &inducing[0], h);
        let inv = 1.0 / (2.0 * h * h);
        let density_at_inducing = DVector::from_iterator(
            n_u,
            inducing.iter().map(|u| {
                centres
                    .chunks_exact(d)
                    .zip(&merged)
                    .map(|(x, w)| w * (-sq_dist(u, x) * inv).exp())
                    .sum::<f64>()
                    * norm
                    / total
            }),
        );

        Ok(Self {
            k_u,
            density_at_inducing,
            lambda,
            beta,
        })
    }

    /// `lambda K_U + beta I`.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let n = self.k_u.nrows();
        &self.k_u * self.lambda + DMatrix::identity(n, n) * self.beta
    }

    /// `K_U K_D w`.
    pub fn rhs(&self) -> DVector<f64> {
        &self.k_u * &self.density_at_inducing
    }

    pub fn solve(&self) -> Result<DVector<f64>> {
        let a = self.system_matrix();
        let b = self.rhs();
        match a.clone().cholesky() {
            Some(chol) => Ok(chol.solve(&b)),
            None => Err(Error::SingularSystem {
                condition: condition_number(&a),
            }),
        }
    }

    pub fn objective(&self, alpha: &DVector<f64>) -> f64 {
        let k_alpha = &self.k_u * alpha;
        alpha.dot(&self.rhs())
            - 0.5 * self.lambda * alpha.dot(&k_alpha)
            - 0.5 * self.beta * alpha.dot(alpha)
    }

    pub fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.rhs() - &self.k_u * alpha * self.lambda - alpha * self.beta
    }

    /// `|(lambda K_U + beta I) alpha - K_U K_D w|_inf`.
    pub fn residual(&self, alpha: &DVector<f64>) -> f64 {
        self.gradient(alpha).amax()
    }

    /// Smallest eigenvalue of `lambda K_U + beta I`; positive means the
    /// objective is strictly concave.
    pub fn min_system_eigenvalue(&self) -> f64 {
        self.system_matrix()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A fitted kernel reward. Inducing points are stored standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    standardizer: Standardizer,
    kernel: KernelParams,
    lambda: f64,
    beta: f64,
    inducing: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    flat: Vec<f64>,
}

impl RewardModel {
    pub fn new(
        standardizer: Standardizer,
        kernel: KernelParams,
        lambda: f64,
        beta: f64,
        inducing: Vec<Vec<f64>>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::InvalidInput("reward model needs an inducing point".into()));
        }
        check_dim(inducing.len(), alpha.len())?;
        let d = standardizer.dim();
        for u in &inducing {
            check_dim(d, u.len())?;
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("alpha must be finite".into()));
        }
        if !(lambda > 0.0 && beta > 0.0) {
            return Err(Error::InvalidInput("lambda and beta must be positive".into()));
        }
        KernelParams::new(kernel.lengthscale, kernel.amplitude)?;
        let flat = inducing.iter().flatten().copied().collect();
        Ok(Self {
            standardizer,
            kernel,
            lambda,
            beta,
            inducing,
            alpha,
            flat,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Standardized inducing points.
    pub fn inducing(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.feature_dim(), x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Hot path for planners; `x` must have `feature_dim` entries.
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.feature_dim();
        debug_assert_eq!(x.len(), d);
        let mut z_buf = [0.0f64; 16];
        let mut z_heap = Vec::new();
        let z: &mut [f64] = if d <= z_buf.len() {
            &mut z_buf[..d]
        } else {
            z_heap.resize(d, 0.0);
            &mut z_heap
        };
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = (x[k] - self.standardizer.mean[k]) / self.standardizer.scale[k];
        }
        let inv = 1.0 / (2.0 * self.kernel.lengthscale * self.kernel.lengthscale);
        let total: f64 = self
            .flat
            .chunks_exact(d)
            .zip(&self.alpha)
            .map(|(u, a)| a * (-sq_dist(z, u) * inv).exp())
            .sum();
        self.kernel.amplitude * total
    }
}

/// Persisted form of a [`RewardModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardModelDoc {
    pub feature_dim: usize,
    pub standardizer: Standardizer,
    pub kernel: KernelParams,
    pub lambda: f64,
    pub beta: f64,
    pub inducing: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// Resolved configuration of the run that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl RewardModel {
    pub fn to_doc(&self, config: Option<serde_json::Value>) -> RewardModelDoc {
        RewardModelDoc {
            feature_dim: self.feature_dim(),
            standardizer: self.standardizer.clone(),
            kernel: self.kernel,
            lambda: self.lambda,
            beta: self.beta,
            inducing: self.inducing.clone(),
            alpha: self.alpha.clone(),
            config,
        }
    }

    pub fn from_doc(doc: RewardModelDoc) -> Result<Self> {
        check_dim(doc.feature_dim, doc.standardizer.dim())?;
        Self::new(
            doc.standardizer,
            doc.kernel,
            doc.lambda,
            doc.beta,
            doc.inducing,
            doc.alpha,
        )
    }

    pub fn to_json(&self, config: Option<serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc(config))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }
}

/// `R(x) = sum_i alpha_i k(x, u_i)` with `x` in raw feature units.
pub fn eval_reward(model: &RewardModel, x: &[f64]) -> Result<f64> {
    model.eval(x)
}

/// Fit diagnostics returned alongside the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub lengthscale: f64,
    /// The median trick had nothing to measure and fell back to 1.
    pub degenerate_bandwidth: bool,
    pub stationarity_residual: f64,
    pub n_inducing: usize,
    pub n_samples: usize,
}

/// Closed-form kernelized fit. `inducing` is given in raw feature units.
pub fn fit_kdmrl(
    demos: &DemoSet,
    inducing: &[Vec<f64>],
    params: &KdmrlParams,
) -> Result<RewardModel> {
    fit_kdmrl_with_report(demos, inducing, params).map(|(m, _)| m)
}

pub fn fit_kdmrl_with_report(
    demos: &DemoSet,
    inducing: &[Vec<f64>],
    params: &KdmrlParams,
) -> Result<(RewardModel, FitReport)> {
    params.validate()?;
    if demos.n_samples() == 0 {
        return Err(Error::InvalidInput("empty demo set".into()));
    }
    if inducing.is_empty() {
        return Err(Error::InvalidInput("no inducing points".into()));
    }
    let rows = demos.rows();
    let standardizer = Standardizer::fit(&rows)?;
    let demo_std = standardizer.transform_all(&rows)?;
    let inducing_std = standardizer.transform_all(inducing)?;

    let (kernel, degenerate) = match params.lengthscale {
        Some(l) => (KernelParams::with_lengthscale(l)?, false),
        None if demo_std.len() >= 2 => {
            let m = median_trick(&demo_std, params.seed)?;
            let scaled = KernelParams::with_lengthscale(m.params.lengthscale * params.bandwidth_scale)?;
            (scaled, m.degenerate)
        }
        None => {
            log::warn!("single demo sample; falling back to lengthscale 1");
            (KernelParams::with_lengthscale(1.0)?, true)
        }
    };

    let weights = leverage_weights(demos, params.delta)?;
    let system = KdmrlSystem::assemble(
        &inducing_std,
        &demo_std,
        &weights,
        &kernel,
        params.lambda,
        params.beta,
    )?;
    let alpha = system.solve()?;
    let residual = system.residual(&alpha);
    let report = FitReport {
        lengthscale: kernel.lengthscale,
        degenerate_bandwidth: degenerate,
        stationarity_residual: residual,
        n_inducing: inducing_std.len(),
        n_samples: demo_std.len(),
    };
    let model = RewardModel::new(
        standardizer,
        kernel,
        params.lambda,
        params.beta,
        inducing_std,
        alpha.iter().copied().collect(),
    )?;
    Ok((model, report))
}

/// Rebuilds the quadratic program of `model` against `demos`.
pub fn system_for(model: &RewardModel, demos: &DemoSet, delta: f64) -> Result<KdmrlSystem> {
    check_dim(model.feature_dim(), demos.dim())?;
    let demo_std = model.standardizer.transform_all(&demos.rows())?;
    let weights = leverage_weights(demos, delta)?;
    KdmrlSystem::assemble(
        &model.inducing,
        &demo_std,
        &weights,
        &model.kernel,
        model.lambda,
        model.beta,
    )
}

/// Quadratic objective at the model's `alpha` (leveraged with `delta`).
pub fn objective(model: &RewardModel, demos: &DemoSet, delta: f64) -> Result<f64> {
    let system = system_for(model, demos, delta)?;
    Ok(system.objective(&DVector::from_column_slice(&model.alpha)))
}

/// Axis-aligned box in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl FeatureBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_dim(low.len(), high.len())?;
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidInput("box needs low < high per dimension".into()));
        }
        Ok(Self { low, high })
    }

    /// Bounding box of `rows` inflated by `margin` of its extent per side.
    /// Flat dimensions get a half-unit margin.
    pub fn around(rows: &[Vec<f64>], margin: f64) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidInput("no rows to bound".into()))?;
        let mut low = first.clone();
        let mut high = first.clone();
        for row in rows {
            check_dim(low.len(), row.len())?;
            for k in 0..row.len() {
                low[k] = low[k].min(row[k]);
                high[k] = high[k].max(row[k]);
            }
        }
        for k in 0..low.len() {
            let pad = if high[k] > low[k] {
                margin * (high[k] - low[k])
            } else {
                0.5
            };
            low[k] -= pad;
            high[k] += pad;
        }
        Self::new(low, high)
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }
}

/// Deduplicated demo features followed by `n_random` uniform draws from
/// `bounds` (stream `"inducing"` of `seed`). Output is in raw units.
pub fn build_inducing(
    demos: &DemoSet,
    n_random: usize,
    bounds: &FeatureBox,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::new();
    if demos.n_samples() > 0 {
        check_dim(bounds.dim(), demos.dim())?;
        let rows = demos.rows();
        let standardizer = Standardizer::fit(&rows)?;
        let keep = dedup_indices(&standardizer.transform_all(&rows)?, DEDUP_TOL);
        points.extend(keep.into_iter().map(|i| rows[i].clone()));
    }
    let mut rng = SeedStreams::new(seed).stream("inducing");
    for _ in 0..n_random {
        points.push(
            bounds
                .low
                .iter()
                .zip(&bounds.high)
                .map(|(l, h)| rng.gen_range(*l..*h))
                .collect(),
        );
    }
    Ok(points)
}

/// Indices of rows kept after merging near-duplicates, in first-seen order.
fn dedup_indices(rows: &[Vec<f64>], tol: f64) -> Vec<usize> {
    use std::collections::HashMap;
    let mut buckets: HashMap<i64, Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let key = (row.first().copied().unwrap_or(0.0) / tol).floor() as i64;
        let duplicate = (key - 1..=key + 1).any(|k| {
            buckets.get(&k).is_some_and(|ids| {
                ids.iter().any(|&j| {
                    rows[j]
                        .iter()
                        .zip(row)
                        .all(|(a, b)| (a - b).abs() <= tol)
                })
            })
        });
        if !duplicate {
            buckets.entry(key).or_default().push(i);
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::Episode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    #[test]
    fn discrete_one_hot_and_two_point() {
        let mu = DiscreteDistribution::one_hot(4, 2).unwrap();
        let r = solve_discrete(&mu).unwrap();
        assert_eq!(r.values, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(value_of(&mu, &r).unwrap(), 1.0);

        let mu = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
        let r = solve_discrete(&mu).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.values[0] - s).abs() < 1e-15 && (r.values[1] - s).abs() < 1e-15);
        assert!((value_of(&mu, &r).unwrap() - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn discrete_solution_dominates_random_feasible_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masses: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mu = DiscreteDistribution::from_masses(masses).unwrap();
        let best = value_of(&mu, &solve_discrete(&mu).unwrap()).unwrap();
        let norm = mu.probs().iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!((best - norm).abs() < 1e-12);
        for _ in 0..10_000 {
            let r = DiscreteReward::from_values(random_unit(&mut rng, 6));
            assert!(value_of(&mu, &r).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![-0.5, 1.5]).is_err());
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::from_masses(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn value_of_hand_cases() {
        let mu = DiscreteDistribution::new(vec![0.3, 0.7]).unwrap();
        let r = DiscreteReward::from_values(vec![1.0, -1.0]);
        assert!((value_of(&mu, &r).unwrap() + 0.4).abs() < 1e-15);
        assert_eq!(value_of(&mu, &DiscreteReward::from_values(vec![0.0, 0.0])).unwrap(), 0.0);
        let hot = DiscreteDistribution::one_hot(3, 1).unwrap();
        let r = DiscreteReward::from_values(vec![4.0, -2.5, 9.0]);
        assert_eq!(value_of(&hot, &r).unwrap(), -2.5);
        assert!(matches!(
            value_of(&hot, &DiscreteReward::from_values(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scalar_stationarity_gives_half() {
        let system = KdmrlSystem {
            k_u: DMatrix::from_element(1, 1, 1.0),
            density_at_inducing: DVector::from_element(1, 1.0),
            lambda: 1.0,
            beta: 1.0,
        };
        let alpha = system.solve().unwrap();
        assert!((alpha[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_demos_give_reward_peaked_at_datum() {
        let datum = vec![1.0, -2.0];
        let demos = DemoSet::from_rows(vec![datum.clone(); 5]).unwrap();
        let model = fit_kdmrl(
            &demos,
            &[datum.clone()],
            &KdmrlParams {
                delta: 1.0,
                ..KdmrlParams::default()
            },
        )
        .unwrap();
        let at = model.eval(&datum).unwrap();
        assert!(at > 0.0);
        for offset in [[0.5, 0.0], [0.0, -0.3], [2.0, 2.0]] {
            let x = [datum[0] + offset[0], datum[1] + offset[1]];
            assert!(model.eval(&x).unwrap() < at);
        }
    }

    #[test]
    fn fit_rejects_bad_params() {
        let demos = DemoSet::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let u = vec![vec![0.5]];
        for p in [
            KdmrlParams { lambda: 0.0, ..Default::default() },
            KdmrlParams { beta: -1.0, ..Default::default() },
            KdmrlParams { delta: 0.0, ..Default::default() },
        ] {
            assert!(matches!(fit_kdmrl(&demos, &u, &p), Err(Error::InvalidInput(_))));
        }
        assert!(fit_kdmrl(&DemoSet::empty(), &u, &KdmrlParams::default()).is_err());
        assert!(fit_kdmrl(&demos, &[], &KdmrlParams::default()).is_err());
    }

    fn small_instance() -> (DemoSet, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let episodes = (0..4)
            .map(|_| {
                Episode::new(
                    (0..6)
                        .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                        .collect(),
                )
            })
            .collect();
        let demos = DemoSet::new(episodes).unwrap();
        let bounds = FeatureBox::around(&demos.rows(), 0.1).unwrap();
        let inducing = build_inducing(&demos, 10, &bounds, 5).unwrap();
        (demos, inducing)
    }

    #[test]
    fn fit_satisfies_stationarity_and_local_optimality() {
        let (demos, inducing) = small_instance();
        let params = KdmrlParams::default();
        let (model, report) = fit_kdmrl_with_report(&demos, &inducing, &params).unwrap();
        assert!(report.stationarity_residual < 1e-8);

        let system = system_for(&model, &demos, params.delta).unwrap();
        assert!(system.min_system_eigenvalue() > 0.0);
        let alpha = DVector::from_column_slice(model.alpha());
        let best = system.objective(&alpha);
        assert!((best - objective(&model, &demos, params.delta).unwrap()).abs() < 1e-15);
        assert!(best >= 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let dir = DVector::from_vec(random_unit(&mut rng, alpha.len()));
            assert!(system.objective(&(&alpha + dir * 1e-3)) <= best);
        }
    }

    #[test]
    fn zero_alpha_has_zero_reward_and_objective() {
        let (demos, inducing) = small_instance();
        let model = fit_kdmrl(&demos, &inducing, &KdmrlParams::default()).unwrap();
        let zero = RewardModel::new(
            model.standardizer().clone(),
            model.kernel(),
            model.lambda(),
            model.beta(),
            model.inducing().to_vec(),
            vec![0.0; model.alpha().len()],
        )
        .unwrap();
        assert_eq!(zero.eval(&[0.1, 0.2, 0.3]).unwrap(), 0.0);
        assert_eq!(objective(&zero, &demos, 0.75).unwrap(), 0.0);
    }

    #[test]
    fn single_inducing_point_shape_and_tail() {
        let model = RewardModel::new(
            Standardizer::identity(2),
            KernelParams::with_lengthscale(0.5).unwrap(),
            1.0,
            1.0,
            vec![vec![1.0, 1.0]],
            vec![3.0],
        )
        .unwrap();
        assert_eq!(model.eval(&[1.0, 1.0]).unwrap(), 3.0);
        assert!(model.eval(&[1.2, 0.9]).unwrap() < 3.0);
        assert!(model.eval(&[6.0, 1.0]).unwrap().abs() < 1e-15 * 3.0);
        assert!(matches!(model.eval(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn normalized_weights_make_fit_invariant_to_demo_duplication() {
        // Duplicating every episode doubles each raw weight; w is normalized.
        let (demos, inducing) = small_instance();
        let doubled = DemoSet::new(
            demos
                .episodes()
                .iter()
                .chain(demos.episodes())
                .cloned()
                .collect(),
        )
        .unwrap();
        let params = KdmrlParams {
            lengthscale: Some(1.3),
            ..Default::default()
        };
        let a = fit_kdmrl(&demos, &inducing, &params).unwrap();
        let b = fit_kdmrl(&doubled, &inducing, &params).unwrap();
        for (x, y) in a.alpha().iter().zip(b.alpha()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn inducing_dedup_and_random_draws() {
        let demos = DemoSet::from_rows(vec![
            vec![0.0, 0.0],
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            vec![1.0 + 1e-9, 2.0],
        ])
        .unwrap();
        let bounds = FeatureBox::new(vec![-1.0, -1.0], vec![3.0, 3.0]).unwrap();
        let only_demos = build_inducing(&demos, 0, &bounds, 1).unwrap();
        assert_eq!(only_demos, vec![vec![0.0, 0.0], vec![1.0, 2.0]]);

        let random = build_inducing(&DemoSet::empty(), 1000, &bounds, 9).unwrap();
        assert_eq!(random.len(), 1000);
        assert!(random.iter().all(|p| bounds.contains(p)));
        assert_eq!(random, build_inducing(&DemoSet::empty(), 1000, &bounds, 9).unwrap());
    }

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let (demos, inducing) = small_instance();
        let model = fit_kdmrl(&demos, &inducing, &KdmrlParams::default()).unwrap();
        let text = model.to_json(Some(serde_json::json!({"seed": 5}))).unwrap();
        let back = RewardModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        let bits = |m: &RewardModel| m.alpha().iter().map(|a| a.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
    }
}
