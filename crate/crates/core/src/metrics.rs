//! Distances between distributions and executable checks of the value-gap
//! bound for the discrete density matching solver.
//!
//! For distributions `mu_bar` (true) and `mu_hat` (estimated) with unit-ball
//! maximizers `R_bar` and `R_hat`,
//!
//! ```text
//! |<mu_bar, R_hat> - <mu_bar, R_bar>| <= 3 (R_max - R_min) d_var(mu_bar, mu_hat)
//! ```
//!
//! Unit-ball solutions take values in `[-1, 1]`, so the default range is 2.
//! A tighter per-instance range only shrinks the right-hand side.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::demo::DemoSet;
use crate::density::{fit_kde, median_trick};
use crate::error::{check_dim, Error, Result};
use crate::reward::{solve_discrete, value_of, DiscreteDistribution};
use crate::rng::{Rng as StreamRng, SeedStreams};

/// Slack used by the inequality checkers.
pub const BOUND_SLACK: f64 = 1e-12;

/// Range of rewards on the unit ball.
pub const UNIT_BALL_RANGE: f64 = 2.0;

/// Variational distance `1/2 sum |p - q|`.
pub fn d_var(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    d_var_slices(p.probs(), q.probs())
}

/// [`d_var`] over raw probability vectors (e.g. normalized histograms).
pub fn d_var_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Hellinger distance `sqrt(1/2 sum (sqrt p - sqrt q)^2)`.
pub fn d_hellinger(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    let sum: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((0.5 * sum).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// `|<mu_bar, R_hat> - <mu_bar, R_bar>|`.
    pub lhs: f64,
    /// `3 (R_max - R_min) d_var(mu_bar, mu_hat)`.
    pub rhs: f64,
    pub holds: bool,
}

/// Value gap between solving with the estimate and with the truth, scored
/// under the truth.
pub fn value_gap(mu_bar: &DiscreteDistribution, mu_hat: &DiscreteDistribution) -> Result<f64> {
    check_dim(mu_bar.len(), mu_hat.len())?;
    let r_hat = solve_discrete(mu_hat)?;
    let r_bar = solve_discrete(mu_bar)?;
    Ok((value_of(mu_bar, &r_hat)? - value_of(mu_bar, &r_bar)?).abs())
}

pub fn check_theorem1(
    mu_bar: &DiscreteDistribution,
    mu_hat: &DiscreteDistribution,
    r_min: f64,
    r_max: f64,
) -> Result<BoundReport> {
    if !(r_max >= r_min) {
        return Err(Error::InvalidInput(format!(
            "reward range [{r_min}, {r_max}] is empty"
        )));
    }
    let lhs = value_gap(mu_bar, mu_hat)?;
    let rhs = 3.0 * (r_max - r_min) * d_var(mu_bar, mu_hat)?;
    Ok(BoundReport {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}

/// `d_var(P, Q) <= sqrt(2) d_H(P, Q)`.
pub fn check_lemma2(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<bool> {
    Ok(d_var(p, q)? <= std::f64::consts::SQRT_2 * d_hellinger(p, q)? + BOUND_SLACK)
}

/// Random distribution over `len` outcomes. Mixes dense, sparse and
/// point-mass shapes so the fuzzers reach the simplex boundary.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DiscreteDistribution {
    let shape = rng.gen_range(0..4);
    let masses: Vec<f64> = match shape {
        0 => (0..len).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect(),
        1 => (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen::<f64>()
                } else {
                    0.0
                }
            })
            .collect(),
        2 => {
            let mut m = vec![0.0; len];
            m[rng.gen_range(0..len)] = 1.0;
            m
        }
        _ => (0..len).map(|_| rng.gen::<f64>().powi(4)).collect(),
    };
    DiscreteDistribution::from_masses(masses).unwrap_or_else(|_| {
        let mut m = vec![0.0; len];
        m[rng.gen_range(0..len)] = 1.0;
        DiscreteDistribution::from_masses(m).expect("point mass is valid")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FuzzReport {
    pub trials: usize,
    pub holds: usize,
    /// Largest `lhs - rhs` seen (negative when everything holds).
    pub worst_margin: f64,
}

impl FuzzReport {
    pub fn violations(&self) -> usize {
        self.trials - self.holds
    }
}

/// Fuzzing configuration. `rhs_scale` multiplies the bound's right-hand
/// side; values below 1 are a hook for checking that violations are caught.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_support: usize,
    pub max_support: usize,
    pub rhs_scale: f64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            seed: 0,
            min_support: 2,
            max_support: 64,
            rhs_scale: 1.0,
        }
    }
}

fn fuzz_pairs(
    cfg: &FuzzConfig,
    stream: &str,
    mut check: impl FnMut(&DiscreteDistribution, &DiscreteDistribution) -> Result<f64>,
) -> Result<FuzzReport> {
    let mut rng: StreamRng = SeedStreams::new(cfg.seed).stream(stream);
    let mut holds = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cfg.trials {
        let len = rng.gen_range(cfg.min_support..=cfg.max_support);
        let p = random_distribution(&mut rng, len);
        let q = random_distribution(&mut rng, len);
        let margin = check(&p, &q)?;
        worst = worst.max(margin);
        if margin <= BOUND_SLACK {
            holds += 1;
        }
    }
    Ok(FuzzReport {
        trials: cfg.trials,
        holds,
        worst_margin: worst,
    })
}

pub fn fuzz_theorem1(cfg: &FuzzConfig) -> Result<FuzzReport> {
    fuzz_pairs(cfg, "theorem1", |mu_bar, mu_hat| {
        let r = check_theorem1(mu_bar, mu_hat, -1.0, 1.0)?;
        Ok(r.lhs - cfg.rhs_scale * r.rhs)
    })
}

pub fn fuzz_lemma2(cfg: &FuzzConfig) -> Result<FuzzReport> {
    fuzz_pairs(cfg, "lemma2", |p, q| {
        Ok(d_var(p, q)? - cfg.rhs_scale * std::f64::consts::SQRT_2 * d_hellinger(p, q)?)
    })
}

/// Known 1-D Gaussian mixture, discretized on a uniform grid of bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub low: f64,
    pub high: f64,
    pub bins: usize,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            weights: vec![0.3, 0.5, 0.2],
            means: vec![-2.0, 0.5, 3.0],
            sds: vec![0.6, 0.8, 0.5],
            low: -5.0,
            high: 6.0,
            bins: 64,
        }
    }
}

impl MixtureSpec {
    fn bin_centers(&self) -> Vec<f64> {
        let width = (self.high - self.low) / self.bins as f64;
        (0..self.bins)
            .map(|j| self.low + (j as f64 + 0.5) * width)
            .collect()
    }

    fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((w, m), s)| {
                let z = (x - m) / s;
                w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    /// The true discretized density `mu_bar`.
    pub fn discretized(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::from_masses(self.bin_centers().into_iter().map(|x| self.pdf(x)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        (0..n)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                let mut k = 0;
                while k + 1 < self.weights.len() && u >= self.weights[k] {
                    u -= self.weights[k];
                    k += 1;
                }
                Normal::new(self.means[k], self.sds[k])
                    .expect("positive sd")
                    .sample(rng)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub n: usize,
    pub median_gap: f64,
    pub gaps: Vec<f64>,
}

/// For each sample size, fits a median-trick KDE to `n` draws from `spec`,
/// discretizes it on the same bins as the truth and records the value gap.
/// One gap per seed; rows report the median.
pub fn convergence_trend(spec: &MixtureSpec, sizes: &[usize], seeds: &[u64]) -> Result<Vec<TrendRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("sample sizes must be increasing".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no seeds".into()));
    }
    let mu_bar = spec.discretized()?;
    let centers = spec.bin_centers();
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n < 2 {
            return Err(Error::InvalidInput("need at least 2 samples".into()));
        }
        let mut gaps = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut rng = SeedStreams::new(seed).indexed("trend", n as u64);
            let draws: Vec<Vec<f64>> = spec.sample(&mut rng, n).into_iter().map(|x| vec![x]).collect();
            let bandwidth = median_trick(&draws, seed)?.params;
            let est = fit_kde(&DemoSet::from_rows(draws)?, 1.0, bandwidth)?;
            let masses = centers
                .iter()
                .map(|&c| est.eval(&[c]))
                .collect::<Result<Vec<f64>>>()?;
            let mu_hat = DiscreteDistribution::from_masses(masses)?;
            gaps.push(value_gap(&mu_bar, &mu_hat)?);
        }
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median_gap = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        rows.push(TrendRow { n, median_gap, gaps });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(v: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn d_var_hand_cases() {
        assert_eq!(d_var(&dist(&[0.2, 0.8]), &dist(&[0.2, 0.8])).unwrap(), 0.0);
        assert_eq!(d_var(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(d_var(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap(), 0.5);
        assert!(d_var(&dist(&[1.0]), &dist(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn hellinger_hand_cases() {
        assert_eq!(d_hellinger(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(), 0.0);
        assert!((d_hellinger(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        let h = d_hellinger(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        let expected = (1.0 - std::f64::consts::FRAC_1_SQRT_2).sqrt();
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.541196).abs() < 1e-6);
    }

    #[test]
    fn theorem1_identical_densities() {
        let mu = dist(&[0.1, 0.6, 0.3]);
        let r = check_theorem1(&mu, &mu, -1.0, 1.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn theorem1_two_point_hand_values() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let uniform = dist(&[0.5, 0.5]);
        let hot = dist(&[1.0, 0.0]);

        // true density a point mass, estimate uniform
        let r = check_theorem1(&hot, &uniform, -1.0, 1.0).unwrap();
        assert!((r.lhs - (1.0 - s)).abs() < 1e-15);
        assert!((r.rhs - 3.0).abs() < 1e-15);
        assert!(r.holds);

        // true density uniform, estimate a point mass
        let r = check_theorem1(&uniform, &hot, -1.0, 1.0).unwrap();
        assert!((r.lhs - (s - 0.5)).abs() < 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn lemma2_edge_cases() {
        let p = dist(&[0.25, 0.75]);
        assert!(check_lemma2(&p, &p).unwrap());
        assert!(check_lemma2(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap());
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let n = rng.gen_range(2..=16);
            let p = random_distribution(&mut rng, n);
            let q = random_distribution(&mut rng, n);
            let r = random_distribution(&mut rng, n);
            for f in [d_var, d_hellinger] {
                let pq = f(&p, &q).unwrap();
                assert_eq!(pq, f(&q, &p).unwrap());
                assert!(f(&p, &p).unwrap() <= 1e-12);
                assert!((0.0..=1.0 + 1e-12).contains(&pq));
                assert!(pq <= f(&p, &r).unwrap() + f(&r, &q).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn small_fuzz_runs_clean_and_injection_is_caught() {
        let cfg = FuzzConfig {
            trials: 2_000,
            seed: 4,
            ..FuzzConfig::default()
        };
        let t1 = fuzz_theorem1(&cfg).unwrap();
        assert_eq!(t1.violations(), 0);
        assert_eq!(fuzz_lemma2(&cfg).unwrap().violations(), 0);

        let broken = FuzzConfig { rhs_scale: 0.0, ..cfg };
        assert!(fuzz_theorem1(&broken).unwrap().violations() > 0);
    }

    #[test]
    fn convergence_trend_limits_and_determinism() {
        let spec = MixtureSpec::default();
        let mu_bar = spec.discretized().unwrap();
        assert_eq!(value_gap(&mu_bar, &mu_bar).unwrap(), 0.0);

        let a = convergence_trend(&spec, &[10, 100], &[1, 2, 3]).unwrap();
        let b = convergence_trend(&spec, &[10, 100], &[1, 2, 3]).unwrap();
        assert_eq!(a, b);
        assert!(convergence_trend(&spec, &[100, 10], &[1]).is_err());
    }
}
