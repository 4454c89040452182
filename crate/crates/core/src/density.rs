//! Kernels, bandwidth selection and leveraged kernel density estimation.
//!
//! All kernel computations assume features have been standardized
//! (zero mean, unit variance per dimension), which is what lets a single
//! isotropic lengthscale serve heterogeneous feature units.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::demo::DemoSet;
use crate::error::{check_dim, Error, Result};
use crate::rng::SeedStreams;

/// Pair enumeration cap for the median trick.
pub const MEDIAN_TRICK_MAX_POINTS: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscale: f64,
    pub amplitude: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, amplitude: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "amplitude must be positive and finite, got {amplitude}"
            )));
        }
        Ok(Self {
            lengthscale,
            amplitude,
        })
    }

    /// Unit-amplitude kernel with the given lengthscale.
    pub fn with_lengthscale(lengthscale: f64) -> Result<Self> {
        Self::new(lengthscale, 1.0)
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Squared exponential kernel `a * exp(-|x - y|^2 / (2 l^2))`.
pub fn se_kernel(x: &[f64], y: &[f64], p: &KernelParams) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::InvalidInput("zero-dimensional feature vector".into()));
    }
    Ok(se_kernel_unchecked(x, y, p))
}

#[inline]
pub(crate) fn se_kernel_unchecked(x: &[f64], y: &[f64], p: &KernelParams) -> f64 {
    p.amplitude * (-sq_dist(x, y) / (2.0 * p.lengthscale * p.lengthscale)).exp()
}

/// Isotropic Gaussian density with standard deviation `h`, centred at `center`.
/// Integrates to one over `R^d`.
pub fn gaussian_basis(x: &[f64], center: &[f64], h: f64) -> f64 {
    let d = x.len() as f64;
    let norm = (2.0 * PI * h * h).powf(-d / 2.0);
    norm * (-sq_dist(x, center) / (2.0 * h * h)).exp()
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and population standard deviation. Constant dimensions get
    /// scale 1 so they pass through centred but unscaled.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot standardize an empty set".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            check_dim(d, row.len())?;
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut var = vec![0.0; d];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Outcome of [`median_trick`]. `degenerate` is the warning signal raised
/// when every point coincides and the lengthscale fell back to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianTrick {
    pub params: KernelParams,
    pub degenerate: bool,
}

/// Lengthscale = median pairwise Euclidean distance, amplitude 1.
///
/// Sets larger than [`MEDIAN_TRICK_MAX_POINTS`] are subsampled uniformly
/// without replacement from the `"median-trick"` stream of `seed`.
pub fn median_trick(points: &[Vec<f64>], seed: u64) -> Result<MedianTrick> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "median trick needs at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
    }

    let chosen: Vec<&[f64]> = if points.len() > MEDIAN_TRICK_MAX_POINTS {
        let mut rng = SeedStreams::new(seed).stream("median-trick");
        let mut idx = index::sample(&mut rng, points.len(), MEDIAN_TRICK_MAX_POINTS).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i].as_slice()).collect()
    } else {
        points.iter().map(Vec::as_slice).collect()
    };

    let n = chosen.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(chosen[i], chosen[j]).sqrt());
        }
    }
    let median = median_in_place(&mut dists);

    if median > 0.0 && median.is_finite() {
        Ok(MedianTrick {
            params: KernelParams::with_lengthscale(median)?,
            degenerate: false,
        })
    } else {
        log::warn!("median pairwise distance is zero; falling back to lengthscale 1");
        Ok(MedianTrick {
            params: KernelParams::with_lengthscale(1.0)?,
            degenerate: true,
        })
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Leverage weight `cos(pi/2 * (1 - delta^(T-t)))`.
pub fn leverage_weight(delta: f64, steps_to_end: usize) -> f64 {
    let gamma = delta.powi(steps_to_end.min(i32::MAX as usize) as i32);
    (FRAC_PI_2 * (1.0 - gamma)).cos()
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "leverage decay must lie in (0, 1], got {delta}"
        )))
    }
}

/// Leverage weights of every demo sample, in [`DemoSet::samples`] order.
pub fn leverage_weights(demos: &DemoSet, delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    Ok(demos
        .samples()
        .map(|s| leverage_weight(delta, s.steps_to_end))
        .collect())
}

/// Mixture of unit-integral Gaussian bases centred on the demo samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    normalizer: f64,
    bandwidth: KernelParams,
    delta: f64,
}

/// Fits the leveraged KDE. With `delta = 1` every weight is 1 and this is
/// the plain average of basis densities.
pub fn fit_kde(demos: &DemoSet, delta: f64, bandwidth: KernelParams) -> Result<DensityEstimate> {
    if demos.n_samples() == 0 {
        return Err(Error::InvalidInput("empty demo set".into()));
    }
    let weights = leverage_weights(demos, delta)?;
    let normalizer = weights.iter().sum();
    Ok(DensityEstimate {
        centers: demos.rows(),
        weights,
        normalizer,
        bandwidth,
        delta,
    })
}

impl DensityEstimate {
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Raw leverage weights, before division by `Z`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Z = sum of weights`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn bandwidth(&self) -> KernelParams {
        self.bandwidth
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let h = self.bandwidth.lengthscale;
        let total: f64 = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * gaussian_basis(x, c, h))
            .sum();
        Ok(total / self.normalizer)
    }
}

/// Free-function form of [`DensityEstimate::eval`].
pub fn eval_density(est: &DensityEstimate, x: &[f64]) -> Result<f64> {
    est.eval(x)
}
