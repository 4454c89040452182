//! Slow reference computations used to cross-check the fast paths.

use nalgebra::DVector;
use rand::Rng;

use crate::demo::{DemoSet, Episode};
use crate::density::DensityEstimate;
use crate::error::{Error, Result};
use crate::reward::{fit_kdmrl_with_report, system_for, FeatureBox, KdmrlParams, KdmrlSystem};
use crate::rng::SeedStreams;

/// Maximizes the quadratic objective of `system` by accelerated gradient
/// ascent with iterates projected onto the box `[-bound, bound]^n`.
///
/// The step is `1 / L` with `L` the largest eigenvalue of
/// `lambda K_U + beta I`; momentum follows the strongly concave schedule.
pub fn projected_gradient_ascent(system: &KdmrlSystem, steps: usize, bound: f64) -> DVector<f64> {
    let a = system.system_matrix();
    let b = system.rhs();
    let eig = a.clone().symmetric_eigenvalues();
    let l = eig.iter().copied().fold(f64::MIN, f64::max);
    let mu = eig.iter().copied().fold(f64::MAX, f64::min).max(0.0);
    let q = (mu / l).sqrt();
    let momentum = (1.0 - q) / (1.0 + q);
    let project = |v: DVector<f64>| v.map(|x| x.clamp(-bound, bound));

    let n = b.len();
    let mut x = DVector::zeros(n);
    let mut y = x.clone();
    for _ in 0..steps {
        let grad = &b - &a * &y;
        let next = project(&y + grad / l);
        y = &next + (&next - &x) * momentum;
        x = next;
    }
    x
}

/// Monte Carlo estimate of the mass of `est` inside `bounds` from `n`
/// draws of stream `"kde-mass"`.
///
/// The draws are stratified: one jittered point per cell of an
/// `m x ... x m` grid with `m = floor(n^(1/d))`, then plain uniform draws
/// for the remainder. Every draw is marginally uniform on the box, so the
/// average stays unbiased.
pub fn density_mass(est: &DensityEstimate, bounds: &FeatureBox, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one Monte Carlo draw".into()));
    }
    let dim = bounds.dim();
    let mut rng = SeedStreams::new(seed).stream("kde-mass");
    let width: Vec<f64> = bounds.low.iter().zip(&bounds.high).map(|(l, h)| h - l).collect();
    let volume: f64 = width.iter().product();
    let mut m = (n as f64).powf(1.0 / dim as f64).floor() as usize;
    while m.pow(dim as u32) > n {
        m -= 1;
    }
    let cells = m.pow(dim as u32);
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    for cell in 0..cells {
        let mut index = cell;
        for (k, v) in x.iter_mut().enumerate() {
            let slot = (index % m) as f64;
            index /= m;
            *v = bounds.low[k] + (slot + rng.gen::<f64>()) * width[k] / m as f64;
        }
        total += est.eval(&x)?;
    }
    for _ in cells..n {
        for (k, v) in x.iter_mut().enumerate() {
            *v = rng.gen_range(bounds.low[k]..bounds.high[k]);
        }
        total += est.eval(&x)?;
    }
    Ok(volume * total / n as f64)
}

/// A random kernelized fitting problem.
#[derive(Debug, Clone)]
pub struct KdmrlInstance {
    pub demos: DemoSet,
    pub inducing: Vec<Vec<f64>>,
    pub params: KdmrlParams,
}

/// Draws a problem with dimension in `1..=max_dim` and `1..=max_inducing`
/// inducing points spread over the demo bounding box. Demos come in up to
/// four episodes so leverage weights vary.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_dim: usize, max_inducing: usize) -> Result<KdmrlInstance> {
    let dim = rng.gen_range(1..=max_dim);
    let episodes = (0..rng.gen_range(1..=4))
        .map(|_| {
            let len = rng.gen_range(1..=16);
            Episode::new(
                (0..len)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
                    .collect(),
            )
        })
        .collect();
    let demos = DemoSet::new(episodes)?;
    let bounds = FeatureBox::around(&demos.rows(), 0.5)?;
    let inducing = (0..rng.gen_range(1..=max_inducing))
        .map(|_| (0..dim).map(|k| rng.gen_range(bounds.low[k]..bounds.high[k])).collect())
        .collect();
    Ok(KdmrlInstance {
        demos,
        inducing,
        params: KdmrlParams::default(),
    })
}

/// Outcome of comparing the closed-form fit of one instance to the
/// numerical maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCheck {
    /// Infinity-norm gap between the two coefficient vectors.
    pub alpha_gap: f64,
    pub residual: f64,
}

pub fn check_closed_form(instance: &KdmrlInstance, steps: usize) -> Result<ClosedFormCheck> {
    let (model, report) = fit_kdmrl_with_report(&instance.demos, &instance.inducing, &instance.params)?;
    let system = system_for(&model, &instance.demos, instance.params.delta)?;
    let numeric = projected_gradient_ascent(&system, steps, 1e12);
    let alpha_gap = model
        .alpha()
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(ClosedFormCheck {
        alpha_gap,
        residual: report.stationarity_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_kde, KernelParams};
    use crate::demo::DemoSet;

    #[test]
    fn ascent_reaches_the_stationary_point() {
        let inducing = vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 1.0]];
        let demos = vec![vec![0.1, 0.2], vec![0.9, 0.4]];
        let kernel = KernelParams::with_lengthscale(0.8).unwrap();
        let system = KdmrlSystem::assemble(&inducing, &demos, &[0.5, 0.5], &kernel, 0.1, 0.01).unwrap();
        let alpha = projected_gradient_ascent(&system, 20_000, 1e6);
        let exact = system.solve().unwrap();
        assert!((alpha - exact).amax() < 1e-9);
    }

    #[test]
    fn unit_gaussian_mass_is_one() {
        let demos = DemoSet::from_rows(vec![vec![0.0, 0.0]]).unwrap();
        let est = fit_kde(&demos, 1.0, KernelParams::with_lengthscale(1.0).unwrap()).unwrap();
        let bounds = FeatureBox::new(vec![-8.0, -8.0], vec![8.0, 8.0]).unwrap();
        let mass = density_mass(&est, &bounds, 200_000, 1).unwrap();
        assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    }
}
