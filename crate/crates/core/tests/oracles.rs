use dmrl_core::demo::{DemoSet, Episode};
use dmrl_core::density::{fit_kde, gaussian_basis, median_trick, KernelParams};
use dmrl_core::metrics::{convergence_trend, MixtureSpec};
use dmrl_core::oracle::{check_closed_form, density_mass, random_instance};
use dmrl_core::reward::{solve_discrete, value_of, DiscreteDistribution, DiscreteReward, FeatureBox};
use dmrl_core::rng::SeedStreams;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn closed_form_matches_numerical_maximizer() {
    let mut rng = SeedStreams::new(7).stream("closed-form");
    for i in 0..100 {
        let instance = random_instance(&mut rng, 6, 64).unwrap();
        let check = check_closed_form(&instance, 20_000).unwrap();
        assert!(check.alpha_gap < 1e-6, "instance {i}: gap {:e}", check.alpha_gap);
        assert!(check.residual < 1e-8, "instance {i}: residual {:e}", check.residual);
    }
}

#[test]
fn discrete_solution_dominates_random_unit_rewards() {
    let mut rng = SeedStreams::new(3).stream("discrete");
    for trial in 0..10_000 {
        let len = rng.gen_range(1..=64);
        let mu = DiscreteDistribution::from_masses((0..len).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let best = solve_discrete(&mu).unwrap();
        let value = value_of(&mu, &best).unwrap();
        let norm = mu.probs().iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!((value - norm).abs() < 1e-12);
        let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scale = raw.iter().map(|r| r * r).sum::<f64>().sqrt();
        let other = DiscreteReward::from_values(raw.iter().map(|r| r / scale).collect());
        assert!(value_of(&mu, &other).unwrap() <= value + 1e-12, "trial {trial}");
    }
}

fn random_demo_set(rng: &mut impl Rng) -> DemoSet {
    let episodes = (0..rng.gen_range(1..=5))
        .map(|_| {
            let centre: [f64; 2] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            Episode::new(
                (0..rng.gen_range(2..=20))
                    .map(|_| centre.iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            )
        })
        .collect();
    DemoSet::new(episodes).unwrap()
}

#[test]
fn leveraged_kde_integrates_to_one() {
    let mut rng = SeedStreams::new(11).stream("kde-sets");
    for set in 0..20 {
        let demos = random_demo_set(&mut rng);
        let bandwidth = median_trick(&demos.rows(), set).unwrap().params;
        let est = fit_kde(&demos, 0.75, bandwidth).unwrap();
        let pad = 6.0 * bandwidth.lengthscale;
        let rows = demos.rows();
        let low: Vec<f64> = (0..2).map(|k| rows.iter().map(|r| r[k]).fold(f64::MAX, f64::min) - pad).collect();
        let high: Vec<f64> = (0..2).map(|k| rows.iter().map(|r| r[k]).fold(f64::MIN, f64::max) + pad).collect();
        let bounds = FeatureBox::new(low, high).unwrap();
        let mass = density_mass(&est, &bounds, 100_000, set).unwrap();
        assert!((mass - 1.0).abs() <= 0.02, "set {set}: mass {mass}");
    }
}

#[test]
fn unleveraged_kde_is_the_plain_average() {
    let mut rng = SeedStreams::new(5).stream("plain-kde");
    let demos = random_demo_set(&mut rng);
    let h = 0.7;
    let est = fit_kde(&demos, 1.0, KernelParams::with_lengthscale(h).unwrap()).unwrap();
    let rows = demos.rows();
    for _ in 0..200 {
        let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let plain: f64 = rows
            .iter()
            .map(|c| {
                let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (-d2 / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h)
            })
            .sum::<f64>()
            / rows.len() as f64;
        assert!((est.eval(&x).unwrap() - plain).abs() < 1e-12);
        assert!((gaussian_basis(&x, &rows[0], h) - {
            let d2 = (x[0] - rows[0][0]).powi(2) + (x[1] - rows[0][1]).powi(2);
            (-d2 / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI * h * h)
        })
        .abs()
            < 1e-15);
    }
}

#[test]
fn value_gap_shrinks_with_more_samples() {
    let seeds: Vec<u64> = (0..20).collect();
    let rows = convergence_trend(&MixtureSpec::default(), &[10, 100, 1000], &seeds).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].median_gap < rows[0].median_gap, "{rows:?}");
    assert!(rows.iter().all(|r| r.gaps.len() == 20 && r.gaps.iter().all(|g| *g >= 0.0)));
}
