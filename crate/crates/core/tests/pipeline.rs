use cyldimer::experiment::{run_moments, ExperimentConfig};
use cyldimer::lattice::DomainSpec;

fn config(w: usize, h: usize, n: usize, seed: Option<u64>) -> ExperimentConfig {
    ExperimentConfig { n_samples: n, seed, ..ExperimentConfig::for_domain(DomainSpec::straight(w, h)) }
}

#[test]
fn sampled_fourth_moment_agrees_with_fitted_prediction() {
    let out = run_moments(&config(16, 8, 10_000, Some(21))).unwrap();
    let z = out.comparison.z_m4.expect("sampled M4");
    assert!(z.abs() < 3.0, "z-score of M4 is {z}");
    assert!(out.comparison.z_m2.unwrap().abs() < 4.0);
}

#[test]
fn exact_moments_do_not_depend_on_the_seed() {
    let a = run_moments(&config(8, 4, 2000, Some(1))).unwrap();
    let b = run_moments(&config(8, 4, 2000, Some(2))).unwrap();
    assert_eq!(a.exact, b.exact);
    let (ma, mb) = (a.monte_carlo.unwrap(), b.monte_carlo.unwrap());
    let diff = ma.m4.unwrap() - mb.m4.unwrap();
    let se = ma.se4.unwrap().hypot(mb.se4.unwrap());
    assert!(diff.abs() < 4.0 * se, "M4 differs by {diff} with combined se {se}");
}

#[test]
fn exact_only_run_has_no_sampled_moments() {
    let out = run_moments(&config(8, 4, 0, None)).unwrap();
    assert!(out.monte_carlo.is_none());
    assert!(out.comparison.measured_m4.is_none() && out.comparison.z_m4.is_none());
    assert!(out.exact.m4.is_none());
}
