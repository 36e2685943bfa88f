mod common;

use itr_core::nuisance::{OutcomeBasis, PropensityForm, PropensityModel};
use itr_core::sim_lab::true_value_mc;
use itr_core::*;

#[test]
fn smoothers_match_direct_sums() {
    common::smoothers_match_direct_sums().assert();
}

#[test]
fn gee_matches_normal_equations() {
    common::gee_matches_normal_equations().assert();
}

#[test]
fn intercept_sandwiches_match_closed_forms() {
    common::intercept_sandwiches_match_closed_forms().assert();
}

#[test]
fn cv_argmin_matches_exhaustive() {
    common::cv_argmin_matches_exhaustive().assert();
}

#[test]
fn bootstrap_quantiles_match() {
    common::bootstrap_quantiles_match().assert();
}

#[test]
fn solver_matches_grid_search() {
    common::solver_matches_grid_search().assert();
}

#[test]
fn logistic_fit_matches_brute_force_likelihood() {
    let (data, _) = common::sim_sample(4, 400, 2, 0);
    let m = PropensityModel::fit(&data, &PropensityForm::logistic()).unwrap();
    let best = m.log_likelihood(&data, &m.gamma);
    // every coordinate perturbation lowers the likelihood
    for k in 0..m.gamma.len() {
        for step in [-1e-3, 1e-3] {
            let mut g = m.gamma.clone();
            g[k] += step;
            assert!(m.log_likelihood(&data, &g) < best, "coordinate {k} step {step}");
        }
    }
}

#[test]
fn kde_of_uniform_sample_is_near_one() {
    let mut rng = stream_rng(1, 0);
    let sample: Vec<f64> = (0..1000).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    let f = itr_core::kernel::kde(KernelFamily::Epanechnikov, Bandwidth::new(0.5).unwrap(), &sample, 0.5).unwrap();
    assert!((f - 1.0).abs() <= 0.1, "{f}");
}

#[test]
fn outcome_sandwich_of_noiseless_linear_data_is_zero() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1, (i as f64).sin()]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r[0] - r[1]).collect();
    let mut a = vec![0.0; 30];
    a[0] = 1.0;
    let data = Dataset::new(rows, a, y).unwrap();
    let m = OutcomeModel::fit(&data, &OutcomeBasis::Linear).unwrap();
    let cov = itr_core::inference::sandwich_alpha(&data, &m).unwrap();
    assert!(cov.norm() <= 1e-16 * 30.0 * 10.0, "{}", cov.norm());
}

#[test]
fn simulation_one_truth_matches_closed_form() {
    // 1 + 2 E[t⁺] with t ~ N(0, 4)
    let closed = 1.0 + 4.0 / (2.0 * std::f64::consts::PI).sqrt();
    let scn = Scenario::preset(1, 500).unwrap();
    let (v, se) = true_value_mc(&scn, 200_000, 3).unwrap();
    assert!((v - closed).abs() <= 4.0 * se, "{v} ± {se} vs {closed}");
}
