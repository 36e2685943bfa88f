//! Parse, serialize and parse again is the identity on run configs.

use itr_cli::config::{Mode, RunConfig};
use itr_core::{Case, EstimatorConfig, KernelFamily};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = Option<Mode>> {
    prop_oneof![Just(None), Just(Some(Mode::Simulate)), Just(Some(Mode::Fit)), Just(Some(Mode::Qcurve))]
}

fn case() -> impl Strategy<Value = Option<Case>> {
    prop_oneof![Just(None), Just(Some(Case::I)), Just(Some(Case::II)), Just(Some(Case::III)), Just(Some(Case::IV))]
}

fn estimator() -> impl Strategy<Value = Option<EstimatorConfig>> {
    let kernel = prop_oneof![Just(KernelFamily::Epanechnikov), Just(KernelFamily::Quartic), Just(KernelFamily::Gaussian)];
    proptest::option::of((kernel, 0.01f64..20.0, 0.5f64..0.999, 1usize..500).prop_map(|(kernel, pilot_c, level, max_iter)| {
        let mut e = EstimatorConfig {
            kernel,
            pilot_c,
            level,
            ..EstimatorConfig::default()
        };
        e.solver.max_iter = max_iter;
        e
    }))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn round_trip_is_identity(
        mode in mode(),
        design in proptest::option::of(1u8..=6),
        n in proptest::option::of(10usize..10_000),
        case in case(),
        reps in proptest::option::of(1usize..1000),
        seed in proptest::option::of(any::<u64>()),
        estimator in estimator(),
        bootstrap in proptest::option::of(50usize..2000),
        covariates in proptest::option::of(proptest::collection::vec("[a-z][a-z0-9_]{0,7}", 1..6)),
        anchor in proptest::option::of("[a-z]{1,6}"),
    ) {
        let cfg = RunConfig { mode, design, n, case, reps, seed, estimator, bootstrap, covariates, anchor, ..RunConfig::default() };
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}
