//! Shared fixtures for the benchmarks.

use itr_core::sim_lab::generate;
use itr_core::{Case, Dataset, EstimatorConfig, NuisanceFit, Scenario};

/// One simulated sample with its case-I working models.
pub fn sample(design: u8, n: usize, seed: u64) -> (Dataset, NuisanceFit, Scenario) {
    let scn = Scenario::preset(design, n).expect("preset exists");
    let data = generate(&scn, seed).expect("generation succeeds").data;
    let nf = NuisanceFit::fit(&data, &Case::I.nuisance_spec(&scn)).expect("working models fit");
    (data, nf, scn)
}

pub fn config(scn: &Scenario) -> EstimatorConfig {
    EstimatorConfig {
        nuisance: Case::I.nuisance_spec(scn),
        ..EstimatorConfig::default()
    }
}
