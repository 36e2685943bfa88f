//! Simulation designs, the replicate study runner and Monte-Carlo truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index_estimation::{EstimatingEquation, InitStrategy};
use crate::nuisance::{expit, NuisanceFit, NuisanceSpec, OutcomeBasis, PropensityForm};
use crate::pipeline::{fit_policy, EstimatorConfig, PolicyFit};
use crate::rng::stream_rng;
use crate::treatment_effect::{pilot_bandwidth, sample_sd, IndexVector, QEstimator};
use crate::kernel::Bandwidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueContrast {
    /// `2t`
    #[serde(rename = "linear_2t")]
    Linear2t,
    /// `t + sin t`
    TPlusSinT,
    /// `t² − 2`
    TSqMinus2,
}

impl TrueContrast {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TrueContrast::Linear2t => 2.0 * t,
            TrueContrast::TPlusSinT => t + t.sin(),
            TrueContrast::TSqMinus2 => t * t - 2.0,
        }
    }

    pub fn roots(self) -> Vec<f64> {
        match self {
            TrueContrast::Linear2t | TrueContrast::TPlusSinT => vec![0.0],
            TrueContrast::TSqMinus2 => vec![-std::f64::consts::SQRT_2, std::f64::consts::SQRT_2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueBaseline {
    /// `1 + α₀ᵀx`
    Linear,
    /// `1 + sin(α₁₀ᵀx) + ½(α₂₀ᵀx)²`
    SinPlusHalfquad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruePropensity {
    ConstHalf,
    /// `expit(γ₀ᵀx)`, no intercept.
    ExpitGamma0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// `N(0, 0.25)`
    NormalVarQuarter,
    /// `N(0, log{(β₀ᵀx)² + 1})`
    HeteroLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub q0: TrueContrast,
    pub mu0: TrueBaseline,
    pub pi0: TruePropensity,
    pub error: NoiseLaw,
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub beta0: Vec<f64>,
    #[serde(default)]
    pub alpha0: Vec<f64>,
    #[serde(default)]
    pub alpha10: Vec<f64>,
    #[serde(default)]
    pub alpha20: Vec<f64>,
    #[serde(default)]
    pub gamma0: Vec<f64>,
    /// Multiplies every noise draw; 0 gives noiseless outcomes.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn default_d() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    /// The `k`-th simulation design (1 to 6) at sample size `n`.
    pub fn preset(k: u8, n: usize) -> Result<Self> {
        let (q0, mu0, error) = match k {
            1 | 4 => (TrueContrast::Linear2t, TrueBaseline::Linear, NoiseLaw::NormalVarQuarter),
            2 | 5 => (TrueContrast::TPlusSinT, TrueBaseline::SinPlusHalfquad, NoiseLaw::HeteroLog),
            3 | 6 => (TrueContrast::TSqMinus2, TrueBaseline::SinPlusHalfquad, NoiseLaw::HeteroLog),
            _ => return Err(Error::InvalidInput(format!("no simulation design {k}"))),
        };
        let pi0 = if k <= 3 { TruePropensity::ConstHalf } else { TruePropensity::ExpitGamma0 };
        Ok(Scenario {
            q0,
            mu0,
            pi0,
            error,
            n,
            d: 4,
            beta0: vec![1.0, 1.0, -1.0, 1.0],
            alpha0: vec![1.0, -1.0, 1.0, 1.0],
            alpha10: vec![1.0, -1.0, 1.0, 1.0],
            alpha20: vec![1.0, 0.0, -1.0, 0.0],
            gamma0: vec![0.1, 0.0, -0.1, 0.0],
            noise_scale: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 || self.n < 2 {
            return Err(Error::InvalidInput("scenario needs d >= 1 and n >= 2".into()));
        }
        if self.beta0.len() != d || self.beta0[0] != 1.0 {
            return Err(Error::InvalidInput("beta0 must have length d and first entry 1".into()));
        }
        let need = |name: &str, v: &[f64]| {
            if v.len() == d {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must have length {d}")))
            }
        };
        match self.mu0 {
            TrueBaseline::Linear => need("alpha0", &self.alpha0)?,
            TrueBaseline::SinPlusHalfquad => {
                need("alpha10", &self.alpha10)?;
                need("alpha20", &self.alpha20)?;
            }
        }
        if self.pi0 == TruePropensity::ExpitGamma0 {
            need("gamma0", &self.gamma0)?;
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidInput("noise_scale must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn baseline(&self, x: &[f64]) -> f64 {
        let dot = |v: &[f64]| v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        match self.mu0 {
            TrueBaseline::Linear => 1.0 + dot(&self.alpha0),
            TrueBaseline::SinPlusHalfquad => {
                let u2 = dot(&self.alpha20);
                1.0 + dot(&self.alpha10).sin() + 0.5 * u2 * u2
            }
        }
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        match self.pi0 {
            TruePropensity::ConstHalf => 0.5,
            TruePropensity::ExpitGamma0 => expit(self.gamma0.iter().zip(x).map(|(g, v)| g * v).sum()),
        }
    }

    pub fn index(&self, x: &[f64]) -> f64 {
        self.beta0.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    fn noise_sd(&self, t: f64) -> f64 {
        self.noise_scale
            * match self.error {
                NoiseLaw::NormalVarQuarter => 0.5,
                NoiseLaw::HeteroLog => (t * t + 1.0).ln().sqrt(),
            }
    }

    /// One draw of `(x, a, y₁, y₀)`.
    fn draw<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64, f64, f64) {
        let x: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
        let a = f64::from(u8::from(rng.random::<f64>() < self.propensity(&x)));
        let e: f64 = StandardNormal.sample(rng);
        let t = self.index(&x);
        let y0 = self.baseline(&x) + self.noise_sd(t) * e;
        let y1 = y0 + self.q0.eval(t);
        (x, a, y1, y0)
    }
}

/// A generated sample with both potential outcomes kept.
#[derive(Debug, Clone)]
pub struct SimData {
    pub data: Dataset,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

pub fn generate_with<R: Rng>(scn: &Scenario, rng: &mut R) -> Result<SimData> {
    scn.validate()?;
    let n = scn.n;
    let mut x = Vec::with_capacity(n * scn.d);
    let (mut a, mut y, mut y1, mut y0) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let (xi, ai, y1i, y0i) = scn.draw(rng);
        x.extend(xi);
        y.push(if ai == 1.0 { y1i } else { y0i });
        a.push(ai);
        y1.push(y1i);
        y0.push(y0i);
    }
    Ok(SimData {
        data: Dataset::from_flat(x, scn.d, a, y)?,
        y1,
        y0,
    })
}

pub fn generate(scn: &Scenario, seed: u64) -> Result<SimData> {
    generate_with(scn, &mut stream_rng(seed, 0))
}

/// Value of the optimal rule by Monte Carlo, with its standard error.
pub fn true_value_mc(scn: &Scenario, draws: usize, seed: u64) -> Result<(f64, f64)> {
    scn.validate()?;
    if draws < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    const CHUNKS: usize = 64;
    let sums: Vec<(f64, f64, usize)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = draws / CHUNKS + usize::from(c < draws % CHUNKS);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (x, _, y1, y0) = scn.draw(&mut rng);
                let v = if scn.q0.eval(scn.index(&x)) > 0.0 { y1 } else { y0 };
                s += v;
                s2 += v * v;
            }
            (s, s2, count)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    let n = draws as f64;
    let mean = s / n;
    let var = (s2 - n * mean * mean) / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Both working models correct.
    I,
    /// Outcome model wrong.
    II,
    /// Propensity model wrong.
    III,
    /// Both wrong.
    IV,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::I, Case::II, Case::III, Case::IV];

    /// Working models this case prescribes for the scenario.
    pub fn nuisance_spec(self, scn: &Scenario) -> NuisanceSpec {
        let mu_ok = matches!(self, Case::I | Case::III);
        let pi_ok = matches!(self, Case::I | Case::II);
        let outcome = match (scn.mu0, mu_ok) {
            (TrueBaseline::Linear, true) => OutcomeBasis::Linear,
            (TrueBaseline::Linear, false) => OutcomeBasis::Constant,
            (TrueBaseline::SinPlusHalfquad, true) => OutcomeBasis::SinPlusHalfQuad,
            (TrueBaseline::SinPlusHalfquad, false) => OutcomeBasis::Linear,
        };
        let propensity = match (scn.pi0, pi_ok) {
            (TruePropensity::ConstHalf, true) => PropensityForm::Constant,
            (TruePropensity::ConstHalf, false) => PropensityForm::Fixed { value: 0.4 },
            (TruePropensity::ExpitGamma0, true) => PropensityForm::logistic(),
            (TruePropensity::ExpitGamma0, false) => PropensityForm::Constant,
        };
        NuisanceSpec {
            propensity,
            outcome,
            ..NuisanceSpec::default()
        }
    }
}

/// What one replicate contributes to the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub beta_l: Vec<f64>,
    pub beta_sd: Vec<f64>,
    pub v_hat: f64,
    pub v_sd: f64,
    /// Per true root: the nearest estimated root, if one lies close enough.
    pub roots: Vec<Option<MatchedRoot>>,
    pub n_roots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRoot {
    pub root: f64,
    pub bias_hat: Option<f64>,
    pub sd_hat: Option<f64>,
}

/// Largest distance at which an estimated root is credited to a true root.
pub const ROOT_MATCH_RADIUS: f64 = 0.7;

fn match_roots(truth: &[f64], fit: &PolicyFit) -> Vec<Option<MatchedRoot>> {
    truth
        .iter()
        .map(|&r0| {
            fit.roots
                .roots
                .iter()
                .enumerate()
                .filter(|(_, r)| (*r - r0).abs() <= ROOT_MATCH_RADIUS)
                .min_by(|a, b| (a.1 - r0).abs().total_cmp(&(b.1 - r0).abs()))
                .map(|(k, &root)| {
                    let inf = fit.root_inference[k].as_ref().ok();
                    MatchedRoot {
                        root,
                        bias_hat: inf.map(|i| i.bias_hat),
                        sd_hat: inf.map(|i| i.sd_hat),
                    }
                })
        })
        .collect()
}

/// Runs one replicate: generate, fit, summarize.
pub fn run_replicate(scn: &Scenario, case: Case, cfg: &EstimatorConfig, seed: u64, r: usize) -> Result<ReplicateResult> {
    let sim = generate_with(scn, &mut stream_rng(seed, r as u64))?;
    let cfg = EstimatorConfig {
        nuisance: case.nuisance_spec(scn),
        ..cfg.clone()
    };
    let fit = fit_policy(&sim.data, &cfg)?;
    if !fit.solution.converged {
        return Err(Error::NoConvergence {
            what: "index coefficients",
            iterations: fit.solution.iterations,
            residual: fit.solution.equation_norm,
        });
    }
    Ok(ReplicateResult {
        beta_l: fit.solution.beta.free().to_vec(),
        beta_sd: fit.beta_sd().unwrap_or_default(),
        v_hat: fit.value.v_hat,
        v_sd: fit.value_sd(),
        roots: match_roots(&scn.q0.roots(), &fit),
        n_roots: fit.roots.roots.len(),
    })
}

/// One aggregated line of a study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub true_value: f64,
    pub mean: f64,
    pub bias: f64,
    /// Empirical sd across replicates; `None` with a single replicate.
    pub sd: Option<f64>,
    pub sd_hat: Option<f64>,
    pub bias_hat: Option<f64>,
    pub coverage: Option<f64>,
    pub mse: f64,
    pub count: usize,
}

impl ParamSummary {
    /// `estimates[i]` with optional `(sd_hat, bias_hat)` for the interval.
    fn from_draws(parameter: String, truth: f64, draws: &[(f64, Option<f64>, Option<f64>)], z: f64) -> Self {
        let r = draws.len();
        let rf = r as f64;
        let mean = draws.iter().map(|d| d.0).sum::<f64>() / rf;
        let ss = draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>();
        let mse = draws.iter().map(|d| (d.0 - truth).powi(2)).sum::<f64>() / rf;
        let sds: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
        let biases: Vec<f64> = draws.iter().filter_map(|d| d.2).collect();
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let hits: Vec<bool> = draws
            .iter()
            .filter_map(|d| d.1.map(|s| ((d.0 - d.2.unwrap_or(0.0)) - truth).abs() <= z * s))
            .collect();
        ParamSummary {
            parameter,
            true_value: truth,
            mean,
            bias: mean - truth,
            sd: (r > 1).then(|| (ss / (rf - 1.0)).sqrt()),
            sd_hat: avg(&sds),
            bias_hat: avg(&biases),
            coverage: (!hits.is_empty()).then(|| hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64),
            mse,
            count: r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub case: Case,
    pub seed: u64,
    pub replicates: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub init: InitStrategy,
    pub level: f64,
    pub true_value_se: f64,
    /// Share of successful replicates that found an estimate near each true root.
    pub root_found_rate: Vec<f64>,
    pub rows: Vec<ParamSummary>,
}

impl StudyReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.replicates as f64
    }

    pub fn row(&self, parameter: &str) -> Option<&ParamSummary> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    /// `parameter,true,estimate,sd,sd_hat,cvg,mse`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::from("NA"), |v| format!("{v:.16e}"));
        let mut s = String::from("parameter,true,estimate,sd,sd_hat,cvg,mse\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.parameter,
                f(Some(r.true_value)),
                f(Some(r.mean)),
                f(r.sd),
                f(r.sd_hat),
                f(r.coverage),
                f(Some(r.mse))
            ));
        }
        s
    }
}

/// Monte-Carlo draws used for the value truth inside studies.
pub const STUDY_TRUTH_DRAWS: usize = 1_000_000;

pub fn run_study(scn: &Scenario, case: Case, reps: usize, seed: u64, cfg: &EstimatorConfig) -> Result<StudyReport> {
    scn.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    let results: Vec<Result<ReplicateResult>> = (0..reps)
        .into_par_iter()
        .map(|r| run_replicate(scn, case, cfg, seed, r))
        .collect();
    let mut ok = Vec::new();
    let mut failure_messages = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => failure_messages.push(format!("replicate {r}: {e}")),
        }
    }
    let (true_v, true_se) = true_value_mc(scn, STUDY_TRUTH_DRAWS, seed ^ 0x7275_7468)?;
    let z = Normal::standard().inverse_cdf(0.5 + cfg.level / 2.0);
    let truths = scn.q0.roots();
    let mut rows = Vec::new();
    let mut root_found_rate = vec![0.0; truths.len()];
    if !ok.is_empty() {
        for k in 0..scn.d - 1 {
            let draws: Vec<_> = ok.iter().map(|o| (o.beta_l[k], o.beta_sd.get(k).copied(), None)).collect();
            rows.push(ParamSummary::from_draws(format!("beta{}", k + 2), scn.beta0[k + 1], &draws, z));
        }
        let draws: Vec<_> = ok.iter().map(|o| (o.v_hat, Some(o.v_sd), None)).collect();
        rows.push(ParamSummary::from_draws("V".into(), true_v, &draws, z));
        for (j, &r0) in truths.iter().enumerate() {
            let draws: Vec<_> = ok
                .iter()
                .filter_map(|o| o.roots[j].as_ref().map(|m| (m.root, m.sd_hat, m.bias_hat)))
                .collect();
            root_found_rate[j] = draws.len() as f64 / ok.len() as f64;
            if !draws.is_empty() {
                let name = if truths.len() == 1 { "root".to_string() } else { format!("root{}", j + 1) };
                rows.push(ParamSummary::from_draws(name, r0, &draws, z));
            }
        }
    }
    Ok(StudyReport {
        scenario: scn.clone(),
        case,
        seed,
        replicates: reps,
        failures: failure_messages.len(),
        failure_messages,
        init: cfg.solver.init.clone(),
        level: cfg.level,
        true_value_se: true_se,
        root_found_rate,
        rows,
    })
}

/// `Q̃(0)` at the true index with bandwidth `c · n^{-1/5}` and Case-I nuisances,
/// one value per replicate; failed replicates are skipped.
pub fn q_tilde_at_zero(scn: &Scenario, reps: usize, seed: u64, c: f64, cfg: &EstimatorConfig) -> Vec<f64> {
    let beta = IndexVector::new(scn.beta0.clone()).expect("anchored truth");
    let h = c * (scn.n as f64).powf(-0.2);
    (0..reps)
        .into_par_iter()
        .filter_map(|r| {
            let sim = generate_with(scn, &mut stream_rng(seed, r as u64)).ok()?;
            let nf = NuisanceFit::fit(&sim.data, &Case::I.nuisance_spec(scn)).ok()?;
            let q = QEstimator::new(&sim.data, &nf, &beta, cfg.kernel, Bandwidth::new(h).ok()?).ok()?;
            q.eval(0.0).ok()
        })
        .collect()
}

/// `Gₙ(β₀)` for one generated sample under the case's working models, using
/// the configured pilot rule at the true index.
pub fn equation_at_truth(scn: &Scenario, case: Case, seed: u64, cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    let sim = generate(scn, seed)?;
    let nf = NuisanceFit::fit(&sim.data, &case.nuisance_spec(scn))?;
    let index = sim.data.index_values(&scn.beta0);
    let h = pilot_bandwidth(cfg.pilot_c, sample_sd(&index), scn.n)?;
    EstimatingEquation::new(&sim.data, &nf, cfg.kernel, h)
        .with_smoother(cfg.cond_mean)
        .evaluate(&scn.beta0[1..])
}
