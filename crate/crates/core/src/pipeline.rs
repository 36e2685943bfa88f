//! End-to-end fit: nuisances, index coefficients, bandwidth, treatment
//! difference curve, roots, value, and their standard errors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index_estimation::{
    ols_start, phd_start, solve_beta, BetaSolution, CondMeanSmoother, EstimatingEquation, InitName,
    InitStrategy, SolverSettings,
};
use crate::inference::{root_inference, BetaInfluence, value_sigma2, InfluenceAssembly, RootInference};
use crate::kernel::{Bandwidth, KernelFamily};
use crate::nuisance::{NuisanceFit, NuisanceSpec};
use crate::policy::{default_root_interval, find_roots, value_estimate, RootSet, TreatmentRule, ValueEstimate};
use crate::rng::stream_rng;
use crate::treatment_effect::{
    cv_bandwidth_for, default_cv_grid, pilot_bandwidth, sample_sd, CvResult, IndexVector, QEstimator,
};

/// Exponent of `n` in the pilot bandwidth rule.
pub const PILOT_EXPONENT: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvGridSpec {
    /// Lower multiplier of `σ̂_index · n^{-1/5}`.
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for CvGridSpec {
    fn default() -> Self {
        CvGridSpec {
            lo: 0.2,
            hi: 3.0,
            points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub kernel: KernelFamily,
    /// `c` in the pilot bandwidth `c · σ̂_index · n^{-1/3}`.
    pub pilot_c: f64,
    pub cv_grid: CvGridSpec,
    /// Smoother for `E(X_L | βᵀX)` inside the estimating equation.
    pub cond_mean: CondMeanSmoother,
    pub solver: SolverSettings,
    pub nuisance: NuisanceSpec,
    /// Nominal confidence level for every interval in the report.
    pub level: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            kernel: KernelFamily::Epanechnikov,
            pilot_c: 7.25,
            cv_grid: CvGridSpec::default(),
            cond_mean: CondMeanSmoother::default(),
            solver: SolverSettings::default(),
            nuisance: NuisanceSpec::default(),
            level: 0.95,
        }
    }
}

impl EstimatorConfig {
    /// Settings for observational data: quartic kernel and a narrow pilot.
    pub fn real_data() -> Self {
        EstimatorConfig {
            kernel: KernelFamily::Quartic,
            pilot_c: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pilot_c", self.pilot_c),
            ("cv_grid.lo", self.cv_grid.lo),
            ("cv_grid.hi", self.cv_grid.hi),
            ("solver.tol", self.solver.tol),
            ("nuisance.clip_floor", self.nuisance.clip_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cv_grid.hi < self.cv_grid.lo || self.cv_grid.points == 0 {
            return Err(Error::InvalidInput("cv_grid needs lo <= hi and at least one point".into()));
        }
        if self.solver.max_iter == 0 {
            return Err(Error::InvalidInput("solver.max_iter must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.nuisance.clip_floor >= 0.5 {
            return Err(Error::InvalidInput("nuisance.clip_floor must be below 0.5".into()));
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + self.level / 2.0)
    }
}

/// Everything produced by one fit.
#[derive(Debug, Clone)]
pub struct PolicyFit {
    pub nuisances: NuisanceFit,
    pub start: Vec<f64>,
    pub init_used: String,
    pub pilot_h: Bandwidth,
    pub solution: BetaSolution,
    pub cv: CvResult,
    pub rule: TreatmentRule<QEstimator>,
    /// `Q̂(β̂ᵀXᵢ)` at the selected bandwidth.
    pub q_rows: Vec<Option<f64>>,
    pub value: ValueEstimate,
    /// `None` when the index was held fixed.
    pub beta_cov: Option<DMatrix<f64>>,
    pub roots: RootSet,
    pub root_inference: Vec<std::result::Result<RootInference, String>>,
}

fn index_sd(data: &Dataset, beta_l: &[f64]) -> f64 {
    sample_sd(&data.index_values(IndexVector::from_free(beta_l).as_slice()))
}

fn solve_from(
    data: &Dataset,
    nuisances: &NuisanceFit,
    cfg: &EstimatorConfig,
    start: &[f64],
) -> Result<(Bandwidth, BetaSolution)> {
    let pilot_h = pilot_bandwidth(cfg.pilot_c, index_sd(data, start), data.n())?;
    let eq = EstimatingEquation::new(data, nuisances, cfg.kernel, pilot_h).with_smoother(cfg.cond_mean);
    let sol = solve_beta(&eq, start, cfg.solver.tol, cfg.solver.max_iter)?;
    Ok((pilot_h, sol))
}

fn select_bandwidth(data: &Dataset, nuisances: &NuisanceFit, cfg: &EstimatorConfig, beta: &IndexVector) -> Result<CvResult> {
    let sd = sample_sd(&data.index_values(beta.as_slice()));
    let grid = default_cv_grid(sd, data.n(), cfg.cv_grid.lo, cfg.cv_grid.hi, cfg.cv_grid.points)?;
    cv_bandwidth_for(data, nuisances, beta, cfg.kernel, &grid)
}

fn min_cv(cv: &CvResult) -> f64 {
    cv.table.iter().map(|r| r.cv).fold(f64::INFINITY, f64::min)
}

/// Runs the full estimator with freshly fitted nuisances.
pub fn fit_policy(data: &Dataset, cfg: &EstimatorConfig) -> Result<PolicyFit> {
    cfg.validate()?;
    let nuisances = NuisanceFit::fit(data, &cfg.nuisance)?;
    fit_with_nuisances(data, nuisances, cfg)
}

pub fn fit_with_nuisances(data: &Dataset, nuisances: NuisanceFit, cfg: &EstimatorConfig) -> Result<PolicyFit> {
    let p = data.d() - 1;
    let named = |name: InitName| -> Vec<f64> {
        match name {
            InitName::Zeros => vec![0.0; p],
            InitName::Phd => phd_start(data, &nuisances),
            _ => ols_start(data),
        }
    };
    let candidates: Vec<(&str, Vec<f64>)> = match &cfg.solver.init {
        InitStrategy::Explicit(v) => {
            if v.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: v.len() });
            }
            vec![("explicit", v.clone())]
        }
        InitStrategy::Named(InitName::Auto) => vec![("ols", named(InitName::Ols)), ("phd", named(InitName::Phd))],
        InitStrategy::Named(n) => vec![(init_label(*n), named(*n))],
    };

    let mut best: Option<(f64, &str, Vec<f64>, Bandwidth, BetaSolution, CvResult)> = None;
    let mut last_err = None;
    for (label, start) in candidates {
        let attempt = solve_from(data, &nuisances, cfg, &start).and_then(|(h, sol)| {
            let cv = select_bandwidth(data, &nuisances, cfg, &sol.beta)?;
            Ok((h, sol, cv))
        });
        match attempt {
            Ok((h, sol, cv)) => {
                // converged roots first, then the smaller prediction error
                let score = if sol.converged { min_cv(&cv) } else { f64::INFINITY };
                let better = match &best {
                    None => true,
                    Some((s, _, _, _, b, _)) => (sol.converged && !b.converged) || score < *s,
                };
                if better {
                    best = Some((score, label, start, h, sol, cv));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((_, label, start, pilot_h, solution, cv)) = best else {
        return Err(last_err.unwrap_or(Error::InvalidInput("no solver start".into())));
    };
    let eq = EstimatingEquation::new(data, &nuisances, cfg.kernel, pilot_h).with_smoother(cfg.cond_mean);
    let mut fit = finish(data, nuisances.clone(), cfg, solution, cv, pilot_h, start, label.to_string())?;
    if fit.solution.converged && p > 0 {
        let assembly = InfluenceAssembly::build(&eq, &nuisances, fit.solution.beta.free(), &fit.q_rows, BetaInfluence::Adjoint)?;
        fit.beta_cov = Some(assembly.beta_covariance()?);
    }
    Ok(fit)
}

fn init_label(n: InitName) -> &'static str {
    match n {
        InitName::Ols => "ols",
        InitName::Zeros => "zeros",
        InitName::Phd => "phd",
        InitName::Auto => "auto",
    }
}

/// Everything downstream of `β̂`, holding the index fixed at `beta`.
pub fn fit_at_beta(data: &Dataset, cfg: &EstimatorConfig, beta: IndexVector) -> Result<PolicyFit> {
    cfg.validate()?;
    if beta.dim() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), got: beta.dim() });
    }
    let nuisances = NuisanceFit::fit(data, &cfg.nuisance)?;
    let pilot_h = pilot_bandwidth(cfg.pilot_c, index_sd(data, beta.free()), data.n())?;
    let solution = BetaSolution {
        beta,
        equation_norm: f64::NAN,
        iterations: 0,
        converged: true,
    };
    let cv = select_bandwidth(data, &nuisances, cfg, &solution.beta)?;
    let start = solution.beta.free().to_vec();
    finish(data, nuisances, cfg, solution, cv, pilot_h, start, "fixed".into())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    data: &Dataset,
    nuisances: NuisanceFit,
    cfg: &EstimatorConfig,
    solution: BetaSolution,
    cv: CvResult,
    pilot_h: Bandwidth,
    start: Vec<f64>,
    init_used: String,
) -> Result<PolicyFit> {
    let beta = solution.beta.clone();
    let q = QEstimator::new(data, &nuisances, &beta, cfg.kernel, cv.h_opt)?;
    let rule = TreatmentRule::new(beta.clone(), q);
    let q_rows = rule.q_at_rows(data)?;
    let mut value = value_estimate(data, &nuisances, &rule)?;
    value.sigma_hat = value_sigma2(data, &nuisances, &q_rows, value.v_hat)?.sqrt();

    let index = data.index_values(beta.as_slice());
    let (interval, step) = default_root_interval(&index)?;
    let roots = find_roots(&rule.q, interval, step)?;
    let root_inference = roots
        .roots
        .iter()
        .map(|&r| root_inference(&rule.q, r, data, &nuisances, &beta).map_err(|e| e.to_string()))
        .collect();
    Ok(PolicyFit {
        nuisances,
        start,
        init_used,
        pilot_h,
        solution,
        cv,
        rule,
        q_rows,
        value,
        beta_cov: None,
        roots,
        root_inference,
    })
}

/// Nonparametric pairs bootstrap of `β̂_L`: rows resampled with
/// replacement, every stage refitted. Failed draws are skipped.
pub fn pairs_bootstrap_beta(data: &Dataset, cfg: &EstimatorConfig, draws: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let n = data.n();
    (0..draws)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let boot = data.select(&rows).ok()?;
            let nf = NuisanceFit::fit(&boot, &cfg.nuisance).ok()?;
            let start = match &cfg.solver.init {
                InitStrategy::Explicit(v) => v.clone(),
                InitStrategy::Named(InitName::Zeros) => vec![0.0; data.d() - 1],
                _ => ols_start(&boot),
            };
            let (_, sol) = solve_from(&boot, &nf, cfg, &start).ok()?;
            sol.converged.then(|| sol.beta.free().to_vec())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootReport {
    pub root: f64,
    pub bias_hat: Option<f64>,
    pub sd_hat: Option<f64>,
    /// Bias-corrected interval.
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub v_hat: f64,
    /// Per-observation standard deviation `σ̂`.
    pub sigma_hat: f64,
    /// `σ̂ / √n`.
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub n: usize,
    pub covariates: Vec<String>,
    pub anchor: String,
    pub kernel: KernelFamily,
    pub init: String,
    pub converged: bool,
    pub iterations: usize,
    pub equation_norm: f64,
    pub pilot_h: f64,
    pub h_opt: f64,
    pub level: f64,
    pub beta: Vec<ParamEstimate>,
    pub beta_covariance: Option<Vec<Vec<f64>>>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub n_clipped: usize,
    pub root_search_interval: (f64, f64),
    pub root_grid_step: f64,
    pub roots: Vec<RootReport>,
    pub value: ValueReport,
}

impl PolicyFit {
    pub fn beta_sd(&self) -> Option<Vec<f64>> {
        self.beta_cov
            .as_ref()
            .map(|c| (0..c.nrows()).map(|k| c[(k, k)].max(0.0).sqrt()).collect())
    }

    pub fn value_sd(&self) -> f64 {
        self.value.sigma_hat / (self.value.n as f64).sqrt()
    }

    /// `names` lists every covariate, anchor first.
    pub fn report(&self, names: &[String], cfg: &EstimatorConfig) -> PolicyReport {
        let z = cfg.z();
        let sds = self.beta_sd();
        let beta = self
            .solution
            .beta
            .free()
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let sd = sds.as_ref().map_or(f64::NAN, |s| s[k]);
                ParamEstimate {
                    name: names.get(k + 1).cloned().unwrap_or_else(|| format!("x{}", k + 2)),
                    estimate: b,
                    sd,
                    ci_lo: b - z * sd,
                    ci_hi: b + z * sd,
                }
            })
            .collect();
        let roots = self
            .roots
            .roots
            .iter()
            .zip(&self.root_inference)
            .map(|(&root, inf)| match inf {
                Ok(ri) => RootReport {
                    root,
                    bias_hat: Some(ri.bias_hat),
                    sd_hat: Some(ri.sd_hat),
                    ci_lo: Some(root - ri.bias_hat - z * ri.sd_hat),
                    ci_hi: Some(root - ri.bias_hat + z * ri.sd_hat),
                    error: None,
                },
                Err(e) => RootReport {
                    root,
                    bias_hat: None,
                    sd_hat: None,
                    ci_lo: None,
                    ci_hi: None,
                    error: Some(e.clone()),
                },
            })
            .collect();
        let vsd = self.value_sd();
        PolicyReport {
            n: self.value.n,
            covariates: names.to_vec(),
            anchor: names.first().cloned().unwrap_or_default(),
            kernel: cfg.kernel,
            init: self.init_used.clone(),
            converged: self.solution.converged,
            iterations: self.solution.iterations,
            equation_norm: self.solution.equation_norm,
            pilot_h: self.pilot_h.get(),
            h_opt: self.cv.h_opt.get(),
            level: cfg.level,
            beta,
            beta_covariance: self
                .beta_cov
                .as_ref()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect()),
            gamma: self.nuisances.propensity.gamma.clone(),
            alpha: self.nuisances.outcome.alpha.clone(),
            n_clipped: self.nuisances.propensity.n_clipped,
            root_search_interval: self.roots.search_interval,
            root_grid_step: self.roots.grid_step,
            roots,
            value: ValueReport {
                v_hat: self.value.v_hat,
                sigma_hat: self.value.sigma_hat,
                sd: vsd,
                ci_lo: self.value.v_hat - z * vsd,
                ci_hi: self.value.v_hat + z * vsd,
                n_dropped: self.value.n_dropped,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c: EstimatorConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, EstimatorConfig::default());
        assert!(serde_json::from_str::<EstimatorConfig>(r#"{"kernal": "gaussian"}"#).is_err());
        assert!(serde_json::from_str::<EstimatorConfig>(r#"{"cv_grid": {"low": 1}}"#).is_err());
        let back: EstimatorConfig =
            serde_json::from_str(&serde_json::to_string(&EstimatorConfig::real_data()).unwrap()).unwrap();
        assert_eq!(back, EstimatorConfig::real_data());
    }

    #[test]
    fn config_validation() {
        let mut c = EstimatorConfig::default();
        assert!(c.validate().is_ok());
        c.pilot_c = 0.0;
        assert!(c.validate().is_err());
        let c = EstimatorConfig {
            level: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn critical_value() {
        assert!((EstimatorConfig::default().z() - 1.959963984540054).abs() < 1e-9);
    }
}
