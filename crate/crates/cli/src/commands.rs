//! The three subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use itr_core::inference::residual_bootstrap_band;
use itr_core::policy::ROOT_GRID_STEPS;
use itr_core::{fit_at_beta, fit_policy, run_study, Case, EstimatorConfig, IndexVector, PolicyFit};
use log::info;

use crate::config::{Mode, RunConfig};
use crate::input::{read_csv, Columns, Table};
use crate::{CliError, DataArgs, FitArgs, QcurveArgs, SimulateArgs};

/// Largest tolerated share of failed replicates in a study.
pub const MAX_FAILURE_RATE: f64 = 0.05;
pub const DEFAULT_REPS: usize = 200;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_BOOTSTRAP: usize = 500;

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn load(config: Option<&Path>, mode: Mode) -> Result<RunConfig, CliError> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.check_mode(mode)?;
    Ok(cfg)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = load(Some(&args.config), Mode::Simulate)?;
    let scn = cfg.scenario()?;
    let case = cfg.case.unwrap_or(Case::I);
    let reps = args.reps.or(cfg.reps).unwrap_or(DEFAULT_REPS);
    if reps == 0 {
        return Err(CliError::Input("--reps must be positive".into()));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out = args.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let est = cfg.estimator_for(Mode::Simulate);
    let report = run_study(&scn, case, reps, seed, &est)?;
    write_file(&out, "report.json", &to_json(&report))?;
    write_file(&out, "report.csv", &report.to_csv())?;
    info!("{reps} replicates, {} failed", report.failures);
    if report.failure_rate() > MAX_FAILURE_RATE {
        return Err(CliError::Numerical(format!(
            "{} of {reps} replicates failed (limit {:.0}%)",
            report.failures,
            MAX_FAILURE_RATE * 100.0
        )));
    }
    Ok(())
}

/// Settings shared by `fit` and `qcurve` after merging flags over the config.
struct DataRun {
    cfg: RunConfig,
    table: Table,
    est: EstimatorConfig,
    out: PathBuf,
    seed: u64,
}

fn prepare(args: &DataArgs, mode: Mode) -> Result<DataRun, CliError> {
    let cfg = load(args.config.as_deref(), mode)?;
    let need = |flag: Option<String>, key: &Option<String>, name: &str| {
        flag.or_else(|| key.clone())
            .ok_or_else(|| CliError::Input(format!("--{name} is required")))
    };
    let data = args
        .data
        .clone()
        .or(cfg.data.clone())
        .ok_or_else(|| CliError::Input("--data is required".into()))?;
    let cols = Columns {
        treatment: need(args.treatment.clone(), &cfg.treatment, "treatment")?,
        outcome: need(args.outcome.clone(), &cfg.outcome, "outcome")?,
        covariates: args
            .covariates
            .clone()
            .or(cfg.covariates.clone())
            .ok_or_else(|| CliError::Input("--covariates is required".into()))?,
        continuous: args.continuous.clone().or(cfg.continuous.clone()).unwrap_or_default(),
    }
    .with_anchor(args.anchor.as_deref().or(cfg.anchor.as_deref()))?;
    let table = read_csv(&data, &cols)?;
    if table.names.len() < 2 {
        return Err(CliError::Input("need at least two covariates, the anchor and one free".into()));
    }
    let est = cfg.estimator_for(mode);
    let out = args.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let seed = args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    Ok(DataRun {
        cfg,
        table,
        est,
        out,
        seed,
    })
}

fn fit_table(run: &DataRun, fixed: Option<&[f64]>) -> Result<PolicyFit, CliError> {
    let data = &run.table.data;
    let hint = |e: itr_core::Error| match e {
        itr_core::Error::TooManyDegenerate { .. } => CliError::Numerical(format!(
            "{e}; the pilot bandwidth (estimator.pilot_c = {}) is too narrow for this sample, raise it in the config",
            run.est.pilot_c
        )),
        e => e.into(),
    };
    match fixed {
        Some(free) => {
            if free.len() + 1 != data.d() {
                return Err(CliError::Input(format!(
                    "--fixed-beta needs {} free coefficients, got {}",
                    data.d() - 1,
                    free.len()
                )));
            }
            let mut full = vec![1.0];
            full.extend_from_slice(free);
            let beta = IndexVector::new(full).map_err(|e| CliError::Input(e.to_string()))?;
            fit_at_beta(data, &run.est, beta).map_err(hint)
        }
        None => fit_policy(data, &run.est).map_err(hint),
    }
}

fn assignments_csv(run: &DataRun, fit: &PolicyFit) -> Result<String, CliError> {
    let mut s = String::from("row_id,index_value,q_hat,assign\n");
    for (i, row) in run.table.data.rows().enumerate() {
        let t = fit.rule.index(row)?;
        let (q, assign) = match fit.q_rows[i] {
            Some(q) => (num(q), u8::from(q > 0.0).to_string()),
            None => ("NA".into(), "NA".into()),
        };
        writeln!(s, "{},{},{q},{assign}", i + 1, num(t)).expect("write to string");
    }
    Ok(s)
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let run = prepare(&args.data, Mode::Fit)?;
    let fit = fit_table(&run, args.data.fixed_beta.as_deref())?;
    let report = fit.report(&run.table.names, &run.est);
    write_file(&run.out, "policy.json", &to_json(&report))?;
    write_file(&run.out, "assignments.csv", &assignments_csv(&run, &fit)?)?;
    write_file(&run.out, "cv.csv", &fit.cv.to_csv())?;
    if !fit.solution.converged {
        return Err(CliError::Numerical(format!(
            "index solver did not converge (equation norm {:e}); outputs hold the last iterate",
            fit.solution.equation_norm
        )));
    }
    Ok(())
}

pub fn qcurve(args: &QcurveArgs) -> Result<(), CliError> {
    let mut run = prepare(&args.data, Mode::Qcurve)?;
    if let Some(level) = args.level {
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::Input(format!("--level must lie in (0, 1), got {level}")));
        }
        run.est.level = level;
    }
    let draws = args.bootstrap.or(run.cfg.bootstrap).unwrap_or(DEFAULT_BOOTSTRAP);
    if draws < 50 {
        return Err(CliError::Input(format!("--bootstrap needs at least 50 draws, got {draws}")));
    }
    let fit = fit_table(&run, args.data.fixed_beta.as_deref())?;
    if !fit.solution.converged {
        return Err(CliError::Numerical("index solver did not converge".into()));
    }
    let (lo, hi) = fit.roots.search_interval;
    let grid: Vec<f64> = (0..=ROOT_GRID_STEPS)
        .map(|i| lo + (hi - lo) * i as f64 / ROOT_GRID_STEPS as f64)
        .collect();
    let band = residual_bootstrap_band(
        &run.table.data,
        &fit.nuisances,
        &fit.rule.q,
        &fit.solution.beta,
        &grid,
        draws,
        run.est.level,
        run.seed,
    )?;
    let mut s = String::from("t,q_hat,lower,upper\n");
    for (g, &t) in grid.iter().enumerate() {
        writeln!(s, "{},{},{},{}", num(t), num(band.center[g]), num(band.lower[g]), num(band.upper[g]))
            .expect("write to string");
    }
    write_file(&run.out, "qcurve.csv", &s)
}
