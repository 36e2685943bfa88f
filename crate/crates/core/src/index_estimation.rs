//! Solves the multi-robust estimating equation for the free index
//! coefficients `β_L`:
//!
//! `Gₙ(β_L) = n⁻¹ Σ [Zᵢ + (1 − Aᵢ/π̂ᵢ) Q̃(βᵀXᵢ)] {X_Lᵢ − Ê(X_Lᵢ | βᵀXᵢ)} = 0`,
//!
//! with `Q̃` and `Ê` recomputed at every trial `β` using the pilot bandwidth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{Bandwidth, KernelFamily, ScaledKernel, SortedIndex};
use crate::linalg;
use crate::nuisance::NuisanceFit;
use crate::treatment_effect::{pseudo_outcomes, IndexVector, DEGENERACY_FLOOR};

/// Largest share of sample points that may be dropped from `Gₙ`.
pub const MAX_DEGENERATE_SHARE: f64 = 0.05;

/// Relative forward-difference step for numerical Jacobians.
pub const FD_STEP: f64 = 1e-4;

/// Per-row pieces of one `Gₙ` evaluation.
#[derive(Debug, Clone)]
pub struct EquationEval {
    /// `Gₙ(β_L)`.
    pub value: Vec<f64>,
    pub index: Vec<f64>,
    /// `Q̃(βᵀXᵢ)`, `NaN` where the window was empty.
    pub q_tilde: Vec<f64>,
    /// `X_Lᵢ − Ê(X_Lᵢ | βᵀXᵢ)`, row-major `n × (d − 1)`; zero where dropped.
    pub centered_xl: Vec<f64>,
    pub used: Vec<bool>,
    pub n_degenerate: usize,
}

/// Smoother for the centering term `E(X_L | βᵀX)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondMeanSmoother {
    /// Local constant (kernel-weighted average).
    NadarayaWatson,
    /// Local linear; exact for conditional means linear in the index.
    /// Falls back to the local constant where the window has no spread.
    #[default]
    LocalLinear,
}

/// Everything needed to evaluate `Gₙ`: data, fitted nuisances, kernel and pilot bandwidth.
#[derive(Debug, Clone)]
pub struct EstimatingEquation<'a> {
    data: &'a Dataset,
    family: KernelFamily,
    pilot_h: Bandwidth,
    smoother: CondMeanSmoother,
    z: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> EstimatingEquation<'a> {
    pub fn new(
        data: &'a Dataset,
        nuisances: &NuisanceFit,
        family: KernelFamily,
        pilot_h: Bandwidth,
    ) -> Self {
        let (z, w) = pseudo_outcomes(data, nuisances);
        EstimatingEquation {
            data,
            family,
            pilot_h,
            smoother: CondMeanSmoother::default(),
            z,
            w,
        }
    }

    pub fn with_smoother(mut self, smoother: CondMeanSmoother) -> Self {
        self.smoother = smoother;
        self
    }

    pub fn smoother(&self) -> CondMeanSmoother {
        self.smoother
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn pilot_h(&self) -> Bandwidth {
        self.pilot_h
    }

    /// Same data, kernel and bandwidth with other nuisance predictions.
    pub fn with_nuisances(&self, nuisances: &NuisanceFit) -> Self {
        Self::new(self.data, nuisances, self.family, self.pilot_h).with_smoother(self.smoother)
    }

    /// Number of free coefficients `d − 1`.
    pub fn dim(&self) -> usize {
        self.data.d() - 1
    }

    pub fn evaluate(&self, beta_l: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate_detailed(beta_l)?.value)
    }

    pub fn evaluate_detailed(&self, beta_l: &[f64]) -> Result<EquationEval> {
        let n = self.data.n();
        let p = self.dim();
        if beta_l.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: beta_l.len(),
            });
        }
        if beta_l.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("index coefficients"));
        }
        let beta = IndexVector::from_free(beta_l);
        let index = self.data.index_values(beta.as_slice());
        if p == 0 {
            return Ok(EquationEval {
                value: Vec::new(),
                q_tilde: vec![f64::NAN; n],
                index,
                centered_xl: Vec::new(),
                used: vec![true; n],
                n_degenerate: 0,
            });
        }
        let sorted = SortedIndex::new(&index);
        let order = sorted.order();
        let ts = sorted.values();
        let z = sorted.permute(&self.z);
        let w = sorted.permute(&self.w);
        let mut xl = Vec::with_capacity(n * p);
        for &row in order {
            xl.extend_from_slice(&self.data.row(row)[1..]);
        }

        let kernel = ScaledKernel::new(self.family, self.pilot_h);
        let reach = kernel.reach();
        let floor = DEGENERACY_FLOOR * n as f64;
        let mut q_tilde = vec![f64::NAN; n];
        let mut centered = vec![0.0; n * p];
        let mut used = vec![false; n];
        let mut value = vec![0.0; p];
        let local_linear = self.smoother == CondMeanSmoother::LocalLinear;
        let mut sx = vec![0.0; p];
        let mut sux = vec![0.0; p];
        let (mut lo, mut hi) = (0usize, 0usize);
        let mut n_used = 0usize;
        for i in 0..n {
            let t = ts[i];
            while lo < n && ts[lo] < t - reach {
                lo += 1;
            }
            while hi < n && ts[hi] <= t + reach {
                hi += 1;
            }
            let (mut sz, mut sw, mut s1) = (0.0, 0.0, 0.0);
            let (mut su, mut su2) = (0.0, 0.0);
            sx.iter_mut().for_each(|v| *v = 0.0);
            sux.iter_mut().for_each(|v| *v = 0.0);
            for j in lo..hi {
                let u = ts[j] - t;
                let k = kernel.weight(u);
                sz += k * z[j];
                sw += k * w[j];
                s1 += k;
                let row = &xl[j * p..(j + 1) * p];
                for (acc, x) in sx.iter_mut().zip(row) {
                    *acc += k * x;
                }
                if local_linear {
                    su += k * u;
                    su2 += k * u * u;
                    for (acc, x) in sux.iter_mut().zip(row) {
                        *acc += k * u * x;
                    }
                }
            }
            if sw < floor || s1 < floor {
                continue;
            }
            let det = s1 * su2 - su * su;
            let use_ll = local_linear && det > 1e-10 * s1 * su2;
            let row = order[i];
            let q = sz / sw;
            let bracket = z[i] + (1.0 - w[i]) * q;
            q_tilde[row] = q;
            used[row] = true;
            n_used += 1;
            for k in 0..p {
                let fitted = if use_ll {
                    (su2 * sx[k] - su * sux[k]) / det
                } else {
                    sx[k] / s1
                };
                let c = xl[i * p + k] - fitted;
                centered[row * p + k] = c;
                value[k] += bracket * c;
            }
        }
        let n_degenerate = n - n_used;
        if n_degenerate as f64 > MAX_DEGENERATE_SHARE * n as f64 {
            return Err(Error::TooManyDegenerate {
                degenerate: n_degenerate,
                total: n,
                context: "estimating equation",
            });
        }
        value.iter_mut().for_each(|v| *v /= n_used as f64);
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("estimating equation"));
        }
        Ok(EquationEval {
            value,
            index,
            q_tilde,
            centered_xl: centered,
            used,
            n_degenerate,
        })
    }

    /// `cⱼ = Σᵢ bᵢ Lᵢⱼ`, where `Lᵢⱼ` is the weight row `j` receives in the
    /// centering smoother at row `i`. Since that smoother is linear in `X_L`,
    /// `Gₙ = n⁻¹ Σⱼ X_Lⱼ (bⱼ − cⱼ)` for brackets `b`. Rows left out of `Gₙ`
    /// pass `bᵢ = 0`.
    pub fn centering_adjoint(&self, beta_l: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        let n = self.data.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let beta = IndexVector::from_free(beta_l);
        let index = self.data.index_values(beta.as_slice());
        let sorted = SortedIndex::new(&index);
        let order = sorted.order();
        let ts = sorted.values();
        let bs = sorted.permute(b);
        let kernel = ScaledKernel::new(self.family, self.pilot_h);
        let reach = kernel.reach();
        let local_linear = self.smoother == CondMeanSmoother::LocalLinear;
        let mut c_sorted = vec![0.0; n];
        let (mut lo, mut hi) = (0usize, 0usize);
        for i in 0..n {
            let t = ts[i];
            while lo < n && ts[lo] < t - reach {
                lo += 1;
            }
            while hi < n && ts[hi] <= t + reach {
                hi += 1;
            }
            if bs[i] == 0.0 {
                continue;
            }
            let (mut s1, mut su, mut su2) = (0.0, 0.0, 0.0);
            for j in lo..hi {
                let u = ts[j] - t;
                let k = kernel.weight(u);
                s1 += k;
                su += k * u;
                su2 += k * u * u;
            }
            let det = s1 * su2 - su * su;
            let use_ll = local_linear && det > 1e-10 * s1 * su2;
            for j in lo..hi {
                let u = ts[j] - t;
                let k = kernel.weight(u);
                let l = if use_ll { k * (su2 - su * u) / det } else { k / s1 };
                c_sorted[j] += bs[i] * l;
            }
        }
        let mut c = vec![0.0; n];
        for (pos, &row) in order.iter().enumerate() {
            c[row] = c_sorted[pos];
        }
        Ok(c)
    }

    /// Forward-difference Jacobian `∂Gₙ/∂β_L` with step `FD_STEP · max(1, |β_k|)`.
    pub fn jacobian(&self, beta_l: &[f64], at: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut jac = DMatrix::zeros(p, p);
        for k in 0..p {
            let step = FD_STEP * beta_l[k].abs().max(1.0);
            let mut shifted = beta_l.to_vec();
            shifted[k] += step;
            let g = self.evaluate(&shifted)?;
            for r in 0..p {
                jac[(r, k)] = (g[r] - at[r]) / step;
            }
        }
        Ok(jac)
    }
}

/// How the solver picks its starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitStrategy {
    Named(InitName),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    /// Normalized `A·X` interaction coefficients from OLS of `Y` on `(1, A, X, A·X)`.
    Ols,
    Zeros,
    /// Leading principal Hessian direction of the pseudo-outcomes.
    Phd,
    /// Solve from both `ols` and `phd`; keep the root with the smaller
    /// leave-one-out prediction error.
    Auto,
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::Named(InitName::Ols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitStrategy,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-6,
            max_iter: 200,
            init: InitStrategy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSolution {
    pub beta: IndexVector,
    /// `‖Gₙ(β̂_L)‖∞`.
    pub equation_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton on `Gₙ` with a forward-difference Jacobian, falling back to
/// Levenberg–Marquardt on `‖Gₙ‖²` when the Newton step fails to reduce it.
pub fn solve_beta(
    eq: &EstimatingEquation<'_>,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<BetaSolution> {
    let p = eq.dim();
    if init.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solver start"));
    }
    if p == 0 {
        return Ok(BetaSolution {
            beta: IndexVector::from_free(&[]),
            equation_norm: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut x = init.to_vec();
    let mut g = eq.evaluate(&x)?;
    let mut lm_lambda = 1e-3;
    let mut iterations = 0;
    while sup_norm(&g) > tol && iterations < max_iter {
        iterations += 1;
        let jac = eq.jacobian(&x, &g)?;
        let gv = DVector::from_column_slice(&g);
        let base = l2(&g);
        let mut next: Option<(Vec<f64>, Vec<f64>)> = None;

        if let Ok(newton) = linalg::solve(&jac, &(-&gv), "estimating-equation Jacobian") {
            let mut t = 1.0;
            for _ in 0..10 {
                let cand: Vec<f64> = x.iter().zip(newton.iter()).map(|(a, s)| a + t * s).collect();
                if let Ok(gc) = eq.evaluate(&cand) {
                    if l2(&gc) < base {
                        next = Some((cand, gc));
                        break;
                    }
                }
                t *= 0.5;
            }
        }

        if next.is_none() {
            let jtj = jac.transpose() * &jac;
            let jtg = jac.transpose() * &gv;
            while lm_lambda < 1e10 {
                let mut a = jtj.clone();
                for k in 0..p {
                    a[(k, k)] += lm_lambda * jtj[(k, k)].max(1e-12);
                }
                if let Some(step) = a.lu().solve(&(-&jtg)) {
                    let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
                    if let Ok(gc) = eq.evaluate(&cand) {
                        if l2(&gc) < base {
                            lm_lambda = (lm_lambda * 0.1).max(1e-12);
                            next = Some((cand, gc));
                            break;
                        }
                    }
                }
                lm_lambda *= 10.0;
            }
        }

        match next {
            Some((xn, gn)) => {
                x = xn;
                g = gn;
            }
            None => {
                if iterations == 1 && linalg::solve(&jac, &gv, "estimating-equation Jacobian").is_err() {
                    return Err(Error::Singular("estimating-equation Jacobian"));
                }
                break;
            }
        }
    }
    let norm = sup_norm(&g);
    Ok(BetaSolution {
        beta: IndexVector::from_free(&x),
        equation_norm: norm,
        iterations,
        converged: norm <= tol,
    })
}

/// Runs the solver from each start; reports every outcome, including failures.
pub fn multi_start(
    eq: &EstimatingEquation<'_>,
    starts: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Vec<Result<BetaSolution>> {
    starts
        .iter()
        .map(|s| solve_beta(eq, s, tol, max_iter))
        .collect()
}

/// OLS of `Y` on `(1, A, X, A·X)`; the interaction block divided by its anchor entry.
pub fn ols_start(data: &Dataset) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let cols = 2 * d + 2;
    let mut design = DMatrix::zeros(n, cols);
    for (i, r) in data.rows().enumerate() {
        let a = data.a()[i];
        design[(i, 0)] = 1.0;
        design[(i, 1)] = a;
        for j in 0..d {
            design[(i, 2 + j)] = r[j];
            design[(i, 2 + d + j)] = a * r[j];
        }
    }
    let y = DVector::from_column_slice(data.y());
    match linalg::least_squares(&design, &y) {
        Ok(coef) => {
            let anchor = coef[2 + d];
            if anchor.abs() < 1e-8 {
                return vec![0.0; d - 1];
            }
            (1..d).map(|j| coef[2 + d + j] / anchor).collect()
        }
        Err(_) => vec![0.0; d - 1],
    }
}

/// Principal-Hessian-direction start: leading eigenvector (by absolute
/// eigenvalue) of the pseudo-outcome weighted second-moment matrix of the
/// whitened covariates, mapped back and normalized by its anchor entry.
pub fn phd_start(data: &Dataset, nuisances: &NuisanceFit) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let (z, _) = pseudo_outcomes(data, nuisances);
    let zbar = z.iter().sum::<f64>() / n as f64;
    let mut mean = DVector::zeros(d);
    for r in data.rows() {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut m = DMatrix::zeros(d, d);
    for (i, r) in data.rows().enumerate() {
        let c = DVector::from_column_slice(r) - &mean;
        let outer = &c * c.transpose();
        m += &outer * (z[i] - zbar);
        cov += outer;
    }
    cov /= n as f64;
    m /= n as f64;
    let fallback = vec![0.0; d - 1];
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return fallback;
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let white = linalg::symmetrize(&(&inv_sqrt * m * &inv_sqrt));
    let e = white.symmetric_eigen();
    let top = e.eigenvalues.iamax();
    let dir = &inv_sqrt * e.eigenvectors.column(top);
    if dir[0].abs() < 1e-8 {
        return fallback;
    }
    (1..d).map(|j| dir[j] / dir[0]).collect()
}
