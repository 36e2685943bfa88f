//! Standard errors: nuisance sandwiches, the index-coefficient covariance,
//! root bias and spread, the value variance, and the residual bootstrap band.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index_estimation::{EstimatingEquation, FD_STEP};
use crate::kernel::{Bandwidth, KernelFamily, ScaledKernel};
use crate::linalg;
use crate::nuisance::{NuisanceFit, OutcomeModel, PropensityModel};
use crate::policy::{quantile_sorted, value_summands};
use crate::rng::stream_rng;
use crate::treatment_effect::{pseudo_outcomes, IndexVector, QEstimator};

/// Smallest `|Q̂′|` at a root before the crossing is declared flat.
pub const MIN_ROOT_SLOPE: f64 = 1e-4;
/// Points in the local quadratic fit used for derivatives at a root.
pub const DERIVATIVE_POINTS: usize = 21;
/// Tolerance for the vanishing value-variance correction term.
pub const CORRECTION_TOL: f64 = 1e-10;

/// Per-row propensity influence `−H⁻¹ sᵢ`, with `H` the mean log-likelihood Hessian.
pub fn phi_gamma(data: &Dataset, model: &PropensityModel) -> Result<DMatrix<f64>> {
    if !model.is_estimated() {
        return Ok(DMatrix::zeros(data.n(), 0));
    }
    let h_inv = linalg::inverse(&model.mean_hessian(data), "propensity Hessian")?;
    Ok(-(model.scores(data) * h_inv.transpose()))
}

/// `W⁻¹ B W⁻¹ / n` for the propensity coefficients.
pub fn sandwich_gamma(data: &Dataset, model: &PropensityModel) -> Result<DMatrix<f64>> {
    let phi = phi_gamma(data, model)?;
    Ok(linalg::symmetrize(&(linalg::mean_outer(&phi) / data.n() as f64)))
}

/// Per-row outcome-model influence `M⁻¹ Wᵢ (1 − Aᵢ)(Yᵢ − μ̂ᵢ)`, with
/// `M = n⁻¹ Σ (1 − Aᵢ) Wᵢ Dᵢᵀ`.
pub fn phi_alpha(data: &Dataset, model: &OutcomeModel) -> Result<DMatrix<f64>> {
    let (n, p) = (data.n(), model.n_params());
    let mut m = DMatrix::zeros(p, p);
    let mut rows = DMatrix::zeros(n, p);
    for (i, r) in data.rows().enumerate() {
        if data.a()[i] != 0.0 {
            continue;
        }
        let g = DVector::from_vec(model.gradient(r));
        m += &g * g.transpose();
        let resid = data.y()[i] - model.predict_unchecked(r);
        rows.set_row(i, &(g * resid).transpose());
    }
    m /= n as f64;
    let m_inv = linalg::inverse(&m, "outcome-model bread")?;
    Ok(rows * m_inv.transpose())
}

/// Control-arm GEE sandwich `[E₀WD]⁻¹ E₀{W r² Wᵀ} [E₀WD]⁻ᵀ / n₀`.
pub fn sandwich_alpha(data: &Dataset, model: &OutcomeModel) -> Result<DMatrix<f64>> {
    let p = model.n_params();
    let mut bread = DMatrix::zeros(p, p);
    let mut meat = DMatrix::zeros(p, p);
    let mut n0 = 0usize;
    for (i, r) in data.rows().enumerate() {
        if data.a()[i] != 0.0 {
            continue;
        }
        n0 += 1;
        let g = DVector::from_vec(model.gradient(r));
        let resid = data.y()[i] - model.predict_unchecked(r);
        let outer = &g * g.transpose();
        meat += &outer * (resid * resid);
        bread += outer;
    }
    if n0 == 0 {
        return Err(Error::InvalidInput("no control observations".into()));
    }
    bread /= n0 as f64;
    meat /= n0 as f64;
    let b_inv = linalg::inverse(&bread, "outcome-model bread")?;
    Ok(linalg::symmetrize(&(linalg::sandwich(&b_inv, &meat) / n0 as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaInfluence {
    Adjoint,
    Smoothed,
}

/// The pieces of the index-coefficient covariance.
#[derive(Debug, Clone)]
pub struct InfluenceAssembly {
    pub phi_gamma: DMatrix<f64>,
    pub phi_alpha: DMatrix<f64>,
    pub phi_beta: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub b_gamma_hat: DMatrix<f64>,
    pub b_alpha_hat: DMatrix<f64>,
}

impl InfluenceAssembly {
    /// Forms every piece at `β̂_L`. `q_rows` holds `Q̂(β̂ᵀXᵢ)` from the final
    /// (cross-validated) smoother and stands in for `E[bracket | βᵀX]`;
    /// rows without it contribute zero.
    pub fn build(
        eq: &EstimatingEquation<'_>,
        nuisances: &NuisanceFit,
        beta_l: &[f64],
        q_rows: &[Option<f64>],
        mode: BetaInfluence,
    ) -> Result<Self> {
        let data = eq.data();
        let (n, p) = (data.n(), eq.dim());
        let eval = eq.evaluate_detailed(beta_l)?;
        let b_hat = eq.jacobian(beta_l, &eval.value)?;
        let (z, w) = pseudo_outcomes(data, nuisances);
        let bracket: Vec<f64> = (0..n)
            .map(|i| {
                if eval.used[i] {
                    z[i] + (1.0 - w[i]) * eval.q_tilde[i]
                } else {
                    0.0
                }
            })
            .collect();
        let adjoint = eq.centering_adjoint(beta_l, &bracket)?;
        let mut phi_beta = DMatrix::zeros(n, p);
        for i in 0..n {
            let centered = if mode == BetaInfluence::Adjoint {
                bracket[i] - adjoint[i]
            } else {
                let Some(q) = q_rows[i] else { continue };
                if !eval.used[i] {
                    continue;
                }
                bracket[i] - q
            };
            for k in 0..p {
                phi_beta[(i, k)] = centered * eval.centered_xl[i * p + k];
            }
        }

        let gamma = &nuisances.propensity.gamma;
        let mut b_gamma_hat = DMatrix::zeros(p, nuisances.propensity.n_params());
        if nuisances.propensity.is_estimated() {
            for k in 0..gamma.len() {
                let step = FD_STEP * gamma[k].abs().max(1.0);
                let mut g = gamma.clone();
                g[k] += step;
                let shifted = nuisances.with_propensity(data, nuisances.propensity.with_gamma(g));
                let gk = eq.with_nuisances(&shifted).evaluate(beta_l)?;
                for r in 0..p {
                    b_gamma_hat[(r, k)] = (gk[r] - eval.value[r]) / step;
                }
            }
        }
        let alpha = &nuisances.outcome.alpha;
        let mut b_alpha_hat = DMatrix::zeros(p, alpha.len());
        for k in 0..alpha.len() {
            let step = FD_STEP * alpha[k].abs().max(1.0);
            let mut a = alpha.clone();
            a[k] += step;
            let shifted = nuisances.with_outcome(data, nuisances.outcome.with_alpha(a));
            let gk = eq.with_nuisances(&shifted).evaluate(beta_l)?;
            for r in 0..p {
                b_alpha_hat[(r, k)] = (gk[r] - eval.value[r]) / step;
            }
        }

        Ok(InfluenceAssembly {
            phi_gamma: phi_gamma(data, &nuisances.propensity)?,
            phi_alpha: phi_alpha(data, &nuisances.outcome)?,
            phi_beta,
            b_hat,
            b_gamma_hat,
            b_alpha_hat,
        })
    }

    /// Per-row total influence `φ_β + B_γ φ_γ + B_α φ_α`.
    pub fn total_influence(&self) -> DMatrix<f64> {
        let mut total = self.phi_beta.clone();
        if self.phi_gamma.ncols() > 0 {
            total += &self.phi_gamma * self.b_gamma_hat.transpose();
        }
        total += &self.phi_alpha * self.b_alpha_hat.transpose();
        total
    }

    /// `B̂⁻¹ V̂₁ B̂⁻ᵀ / n`.
    pub fn beta_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.phi_beta.nrows() as f64;
        let p = self.b_hat.nrows();
        if p == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let v1 = linalg::mean_outer(&self.total_influence());
        let b_inv = linalg::inverse(&self.b_hat, "estimating-equation Jacobian")?;
        Ok(linalg::symmetrize(&(linalg::sandwich(&b_inv, &v1) / n)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootInference {
    pub root: f64,
    pub bias_hat: f64,
    pub sd_hat: f64,
}

/// Nadaraya–Watson smooth of `values` against `index` at `t`.
pub fn nw_smooth(index: &[f64], values: &[f64], family: KernelFamily, h: Bandwidth, t: f64) -> Result<f64> {
    let k = ScaledKernel::new(family, h);
    let (mut top, mut bottom) = (0.0, 0.0);
    for (&s, &v) in index.iter().zip(values) {
        let w = k.weight(s - t);
        top += w * v;
        bottom += w;
    }
    if bottom < crate::treatment_effect::DEGENERACY_FLOOR * index.len() as f64 {
        return Err(Error::NoSupport { t });
    }
    Ok(top / bottom)
}

/// Least-squares `(c₀, c₁, c₂)` of `c₀ + c₁u + c₂u²` through `(uⱼ, vⱼ)`.
pub fn local_quadratic(u: &[f64], v: &[f64]) -> Result<[f64; 3]> {
    let design = DMatrix::from_fn(u.len(), 3, |i, j| u[i].powi(j as i32));
    let c = linalg::least_squares(&design, &DVector::from_column_slice(v))?;
    Ok([c[0], c[1], c[2]])
}

/// Plug-in bias and standard deviation of a root of `Q̂`.
pub fn root_inference(
    q: &QEstimator,
    root: f64,
    data: &Dataset,
    nuisances: &NuisanceFit,
    beta: &IndexVector,
) -> Result<RootInference> {
    let h = q.bandwidth();
    let hv = h.get();
    let family = q.family();
    let n = data.n() as f64;
    let index = data.index_values(beta.as_slice());

    let half = 2.0 * hv;
    let offsets: Vec<f64> = (0..DERIVATIVE_POINTS)
        .map(|k| -half + 2.0 * half * k as f64 / (DERIVATIVE_POINTS - 1) as f64)
        .collect();
    let q_vals = offsets.iter().map(|u| q.eval(root + u)).collect::<Result<Vec<_>>>()?;
    let f_vals: Vec<f64> = offsets.iter().map(|u| q.density_mass(root + u) / n).collect();
    let [_, q1, q2] = local_quadratic(&offsets, &q_vals)?;
    let [_, f1, _] = local_quadratic(&offsets, &f_vals)?;
    let f0 = q.density_mass(root) / n;
    if q1.abs() < MIN_ROOT_SLOPE {
        return Err(Error::FlatCrossing { z: root, slope: q1 });
    }
    if !(f0 > 0.0) {
        return Err(Error::NoSupport { t: root });
    }
    let q_second = 2.0 * q2;
    let bias_hat = -hv * hv * (f1 / f0 + q_second / (2.0 * q1)) * family.second_moment();

    let (pi, mu) = (nuisances.pi(), nuisances.mu());
    let mut treated = Vec::with_capacity(data.n());
    let mut control = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let (a, r) = (data.a()[i], data.y()[i] - mu[i]);
        treated.push(a * r * r / (pi[i] * pi[i]));
        control.push((1.0 - a) * r * r / ((1.0 - pi[i]) * (1.0 - pi[i])));
    }
    let m1 = nw_smooth(&index, &treated, family, h, root)?;
    let m0 = nw_smooth(&index, &control, family, h, root)?;
    let var = (m1 + m0) * family.roughness() / (n * hv * f0 * q1 * q1);
    let sd_hat = var.sqrt();
    if !(sd_hat > 0.0) || !bias_hat.is_finite() {
        return Err(Error::NonFinite("root standard deviation"));
    }
    Ok(RootInference {
        root,
        bias_hat,
        sd_hat,
    })
}

/// `σ̂²` of the value estimator: the sample variance of the per-row
/// summands. The propensity-error weighted correction that would otherwise
/// enter is evaluated and required to vanish.
pub fn value_sigma2(
    data: &Dataset,
    nuisances: &NuisanceFit,
    q_rows: &[Option<f64>],
    v_hat: f64,
) -> Result<f64> {
    let indicator = |q: f64| f64::from(u8::from(q <= 0.0));
    let terms = value_summands(data, nuisances, q_rows, indicator)?;
    let mut acc = 0.0;
    let mut used = 0usize;
    let pi = nuisances.pi();
    // The working propensity stands in for the true one, so the factor
    // (π(X, γ̂) − π₀(X)) is identically zero.
    let pi_true = pi;
    let p_alpha = nuisances.outcome.n_params();
    let mut correction = vec![0.0; p_alpha];
    for (i, t) in terms.iter().enumerate() {
        let (Some(t), Some(q)) = (t, q_rows[i]) else { continue };
        acc += (t - v_hat) * (t - v_hat);
        used += 1;
        let ind = indicator(q);
        let den = pi[i] + (1.0 - 2.0 * pi[i]) * ind;
        let w = (pi[i] - pi_true[i]) * (1.0 - 2.0 * ind) / den;
        for (c, g) in correction.iter_mut().zip(nuisances.outcome.gradient(data.row(i))) {
            *c += w * g;
        }
    }
    let worst = correction.iter().fold(0.0f64, |m, c| m.max((c / used as f64).abs()));
    if worst > CORRECTION_TOL {
        return Err(Error::InvalidInput(format!(
            "value-variance correction term did not vanish: {worst:e}"
        )));
    }
    let s2 = acc / used as f64;
    if !s2.is_finite() {
        return Err(Error::NonFinite("value variance"));
    }
    Ok(s2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl CurveBand {
    /// `t,q_hat,lower,upper` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,q_hat,lower,upper\n");
        for i in 0..self.grid.len() {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.grid[i], self.center[i], self.lower[i], self.upper[i]
            ));
        }
        s
    }
}

/// Pointwise percentile band from bootstrap curves (`draws[b][g]`),
/// widened where needed so it contains the center.
pub fn percentile_band(grid: &[f64], center: &[f64], draws: &[Vec<f64>], level: f64) -> CurveBand {
    let lo_p = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[g]).filter(|v| v.is_finite()).collect();
        col.sort_by(f64::total_cmp);
        let (lo, hi) = if col.is_empty() {
            (center[g], center[g])
        } else {
            (quantile_sorted(&col, lo_p), quantile_sorted(&col, 1.0 - lo_p))
        };
        lower.push(lo.min(center[g]));
        upper.push(hi.max(center[g]));
    }
    CurveBand {
        grid: grid.to_vec(),
        center: center.to_vec(),
        lower,
        upper,
        level,
    }
}

/// Residual bootstrap for `Q̂` at fixed `β̂` and bandwidth. Residuals are
/// `Yᵢ − μ̂ᵢ − AᵢQ̂ᵢ`; each draw resamples them, rebuilds the outcome,
/// refits the outcome model and re-smooths.
#[allow(clippy::too_many_arguments)]
pub fn residual_bootstrap_band(
    data: &Dataset,
    nuisances: &NuisanceFit,
    q: &QEstimator,
    beta: &IndexVector,
    grid: &[f64],
    draws: usize,
    level: f64,
    seed: u64,
) -> Result<CurveBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {level}")));
    }
    let (center, curves) = residual_bootstrap_curves(data, nuisances, q, beta, grid, draws, seed)?;
    Ok(percentile_band(grid, &center, &curves, level))
}

/// The center curve on `grid` and every non-degenerate bootstrap curve, in draw order.
pub fn residual_bootstrap_curves(
    data: &Dataset,
    nuisances: &NuisanceFit,
    q: &QEstimator,
    beta: &IndexVector,
    grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if draws < 50 {
        return Err(Error::InvalidInput(format!("need at least 50 bootstrap draws, got {draws}")));
    }
    let n = data.n();
    let index = data.index_values(beta.as_slice());
    let q_rows: Vec<f64> = index.iter().map(|&t| q.eval(t).unwrap_or(0.0)).collect();
    let fitted: Vec<f64> = (0..n).map(|i| nuisances.mu()[i] + data.a()[i] * q_rows[i]).collect();
    let resid: Vec<f64> = (0..n).map(|i| data.y()[i] - fitted[i]).collect();
    let center = grid.iter().map(|&t| q.eval(t)).collect::<Result<Vec<_>>>()?;
    let family = q.family();
    let h = q.bandwidth();
    let basis = nuisances.outcome.basis.clone();

    let curves: Vec<Result<Option<Vec<f64>>>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let y: Vec<f64> = fitted.iter().map(|f| f + resid[rng.random_range(0..n)]).collect();
            let boot = data.with_outcome(y)?;
            let outcome = OutcomeModel::fit(&boot, &basis)?;
            let nf = nuisances.with_outcome(&boot, outcome);
            let qb = QEstimator::new(&boot, &nf, beta, family, h)?;
            let mut curve = Vec::with_capacity(grid.len());
            for &t in grid {
                match qb.eval(t) {
                    Ok(v) => curve.push(v),
                    Err(Error::NoSupport { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(curve))
        })
        .collect();
    let mut ok = Vec::with_capacity(draws);
    let mut degenerate = 0usize;
    for c in curves {
        match c? {
            Some(v) => ok.push(v),
            None => degenerate += 1,
        }
    }
    if degenerate as f64 > 0.10 * draws as f64 {
        return Err(Error::TooManyDegenerate {
            degenerate,
            total: draws,
            context: "bootstrap draws",
        });
    }
    Ok((center, ok))
}
