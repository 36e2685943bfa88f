//! Working models for the propensity score `π(x, γ)` and the control-arm mean
//! outcome `μ(x, α)`.
//!
//! The propensity is fit by maximum likelihood over all rows; the outcome model
//! solves `Σ_{A=0} W(X, α) {Y − μ(X, α)} = 0` over the control rows, with
//! `W = ∂μ/∂α` (the basis itself for models linear in `α`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_CLIP_FLOOR: f64 = 1e-3;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e3;

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^η)` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Functional form of the propensity working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FormRepr", into = "FormRepr")]
pub enum PropensityForm {
    /// Intercept-only logistic model; the MLE is the treated fraction.
    Constant,
    /// A known probability, not estimated.
    Fixed { value: f64 },
    /// `expit(γᵀ(1, x))`, or `expit(γᵀx)` without the intercept.
    LogisticLinear {
        intercept: bool,
    },
}

fn default_true() -> bool {
    true
}

// Struct variants so unknown keys are rejected on every form.
#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
enum FormRepr {
    Constant {},
    Fixed {
        value: f64,
    },
    LogisticLinear {
        #[serde(default = "default_true")]
        intercept: bool,
    },
}

impl From<FormRepr> for PropensityForm {
    fn from(r: FormRepr) -> Self {
        match r {
            FormRepr::Constant {} => PropensityForm::Constant,
            FormRepr::Fixed { value } => PropensityForm::Fixed { value },
            FormRepr::LogisticLinear { intercept } => PropensityForm::LogisticLinear { intercept },
        }
    }
}

impl From<PropensityForm> for FormRepr {
    fn from(f: PropensityForm) -> Self {
        match f {
            PropensityForm::Constant => FormRepr::Constant {},
            PropensityForm::Fixed { value } => FormRepr::Fixed { value },
            PropensityForm::LogisticLinear { intercept } => FormRepr::LogisticLinear { intercept },
        }
    }
}

impl PropensityForm {
    pub fn logistic() -> Self {
        PropensityForm::LogisticLinear { intercept: true }
    }
}

/// Fitted propensity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub form: PropensityForm,
    /// Linear-predictor coefficients; for `Fixed` this holds `logit(value)`.
    pub gamma: Vec<f64>,
    pub clip_floor: f64,
    /// Number of training rows whose prediction hit the clipping bounds.
    pub n_clipped: usize,
    d: usize,
}

impl PropensityModel {
    pub fn fit(data: &Dataset, form: &PropensityForm) -> Result<Self> {
        Self::fit_with_floor(data, form, DEFAULT_CLIP_FLOOR)
    }

    pub fn fit_with_floor(data: &Dataset, form: &PropensityForm, clip_floor: f64) -> Result<Self> {
        if !(clip_floor > 0.0 && clip_floor < 0.5) {
            return Err(Error::InvalidInput(format!(
                "clip floor must lie in (0, 0.5), got {clip_floor}"
            )));
        }
        let d = data.d();
        let gamma = match form {
            PropensityForm::Fixed { value } => {
                if !(*value > 0.0 && *value < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "fixed propensity must lie in (0, 1), got {value}"
                    )));
                }
                vec![logit(*value)]
            }
            PropensityForm::Constant => {
                let p = data.n_treated() as f64 / data.n() as f64;
                vec![logit(p)]
            }
            PropensityForm::LogisticLinear { .. } => {
                let template = PropensityModel {
                    form: form.clone(),
                    gamma: Vec::new(),
                    clip_floor,
                    n_clipped: 0,
                    d,
                };
                template.newton_mle(data)?
            }
        };
        let mut model = PropensityModel {
            form: form.clone(),
            gamma,
            clip_floor,
            n_clipped: 0,
            d,
        };
        model.n_clipped = data
            .rows()
            .filter(|r| {
                let p = model.raw(r);
                p < clip_floor || p > 1.0 - clip_floor
            })
            .count();
        if model.n_clipped > 0 {
            log::warn!(
                "{} propensity predictions clipped to [{clip_floor}, {}]",
                model.n_clipped,
                1.0 - clip_floor
            );
        }
        Ok(model)
    }

    /// Number of estimated coefficients (0 for a fixed propensity).
    pub fn n_params(&self) -> usize {
        match self.form {
            PropensityForm::Fixed { .. } => 0,
            _ => self.gamma.len(),
        }
    }

    pub fn is_estimated(&self) -> bool {
        self.n_params() > 0
    }

    /// Regressors multiplying `γ`.
    pub fn design_row(&self, x: &[f64]) -> Vec<f64> {
        match self.form {
            PropensityForm::Constant | PropensityForm::Fixed { .. } => vec![1.0],
            PropensityForm::LogisticLinear { intercept: true } => {
                std::iter::once(1.0).chain(x.iter().copied()).collect()
            }
            PropensityForm::LogisticLinear { intercept: false } => x.to_vec(),
        }
    }

    fn design_len(&self) -> usize {
        match self.form {
            PropensityForm::Constant | PropensityForm::Fixed { .. } => 1,
            PropensityForm::LogisticLinear { intercept: true } => self.d + 1,
            PropensityForm::LogisticLinear { intercept: false } => self.d,
        }
    }

    fn linear_predictor(&self, x: &[f64]) -> f64 {
        match self.form {
            PropensityForm::Constant | PropensityForm::Fixed { .. } => self.gamma[0],
            PropensityForm::LogisticLinear { intercept } => {
                let (start, offset) = if intercept { (1, self.gamma[0]) } else { (0, 0.0) };
                offset
                    + self.gamma[start..]
                        .iter()
                        .zip(x)
                        .map(|(g, v)| g * v)
                        .sum::<f64>()
            }
        }
    }

    /// Unclipped `expit(γᵀz)`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }

    /// Clipped prediction; `x` must have the fitted dimension.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(self.clip_floor, 1.0 - self.clip_floor)
    }

    /// Same form with replacement coefficients.
    pub fn with_gamma(&self, gamma: Vec<f64>) -> Self {
        PropensityModel {
            gamma,
            ..self.clone()
        }
    }

    /// Mean Bernoulli log-likelihood at `gamma`.
    pub fn log_likelihood(&self, data: &Dataset, gamma: &[f64]) -> f64 {
        let m = self.with_gamma(gamma.to_vec());
        let total: f64 = data
            .rows()
            .zip(data.a())
            .map(|(r, &a)| {
                let eta = m.linear_predictor(r);
                a * eta - softplus(eta)
            })
            .sum();
        total / data.n() as f64
    }

    /// Per-row score `(Aᵢ − πᵢ) zᵢ` as an n × p matrix.
    pub fn scores(&self, data: &Dataset) -> DMatrix<f64> {
        let p = self.design_len();
        let mut s = DMatrix::zeros(data.n(), p);
        for (i, (r, &a)) in data.rows().zip(data.a()).enumerate() {
            let z = self.design_row(r);
            let resid = a - self.raw(r);
            for (k, zk) in z.iter().enumerate() {
                s[(i, k)] = resid * zk;
            }
        }
        s
    }

    /// Mean Hessian `−n⁻¹ Σ πᵢ(1 − πᵢ) zᵢ zᵢᵀ` of the log-likelihood.
    pub fn mean_hessian(&self, data: &Dataset) -> DMatrix<f64> {
        let p = self.design_len();
        let mut h = DMatrix::zeros(p, p);
        for r in data.rows() {
            let z = DVector::from_vec(self.design_row(r));
            let pi = self.raw(r);
            h -= (&z * z.transpose()) * (pi * (1.0 - pi));
        }
        h / data.n() as f64
    }

    /// `∂π/∂γ` at a covariate row (unclipped model).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let pi = self.raw(x);
        let w = pi * (1.0 - pi);
        self.design_row(x).into_iter().map(|z| z * w).collect()
    }

    /// True when the linear predictor splits the two arms without overlap.
    fn separates(&self, data: &Dataset, gamma: &[f64]) -> bool {
        let mut treated = (f64::INFINITY, f64::NEG_INFINITY);
        let mut control = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, row) in data.rows().enumerate() {
            let eta: f64 = self.design_row(row).iter().zip(gamma).map(|(z, g)| z * g).sum();
            let arm = if data.a()[i] == 1.0 { &mut treated } else { &mut control };
            arm.0 = arm.0.min(eta);
            arm.1 = arm.1.max(eta);
        }
        treated.0 > control.1 || treated.1 < control.0
    }

    fn newton_mle(&self, data: &Dataset) -> Result<Vec<f64>> {
        let p = self.design_len();
        let mut gamma = vec![0.0; p];
        let mut ll = self.log_likelihood(data, &gamma);
        for iter in 0..NEWTON_MAX_ITER {
            let m = self.with_gamma(gamma.clone());
            let n = data.n() as f64;
            let score = m.scores(data).row_sum().transpose() / n;
            if score.amax() <= NEWTON_GRAD_TOL {
                if self.separates(data, &gamma) {
                    return Err(Error::Separation);
                }
                return Ok(gamma);
            }
            let neg_h = -m.mean_hessian(data);
            let step = linalg::solve(&neg_h, &score, "propensity information")?;
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, s)| g + t * s).collect();
                let cand_ll = self.log_likelihood(data, &cand);
                if cand_ll >= ll - 1e-15 || t < 1e-10 {
                    gamma = cand;
                    ll = cand_ll;
                    break;
                }
                t *= 0.5;
            }
            let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > SEPARATION_NORM || !norm.is_finite() {
                return Err(Error::Separation);
            }
            if iter + 1 == NEWTON_MAX_ITER {
                return Err(Error::NoConvergence {
                    what: "propensity MLE",
                    iterations: NEWTON_MAX_ITER,
                    residual: score.amax(),
                });
            }
        }
        unreachable!()
    }
}

/// Monomial `Π x[j]^power` over the listed `(covariate, power)` factors; the
/// empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Term(pub Vec<(usize, u32)>);

impl Term {
    fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|&(j, p)| x[j].powi(p as i32)).product()
    }
}

/// Functional form of the control-arm outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BasisRepr", into = "BasisRepr")]
pub enum OutcomeBasis {
    Constant,
    /// Intercept plus every covariate.
    Linear,
    CustomTerms { terms: Vec<Term> },
    /// `α_c + sin(a₁ᵀx) + ½(a₂ᵀx)²`, nonlinear in `α = (α_c, a₁, a₂)`.
    SinPlusHalfQuad,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case", deny_unknown_fields)]
enum BasisRepr {
    Constant {},
    Linear {},
    CustomTerms { terms: Vec<Term> },
    SinPlusHalfQuad {},
}

impl From<BasisRepr> for OutcomeBasis {
    fn from(r: BasisRepr) -> Self {
        match r {
            BasisRepr::Constant {} => OutcomeBasis::Constant,
            BasisRepr::Linear {} => OutcomeBasis::Linear,
            BasisRepr::CustomTerms { terms } => OutcomeBasis::CustomTerms { terms },
            BasisRepr::SinPlusHalfQuad {} => OutcomeBasis::SinPlusHalfQuad,
        }
    }
}

impl From<OutcomeBasis> for BasisRepr {
    fn from(b: OutcomeBasis) -> Self {
        match b {
            OutcomeBasis::Constant => BasisRepr::Constant {},
            OutcomeBasis::Linear => BasisRepr::Linear {},
            OutcomeBasis::CustomTerms { terms } => BasisRepr::CustomTerms { terms },
            OutcomeBasis::SinPlusHalfQuad => BasisRepr::SinPlusHalfQuad {},
        }
    }
}

impl OutcomeBasis {
    pub fn n_params(&self, d: usize) -> usize {
        match self {
            OutcomeBasis::Constant => 1,
            OutcomeBasis::Linear => d + 1,
            OutcomeBasis::CustomTerms { terms } => terms.len(),
            OutcomeBasis::SinPlusHalfQuad => 2 * d + 1,
        }
    }

    fn is_linear(&self) -> bool {
        !matches!(self, OutcomeBasis::SinPlusHalfQuad)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if let OutcomeBasis::CustomTerms { terms } = self {
            if terms.is_empty() {
                return Err(Error::InvalidInput("custom outcome basis has no terms".into()));
            }
            if let Some(&(j, _)) = terms.iter().flat_map(|t| t.0.iter()).find(|(j, _)| *j >= d) {
                return Err(Error::InvalidInput(format!(
                    "outcome term references covariate {j} but d = {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Fitted outcome model `μ(x, α̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub basis: OutcomeBasis,
    pub alpha: Vec<f64>,
    d: usize,
}

impl OutcomeModel {
    pub fn new(basis: OutcomeBasis, alpha: Vec<f64>, d: usize) -> Result<Self> {
        basis.validate(d)?;
        if alpha.len() != basis.n_params(d) {
            return Err(Error::DimensionMismatch {
                expected: basis.n_params(d),
                got: alpha.len(),
            });
        }
        Ok(OutcomeModel { basis, alpha, d })
    }

    pub fn n_params(&self) -> usize {
        self.alpha.len()
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        OutcomeModel {
            alpha,
            ..self.clone()
        }
    }

    /// Basis functions for models linear in `α`.
    fn features(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis {
            OutcomeBasis::Constant => vec![1.0],
            OutcomeBasis::Linear => std::iter::once(1.0).chain(x.iter().copied()).collect(),
            OutcomeBasis::CustomTerms { terms } => terms.iter().map(|t| t.eval(x)).collect(),
            OutcomeBasis::SinPlusHalfQuad => unreachable!("nonlinear basis has no features"),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.basis {
            OutcomeBasis::SinPlusHalfQuad => {
                let d = self.d;
                let u1: f64 = self.alpha[1..=d].iter().zip(x).map(|(a, v)| a * v).sum();
                let u2: f64 = self.alpha[d + 1..].iter().zip(x).map(|(a, v)| a * v).sum();
                self.alpha[0] + u1.sin() + 0.5 * u2 * u2
            }
            _ => self
                .features(x)
                .iter()
                .zip(&self.alpha)
                .map(|(f, a)| f * a)
                .sum(),
        }
    }

    /// `D(x, α) = ∂μ/∂α`; also the default GEE weight `W`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis {
            OutcomeBasis::SinPlusHalfQuad => {
                let d = self.d;
                let u1: f64 = self.alpha[1..=d].iter().zip(x).map(|(a, v)| a * v).sum();
                let u2: f64 = self.alpha[d + 1..].iter().zip(x).map(|(a, v)| a * v).sum();
                let c = u1.cos();
                let mut g = Vec::with_capacity(2 * d + 1);
                g.push(1.0);
                g.extend(x.iter().map(|v| c * v));
                g.extend(x.iter().map(|v| u2 * v));
                g
            }
            _ => self.features(x),
        }
    }

    /// Control-arm GEE `Σ_{A=0} W(Xᵢ)(Yᵢ − μ(Xᵢ))`.
    pub fn gee_residual(&self, data: &Dataset) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_params()];
        for ((r, &a), &y) in data.rows().zip(data.a()).zip(data.y()) {
            if a != 0.0 {
                continue;
            }
            let resid = y - self.predict_unchecked(r);
            for (s, w) in acc.iter_mut().zip(self.gradient(r)) {
                *s += w * resid;
            }
        }
        acc
    }

    pub fn fit(data: &Dataset, basis: &OutcomeBasis) -> Result<Self> {
        let d = data.d();
        basis.validate(d)?;
        let controls: Vec<usize> = (0..data.n()).filter(|&i| data.a()[i] == 0.0).collect();
        if controls.is_empty() {
            return Err(Error::InvalidInput("no control observations".into()));
        }
        let p = basis.n_params(d);
        let template = OutcomeModel {
            basis: basis.clone(),
            alpha: vec![0.0; p],
            d,
        };
        if basis.is_linear() {
            let mut design = DMatrix::zeros(controls.len(), p);
            let mut y = DVector::zeros(controls.len());
            for (k, &i) in controls.iter().enumerate() {
                for (j, f) in template.features(data.row(i)).into_iter().enumerate() {
                    design[(k, j)] = f;
                }
                y[k] = data.y()[i];
            }
            let alpha = linalg::least_squares(&design, &y)
                .map_err(|_| Error::Singular("outcome design (rank deficient on controls)"))?;
            Ok(template.with_alpha(alpha.iter().copied().collect()))
        } else {
            fit_sin_quad(data, &controls, template)
        }
    }
}

/// Levenberg–Marquardt least squares for the sine-plus-quadratic model,
/// multi-started from a quadratic polynomial regression.
fn fit_sin_quad(data: &Dataset, controls: &[usize], template: OutcomeModel) -> Result<OutcomeModel> {
    let d = data.d();
    let n0 = controls.len();
    // Quadratic regression: 1, x_j, x_j x_k (j <= k).
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect();
    let q = 1 + d + pairs.len();
    if n0 <= q {
        return Err(Error::InvalidInput(
            "too few controls for the sine-plus-quadratic outcome model".into(),
        ));
    }
    let mut design = DMatrix::zeros(n0, q);
    let mut y = DVector::zeros(n0);
    for (row, &i) in controls.iter().enumerate() {
        let x = data.row(i);
        design[(row, 0)] = 1.0;
        for j in 0..d {
            design[(row, 1 + j)] = x[j];
        }
        for (m, &(j, k)) in pairs.iter().enumerate() {
            design[(row, 1 + d + m)] = x[j] * x[k];
        }
        y[row] = data.y()[i];
    }
    let coef = linalg::least_squares(&design, &y)?;
    let mut quad = DMatrix::zeros(d, d);
    for (m, &(j, k)) in pairs.iter().enumerate() {
        let c = coef[1 + d + m];
        if j == k {
            quad[(j, j)] = c;
        } else {
            quad[(j, k)] = c / 2.0;
            quad[(k, j)] = c / 2.0;
        }
    }
    let eig = quad.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let lambda = eig.eigenvalues[top].max(0.0);
    let a2: Vec<f64> = eig.eigenvectors.column(top).iter().map(|v| v * (2.0 * lambda).sqrt()).collect();
    let lin: Vec<f64> = (0..d).map(|j| coef[1 + j]).collect();
    let lin_norm = lin.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);

    let fits: Vec<Result<(f64, OutcomeModel)>> = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0]
        .into_par_iter()
        .map(|scale| {
            let mut alpha = vec![coef[0]];
            alpha.extend(lin.iter().map(|v| v / lin_norm * scale));
            alpha.extend(a2.iter().copied());
            levenberg_marquardt(data, controls, template.with_alpha(alpha))
        })
        .collect();
    let mut best: Option<(f64, OutcomeModel)> = None;
    for (sse, m) in fits.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, m));
        }
    }
    best.map(|(_, m)| m).ok_or(Error::NoConvergence {
        what: "outcome GEE",
        iterations: 0,
        residual: f64::NAN,
    })
}

fn levenberg_marquardt(
    data: &Dataset,
    controls: &[usize],
    mut model: OutcomeModel,
) -> Result<(f64, OutcomeModel)> {
    let p = model.n_params();
    let n0 = controls.len() as f64;
    let sse = |m: &OutcomeModel| -> f64 {
        controls
            .iter()
            .map(|&i| (data.y()[i] - m.predict_unchecked(data.row(i))).powi(2))
            .sum()
    };
    let mut cur = sse(&model);
    let mut damping = 1e-3;
    let mut stalled = 0;
    let mut jac = DMatrix::zeros(controls.len(), p);
    let mut resid = DVector::zeros(controls.len());
    for _ in 0..500 {
        for (row, &i) in controls.iter().enumerate() {
            let x = data.row(i);
            for (k, g) in model.gradient(x).into_iter().enumerate() {
                jac[(row, k)] = g;
            }
            resid[row] = data.y()[i] - model.predict_unchecked(x);
        }
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&resid);
        if jtr.amax() / n0 <= 1e-11 {
            return Ok((cur, model));
        }
        if stalled >= 3 {
            break;
        }
        let mut accepted = false;
        while damping < 1e12 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += damping * (1.0 + jtj[(k, k)]);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                damping *= 10.0;
                continue;
            };
            let cand: Vec<f64> = model.alpha.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let cand_model = model.with_alpha(cand);
            let cand_sse = sse(&cand_model);
            if cand_sse.is_finite() && cand_sse <= cur {
                model = cand_model;
                let improved = cur - cand_sse;
                cur = cand_sse;
                damping = (damping * 0.3).max(1e-12);
                accepted = true;
                if improved <= 1e-15 * cur.max(1e-300) {
                    // Stationary to machine precision; the GEE residual check decides.
                    damping = 1e-12;
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let resid = model.gee_residual(data);
    let sup = resid.iter().fold(0.0f64, |m, v| m.max(v.abs())) / n0;
    if sup <= 1e-8 {
        Ok((cur, model))
    } else {
        Err(Error::NoConvergence {
            what: "outcome GEE",
            iterations: 500,
            residual: sup,
        })
    }
}

/// Propensity and outcome working-model choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub propensity: PropensityForm,
    pub outcome: OutcomeBasis,
    #[serde(default = "default_clip")]
    pub clip_floor: f64,
}

fn default_clip() -> f64 {
    DEFAULT_CLIP_FLOOR
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        NuisanceSpec {
            propensity: PropensityForm::logistic(),
            outcome: OutcomeBasis::Linear,
            clip_floor: DEFAULT_CLIP_FLOOR,
        }
    }
}

/// Both fitted working models plus their per-row predictions `π̂ᵢ`, `μ̂ᵢ`.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
    pi: Vec<f64>,
    mu: Vec<f64>,
}

impl NuisanceFit {
    pub fn fit(data: &Dataset, spec: &NuisanceSpec) -> Result<Self> {
        let propensity = PropensityModel::fit_with_floor(data, &spec.propensity, spec.clip_floor)?;
        let outcome = OutcomeModel::fit(data, &spec.outcome)?;
        Ok(Self::from_models(data, propensity, outcome))
    }

    pub fn from_models(data: &Dataset, propensity: PropensityModel, outcome: OutcomeModel) -> Self {
        let pi = data.rows().map(|r| propensity.predict_unchecked(r)).collect();
        let mu = data.rows().map(|r| outcome.predict_unchecked(r)).collect();
        NuisanceFit {
            propensity,
            outcome,
            pi,
            mu,
        }
    }

    /// Predictions supplied directly, e.g. true nuisance functions in simulations.
    pub fn from_predictions(
        propensity: PropensityModel,
        outcome: OutcomeModel,
        pi: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        if pi.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: pi.len(),
                got: mu.len(),
            });
        }
        if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidInput("propensity predictions must lie in (0, 1)".into()));
        }
        Ok(NuisanceFit {
            propensity,
            outcome,
            pi,
            mu,
        })
    }

    #[inline]
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    #[inline]
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn with_propensity(&self, data: &Dataset, propensity: PropensityModel) -> Self {
        Self::from_models(data, propensity, self.outcome.clone())
    }

    pub fn with_outcome(&self, data: &Dataset, outcome: OutcomeModel) -> Self {
        Self::from_models(data, self.propensity.clone(), outcome)
    }
}
