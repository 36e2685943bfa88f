//! Treatment assignment, the augmented value estimator, its smoothed
//! counterpart, and zero crossings of the estimated treatment difference.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index_estimation::MAX_DEGENERATE_SHARE;
use crate::nuisance::NuisanceFit;
use crate::treatment_effect::{IndexVector, QEstimator};

/// Share of root-search grid points allowed to have an empty kernel window.
pub const MAX_DEGENERATE_GRID_SHARE: f64 = 0.10;
/// `|Q̂|` accepted at a refined root.
pub const ROOT_TOL: f64 = 1e-6;
/// Bisection stops once the bracket is this narrow.
pub const ROOT_WIDTH_TOL: f64 = 1e-10;
/// Number of grid steps across the default root-search interval.
pub const ROOT_GRID_STEPS: usize = 400;

/// Anything that evaluates a treatment-difference curve on the index scale.
pub trait QCurve {
    fn q(&self, t: f64) -> Result<f64>;
}

impl QCurve for QEstimator {
    fn q(&self, t: f64) -> Result<f64> {
        self.eval(t)
    }
}

/// A closure viewed as a treatment-difference curve.
pub struct FnCurve<F>(pub F);

impl<F: Fn(f64) -> f64> QCurve for FnCurve<F> {
    fn q(&self, t: f64) -> Result<f64> {
        Ok((self.0)(t))
    }
}

/// Treat exactly when `Q̂(βᵀx) > 0`.
#[derive(Debug, Clone)]
pub struct TreatmentRule<C = QEstimator> {
    pub beta: IndexVector,
    pub q: C,
}

impl<C: QCurve> TreatmentRule<C> {
    pub fn new(beta: IndexVector, q: C) -> Self {
        TreatmentRule { beta, q }
    }

    pub fn index(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.dim(),
                got: x.len(),
            });
        }
        Ok(self.beta.as_slice().iter().zip(x).map(|(b, v)| b * v).sum())
    }

    pub fn assign(&self, x: &[f64]) -> Result<u8> {
        let q = self.q.q(self.index(x)?)?;
        Ok(u8::from(q > 0.0))
    }

    /// `Q̂(βᵀXᵢ)` for every row; `None` where the window is empty.
    pub fn q_at_rows(&self, data: &Dataset) -> Result<Vec<Option<f64>>> {
        data.rows()
            .map(|r| match self.q.q(self.index(r)?) {
                Ok(v) => Ok(Some(v)),
                Err(Error::NoSupport { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    }
}

/// `I{t ≤ 0}` smoothed by a sinusoidal ramp on `(−a, a)`.
pub fn j_a(t: f64, a: f64) -> f64 {
    if t <= -a {
        1.0
    } else if t >= a {
        0.0
    } else {
        0.5 * (1.0 + (-std::f64::consts::PI * t / (2.0 * a)).sin())
    }
}

/// One row's contribution to the value estimate, where `control` is the
/// (possibly smoothed) weight on the control arm, `I{Q̂ ≤ 0}` for the plain rule.
pub fn value_summand(a: f64, y: f64, pi: f64, mu: f64, q: f64, control: f64) -> f64 {
    let den = pi + (1.0 - 2.0 * pi) * control;
    ((a + (1.0 - 2.0 * a) * control) * y + (pi - a) * (mu + q - (2.0 * mu + q) * control)) / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub v_hat: f64,
    /// Filled by inference; zero until then.
    pub sigma_hat: f64,
    pub n: usize,
    pub n_dropped: usize,
}

/// Per-row value summands, `None` where `Q̂` was unavailable.
pub fn value_summands(
    data: &Dataset,
    nuisances: &NuisanceFit,
    q_rows: &[Option<f64>],
    control_weight: impl Fn(f64) -> f64,
) -> Result<Vec<Option<f64>>> {
    let n = data.n();
    if q_rows.len() != n || nuisances.pi().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q_rows.len(),
        });
    }
    let dropped = q_rows.iter().filter(|q| q.is_none()).count();
    if dropped as f64 > MAX_DEGENERATE_SHARE * n as f64 {
        return Err(Error::TooManyDegenerate {
            degenerate: dropped,
            total: n,
            context: "value estimate",
        });
    }
    Ok((0..n)
        .map(|i| {
            q_rows[i].map(|q| {
                value_summand(
                    data.a()[i],
                    data.y()[i],
                    nuisances.pi()[i],
                    nuisances.mu()[i],
                    q,
                    control_weight(q),
                )
            })
        })
        .collect())
}

fn mean_of_present(terms: &[Option<f64>]) -> (f64, usize) {
    let present: Vec<f64> = terms.iter().flatten().copied().collect();
    let m = present.iter().sum::<f64>() / present.len() as f64;
    (m, terms.len() - present.len())
}

pub fn value_estimate<C: QCurve>(
    data: &Dataset,
    nuisances: &NuisanceFit,
    rule: &TreatmentRule<C>,
) -> Result<ValueEstimate> {
    let q = rule.q_at_rows(data)?;
    let terms = value_summands(data, nuisances, &q, |q| f64::from(u8::from(q <= 0.0)))?;
    let (v_hat, n_dropped) = mean_of_present(&terms);
    if !v_hat.is_finite() {
        return Err(Error::NonFinite("value estimate"));
    }
    Ok(ValueEstimate {
        v_hat,
        sigma_hat: 0.0,
        n: data.n(),
        n_dropped,
    })
}

pub fn smoothed_value<C: QCurve>(
    data: &Dataset,
    nuisances: &NuisanceFit,
    rule: &TreatmentRule<C>,
    a: f64,
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidInput(format!("smoothing scale must be positive, got {a}")));
    }
    let q = rule.q_at_rows(data)?;
    let terms = value_summands(data, nuisances, &q, |q| j_a(q, a))?;
    Ok(mean_of_present(&terms).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    pub roots: Vec<f64>,
    pub search_interval: (f64, f64),
    pub grid_step: f64,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central 95% range of the index values and the matching grid step.
pub fn default_root_interval(index: &[f64]) -> Result<((f64, f64), f64)> {
    if index.is_empty() {
        return Err(Error::InvalidInput("empty index".into()));
    }
    let mut s = index.to_vec();
    s.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&s, 0.025);
    let hi = quantile_sorted(&s, 0.975);
    let step = (hi - lo) / ROOT_GRID_STEPS as f64;
    Ok(((lo, hi), step))
}

/// Scans `[lo, hi]` for sign changes of `q` and refines each by bisection.
pub fn find_roots<C: QCurve + ?Sized>(q: &C, interval: (f64, f64), grid_step: f64) -> Result<RootSet> {
    let (lo, hi) = interval;
    if !(grid_step > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "root search needs lo < hi and a positive step, got [{lo}, {hi}] step {grid_step}"
        )));
    }
    let steps = ((hi - lo) / grid_step).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| (lo + k as f64 * grid_step).min(hi)).collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut bad = 0usize;
    for &t in &grid {
        match q.q(t) {
            Ok(v) => values.push(Some(v)),
            Err(Error::NoSupport { .. }) => {
                bad += 1;
                values.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if bad as f64 > MAX_DEGENERATE_GRID_SHARE * grid.len() as f64 {
        return Err(Error::TooManyDegenerate {
            degenerate: bad,
            total: grid.len(),
            context: "root search grid",
        });
    }
    let mut roots: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (&t, v) in grid.iter().zip(&values) {
        let Some(v) = *v else {
            prev = None;
            continue;
        };
        if v == 0.0 {
            roots.push(t);
        } else if let Some((tp, vp)) = prev {
            if vp != 0.0 && (vp > 0.0) != (v > 0.0) {
                if let Some(r) = bisect(q, tp, vp, t)? {
                    roots.push(r);
                }
            }
        }
        prev = Some((t, v));
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|b, a| *b <= *a);
    Ok(RootSet {
        roots,
        search_interval: interval,
        grid_step,
    })
}

fn bisect<C: QCurve + ?Sized>(q: &C, mut a: f64, fa: f64, mut b: f64) -> Result<Option<f64>> {
    let neg_left = fa < 0.0;
    loop {
        let m = 0.5 * (a + b);
        let fm = match q.q(m) {
            Ok(v) => v,
            Err(Error::NoSupport { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if fm.abs() <= ROOT_TOL {
            return Ok(Some(m));
        }
        if b - a <= ROOT_WIDTH_TOL || m <= a || m >= b {
            return Ok(None);
        }
        if (fm < 0.0) == neg_left {
            a = m;
        } else {
            b = m;
        }
    }
}
