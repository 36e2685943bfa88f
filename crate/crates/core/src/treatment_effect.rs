//! Kernel estimator of the treatment-difference function `Q(βᵀx)`, the
//! Nadaraya–Watson smoother `Ê(X_L | βᵀX)` and leave-one-out bandwidth choice.
//!
//! With pseudo-outcomes `Zᵢ = (Aᵢ − π̂ᵢ)(Yᵢ − μ̂ᵢ) / {π̂ᵢ(1 − π̂ᵢ)}` and weights
//! `Wᵢ = Aᵢ / π̂ᵢ`, the estimator is the kernel ratio
//! `Q̃(t) = Σ K_h(βᵀXᵢ − t) Zᵢ / Σ K_h(βᵀXᵢ − t) Wᵢ`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{Bandwidth, KernelFamily, ScaledKernel, SortedIndex};
use crate::nuisance::NuisanceFit;

/// Kernel denominators below `DEGENERACY_FLOOR · n` are treated as empty windows.
pub const DEGENERACY_FLOOR: f64 = 1e-8;

/// Index coefficients `β = (1, β_L)`; the leading coefficient is pinned to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct IndexVector(Vec<f64>);

impl IndexVector {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.first() != Some(&1.0) {
            return Err(Error::InvalidInput(
                "index vector must start with the anchor coefficient 1".into(),
            ));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("index vector"));
        }
        Ok(IndexVector(beta))
    }

    pub fn from_free(beta_l: &[f64]) -> Self {
        let mut v = Vec::with_capacity(beta_l.len() + 1);
        v.push(1.0);
        v.extend_from_slice(beta_l);
        IndexVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The trailing free components `β_L`.
    pub fn free(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for IndexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        IndexVector::new(v)
    }
}

impl From<IndexVector> for Vec<f64> {
    fn from(b: IndexVector) -> Vec<f64> {
        b.0
    }
}

/// `Zᵢ` and `Aᵢ/π̂ᵢ` for every row.
pub fn pseudo_outcomes(data: &Dataset, nuisances: &NuisanceFit) -> (Vec<f64>, Vec<f64>) {
    let pi = nuisances.pi();
    let mu = nuisances.mu();
    let mut num = Vec::with_capacity(data.n());
    let mut den = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let (a, y, p, m) = (data.a()[i], data.y()[i], pi[i], mu[i]);
        num.push((a - p) * (y - m) / (p * (1.0 - p)));
        den.push(a / p);
    }
    (num, den)
}

/// `Q̃` bound to one sample, index vector, kernel and bandwidth.
#[derive(Debug, Clone)]
pub struct QEstimator {
    sorted: SortedIndex,
    /// Original row → sorted position.
    rank: Vec<usize>,
    num: Vec<f64>,
    den: Vec<f64>,
    kernel: ScaledKernel,
    floor: f64,
}

impl QEstimator {
    pub fn new(
        data: &Dataset,
        nuisances: &NuisanceFit,
        beta: &IndexVector,
        family: KernelFamily,
        h: Bandwidth,
    ) -> Result<Self> {
        if beta.dim() != data.d() {
            return Err(Error::DimensionMismatch {
                expected: data.d(),
                got: beta.dim(),
            });
        }
        let index = data.index_values(beta.as_slice());
        let (num, den) = pseudo_outcomes(data, nuisances);
        Self::from_parts(&index, &num, &den, family, h)
    }

    /// Builds the estimator from index values, pseudo-outcomes `Zᵢ` and weights `Aᵢ/π̂ᵢ`.
    pub fn from_parts(
        index: &[f64],
        num: &[f64],
        den: &[f64],
        family: KernelFamily,
        h: Bandwidth,
    ) -> Result<Self> {
        let n = index.len();
        if n == 0 || num.len() != n || den.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: num.len().min(den.len()),
            });
        }
        if index.iter().chain(num).chain(den).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q estimator inputs"));
        }
        let sorted = SortedIndex::new(index);
        let mut rank = vec![0; n];
        for (pos, &row) in sorted.order().iter().enumerate() {
            rank[row] = pos;
        }
        Ok(QEstimator {
            num: sorted.permute(num),
            den: sorted.permute(den),
            sorted,
            rank,
            kernel: ScaledKernel::new(family, h),
            floor: DEGENERACY_FLOOR * n as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.num.len()
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.kernel.h
    }

    pub fn family(&self) -> KernelFamily {
        self.kernel.family
    }

    /// Index values in ascending order.
    pub fn sorted_index(&self) -> &[f64] {
        self.sorted.values()
    }

    /// Same sample and pseudo-outcomes at another bandwidth.
    pub fn with_bandwidth(&self, h: Bandwidth) -> Self {
        QEstimator {
            kernel: ScaledKernel::new(self.kernel.family, h),
            ..self.clone()
        }
    }

    fn ratio(&self, t: f64, skip: Option<usize>) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::NonFinite("Q evaluation point"));
        }
        let xs = self.sorted.values();
        let mut top = 0.0;
        let mut bottom = 0.0;
        for pos in self.sorted.window(t, self.kernel.reach()) {
            if Some(pos) == skip {
                continue;
            }
            let w = self.kernel.weight(xs[pos] - t);
            top += w * self.num[pos];
            bottom += w * self.den[pos];
        }
        if bottom < self.floor {
            return Err(Error::NoSupport { t });
        }
        Ok(top / bottom)
    }

    /// `Q̃(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.ratio(t, None)
    }

    /// `Q̃₋ⱼ(t)`: the same ratio with row `j` removed from both sums.
    pub fn eval_loo(&self, j: usize, t: f64) -> Result<f64> {
        if j >= self.n() {
            return Err(Error::InvalidInput(format!("row {j} out of range")));
        }
        self.ratio(t, Some(self.rank[j]))
    }

    /// Kernel weight sum `Σ K_h(tᵢ − t)`, i.e. `n · f̂(t)`.
    pub fn density_mass(&self, t: f64) -> f64 {
        let xs = self.sorted.values();
        self.sorted
            .window(t, self.kernel.reach())
            .map(|pos| self.kernel.weight(xs[pos] - t))
            .sum()
    }

    /// Leave-one-out prediction error `CV(h)` at this estimator's bandwidth,
    /// together with the number of rows whose window was empty.
    pub fn loo_cv(&self) -> (f64, usize) {
        let xs = self.sorted.values();
        let mut acc = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for pos in 0..self.n() {
            match self.ratio(xs[pos], Some(pos)) {
                Ok(q) => {
                    let r = self.num[pos] - self.den[pos] * q;
                    acc += r * r;
                    used += 1;
                }
                Err(_) => skipped += 1,
            }
        }
        let cv = if used == 0 { f64::INFINITY } else { acc / used as f64 };
        (cv, skipped)
    }
}

/// Nadaraya–Watson estimate of `E(X_L | βᵀX = t)` for the trailing `d − 1` columns.
pub fn cond_mean_xl(
    data: &Dataset,
    beta: &IndexVector,
    family: KernelFamily,
    h: Bandwidth,
    t: f64,
) -> Result<Vec<f64>> {
    if beta.dim() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            got: beta.dim(),
        });
    }
    let k = ScaledKernel::new(family, h);
    let d = data.d();
    let mut acc = vec![0.0; d - 1];
    let mut mass = 0.0;
    for row in data.rows() {
        let idx: f64 = row.iter().zip(beta.as_slice()).map(|(x, b)| x * b).sum();
        let w = k.weight(idx - t);
        if w == 0.0 {
            continue;
        }
        mass += w;
        for (a, x) in acc.iter_mut().zip(&row[1..]) {
            *a += w * x;
        }
    }
    if mass < DEGENERACY_FLOOR * data.n() as f64 {
        return Err(Error::NoSupport { t });
    }
    Ok(acc.into_iter().map(|a| a / mass).collect())
}

/// One row of the cross-validation diagnostics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub h: f64,
    pub cv: f64,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub h_opt: Bandwidth,
    pub table: Vec<CvRow>,
}

impl CvResult {
    /// CSV with header `h,cv,n_skipped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,cv,n_skipped\n");
        for row in &self.table {
            out.push_str(&format!("{:.17e},{:.17e},{}\n", row.h, row.cv, row.n_skipped));
        }
        out
    }
}

/// Maximum share of rows allowed to have an empty leave-one-out window.
const CV_MAX_SKIPPED: f64 = 0.10;

/// Minimizes the leave-one-out `CV(h)` over `grid`; ties go to the smaller `h`.
///
/// A grid point whose leave-one-out windows are empty for more than 10% of
/// the rows is reported with `cv = inf` and never selected.
pub fn cv_bandwidth(base: &QEstimator, grid: &[Bandwidth]) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty bandwidth grid".into()));
    }
    let n = base.n() as f64;
    let table: Vec<CvRow> = grid
        .iter()
        .map(|&h| {
            let (cv, n_skipped) = base.with_bandwidth(h).loo_cv();
            let cv = if n_skipped as f64 > CV_MAX_SKIPPED * n { f64::INFINITY } else { cv };
            CvRow {
                h: h.get(),
                cv,
                n_skipped,
            }
        })
        .collect();
    let best = table
        .iter()
        .filter(|r| r.cv.is_finite())
        .min_by(|a, b| a.cv.total_cmp(&b.cv).then(a.h.total_cmp(&b.h)))
        .ok_or(Error::TooManyDegenerate {
            degenerate: grid.len(),
            total: grid.len(),
            context: "cross-validation grid",
        })?;
    Ok(CvResult {
        h_opt: Bandwidth::new(best.h)?,
        table,
    })
}

/// `cv_bandwidth` on the sample bound to `data`, `nuisances` and `beta`.
pub fn cv_bandwidth_for(
    data: &Dataset,
    nuisances: &NuisanceFit,
    beta: &IndexVector,
    family: KernelFamily,
    grid: &[Bandwidth],
) -> Result<CvResult> {
    let first = *grid
        .first()
        .ok_or_else(|| Error::InvalidInput("empty bandwidth grid".into()))?;
    let base = QEstimator::new(data, nuisances, beta, family, first)?;
    cv_bandwidth(&base, grid)
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `k` log-spaced bandwidths spanning `[lo, hi] · σ̂ · n^{-1/5}`.
pub fn default_cv_grid(index_sd: f64, n: usize, lo: f64, hi: f64, k: usize) -> Result<Vec<Bandwidth>> {
    if !(lo > 0.0 && hi >= lo && index_sd > 0.0) || k == 0 {
        return Err(Error::InvalidInput("invalid bandwidth grid settings".into()));
    }
    let scale = index_sd * (n as f64).powf(-0.2);
    if k == 1 {
        return Ok(vec![Bandwidth::new(lo * scale)?]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| {
            let f = (llo + (lhi - llo) * i as f64 / (k - 1) as f64).exp();
            Bandwidth::new(f * scale)
        })
        .collect()
}

/// Pilot bandwidth `c · σ̂ · n^{-1/3}` used while solving for `β`.
pub fn pilot_bandwidth(c: f64, index_sd: f64, n: usize) -> Result<Bandwidth> {
    Bandwidth::new(c * index_sd * (n as f64).powf(-1.0 / 3.0))
}
