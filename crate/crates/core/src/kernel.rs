//! Kernel functions, scaled kernel weights and kernel density estimation.
//!
//! Every nonparametric smoother in the crate is built from [`KernelFamily`]
//! and a [`Bandwidth`]. Scaled weights follow `K_h(u) = K(u / h) / h`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Beyond this many bandwidths the gaussian density underflows to exactly 0.0
/// in f64, so truncating the sum there changes nothing.
const GAUSSIAN_CUTOFF: f64 = 40.0;

/// Univariate second-order kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Epanechnikov,
    Quartic,
    /// Not compactly supported; provided as a smooth alternative.
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Epanechnikov,
        KernelFamily::Quartic,
        KernelFamily::Gaussian,
    ];

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                let v = 1.0 - u * u;
                if v > 0.0 {
                    0.75 * v
                } else {
                    0.0
                }
            }
            KernelFamily::Quartic => {
                let v = 1.0 - u * u;
                if v > 0.0 {
                    0.9375 * v * v
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
        }
    }

    /// Half-width of the region where `K` can be nonzero, in kernel units.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelFamily::Epanechnikov | KernelFamily::Quartic => 1.0,
            KernelFamily::Gaussian => GAUSSIAN_CUTOFF,
        }
    }

    pub fn is_compact(self) -> bool {
        !matches!(self, KernelFamily::Gaussian)
    }

    /// `∫ u² K(u) du`.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Epanechnikov => 0.2,
            KernelFamily::Quartic => 1.0 / 7.0,
            KernelFamily::Gaussian => 1.0,
        }
    }

    /// `∫ K(u)² du`.
    pub fn roughness(self) -> f64 {
        match self {
            KernelFamily::Epanechnikov => 0.6,
            KernelFamily::Quartic => 5.0 / 7.0,
            KernelFamily::Gaussian => 1.0 / (2.0 * PI.sqrt()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Quartic => "quartic",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            "quartic" | "biweight" => Ok(KernelFamily::Quartic),
            "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::InvalidInput(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Strictly positive, finite smoothing bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Bandwidth(h))
        } else {
            Err(Error::InvalidBandwidth(h))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        Bandwidth::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

/// A kernel family paired with a bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledKernel {
    pub family: KernelFamily,
    pub h: Bandwidth,
}

impl ScaledKernel {
    pub fn new(family: KernelFamily, h: Bandwidth) -> Self {
        ScaledKernel { family, h }
    }

    /// `K_h(u) = K(u / h) / h`.
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        let h = self.h.get();
        self.family.eval(u / h) / h
    }

    /// Distance beyond which `weight` is exactly zero.
    #[inline]
    pub fn reach(&self) -> f64 {
        self.family.support_radius() * self.h.get()
    }
}

/// Element `j` is `K((centers[j] - point) / h) / h`.
pub fn scaled_weights(
    family: KernelFamily,
    h: Bandwidth,
    centers: &[f64],
    point: f64,
) -> Result<Vec<f64>> {
    if centers.iter().any(|c| !c.is_finite()) || !point.is_finite() {
        return Err(Error::NonFinite("scaled_weights input"));
    }
    let k = ScaledKernel::new(family, h);
    Ok(centers.iter().map(|&c| k.weight(c - point)).collect())
}

/// Kernel density estimate `n⁻¹ Σ K_h(sample_j − point)`.
pub fn kde(family: KernelFamily, h: Bandwidth, sample: &[f64], point: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("kde on an empty sample".into()));
    }
    let k = ScaledKernel::new(family, h);
    let total: f64 = sample.iter().map(|&s| k.weight(s - point)).sum();
    Ok(total / sample.len() as f64)
}

/// Index values kept in ascending order so compact-kernel sums only touch the
/// observations inside the window.
#[derive(Debug, Clone)]
pub struct SortedIndex {
    values: Vec<f64>,
    order: Vec<usize>,
}

impl SortedIndex {
    pub fn new(values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let values = order.iter().map(|&i| values[i]).collect();
        SortedIndex { values, order }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted index values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Original row of each sorted position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Sorted positions whose value lies in `[t - reach, t + reach]`.
    pub fn window(&self, t: f64, reach: f64) -> Range<usize> {
        let lo = self.values.partition_point(|&v| v < t - reach);
        let hi = self.values.partition_point(|&v| v <= t + reach);
        lo..hi.max(lo)
    }

    /// Reorders `column` (in original row order) into sorted order.
    pub fn permute(&self, column: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| column[i]).collect()
    }
}
