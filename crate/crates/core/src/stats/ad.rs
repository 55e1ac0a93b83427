//! Anderson-Darling goodness-of-fit test against a fully specified null,
//! with p-values from a Monte Carlo null distribution.

use rayon::prelude::*;
use statrs::function::erf::erfc;

use super::stream::{purpose, DrawSource, DrawStream, StreamKey};
use crate::error::{Error, Result};

/// Lower clamp applied to `Φ` and `1 - Φ` before taking logarithms.
pub const CDF_FLOOR: f64 = 1e-300;

/// The two null hypotheses used for the coarse-path draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullDistribution {
    StandardNormal,
    UnitExponential,
}

impl NullDistribution {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::StandardNormal => 0.5 * erfc(-x / std::f64::consts::SQRT_2),
            Self::UnitExponential => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x).exp_m1()
                }
            }
        }
    }

    /// Survival function `1 - Φ(x)`, evaluated without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Self::StandardNormal => 0.5 * erfc(x / std::f64::consts::SQRT_2),
            Self::UnitExponential => {
                if x <= 0.0 {
                    1.0
                } else {
                    (-x).exp()
                }
            }
        }
    }

    pub fn sample<S: DrawSource>(&self, src: &mut S) -> f64 {
        match self {
            Self::StandardNormal => src.normal(),
            Self::UnitExponential => src.exponential(),
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Self::StandardNormal => 1,
            Self::UnitExponential => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdResult {
    pub a2: f64,
    pub p: f64,
    pub n: usize,
}

/// Right-continuous empirical CDF over a sorted copy of the samples.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empirical CDF of an empty sample".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("NaN in sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// `A²` from the order-statistic form
/// `-N - (1/N) Σ (2i-1) [ln Φ(x_(i)) + ln(1 - Φ(x_(N+1-i)))]`,
/// with the null given by its CDF and survival function.
pub fn ad_statistic_with<F, G>(samples: &[f64], cdf: F, sf: G) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if samples.is_empty() {
        return Err(Error::InvalidArgument("Anderson-Darling statistic of an empty sample".into()));
    }
    if cdf(-1e300) == cdf(1e300) {
        return Err(Error::InvalidArgument("degenerate (constant) null CDF".into()));
    }
    let mut sorted = samples.to_vec();
    if sorted.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN in sample".into()));
    }
    sorted.sort_by(f64::total_cmp);
    Ok(a2_sorted(&sorted, &cdf, &sf))
}

fn a2_sorted<F, G>(sorted: &[f64], cdf: &F, sf: &G) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let n = sorted.len();
    let mut s = 0.0;
    for i in 0..n {
        let lo = cdf(sorted[i]).max(CDF_FLOOR).ln();
        let hi = sf(sorted[n - 1 - i]).max(CDF_FLOOR).ln();
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    (-(n as f64) - s / n as f64).max(0.0)
}

pub fn ad_statistic(samples: &[f64], null: NullDistribution) -> Result<f64> {
    ad_statistic_with(samples, |x| null.cdf(x), |x| null.sf(x))
}

/// Sorted Monte Carlo replicates of `A²` under a fully specified null for a
/// fixed sample size. Build once and reuse for many tests of that size.
#[derive(Debug, Clone)]
pub struct NullTable {
    null: NullDistribution,
    n: usize,
    replicates: Vec<f64>,
}

impl NullTable {
    pub fn build(null: NullDistribution, n: usize, b_reps: usize, seed: u64) -> Result<Self> {
        if b_reps < 1000 {
            return Err(Error::InvalidArgument(format!("need at least 1000 null replicates, got {b_reps}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("null table for an empty sample".into()));
        }
        let pair = (null.tag() << 48) | n as u64;
        let mut replicates: Vec<f64> = (0..b_reps as u64)
            .into_par_iter()
            .map(|r| {
                let mut src = DrawStream::new(seed, StreamKey::new(purpose::AD_NULL, pair, r));
                let mut xs: Vec<f64> = (0..n).map(|_| null.sample(&mut src)).collect();
                xs.sort_by(f64::total_cmp);
                a2_sorted(&xs, &|x| null.cdf(x), &|x| null.sf(x))
            })
            .collect();
        replicates.sort_by(f64::total_cmp);
        Ok(Self { null, n, replicates })
    }

    pub fn null(&self) -> NullDistribution {
        self.null
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// `(1 + #{replicate ≥ a2}) / (B + 1)`.
    pub fn p_value(&self, a2: f64) -> f64 {
        let below = self.replicates.partition_point(|&r| r < a2);
        let at_least = self.replicates.len() - below;
        (1 + at_least) as f64 / (self.replicates.len() + 1) as f64
    }

    pub fn test(&self, samples: &[f64]) -> Result<AdResult> {
        if samples.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "null table built for N = {}, got {} samples",
                self.n,
                samples.len()
            )));
        }
        let a2 = ad_statistic(samples, self.null)?;
        Ok(AdResult {
            a2,
            p: self.p_value(a2),
            n: self.n,
        })
    }
}

/// One-shot test: builds the null table for `samples.len()` and evaluates.
pub fn ad_test(samples: &[f64], null: NullDistribution, b_reps: usize, seed: u64) -> Result<AdResult> {
    NullTable::build(null, samples.len(), b_reps, seed)?.test(samples)
}
