//! Maximal correlation via Alternating Conditional Expectations (ACE).
//!
//! The conditional expectations are estimated with an equal-frequency
//! binned-mean smoother: observations are grouped into `K` bins of (nearly)
//! equal size by rank, with tied values always sharing a bin, and the smoothed
//! value at a point is the bin means linearly interpolated between bin
//! centres on the rank scale (flat beyond the outermost centres). Working on
//! ranks makes the estimate invariant to strictly increasing transforms of
//! either variable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{geohash_decode, BinId, BinningError};
use crate::missingness::CmrSeries;

#[derive(Debug, Error, PartialEq)]
pub enum MaxCorrError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFewPoints(usize),
    #[error("constant input vector")]
    ConstantInput,
    #[error("non-finite input value")]
    NonFinite,
    #[error("no coordinates for bin {0}")]
    MissingBinCoordinates(BinId),
    #[error("invalid ACE configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Binning(#[from] BinningError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmootherBins {
    /// `max(2, min(50, floor(cbrt(n)) - 1))`.
    Auto,
    Fixed(usize),
}

impl SmootherBins {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            SmootherBins::Auto => (integer_cbrt(n).saturating_sub(1)).clamp(2, 50),
            SmootherBins::Fixed(k) => k,
        }
    }
}

fn integer_cbrt(n: usize) -> usize {
    let mut r = (n as f64).cbrt().round() as usize;
    while r * r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceConfig {
    pub max_iterations: usize,
    /// Stop once the achieved correlation changes by less than this.
    pub tolerance: f64,
    pub smoother_bins: SmootherBins,
}

impl Default for AceConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            smoother_bins: SmootherBins::Auto,
        }
    }
}

impl AceConfig {
    pub fn validate(&self) -> Result<(), MaxCorrError> {
        if self.max_iterations == 0 {
            return Err(MaxCorrError::InvalidConfig("max_iterations must be >= 1"));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(MaxCorrError::InvalidConfig("tolerance must be > 0"));
        }
        if let SmootherBins::Fixed(k) = self.smoother_bins {
            if k < 2 {
                return Err(MaxCorrError::InvalidConfig("smoother_bins must be >= 2"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxCorrResult {
    pub value: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Precomputed binning of one variable.
struct BinnedSmoother {
    bin_of: Vec<usize>,
    counts: Vec<usize>,
    rank: Vec<f64>,
    /// (centre rank, bin) for non-empty bins, ascending.
    centres: Vec<(f64, usize)>,
}

impl BinnedSmoother {
    fn new(v: &[f64], k: usize) -> Self {
        let n = v.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let rank = average_ranks(v);
        let mut bin_of = vec![0usize; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let b = (i * k / n).min(k - 1);
            for &idx in &order[i..=j] {
                bin_of[idx] = b;
            }
            i = j + 1;
        }
        let mut counts = vec![0usize; k];
        let mut rank_sum = vec![0.0; k];
        for (idx, &b) in bin_of.iter().enumerate() {
            counts[b] += 1;
            rank_sum[b] += rank[idx];
        }
        let centres = (0..k)
            .filter(|&b| counts[b] > 0)
            .map(|b| (rank_sum[b] / counts[b] as f64, b))
            .collect();
        Self {
            bin_of,
            counts,
            rank,
            centres,
        }
    }

    fn smooth(&self, t: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.counts.len()];
        for (&b, &x) in self.bin_of.iter().zip(t) {
            sums[b] += x;
        }
        let knots: Vec<(f64, f64)> = self
            .centres
            .iter()
            .map(|&(c, b)| (c, sums[b] / self.counts[b] as f64))
            .collect();
        self.rank.iter().map(|&r| interpolate(&knots, r)).collect()
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|&(c, _)| c < x);
    let (x0, y0) = knots[hi - 1];
    let (x1, y1) = knots[hi];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Centres and scales to unit (population) variance; `None` if constant.
fn standardize(v: &mut [f64]) -> Option<()> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var.is_nan() || var <= 1e-24 {
        return None;
    }
    let sd = var.sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    Some(())
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), MaxCorrError> {
    if x.len() != y.len() {
        return Err(MaxCorrError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MaxCorrError::TooFewPoints(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MaxCorrError::NonFinite);
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(MaxCorrError::ConstantInput);
    }
    Ok(())
}

pub fn maximal_correlation(
    x: &[f64],
    y: &[f64],
    cfg: &AceConfig,
) -> Result<MaxCorrResult, MaxCorrError> {
    cfg.validate()?;
    check_inputs(x, y)?;
    let n = x.len();
    let k = cfg.smoother_bins.resolve(n);
    let sx = BinnedSmoother::new(x, k);
    let sy = BinnedSmoother::new(y, k);

    let mut g = sy.rank.clone();
    standardize(&mut g).ok_or(MaxCorrError::ConstantInput)?;

    let mut prev: Option<f64> = None;
    let mut corr = 0.0;
    for it in 1..=cfg.max_iterations {
        let mut f = sx.smooth(&g);
        if standardize(&mut f).is_none() {
            // E[g | x] is constant: no dependence left to capture.
            return Ok(MaxCorrResult {
                value: 0.0,
                iterations_used: it,
                converged: true,
            });
        }
        let mut next_g = sy.smooth(&f);
        if standardize(&mut next_g).is_none() {
            return Ok(MaxCorrResult {
                value: 0.0,
                iterations_used: it,
                converged: true,
            });
        }
        g = next_g;
        corr = f.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        if let Some(p) = prev {
            if (corr - p).abs() < cfg.tolerance {
                return Ok(MaxCorrResult {
                    value: corr.abs().clamp(0.0, 1.0),
                    iterations_used: it,
                    converged: true,
                });
            }
        }
        prev = Some(corr);
    }
    Ok(MaxCorrResult {
        value: corr.abs().clamp(0.0, 1.0),
        iterations_used: cfg.max_iterations,
        converged: false,
    })
}

/// Maximal correlation between bin order and rate of a CMR/dCMR series.
pub fn series_maxcorr(series: &CmrSeries, cfg: &AceConfig) -> Result<MaxCorrResult, MaxCorrError> {
    if series.points.len() < 3 {
        return Err(MaxCorrError::TooFewPoints(series.points.len()));
    }
    let x: Vec<f64> = (0..series.points.len()).map(|i| i as f64).collect();
    maximal_correlation(&x, &series.rates(), cfg)
}

/// Mean of the latitude-vs-rate and longitude-vs-rate maximal correlations.
pub fn latlon_maxcorr(
    series: &CmrSeries,
    lat_of_bin: &BTreeMap<BinId, f64>,
    lon_of_bin: &BTreeMap<BinId, f64>,
    cfg: &AceConfig,
) -> Result<MaxCorrResult, MaxCorrError> {
    if series.points.len() < 3 {
        return Err(MaxCorrError::TooFewPoints(series.points.len()));
    }
    let mut lat = Vec::with_capacity(series.points.len());
    let mut lon = Vec::with_capacity(series.points.len());
    for p in &series.points {
        let missing = || MaxCorrError::MissingBinCoordinates(p.bin.clone());
        lat.push(*lat_of_bin.get(&p.bin).ok_or_else(missing)?);
        lon.push(*lon_of_bin.get(&p.bin).ok_or_else(missing)?);
    }
    let rate = series.rates();
    let a = maximal_correlation(&lat, &rate, cfg)?;
    let b = maximal_correlation(&lon, &rate, cfg)?;
    Ok(MaxCorrResult {
        value: (a.value + b.value) / 2.0,
        iterations_used: a.iterations_used.max(b.iterations_used),
        converged: a.converged && b.converged,
    })
}

/// Latitude and longitude per bin.
pub type BinCoordinates = (BTreeMap<BinId, f64>, BTreeMap<BinId, f64>);

/// Cell-centre coordinates of every geohash bin in a series.
pub fn geohash_centres(series: &CmrSeries) -> Result<BinCoordinates, MaxCorrError> {
    let mut lat = BTreeMap::new();
    let mut lon = BTreeMap::new();
    for p in &series.points {
        let (la, lo) = geohash_decode(p.bin.as_str())?.center();
        lat.insert(p.bin.clone(), la);
        lon.insert(p.bin.clone(), lo);
    }
    Ok((lat, lon))
}
