//! Search-rate disparity, sharp bounds on the search ATE as a function of the
//! share `rho` of racially discriminatory stops, and NA-race augmentation.
//!
//! Estimand: over the pooled stopped population with Black share `pi`,
//!
//! ```text
//! pi * (p1 - E[search as white | Black stop]) + (1 - pi) * (E[search as Black | white stop] - p0)
//! ```
//!
//! A fraction `rho` of Black stops would not have happened for a white
//! driver, so their counterfactual search is 0; the rest keep the white rate
//! `p0`. The only unidentified quantity is `a`, the as-if-Black search rate of
//! white stops, tied to the observed `p1 = (1 - rho) * a + rho * s` for some
//! stratum mean `s` in `[0, 1]`. The bounds are the extremes of a linear
//! objective over that feasible interval for `a`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Hypergeometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RHOS: [f64; 3] = [0.25, 0.5, 0.75];
pub const DEFAULT_PROPORTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AteError {
    #[error("no recorded Black stops")]
    NoBlackStops,
    #[error("no recorded white stops")]
    NoWhiteStops,
    #[error("rho must lie in [0, 1], got {0}")]
    InvalidRho(f64),
    #[error("proportion must lie in [0, 1], got {0}")]
    InvalidProportion(f64),
    #[error("mixing weight must lie in [0, 1], got {0}")]
    InvalidMixingWeight(f64),
    #[error("searched count exceeds stops for {0}")]
    InconsistentCounts(&'static str),
    #[error("hypergeometric draw failed: {0}")]
    Sampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StopSearchCounts {
    pub black_searched: u64,
    pub black_stops: u64,
    pub white_searched: u64,
    pub white_stops: u64,
    pub na_searched: u64,
    pub na_stops: u64,
}

impl StopSearchCounts {
    pub fn validate(&self) -> Result<(), AteError> {
        if self.black_searched > self.black_stops {
            return Err(AteError::InconsistentCounts("Black"));
        }
        if self.white_searched > self.white_stops {
            return Err(AteError::InconsistentCounts("white"));
        }
        if self.na_searched > self.na_stops {
            return Err(AteError::InconsistentCounts("NA"));
        }
        Ok(())
    }

    pub fn total_stops(&self) -> u64 {
        self.black_stops + self.white_stops + self.na_stops
    }

    pub fn total_searched(&self) -> u64 {
        self.black_searched + self.white_searched + self.na_searched
    }

    /// Search rates `(p1, p0)` for Black and white stops.
    pub fn rates(&self) -> Result<(f64, f64), AteError> {
        self.validate()?;
        if self.black_stops == 0 {
            return Err(AteError::NoBlackStops);
        }
        if self.white_stops == 0 {
            return Err(AteError::NoWhiteStops);
        }
        Ok((
            self.black_searched as f64 / self.black_stops as f64,
            self.white_searched as f64 / self.white_stops as f64,
        ))
    }
}

/// Black minus white search rate.
pub fn naive_search_disparity(counts: &StopSearchCounts) -> Result<f64, AteError> {
    let (p1, p0) = counts.rates()?;
    Ok(p1 - p0)
}

/// Which population the ATE averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimand {
    /// Black and white stops pooled, weighted by their shares.
    #[default]
    Pooled,
    /// Black stops only (`pi = 1`).
    BlackStops,
}

impl std::str::FromStr for Estimand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(Estimand::Pooled),
            "black-stops" => Ok(Estimand::BlackStops),
            other => Err(format!("unknown estimand \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub rho: f64,
    pub naive: f64,
    pub lower: f64,
    pub upper: f64,
    pub pi: f64,
}

/// Feasible range of the as-if-Black search rate among white stops.
pub fn feasible_counterfactual_rate(p1: f64, rho: f64) -> (f64, f64) {
    if rho >= 1.0 {
        return (0.0, 1.0);
    }
    let keep = 1.0 - rho;
    let lo = ((p1 - rho) / keep).max(0.0);
    let hi = (p1 / keep).min(1.0);
    (lo, hi)
}

/// Sharp bounds from rates: `(lower, upper)`.
pub fn bounds_from_rates(p1: f64, p0: f64, pi: f64, rho: f64) -> Result<(f64, f64), AteError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(AteError::InvalidRho(rho));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(AteError::InvalidMixingWeight(pi));
    }
    let black_term = pi * (p1 - (1.0 - rho) * p0);
    let objective = |a: f64| black_term + (1.0 - pi) * (a - p0);
    // Linear in `a`: the extremes sit at the interval ends.
    let (a_lo, a_hi) = feasible_counterfactual_rate(p1, rho);
    let (v_lo, v_hi) = (objective(a_lo), objective(a_hi));
    Ok((v_lo.min(v_hi), v_lo.max(v_hi)))
}

pub fn sharp_ate_bounds(
    counts: &StopSearchCounts,
    rho: f64,
    estimand: Estimand,
) -> Result<BoundsResult, AteError> {
    let (p1, p0) = counts.rates()?;
    let pi = match estimand {
        Estimand::Pooled => {
            counts.black_stops as f64 / (counts.black_stops + counts.white_stops) as f64
        }
        Estimand::BlackStops => 1.0,
    };
    let (lower, upper) = bounds_from_rates(p1, p0, pi, rho)?;
    Ok(BoundsResult {
        rho,
        naive: p1 - p0,
        lower,
        upper,
        pi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentationPlan {
    IgnoreNa,
    /// Random split with the share of NA rows sent to white; seeded by the caller.
    Proportion {
        p_white: f64,
    },
    /// Random split with its own seed.
    Random {
        p_white: f64,
        seed: u64,
    },
    ExtremeSearchedToBlack,
    ExtremeSearchedToWhite,
}

impl AugmentationPlan {
    pub fn label(&self) -> &'static str {
        match self {
            AugmentationPlan::IgnoreNa => "ignore_na",
            AugmentationPlan::Proportion { .. } => "proportion",
            AugmentationPlan::Random { .. } => "random",
            AugmentationPlan::ExtremeSearchedToBlack => "extreme_searched_to_black",
            AugmentationPlan::ExtremeSearchedToWhite => "extreme_searched_to_white",
        }
    }

    pub fn p_white(&self) -> Option<f64> {
        match *self {
            AugmentationPlan::Proportion { p_white } | AugmentationPlan::Random { p_white, .. } => {
                Some(p_white)
            }
            _ => None,
        }
    }

    pub fn is_random(&self) -> bool {
        self.p_white().is_some()
    }

    pub fn validate(&self) -> Result<(), AteError> {
        match self.p_white() {
            Some(p) if !(0.0..=1.0).contains(&p) => Err(AteError::InvalidProportion(p)),
            _ => Ok(()),
        }
    }
}

/// Seed for one `(plan, draw)` cell: a ChaCha stream keyed by the run seed,
/// with the stream number `plan_index << 32 | draw`.
pub fn cell_rng(run_seed: u64, plan_index: u32, draw: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(((plan_index as u64) << 32) | draw as u64);
    rng
}

/// Assigns NA-race stops to the Black and white groups; NA counts are zeroed.
///
/// `rng` drives `Proportion` plans; `Random` plans use their own seed.
pub fn apply_augmentation(
    counts: &StopSearchCounts,
    plan: &AugmentationPlan,
    rng: &mut ChaCha8Rng,
) -> Result<StopSearchCounts, AteError> {
    plan.validate()?;
    counts.validate()?;
    let mut out = *counts;
    if counts.na_stops == 0 || *plan == AugmentationPlan::IgnoreNa {
        return Ok(out);
    }
    let (ns, n) = (counts.na_searched, counts.na_stops);
    let (to_white, searched_to_white) = match *plan {
        AugmentationPlan::IgnoreNa => unreachable!(),
        AugmentationPlan::ExtremeSearchedToBlack => (n - ns, 0),
        AugmentationPlan::ExtremeSearchedToWhite => (ns, ns),
        AugmentationPlan::Proportion { p_white } => {
            let k = (p_white * n as f64).round() as u64;
            (k, draw_searched(n, ns, k, rng)?)
        }
        AugmentationPlan::Random { p_white, seed } => {
            let k = (p_white * n as f64).round() as u64;
            let mut own = ChaCha8Rng::seed_from_u64(seed);
            (k, draw_searched(n, ns, k, &mut own)?)
        }
    };
    out.white_stops += to_white;
    out.white_searched += searched_to_white;
    out.black_stops += n - to_white;
    out.black_searched += ns - searched_to_white;
    out.na_stops = 0;
    out.na_searched = 0;
    Ok(out)
}

/// Searched rows among `k` drawn without replacement from `n` rows, `ns` searched.
fn draw_searched(n: u64, ns: u64, k: u64, rng: &mut ChaCha8Rng) -> Result<u64, AteError> {
    if k == 0 || ns == 0 {
        return Ok(0);
    }
    if k == n {
        return Ok(ns);
    }
    let dist = Hypergeometric::new(n, ns, k).map_err(|e| AteError::Sampling(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteRow {
    pub plan: String,
    pub p_white: Option<f64>,
    pub draw: u32,
    pub rho: f64,
    pub naive: f64,
    pub lower: f64,
    pub upper: f64,
    pub pi: f64,
}

/// The standard plan list: ignore-NA, every proportion, then both extremes.
pub fn standard_plans(proportions: &[f64], extremes: bool) -> Vec<AugmentationPlan> {
    let mut plans = vec![AugmentationPlan::IgnoreNa];
    plans.extend(
        proportions
            .iter()
            .map(|&p_white| AugmentationPlan::Proportion { p_white }),
    );
    if extremes {
        plans.push(AugmentationPlan::ExtremeSearchedToBlack);
        plans.push(AugmentationPlan::ExtremeSearchedToWhite);
    }
    plans
}

/// Bounds for every (plan, draw, rho) cell; `Proportion` plans are drawn
/// `draws` times, other plans once. Output is ordered by plan, draw, rho.
pub fn ate_sensitivity_run(
    counts: &StopSearchCounts,
    rhos: &[f64],
    plans: &[AugmentationPlan],
    draws: u32,
    seed: u64,
    estimand: Estimand,
) -> Result<Vec<AteRow>, AteError> {
    for &rho in rhos {
        if !(0.0..=1.0).contains(&rho) {
            return Err(AteError::InvalidRho(rho));
        }
    }
    let cells: Vec<(u32, &AugmentationPlan, u32)> = plans
        .iter()
        .enumerate()
        .flat_map(|(i, plan)| {
            let n = if matches!(plan, AugmentationPlan::Proportion { .. }) {
                draws.max(1)
            } else {
                1
            };
            (0..n).map(move |d| (i as u32, plan, d))
        })
        .collect();
    let per_cell: Vec<Vec<AteRow>> = cells
        .par_iter()
        .map(|&(plan_index, plan, draw)| {
            let mut rng = cell_rng(seed, plan_index, draw);
            let augmented = apply_augmentation(counts, plan, &mut rng)?;
            rhos.iter()
                .map(|&rho| {
                    let b = sharp_ate_bounds(&augmented, rho, estimand)?;
                    Ok(AteRow {
                        plan: plan.label().to_string(),
                        p_white: plan.p_white(),
                        draw,
                        rho,
                        naive: b.naive,
                        lower: b.lower,
                        upper: b.upper,
                        pi: b.pi,
                    })
                })
                .collect()
        })
        .collect::<Result<_, AteError>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(bs: u64, bst: u64, ws: u64, wst: u64, ns: u64, nst: u64) -> StopSearchCounts {
        StopSearchCounts {
            black_searched: bs,
            black_stops: bst,
            white_searched: ws,
            white_stops: wst,
            na_searched: ns,
            na_stops: nst,
        }
    }

    /// Grid over `a` in [0, 1] with step 1e-4, written independently of the
    /// closed form. The edges of the feasible run of grid points are refined by
    /// bisection on the feasibility predicate, so interior endpoints are exact
    /// to ~1e-15. Needs `rho > 0` (at `rho = 0` the feasible set is a point).
    pub(crate) fn grid_oracle(p1: f64, p0: f64, pi: f64, rho: f64) -> (f64, f64) {
        assert!(rho > 0.0);
        let feasible = |a: f64| {
            if rho >= 1.0 {
                return true;
            }
            let s = (p1 - (1.0 - rho) * a) / rho;
            (0.0..=1.0).contains(&s)
        };
        let objective = |a: f64| pi * (p1 - (1.0 - rho) * p0) + (1.0 - pi) * (a - p0);
        let step = 1e-4;
        let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 * step).collect();
        let idx: Vec<usize> = (0..grid.len()).filter(|&i| feasible(grid[i])).collect();
        let refine = |mut good: f64, mut bad: f64| {
            for _ in 0..80 {
                let mid = 0.5 * (good + bad);
                if feasible(mid) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            good
        };
        let mut candidates: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let (first, last) = (idx[0], idx[idx.len() - 1]);
        if first > 0 {
            candidates.push(refine(grid[first], grid[first - 1]));
        }
        if last + 1 < grid.len() {
            candidates.push(refine(grid[last], grid[last + 1]));
        }
        let values: Vec<f64> = candidates.into_iter().map(objective).collect();
        (
            values.iter().cloned().fold(f64::INFINITY, f64::min),
            values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    #[test]
    fn naive_arithmetic() {
        assert!(
            (naive_search_disparity(&counts(30, 100, 10, 100, 0, 0)).unwrap() - 0.2).abs() < 1e-15
        );
        assert_eq!(
            naive_search_disparity(&counts(3, 10, 30, 100, 0, 0)).unwrap(),
            0.0
        );
        assert_eq!(
            naive_search_disparity(&counts(0, 0, 10, 100, 0, 0)),
            Err(AteError::NoBlackStops)
        );
    }

    #[test]
    fn rho_zero_collapses() {
        let b = sharp_ate_bounds(&counts(37, 120, 11, 300, 0, 0), 0.0, Estimand::Pooled).unwrap();
        assert!((b.lower - b.naive).abs() <= 1e-12);
        assert!((b.upper - b.naive).abs() <= 1e-12);
    }

    #[test]
    fn worked_example_half_rho() {
        let (lo, hi) = bounds_from_rates(0.3, 0.1, 0.5, 0.5).unwrap();
        let (glo, ghi) = grid_oracle(0.3, 0.1, 0.5, 0.5);
        assert!(
            (lo - 0.075).abs() < 1e-12 && (hi - 0.375).abs() < 1e-12,
            "{lo} {hi}"
        );
        assert!((lo - glo).abs() < 1e-6 && (hi - ghi).abs() < 1e-6);
        assert_eq!(feasible_counterfactual_rate(0.3, 0.5), (0.0, 0.6));
    }

    #[test]
    fn worked_example_rho_one() {
        let (lo, hi) = bounds_from_rates(0.5, 0.2, 0.5, 1.0).unwrap();
        let (glo, ghi) = grid_oracle(0.5, 0.2, 0.5, 1.0);
        assert!((lo - 0.15).abs() < 1e-12 && (hi - 0.65).abs() < 1e-12);
        assert!((lo - glo).abs() < 1e-6 && (hi - ghi).abs() < 1e-6);
    }

    #[test]
    fn black_stops_estimand_is_a_point() {
        let b =
            sharp_ate_bounds(&counts(30, 100, 10, 100, 0, 0), 0.5, Estimand::BlackStops).unwrap();
        assert_eq!(b.pi, 1.0);
        assert!((b.lower - b.upper).abs() < 1e-15);
        assert!((b.lower - (0.3 - 0.5 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn invalid_rho_and_proportion() {
        assert_eq!(
            bounds_from_rates(0.3, 0.1, 0.5, 1.5),
            Err(AteError::InvalidRho(1.5))
        );
        let mut rng = cell_rng(1, 0, 0);
        assert_eq!(
            apply_augmentation(
                &counts(1, 2, 1, 2, 1, 2),
                &AugmentationPlan::Proportion { p_white: 1.2 },
                &mut rng
            ),
            Err(AteError::InvalidProportion(1.2))
        );
    }

    #[test]
    fn extreme_to_black_moves_searched_rows() {
        let c = counts(20, 200, 30, 600, 10, 100);
        let mut rng = cell_rng(1, 0, 0);
        let out =
            apply_augmentation(&c, &AugmentationPlan::ExtremeSearchedToBlack, &mut rng).unwrap();
        assert_eq!(out, counts(30, 210, 30, 690, 0, 0));
        let out =
            apply_augmentation(&c, &AugmentationPlan::ExtremeSearchedToWhite, &mut rng).unwrap();
        assert_eq!(out, counts(20, 290, 40, 610, 0, 0));
    }

    #[test]
    fn no_na_is_unchanged_and_full_proportion() {
        let c = counts(20, 200, 30, 600, 0, 0);
        let mut rng = cell_rng(1, 0, 0);
        for plan in standard_plans(&DEFAULT_PROPORTIONS, true) {
            assert_eq!(apply_augmentation(&c, &plan, &mut rng).unwrap(), c);
        }
        let c = counts(20, 200, 30, 600, 7, 50);
        let out = apply_augmentation(&c, &AugmentationPlan::Proportion { p_white: 1.0 }, &mut rng)
            .unwrap();
        assert_eq!(out, counts(20, 200, 37, 650, 0, 0));
        let out = apply_augmentation(&c, &AugmentationPlan::Proportion { p_white: 0.0 }, &mut rng)
            .unwrap();
        assert_eq!(out, counts(27, 250, 30, 600, 0, 0));
    }

    #[test]
    fn random_plan_is_seeded() {
        let c = counts(20, 200, 30, 600, 40, 400);
        let plan = AugmentationPlan::Random {
            p_white: 0.5,
            seed: 9,
        };
        let a = apply_augmentation(&c, &plan, &mut cell_rng(1, 0, 0)).unwrap();
        let b = apply_augmentation(&c, &plan, &mut cell_rng(2, 3, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.white_stops, 800);
    }

    #[test]
    fn sweep_shapes_and_determinism() {
        let c = counts(20, 200, 30, 600, 40, 400);
        let rows = ate_sensitivity_run(
            &c,
            &DEFAULT_RHOS,
            &[AugmentationPlan::IgnoreNa],
            5,
            7,
            Estimand::Pooled,
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows
            .iter()
            .all(|r| r.lower <= r.naive && r.naive <= r.upper));

        let plans = standard_plans(&DEFAULT_PROPORTIONS, true);
        let a = ate_sensitivity_run(&c, &DEFAULT_RHOS, &plans, 4, 11, Estimand::Pooled).unwrap();
        let b = ate_sensitivity_run(&c, &DEFAULT_RHOS, &plans, 4, 11, Estimand::Pooled).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3 * (1 + 5 * 4 + 2));
    }

    #[test]
    fn mostly_unsearched_na_to_black_dilutes_p1() {
        // p1 = 0.3, NA search rate 0.02.
        let c = counts(60, 200, 50, 500, 2, 100);
        let base = naive_search_disparity(&c).unwrap();
        let mut rng = cell_rng(5, 1, 0);
        let aug = apply_augmentation(&c, &AugmentationPlan::Proportion { p_white: 0.0 }, &mut rng)
            .unwrap();
        let after = naive_search_disparity(&aug).unwrap();
        assert!((after - (62.0 / 300.0 - 0.1)).abs() < 1e-12);
        assert!(after < base);
    }
}
