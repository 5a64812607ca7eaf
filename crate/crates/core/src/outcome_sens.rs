//! Outcome-test disparity and its sensitivity to NA-race allocations.
//!
//! Searched drivers with an NA race label are split into `c` with contraband
//! and `m` without. An allocation `(a, b)` moves `a` of the former and `b` of
//! the latter into the Black group and the remainder into the white group.
//! Every allocation is a combination, so there are `(c + 1) * (m + 1)`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-county ceiling on evaluated allocations before grid thinning kicks in.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Exclusion {
    #[error("no searched Black drivers")]
    NoSearchedBlack,
    #[error("no searched white drivers")]
    NoSearchedWhite,
    #[error("allocation ({a}, {b}) exceeds NA counts ({c}, {m})")]
    AllocationOutOfBounds { a: u64, b: u64, c: u64, m: u64 },
}

impl Exclusion {
    /// Machine-readable reason tag.
    pub fn code(&self) -> &'static str {
        match self {
            Exclusion::NoSearchedBlack => "no_searched_black",
            Exclusion::NoSearchedWhite => "no_searched_white",
            Exclusion::AllocationOutOfBounds { .. } => "allocation_out_of_bounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RaceOutcomeCounts {
    pub group_id: String,
    pub black_hit: u64,
    pub black_miss: u64,
    pub white_hit: u64,
    pub white_miss: u64,
    /// NA-race searched drivers with contraband (`c`).
    pub na_hit: u64,
    /// NA-race searched drivers without contraband (`m`).
    pub na_miss: u64,
}

impl RaceOutcomeCounts {
    pub fn black_hit_rate(&self) -> Option<f64> {
        rate(self.black_hit, self.black_hit + self.black_miss)
    }

    pub fn white_hit_rate(&self) -> Option<f64> {
        rate(self.white_hit, self.white_hit + self.white_miss)
    }

    pub fn has_missingness(&self) -> bool {
        self.na_hit + self.na_miss > 0
    }
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationPair {
    /// NA-contraband drivers assigned to Black.
    pub a: u64,
    /// NA-no-contraband drivers assigned to Black.
    pub b: u64,
}

/// Black minus white hit rate after dropping NA-race drivers.
pub fn disparity_ignore_na(counts: &RaceOutcomeCounts) -> Result<f64, Exclusion> {
    let black = counts.black_hit_rate().ok_or(Exclusion::NoSearchedBlack)?;
    let white = counts.white_hit_rate().ok_or(Exclusion::NoSearchedWhite)?;
    Ok(black - white)
}

pub fn augmented_disparity(
    counts: &RaceOutcomeCounts,
    alloc: AllocationPair,
) -> Result<f64, Exclusion> {
    let (c, m) = (counts.na_hit, counts.na_miss);
    if alloc.a > c || alloc.b > m {
        return Err(Exclusion::AllocationOutOfBounds {
            a: alloc.a,
            b: alloc.b,
            c,
            m,
        });
    }
    let black_hit = counts.black_hit + alloc.a;
    let black_n = counts.black_hit + counts.black_miss + alloc.a + alloc.b;
    let white_hit = counts.white_hit + (c - alloc.a);
    let white_n = counts.white_hit + counts.white_miss + (c - alloc.a) + (m - alloc.b);
    let black = rate(black_hit, black_n).ok_or(Exclusion::NoSearchedBlack)?;
    let white = rate(white_hit, white_n).ok_or(Exclusion::NoSearchedWhite)?;
    Ok(black - white)
}

/// The allocations evaluated for one county: the full `(c+1) x (m+1)` grid, or
/// an evenly thinned sub-grid containing the four corners when that exceeds the cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationGrid {
    a_values: Vec<u64>,
    b_values: Vec<u64>,
}

impl AllocationGrid {
    pub fn len(&self) -> usize {
        self.a_values.len() * self.b_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every allocation is present.
    pub fn is_exhaustive(&self, c: u64, m: u64) -> bool {
        self.a_values.len() as u64 == c + 1 && self.b_values.len() as u64 == m + 1
    }

    pub fn iter(&self) -> impl Iterator<Item = AllocationPair> + '_ {
        self.a_values
            .iter()
            .flat_map(move |&a| self.b_values.iter().map(move |&b| AllocationPair { a, b }))
    }
}

/// `k` evenly spaced integers on `0..=max`, always including both ends.
fn spaced(max: u64, k: u64) -> Vec<u64> {
    if k > max {
        return (0..=max).collect();
    }
    if k <= 1 {
        return vec![0];
    }
    let steps = k - 1;
    (0..k)
        .map(|i| ((i as u128 * max as u128 * 2 + steps as u128) / (2 * steps as u128)) as u64)
        .collect()
}

/// Allocations of `c` contraband and `m` no-contraband NA rows.
///
/// `cap` below 4 is raised to 4 so the corners always fit.
pub fn enumerate_allocations(c: u64, m: u64, cap: u64) -> AllocationGrid {
    let cap = cap.max(4);
    let (na, nb) = (c + 1, m + 1);
    if (na as u128) * (nb as u128) <= cap as u128 {
        return AllocationGrid {
            a_values: (0..=c).collect(),
            b_values: (0..=m).collect(),
        };
    }
    // Split the budget in proportion to each axis length, keeping both ends.
    let ideal_a = ((cap as f64) * (na as f64) / (nb as f64)).sqrt().floor() as u64;
    let min_a = if c > 0 { 2 } else { 1 };
    let min_b = if m > 0 { 2 } else { 1 };
    let ka = ideal_a.clamp(min_a, na.min(cap / min_b));
    let kb = (cap / ka).clamp(min_b, nb);
    AllocationGrid {
        a_values: spaced(c, ka),
        b_values: spaced(m, kb),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    RemainsNegative,
    RemainsPositive,
    NegativeToPositive,
    PositiveToNegative,
    /// An exact zero was involved; no sign is assigned.
    Boundary,
    Excluded,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::RemainsNegative => "remains(-)",
            Classification::RemainsPositive => "remains(+)",
            Classification::NegativeToPositive => "(-)->(+)",
            Classification::PositiveToNegative => "(+)->(-)",
            Classification::Boundary => "boundary",
            Classification::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPoint {
    pub a: u64,
    pub b: u64,
    /// Share of NA rows sent to white; `None` when the county has no NA rows.
    pub prop_white: Option<f64>,
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountySensitivity {
    pub group_id: String,
    pub counts: RaceOutcomeCounts,
    pub ignore_na_disparity: Option<f64>,
    pub min_disparity: Option<f64>,
    pub max_disparity: Option<f64>,
    pub classification: Classification,
    pub exclusion: Option<Exclusion>,
    /// False when the allocation grid was thinned.
    pub exhaustive: bool,
    pub points: Vec<AllocationPoint>,
}

fn classify(ignore: f64, min: f64, max: f64) -> Classification {
    use std::cmp::Ordering::*;
    match ignore.partial_cmp(&0.0) {
        Some(Greater) => match min.partial_cmp(&0.0) {
            Some(Less) => Classification::PositiveToNegative,
            Some(Greater) => Classification::RemainsPositive,
            _ => Classification::Boundary,
        },
        Some(Less) => match max.partial_cmp(&0.0) {
            Some(Greater) => Classification::NegativeToPositive,
            Some(Less) => Classification::RemainsNegative,
            _ => Classification::Boundary,
        },
        _ => Classification::Boundary,
    }
}

fn excluded(counts: &RaceOutcomeCounts, reason: Exclusion) -> CountySensitivity {
    CountySensitivity {
        group_id: counts.group_id.clone(),
        counts: counts.clone(),
        ignore_na_disparity: None,
        min_disparity: None,
        max_disparity: None,
        classification: Classification::Excluded,
        exclusion: Some(reason),
        exhaustive: false,
        points: Vec::new(),
    }
}

pub fn county_sensitivity(counts: &RaceOutcomeCounts, cap: u64) -> CountySensitivity {
    let ignore = match disparity_ignore_na(counts) {
        Ok(d) => d,
        Err(e) => return excluded(counts, e),
    };
    let (c, m) = (counts.na_hit, counts.na_miss);
    let grid = enumerate_allocations(c, m, cap);
    let total_na = c + m;
    let mut points = Vec::with_capacity(grid.len());
    for alloc in grid.iter() {
        // Both groups are non-empty before augmentation, so this cannot fail.
        let disparity = augmented_disparity(counts, alloc).expect("allocation within bounds");
        points.push(AllocationPoint {
            a: alloc.a,
            b: alloc.b,
            prop_white: (total_na > 0)
                .then(|| ((c - alloc.a) + (m - alloc.b)) as f64 / total_na as f64),
            disparity,
        });
    }
    let min = points
        .iter()
        .map(|p| p.disparity)
        .fold(f64::INFINITY, f64::min);
    let max = points
        .iter()
        .map(|p| p.disparity)
        .fold(f64::NEG_INFINITY, f64::max);
    CountySensitivity {
        group_id: counts.group_id.clone(),
        counts: counts.clone(),
        ignore_na_disparity: Some(ignore),
        min_disparity: Some(min),
        max_disparity: Some(max),
        classification: classify(ignore, min, max),
        exclusion: None,
        exhaustive: grid.is_exhaustive(c, m),
        points,
    }
}

/// Runs [`county_sensitivity`] over every group, preserving input order.
pub fn all_counties(counts: &[RaceOutcomeCounts], cap: u64) -> Vec<CountySensitivity> {
    counts
        .par_iter()
        .map(|c| county_sensitivity(c, cap))
        .collect()
}

/// Statewide tallies, one row of the summary table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatewideSummary {
    pub total_groups: usize,
    pub groups_with_missingness: usize,
    pub ignore_na_negative: usize,
    pub ignore_na_positive: usize,
    pub negative_to_positive: usize,
    pub positive_to_negative: usize,
    pub remains_negative: usize,
    pub remains_positive: usize,
    pub boundary: usize,
    pub excluded: usize,
}

/// Tallies counties with NA-race searches; excluded and boundary groups are counted separately.
pub fn statewide_summary(counties: &[CountySensitivity]) -> StatewideSummary {
    let mut s = StatewideSummary {
        total_groups: counties.len(),
        ..Default::default()
    };
    for county in counties {
        if county.classification == Classification::Excluded {
            s.excluded += 1;
            continue;
        }
        if !county.counts.has_missingness() {
            continue;
        }
        s.groups_with_missingness += 1;
        match county.ignore_na_disparity {
            Some(d) if d < 0.0 => s.ignore_na_negative += 1,
            Some(d) if d > 0.0 => s.ignore_na_positive += 1,
            _ => {}
        }
        match county.classification {
            Classification::RemainsNegative => s.remains_negative += 1,
            Classification::RemainsPositive => s.remains_positive += 1,
            Classification::NegativeToPositive => s.negative_to_positive += 1,
            Classification::PositiveToNegative => s.positive_to_negative += 1,
            Classification::Boundary => s.boundary += 1,
            Classification::Excluded => unreachable!(),
        }
    }
    s
}

/// Median disparity per `prop_white` bucket for one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub group: String,
    pub bucket_lo: f64,
    pub bucket_hi: f64,
    pub n: usize,
    pub median: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

/// Splits `[0, 1]` into `buckets` equal intervals (last one closed) and takes
/// the median disparity in each non-empty one. Counties without NA rows get a
/// single bucket `[0, 1]`.
pub fn boxplot_summary(county: &CountySensitivity, buckets: usize) -> Vec<BoxSummary> {
    let buckets = buckets.max(1);
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); buckets];
    let mut no_na = Vec::new();
    for p in &county.points {
        match p.prop_white {
            Some(w) => {
                let idx = ((w * buckets as f64) as usize).min(buckets - 1);
                groups[idx].push(p.disparity);
            }
            None => no_na.push(p.disparity),
        }
    }
    let mut out = Vec::new();
    if let Some(med) = median(&mut no_na) {
        out.push(BoxSummary {
            group: county.group_id.clone(),
            bucket_lo: 0.0,
            bucket_hi: 1.0,
            n: no_na.len(),
            median: med,
        });
    }
    for (i, g) in groups.iter_mut().enumerate() {
        if let Some(med) = median(g) {
            out.push(BoxSummary {
                group: county.group_id.clone(),
                bucket_lo: i as f64 / buckets as f64,
                bucket_hi: (i + 1) as f64 / buckets as f64,
                n: g.len(),
                median: med,
            });
        }
    }
    out
}
