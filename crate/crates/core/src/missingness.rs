//! Missingness matrix and conditional missingness rates.
//!
//! For a conditioning variable `k` split into bins, the conditional
//! missingness rate (CMR) of column `j` in bin `b` is the fraction of rows in
//! `b` whose cell `j` is NA. The dataset-level rate (dCMR) averages the CMRs of
//! a list of variables. All variables share the bin's row set, so the dCMR is
//! computed as one exact quotient: total masked cells over `J * |I_b|`.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::{bin_value, BinId, BinInput, BinKind, BinSpec, BinningError};
use crate::ingest::{Cell, ColumnKind, StopTable, CORE_VARIABLES};

/// Target label used for dataset-level series.
pub const DATASET_TARGET: &str = "dataset";

#[derive(Debug, Error, PartialEq)]
pub enum MissingnessError {
    #[error("unknown variable \"{0}\"")]
    UnknownVariable(String),
    #[error("target \"{0}\" is the conditioning variable")]
    TargetIsConditioning(String),
    #[error("empty variable list")]
    EmptyVariableList,
    #[error("geohash binning needs both a latitude and a longitude column")]
    NoCoordinates,
    #[error(transparent)]
    Binning(#[from] BinningError),
}

/// What rows are binned on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    Column(String),
    /// The table's latitude and longitude columns, for geohash bins.
    LatLon,
}

impl Conditioning {
    /// `"latlon"` selects the coordinate pair; anything else names a column.
    pub fn parse(s: &str) -> Self {
        match s {
            "latlon" | "lat,lng" | "geohash" => Conditioning::LatLon,
            other => Conditioning::Column(other.to_string()),
        }
    }

    fn column_names<'t>(&self, table: &'t StopTable) -> Result<Vec<&'t str>, MissingnessError> {
        match self {
            Conditioning::Column(name) => Ok(vec![table
                .column(name)
                .ok_or_else(|| MissingnessError::UnknownVariable(name.clone()))?
                .name()]),
            Conditioning::LatLon => {
                let lat = table
                    .column_of_kind(ColumnKind::Latitude)
                    .ok_or(MissingnessError::NoCoordinates)?;
                let lon = table
                    .column_of_kind(ColumnKind::Longitude)
                    .ok_or(MissingnessError::NoCoordinates)?;
                Ok(vec![lat.name(), lon.name()])
            }
        }
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Conditioning::Column(c) => f.write_str(c),
            Conditioning::LatLon => f.write_str("latlon"),
        }
    }
}

/// Column-major binary missingness matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessMatrix {
    pub columns: Vec<String>,
    omega: Vec<Vec<bool>>,
}

impl MissingnessMatrix {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.omega[col][row]
    }

    pub fn column(&self, col: usize) -> &[bool] {
        &self.omega[col]
    }

    pub fn n_rows(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.omega.len()
    }
}

pub fn missingness_matrix(table: &StopTable) -> MissingnessMatrix {
    MissingnessMatrix {
        columns: table.column_names().iter().map(|s| s.to_string()).collect(),
        omega: table.columns().map(|c| c.mask().to_vec()).collect(),
    }
}

/// Row-to-bin assignment for one conditioning variable.
#[derive(Debug, Clone)]
pub struct BinAssignment {
    /// Non-empty bins in ascending key order.
    pub bins: Vec<BinId>,
    /// Index into `bins` per row; `None` when the conditioning value is NA.
    pub row_bin: Vec<Option<u32>>,
    pub unbinnable: usize,
}

impl BinAssignment {
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.bins.len()];
        for b in self.row_bin.iter().flatten() {
            counts[*b as usize] += 1;
        }
        counts
    }
}

pub fn assign_bins(
    table: &StopTable,
    cond: &Conditioning,
    spec: &BinSpec,
) -> Result<BinAssignment, MissingnessError> {
    let n = table.n_rows();
    let keys: Vec<Option<BinId>> = match cond {
        Conditioning::Column(name) => {
            if spec.kind == BinKind::Geohash {
                return Err(MissingnessError::Binning(BinningError::IncompatibleKind {
                    value: format!("column {name}"),
                    spec: spec.kind,
                }));
            }
            let col = table
                .column(name)
                .ok_or_else(|| MissingnessError::UnknownVariable(name.clone()))?;
            (0..n)
                .map(|i| match col.cell(i) {
                    None => Ok(None),
                    Some(c) => bin_value(BinInput::Cell(c), spec).map(Some),
                })
                .collect::<Result<_, _>>()?
        }
        Conditioning::LatLon => {
            let names = cond.column_names(table)?;
            let lat = table.require(names[0]).expect("resolved above");
            let lon = table.require(names[1]).expect("resolved above");
            let spec = if spec.kind == BinKind::Geohash {
                *spec
            } else {
                return Err(MissingnessError::Binning(BinningError::IncompatibleKind {
                    value: "latitude/longitude pair".into(),
                    spec: spec.kind,
                }));
            };
            (0..n)
                .map(|i| match (lat.cell(i), lon.cell(i)) {
                    (Some(Cell::Latitude(la)), Some(Cell::Longitude(lo))) => {
                        bin_value(BinInput::LatLon(la, lo), &spec).map(Some)
                    }
                    _ => Ok(None),
                })
                .collect::<Result<_, _>>()?
        }
    };

    let mut index: BTreeMap<BinId, u32> = BTreeMap::new();
    for k in keys.iter().flatten() {
        index.entry(k.clone()).or_insert(0);
    }
    for (ordinal, v) in index.values_mut().enumerate() {
        *v = ordinal as u32;
    }
    let row_bin: Vec<Option<u32>> = keys.iter().map(|k| k.as_ref().map(|k| index[k])).collect();
    let unbinnable = row_bin.iter().filter(|b| b.is_none()).count();
    Ok(BinAssignment {
        bins: index.into_keys().collect(),
        row_bin,
        unbinnable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmrPoint {
    pub bin: BinId,
    pub rate: f64,
    /// Rows in the bin, `|I_b|`.
    pub count: usize,
    /// Masked cells in the bin, summed over the series' variables.
    pub masked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmrSeries {
    pub conditioning_variable: String,
    /// Column name, or [`DATASET_TARGET`] for a dCMR series.
    pub target: String,
    pub spec: BinSpec,
    /// Variables averaged into the rate (one for a CMR series).
    pub variables: Vec<String>,
    pub points: Vec<CmrPoint>,
    /// Rows excluded because the conditioning value was NA.
    pub unbinnable: usize,
}

impl CmrSeries {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }

    pub fn rate_of(&self, bin: &str) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.bin.as_str() == bin)
            .map(|p| p.rate)
    }
}

fn masked_per_bin(table: &StopTable, var: &str, assign: &BinAssignment) -> Vec<usize> {
    let mask = table.column(var).expect("validated").mask();
    let mut masked = vec![0usize; assign.bins.len()];
    for (b, &m) in assign.row_bin.iter().zip(mask) {
        if let (Some(b), true) = (b, m) {
            masked[*b as usize] += 1;
        }
    }
    masked
}

fn build_series(
    cond: &Conditioning,
    target: &str,
    spec: &BinSpec,
    variables: Vec<String>,
    assign: &BinAssignment,
    masked: Vec<usize>,
) -> CmrSeries {
    let counts = assign.counts();
    let denom_vars = variables.len();
    let points = assign
        .bins
        .iter()
        .zip(counts)
        .zip(masked)
        .filter(|((_, count), _)| *count > 0)
        .map(|((bin, count), masked)| CmrPoint {
            bin: bin.clone(),
            rate: masked as f64 / (count * denom_vars) as f64,
            count,
            masked,
        })
        .collect();
    CmrSeries {
        conditioning_variable: cond.to_string(),
        target: target.to_string(),
        spec: *spec,
        variables,
        points,
        unbinnable: assign.unbinnable,
    }
}

/// Conditional missingness rate of `target` per bin of the conditioning variable.
pub fn cmr(
    table: &StopTable,
    target: &str,
    cond: &Conditioning,
    spec: &BinSpec,
) -> Result<CmrSeries, MissingnessError> {
    let cond_cols = cond.column_names(table)?;
    if table.column(target).is_none() {
        return Err(MissingnessError::UnknownVariable(target.to_string()));
    }
    if cond_cols.contains(&target) {
        return Err(MissingnessError::TargetIsConditioning(target.to_string()));
    }
    let assign = assign_bins(table, cond, spec)?;
    let masked = masked_per_bin(table, target, &assign);
    Ok(build_series(
        cond,
        target,
        spec,
        vec![target.to_string()],
        &assign,
        masked,
    ))
}

/// Default dCMR variables: core variables present in the table, minus the conditioning columns.
pub fn default_dcmr_variables(
    table: &StopTable,
    cond: &Conditioning,
) -> Result<Vec<String>, MissingnessError> {
    let cond_cols = cond.column_names(table)?;
    Ok(table
        .column_names()
        .into_iter()
        .filter(|n| CORE_VARIABLES.contains(n) && !cond_cols.contains(n))
        .map(str::to_string)
        .collect())
}

/// Dataset-level conditional missingness rate averaged over `variables`.
pub fn dcmr<S: AsRef<str> + Sync>(
    table: &StopTable,
    cond: &Conditioning,
    spec: &BinSpec,
    variables: &[S],
) -> Result<CmrSeries, MissingnessError> {
    if variables.is_empty() {
        return Err(MissingnessError::EmptyVariableList);
    }
    let cond_cols = cond.column_names(table)?;
    for v in variables {
        let v = v.as_ref();
        if table.column(v).is_none() {
            return Err(MissingnessError::UnknownVariable(v.to_string()));
        }
        if cond_cols.contains(&v) {
            return Err(MissingnessError::TargetIsConditioning(v.to_string()));
        }
    }
    let assign = assign_bins(table, cond, spec)?;
    let per_var: Vec<Vec<usize>> = variables
        .par_iter()
        .map(|v| masked_per_bin(table, v.as_ref(), &assign))
        .collect();
    let mut masked = vec![0usize; assign.bins.len()];
    for v in &per_var {
        for (acc, m) in masked.iter_mut().zip(v) {
            *acc += m;
        }
    }
    Ok(build_series(
        cond,
        DATASET_TARGET,
        spec,
        variables.iter().map(|v| v.as_ref().to_string()).collect(),
        &assign,
        masked,
    ))
}
