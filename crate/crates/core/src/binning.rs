//! Discretisation of conditioning variables into ordered bins.

use std::fmt;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Cell;

pub const GEOHASH_MAX_PRECISION: u8 = 12;
pub const DEFAULT_GEOHASH_PRECISION: u8 = 6;

const BASE32: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

#[derive(Debug, Error, PartialEq)]
pub enum BinningError {
    #[error("cannot bin an NA value")]
    NaInput,
    #[error("value of kind {value} cannot be binned by {spec}")]
    IncompatibleKind { value: String, spec: BinKind },
    #[error("latitude out of range: {0}")]
    LatitudeOutOfRange(f64),
    #[error("longitude out of range: {0}")]
    LongitudeOutOfRange(f64),
    #[error("geohash precision must be in 1..=12, got {0}")]
    InvalidPrecision(u8),
    #[error("invalid geohash \"{0}\"")]
    InvalidGeohash(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinKind {
    Day,
    Week,
    Hour,
    Geohash,
}

impl fmt::Display for BinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinKind::Day => "day",
            BinKind::Week => "week",
            BinKind::Hour => "hour",
            BinKind::Geohash => "geohash",
        })
    }
}

impl std::str::FromStr for BinKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(BinKind::Day),
            "week" => Ok(BinKind::Week),
            "hour" => Ok(BinKind::Hour),
            "geohash" => Ok(BinKind::Geohash),
            other => Err(format!("unknown bin kind \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub kind: BinKind,
    pub geohash_precision: u8,
}

impl BinSpec {
    pub fn new(kind: BinKind) -> Self {
        Self {
            kind,
            geohash_precision: DEFAULT_GEOHASH_PRECISION,
        }
    }

    pub fn geohash(precision: u8) -> Result<Self, BinningError> {
        check_precision(precision)?;
        Ok(Self {
            kind: BinKind::Geohash,
            geohash_precision: precision,
        })
    }
}

/// Bin key. Keys of one [`BinKind`] sort in bin order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinId(pub String);

impl BinId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Input to [`bin_value`]: one cell, or a latitude/longitude pair for geohash bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinInput<'a> {
    Na,
    Cell(Cell<'a>),
    LatLon(f64, f64),
}

impl<'a> From<Option<Cell<'a>>> for BinInput<'a> {
    fn from(c: Option<Cell<'a>>) -> Self {
        c.map_or(BinInput::Na, BinInput::Cell)
    }
}

pub fn bin_value(value: BinInput<'_>, spec: &BinSpec) -> Result<BinId, BinningError> {
    let incompatible = |value: &dyn fmt::Debug| BinningError::IncompatibleKind {
        value: format!("{value:?}"),
        spec: spec.kind,
    };
    match (spec.kind, value) {
        (_, BinInput::Na) => Err(BinningError::NaInput),
        (BinKind::Day, BinInput::Cell(Cell::Date(d))) => {
            Ok(BinId(d.format("%Y-%m-%d").to_string()))
        }
        (BinKind::Week, BinInput::Cell(Cell::Date(d))) => {
            let w = d.iso_week();
            Ok(BinId(format!("{:04}-W{:02}", w.year(), w.week())))
        }
        (BinKind::Hour, BinInput::Cell(Cell::Time(t))) => Ok(BinId(format!("{:02}", t.hour()))),
        (BinKind::Geohash, BinInput::LatLon(lat, lon)) => {
            geohash_encode(lat, lon, spec.geohash_precision)
        }
        (_, other) => Err(incompatible(&other)),
    }
}

fn check_precision(precision: u8) -> Result<(), BinningError> {
    if (1..=GEOHASH_MAX_PRECISION).contains(&precision) {
        Ok(())
    } else {
        Err(BinningError::InvalidPrecision(precision))
    }
}

/// Standard base-32 geohash; bits alternate longitude-first.
pub fn geohash_encode(lat: f64, lon: f64, precision: u8) -> Result<BinId, BinningError> {
    check_precision(precision)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(BinningError::LatitudeOutOfRange(lat));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(BinningError::LongitudeOutOfRange(lon));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0, 90.0);
    let (mut lon_lo, mut lon_hi) = (-180.0, 180.0);
    let mut out = String::with_capacity(precision as usize);
    let mut even = true;
    for _ in 0..precision {
        let mut idx = 0usize;
        for _ in 0..5 {
            let (val, lo, hi) = if even {
                (lon, &mut lon_lo, &mut lon_hi)
            } else {
                (lat, &mut lat_lo, &mut lat_hi)
            };
            let mid = (*lo + *hi) / 2.0;
            idx <<= 1;
            if val >= mid {
                idx |= 1;
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
        out.push(BASE32[idx] as char);
    }
    Ok(BinId(out))
}

/// Cell bounds of a geohash.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeohashCell {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeohashCell {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.lat_min..=self.lat_max).contains(&lat) && (self.lon_min..=self.lon_max).contains(&lon)
    }
}

pub fn geohash_decode(hash: &str) -> Result<GeohashCell, BinningError> {
    if hash.is_empty() || hash.len() > GEOHASH_MAX_PRECISION as usize {
        return Err(BinningError::InvalidGeohash(hash.to_string()));
    }
    let mut cell = GeohashCell {
        lat_min: -90.0,
        lat_max: 90.0,
        lon_min: -180.0,
        lon_max: 180.0,
    };
    let mut even = true;
    for ch in hash.bytes() {
        let idx = BASE32
            .iter()
            .position(|&b| b == ch.to_ascii_lowercase())
            .ok_or_else(|| BinningError::InvalidGeohash(hash.to_string()))?;
        for bit in (0..5).rev() {
            let (lo, hi) = if even {
                (&mut cell.lon_min, &mut cell.lon_max)
            } else {
                (&mut cell.lat_min, &mut cell.lat_max)
            };
            let mid = (*lo + *hi) / 2.0;
            if (idx >> bit) & 1 == 1 {
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
    }
    Ok(cell)
}
