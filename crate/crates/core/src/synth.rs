//! Synthetic stop tables with a known missingness mechanism.
//!
//! Complete values are drawn first and kept as a shadow table; the mask is
//! then applied according to the mechanism:
//!
//! * MCAR: every target cell is masked independently with probability `p`.
//! * MAR: the target is masked with probability `logistic(intercept + slope * z)`
//!   where `z` in `[0, 1]` is the position of a fully observed driver
//!   (the date within the simulated period, or the time of day).
//! * MNAR: `subject_race` is masked with a probability that depends on the
//!   true race.
//!
//! Dates are spread evenly: row `i` falls on day `floor(i * n_days / n_rows)`.

use chrono::{Duration, NaiveDate, NaiveTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Column, ColumnKind, ColumnRole, ColumnSchema, ColumnValues, StopTable};

pub const RACES: [(&str, f64); 3] = [("black", 0.25), ("white", 0.6), ("hispanic", 0.15)];
const SEARCH_RATE: [f64; 3] = [0.06, 0.03, 0.05];
const CONTRABAND_RATE: f64 = 0.3;

pub const SYNTH_COLUMNS: [&str; 5] = [
    "date",
    "time",
    "subject_race",
    "search_conducted",
    "contraband_found",
];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("probability out of [0, 1]: {0}")]
    InvalidProbability(f64),
    #[error("unknown synthetic column \"{0}\"")]
    UnknownColumn(String),
    #[error("MAR target \"{0}\" cannot be its own driver")]
    TargetIsDriver(String),
    #[error("n_days must be positive")]
    NoDays,
    #[error("non-finite logistic parameter")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarDriver {
    Date,
    Time,
}

impl MarDriver {
    fn column(self) -> &'static str {
        match self {
            MarDriver::Date => "date",
            MarDriver::Time => "time",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mechanism {
    Mcar {
        p: f64,
        targets: Vec<String>,
    },
    Mar {
        target: String,
        driver: MarDriver,
        intercept: f64,
        slope: f64,
    },
    Mnar {
        /// Mask probability per true race; races not listed use `default_rate`.
        rates: Vec<(String, f64)>,
        default_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub mechanism: Mechanism,
    pub n_rows: usize,
    pub n_days: u32,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl MechanismSpec {
    /// `n_rows` rows spread over `n_days` days starting Monday 2016-01-04.
    pub fn new(mechanism: Mechanism, n_rows: usize, n_days: u32, seed: u64) -> Self {
        Self {
            mechanism,
            n_rows,
            n_days,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date"),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_days == 0 {
            return Err(SynthError::NoDays);
        }
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SynthError::InvalidProbability(p))
            }
        };
        let known = |c: &str| {
            if SYNTH_COLUMNS.contains(&c) {
                Ok(())
            } else {
                Err(SynthError::UnknownColumn(c.to_string()))
            }
        };
        match &self.mechanism {
            Mechanism::Mcar { p, targets } => {
                prob(*p)?;
                targets.iter().try_for_each(|t| known(t))
            }
            Mechanism::Mar {
                target,
                driver,
                intercept,
                slope,
            } => {
                known(target)?;
                if target == driver.column() {
                    return Err(SynthError::TargetIsDriver(target.clone()));
                }
                if !intercept.is_finite() || !slope.is_finite() {
                    return Err(SynthError::NonFinite);
                }
                Ok(())
            }
            Mechanism::Mnar {
                rates,
                default_rate,
            } => {
                prob(*default_rate)?;
                rates.iter().try_for_each(|(_, p)| prob(*p))
            }
        }
    }
}

/// A masked table together with its complete shadow.
#[derive(Debug, Clone)]
pub struct SynthTable {
    pub masked: StopTable,
    pub shadow: StopTable,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Complete {
    day: Vec<u32>,
    date: Vec<NaiveDate>,
    time: Vec<NaiveTime>,
    race: Vec<usize>,
    searched: Vec<bool>,
    contraband: Vec<bool>,
}

fn draw_complete(spec: &MechanismSpec, rng: &mut ChaCha8Rng) -> Complete {
    let n = spec.n_rows;
    let mut c = Complete {
        day: Vec::with_capacity(n),
        date: Vec::with_capacity(n),
        time: Vec::with_capacity(n),
        race: Vec::with_capacity(n),
        searched: Vec::with_capacity(n),
        contraband: Vec::with_capacity(n),
    };
    for i in 0..n {
        let day = (i as u64 * spec.n_days as u64 / n as u64) as u32;
        c.day.push(day);
        c.date.push(spec.start_date + Duration::days(day as i64));
        let secs = rng.random_range(0..86_400u32);
        c.time
            .push(NaiveTime::from_num_seconds_from_midnight_opt(secs, 0).expect("< 86400"));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut race = RACES.len() - 1;
        for (k, (_, share)) in RACES.iter().enumerate() {
            acc += share;
            if u < acc {
                race = k;
                break;
            }
        }
        c.race.push(race);
        let searched = rng.random::<f64>() < SEARCH_RATE[race];
        c.searched.push(searched);
        c.contraband
            .push(searched && rng.random::<f64>() < CONTRABAND_RATE);
    }
    c
}

/// Schema of the generated tables, in column order.
pub fn synth_schema() -> Vec<ColumnSchema> {
    vec![
        ColumnSchema::new("date", ColumnKind::Date, ColumnRole::ConditioningCandidate),
        ColumnSchema::new("time", ColumnKind::Time, ColumnRole::ConditioningCandidate),
        ColumnSchema::new("subject_race", ColumnKind::Category, ColumnRole::Analysis),
        ColumnSchema::new(
            "search_conducted",
            ColumnKind::Boolean,
            ColumnRole::Analysis,
        ),
        ColumnSchema::new(
            "contraband_found",
            ColumnKind::Boolean,
            ColumnRole::Analysis,
        ),
    ]
}

pub fn generate(spec: &MechanismSpec) -> Result<SynthTable, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let complete = draw_complete(spec, &mut rng);
    let n = spec.n_rows;

    let mut masks: Vec<Vec<bool>> = vec![vec![false; n]; SYNTH_COLUMNS.len()];
    let col_idx = |name: &str| {
        SYNTH_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("validated")
    };
    match &spec.mechanism {
        Mechanism::Mcar { p, targets } => {
            for t in targets {
                let j = col_idx(t);
                for m in masks[j].iter_mut() {
                    *m = rng.random::<f64>() < *p;
                }
            }
        }
        Mechanism::Mar {
            target,
            driver,
            intercept,
            slope,
        } => {
            let j = col_idx(target);
            let span = (spec.n_days.max(2) - 1) as f64;
            for (i, mask) in masks[j].iter_mut().enumerate() {
                let z = match driver {
                    MarDriver::Date => complete.day[i] as f64 / span,
                    MarDriver::Time => {
                        complete.time[i].num_seconds_from_midnight() as f64 / 86_400.0
                    }
                };
                *mask = rng.random::<f64>() < logistic(intercept + slope * z);
            }
        }
        Mechanism::Mnar {
            rates,
            default_rate,
        } => {
            let j = col_idx("subject_race");
            for i in 0..n {
                let race = RACES[complete.race[i]].0;
                let p = rates
                    .iter()
                    .find(|(r, _)| r == race)
                    .map_or(*default_rate, |(_, p)| *p);
                masks[j][i] = rng.random::<f64>() < p;
            }
        }
    }

    let build = |masks: Vec<Vec<bool>>| -> StopTable {
        let schemas = synth_schema();
        let values = [
            ColumnValues::Date(complete.date.clone()),
            ColumnValues::Time(complete.time.clone()),
            ColumnValues::Str(
                complete
                    .race
                    .iter()
                    .map(|&r| RACES[r].0.to_string())
                    .collect(),
            ),
            ColumnValues::Bool(complete.searched.clone()),
            ColumnValues::Bool(complete.contraband.clone()),
        ];
        let columns = schemas
            .into_iter()
            .zip(values)
            .zip(masks)
            .map(|((s, v), m)| Column::new(s, v, m).expect("consistent synthetic column"))
            .collect();
        StopTable::from_columns(columns).expect("consistent synthetic table")
    };

    Ok(SynthTable {
        shadow: build(vec![vec![false; n]; SYNTH_COLUMNS.len()]),
        masked: build(masks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Cell;

    fn mcar(p: f64, n: usize, seed: u64) -> MechanismSpec {
        MechanismSpec::new(
            Mechanism::Mcar {
                p,
                targets: vec!["subject_race".into()],
            },
            n,
            350,
            seed,
        )
    }

    #[test]
    fn mcar_zero_masks_nothing() {
        let t = generate(&mcar(0.0, 2000, 1)).unwrap();
        assert_eq!(t.masked.total_na(), 0);
        assert_eq!(t.masked, t.shadow);
    }

    #[test]
    fn mcar_rate_concentrates() {
        let t = generate(&mcar(0.3, 10_000, 42)).unwrap();
        let frac = t.masked.column("subject_race").unwrap().na_count() as f64 / 10_000.0;
        assert!((frac - 0.3).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn mnar_rates_recovered_from_shadow() {
        let spec = MechanismSpec::new(
            Mechanism::Mnar {
                rates: vec![("black".into(), 0.4), ("white".into(), 0.1)],
                default_rate: 0.1,
            },
            20_000,
            350,
            3,
        );
        let t = generate(&spec).unwrap();
        let masked = t.masked.column("subject_race").unwrap();
        let truth = t.shadow.column("subject_race").unwrap();
        for (race, target) in [("black", 0.4), ("white", 0.1)] {
            let rows: Vec<usize> = (0..t.shadow.n_rows())
                .filter(|&i| truth.cell(i) == Some(Cell::Category(race)))
                .collect();
            let frac = rows.iter().filter(|&&i| masked.is_na(i)).count() as f64 / rows.len() as f64;
            assert!((frac - target).abs() <= 0.03, "{race}: {frac}");
        }
    }

    #[test]
    fn dates_are_balanced() {
        let t = generate(&mcar(0.1, 700, 5)).unwrap();
        let dates = t.shadow.column("date").unwrap();
        assert_eq!(
            dates.cell(0),
            Some(Cell::Date(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap()))
        );
        assert_eq!(
            dates.cell(699),
            Some(Cell::Date(NaiveDate::from_ymd_opt(2016, 12, 18).unwrap()))
        );
    }

    #[test]
    fn contraband_only_when_searched() {
        let t = generate(&mcar(0.0, 5000, 8)).unwrap();
        let s = t.shadow.column("search_conducted").unwrap();
        let c = t.shadow.column("contraband_found").unwrap();
        for i in 0..5000 {
            if c.cell(i) == Some(Cell::Boolean(true)) {
                assert_eq!(s.cell(i), Some(Cell::Boolean(true)));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert_eq!(
            generate(&mcar(1.5, 10, 1)).unwrap_err(),
            SynthError::InvalidProbability(1.5)
        );
        let spec = MechanismSpec::new(
            Mechanism::Mar {
                target: "date".into(),
                driver: MarDriver::Date,
                intercept: 0.0,
                slope: 1.0,
            },
            10,
            10,
            1,
        );
        assert!(matches!(
            generate(&spec),
            Err(SynthError::TargetIsDriver(_))
        ));
        let spec = MechanismSpec::new(
            Mechanism::Mcar {
                p: 0.1,
                targets: vec!["speed".into()],
            },
            10,
            10,
            1,
        );
        assert!(matches!(generate(&spec), Err(SynthError::UnknownColumn(_))));
    }

    #[test]
    fn same_seed_same_table() {
        let a = generate(&mcar(0.2, 500, 77)).unwrap();
        let b = generate(&mcar(0.2, 500, 77)).unwrap();
        assert_eq!(a.masked, b.masked);
    }
}
