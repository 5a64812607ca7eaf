//! Missing-data diagnostics and race-label sensitivity analysis for
//! traffic-stop records.
//!
//! * [`ingest`] loads delimited files under a declared schema.
//! * [`binning`] and [`missingness`] compute conditional missingness rates.
//! * [`maxcorr`] scores dependence between a rate series and its bins.
//! * [`outcome_sens`] and [`ate_sens`] measure how NA race labels can move
//!   the outcome-test disparity and the search ATE bounds.
//! * [`synth`] generates tables with known missingness mechanisms.
//! * [`report`] writes CSV/JSON/SVG artifacts and drives the CLI.

pub mod ate_sens;
pub mod binning;
pub mod ingest;
pub mod maxcorr;
pub mod missingness;
pub mod outcome_sens;
pub mod report;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::ingest::{read_table, ColumnKind, ColumnRole, ColumnSchema, LoadOptions, StopTable};
    use crate::outcome_sens::RaceOutcomeCounts;

    pub const TOY_CSV: &str = "\
date,time,subject_race,subject_age
2016-03-14,08:00:00,white,NA
2016-03-14,20:00:00,black,18
2016-03-14,15:00:00,white,24
2016-03-14,17:00:00,NA,NA
2016-03-14,20:00:00,hispanic,48
";

    pub fn toy_schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::new("date", ColumnKind::Date, ColumnRole::ConditioningCandidate),
            ColumnSchema::new("time", ColumnKind::Time, ColumnRole::ConditioningCandidate),
            ColumnSchema::new("subject_race", ColumnKind::Category, ColumnRole::Analysis),
            ColumnSchema::new("subject_age", ColumnKind::Number, ColumnRole::Analysis),
        ]
    }

    pub fn toy_table() -> StopTable {
        read_table(TOY_CSV.as_bytes(), &LoadOptions::new(toy_schema())).unwrap()
    }

    pub fn belmont() -> RaceOutcomeCounts {
        RaceOutcomeCounts {
            group_id: "Belmont County".into(),
            black_hit: 45,
            black_miss: 170,
            white_hit: 286,
            white_miss: 1726,
            na_hit: 4,
            na_miss: 643,
        }
    }
}
