//! Output assembly and the command runners behind the CLI.
//!
//! Every runner writes its analytic files first, then renders charts from
//! those files as read back from disk, then writes `manifest.json` with
//! digests of every output. Analytic files carry no timestamps, so two runs
//! with the same inputs and seed produce byte-identical files; only the
//! manifest's timings differ.

pub mod cli;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ate_sens::{ate_sensitivity_run, standard_plans, AteError, AteRow, StopSearchCounts};
use crate::binning::{BinKind, BinSpec, BinningError};
use crate::ingest::{
    core_variable_subset, load_table, per_variable_missing_summary, Cell, IngestError, StopTable,
    TableConfig,
};
use crate::maxcorr::{
    geohash_centres, latlon_maxcorr, series_maxcorr, AceConfig, MaxCorrError, MaxCorrResult,
};
use crate::missingness::{
    cmr, dcmr, default_dcmr_variables, CmrSeries, Conditioning, MissingnessError, DATASET_TARGET,
};
use crate::outcome_sens::{
    all_counties, boxplot_summary, median, statewide_summary, Classification, RaceOutcomeCounts,
};
use crate::synth::{generate, synth_schema, MechanismSpec, SynthError};

use self::cli::Command;
use self::svg::{render_svg, Chart, RibbonEntry, RibbonPanel, ScatterChart, StripPanel, SvgError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::ser::Error),
    #[error(transparent)]
    Missingness(#[from] MissingnessError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Ate(#[from] AteError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Svg(#[from] SvgError),
}

impl ReportError {
    /// 1 for runs with nothing analyzable, 2 for usage, 3 for IO/config.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Ate(AteError::NoBlackStops | AteError::NoWhiteStops) => 1,
            ReportError::Usage(_)
            | ReportError::Ate(_)
            | ReportError::Synth(_)
            | ReportError::Binning(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Option<TableConfig>,
    /// SHA-256 of the config file bytes.
    pub config_digest: Option<String>,
    /// Output directory, or the masked-table path for `synth`.
    pub out: PathBuf,
    pub seed: u64,
    pub argv: Vec<String>,
}

impl RunContext {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            config: None,
            config_digest: None,
            out: out.into(),
            seed: 0,
            argv: Vec::new(),
        }
    }

    pub fn with_config_file(mut self, path: &Path) -> Result<Self, ReportError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|e| IngestError::Config(format!("config is not UTF-8: {e}")))?;
        self.config = Some(TableConfig::parse(&text)?);
        self.config_digest = Some(hex::encode(Sha256::digest(&bytes)));
        Ok(self)
    }

    fn load(&self, input: &Path) -> Result<StopTable, ReportError> {
        let config = self
            .config
            .as_ref()
            .ok_or_else(|| ReportError::Usage("row input needs --config".into()))?;
        Ok(load_table(input, &config.load_options()?)?)
    }

    fn dataset_id(&self, input: Option<&Path>) -> String {
        self.config
            .as_ref()
            .and_then(|c| c.dataset_id.clone())
            .or_else(|| {
                input
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "unnamed".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_id: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub command: String,
    pub argv: Vec<String>,
    /// Output file names relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// SHA-256 of each output file.
    pub output_digests: BTreeMap<String, String>,
    /// Every analyzed group was excluded.
    pub exclusion_only: bool,
    pub timings_ms: BTreeMap<String, f64>,
}

/// Collects output files under one directory.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn lap(&mut self, stage: &str) {
        let ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.timings.insert(stage.to_string(), ms);
        self.clock = Instant::now();
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), ReportError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(&path))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), ReportError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn read_csv<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>, ReportError> {
        let mut r = csv::Reader::from_path(self.path(name))?;
        Ok(r.deserialize().collect::<Result<_, _>>()?)
    }

    fn finish(
        mut self,
        ctx: &RunContext,
        command: &str,
        dataset_id: String,
        seed: Option<u64>,
        exclusion_only: bool,
        manifest_name: &str,
    ) -> Result<RunManifest, ReportError> {
        self.lap("render");
        let mut output_digests = BTreeMap::new();
        for name in &self.names {
            let path = self.path(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            output_digests.insert(name.clone(), hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = RunManifest {
            dataset_id,
            config_digest: ctx.config_digest.clone(),
            seed,
            command: command.to_string(),
            argv: ctx.argv.clone(),
            outputs: self.names.clone(),
            output_digests,
            exclusion_only,
            timings_ms: self.timings.clone(),
        };
        let path = self.path(manifest_name);
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// Runs one command and writes its outputs and manifest.
pub fn run_pipeline(command: &Command, ctx: &RunContext) -> Result<RunManifest, ReportError> {
    match command {
        Command::Audit(args) => run_audit(args, ctx),
        Command::OutcomeSens(args) => run_outcome_sens(args, ctx),
        Command::AteSens(args) => run_ate_sens(args, ctx),
        Command::Synth(args) => run_synth(args, ctx),
    }
}

// ---------------------------------------------------------------- audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub bin: String,
    pub target: String,
    pub rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
struct SeriesMeta {
    target: String,
    variables: Vec<String>,
    n_bins: usize,
    unbinnable: usize,
    maxcorr: Option<f64>,
    maxcorr_error: Option<String>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
struct AuditMeta {
    dataset_id: String,
    conditioning_variable: String,
    bin_spec: BinSpec,
    n_rows: usize,
    skipped_core_variables: Vec<String>,
    series: Vec<SeriesMeta>,
}

fn rate_rows(series: &CmrSeries) -> Vec<RateRow> {
    series
        .points
        .iter()
        .map(|p| RateRow {
            bin: p.bin.0.clone(),
            target: series.target.clone(),
            rate: p.rate,
            count: p.count,
        })
        .collect()
}

fn score_series(
    series: &CmrSeries,
    cond: &Conditioning,
    cfg: &AceConfig,
) -> Result<MaxCorrResult, MaxCorrError> {
    match cond {
        Conditioning::LatLon => {
            let (lat, lon) = geohash_centres(series)?;
            latlon_maxcorr(series, &lat, &lon, cfg)
        }
        Conditioning::Column(_) => series_maxcorr(series, cfg),
    }
}

fn series_meta(series: &CmrSeries, score: &Result<MaxCorrResult, MaxCorrError>) -> SeriesMeta {
    SeriesMeta {
        target: series.target.clone(),
        variables: series.variables.clone(),
        n_bins: series.points.len(),
        unbinnable: series.unbinnable,
        maxcorr: score.as_ref().ok().map(|r| r.value),
        maxcorr_error: score.as_ref().err().map(|e| e.to_string()),
        iterations: score.as_ref().ok().map(|r| r.iterations_used),
        converged: score.as_ref().ok().map(|r| r.converged),
    }
}

fn maxcorr_label(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".into(), |v| format!("{v:.3}"))
}

fn run_audit(args: &cli::AuditArgs, ctx: &RunContext) -> Result<RunManifest, ReportError> {
    let mut out = Outputs::new(&ctx.out)?;
    let full = ctx.load(&args.input)?;
    out.lap("load");
    let config = ctx.config.as_ref().expect("loaded with config");
    let cond = Conditioning::parse(&args.conditioning);
    let spec = match args.bin {
        BinKind::Geohash => BinSpec::geohash(args.geohash_precision)?,
        kind => BinSpec::new(kind),
    };

    let (table, skipped) = match &config.core_variables {
        Some(core) => {
            let cond_cols: Vec<String> = match &cond {
                Conditioning::Column(c) => vec![c.clone()],
                Conditioning::LatLon => full
                    .columns()
                    .filter(|c| {
                        matches!(
                            c.kind(),
                            crate::ingest::ColumnKind::Latitude
                                | crate::ingest::ColumnKind::Longitude
                        )
                    })
                    .map(|c| c.name().to_string())
                    .collect(),
            };
            let keep: Vec<String> = core.iter().cloned().chain(cond_cols).collect();
            let subset = core_variable_subset(&full, &keep)?;
            let skipped = subset
                .skipped
                .into_iter()
                .filter(|s| core.contains(s))
                .collect();
            (subset.table, skipped)
        }
        None => (full, Vec::new()),
    };

    let variables = match &args.variables {
        Some(v) => v.clone(),
        None => match &config.core_variables {
            Some(_) => default_or_all(&table, &cond)?,
            None => default_dcmr_variables(&table, &cond)?,
        },
    };
    let ace = AceConfig {
        max_iterations: args.max_iterations,
        tolerance: args.tolerance,
        ..AceConfig::default()
    };
    let dataset = dcmr(&table, &cond, &spec, &variables)?;
    let per_target: Vec<CmrSeries> = args
        .cmr
        .iter()
        .map(|t| cmr(&table, t, &cond, &spec))
        .collect::<Result<_, _>>()?;
    let mut all = vec![dataset];
    all.extend(per_target);
    let scores: Vec<_> = all.iter().map(|s| score_series(s, &cond, &ace)).collect();
    out.lap("analyze");

    let dataset_id = ctx.dataset_id(Some(&args.input));
    out.csv("dcmr.csv", &rate_rows(&all[0]))?;
    if all.len() > 1 {
        let rows: Vec<RateRow> = all[1..].iter().flat_map(rate_rows).collect();
        out.csv("cmr.csv", &rows)?;
    }
    out.csv("summary.csv", &per_variable_missing_summary(&table))?;
    let meta = AuditMeta {
        dataset_id: dataset_id.clone(),
        conditioning_variable: cond.to_string(),
        bin_spec: spec,
        n_rows: table.n_rows(),
        skipped_core_variables: skipped,
        series: all
            .iter()
            .zip(&scores)
            .map(|(s, r)| series_meta(s, r))
            .collect(),
    };
    out.json("audit.json", &meta)?;
    out.lap("write");

    // Charts and console lines come from the files just written.
    let meta_back: serde_json::Value = serde_json::from_slice(
        &fs::read(out.path("audit.json")).map_err(io_err(&out.path("audit.json")))?,
    )?;
    let mut rows: Vec<RateRow> = out.read_csv("dcmr.csv")?;
    if all.len() > 1 {
        rows.extend(out.read_csv::<RateRow>("cmr.csv")?);
    }
    let series_back = meta_back["series"].as_array().cloned().unwrap_or_default();
    for s in &series_back {
        let target = s["target"].as_str().unwrap_or_default().to_string();
        let mc = s["maxcorr"].as_f64();
        println!("{target}\t{} bins\t({})", s["n_bins"], maxcorr_label(mc));
        let points: Vec<(String, f64)> = rows
            .iter()
            .filter(|r| r.target == target)
            .map(|r| (r.bin.clone(), r.rate))
            .collect();
        if points.is_empty() {
            continue;
        }
        let name = if target == DATASET_TARGET {
            "dcmr.svg".to_string()
        } else {
            format!("cmr_{}.svg", sanitize(&target))
        };
        let chart = Chart::Scatter(ScatterChart {
            title: format!(
                "{dataset_id}: {target} by {} ({})",
                spec.kind,
                maxcorr_label(mc)
            ),
            points,
        });
        out.text(&name, &render_svg(&chart)?)?;
    }
    out.finish(ctx, "audit", dataset_id, None, false, MANIFEST_FILE)
}

/// With an explicit core list every non-conditioning column of the subset counts.
fn default_or_all(table: &StopTable, cond: &Conditioning) -> Result<Vec<String>, ReportError> {
    let skip: Vec<String> = match cond {
        Conditioning::Column(c) => vec![c.clone()],
        Conditioning::LatLon => table
            .columns()
            .filter(|c| {
                matches!(
                    c.kind(),
                    crate::ingest::ColumnKind::Latitude | crate::ingest::ColumnKind::Longitude
                )
            })
            .map(|c| c.name().to_string())
            .collect(),
    };
    let vars: Vec<String> = table
        .column_names()
        .into_iter()
        .filter(|n| !skip.iter().any(|s| s == n))
        .map(str::to_string)
        .collect();
    if vars.is_empty() {
        return Err(MissingnessError::EmptyVariableList.into());
    }
    Ok(vars)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

// ---------------------------------------------------------- row tallies

/// Column names and race labels used to tally rows.
#[derive(Debug, Clone)]
pub struct RowColumns {
    pub race: String,
    pub search: String,
    pub contraband: String,
    pub black_label: String,
    pub white_label: String,
}

enum Race {
    Black,
    White,
    Na,
    Other,
}

fn race_of(table: &StopTable, col: usize, row: usize, cols: &RowColumns) -> Race {
    match table.column_at(col).cell(row) {
        None => Race::Na,
        Some(c) => {
            let s = c.to_string();
            if s.eq_ignore_ascii_case(&cols.black_label) {
                Race::Black
            } else if s.eq_ignore_ascii_case(&cols.white_label) {
                Race::White
            } else {
                Race::Other
            }
        }
    }
}

fn bool_cell(table: &StopTable, col: usize, row: usize) -> Option<bool> {
    match table.column_at(col).cell(row)? {
        Cell::Boolean(b) => Some(b),
        other => match other.to_string().to_ascii_lowercase().as_str() {
            "true" | "t" | "1" | "yes" | "y" => Some(true),
            "false" | "f" | "0" | "no" | "n" => Some(false),
            _ => None,
        },
    }
}

fn col_index(table: &StopTable, name: &str) -> Result<usize, ReportError> {
    table
        .column_names()
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| IngestError::UnknownColumn(name.to_string()).into())
}

/// Searched rows tallied per group. Rows that were not searched, have an
/// unknown search or contraband value, or a race other than the two compared
/// are left out; the second value counts the unknown search/contraband rows.
pub fn outcome_counts_from_rows(
    table: &StopTable,
    group_by: Option<&str>,
    cols: &RowColumns,
) -> Result<(Vec<RaceOutcomeCounts>, usize), ReportError> {
    let race = col_index(table, &cols.race)?;
    let search = col_index(table, &cols.search)?;
    let contraband = col_index(table, &cols.contraband)?;
    let group = group_by.map(|g| col_index(table, g)).transpose()?;
    let mut groups: BTreeMap<String, RaceOutcomeCounts> = BTreeMap::new();
    let mut unknown = 0;
    for row in 0..table.n_rows() {
        let key = match group {
            Some(g) => table
                .column_at(g)
                .cell(row)
                .map_or_else(|| "NA".to_string(), |c| c.to_string()),
            None => "all".to_string(),
        };
        let entry = groups
            .entry(key.clone())
            .or_insert_with(|| RaceOutcomeCounts {
                group_id: key,
                ..Default::default()
            });
        let hit = match bool_cell(table, search, row) {
            None => {
                unknown += 1;
                continue;
            }
            Some(false) => continue,
            Some(true) => match bool_cell(table, contraband, row) {
                None => {
                    unknown += 1;
                    continue;
                }
                Some(h) => h,
            },
        };
        let slot = match (race_of(table, race, row, cols), hit) {
            (Race::Black, true) => &mut entry.black_hit,
            (Race::Black, false) => &mut entry.black_miss,
            (Race::White, true) => &mut entry.white_hit,
            (Race::White, false) => &mut entry.white_miss,
            (Race::Na, true) => &mut entry.na_hit,
            (Race::Na, false) => &mut entry.na_miss,
            (Race::Other, _) => continue,
        };
        *slot += 1;
    }
    Ok((groups.into_values().collect(), unknown))
}

/// Stops and searches by race; the second value counts rows with an unknown search.
pub fn stop_counts_from_rows(
    table: &StopTable,
    cols: &RowColumns,
) -> Result<(StopSearchCounts, usize), ReportError> {
    let race = col_index(table, &cols.race)?;
    let search = col_index(table, &cols.search)?;
    let mut c = StopSearchCounts::default();
    let mut unknown = 0;
    for row in 0..table.n_rows() {
        let Some(s) = bool_cell(table, search, row) else {
            unknown += 1;
            continue;
        };
        let (stops, searched) = match race_of(table, race, row, cols) {
            Race::Black => (&mut c.black_stops, &mut c.black_searched),
            Race::White => (&mut c.white_stops, &mut c.white_searched),
            Race::Na => (&mut c.na_stops, &mut c.na_searched),
            Race::Other => continue,
        };
        *stops += 1;
        *searched += s as u64;
    }
    Ok((c, unknown))
}

// --------------------------------------------------------- outcome-sens

/// Counts file row; `group` names the county or department.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub group: String,
    pub black_hit: u64,
    pub black_miss: u64,
    pub white_hit: u64,
    pub white_miss: u64,
    pub na_hit: u64,
    pub na_miss: u64,
}

impl From<CountsRow> for RaceOutcomeCounts {
    fn from(r: CountsRow) -> Self {
        RaceOutcomeCounts {
            group_id: r.group,
            black_hit: r.black_hit,
            black_miss: r.black_miss,
            white_hit: r.white_hit,
            white_miss: r.white_miss,
            na_hit: r.na_hit,
            na_miss: r.na_miss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub group: String,
    pub a: u64,
    pub b: u64,
    pub prop_white: Option<f64>,
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub black_hit: u64,
    pub black_miss: u64,
    pub white_hit: u64,
    pub white_miss: u64,
    pub na_hit: u64,
    pub na_miss: u64,
    pub ignore_na: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub median: Option<f64>,
    pub classification: String,
    pub exclusion: Option<String>,
    pub exhaustive: bool,
    pub n_allocations: usize,
}

/// One row shaped like the statewide sign-switch table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub total_groups: usize,
    pub groups_with_missingness: usize,
    pub ignore_na_negative: usize,
    pub ignore_na_positive: usize,
    pub negative_to_positive: usize,
    pub positive_to_negative: usize,
    pub remains_negative: usize,
    pub remains_positive: usize,
}

fn read_counts_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn run_outcome_sens(
    args: &cli::OutcomeSensArgs,
    ctx: &RunContext,
) -> Result<RunManifest, ReportError> {
    let mut out = Outputs::new(&ctx.out)?;
    let (counts, unknown, dataset_id) = match (&args.counts, &args.input) {
        (Some(path), None) => {
            let rows: Vec<CountsRow> = read_counts_csv(path)?;
            let counts = rows.into_iter().map(RaceOutcomeCounts::from).collect();
            (counts, 0, ctx.dataset_id(Some(path)))
        }
        (None, Some(input)) => {
            let table = ctx.load(input)?;
            let (counts, unknown) = outcome_counts_from_rows(
                &table,
                args.group_by.as_deref(),
                &args.columns.to_row_columns(),
            )?;
            (counts, unknown, ctx.dataset_id(Some(input)))
        }
        _ => {
            return Err(ReportError::Usage(
                "give exactly one of an input table or --counts".into(),
            ))
        }
    };
    if counts.is_empty() {
        return Err(ReportError::Usage("no groups to analyze".into()));
    }
    out.lap("load");
    let counties = all_counties(&counts, args.cap);
    let summary = statewide_summary(&counties);
    out.lap("analyze");

    let mut points = Vec::new();
    let mut groups = Vec::new();
    let mut boxes = Vec::new();
    for c in &counties {
        let mut values: Vec<f64> = c.points.iter().map(|p| p.disparity).collect();
        groups.push(GroupRow {
            group: c.group_id.clone(),
            black_hit: c.counts.black_hit,
            black_miss: c.counts.black_miss,
            white_hit: c.counts.white_hit,
            white_miss: c.counts.white_miss,
            na_hit: c.counts.na_hit,
            na_miss: c.counts.na_miss,
            ignore_na: c.ignore_na_disparity,
            min: c.min_disparity,
            max: c.max_disparity,
            median: median(&mut values),
            classification: c.classification.label().to_string(),
            exclusion: c.exclusion.as_ref().map(|e| e.code().to_string()),
            exhaustive: c.exhaustive,
            n_allocations: c.points.len(),
        });
        points.extend(c.points.iter().map(|p| PointRow {
            group: c.group_id.clone(),
            a: p.a,
            b: p.b,
            prop_white: p.prop_white,
            disparity: p.disparity,
        }));
        boxes.extend(boxplot_summary(c, args.buckets));
    }
    out.csv("outcome_points.csv", &points)?;
    out.csv("outcome_groups.csv", &groups)?;
    out.csv("outcome_boxplot.csv", &boxes)?;
    out.csv(
        "outcome_summary.csv",
        &[SummaryRow {
            dataset: dataset_id.clone(),
            total_groups: summary.total_groups,
            groups_with_missingness: summary.groups_with_missingness,
            ignore_na_negative: summary.ignore_na_negative,
            ignore_na_positive: summary.ignore_na_positive,
            negative_to_positive: summary.negative_to_positive,
            positive_to_negative: summary.positive_to_negative,
            remains_negative: summary.remains_negative,
            remains_positive: summary.remains_positive,
        }],
    )?;
    out.json(
        "outcome_summary.json",
        &serde_json::json!({
            "dataset_id": dataset_id,
            "cap": args.cap,
            "summary": summary,
            "rows_with_unknown_search_or_contraband": unknown,
        }),
    )?;
    drop(points);
    out.lap("write");

    let group_back: Vec<GroupRow> = out.read_csv("outcome_groups.csv")?;
    let point_back: Vec<PointRow> = out.read_csv("outcome_points.csv")?;
    let mut by_group: BTreeMap<&str, Vec<(Option<f64>, f64)>> = BTreeMap::new();
    for p in &point_back {
        by_group
            .entry(p.group.as_str())
            .or_default()
            .push((p.prop_white, p.disparity));
    }
    let panels: Vec<StripPanel> = group_back
        .iter()
        .filter_map(|g| {
            let pts = by_group.remove(g.group.as_str())?;
            Some(StripPanel {
                group: g.group.clone(),
                points: thin(pts, args.svg_max_points),
                median: g.median?,
                ignore_na: g.ignore_na,
            })
        })
        .collect();
    if !panels.is_empty() {
        out.text("outcome_strip.svg", &render_svg(&Chart::Strip(panels))?)?;
    }
    let exclusion_only = counties
        .iter()
        .all(|c| c.classification == Classification::Excluded);
    out.finish(
        ctx,
        "outcome-sens",
        dataset_id,
        None,
        exclusion_only,
        MANIFEST_FILE,
    )
}

/// Every k-th mark once a panel exceeds `max` marks; endpoints are kept.
fn thin<T: Copy>(points: Vec<T>, max: usize) -> Vec<T> {
    let max = max.max(2);
    if points.len() <= max {
        return points;
    }
    let n = points.len();
    (0..max).map(|i| points[i * (n - 1) / (max - 1)]).collect()
}

// ------------------------------------------------------------- ate-sens

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub plan: String,
    pub p_white: Option<f64>,
    pub draw: u32,
    pub rho: f64,
    pub naive: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<&AteRow> for BoundsRow {
    fn from(r: &AteRow) -> Self {
        BoundsRow {
            plan: r.plan.clone(),
            p_white: r.p_white,
            draw: r.draw,
            rho: r.rho,
            naive: r.naive,
            lower: r.lower,
            upper: r.upper,
        }
    }
}

fn plan_label(r: &BoundsRow) -> String {
    match r.p_white {
        Some(p) => format!("{} p_white={p} draw={}", r.plan, r.draw),
        None => r.plan.clone(),
    }
}

fn run_ate_sens(args: &cli::AteSensArgs, ctx: &RunContext) -> Result<RunManifest, ReportError> {
    let mut out = Outputs::new(&ctx.out)?;
    let (counts, unknown, dataset_id) = match (&args.counts, &args.input) {
        (Some(path), None) => {
            let rows: Vec<StopSearchCounts> = read_counts_csv(path)?;
            let [c] = rows[..] else {
                return Err(IngestError::Config(format!(
                    "{}: expected exactly one counts row, found {}",
                    path.display(),
                    rows.len()
                ))
                .into());
            };
            (c, 0, ctx.dataset_id(Some(path)))
        }
        (None, Some(input)) => {
            let table = ctx.load(input)?;
            let (c, unknown) = stop_counts_from_rows(&table, &args.columns.to_row_columns())?;
            (c, unknown, ctx.dataset_id(Some(input)))
        }
        _ => {
            return Err(ReportError::Usage(
                "give exactly one of an input table or --counts".into(),
            ))
        }
    };
    out.lap("load");
    let plans = standard_plans(&args.props, !args.no_extremes);
    let rows = ate_sensitivity_run(
        &counts,
        &args.rhos,
        &plans,
        args.draws,
        ctx.seed,
        args.estimand,
    )?;
    out.lap("analyze");
    let bounds: Vec<BoundsRow> = rows.iter().map(BoundsRow::from).collect();
    out.csv("ate_bounds.csv", &bounds)?;

    let back: Vec<BoundsRow> = out.read_csv("ate_bounds.csv")?;
    let mut rhos: Vec<f64> = Vec::new();
    for r in &back {
        if !rhos.contains(&r.rho) {
            rhos.push(r.rho);
        }
    }
    let panels: Vec<RibbonPanel> = rhos
        .iter()
        .map(|&rho| RibbonPanel {
            rho,
            entries: back
                .iter()
                .filter(|r| r.rho == rho)
                .map(|r| RibbonEntry {
                    label: plan_label(r),
                    naive: r.naive,
                    lower: r.lower,
                    upper: r.upper,
                })
                .collect(),
        })
        .collect();
    let ribbon = serde_json::json!({
        "dataset_id": dataset_id,
        "estimand": args.estimand,
        "seed": ctx.seed,
        "draws": args.draws,
        "counts": counts,
        "rows_with_unknown_search": unknown,
        "zero_line": { "value": 0.0, "dashed": true },
        "panels": panels.iter().map(|p| serde_json::json!({
            "rho": p.rho,
            "entries": back.iter().filter(|r| r.rho == p.rho).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    out.json("ate_ribbon.json", &ribbon)?;
    out.lap("write");
    out.text("ate_bounds.svg", &render_svg(&Chart::Ribbon(panels))?)?;
    out.finish(
        ctx,
        "ate-sens",
        dataset_id,
        Some(ctx.seed),
        false,
        MANIFEST_FILE,
    )
}

// ---------------------------------------------------------------- synth

/// Writes a table as CSV with `NA` for masked cells.
pub fn write_table_csv(table: &StopTable, path: &Path) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(table.column_names())?;
    let mut record = Vec::with_capacity(table.n_cols());
    for row in 0..table.n_rows() {
        record.clear();
        for col in table.columns() {
            record.push(
                col.cell(row)
                    .map_or_else(|| "NA".to_string(), |c| c.to_string()),
            );
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn run_synth(args: &cli::SynthArgs, ctx: &RunContext) -> Result<RunManifest, ReportError> {
    let masked_path = &ctx.out;
    if masked_path.extension().is_none_or(|e| e != "csv") {
        return Err(ReportError::Usage("synth needs --out <file>.csv".into()));
    }
    let dir = match masked_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = masked_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synth".into());
    let mut out = Outputs::new(&dir)?;
    let spec = MechanismSpec::new(args.mechanism()?, args.rows, args.days, ctx.seed);
    let table = generate(&spec)?;
    out.lap("generate");

    let masked_name = format!("{stem}.csv");
    let shadow_name = format!("{stem}.shadow.csv");
    write_table_csv(&table.masked, &out.path(&masked_name))?;
    out.names.push(masked_name);
    write_table_csv(&table.shadow, &out.path(&shadow_name))?;
    out.names.push(shadow_name);
    let schema = TableConfig {
        columns: synth_schema(),
        na_tokens: Some(vec!["NA".into()]),
        delimiter: None,
        dataset_id: Some(stem.clone()),
        core_variables: None,
    };
    out.text(&format!("{stem}.schema.toml"), &toml::to_string(&schema)?)?;
    out.json(&format!("{stem}.mechanism.json"), &spec)?;
    out.lap("write");
    out.finish(
        ctx,
        "synth",
        stem.clone(),
        Some(ctx.seed),
        false,
        &format!("{stem}.manifest.json"),
    )
}
