//! Loading delimited stop-record files into a typed, columnar [`StopTable`].
//!
//! Every cell is parsed under the declared [`ColumnKind`]. Cells matching an
//! NA token (trimmed, case-insensitive) or failing to parse are masked; the
//! two causes are counted separately per column so that recorded NA can be
//! told apart from corrupted values.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// NA encodings recognised when a config does not override them.
pub const DEFAULT_NA_TOKENS: [&str; 6] = ["", "NA", "N/A", "NULL", "null", "unknown"];

/// The twenty variables most commonly recorded across stop datasets, using
/// the column names of the public stop-record exports.
pub const CORE_VARIABLES: [&str; 20] = [
    "date",
    "subject_race",
    "outcome",
    "location",
    "time",
    "subject_sex",
    "citation_issued",
    "subject_age",
    "lat",
    "lng",
    "warning_issued",
    "arrest_made",
    "search_conducted",
    "violation",
    "officer_id_hash",
    "contraband_found",
    "search_basis",
    "reason_for_stop",
    "county_name",
    "vehicle_make",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column \"{0}\" in header")]
    MissingColumn(String),
    #[error("duplicate header name \"{0}\"")]
    DuplicateHeader(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("zero surviving columns after core-variable selection")]
    NoSurvivingColumns,
    #[error("unknown column \"{0}\"")]
    UnknownColumn(String),
    #[error("column \"{name}\" has {got} values, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Date,
    Time,
    Number,
    Category,
    Boolean,
    Latitude,
    Longitude,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnRole {
    ConditioningCandidate,
    #[default]
    Analysis,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub role: ColumnRole,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }
}

/// Checks that names are unique and that latitude/longitude appear at most once.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    let (mut lat, mut lon) = (0, 0);
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(IngestError::InvalidSchema(format!(
                "column \"{}\" declared twice",
                col.name
            )));
        }
        match col.kind {
            ColumnKind::Latitude => lat += 1,
            ColumnKind::Longitude => lon += 1,
            _ => {}
        }
    }
    if lat > 1 || lon > 1 {
        return Err(IngestError::InvalidSchema(
            "latitude and longitude columns may each appear at most once".into(),
        ));
    }
    Ok(())
}

/// Case-insensitive, whitespace-trimmed NA token set.
#[derive(Debug, Clone)]
pub struct NaTokens(HashSet<String>);

impl NaTokens {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            tokens
                .into_iter()
                .map(|t| t.as_ref().trim().to_lowercase())
                .collect(),
        )
    }

    pub fn is_na(&self, raw: &str) -> bool {
        self.0.contains(&raw.trim().to_lowercase())
    }
}

impl Default for NaTokens {
    fn default() -> Self {
        Self::new(DEFAULT_NA_TOKENS)
    }
}

/// Typed storage for one column. Masked positions hold a placeholder value.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Date(Vec<NaiveDate>),
    Time(Vec<NaiveTime>),
    Float(Vec<f64>),
    Bool(Vec<bool>),
    Str(Vec<String>),
}

impl ColumnValues {
    fn with_capacity(kind: ColumnKind, cap: usize) -> Self {
        match kind {
            ColumnKind::Date => Self::Date(Vec::with_capacity(cap)),
            ColumnKind::Time => Self::Time(Vec::with_capacity(cap)),
            ColumnKind::Number | ColumnKind::Latitude | ColumnKind::Longitude => {
                Self::Float(Vec::with_capacity(cap))
            }
            ColumnKind::Boolean => Self::Bool(Vec::with_capacity(cap)),
            ColumnKind::Category | ColumnKind::Text => Self::Str(Vec::with_capacity(cap)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Date(v) => v.len(),
            Self::Time(v) => v.len(),
            Self::Float(v) => v.len(),
            Self::Bool(v) => v.len(),
            Self::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn matches(&self, kind: ColumnKind) -> bool {
        matches!(
            (self, kind),
            (Self::Date(_), ColumnKind::Date)
                | (Self::Time(_), ColumnKind::Time)
                | (
                    Self::Float(_),
                    ColumnKind::Number | ColumnKind::Latitude | ColumnKind::Longitude
                )
                | (Self::Bool(_), ColumnKind::Boolean)
                | (Self::Str(_), ColumnKind::Category | ColumnKind::Text)
        )
    }

    /// Parses `raw` and appends it; on failure appends a placeholder and returns false.
    fn push_parsed(&mut self, kind: ColumnKind, raw: &str) -> bool {
        let raw = raw.trim();
        match self {
            Self::Date(v) => match NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
                Ok(d) => {
                    v.push(d);
                    true
                }
                Err(_) => {
                    v.push(NaiveDate::default());
                    false
                }
            },
            Self::Time(v) => match NaiveTime::parse_from_str(raw, "%H:%M:%S") {
                Ok(t) => {
                    v.push(t);
                    true
                }
                Err(_) => {
                    v.push(NaiveTime::default());
                    false
                }
            },
            Self::Float(v) => {
                let parsed = raw.parse::<f64>().ok().filter(|x| match kind {
                    ColumnKind::Latitude => (-90.0..=90.0).contains(x),
                    ColumnKind::Longitude => (-180.0..=180.0).contains(x),
                    _ => x.is_finite(),
                });
                v.push(parsed.unwrap_or(0.0));
                parsed.is_some()
            }
            Self::Bool(v) => {
                let parsed = parse_bool(raw);
                v.push(parsed.unwrap_or(false));
                parsed.is_some()
            }
            Self::Str(v) => {
                v.push(raw.to_string());
                true
            }
        }
    }

    fn push_placeholder(&mut self) {
        match self {
            Self::Date(v) => v.push(NaiveDate::default()),
            Self::Time(v) => v.push(NaiveTime::default()),
            Self::Float(v) => v.push(0.0),
            Self::Bool(v) => v.push(false),
            Self::Str(v) => v.push(String::new()),
        }
    }
}

pub(crate) fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "t" | "1" | "yes" | "y" => Some(true),
        "false" | "f" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// A borrowed, typed, non-NA cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Date(NaiveDate),
    Time(NaiveTime),
    Number(f64),
    Latitude(f64),
    Longitude(f64),
    Boolean(bool),
    Category(&'a str),
    Text(&'a str),
}

impl std::fmt::Display for Cell<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Cell::Time(t) => write!(f, "{}", t.format("%H:%M:%S")),
            Cell::Number(x) | Cell::Latitude(x) | Cell::Longitude(x) => write!(f, "{x}"),
            Cell::Boolean(b) => write!(f, "{b}"),
            Cell::Category(s) | Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    schema: ColumnSchema,
    values: ColumnValues,
    mask: Vec<bool>,
    coercion_failures: usize,
}

impl Column {
    /// Builds a column from typed values and an NA mask.
    pub fn new(
        schema: ColumnSchema,
        values: ColumnValues,
        mask: Vec<bool>,
    ) -> Result<Self, IngestError> {
        if !values.matches(schema.kind) {
            return Err(IngestError::InvalidSchema(format!(
                "values for \"{}\" do not match kind {:?}",
                schema.name, schema.kind
            )));
        }
        if values.len() != mask.len() {
            return Err(IngestError::LengthMismatch {
                name: schema.name,
                got: mask.len(),
                expected: values.len(),
            });
        }
        Ok(Self {
            schema,
            values,
            mask,
            coercion_failures: 0,
        })
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.schema.kind
    }

    pub fn values(&self) -> &ColumnValues {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_na(&self, row: usize) -> bool {
        self.mask[row]
    }

    pub fn na_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Cells masked because they failed to parse under the declared kind.
    pub fn coercion_failures(&self) -> usize {
        self.coercion_failures
    }

    pub fn cell(&self, row: usize) -> Option<Cell<'_>> {
        if self.mask[row] {
            return None;
        }
        Some(match (&self.values, self.schema.kind) {
            (ColumnValues::Date(v), _) => Cell::Date(v[row]),
            (ColumnValues::Time(v), _) => Cell::Time(v[row]),
            (ColumnValues::Float(v), ColumnKind::Latitude) => Cell::Latitude(v[row]),
            (ColumnValues::Float(v), ColumnKind::Longitude) => Cell::Longitude(v[row]),
            (ColumnValues::Float(v), _) => Cell::Number(v[row]),
            (ColumnValues::Bool(v), _) => Cell::Boolean(v[row]),
            (ColumnValues::Str(v), ColumnKind::Text) => Cell::Text(&v[row]),
            (ColumnValues::Str(v), _) => Cell::Category(&v[row]),
        })
    }
}

/// Immutable columnar table of stop records with an explicit NA mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StopTable {
    columns: Vec<Arc<Column>>,
    n_rows: usize,
}

impl StopTable {
    pub fn from_columns(columns: Vec<Column>) -> Result<Self, IngestError> {
        let schema: Vec<_> = columns.iter().map(|c| c.schema.clone()).collect();
        validate_schema(&schema)?;
        let n_rows = columns.first().map_or(0, Column::len);
        for c in &columns {
            if c.len() != n_rows {
                return Err(IngestError::LengthMismatch {
                    name: c.name().to_string(),
                    got: c.len(),
                    expected: n_rows,
                });
            }
        }
        Ok(Self {
            columns: columns.into_iter().map(Arc::new).collect(),
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &Column> {
        self.columns.iter().map(|c| c.as_ref())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name() == name)
            .map(|c| c.as_ref())
    }

    pub fn column_at(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn require(&self, name: &str) -> Result<&Column, IngestError> {
        self.column(name)
            .ok_or_else(|| IngestError::UnknownColumn(name.to_string()))
    }

    /// Entry (i, j) of the NA mask.
    pub fn is_na(&self, row: usize, col: usize) -> bool {
        self.columns[col].mask[row]
    }

    pub fn total_na(&self) -> usize {
        self.columns.iter().map(|c| c.na_count()).sum()
    }

    /// The unique column of the given kind, if present.
    pub fn column_of_kind(&self, kind: ColumnKind) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.kind() == kind)
            .map(|c| c.as_ref())
    }

    fn select(&self, keep: impl Fn(&Column) -> bool) -> Self {
        Self {
            columns: self.columns.iter().filter(|c| keep(c)).cloned().collect(),
            n_rows: self.n_rows,
        }
    }
}

/// Reader options: schema, NA tokens and field delimiter.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema: Vec<ColumnSchema>,
    pub na_tokens: NaTokens,
    pub delimiter: u8,
}

impl LoadOptions {
    pub fn new(schema: Vec<ColumnSchema>) -> Self {
        Self {
            schema,
            na_tokens: NaTokens::default(),
            delimiter: b',',
        }
    }
}

/// Dataset description read from a TOML or JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableConfig {
    pub columns: Vec<ColumnSchema>,
    #[serde(default)]
    pub na_tokens: Option<Vec<String>>,
    #[serde(default)]
    pub delimiter: Option<String>,
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub core_variables: Option<Vec<String>>,
}

impl TableConfig {
    /// Parses config text; JSON if it starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| IngestError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn load_options(&self) -> Result<LoadOptions, IngestError> {
        let delimiter = match self.delimiter.as_deref() {
            None => b',',
            Some("\\t") | Some("\t") => b'\t',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some(d) => {
                return Err(IngestError::Config(format!(
                    "delimiter must be a single byte, got {d:?}"
                )))
            }
        };
        Ok(LoadOptions {
            schema: self.columns.clone(),
            na_tokens: self
                .na_tokens
                .as_ref()
                .map(NaTokens::new)
                .unwrap_or_default(),
            delimiter,
        })
    }
}

pub fn load_table(path: &Path, opts: &LoadOptions) -> Result<StopTable, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table(file, opts)
}

/// Reads delimited text with a header row into a [`StopTable`].
pub fn read_table<R: Read>(reader: R, opts: &LoadOptions) -> Result<StopTable, IngestError> {
    validate_schema(&opts.schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    let mut positions: HashMap<&str, usize> = HashMap::new();
    for (idx, name) in header.iter().enumerate() {
        if positions.insert(name.trim(), idx).is_some() {
            return Err(IngestError::DuplicateHeader(name.trim().to_string()));
        }
    }
    let source_idx = opts
        .schema
        .iter()
        .map(|c| {
            positions
                .get(c.name.as_str())
                .copied()
                .ok_or_else(|| IngestError::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut values: Vec<ColumnValues> = opts
        .schema
        .iter()
        .map(|c| ColumnValues::with_capacity(c.kind, 0))
        .collect();
    let mut masks: Vec<Vec<bool>> = vec![Vec::new(); opts.schema.len()];
    let mut failures = vec![0usize; opts.schema.len()];

    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        for (j, col) in opts.schema.iter().enumerate() {
            let raw = record.get(source_idx[j]).unwrap_or("");
            if opts.na_tokens.is_na(raw) {
                values[j].push_placeholder();
                masks[j].push(true);
            } else if values[j].push_parsed(col.kind, raw) {
                masks[j].push(false);
            } else {
                masks[j].push(true);
                failures[j] += 1;
            }
        }
    }

    let columns = opts
        .schema
        .iter()
        .zip(values)
        .zip(masks)
        .zip(failures)
        .map(|(((schema, values), mask), coercion_failures)| Column {
            schema: schema.clone(),
            values,
            mask,
            coercion_failures,
        })
        .collect();
    StopTable::from_columns(columns)
}

/// Result of restricting a table to the core variable list.
#[derive(Debug, Clone)]
pub struct CoreSubset {
    pub table: StopTable,
    /// Requested names with no matching column.
    pub skipped: Vec<String>,
}

pub fn core_variable_subset<S: AsRef<str>>(
    table: &StopTable,
    core_list: &[S],
) -> Result<CoreSubset, IngestError> {
    let wanted: BTreeSet<&str> = core_list.iter().map(AsRef::as_ref).collect();
    let subset = table.select(|c| wanted.contains(c.name()));
    if subset.n_cols() == 0 {
        return Err(IngestError::NoSurvivingColumns);
    }
    let present: HashSet<&str> = table.column_names().into_iter().collect();
    let skipped = core_list
        .iter()
        .map(AsRef::as_ref)
        .filter(|n| !present.contains(n))
        .map(str::to_string)
        .collect();
    Ok(CoreSubset {
        table: subset,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableMissingSummary {
    pub variable: String,
    /// `None` when the table has no rows.
    pub pct_missing: Option<f64>,
    pub n_total: usize,
    pub n_missing: usize,
    pub coercion_failures: usize,
}

pub fn per_variable_missing_summary(table: &StopTable) -> Vec<VariableMissingSummary> {
    table
        .columns()
        .map(|c| {
            let n_missing = c.na_count();
            VariableMissingSummary {
                variable: c.name().to_string(),
                pct_missing: (!c.is_empty()).then(|| n_missing as f64 / c.len() as f64),
                n_total: c.len(),
                n_missing,
                coercion_failures: c.coercion_failures(),
            }
        })
        .collect()
}
