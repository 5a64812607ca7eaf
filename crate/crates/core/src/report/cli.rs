//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{run_pipeline, ReportError, RowColumns, RunContext};
use crate::ate_sens::{Estimand, DEFAULT_PROPORTIONS, DEFAULT_RHOS};
use crate::binning::BinKind;
use crate::outcome_sens::DEFAULT_ENUMERATION_CAP;
use crate::synth::{MarDriver, Mechanism};

#[derive(Debug, Parser)]
#[command(
    name = "stopaudit",
    version,
    about = "Missing-data audit and race-label sensitivity analysis for stop records"
)]
pub struct Cli {
    /// Table schema and NA tokens (TOML or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; for `synth`, the masked CSV path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Conditional missingness rates per bin and their maximal correlation.
    Audit(AuditArgs),
    /// Outcome-test disparity over all NA-race allocations.
    OutcomeSens(OutcomeSensArgs),
    /// Search ATE bounds over rho and NA-race augmentation plans.
    AteSens(AteSensArgs),
    /// Synthetic stop table with a known missingness mechanism.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Audit(_) => "audit",
            Command::OutcomeSens(_) => "outcome-sens",
            Command::AteSens(_) => "ate-sens",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    pub input: PathBuf,
    /// Conditioning column, or `latlon` for the coordinate pair.
    #[arg(long, default_value = "date")]
    pub conditioning: String,
    #[arg(long, default_value = "week")]
    pub bin: BinKind,
    #[arg(long, default_value_t = 6)]
    pub geohash_precision: u8,
    /// dCMR variables; defaults to the core variables present.
    #[arg(long, value_delimiter = ',')]
    pub variables: Option<Vec<String>>,
    /// Variables that also get their own CMR series.
    #[arg(long, value_delimiter = ',')]
    pub cmr: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ColumnArgs {
    #[arg(long, default_value = "subject_race")]
    pub race_col: String,
    #[arg(long, default_value = "search_conducted")]
    pub search_col: String,
    #[arg(long, default_value = "contraband_found")]
    pub contraband_col: String,
    #[arg(long, default_value = "black")]
    pub black_label: String,
    #[arg(long, default_value = "white")]
    pub white_label: String,
}

impl ColumnArgs {
    pub fn to_row_columns(&self) -> RowColumns {
        RowColumns {
            race: self.race_col.clone(),
            search: self.search_col.clone(),
            contraband: self.contraband_col.clone(),
            black_label: self.black_label.clone(),
            white_label: self.white_label.clone(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutcomeSensArgs {
    /// Row-level table (needs --config).
    pub input: Option<PathBuf>,
    /// Pre-tallied counts: group,black_hit,black_miss,white_hit,white_miss,na_hit,na_miss.
    #[arg(long, conflicts_with = "input")]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub group_by: Option<String>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    /// Allocations evaluated per group before the grid is thinned.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    /// prop_white buckets in the box-plot summary.
    #[arg(long, default_value_t = 10)]
    pub buckets: usize,
    /// Marks drawn per strip in the SVG.
    #[arg(long, default_value_t = 5000)]
    pub svg_max_points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AteSensArgs {
    /// Row-level table (needs --config).
    pub input: Option<PathBuf>,
    /// One-row counts: black_searched,black_stops,white_searched,white_stops,na_searched,na_stops.
    #[arg(long, conflicts_with = "input")]
    pub counts: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RHOS)]
    pub rhos: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PROPORTIONS)]
    pub props: Vec<f64>,
    /// Random draws per proportion.
    #[arg(long, default_value_t = 10)]
    pub draws: u32,
    #[arg(long, default_value = "pooled")]
    pub estimand: Estimand,
    /// Leave out the two extreme plans.
    #[arg(long)]
    pub no_extremes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismKind {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub mechanism: MechanismKind,
    #[arg(long, default_value_t = 10_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 350)]
    pub days: u32,
    /// MCAR mask probability.
    #[arg(long, default_value_t = 0.2)]
    pub p: f64,
    /// MCAR target columns.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "time,subject_race,search_conducted,contraband_found"
    )]
    pub targets: Vec<String>,
    /// MAR target column.
    #[arg(long, default_value = "subject_race")]
    pub target: String,
    #[arg(long, default_value = "date")]
    pub driver: String,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub intercept: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub slope: f64,
    /// MNAR mask rates per race, e.g. `black=0.4,white=0.1`.
    #[arg(long, value_delimiter = ',', default_value = "black=0.4,white=0.1")]
    pub rates: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    pub default_rate: f64,
}

impl SynthArgs {
    pub fn mechanism(&self) -> Result<Mechanism, ReportError> {
        Ok(match self.mechanism {
            MechanismKind::Mcar => Mechanism::Mcar {
                p: self.p,
                targets: self.targets.clone(),
            },
            MechanismKind::Mar => Mechanism::Mar {
                target: self.target.clone(),
                driver: match self.driver.as_str() {
                    "date" => MarDriver::Date,
                    "time" => MarDriver::Time,
                    other => {
                        return Err(ReportError::Usage(format!(
                            "MAR driver must be date or time, got {other:?}"
                        )))
                    }
                },
                intercept: self.intercept,
                slope: self.slope,
            },
            MechanismKind::Mnar => Mechanism::Mnar {
                rates: self
                    .rates
                    .iter()
                    .map(|kv| {
                        let (k, v) = kv.split_once('=').ok_or_else(|| {
                            ReportError::Usage(format!("rate {kv:?} is not race=p"))
                        })?;
                        let p = v.trim().parse::<f64>().map_err(|_| {
                            ReportError::Usage(format!("rate {kv:?} is not race=p"))
                        })?;
                        Ok((k.trim().to_string(), p))
                    })
                    .collect::<Result<_, ReportError>>()?,
                default_rate: self.default_rate,
            },
        })
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let out = match (&cli.out, &cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::Synth(_)) => {
            eprintln!("error: synth needs --out <file>.csv");
            return 2;
        }
        (None, _) => PathBuf::from("."),
    };
    let mut ctx = RunContext::new(out);
    ctx.seed = cli.seed;
    ctx.argv = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    if let Some(path) = &cli.config {
        ctx = match ctx.with_config_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        };
    }
    match run_pipeline(&cli.command, &ctx) {
        Ok(manifest) if manifest.exclusion_only => {
            eprintln!("{}: every group was excluded", cli.command.name());
            1
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
