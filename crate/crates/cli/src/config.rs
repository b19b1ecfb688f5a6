//! Run configuration: command-line flags layered over an optional TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use mkpca_core::ingest::{Schema, SynthesisConfig, TimePolicy};
use mkpca_core::kernel::{DEFAULT_PSD_TOL, DEFAULT_RANK_TOL};
use mkpca_core::CdfBounds;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricChoice {
    /// L2 distance between per-cell CDFs of the mass column.
    CdfL2,
    /// Euclidean distance between per-cell mass vectors.
    Euclidean,
}

impl MetricChoice {
    pub fn name(self) -> &'static str {
        match self {
            MetricChoice::CdfL2 => "cdf-l2",
            MetricChoice::Euclidean => "euclidean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimePolicyArg {
    Intersect,
    RequireComplete,
}

impl From<TimePolicyArg> for TimePolicy {
    fn from(p: TimePolicyArg) -> Self {
        match p {
            TimePolicyArg::Intersect => TimePolicy::Intersect,
            TimePolicyArg::RequireComplete => TimePolicy::RequireComplete,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Long-format life-table CSV.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Precomputed squared-distance matrix CSV (fit and check only).
    #[arg(long, value_name = "FILE")]
    pub distances: Option<PathBuf>,
    /// Column mapping: a TOML file, or inline `unit_id=Country,time=Year,...`.
    #[arg(long, value_name = "FILE|MAP")]
    pub schema: Option<String>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricChoice>,
    /// Number of components to retain.
    #[arg(long, value_name = "N")]
    pub components: Option<usize>,
    /// Negative eigenvalues above -psd_tol·λ_max are clamped to zero.
    #[arg(long, value_name = "X")]
    pub psd_tol: Option<f64>,
    /// Components with λ ≤ rank_tol·λ_1 are not retained.
    #[arg(long, value_name = "X")]
    pub rank_tol: Option<f64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for synthetic data.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub time_policy: Option<TimePolicyArg>,
    /// Drop ages below this value before building CDFs.
    #[arg(long, value_name = "AGE")]
    pub age_min: Option<f64>,
    /// Drop ages above this value before building CDFs.
    #[arg(long, value_name = "AGE")]
    pub age_max: Option<f64>,
    /// Divide time quadrature weights by the time span.
    #[arg(long)]
    pub normalize_time: bool,
    /// Largest accepted first CDF value.
    #[arg(long, value_name = "P")]
    pub first_max: Option<f64>,
    /// Smallest accepted last CDF value.
    #[arg(long, value_name = "P")]
    pub last_min: Option<f64>,
    /// Fitted model.json (transform only).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Number of synthetic units.
    #[arg(long, value_name = "N")]
    pub units: Option<usize>,
    /// Number of synthetic time points.
    #[arg(long, value_name = "T")]
    pub times: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SchemaSource {
    Inline(Schema),
    Path(String),
}

/// Contents of the optional `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    distances: Option<PathBuf>,
    schema: Option<SchemaSource>,
    metric: Option<MetricChoice>,
    components: Option<usize>,
    psd_tol: Option<f64>,
    rank_tol: Option<f64>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    time_policy: Option<TimePolicyArg>,
    age_min: Option<f64>,
    age_max: Option<f64>,
    normalize_time: Option<bool>,
    first_max: Option<f64>,
    last_min: Option<f64>,
    model: Option<PathBuf>,
    synth: Option<SynthesisConfig>,
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub schema: Schema,
    pub metric: MetricChoice,
    pub components: usize,
    pub psd_tol: f64,
    pub rank_tol: f64,
    pub out: PathBuf,
    pub time_policy: TimePolicy,
    pub age_min: Option<f64>,
    pub age_max: Option<f64>,
    pub normalize_time: bool,
    pub bounds: CdfBounds,
    pub model: Option<PathBuf>,
    pub synth: SynthesisConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `key=value` pairs separated by commas into a schema.
fn parse_inline_schema(arg: &str) -> Result<Schema, CliError> {
    let mut schema = Schema::default();
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| config_err(format!("schema entry `{part}` is not key=value")))?;
        let value = value.trim().to_string();
        match key.trim() {
            "unit_id" => schema.unit_id = value,
            "time" => schema.time = value,
            "age" => schema.age = value,
            "mass" => schema.mass = value,
            "group" => schema.group = Some(value),
            "delimiter" => {
                let mut chars = value.chars();
                schema.delimiter = match (chars.next(), chars.next()) {
                    (Some(c), None) => c,
                    _ if value == "\\t" || value == "tab" => '\t',
                    _ => return Err(config_err(format!("invalid delimiter `{value}`"))),
                };
            }
            other => return Err(config_err(format!("unknown schema key `{other}`"))),
        }
    }
    Ok(schema)
}

fn load_schema(arg: &str) -> Result<Schema, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read schema {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| config_err(format!("invalid schema {}: {e}", path.display())))
    } else {
        parse_inline_schema(arg)
    }
}

impl RunConfig {
    /// Resolves flags over the config file over built-in defaults.
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    config_err(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let schema = match (&args.schema, file.schema) {
            (Some(arg), _) => load_schema(arg)?,
            (None, Some(SchemaSource::Path(p))) => load_schema(&p)?,
            (None, Some(SchemaSource::Inline(s))) => s,
            (None, None) => Schema::default(),
        };

        let mut bounds = CdfBounds::default();
        if let Some(v) = args.first_max.or(file.first_max) {
            bounds.first_max = v;
        }
        if let Some(v) = args.last_min.or(file.last_min) {
            bounds.last_min = v;
        }

        let mut synth = file.synth.unwrap_or_default();
        if let Some(seed) = args.seed.or(file.seed) {
            synth.seed = seed;
        }
        if let Some(n) = args.units {
            synth.n_units = n;
        }
        if let Some(t) = args.times {
            synth.time_points = (0..t).map(|x| x as f64).collect();
        }

        let cfg = Self {
            input: args.input.clone().or(file.input),
            distances: args.distances.clone().or(file.distances),
            schema,
            metric: args.metric.or(file.metric).unwrap_or(MetricChoice::CdfL2),
            components: args.components.or(file.components).unwrap_or(2),
            psd_tol: args.psd_tol.or(file.psd_tol).unwrap_or(DEFAULT_PSD_TOL),
            rank_tol: args.rank_tol.or(file.rank_tol).unwrap_or(DEFAULT_RANK_TOL),
            out: args
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("mkpca-out")),
            time_policy: args
                .time_policy
                .or(file.time_policy)
                .unwrap_or(TimePolicyArg::Intersect)
                .into(),
            age_min: args.age_min.or(file.age_min),
            age_max: args.age_max.or(file.age_max),
            normalize_time: args.normalize_time || file.normalize_time.unwrap_or(false),
            bounds,
            model: args.model.clone().or(file.model),
            synth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.components == 0 {
            return Err(config_err("--components must be at least 1"));
        }
        for (name, v) in [("psd-tol", self.psd_tol), ("rank-tol", self.rank_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("--{name} must be positive, got {v}")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.age_min, self.age_max) {
            if lo > hi {
                return Err(config_err(format!("--age-min {lo} exceeds --age-max {hi}")));
            }
        }
        Ok(())
    }

    pub fn fit_options(&self) -> mkpca_core::FitOptions {
        mkpca_core::FitOptions {
            n_components: self.components,
            psd_tol: self.psd_tol,
            rank_tol: self.rank_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "components = 4\npsd_tol = 1e-6\nmetric = \"euclidean\"\n\n[schema]\nunit_id = \"Country\"\nmass = \"dx\"\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(path),
            components: Some(3),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.components, 3);
        assert_eq!(cfg.psd_tol, 1e-6);
        assert_eq!(cfg.metric, MetricChoice::Euclidean);
        assert_eq!(cfg.schema.unit_id, "Country");
        assert_eq!(cfg.schema.time, "time");
    }

    #[test]
    fn inline_schema() {
        let s = parse_inline_schema("unit_id=Country, time=Year,group=Region,delimiter=;").unwrap();
        assert_eq!(s.unit_id, "Country");
        assert_eq!(s.group.as_deref(), Some("Region"));
        assert_eq!(s.delimiter, ';');
        assert!(parse_inline_schema("colour=red").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let zero = CommonArgs {
            components: Some(0),
            ..CommonArgs::default()
        };
        assert!(matches!(
            RunConfig::resolve(&zero),
            Err(CliError::Config(_))
        ));
        let tol = CommonArgs {
            psd_tol: Some(-1.0),
            ..CommonArgs::default()
        };
        assert!(matches!(RunConfig::resolve(&tol), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_config_keys_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "colour = 1\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            ..CommonArgs::default()
        };
        assert!(matches!(
            RunConfig::resolve(&args),
            Err(CliError::Config(_))
        ));
    }
}
