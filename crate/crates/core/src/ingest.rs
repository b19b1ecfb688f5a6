//! Long-format life-table input, CDF panels, and seeded synthetic datasets.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::fmt::fmt_f64;
use crate::functional::{FunctionalDataset, MetricFunction, TimeGrid};
use crate::metric::{validate_cdf, AgeGrid, CdfBounds, Point, PointMetric};

/// One row of a long-format life table.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetableRecord {
    pub unit_id: String,
    pub time: f64,
    pub age: f64,
    /// Death count or density at this age; nonnegative.
    pub mass: f64,
    pub group: Option<String>,
}

/// Maps the required fields onto column names of an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub unit_id: String,
    pub time: String,
    pub age: String,
    pub mass: String,
    /// Optional label carried through to score files.
    pub group: Option<String>,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit_id: "unit_id".into(),
            time: "time".into(),
            age: "age".into(),
            mass: "mass".into(),
            group: None,
            delimiter: ',',
        }
    }
}

/// Parses a delimited file with a header row into records.
///
/// Errors carry the 1-based line number of the offending row.
pub fn parse_lifetable_csv<R: Read>(input: R, schema: &Schema) -> Result<Vec<LifetableRecord>> {
    if !schema.delimiter.is_ascii() {
        return Err(Error::ParseError {
            line: 0,
            message: format!("delimiter {:?} is not ASCII", schema.delimiter),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::ParseError {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::EmptyInput);
    }
    let column = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let unit_col = column(&schema.unit_id)?;
    let time_col = column(&schema.time)?;
    let age_col = column(&schema.age)?;
    let mass_col = column(&schema.mass)?;
    let group_col = schema.group.as_deref().map(column).transpose()?;

    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, TimeKey, TimeKey), u64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<&str> {
            match rec.get(idx).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::ParseError {
                    line,
                    message: format!("missing value for `{name}`"),
                }),
            }
        };
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = field(idx, name)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::ParseError {
                    line,
                    message: format!("`{name}` is not a finite number: {raw:?}"),
                }),
            }
        };
        let unit_id = field(unit_col, &schema.unit_id)?.to_string();
        let time = number(time_col, &schema.time)?;
        let age = number(age_col, &schema.age)?;
        let mass = number(mass_col, &schema.mass)?;
        if mass < 0.0 {
            return Err(Error::ParseError {
                line,
                message: format!("negative `{}` value {mass}", schema.mass),
            });
        }
        let group = match group_col {
            Some(idx) => Some(field(idx, schema.group.as_deref().unwrap_or("group"))?.to_string()),
            None => None,
        };
        if let Some(first) = seen.insert((unit_id.clone(), TimeKey(time), TimeKey(age)), line) {
            return Err(Error::ParseError {
                line,
                message: format!(
                    "duplicate row for unit `{unit_id}`, time {time}, age {age} (first on line {first})"
                ),
            });
        }
        records.push(LifetableRecord {
            unit_id,
            time,
            age,
            mass,
            group,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(records)
}

/// Writes records as long-format CSV (`unit_id,time,age,mass[,group]`).
pub fn write_lifetable_csv<W: Write>(out: W, records: &[LifetableRecord]) -> Result<()> {
    let with_group = records.iter().any(|r| r.group.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["unit_id", "time", "age", "mass"];
    if with_group {
        header.push("group");
    }
    w.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        let mut row = vec![
            r.unit_id.clone(),
            fmt_num(r.time),
            fmt_num(r.age),
            fmt_f64(r.mass),
        ];
        if with_group {
            row.push(r.group.clone().unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Integers print without exponent; everything else at full precision.
fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        fmt_f64(v)
    }
}

/// `f64` ordered by `total_cmp`, for use as a map key.
#[derive(Debug, Clone, Copy)]
pub struct TimeKey(pub f64);

impl PartialEq for TimeKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TimeKey {}

impl PartialOrd for TimeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Sorted distinct ages of `records` inside `[min, max]`, as a trapezoid grid.
pub fn age_grid_from_records(
    records: &[LifetableRecord],
    min: Option<f64>,
    max: Option<f64>,
) -> Result<AgeGrid> {
    let ages: BTreeSet<TimeKey> = records
        .iter()
        .filter(|r| in_range(r.age, min, max))
        .map(|r| TimeKey(r.age))
        .collect();
    AgeGrid::trapezoid(ages.into_iter().map(|k| k.0).collect())
}

fn in_range(v: f64, min: Option<f64>, max: Option<f64>) -> bool {
    min.is_none_or(|m| v >= m) && max.is_none_or(|m| v <= m)
}

/// Drops records whose age falls outside `[min, max]`.
pub fn restrict_ages(
    records: Vec<LifetableRecord>,
    min: Option<f64>,
    max: Option<f64>,
) -> Vec<LifetableRecord> {
    records
        .into_iter()
        .filter(|r| in_range(r.age, min, max))
        .collect()
}

/// Ω-points per `(unit, time)` cell on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPanel {
    metric: PointMetric,
    cells: BTreeMap<(String, TimeKey), Point>,
    groups: BTreeMap<String, String>,
}

impl CdfPanel {
    pub fn metric(&self) -> &PointMetric {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, unit: &str, time: f64) -> Option<&Point> {
        self.cells.get(&(unit.to_string(), TimeKey(time)))
    }

    pub fn units(&self) -> Vec<String> {
        let units: BTreeSet<&String> = self.cells.keys().map(|(u, _)| u).collect();
        units.into_iter().cloned().collect()
    }

    /// Group labels by unit, when the input carried them.
    pub fn groups(&self) -> &BTreeMap<String, String> {
        &self.groups
    }

    /// Writes `unit_id,time,age,value` rows (CDF values for CDF panels).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "time", "age", "value"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for ((unit, time), point) in &self.cells {
            let (ages, values): (Vec<f64>, &[f64]) = match point {
                Point::Cdf(cdf) => (cdf.grid().points().to_vec(), cdf.values()),
                Point::Vector(v) => ((0..v.len()).map(|k| k as f64).collect(), v),
                Point::Label(_) => continue,
            };
            for (a, v) in ages.iter().zip(values) {
                w.write_record([unit.clone(), fmt_num(time.0), fmt_num(*a), fmt_f64(*v)])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

type MassCells = BTreeMap<(String, TimeKey), Vec<f64>>;

/// Per-cell masses ordered by age, checked against the grid.
fn grouped_masses(
    records: &[LifetableRecord],
    age_grid: &AgeGrid,
) -> Result<(MassCells, BTreeMap<String, String>)> {
    let mut cells: BTreeMap<(String, TimeKey), Vec<(f64, f64)>> = BTreeMap::new();
    let mut groups = BTreeMap::new();
    for r in records {
        cells
            .entry((r.unit_id.clone(), TimeKey(r.time)))
            .or_default()
            .push((r.age, r.mass));
        if let Some(g) = &r.group {
            groups.entry(r.unit_id.clone()).or_insert_with(|| g.clone());
        }
    }
    let mut out = BTreeMap::new();
    for ((unit, time), mut rows) in cells {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ages: Vec<f64> = rows.iter().map(|r| r.0).collect();
        if ages != age_grid.points() {
            let missing: Vec<String> = age_grid
                .points()
                .iter()
                .filter(|a| !ages.contains(a))
                .map(|a| a.to_string())
                .collect();
            let extra: Vec<String> = ages
                .iter()
                .filter(|a| !age_grid.points().contains(a))
                .map(|a| a.to_string())
                .collect();
            return Err(Error::AgeGridMismatch {
                unit,
                time: time.0,
                message: format!(
                    "missing ages [{}], unexpected ages [{}]; ages must match the grid exactly, \
                     resample or restrict the input before loading",
                    missing.join(", "),
                    extra.join(", ")
                ),
            });
        }
        out.insert((unit, time), rows.into_iter().map(|r| r.1).collect());
    }
    Ok((out, groups))
}

/// Turns mass rows into one validated CDF per `(unit, time)`:
/// cumulative mass over ascending age divided by the total.
pub fn records_to_cdf_panel(
    records: &[LifetableRecord],
    age_grid: &Arc<AgeGrid>,
    bounds: &CdfBounds,
) -> Result<CdfPanel> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (masses, groups) = grouped_masses(records, age_grid)?;
    let mut cells = BTreeMap::new();
    for ((unit, time), m) in masses {
        let mut total = 0.0;
        for x in &m {
            total += x;
        }
        if !(total > 0.0) {
            return Err(Error::ZeroTotalMass { unit, time: time.0 });
        }
        let mut acc = 0.0;
        let values: Vec<f64> = m
            .iter()
            .map(|x| {
                acc += x;
                acc / total
            })
            .collect();
        let cdf = validate_cdf(&values, age_grid, bounds).map_err(|e| match e {
            Error::RangeViolation(msg) => {
                Error::RangeViolation(format!("unit `{unit}` at time {}: {msg}", time.0))
            }
            Error::NotMonotone { .. } => unreachable!("cumulative sums of nonnegative masses"),
            other => other,
        })?;
        cells.insert((unit, time), Point::Cdf(cdf));
    }
    Ok(CdfPanel {
        metric: PointMetric::CdfL2 {
            grid: Arc::clone(age_grid),
        },
        cells,
        groups,
    })
}

/// Treats each cell's age profile of raw masses as a Euclidean vector.
pub fn records_to_vector_panel(
    records: &[LifetableRecord],
    age_grid: &AgeGrid,
) -> Result<CdfPanel> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (masses, groups) = grouped_masses(records, age_grid)?;
    Ok(CdfPanel {
        metric: PointMetric::Euclidean {
            dim: age_grid.len(),
        },
        cells: masses
            .into_iter()
            .map(|(k, v)| (k, Point::Vector(v)))
            .collect(),
        groups,
    })
}

/// How to pick the common time grid when units are observed at different times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimePolicy {
    /// Keep the times observed for every unit.
    Intersect,
    /// Fail if any unit misses any time observed for another.
    RequireComplete,
}

/// Observations on a common time grid, units ordered by id.
///
/// Unlike [`panel_to_dataset`] this accepts a single unit.
pub fn panel_to_observations(
    panel: &CdfPanel,
    policy: TimePolicy,
) -> Result<(Arc<TimeGrid>, Vec<MetricFunction>)> {
    if panel.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_unit: BTreeMap<&String, BTreeSet<TimeKey>> = BTreeMap::new();
    for (unit, time) in panel.cells.keys() {
        by_unit.entry(unit).or_default().insert(*time);
    }
    let all: BTreeSet<TimeKey> = by_unit.values().flatten().copied().collect();
    let times: Vec<f64> = match policy {
        TimePolicy::Intersect => all
            .iter()
            .filter(|t| by_unit.values().all(|ts| ts.contains(t)))
            .map(|t| t.0)
            .collect(),
        TimePolicy::RequireComplete => {
            let missing: Vec<String> = by_unit
                .iter()
                .flat_map(|(unit, ts)| {
                    all.iter()
                        .filter(|t| !ts.contains(t))
                        .map(move |t| format!("{unit}@{}", t.0))
                })
                .collect();
            if !missing.is_empty() {
                return Err(Error::IncompletePanel(missing));
            }
            all.iter().map(|t| t.0).collect()
        }
    };
    if times.is_empty() {
        return Err(Error::NoCommonTimes);
    }
    let grid = if times.len() == 1 {
        TimeGrid::with_weights(times.clone(), vec![1.0])?
    } else {
        TimeGrid::trapezoid(times.clone())?
    };
    let observations = by_unit
        .keys()
        .map(|unit| {
            let curve = times
                .iter()
                .map(|t| panel.cells[&((*unit).clone(), TimeKey(*t))].clone())
                .collect();
            MetricFunction::new((*unit).clone(), curve)
        })
        .collect();
    Ok((Arc::new(grid), observations))
}

/// Assembles a dataset with one observation per unit.
pub fn panel_to_dataset(panel: &CdfPanel, policy: TimePolicy) -> Result<FunctionalDataset> {
    let (grid, observations) = panel_to_observations(panel, policy)?;
    FunctionalDataset::new(grid, panel.metric.clone(), observations)
}

/// Location, drift and scale of one synthetic unit: at time `t` the unit is
/// the CDF of `Normal(mu + drift·(t - t_0), sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitParams {
    pub mu: f64,
    pub drift: f64,
    pub sigma: f64,
}

/// Settings of the seeded Gaussian-CDF generator.
///
/// Draws use ChaCha8 seeded with `seed`; each uniform is
/// `(next_u64 >> 11) · 2⁻⁵³`, drawn per unit in the order mu, drift, sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub n_units: usize,
    pub time_points: Vec<f64>,
    pub age_start: f64,
    pub age_end: f64,
    pub age_count: usize,
    pub mu_range: (f64, f64),
    pub drift_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_units: 12,
            time_points: (0..10).map(f64::from).collect(),
            age_start: 0.0,
            age_end: 120.0,
            age_count: 121,
            mu_range: (50.0, 70.0),
            drift_range: (-0.5, 1.0),
            sigma_range: (5.0, 10.0),
            seed: 7,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + (hi - lo) * u
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl SynthesisConfig {
    /// Draws the per-unit parameters.
    pub fn draw_params(&self) -> Result<Vec<UnitParams>> {
        if self.n_units < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least two units, got {}",
                self.n_units
            )));
        }
        for (name, (lo, hi)) in [
            ("mu_range", self.mu_range),
            ("drift_range", self.drift_range),
            ("sigma_range", self.sigma_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidDataset(format!(
                    "{name} ({lo}, {hi}) is not a range"
                )));
            }
        }
        if !(self.sigma_range.0 > 0.0) {
            return Err(Error::InvalidDataset("sigma_range must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.n_units)
            .map(|_| {
                let mu = uniform(&mut rng, self.mu_range);
                let drift = uniform(&mut rng, self.drift_range);
                let sigma = uniform(&mut rng, self.sigma_range);
                UnitParams { mu, drift, sigma }
            })
            .collect())
    }
}

/// Generates a CDF-valued dataset from explicit unit parameters.
///
/// Every distribution must stay within ±4σ of the age grid's ends.
pub fn gaussian_cdf_dataset(
    units: &[(String, UnitParams)],
    time_grid: Arc<TimeGrid>,
    age_grid: Arc<AgeGrid>,
) -> Result<FunctionalDataset> {
    let t0 = time_grid.points()[0];
    let (lo, hi) = (age_grid.points()[0], age_grid.points()[age_grid.len() - 1]);
    let bounds = CdfBounds::default();
    let observations = units
        .iter()
        .map(|(id, p)| {
            let curve = time_grid
                .points()
                .iter()
                .map(|t| {
                    let mean = p.mu + p.drift * (t - t0);
                    if mean - 4.0 * p.sigma < lo || mean + 4.0 * p.sigma > hi {
                        return Err(Error::GridTooNarrow(format!(
                            "unit `{id}` at time {t}: N({mean:.3}, {:.3}²) ± 4σ leaves [{lo}, {hi}]",
                            p.sigma
                        )));
                    }
                    let values: Vec<f64> = age_grid
                        .points()
                        .iter()
                        .map(|a| std_normal_cdf((a - mean) / p.sigma))
                        .collect();
                    Ok(Point::Cdf(validate_cdf(&values, &age_grid, &bounds)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricFunction::new(id.clone(), curve))
        })
        .collect::<Result<Vec<_>>>()?;
    FunctionalDataset::new(
        time_grid,
        PointMetric::CdfL2 { grid: age_grid },
        observations,
    )
}

/// Seeded synthetic dataset; units are named `unit00`, `unit01`, ...
pub fn synth_gaussian_cdf_process(cfg: &SynthesisConfig) -> Result<FunctionalDataset> {
    let params = cfg.draw_params()?;
    let width = cfg.n_units.saturating_sub(1).to_string().len().max(2);
    let units: Vec<(String, UnitParams)> = params
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("unit{i:0width$}"), p))
        .collect();
    let time_grid = Arc::new(TimeGrid::trapezoid(cfg.time_points.clone())?);
    let age_grid = Arc::new(AgeGrid::uniform(cfg.age_start, cfg.age_end, cfg.age_count)?);
    gaussian_cdf_dataset(&units, time_grid, age_grid)
}

/// Long-format records whose per-age masses are the CDF increments.
pub fn dataset_to_records(ds: &FunctionalDataset) -> Result<Vec<LifetableRecord>> {
    let PointMetric::CdfL2 { grid } = ds.metric() else {
        return Err(Error::WrongMetric {
            expected: "cdf-l2".into(),
            got: ds.metric().name().into(),
        });
    };
    let mut out = Vec::new();
    for obs in ds.observations() {
        for (t, point) in ds.time_grid().points().iter().zip(&obs.curve) {
            let Point::Cdf(cdf) = point else {
                unreachable!("dataset checked against metric")
            };
            let mut prev = 0.0;
            for (a, v) in grid.points().iter().zip(cdf.values()) {
                out.push(LifetableRecord {
                    unit_id: obs.id.clone(),
                    time: *t,
                    age: *a,
                    mass: v - prev,
                    group: None,
                });
                prev = *v;
            }
        }
    }
    Ok(out)
}
