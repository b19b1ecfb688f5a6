//! Ω-valued functions on a finite time grid and their integrated distances.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::fmt_f64;
use crate::metric::{Point, PointMetric, QuadratureGrid};

/// Grid of the index set over which observations are functions.
pub type TimeGrid = QuadratureGrid;

/// One observation: a curve of Ω-points, one per time-grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFunction {
    pub id: String,
    pub curve: Vec<Point>,
}

impl MetricFunction {
    pub fn new(id: impl Into<String>, curve: Vec<Point>) -> Self {
        Self {
            id: id.into(),
            curve,
        }
    }

    /// Checks the curve against a time grid and metric.
    pub fn check(&self, time_grid: &TimeGrid, metric: &PointMetric) -> Result<()> {
        if self.curve.len() != time_grid.len() {
            return Err(Error::GridMismatch(format!(
                "observation `{}` has {} time points, grid has {}",
                self.id,
                self.curve.len(),
                time_grid.len()
            )));
        }
        self.curve.iter().try_for_each(|p| metric.check_point(p))
    }
}

/// A complete sample of metric functions sharing one time grid and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    time_grid: Arc<TimeGrid>,
    metric: PointMetric,
    observations: Vec<MetricFunction>,
}

impl FunctionalDataset {
    pub fn new(
        time_grid: Arc<TimeGrid>,
        metric: PointMetric,
        observations: Vec<MetricFunction>,
    ) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least two observations, got {}",
                observations.len()
            )));
        }
        let mut seen = HashSet::new();
        for obs in &observations {
            if !seen.insert(obs.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id `{}`", obs.id)));
            }
            obs.check(&time_grid, &metric)?;
        }
        Ok(Self {
            time_grid,
            metric,
            observations,
        })
    }

    pub fn time_grid(&self) -> &Arc<TimeGrid> {
        &self.time_grid
    }

    pub fn metric(&self) -> &PointMetric {
        &self.metric
    }

    pub fn observations(&self) -> &[MetricFunction] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.observations.iter().map(|o| o.id.clone()).collect()
    }

    /// Same observations on a grid with different weights (points must match).
    pub fn with_time_grid(&self, time_grid: Arc<TimeGrid>) -> Result<Self> {
        Self::new(time_grid, self.metric.clone(), self.observations.clone())
    }

    /// Observations reordered by `order` (a permutation of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let obs = order
            .iter()
            .map(|&i| {
                self.observations
                    .get(i)
                    .cloned()
                    .ok_or(Error::IndexOutOfRange {
                        index: i,
                        len: self.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.time_grid.clone(), self.metric.clone(), obs)
    }

    /// Integrated squared distance between observations `i` and `j`.
    pub fn sq_dist(&self, i: usize, j: usize) -> Result<f64> {
        integrated_sq_dist(
            &self.observations[i],
            &self.observations[j],
            &self.time_grid,
            &self.metric,
        )
    }

    /// Integrated squared distances from `x` to every observation.
    pub fn sq_dists_to(&self, x: &MetricFunction) -> Result<Vec<f64>> {
        x.check(&self.time_grid, &self.metric)?;
        self.observations
            .iter()
            .map(|o| integrated_sq_dist(x, o, &self.time_grid, &self.metric))
            .collect()
    }
}

/// `d_X²(x, y) = Σ_t w_t · d_Ω²(x(t), y(t))`, accumulated in time order.
pub fn integrated_sq_dist(
    x: &MetricFunction,
    y: &MetricFunction,
    time_grid: &TimeGrid,
    metric: &PointMetric,
) -> Result<f64> {
    for obs in [x, y] {
        if obs.curve.len() != time_grid.len() {
            return Err(Error::GridMismatch(format!(
                "observation `{}` has {} time points, grid has {}",
                obs.id,
                obs.curve.len(),
                time_grid.len()
            )));
        }
    }
    let mut acc = 0.0;
    for ((w, a), b) in time_grid.weights().iter().zip(&x.curve).zip(&y.curve) {
        acc += w * metric.sq_dist(a, b)?;
    }
    Ok(acc)
}

/// `d_Ω²(x(s), y(t))` for time indices `s_idx`, `t_idx`.
pub fn cross_time_sq_dist(
    x: &MetricFunction,
    s_idx: usize,
    y: &MetricFunction,
    t_idx: usize,
    metric: &PointMetric,
) -> Result<f64> {
    let a = x.curve.get(s_idx).ok_or(Error::IndexOutOfRange {
        index: s_idx,
        len: x.curve.len(),
    })?;
    let b = y.curve.get(t_idx).ok_or(Error::IndexOutOfRange {
        index: t_idx,
        len: y.curve.len(),
    })?;
    metric.sq_dist(a, b)
}

/// Symmetric, zero-diagonal matrix of integrated squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistanceMatrix {
    ids: Vec<String>,
    values: DMatrix<f64>,
    provenance: String,
}

/// Largest absolute asymmetry accepted from external input.
pub const SYMMETRY_TOL: f64 = 1e-12;

impl SquaredDistanceMatrix {
    /// Validates an externally supplied matrix.
    ///
    /// Asymmetries up to [`SYMMETRY_TOL`] are averaged away; the diagonal must be zero.
    pub fn new(
        ids: Vec<String>,
        values: DMatrix<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "distance matrix is {}x{}",
                n,
                values.ncols()
            )));
        }
        if ids.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: ids.len(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidDistances(
                "need at least two observations".into(),
            ));
        }
        if let Some((i, j, diff)) = max_asymmetry(&values) {
            if diff > SYMMETRY_TOL {
                return Err(Error::AsymmetricInput { i, j, diff });
            }
        }
        let mut values = values;
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::InvalidDistances(format!(
                    "nonzero diagonal entry {} at {i}",
                    values[(i, i)]
                )));
            }
            for j in 0..i {
                let v = 0.5 * (values[(i, j)] + values[(j, i)]);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidDistances(format!(
                        "entry ({i}, {j}) = {v} is not a nonnegative number"
                    )));
                }
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Ok(Self {
            ids,
            values,
            provenance: provenance.into(),
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Row-major CSV with a header of ids: `id,<id_1>,...,<id_n>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.values.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads and validates a matrix written by [`Self::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let (ids, values) = read_raw_distance_csv(input)?;
        Self::new(ids, values, "imported from CSV")
    }
}

/// Location and size of the largest `|D[i,j] - D[j,i]|`, if any entry differs.
pub fn max_asymmetry(values: &DMatrix<f64>) -> Option<(usize, usize, f64)> {
    let n = values.nrows().min(values.ncols());
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in 0..i {
            let diff = (values[(i, j)] - values[(j, i)]).abs();
            if diff > 0.0 && worst.is_none_or(|(_, _, w)| diff > w) {
                worst = Some((i, j, diff));
            }
        }
    }
    worst
}

/// Parses a distance CSV without validating symmetry or the diagonal.
pub fn read_raw_distance_csv<R: Read>(input: R) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let ids: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = ids.len();
    let mut values = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::ParseError {
            line,
            message: e.to_string(),
        })?;
        if rows == n {
            return Err(Error::ParseError {
                line,
                message: format!("more than {n} rows"),
            });
        }
        if rec.len() != n + 1 {
            return Err(Error::ParseError {
                line,
                message: format!("expected {} fields, got {}", n + 1, rec.len()),
            });
        }
        if rec[0].trim() != ids[rows] {
            return Err(Error::ParseError {
                line,
                message: format!("row id `{}` does not match column `{}`", &rec[0], ids[rows]),
            });
        }
        for j in 0..n {
            values[(rows, j)] =
                rec[j + 1]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::ParseError {
                        line,
                        message: format!("field {}: {e}", j + 2),
                    })?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::ParseError {
            line: rows as u64 + 2,
            message: format!("expected {n} rows, got {rows}"),
        });
    }
    Ok((ids, values))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// All integrated squared distances of a dataset.
///
/// Each unordered pair is evaluated once (in parallel) and mirrored; the
/// diagonal is exactly zero.
pub fn pairwise_sq_dist_matrix(ds: &FunctionalDataset) -> Result<SquaredDistanceMatrix> {
    let n = ds.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| ds.sq_dist(i, j))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[(i, j)] = *v;
            values[(j, i)] = *v;
        }
    }
    Ok(SquaredDistanceMatrix {
        ids: ds.ids(),
        values,
        provenance: format!(
            "metric={} time_points={}",
            ds.metric().name(),
            ds.time_grid().len()
        ),
    })
}
