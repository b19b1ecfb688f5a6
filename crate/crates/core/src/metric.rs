//! The point metric space: validated CDF objects, quadrature grids and
//! squared-distance functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing grid with positive quadrature weights.
///
/// Used both for the age axis of a CDF and for the time axis of a
/// functional observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Grid over which CDF values are sampled.
pub type AgeGrid = QuadratureGrid;

impl QuadratureGrid {
    /// Builds a grid with trapezoid-rule weights. Needs at least two points.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if points.len() < 2 {
            return Err(Error::InvalidGrid(
                "trapezoid rule needs at least two points".into(),
            ));
        }
        let n = points.len();
        let mut weights = Vec::with_capacity(n);
        weights.push(0.5 * (points[1] - points[0]));
        for k in 1..n - 1 {
            weights.push(0.5 * (points[k + 1] - points[k - 1]));
        }
        weights.push(0.5 * (points[n - 1] - points[n - 2]));
        Ok(Self { points, weights })
    }

    /// Builds a grid with caller-supplied weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::NonpositiveWeights);
        }
        Ok(Self { points, weights })
    }

    /// Uniform grid of `count` points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 || !(end > start) {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs count >= 2 and end > start (got {count} points on [{start}, {end}])"
            )));
        }
        let step = (end - start) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|k| start + step * k as f64).collect();
        points[count - 1] = end;
        Self::trapezoid(points)
    }

    /// Same points, every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_weights(
            self.points.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }

    /// Affinely maps the points onto `[0, 1]` and recomputes trapezoid weights.
    pub fn normalized(&self) -> Result<Self> {
        let lo = self.points[0];
        let span = self.span();
        if self.points.len() < 2 || span <= 0.0 {
            return Err(Error::InvalidGrid(
                "cannot normalize a single-point grid".into(),
            ));
        }
        Self::trapezoid(self.points.iter().map(|p| (p - lo) / span).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted sum `Σ_k w_k f_k`, accumulated left to right.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        let mut acc = 0.0;
        for (w, v) in self.weights.iter().zip(values) {
            acc += w * v;
        }
        acc
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidGrid("grid has no points".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGrid("grid points must be finite".into()));
    }
    if let Some(k) = points.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "points not strictly increasing at index {}",
            k + 1
        )));
    }
    Ok(())
}

fn same_grid(a: &Arc<QuadratureGrid>, b: &Arc<QuadratureGrid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Validation bounds applied to CDF values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdfBounds {
    /// Largest tolerated decrease between consecutive values; smaller dips are clamped.
    pub monotone_tol: f64,
    /// Slack around `[0, 1]`.
    pub range_tol: f64,
    /// The first value must not exceed this.
    pub first_max: f64,
    /// The last value must reach at least this.
    pub last_min: f64,
}

impl Default for CdfBounds {
    fn default() -> Self {
        Self {
            monotone_tol: 1e-9,
            range_tol: 1e-9,
            first_max: 0.05,
            last_min: 0.95,
        }
    }
}

impl CdfBounds {
    /// Only monotonicity and the `[0, 1]` range are enforced.
    pub fn relaxed() -> Self {
        Self {
            first_max: 1.0,
            last_min: 0.0,
            ..Self::default()
        }
    }
}

/// A monotone CDF sampled on a shared age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedCdf {
    grid: Arc<AgeGrid>,
    values: Vec<f64>,
}

impl DiscretizedCdf {
    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Validates raw CDF values against `grid`.
///
/// Dips of at most `bounds.monotone_tol` are clamped to the running maximum.
pub fn validate_cdf(
    values: &[f64],
    grid: &Arc<AgeGrid>,
    bounds: &CdfBounds,
) -> Result<DiscretizedCdf> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let lo = -bounds.range_tol;
    let hi = 1.0 + bounds.range_tol;
    if let Some((k, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= lo && **v <= hi))
    {
        return Err(Error::RangeViolation(format!(
            "value {v} at index {k} outside [0, 1]"
        )));
    }

    let mut clamped = Vec::with_capacity(values.len());
    let mut running = f64::NEG_INFINITY;
    for (k, &v) in values.iter().enumerate() {
        if v < running {
            let drop = running - v;
            if drop > bounds.monotone_tol {
                return Err(Error::NotMonotone { index: k, drop });
            }
            clamped.push(running);
        } else {
            running = v;
            clamped.push(v);
        }
    }

    let first = clamped[0];
    let last = clamped[clamped.len() - 1];
    if first > bounds.first_max {
        return Err(Error::RangeViolation(format!(
            "first value {first} exceeds {}",
            bounds.first_max
        )));
    }
    if last < bounds.last_min {
        return Err(Error::RangeViolation(format!(
            "last value {last} below {}",
            bounds.last_min
        )));
    }
    Ok(DiscretizedCdf {
        grid: Arc::clone(grid),
        values: clamped,
    })
}

/// Precomputed squared distances between labelled points of Ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceTable {
    labels: Vec<String>,
    /// Row-major `m × m`.
    sq_dists: Vec<f64>,
}

impl DistanceTable {
    /// Rejects asymmetric tables, nonzero diagonals and negative entries.
    pub fn new(labels: Vec<String>, sq_dists: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if sq_dists.len() != m * m {
            return Err(Error::LengthMismatch {
                expected: m * m,
                got: sq_dists.len(),
            });
        }
        for i in 0..m {
            if sq_dists[i * m + i] != 0.0 {
                return Err(Error::InvalidDistances(format!("nonzero diagonal at {i}")));
            }
            for j in 0..m {
                let v = sq_dists[i * m + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidDistances(format!(
                        "entry ({i}, {j}) = {v} is not a nonnegative number"
                    )));
                }
                if v != sq_dists[j * m + i] {
                    return Err(Error::AsymmetricInput {
                        i,
                        j,
                        diff: (v - sq_dists[j * m + i]).abs(),
                    });
                }
            }
        }
        Ok(Self { labels, sq_dists })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn get(&self, i: usize, j: usize) -> Result<f64> {
        let m = self.labels.len();
        for idx in [i, j] {
            if idx >= m {
                return Err(Error::IndexOutOfRange { index: idx, len: m });
            }
        }
        Ok(self.sq_dists[i * m + j])
    }
}

/// A point of Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Cdf(DiscretizedCdf),
    Vector(Vec<f64>),
    /// Row of a [`DistanceTable`].
    Label(usize),
}

/// The squared metric on Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum PointMetric {
    /// L2 distance between CDFs, integrated with the grid's quadrature weights.
    CdfL2 {
        grid: Arc<AgeGrid>,
    },
    Euclidean {
        dim: usize,
    },
    Table(Arc<DistanceTable>),
}

impl PointMetric {
    pub fn name(&self) -> &'static str {
        match self {
            PointMetric::CdfL2 { .. } => "cdf-l2",
            PointMetric::Euclidean { .. } => "euclidean",
            PointMetric::Table(_) => "table",
        }
    }

    /// Checks that `p` lives in this metric's space.
    pub fn check_point(&self, p: &Point) -> Result<()> {
        match (self, p) {
            (PointMetric::CdfL2 { grid }, Point::Cdf(cdf)) => {
                if same_grid(grid, cdf.grid()) {
                    Ok(())
                } else {
                    Err(Error::GridMismatch(
                        "CDF sampled on a different age grid".into(),
                    ))
                }
            }
            (PointMetric::Euclidean { dim }, Point::Vector(v)) => {
                if v.len() == *dim {
                    Ok(())
                } else {
                    Err(Error::GridMismatch(format!(
                        "vector of dimension {} in a {dim}-dimensional space",
                        v.len()
                    )))
                }
            }
            (PointMetric::Table(table), Point::Label(i)) => {
                if *i < table.len() {
                    Ok(())
                } else {
                    Err(Error::IndexOutOfRange {
                        index: *i,
                        len: table.len(),
                    })
                }
            }
            _ => Err(Error::GridMismatch(format!(
                "point kind does not match the {} metric",
                self.name()
            ))),
        }
    }

    /// Squared distance `d_Ω²(a, b)`.
    pub fn sq_dist(&self, a: &Point, b: &Point) -> Result<f64> {
        self.check_point(a)?;
        self.check_point(b)?;
        Ok(match (self, a, b) {
            (PointMetric::CdfL2 { grid }, Point::Cdf(fa), Point::Cdf(fb)) => {
                let mut acc = 0.0;
                for ((w, x), y) in grid.weights().iter().zip(fa.values()).zip(fb.values()) {
                    let d = x - y;
                    acc += w * (d * d);
                }
                acc
            }
            (PointMetric::Euclidean { .. }, Point::Vector(x), Point::Vector(y)) => {
                let mut acc = 0.0;
                for (p, q) in x.iter().zip(y) {
                    let d = p - q;
                    acc += d * d;
                }
                acc
            }
            (PointMetric::Table(table), Point::Label(i), Point::Label(j)) => table.get(*i, *j)?,
            _ => unreachable!("point kinds checked above"),
        })
    }
}

/// Free-function form of [`PointMetric::sq_dist`].
pub fn sq_dist(metric: &PointMetric, a: &Point, b: &Point) -> Result<f64> {
    metric.sq_dist(a, b)
}
