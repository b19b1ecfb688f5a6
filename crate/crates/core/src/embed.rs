//! Explicit Hilbert-space coordinates for CDF-valued and Euclidean data,
//! and direct PCA on them.
//!
//! These routines never look at pairwise distances, so they serve as an
//! independent reference for the distance-only pipeline.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::functional::FunctionalDataset;
use crate::metric::{Point, PointMetric};

/// Coordinates of one time slice: `√w_a · F(a)` for CDFs, the raw vector otherwise.
fn slice_coords(metric: &PointMetric, p: &Point) -> Result<Vec<f64>> {
    match (metric, p) {
        (PointMetric::CdfL2 { grid }, Point::Cdf(cdf)) => Ok(grid
            .weights()
            .iter()
            .zip(cdf.values())
            .map(|(w, f)| w.sqrt() * f)
            .collect()),
        (PointMetric::Euclidean { .. }, Point::Vector(v)) => Ok(v.clone()),
        _ => Err(Error::WrongMetric {
            expected: "cdf-l2 or euclidean".into(),
            got: metric.name().into(),
        }),
    }
}

/// `n × (T·A)` matrix whose row `i` holds `√(w_t·w_a) · F_{i,t}(a)`
/// (or `√w_t · x_{i,t}` for Euclidean data), time-major.
///
/// Squared row distances equal the integrated squared distances.
pub fn embed_dataset(ds: &FunctionalDataset) -> Result<DMatrix<f64>> {
    let metric = ds.metric();
    let tw = ds.time_grid().weights();
    let rows = ds
        .observations()
        .iter()
        .map(|obs| {
            let mut row = Vec::new();
            for (w, p) in tw.iter().zip(&obs.curve) {
                let root = w.sqrt();
                row.extend(slice_coords(metric, p)?.into_iter().map(|c| root * c));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let width = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// [`embed_dataset`] restricted to the CDF L2 metric.
pub fn embed_cdf_dataset(ds: &FunctionalDataset) -> Result<DMatrix<f64>> {
    match ds.metric() {
        PointMetric::CdfL2 { .. } => embed_dataset(ds),
        other => Err(Error::WrongMetric {
            expected: "cdf-l2".into(),
            got: other.name().into(),
        }),
    }
}

/// Column-centered copy of `x`.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    c
}

/// PCA of explicit coordinates.
#[derive(Debug, Clone)]
pub struct DirectPca {
    /// Squared singular values of the centered data, descending
    /// (the sample-covariance eigenvalues times `n`).
    pub eigenvalues: Vec<f64>,
    /// Projections of the centered rows onto the principal axes.
    pub scores: DMatrix<f64>,
}

/// SVD-based PCA of the rows of `x`.
pub fn direct_pca(x: &DMatrix<f64>) -> DirectPca {
    let xc = center_columns(x);
    // the thin SVD of the narrower orientation is far cheaper for wide inputs
    let (singular, axes) = if xc.ncols() > xc.nrows() {
        let svd = SVD::new(xc.transpose(), true, false);
        (svd.singular_values.clone(), svd.u.expect("requested u"))
    } else {
        let svd = SVD::new(xc.clone(), false, true);
        (
            svd.singular_values.clone(),
            svd.v_t.expect("requested v_t").transpose(),
        )
    };
    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));
    let eigenvalues = order.iter().map(|&k| singular[k] * singular[k]).collect();
    let mut scores = DMatrix::zeros(xc.nrows(), order.len());
    for (dst, &k) in order.iter().enumerate() {
        let proj = &xc * axes.column(k);
        scores.set_column(dst, &proj);
    }
    DirectPca {
        eigenvalues,
        scores,
    }
}

/// `C(s, t) = 1/n Σ_i <x_i(s) - x̄(s), x_i(t) - x̄(t)>` from explicit coordinates.
pub fn classical_cross_time_covariance(ds: &FunctionalDataset) -> Result<DMatrix<f64>> {
    let metric = ds.metric();
    let n = ds.len();
    let t_len = ds.time_grid().len();
    // slices[t] is n × dim
    let slices = (0..t_len)
        .map(|t| {
            let rows = ds
                .observations()
                .iter()
                .map(|o| slice_coords(metric, &o.curve[t]))
                .collect::<Result<Vec<_>>>()?;
            let dim = rows[0].len();
            Ok(center_columns(&DMatrix::from_fn(n, dim, |i, j| rows[i][j])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(t_len, t_len, |s, t| {
        slices[s].component_mul(&slices[t]).sum() / n as f64
    }))
}
