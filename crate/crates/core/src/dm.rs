//! The metric covariance kernel on the time grid, its eigenfunctions, and
//! its relation to the kernel PCA spectrum.
//!
//! `C(s, t)` averages inner products of centered embeddings at times `s`
//! and `t`. Each inner product is recovered from cross-time squared
//! distances by polarization:
//!
//! ```text
//! <u_i - ū, w_i - w̄> = 1/(2n²) Σ_a Σ_b [ d²(u_i, w_b) + d²(u_a, w_i) - d²(u_i, w_i) - d²(u_a, w_b) ]
//! ```
//!
//! where `u = X(s)` and `w = X(t)`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::eigen::{jacobi_eigen, sign_for, EigenSpectrum};
use crate::error::{Error, Result};
use crate::fmt::fmt_f64;
use crate::functional::{cross_time_sq_dist, FunctionalDataset, TimeGrid};
use crate::kernel::{numerical_rank, CenteredKernelMatrix, KpcaModel, DEFAULT_RANK_TOL};

/// Diagonal entries in `[-DIAGONAL_CLAMP, 0)` are rounded up to zero.
pub const DIAGONAL_CLAMP: f64 = 1e-10;

/// `C_DM` sampled on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCovarianceGrid {
    values: DMatrix<f64>,
    time_grid: Arc<TimeGrid>,
    n_obs: usize,
}

impl MetricCovarianceGrid {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn time_grid(&self) -> &Arc<TimeGrid> {
        &self.time_grid
    }

    pub fn weights(&self) -> &[f64] {
        self.time_grid.weights()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// `Σ_t w_t C(t, t)`.
    pub fn integrated_trace(&self) -> f64 {
        let mut acc = 0.0;
        for (t, w) in self.weights().iter().enumerate() {
            acc += w * self.values[(t, t)];
        }
        acc
    }

    /// Writes the matrix with time points as header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_grid_csv(out, self.time_grid.points(), &self.values, "time")
    }
}

/// Polarized covariance between times `s` and `t`.
fn polarized_cov(ds: &FunctionalDataset, s: usize, t: usize) -> Result<f64> {
    let obs = ds.observations();
    let n = obs.len();
    let metric = ds.metric();
    let mut block = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            block[a * n + b] = cross_time_sq_dist(&obs[a], s, &obs[b], t, metric)?;
        }
    }
    let nf = n as f64;
    let mut row_means = vec![0.0; n];
    let mut col_means = vec![0.0; n];
    for a in 0..n {
        let mut acc = 0.0;
        for b in 0..n {
            acc += block[a * n + b];
        }
        row_means[a] = acc / nf;
    }
    for b in 0..n {
        let mut acc = 0.0;
        for a in 0..n {
            acc += block[a * n + b];
        }
        col_means[b] = acc / nf;
    }
    let mut acc = 0.0;
    for r in &row_means {
        acc += r;
    }
    let grand = acc / nf;

    let mut total = 0.0;
    for i in 0..n {
        total += 0.5 * (row_means[i] + col_means[i] - block[i * n + i] - grand);
    }
    Ok(total / nf)
}

/// Computes `C_DM` from distances only.
pub fn metric_cov(ds: &FunctionalDataset) -> Result<MetricCovarianceGrid> {
    let tg = ds.time_grid().clone();
    let t_len = tg.len();
    let pairs: Vec<(usize, usize)> = (0..t_len)
        .flat_map(|s| (s..t_len).map(move |t| (s, t)))
        .collect();
    let entries = pairs
        .par_iter()
        .map(|&(s, t)| polarized_cov(ds, s, t))
        .collect::<Result<Vec<_>>>()?;

    let mut values = DMatrix::zeros(t_len, t_len);
    for (&(s, t), &c) in pairs.iter().zip(&entries) {
        let c = if s == t && (-DIAGONAL_CLAMP..0.0).contains(&c) {
            0.0
        } else {
            c
        };
        values[(s, t)] = c;
        values[(t, s)] = c;
    }
    Ok(MetricCovarianceGrid {
        values,
        time_grid: tg,
        n_obs: ds.len(),
    })
}

/// Eigenfunctions of `C_DM`, orthonormal under `Σ_t w_t f(t) g(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DmEigenfunctions {
    /// Full spectrum, descending, tiny negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// `T × K`; column `k` is the k-th eigenfunction on the time grid.
    pub eigenfunctions: DMatrix<f64>,
    pub time_points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DmEigenfunctions {
    pub fn n_components(&self) -> usize {
        self.eigenfunctions.ncols()
    }

    /// One row per time point: `time,phi1,...,phiK`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.n_components()).map(|k| format!("phi{k}")));
        w.write_record(&header)
            .map_err(|e| Error::Io(e.to_string()))?;
        for (t, p) in self.time_points.iter().enumerate() {
            let mut row = vec![fmt_f64(*p)];
            row.extend(self.eigenfunctions.row(t).iter().map(|v| fmt_f64(*v)));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves the weighted eigenproblem through `W^{1/2} C W^{1/2}`.
pub fn dm_eigenfunctions(
    c: &MetricCovarianceGrid,
    n_components: usize,
    psd_tol: f64,
) -> Result<DmEigenfunctions> {
    let w = c.weights();
    if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::NonpositiveWeights);
    }
    let t_len = w.len();
    let root: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let b = DMatrix::from_fn(t_len, t_len, |s, t| root[s] * c.values()[(s, t)] * root[t]);
    // keep B exactly symmetric: root[s]*C*root[t] and root[t]*C*root[s] round alike only by luck
    let b = DMatrix::from_fn(
        t_len,
        t_len,
        |s, t| if s <= t { b[(s, t)] } else { b[(t, s)] },
    );
    let spectrum = EigenSpectrum::from_raw(jacobi_eigen(&b)?, psd_tol, "metric covariance")?;

    let k = n_components.min(t_len);
    let mut eigenfunctions = DMatrix::zeros(t_len, k);
    for col in 0..k {
        let f: Vec<f64> = (0..t_len)
            .map(|t| spectrum.eigenvectors[(t, col)] / root[t])
            .collect();
        let sign = sign_for(&f);
        for t in 0..t_len {
            eigenfunctions[(t, col)] = sign * f[t];
        }
    }
    Ok(DmEigenfunctions {
        eigenvalues: spectrum.eigenvalues,
        eigenfunctions,
        time_points: c.time_grid().points().to_vec(),
        weights: w.to_vec(),
    })
}

/// `|Σ_t w_t C_DM(t, t) - tr(K)/n|`.
pub fn trace_identity_residual(c: &MetricCovarianceGrid, k: &CenteredKernelMatrix) -> Result<f64> {
    if k.len() != c.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "kernel has {} observations, covariance was built from {}",
            k.len(),
            c.n_obs()
        )));
    }
    Ok((c.integrated_trace() - k.trace() / k.len() as f64).abs())
}

/// Tolerance a passing trace-identity check must meet.
pub fn trace_identity_tolerance(k: &CenteredKernelMatrix) -> f64 {
    1e-10 * (k.trace() / k.len() as f64).max(1.0)
}

/// Side-by-side spectra of the two decompositions, on the covariance scale.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationLossReport {
    /// Kernel PCA variances `λ_k / n` above the retention threshold.
    pub kpca_variances: Vec<f64>,
    /// `C_DM` eigenvalues above the retention threshold.
    pub dm_variances: Vec<f64>,
    pub kpca_total: f64,
    pub dm_total: f64,
}

fn cumulative(v: &[f64], total: f64) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc / total
        })
        .collect()
}

impl InformationLossReport {
    pub fn kpca_cumulative(&self) -> Vec<f64> {
        cumulative(&self.kpca_variances, self.kpca_total)
    }

    pub fn dm_cumulative(&self) -> Vec<f64> {
        cumulative(&self.dm_variances, self.dm_total)
    }

    /// `|kpca_total - dm_total|`.
    pub fn total_gap(&self) -> f64 {
        (self.kpca_total - self.dm_total).abs()
    }

    /// `component,kpca_variance,kpca_cumulative,dm_variance,dm_cumulative`;
    /// cells past the end of the shorter spectrum are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "component",
            "kpca_variance",
            "kpca_cumulative",
            "dm_variance",
            "dm_cumulative",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
        let kc = self.kpca_cumulative();
        let dc = self.dm_cumulative();
        let rows = self.kpca_variances.len().max(self.dm_variances.len());
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| fmt_f64(*x)).unwrap_or_default();
        for i in 0..rows {
            w.write_record([
                (i + 1).to_string(),
                cell(&self.kpca_variances, i),
                cell(&kc, i),
                cell(&self.dm_variances, i),
                cell(&dc, i),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for InformationLossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kpca_total_variance={}", fmt_f64(self.kpca_total))?;
        writeln!(f, "dm_total_variance={}", fmt_f64(self.dm_total))?;
        writeln!(f, "kpca_components={}", self.kpca_variances.len())?;
        writeln!(f, "dm_components={}", self.dm_variances.len())?;
        let first = |v: Vec<f64>| v.first().map(|x| fmt_f64(*x)).unwrap_or_else(|| "-".into());
        writeln!(f, "kpca_first_ratio={}", first(self.kpca_cumulative()))?;
        write!(f, "dm_first_ratio={}", first(self.dm_cumulative()))
    }
}

/// Compares the kernel PCA spectrum with the `C_DM` spectrum.
pub fn information_loss_report(kpca: &KpcaModel, dm: &DmEigenfunctions) -> InformationLossReport {
    let n = kpca.n_train() as f64;
    let keep = |v: &[f64]| -> Vec<f64> { v[..numerical_rank(v, DEFAULT_RANK_TOL)].to_vec() };
    let kpca_variances: Vec<f64> = keep(&kpca.spectrum).iter().map(|l| l / n).collect();
    let dm_variances = keep(&dm.eigenvalues);
    let kpca_total = kpca_variances.iter().sum();
    let dm_total = dm_variances.iter().sum();
    InformationLossReport {
        kpca_variances,
        dm_variances,
        kpca_total,
        dm_total,
    }
}

pub(crate) fn write_grid_csv<W: Write>(
    out: W,
    header_points: &[f64],
    m: &DMatrix<f64>,
    corner: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![corner.to_string()];
    header.extend(header_points.iter().map(|p| fmt_f64(*p)));
    w.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    for (r, p) in header_points.iter().enumerate() {
        let mut row = vec![fmt_f64(*p)];
        row.extend(m.row(r).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
