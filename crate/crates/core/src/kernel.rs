//! Distance-induced centered kernel, its spectrum, and kernel principal
//! component scores (in-sample and out-of-sample).
//!
//! Everything here works from squared distances alone. For a training pair
//! `(a, b)` the centered kernel is
//!
//! ```text
//! K_ab = 1/(2n²) Σ_i Σ_j ( D²_ai + D²_bj - D²_ab - D²_ij )
//!      = -½ ( D²_ab - r_a - r_b + g )
//! ```
//!
//! with `r` the row means and `g` the grand mean of `D²`. Both forms are
//! implemented; the first is only used for cross-checking.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::EigenSpectrum;
use crate::error::{Error, Result};
use crate::functional::{
    max_asymmetry, pairwise_sq_dist_matrix, FunctionalDataset, MetricFunction,
    SquaredDistanceMatrix, SYMMETRY_TOL,
};

/// Default tolerance for clamping negative eigenvalues, relative to `λ_max`.
pub const DEFAULT_PSD_TOL: f64 = 1e-8;
/// Default retention threshold, relative to `λ_1`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Row means and grand mean of a training `D²`, needed to center new points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

impl CenteringStats {
    pub fn from_sq_dists(d2: &DMatrix<f64>) -> Self {
        let n = d2.nrows();
        let row_means: Vec<f64> = (0..n)
            .map(|a| {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += d2[(a, j)];
                }
                acc / n as f64
            })
            .collect();
        let mut acc = 0.0;
        for r in &row_means {
            acc += r;
        }
        let grand_mean = acc / n as f64;
        Self {
            row_means,
            grand_mean,
        }
    }

    pub fn len(&self) -> usize {
        self.row_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_means.is_empty()
    }
}

/// The centered kernel matrix of the training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredKernelMatrix {
    values: DMatrix<f64>,
    stats: CenteringStats,
}

impl CenteredKernelMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn stats(&self) -> &CenteringStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn trace(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.values[(i, i)];
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Double-centers a validated squared-distance matrix.
pub fn gower_center(d2: &SquaredDistanceMatrix) -> CenteredKernelMatrix {
    center_checked(d2.values())
}

/// Double-centers a raw matrix, rejecting asymmetric input.
pub fn gower_center_matrix(d2: &DMatrix<f64>) -> Result<CenteredKernelMatrix> {
    if d2.nrows() != d2.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix is {}x{}",
            d2.nrows(),
            d2.ncols()
        )));
    }
    if let Some((i, j, diff)) = max_asymmetry(d2) {
        if diff > SYMMETRY_TOL {
            return Err(Error::AsymmetricInput { i, j, diff });
        }
    }
    Ok(center_checked(d2))
}

fn center_checked(d2: &DMatrix<f64>) -> CenteredKernelMatrix {
    let n = d2.nrows();
    let stats = CenteringStats::from_sq_dists(d2);
    let mut values = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let k =
                -0.5 * (d2[(a, b)] - stats.row_means[a] - stats.row_means[b] + stats.grand_mean);
            values[(a, b)] = k;
            values[(b, a)] = k;
        }
    }
    CenteredKernelMatrix { values, stats }
}

/// The centered kernel evaluated literally as a double sum over the sample
/// for every training pair. `O(n⁴)`; meant for verification.
pub fn quadruple_sum_kernel(d2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = d2.nrows();
    if d2.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix is {}x{}",
            n,
            d2.ncols()
        )));
    }
    let scale = 1.0 / (2.0 * (n * n) as f64);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let dab = d2[(a, b)];
                    let mut acc = 0.0;
                    for i in 0..n {
                        let dai = d2[(a, i)];
                        for j in 0..n {
                            acc += dai + d2[(b, j)] - dab - d2[(i, j)];
                        }
                    }
                    acc * scale
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |a, b| rows[a][b]))
}

/// Centered kernel row `k_x[a] = K(x, X_a)` for a point with squared
/// distances `d2_to_train` to the training sample.
pub fn center_new_point(stats: &CenteringStats, d2_to_train: &[f64]) -> Result<Vec<f64>> {
    let n = stats.len();
    if d2_to_train.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: d2_to_train.len(),
        });
    }
    let mut acc = 0.0;
    for d in d2_to_train {
        acc += d;
    }
    let mean = acc / n as f64;
    Ok(d2_to_train
        .iter()
        .zip(&stats.row_means)
        .map(|(d, r)| 0.5 * (mean + r - d - stats.grand_mean))
        .collect())
}

/// Eigendecomposition of the centered kernel with PSD clamping.
pub fn eig_sym(k: &CenteredKernelMatrix, psd_tol: f64, metric: &str) -> Result<EigenSpectrum> {
    EigenSpectrum::compute(k.values(), psd_tol, metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub n_components: usize,
    pub psd_tol: f64,
    pub rank_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_components: 2,
            psd_tol: DEFAULT_PSD_TOL,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl FitOptions {
    pub fn with_components(n_components: usize) -> Self {
        Self {
            n_components,
            ..Self::default()
        }
    }
}

/// A fitted kernel PCA.
///
/// `eigenvalues` are eigenvalues of the centered kernel matrix (the
/// covariance eigenvalues times `n`). Training scores are `√λ_k · v_k`, dual
/// coefficients `v_k / √λ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub ids: Vec<String>,
    pub n_components: usize,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue of the kernel after clamping.
    pub spectrum: Vec<f64>,
    pub clamped_count: usize,
    #[serde(with = "rows")]
    pub alphas: DMatrix<f64>,
    #[serde(with = "rows")]
    pub scores: DMatrix<f64>,
    pub centering: CenteringStats,
}

/// Fits kernel PCA on a dataset.
pub fn fit_kpca(ds: &FunctionalDataset, opts: &FitOptions) -> Result<KpcaModel> {
    let d2 = pairwise_sq_dist_matrix(ds)?;
    fit_from_distances(&d2, opts, ds.metric().name())
}

/// Fits kernel PCA from an integrated squared-distance matrix.
pub fn fit_from_distances(
    d2: &SquaredDistanceMatrix,
    opts: &FitOptions,
    metric: &str,
) -> Result<KpcaModel> {
    let kernel = gower_center(d2);
    let spectrum = eig_sym(&kernel, opts.psd_tol, metric)?;
    fit_from_spectrum(d2.ids().to_vec(), &kernel, &spectrum, opts)
}

/// Builds the model from an already decomposed kernel.
pub fn fit_from_spectrum(
    ids: Vec<String>,
    kernel: &CenteredKernelMatrix,
    spectrum: &EigenSpectrum,
    opts: &FitOptions,
) -> Result<KpcaModel> {
    let n = kernel.len();
    if n < 2 {
        return Err(Error::InvalidDataset(
            "need at least two observations".into(),
        ));
    }
    if ids.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: ids.len(),
        });
    }
    let rank = numerical_rank(&spectrum.eigenvalues, opts.rank_tol);
    let k = if rank == 0 {
        log::warn!("all observations coincide; fitted model has no components");
        0
    } else if opts.n_components > rank {
        return Err(Error::InsufficientRank {
            requested: opts.n_components,
            rank,
        });
    } else {
        opts.n_components
    };

    let eigenvalues: Vec<f64> = spectrum.eigenvalues[..k].to_vec();
    let mut alphas = DMatrix::zeros(n, k);
    let mut scores = DMatrix::zeros(n, k);
    for (c, &lambda) in eigenvalues.iter().enumerate() {
        let root = lambda.sqrt();
        for i in 0..n {
            let v = spectrum.eigenvectors[(i, c)];
            alphas[(i, c)] = v / root;
            scores[(i, c)] = root * v;
        }
    }
    Ok(KpcaModel {
        ids,
        n_components: k,
        eigenvalues,
        spectrum: spectrum.eigenvalues.clone(),
        clamped_count: spectrum.clamped_count,
        alphas,
        scores,
        centering: kernel.stats().clone(),
    })
}

/// Number of eigenvalues above `rank_tol · λ_1` (zero when `λ_1 = 0`).
pub fn numerical_rank(eigenvalues: &[f64], rank_tol: f64) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    eigenvalues.iter().filter(|&&l| l > rank_tol * top).count()
}

impl KpcaModel {
    /// Scores for points given by their squared distances to the training sample.
    pub fn transform_distances(&self, d2_to_train: &[f64]) -> Result<Vec<f64>> {
        let kx = center_new_point(&self.centering, d2_to_train)?;
        Ok((0..self.n_components)
            .map(|c| {
                let mut acc = 0.0;
                for (i, k) in kx.iter().enumerate() {
                    acc += self.alphas[(i, c)] * k;
                }
                acc
            })
            .collect())
    }

    /// Sum of the clamped spectrum; the total variance times `n`.
    pub fn total_eigenvalue(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    pub fn n_train(&self) -> usize {
        self.ids.len()
    }
}

/// Scores of new observations, one row per observation.
pub fn transform(
    model: &KpcaModel,
    new: &[MetricFunction],
    train: &FunctionalDataset,
) -> Result<DMatrix<f64>> {
    if train.len() != model.n_train() {
        return Err(Error::LengthMismatch {
            expected: model.n_train(),
            got: train.len(),
        });
    }
    let rows = new
        .par_iter()
        .map(|x| {
            let d2 = train.sq_dists_to(x)?;
            model.transform_distances(&d2)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(rows.len(), model.n_components, |r, c| {
        rows[r][c]
    }))
}

/// `λ_k / Σ_j λ_j` over the whole clamped spectrum.
pub fn explained_variance_ratio(model: &KpcaModel) -> Vec<f64> {
    let total = model.total_eigenvalue();
    if total <= 0.0 {
        return vec![0.0; model.n_components];
    }
    model.eigenvalues.iter().map(|l| l / total).collect()
}

/// Serializes a matrix as a list of rows.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Shaped {
        nrows: usize,
        ncols: usize,
        rows: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Shaped {
            nrows: m.nrows(),
            ncols: m.ncols(),
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let shaped = Shaped::deserialize(d)?;
        if shaped.rows.len() != shaped.nrows || shaped.rows.iter().any(|r| r.len() != shaped.ncols)
        {
            return Err(D::Error::custom(
                "matrix rows do not match the declared shape",
            ));
        }
        Ok(DMatrix::from_fn(shaped.nrows, shaped.ncols, |r, c| {
            shaped.rows[r][c]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::SquaredDistanceMatrix;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    fn two_point(delta: f64) -> SquaredDistanceMatrix {
        SquaredDistanceMatrix::new(
            ids(2),
            DMatrix::from_row_slice(2, 2, &[0.0, delta, delta, 0.0]),
            "test",
        )
        .unwrap()
    }

    /// Squared Euclidean distances of random points, an exact negative-type input.
    fn euclidean_d2(points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
    }

    #[test]
    fn zero_distances_give_zero_kernel() {
        let d = SquaredDistanceMatrix::new(ids(3), DMatrix::zeros(3, 3), "t").unwrap();
        let k = gower_center(&d);
        assert!(k.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_point_kernel_by_hand() {
        let delta = 6.0;
        let k = gower_center(&two_point(delta));
        let q = delta / 4.0;
        assert_eq!(k.values(), &DMatrix::from_row_slice(2, 2, &[q, -q, -q, q]));
        let s = eig_sym(&k, DEFAULT_PSD_TOL, "t").unwrap();
        assert!((s.eigenvalues[0] - delta / 2.0).abs() <= 1e-14);
        assert!(s.eigenvalues[1].abs() <= 1e-14);
    }

    #[test]
    fn two_point_new_point_by_hand() {
        let delta = 4.0;
        let k = gower_center(&two_point(delta));
        let (p, q) = (1.5, 9.0);
        let kx = center_new_point(k.stats(), &[p, q]).unwrap();
        assert!((kx[1] - (p - q) / 4.0).abs() <= 1e-15);
        assert!((kx[0] - (q - p) / 4.0).abs() <= 1e-15);
        assert_eq!(
            center_new_point(k.stats(), &[1.0]),
            Err(Error::LengthMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn new_point_with_constant_distances_is_centered() {
        let d = SquaredDistanceMatrix::new(ids(4), DMatrix::zeros(4, 4), "t").unwrap();
        let k = gower_center(&d);
        let kx = center_new_point(k.stats(), &[2.5; 4]).unwrap();
        assert!(kx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn asymmetric_raw_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.5, 0.0]);
        assert!(matches!(
            gower_center_matrix(&m),
            Err(Error::AsymmetricInput { .. })
        ));
    }

    #[test]
    fn two_point_fit() {
        let d = 3.0;
        let model =
            fit_from_distances(&two_point(d * d), &FitOptions::with_components(1), "t").unwrap();
        assert!((model.eigenvalues[0] - d * d / 2.0).abs() <= 1e-12);
        assert!((model.scores[(0, 0)].abs() - d / 2.0).abs() <= 1e-12);
        assert!((model.scores[(0, 0)] + model.scores[(1, 0)]).abs() <= 1e-12);
        assert_eq!(explained_variance_ratio(&model), vec![1.0]);
        assert!(matches!(
            fit_from_distances(&two_point(1.0), &FitOptions::with_components(2), "t"),
            Err(Error::InsufficientRank {
                requested: 2,
                rank: 1
            })
        ));
    }

    #[test]
    fn degenerate_fit_has_no_components() {
        let d = SquaredDistanceMatrix::new(ids(5), DMatrix::zeros(5, 5), "t").unwrap();
        let model = fit_from_distances(&d, &FitOptions::with_components(3), "t").unwrap();
        assert_eq!(model.n_components, 0);
        assert!(explained_variance_ratio(&model).is_empty());
        assert_eq!(
            model.transform_distances(&[1.0; 5]).unwrap(),
            Vec::<f64>::new()
        );
    }

    #[test]
    fn model_json_round_trip() {
        let pts: Vec<Vec<f64>> = vec![
            vec![0.0, 1.0],
            vec![2.0, -1.0],
            vec![0.5, 0.3],
            vec![-1.0, 2.0],
        ];
        let d = SquaredDistanceMatrix::new(ids(4), euclidean_d2(&pts), "t").unwrap();
        let model = fit_from_distances(&d, &FitOptions::with_components(2), "t").unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: KpcaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    fn random_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (3usize..16, 1usize..5).prop_flat_map(|(n, dim)| {
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), n)
        })
    }

    proptest! {
        #[test]
        fn double_centering_rows_sum_to_zero(points in random_points()) {
            let n = points.len();
            let d = SquaredDistanceMatrix::new(ids(n), euclidean_d2(&points), "t").unwrap();
            let k = gower_center(&d);
            let tol = 1e-9 * n as f64 * k.max_abs();
            for r in 0..n {
                prop_assert!(k.values().row(r).sum().abs() <= tol);
                prop_assert!(k.values().column(r).sum().abs() <= tol);
            }
        }

        #[test]
        fn quadruple_sum_matches_double_centering(points in random_points()) {
            let n = points.len();
            let d2 = euclidean_d2(&points);
            let k = gower_center_matrix(&d2).unwrap();
            let q = quadruple_sum_kernel(&d2).unwrap();
            let diff = (k.values() - q).abs().max();
            prop_assert!(diff <= 1e-12 * k.max_abs().max(1e-300), "diff {} n {}", diff, n);
        }

        #[test]
        fn training_rows_center_like_the_kernel(points in random_points()) {
            let n = points.len();
            let d2 = euclidean_d2(&points);
            let k = gower_center_matrix(&d2).unwrap();
            for b in 0..n {
                let row: Vec<f64> = d2.row(b).iter().copied().collect();
                let kx = center_new_point(k.stats(), &row).unwrap();
                for (a, v) in kx.iter().enumerate() {
                    prop_assert!((v - k.values()[(b, a)]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn gram_consistency(points in random_points()) {
            let n = points.len();
            let d = SquaredDistanceMatrix::new(ids(n), euclidean_d2(&points), "t").unwrap();
            let kernel = gower_center(&d);
            let spectrum = eig_sym(&kernel, DEFAULT_PSD_TOL, "t").unwrap();
            let rank = numerical_rank(&spectrum.eigenvalues, DEFAULT_RANK_TOL);
            let opts = FitOptions::with_components(rank);
            let model = fit_from_spectrum(ids(n), &kernel, &spectrum, &opts).unwrap();
            let s = &model.scores;
            let gram = s.transpose() * s;
            for c in 0..rank {
                let l = model.eigenvalues[c];
                prop_assert!((gram[(c, c)] - l).abs() <= 1e-8 * l);
            }
            let residual: f64 = spectrum.eigenvalues[rank..].iter().map(|l| l * l).sum::<f64>().sqrt();
            let err = (kernel.values() - s * s.transpose()).norm();
            prop_assert!(err <= residual + 1e-8 * kernel.max_abs().max(1.0));
            // αᵀKα = I
            let a = &model.alphas;
            let id = a.transpose() * kernel.values() * a;
            prop_assert!((id - DMatrix::identity(rank, rank)).abs().max() <= 1e-8);
            // in-sample transform reproduces training scores; a component's
            // error grows like eps·‖K‖/sqrt(λ_c), so measure it on the λ_1 scale
            let scale = model.eigenvalues[0].sqrt();
            for b in 0..n {
                let row: Vec<f64> = d.values().row(b).iter().copied().collect();
                let t = model.transform_distances(&row).unwrap();
                for (c, v) in t.iter().enumerate() {
                    prop_assert!((v - model.scores[(b, c)]).abs() <= 1e-8 * scale);
                }
            }
        }
    }
}
