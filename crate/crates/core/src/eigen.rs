//! Symmetric eigensolver (cyclic Jacobi) and PSD-clamped spectra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sweep limit for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Convergence threshold on `‖offdiag(A)‖_F / ‖A‖_F`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
///
/// Eigenvectors are the columns of `vectors`, each flipped so that its
/// largest-magnitude entry is positive (first such entry on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigendecomposition of the symmetric part of `a`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    // column-major working copies
    let mut m: Vec<f64> = a.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i + i * n] = 1.0;
    }
    let idx = |r: usize, c: usize| r + c * n;

    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = OFF_DIAGONAL_TOL * total;
    let off_norm = |m: &[f64]| -> f64 {
        let mut acc = 0.0;
        for c in 0..n {
            for r in 0..c {
                acc += m[idx(r, c)] * m[idx(r, c)];
            }
        }
        (2.0 * acc).sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > threshold {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[idx(p, p)];
                let aqq = m[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[idx(k, p)];
                    let akq = m[idx(k, q)];
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[idx(p, k)];
                    let aqk = m[idx(q, k)];
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
                m[idx(p, p)] = app - t * apq;
                m[idx(q, q)] = aqq + t * apq;
                m[idx(p, q)] = 0.0;
                m[idx(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[idx(k, p)];
                    let vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| m[idx(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));

    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = &v[src * n..(src + 1) * n];
        let sign = sign_for(col);
        for r in 0..n {
            vectors[(r, dst)] = sign * col[r];
        }
    }
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| diag[i]).collect(),
        vectors,
        sweeps,
    })
}

/// Sign making the largest-magnitude entry positive (lowest index wins ties).
pub fn sign_for(col: &[f64]) -> f64 {
    let mut best = 0usize;
    for (k, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = k;
        }
    }
    if col.get(best).copied().unwrap_or(0.0) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Eigen-decomposition of a matrix that should be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    /// Descending, with small negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// How many negative eigenvalues were set to zero.
    pub clamped_count: usize,
    /// Smallest eigenvalue before clamping.
    pub min_raw_eigenvalue: f64,
}

impl EigenSpectrum {
    /// Decomposes `a` and clamps negatives in `[-psd_tol·λ_max, 0)`.
    ///
    /// Anything more negative is reported as `NotNegativeType` against `metric`.
    pub fn compute(a: &DMatrix<f64>, psd_tol: f64, metric: &str) -> Result<Self> {
        let raw = jacobi_eigen(a)?;
        Self::from_raw(raw, psd_tol, metric)
    }

    pub fn from_raw(raw: SymmetricEigen, psd_tol: f64, metric: &str) -> Result<Self> {
        let max = raw.values.first().copied().unwrap_or(0.0).max(0.0);
        let min = raw.values.last().copied().unwrap_or(0.0);
        if min < -psd_tol * max || (max == 0.0 && min < 0.0) {
            return Err(Error::NotNegativeType {
                metric: metric.to_string(),
                min_eigenvalue: min,
                max_eigenvalue: max,
                psd_tol,
            });
        }
        let mut clamped_count = 0;
        let eigenvalues = raw
            .values
            .iter()
            .map(|&l| {
                if l < 0.0 {
                    clamped_count += 1;
                    0.0
                } else {
                    l
                }
            })
            .collect();
        Ok(Self {
            eigenvalues,
            eigenvectors: raw.vectors,
            clamped_count,
            min_raw_eigenvalue: min,
        })
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    fn check_contracts(a: &DMatrix<f64>, e: &SymmetricEigen) {
        let n = a.nrows();
        let v = &e.vectors;
        let vtv = v.transpose() * v;
        assert!(max_abs(&(vtv - DMatrix::identity(n, n))) <= 1e-10);
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.values.clone()));
        let recon = v * lambda * v.transpose();
        let scale = max_abs(a).max(f64::MIN_POSITIVE);
        assert!(max_abs(&(recon - a)) <= 1e-8 * scale);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_matrix() {
        let a = DMatrix::zeros(4, 4);
        let e = jacobi_eigen(&a).unwrap();
        assert_eq!(e.values, vec![0.0; 4]);
        assert_eq!(e.sweeps, 0);
    }

    #[test]
    fn two_by_two_centered_kernel() {
        let d = 3.0;
        let a = DMatrix::from_row_slice(2, 2, &[d / 4.0, -d / 4.0, -d / 4.0, d / 4.0]);
        let e = jacobi_eigen(&a).unwrap();
        assert!((e.values[0] - d / 2.0).abs() <= 1e-15);
        assert!(e.values[1].abs() <= 1e-15);
        let r = 0.5f64.sqrt();
        // largest entry positive, ties resolved to the first index
        assert!((e.vectors[(0, 0)] - r).abs() <= 1e-15);
        assert!((e.vectors[(1, 0)] + r).abs() <= 1e-15);
    }

    #[test]
    fn known_3x3() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 3.0, 4.0, 0.0, 4.0, 9.0]);
        let e = jacobi_eigen(&a).unwrap();
        let want = [11.0, 2.0, 1.0];
        for (got, want) in e.values.iter().zip(want) {
            assert!((got - want).abs() <= 1e-13);
        }
        check_contracts(&a, &e);
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign_for(&[0.1, -0.9, 0.3]), -1.0);
        assert_eq!(sign_for(&[-0.5, 0.5]), -1.0);
        assert_eq!(sign_for(&[0.5, -0.5]), 1.0);
    }

    #[test]
    fn clamping_and_negative_type() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1e-10, 0.5]));
        let s = EigenSpectrum::compute(&a, 1e-8, "x").unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 0.5, 0.0]);
        assert_eq!(s.clamped_count, 1);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1e-3]));
        assert!(matches!(
            EigenSpectrum::compute(&b, 1e-8, "table"),
            Err(Error::NotNegativeType { .. })
        ));
    }

    #[test]
    fn rejects_non_square() {
        assert!(jacobi_eigen(&DMatrix::zeros(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn random_symmetric_contracts(n in 1usize..12, seed in prop::collection::vec(-10.0f64..10.0, 144)) {
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    a[(i, j)] = seed[i * 12 + j];
                    a[(j, i)] = seed[i * 12 + j];
                }
            }
            let e = jacobi_eigen(&a).unwrap();
            check_contracts(&a, &e);
            let e2 = jacobi_eigen(&a).unwrap();
            prop_assert_eq!(e, e2);
        }
    }
}
