//! Kernel principal component analysis for observations that are functions
//! with values in a metric space of negative type.
//!
//! The pipeline only ever needs squared distances: integrated squared
//! distances between observations are double-centered into a kernel matrix
//! whose eigenvectors give the component scores. The [`dm`] module computes
//! the real-valued metric covariance kernel on the time grid for
//! comparison, and [`embed`] provides explicit coordinates used to verify
//! the distance-only results.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dm;
pub mod eigen;
pub mod embed;
pub mod error;
pub mod fmt;
pub mod functional;
pub mod ingest;
pub mod kernel;
pub mod metric;
pub mod model;

pub use dm::{
    dm_eigenfunctions, information_loss_report, metric_cov, trace_identity_residual,
    DmEigenfunctions, InformationLossReport, MetricCovarianceGrid,
};
pub use eigen::{jacobi_eigen, EigenSpectrum, SymmetricEigen};
pub use error::{Error, Result};
pub use functional::{
    cross_time_sq_dist, integrated_sq_dist, pairwise_sq_dist_matrix, FunctionalDataset,
    MetricFunction, SquaredDistanceMatrix, TimeGrid,
};
pub use ingest::{
    panel_to_dataset, parse_lifetable_csv, records_to_cdf_panel, synth_gaussian_cdf_process,
    CdfPanel, LifetableRecord, Schema, SynthesisConfig, TimePolicy,
};
pub use kernel::{
    center_new_point, eig_sym, explained_variance_ratio, fit_from_distances, fit_kpca,
    gower_center, quadruple_sum_kernel, transform, CenteredKernelMatrix, CenteringStats,
    FitOptions, KpcaModel,
};
pub use metric::{
    sq_dist, validate_cdf, AgeGrid, CdfBounds, DiscretizedCdf, DistanceTable, Point, PointMetric,
    QuadratureGrid,
};
pub use model::ModelDocument;
