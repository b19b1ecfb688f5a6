//! The subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use mkpca_core::dm::{trace_identity_tolerance, DIAGONAL_CLAMP};
use mkpca_core::embed::{classical_cross_time_covariance, direct_pca, embed_dataset};
use mkpca_core::fmt::fmt_f64;
use mkpca_core::functional::{max_asymmetry, read_raw_distance_csv, SYMMETRY_TOL};
use mkpca_core::ingest::{
    age_grid_from_records, dataset_to_records, panel_to_observations, records_to_vector_panel,
    restrict_ages, write_lifetable_csv, CdfPanel, LifetableRecord,
};
use mkpca_core::kernel::{fit_from_spectrum, gower_center_matrix, numerical_rank};
use mkpca_core::model::ModelDocument;
use mkpca_core::{
    dm_eigenfunctions, eig_sym, explained_variance_ratio, gower_center, information_loss_report,
    metric_cov, pairwise_sq_dist_matrix, panel_to_dataset, parse_lifetable_csv,
    quadruple_sum_kernel, records_to_cdf_panel, synth_gaussian_cdf_process,
    trace_identity_residual, transform, AgeGrid, FunctionalDataset, KpcaModel, PointMetric,
    SquaredDistanceMatrix,
};
use nalgebra::DMatrix;

use crate::config::{MetricChoice, RunConfig};
use crate::error::CliError;
use crate::output::{write_indexed, write_scores, OutDir};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(mkpca_core::Error::Io(format!("{}: {e}", path.display()))))
}

fn require_input(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.input
        .as_deref()
        .ok_or_else(|| CliError::Config("--input is required".into()))
}

fn read_records(cfg: &RunConfig, path: &Path) -> Result<Vec<LifetableRecord>, CliError> {
    let records = parse_lifetable_csv(open(path)?, &cfg.schema)?;
    let records = restrict_ages(records, cfg.age_min, cfg.age_max);
    if records.is_empty() {
        return Err(CliError::Data(mkpca_core::Error::EmptyInput));
    }
    Ok(records)
}

fn build_panel(cfg: &RunConfig, records: &[LifetableRecord]) -> Result<CdfPanel, CliError> {
    let grid = age_grid_from_records(records, None, None)?;
    Ok(match cfg.metric {
        MetricChoice::CdfL2 => records_to_cdf_panel(records, &Arc::new(grid), &cfg.bounds)?,
        MetricChoice::Euclidean => records_to_vector_panel(records, &grid)?,
    })
}

fn apply_time_scaling(
    cfg: &RunConfig,
    ds: FunctionalDataset,
) -> Result<FunctionalDataset, CliError> {
    if !cfg.normalize_time || ds.time_grid().len() < 2 {
        return Ok(ds);
    }
    let grid = ds.time_grid().scaled(1.0 / ds.time_grid().span())?;
    Ok(ds.with_time_grid(Arc::new(grid))?)
}

/// Reads `--input` into a dataset plus per-unit group labels.
pub fn load_dataset(
    cfg: &RunConfig,
) -> Result<(FunctionalDataset, BTreeMap<String, String>), CliError> {
    let records = read_records(cfg, require_input(cfg)?)?;
    let panel = build_panel(cfg, &records)?;
    let ds = apply_time_scaling(cfg, panel_to_dataset(&panel, cfg.time_policy)?)?;
    Ok((ds, panel.groups().clone()))
}

fn group_lookup(groups: &BTreeMap<String, String>) -> impl Fn(&str) -> String + '_ {
    move |id: &str| groups.get(id).cloned().unwrap_or_default()
}

fn write_model_outputs(out: &OutDir, doc: &ModelDocument) -> Result<(), CliError> {
    let model = &doc.kpca;
    let groups = group_lookup(&doc.groups);
    out.write("scores.csv", |w| {
        write_scores(w, &model.ids, &groups, &model.scores)
    })?;
    let n = model.n_train() as f64;
    out.write("eigenvalues.csv", |w| {
        write_indexed(
            w,
            &["component", "eigenvalue", "variance"],
            model.spectrum.iter().map(|l| vec![*l, l / n]),
        )
    })?;
    let ratios = explained_variance_ratio(model);
    let mut acc = 0.0;
    let rows: Vec<Vec<f64>> = ratios
        .iter()
        .map(|r| {
            acc += r;
            vec![*r, acc]
        })
        .collect();
    out.write("explained_variance.csv", |w| {
        write_indexed(w, &["component", "ratio", "cumulative"], rows)
    })?;
    let json = doc.to_json()?;
    out.write_str("model.json", &(json + "\n"))?;
    Ok(())
}

/// Fits kernel PCA and writes scores, spectrum, explained variance and the model.
pub fn cmd_fit(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let opts = cfg.fit_options();
    let doc = match (&cfg.distances, &cfg.input) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "use either --input or --distances, not both".into(),
            ))
        }
        (Some(path), None) => {
            let d2 = SquaredDistanceMatrix::read_csv(open(path)?)?;
            let model = mkpca_core::fit_from_distances(&d2, &opts, "external distances")?;
            ModelDocument::new("external distances", opts, model, None)
        }
        (None, _) => {
            let (ds, groups) = load_dataset(cfg)?;
            let d2 = pairwise_sq_dist_matrix(&ds)?;
            let model = mkpca_core::fit_from_distances(&d2, &opts, cfg.metric.name())?;
            let mut doc = ModelDocument::new(cfg.metric.name(), opts, model, Some(&ds));
            doc.groups = groups;
            doc
        }
    };
    let out = OutDir::create(&cfg.out)?;
    write_model_outputs(&out, &doc)?;
    let ratios = explained_variance_ratio(&doc.kpca);
    let _ = writeln!(
        log,
        "fit: n={} components={} explained=[{}] -> {}",
        doc.kpca.n_train(),
        doc.kpca.n_components,
        ratios
            .iter()
            .map(|r| format!("{r:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
        out.path().display()
    );
    Ok(())
}

/// Projects the units of `--input` with a fitted `--model`.
pub fn cmd_transform(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Config("--model is required".into()))?;
    let text = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", model_path.display())))?;
    let doc = ModelDocument::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let training = doc.training.as_ref().ok_or_else(|| {
        CliError::Config("model was fitted from bare distances and cannot project new data".into())
    })?;
    let train = training.to_dataset()?;

    let records = parse_lifetable_csv(open(require_input(cfg)?)?, &cfg.schema)?;
    let panel = match train.metric() {
        PointMetric::CdfL2 { grid } => {
            let (lo, hi) = (grid.points()[0], grid.points()[grid.len() - 1]);
            let records = restrict_ages(records, Some(lo), Some(hi));
            records_to_cdf_panel(&records, grid, &cfg.bounds)?
        }
        PointMetric::Euclidean { dim } => {
            let records = restrict_ages(records, cfg.age_min, cfg.age_max);
            let grid: AgeGrid = age_grid_from_records(&records, None, None)?;
            if grid.len() != *dim {
                return Err(CliError::Data(mkpca_core::Error::GridMismatch(format!(
                    "new data has {} ages, model expects {dim}",
                    grid.len()
                ))));
            }
            records_to_vector_panel(&records, &grid)?
        }
        PointMetric::Table(_) => {
            return Err(CliError::Config(
                "table metrics cannot be read from life-table input".into(),
            ))
        }
    };
    let (grid, observations) = panel_to_observations(&panel, cfg.time_policy)?;
    if grid.points() != train.time_grid().points() {
        return Err(CliError::Data(mkpca_core::Error::GridMismatch(format!(
            "new data covers times {:?}, model was fitted on {:?}",
            grid.points(),
            train.time_grid().points()
        ))));
    }
    let scores = transform(&doc.kpca, &observations, &train)?;
    let ids: Vec<String> = observations.iter().map(|o| o.id.clone()).collect();
    let out = OutDir::create(&cfg.out)?;
    let groups = panel.groups().clone();
    let lookup = group_lookup(&groups);
    out.write("scores.csv", |w| write_scores(w, &ids, &lookup, &scores))?;
    let _ = writeln!(
        log,
        "transform: {} units -> {}",
        ids.len(),
        out.path().display()
    );
    Ok(())
}

/// Computes the metric covariance kernel, its eigenfunctions and the trace identity.
pub fn cmd_dm(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    if cfg.distances.is_some() {
        return Err(CliError::Config(
            "dm needs the observations themselves; --distances is not supported".into(),
        ));
    }
    let (ds, _) = load_dataset(cfg)?;
    let cdm = metric_cov(&ds)?;
    let dm = dm_eigenfunctions(&cdm, cfg.components, cfg.psd_tol)?;

    let kernel = gower_center(&pairwise_sq_dist_matrix(&ds)?);
    let spectrum = eig_sym(&kernel, cfg.psd_tol, cfg.metric.name())?;
    let rank = numerical_rank(&spectrum.eigenvalues, cfg.rank_tol);
    let mut opts = cfg.fit_options();
    opts.n_components = opts.n_components.min(rank);
    let model = fit_from_spectrum(ds.ids(), &kernel, &spectrum, &opts)?;
    let report = information_loss_report(&model, &dm);

    let residual = trace_identity_residual(&cdm, &kernel)?;
    let tol = trace_identity_tolerance(&kernel);
    let status = if residual <= tol { "PASS" } else { "FAIL" };

    let out = OutDir::create(&cfg.out)?;
    out.write("cdm.csv", |w| cdm.write_csv(w).map_err(CliError::from))?;
    out.write("dm_eigenfunctions.csv", |w| {
        dm.write_csv(w).map_err(CliError::from)
    })?;
    let total: f64 = dm.eigenvalues.iter().sum();
    out.write("dm_eigenvalues.csv", |w| {
        write_indexed(
            w,
            &["component", "eigenvalue", "ratio"],
            dm.eigenvalues
                .iter()
                .map(|l| vec![*l, if total > 0.0 { l / total } else { 0.0 }]),
        )
    })?;
    out.write("information_loss.csv", |w| {
        report.write_csv(w).map_err(CliError::from)
    })?;
    let summary = format!(
        "integrated_trace_cdm={}\nkernel_trace_over_n={}\nresidual={}\ntolerance={}\nstatus={status}\n{report}\n",
        fmt_f64(cdm.integrated_trace()),
        fmt_f64(kernel.trace() / kernel.len() as f64),
        fmt_f64(residual),
        fmt_f64(tol),
    );
    out.write_str("trace_identity.txt", &summary)?;
    if status == "FAIL" {
        log::warn!("trace identity residual {residual:e} exceeds {tol:e}");
    }
    let _ = writeln!(
        log,
        "dm: T={} residual={residual:e} -> {}",
        cdm.values().nrows(),
        out.path().display()
    );
    Ok(())
}

/// Writes a seeded synthetic life-table file.
pub fn cmd_synth(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let params = cfg.synth.draw_params()?;
    let ds = synth_gaussian_cdf_process(&cfg.synth)?;
    let records = dataset_to_records(&ds)?;
    let out = OutDir::create(&cfg.out)?;
    out.write("synth.csv", |w| {
        write_lifetable_csv(w, &records).map_err(CliError::from)
    })?;
    out.write("synth_params.csv", |w| {
        let mut csvw = csv::Writer::from_writer(w);
        let err = |e: csv::Error| CliError::Config(e.to_string());
        csvw.write_record(["unit_id", "mu", "drift", "sigma"])
            .map_err(err)?;
        for (id, p) in ds.ids().iter().zip(&params) {
            csvw.write_record([
                id.clone(),
                fmt_f64(p.mu),
                fmt_f64(p.drift),
                fmt_f64(p.sigma),
            ])
            .map_err(err)?;
        }
        csvw.flush().map_err(|e| CliError::Config(e.to_string()))
    })?;
    let _ = writeln!(
        log,
        "synth: {} units x {} times (seed {}) -> {}",
        ds.len(),
        ds.time_grid().len(),
        cfg.synth.seed,
        out.path().display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    name: &'static str,
    status: Status,
    detail: String,
}

impl Outcome {
    fn measured(name: &'static str, value: f64, tol: f64) -> Self {
        let value = value + 0.0;
        let status = if value <= tol {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name,
            status,
            detail: format!("value={} tol={}", fmt_f64(value), fmt_f64(tol)),
        }
    }

    fn skip(name: &'static str, why: &str) -> Self {
        Self {
            name,
            status: Status::Skip,
            detail: format!("reason=\"{why}\""),
        }
    }

    fn line(&self) -> String {
        let s = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!("check property={} status={s} {}", self.name, self.detail)
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Properties that only need a squared-distance matrix.
fn distance_checks(
    d2: &DMatrix<f64>,
    cfg: &RunConfig,
    out: &mut Vec<Outcome>,
) -> Option<KpcaModel> {
    let n = d2.nrows();
    let asym = max_asymmetry(d2).map_or(0.0, |(_, _, d)| d);
    let diag = (0..n).fold(0.0f64, |a, i| a.max(d2[(i, i)].abs()));
    let negative = d2.iter().fold(0.0f64, |a, x| a.max(-x));
    out.push(Outcome::measured("symmetry", asym, SYMMETRY_TOL));
    out.push(Outcome::measured("zero_diagonal", diag, 0.0));
    out.push(Outcome::measured("nonnegative", negative, 0.0));
    let later = [
        "double_centering",
        "centering_equivalence",
        "negative_type",
        "out_of_sample",
    ];
    let Ok(kernel) = gower_center_matrix(d2).map_err(|_| ()).and_then(|k| {
        if diag == 0.0 && negative == 0.0 {
            Ok(k)
        } else {
            Err(())
        }
    }) else {
        out.extend(
            later
                .iter()
                .map(|name| Outcome::skip(name, "invalid distance matrix")),
        );
        return None;
    };

    let scale = kernel.max_abs();
    let row_sum = (0..n).fold(0.0f64, |a, r| a.max(kernel.values().row(r).sum().abs()));
    out.push(Outcome::measured(
        "double_centering",
        row_sum,
        1e-9 * n as f64 * scale,
    ));

    match quadruple_sum_kernel(d2) {
        Ok(q) => out.push(Outcome::measured(
            "centering_equivalence",
            max_abs(&(kernel.values() - q)),
            1e-12 * scale,
        )),
        Err(e) => out.push(Outcome::skip("centering_equivalence", &e.to_string())),
    }

    let raw = match mkpca_core::jacobi_eigen(kernel.values()) {
        Ok(raw) => raw,
        Err(e) => {
            out.push(Outcome::skip("negative_type", &e.to_string()));
            out.push(Outcome::skip("out_of_sample", "no spectrum"));
            return None;
        }
    };
    let top = raw.values.first().copied().unwrap_or(0.0).max(0.0);
    let min = raw.values.last().copied().unwrap_or(0.0);
    out.push(Outcome::measured(
        "negative_type",
        (-min).max(0.0),
        cfg.psd_tol * top,
    ));
    let Ok(spectrum) = mkpca_core::EigenSpectrum::from_raw(raw, cfg.psd_tol, cfg.metric.name())
    else {
        out.push(Outcome::skip(
            "out_of_sample",
            "kernel is not positive semidefinite",
        ));
        return None;
    };
    let mut opts = cfg.fit_options();
    opts.n_components = opts
        .n_components
        .min(numerical_rank(&spectrum.eigenvalues, cfg.rank_tol));
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let model = fit_from_spectrum(ids, &kernel, &spectrum, &opts).ok()?;
    let mut worst = 0.0f64;
    for b in 0..n {
        let row: Vec<f64> = d2.row(b).iter().copied().collect();
        let t = model.transform_distances(&row).ok()?;
        for (c, v) in t.iter().enumerate() {
            let scale = model.scores.column(c).abs().max();
            worst = worst.max((v - model.scores[(b, c)]).abs() / scale);
        }
    }
    out.push(Outcome::measured("out_of_sample", worst, 1e-8));
    Some(model)
}

/// Properties that compare against explicit coordinates and the covariance kernel.
fn dataset_checks(
    ds: &FunctionalDataset,
    model: Option<&KpcaModel>,
    cfg: &RunConfig,
    out: &mut Vec<Outcome>,
) -> Result<(), CliError> {
    match (model, embed_dataset(ds)) {
        (Some(model), Ok(x)) => {
            let pca = direct_pca(&x);
            let top = model
                .spectrum
                .first()
                .copied()
                .unwrap_or(0.0)
                .max(f64::MIN_POSITIVE);
            let eig_gap = model
                .spectrum
                .iter()
                .zip(&pca.eigenvalues)
                .fold(0.0f64, |a, (l, p)| a.max((l - p).abs() / top));
            out.push(Outcome::measured("oracle_eigenvalues", eig_gap, 1e-8));
            let mut worst = 0.0f64;
            for c in 0..model.n_components {
                let ours = model.scores.column(c);
                let theirs = pca.scores.column(c);
                let sign = if ours.dot(&theirs) < 0.0 { -1.0 } else { 1.0 };
                let scale = ours.abs().max();
                worst = worst.max((ours - theirs * sign).abs().max() / scale);
            }
            out.push(Outcome::measured("oracle_scores", worst, 1e-8));
        }
        (None, _) => {
            out.push(Outcome::skip("oracle_eigenvalues", "no fitted model"));
            out.push(Outcome::skip("oracle_scores", "no fitted model"));
        }
        (_, Err(e)) => {
            out.push(Outcome::skip("oracle_eigenvalues", &e.to_string()));
            out.push(Outcome::skip("oracle_scores", &e.to_string()));
        }
    }

    let cdm = metric_cov(ds)?;
    let t_len = cdm.values().nrows();
    let asym = max_abs(&(cdm.values() - cdm.values().transpose()));
    out.push(Outcome::measured("cdm_symmetry", asym, 1e-10));
    let diag_min = (0..t_len).fold(0.0f64, |a, t| a.min(cdm.values()[(t, t)]));
    out.push(Outcome::measured("cdm_diagonal", -diag_min, DIAGONAL_CLAMP));

    let kernel = gower_center(&pairwise_sq_dist_matrix(ds)?);
    let residual = trace_identity_residual(&cdm, &kernel)?;
    out.push(Outcome::measured(
        "trace_identity",
        residual,
        trace_identity_tolerance(&kernel),
    ));

    match classical_cross_time_covariance(ds) {
        Ok(classical) => out.push(Outcome::measured(
            "classical_covariance",
            max_abs(&(cdm.values() - classical)),
            1e-10,
        )),
        Err(e) => out.push(Outcome::skip("classical_covariance", &e.to_string())),
    }

    match dm_eigenfunctions(&cdm, cfg.components, cfg.psd_tol) {
        Ok(dm) => {
            let sum: f64 = dm.eigenvalues.iter().sum();
            let trace = cdm.integrated_trace();
            out.push(Outcome::measured(
                "dm_trace_preservation",
                (sum - trace).abs(),
                1e-8 * trace.max(f64::MIN_POSITIVE),
            ));
        }
        Err(e) => out.push(Outcome {
            name: "dm_trace_preservation",
            status: Status::Fail,
            detail: format!("error=\"{e}\""),
        }),
    }
    Ok(())
}

/// Runs the invariant suite and prints one line per property.
pub fn cmd_check(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let mut outcomes = Vec::new();
    match (&cfg.distances, &cfg.input) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "use either --input or --distances, not both".into(),
            ))
        }
        (Some(path), None) => {
            let (_, d2) = read_raw_distance_csv(open(path)?)?;
            distance_checks(&d2, cfg, &mut outcomes);
            for name in [
                "oracle_eigenvalues",
                "oracle_scores",
                "cdm_symmetry",
                "cdm_diagonal",
                "trace_identity",
                "classical_covariance",
                "dm_trace_preservation",
            ] {
                outcomes.push(Outcome::skip(name, "distance-only input"));
            }
        }
        (None, _) => {
            let (ds, _) = load_dataset(cfg)?;
            let d2 = pairwise_sq_dist_matrix(&ds)?;
            let model = distance_checks(d2.values(), cfg, &mut outcomes);
            dataset_checks(&ds, model.as_ref(), cfg, &mut outcomes)?;
        }
    }
    for o in &outcomes {
        let _ = writeln!(log, "{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| o.status == Status::Fail).count();
    let passed = outcomes.iter().filter(|o| o.status == Status::Pass).count();
    let _ = writeln!(
        log,
        "check summary passed={passed} failed={failed} skipped={}",
        outcomes.len() - passed - failed
    );
    if failed > 0 {
        Err(CliError::CheckFailed {
            failed,
            total: outcomes.len(),
        })
    } else {
        Ok(())
    }
}
