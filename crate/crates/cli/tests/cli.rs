use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn mkpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkpca"))
        .args(args)
        .output()
        .expect("spawn mkpca")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn synth(dir: &Path) -> PathBuf {
    let out = mkpca(&["synth", "--out", s(dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("synth.csv")
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let input = synth(&tmp.path().join("data"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = mkpca(&[
            "fit",
            "--input",
            s(&input),
            "--out",
            s(dir),
            "--components",
            "3",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [
        "scores.csv",
        "eigenvalues.csv",
        "explained_variance.csv",
        "model.json",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let (header, rows) = read_table(&a.join("scores.csv"));
    assert_eq!(header, ["unit_id", "group", "pc1", "pc2", "pc3"]);
    assert_eq!(rows.len(), 12);
}

#[test]
fn dm_is_byte_identical_and_records_trace_residual() {
    let tmp = TempDir::new().unwrap();
    let input = synth(&tmp.path().join("data"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        assert_eq!(
            code(&mkpca(&["dm", "--input", s(&input), "--out", s(dir)])),
            0
        );
    }
    for name in [
        "cdm.csv",
        "dm_eigenfunctions.csv",
        "dm_eigenvalues.csv",
        "information_loss.csv",
        "trace_identity.txt",
    ] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let text = fs::read_to_string(a.join("trace_identity.txt")).unwrap();
    let residual: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("residual="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(residual <= 1e-10, "{residual}");
    assert!(text.contains("status=PASS"));
    let (header, rows) = read_table(&a.join("cdm.csv"));
    assert_eq!(header.len(), 11);
    assert_eq!(rows.len(), 10);
}

#[test]
fn toy_lifetable_explained_variance_is_a_partition() {
    let tmp = TempDir::new().unwrap();
    let out = mkpca(&[
        "fit",
        "--input",
        s(&fixture("toy_lifetable.csv")),
        "--schema",
        s(&fixture("toy_schema.toml")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_table(&tmp.path().join("explained_variance.csv"));
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!(total <= 1.0 + 1e-12, "{total}");
    let (_, scores) = read_table(&tmp.path().join("scores.csv"));
    let groups: Vec<&str> = scores.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(groups, ["East", "East", "West", "North", "West"]);
}

#[test]
fn inline_schema_matches_schema_file() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let input = fixture("toy_lifetable.csv");
    let file = mkpca(&[
        "fit",
        "--input",
        s(&input),
        "--schema",
        s(&fixture("toy_schema.toml")),
        "--out",
        s(&a),
    ]);
    let inline = mkpca(&[
        "fit",
        "--input",
        s(&input),
        "--schema",
        "unit_id=Country,time=Year,age=Age,mass=dx,group=Region",
        "--out",
        s(&b),
    ]);
    assert_eq!(code(&file), 0);
    assert_eq!(
        code(&inline),
        0,
        "{}",
        String::from_utf8_lossy(&inline.stderr)
    );
    assert_eq!(
        fs::read(a.join("scores.csv")).unwrap(),
        fs::read(b.join("scores.csv")).unwrap()
    );
}

#[test]
fn malformed_csv_exits_3_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let out = mkpca(&[
        "fit",
        "--input",
        s(&fixture("malformed.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let input = fixture("euclidean.csv");
    let zero = mkpca(&[
        "fit",
        "--input",
        s(&input),
        "--components",
        "0",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&zero), 2);
    let tol = mkpca(&[
        "fit",
        "--input",
        s(&input),
        "--psd-tol",
        "-1",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&tol), 2);
    let missing = mkpca(&["fit", "--out", s(tmp.path())]);
    assert_eq!(code(&missing), 2);
    let unknown = mkpca(&["fit", "--no-such-flag"]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn non_negative_type_distances_exit_4_naming_the_metric() {
    let tmp = TempDir::new().unwrap();
    let out = mkpca(&[
        "fit",
        "--distances",
        s(&fixture("star_distances.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("external distances"));
}

#[test]
fn asymmetric_distances_are_a_data_error_for_fit() {
    let tmp = TempDir::new().unwrap();
    let out = mkpca(&[
        "fit",
        "--distances",
        s(&fixture("asymmetric_distances.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn transform_of_training_file_reproduces_fit_scores() {
    let tmp = TempDir::new().unwrap();
    let input = synth(&tmp.path().join("data"));
    let fit_dir = tmp.path().join("fit");
    let tr_dir = tmp.path().join("tr");
    assert_eq!(
        code(&mkpca(&["fit", "--input", s(&input), "--out", s(&fit_dir)])),
        0
    );
    let out = mkpca(&[
        "transform",
        "--model",
        s(&fit_dir.join("model.json")),
        "--input",
        s(&input),
        "--out",
        s(&tr_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (h1, fit) = read_table(&fit_dir.join("scores.csv"));
    let (h2, tr) = read_table(&tr_dir.join("scores.csv"));
    assert_eq!(h1, h2);
    assert_eq!(fit.len(), tr.len());
    for c in 2..h1.len() {
        let col = |rows: &[Vec<String>]| -> Vec<f64> {
            rows.iter().map(|r| r[c].parse().unwrap()).collect()
        };
        let (a, b) = (col(&fit), col(&tr));
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-8 * scale, "{x} vs {y}");
        }
    }
}

fn rewrite_units(src: &Path, dst: &Path, f: impl Fn(&[&str]) -> Option<String>) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let mut out = vec![lines.next().unwrap().to_string()];
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if let Some(l) = f(&fields) {
            out.push(l);
        }
    }
    fs::write(dst, out.join("\n") + "\n").unwrap();
}

#[test]
fn new_unit_identical_to_training_unit_gets_the_same_scores() {
    let tmp = TempDir::new().unwrap();
    let input = synth(&tmp.path().join("data"));
    let fit_dir = tmp.path().join("fit");
    assert_eq!(
        code(&mkpca(&["fit", "--input", s(&input), "--out", s(&fit_dir)])),
        0
    );
    let copy = tmp.path().join("copy.csv");
    rewrite_units(&input, &copy, |f| {
        (f[0] == "unit03").then(|| format!("clone,{}", f[1..].join(",")))
    });
    let tr_dir = tmp.path().join("tr");
    let out = mkpca(&[
        "transform",
        "--model",
        s(&fit_dir.join("model.json")),
        "--input",
        s(&copy),
        "--out",
        s(&tr_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, fit) = read_table(&fit_dir.join("scores.csv"));
    let (_, tr) = read_table(&tr_dir.join("scores.csv"));
    let orig = fit.iter().find(|r| r[0] == "unit03").unwrap();
    assert_eq!(tr.len(), 1);
    for c in 2..orig.len() {
        let (x, y): (f64, f64) = (orig[c].parse().unwrap(), tr[0][c].parse().unwrap());
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn transform_on_wrong_time_grid_exits_3() {
    let tmp = TempDir::new().unwrap();
    let input = synth(&tmp.path().join("data"));
    let fit_dir = tmp.path().join("fit");
    assert_eq!(
        code(&mkpca(&["fit", "--input", s(&input), "--out", s(&fit_dir)])),
        0
    );
    let shifted = tmp.path().join("shifted.csv");
    rewrite_units(&input, &shifted, |f| {
        let t: f64 = f[1].parse().unwrap();
        (f[0] == "unit00").then(|| format!("{},{},{}", f[0], t + 0.5, f[2..].join(",")))
    });
    let out = mkpca(&[
        "transform",
        "--model",
        s(&fit_dir.join("model.json")),
        "--input",
        s(&shifted),
        "--out",
        s(&tmp.path().join("tr")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn all_identical_observations_give_zero_metric_covariance() {
    let tmp = TempDir::new().unwrap();
    let out = mkpca(&[
        "dm",
        "--input",
        s(&fixture("identical.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_table(&tmp.path().join("cdm.csv"));
    assert_eq!(rows.len(), 3);
    for row in rows {
        for v in &row[1..] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn unwritable_output_directory_exits_2() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = mkpca(&[
        "dm",
        "--input",
        s(&fixture("euclidean.csv")),
        "--metric",
        "euclidean",
        "--out",
        s(&blocker.join("out")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn check_passes_on_synthetic_and_euclidean_inputs() {
    let tmp = TempDir::new().unwrap();
    let input = synth(tmp.path());
    let out = mkpca(&["check", "--input", s(&input)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("status=FAIL"));
    assert!(stdout.contains("property=oracle_scores status=PASS"));

    let out = mkpca(&[
        "check",
        "--input",
        s(&fixture("euclidean.csv")),
        "--metric",
        "euclidean",
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("property=classical_covariance status=PASS"));
    assert!(stdout.contains("property=trace_identity status=PASS"));
}

#[test]
fn check_flags_asymmetric_distances() {
    let out = mkpca(&[
        "check",
        "--distances",
        s(&fixture("asymmetric_distances.csv")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("property=symmetry status=FAIL"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "input = {:?}\nmetric = \"euclidean\"\ncomponents = 1\n",
            s(&fixture("euclidean.csv"))
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("o");
    let out = mkpca(&[
        "fit",
        "--config",
        s(&cfg),
        "--components",
        "2",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, _) = read_table(&out_dir.join("scores.csv"));
    assert_eq!(header, ["unit_id", "group", "pc1", "pc2"]);
}
