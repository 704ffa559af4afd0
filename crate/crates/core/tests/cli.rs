//! The `fusion-shap` binary on the bundled toy fixture.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use fusion_shap::codec::ManifoldCodec;
use fusion_shap::formats::{load_dataset, load_image, parse_csv};
use fusion_shap::image::Image;
use fusion_shap::model::BlackBoxModel;
use common::fixture;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusion-shap"))
        .args(args)
        .env_remove("FUSION_SHAP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn toy_args<'a>(cmd: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        cmd,
        "--model",
        path_str("toy/model.json"),
        "--codec",
        path_str("toy/codec.json"),
        "--image",
        path_str("toy/image.csv"),
        "--out-dir",
        out,
        "--seed",
        "5",
    ]
}

fn path_str(rel: &str) -> &'static str {
    Box::leak(fixture(rel).to_string_lossy().into_owned().into_boxed_str())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_map(path: &Path) -> Vec<f64> {
    parse_csv(&std::fs::read_to_string(path).unwrap(), "map").unwrap().1
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; v.len()]
    }
}

#[test]
fn fusion_sidecar_curve_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for m in ["fusion", "traditional", "manifold"] {
        let mut a = toy_args("explain", out);
        a.extend(["--method", m, "--dataset", path_str("toy/dataset.json")]);
        ok(&a);
    }
    let side = read_json(&dir.path().join("fusion.json"));
    let fusion = &side["fusion"];
    let alpha = fusion["alpha"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&alpha));
    let curve: Vec<(f64, f64)> = fusion["objective_curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p["alpha"].as_f64().unwrap(), p["objective"].as_f64().unwrap()))
        .collect();
    assert_eq!(curve.len(), 101);
    let min = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    assert_eq!(fusion["chosen_objective"].as_f64().unwrap(), min);
    assert_eq!(curve.iter().find(|p| p.1 == min).unwrap().0, alpha);

    // Recompute every curve point from the two component maps.
    let model = BlackBoxModel::load(fixture("toy/model.json")).unwrap();
    let image = load_image(&fixture("toy/image.csv")).unwrap();
    let t = minmax(&read_map(&dir.path().join("traditional.csv")));
    let m = minmax(&read_map(&dir.path().join("manifold.csv")));
    let top = model.forward(&image).unwrap().argmax();
    for &(a, objective) in &curve {
        let masked: Vec<f64> = (0..t.len())
            .map(|i| image.as_slice()[i] * (a * m[i] + (1.0 - a) * t[i]).clamp(0.0, 1.0))
            .collect();
        let masked = Image::new(image.shape(), masked).unwrap();
        let drop = 1.0 - model.forward(&masked).unwrap().get(top);
        assert!((drop - objective).abs() < 1e-12, "alpha {a}");
    }

    // The written fusion map is the raw mix at the chosen alpha.
    let fused = read_map(&dir.path().join("fusion.csv"));
    let rt = read_map(&dir.path().join("traditional.csv"));
    let rm = read_map(&dir.path().join("manifold.csv"));
    for i in 0..fused.len() {
        assert!((fused[i] - (alpha * rm[i] + (1.0 - alpha) * rt[i])).abs() < 1e-12);
    }
}

#[test]
fn one_cell_grid_spreads_the_confidence_delta_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut a = toy_args("explain", out);
    a.extend(["--method", "traditional", "--grid", "1x1"]);
    ok(&a);
    let values = read_map(&dir.path().join("traditional.csv"));
    assert!(values.iter().all(|&v| v == values[0]));

    let model = BlackBoxModel::load(fixture("toy/model.json")).unwrap();
    let codec = ManifoldCodec::load(fixture("toy/codec.json")).unwrap();
    let image = load_image(&fixture("toy/image.csv")).unwrap();
    let t = model.forward(&image).unwrap().argmax();
    let delta = model.score(&image, t).unwrap() - model.score(&codec.mean_image(), t).unwrap();
    assert!((values.iter().sum::<f64>() - delta).abs() < 1e-12);
    let side = read_json(&dir.path().join("traditional.json"));
    assert!((side["confidence_delta"].as_f64().unwrap() - delta).abs() < 1e-15);
    assert_eq!(side["seed"], 5);
}

#[test]
fn explain_writes_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut a = toy_args("explain", out);
    a.extend(["--method", "grad", "--signed"]);
    ok(&a);
    for name in ["grad.pgm", "grad.pos.pgm", "grad.neg.pgm"] {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert!(bytes.starts_with(b"P5"), "{name}");
        let pgm = fusion_shap::formats::parse_pgm(&bytes, name).unwrap();
        assert_eq!(pgm.shape(), image_shape());
    }
}

fn image_shape() -> fusion_shap::image::Shape {
    fusion_shap::image::Shape::new(1, 4, 4).unwrap()
}

#[test]
fn metrics_table_has_one_finite_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut a = toy_args("metrics", out);
    a.extend(["--dataset", path_str("toy/dataset.json"), "--probes", "3", "--infd-samples", "32"]);
    ok(&a);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,infidelity,sensitivity,complete_allocation,no_unrelated_allocation,seed"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(
        names,
        ["traditional", "manifold", "fusion", "grad", "ig", "smoothgrad", "constant"]
    );
    for r in &rows {
        assert_eq!(r.len(), 6);
        for v in &r[1..3] {
            let x: f64 = v.parse().unwrap();
            assert!(x.is_finite() && x >= 0.0, "{r:?}");
        }
        assert!(["pass", "fail"].contains(&r[3]) && ["pass", "fail"].contains(&r[4]));
        assert_eq!(r[5], "5");
    }
    let constant = rows.iter().find(|r| r[0] == "constant").unwrap();
    assert_eq!(constant[2].parse::<f64>().unwrap(), 0.0);
    // Exact traditional Shapley satisfies complete allocation.
    assert_eq!(rows[0][3], "pass");

    let json = read_json(&dir.path().join("metrics.json"));
    assert_eq!(json["seed"], 5);
    assert_eq!(json["rows"].as_array().unwrap().len(), rows.len());
}

fn sweep_rows(dir: &Path, dims: &str) -> Vec<String> {
    let out = dir.to_str().unwrap();
    ok(&[
        "sweep-dims",
        "--model",
        path_str("toy/model.json"),
        "--dataset",
        path_str("toy/dataset.json"),
        "--image",
        path_str("toy/image.csv"),
        "--dims",
        dims,
        "--probes",
        "2",
        "--infd-samples",
        "16",
        "--grid",
        "2x2",
        "--out-dir",
        out,
    ]);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines().map(str::to_string);
    assert_eq!(lines.next().unwrap(), "dim,infidelity,sensitivity,status,seed");
    lines.collect()
}

#[test]
fn sweep_rows_follow_dims_and_duplicates_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_rows(dir.path(), "1,3,3,6");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1], rows[2]);
    assert!(rows[0].ends_with(",ok,0"));
    // The toy dataset has rank 5.
    assert!(rows[3].starts_with("6,,,skipped E_RANK"), "{}", rows[3]);
}

#[test]
fn single_dim_sweep_equals_metrics_on_that_codec() {
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep_rows(dir.path(), "3");
    assert_eq!(rows.len(), 1);
    let fields: Vec<&str> = rows[0].split(',').collect();

    let codec_path = dir.path().join("codec3.json");
    ok(&[
        "fit-codec",
        "--dataset",
        path_str("toy/dataset.json"),
        "--latent-dim",
        "3",
        "--output",
        codec_path.to_str().unwrap(),
    ]);
    let out = dir.path().join("m");
    ok(&[
        "metrics",
        "--model",
        path_str("toy/model.json"),
        "--codec",
        codec_path.to_str().unwrap(),
        "--dataset",
        path_str("toy/dataset.json"),
        "--image",
        path_str("toy/image.csv"),
        "--method",
        "fusion",
        "--probes",
        "2",
        "--infd-samples",
        "16",
        "--grid",
        "2x2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "fusion");
    assert_eq!(row[1], fields[1]);
    assert_eq!(row[2], fields[2]);
}

#[test]
fn fit_codec_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let out = ok(&[
        "fit-codec",
        "--dataset",
        path_str("toy/dataset.json"),
        "--latent-dim",
        "5",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("latent_dim=5 rmse="));
    let codec = ManifoldCodec::load(&path).unwrap();
    for im in load_dataset(&fixture("toy/dataset.json")).unwrap() {
        let back = codec.reconstruct(&im).unwrap();
        for (a, b) in back.as_slice().iter().zip(im.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let again = ManifoldCodec::from_json(&codec.to_json()).unwrap();
    assert_eq!(again, codec);
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    lines[0].to_string()
}

#[test]
fn errors_are_single_coded_lines() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"shape":[1,4,4],"images":[]}"#).unwrap();
    let line = error_line(&run(&["fit-codec", "--dataset", empty.to_str().unwrap(), "--latent-dim", "2"]));
    assert!(line.starts_with("error[E_"), "{line}");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "c,w,h,value\n0,0,0,x\n").unwrap();
    let line = error_line(&run(&[
        "explain",
        "--model",
        path_str("toy/model.json"),
        "--image",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(line.starts_with("error[E_FORMAT]") && line.contains("line 2 value"), "{line}");

    let small = dir.path().join("small.csv");
    std::fs::write(&small, "c,w,h,value\n0,0,0,0.5\n").unwrap();
    let line = error_line(&run(&[
        "explain",
        "--model",
        path_str("toy/model.json"),
        "--image",
        small.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(line.starts_with("error[E_SHAPE]"), "{line}");

    let line = error_line(&run(&["explain", "--method", "lrp"]));
    assert!(line.starts_with("error[E_USAGE]"), "{line}");
}

#[test]
fn out_dir_env_applies_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_fusion-shap"))
        .args(["synth", "--seed", "1"])
        .env("FUSION_SHAP_OUT_DIR", dir.path())
        .current_dir(dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(dir.path().join("model.json").exists());
    assert!(dir.path().join("eval_0.csv").exists());
}
