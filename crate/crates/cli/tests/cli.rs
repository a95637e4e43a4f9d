use std::path::Path;
use std::process::{Command, Output};

use icnn_core::icnn::{abs_model, IcnnLayer, IcnnModel};
use icnn_core::numeric::Matrix;

fn icnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icnn")).args(args).output().expect("running the cli")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().to_string()
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("o"));
    let o = icnn(&["verify", "--suite", "convexity", "--model", "/nonexistent/model.json", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/model.json"));
    let o = icnn(&["train", "--kind", "icnn", "--data", "/nonexistent.csv", "--out", &out]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_usage_exits_with_two() {
    assert_eq!(code(&icnn(&["control", "--plant", "battery"])), 2);
    assert_eq!(code(&icnn(&["verify", "--suite", "convexity"])), 2);
}

#[test]
fn corrupted_model_fails_verification_with_located_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.json");
    let mut m = abs_model();
    m.layers_mut()[1].w.set(0, 0, -3.0);
    std::fs::write(&model, m.to_json().unwrap()).unwrap();
    let out = tmp.path().join("v");
    let o = icnn(&["verify", "--suite", "convexity", "--model", &s(&model), "--samples", "2000", "--out", &s(&out)]);
    assert_eq!(code(&o), 1);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
    let rep = json(&out.join("verify_report.json"));
    assert!(rep[0]["offending"]["point"].is_array());
    assert!(json(&out.join("manifest.json"))["outputs"].is_array());

    std::fs::write(&model, abs_model().to_json().unwrap()).unwrap();
    let o = icnn(&["verify", "--suite", "convexity", "--model", &s(&model), "--samples", "2000", "--out", &s(&out)]);
    assert_eq!(code(&o), 0);
}

#[test]
fn enumerate_then_construct_round_trips() {
    // |u| = relu(u) + relu(-u) with a zero passthrough
    let layers = vec![
        IcnnLayer {
            w: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            d: None,
            b: vec![0.0, 0.0],
        },
        IcnnLayer {
            w: Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            d: Some(Matrix::zeros(1, 2)),
            b: vec![0.0],
        },
    ];
    let net = IcnnModel::from_layers(0, 1, layers).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("abs.json");
    std::fs::write(&model, net.to_json().unwrap()).unwrap();
    let (e, c) = (tmp.path().join("e"), tmp.path().join("c"));
    assert_eq!(code(&icnn(&["enumerate", "--model", &s(&model), "--out", &s(&e)])), 0);
    let rep = json(&e.join("report.json"));
    assert_eq!(rep["pieces"], 4);
    assert!(rep["grid_max_deviation"].as_f64().unwrap() < 1e-9);
    assert!(rep["round_trip_max_deviation"].as_f64().unwrap() < 1e-9);
    let ma = s(&e.join("maxaffine.json"));
    assert_eq!(code(&icnn(&["construct", "--model", &ma, "--out", &s(&c)])), 0);
    let rep = json(&c.join("report.json"));
    assert_eq!(rep["relu_count"], 3);
    assert!(rep["grid_max_deviation"].as_f64().unwrap() < 1e-9);

    // the compiled network carries a passthrough, which enumeration rejects by name
    let o = icnn(&["enumerate", "--model", &s(&c.join("icnn.json")), "--out", &s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("passthrough"));
}

#[test]
fn zero_length_episode_is_empty_and_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("k");
    let o = icnn(&["control", "--plant", "battery", "--model", "oracle", "--objective", "tou", "--episode", "0", "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["runs"][0][1]["steps"], 0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only");
}

#[test]
fn flags_override_config_and_config_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    std::fs::write(&cfg, r#"{"n": 7, "horizon": 9}"#).unwrap();
    let out = tmp.path().join("g");
    let o = icnn(&["generate", "--plant", "battery", "--config", &s(&cfg), "--n", "3", "--out", &s(&out)]);
    assert_eq!(code(&o), 0);
    let man = json(&out.join("manifest.json"));
    assert_eq!(man["config"]["n"], 3);
    assert_eq!(man["config"]["horizon"], 9);
    let rows = std::fs::read_to_string(out.join("rollouts.csv")).unwrap().lines().count();
    // header + 3 rollouts of 9 steps plus a terminal row each
    assert_eq!(rows, 1 + 3 * 10);
}

#[test]
fn seed_changes_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    icnn(&["generate", "--plant", "abs", "--n", "20", "--seed", "1", "--out", &s(&a)]);
    icnn(&["generate", "--plant", "abs", "--n", "20", "--seed", "2", "--out", &s(&b)]);
    assert_ne!(std::fs::read(a.join("abs.csv")).unwrap(), std::fs::read(b.join("abs.csv")).unwrap());
}

#[test]
fn theorem_suites_pass_from_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("t"));
    assert_eq!(code(&icnn(&["verify", "--suite", "theorem1", "--samples", "1000", "--out", &out])), 0);
    assert_eq!(code(&icnn(&["verify", "--suite", "theorem2", "--samples", "400", "--out", &out])), 0);
}

#[test]
fn dimension_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("pm");
    assert_eq!(code(&icnn(&["generate", "--plant", "point_mass", "--n", "2", "--horizon", "30", "--out", &s(&data)])), 0);
    let cfg = tmp.path().join("t.json");
    std::fs::write(&cfg, r#"{"icnn": {"widths": [4], "epochs": 2}}"#).unwrap();
    let model = tmp.path().join("m");
    let rollouts = s(&data.join("rollouts.csv"));
    let o = icnn(&["train", "--kind", "icnn", "--plant", "point_mass", "--data", &rollouts, "--config", &s(&cfg), "--out", &s(&model)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = s(&model.join("model.json"));
    let o = icnn(&["control", "--plant", "battery", "--model", &m, "--objective", "tou", "--out", &s(&tmp.path().join("k"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("do not match"));
    let o = icnn(&["control", "--plant", "point_mass", "--model", &m, "--objective", "reward", "--episode", "3", "--out", &s(&tmp.path().join("k"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
