//! End-to-end acceptance checks. Run with
//! `cargo test -p icnn-cli --test acceptance -- --nocapture` to see the per-criterion lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use icnn_core::control::Net;
use icnn_core::experiments::{battery_experiment, building_experiment, circles_experiment, BuildingConfig, CirclesConfig};
use icnn_core::icnn::IcnnModel;
use icnn_core::icrnn::{IcrnnDims, IcrnnModel};
use icnn_core::numeric::RngStream;
use icnn_core::verify::{convexity_icnn, convexity_icrnn, gradients_icnn, gradients_icrnn, theorem1_suite, theorem2_suite};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn criterion_1() -> Outcome {
    let (rep, secs) = timed(|| theorem1_suite(50, 8, 5, 100_000, 1).unwrap());
    // the suite also requires relu_count == K - 1 for every instance
    let pass = rep.passed && rep.max_violation < 1e-9 && secs < 30.0;
    Outcome {
        id: 1,
        name: "max-affine compiler exactness",
        pass,
        detail: format!("max |f - g| = {:.3e}, {secs:.1} s", rep.max_violation),
    }
}

fn criterion_2() -> Outcome {
    let ks: Vec<usize> = (1..=10).collect();
    let (rep, secs) = timed(|| theorem2_suite(&ks, 10_000, 2).unwrap());
    let pass = rep.passed && rep.max_violation < 1e-9 && secs < 60.0;
    Outcome {
        id: 2,
        name: "piece enumeration",
        pass,
        detail: format!("max |f - max L_j| = {:.3e}, {secs:.1} s", rep.max_violation),
    }
}

/// Replaces the largest output-layer weight by a strongly negative value.
fn corrupt_icnn(m: &IcnnModel) -> IcnnModel {
    let mut c = m.clone();
    let out = c.layers_mut().last_mut().expect("output layer");
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for r in 0..out.w.rows() {
        for col in 0..out.w.cols() {
            if out.w.get(r, col) > best {
                best = out.w.get(r, col);
                at = (r, col);
            }
        }
    }
    out.w.set(at.0, at.1, -5.0);
    c
}

fn corrupt_icrnn(m: &IcrnnModel) -> IcrnnModel {
    let mut c = m.clone();
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for r in 0..c.v.rows() {
        for col in 0..c.v.cols() {
            if c.v.get(r, col) > best {
                best = c.v.get(r, col);
                at = (r, col);
            }
        }
    }
    c.v.set(at.0, at.1, -5.0);
    c
}

fn criterion_3(icnn: &IcnnModel, icrnn: &IcrnnModel) -> Outcome {
    let len = icrnn.memory_window() + 1;
    let a = convexity_icnn(icnn, 100_000, 3).unwrap();
    let b = convexity_icrnn(icrnn, len, 100_000, 3).unwrap();
    let ca = convexity_icnn(&corrupt_icnn(icnn), 100_000, 3).unwrap();
    let cb = convexity_icrnn(&corrupt_icrnn(icrnn), len, 100_000, 3).unwrap();
    // the corrupted models must fail on sampled midpoints, not only on the weight scan
    let detected = |r: &icnn_core::verify::VerifyReport| !r.passed && r.max_violation > r.tolerance;
    let pass = a.passed && b.passed && a.max_violation < 1e-8 && b.max_violation < 1e-8 && detected(&ca) && detected(&cb);
    Outcome {
        id: 3,
        name: "convexity certificates",
        pass,
        detail: format!(
            "icnn {:.2e}, icrnn {:.2e}; corrupted icnn {} ({:.2e}), corrupted icrnn {} ({:.2e})",
            a.max_violation,
            b.max_violation,
            if ca.passed { "passed" } else { "failed" },
            ca.max_violation,
            if cb.passed { "passed" } else { "failed" },
            cb.max_violation
        ),
    }
}

fn criterion_4() -> Outcome {
    let (reps, secs) = timed(|| {
        let mut rng = RngStream::new(4, 0);
        let mut icnn = IcnnModel::random(1, 2, &[16, 16, 2], &mut rng).unwrap();
        for l in icnn.layers_mut() {
            for b in &mut l.b {
                *b = rng.gaussian(0.0, 0.5);
            }
        }
        let dims = IcrnnDims {
            state_dim: 1,
            d: 2,
            hidden: 8,
            output: 2,
            n_w: 5,
        };
        let mut icrnn = IcrnnModel::random(dims, &mut rng).unwrap();
        for b in icrnn.b_z.iter_mut().chain(icrnn.b_y.iter_mut()) {
            *b = rng.gaussian(0.0, 0.5);
        }
        let mut v = gradients_icnn(&icnn, 100, 4).unwrap();
        v.extend(gradients_icrnn(&icrnn, 6, 100, 4).unwrap());
        v
    });
    let worst = reps.iter().map(|r| r.max_violation).fold(0.0, f64::max);
    let pass = reps.iter().all(|r| r.passed && r.samples >= 100) && worst < 1e-4 && secs < 60.0;
    let names: Vec<String> = reps.iter().map(|r| format!("{} {}", r.target, r.suite)).collect();
    Outcome {
        id: 4,
        name: "gradient correctness",
        pass,
        detail: format!("worst relative error {worst:.2e} over [{}], {secs:.1} s", names.join(", ")),
    }
}

fn criterion_5() -> (Outcome, IcnnModel) {
    let (model, rep) = circles_experiment(&CirclesConfig::default()).unwrap();
    let pass = rep.accuracy >= 0.95 && rep.sublevel.passed && rep.minimizer_radius < rep.inner_radius;
    (
        Outcome {
            id: 5,
            name: "two-circles classifier",
            pass,
            detail: format!(
                "accuracy {:.3}, sublevel violation {:.2e}, minimizer radius {:.3} (inner {:.1})",
                rep.accuracy, rep.sublevel.max_violation, rep.minimizer_radius, rep.inner_radius
            ),
        },
        model,
    )
}

fn criterion_6() -> Outcome {
    let (res, secs) = timed(|| battery_experiment(20, 5, 100, 0.05, 6).unwrap());
    let within = res.iter().filter(|r| r.within(0.01)).count();
    let beats = res.iter().filter(|r| r.mpc <= r.shooting).count();
    let worst_gap = res
        .iter()
        .map(|r| (r.mpc - r.lattice) / r.lattice.abs().max(1e-12))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = res.len() == 20 && within == 20 && beats == 20 && secs < 300.0;
    Outcome {
        id: 6,
        name: "battery MPC optimality",
        pass,
        detail: format!(
            "{within}/20 within 1% of lattice (worst relative gap {worst_gap:+.2e}), {beats}/20 <= shooting, {secs:.1} s"
        ),
    }
}

fn criteria_7_8() -> (Outcome, Outcome, IcrnnModel) {
    let cfg = BuildingConfig {
        run_oracle: false,
        ..BuildingConfig::default()
    };
    let (out, secs) = timed(|| building_experiment(&cfg).unwrap());
    let r = &out.report;
    let tol = r.band_tolerance;
    let icrnn_s = r.icrnn.metrics.savings_percent.unwrap();
    let rc_s = r.rc.metrics.savings_percent.unwrap();
    let band = r.icrnn.metrics.max_band_violation_normalized;
    let pass7 = r.icrnn_fit.output < r.linear_fit.output && icrnn_s > rc_s && band <= tol && secs < 600.0;
    let c7 = Outcome {
        id: 7,
        name: "building proxy ordering",
        pass: pass7,
        detail: format!(
            "power-model RMSE icrnn {:.4} vs linear {:.4} (next-state {:.4} vs {:.2e}); savings icrnn {icrnn_s:.1}% vs rc {rc_s:.1}%; \
             band violation {band:.3} (tol {tol}); {secs:.0} s",
            r.icrnn_fit.output, r.linear_fit.output, r.icrnn_fit.dynamics, r.linear_fit.dynamics
        ),
    };
    let tou_band = r.icrnn_tou.metrics.max_band_violation_normalized;
    let pass8 = r.icrnn_tou.metrics.peak_energy < r.icrnn.metrics.peak_energy && tou_band <= tol && band <= tol;
    let c8 = Outcome {
        id: 8,
        name: "time-of-use peak shaving",
        pass: pass8,
        detail: format!(
            "peak-window energy tou {:.2} vs flat {:.2}; band violation {tou_band:.3}",
            r.icrnn_tou.metrics.peak_energy, r.icrnn.metrics.peak_energy
        ),
    };
    let f = match &out.models.icrnn.f {
        Some(Net::Icrnn(m)) => m.clone(),
        _ => panic!("building output model is an icrnn"),
    };
    (c7, c8, f)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        let mut bytes = std::fs::read(&p).unwrap();
        if name == "manifest.json" {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_seconds");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(name, bytes);
    }
    out
}

fn cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_icnn"))
        .args(args)
        .output()
        .expect("running the cli")
        .status
        .code()
        .unwrap_or(-1)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().to_string();
    std::fs::write(p("train.json"), r#"{"icrnn": {"hidden": 6, "epochs": 2}, "icnn": {"widths": [8], "epochs": 20}}"#).unwrap();
    std::fs::write(p("battery.json"), r#"{"instances": 2, "horizon": 3, "k": 50}"#).unwrap();
    let (gen, rc_train, rc_ctl) = (p("gen"), p("train"), p("control"));
    let (abs_gen, abs_fit, ver, bat) = (p("abs"), p("fit"), p("verify"), p("battery"));
    let rollouts = format!("{gen}/rollouts.csv");
    let model = format!("{rc_train}/model.json");
    let abs_csv = format!("{abs_gen}/abs.csv");
    let (train_cfg, bat_cfg) = (p("train.json"), p("battery.json"));
    let commands: Vec<(Vec<&str>, &str)> = vec![
        (vec!["generate", "--plant", "rc_thermal", "--n", "3", "--seed", "9", "--out", &gen], gen.as_str()),
        (
            vec!["train", "--kind", "icrnn", "--plant", "rc_thermal", "--data", &rollouts, "--config", &train_cfg, "--out", &rc_train],
            rc_train.as_str(),
        ),
        (
            vec!["control", "--plant", "rc_thermal", "--model", &model, "--objective", "tou", "--episode", "3", "--out", &rc_ctl],
            rc_ctl.as_str(),
        ),
        (vec!["generate", "--plant", "abs", "--out", &abs_gen], abs_gen.as_str()),
        (vec!["construct", "--data", &abs_csv, "--k", "3", "--out", &abs_fit], abs_fit.as_str()),
        (vec!["verify", "--suite", "convexity", "--model", &model, "--samples", "2000", "--out", &ver], ver.as_str()),
        (vec!["experiment", "--name", "battery", "--config", &bat_cfg, "--out", &bat], bat.as_str()),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (args, dir) in &commands {
        let first = cli(args);
        let a = snapshot(Path::new(dir));
        let second = cli(args);
        let b = snapshot(Path::new(dir));
        files += a.len();
        if first != 0 || second != 0 {
            failures.push(format!("{} exited {first}/{second}", args[0]));
        } else if a != b {
            let diff: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            failures.push(format!("{} differs in {diff:?}", args[0]));
        }
    }
    Outcome {
        id: 9,
        name: "cli determinism",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} commands rerun, {files} output files byte-identical", commands.len())
        } else {
            failures.join("; ")
        },
    }
}

#[test]
fn acceptance() {
    let mut results = vec![criterion_1(), criterion_2(), criterion_4()];
    let (c5, circles_model) = criterion_5();
    results.push(c5);
    results.push(criterion_6());
    let (c7, c8, building_f) = criteria_7_8();
    results.push(criterion_3(&circles_model, &building_f));
    results.push(c7);
    results.push(c8);
    results.push(criterion_9());
    results.sort_by_key(|r| r.id);
    println!();
    for r in &results {
        println!(
            "criterion {} {:<32} {}  {}",
            r.id,
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
