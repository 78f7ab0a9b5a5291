use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use speede::deformation::load_trajectories;
use speede::gaussian_model::load_ply;
use speede::groupflow::{load_groupflow, nearest_control_assignment};

fn speede(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speede"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = speede(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn small_bundle(dir: &Path) {
    ok(
        dir,
        &[
            "synth",
            "--out",
            "b",
            "--n-gaussians",
            "800",
            "--n-views",
            "8",
            "--n-frames",
            "8",
            "--n-test-views",
            "2",
            "--width",
            "32",
            "--height",
            "32",
        ],
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(speede(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        speede(d, &["eval", "--bundle", "missing", "--out", "x"])
            .status
            .code(),
        Some(1)
    );

    std::fs::write(d.join("bad.toml"), "[prune\nfractions = ").unwrap();
    assert_eq!(
        speede(d, &["synth", "--out", "b", "--config", "bad.toml"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(d.join("unknown.toml"), "[group]\nclusters = 3\n").unwrap();
    assert_eq!(
        speede(d, &["synth", "--out", "b", "--config", "unknown.toml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        speede(d, &["synth", "--out", "b", "--n-clusters", "0"])
            .status
            .code(),
        Some(2)
    );

    small_bundle(d);
    ok(
        d,
        &["group", "--bundle", "b", "--out", "g", "--groups", "3"],
    );
    assert_eq!(
        speede(d, &["prune", "--bundle", "b", "--model", "g", "--out", "p"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        speede(d, &["eval", "--bundle", "b", "--out", "e", "--runs", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn reports_carry_the_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_bundle(d);
    ok(
        d,
        &[
            "prune",
            "--bundle",
            "b",
            "--out",
            "p",
            "--fractions",
            "0.5",
            "--seed",
            "4",
        ],
    );
    let r = json(&d.join("p/report.json"));
    for key in [
        "command",
        "version",
        "config",
        "seed",
        "threads",
        "timing",
        "deviations",
        "result",
    ] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["command"], "prune");
    assert_eq!(r["seed"], 4);
    assert_eq!(r["result"]["n_final"], 400);
    assert!(d.join("p/scores_0.scor").exists());
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_bundle(d);
    std::fs::write(
        d.join("c.toml"),
        "seed = 9\n[group]\ngroups = 4\nlambda_r = 0.25\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "group", "--bundle", "b", "--out", "g", "--config", "c.toml", "--groups", "2",
        ],
    );
    let r = json(&d.join("g/report.json"));
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config"]["group"]["groups"], 2);
    assert_eq!(r["config"]["group"]["lambda_r"], 0.25);
    assert_eq!(r["result"]["grouping"]["groups"], 2);
}

#[test]
fn lbs_with_one_neighbour_matches_base_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_bundle(d);
    ok(
        d,
        &["group", "--bundle", "b", "--out", "base", "--groups", "5"],
    );
    ok(
        d,
        &[
            "group",
            "--bundle",
            "b",
            "--out",
            "lbs",
            "--groups",
            "5",
            "--variant",
            "lbs",
            "--k",
            "1",
        ],
    );
    for m in ["base", "lbs"] {
        ok(
            d,
            &[
                "deform",
                "--bundle",
                "b",
                "--model",
                m,
                "--out",
                &format!("d_{m}"),
            ],
        );
    }
    let flow = load_groupflow(d.join("base/flow.gflw")).unwrap();
    let cloud = load_ply(d.join("base/cloud.ply")).unwrap();
    let means: Vec<[f64; 3]> = cloud.means.iter().map(|m| m.map(f64::from)).collect();
    let nearest = nearest_control_assignment(&means, &flow);
    let base = load_trajectories(d.join("d_base/deformed.traj")).unwrap();
    let lbs = load_trajectories(d.join("d_lbs/deformed.traj")).unwrap();
    // Only Gaussians grouped with their nearest control blend that control alone.
    let agreeing: Vec<usize> = (0..means.len())
        .filter(|&i| flow.assignment[i] == nearest[i])
        .collect();
    assert!(agreeing.len() * 10 >= means.len() * 9);
    for i in agreeing {
        assert_eq!(base.row(i), lbs.row(i), "gaussian {i}");
    }
}

#[test]
fn bench_csv_matches_json() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_bundle(d);
    ok(
        d,
        &["prune", "--bundle", "b", "--out", "p", "--fractions", "0.5"],
    );
    ok(
        d,
        &[
            "bench", "--bundle", "b", "--models", "p", "--out", "bench", "--warmup", "0",
            "--iters", "2",
        ],
    );
    let report = json(&d.join("bench/bench.json"));
    let rows = report["result"]["rows"].as_array().unwrap();
    let mut rd = csv::Reader::from_path(d.join("bench/bench.csv")).unwrap();
    let records: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), rows.len());
    assert_eq!(rows[0]["model"], "baseline");
    for (row, rec) in rows.iter().zip(&records) {
        assert_eq!(rec[0], *row["model"].as_str().unwrap());
        assert_eq!(
            rec[1].parse::<u64>().unwrap(),
            row["n_gaussians"].as_u64().unwrap()
        );
        assert_eq!(
            rec[2].parse::<u64>().unwrap(),
            row["model_bytes"].as_u64().unwrap()
        );
        assert_eq!(
            rec[3].parse::<f64>().unwrap(),
            row["psnr"].as_f64().unwrap()
        );
        assert_eq!(
            rec[5].parse::<f64>().unwrap(),
            row["timing"]["fps_mean"].as_f64().unwrap()
        );
    }
    assert_eq!(rows[0]["timing"]["speedup"], 1.0);
    assert_eq!(rows[1]["n_gaussians"], 400);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["one", "two"] {
        ok(
            d,
            &[
                "synth",
                "--out",
                out,
                "--n-gaussians",
                "500",
                "--n-views",
                "6",
                "--n-test-views",
                "2",
                "--width",
                "24",
                "--height",
                "24",
                "--image-noise",
                "0.05",
                "--seed",
                "3",
            ],
        );
    }
    for f in [
        "cloud.ply",
        "cameras.json",
        "test_cameras.json",
        "trajectories.traj",
        "labels.json",
        "motion.json",
        "scene.toml",
        "frames/train_0003.png",
        "frames/test_0001.png",
    ] {
        assert_eq!(
            std::fs::read(d.join("one").join(f)).unwrap(),
            std::fs::read(d.join("two").join(f)).unwrap(),
            "{f}"
        );
    }
}
