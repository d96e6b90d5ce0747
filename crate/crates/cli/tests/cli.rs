use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nha(dir: &Path, args: &[&str]) -> Output {
    nha_env(dir, args, &[])
}

fn nha_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nha"));
    cmd.current_dir(dir).args(args).env_remove("HAL_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&value).expect("schema compiles")
}

fn assert_valid(schema_name: &str, instance: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:#?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dataset_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--system",
        "sls",
        "--n-traj",
        "10",
        "--horizon",
        "10",
        "--seed",
        "7",
    ];
    let a = ok(&nha(
        dir.path(),
        &[&args[..], &["--out", "a.jsonl"]].concat(),
    ));
    ok(&nha(
        dir.path(),
        &[&args[..], &["--out", "b.jsonl"]].concat(),
    ));
    let bytes_a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(bytes_a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_valid("simulate_summary.schema.json", &a);
    let lines = dataset_lines(&dir.path().join("a.jsonl"));
    assert_eq!(lines.len(), 10);
    for l in &lines {
        assert_valid("dataset_record.schema.json", l);
    }
}

#[test]
fn tcp_trajectories_visit_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&nha(
        dir.path(),
        &[
            "simulate",
            "--system",
            "tcp-reno",
            "--n-traj",
            "40",
            "--horizon",
            "200",
            "--seed",
            "1",
            "--out",
            "tcp.jsonl",
        ],
    ));
    assert!(s["modes_visited"]
        .as_array()
        .unwrap()
        .iter()
        .all(|v| v == 3));
    let allowed = ["0->1", "0->2", "1->1", "1->2", "2->0"];
    for k in s["edge_counts"].as_object().unwrap().keys() {
        assert!(allowed.contains(&k.as_str()), "unexpected edge {k}");
    }
    // the labels in the file agree with the summary
    for l in dataset_lines(&dir.path().join("tcp.jsonl")) {
        let mut modes: Vec<u64> = l["modes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m.as_u64().unwrap())
            .collect();
        modes.sort_unstable();
        modes.dedup();
        assert_eq!(modes, vec![0, 1, 2]);
    }
}

#[test]
fn toy_jump_halves_the_state_at_tau() {
    let dir = tempfile::tempdir().unwrap();
    ok(&nha(
        dir.path(),
        &[
            "simulate",
            "--system",
            "toy",
            "--n-traj",
            "3",
            "--horizon",
            "1",
            "--seed",
            "2",
            "--out",
            "toy.jsonl",
        ],
    ));
    for l in dataset_lines(&dir.path().join("toy.jsonl")) {
        let times: Vec<f64> = l["times"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let xs: Vec<f64> = l["states"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s[0].as_f64().unwrap())
            .collect();
        let jumps: Vec<usize> = (0..times.len() - 1)
            .filter(|&i| times[i] == times[i + 1])
            .collect();
        assert_eq!(jumps.len(), 1);
        let j = jumps[0];
        assert!((times[j] - 0.5).abs() < 1e-4);
        assert!((xs[j + 1] - 0.5 * xs[j]).abs() < 1e-12);
        // x(t) = x0 e^t before the jump, 0.5 x0 e^{0.5} e^{-(t - 0.5)} after
        let x0 = xs[0];
        for (i, (&t, &x)) in times.iter().zip(&xs).enumerate() {
            let want = if i <= j {
                x0 * t.exp()
            } else {
                0.5 * x0 * 0.5f64.exp() * (-(t - 0.5)).exp()
            };
            assert!(
                (x - want).abs() < 1e-4 * want.abs().max(1.0),
                "t = {t}: {x} vs {want}"
            );
        }
    }
    let idx = ok(&nha(dir.path(), &["segment", "--dataset", "toy.jsonl"]));
    assert_eq!(idx["n_segments"], 6);
    let index = read_json(&dir.path().join("toy.segments.json"));
    assert_valid("segment_index.schema.json", &index);
}

#[test]
fn segment_constant_data_and_zero_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let rec = serde_json::json!({"id": "flat", "times": times, "states": vec![[1.0, 2.0]; 50]});
    std::fs::write(dir.path().join("flat.jsonl"), format!("{rec}\n")).unwrap();
    ok(&nha(dir.path(), &["segment", "--dataset", "flat.jsonl"]));
    let index = read_json(&dir.path().join("flat.segments.json"));
    assert_eq!(
        index["trajectories"][0]["bounds"],
        serde_json::json!([[0, 50]])
    );

    ok(&nha(
        dir.path(),
        &[
            "simulate",
            "--system",
            "tcp-reno",
            "--n-traj",
            "4",
            "--horizon",
            "50",
            "--out",
            "t.jsonl",
        ],
    ));
    ok(&nha(
        dir.path(),
        &["segment", "--dataset", "t.jsonl", "--out", "clean.json"],
    ));
    ok(&nha(
        dir.path(),
        &[
            "segment",
            "--dataset",
            "t.jsonl",
            "--corrupt-p",
            "0",
            "--seed",
            "9",
            "--out",
            "p0.json",
        ],
    ));
    let clean = read_json(&dir.path().join("clean.json"));
    let p0 = read_json(&dir.path().join("p0.json"));
    assert_eq!(clean["trajectories"], p0["trajectories"]);
    ok(&nha(
        dir.path(),
        &[
            "segment",
            "--dataset",
            "t.jsonl",
            "--corrupt-p",
            "0.5",
            "--out",
            "noisy.json",
        ],
    ));
    let noisy = read_json(&dir.path().join("noisy.json"));
    assert_valid("segment_index.schema.json", &noisy);
    assert_ne!(clean["trajectories"], noisy["trajectories"]);
}

#[test]
fn schema_errors_exit_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"id": "a", "times": [0.0, 0.1], "states": [[1.0], [1.0]]}"#;
    let bad = r#"{"id": "b", "times": [0.0, 0.1], "states": [[1.0]]}"#;
    std::fs::write(dir.path().join("bad.jsonl"), format!("{good}\n{bad}\n")).unwrap();
    let out = nha(dir.path(), &["segment", "--dataset", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:2:"), "{err}");

    let out = nha(dir.path(), &["segment", "--dataset", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[simulation]\nn_trajectories = \"many\"\n",
    )
    .unwrap();
    let out = nha(dir.path(), &["--config", "c.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nha(dir.path(), &["simulate", "--system", "pendulum"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nha_env(
        dir.path(),
        &["simulate", "--n-traj", "1"],
        &[("HAL_SEED", "abc")],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_sets_simulation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "system = \"sls\"\noutput_dir = \"run\"\n[simulation]\nn_trajectories = 3\nhorizon = 2.0\n",
    )
    .unwrap();
    let s = ok(&nha(dir.path(), &["--config", "c.toml", "simulate"]));
    assert_eq!(s["system"], "sls");
    assert_eq!(
        dataset_lines(&dir.path().join("run/dataset.jsonl")).len(),
        3
    );
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[simulation.toy]\na = 1e5\nb = -1.0\nc = 0.5\ntau = 0.5\n",
    )
    .unwrap();
    let out = nha(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "simulate",
            "--system",
            "toy",
            "--horizon",
            "1",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn empty_supervision_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    ok(&nha(
        dir.path(),
        &[
            "simulate",
            "--system",
            "diff-drive",
            "--n-traj",
            "3",
            "--horizon",
            "5",
            "--out",
            "d.jsonl",
        ],
    ));
    let out = nha(
        dir.path(),
        &["train-events", "--dataset", "d.jsonl", "--iterations", "5"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    ok(&nha(
        dir.path(),
        &[
            "simulate",
            "--system",
            "tcp-reno",
            "--n-traj",
            "3",
            "--horizon",
            "40",
            "--out",
            "t.jsonl",
        ],
    ));
    ok(&nha(
        dir.path(),
        &["segment", "--dataset", "t.jsonl", "--threshold", "1e9"],
    ));
    std::fs::write(
        dir.path().join("c.toml"),
        "[recovery]\nlr_decoder = 1e300\nlr_encoder = 1e300\n",
    )
    .unwrap();
    let out = nha(
        dir.path(),
        &[
            "--config",
            "c.toml",
            "recover",
            "--dataset",
            "t.jsonl",
            "--iterations",
            "50",
            "--folds",
            "1",
            "--test",
            "0",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn hal_seed_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "simulate",
        "--system",
        "sls",
        "--n-traj",
        "2",
        "--horizon",
        "3",
    ];
    ok(&nha_env(
        dir.path(),
        &[&base[..], &["--seed", "1", "--out", "env.jsonl"]].concat(),
        &[("HAL_SEED", "5")],
    ));
    ok(&nha(
        dir.path(),
        &[&base[..], &["--seed", "5", "--out", "five.jsonl"]].concat(),
    ));
    ok(&nha(
        dir.path(),
        &[&base[..], &["--seed", "1", "--out", "one.jsonl"]].concat(),
    ));
    let env = std::fs::read(dir.path().join("env.jsonl")).unwrap();
    assert_eq!(env, std::fs::read(dir.path().join("five.jsonl")).unwrap());
    assert_ne!(env, std::fs::read(dir.path().join("one.jsonl")).unwrap());
}

#[test]
fn pipeline_outputs_validate_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&nha(
        d,
        &[
            "simulate",
            "--system",
            "tcp-reno",
            "--n-traj",
            "8",
            "--horizon",
            "60",
            "--seed",
            "3",
            "--out",
            "t.jsonl",
        ],
    ));
    ok(&nha(
        d,
        &["--preset", "tcp-paper", "segment", "--dataset", "t.jsonl"],
    ));
    let recover = [
        "--preset",
        "tcp-paper",
        "recover",
        "--dataset",
        "t.jsonl",
        "--m",
        "3",
        "--iterations",
        "150",
        "--folds",
        "2",
        "--test",
        "2",
    ];
    ok(&nha(d, &[&recover[..], &["--out-dir", "r1"]].concat()));
    ok(&nha(d, &[&recover[..], &["--out-dir", "r2"]].concat()));
    for f in [
        "recovery_report.json",
        "recovery.ckpt.json",
        "labeled.jsonl",
    ] {
        assert_eq!(
            std::fs::read(d.join("r1").join(f)).unwrap(),
            std::fs::read(d.join("r2").join(f)).unwrap(),
            "{f} differs between reruns"
        );
    }
    let report = read_json(&d.join("r1/recovery_report.json"));
    assert_valid("recovery_report.schema.json", &report);
    assert_valid(
        "recovery_checkpoint.schema.json",
        &read_json(&d.join("r1/recovery.ckpt.json")),
    );
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
    assert_eq!(report["test_ids"].as_array().unwrap().len(), 2);
    assert!(report["test_mse"].is_number());
    for l in dataset_lines(&d.join("r1/labeled.jsonl")) {
        assert_valid("dataset_record.schema.json", &l);
    }

    ok(&nha(
        d,
        &[
            "train-events",
            "--dataset",
            "r1/labeled.jsonl",
            "--iterations",
            "200",
            "--out-dir",
            "r1",
        ],
    ));
    assert_valid(
        "event_metrics.schema.json",
        &read_json(&d.join("r1/event_metrics.json")),
    );
    assert_valid(
        "event_checkpoint.schema.json",
        &read_json(&d.join("r1/events.ckpt.json")),
    );

    let eval = |out: &str| {
        ok(&nha(
            d,
            &[
                "evaluate",
                "--recovery",
                "r1/recovery.ckpt.json",
                "--events",
                "r1/events.ckpt.json",
                "--dataset",
                "r1/labeled.jsonl",
                "--seed",
                "4",
                "--out",
                out,
            ],
        ))
    };
    eval("e1.json");
    eval("e2.json");
    assert_eq!(
        std::fs::read(d.join("e1.json")).unwrap(),
        std::fs::read(d.join("e2.json")).unwrap()
    );
    let e = read_json(&d.join("e1.json"));
    assert_valid("evaluation.schema.json", &e);
    assert!(e["simulated"]["n_events"].as_u64().unwrap() > 0);
}

#[test]
fn clustering_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&nha(
        d,
        &[
            "simulate",
            "--system",
            "tcp-reno",
            "--n-traj",
            "6",
            "--horizon",
            "60",
            "--seed",
            "4",
            "--out",
            "t.jsonl",
        ],
    ));
    ok(&nha(
        d,
        &["segment", "--dataset", "t.jsonl", "--threshold", "1e9"],
    ));
    ok(&nha(
        d,
        &[
            "recover",
            "--dataset",
            "t.jsonl",
            "--baseline",
            "dbscan",
            "--eps",
            "1.0",
            "--out-dir",
            "db",
        ],
    ));
    let r = read_json(&d.join("db/recovery_report.json"));
    assert_valid("recovery_report.schema.json", &r);
    assert_eq!(r["method"], "dbscan");
    assert_eq!(r["params"]["eps"], 1.0);
    assert!(r["noise_segments"].is_u64());
    assert_eq!(r["oracle_tuned"], false);

    ok(&nha(
        d,
        &[
            "recover",
            "--dataset",
            "t.jsonl",
            "--baseline",
            "kmeans",
            "--oracle-tune",
            "--out-dir",
            "km",
        ],
    ));
    let r = read_json(&d.join("km/recovery_report.json"));
    assert_valid("recovery_report.schema.json", &r);
    assert_eq!(r["oracle_tuned"], true);
    let best = r["tuning"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["v_measure"].as_f64().unwrap())
        .fold(f64::MIN, f64::max);
    assert!((r["v_measure"].as_f64().unwrap() - best).abs() < 1e-12);

    ok(&nha(
        d,
        &[
            "recover",
            "--dataset",
            "t.jsonl",
            "--baseline",
            "hier",
            "--k",
            "3",
            "--out-dir",
            "hi",
        ],
    ));
    assert_eq!(
        read_json(&d.join("hi/recovery_report.json"))["n_clusters"],
        3
    );
}

#[test]
fn single_mode_data_is_flagged_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&nha(
        d,
        &[
            "simulate",
            "--system",
            "diff-drive",
            "--n-traj",
            "4",
            "--horizon",
            "5",
            "--out",
            "dd.jsonl",
        ],
    ));
    ok(&nha(
        d,
        &["segment", "--dataset", "dd.jsonl", "--threshold", "1e9"],
    ));
    let s = ok(&nha(
        d,
        &[
            "recover",
            "--dataset",
            "dd.jsonl",
            "--iterations",
            "20",
            "--folds",
            "1",
            "--test",
            "0",
            "--out-dir",
            "r",
        ],
    ));
    assert_eq!(s["degenerate"], true);
    assert_valid(
        "recovery_report.schema.json",
        &read_json(&d.join("r/recovery_report.json")),
    );
}

#[test]
fn pathology_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&nha(
        d,
        &[
            "pathology",
            "--tau-estimates",
            "0.3,0.5,0.7",
            "--n-samples",
            "20",
            "--out-dir",
            "p",
        ],
    ));
    let j = read_json(&d.join("p/pathology.json"));
    assert_valid("pathology.schema.json", &j);
    let csv = std::fs::read_to_string(d.join("p/pathology.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "tau_estimate,t,true_mode,estimated_mode,db_true,db_estimated,flag"
    );
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (est, t): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let want = if est > 0.5 && t > 0.5 && t < est {
            "wrongly-zero"
        } else if est < 0.5 && t > est && t < 0.5 {
            "wrongly-nonzero"
        } else {
            ""
        };
        assert_eq!(f[6], want, "{line}");
        if want == "wrongly-zero" {
            assert_eq!(f[5].parse::<f64>().unwrap(), 0.0);
        }
    }
    let counts: Vec<(u64, u64)> = j["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["wrongly_zero"].as_u64().unwrap(),
                r["wrongly_nonzero"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(counts, vec![(0, 4), (0, 0), (4, 0)]);
}
