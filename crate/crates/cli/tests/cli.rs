use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bpcr::io::read_csv;
use bpcr_core::baselines::{BaselineSpec, FitSettings, ModelKind};
use bpcr_core::model::McmcConfig;
use bpcr_core::rng;
use bpcr_core::synthetic::{generate_dataset, SyntheticConfig};
use bpcr_core::validation::{evaluate, stats, MetricsReport, StudyData};

fn bpcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpcr"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = bpcr(dir, args);
    assert!(
        out.status.success(),
        "bpcr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SMALL_FIT: &str = r#"{
  "synthetic": {"grid_side": 10},
  "dataset": "sim/dataset.csv",
  "n_train": 30,
  "fit": {"mcmc": {"n_samples": 500, "burn_in": 150}}
}"#;

#[test]
fn simulate_default_shape_and_reproducibility() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--out", "a", "--seed", "2"]);
    ok(d.path(), &["simulate", "--out", "b", "--seed", "2"]);
    let csv = read_csv(&d.path().join("a/dataset.csv")).unwrap();
    assert_eq!(csv.rows.len(), 400);
    assert_eq!(
        csv.header.iter().filter(|h| h.starts_with("z_")).count(),
        14
    );
    for f in ["dataset.csv", "truth.json"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap()
        );
    }
    let truth: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("a/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["beta_true"].as_array().unwrap().len(), 15);
}

#[test]
fn simulate_small_grid() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", r#"{"synthetic": {"grid_side": 4}}"#);
    ok(d.path(), &["simulate", "--config", "c.json", "--out", "s"]);
    assert_eq!(
        read_csv(&d.path().join("s/dataset.csv"))
            .unwrap()
            .rows
            .len(),
        16
    );
    assert!(d.path().join("s/resolved_config.json").exists());
}

#[test]
fn fit_writes_chain_and_summary() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", SMALL_FIT);
    ok(
        d.path(),
        &["simulate", "--config", "c.json", "--out", "sim"],
    );
    ok(
        d.path(),
        &[
            "fit",
            "--config",
            "c.json",
            "--out",
            "fit",
            "--model",
            "bpcr_spatial",
        ],
    );
    let chain = read_csv(&d.path().join("fit/chain.csv")).unwrap();
    assert_eq!(chain.rows.len(), 500);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("fit/summary.json")).unwrap()).unwrap();
    let rate = summary["acceptance_rate"].as_f64().unwrap();
    assert!(rate > 0.0 && rate < 1.0);

    // Quantiles recomputed from the chain file with an independent type-7 rule.
    let path = d.path().join("fit/chain.csv");
    for param in summary["parameters"].as_array().unwrap() {
        let name = param["name"].as_str().unwrap();
        let col = chain.column(name).unwrap();
        let mut v: Vec<f64> = chain.f64_column(&path, col).unwrap()[150..].to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        assert!(close(param["mean"].as_f64().unwrap(), mean), "{name} mean");
        assert!(
            close(param["median"].as_f64().unwrap(), q(0.5)),
            "{name} median"
        );
        assert!(
            close(param["q025"].as_f64().unwrap(), q(0.025)),
            "{name} q025"
        );
        assert!(
            close(param["q975"].as_f64().unwrap(), q(0.975)),
            "{name} q975"
        );
    }
}

#[test]
fn missing_response_is_a_schema_error() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "data.csv",
        "id,s_x,s_y,z_1,z_2\n0,0,0,1,2\n1,1,0,2,1\n",
    );
    write(d.path(), "c.json", r#"{"dataset": "data.csv"}"#);
    let out = bpcr(d.path(), &["fit", "--config", "c.json", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`y`"));
}

#[test]
fn bad_number_names_row_and_column() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "data.csv",
        "id,s_x,s_y,y,z_1\n0,0,0,1,2\n1,1,0,2,oops\n",
    );
    write(d.path(), "c.json", r#"{"dataset": "data.csv"}"#);
    let out = bpcr(d.path(), &["fit", "--config", "c.json", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("z_1"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", r#"{"n_trian": 3}"#);
    let out = bpcr(d.path(), &["simulate", "--config", "c.json", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rank_deficient_fit_is_a_numerical_failure() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", SMALL_FIT);
    ok(
        d.path(),
        &["simulate", "--config", "c.json", "--out", "sim"],
    );
    let out = bpcr(
        d.path(),
        &[
            "fit",
            "--config",
            "c.json",
            "--out",
            "f",
            "--model",
            "pcr",
            "--n-train",
            "10",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn empty_new_locations_give_header_only() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", SMALL_FIT);
    ok(
        d.path(),
        &["simulate", "--config", "c.json", "--out", "sim"],
    );
    ok(
        d.path(),
        &[
            "fit", "--config", "c.json", "--out", "fit", "--model", "bpcr",
        ],
    );
    let header = fs::read_to_string(d.path().join("sim/dataset.csv")).unwrap();
    let header = header
        .lines()
        .next()
        .unwrap()
        .replace(",y,", ",")
        .replace(",eta_plus_eps,", ",");
    write(d.path(), "empty.csv", &format!("{header}\n"));
    write(
        d.path(),
        "p.json",
        &SMALL_FIT.replace(
            "\"n_train\": 30,",
            "\"n_train\": 30, \"new_locations\": \"empty.csv\",",
        ),
    );
    ok(d.path(), &["predict", "--config", "p.json", "--out", "fit"]);
    let text = fs::read_to_string(d.path().join("fit/predictions.csv")).unwrap();
    assert_eq!(
        text,
        "location_id,s_x,s_y,y_pred_mean,y_pred_median,ci_low,ci_high,level\n"
    );
}

#[test]
fn self_prediction_without_noise() {
    let d = tempfile::tempdir().unwrap();
    let cfg = SMALL_FIT.replace(
        "\"n_train\": 30,",
        "\"n_train\": 30, \"new_locations\": \"sim/dataset.csv\",",
    );
    write(d.path(), "c.json", &cfg);
    ok(
        d.path(),
        &["simulate", "--config", "c.json", "--out", "sim"],
    );
    ok(
        d.path(),
        &[
            "fit",
            "--config",
            "c.json",
            "--out",
            "fit",
            "--model",
            "pcr_spatial",
        ],
    );
    ok(
        d.path(),
        &[
            "predict",
            "--config",
            "c.json",
            "--out",
            "fit",
            "--no-noise",
        ],
    );
    let p = read_csv(&d.path().join("fit/predictions.csv")).unwrap();
    assert_eq!(p.rows.len(), 100);
    let path = d.path().join("fit/predictions.csv");
    let lo = p.f64_column(&path, p.column("ci_low").unwrap()).unwrap();
    let hi = p.f64_column(&path, p.column("ci_high").unwrap()).unwrap();
    assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
}

#[test]
fn report_requires_truth() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "p.csv",
        "location_id,s_x,s_y,y_pred_mean,y_pred_median,ci_low,ci_high,level\n0,0,0,1,1,0,2,0.95\n",
    );
    write(d.path(), "c.json", r#"{"predictions": "p.csv"}"#);
    let out = bpcr(d.path(), &["report", "--config", "c.json", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("y_true"));
}

#[test]
fn held_out_metrics_match_the_library() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.json", r#"{"synthetic": {"grid_side": 10}}"#);
    ok(
        d.path(),
        &[
            "simulate", "--config", "c.json", "--out", "sim", "--seed", "6",
        ],
    );
    let synthetic = SyntheticConfig {
        grid_side: 10,
        seed: 6,
        ..Default::default()
    };
    let data = StudyData::from_synthetic(&generate_dataset(&synthetic).unwrap()).unwrap();
    let train: Vec<usize> = (0..100).filter(|i| i % 2 == 0).collect();
    let eval: Vec<usize> = (0..100).filter(|i| i % 2 == 1).collect();

    let mut idx = String::from("index\n");
    for i in &train {
        idx.push_str(&format!("{i}\n"));
    }
    write(d.path(), "train.csv", &idx);
    let full = fs::read_to_string(d.path().join("sim/dataset.csv")).unwrap();
    let mut lines = full.lines();
    let mut held = format!("{}\n", lines.next().unwrap());
    for (i, l) in lines.enumerate() {
        if i % 2 == 1 {
            held.push_str(l);
            held.push('\n');
        }
    }
    write(d.path(), "held.csv", &held);
    write(
        d.path(),
        "run.json",
        r#"{
  "dataset": "sim/dataset.csv",
  "train_indices": "train.csv",
  "new_locations": "held.csv",
  "fit": {"mcmc": {"n_samples": 400, "burn_in": 100}}
}"#,
    );
    let args = [
        "--config",
        "run.json",
        "--out",
        "fit",
        "--seed",
        "6",
        "--model",
        "bpcr_spatial",
    ];
    ok(d.path(), &[&["fit"][..], &args].concat());
    ok(d.path(), &[&["predict"][..], &args].concat());
    ok(d.path(), &[&["report"][..], &args].concat());
    let cli: MetricsReport =
        serde_json::from_slice(&fs::read(d.path().join("fit/metrics.json")).unwrap()).unwrap();

    let settings = FitSettings {
        mcmc: McmcConfig {
            n_samples: 400,
            burn_in: 100,
            seed: 6,
            ..Default::default()
        },
        ..Default::default()
    };
    let preds = data
        .fit_predict(
            &BaselineSpec::of(ModelKind::BpcrSpatial),
            &train,
            &eval,
            &settings,
            true,
            0.95,
            rng::derive_seed(6, 3),
        )
        .unwrap();
    let truth: Vec<f64> = eval.iter().map(|&i| data.y[i]).collect();
    let lib = evaluate(&preds, &truth).unwrap();
    assert_eq!(cli.n_eval, lib.n_eval);
    assert_eq!(cli.coverage_pct, lib.coverage_pct);
    let pairs = [
        (cli.bias_pct, lib.bias_pct),
        (cli.rmse_pct, lib.rmse_pct),
        (cli.q2, lib.q2),
        (cli.ci_length_mean.unwrap(), lib.ci_length_mean.unwrap()),
    ];
    for (a, b) in pairs {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }
    assert!(stats::mean(&truth) > 0.0);
}

#[test]
fn benchmark_outputs_and_partial_failure() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "b.json",
        r#"{
  "synthetic": {"grid_side": 8},
  "plan": {"model_specs": [{"kind": "pcr"}, {"kind": "bpcr"}], "training_sizes": [10, 30], "replicates": 2,
           "fit": {"mcmc": {"n_samples": 300, "burn_in": 100}}}
}"#,
    );
    let out = bpcr(
        d.path(),
        &[
            "benchmark",
            "--config",
            "b.json",
            "--out",
            "b",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runs = read_csv(&d.path().join("b/runs.csv")).unwrap();
    assert_eq!(runs.rows.len(), 8);
    assert_eq!(
        runs.header,
        [
            "model",
            "n",
            "replicate",
            "bias_pct",
            "rmse_pct",
            "q2",
            "ci_length_mean",
            "coverage_pct",
            "wall_time_s",
            "error"
        ]
    );
    let failures: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("b/failures.json")).unwrap()).unwrap();
    let failures = failures.as_array().unwrap();
    assert_eq!(failures.len(), 2);
    assert!(failures.iter().all(|f| f["model"] == "pcr" && f["n"] == 10));

    // Aggregated means are the means of the per-replicate rows.
    let agg: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("b/aggregate.json")).unwrap()).unwrap();
    let path = d.path().join("b/runs.csv");
    let rmse = runs.column("rmse_pct").unwrap();
    for row in agg.as_array().unwrap() {
        let (model, n) = (
            row["model"].as_str().unwrap(),
            row["n"].as_u64().unwrap().to_string(),
        );
        let vals: Vec<f64> = (0..runs.rows.len())
            .filter(|&r| {
                &runs.rows[r][0] == model && runs.rows[r][1] == n && !runs.rows[r][rmse].is_empty()
            })
            .map(|r| runs.f64_at(&path, r, rmse).unwrap())
            .collect();
        match row["rmse_pct"]["mean"].as_f64() {
            Some(m) => assert!((m - stats::mean(&vals)).abs() <= 1e-12 * m.abs()),
            None => assert!(vals.is_empty()),
        }
    }
    let plot = read_csv(&d.path().join("b/plot_data.csv")).unwrap();
    assert_eq!(plot.header, ["model", "n", "metric", "mean", "sd"]);
}
