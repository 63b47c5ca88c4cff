use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gem_core::data::{
    write_candidates, write_container, write_layer_traces, CandidateBatch, CandidateSet,
    EmbeddingSet, Label, LayerTrace, LayerTraceSet,
};
use gem_synth::{gaussian_cluster, SplitMix64};
use serde_json::Value;

fn gem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gem"))
        .args(args)
        .current_dir(dir)
        .env_remove("GEM_SEED")
        .output()
        .expect("spawn gem")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_rows(path: &Path, rows: &[Vec<f64>], label: Label) {
    write_container(&EmbeddingSet::from_rows(rows, label).unwrap(), path).unwrap();
}

/// ID cluster at the origin, OOD cluster far out along the first axis.
fn separable(dir: &Path, dim: usize) {
    let mut far = vec![0.0; dim];
    far[0] = 40.0;
    write_rows(&dir.join("train.emb"), &gaussian_cluster(&vec![0.0; dim], 1.0, 800, 1), Label::Id);
    write_rows(&dir.join("id.emb"), &gaussian_cluster(&vec![0.0; dim], 1.0, 200, 2), Label::Id);
    write_rows(&dir.join("ood.emb"), &gaussian_cluster(&far, 1.0, 200, 3), Label::Ood);
}

fn traces(count: usize, shift_layer: Option<usize>, seed: u64, label: Label) -> LayerTraceSet {
    let mut rng = SplitMix64::new(seed);
    let ts: Vec<LayerTrace> = (0..count)
        .map(|_| {
            let reps: Vec<Vec<f64>> = (0..4)
                .map(|l| {
                    let shift = if Some(l) == shift_layer { 10.0 } else { 0.0 };
                    (0..3).map(|_| rng.normal(shift + l as f64, 1.0)).collect()
                })
                .collect();
            LayerTrace::from_layers(&reps).unwrap()
        })
        .collect();
    LayerTraceSet::from_traces(&ts, label).unwrap()
}

fn candidates(count: usize, confident: bool, seed: u64, label: Label) -> CandidateBatch {
    let mut rng = SplitMix64::new(seed);
    let sets = (0..count)
        .map(|_| {
            let top = if confident { 0.8 + 0.15 * rng.next_f64() } else { 0.1 + 0.2 * rng.next_f64() };
            CandidateSet::new(vec![top, 0.05 * rng.next_f64() + 0.01, 0.05 * rng.next_f64() + 0.01]).unwrap()
        })
        .collect();
    let ids = (0..count).map(|i| format!("c{i}")).collect();
    CandidateBatch::new(sets, vec![label; count], ids).unwrap()
}

#[test]
fn fit_writes_detector_and_prints_bic_table() {
    let dir = tempfile::tempdir().unwrap();
    separable(dir.path(), 4);
    let o = gem(dir.path(), &["fit", "--train", "train.emb", "--out", "d.json", "--max-components", "15", "--sigma", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("m* = "), "{text}");
    assert!(text.contains("BIC sweep"));
    assert!(text.contains("Components"));
    let file: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(file["n_sigma"], 3.0);
    assert_eq!(file["bic_sweep"].as_array().unwrap().len(), 15);
}

#[test]
fn fit_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gem(dir.path(), &["fit", "--train", "missing.emb", "--out", "d.json"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.emb"));

    separable(dir.path(), 2);
    let o = gem(dir.path(), &["fit", "--train", "train.emb", "--out", "d.json", "--sigma", "-1"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("d.json").exists());

    let o = gem(dir.path(), &["fit", "--train", "train.emb"]);
    assert_eq!(code(&o), 2);
    let o = gem(dir.path(), &["fit", "--method", "knn", "--train", "train.emb", "--out", "d.json"]);
    assert_eq!(code(&o), 2);
    let o = gem(dir.path(), &["frobnicate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn detect_streams_one_line_per_sample_in_order() {
    let dir = tempfile::tempdir().unwrap();
    separable(dir.path(), 6);
    assert_eq!(code(&gem(dir.path(), &["fit", "--train", "train.emb", "--out", "d.json"])), 0);
    let o = gem(dir.path(), &["detect", "--detector", "d.json", "--input", "train.emb"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 800);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["id"], i.to_string());
        let ood = l["is_ood"].as_bool().unwrap();
        assert_eq!(l["route"], if ood { "FALLBACK" } else { "LOCAL" });
        assert!(l["distance"].is_f64() && l["z"].is_f64());
    }
    let kept = lines.iter().filter(|l| l["is_ood"] == false).count();
    assert!(kept as f64 / 800.0 >= 0.95, "{kept}");

    let o = gem(dir.path(), &["detect", "--detector", "d.json", "--input", "ood.emb", "--format", "csv", "--out", "v.csv"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("v.csv")).unwrap();
    assert!(csv.starts_with("id,distance,z,is_ood,route\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with("true,FALLBACK")));
}

#[test]
fn detect_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    separable(dir.path(), 3);
    assert_eq!(code(&gem(dir.path(), &["fit", "--train", "train.emb", "--out", "d.json"])), 0);
    let det: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    // A sample at the centroid sits at distance 0.
    let centroid = gem_core::detector::GemDetector::from_json(&det.to_string()).unwrap().centroid().to_vec();
    write_rows(&dir.path().join("c.emb"), &[centroid], Label::Unknown);
    let o = gem(dir.path(), &["detect", "--detector", "d.json", "--input", "c.emb"]);
    let line: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["distance"], 0.0);
    let comps = det["components"].as_array().unwrap();
    let lowest = &comps[0];
    let covered = lowest["mean"].as_f64().unwrap() - 3.0 * lowest["std"].as_f64().unwrap() <= 0.0;
    assert_eq!(line["is_ood"], !covered);

    fs::write(dir.path().join("empty.emb"), b"").unwrap();
    assert_eq!(code(&gem(dir.path(), &["detect", "--detector", "d.json", "--input", "empty.emb"])), 2);
    write_rows(&dir.path().join("wide.emb"), &[vec![0.0; 5]], Label::Unknown);
    assert_eq!(code(&gem(dir.path(), &["detect", "--detector", "d.json", "--input", "wide.emb"])), 2);
}

#[test]
fn eval_gem_on_separable_clusters() {
    let dir = tempfile::tempdir().unwrap();
    separable(dir.path(), 16);
    let o = gem(dir.path(), &["eval", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "ood.emb", "--format", "json", "--out", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["auroc"], 1.0);
    assert_eq!(report["n_sigma"], 3.0);
    assert!(report["threshold"].is_null());
    assert_eq!(fs::read_to_string(dir.path().join("r.json")).unwrap(), stdout(&o));

    let o = gem(dir.path(), &["eval", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "id.emb", "--format", "json"]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((report["auroc"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let table = stdout(&gem(dir.path(), &["eval", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "ood.emb"]));
    assert!(table.contains("AUROC(%)") && table.contains("boundary: 3 sigma"), "{table}");

    let o = gem(dir.path(), &["eval", "--train", "train.emb", "--id-test", "id.emb"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_layer_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_layer_traces(&traces(200, None, 1, Label::Id), d.join("train.emb")).unwrap();
    write_layer_traces(&traces(60, None, 2, Label::Id), d.join("val_id.emb")).unwrap();
    write_layer_traces(&traces(60, Some(1), 3, Label::Ood), d.join("val_ood.emb")).unwrap();
    write_layer_traces(&traces(80, None, 4, Label::Id), d.join("id.emb")).unwrap();
    write_layer_traces(&traces(80, Some(1), 5, Label::Ood), d.join("ood.emb")).unwrap();
    let base = ["eval", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "ood.emb", "--format", "json"];

    let run = |extra: &[&str]| -> Value {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = gem(d, &args);
        assert_eq!(code(&o), 0, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_str(&stdout(&o)).unwrap()
    };
    let best = run(&["--method", "best-layer", "--val-id", "val_id.emb", "--val-ood", "val_ood.emb"]);
    assert_eq!(best["best_layer"], 2, "1-based layer number");
    assert_eq!(best["accuracy"], 1.0);
    assert!(best["threshold"].is_f64());

    let tv = run(&["--method", "tv", "--tv-order", "1"]);
    assert_eq!(tv["tv_order"], 1);
    assert!(tv["auroc"].as_f64().unwrap() > 0.9);
    let last = run(&["--method", "last-layer"]);
    assert!(last["auroc"].as_f64().unwrap() < 0.8, "layer 4 does not separate");

    let args: Vec<&str> = base.iter().copied().chain(["--method", "best-layer"]).collect();
    let o = gem(d, &args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--val-id"));
    let args: Vec<&str> = base.iter().copied().chain(["--method", "tv", "--tv-order", "4"]).collect();
    assert_eq!(code(&gem(d, &args)), 2);
}

#[test]
fn eval_candidate_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_candidates(&candidates(100, true, 1, Label::Id), d.join("id.emb")).unwrap();
    write_candidates(&candidates(100, false, 2, Label::Ood), d.join("ood.emb")).unwrap();
    for method in ["topk", "entropy"] {
        let o = gem(d, &["eval", "--method", method, "--id-test", "id.emb", "--ood-test", "ood.emb", "--format", "csv"]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], method);
        assert_eq!(row[1], "1", "{method} AUROC");
    }
    // Candidate inputs cannot feed a layer method.
    assert_eq!(code(&gem(d, &["eval", "--method", "last-layer", "--train", "id.emb", "--id-test", "id.emb", "--ood-test", "ood.emb"])), 2);
}

#[test]
fn roc_rows_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_candidates(&candidates(50, true, 1, Label::Id), d.join("id.emb")).unwrap();
    write_candidates(&candidates(50, false, 2, Label::Ood), d.join("ood.emb")).unwrap();
    fs::create_dir(d.join("bundle")).unwrap();
    fs::write(
        d.join("bundle/run.toml"),
        "method = \"topk\"\nid_test = \"../id.emb\"\nood_test = \"../ood.emb\"\nformat = \"csv\"\n",
    )
    .unwrap();
    let o = gem(d, &["roc", "--config", "bundle/run.toml"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "threshold,fpr,tpr");
    assert_eq!(rows[1], "inf,0,0");
    assert_eq!(*rows.last().unwrap(), "-inf,1,1");
    assert!(rows.iter().any(|r| r.ends_with(",0,1")), "separated classes reach (0, 1)");
    let thresholds: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    let mut unique = thresholds.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), thresholds.len(), "no duplicate thresholds");
    assert_eq!(rows.len() - 1, 100 + 2, "distinct scores + 2 endpoints");

    // Flags win over the file.
    let o = gem(d, &["roc", "--config", "bundle/run.toml", "--method", "entropy", "--out", "e.csv"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read_to_string(d.join("e.csv")).unwrap(), csv);

    fs::write(d.join("bad.toml"), "sigmaa = 3\n").unwrap();
    assert_eq!(code(&gem(d, &["roc", "--config", "bad.toml"])), 2);
    assert_eq!(code(&gem(d, &["roc", "--config", "nowhere.toml"])), 1);
}

/// Points at uniformly spread radii around the origin: bounded distances,
/// so a 2-sigma interval already covers the whole ID shell.
fn shell(count: usize, dim: usize, radius: (f64, f64), seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let r = radius.0 + (radius.1 - radius.0) * rng.next_f64();
            dir.iter().map(|v| v / norm * r).collect()
        })
        .collect()
}

fn ablate(dir: &Path, out: &str) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let o = gem(dir, &["ablate", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "ood.emb", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let read = |f: &str| -> Vec<Vec<String>> {
        fs::read_to_string(dir.join(out).join(f))
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    };
    (read("ablate_max_components.csv"), read("ablate_sigma.csv"))
}

#[test]
fn ablate_on_separable_shells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_rows(&d.join("train.emb"), &shell(800, 8, (9.0, 11.0), 1), Label::Id);
    write_rows(&d.join("id.emb"), &shell(200, 8, (9.2, 10.8), 2), Label::Id);
    write_rows(&d.join("ood.emb"), &shell(200, 8, (30.0, 32.0), 3), Label::Ood);
    let (by_m, by_sigma) = ablate(d, "ab");
    assert_eq!(by_m.len(), 1 + 15);
    assert_eq!(by_m[0][..3], ["max_components", "m_star", "auroc"]);
    assert_eq!(by_sigma.len(), 1 + 5);
    assert_eq!(by_sigma[0][0], "n_sigma");
    for row in &by_sigma[2..] {
        assert_eq!(row[4], "1", "accuracy at sigma {}", row[0]);
    }
    let o = gem(d, &["ablate", "--method", "tv", "--train", "train.emb", "--id-test", "id.emb", "--ood-test", "ood.emb"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ablate_tracks_bic_and_normal_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Three concentric shells with Gaussian radii: distances follow a three-mode mixture.
    let mut rng = SplitMix64::new(40);
    let mut ring = |count: usize, mean: f64, std: f64| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let a = std::f64::consts::TAU * rng.next_f64();
                let r = rng.normal(mean, std);
                vec![r * a.cos(), r * a.sin()]
            })
            .collect()
    };
    let mut train = ring(900, 10.0, 1.0);
    train.extend(ring(1200, 20.0, 2.0));
    train.extend(ring(900, 35.0, 3.0));
    let mut id = ring(300, 10.0, 1.0);
    id.extend(ring(400, 20.0, 2.0));
    id.extend(ring(300, 35.0, 3.0));
    write_rows(&d.join("train.emb"), &train, Label::Id);
    write_rows(&d.join("id.emb"), &id, Label::Id);
    write_rows(&d.join("ood.emb"), &ring(300, 60.0, 1.0), Label::Ood);
    let (by_m, by_sigma) = ablate(d, "ab");
    for row in &by_m[3..] {
        assert_eq!(row[1], "3", "m* at max_components {}", row[0]);
    }
    let retention: f64 = by_sigma[1][8].parse().unwrap();
    assert!((retention - 0.68).abs() <= 0.05, "ID retention at 1 sigma {retention}");
}

#[test]
fn seed_env_changes_nothing_but_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    separable(dir.path(), 2);
    let run = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_gem"))
            .args(["fit", "--train", "train.emb", "--out", out, "--format", "json"])
            .current_dir(dir.path())
            .env("GEM_SEED", seed)
            .output()
            .unwrap();
        (code(&o), fs::read(dir.path().join(out)).unwrap_or_default())
    };
    let (a, b) = (run("3", "a.json"), run("3", "b.json"));
    assert_eq!(a.0, 0);
    assert_eq!(a.1, b.1);
    let o = Command::new(env!("CARGO_BIN_EXE_gem"))
        .args(["fit", "--train", "train.emb", "--out", "c.json"])
        .current_dir(dir.path())
        .env("GEM_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
