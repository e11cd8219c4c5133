use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use actsom::ingest::encode_actv;
use actsom::{ActivationSet, FrequencyMap, MeasureReport};

struct Bundle {
    dir: tempfile::TempDir,
}

impl Bundle {
    /// Three layers, 60 examples, classes `even`/`odd` plus a small `tiny` concept.
    fn new(layers: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let n = 60;
        let mut entries = Vec::new();
        for l in 0..layers {
            let values: Vec<f32> = (0..n)
                .flat_map(|i| {
                    (0..5).map(move |d| {
                        let class_pull = if d == i % 2 { l as f32 + 0.5 } else { 0.0 };
                        ((i * 31 + d * 17 + l * 7) % 13) as f32 / 13.0 + class_pull
                    })
                })
                .collect();
            let set = ActivationSet::new(format!("l{l}"), vec![n, 5], values).unwrap();
            fs::write(dir.path().join(format!("l{l}.actv")), encode_actv(&set)).unwrap();
            entries.push(format!(r#"{{"name": "l{l}", "file": "l{l}.actv"}}"#));
        }
        let mut labels = String::from("example_id,concept\n");
        for i in 0..n {
            labels.push_str(&format!(
                "{i},{}\n",
                if i % 2 == 0 { "even" } else { "odd" }
            ));
            if i < 4 {
                labels.push_str(&format!("{i},tiny\n"));
            }
        }
        fs::write(dir.path().join("labels.csv"), labels).unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            format!(
                r#"{{"layers": [{}], "labels_file": "labels.csv"}}"#,
                entries.join(",")
            ),
        )
        .unwrap();
        Bundle { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, stage: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            stage.to_string(),
            "--manifest".into(),
            self.path("manifest.json").display().to_string(),
            "--out".into(),
            self.path("out").display().to_string(),
            "--width".into(),
            "5".into(),
            "--height".into(),
            "4".into(),
            "--sigma".into(),
            "2".into(),
            "--min-members".into(),
            "10".into(),
            "--seed".into(),
            "42".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        Command::new(env!("CARGO_BIN_EXE_actsom"))
            .args(&args)
            .output()
            .unwrap()
    }

    fn run_ok(&self, stage: &str) -> Output {
        let out = self.run(stage, &[]);
        assert!(
            out.status.success(),
            "{stage} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter(|e| {
                    e.as_ref()
                        .unwrap()
                        .path()
                        .extension()
                        .is_some_and(|x| x == ext)
                })
                .count()
        })
        .unwrap_or(0)
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let b = Bundle::new(3);
    let train = b.run_ok("train");
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert_eq!(stdout.lines().count(), 1 + 3, "{stdout}");
    assert_eq!(count_files(&b.path("out/som"), "json"), 3);

    let populate = b.run_ok("populate");
    // 3 base + 3 x 2 concept maps + index
    assert_eq!(count_files(&b.path("out/maps"), "json"), 3 + 6 + 1);
    assert!(!b.path("out/maps/l0__tiny.json").exists());
    assert!(String::from_utf8_lossy(&populate.stderr).contains("skipping concept `tiny`"));

    b.run_ok("report");
    assert_eq!(count_files(&b.path("out/heatmaps"), "png"), 9);
    assert!(b.path("out/heatmaps/l2__BASE.png").exists());
    assert!(b.path("out/heatmaps/l1__even.png").exists());
    let csv = fs::read_to_string(b.path("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 4);
    let report =
        MeasureReport::from_json(&fs::read_to_string(b.path("out/report.json")).unwrap()).unwrap();
    assert_eq!(report.layers, ["l0", "l1", "l2"]);
    assert_eq!(report.seeds, [42, 43, 44]);
    assert!(!report.hypothesis_results.is_empty());
    assert_eq!(report.config["run"]["min_members"], 10);
}

#[test]
fn stages_are_idempotent() {
    let b = Bundle::new(2);
    for stage in ["train", "populate", "report"] {
        b.run_ok(stage);
    }
    let snapshot = |p: &str| fs::read(b.path(p)).unwrap();
    let before = [
        snapshot("out/som/l0.json"),
        snapshot("out/maps/l1__odd.json"),
        snapshot("out/heatmaps/l0__even.png"),
        snapshot("out/report.json"),
        snapshot("out/report.csv"),
    ];
    for stage in ["train", "populate", "report"] {
        b.run_ok(stage);
    }
    let after = [
        snapshot("out/som/l0.json"),
        snapshot("out/maps/l1__odd.json"),
        snapshot("out/heatmaps/l0__even.png"),
        snapshot("out/report.json"),
        snapshot("out/report.csv"),
    ];
    assert_eq!(before, after);
}

#[test]
fn single_layer_has_no_trend_verdicts() {
    let b = Bundle::new(1);
    for stage in ["train", "populate", "report"] {
        b.run_ok(stage);
    }
    let report =
        MeasureReport::from_json(&fs::read_to_string(b.path("out/report.json")).unwrap()).unwrap();
    assert!(report.hypothesis_results.is_empty());
    assert!(report.values.iter().all(|v| v.z_value.is_none()));
}

#[test]
fn concept_equal_to_base_scores_zero_divergence() {
    let b = Bundle::new(2);
    let mut labels = fs::read_to_string(b.path("labels.csv")).unwrap();
    for i in 0..60 {
        labels.push_str(&format!("{i},everyone\n"));
    }
    fs::write(b.path("labels.csv"), labels).unwrap();
    for stage in ["train", "populate", "report"] {
        b.run_ok(stage);
    }
    let csv = fs::read_to_string(b.path("out/report.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| l.contains(",everyone,relative_entropy,"))
        .collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').nth(3), Some("0"), "{row}");
    }
}

#[test]
fn missing_activation_file_names_the_layer() {
    let b = Bundle::new(3);
    fs::remove_file(b.path("l1.actv")).unwrap();
    let out = b.run("train", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer `l1`"));
}

#[test]
fn populate_without_training_hints_at_train() {
    let b = Bundle::new(2);
    let out = b.run("populate", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("actsom train"));
}

#[test]
fn out_of_range_label_fails_with_index() {
    let b = Bundle::new(2);
    b.run_ok("train");
    let mut labels = fs::read_to_string(b.path("labels.csv")).unwrap();
    labels.push_str("75,even\n");
    fs::write(b.path("labels.csv"), labels).unwrap();
    let out = b.run("populate", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("75"));
}

#[test]
fn inconsistent_grid_is_rejected_without_partial_report() {
    let b = Bundle::new(2);
    b.run_ok("train");
    b.run_ok("populate");
    let base =
        FrequencyMap::from_counts("l1", actsom::MapKind::Base, None, 3, 3, vec![1; 9]).unwrap();
    base.save(b.path("out/maps/l1__BASE.json")).unwrap();
    let out = b.run("report", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("consistency"));
    assert!(!b.path("out/report.json").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let b = Bundle::new(1);
    let out = Command::new(env!("CARGO_BIN_EXE_actsom"))
        .args(["train", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_actsom"))
        .args(["train", "--out", b.path("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = b.run("train", &["--lr", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_activation_file_is_a_data_error() {
    let b = Bundle::new(1);
    fs::write(b.path("l0.actv"), b"XXXX\x01\x00\x00\x00").unwrap();
    let out = b.run("train", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer `l0`"));
}

#[test]
fn continuous_targets_become_cluster_concepts() {
    let b = Bundle::new(2);
    let targets: String = (0..60)
        .map(|i| format!("{}\n", [18.0, 45.0, 80.0][i % 3]))
        .collect();
    fs::write(b.path("targets.txt"), targets).unwrap();
    let manifest = fs::read_to_string(b.path("manifest.json")).unwrap();
    fs::write(
        b.path("manifest.json"),
        manifest.replace(
            r#""labels_file""#,
            r#""target_file": "targets.txt", "labels_file""#,
        ),
    )
    .unwrap();
    b.run_ok("train");
    b.run_ok("populate");
    for c in 0..3 {
        let map = FrequencyMap::load(b.path(&format!("out/maps/l0__cluster_{c}.json"))).unwrap();
        assert_eq!(map.total(), 20);
    }
}
