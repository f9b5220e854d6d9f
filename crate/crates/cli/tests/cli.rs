use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roadrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadrisk")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(dir: &Path) -> String {
    let out = roadrisk(&["synth", "--out", dir.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("config.json").to_str().unwrap().to_string()
}

#[test]
fn synth_then_stages_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let fast = ["--set", "train.num_trees=20"];
    let stage = |name: &str| {
        let mut args = vec![name, "--config", cfg.as_str()];
        args.extend_from_slice(&fast);
        let o = roadrisk(&args);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        stdout(&o)
    };

    let ingest = stage("ingest");
    assert!(ingest.contains("segments: 200"), "{ingest}");
    assert!(ingest.contains("mean segment length:"));
    assert!(ingest.contains("segments under 200 m: 100.0%"));
    assert!(stage("sample").contains("sample: computed"));
    assert!(stage("featurize").contains("featurize: computed"));
    assert!(stage("featurize").contains("featurize: cache hit"));
    assert!(stage("train").contains("model.json"));
    let eval = stage("evaluate");
    assert!(eval.contains("ROC AUC:") && eval.contains("baseline ROC AUC:"), "{eval}");
    let imp = stage("importance");
    assert!(imp.lines().any(|l| l.starts_with("accident_count")), "{imp}");
    let report = stage("report");
    assert!(report.contains("report.json"));

    let out = dir.path().join("out");
    for name in ["report.json", "roc.csv", "roc.svg", "pr.csv", "pr.svg", "thresholds.csv", "thresholds.svg"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    for name in ["importance.csv", "model.json", "features_train.csv", "features_test.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(json["auc_roc"].as_f64().unwrap() > 0.5);
    assert!(json["evaluation"]["extrapolated_precision"].as_f64().is_some());
}

#[test]
fn evaluate_before_train_is_an_ordering_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let o = roadrisk(&["evaluate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run `train` before `evaluate`"), "{}", stderr(&o));
}

#[test]
fn run_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let report = dir.path().join("out/report.json");
    let first = roadrisk(&["run", "--config", &cfg, "--set", "train.num_trees=20", "--set", "threads=1"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let a = fs::read(&report).unwrap();
    fs::remove_dir_all(dir.path().join("cache")).unwrap();
    let second = roadrisk(&["run", "--config", &cfg, "--set", "train.num_trees=20", "--set", "threads=3"]);
    assert!(second.status.success(), "{}", stderr(&second));
    assert_eq!(a, fs::read(&report).unwrap());
}

#[test]
fn invalid_config_and_missing_data_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let bad = roadrisk(&["run", "--config", &cfg, "--set", "split.test_end=2016-11-02"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("train_start < train_end < test_end"));

    let unknown = roadrisk(&["run", "--config", &cfg, "--set", "train.bogus=1"]);
    assert_eq!(unknown.status.code(), Some(1));

    fs::remove_file(dir.path().join("weather.csv")).unwrap();
    let missing = roadrisk(&["ingest", "--config", &cfg]);
    assert_eq!(missing.status.code(), Some(2), "{}", stderr(&missing));
}

#[test]
fn garbage_kml_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    fs::write(dir.path().join("roads.kml"), "<kml><Document><Placemark>").unwrap();
    let o = roadrisk(&["ingest", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
