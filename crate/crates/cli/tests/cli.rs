use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_cloudlet-stgcn");

fn quick_config() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml");
    std::fs::read_to_string(path).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_ok(config: &Path, out_root: &Path) -> PathBuf {
    let out = cli(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-root",
        out_root.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn single_horizon(setup: &str) -> String {
    quick_config()
        .replace("horizons = [3, 6, 12]", "horizons = [3]")
        .replace("setup = \"gossip\"", &format!("setup = \"{setup}\""))
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "quick.toml", &quick_config());
    let dir = run_ok(&cfg, tmp.path());
    assert!(dir
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("gossip-"));
    for f in [
        "config.toml",
        "result.json",
        "val_loss.csv",
        "metrics.csv",
        "ledger.csv",
        "partition.csv",
        "plan.csv",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let global: Vec<_> = csv_rows(&dir.join("metrics.csv"))
        .into_iter()
        .filter(|r| r[2] == "global")
        .collect();
    let horizons: Vec<&str> = global.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(horizons, ["3", "6", "12"]);
    assert!(dir.join("checkpoints").read_dir().unwrap().count() > 0);
}

#[test]
fn identical_configs_reuse_the_run_directory_and_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.toml", &single_horizon("serverfree_fl"));
    let first = run_ok(&cfg, &tmp.path().join("one"));
    let second = run_ok(&cfg, &tmp.path().join("two"));
    assert_eq!(first.file_name(), second.file_name());
    for f in ["metrics.csv", "ledger.csv", "val_loss.csv"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let other = write_config(
        tmp.path(),
        "b.toml",
        &single_horizon("serverfree_fl").replace("epochs = 2", "epochs = 1"),
    );
    assert_ne!(run_ok(&other, tmp.path()).file_name(), first.file_name());
}

#[test]
fn report_joins_runs_without_changing_values() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for setup in ["centralized", "traditional_fl", "serverfree_fl", "gossip"] {
        let cfg = write_config(tmp.path(), &format!("{setup}.toml"), &single_horizon(setup));
        dirs.push(run_ok(&cfg, &tmp.path().join("runs")));
    }
    let out_dir = tmp.path().join("report");
    let mut args = vec!["report".to_string()];
    args.extend(dirs.iter().map(|d| d.display().to_string()));
    args.extend(["--out".to_string(), out_dir.display().to_string()]);
    let out = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let joined = csv_rows(&out_dir.join("report_metrics.csv"));
    assert_eq!(joined.len(), 4);
    for dir in &dirs {
        for row in csv_rows(&dir.join("metrics.csv"))
            .into_iter()
            .filter(|r| r[2] == "global")
        {
            let hit = joined
                .iter()
                .find(|j| j[0] == row[0] && j[1] == row[1])
                .expect("row in report");
            for k in 0..3 {
                let a: f64 = hit[2 + k].parse().unwrap();
                let b: f64 = row[3 + k].parse().unwrap();
                assert_eq!(a, b);
            }
        }
    }
    let overhead = csv_rows(&out_dir.join("report_overhead.csv"));
    assert_eq!(overhead.len(), 4);
    let centralized = overhead.iter().find(|r| r[0] == "centralized").unwrap();
    assert_eq!(centralized[1].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn unknown_config_key_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = quick_config().replace("epochs = 2", "epochs = 2\nepoch_count = 3");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-root",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("training"), "{err}");
    assert!(err.contains("epoch_count"), "{err}");
}

#[test]
fn invalid_value_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        &quick_config().replace("epochs = 2", "epochs = 0"),
    );
    let out = cli(&["account", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("training.epochs"), "{err}");
}

#[test]
fn sensors_out_of_range_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let text = quick_config().replace(
        "hex_layout = { center = { lat = 34.103951, lon = -118.184879 }, radius_km = 4.5 }",
        "cloudlets = [{ lat = 40.0, lon = -100.0 }]",
    );
    let cfg = write_config(tmp.path(), "far.toml", &text);
    let out = cli(&[
        "partition",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("sensor"), "{err}");
}

#[test]
fn account_prints_all_setups() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", &quick_config());
    let out = cli(&["account", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    for s in ["centralized", "traditional_fl", "serverfree_fl", "gossip"] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{s},"))),
            "{text}"
        );
    }
}
