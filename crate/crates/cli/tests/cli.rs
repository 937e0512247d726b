use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lstm-ensemble");

const TINY: &str = r#"
seed = 3

[data]
synthetic = true

[synthetic]
symbols = 4
constant_symbols = 1
seed = 5

[models.ensemble]
window_length = 5
annual_window = 1

[models.ensemble.learner1]
hidden_size = 4
epochs = 20
batch_size = 8

[models.ensemble.learner2]
hidden_size = 6
epochs = 2

[models.mlp]
hidden_size = 4
epochs = 3
"#;

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        Run { dir, config: path }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn cmd(&self, args: &[&str]) -> Output {
        self.cmd_with(&self.config, args)
    }

    fn cmd_with(&self, config: &Path, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    assert!(!o.status.success());
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn prepare_train_predict() {
    let run = Run::new(TINY);
    ok(&run.cmd(&["prepare"]));
    for f in [
        "prepared/annual.csv",
        "prepared/daily/S000.csv",
        "summary.json",
        "summary.txt",
        "config.toml",
    ] {
        assert!(run.out().join(f).exists(), "{f}");
    }
    ok(&run.cmd(&["train", "--variant", "ensemble"]));
    assert!(run.out().join("models/ensemble.json").exists());

    let out = ok(&run.cmd(&["predict", "--symbol", "S001", "--date", "2015-06-30"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1, "{out}");
    let price: f64 = lines[0].parse().unwrap();
    assert!(price.is_finite());

    let err = stderr(&run.cmd(&["predict", "--symbol", "ZZZ", "--date", "2015-06-30"]));
    assert!(err.contains("symbol not in model: ZZZ"), "{err}");

    // A model trained under another seed is refused.
    let err = stderr(&run.cmd(&["--seed", "99", "predict", "--symbol", "S001", "--date", "2015-06-30"]));
    assert!(err.contains("different configuration"), "{err}");
}

#[test]
fn evaluate_writes_report_and_forecast() {
    let run = Run::new(TINY);
    ok(&run.cmd(&["prepare"]));
    let out = ok(&run.cmd(&["evaluate", "--symbol", "S002"]));
    for label in [
        "LSTM, daily features",
        "LSTM, annual ratios",
        "Ensemble LSTM",
        "MLP baseline",
    ] {
        assert!(out.contains(label), "{label} missing from\n{out}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.out().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(run.out().join("forecast/S002_ensemble.csv")).unwrap();
    assert!(csv.starts_with("date,actual,predicted\n"));
    assert!(csv.lines().count() > 100);
    assert!(run.out().join("forecast/S002_ensemble.svg").exists());
    for v in ["daily", "annual", "ensemble", "mlp"] {
        assert!(run.out().join(format!("models/{v}.json")).exists(), "{v}");
    }

    // Second run reuses the saved models and reproduces the report.
    let first = std::fs::read(run.out().join("report.json")).unwrap();
    ok(&run.cmd(&["evaluate", "--symbol", "S002"]));
    assert_eq!(std::fs::read(run.out().join("report.json")).unwrap(), first);
}

#[test]
fn outputs_are_idempotent_and_config_echo_reproduces() {
    let run = Run::new(TINY);
    ok(&run.cmd(&["prepare"]));
    ok(&run.cmd(&["train", "--variant", "daily"]));
    let annual = std::fs::read(run.out().join("prepared/annual.csv")).unwrap();
    let daily = std::fs::read(run.out().join("prepared/daily/S000.csv")).unwrap();
    let model = std::fs::read(run.out().join("models/daily.json")).unwrap();

    ok(&run.cmd(&["prepare"]));
    ok(&run.cmd(&["train", "--variant", "daily"]));
    assert_eq!(std::fs::read(run.out().join("prepared/annual.csv")).unwrap(), annual);
    assert_eq!(std::fs::read(run.out().join("prepared/daily/S000.csv")).unwrap(), daily);
    assert_eq!(std::fs::read(run.out().join("models/daily.json")).unwrap(), model);

    // The echoed effective config drives an identical run.
    let echo = run.dir.path().join("echo.toml");
    std::fs::copy(run.out().join("config.toml"), &echo).unwrap();
    ok(&run.cmd_with(&echo, &["prepare"]));
    ok(&run.cmd_with(&echo, &["train", "--variant", "daily"]));
    assert_eq!(std::fs::read(run.out().join("models/daily.json")).unwrap(), model);
}

#[test]
fn gradcheck_succeeds() {
    let out = Command::new(BIN).arg("gradcheck").output().unwrap();
    let text = ok(&out);
    assert!(text.contains("max relative error"));
}

#[test]
fn bad_input_fails_with_a_useful_message() {
    let run = Run::new(TINY);
    let err = stderr(&run.cmd(&["train", "--variant", "transformer"]));
    assert!(err.contains("transformer"), "{err}");

    let err = stderr(&run.cmd(&["train"]));
    assert!(err.contains("prepare"), "{err}");

    let bad = Run::new(
        &format!("{TINY}\n[models.ensemble.learner2]\nepochs = 0\n")
            .replace("[models.ensemble.learner2]\nhidden_size = 6\nepochs = 2\n", ""),
    );
    let err = stderr(&bad.cmd(&["prepare"]));
    assert!(err.contains("models.ensemble.learner2"), "{err}");

    let no_data = Run::new("seed = 1\n");
    let err = stderr(&no_data.cmd(&["prepare"]));
    assert!(err.contains("data.prices"), "{err}");
}
