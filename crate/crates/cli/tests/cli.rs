use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn normstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normstab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = normstab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY_ADDING: &str = r#"
[experiment]
task = "adding"
cell = "irnn"
hidden_size = 6
seq_len = 8
batch_size = 4
seeds = [1, 2]
eval_horizon = 16
eval_sequences = 2

[regularizer]
beta = 1.0

[train]
optimizer = "adam"
learning_rate = 0.001
max_epochs = 2

[adding]
train_examples = 16
dev_examples = 8
test_examples = 8
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn adding_baselines_prints_both_predictors() {
    let out = ok(&["adding-baselines", "--samples", "20000", "--length", "10"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "predictor,analytic_mse,monte_carlo_mse");
    let short: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(short[0], 1.0 / 12.0);
    assert!((short[1] - 1.0 / 12.0).abs() < 0.01);
    assert!(lines[2].starts_with("constant,"));
}

#[test]
fn train_is_reproducible_and_feeds_the_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", TINY_ADDING);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stdout = ok(&["train", "--config", &cfg, "--out-dir", a.to_str().unwrap()]);
    ok(&["train", "--config", &cfg, "--out-dir", b.to_str().unwrap()]);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary, stdout);
    assert_eq!(summary, fs::read_to_string(b.join("summary.csv")).unwrap());
    assert!(summary.starts_with("seed,beta,cell,dev_metric,test_metric,epochs,rollbacks\n1,1,irnn,"));
    assert_eq!(summary.lines().count(), 3);

    let ckpt = a.join("seed_1/best.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let spectrum = ok(&["spectrum", "--config", &cfg, "--seed", "1", "--checkpoint", ckpt]);
    assert!(spectrum.starts_with("rank,modulus\n"));
    assert_eq!(spectrum.lines().count(), 7);

    let horizon = ok(&["eval-horizon", "--config", &cfg, "--seed", "1", "--checkpoint", ckpt, "--horizon", "30"]);
    assert!(horizon.starts_with("t,mean_h_norm,std_h_norm,mean_cost\n"));
    assert_eq!(horizon.lines().count(), 31);

    let out = normstab(&["forget-gates", "--config", &cfg, "--seed", "1", "--checkpoint", ckpt]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LSTM"));
}

#[test]
fn overrides_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", TINY_ADDING);
    let out = ok(&["sweep", "--config", &cfg, "--seed", "3", "--cell", "srnn_tanh", "--betas", "2,0"]);
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1], rows[0][2]), ("3", "2", "srnn_tanh"));
    assert_eq!(rows[1][1], "0");
}

#[test]
fn char_lm_lstm_forget_gates() {
    let dir = tempfile::tempdir().unwrap();
    let text = "It was the best of times, it was the worst of times. ".repeat(30);
    write(dir.path(), "corpus.txt", &text);
    let cfg = write(
        dir.path(),
        "lm.toml",
        r#"
[experiment]
task = "char_lm"
cell = "lstm"
hidden_size = 8
seq_len = 10
batch_size = 8
seeds = [0]

[regularizer]
target = "memory_cell"
beta = 10

[train]
optimizer = "adam"
learning_rate = 0.01
max_epochs = 1

[char_lm]
corpus = "corpus.txt"
"#,
    );
    let out_dir = dir.path().join("run");
    ok(&["train", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert!(fs::read_to_string(out_dir.join("vocab.tsv")).unwrap().ends_with("\tunk\n"));
    let ckpt = out_dir.join("seed_0/best.ckpt");
    let gates = ok(&["forget-gates", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(gates.starts_with("rank,avg_forget_gate\n"));
    let values: Vec<f64> = gates.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 8);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert!(values.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn bad_config_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[train]\nlearning_rate = 0.1\nmomentun = 0.5\n");
    let out = normstab(&["train", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("momentun"), "{err}");

    let out = normstab(&["train", "--cell", "gru"]);
    assert!(!out.status.success());
}
