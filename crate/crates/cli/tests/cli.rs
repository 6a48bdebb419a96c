use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[devices]
count = 4
samples = 60
[model]
arch_hidden = 8
device_hidden = 8
header_hidden = 16
modulator_hidden = 8
[train]
meta_batch = 2
query_size = 32
checkpoint_every = 2
[eval]
n_test = 200
seeds = [0]
"#;

fn help_lat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_help-lat"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("HELP_LAT_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(help_lat(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(help_lat(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(help_lat(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[train]\nepisodez = 3\n");
    let o = help_lat(dir.path(), &["--config", &cfg, "gen-devices"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("episodez"), "{}", stderr(&o));

    let cfg = write_config(
        dir.path(),
        "arch.toml",
        "[devices.generator]\narchetypes = [\"quantum\"]\n",
    );
    let o = help_lat(dir.path(), &["--config", &cfg, "gen-devices"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quantum"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = help_lat(dir.path(), &["metatrain", "--episodes", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gen-devices"), "{}", stderr(&o));
    let o = help_lat(dir.path(), &["adapt-eval"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_smoke_run_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = write_config(out, "small.toml", SMALL);
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str()];
        full.extend_from_slice(args);
        let o = help_lat(out, &full);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["gen-devices"]);
    for f in [
        "pool.json",
        "latency.csv",
        "correlations.csv",
        "gen-devices.manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    ok(&["metatrain", "--episodes", "4"]);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.starts_with("iteration,mean_support_loss,mean_query_loss,wall_ms"));

    ok(&["adapt-eval", "--samples", "5,10", "--baselines", "flops"]);
    let eval = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(eval.lines().count() > 1);
    assert!(out.join("sample_sweep.csv").exists());

    ok(&["search", "--oracle-latency", "--emit-plot-data"]);
    let search = std::fs::read_to_string(out.join("search.csv")).unwrap();
    assert_eq!(search.lines().count(), 4, "{search}");
    assert!(out.join("plot_oracle.csv").exists());
    assert!(out.join("frontier.csv").exists());
    ok(&["search", "--constraints", "1e-9"]);
    let search = std::fs::read_to_string(out.join("search.json")).unwrap();
    assert!(search.contains("diagnostics"), "{search}");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("metatrain.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    assert!(files.contains(&"train_log.csv"));
    assert!(files.contains(&"checkpoint/params.bin"));

    ok(&["metatrain", "--episodes", "6", "--resume"]);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = write_config(out, "small.toml", SMALL);
    let wide = write_config(
        out,
        "wide.toml",
        &SMALL.replace("header_hidden = 16", "header_hidden = 20"),
    );
    let other = out.join("other");
    for (c, o) in [(&cfg, out.to_path_buf()), (&wide, other.clone())] {
        let mut args = vec!["--config", c.as_str(), "--out"];
        let o_str = o.display().to_string();
        args.push(&o_str);
        let g = Command::new(env!("CARGO_BIN_EXE_help-lat"))
            .args(&args)
            .arg("gen-devices")
            .output()
            .unwrap();
        assert!(g.status.success(), "{}", stderr(&g));
        let t = Command::new(env!("CARGO_BIN_EXE_help-lat"))
            .args(&args)
            .args(["metatrain", "--episodes", "1"])
            .output()
            .unwrap();
        assert!(t.status.success(), "{}", stderr(&t));
    }
    std::fs::copy(
        other.join("checkpoint/params.bin"),
        out.join("checkpoint/params.bin"),
    )
    .unwrap();
    let o = help_lat(out, &["--config", &cfg, "adapt-eval"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("incompatible"), "{}", stderr(&o));
}

#[test]
fn diverging_training_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = write_config(
        out,
        "hot.toml",
        &SMALL.replace("[train]\n", "[train]\nalpha_init = 1e150\n"),
    );
    let g = help_lat(out, &["--config", &cfg, "gen-devices"]);
    assert!(g.status.success(), "{}", stderr(&g));
    let o = help_lat(out, &["--config", &cfg, "metatrain", "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
