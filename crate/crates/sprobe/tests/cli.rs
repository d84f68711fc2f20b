//! Exercises the sprobe binary end to end: gen-fixture -> encode -> run ->
//! quiver -> report -> diagnose.

use std::path::Path;
use std::process::Command;

fn sprobe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sprobe"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn sprobe");
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    assert!(
        output.status.success(),
        "command failed\nstdout: {stdout}\nstderr: {stderr}"
    );
    stdout
}

#[test]
fn full_cli_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let fixture_dir = dir.path().join("fixture");

    // gen-fixture: small world so the pipeline stays fast.
    run_ok(sprobe().args([
        "gen-fixture",
        "--out",
        fixture_dir.to_str().unwrap(),
        "--seed",
        "3",
        "--d-model",
        "24",
        "--w-true",
        "48",
        "--n",
        "640",
    ]));
    assert!(fixture_dir.join("manifest.json").exists());
    assert!(fixture_dir.join("activations.spba").exists());
    assert!(fixture_dir.join("oracle_sae.spsw").exists());

    // encode: latents written as an SPBA tensor.
    let latents = dir.path().join("latents.spba");
    let stdout = run_ok(sprobe().args([
        "encode",
        "--manifest",
        fixture_dir.join("manifest.json").to_str().unwrap(),
        "--sae",
        fixture_dir.join("oracle_sae.spsw").to_str().unwrap(),
        "--out",
        latents.to_str().unwrap(),
        "--pool",
        "last",
    ]));
    assert!(stdout.contains("encoded 640 examples"));
    let z = sprobe::tensor::read_tensor(&latents).unwrap();
    assert_eq!(z.n_examples(), 640);
    assert_eq!(z.d_model(), 48);

    // run: logreg + one SAE probe, standard regime.
    let experiment = dir.path().join("experiment.json");
    let out_dir = dir.path().join("results");
    std::fs::write(
        &experiment,
        format!(
            r#"{{
  "datasets": ["{}"],
  "saes": [{{"path": "{}", "width": 48, "l0": 1.5}}],
  "methods": {{
    "baseline_families": ["logreg"],
    "baseline_pooling": ["last"],
    "sae_probes": {{"k": [8], "pooling": ["last"], "binarize": false}}
  }},
  "regimes": ["standard"],
  "seed": 11,
  "out_dir": "{}"
}}"#,
            fixture_dir.join("manifest.json").display(),
            fixture_dir.join("oracle_sae.spsw").display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let stdout = run_ok(sprobe().args([
        "run",
        "--manifest",
        experiment.to_str().unwrap(),
        "--workers",
        "2",
    ]));
    assert!(stdout.contains("2 new records"), "{stdout}");
    assert!(out_dir.join("records.csv").exists());
    assert!(out_dir.join("quivers.csv").exists());

    // Re-running is a no-op.
    let stdout = run_ok(sprobe().args(["run", "--manifest", experiment.to_str().unwrap()]));
    assert!(stdout.contains("0 new records"), "{stdout}");
    assert!(stdout.contains("2 cached"), "{stdout}");

    // quiver: recompute from records.
    run_ok(sprobe().args(["quiver", "--results", out_dir.to_str().unwrap()]));

    // report: summary tables exist.
    run_ok(sprobe().args(["report", "--results", out_dir.to_str().unwrap()]));
    assert!(out_dir.join("report/method_means.csv").exists());
    assert!(out_dir.join("report/quiver_delta.csv").exists());

    // diagnose with the persisted activation-space logreg model.
    let model_path = model_for_method(&out_dir, "logreg+acts+last");
    let diag_dir = dir.path().join("diag");
    let token_ids = dir.path().join("tokens.txt");
    let ids: Vec<String> = (0..640).map(|i| format!("{}", i % 7)).collect();
    std::fs::write(&token_ids, ids.join("\n")).unwrap();
    run_ok(sprobe().args([
        "diagnose",
        "--manifest",
        fixture_dir.join("manifest.json").to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        diag_dir.to_str().unwrap(),
        "--top",
        "5",
        "--token-ids",
        token_ids.to_str().unwrap(),
        "--min-occurrences",
        "10",
    ]));
    let disagreements = std::fs::read_to_string(diag_dir.join("disagreements.csv")).unwrap();
    assert_eq!(disagreements.lines().count(), 6); // header + 5 rows
    let tokens = std::fs::read_to_string(diag_dir.join("token_means.csv")).unwrap();
    assert!(tokens.starts_with("token_id,mean_activation,occurrences"));
    assert_eq!(tokens.lines().count(), 8); // header + 7 token ids
}

/// Look up the persisted model path for a method id via the results index.
fn model_for_method(out_dir: &Path, method_id: &str) -> std::path::PathBuf {
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("index.json")).unwrap())
            .unwrap();
    let tasks = index["tasks"].as_object().unwrap();
    for entry in tasks.values() {
        if entry["record"]["method_id"] == method_id {
            return out_dir.join(entry["model"].as_str().expect("model persisted"));
        }
    }
    panic!("no persisted model for {method_id}");
}

#[test]
fn run_accepts_regime_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let fixture_dir = dir.path().join("fixture");
    run_ok(sprobe().args([
        "gen-fixture",
        "--out",
        fixture_dir.to_str().unwrap(),
        "--seed",
        "4",
        "--d-model",
        "16",
        "--w-true",
        "32",
        "--n",
        "560",
    ]));
    let experiment = dir.path().join("experiment.json");
    std::fs::write(
        &experiment,
        format!(
            r#"{{
  "datasets": ["{}"],
  "methods": {{"baseline_families": ["logreg"], "baseline_pooling": ["last"]}},
  "regimes": ["standard"],
  "seed": 1,
  "out_dir": "{}"
}}"#,
            fixture_dir.join("manifest.json").display(),
            dir.path().join("ignored").display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("noise_results");
    let stdout = run_ok(sprobe().args([
        "run",
        "--manifest",
        experiment.to_str().unwrap(),
        "--regime",
        "noise",
        "--seed",
        "99",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    // 11 noise points x 1 method.
    assert!(stdout.contains("11 new records"), "{stdout}");
    let records = sprobe::harness::load_records(&out_dir).unwrap();
    assert!(records.iter().all(|r| r.regime == "noise" && r.seed == 99));
}
