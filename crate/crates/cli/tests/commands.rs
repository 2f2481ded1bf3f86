use std::path::Path;
use std::process::{Command, Output};

use spps_cli::{parse_csv, write_sample, ColumnRoles};
use spps_core::pipeline::estimate_variants;
use spps_core::simulation::{generate_sample, replicate_rng};
use spps_core::{fit_spps, FitOptions, LinkFunction, Mode, SimulationConfig, Variant};

fn spps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spps"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn seeded_sample_file(dir: &Path, n: usize) -> std::path::PathBuf {
    let cfg = SimulationConfig {
        n,
        ..SimulationConfig::default().with_cell(0.1, 0.1)
    };
    let sample = generate_sample(&cfg, &mut replicate_rng(42, 0)).unwrap();
    let path = dir.join("sample.csv");
    write_sample(std::fs::File::create(&path).unwrap(), &sample.data).unwrap();
    path
}

fn sample_roles() -> ColumnRoles {
    spps_cli::data::sample_roles()
}

#[test]
fn simulate_default_grid_emits_48_cells_by_4_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = spps(&[
        "simulate",
        "--nrep",
        "2",
        "--n",
        "150",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta0,epsilon0,variant,mse,mc_se,n_fail"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 48 * 4);
    let cells: std::collections::BTreeSet<(String, String)> = rows
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[0].to_owned(), f[1].to_owned())
        })
        .collect();
    assert_eq!(cells.len(), 48);
}

#[test]
fn simulate_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("t{workers}.json"));
        let o = spps(&[
            "simulate",
            "--nrep",
            "3",
            "--n",
            "200",
            "--epsilon-grid",
            "0,0.2",
            "--delta-grid",
            "0.1",
            "--workers",
            workers,
            "--output",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn estimate_ate_matches_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 400);
    let out = dir.path().join("ate.json");
    let o = spps(&[
        "estimate-ate",
        "--input",
        input.to_str().unwrap(),
        "--indicator-col",
        "t",
        "--outcome-col",
        "y",
        "--variant",
        "O,P,LD,PLD",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = parse_csv(&input, &sample_roles(), Mode::Treatment).unwrap();
    let reports = estimate_variants(
        &data,
        LinkFunction::Logistic,
        Mode::Treatment,
        &Variant::ALL,
        &FitOptions::default(),
    )
    .unwrap();
    let expected = serde_json::to_string_pretty(&reports).unwrap() + "\n";
    assert_eq!(std::fs::read_to_string(&out).unwrap(), expected);
}

#[test]
fn fit_writes_json_and_fitted_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 300);
    let out = dir.path().join("fit.json");
    let o = spps(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--indicator-col",
        "t",
        "--covariates",
        "x1,x2,x3,v1,v2,v3",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let data = parse_csv(&input, &sample_roles(), Mode::Treatment).unwrap();
    let fit = fit_spps(&data, LinkFunction::Logistic, Mode::Treatment, &FitOptions::default()).unwrap();
    assert_eq!(json["loglik"].as_f64(), Some(fit.loglik));
    assert!(json["trace"].as_array().is_some_and(|t| !t.is_empty()));
    let sidecar = std::fs::read_to_string(spps_cli::fitted_sidecar(&out)).unwrap();
    assert_eq!(sidecar.lines().count(), 301);
    assert!(sidecar.starts_with("row,pi_hat\n"));
}

#[test]
fn bootstrap_reports_interval() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 200);
    let o = spps(&[
        "bootstrap",
        "--input",
        input.to_str().unwrap(),
        "--indicator-col",
        "t",
        "--outcome-col",
        "y",
        "--variant",
        "O",
        "--nboot",
        "30",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let b = &json["bootstrap"];
    for key in ["estimate", "se", "ci_low", "ci_high", "n_boot_effective", "n_fail"] {
        assert!(!b[key].is_null(), "missing {key}");
    }
    assert_eq!(b["n_boot"], 30);
}

#[test]
fn manifest_supplies_command_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 300);
    let manifest = dir.path().join("run.json");
    std::fs::write(
        &manifest,
        serde_json::json!({
            "command": "estimate-ate",
            "input_path": input,
            "indicator_col": "t",
            "outcome_col": "y",
            "variants": ["O", "LD"]
        })
        .to_string(),
    )
    .unwrap();
    let o = spps(&["--manifest", manifest.to_str().unwrap(), "--variant", "PLD"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let reports = json.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["variant"], "PLD");
}

#[test]
fn environment_variables_set_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 300);
    let o = Command::new(env!("CARGO_BIN_EXE_spps"))
        .args(["estimate-ate", "--variant", "O"])
        .env_clear()
        .env("SPPS_INPUT", &input)
        .env("SPPS_INDICATOR_COL", "t")
        .env("SPPS_OUTCOME_COL", "y")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn nonexistent_input_exits_with_code_2_and_json_error() {
    let o = spps(&[
        "estimate-ate",
        "--input",
        "/definitely/not/here.csv",
        "--indicator-col",
        "t",
        "--outcome-col",
        "y",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "input");
    assert_eq!(err["error"]["exit_code"], 2);
}

#[test]
fn bad_indicator_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "x,t,y\n1,0,1\n2,1,2\n3,2,3\n").unwrap();
    let o = spps(&[
        "estimate-ate",
        "--input",
        input.to_str().unwrap(),
        "--indicator-col",
        "t",
        "--outcome-col",
        "y",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("row 3"), "{msg}");
}

#[test]
fn corrected_variant_in_missing_mode_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = seeded_sample_file(dir.path(), 200);
    let o = spps(&[
        "estimate-mean",
        "--input",
        input.to_str().unwrap(),
        "--indicator-col",
        "t",
        "--outcome-col",
        "y",
        "--variant",
        "LD",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn emitted_samples_reparse_identically() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples");
    let o = spps(&[
        "simulate",
        "--nrep",
        "2",
        "--n",
        "120",
        "--epsilon-grid",
        "0.1",
        "--delta-grid",
        "0.2",
        "--seed",
        "77",
        "--emit-samples",
        samples.to_str().unwrap(),
        "--output",
        dir.path().join("t.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = SimulationConfig {
        n: 120,
        seed: 77,
        ..SimulationConfig::default().with_cell(0.1, 0.2)
    };
    for rep in 0..2 {
        let path = samples.join(format!("sample_eps0.1_delta0.2_rep{rep}.csv"));
        let back = parse_csv(&path, &sample_roles(), Mode::Treatment).unwrap();
        let direct = generate_sample(&cfg, &mut replicate_rng(77, rep)).unwrap();
        assert_eq!(back, direct.data);
    }
}
