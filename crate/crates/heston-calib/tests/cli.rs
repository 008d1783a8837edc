//! End-to-end checks of the command-line interface: subcommands, config
//! files, output artifacts, exit codes and report determinism.

use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heston-calib"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

// Small grids keep the CLI tests quick.
const SMALL: &[&str] = &["--n-x", "24", "--n-nu", "16", "--n-tau", "8"];

#[test]
fn price_reports_pde_and_analytic_values() {
    let mut args = vec!["price"];
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("pde"), "{text}");
    assert!(text.contains("analytic"), "{text}");
}

#[test]
fn calibrate_writes_single_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("single");
    let mut args = vec!["calibrate", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.csv").exists());
    assert!(out_dir.join("config.json").exists());
    let table = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(table.starts_with(
        "study,run_id,seed,delta,N_x,N_nu,N_tau,T,sigma0,rho0,kappa0,mu0,sigma_opt,rho_opt,kappa_opt,mu_opt,J0,Jopt,improvement,iters,status,wall_ms"
    ));
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn study_random_emits_figures_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| {
        let out_dir = dir.path().join(name);
        let mut args = vec![
            "study",
            "random",
            "--samples",
            "3",
            "--deviations",
            "0.1",
            "--seed",
            "77",
            "--out",
            out_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(SMALL);
        let out = run(&args);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run_once("a");
    let b = run_once("b");
    for name in
        ["report.csv", "fig_random_init_cost.csv", "fig_random_init_iterations.csv", "fig_random_init_params.csv"]
    {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs across reruns");
    }
}

#[test]
fn study_mesh_emits_three_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("mesh");
    let mut args = vec![
        "study",
        "mesh",
        "--mesh-list",
        "16,24",
        "--n-tau",
        "8",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&["--n-x", "16", "--n-nu", "16"]);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in
        ["fig_mesh_improvement.csv", "fig_mesh_param_change.csv", "fig_mesh_iterations.csv"]
    {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    // 2 mesh entries x 2 nu rules = 4 runs.
    let table = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn gradcheck_prints_component_table() {
    let mut args = vec!["gradcheck"];
    args.extend_from_slice(SMALL);
    let out = run(&args);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["sigma_nu", "rho", "kappa_nu", "mu_nu"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn config_file_sets_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.json");
    std::fs::write(
        &cfg_path,
        r#"{ "n_x": 24, "n_nu": 16, "n_tau": 8, "market": { "strike": 10.0, "rate": 0.1, "dividend": 0.05, "maturity": 1.0 } }"#,
    )
    .unwrap();
    let out = run(&["--config", cfg_path.to_str().unwrap(), "price"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("24 x 16 x 8"));

    // A flag overrides the file.
    let out = run(&["--config", cfg_path.to_str().unwrap(), "price", "--n-x", "32"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("32 x 16 x 8"));
}

#[test]
fn invalid_config_exits_with_code_2() {
    // Unparseable config file.
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("broken.json");
    std::fs::write(&cfg_path, "{ not json").unwrap();
    let out = run(&["--config", cfg_path.to_str().unwrap(), "price"]);
    assert_eq!(out.status.code(), Some(2));

    // Semantically invalid values.
    let out = run(&["price", "--n-x", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["study", "random", "--samples", "0"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown flags are usage errors (clap's exit code 2).
    let out = run(&["price", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
}
