//! Command-line experiment harness for the Heston PDE calibration library.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use heston_calib::adjoint::{residual_trajectory, solve_adjoint_theta};
use heston_calib::gradient::assemble_gradient;
use heston_calib::grid::build_grid;
use heston_calib::oracle::{finite_difference_gradient, heston_analytic_put, QuadratureSpec};
use heston_calib::study::{
    emit_report, generate_data, run_maturity_study, run_mesh_study, run_random_init_study,
    run_single, ExperimentSpec, StudyKind, StudyReport,
};
use heston_calib::{forward, Error};

#[derive(Parser)]
#[command(
    name = "heston-calib",
    about = "Heston model parameter calibration via adjoint-based PDE-constrained optimization",
    version
)]
struct Cli {
    /// JSON experiment configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price a European put with the PDE solver and the semi-analytic oracle.
    Price(PriceArgs),
    /// Calibrate from an initial guess against synthetic reference data.
    Calibrate(CalibrateArgs),
    /// Run one of the predefined parameter studies.
    Study(StudyArgs),
    /// Compare the adjoint gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Strike K.
    #[arg(long)]
    strike: Option<f64>,
    /// Risk-free rate r.
    #[arg(long)]
    rate: Option<f64>,
    /// Dividend yield q.
    #[arg(long)]
    dividend: Option<f64>,
    /// Maturity T in years.
    #[arg(long)]
    maturity: Option<f64>,

    /// Cells in the log-price direction.
    #[arg(long)]
    n_x: Option<usize>,
    /// Cells in the variance direction.
    #[arg(long)]
    n_nu: Option<usize>,
    /// Time steps.
    #[arg(long)]
    n_tau: Option<usize>,
    /// Lower log-price truncation bound (default: strike-centred).
    #[arg(long)]
    x_min: Option<f64>,
    /// Upper log-price truncation bound.
    #[arg(long)]
    x_max: Option<f64>,
    /// Variance truncation bound.
    #[arg(long)]
    nu_max: Option<f64>,

    /// Data-generating vol-of-variance.
    #[arg(long)]
    ref_sigma: Option<f64>,
    /// Data-generating correlation.
    #[arg(long)]
    ref_rho: Option<f64>,
    /// Data-generating mean-reversion rate.
    #[arg(long)]
    ref_kappa: Option<f64>,
    /// Data-generating long-term variance.
    #[arg(long)]
    ref_mu: Option<f64>,

    /// Initial-guess vol-of-variance.
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Initial-guess correlation.
    #[arg(long)]
    init_rho: Option<f64>,
    /// Initial-guess mean-reversion rate.
    #[arg(long)]
    init_kappa: Option<f64>,
    /// Initial-guess long-term variance.
    #[arg(long)]
    init_mu: Option<f64>,

    /// Tikhonov weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Armijo constant.
    #[arg(long)]
    gamma: Option<f64>,
    /// Gradient-norm stopping tolerance.
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Maximum accepted descent steps.
    #[arg(long)]
    max_iters: Option<usize>,
    /// ADI scheme parameter.
    #[arg(long)]
    theta: Option<f64>,
}

impl CommonArgs {
    fn apply(&self, spec: &mut ExperimentSpec) {
        let m = &mut spec.market;
        if let Some(v) = self.strike {
            m.strike = v;
        }
        if let Some(v) = self.rate {
            m.rate = v;
        }
        if let Some(v) = self.dividend {
            m.dividend = v;
        }
        if let Some(v) = self.maturity {
            m.maturity = v;
        }
        if let Some(v) = self.n_x {
            spec.n_x = v;
        }
        if let Some(v) = self.n_nu {
            spec.n_nu = v;
        }
        if let Some(v) = self.n_tau {
            spec.n_tau = v;
        }
        if self.x_min.is_some() {
            spec.truncation.x_min = self.x_min;
        }
        if self.x_max.is_some() {
            spec.truncation.x_max = self.x_max;
        }
        if let Some(v) = self.nu_max {
            spec.truncation.nu_max = v;
        }
        let r = &mut spec.reference;
        if let Some(v) = self.ref_sigma {
            r.sigma_nu = v;
        }
        if let Some(v) = self.ref_rho {
            r.rho = v;
        }
        if let Some(v) = self.ref_kappa {
            r.kappa_nu = v;
        }
        if let Some(v) = self.ref_mu {
            r.mu_nu = v;
        }
        let i = &mut spec.initial;
        if let Some(v) = self.init_sigma {
            i.sigma_nu = v;
        }
        if let Some(v) = self.init_rho {
            i.rho = v;
        }
        if let Some(v) = self.init_kappa {
            i.kappa_nu = v;
        }
        if let Some(v) = self.init_mu {
            i.mu_nu = v;
        }
        let c = &mut spec.calib;
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.grad_tol {
            c.grad_tol = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.theta {
            c.theta = v;
        }
    }
}

#[derive(Args)]
struct PriceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spot price.
    #[arg(long, default_value_t = 10.0)]
    s0: f64,
    /// Initial variance.
    #[arg(long, default_value_t = 0.16)]
    nu0: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for the single-run report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which study to run.
    #[arg(value_enum)]
    kind: StudyKindArg,
    /// Output directory (default: results/<study>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed of the random-initialization study.
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per deviation level.
    #[arg(long)]
    samples: Option<usize>,
    /// Comma-separated deviation levels, e.g. 0.05,0.25.
    #[arg(long, value_delimiter = ',')]
    deviations: Option<Vec<f64>>,
    /// Comma-separated N_x list of the mesh study (each paired with
    /// N_nu = N_x/2 and N_nu = N_x).
    #[arg(long, value_delimiter = ',')]
    mesh_list: Option<Vec<usize>>,
    /// Comma-separated maturities of the maturity study.
    #[arg(long, value_delimiter = ',')]
    maturities: Option<Vec<f64>>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StudyKindArg {
    Mesh,
    Maturity,
    Random,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    fd_step: f64,
}

fn load_spec(config: &Option<PathBuf>) -> Result<ExperimentSpec, Error> {
    match config {
        None => Ok(ExperimentSpec::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn cmd_price(spec: &ExperimentSpec, args: &PriceArgs) -> Result<(), Error> {
    let grid = build_grid(&spec.market, spec.n_x, spec.n_nu, spec.n_tau, &spec.truncation)?;
    let start = Instant::now();
    let traj = forward::solve_forward_theta(&spec.reference, &spec.market, &grid, spec.calib.theta)?;
    let pde = forward::interpolate_price(&traj, args.s0, args.nu0, grid.n_tau)?;
    let solve_time = start.elapsed();
    let analytic =
        heston_analytic_put(args.s0, args.nu0, &spec.market, &spec.reference, &QuadratureSpec::default())?;
    println!("put(s0={}, nu0={}, T={})", args.s0, args.nu0, spec.market.maturity);
    println!("  pde       = {pde:.8}   ({} x {} x {}, {:?})", spec.n_x, spec.n_nu, spec.n_tau, solve_time);
    println!("  analytic  = {analytic:.8}");
    println!("  rel diff  = {:.3e}", (pde - analytic).abs() / analytic.abs().max(f64::MIN_POSITIVE));
    Ok(())
}

fn print_report_summary(report: &StudyReport) {
    let total_ms: u64 = report.runs.iter().map(|r| r.wall_ms).sum();
    let failures = report.runs.iter().filter(|r| r.status.starts_with("error")).count();
    println!(
        "{} study: {} runs, {} failures, total wall time {} ms",
        match report.kind {
            StudyKind::Mesh => "mesh",
            StudyKind::Maturity => "maturity",
            StudyKind::RandomInit => "random-init",
            StudyKind::Single => "single",
        },
        report.runs.len(),
        failures,
        total_ms
    );
    if report.projected_draws > 0 {
        println!("  {} infeasible draws projected onto the admissible set", report.projected_draws);
    }
    for r in &report.runs {
        println!(
            "  run {:3}: {} iters={} J0={:.4e} Jopt={:.4e} improvement={:.4} ({} ms)",
            r.run_id, r.status, r.iterations, r.j0, r.j_opt, r.improvement, r.wall_ms
        );
    }
}

fn emit_if_requested(
    report: &StudyReport,
    spec: &ExperimentSpec,
    dir: &Option<PathBuf>,
    default_name: &str,
) -> Result<(), Error> {
    let dir = dir.clone().unwrap_or_else(|| PathBuf::from("results").join(default_name));
    let files = emit_report(report, spec, &dir)?;
    for f in files {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

fn run_failures(report: &StudyReport) -> bool {
    report.runs.iter().any(|r| r.status.starts_with("error"))
}

fn cmd_calibrate(spec: &ExperimentSpec, args: &CalibrateArgs) -> Result<bool, Error> {
    let report = run_single(spec)?;
    print_report_summary(&report);
    let run = &report.runs[0];
    println!(
        "  optimized parameters: sigma={:.6} rho={:.6} kappa={:.6} mu={:.6}",
        run.optimized.sigma_nu, run.optimized.rho, run.optimized.kappa_nu, run.optimized.mu_nu
    );
    if args.out.is_some() {
        emit_if_requested(&report, spec, &args.out, "single")?;
    }
    Ok(run_failures(&report))
}

fn cmd_study(spec: &mut ExperimentSpec, args: &StudyArgs) -> Result<bool, Error> {
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(samples) = args.samples {
        spec.samples = samples;
    }
    if let Some(deviations) = &args.deviations {
        spec.deviations = deviations.clone();
    }
    if let Some(mesh_list) = &args.mesh_list {
        spec.meshes = mesh_list.iter().flat_map(|&nx| [(nx, nx / 2), (nx, nx)]).collect();
    }
    if let Some(maturities) = &args.maturities {
        spec.maturities = maturities.clone();
    }
    let (report, name) = match args.kind {
        StudyKindArg::Mesh => {
            spec.kind = StudyKind::Mesh;
            (run_mesh_study(spec)?, "mesh")
        }
        StudyKindArg::Maturity => {
            spec.kind = StudyKind::Maturity;
            (run_maturity_study(spec)?, "maturity")
        }
        StudyKindArg::Random => {
            spec.kind = StudyKind::RandomInit;
            (run_random_init_study(spec)?, "random")
        }
    };
    print_report_summary(&report);
    emit_if_requested(&report, spec, &args.out, name)?;
    Ok(run_failures(&report))
}

fn cmd_gradcheck(spec: &ExperimentSpec, args: &GradcheckArgs) -> Result<(), Error> {
    let grid = build_grid(&spec.market, spec.n_x, spec.n_nu, spec.n_tau, &spec.truncation)?;
    let data = generate_data(&spec.reference, &spec.market, &grid, spec.calib.theta)?;
    let u = spec.initial;

    let v = forward::solve_forward_theta(&u, &spec.market, &grid, spec.calib.theta)?;
    let residual = residual_trajectory(&v, &data)?;
    let phi = solve_adjoint_theta(&u, &spec.market, &grid, &residual, spec.calib.theta)?;
    let adj = assemble_gradient(
        &v,
        &phi,
        &u,
        &spec.market,
        &grid,
        spec.calib.lambda,
        spec.calib.u_ref.as_ref(),
    )?;
    let fd = finite_difference_gradient(&u, &data, &spec.market, &grid, &spec.calib, args.fd_step)?;

    println!(
        "gradient check at sigma={} rho={} kappa={} mu={} (grid {} x {} x {}, h={})",
        u.sigma_nu, u.rho, u.kappa_nu, u.mu_nu, spec.n_x, spec.n_nu, spec.n_tau, args.fd_step
    );
    println!("{:<10} {:>15} {:>15} {:>10}", "component", "adjoint", "fd", "rel err");
    for (name, (a, f)) in ["sigma_nu", "rho", "kappa_nu", "mu_nu"]
        .iter()
        .zip(adj.as_array().iter().zip(fd.as_array().iter()))
    {
        let rel = (a - f).abs() / f.abs().max(1e-300);
        println!("{name:<10} {a:>15.6e} {f:>15.6e} {rel:>10.4}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let mut spec = match load_spec(&cli.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    let common = match &cli.command {
        Command::Price(a) => a.common.clone(),
        Command::Calibrate(a) => a.common.clone(),
        Command::Study(a) => a.common.clone(),
        Command::Gradcheck(a) => a.common.clone(),
    };
    common.apply(&mut spec);
    if let Err(e) = spec.validate() {
        eprintln!("config error: {e}");
        return ExitCode::from(2);
    }

    let outcome = match &cli.command {
        Command::Price(args) => cmd_price(&spec, args).map(|()| false),
        Command::Calibrate(args) => cmd_calibrate(&spec, args),
        Command::Study(args) => cmd_study(&mut spec, args),
        Command::Gradcheck(args) => cmd_gradcheck(&spec, args).map(|()| false),
    };

    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e @ (Error::InvalidConfig(_) | Error::InvalidGrid(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
