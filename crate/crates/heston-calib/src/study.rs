//! Experiment harness: synthetic data generation, the mesh / maturity /
//! random-initialization studies, and report emission.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate, project, AcceptedStep, CalibConfig};
use crate::error::{Error, Result};
use crate::forward::{solve_forward_theta, Trajectory};
use crate::grid::{build_grid, Grid, TruncationConfig};
use crate::market::{HestonParams, MarketSpec};

/// Parameters the synthetic data is generated from, and the initial guess
/// of the mesh and maturity studies.
pub fn reference_parameters() -> HestonParams {
    HestonParams::new(0.9, 0.1, 5.0, 0.16)
}

pub fn default_initial_guess() -> HestonParams {
    HestonParams::new(0.92, 0.05, 5.2, 0.18)
}

pub fn default_market() -> MarketSpec {
    MarketSpec { strike: 10.0, rate: 0.1, dividend: 0.05, maturity: 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Mesh,
    Maturity,
    RandomInit,
    Single,
}

impl StudyKind {
    fn name(&self) -> &'static str {
        match self {
            StudyKind::Mesh => "mesh",
            StudyKind::Maturity => "maturity",
            StudyKind::RandomInit => "random_init",
            StudyKind::Single => "single",
        }
    }
}

/// Full description of one study run, serializable as the config snapshot.
/// All fields default, so a config file may specify any subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub kind: StudyKind,
    pub market: MarketSpec,
    /// Parameters generating the synthetic data.
    pub reference: HestonParams,
    /// Initial guess for mesh/maturity/single studies.
    pub initial: HestonParams,
    /// Maximum relative deviations of the random-init study.
    pub deviations: Vec<f64>,
    /// Samples per deviation level.
    pub samples: usize,
    /// (n_x, n_nu) pairs of the mesh study.
    pub meshes: Vec<(usize, usize)>,
    /// Maturities of the maturity study.
    pub maturities: Vec<f64>,
    pub n_x: usize,
    pub n_nu: usize,
    pub n_tau: usize,
    pub seed: u64,
    pub truncation: TruncationConfig,
    pub calib: CalibConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let meshes = [80usize, 90, 100, 110, 120, 130, 140]
            .iter()
            .flat_map(|&nx| [(nx, nx / 2), (nx, nx)])
            .collect();
        Self {
            kind: StudyKind::Single,
            market: default_market(),
            reference: reference_parameters(),
            initial: default_initial_guess(),
            deviations: vec![0.05, 0.15, 0.25],
            samples: 100,
            meshes,
            maturities: vec![0.25, 0.5, 1.0, 2.0, 5.0],
            n_x: 80,
            n_nu: 80,
            n_tau: 40,
            seed: 7,
            truncation: TruncationConfig::default(),
            calib: CalibConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.calib.validate()?;
        if self.samples < 1 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        for d in &self.deviations {
            if !(0.0..1.0).contains(d) {
                return Err(Error::InvalidConfig(format!(
                    "deviation level must lie in [0, 1), got {d}"
                )));
            }
        }
        for (nx, nnu) in &self.meshes {
            if *nx < 4 || *nnu < 4 {
                return Err(Error::InvalidConfig(format!(
                    "mesh entries must be at least 4, got ({nx}, {nnu})"
                )));
            }
        }
        for t in &self.maturities {
            if !(*t > 0.0) {
                return Err(Error::InvalidConfig(format!("maturity must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// One calibration run inside a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub study: String,
    pub run_id: usize,
    pub seed: u64,
    pub delta: f64,
    pub n_x: usize,
    pub n_nu: usize,
    pub n_tau: usize,
    pub maturity: f64,
    pub initial: HestonParams,
    pub optimized: HestonParams,
    pub j0: f64,
    pub j_opt: f64,
    pub improvement: f64,
    /// Per-parameter change (initial - optimized) / initial.
    pub param_change: [f64; 4],
    pub iterations: usize,
    pub status: String,
    /// Wall time of the run. Reported on stdout and kept in memory; the
    /// emitted tables pin this column to zero so reports stay byte-identical
    /// across reruns.
    pub wall_ms: u64,
    /// Accepted steps, for post-hoc verification of the Armijo inequality.
    pub steps: Vec<AcceptedStep>,
}

/// A study's runs plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub runs: Vec<RunRecord>,
    /// Random draws that violated feasibility and were projected.
    pub projected_draws: usize,
}

/// Percentage improvement (j0 - j_opt) / j0 of the cost.
pub fn improvement(j0: f64, j_opt: f64) -> Result<f64> {
    if !(j0 > 0.0) {
        return Err(Error::ImprovementUndefined(j0));
    }
    Ok((j0 - j_opt) / j0)
}

/// Synthetic data: a forward solve under the reference parameters on the
/// exact grid later used for calibration.
pub fn generate_data(
    ref_params: &HestonParams,
    market: &MarketSpec,
    grid: &Grid,
    theta: f64,
) -> Result<Trajectory> {
    solve_forward_theta(ref_params, market, grid, theta)
}

fn relative_change(initial: &HestonParams, optimized: &HestonParams) -> [f64; 4] {
    let a = initial.as_array();
    let b = optimized.as_array();
    let mut out = [0.0; 4];
    for c in 0..4 {
        out[c] = if a[c] != 0.0 { (a[c] - b[c]) / a[c] } else { 0.0 };
    }
    out
}

struct RunSetup {
    run_id: usize,
    delta: f64,
    n_x: usize,
    n_nu: usize,
    n_tau: usize,
    market: MarketSpec,
    initial: HestonParams,
    data: Arc<Trajectory>,
    grid: Grid,
}

fn execute(setup: RunSetup, spec: &ExperimentSpec) -> RunRecord {
    let start = Instant::now();
    let outcome = calibrate(&setup.initial, &setup.data, &setup.market, &setup.grid, &spec.calib);
    let wall_ms = start.elapsed().as_millis() as u64;
    match outcome {
        Ok(res) => RunRecord {
            study: spec.kind.name().to_string(),
            run_id: setup.run_id,
            seed: spec.seed,
            delta: setup.delta,
            n_x: setup.n_x,
            n_nu: setup.n_nu,
            n_tau: setup.n_tau,
            maturity: setup.market.maturity,
            initial: setup.initial,
            optimized: res.params,
            j0: res.cost_history[0],
            j_opt: *res.cost_history.last().unwrap(),
            improvement: res.improvement,
            param_change: relative_change(&setup.initial, &res.params),
            iterations: res.iterations,
            status: res.status.to_string(),
            wall_ms,
            steps: res.steps,
        },
        Err(e) => RunRecord {
            study: spec.kind.name().to_string(),
            run_id: setup.run_id,
            seed: spec.seed,
            delta: setup.delta,
            n_x: setup.n_x,
            n_nu: setup.n_nu,
            n_tau: setup.n_tau,
            maturity: setup.market.maturity,
            initial: setup.initial,
            optimized: setup.initial,
            j0: f64::NAN,
            j_opt: f64::NAN,
            improvement: 0.0,
            param_change: [0.0; 4],
            iterations: 0,
            status: format!("error: {e}"),
            wall_ms,
            steps: Vec::new(),
        },
    }
}

fn run_all(setups: Vec<RunSetup>, spec: &ExperimentSpec) -> Vec<RunRecord> {
    let mut runs: Vec<RunRecord> =
        setups.into_par_iter().map(|s| execute(s, spec)).collect();
    runs.sort_by_key(|r| r.run_id);
    runs
}

/// One calibration per mesh pair; rows are keyed by n_nu in the plot data
/// since the default mesh list makes those values unique.
pub fn run_mesh_study(spec: &ExperimentSpec) -> Result<StudyReport> {
    spec.validate()?;
    let mut setups = Vec::new();
    for (run_id, &(n_x, n_nu)) in spec.meshes.iter().enumerate() {
        let grid = build_grid(&spec.market, n_x, n_nu, spec.n_tau, &spec.truncation)?;
        let data = Arc::new(generate_data(&spec.reference, &spec.market, &grid, spec.calib.theta)?);
        setups.push(RunSetup {
            run_id,
            delta: 0.0,
            n_x,
            n_nu,
            n_tau: spec.n_tau,
            market: spec.market,
            initial: spec.initial,
            data,
            grid,
        });
    }
    Ok(StudyReport { kind: StudyKind::Mesh, runs: run_all(setups, spec), projected_draws: 0 })
}

/// One calibration per maturity, with n_tau scaled to keep dtau fixed.
pub fn run_maturity_study(spec: &ExperimentSpec) -> Result<StudyReport> {
    spec.validate()?;
    let dtau = spec.market.maturity / spec.n_tau as f64;
    let mut setups = Vec::new();
    for (run_id, &maturity) in spec.maturities.iter().enumerate() {
        let market = MarketSpec { maturity, ..spec.market };
        let n_tau = ((maturity / dtau).round() as usize).max(4);
        let grid = build_grid(&market, spec.n_x, spec.n_nu, n_tau, &spec.truncation)?;
        let data = Arc::new(generate_data(&spec.reference, &market, &grid, spec.calib.theta)?);
        setups.push(RunSetup {
            run_id,
            delta: 0.0,
            n_x: spec.n_x,
            n_nu: spec.n_nu,
            n_tau,
            market,
            initial: spec.initial,
            data,
            grid,
        });
    }
    Ok(StudyReport { kind: StudyKind::Maturity, runs: run_all(setups, spec), projected_draws: 0 })
}

/// Draws `samples` initial values per deviation level, uniformly per
/// component in [u_ref (1 - delta), u_ref (1 + delta)], projects infeasible
/// draws (never discards them), and calibrates each.
pub fn run_random_init_study(spec: &ExperimentSpec) -> Result<StudyReport> {
    spec.validate()?;
    let grid = build_grid(&spec.market, spec.n_x, spec.n_nu, spec.n_tau, &spec.truncation)?;
    let data = Arc::new(generate_data(&spec.reference, &spec.market, &grid, spec.calib.theta)?);

    // All draws come from one seeded stream, in a fixed order, before any
    // parallel work: reports are deterministic for a given seed.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut setups = Vec::new();
    let mut projected_draws = 0usize;
    let mut run_id = 0usize;
    for &delta in &spec.deviations {
        for _ in 0..spec.samples {
            let r = spec.reference.as_array();
            let mut draw = [0.0; 4];
            for c in 0..4 {
                let lo = r[c] * (1.0 - delta);
                let hi = r[c] * (1.0 + delta);
                draw[c] = if lo == hi { lo } else { Uniform::new_inclusive(lo, hi).sample(&mut rng) };
            }
            let raw = HestonParams::from_array(draw);
            let initial = project(&raw, &spec.calib);
            if initial != raw {
                projected_draws += 1;
            }
            setups.push(RunSetup {
                run_id,
                delta,
                n_x: spec.n_x,
                n_nu: spec.n_nu,
                n_tau: spec.n_tau,
                market: spec.market,
                initial,
                data: Arc::clone(&data),
                grid,
            });
            run_id += 1;
        }
    }
    Ok(StudyReport { kind: StudyKind::RandomInit, runs: run_all(setups, spec), projected_draws })
}

/// A single calibration from the configured initial guess.
pub fn run_single(spec: &ExperimentSpec) -> Result<StudyReport> {
    spec.validate()?;
    let grid = build_grid(&spec.market, spec.n_x, spec.n_nu, spec.n_tau, &spec.truncation)?;
    let data = Arc::new(generate_data(&spec.reference, &spec.market, &grid, spec.calib.theta)?);
    let setups = vec![RunSetup {
        run_id: 0,
        delta: 0.0,
        n_x: spec.n_x,
        n_nu: spec.n_nu,
        n_tau: spec.n_tau,
        market: spec.market,
        initial: spec.initial,
        data,
        grid,
    }];
    Ok(StudyReport { kind: StudyKind::Single, runs: run_all(setups, spec), projected_draws: 0 })
}

const REPORT_HEADER: &str = "study,run_id,seed,delta,N_x,N_nu,N_tau,T,sigma0,rho0,kappa0,mu0,\
sigma_opt,rho_opt,kappa_opt,mu_opt,J0,Jopt,improvement,iters,status,wall_ms";

fn format_row(r: &RunRecord) -> String {
    let i = r.initial.as_array();
    let o = r.optimized.as_array();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.study,
        r.run_id,
        r.seed,
        r.delta,
        r.n_x,
        r.n_nu,
        r.n_tau,
        r.maturity,
        i[0],
        i[1],
        i[2],
        i[3],
        o[0],
        o[1],
        o[2],
        o[3],
        r.j0,
        r.j_opt,
        r.improvement,
        r.iterations,
        r.status,
        // Zeroed in the table for byte-identical reruns; see RunRecord.
        0
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Writes the tabular report, the config snapshot and the per-figure plot
/// data for a study. Returns the emitted file paths.
pub fn emit_report(
    report: &StudyReport,
    spec: &ExperimentSpec,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut table = String::from(REPORT_HEADER);
    table.push('\n');
    for r in &report.runs {
        table.push_str(&format_row(r));
        table.push('\n');
    }
    let report_path = dir.join("report.csv");
    write_file(&report_path, &table)?;
    written.push(report_path);

    let snapshot = serde_json::json!({
        "spec": spec,
        "projected_draws": report.projected_draws,
    });
    let config_path = dir.join("config.json");
    write_file(&config_path, &format!("{}\n", serde_json::to_string_pretty(&snapshot)?))?;
    written.push(config_path);

    let figures: Vec<(String, String)> = match report.kind {
        StudyKind::Mesh => {
            let key = "N_nu";
            vec![
                figure(report, key, "improvement", |r| vec![r.n_nu as f64, r.improvement]),
                figure(report, key, "param_change", |r| {
                    let c = r.param_change;
                    vec![r.n_nu as f64, c[0], c[1], c[2], c[3]]
                }),
                figure(report, key, "iterations", |r| vec![r.n_nu as f64, r.iterations as f64]),
            ]
        }
        StudyKind::Maturity => {
            let key = "T";
            vec![
                figure(report, key, "improvement", |r| vec![r.maturity, r.improvement]),
                figure(report, key, "param_change", |r| {
                    let c = r.param_change;
                    vec![r.maturity, c[0], c[1], c[2], c[3]]
                }),
                figure(report, key, "iterations", |r| vec![r.maturity, r.iterations as f64]),
            ]
        }
        StudyKind::RandomInit => vec![
            figure(report, "run_id", "cost", |r| vec![r.run_id as f64, r.delta, r.j0, r.j_opt]),
            figure(report, "run_id", "iterations", |r| {
                vec![r.run_id as f64, r.delta, r.iterations as f64]
            }),
            figure(report, "run_id", "params", |r| {
                let o = r.optimized.as_array();
                vec![r.run_id as f64, r.delta, o[0], o[1], o[2], o[3]]
            }),
        ],
        StudyKind::Single => Vec::new(),
    };
    for (name, contents) in figures {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

fn figure(
    report: &StudyReport,
    key: &str,
    what: &str,
    row: impl Fn(&RunRecord) -> Vec<f64>,
) -> (String, String) {
    let columns: &str = match (report.kind, what) {
        (StudyKind::Mesh | StudyKind::Maturity, "improvement") => "improvement",
        (StudyKind::Mesh | StudyKind::Maturity, "param_change") => {
            "dsigma_rel,drho_rel,dkappa_rel,dmu_rel"
        }
        (StudyKind::Mesh | StudyKind::Maturity, "iterations") => "iterations",
        (StudyKind::RandomInit, "cost") => "delta,J0,Jopt",
        (StudyKind::RandomInit, "iterations") => "delta,iterations",
        (StudyKind::RandomInit, "params") => "delta,sigma_opt,rho_opt,kappa_opt,mu_opt",
        _ => "value",
    };
    let mut out = format!("{key},{columns}\n");
    for r in &report.runs {
        let vals = row(r);
        let line: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    (format!("fig_{}_{}.csv", report.kind.name(), what), out)
}
