//! Command-line front end: `simulate`, `sweep`, `verify` and `calibrate`.
//!
//! Exit status is 0 on success, 1 when a run or a verification invariant
//! fails, 2 when the configuration cannot be used.

pub mod config;
pub mod output;
pub mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::measurement::{calibrate_mean_eta, max_shift, MeanEtaCalibration, ShiftSeries};
use crate::protocols::{
    angle_equivalence_sweep, release_recapture_protocol, run_experiment, sweep_freefall, ExperimentOptions, TrialEngine,
};
use crate::rng::derive_seed;
use crate::stats::mean;

use config::{ConfigError, RunConfig};
use output::{schema_versions, SimulateDocument, Software, SweepDocument};
use verify::{Suite, Tolerances};

#[derive(Debug, Parser)]
#[command(
    name = "squeezesim",
    version,
    about = "Spin-squeezing retrieval after free-space release"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one protocol and write result.json and trials.csv.
    Simulate(CommonArgs),
    /// Run the free-fall sweep and write the figure CSVs.
    Sweep(CommonArgs),
    /// Run self-checks and print one JSON line per invariant.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// TOML file overriding the check tolerances.
        #[arg(long)]
        tolerances: Option<PathBuf>,
    },
    /// Fit the cavity geometry to the target mean coupling and tabulate ⟨η⟩(Δt).
    Calibrate(CommonArgs),
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml_str("schema_version = 1", "<defaults>")?,
    };
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.run.trials = t;
    }
    if let Some(o) = &args.out {
        cfg.run.out_dir = o.display().to_string();
    }
    if cfg.run.trials < 2 {
        return Err(CliError::Config("run.trials must be at least 2".into()));
    }
    Ok(cfg)
}

fn options(cfg: &RunConfig) -> ExperimentOptions {
    ExperimentOptions {
        n_trials: cfg.run.trials,
        master_seed: cfg.run.seed,
        bootstrap_resamples: cfg.run.bootstrap_resamples,
        histogram_bins: cfg.run.histogram_bins,
        coherence_u: 0.0,
    }
}

fn set_threads(n: usize) -> Result<(), CliError> {
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateDocument, CliError> {
    let physics = cfg.physics()?;
    let protocol = cfg.protocol(&physics)?;
    let result = run_experiment(&protocol, &physics, &options(cfg))?;
    let doc = SimulateDocument {
        software: Software::current(),
        config: cfg.clone(),
        protocol,
        csv_schemas: schema_versions(),
        result,
    };
    output::write_simulate(Path::new(&cfg.run.out_dir), &doc)?;
    let r = &doc.result;
    let (lo, hi) = r.squeezing.xi_db_ci68();
    println!(
        "{}: dt = {} ms, N = {}, trials = {}",
        r.label, r.free_fall_ms, r.n_atoms, r.n_trials
    );
    println!(
        "  delta_theta = {:.1} urad (+/- {:.1}), p_eff = {:.4}, N_eff = {:.0}",
        r.delta_theta * 1e6,
        r.delta_theta_bootstrap.std_error * 1e6,
        r.p_eff,
        r.n_eff
    );
    println!(
        "  xi^2 = {:.2} dB [{:.2}, {:.2}], coherence = {:.3}, runtime = {:.1} s",
        r.squeezing.xi_db, lo, hi, r.coherence, r.runtime_s
    );
    Ok(doc)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepDocument, CliError> {
    let physics = cfg.physics()?;
    let settings = cfg.sweep_settings()?;
    if cfg.sweep.free_fall_ms.is_empty() {
        return Err(CliError::Config("sweep.free_fall_ms is empty".into()));
    }
    let rows = sweep_freefall(&cfg.sweep.free_fall_ms, &settings, &physics, &options(cfg))?;
    let (angle_points, angle_fits) = if cfg.sweep.epsilons.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let mut angle_physics = physics.clone();
        angle_physics.spin.n = cfg.sweep.angle_atoms;
        let mut angle_cfg = cfg.clone();
        angle_cfg.spin.atoms = cfg.sweep.angle_atoms;
        let angle_settings = angle_cfg.sweep_settings()?;
        let opts = ExperimentOptions {
            n_trials: cfg.sweep.angle_trials,
            master_seed: derive_seed(cfg.run.seed, u64::MAX),
            ..options(cfg)
        };
        angle_equivalence_sweep(
            &cfg.sweep.free_fall_ms,
            &cfg.sweep.epsilons,
            &angle_settings,
            &angle_physics,
            &opts,
        )?
    };
    let doc = SweepDocument {
        software: Software::current(),
        config: cfg.clone(),
        csv_schemas: schema_versions(),
        rows,
        angle_points,
        angle_fits,
    };
    output::write_sweep(Path::new(&cfg.run.out_dir), &doc)?;
    println!("dt_ms   p_eff     dtheta_urad  xi2_dB   C_ramsey");
    for r in &doc.rows {
        println!(
            "{:<7} {:<9.5} {:<12.1} {:<8.2} {:.4}",
            r.free_fall_ms,
            r.p_eff,
            r.delta_theta * 1e6,
            r.squeezing.xi_db,
            r.ramsey.contrast
        );
    }
    for f in &doc.angle_fits {
        println!(
            "dt = {} ms: slope = {:.4} +/- {:.4}",
            f.free_fall_ms, f.fit.slope, f.fit.slope_ci68
        );
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationEntry {
    #[serde(flatten)]
    pub shift_fit: MeanEtaCalibration,
    pub mean_eta_direct: f64,
    pub p_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationDocument {
    pub software: Software,
    pub config: RunConfig,
    pub geometry: crate::coupling::CalibratedGeometry,
    pub mode: crate::coupling::CavityMode,
    pub atom_fractions: Vec<f64>,
    pub table: Vec<CalibrationEntry>,
}

const ATOM_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Shift-versus-atom-number series per free-fall time, normalized to the Δt = 0 slope.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<CalibrationDocument, CliError> {
    let geometry = cfg.calibration()?;
    let physics = cfg.physics()?;
    let mut times = cfg.sweep.free_fall_ms.clone();
    if !times.contains(&0.0) {
        times.insert(0, 0.0);
    }
    let probes = cfg.probes()?;
    let mut series = Vec::new();
    let mut direct = Vec::new();
    for (k, &dt) in times.iter().enumerate() {
        let mut counts = Vec::new();
        let mut shifts = Vec::new();
        for (j, frac) in ATOM_FRACTIONS.iter().enumerate() {
            let mut ph = physics.clone();
            ph.spin.n = ((cfg.spin.atoms as f64) * frac).round() as usize;
            let protocol = release_recapture_protocol(dt, 0.0, probes, cfg.protocol.hold, &ph)?;
            let engine = TrialEngine::new(&protocol, &ph)?;
            let seed = derive_seed(derive_seed(cfg.run.seed, k as u64), j as u64);
            let trials = (0..cfg.run.trials as u64)
                .map(|t| engine.run(seed, t))
                .collect::<crate::Result<Vec<_>>>()?;
            counts.push(ph.spin.n as f64);
            shifts.push(mean(&trials.iter().map(|t| max_shift(&t.readout)).collect::<Vec<_>>()));
            if j + 1 == ATOM_FRACTIONS.len() {
                let eta = mean(&trials.iter().map(|t| t.readout.mean_eta).collect::<Vec<_>>());
                let p = mean(&trials.iter().map(|t| t.readout.p_eff).collect::<Vec<_>>());
                direct.push((eta, p));
            }
        }
        series.push(ShiftSeries {
            dt_ms: dt,
            atom_counts: counts,
            max_shifts_hz: shifts,
        });
    }
    let fits = calibrate_mean_eta(&series, cfg.cavity.target_mean_eta)?;
    let table: Vec<CalibrationEntry> = fits
        .into_iter()
        .zip(direct)
        .map(|(f, (eta, p))| CalibrationEntry {
            shift_fit: f,
            mean_eta_direct: eta,
            p_eff: p,
        })
        .collect();
    let doc = CalibrationDocument {
        software: Software::current(),
        config: cfg.clone(),
        geometry,
        mode: physics.mode,
        atom_fractions: ATOM_FRACTIONS.to_vec(),
        table,
    };
    let dir = Path::new(&cfg.run.out_dir);
    std::fs::create_dir_all(dir)?;
    output::write_json(&dir.join("calibration.json"), &doc)?;
    let rows: Vec<output::CalibrationRow> = doc
        .table
        .iter()
        .map(|e| output::CalibrationRow {
            free_fall_ms: e.shift_fit.dt_ms,
            mean_eta_shift_fit: e.shift_fit.mean_eta,
            mean_eta_shift_fit_ci68: e.shift_fit.mean_eta_ci68,
            mean_eta_direct: e.mean_eta_direct,
            p_eff: e.p_eff,
            slope_hz_per_atom: e.shift_fit.slope,
        })
        .collect();
    output::write_calibration_csv(dir, &rows)?;
    println!(
        "waist = {} um, dk = {}, <eta>(0) = {:.6} (target {})",
        doc.mode.waist_um, doc.mode.commensurability_detuning, geometry.achieved_mean_eta, geometry.target_mean_eta
    );
    for e in &doc.table {
        println!(
            "dt = {:<5} ms  <eta> = {:.4} (direct {:.4})  p_eff = {:.4}",
            e.shift_fit.dt_ms, e.shift_fit.mean_eta, e.mean_eta_direct, e.p_eff
        );
    }
    Ok(doc)
}

/// Runs the checks, prints JSON lines, and reports whether all passed.
pub fn cmd_verify(cfg: &RunConfig, suite: Suite, tol: &Tolerances) -> Result<bool, CliError> {
    let checks = verify::run_suite(suite, tol, cfg).map_err(CliError::Run)?;
    let mut lines = String::new();
    for c in &checks {
        lines.push_str(&serde_json::to_string(c).map_err(|e| CliError::Run(e.to_string()))?);
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(dir) = Some(Path::new(&cfg.run.out_dir)).filter(|d| d.exists()) {
        std::fs::write(dir.join("verify.jsonl"), &lines)?;
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn load_tolerances(path: Option<&Path>) -> Result<Tolerances, CliError> {
    match path {
        None => Ok(Tolerances::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match &cli.command {
        Command::Simulate(a) => set_threads(a.threads)
            .and_then(|_| load_config(a))
            .and_then(|c| cmd_simulate(&c))
            .map(|_| true),
        Command::Sweep(a) => set_threads(a.threads)
            .and_then(|_| load_config(a))
            .and_then(|c| cmd_sweep(&c))
            .map(|_| true),
        Command::Calibrate(a) => set_threads(a.threads)
            .and_then(|_| load_config(a))
            .and_then(|c| cmd_calibrate(&c))
            .map(|_| true),
        Command::Verify {
            common,
            suite,
            tolerances,
        } => set_threads(common.threads)
            .and_then(|_| load_config(common))
            .and_then(|c| Ok((c, load_tolerances(tolerances.as_deref())?)))
            .and_then(|(c, t)| cmd_verify(&c, *suite, &t)),
    };
    match outcome {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
