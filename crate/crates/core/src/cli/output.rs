//! Result files: JSON documents and figure-data CSVs.
//!
//! Every CSV has a pinned header registered in [`CSV_SCHEMAS`] under a
//! version; `verify --suite schema` compares written headers against it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::measurement::to_db;
use crate::protocols::{AngleFit, AnglePoint, ExperimentResult, SweepRow, TrialResult};

use super::config::RunConfig;

pub struct CsvSchema {
    pub name: &'static str,
    pub version: u32,
    pub header: &'static str,
}

pub const CSV_SCHEMAS: &[CsvSchema] = &[
    CsvSchema {
        name: "trials",
        version: 1,
        header: "trial_index,theta1,theta2,theta0_true,theta_eff_true,jz,jz_eff,x1_prime,x2_prime,\
preparation_mean_eta,preparation_n_eff,preparation_p_eff,readout_mean_eta,readout_mean_eta_sq,readout_n_eff,\
readout_p_eff,readout_delta_eff,preparation_shift_hz,readout_shift_hz",
    },
    CsvSchema {
        name: "fig2",
        version: 1,
        header: "free_fall_ms,epsilon,theta0_mean,theta_eff_mean,theta_eff_sem",
    },
    CsvSchema {
        name: "fig2_fits",
        version: 1,
        header: "free_fall_ms,slope,slope_se,slope_ci68,n_points",
    },
    CsvSchema {
        name: "fig3a",
        version: 1,
        header: "free_fall_ms,reshape_ms,one_minus_p_eff,ci68,one_minus_p_eff_css,ci68_css",
    },
    CsvSchema {
        name: "fig3b",
        version: 1,
        header: "free_fall_ms,p_eff,delta_theta_sq,ci68,analytic_curve,analytic_run",
    },
    CsvSchema {
        name: "fig4a",
        version: 1,
        header: "free_fall_ms,coherence,ci68,coherence_model",
    },
    CsvSchema {
        name: "fig4b",
        version: 1,
        header: "free_fall_ms,xi_sq,ci68_low,ci68_high,xi_db,xi_db_ci68_low,xi_db_ci68_high",
    },
    CsvSchema {
        name: "calibration",
        version: 1,
        header: "free_fall_ms,mean_eta_shift_fit,mean_eta_shift_fit_ci68,mean_eta_direct,p_eff,slope_hz_per_atom",
    },
];

pub fn schema(name: &str) -> &'static CsvSchema {
    CSV_SCHEMAS
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("unregistered CSV schema {name}"))
}

pub fn schema_versions() -> std::collections::BTreeMap<String, String> {
    CSV_SCHEMAS
        .iter()
        .map(|s| (s.name.to_string(), format!("{}/v{}", s.name, s.version)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

impl Software {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Serialize)]
struct TrialRow {
    trial_index: u64,
    theta1: f64,
    theta2: f64,
    theta0_true: f64,
    theta_eff_true: f64,
    jz: f64,
    jz_eff: f64,
    x1_prime: f64,
    x2_prime: f64,
    preparation_mean_eta: f64,
    preparation_n_eff: f64,
    preparation_p_eff: f64,
    readout_mean_eta: f64,
    readout_mean_eta_sq: f64,
    readout_n_eff: f64,
    readout_p_eff: f64,
    readout_delta_eff: f64,
    preparation_shift_hz: f64,
    readout_shift_hz: f64,
}

impl From<&TrialResult> for TrialRow {
    fn from(t: &TrialResult) -> Self {
        Self {
            trial_index: t.trial_index,
            theta1: t.theta1,
            theta2: t.theta2,
            theta0_true: t.theta0_true,
            theta_eff_true: t.theta_eff_true,
            jz: t.jz,
            jz_eff: t.jz_eff,
            x1_prime: t.x1_prime,
            x2_prime: t.x2_prime,
            preparation_mean_eta: t.preparation.mean_eta,
            preparation_n_eff: t.preparation.n_eff,
            preparation_p_eff: t.preparation.p_eff,
            readout_mean_eta: t.readout.mean_eta,
            readout_mean_eta_sq: t.readout.mean_eta_sq,
            readout_n_eff: t.readout.n_eff,
            readout_p_eff: t.readout.p_eff,
            readout_delta_eff: t.readout.delta_eff,
            preparation_shift_hz: t.preparation_shift_hz,
            readout_shift_hz: t.readout_shift_hz,
        }
    }
}

#[derive(Serialize)]
struct Fig2FitRow {
    free_fall_ms: f64,
    slope: f64,
    slope_se: f64,
    slope_ci68: f64,
    n_points: usize,
}

#[derive(Serialize)]
struct Fig3aRow {
    free_fall_ms: f64,
    reshape_ms: Option<f64>,
    one_minus_p_eff: f64,
    ci68: f64,
    one_minus_p_eff_css: Option<f64>,
    ci68_css: Option<f64>,
}

#[derive(Serialize)]
struct Fig3bRow {
    free_fall_ms: f64,
    p_eff: f64,
    delta_theta_sq: f64,
    ci68: f64,
    analytic_curve: f64,
    analytic_run: f64,
}

#[derive(Serialize)]
struct Fig4aRow {
    free_fall_ms: f64,
    coherence: f64,
    ci68: f64,
    coherence_model: f64,
}

#[derive(Serialize)]
struct Fig4bRow {
    free_fall_ms: f64,
    xi_sq: f64,
    ci68_low: f64,
    ci68_high: f64,
    xi_db: f64,
    xi_db_ci68_low: f64,
    xi_db_ci68_high: f64,
}

#[derive(Serialize)]
pub(crate) struct CalibrationRow {
    pub free_fall_ms: f64,
    pub mean_eta_shift_fit: f64,
    pub mean_eta_shift_fit_ci68: f64,
    pub mean_eta_direct: f64,
    pub p_eff: f64,
    pub slope_hz_per_atom: f64,
}

/// Serializes rows with a header row, LF line endings, shortest round-trip floats.
pub fn csv_bytes<T: Serialize>(name: &str, rows: &[T]) -> std::io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w.into_inner().map_err(|e| e.into_error())?;
    let mut out = Vec::with_capacity(body.len() + 256);
    out.extend_from_slice(schema(name).header.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&body);
    Ok(out)
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> std::io::Result<()> {
    fs::write(dir.join(format!("{name}.csv")), csv_bytes(name, rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, doc)?;
    f.write_all(b"\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateDocument {
    pub software: Software,
    pub config: RunConfig,
    pub protocol: crate::protocols::Protocol,
    pub csv_schemas: std::collections::BTreeMap<String, String>,
    pub result: ExperimentResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub software: Software,
    pub config: RunConfig,
    pub csv_schemas: std::collections::BTreeMap<String, String>,
    pub rows: Vec<SweepRow>,
    pub angle_points: Vec<AnglePoint>,
    pub angle_fits: Vec<AngleFit>,
}

pub fn trials_csv(trials: &[TrialResult]) -> std::io::Result<Vec<u8>> {
    let rows: Vec<TrialRow> = trials.iter().map(TrialRow::from).collect();
    csv_bytes("trials", &rows)
}

pub fn write_simulate(dir: &Path, doc: &SimulateDocument) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("result.json"), doc)?;
    fs::write(dir.join("trials.csv"), trials_csv(&doc.result.trials)?)
}

/// The analytic (Δθ)² curve evaluated at each row's p_eff.
pub fn theory_curve(p_eff: f64, n: f64, sigma: f64) -> f64 {
    p_eff / (n * (1.0 - p_eff)) + sigma * sigma
}

pub fn write_sweep(dir: &Path, doc: &SweepDocument) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("sweep.json"), doc)?;
    let theory_n = doc.config.sweep.theory_atoms;
    let theory_sigma = doc.config.sweep.theory_sigma_rad;
    let rows = &doc.rows;
    write_csv(
        dir,
        "fig3a",
        &rows
            .iter()
            .map(|r| Fig3aRow {
                free_fall_ms: r.free_fall_ms,
                reshape_ms: r.reshape_ms,
                one_minus_p_eff: 1.0 - r.p_eff,
                ci68: r.p_eff_sem,
                one_minus_p_eff_css: r.p_eff_css.map(|e| 1.0 - e.p_eff),
                ci68_css: r.p_eff_css_ci68,
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        dir,
        "fig3b",
        &rows
            .iter()
            .map(|r| Fig3bRow {
                free_fall_ms: r.free_fall_ms,
                p_eff: r.p_eff,
                delta_theta_sq: r.delta_theta_sq,
                ci68: r.delta_theta_sq_ci68,
                analytic_curve: theory_curve(r.p_eff, theory_n, theory_sigma),
                analytic_run: r.analytic_delta_theta_sq,
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        dir,
        "fig4a",
        &rows
            .iter()
            .map(|r| Fig4aRow {
                free_fall_ms: r.free_fall_ms,
                coherence: r.ramsey.contrast,
                ci68: r.ramsey.ci68_half_width,
                coherence_model: r.coherence,
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        dir,
        "fig4b",
        &rows
            .iter()
            .map(|r| {
                let s = &r.squeezing;
                Fig4bRow {
                    free_fall_ms: r.free_fall_ms,
                    xi_sq: s.xi_sq,
                    ci68_low: s.xi_sq_ci68_low,
                    ci68_high: s.xi_sq_ci68_high,
                    xi_db: s.xi_db,
                    xi_db_ci68_low: to_db(s.xi_sq_ci68_low),
                    xi_db_ci68_high: to_db(s.xi_sq_ci68_high),
                }
            })
            .collect::<Vec<_>>(),
    )?;
    if !doc.angle_points.is_empty() {
        write_csv(dir, "fig2", &doc.angle_points)?;
        write_csv(
            dir,
            "fig2_fits",
            &doc.angle_fits
                .iter()
                .map(|f| Fig2FitRow {
                    free_fall_ms: f.free_fall_ms,
                    slope: f.fit.slope,
                    slope_se: f.fit.slope_se,
                    slope_ci68: f.fit.slope_ci68,
                    n_points: f.fit.n,
                })
                .collect::<Vec<_>>(),
        )?;
    }
    Ok(())
}

pub(crate) fn write_calibration_csv(dir: &Path, rows: &[CalibrationRow]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(dir, "calibration", rows)
}

fn struct_header<T: Serialize>(row: T) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(row).expect("in-memory write");
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8_lossy(&bytes).lines().next().unwrap_or("").to_string()
}

/// Header implied by each row type's fields, for comparison with [`CSV_SCHEMAS`].
pub fn serialized_headers() -> Vec<(&'static str, String)> {
    let t = TrialResult {
        trial_index: 0,
        theta1: 0.0,
        theta2: 0.0,
        theta0_true: 0.0,
        theta_eff_true: 0.0,
        jz: 0.0,
        jz_eff: 0.0,
        x1_prime: 0.0,
        x2_prime: 0.0,
        preparation: crate::coupling::CouplingStats::from_sums(1, 1.0, 1.0, 1.0).expect("valid"),
        readout: crate::coupling::CouplingStats::from_sums(1, 1.0, 1.0, 1.0).expect("valid"),
        preparation_shift_hz: 0.0,
        readout_shift_hz: 0.0,
    };
    let fit = crate::stats::fit_zero_intercept(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.1]).expect("valid");
    vec![
        ("trials", struct_header(TrialRow::from(&t))),
        (
            "fig2",
            struct_header(AnglePoint {
                free_fall_ms: 0.0,
                epsilon: 0.0,
                theta0_mean: 0.0,
                theta_eff_mean: 0.0,
                theta_eff_sem: 0.0,
            }),
        ),
        (
            "fig2_fits",
            struct_header(Fig2FitRow {
                free_fall_ms: 0.0,
                slope: fit.slope,
                slope_se: fit.slope_se,
                slope_ci68: fit.slope_ci68,
                n_points: fit.n,
            }),
        ),
        (
            "fig3a",
            struct_header(Fig3aRow {
                free_fall_ms: 0.0,
                reshape_ms: None,
                one_minus_p_eff: 0.0,
                ci68: 0.0,
                one_minus_p_eff_css: None,
                ci68_css: None,
            }),
        ),
        (
            "fig3b",
            struct_header(Fig3bRow {
                free_fall_ms: 0.0,
                p_eff: 0.0,
                delta_theta_sq: 0.0,
                ci68: 0.0,
                analytic_curve: 0.0,
                analytic_run: 0.0,
            }),
        ),
        (
            "fig4a",
            struct_header(Fig4aRow {
                free_fall_ms: 0.0,
                coherence: 0.0,
                ci68: 0.0,
                coherence_model: 0.0,
            }),
        ),
        (
            "fig4b",
            struct_header(Fig4bRow {
                free_fall_ms: 0.0,
                xi_sq: 0.0,
                ci68_low: 0.0,
                ci68_high: 0.0,
                xi_db: 0.0,
                xi_db_ci68_low: 0.0,
                xi_db_ci68_high: 0.0,
            }),
        ),
        (
            "calibration",
            struct_header(CalibrationRow {
                free_fall_ms: 0.0,
                mean_eta_shift_fit: 0.0,
                mean_eta_shift_fit_ci68: 0.0,
                mean_eta_direct: 0.0,
                p_eff: 0.0,
                slope_hz_per_atom: 0.0,
            }),
        ),
    ]
}
