//! Self-checks run by `squeezesim verify`: enumeration oracle, analytic
//! agreement of the Monte Carlo, and CSV schema drift.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_stats, CouplingProfile};
use crate::protocols::{
    release_recapture_protocol, run_experiment, CouplingSource, ExperimentOptions, HoldPolicy, Physics, SpinSource,
};
use crate::rng::{stream, Purpose};
use crate::spin::{
    enumerate_css_exact, moments_analytic, moments_closed_form, sample_squeezed, CollectiveSpinState, SpinMoments,
};
use crate::stats::chi_square_ratio_bounds;

use super::config::RunConfig;
use super::output::{schema, serialized_headers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Oracle,
    Analytic,
    Schema,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Absolute tolerance between enumerated and closed-form moments.
    pub oracle_abs: f64,
    pub surrogate_draws: usize,
    /// Allowed deviation of surrogate moments in standard errors.
    pub surrogate_sigma: f64,
    pub analytic_atoms: usize,
    pub analytic_trials: usize,
    /// Width of the χ² band on variance ratios, in σ.
    pub analytic_sigma: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_abs: 1e-12,
            surrogate_draws: 100_000,
            surrogate_sigma: 5.0,
            analytic_atoms: 10_000,
            analytic_trials: 2000,
            analytic_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub invariant: String,
    pub pass: bool,
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(suite: &str, invariant: impl Into<String>, deviation: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.into(),
            invariant: invariant.into(),
            pass: deviation.abs() <= tolerance,
            deviation,
            tolerance,
        }
    }
}

/// η fixtures for eight atoms: uniform, two-level and random in [0.2, 1).
pub fn eta_fixtures(seed: u64) -> Vec<(&'static str, CouplingProfile)> {
    let n = 8;
    let mut rng = stream(seed, 0, Purpose::Fixture);
    let random: Vec<f64> = (0..n).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
    let two_level: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.5 }).collect();
    vec![
        ("homogeneous", CouplingProfile::homogeneous(n).expect("n > 0")),
        ("two_level", CouplingProfile::new(two_level).expect("valid")),
        ("random", CouplingProfile::new(random).expect("valid")),
    ]
}

fn moment_fields(m: &SpinMoments) -> [(&'static str, f64); 6] {
    [
        ("mean_jz", m.mean_jz),
        ("var_jz", m.var_jz),
        ("mean_jz_eff", m.mean_jz_eff),
        ("var_jz_eff", m.var_jz_eff),
        ("var_diff", m.var_diff),
        ("cov_eff_jz", m.cov_eff_jz),
    ]
}

fn oracle(tol: &Tolerances, seed: u64) -> crate::Result<Vec<Check>> {
    let mut out = Vec::new();
    for (name, eta) in eta_fixtures(seed) {
        let stats = coupling_stats(&eta, 1.0)?;
        for tilt in [0.0, 0.05] {
            let exact = enumerate_css_exact(&eta, tilt)?;
            let sigma = 0.5 * f64::sin(tilt);
            let closed = moments_closed_form(eta.len(), stats.n_eff, sigma, 0.25, sigma * sigma);
            let dev = moment_fields(&exact)
                .iter()
                .zip(moment_fields(&closed))
                .map(|((_, a), (_, b))| (a - b).abs())
                .fold(0.0, f64::max);
            out.push(Check::new(
                "oracle",
                format!("css_enumeration_{name}_tilt{tilt}"),
                dev,
                tol.oracle_abs,
            ));
        }
        // Gaussian surrogate: empirical moments against the exchangeable closed forms.
        let state = CollectiveSpinState {
            n: eta.len(),
            tilt_theta: 0.0,
            xi_sq_in: 0.5,
            coherence_c: 1.0,
        };
        let want = moments_analytic(eta.len(), state.xi_sq_in, stats.p_eff.clamp(0.0, 1.0 - 1e-15), 0.0)?.exact;
        let mut rng = stream(seed, 1, Purpose::Fixture);
        let m = tol.surrogate_draws;
        let (mut s_j, mut s_e, mut s_jj, mut s_ee, mut s_dd) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let sample = sample_squeezed(&state, &mut rng)?;
            let j = crate::spin::j_z_total(&sample);
            let e = crate::spin::j_z_eff(&sample, &eta)?;
            s_j += j;
            s_e += e;
            s_jj += j * j;
            s_ee += e * e;
            s_dd += (e - j) * (e - j);
        }
        let mf = m as f64;
        let var = |s2: f64, s1: f64| (s2 - s1 * s1 / mf) / (mf - 1.0);
        let checks = [
            ("var_jz", var(s_jj, s_j), want.var_jz),
            ("var_jz_eff", var(s_ee, s_e), want.var_jz_eff),
            ("var_diff", var(s_dd, s_e - s_j), want.var_diff),
        ];
        for (field, got, expected) in checks {
            if expected == 0.0 {
                out.push(Check::new(
                    "oracle",
                    format!("surrogate_{name}_{field}"),
                    got,
                    tol.oracle_abs.max(1e-9),
                ));
                continue;
            }
            let se = expected * (2.0 / (mf - 1.0)).sqrt();
            out.push(Check::new(
                "oracle",
                format!("surrogate_{name}_{field}"),
                (got - expected) / se,
                tol.surrogate_sigma,
            ));
        }
    }
    Ok(out)
}

/// Two-level readout couplings with half the atoms at `b`, chosen so that
/// 1 − p = (1 + b)²/(2(1 + b²)).
pub fn two_level_for_p_eff(n: usize, p: f64) -> crate::Result<CouplingProfile> {
    if p == 0.0 {
        return CouplingProfile::homogeneous(n);
    }
    if !(0.0..0.5).contains(&p) {
        return Err(crate::error::invalid("p_eff", "two-level fixture covers [0, 0.5)"));
    }
    let r = 1.0 - p;
    // (2r − 1)b² − 2b + (2r − 1) = 0, smaller root
    let a = 2.0 * r - 1.0;
    let b = (1.0 - (1.0 - a * a).sqrt()) / a;
    CouplingProfile::new((0..n).map(|i| if i % 2 == 0 { 1.0 } else { b }).collect())
}

fn analytic(tol: &Tolerances, cfg: &RunConfig, seed: u64) -> crate::Result<Vec<Check>> {
    let mut out = Vec::new();
    let n = tol.analytic_atoms;
    let (lo, hi) = chi_square_ratio_bounds(tol.analytic_trials, tol.analytic_sigma);
    for (k, p) in [0.0, 0.05, 0.1, 0.2, 0.4].into_iter().enumerate() {
        let mut c = cfg.clone();
        c.spin.atoms = n;
        c.spin.source = SpinSource::Squeezed;
        let mut physics: Physics = c.physics()?;
        physics.coupling_source = CouplingSource::Injected {
            preparation: Arc::new(CouplingProfile::homogeneous(n)?),
            readout: Arc::new(two_level_for_p_eff(n, p)?),
        };
        let probes = c.probes()?;
        let protocol = release_recapture_protocol(1.0, 0.0, probes, HoldPolicy::Fixed { hold_ms: 0.0 }, &physics)?;
        let mut opts = ExperimentOptions::new(tol.analytic_trials, crate::rng::derive_seed(seed, k as u64));
        opts.bootstrap_resamples = 2;
        let r = run_experiment(&protocol, &physics, &opts)?;
        let ratio = r.delta_theta.powi(2) / r.analytic_delta_theta_sq;
        let mut check = Check::new("analytic", format!("delta_theta_sq_p{p}"), ratio - 1.0, 0.0);
        check.pass = ratio > lo && ratio < hi;
        check.tolerance = (hi - 1.0).max(1.0 - lo);
        out.push(check);
    }
    Ok(out)
}

fn schema_checks() -> Vec<Check> {
    serialized_headers()
        .into_iter()
        .map(|(name, header)| {
            let s = schema(name);
            let pinned: Vec<&str> = s.header.split(',').collect();
            let written: Vec<&str> = header.split(',').collect();
            let drift =
                pinned.len().abs_diff(written.len()) + pinned.iter().zip(&written).filter(|(a, b)| a != b).count();
            Check::new("schema", format!("{}_v{}_header", s.name, s.version), drift as f64, 0.0)
        })
        .collect()
}

pub fn run_suite(suite: Suite, tol: &Tolerances, cfg: &RunConfig) -> Result<Vec<Check>, String> {
    let seed = cfg.run.seed;
    let mut out = Vec::new();
    if matches!(suite, Suite::Oracle | Suite::All) {
        out.extend(oracle(tol, seed).map_err(|e| e.to_string())?);
    }
    if matches!(suite, Suite::Analytic | Suite::All) {
        out.extend(analytic(tol, cfg, seed).map_err(|e| e.to_string())?);
    }
    if matches!(suite, Suite::Schema | Suite::All) {
        out.extend(schema_checks());
    }
    Ok(out)
}
