//! QND probe model, angle inference and the estimators built on it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingStats;
use crate::error::{invalid, Error, Result};
use crate::stats::{fit_linear, propagate_xi_sq_ci, quadratic_extremum_fit, sample_variance, ExtremumFit, Uncertain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRole {
    Preparation,
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub role: ProbeRole,
    /// Quadrature units per spin flip.
    pub discriminator: f64,
    /// var(X) of the probe quadrature, quadrature units².
    pub quadrature_noise_var: f64,
    /// Angle variance added by probe-induced spin flips, rad².
    pub spin_flip_noise_var: f64,
    /// AC-Stark phase of the probe in units of π.
    pub strength_label: f64,
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discriminator > 0.0 && self.discriminator.is_finite()) {
            return Err(invalid("discriminator", "must be positive and finite"));
        }
        if !(self.quadrature_noise_var >= 0.0 && self.spin_flip_noise_var >= 0.0) {
            return Err(invalid("noise_var", "noise variances must be non-negative"));
        }
        Ok(())
    }

    /// Noiseless probe with unit discriminator.
    pub fn ideal(role: ProbeRole) -> Self {
        Self {
            role,
            discriminator: 1.0,
            quadrature_noise_var: 0.0,
            spin_flip_noise_var: 0.0,
            strength_label: match role {
                ProbeRole::Preparation => 0.6,
                ProbeRole::Readout => 1.0,
            },
        }
    }

    /// Angle variance contributed by this probe when converting with `scale_atoms`.
    pub fn angle_noise_var(&self, scale_atoms: f64) -> f64 {
        4.0 * self.quadrature_noise_var / (self.discriminator * scale_atoms).powi(2) + self.spin_flip_noise_var
    }

    /// Noise in spin units, var(X)/D², that the estimator of N_eff subtracts.
    pub fn jz_noise_var(&self, scale_atoms: f64) -> f64 {
        self.quadrature_noise_var / self.discriminator.powi(2)
            + self.spin_flip_noise_var * scale_atoms * scale_atoms / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub x_prime: f64,
    pub discriminator: f64,
    pub inferred_jz: f64,
    pub inferred_theta: f64,
    pub scale_atoms: f64,
}

/// X′ = D·(J + J_flip) + X with X ~ N(0, var X) and J_flip ~ N(0, σ_flip²·scale²/4).
///
/// The spin-flip term is referred to the angle scale so that it adds exactly
/// σ_flip² to the inferred angle variance.
pub fn probe_quadrature<R: Rng + ?Sized>(
    jz_value: f64,
    probe: &ProbeConfig,
    scale_atoms: f64,
    rng: &mut R,
) -> Result<ProbeRecord> {
    probe.validate()?;
    if !(scale_atoms > 0.0) {
        return Err(invalid("scale_atoms", "must be positive"));
    }
    let z_flip: f64 = rng.sample(StandardNormal);
    let z_x: f64 = rng.sample(StandardNormal);
    let flip = probe.spin_flip_noise_var.sqrt() * 0.5 * scale_atoms * z_flip;
    let d = probe.discriminator;
    let x_prime = d * (jz_value + flip) + probe.quadrature_noise_var.sqrt() * z_x;
    Ok(ProbeRecord {
        x_prime,
        discriminator: d,
        inferred_jz: x_prime / d,
        inferred_theta: 2.0 * x_prime / (d * scale_atoms),
        scale_atoms,
    })
}

/// θ = 2X′/(D·scale).
pub fn infer_theta(record: &ProbeRecord, scale_atoms: f64) -> Result<f64> {
    if !(scale_atoms > 0.0) {
        return Err(invalid("scale_atoms", "must be positive"));
    }
    Ok(2.0 * record.x_prime / (record.discriminator * scale_atoms))
}

/// δ_cav = δ_eff·J_z,eff, Hz.
pub fn cavity_shift(jz_eff: f64, stats: &CouplingStats) -> f64 {
    stats.delta_eff * jz_eff
}

/// Magnitude of the shift with every atom in one state, δ_eff·N_eff/2.
pub fn max_shift(stats: &CouplingStats) -> f64 {
    0.5 * stats.delta_eff * stats.n_eff
}

pub fn broadened_linewidth(kappa_s: f64, stats: &CouplingStats) -> Result<f64> {
    if !(kappa_s > 0.0) {
        return Err(invalid("kappa_s", "must be positive"));
    }
    Ok(stats.mean_eta * kappa_s)
}

/// (Δθ)² = p/(N(1 − p)) + σ₁² + σ₂².
pub fn delta_theta_sq_analytic(n: f64, p_eff: f64, sigma1: f64, sigma2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p_eff) {
        return Err(invalid("p_eff", "must lie in [0, 1)"));
    }
    if !(n > 0.0) {
        return Err(invalid("n", "must be positive"));
    }
    Ok(p_eff / (n * (1.0 - p_eff)) + sigma1 * sigma1 + sigma2 * sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeffEstimate {
    pub n_eff: f64,
    pub p_eff: f64,
    /// Ensemble variance of J_z,eff after subtracting probe noise.
    pub var_jz_eff: f64,
    pub ensemble_size: usize,
}

/// N_eff from coherent-state fluctuations: |J_eff|²/var(J_z,eff) with
/// |J_eff| = max_shift/δ_eff, after removing `probe_noise_var` (spin units²).
pub fn estimate_p_eff_css(
    jz_eff_samples: &[f64],
    max_shift_signal: f64,
    delta_eff: f64,
    n_total: f64,
    probe_noise_var: f64,
) -> Result<PeffEstimate> {
    if jz_eff_samples.len() < 100 {
        return Err(Error::TooFewSamples {
            needed: 100,
            got: jz_eff_samples.len(),
        });
    }
    if !(max_shift_signal > 0.0 && delta_eff > 0.0) {
        return Err(invalid("max_shift", "shift and shift per flip must be positive"));
    }
    if !(probe_noise_var >= 0.0) {
        return Err(invalid("probe_noise_var", "must be non-negative"));
    }
    let var = sample_variance(jz_eff_samples) - probe_noise_var;
    if !(var > 0.0) {
        return Err(Error::DegenerateEstimate(
            "no spin variance left after removing probe noise",
        ));
    }
    let j_max = max_shift_signal / delta_eff;
    let n_eff = j_max * j_max / var;
    Ok(PeffEstimate {
        n_eff,
        p_eff: 1.0 - n_eff / n_total,
        var_jz_eff: var,
        ensemble_size: jz_eff_samples.len(),
    })
}

/// Shift-versus-atom-number data taken at one free-fall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSeries {
    pub dt_ms: f64,
    pub atom_counts: Vec<f64>,
    pub max_shifts_hz: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEtaCalibration {
    pub dt_ms: f64,
    pub slope: f64,
    pub slope_ci68: f64,
    pub mean_eta: f64,
    pub mean_eta_ci68: f64,
}

/// ⟨η⟩(Δt) = slope(Δt)/slope(0)·reference, from a straight-line fit per series.
/// Exactly one series must have Δt = 0.
pub fn calibrate_mean_eta(series: &[ShiftSeries], reference_mean_eta: f64) -> Result<Vec<MeanEtaCalibration>> {
    let mut fits = Vec::with_capacity(series.len());
    for s in series {
        if s.atom_counts.len() < 3 {
            return Err(Error::TooFewSamples {
                needed: 3,
                got: s.atom_counts.len(),
            });
        }
        if s.atom_counts.iter().any(|n| !(*n > 0.0)) {
            return Err(invalid("atom_counts", "counts must be positive"));
        }
        fits.push(fit_linear(&s.atom_counts, &s.max_shifts_hz)?);
    }
    let mut zero = series.iter().zip(&fits).filter(|(s, _)| s.dt_ms == 0.0);
    let (_, reference) = zero
        .next()
        .ok_or_else(|| invalid("series", "no Δt = 0 reference series"))?;
    if zero.next().is_some() {
        return Err(invalid("series", "more than one Δt = 0 series"));
    }
    if reference.slope == 0.0 {
        return Err(Error::DegenerateFit("reference slope is zero"));
    }
    let slope0 = reference.slope;
    Ok(series
        .iter()
        .zip(&fits)
        .map(|(s, f)| {
            let ratio = f.slope / slope0;
            let rel = ((f.slope_ci68 / f.slope).powi(2) + (reference.slope_ci68 / slope0).powi(2)).sqrt();
            MeanEtaCalibration {
                dt_ms: s.dt_ms,
                slope: f.slope,
                slope_ci68: f.slope_ci68,
                mean_eta: ratio * reference_mean_eta,
                mean_eta_ci68: if s.dt_ms == 0.0 {
                    0.0
                } else {
                    (ratio * reference_mean_eta * rel).abs()
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub delta_theta: f64,
    pub n_eff: f64,
    pub coherence: f64,
    pub xi_sq: f64,
    pub xi_db: f64,
    pub xi_sq_ci68_low: f64,
    pub xi_sq_ci68_high: f64,
}

impl SqueezingReport {
    pub fn xi_db_ci68(&self) -> (f64, f64) {
        (to_db(self.xi_sq_ci68_low), to_db(self.xi_sq_ci68_high))
    }
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// ξ² = (Δθ·√N_eff/C)², with a zero-width interval.
pub fn wineland(delta_theta: f64, n_eff: f64, coherence: f64) -> Result<SqueezingReport> {
    wineland_with_uncertainty(
        Uncertain::new(delta_theta, 0.0),
        Uncertain::new(n_eff, 0.0),
        Uncertain::new(coherence, 0.0),
    )
}

pub fn wineland_with_uncertainty(
    delta_theta: Uncertain,
    n_eff: Uncertain,
    coherence: Uncertain,
) -> Result<SqueezingReport> {
    if !(n_eff.value >= 1.0) {
        return Err(invalid("n_eff", "must be at least 1"));
    }
    if !(coherence.value > 0.0 && coherence.value <= 1.0) {
        return Err(invalid("coherence", "must lie in (0, 1]"));
    }
    if !(delta_theta.value >= 0.0) {
        return Err(invalid("delta_theta", "must be non-negative"));
    }
    let ci = propagate_xi_sq_ci(delta_theta, n_eff, coherence)?;
    Ok(SqueezingReport {
        delta_theta: delta_theta.value,
        n_eff: n_eff.value,
        coherence: coherence.value,
        xi_sq: ci.xi_sq,
        xi_db: to_db(ci.xi_sq),
        xi_sq_ci68_low: ci.ci68_low,
        xi_sq_ci68_high: ci.ci68_high,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyEstimate {
    pub contrast: f64,
    /// 68% half-width from the prediction interval at the fringe extremum.
    pub ci68_half_width: f64,
    pub fit: ExtremumFit,
}

/// Simulates the population ½(1 − C·cos φ) plus Gaussian noise on `phase_grid`
/// and reads the contrast off a quadratic fit at the fringe maximum near φ = π.
pub fn ramsey_coherence<R: Rng + ?Sized>(
    true_contrast: f64,
    phase_grid: &[f64],
    noise_per_point: f64,
    rng: &mut R,
) -> Result<RamseyEstimate> {
    if !(0.0..=1.0).contains(&true_contrast) {
        return Err(invalid("contrast", "must lie in [0, 1]"));
    }
    if phase_grid.len() < 5 {
        return Err(Error::TooFewSamples {
            needed: 5,
            got: phase_grid.len(),
        });
    }
    if !(noise_per_point >= 0.0) {
        return Err(invalid("noise_per_point", "must be non-negative"));
    }
    let pop: Vec<f64> = phase_grid
        .iter()
        .map(|phi| {
            let z: f64 = rng.sample(StandardNormal);
            0.5 * (1.0 - true_contrast * phi.cos()) + noise_per_point * z
        })
        .collect();
    let fit = quadratic_extremum_fit(phase_grid, &pop)?;
    Ok(RamseyEstimate {
        contrast: 2.0 * fit.value - 1.0,
        ci68_half_width: 2.0 * fit.prediction_half_width,
        fit,
    })
}

/// Evenly spaced phases centred on π.
pub fn ramsey_grid(half_span: f64, points: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    if points < 2 {
        return vec![pi; points];
    }
    (0..points)
        .map(|k| pi - half_span + 2.0 * half_span * k as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{
        DELTA_0_HZ, REFERENCE_ANGLE_NOISE_RAD, REFERENCE_ATOM_NUMBER, REFERENCE_COHERENCE, REFERENCE_MEAN_ETA,
    };
    use crate::coupling::{coupling_stats, CouplingProfile};
    use crate::rng::{stream, Purpose, Stream};
    use crate::stats::{mean, sample_std};

    fn probe(var_x: f64) -> ProbeConfig {
        ProbeConfig {
            quadrature_noise_var: var_x,
            ..ProbeConfig::ideal(ProbeRole::Preparation)
        }
    }

    fn rng(seed: u64) -> Stream {
        stream(seed, 0, Purpose::Fixture)
    }

    #[test]
    fn noiseless_probe_is_exact() {
        let p = ProbeConfig {
            discriminator: 3.5,
            ..ProbeConfig::ideal(ProbeRole::Readout)
        };
        let r = probe_quadrature(12.25, &p, 100.0, &mut rng(1)).unwrap();
        assert_eq!(r.x_prime, 3.5 * 12.25);
        assert_eq!(r.inferred_theta, 2.0 * r.x_prime / (3.5 * 100.0));
    }

    #[test]
    fn shot_noise_variance() {
        let p = probe(7.0);
        let mut g = rng(2);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| probe_quadrature(0.0, &p, 1.0, &mut g).unwrap().x_prime)
            .collect();
        assert!((sample_variance(&xs) / 7.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn angle_noise_follows_closed_form() {
        let n = 1e4;
        let p = probe(n / 4.0);
        let mut g = rng(3);
        let th: Vec<f64> = (0..50_000)
            .map(|_| probe_quadrature(0.0, &p, n, &mut g).unwrap().inferred_theta)
            .collect();
        let analytic = 2.0 * (n / 4.0f64).sqrt() / n;
        assert!((sample_std(&th) / analytic - 1.0).abs() < 0.02);
        assert!((p.angle_noise_var(n) - analytic * analytic).abs() < 1e-18);
    }

    #[test]
    fn spin_flip_noise_is_angle_additive() {
        let p = ProbeConfig {
            spin_flip_noise_var: 4e-8,
            discriminator: 0.3,
            ..ProbeConfig::ideal(ProbeRole::Readout)
        };
        let mut g = rng(4);
        let th: Vec<f64> = (0..50_000)
            .map(|_| probe_quadrature(0.0, &p, 7.2e3, &mut g).unwrap().inferred_theta)
            .collect();
        assert!((sample_variance(&th) / 4e-8 - 1.0).abs() < 0.03);
    }

    #[test]
    fn theta_inference() {
        let n = 1000.0;
        let r = ProbeRecord {
            x_prime: 2.0 * n / 4.0,
            discriminator: 2.0,
            inferred_jz: 0.0,
            inferred_theta: 0.0,
            scale_atoms: n,
        };
        assert_eq!(infer_theta(&r, n).unwrap(), 0.5);
        assert_eq!(infer_theta(&ProbeRecord { x_prime: 0.0, ..r }, n).unwrap(), 0.0);
        assert!((infer_theta(&r, 800.0).unwrap() / infer_theta(&r, n).unwrap() - n / 800.0).abs() < 1e-15);
        assert!(infer_theta(&r, 0.0).is_err());
    }

    #[test]
    fn shifts_and_linewidth() {
        let flat = coupling_stats(&CouplingProfile::homogeneous(10).unwrap(), DELTA_0_HZ).unwrap();
        assert!((cavity_shift(1.0, &flat) - 5.6).abs() < 1e-15);
        assert_eq!(cavity_shift(0.0, &flat), 0.0);
        let two = coupling_stats(&CouplingProfile::new(vec![1.0, 0.5]).unwrap(), DELTA_0_HZ).unwrap();
        let flat2 = coupling_stats(&CouplingProfile::homogeneous(2).unwrap(), DELTA_0_HZ).unwrap();
        assert!((max_shift(&two) / max_shift(&flat2) - two.mean_eta).abs() < 1e-15);

        assert_eq!(broadened_linewidth(2.0, &flat).unwrap(), 2.0);
        let s = CouplingStats {
            mean_eta: REFERENCE_MEAN_ETA,
            ..flat
        };
        assert!((broadened_linewidth(1.0, &s).unwrap() - 0.9254).abs() < 1e-15);
        let s = CouplingStats { mean_eta: 0.0, ..flat };
        assert_eq!(broadened_linewidth(1.0, &s).unwrap(), 0.0);
    }

    #[test]
    fn delta_theta_examples() {
        let n = REFERENCE_ATOM_NUMBER as f64;
        let s = REFERENCE_ANGLE_NOISE_RAD / 2f64.sqrt();
        assert!((delta_theta_sq_analytic(n, 0.0, 1e-4, 2e-4).unwrap() - 5e-8).abs() < 1e-20);
        assert!((delta_theta_sq_analytic(n, 0.0, s, s).unwrap().sqrt() - 298e-6).abs() < 1e-12);
        let v = delta_theta_sq_analytic(n, 0.2, s, s).unwrap();
        assert!((v - (5e-7 + 8.8804e-8)).abs() < 1e-12);
        assert!((v.sqrt() - 767e-6).abs() < 1e-6);
        assert!(delta_theta_sq_analytic(n, 1.0, s, s).is_err());
    }

    #[test]
    fn wineland_examples() {
        let r = wineland(1.0 / 1e4f64.sqrt(), 1e4, 1.0).unwrap();
        assert!((r.xi_sq - 1.0).abs() < 1e-12 && r.xi_db.abs() < 1e-10);
        let r = wineland(298e-6, 5e5, REFERENCE_COHERENCE).unwrap();
        assert!((r.xi_sq - 0.0482).abs() < 1e-4);
        assert!((r.xi_db + 13.2).abs() < 0.05);
        let d = wineland(596e-6, 5e5, REFERENCE_COHERENCE).unwrap();
        assert!((d.xi_sq / r.xi_sq - 4.0).abs() < 1e-12);
        assert!(wineland(1e-3, 1e4, 0.0).is_err());
        let scaled = wineland(3.0 * 298e-6, 5e5 / 9.0, REFERENCE_COHERENCE).unwrap();
        assert!((scaled.xi_sq / r.xi_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_eff_estimator() {
        let n = 10_000;
        let mut g = rng(5);
        let css: Vec<f64> = (0..5000)
            .map(|_| (0..n).map(|_| if g.random::<bool>() { 0.5 } else { -0.5 }).sum())
            .collect();
        let stats = coupling_stats(&CouplingProfile::homogeneous(n).unwrap(), DELTA_0_HZ).unwrap();
        let e = estimate_p_eff_css(&css, max_shift(&stats), stats.delta_eff, n as f64, 0.0).unwrap();
        assert!((e.n_eff / n as f64 - 1.0).abs() < 0.05);

        let noisy: Vec<f64> = css
            .iter()
            .map(|j| j + 30.0 * g.sample::<f64, _>(StandardNormal))
            .collect();
        let raw = estimate_p_eff_css(&noisy, max_shift(&stats), stats.delta_eff, n as f64, 0.0).unwrap();
        let fixed = estimate_p_eff_css(&noisy, max_shift(&stats), stats.delta_eff, n as f64, 900.0).unwrap();
        assert!(raw.n_eff < 0.8 * n as f64);
        assert!((fixed.n_eff / n as f64 - 1.0).abs() < 0.06);

        assert!(matches!(
            estimate_p_eff_css(&[1.0; 200], 1.0, 1.0, 10.0, 0.0),
            Err(Error::DegenerateEstimate(_))
        ));
        assert!(estimate_p_eff_css(&[1.0; 50], 1.0, 1.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn mean_eta_calibration() {
        let counts = vec![1e5, 2e5, 3e5, 4e5];
        let line = |slope: f64| counts.iter().map(|n| slope * n).collect::<Vec<_>>();
        let series = vec![
            ShiftSeries {
                dt_ms: 0.0,
                atom_counts: counts.clone(),
                max_shifts_hz: line(2.0),
            },
            ShiftSeries {
                dt_ms: 1.0,
                atom_counts: counts.clone(),
                max_shifts_hz: line(2.0),
            },
            ShiftSeries {
                dt_ms: 2.0,
                atom_counts: counts.clone(),
                max_shifts_hz: line(1.0),
            },
        ];
        let cal = calibrate_mean_eta(&series, REFERENCE_MEAN_ETA).unwrap();
        assert!((cal[0].mean_eta - 0.9254).abs() < 1e-12);
        assert!((cal[1].mean_eta - 0.9254).abs() < 1e-12);
        assert!((cal[2].mean_eta - 0.4627).abs() < 1e-12);

        let short = vec![ShiftSeries {
            dt_ms: 0.0,
            atom_counts: vec![1.0, 2.0],
            max_shifts_hz: vec![1.0, 2.0],
        }];
        assert!(calibrate_mean_eta(&short, 0.9).is_err());
        let flat = vec![ShiftSeries {
            dt_ms: 0.0,
            atom_counts: vec![1.0; 3],
            max_shifts_hz: vec![1.0, 2.0, 3.0],
        }];
        assert!(calibrate_mean_eta(&flat, 0.9).is_err());
    }

    #[test]
    fn mean_eta_calibration_noisy_fixture() {
        let mut g = rng(6);
        let counts: Vec<f64> = (1..=10).map(|k| k as f64 * 5e4).collect();
        let shifts = |slope: f64, g: &mut Stream| -> Vec<f64> {
            counts
                .iter()
                .map(|n| slope * n + 500.0 * g.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let s0 = shifts(2.6, &mut g);
        let s1 = shifts(1.3, &mut g);
        let cal = calibrate_mean_eta(
            &[
                ShiftSeries {
                    dt_ms: 0.0,
                    atom_counts: counts.clone(),
                    max_shifts_hz: s0,
                },
                ShiftSeries {
                    dt_ms: 1.5,
                    atom_counts: counts.clone(),
                    max_shifts_hz: s1,
                },
            ],
            REFERENCE_MEAN_ETA,
        )
        .unwrap();
        assert!((cal[1].mean_eta - 0.4627).abs() < 3.0 * cal[1].mean_eta_ci68);
    }

    #[test]
    fn ramsey_noiseless() {
        // a ±0.1 rad window keeps the quartic fit bias (≈ C·a⁴/280 on C) below 1e-6
        let grid = ramsey_grid(0.1, 9);
        let r = ramsey_coherence(REFERENCE_COHERENCE, &grid, 0.0, &mut rng(7)).unwrap();
        assert!((r.contrast - 0.96).abs() < 1e-6, "{}", r.contrast);
        let r = ramsey_coherence(1.0, &grid, 0.0, &mut rng(7)).unwrap();
        assert!((r.contrast - 1.0).abs() < 1e-6);
        let wide = ramsey_coherence(REFERENCE_COHERENCE, &ramsey_grid(0.2, 9), 0.0, &mut rng(7)).unwrap();
        assert!((wide.contrast - 0.96).abs() < 1e-5);
    }

    #[test]
    fn ramsey_noisy_repeats() {
        let grid = ramsey_grid(0.6, 25);
        let mut g = rng(8);
        let fits: Vec<RamseyEstimate> = (0..200)
            .map(|_| ramsey_coherence(0.9, &grid, 0.01, &mut g).unwrap())
            .collect();
        let est: Vec<f64> = fits.iter().map(|f| f.contrast).collect();
        let ci = mean(&fits.iter().map(|f| f.ci68_half_width).collect::<Vec<_>>());
        // the quartic bias at ±0.6 rad is ≈ 0.9·0.6⁴/280 ≈ 4e-4, well inside the CI
        assert!((mean(&est) - 0.9).abs() < ci);
        assert!(ramsey_coherence(0.9, &grid[..4], 0.01, &mut g).is_err());
    }

    #[test]
    fn ramsey_extremum_off_grid() {
        let grid: Vec<f64> = (0..7).map(|k| 1.0 + 0.1 * k as f64).collect();
        assert!(matches!(
            ramsey_coherence(0.96, &grid, 0.0, &mut rng(9)),
            Err(Error::Extrapolation { .. })
        ));
    }
}
