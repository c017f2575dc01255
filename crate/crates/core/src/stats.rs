//! Bootstrap, least-squares fits, error propagation and histograms.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::constants::{BOOTSTRAP_RESAMPLES, ONE_SIGMA_QUANTILE};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Purpose};

pub const DEFAULT_RESAMPLES: usize = BOOTSTRAP_RESAMPLES;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n − 1 denominator); 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Two-sided t quantile matching a ±1σ Gaussian interval.
pub fn t_one_sigma(dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(ONE_SIGMA_QUANTILE)
}

/// Range of `s²/σ²` for a Gaussian sample of size `n` covering ±`k_sigma`
/// in normal-equivalent probability.
pub fn chi_square_ratio_bounds(n: usize, k_sigma: f64) -> (f64, f64) {
    let dof = (n - 1) as f64;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let chi = ChiSquared::new(dof).expect("positive dof");
    let lo = chi.inverse_cdf(normal.cdf(-k_sigma)) / dof;
    let hi = chi.inverse_cdf(normal.cdf(k_sigma)) / dof;
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    /// Standard deviation of the resampled estimates.
    pub std_error: f64,
    pub ci68_low: f64,
    pub ci68_high: f64,
    pub n_resamples: usize,
}

/// Bootstrap of the sample standard deviation with a symmetric ±1 bootstrap-std interval.
pub fn bootstrap_std(samples: &[f64], n_resamples: usize, seed: u64) -> Result<BootstrapResult> {
    if samples.len() < 10 {
        return Err(Error::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    if n_resamples < 2 {
        return Err(invalid("n_resamples", "need at least two resamples"));
    }
    let n = samples.len();
    let stds: Vec<f64> = (0..n_resamples)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, k| {
                let mut rng = stream(seed, k as u64, Purpose::Bootstrap);
                buf.clear();
                buf.extend((0..n).map(|_| samples[rng.random_range(0..n)]));
                sample_std(buf)
            },
        )
        .collect();
    let point = sample_std(samples);
    let se = sample_std(&stds);
    Ok(BootstrapResult {
        point_estimate: point,
        std_error: se,
        ci68_low: point - se,
        ci68_high: point + se,
        n_resamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// t-based 68% half-width on the slope; NaN without spare degrees of freedom.
    pub slope_ci68: f64,
    pub intercept_se: f64,
    pub intercept_ci68: f64,
    pub residual_variance: f64,
    pub n: usize,
}

fn check_xy(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("y", format!("{} x values but {} y values", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::TooFewSamples {
            needed: min,
            got: x.len(),
        });
    }
    Ok(())
}

/// Least-squares line through the origin.
pub fn fit_zero_intercept(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 1)?;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values are zero"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = sxy / sxx;
    let dof = x.len() - 1;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let residual_variance = if dof > 0 { rss / dof as f64 } else { f64::NAN };
    let slope_se = (residual_variance / sxx).sqrt();
    Ok(FitResult {
        slope,
        intercept: 0.0,
        slope_se,
        slope_ci68: t_one_sigma(dof) * slope_se,
        intercept_se: 0.0,
        intercept_ci68: 0.0,
        residual_variance,
        n: x.len(),
    })
}

/// Ordinary least-squares line y = slope·x + intercept.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<FitResult> {
    check_xy(x, y, 2)?;
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("x values do not vary"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = x.len() - 2;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let residual_variance = if dof > 0 { rss / dof as f64 } else { f64::NAN };
    let slope_se = (residual_variance / sxx).sqrt();
    let intercept_se = (residual_variance * (1.0 / n + mx * mx / sxx)).sqrt();
    let t = t_one_sigma(dof);
    Ok(FitResult {
        slope,
        intercept,
        slope_se,
        slope_ci68: t * slope_se,
        intercept_se,
        intercept_ci68: t * intercept_se,
        residual_variance,
        n: x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertain {
    pub value: f64,
    pub u: f64,
}

impl Uncertain {
    pub fn new(value: f64, u: f64) -> Self {
        Self { value, u }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSqInterval {
    pub xi_sq: f64,
    pub std_error: f64,
    pub ci68_low: f64,
    pub ci68_high: f64,
}

/// First-order propagation through ξ² = (Δθ·√N_eff/C)² with independent inputs.
pub fn propagate_xi_sq_ci(delta_theta: Uncertain, n_eff: Uncertain, coherence: Uncertain) -> Result<XiSqInterval> {
    if !(n_eff.value > 0.0) {
        return Err(invalid("n_eff", "must be positive"));
    }
    if !(coherence.value > 0.0) {
        return Err(invalid("coherence", "must be positive"));
    }
    let xi = (delta_theta.value * n_eff.value.sqrt() / coherence.value).powi(2);
    let d_theta = 2.0 * xi / delta_theta.value;
    let d_n = xi / n_eff.value;
    let d_c = -2.0 * xi / coherence.value;
    let mut var = (d_n * n_eff.u).powi(2) + (d_c * coherence.u).powi(2);
    if delta_theta.u != 0.0 {
        var += (d_theta * delta_theta.u).powi(2);
    }
    let se = var.sqrt();
    Ok(XiSqInterval {
        xi_sq: xi,
        std_error: se,
        ci68_low: xi - se,
        ci68_high: xi + se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremumFit {
    pub x_extremum: f64,
    pub value: f64,
    /// t-based 68% half-width of the prediction interval at the extremum.
    pub prediction_half_width: f64,
    /// Second-order coefficient of the fitted parabola.
    pub curvature: f64,
    pub residual_variance: f64,
}

fn invert_sym3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let [[a, b, c], [_, d, e], [_, _, f]] = m;
    let cof = [
        [d * f - e * e, c * e - b * f, b * e - c * d],
        [c * e - b * f, a * f - c * c, b * c - a * e],
        [b * e - c * d, b * c - a * e, a * d - b * b],
    ];
    let det = a * cof[0][0] + b * cof[0][1] + c * cof[0][2];
    if !(det.abs() > 0.0) {
        return None;
    }
    Some(cof.map(|row| row.map(|v| v / det)))
}

/// Least-squares parabola and the value at its vertex.
pub fn quadratic_extremum_fit(x: &[f64], y: &[f64]) -> Result<ExtremumFit> {
    check_xy(x, y, 4)?;
    let xm = mean(x);
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (xi, yi) in x.iter().zip(y) {
        let u = xi - xm;
        let row = [1.0, u, u * u];
        for r in 0..3 {
            aty[r] += row[r] * yi;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let inv = invert_sym3(ata).ok_or(Error::DegenerateFit("fewer than three distinct x values"))?;
    let coef: [f64; 3] = [0, 1, 2].map(|r| (0..3).map(|c| inv[r][c] * aty[c]).sum());
    let [a, b, c] = coef;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let half_range = 0.5 * (hi - lo);
    if !(c.abs() * half_range * half_range > 1e-12 * y_scale) {
        return Err(Error::DegenerateFit("no curvature"));
    }
    let u_star = -b / (2.0 * c);
    let x_star = xm + u_star;
    if x_star < lo || x_star > hi {
        return Err(Error::Extrapolation { at: x_star, lo, hi });
    }
    let value = a + b * u_star + c * u_star * u_star;
    let dof = x.len() - 3;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let u = xi - xm;
            (yi - (a + b * u + c * u * u)).powi(2)
        })
        .sum();
    let s2 = rss / dof as f64;
    let f = [1.0, u_star, u_star * u_star];
    let leverage: f64 = (0..3)
        .map(|r| (0..3).map(|k| f[r] * inv[r][k] * f[k]).sum::<f64>())
        .sum();
    Ok(ExtremumFit {
        x_extremum: x_star,
        value,
        prediction_half_width: t_one_sigma(dof) * (s2 * (1.0 + leverage)).sqrt(),
        curvature: c,
        residual_variance: s2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges; empty for empty input.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(invalid("n_bins", "must be at least one"));
    }
    if values.is_empty() {
        return Ok(Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("values", "histogram input must be finite"));
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0u64; n_bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}
