//! Collective pseudo-spin states, per-atom spin samples and the moment algebra
//! of the effective observable J_z,eff.
//!
//! Squeezed states use a Gaussian surrogate: the collective value J_z is drawn
//! first and a zero-sum Gaussian residual spreads it across the atoms, which
//! realises the target per-spin and pair moments exactly in expectation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_stats, CouplingProfile};
use crate::error::{invalid, Error, Result};

pub const MAX_ENUMERATION_ATOMS: usize = 20;
pub const MAX_SMALL_ANGLE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveSpinState {
    pub n: usize,
    /// Bloch angle from the equator, rad.
    pub tilt_theta: f64,
    /// var(J_z) in units of the coherent-state value N/4.
    pub xi_sq_in: f64,
    pub coherence_c: f64,
}

impl CollectiveSpinState {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "needs at least one atom"));
        }
        if !(self.xi_sq_in > 0.0 && self.xi_sq_in.is_finite()) {
            return Err(invalid("xi_sq_in", "must be positive and finite"));
        }
        check_small_angle("tilt", self.tilt_theta)?;
        if !(0.0..=1.0).contains(&self.coherence_c) {
            return Err(invalid("coherence", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Per-spin mean ⟨j_z⟩ = sin(θ)/2.
    pub fn sigma(&self) -> f64 {
        0.5 * self.tilt_theta.sin()
    }
}

fn check_small_angle(name: &'static str, angle: f64) -> Result<()> {
    if !(angle.abs() <= MAX_SMALL_ANGLE) {
        return Err(invalid(
            name,
            format!("|{angle}| exceeds the small-angle limit {MAX_SMALL_ANGLE} rad"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinMode {
    /// Real-valued Gaussian surrogate spins.
    Surrogate,
    /// Exact ±½ values.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSample {
    j: Vec<f64>,
    mode: SpinMode,
}

impl SpinSample {
    pub fn new(j: Vec<f64>, mode: SpinMode) -> Result<Self> {
        if j.is_empty() {
            return Err(invalid("j", "sample must be non-empty"));
        }
        if mode == SpinMode::Exact && j.iter().any(|v| v.abs() != 0.5) {
            return Err(invalid("j", "exact-mode spins must be ±1/2"));
        }
        Ok(Self { j, mode })
    }

    pub fn j(&self) -> &[f64] {
        &self.j
    }

    pub fn mode(&self) -> SpinMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.j.len()
    }

    pub fn is_empty(&self) -> bool {
        self.j.is_empty()
    }
}

/// Probability of spin up for a coherent state at the given tilt.
pub fn css_up_probability(tilt: f64) -> f64 {
    0.5 * (1.0 + tilt.sin())
}

#[inline]
pub fn draw_css_spin<R: Rng + ?Sized>(rng: &mut R, p_up: f64) -> f64 {
    if rng.random::<f64>() < p_up {
        0.5
    } else {
        -0.5
    }
}

pub fn sample_css<R: Rng + ?Sized>(n: usize, tilt: f64, rng: &mut R) -> Result<SpinSample> {
    if n == 0 {
        return Err(invalid("n", "needs at least one atom"));
    }
    check_small_angle("tilt", tilt)?;
    let p = css_up_probability(tilt);
    SpinSample::new((0..n).map(|_| draw_css_spin(rng, p)).collect(), SpinMode::Exact)
}

/// Draw parameters of the Gaussian surrogate for one state.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateSampler {
    n: f64,
    mean_jz: f64,
    sd_jz: f64,
    sd_residual: f64,
}

impl SurrogateSampler {
    pub fn new(state: &CollectiveSpinState) -> Result<Self> {
        state.validate()?;
        let n = state.n as f64;
        if state.n < 2 || !(state.xi_sq_in > 1.0 / n && state.xi_sq_in <= n) {
            return Err(invalid(
                "xi_sq_in",
                format!(
                    "{} outside the admissible range (1/N, N] for N = {}",
                    state.xi_sq_in, state.n
                ),
            ));
        }
        let residual_var = (0.25 - state.xi_sq_in / (4.0 * n)) / (1.0 - 1.0 / n);
        Ok(Self {
            n,
            mean_jz: n * state.sigma(),
            sd_jz: (state.xi_sq_in * n / 4.0).sqrt(),
            sd_residual: residual_var.sqrt(),
        })
    }

    /// Collective J_z; drawn before any residual.
    #[inline]
    pub fn draw_collective<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean_jz + self.sd_jz * z
    }

    /// One raw residual g_i; the sample subtracts the mean ḡ afterwards.
    #[inline]
    pub fn draw_residual<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.sd_residual * z
    }

    pub fn n(&self) -> f64 {
        self.n
    }
}

pub fn sample_squeezed<R: Rng + ?Sized>(state: &CollectiveSpinState, rng: &mut R) -> Result<SpinSample> {
    let sampler = SurrogateSampler::new(state)?;
    let jz = sampler.draw_collective(rng);
    let mut g: Vec<f64> = (0..state.n).map(|_| sampler.draw_residual(rng)).collect();
    let g_mean = g.iter().sum::<f64>() / sampler.n;
    let base = jz / sampler.n;
    for v in g.iter_mut() {
        *v = base + (*v - g_mean);
    }
    SpinSample::new(g, SpinMode::Surrogate)
}

/// Small microwave rotation about an equatorial axis.
pub trait RotateSmall: Sized {
    fn rotate_small(&self, epsilon: f64) -> Result<Self>;
}

impl RotateSmall for CollectiveSpinState {
    fn rotate_small(&self, epsilon: f64) -> Result<Self> {
        check_small_angle("epsilon", epsilon)?;
        let out = Self {
            tilt_theta: self.tilt_theta + epsilon,
            ..*self
        };
        check_small_angle("tilt", out.tilt_theta)?;
        Ok(out)
    }
}

impl RotateSmall for SpinSample {
    /// Shifts every j_z by ε/2. Exact-mode samples come back as surrogates.
    fn rotate_small(&self, epsilon: f64) -> Result<Self> {
        check_small_angle("epsilon", epsilon)?;
        if epsilon == 0.0 {
            return Ok(self.clone());
        }
        let half = 0.5 * epsilon;
        Ok(Self {
            j: self.j.iter().map(|v| v + half).collect(),
            mode: SpinMode::Surrogate,
        })
    }
}

pub fn j_z_total(sample: &SpinSample) -> f64 {
    sample.j.iter().sum()
}

/// J_z,eff = (⟨η⟩/⟨η²⟩)·Σ ηᵢ jᵢ.
pub fn j_z_eff(sample: &SpinSample, profile: &CouplingProfile) -> Result<f64> {
    if sample.len() != profile.len() {
        return Err(Error::LengthMismatch {
            spins: sample.len(),
            couplings: profile.len(),
        });
    }
    let (mut s1, mut s2, mut weighted) = (0.0, 0.0, 0.0);
    for (e, j) in profile.eta().iter().zip(&sample.j) {
        s1 += e;
        s2 += e * e;
        weighted += e * j;
    }
    if !(s2 > 0.0) {
        return Err(Error::DegenerateCoupling);
    }
    Ok(s1 / s2 * weighted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinMoments {
    pub mean_jz: f64,
    pub var_jz: f64,
    pub mean_jz_eff: f64,
    pub var_jz_eff: f64,
    /// var(J_z,eff − J_z).
    pub var_diff: f64,
    pub cov_eff_jz: f64,
    /// var(θ_eff − θ₀) with θ₀ = 2J_z/N and θ_eff = 2J_z,eff/N_eff.
    pub var_theta_diff: f64,
    /// Per-spin mean ⟨j_z⟩.
    pub sigma: f64,
    /// ⟨j_z²⟩.
    pub self_corr: f64,
    /// ⟨j_z⁽ⁱ⁾ j_z⁽ᵏ⁾⟩, i ≠ k.
    pub pair_corr: f64,
}

/// Moments of J_z and J_z,eff for exchangeable spins with the given single-
/// and two-spin moments. They depend on η only through N_eff.
pub fn moments_closed_form(n: usize, n_eff: f64, sigma: f64, self_corr: f64, pair_corr: f64) -> SpinMoments {
    let nf = n as f64;
    let c = self_corr - pair_corr;
    let var_jz = nf * c + nf * nf * (pair_corr - sigma * sigma);
    let r = n_eff / nf;
    let p = 1.0 - r;
    SpinMoments {
        mean_jz: nf * sigma,
        var_jz,
        mean_jz_eff: n_eff * sigma,
        var_jz_eff: r * r * var_jz + n_eff * p * c,
        var_diff: p * p * var_jz + n_eff * p * c,
        cov_eff_jz: r * var_jz,
        var_theta_diff: 4.0 * p * c / n_eff,
        sigma,
        self_corr,
        pair_corr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    /// Non-approximated forms.
    pub exact: SpinMoments,
    pub n_eff: f64,
    /// (1 − p)²·var(J_z) + p·N_eff/4.
    pub approx_var_jz_eff: f64,
    /// p²·var(J_z) + p·N_eff/4.
    pub approx_var_diff: f64,
    /// p/N_eff.
    pub approx_var_theta_diff: f64,
}

/// Moments for a state near the equator with var(J_z) = ξ²N/4:
/// ⟨j²⟩ = ¼ + σ² and ⟨jᵢjₖ⟩ = (ξ² − 1)/(4(N − 1)) + σ².
pub fn moments_analytic(n: usize, xi_sq: f64, p_eff: f64, sigma: f64) -> Result<AnalyticMoments> {
    if n < 2 {
        return Err(invalid("n", "pair correlations need at least two atoms"));
    }
    if !(xi_sq > 0.0 && xi_sq.is_finite()) {
        return Err(invalid("xi_sq", "must be positive and finite"));
    }
    if !(0.0..1.0).contains(&p_eff) {
        return Err(invalid("p_eff", "must lie in [0, 1)"));
    }
    let nf = n as f64;
    let n_eff = (1.0 - p_eff) * nf;
    let self_corr = 0.25 + sigma * sigma;
    let pair_corr = (xi_sq - 1.0) / (4.0 * (nf - 1.0)) + sigma * sigma;
    let exact = moments_closed_form(n, n_eff, sigma, self_corr, pair_corr);
    Ok(AnalyticMoments {
        exact,
        n_eff,
        approx_var_jz_eff: (1.0 - p_eff).powi(2) * exact.var_jz + p_eff * n_eff / 4.0,
        approx_var_diff: p_eff * p_eff * exact.var_jz + p_eff * n_eff / 4.0,
        approx_var_theta_diff: p_eff / n_eff,
    })
}

/// Exact moments of a coherent state of independent ±½ spins under the given
/// couplings, by summation over all 2^N configurations.
pub fn enumerate_css_exact(eta: &CouplingProfile, tilt: f64) -> Result<SpinMoments> {
    let n = eta.len();
    if n > MAX_ENUMERATION_ATOMS {
        return Err(Error::TooManyAtoms(n));
    }
    check_small_angle("tilt", tilt)?;
    let stats = coupling_stats(eta, 1.0)?;
    let weight = stats.eff_weight();
    let p_up = css_up_probability(tilt);
    let nf = n as f64;

    let configs = || {
        (0u32..1 << n).map(move |mask| {
            let mut prob = 1.0;
            let mut jz = 0.0;
            let mut weighted = 0.0;
            for (i, e) in eta.eta().iter().enumerate() {
                let up = mask >> i & 1 == 1;
                let j = if up { 0.5 } else { -0.5 };
                prob *= if up { p_up } else { 1.0 - p_up };
                jz += j;
                weighted += e * j;
            }
            (prob, jz, weight * weighted)
        })
    };

    let (mut m_j, mut m_e) = (0.0, 0.0);
    for (w, j, e) in configs() {
        m_j += w * j;
        m_e += w * e;
    }
    let (mut v_j, mut v_e, mut v_d, mut cov, mut v_t) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (m_t0, m_te) = (2.0 * m_j / nf, 2.0 * m_e / stats.n_eff);
    for (w, j, e) in configs() {
        let (dj, de) = (j - m_j, e - m_e);
        v_j += w * dj * dj;
        v_e += w * de * de;
        v_d += w * (de - dj) * (de - dj);
        cov += w * de * dj;
        let dt = (2.0 * e / stats.n_eff - m_te) - (2.0 * j / nf - m_t0);
        v_t += w * dt * dt;
    }
    let sigma = 0.5 * tilt.sin();
    Ok(SpinMoments {
        mean_jz: m_j,
        var_jz: v_j,
        mean_jz_eff: m_e,
        var_jz_eff: v_e,
        var_diff: v_d,
        cov_eff_jz: cov,
        var_theta_diff: v_t,
        sigma,
        self_corr: 0.25,
        pair_corr: sigma * sigma,
    })
}
