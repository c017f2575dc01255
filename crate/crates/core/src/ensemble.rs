//! Thermal atom clouds and their phase-space evolution.
//!
//! Axes 0 and 1 (x, y) are transverse to the cavity axis, axis 2 (z) runs
//! along it. Positions are in μm and velocities in μm/ms.
//!
//! Trapped segments are exact harmonic phase-space rotations, free-fall
//! segments are exact ballistic flights under gravity. Switching the lattice
//! is sudden for the transverse axes. Along the axis the switch is adiabatic
//! down to the frequency at which adiabaticity breaks, which rescales the
//! axial velocities while preserving the action of the axial motion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{depth_joules, thermal_velocity_um_per_ms, M_PER_S_TO_UM_PER_MS, RB87_MASS_KG};
use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

pub const TRANSVERSE_AXES: [usize; 2] = [0, 1];
pub const AXIAL: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AtomCloud {
    pos: Vec<Vec3>,
    vel: Vec<Vec3>,
}

impl AtomCloud {
    pub fn new(pos: Vec<Vec3>, vel: Vec<Vec3>) -> Result<Self> {
        if pos.is_empty() {
            return Err(invalid("n", "a cloud needs at least one atom"));
        }
        if pos.len() != vel.len() {
            return Err(invalid(
                "vel",
                format!("{} positions but {} velocities", pos.len(), vel.len()),
            ));
        }
        Ok(Self { pos, vel })
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.pos
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.vel
    }

    fn map_atoms(&self, mut f: impl FnMut(&mut Vec3, &mut Vec3)) -> AtomCloud {
        let mut out = self.clone();
        for (p, v) in out.pos.iter_mut().zip(out.vel.iter_mut()) {
            f(p, v);
        }
        out
    }
}

/// Configuration of a Gaussian thermal cloud in the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSpec {
    pub temperature_uk: f64,
    pub rms_radius_transverse_um: f64,
    pub rms_radius_longitudinal_um: f64,
}

impl CloudSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_uk > 0.0 && self.temperature_uk.is_finite()) {
            return Err(invalid("temperature", "must be positive and finite"));
        }
        if !(self.rms_radius_transverse_um > 0.0 && self.rms_radius_longitudinal_um > 0.0) {
            return Err(invalid("rms_radius", "radii must be positive"));
        }
        Ok(())
    }

    pub fn rms_velocity(&self) -> f64 {
        thermal_velocity_um_per_ms(self.temperature_uk)
    }

    pub fn rms_position(&self) -> Vec3 {
        [
            self.rms_radius_transverse_um,
            self.rms_radius_transverse_um,
            self.rms_radius_longitudinal_um,
        ]
    }

    /// Moments of the configured distribution (not of any particular sample).
    pub fn expected_summary(&self) -> PhaseSpaceSummary {
        let v = self.rms_velocity();
        PhaseSpaceSummary {
            n: 0,
            centroid_pos: [0.0; 3],
            centroid_vel: [0.0; 3],
            rms_pos: self.rms_position(),
            rms_vel: [v; 3],
            pos_vel_cov: [0.0; 3],
        }
    }
}

/// Draws one atom: x, y, z then vx, vy, vz, each a standard normal scaled per axis.
#[inline]
pub fn sample_atom<R: Rng + ?Sized>(rng: &mut R, rms_pos: &Vec3, rms_vel: f64) -> (Vec3, Vec3) {
    let mut p = [0.0; 3];
    let mut v = [0.0; 3];
    for (x, s) in p.iter_mut().zip(rms_pos) {
        let z: f64 = rng.sample(StandardNormal);
        *x = s * z;
    }
    for x in v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = rms_vel * z;
    }
    (p, v)
}

pub fn sample_thermal_cloud<R: Rng + ?Sized>(
    n: usize,
    temperature_uk: f64,
    rms_radius_transverse_um: f64,
    rms_radius_longitudinal_um: f64,
    rng: &mut R,
) -> Result<AtomCloud> {
    if n == 0 {
        return Err(invalid("n", "a cloud needs at least one atom"));
    }
    let spec = CloudSpec {
        temperature_uk,
        rms_radius_transverse_um,
        rms_radius_longitudinal_um,
    };
    spec.validate()?;
    let rms_pos = spec.rms_position();
    let rms_vel = spec.rms_velocity();
    let (pos, vel) = (0..n).map(|_| sample_atom(rng, &rms_pos, rms_vel)).unzip();
    AtomCloud::new(pos, vel)
}

/// Optical lattice seen as a harmonic trap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    /// Trap depth as a temperature, μK.
    pub depth_uk: f64,
    /// Transverse angular frequency, rad/ms.
    pub transverse_omega: f64,
    /// Axial frequency of the cloud envelope, rad/ms.
    pub longitudinal_omega: f64,
    /// Axial frequency of a single lattice site, rad/ms.
    pub site_omega: f64,
    pub lattice_wavelength_nm: f64,
    pub switching_time_us: f64,
}

impl TrapConfig {
    /// Harmonic approximation of a Gaussian standing-wave lattice of the given
    /// depth and 1/e² intensity radius.
    ///
    /// Transverse: ω = √(4U₀/(m·w²)). Per site: ω = k·√(2U₀/m). Envelope along the
    /// axis: ω = √(2U₀/m)/z_R with the Rayleigh range z_R = π·w²/λ.
    pub fn from_lattice(
        depth_uk: f64,
        lattice_waist_um: f64,
        lattice_wavelength_nm: f64,
        switching_time_us: f64,
    ) -> Result<Self> {
        if !(depth_uk > 0.0) {
            return Err(invalid("depth", "trap depth must be positive"));
        }
        if !(lattice_waist_um > 0.0 && lattice_waist_um.is_finite()) {
            return Err(invalid("lattice_waist", "must be positive and finite"));
        }
        if !(lattice_wavelength_nm > 0.0) {
            return Err(invalid("lattice_wavelength", "must be positive"));
        }
        if !(switching_time_us >= 0.0) {
            return Err(invalid("switching_time", "must be non-negative"));
        }
        let u0_over_m = depth_joules(depth_uk) / RB87_MASS_KG;
        // √(U/m) in μm/ms
        let speed = u0_over_m.sqrt() * M_PER_S_TO_UM_PER_MS;
        let wavelength_um = lattice_wavelength_nm * 1e-3;
        let k = 2.0 * std::f64::consts::PI / wavelength_um;
        let rayleigh = std::f64::consts::PI * lattice_waist_um * lattice_waist_um / wavelength_um;
        let trap = Self {
            depth_uk,
            transverse_omega: 2.0 * speed / lattice_waist_um,
            longitudinal_omega: std::f64::consts::SQRT_2 * speed / rayleigh,
            site_omega: std::f64::consts::SQRT_2 * speed * k,
            lattice_wavelength_nm,
            switching_time_us,
        };
        trap.validate()?;
        Ok(trap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_uk > 0.0) {
            return Err(invalid("depth", "trap depth must be positive"));
        }
        if !(self.transverse_omega > 0.0 && self.longitudinal_omega > 0.0 && self.site_omega > 0.0) {
            return Err(invalid("omega", "trap frequencies must be positive"));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec3 {
        [self.transverse_omega, self.transverse_omega, self.longitudinal_omega]
    }

    pub fn transverse_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.transverse_omega
    }

    /// Factor applied to axial velocities when the lattice is ramped off.
    ///
    /// For a linear depth ramp of duration τ the ramp stays adiabatic until the
    /// site frequency has dropped to ω_f = ω_site^(2/3)·τ^(-1/3); preserving the
    /// action E/ω down to ω_f scales velocities by √(ω_f/ω_site) = (ω_site·τ)^(-1/6).
    /// Ramps with ω_site·τ ≤ 1 are sudden and leave the velocities unchanged.
    pub fn axial_release_factor(&self) -> f64 {
        let adiabaticity = self.site_omega * self.switching_time_us * 1e-3;
        if adiabaticity <= 1.0 {
            1.0
        } else {
            adiabaticity.powf(-1.0 / 6.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityConfig {
    /// Acceleration in μm/ms².
    pub vector: Vec3,
}

impl GravityConfig {
    /// Gravity of the given magnitude along `direction` (need not be normalised).
    pub fn new(direction: Vec3, magnitude: f64) -> Result<Self> {
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(invalid("gravity", "direction must be non-zero"));
        }
        if !(magnitude >= 0.0) {
            return Err(invalid("gravity", "magnitude must be non-negative"));
        }
        Ok(Self {
            vector: direction.map(|d| d / norm * magnitude),
        })
    }

    pub fn none() -> Self {
        Self { vector: [0.0; 3] }
    }

    pub fn magnitude(&self) -> f64 {
        self.vector.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Ballistic flight of one atom; exact for constant acceleration.
#[inline]
pub fn flight_atom(p: &mut Vec3, v: &mut Vec3, dt: f64, g: &Vec3) {
    let half_dt2 = 0.5 * dt * dt;
    for a in 0..3 {
        p[a] += v[a] * dt + g[a] * half_dt2;
        v[a] += g[a] * dt;
    }
}

/// Precomputed harmonic rotation over a fixed duration.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicStep {
    cos: Vec3,
    sin_over_omega: Vec3,
    omega_sin: Vec3,
}

impl HarmonicStep {
    pub fn new(omegas: Vec3, dt: f64) -> Self {
        let mut step = Self {
            cos: [1.0; 3],
            sin_over_omega: [dt; 3],
            omega_sin: [0.0; 3],
        };
        for (a, &w) in omegas.iter().enumerate() {
            if w != 0.0 {
                let (s, c) = (w * dt).sin_cos();
                step.cos[a] = c;
                step.sin_over_omega[a] = s / w;
                step.omega_sin[a] = w * s;
            }
        }
        step
    }

    #[inline]
    pub fn apply(&self, p: &mut Vec3, v: &mut Vec3) {
        for a in 0..3 {
            let (x, u) = (p[a], v[a]);
            p[a] = x * self.cos[a] + u * self.sin_over_omega[a];
            v[a] = -x * self.omega_sin[a] + u * self.cos[a];
        }
    }
}

pub fn free_flight(cloud: &AtomCloud, dt: f64, gravity: &GravityConfig) -> Result<AtomCloud> {
    if !(dt >= 0.0) {
        return Err(invalid("dt", "free-flight duration must be non-negative"));
    }
    let g = gravity.vector;
    Ok(cloud.map_atoms(|p, v| flight_atom(p, v, dt, &g)))
}

pub fn harmonic_evolve(cloud: &AtomCloud, trap: &TrapConfig, dt: f64) -> Result<AtomCloud> {
    if !(dt >= 0.0) {
        return Err(invalid("dt", "trapped duration must be non-negative"));
    }
    trap.validate()?;
    let step = HarmonicStep::new(trap.omegas(), dt);
    Ok(cloud.map_atoms(|p, v| step.apply(p, v)))
}

/// Lattice ramped off: transverse motion untouched, axial velocities rescaled.
pub fn release(cloud: &AtomCloud, trap: &TrapConfig) -> AtomCloud {
    let f = trap.axial_release_factor();
    cloud.map_atoms(|_, v| v[AXIAL] *= f)
}

/// Lattice ramped back on; inverse of [`release`].
pub fn recapture(cloud: &AtomCloud, trap: &TrapConfig) -> AtomCloud {
    let f = trap.axial_release_factor();
    cloud.map_atoms(|_, v| v[AXIAL] /= f)
}

/// First and second moments of a cloud, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceSummary {
    /// Atoms summarised; 0 for summaries of a configured distribution.
    pub n: usize,
    pub centroid_pos: Vec3,
    pub centroid_vel: Vec3,
    pub rms_pos: Vec3,
    pub rms_vel: Vec3,
    /// ⟨(x − x̄)(v − v̄)⟩ per axis.
    pub pos_vel_cov: Vec3,
}

pub fn summarize(cloud: &AtomCloud) -> PhaseSpaceSummary {
    let n = cloud.len() as f64;
    let mut cp = [0.0; 3];
    let mut cv = [0.0; 3];
    for (p, v) in cloud.pos.iter().zip(&cloud.vel) {
        for a in 0..3 {
            cp[a] += p[a];
            cv[a] += v[a];
        }
    }
    cp = cp.map(|s| s / n);
    cv = cv.map(|s| s / n);
    let mut vp = [0.0; 3];
    let mut vv = [0.0; 3];
    let mut cov = [0.0; 3];
    for (p, v) in cloud.pos.iter().zip(&cloud.vel) {
        for a in 0..3 {
            let dx = p[a] - cp[a];
            let du = v[a] - cv[a];
            vp[a] += dx * dx;
            vv[a] += du * du;
            cov[a] += dx * du;
        }
    }
    PhaseSpaceSummary {
        n: cloud.len(),
        centroid_pos: cp,
        centroid_vel: cv,
        rms_pos: vp.map(|s| (s / n).sqrt()),
        rms_vel: vv.map(|s| (s / n).sqrt()),
        pos_vel_cov: cov.map(|s| s / n),
    }
}

impl PhaseSpaceSummary {
    /// rms size per transverse axis, √((σx² + σy²)/2).
    pub fn transverse_rms(&self) -> f64 {
        ((self.rms_pos[0].powi(2) + self.rms_pos[1].powi(2)) / 2.0).sqrt()
    }

    /// Moments after a ballistic flight; exact for any distribution.
    pub fn after_free_flight(&self, dt: f64, gravity: &GravityConfig) -> Self {
        let mut out = *self;
        for a in 0..3 {
            let (vx, vv, c) = (self.rms_pos[a].powi(2), self.rms_vel[a].powi(2), self.pos_vel_cov[a]);
            out.rms_pos[a] = (vx + 2.0 * c * dt + vv * dt * dt).max(0.0).sqrt();
            out.pos_vel_cov[a] = c + vv * dt;
        }
        let mut p = self.centroid_pos;
        let mut v = self.centroid_vel;
        flight_atom(&mut p, &mut v, dt, &gravity.vector);
        out.centroid_pos = p;
        out.centroid_vel = v;
        out
    }

    /// Moments after a harmonic segment; exact for any distribution.
    pub fn after_harmonic(&self, trap: &TrapConfig, dt: f64) -> Self {
        let step = HarmonicStep::new(trap.omegas(), dt);
        let mut out = *self;
        for a in 0..3 {
            let (c, s) = (step.cos[a], step.sin_over_omega[a]);
            let ws = step.omega_sin[a];
            let (vx, vv, cov) = (self.rms_pos[a].powi(2), self.rms_vel[a].powi(2), self.pos_vel_cov[a]);
            let vx2 = c * c * vx + 2.0 * c * s * cov + s * s * vv;
            let vv2 = ws * ws * vx - 2.0 * ws * c * cov + c * c * vv;
            let cov2 = -c * ws * vx + (c * c - s * ws) * cov + c * s * vv;
            out.rms_pos[a] = vx2.max(0.0).sqrt();
            out.rms_vel[a] = vv2.max(0.0).sqrt();
            out.pos_vel_cov[a] = cov2;
        }
        let mut p = self.centroid_pos;
        let mut v = self.centroid_vel;
        step.apply(&mut p, &mut v);
        out.centroid_pos = p;
        out.centroid_vel = v;
        out
    }

    fn scale_axial_velocity(&self, f: f64) -> Self {
        let mut out = *self;
        out.centroid_vel[AXIAL] *= f;
        out.rms_vel[AXIAL] *= f;
        out.pos_vel_cov[AXIAL] *= f;
        out
    }

    pub fn after_release(&self, trap: &TrapConfig) -> Self {
        self.scale_axial_velocity(trap.axial_release_factor())
    }

    pub fn after_recapture(&self, trap: &TrapConfig) -> Self {
        self.scale_axial_velocity(1.0 / trap.axial_release_factor())
    }
}

/// Transverse variance under harmonic rotation by phase φ = ωt is
/// `mean + amp·cos(2φ − phase)`; returns `(amp, phase)`.
fn transverse_oscillation(summary: &PhaseSpaceSummary, omega: f64) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut c = 0.0;
    for ax in TRANSVERSE_AXES {
        a += summary.rms_pos[ax].powi(2);
        b += summary.rms_vel[ax].powi(2) / (omega * omega);
        c += summary.pos_vel_cov[ax] / omega;
    }
    let half_diff = 0.5 * (a - b);
    (half_diff.hypot(c), c.atan2(half_diff))
}

fn earliest_time(phase: f64, omega: f64) -> f64 {
    use std::f64::consts::PI;
    let phi = phase.rem_euclid(PI);
    // rem_euclid can round up to exactly π
    if phi >= PI {
        0.0
    } else {
        phi / omega
    }
}

/// Earliest hold time t ≥ 0 in the trap at which the transverse rms size is minimal.
///
/// Under harmonic evolution the transverse variance is
/// ½(A + B/ω²) + ½(A − B/ω²)·cos 2ωt + (C/ω)·sin 2ωt with A = Σσx², B = Σσv²,
/// C = Σcov(x, v); its minimum follows in closed form.
pub fn recompression_time(summary: &PhaseSpaceSummary, trap: &TrapConfig) -> Result<f64> {
    trap.validate()?;
    let omega = trap.transverse_omega;
    let (amp, phase) = transverse_oscillation(summary, omega);
    if amp == 0.0 {
        return Ok(0.0);
    }
    Ok(earliest_time(0.5 * (phase + std::f64::consts::PI), omega))
}

/// Earliest hold time at which the transverse rms size is maximal, i.e. the
/// transverse velocity spread is minimal (a collimating lens).
pub fn collimation_time(summary: &PhaseSpaceSummary, trap: &TrapConfig) -> Result<f64> {
    trap.validate()?;
    let omega = trap.transverse_omega;
    let (amp, phase) = transverse_oscillation(summary, omega);
    if amp == 0.0 {
        return Ok(0.0);
    }
    Ok(earliest_time(0.5 * phase, omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{CLOUD_RMS_RADIUS_UM, CLOUD_TEMPERATURE_UK, LATTICE_SWITCHING_TIME_US, TRAP_DEPTH_UK};
    use crate::rng::{stream, Purpose};

    fn trap() -> TrapConfig {
        TrapConfig::from_lattice(TRAP_DEPTH_UK, 155.0, 1560.0, LATTICE_SWITCHING_TIME_US).unwrap()
    }

    fn single(p: Vec3, v: Vec3) -> AtomCloud {
        AtomCloud::new(vec![p], vec![v]).unwrap()
    }

    fn sampled(n: usize, seed: u64) -> AtomCloud {
        let mut rng = stream(seed, 0, Purpose::Fixture);
        sample_thermal_cloud(n, CLOUD_TEMPERATURE_UK, CLOUD_RMS_RADIUS_UM, 200.0, &mut rng).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = stream(1, 0, Purpose::Fixture);
        assert!(sample_thermal_cloud(0, 25.0, 17.0, 17.0, &mut rng).is_err());
        assert!(sample_thermal_cloud(10, 0.0, 17.0, 17.0, &mut rng).is_err());
        assert!(sample_thermal_cloud(10, -1.0, 17.0, 17.0, &mut rng).is_err());
        let c = single([0.0; 3], [0.0; 3]);
        assert!(free_flight(&c, -1.0, &GravityConfig::none()).is_err());
        assert!(harmonic_evolve(&c, &trap(), -0.1).is_err());
        assert!(AtomCloud::new(vec![[0.0; 3]], vec![]).is_err());
    }

    #[test]
    fn thermal_velocity_matches_rubidium_at_25_microkelvin() {
        // √(1.380649e-23 · 25e-6 / 1.4432e-25) m/s, evaluated by hand: 0.0489045 m/s
        let v = thermal_velocity_um_per_ms(25.0);
        assert!((v - 48.9045).abs() < 1e-3, "{v}");
    }

    #[test]
    fn sampled_cloud_moments() {
        let cloud = sampled(100_000, 11);
        assert_eq!(cloud.len(), 100_000);
        let s = summarize(&cloud);
        for a in TRANSVERSE_AXES {
            assert!((s.rms_pos[a] / 17.0 - 1.0).abs() < 0.05);
        }
        assert!((s.rms_pos[AXIAL] / 200.0 - 1.0).abs() < 0.05);
        for a in 0..3 {
            assert!((s.rms_vel[a] / 48.9045 - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn near_zero_temperature_freezes_velocities() {
        let mut rng = stream(3, 0, Purpose::Fixture);
        let cloud = sample_thermal_cloud(1000, 1e-12, 17.0, 17.0, &mut rng).unwrap();
        assert!(cloud.velocities().iter().flatten().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sampled(500, 5), sampled(500, 5));
        assert_ne!(sampled(500, 5), sampled(500, 6));
    }

    #[test]
    fn free_flight_examples() {
        let g = GravityConfig::new([0.0, 0.0, -1.0], 9.81).unwrap();
        let c = free_flight(&single([0.0; 3], [0.0; 3]), 1.0, &g).unwrap();
        assert!((c.positions()[0][2] + 4.905).abs() < 1e-12);
        assert!((c.velocities()[0][2] + 9.81).abs() < 1e-12);

        let c0 = single([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        assert_eq!(free_flight(&c0, 0.0, &g).unwrap(), c0);

        let c = free_flight(&single([0.0; 3], [50.0, 0.0, 0.0]), 3.0, &GravityConfig::none()).unwrap();
        assert!((c.positions()[0][0] - 150.0).abs() < 1e-12);
    }

    #[test]
    fn free_flight_composes() {
        let g = GravityConfig::new([1.0, 0.0, -1.0], 9.81).unwrap();
        let c = sampled(200, 2);
        let once = free_flight(&c, 1.7, &g).unwrap();
        let twice = free_flight(&free_flight(&c, 0.6, &g).unwrap(), 1.1, &g).unwrap();
        for (a, b) in once.positions().iter().zip(twice.positions()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn harmonic_quarter_and_full_period() {
        let t = trap();
        let w = t.transverse_omega;
        let c = harmonic_evolve(&single([5.0, 0.0, 0.0], [0.0; 3]), &t, std::f64::consts::FRAC_PI_2 / w).unwrap();
        assert!(c.positions()[0][0].abs() < 1e-12);
        assert!((c.velocities()[0][0] + 5.0 * w).abs() < 1e-12);

        let c0 = single([3.0, -2.0, 0.0], [10.0, 7.0, 0.0]);
        let c = harmonic_evolve(&c0, &t, t.transverse_period()).unwrap();
        for k in 0..2 {
            assert!((c.positions()[0][k] - c0.positions()[0][k]).abs() < 1e-12 * 10.0);
            assert!((c.velocities()[0][k] - c0.velocities()[0][k]).abs() < 1e-12 * 10.0);
        }
    }

    #[test]
    fn harmonic_conserves_energy_per_atom() {
        let t = trap();
        let w = t.omegas();
        let c = sampled(500, 4);
        let e = |p: &Vec3, v: &Vec3| -> Vec3 { [0, 1, 2].map(|a| 0.5 * v[a] * v[a] + 0.5 * w[a] * w[a] * p[a] * p[a]) };
        let out = harmonic_evolve(&c, &t, 0.37).unwrap();
        for i in 0..c.len() {
            let (e0, e1) = (
                e(&c.positions()[i], &c.velocities()[i]),
                e(&out.positions()[i], &out.velocities()[i]),
            );
            for a in 0..3 {
                assert!((e0[a] - e1[a]).abs() <= 1e-10 * e0[a].max(1e-300));
            }
        }
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&single([0.0; 3], [0.0; 3]));
        assert_eq!(s.rms_pos, [0.0; 3]);
        assert_eq!(s.centroid_pos, [0.0; 3]);
        let c = AtomCloud::new(vec![[2.5, 0.0, 0.0], [-2.5, 0.0, 0.0]], vec![[0.0; 3]; 2]).unwrap();
        assert_eq!(summarize(&c).rms_pos[0], 2.5);
    }

    #[test]
    fn ballistic_expansion_law() {
        let c = sampled(100_000, 8);
        let s0 = summarize(&c);
        let dt = 2.0;
        let s1 = summarize(&free_flight(&c, dt, &GravityConfig::none()).unwrap());
        for a in 0..3 {
            let expected = s0.rms_pos[a].powi(2) + s0.rms_vel[a].powi(2) * dt * dt;
            // pos/vel are independent, so the cross term only carries sampling noise
            assert!((s1.rms_pos[a].powi(2) / expected - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn analytic_moments_track_sampled_cloud() {
        let t = trap();
        let g = GravityConfig::new([-1.0, 0.0, 0.0], 9.81).unwrap();
        let c = sampled(2000, 9);
        let s = summarize(&c);
        let evolved = harmonic_evolve(
            &recapture(&free_flight(&release(&c, &t), 1.3, &g).unwrap(), &t),
            &t,
            0.42,
        )
        .unwrap();
        let predicted = s
            .after_release(&t)
            .after_free_flight(1.3, &g)
            .after_recapture(&t)
            .after_harmonic(&t, 0.42);
        let actual = summarize(&evolved);
        for a in 0..3 {
            assert!((predicted.rms_pos[a] - actual.rms_pos[a]).abs() < 1e-8 * actual.rms_pos[a]);
            assert!((predicted.rms_vel[a] - actual.rms_vel[a]).abs() < 1e-8 * actual.rms_vel[a]);
            assert!(
                (predicted.pos_vel_cov[a] - actual.pos_vel_cov[a]).abs() < 1e-7 * actual.rms_pos[a] * actual.rms_vel[a]
            );
            assert!((predicted.centroid_pos[a] - actual.centroid_pos[a]).abs() < 1e-9 * (1.0 + actual.rms_pos[a]));
        }
    }

    #[test]
    fn recompression_zero_at_own_minimum() {
        let t = trap();
        let w = t.transverse_omega;
        // size below equilibrium (σv/ω larger than σx), no correlation
        let s = PhaseSpaceSummary {
            n: 1,
            centroid_pos: [0.0; 3],
            centroid_vel: [0.0; 3],
            rms_pos: [5.0, 5.0, 1.0],
            rms_vel: [10.0 * w, 10.0 * w, 1.0],
            pos_vel_cov: [0.0; 3],
        };
        assert_eq!(recompression_time(&s, &t).unwrap(), 0.0);
        let zero = summarize(&single([0.0; 3], [0.0; 3]));
        assert_eq!(recompression_time(&zero, &t).unwrap(), 0.0);
    }

    #[test]
    fn recompression_matches_dense_scan() {
        let t = trap();
        let c = sampled(4000, 12);
        let g = GravityConfig::new([-1.0, 0.0, 0.0], 9.81).unwrap();
        for dt in [0.4, 1.0, 3.0] {
            let flown = free_flight(&c, dt, &g).unwrap();
            let t_star = recompression_time(&summarize(&flown), &t).unwrap();
            assert!(t_star >= 0.0 && t_star < 0.5 * t.transverse_period());
            // scan harmonic_evolve at 0.1 μs steps over half a period
            let steps = (0.5 * t.transverse_period() / 1e-4) as usize;
            let mut best = (f64::INFINITY, 0.0);
            let mut k = 0;
            while k <= steps {
                let hold = k as f64 * 1e-4;
                let rms = summarize(&harmonic_evolve(&flown, &t, hold).unwrap()).transverse_rms();
                if rms < best.0 {
                    best = (rms, hold);
                }
                k += 25; // 2.5 μs coarse pass
            }
            let (lo, hi) = ((best.1 - 3e-3f64).max(0.0), best.1 + 3e-3);
            let mut hold = lo;
            while hold <= hi {
                let rms = summarize(&harmonic_evolve(&flown, &t, hold).unwrap()).transverse_rms();
                if rms < best.0 {
                    best = (rms, hold);
                }
                hold += 1e-4;
            }
            assert!(
                (best.1 - t_star).abs() < 1e-3,
                "dt={dt}: scan {} vs closed form {t_star}",
                best.1
            );
        }
    }

    #[test]
    fn collimation_is_quarter_period_after_recompression() {
        let t = trap();
        let s = CloudSpec {
            temperature_uk: 25.0,
            rms_radius_transverse_um: 17.0,
            rms_radius_longitudinal_um: 200.0,
        }
        .expected_summary()
        .after_free_flight(0.6, &GravityConfig::none());
        let tr = recompression_time(&s, &t).unwrap();
        let tc = collimation_time(&s, &t).unwrap();
        let quarter = 0.25 * t.transverse_period();
        let gap = (tc - tr).rem_euclid(2.0 * quarter);
        assert!((gap - quarter).abs() < 1e-9);
        let rms_c = s.after_harmonic(&t, tc).rms_vel[0];
        assert!(rms_c < s.rms_vel[0]);
    }

    #[test]
    fn lattice_frequencies() {
        let t = trap();
        // ω⊥ = √(4U₀/m)/w with U₀ = k_B·520 μK, w = 155 μm
        let expected = (4.0 * 1.380649e-23 * 520e-6 / 1.4432e-25f64).sqrt() * 1e3 / 155.0;
        assert!((t.transverse_omega - expected).abs() < 1e-12 * expected);
        assert!(t.site_omega > 1000.0 * t.longitudinal_omega);
        let f = t.axial_release_factor();
        assert!(f > 0.0 && f < 1.0);
        let sudden = TrapConfig {
            switching_time_us: 0.0,
            ..t
        };
        assert_eq!(sudden.axial_release_factor(), 1.0);
        let c = sampled(10, 1);
        assert_eq!(recapture(&release(&c, &sudden), &sudden), c);
    }

    #[test]
    fn gravity_magnitude() {
        let g = GravityConfig::new([1.0, 2.0, -2.0], 9.81).unwrap();
        assert!((g.magnitude() - 9.81).abs() < 1e-12);
        assert!(GravityConfig::new([0.0; 3], 9.81).is_err());
    }
}
