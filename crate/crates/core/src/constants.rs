//! Physical constants and reference values shared by every module.
//!
//! Lengths are in μm, times in ms, temperatures in μK. One μm/ms equals
//! one mm/s, so standard gravity is 9.81 μm/ms².

/// Boltzmann constant, J/K.
pub const BOLTZMANN_J_PER_K: f64 = 1.380649e-23;

/// Mass of a ⁸⁷Rb atom, kg.
pub const RB87_MASS_KG: f64 = 1.4432e-25;

/// Standard gravity in μm/ms².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Conversion from m/s to μm/ms.
pub const M_PER_S_TO_UM_PER_MS: f64 = 1.0e3;

/// Cavity shift per spin flip at unit coupling, Hz.
pub const DELTA_0_HZ: f64 = 5.6;

/// Ensemble-averaged coupling of the trapped cloud before any release.
pub const REFERENCE_MEAN_ETA: f64 = 0.9254;

/// Ramsey contrast of the release-recapture sequence.
pub const REFERENCE_COHERENCE: f64 = 0.96;

/// Combined probe angle resolution √(σ₁² + σ₂²) of the back-to-back probes, rad.
pub const REFERENCE_ANGLE_NOISE_RAD: f64 = 298.0e-6;

/// Atom number of the squeezing data.
pub const REFERENCE_ATOM_NUMBER: usize = 500_000;

/// Default number of bootstrap resamples.
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

pub const LATTICE_WAVELENGTH_NM: f64 = 1560.0;
pub const PROBE_WAVELENGTH_NM: f64 = 780.0;
pub const TRAP_DEPTH_UK: f64 = 520.0;
pub const LATTICE_SWITCHING_TIME_US: f64 = 50.0;
pub const CLOUD_TEMPERATURE_UK: f64 = 25.0;
pub const CLOUD_RMS_RADIUS_UM: f64 = 17.0;

/// One-sided standard normal quantile bounding a 68.27 % central interval.
pub const ONE_SIGMA_QUANTILE: f64 = 0.841_344_746_068_542_9;

/// Thermal rms velocity per axis, √(k_B·T/m), in μm/ms for ⁸⁷Rb.
pub fn thermal_velocity_um_per_ms(temperature_uk: f64) -> f64 {
    (BOLTZMANN_J_PER_K * temperature_uk * 1e-6 / RB87_MASS_KG).sqrt() * M_PER_S_TO_UM_PER_MS
}

/// Potential depth U₀ in joules for a depth quoted as a temperature in μK.
pub fn depth_joules(depth_uk: f64) -> f64 {
    BOLTZMANN_J_PER_K * depth_uk * 1e-6
}
