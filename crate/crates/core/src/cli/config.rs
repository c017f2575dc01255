//! TOML run configuration. Every section is optional and falls back to the
//! reference setup; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::*;
use crate::coupling::{calibrate_geometry, CalibratedGeometry, CavityMode, LongitudinalRegime};
use crate::ensemble::{CloudSpec, GravityConfig, TrapConfig};
use crate::error::Result;
use crate::measurement::{ProbeConfig, ProbeRole};
use crate::protocols::{
    CouplingSource, CssEstimateSettings, HoldPolicy, Physics, Protocol, ProtocolChoice, RamseySettings, SpinSource,
    SweepSettings,
};
use crate::spin::CollectiveSpinState;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("{0}")]
    Invalid(#[from] crate::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub cloud: CloudSection,
    #[serde(default)]
    pub trap: TrapSection,
    #[serde(default)]
    pub gravity: GravitySection,
    #[serde(default)]
    pub cavity: CavitySection,
    #[serde(default)]
    pub spin: SpinSection,
    #[serde(default)]
    pub probes: ProbeSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub trials: usize,
    pub bootstrap_resamples: usize,
    pub histogram_bins: usize,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 700,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
            histogram_bins: 40,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSection {
    pub temperature_uk: f64,
    pub rms_radius_transverse_um: f64,
    pub rms_radius_longitudinal_um: f64,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self {
            temperature_uk: CLOUD_TEMPERATURE_UK,
            rms_radius_transverse_um: CLOUD_RMS_RADIUS_UM,
            rms_radius_longitudinal_um: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub depth_uk: f64,
    pub waist_um: f64,
    pub lattice_wavelength_nm: f64,
    pub switching_time_us: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        Self {
            depth_uk: TRAP_DEPTH_UK,
            waist_um: 155.0,
            lattice_wavelength_nm: LATTICE_WAVELENGTH_NM,
            switching_time_us: LATTICE_SWITCHING_TIME_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GravitySection {
    pub direction: [f64; 3],
    pub magnitude: f64,
}

impl Default for GravitySection {
    fn default() -> Self {
        Self {
            direction: [-1.0, 0.0, 0.0],
            magnitude: STANDARD_GRAVITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavitySection {
    pub probe_wavelength_nm: f64,
    pub delta_0_hz: f64,
    pub target_mean_eta: f64,
    pub transverse_share: f64,
    /// Overrides the calibrated waist; `inf` forces a uniform transverse profile.
    pub waist_um: Option<f64>,
    /// Overrides the calibrated Δk (fraction of the probe wavenumber).
    pub commensurability_detuning: Option<f64>,
    pub readout_regime: LongitudinalRegime,
}

impl Default for CavitySection {
    fn default() -> Self {
        Self {
            probe_wavelength_nm: PROBE_WAVELENGTH_NM,
            delta_0_hz: DELTA_0_HZ,
            target_mean_eta: REFERENCE_MEAN_ETA,
            transverse_share: 1.0,
            waist_um: None,
            commensurability_detuning: None,
            readout_regime: LongitudinalRegime::Pinned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinSection {
    pub atoms: usize,
    pub xi_sq_in: f64,
    pub coherence: f64,
    pub tilt_theta: f64,
    pub source: SpinSource,
    pub lattice_pulse_coherence_factor: f64,
}

impl Default for SpinSection {
    fn default() -> Self {
        Self {
            atoms: REFERENCE_ATOM_NUMBER,
            xi_sq_in: 0.05,
            coherence: REFERENCE_COHERENCE,
            tilt_theta: 0.0,
            source: SpinSource::Squeezed,
            lattice_pulse_coherence_factor: 0.95,
        }
    }
}

/// Probe noise given as a total angle noise split between the two probes.
/// The preparation share is quadrature noise, the readout share spin flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub discriminator: f64,
    pub angle_noise_rad: f64,
    pub preparation_fraction: f64,
    pub preparation_strength: f64,
    pub readout_strength: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            discriminator: 1.0,
            angle_noise_rad: REFERENCE_ANGLE_NOISE_RAD,
            preparation_fraction: 2.0 / 3.0,
            preparation_strength: 0.6,
            readout_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    Rr,
    Dk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub kind: ProtocolName,
    pub free_fall_ms: f64,
    /// Δt′ for delta-kick runs; the timing table is used when absent.
    pub reshape_ms: Option<f64>,
    pub epsilon: f64,
    pub hold: HoldPolicy,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            kind: ProtocolName::Rr,
            free_fall_ms: 0.0,
            reshape_ms: None,
            epsilon: 0.0,
            hold: HoldPolicy::Fixed { hold_ms: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub free_fall_ms: Vec<f64>,
    /// Rotations for the angle-equivalence sweep; empty skips it.
    pub epsilons: Vec<f64>,
    pub angle_trials: usize,
    pub angle_atoms: usize,
    pub theory_atoms: f64,
    pub theory_sigma_rad: f64,
    pub ramsey: RamseySettings,
    pub css_estimate: Option<CssEstimateSettings>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            free_fall_ms: vec![0.0, 0.7, 1.4, 2.0, 3.0],
            epsilons: Vec::new(),
            angle_trials: 2000,
            angle_atoms: 50_000,
            theory_atoms: REFERENCE_ATOM_NUMBER as f64,
            theory_sigma_rad: REFERENCE_ANGLE_NOISE_RAD,
            ramsey: RamseySettings {
                half_span_rad: 0.2,
                points: 21,
                noise_per_point: 0.002,
            },
            css_estimate: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(cfg.schema_version));
        }
        cfg.physics()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn trap(&self) -> Result<TrapConfig> {
        let t = &self.trap;
        TrapConfig::from_lattice(t.depth_uk, t.waist_um, t.lattice_wavelength_nm, t.switching_time_us)
    }

    pub fn cloud(&self) -> CloudSpec {
        CloudSpec {
            temperature_uk: self.cloud.temperature_uk,
            rms_radius_transverse_um: self.cloud.rms_radius_transverse_um,
            rms_radius_longitudinal_um: self.cloud.rms_radius_longitudinal_um,
        }
    }

    /// Calibrated mode before any explicit waist/Δk override.
    pub fn calibration(&self) -> Result<CalibratedGeometry> {
        let c = &self.cavity;
        let template = CavityMode {
            waist_um: 1.0,
            probe_wavelength_nm: c.probe_wavelength_nm,
            lattice_wavelength_nm: self.trap.lattice_wavelength_nm,
            commensurability_detuning: 0.0,
        };
        calibrate_geometry(
            self.cloud.rms_radius_transverse_um,
            self.cloud.rms_radius_longitudinal_um,
            c.target_mean_eta,
            c.transverse_share,
            &template,
        )
    }

    pub fn mode(&self) -> Result<CavityMode> {
        let mut mode = self.calibration()?.mode;
        if let Some(w) = self.cavity.waist_um {
            mode.waist_um = w;
        }
        if let Some(dk) = self.cavity.commensurability_detuning {
            mode.commensurability_detuning = dk;
        }
        mode.validate()?;
        Ok(mode)
    }

    pub fn physics(&self) -> Result<Physics> {
        let s = &self.spin;
        let physics = Physics {
            cloud: self.cloud(),
            trap: self.trap()?,
            gravity: GravityConfig::new(self.gravity.direction, self.gravity.magnitude)?,
            mode: self.mode()?,
            readout_regime: self.cavity.readout_regime,
            delta_0_hz: self.cavity.delta_0_hz,
            spin: CollectiveSpinState {
                n: s.atoms,
                tilt_theta: s.tilt_theta,
                xi_sq_in: s.xi_sq_in,
                coherence_c: s.coherence,
            },
            spin_source: s.source,
            coupling_source: CouplingSource::Cloud,
            lattice_pulse_coherence_factor: s.lattice_pulse_coherence_factor,
        };
        physics.validate()?;
        self.probes()?;
        Ok(physics)
    }

    /// (σ₁², σ₂²) from the configured total and split.
    pub fn probe_noise_split(&self) -> (f64, f64) {
        let total = self.probes.angle_noise_rad.powi(2);
        let f = self.probes.preparation_fraction;
        (f * total, (1.0 - f) * total)
    }

    pub fn probes(&self) -> Result<[ProbeConfig; 2]> {
        let p = &self.probes;
        if !(0.0..=1.0).contains(&p.preparation_fraction) {
            return Err(crate::error::invalid("preparation_fraction", "must lie in [0, 1]"));
        }
        let (s1_sq, s2_sq) = self.probe_noise_split();
        let n = self.spin.atoms as f64;
        let prep = ProbeConfig {
            role: ProbeRole::Preparation,
            discriminator: p.discriminator,
            quadrature_noise_var: s1_sq * (p.discriminator * n).powi(2) / 4.0,
            spin_flip_noise_var: 0.0,
            strength_label: p.preparation_strength,
        };
        let readout = ProbeConfig {
            role: ProbeRole::Readout,
            discriminator: p.discriminator,
            quadrature_noise_var: 0.0,
            spin_flip_noise_var: s2_sq,
            strength_label: p.readout_strength,
        };
        prep.validate()?;
        readout.validate()?;
        Ok([prep, readout])
    }

    pub fn protocol_choice(&self) -> ProtocolChoice {
        match self.protocol.kind {
            ProtocolName::Rr => ProtocolChoice::ReleaseRecapture,
            ProtocolName::Dk => ProtocolChoice::DeltaKick {
                reshape_ms: self.protocol.reshape_ms,
            },
        }
    }

    pub fn protocol(&self, physics: &Physics) -> Result<Protocol> {
        self.protocol_choice().build(
            self.protocol.free_fall_ms,
            self.protocol.epsilon,
            self.probes()?,
            self.protocol.hold,
            physics,
        )
    }

    pub fn sweep_settings(&self) -> Result<SweepSettings> {
        Ok(SweepSettings {
            protocol: self.protocol_choice(),
            hold: self.protocol.hold,
            epsilon: self.protocol.epsilon,
            probes: self.probes()?,
            ramsey: self.sweep.ramsey,
            css_estimate: self.sweep.css_estimate,
        })
    }
}
