//! Per-atom fractional couplings to the probe mode and the effective-observable
//! statistics derived from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{AtomCloud, Vec3};
use crate::error::{invalid, Error, Result};

/// Probe standing-wave mode of the cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    /// 1/e² intensity radius, μm. `f64::INFINITY` gives a transversely flat mode.
    pub waist_um: f64,
    pub probe_wavelength_nm: f64,
    pub lattice_wavelength_nm: f64,
    /// Residual wavevector mismatch Δk between probe antinodes and lattice sites, rad/μm.
    pub commensurability_detuning: f64,
}

impl CavityMode {
    pub fn validate(&self) -> Result<()> {
        if !(self.waist_um > 0.0) {
            return Err(invalid("waist", "must be positive"));
        }
        if !(self.probe_wavelength_nm > 0.0 && self.lattice_wavelength_nm > 0.0) {
            return Err(invalid("wavelength", "must be positive"));
        }
        if !(self.commensurability_detuning >= 0.0 && self.commensurability_detuning.is_finite()) {
            return Err(invalid("commensurability_detuning", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn probe_k(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.probe_wavelength_nm * 1e-3)
    }

    #[inline]
    pub fn transverse_factor(&self, p: &Vec3) -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        (-2.0 * r2 / (self.waist_um * self.waist_um)).exp()
    }

    #[inline]
    pub fn eta_pinned(&self, p: &Vec3) -> f64 {
        if self.commensurability_detuning == 0.0 {
            return self.transverse_factor(p);
        }
        let c = (self.commensurability_detuning * p[2]).cos();
        self.transverse_factor(p) * c * c
    }

    #[inline]
    pub fn eta_free(&self, p: &Vec3, phase: f64) -> f64 {
        let c = (self.probe_k() * p[2] + phase).cos();
        self.transverse_factor(p) * c * c
    }
}

/// How the axial position maps onto the probe standing wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongitudinalRegime {
    /// Atoms sit at lattice sites; only the commensurability mismatch matters.
    Pinned,
    /// Untrapped atoms with a uniformly random standing-wave phase each.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProfile {
    eta: Vec<f64>,
}

impl CouplingProfile {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(invalid("eta", "profile must be non-empty"));
        }
        if let Some(bad) = eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(invalid("eta", format!("coupling {bad} outside [0, 1]")));
        }
        Ok(Self { eta })
    }

    pub fn homogeneous(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

pub fn coupling_profile<R: Rng + ?Sized>(
    cloud: &AtomCloud,
    mode: &CavityMode,
    regime: LongitudinalRegime,
    rng: &mut R,
) -> Result<CouplingProfile> {
    mode.validate()?;
    let eta = match regime {
        LongitudinalRegime::Pinned => cloud.positions().iter().map(|p| mode.eta_pinned(p)).collect(),
        LongitudinalRegime::Free => cloud
            .positions()
            .iter()
            .map(|p| {
                let phase = rng.random::<f64>() * std::f64::consts::TAU;
                mode.eta_free(p, phase)
            })
            .collect(),
    };
    CouplingProfile::new(eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingStats {
    pub n: usize,
    pub mean_eta: f64,
    pub mean_eta_sq: f64,
    pub n_eff: f64,
    pub p_eff: f64,
    /// Cavity shift per spin flip of the effective observable, Hz.
    pub delta_eff: f64,
    /// Shift per spin flip at unit coupling, Hz.
    pub delta_0: f64,
}

impl CouplingStats {
    /// Statistics from Σηᵢ and Σηᵢ² over `n` atoms.
    pub fn from_sums(n: usize, sum_eta: f64, sum_eta_sq: f64, delta_0: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "profile must be non-empty"));
        }
        if !(sum_eta_sq > 0.0) {
            return Err(Error::DegenerateCoupling);
        }
        let nf = n as f64;
        let n_eff = (sum_eta * sum_eta / sum_eta_sq).min(nf);
        Ok(Self {
            n,
            mean_eta: sum_eta / nf,
            mean_eta_sq: sum_eta_sq / nf,
            n_eff,
            p_eff: (1.0 - n_eff / nf).max(0.0),
            delta_eff: delta_0 * sum_eta_sq / sum_eta,
            delta_0,
        })
    }

    /// Prefactor ⟨η⟩/⟨η²⟩ of the effective observable.
    pub fn eff_weight(&self) -> f64 {
        self.mean_eta / self.mean_eta_sq
    }
}

pub fn coupling_stats(profile: &CouplingProfile, delta_0: f64) -> Result<CouplingStats> {
    let (s1, s2) = profile.eta().iter().fold((0.0, 0.0), |(a, b), e| (a + e, b + e * e));
    CouplingStats::from_sums(profile.len(), s1, s2, delta_0)
}

/// ⟨η⟩ of a pinned, centred Gaussian cloud with the given per-axis rms sizes.
///
/// Transverse: E[exp(−2(x²+y²)/w²)] = 1/(1 + 4σ⊥²/w²).
/// Axial: E[cos²(Δk·z)] = (1 + exp(−2Δk²σz²))/2.
pub fn expected_mean_eta(rms_transverse_um: f64, rms_longitudinal_um: f64, mode: &CavityMode) -> f64 {
    let transverse = 1.0 / (1.0 + 4.0 * rms_transverse_um.powi(2) / mode.waist_um.powi(2));
    let dk = mode.commensurability_detuning;
    let axial = 0.5 * (1.0 + (-2.0 * dk * dk * rms_longitudinal_um.powi(2)).exp());
    transverse * axial
}

/// Result of fitting waist and Δk to a target ⟨η⟩ at Δt = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedGeometry {
    pub mode: CavityMode,
    pub target_mean_eta: f64,
    /// Fraction of the log-inhomogeneity assigned to the transverse profile.
    pub transverse_share: f64,
    pub achieved_mean_eta: f64,
}

/// Chooses waist and Δk so that a pinned Gaussian cloud reaches `target` mean coupling,
/// with ln(target) split as `transverse_share` : `1 − transverse_share` between the
/// transverse Gaussian and the axial commensurability factor.
pub fn calibrate_geometry(
    rms_transverse_um: f64,
    rms_longitudinal_um: f64,
    target: f64,
    transverse_share: f64,
    template: &CavityMode,
) -> Result<CalibratedGeometry> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(invalid("target_mean_eta", "must lie in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&transverse_share) {
        return Err(invalid("transverse_share", "must lie in [0, 1]"));
    }
    if !(rms_transverse_um > 0.0 && rms_longitudinal_um > 0.0) {
        return Err(invalid("rms_radius", "radii must be positive"));
    }
    let transverse_target = target.powf(transverse_share);
    let axial_target = target.powf(1.0 - transverse_share);
    let waist_um = if transverse_target >= 1.0 {
        f64::INFINITY
    } else {
        (4.0 * rms_transverse_um.powi(2) / (1.0 / transverse_target - 1.0)).sqrt()
    };
    let commensurability_detuning = if axial_target >= 1.0 {
        0.0
    } else {
        let x = 2.0 * axial_target - 1.0;
        if x <= 0.0 {
            return Err(invalid(
                "transverse_share",
                format!("axial factor {axial_target} is unreachable; the axial average cannot drop below 1/2"),
            ));
        }
        (-x.ln() / (2.0 * rms_longitudinal_um.powi(2))).sqrt()
    };
    let mode = CavityMode {
        waist_um,
        commensurability_detuning,
        ..*template
    };
    mode.validate()?;
    Ok(CalibratedGeometry {
        mode,
        target_mean_eta: target,
        transverse_share,
        achieved_mean_eta: expected_mean_eta(rms_transverse_um, rms_longitudinal_um, &mode),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{CLOUD_RMS_RADIUS_UM, DELTA_0_HZ, REFERENCE_MEAN_ETA};
    use crate::ensemble::{free_flight, sample_thermal_cloud, GravityConfig};
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;

    fn mode(waist: f64, dk: f64) -> CavityMode {
        CavityMode {
            waist_um: waist,
            probe_wavelength_nm: 780.0,
            lattice_wavelength_nm: 1560.0,
            commensurability_detuning: dk,
        }
    }

    fn single(p: Vec3) -> AtomCloud {
        AtomCloud::new(vec![p], vec![[0.0; 3]]).unwrap()
    }

    fn pinned(cloud: &AtomCloud, m: &CavityMode) -> CouplingProfile {
        let mut rng = stream(0, 0, Purpose::Fixture);
        coupling_profile(cloud, m, LongitudinalRegime::Pinned, &mut rng).unwrap()
    }

    #[test]
    fn single_atom_couplings() {
        let m = mode(100.0, 0.0);
        assert_eq!(pinned(&single([0.0; 3]), &m).eta(), &[1.0]);
        let eta = pinned(&single([100.0 / 2f64.sqrt(), 0.0, 0.0]), &m).eta()[0];
        assert!((eta - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn free_regime_averages_to_half() {
        let m = mode(f64::INFINITY, 0.0);
        let cloud = AtomCloud::new(vec![[0.0; 3]; 100_000], vec![[0.0; 3]; 100_000]).unwrap();
        let mut rng = stream(1, 0, Purpose::Fixture);
        let p = coupling_profile(&cloud, &m, LongitudinalRegime::Free, &mut rng).unwrap();
        let s = coupling_stats(&p, 1.0).unwrap();
        assert!((s.mean_eta - 0.5).abs() < 0.005);
        // E[cos⁴] = 3/8
        assert!((s.mean_eta_sq - 0.375).abs() < 0.005);
    }

    #[test]
    fn stats_examples() {
        let s = coupling_stats(&CouplingProfile::homogeneous(100).unwrap(), DELTA_0_HZ).unwrap();
        assert_eq!((s.n_eff, s.p_eff, s.delta_eff), (100.0, 0.0, DELTA_0_HZ));
        let s = coupling_stats(&CouplingProfile::new(vec![1.0, 0.5]).unwrap(), 1.0).unwrap();
        assert!((s.n_eff - 1.8).abs() < 1e-15);
        assert!((s.p_eff - 0.1).abs() < 1e-15);
        assert!((s.delta_eff - 1.25 / 1.5).abs() < 1e-15);
        assert_eq!(
            coupling_stats(&CouplingProfile::new(vec![0.0; 4]).unwrap(), 1.0),
            Err(Error::DegenerateCoupling)
        );
        assert!(CouplingProfile::new(vec![1.2]).is_err());
        assert!(CouplingProfile::new(vec![]).is_err());
    }

    #[test]
    fn equal_nonzero_couplings_give_full_n_eff() {
        let s = coupling_stats(&CouplingProfile::new(vec![0.3, 0.0, 0.3, 0.3]).unwrap(), 1.0).unwrap();
        assert!((s.n_eff - 3.0).abs() < 1e-12);
        let s = coupling_stats(&CouplingProfile::new(vec![0.3, 0.31, 0.3]).unwrap(), 1.0).unwrap();
        assert!(s.n_eff < 3.0);
    }

    #[test]
    fn calibration_hits_target() {
        let template = mode(1.0, 0.0);
        for share in [0.0, 0.3, 0.7, 1.0] {
            let cal = calibrate_geometry(17.0, 200.0, REFERENCE_MEAN_ETA, share, &template).unwrap();
            assert!(
                (cal.achieved_mean_eta - REFERENCE_MEAN_ETA).abs() < 1e-12,
                "share {share}"
            );
            let again = calibrate_geometry(17.0, 200.0, cal.achieved_mean_eta, share, &template).unwrap();
            if cal.mode.waist_um.is_finite() {
                assert!((again.mode.waist_um / cal.mode.waist_um - 1.0).abs() < 1e-9);
            } else {
                assert!(again.mode.waist_um.is_infinite());
            }
        }
        let flat = calibrate_geometry(17.0, 200.0, 1.0, 1.0, &template).unwrap();
        assert!(flat.mode.waist_um.is_infinite());
        assert_eq!(flat.mode.commensurability_detuning, 0.0);
        assert_eq!(flat.achieved_mean_eta, 1.0);
        assert!(calibrate_geometry(17.0, 200.0, 0.3, 0.0, &template).is_err());
    }

    #[test]
    fn calibrated_cloud_reaches_reference_mean() {
        let cal = calibrate_geometry(CLOUD_RMS_RADIUS_UM, 200.0, REFERENCE_MEAN_ETA, 1.0, &mode(1.0, 0.0)).unwrap();
        let mut rng = stream(4, 0, Purpose::Fixture);
        let cloud = sample_thermal_cloud(500_000, 25.0, CLOUD_RMS_RADIUS_UM, 200.0, &mut rng).unwrap();
        let s = coupling_stats(&pinned(&cloud, &cal.mode), DELTA_0_HZ).unwrap();
        assert!((s.mean_eta - REFERENCE_MEAN_ETA).abs() < 5e-4, "{}", s.mean_eta);
    }

    #[test]
    fn p_eff_grows_with_free_fall() {
        let cal = calibrate_geometry(CLOUD_RMS_RADIUS_UM, 200.0, REFERENCE_MEAN_ETA, 1.0, &mode(1.0, 0.0)).unwrap();
        let mut rng = stream(5, 0, Purpose::Fixture);
        let cloud = sample_thermal_cloud(50_000, 25.0, CLOUD_RMS_RADIUS_UM, 200.0, &mut rng).unwrap();
        let g = GravityConfig::new([-1.0, 0.0, 0.0], 9.81).unwrap();
        let mut last = -1.0;
        for dt in [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0] {
            let s = coupling_stats(&pinned(&free_flight(&cloud, dt, &g).unwrap(), &cal.mode), DELTA_0_HZ).unwrap();
            assert!(s.p_eff >= last, "dt {dt}");
            last = s.p_eff;
        }
    }

    proptest! {
        #[test]
        fn stats_invariants(eta in prop::collection::vec(0.0f64..=1.0, 1..64), c in 0.01f64..=1.0) {
            prop_assume!(eta.iter().any(|e| *e > 1e-6));
            let s = coupling_stats(&CouplingProfile::new(eta.clone()).unwrap(), DELTA_0_HZ).unwrap();
            prop_assert!(s.mean_eta_sq <= s.mean_eta * (1.0 + 1e-12));
            prop_assert!(s.mean_eta * s.mean_eta <= s.mean_eta_sq * (1.0 + 1e-12));
            prop_assert!(s.n_eff <= eta.len() as f64);
            prop_assert!((0.0..1.0).contains(&s.p_eff));
            prop_assert!(s.delta_eff <= DELTA_0_HZ * (1.0 + 1e-12));
            let scaled = coupling_stats(&CouplingProfile::new(eta.iter().map(|e| e * c).collect()).unwrap(), DELTA_0_HZ).unwrap();
            prop_assert!((scaled.n_eff - s.n_eff).abs() <= 1e-9 * s.n_eff);
            prop_assert!((scaled.p_eff - s.p_eff).abs() <= 1e-9);
        }
    }
}
