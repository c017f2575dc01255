//! Timed experiment sequences, seeded trials and their aggregation.
//!
//! A [`TrialEngine`] compiles a [`Protocol`] against a [`Physics`] description
//! into a per-atom motion program. Each trial streams over the atoms once:
//! it draws the atom, walks the program, records the coupling at both probes
//! and draws the atom's spin, keeping only running sums. Memory per trial is
//! constant in N. [`run_trial_reference`] composes the same trial from the
//! array-based module operations and serves as its cross-check.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{coupling_profile, CavityMode, CouplingProfile, CouplingStats, LongitudinalRegime};
use crate::ensemble::{
    collimation_time, flight_atom, free_flight, harmonic_evolve, recapture, recompression_time, release, sample_atom,
    sample_thermal_cloud, CloudSpec, GravityConfig, HarmonicStep, PhaseSpaceSummary, TrapConfig, Vec3, AXIAL,
};
use crate::error::{invalid, Error, Result};
use crate::measurement::{
    cavity_shift, delta_theta_sq_analytic, estimate_p_eff_css, max_shift, probe_quadrature, ramsey_coherence,
    ramsey_grid, wineland_with_uncertainty, PeffEstimate, ProbeConfig, ProbeRole, RamseyEstimate, SqueezingReport,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::spin::{
    css_up_probability, draw_css_spin, j_z_eff, j_z_total, sample_css, sample_squeezed, CollectiveSpinState,
    RotateSmall, SurrogateSampler,
};
use crate::stats::{
    bootstrap_std, fit_zero_intercept, histogram, mean, sample_std, BootstrapResult, FitResult, Histogram, Uncertain,
};

/// (Δt′, Δt) pairs of the delta-kick timing table, ms.
pub const DELTA_KICK_TABLE: [(f64, f64); 10] = [
    (0.8, 0.4),
    (0.7, 0.7),
    (0.6, 1.2),
    (0.5, 1.4),
    (0.5, 2.0),
    (0.5, 3.0),
    (0.5, 4.0),
    (0.5, 5.0),
    (0.5, 6.0),
    (0.5, 7.0),
];

/// Reshaping time paired with `dt` in [`DELTA_KICK_TABLE`].
pub fn delta_kick_reshape_for(dt: f64) -> Option<f64> {
    DELTA_KICK_TABLE.iter().find(|(_, t)| *t == dt).map(|(r, _)| *r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    MwPiHalf,
    Presqueeze { xi_sq_in: f64 },
    Probe { probe: ProbeConfig },
    MwSmallRotation { epsilon: f64 },
    LatticeOff,
    LatticeOn,
    MwPiHalfCoherence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStep {
    #[serde(flatten)]
    pub kind: StepKind,
    pub duration_ms: f64,
}

impl SequenceStep {
    fn instant(kind: StepKind) -> Self {
        Self { kind, duration_ms: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum HoldPolicy {
    /// Hold until the recaptured cloud is transversely most compressed.
    Recompress,
    Fixed {
        hold_ms: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    ReleaseRecapture,
    DeltaKick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub label: String,
    pub kind: ProtocolKind,
    pub free_fall_ms: f64,
    pub reshape_ms: Option<f64>,
    pub hold_policy: HoldPolicy,
    /// Hold between recapture and readout actually scheduled.
    pub hold_ms: f64,
    /// Lattice on/off pulses beyond those of release-recapture.
    pub extra_lattice_toggles: u32,
    pub steps: Vec<SequenceStep>,
}

impl Protocol {
    pub fn epsilon(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s.kind {
                StepKind::MwSmallRotation { epsilon } => epsilon,
                _ => 0.0,
            })
            .sum()
    }

    pub fn probe(&self, role: ProbeRole) -> Option<&ProbeConfig> {
        self.steps.iter().find_map(|s| match &s.kind {
            StepKind::Probe { probe } if probe.role == role => Some(probe),
            _ => None,
        })
    }

    pub fn lattice_off_count(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == StepKind::LatticeOff).count()
    }

    fn check(&self) -> Result<()> {
        let mut prep = 0;
        let mut readout = 0;
        for s in &self.steps {
            if !(s.duration_ms >= 0.0 && s.duration_ms.is_finite()) {
                return Err(invalid("duration", "step durations must be finite and non-negative"));
            }
            if let StepKind::Probe { probe } = &s.kind {
                probe.validate()?;
                match probe.role {
                    ProbeRole::Preparation if readout == 0 => prep += 1,
                    ProbeRole::Preparation => return Err(invalid("steps", "preparation probe after readout")),
                    ProbeRole::Readout => readout += 1,
                }
            }
        }
        if prep != 1 || readout != 1 {
            return Err(invalid("steps", "need exactly one preparation and one readout probe"));
        }
        Ok(())
    }
}

/// How atoms get their couplings.
#[derive(Debug, Clone)]
pub enum CouplingSource {
    /// From the sampled, evolved cloud and the cavity mode.
    Cloud,
    /// Fixed per-atom profiles; motion is skipped.
    Injected {
        preparation: Arc<CouplingProfile>,
        readout: Arc<CouplingProfile>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinSource {
    /// Gaussian surrogate with the presqueezed variance.
    Squeezed,
    /// Independent ±½ spins.
    Css,
}

#[derive(Debug, Clone)]
pub struct Physics {
    pub cloud: CloudSpec,
    pub trap: TrapConfig,
    pub gravity: GravityConfig,
    pub mode: CavityMode,
    pub readout_regime: LongitudinalRegime,
    pub delta_0_hz: f64,
    pub spin: CollectiveSpinState,
    pub spin_source: SpinSource,
    pub coupling_source: CouplingSource,
    /// Contrast factor per extra lattice on/off pulse.
    pub lattice_pulse_coherence_factor: f64,
}

impl Physics {
    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        self.trap.validate()?;
        self.mode.validate()?;
        self.spin.validate()?;
        if !(self.lattice_pulse_coherence_factor > 0.0 && self.lattice_pulse_coherence_factor <= 1.0) {
            return Err(invalid("lattice_pulse_coherence_factor", "must lie in (0, 1]"));
        }
        if let CouplingSource::Injected { preparation, readout } = &self.coupling_source {
            for p in [preparation, readout] {
                if p.len() != self.spin.n {
                    return Err(Error::LengthMismatch {
                        spins: self.spin.n,
                        couplings: p.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Contrast after `extra_toggles` additional lattice pulses.
    pub fn coherence_for(&self, extra_toggles: u32) -> f64 {
        self.spin.coherence_c * self.lattice_pulse_coherence_factor.powi(extra_toggles as i32)
    }
}

fn lattice_pair(off_ms: f64, on_ms: f64) -> [SequenceStep; 2] {
    [
        SequenceStep {
            kind: StepKind::LatticeOff,
            duration_ms: off_ms,
        },
        SequenceStep {
            kind: StepKind::LatticeOn,
            duration_ms: on_ms,
        },
    ]
}

fn measurement_steps(epsilon: f64, xi_sq_in: f64, prep: ProbeConfig) -> Vec<SequenceStep> {
    vec![
        SequenceStep::instant(StepKind::MwPiHalf),
        SequenceStep::instant(StepKind::Presqueeze { xi_sq_in }),
        SequenceStep::instant(StepKind::Probe { probe: prep }),
        SequenceStep::instant(StepKind::MwSmallRotation { epsilon }),
    ]
}

fn check_probes(probes: &[ProbeConfig; 2]) -> Result<()> {
    if probes[0].role != ProbeRole::Preparation || probes[1].role != ProbeRole::Readout {
        return Err(invalid("probes", "expected (preparation, readout)"));
    }
    probes[0].validate()?;
    probes[1].validate()
}

fn resolve_hold(hold: HoldPolicy, at_recapture: &PhaseSpaceSummary, trap: &TrapConfig) -> Result<f64> {
    match hold {
        HoldPolicy::Recompress => recompression_time(at_recapture, trap),
        HoldPolicy::Fixed { hold_ms } if hold_ms >= 0.0 && hold_ms.is_finite() => Ok(hold_ms),
        HoldPolicy::Fixed { .. } => Err(invalid("hold_ms", "must be finite and non-negative")),
    }
}

fn release_then_recapture(s: &PhaseSpaceSummary, dt: f64, physics: &Physics) -> PhaseSpaceSummary {
    s.after_release(&physics.trap)
        .after_free_flight(dt, &physics.gravity)
        .after_recapture(&physics.trap)
}

fn finish_measurement(
    mut steps: Vec<SequenceStep>,
    start: PhaseSpaceSummary,
    dt: f64,
    readout: ProbeConfig,
    hold: HoldPolicy,
    physics: &Physics,
) -> Result<(Vec<SequenceStep>, f64)> {
    let mut hold_ms = 0.0;
    if dt > 0.0 {
        hold_ms = resolve_hold(hold, &release_then_recapture(&start, dt, physics), &physics.trap)?;
        steps.extend(lattice_pair(dt, hold_ms));
    }
    steps.push(SequenceStep::instant(StepKind::Probe { probe: readout }));
    Ok((steps, hold_ms))
}

/// π/2, presqueeze, preparation probe, ε, release for `dt`, recapture and hold, readout.
/// At `dt = 0` the lattice is never switched.
pub fn release_recapture_protocol(
    dt: f64,
    epsilon: f64,
    probes: [ProbeConfig; 2],
    hold: HoldPolicy,
    physics: &Physics,
) -> Result<Protocol> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "free-fall time must be finite and non-negative"));
    }
    check_probes(&probes)?;
    let steps = measurement_steps(epsilon, physics.spin.xi_sq_in, probes[0]);
    let (steps, hold_ms) = finish_measurement(steps, physics.cloud.expected_summary(), dt, probes[1], hold, physics)?;
    Ok(Protocol {
        label: format!("rr_dt{dt}"),
        kind: ProtocolKind::ReleaseRecapture,
        free_fall_ms: dt,
        reshape_ms: None,
        hold_policy: hold,
        hold_ms,
        extra_lattice_toggles: 0,
        steps,
    })
}

/// Release for `dt_prime`, recapture for a quarter oscillation to collimate the
/// cloud, then the release-recapture measurement with free fall `dt`.
pub fn delta_kick_protocol(
    dt_prime: f64,
    dt: f64,
    epsilon: f64,
    probes: [ProbeConfig; 2],
    hold: HoldPolicy,
    physics: &Physics,
) -> Result<Protocol> {
    if !(dt_prime >= 0.0 && dt_prime.is_finite()) {
        return Err(invalid("dt_prime", "reshaping time must be finite and non-negative"));
    }
    if dt_prime == 0.0 {
        let mut p = release_recapture_protocol(dt, epsilon, probes, hold, physics)?;
        p.kind = ProtocolKind::DeltaKick;
        p.label = format!("dk_dtp0_dt{dt}");
        p.reshape_ms = Some(0.0);
        return Ok(p);
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "free-fall time must be finite and non-negative"));
    }
    check_probes(&probes)?;
    let recaptured = release_then_recapture(&physics.cloud.expected_summary(), dt_prime, physics);
    let lens_ms = collimation_time(&recaptured, &physics.trap)?;
    let start = recaptured.after_harmonic(&physics.trap, lens_ms);
    let mut steps: Vec<SequenceStep> = lattice_pair(dt_prime, lens_ms).into();
    steps.extend(measurement_steps(epsilon, physics.spin.xi_sq_in, probes[0]));
    let (steps, hold_ms) = finish_measurement(steps, start, dt, probes[1], hold, physics)?;
    Ok(Protocol {
        label: format!("dk_dtp{dt_prime}_dt{dt}"),
        kind: ProtocolKind::DeltaKick,
        free_fall_ms: dt,
        reshape_ms: Some(dt_prime),
        hold_policy: hold,
        hold_ms,
        extra_lattice_toggles: 2,
        steps,
    })
}

/// All rows of [`DELTA_KICK_TABLE`] as protocols.
pub fn delta_kick_table(
    epsilon: f64,
    probes: [ProbeConfig; 2],
    hold: HoldPolicy,
    physics: &Physics,
) -> Result<Vec<Protocol>> {
    DELTA_KICK_TABLE
        .iter()
        .map(|&(r, t)| delta_kick_protocol(r, t, epsilon, probes, hold, physics))
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    ScaleAxialVelocity(f64),
    Flight(f64),
    Harmonic(HarmonicStep),
    MarkPreparation,
    MarkReadout,
}

#[derive(Debug, Clone, Copy)]
enum SpinDraw {
    Squeezed(SurrogateSampler),
    Css { p_up: f64 },
}

/// A protocol compiled against a physics description; reusable across trials.
#[derive(Debug, Clone)]
pub struct TrialEngine {
    protocol: Protocol,
    physics: Physics,
    program: Vec<Motion>,
    spins: SpinDraw,
    prep_probe: ProbeConfig,
    readout_probe: ProbeConfig,
    epsilon: f64,
    state: CollectiveSpinState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: u64,
    pub theta1: f64,
    pub theta2: f64,
    /// 2J_z/N after the ε rotation.
    pub theta0_true: f64,
    /// 2J_z,eff/N_eff at readout.
    pub theta_eff_true: f64,
    pub jz: f64,
    pub jz_eff: f64,
    pub x1_prime: f64,
    pub x2_prime: f64,
    pub preparation: CouplingStats,
    pub readout: CouplingStats,
    pub preparation_shift_hz: f64,
    pub readout_shift_hz: f64,
}

#[derive(Default)]
struct Sums {
    s1p: f64,
    s2p: f64,
    s1r: f64,
    s2r: f64,
    spin: f64,
    eta_p_spin: f64,
    eta_r_spin: f64,
}

impl Sums {
    #[inline]
    fn add(&mut self, eta_p: f64, eta_r: f64, s: f64) {
        self.s1p += eta_p;
        self.s2p += eta_p * eta_p;
        self.s1r += eta_r;
        self.s2r += eta_r * eta_r;
        self.spin += s;
        self.eta_p_spin += eta_p * s;
        self.eta_r_spin += eta_r * s;
    }
}

impl TrialEngine {
    pub fn new(protocol: &Protocol, physics: &Physics) -> Result<Self> {
        protocol.check()?;
        physics.validate()?;
        let mut state = physics.spin;
        let mut program = Vec::new();
        let mut epsilon = 0.0;
        let release_factor = physics.trap.axial_release_factor();
        for step in &protocol.steps {
            match &step.kind {
                StepKind::Presqueeze { xi_sq_in } => state.xi_sq_in = *xi_sq_in,
                StepKind::MwSmallRotation { epsilon: e } => epsilon += e,
                StepKind::Probe { probe } => program.push(match probe.role {
                    ProbeRole::Preparation => Motion::MarkPreparation,
                    ProbeRole::Readout => Motion::MarkReadout,
                }),
                StepKind::LatticeOff => {
                    program.push(Motion::ScaleAxialVelocity(release_factor));
                    program.push(Motion::Flight(step.duration_ms));
                }
                StepKind::LatticeOn => {
                    program.push(Motion::ScaleAxialVelocity(1.0 / release_factor));
                    program.push(Motion::Harmonic(HarmonicStep::new(
                        physics.trap.omegas(),
                        step.duration_ms,
                    )));
                }
                StepKind::MwPiHalf | StepKind::MwPiHalfCoherence => {}
            }
        }
        state.validate()?;
        let spins = match physics.spin_source {
            SpinSource::Squeezed => SpinDraw::Squeezed(SurrogateSampler::new(&state)?),
            SpinSource::Css => SpinDraw::Css {
                p_up: css_up_probability(state.tilt_theta),
            },
        };
        Ok(Self {
            protocol: protocol.clone(),
            physics: physics.clone(),
            program,
            spins,
            prep_probe: *protocol.probe(ProbeRole::Preparation).expect("checked"),
            readout_probe: *protocol.probe(ProbeRole::Readout).expect("checked"),
            epsilon,
            state,
        })
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    /// Spin state after presqueezing (before the ε rotation).
    pub fn spin_state(&self) -> &CollectiveSpinState {
        &self.state
    }

    pub fn coherence(&self) -> f64 {
        self.physics.coherence_for(self.protocol.extra_lattice_toggles)
    }

    #[inline]
    fn walk_atom(&self, p: &mut Vec3, v: &mut Vec3, coupling_rng: &mut crate::rng::Stream) -> (f64, f64) {
        let mode = &self.physics.mode;
        let g = self.physics.gravity.vector;
        let (mut eta_p, mut eta_r) = (0.0, 0.0);
        for m in &self.program {
            match m {
                Motion::ScaleAxialVelocity(f) => v[AXIAL] *= f,
                Motion::Flight(dt) => flight_atom(p, v, *dt, &g),
                Motion::Harmonic(step) => step.apply(p, v),
                Motion::MarkPreparation => eta_p = mode.eta_pinned(p),
                Motion::MarkReadout => {
                    eta_r = match self.physics.readout_regime {
                        LongitudinalRegime::Pinned => mode.eta_pinned(p),
                        LongitudinalRegime::Free => {
                            let phase = rand::Rng::random::<f64>(coupling_rng) * std::f64::consts::TAU;
                            mode.eta_free(p, phase)
                        }
                    }
                }
            }
        }
        (eta_p, eta_r)
    }

    /// One trial on the substreams of `(master_seed, index)`.
    pub fn run(&self, master_seed: u64, index: u64) -> Result<TrialResult> {
        let n = self.state.n;
        let nf = n as f64;
        let mut cloud_rng = stream(master_seed, index, Purpose::Cloud);
        let mut spin_rng = stream(master_seed, index, Purpose::Spins);
        let mut coupling_rng = stream(master_seed, index, Purpose::Coupling);
        let mut probe_rng = stream(master_seed, index, Purpose::Probes);

        let collective = match &self.spins {
            SpinDraw::Squeezed(s) => s.draw_collective(&mut spin_rng),
            SpinDraw::Css { .. } => 0.0,
        };
        let rms_pos = self.physics.cloud.rms_position();
        let rms_vel = self.physics.cloud.rms_velocity();
        let mut sums = Sums::default();
        for i in 0..n {
            let (eta_p, eta_r) = match &self.physics.coupling_source {
                CouplingSource::Cloud => {
                    let (mut p, mut v) = sample_atom(&mut cloud_rng, &rms_pos, rms_vel);
                    self.walk_atom(&mut p, &mut v, &mut coupling_rng)
                }
                CouplingSource::Injected { preparation, readout } => (preparation.eta()[i], readout.eta()[i]),
            };
            let s = match &self.spins {
                SpinDraw::Squeezed(sampler) => sampler.draw_residual(&mut spin_rng),
                SpinDraw::Css { p_up } => draw_css_spin(&mut spin_rng, *p_up),
            };
            sums.add(eta_p, eta_r, s);
        }

        let (jz, eta_p_spin, eta_r_spin) = match &self.spins {
            SpinDraw::Squeezed(_) => {
                // jᵢ = J/N + gᵢ − ḡ, so Σηᵢjᵢ = (J/N − ḡ)·Ση + Σηᵢgᵢ
                let base = collective / nf - sums.spin / nf;
                (
                    collective,
                    base * sums.s1p + sums.eta_p_spin,
                    base * sums.s1r + sums.eta_r_spin,
                )
            }
            SpinDraw::Css { .. } => (sums.spin, sums.eta_p_spin, sums.eta_r_spin),
        };
        let delta_0 = self.physics.delta_0_hz;
        let prep = CouplingStats::from_sums(n, sums.s1p, sums.s2p, delta_0)?;
        let readout = CouplingStats::from_sums(n, sums.s1r, sums.s2r, delta_0)?;
        let jz_eff_prep = sums.s1p / sums.s2p * eta_p_spin;

        let probe1 = probe_quadrature(jz, &self.prep_probe, nf, &mut probe_rng)?;

        let half = 0.5 * self.epsilon;
        let jz_rot = jz + nf * half;
        let jz_eff = sums.s1r / sums.s2r * (eta_r_spin + half * sums.s1r);
        let probe2 = probe_quadrature(jz_eff, &self.readout_probe, readout.n_eff, &mut probe_rng)?;

        Ok(TrialResult {
            trial_index: index,
            theta1: probe1.inferred_theta,
            theta2: probe2.inferred_theta,
            theta0_true: 2.0 * jz_rot / nf,
            theta_eff_true: 2.0 * jz_eff / readout.n_eff,
            jz: jz_rot,
            jz_eff,
            x1_prime: probe1.x_prime,
            x2_prime: probe2.x_prime,
            preparation: prep,
            readout,
            preparation_shift_hz: cavity_shift(jz_eff_prep, &prep),
            readout_shift_hz: cavity_shift(jz_eff, &readout),
        })
    }
}

pub fn run_trial(protocol: &Protocol, physics: &Physics, master_seed: u64, index: u64) -> Result<TrialResult> {
    TrialEngine::new(protocol, physics)?.run(master_seed, index)
}

/// The same trial as [`run_trial`], built from whole-array operations. Slower
/// and memory-hungry; kept as an independent cross-check of the streaming path.
pub fn run_trial_reference(
    protocol: &Protocol,
    physics: &Physics,
    master_seed: u64,
    index: u64,
) -> Result<TrialResult> {
    let engine = TrialEngine::new(protocol, physics)?;
    let state = engine.state;
    let n = state.n;
    let nf = n as f64;
    let mut cloud_rng = stream(master_seed, index, Purpose::Cloud);
    let mut spin_rng = stream(master_seed, index, Purpose::Spins);
    let mut coupling_rng = stream(master_seed, index, Purpose::Coupling);
    let mut probe_rng = stream(master_seed, index, Purpose::Probes);

    let (prep_profile, readout_profile) = match &physics.coupling_source {
        CouplingSource::Injected { preparation, readout } => ((**preparation).clone(), (**readout).clone()),
        CouplingSource::Cloud => {
            let c = &physics.cloud;
            let mut cloud = sample_thermal_cloud(
                n,
                c.temperature_uk,
                c.rms_radius_transverse_um,
                c.rms_radius_longitudinal_um,
                &mut cloud_rng,
            )?;
            let mut prep = None;
            let mut readout = None;
            for step in &protocol.steps {
                match &step.kind {
                    StepKind::LatticeOff => {
                        cloud = free_flight(&release(&cloud, &physics.trap), step.duration_ms, &physics.gravity)?;
                    }
                    StepKind::LatticeOn => {
                        cloud = harmonic_evolve(&recapture(&cloud, &physics.trap), &physics.trap, step.duration_ms)?;
                    }
                    StepKind::Probe { probe } if probe.role == ProbeRole::Preparation => {
                        prep = Some(coupling_profile(
                            &cloud,
                            &physics.mode,
                            LongitudinalRegime::Pinned,
                            &mut coupling_rng,
                        )?);
                    }
                    StepKind::Probe { .. } => {
                        readout = Some(coupling_profile(
                            &cloud,
                            &physics.mode,
                            physics.readout_regime,
                            &mut coupling_rng,
                        )?);
                    }
                    _ => {}
                }
            }
            (prep.expect("checked"), readout.expect("checked"))
        }
    };
    let spins = match physics.spin_source {
        SpinSource::Squeezed => sample_squeezed(&state, &mut spin_rng)?,
        SpinSource::Css => sample_css(n, state.tilt_theta, &mut spin_rng)?,
    };
    let prep = crate::coupling::coupling_stats(&prep_profile, physics.delta_0_hz)?;
    let readout = crate::coupling::coupling_stats(&readout_profile, physics.delta_0_hz)?;
    let jz = j_z_total(&spins);
    let jz_eff_prep = j_z_eff(&spins, &prep_profile)?;
    let probe1 = probe_quadrature(jz, &engine.prep_probe, nf, &mut probe_rng)?;
    let rotated = if engine.epsilon == 0.0 {
        spins
    } else {
        spins.rotate_small(engine.epsilon)?
    };
    let jz_rot = j_z_total(&rotated);
    let jz_eff = j_z_eff(&rotated, &readout_profile)?;
    let probe2 = probe_quadrature(jz_eff, &engine.readout_probe, readout.n_eff, &mut probe_rng)?;
    Ok(TrialResult {
        trial_index: index,
        theta1: probe1.inferred_theta,
        theta2: probe2.inferred_theta,
        theta0_true: 2.0 * jz_rot / nf,
        theta_eff_true: 2.0 * jz_eff / readout.n_eff,
        jz: jz_rot,
        jz_eff,
        x1_prime: probe1.x_prime,
        x2_prime: probe2.x_prime,
        preparation: prep,
        readout,
        preparation_shift_hz: cavity_shift(jz_eff_prep, &prep),
        readout_shift_hz: cavity_shift(jz_eff, &readout),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub n_trials: usize,
    pub master_seed: u64,
    pub bootstrap_resamples: usize,
    pub histogram_bins: usize,
    /// Uncertainty assigned to the coherence in the ξ² interval.
    pub coherence_u: f64,
}

impl ExperimentOptions {
    pub fn new(n_trials: usize, master_seed: u64) -> Self {
        Self {
            n_trials,
            master_seed,
            bootstrap_resamples: crate::stats::DEFAULT_RESAMPLES,
            histogram_bins: 40,
            coherence_u: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub free_fall_ms: f64,
    pub epsilon: f64,
    pub n_atoms: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    /// Sample standard deviation of θ₂ − θ₁.
    pub delta_theta: f64,
    pub delta_theta_bootstrap: BootstrapResult,
    pub mean_theta1: f64,
    pub mean_theta2: f64,
    pub sem_theta2: f64,
    pub mean_theta0_true: f64,
    pub mean_eta: f64,
    pub mean_eta_sq: f64,
    pub n_eff: f64,
    pub n_eff_sem: f64,
    pub p_eff: f64,
    pub p_eff_sem: f64,
    pub preparation_p_eff: f64,
    /// σ₁² and σ₂² of the configured probes.
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// p/(N(1 − p)) + σ₁² + σ₂² at the mean readout p_eff.
    pub analytic_delta_theta_sq: f64,
    pub coherence: f64,
    pub squeezing: SqueezingReport,
    pub histogram: Histogram,
    pub trials: Vec<TrialResult>,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl ExperimentResult {
    pub fn diffs(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.theta2 - t.theta1).collect()
    }
}

fn sem(xs: &[f64]) -> f64 {
    sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Aggregates trials in index order; the order they were produced in does not matter.
pub fn aggregate(
    engine: &TrialEngine,
    mut trials: Vec<TrialResult>,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    if trials.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: trials.len(),
        });
    }
    trials.sort_by_key(|t| t.trial_index);
    let pick = |f: fn(&TrialResult) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let diffs = pick(|t| t.theta2 - t.theta1);
    let n_eff = pick(|t| t.readout.n_eff);
    let p_eff = pick(|t| t.readout.p_eff);
    let theta2 = pick(|t| t.theta2);
    let delta_theta = sample_std(&diffs);
    let bootstrap = if diffs.len() >= 10 {
        bootstrap_std(&diffs, opts.bootstrap_resamples, opts.master_seed)?
    } else {
        BootstrapResult {
            point_estimate: delta_theta,
            std_error: f64::NAN,
            ci68_low: f64::NAN,
            ci68_high: f64::NAN,
            n_resamples: 0,
        }
    };
    let n_atoms = engine.state.n;
    let mean_n_eff = mean(&n_eff);
    let mean_p = mean(&p_eff);
    let sigma1_sq = engine.prep_probe.angle_noise_var(n_atoms as f64);
    let sigma2_sq = engine.readout_probe.angle_noise_var(mean_n_eff);
    let coherence = engine.coherence();
    let u_theta = if bootstrap.std_error.is_finite() {
        bootstrap.std_error
    } else {
        0.0
    };
    let squeezing = wineland_with_uncertainty(
        Uncertain::new(delta_theta, u_theta),
        Uncertain::new(mean_n_eff, sem(&n_eff)),
        Uncertain::new(coherence, opts.coherence_u),
    )?;
    Ok(ExperimentResult {
        label: engine.protocol.label.clone(),
        free_fall_ms: engine.protocol.free_fall_ms,
        epsilon: engine.epsilon,
        n_atoms,
        n_trials: trials.len(),
        master_seed: opts.master_seed,
        delta_theta,
        delta_theta_bootstrap: bootstrap,
        mean_theta1: mean(&pick(|t| t.theta1)),
        mean_theta2: mean(&theta2),
        sem_theta2: sem(&theta2),
        mean_theta0_true: mean(&pick(|t| t.theta0_true)),
        mean_eta: mean(&pick(|t| t.readout.mean_eta)),
        mean_eta_sq: mean(&pick(|t| t.readout.mean_eta_sq)),
        n_eff: mean_n_eff,
        n_eff_sem: sem(&n_eff),
        p_eff: mean_p,
        p_eff_sem: sem(&p_eff),
        preparation_p_eff: mean(&pick(|t| t.preparation.p_eff)),
        sigma1_sq,
        sigma2_sq,
        analytic_delta_theta_sq: delta_theta_sq_analytic(
            n_atoms as f64,
            mean_p.clamp(0.0, 1.0 - 1e-15),
            sigma1_sq.sqrt(),
            sigma2_sq.sqrt(),
        )?,
        coherence,
        squeezing,
        histogram: histogram(&diffs, opts.histogram_bins.max(1))?,
        trials,
        runtime_s: 0.0,
    })
}

/// Runs `opts.n_trials` independent trials in parallel and aggregates them.
pub fn run_experiment(protocol: &Protocol, physics: &Physics, opts: &ExperimentOptions) -> Result<ExperimentResult> {
    if opts.n_trials < 2 {
        return Err(invalid("n_trials", "need at least two trials"));
    }
    let start = Instant::now();
    let engine = TrialEngine::new(protocol, physics)?;
    let trials = (0..opts.n_trials as u64)
        .into_par_iter()
        .map(|k| engine.run(opts.master_seed, k))
        .collect::<Result<Vec<_>>>()?;
    let mut result = aggregate(&engine, trials, opts)?;
    result.runtime_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Which protocol family a sweep builds per free-fall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum ProtocolChoice {
    ReleaseRecapture,
    /// `reshape_ms = None` takes Δt′ from the timing table.
    DeltaKick {
        reshape_ms: Option<f64>,
    },
}

impl ProtocolChoice {
    pub fn build(
        &self,
        dt: f64,
        epsilon: f64,
        probes: [ProbeConfig; 2],
        hold: HoldPolicy,
        physics: &Physics,
    ) -> Result<Protocol> {
        match self {
            ProtocolChoice::ReleaseRecapture => release_recapture_protocol(dt, epsilon, probes, hold, physics),
            ProtocolChoice::DeltaKick { reshape_ms } => {
                let r = reshape_ms
                    .or_else(|| delta_kick_reshape_for(dt))
                    .ok_or_else(|| invalid("reshape_ms", format!("no tabulated Δt′ for Δt = {dt} ms")))?;
                delta_kick_protocol(r, dt, epsilon, probes, hold, physics)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseySettings {
    pub half_span_rad: f64,
    pub points: usize,
    pub noise_per_point: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CssEstimateSettings {
    pub n_atoms: usize,
    pub n_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub protocol: ProtocolChoice,
    pub hold: HoldPolicy,
    pub epsilon: f64,
    pub probes: [ProbeConfig; 2],
    pub ramsey: RamseySettings,
    pub css_estimate: Option<CssEstimateSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub free_fall_ms: f64,
    pub reshape_ms: Option<f64>,
    pub hold_ms: f64,
    pub mean_eta: f64,
    pub mean_eta_sq: f64,
    pub n_eff: f64,
    pub p_eff: f64,
    pub p_eff_sem: f64,
    pub p_eff_css: Option<PeffEstimate>,
    /// 68% half-width on the fluctuation-based p_eff.
    pub p_eff_css_ci68: Option<f64>,
    pub delta_theta: f64,
    pub delta_theta_ci68: f64,
    pub delta_theta_sq: f64,
    pub delta_theta_sq_ci68: f64,
    pub analytic_delta_theta_sq: f64,
    pub coherence: f64,
    pub ramsey: RamseyEstimate,
    pub squeezing: SqueezingReport,
    pub n_trials: usize,
    pub seed: u64,
}

/// Fluctuation-based N_eff: CSS at the configured tilt, readout quadratures
/// referred to spin units and stripped of the known probe noise.
pub fn css_p_eff_estimate(
    settings: &SweepSettings,
    dt: f64,
    physics: &Physics,
    css: &CssEstimateSettings,
    seed: u64,
) -> Result<(PeffEstimate, f64)> {
    let mut phys = physics.clone();
    phys.spin.n = css.n_atoms;
    phys.spin_source = SpinSource::Css;
    let protocol = settings
        .protocol
        .build(dt, 0.0, settings.probes, settings.hold, &phys)?;
    let engine = TrialEngine::new(&protocol, &phys)?;
    let trials = (0..css.n_trials as u64)
        .into_par_iter()
        .map(|k| engine.run(seed, k))
        .collect::<Result<Vec<_>>>()?;
    let readout = settings.probes[1];
    let samples: Vec<f64> = trials.iter().map(|t| t.x2_prime / readout.discriminator).collect();
    let n_eff = mean(&trials.iter().map(|t| t.readout.n_eff).collect::<Vec<_>>());
    let shift = mean(&trials.iter().map(|t| max_shift(&t.readout)).collect::<Vec<_>>());
    let delta_eff = mean(&trials.iter().map(|t| t.readout.delta_eff).collect::<Vec<_>>());
    let est = estimate_p_eff_css(
        &samples,
        shift,
        delta_eff,
        css.n_atoms as f64,
        readout.jz_noise_var(n_eff),
    )?;
    // relative error of a sample variance, √(2/(n − 1)), carried onto N_eff
    let ci = (1.0 - est.p_eff) * (2.0 / (css.n_trials as f64 - 1.0)).sqrt();
    Ok((est, ci))
}

/// One experiment per free-fall time: the data behind p_eff(Δt), (Δθ)² versus
/// p_eff, C(Δt) and ξ²(Δt).
pub fn sweep_freefall(
    times: &[f64],
    settings: &SweepSettings,
    physics: &Physics,
    opts: &ExperimentOptions,
) -> Result<Vec<SweepRow>> {
    if times.is_empty() {
        return Err(invalid("times", "free-fall time grid is empty"));
    }
    times
        .iter()
        .enumerate()
        .map(|(k, &dt)| {
            let seed = derive_seed(opts.master_seed, k as u64);
            let protocol = settings
                .protocol
                .build(dt, settings.epsilon, settings.probes, settings.hold, physics)?;
            let coherence = physics.coherence_for(protocol.extra_lattice_toggles);
            let mut ramsey_rng = stream(seed, 0, Purpose::Ramsey);
            let grid = ramsey_grid(settings.ramsey.half_span_rad, settings.ramsey.points);
            let ramsey = ramsey_coherence(coherence, &grid, settings.ramsey.noise_per_point, &mut ramsey_rng)?;
            let row_opts = ExperimentOptions {
                master_seed: seed,
                coherence_u: ramsey.ci68_half_width,
                ..*opts
            };
            let exp = run_experiment(&protocol, physics, &row_opts)?;
            let (p_eff_css, p_eff_css_ci68) = match &settings.css_estimate {
                Some(css) => {
                    let (e, ci) = css_p_eff_estimate(settings, dt, physics, css, derive_seed(seed, 1))?;
                    (Some(e), Some(ci))
                }
                None => (None, None),
            };
            Ok(SweepRow {
                free_fall_ms: dt,
                reshape_ms: protocol.reshape_ms,
                hold_ms: protocol.hold_ms,
                mean_eta: exp.mean_eta,
                mean_eta_sq: exp.mean_eta_sq,
                n_eff: exp.n_eff,
                p_eff: exp.p_eff,
                p_eff_sem: exp.p_eff_sem,
                p_eff_css,
                p_eff_css_ci68,
                delta_theta: exp.delta_theta,
                delta_theta_ci68: exp.delta_theta_bootstrap.std_error,
                delta_theta_sq: exp.delta_theta.powi(2),
                delta_theta_sq_ci68: 2.0 * exp.delta_theta * exp.delta_theta_bootstrap.std_error,
                analytic_delta_theta_sq: exp.analytic_delta_theta_sq,
                coherence,
                ramsey,
                squeezing: exp.squeezing,
                n_trials: exp.n_trials,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePoint {
    pub free_fall_ms: f64,
    pub epsilon: f64,
    /// Mean θ₁ plus the applied rotation.
    pub theta0_mean: f64,
    pub theta_eff_mean: f64,
    pub theta_eff_sem: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleFit {
    pub free_fall_ms: f64,
    pub fit: FitResult,
}

/// Mean readout angle against the mean rotated preparation angle over a set of
/// rotations ε, with a zero-intercept regression per free-fall time.
pub fn angle_equivalence_sweep(
    times: &[f64],
    epsilons: &[f64],
    settings: &SweepSettings,
    physics: &Physics,
    opts: &ExperimentOptions,
) -> Result<(Vec<AnglePoint>, Vec<AngleFit>)> {
    if times.is_empty() || epsilons.is_empty() {
        return Err(invalid("times", "angle sweep needs free-fall times and rotations"));
    }
    let mut points = Vec::new();
    let mut fits = Vec::new();
    for (k, &dt) in times.iter().enumerate() {
        let mut row = Vec::with_capacity(epsilons.len());
        for (j, &eps) in epsilons.iter().enumerate() {
            let protocol = settings
                .protocol
                .build(dt, eps, settings.probes, settings.hold, physics)?;
            let seed = derive_seed(derive_seed(opts.master_seed, k as u64), j as u64);
            let exp = run_experiment(
                &protocol,
                physics,
                &ExperimentOptions {
                    master_seed: seed,
                    bootstrap_resamples: 2,
                    ..*opts
                },
            )?;
            row.push(AnglePoint {
                free_fall_ms: dt,
                epsilon: eps,
                theta0_mean: exp.mean_theta1 + eps,
                theta_eff_mean: exp.mean_theta2,
                theta_eff_sem: exp.sem_theta2,
            });
        }
        let x: Vec<f64> = row.iter().map(|p| p.theta0_mean).collect();
        let y: Vec<f64> = row.iter().map(|p| p.theta_eff_mean).collect();
        fits.push(AngleFit {
            free_fall_ms: dt,
            fit: fit_zero_intercept(&x, &y)?,
        });
        points.extend(row);
    }
    Ok((points, fits))
}
