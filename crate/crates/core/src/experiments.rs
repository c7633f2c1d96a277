//! The measurement protocols, built from trajectory ensembles: heating
//! calibration, storage-time runs, attenuation and probe-power scans,
//! ramp-down thermometry, feedback toggling, and intensity correlations.
//!
//! Ensembles are embarrassingly parallel across atoms; every atom owns
//! RNG streams derived from (master seed, scan point, atom index), so
//! results are identical for any worker count and ensembles merge
//! additively.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, CorrelationCurve, EnergySample, SurvivalCurve, SurvivalFit, TemperatureFit, ToggleResult,
};
use crate::config::ExperimentConfig;
use crate::constants::{ms, to_uk, uk, us};
use crate::controller::{FeedbackConfig, Schedule, TrapLevel};
use crate::dynamics::{
    sample_initial, simulate_trajectory, Retention, TrajectoryRecord, TrajectorySetup,
};
use crate::error::{Error, Result};
use crate::model::{detected_rate, CavityParams, DriveParams};
use crate::rng::{derive_seed, stream, Channel};

/// Where a result came from; every numeric output is traceable to
/// (config, seed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, master_seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            master_seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Survival ensemble with its exponential fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageResult {
    pub curve: SurvivalCurve,
    /// `None` when too few atoms escaped to constrain a fit.
    pub fit: Option<SurvivalFit>,
    pub n_escaped: usize,
    pub records: Vec<TrajectoryRecord>,
}

impl StorageResult {
    /// Fitted storage time, or the run duration as a censored lower bound.
    pub fn tau_or_bound(&self, duration: f64) -> f64 {
        self.fit.as_ref().map_or(duration, |f| f.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub zeta_heat: f64,
    pub fitted_tau: f64,
    /// (ζ, fitted τ) of every bisection step.
    pub history: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerScanPoint {
    pub n_empty: f64,
    pub with_feedback: StorageResult,
    pub without_feedback: StorageResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermometryArm {
    pub feedback_on: bool,
    pub samples: Vec<EnergySample>,
    pub fit: Option<TemperatureFit>,
    pub n_atoms: usize,
    pub n_escaped_during_hold: usize,
    pub n_survived_ramp: usize,
    /// Reconstruction floor E₀(U_end) of the observable window (µK).
    pub floor_uk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermometryResult {
    pub on: ThermometryArm,
    pub off: ThermometryArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToggleRunResult {
    pub analysis: ToggleResult,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorrelation {
    pub label: String,
    /// Feedback integration time for feedback curves (µs).
    pub t_int_us: Option<f64>,
    pub curve: CorrelationCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRunResult {
    pub curves: Vec<LabeledCorrelation>,
    pub records: Vec<Vec<TrajectoryRecord>>,
}

/// Result of one dispatched experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExperimentResult {
    Calibration(CalibrationResult),
    Storage(StorageResult),
    AttenuationScan(Vec<(f64, StorageResult)>),
    PowerScan(Vec<PowerScanPoint>),
    Thermometry(ThermometryResult),
    Toggle(ToggleRunResult),
    Correlation(CorrelationRunResult),
}

/// A dispatched experiment with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub provenance: Provenance,
    pub result: ExperimentResult,
}

// ---------------------------------------------------------------------------
// Ensemble driver
// ---------------------------------------------------------------------------

struct EnsembleSpec<'a> {
    cfg: &'a ExperimentConfig,
    drive: DriveParams,
    cavity: &'a CavityParams,
    feedback: FeedbackConfig,
    schedule: Schedule,
    duration: f64,
    retention: Retention,
    /// Scan-point index of the seed hierarchy.
    point: u64,
    n_atoms: usize,
    atom_offset: u64,
}

fn initial_depth(schedule: &Schedule, feedback: &FeedbackConfig) -> f64 {
    match schedule {
        Schedule::Constant { level } => {
            if feedback.enabled {
                feedback.u_high
            } else {
                feedback.depth_of(*level)
            }
        }
        Schedule::Toggle { .. } => feedback.u_high,
        Schedule::Ramp { u_start, .. } => *u_start,
    }
}

fn run_ensemble(spec: &EnsembleSpec) -> Result<Vec<TrajectoryRecord>> {
    let params = spec.cfg.dynamics_params();
    let t_init = spec.cfg.dynamics.t_init_uk * 1e-6;
    let master = spec.cfg.run.master_seed;
    let setup = TrajectorySetup {
        drive: &spec.drive,
        cavity: spec.cavity,
        params: &params,
        feedback: spec.feedback.clone(),
        schedule: spec.schedule.clone(),
        duration: spec.duration,
        dt: us(spec.cfg.run.dt_us),
        bin_duration: us(spec.cfg.run.bin_us),
        retention: spec.retention,
    };
    let depth0 = initial_depth(&spec.schedule, &spec.feedback);
    (0..spec.n_atoms as u64)
        .into_par_iter()
        .map(|i| {
            let atom = spec.atom_offset + i;
            let mut init_rng = stream(master, spec.point, atom, Channel::Init);
            let mut physics = stream(master, spec.point, atom, Channel::Physics);
            let mut detection = stream(master, spec.point, atom, Channel::Detection);
            let init = sample_initial(t_init, depth0, &params, spec.cavity, &mut init_rng);
            let seed = derive_seed(master, &[spec.point, atom]);
            simulate_trajectory(&setup, init, &mut physics, &mut detection, seed)
                .map(|(record, _)| record)
        })
        .collect()
}

fn storage_from_records(
    records: Vec<TrajectoryRecord>,
    duration: f64,
    bin_width: f64,
) -> Result<StorageResult> {
    let escapes: Vec<Option<f64>> = records.iter().map(|r| r.escape_time).collect();
    let n_escaped = escapes.iter().flatten().count();
    let curve = analysis::survival_curve(&escapes, duration, bin_width)?;
    let fit = analysis::fit_exponential(&curve).ok();
    Ok(StorageResult {
        curve,
        fit,
        n_escaped,
        records,
    })
}

/// Survival-curve bin width: fine enough to resolve τ ≈ duration/100,
/// coarse enough that bins hold several atoms.
fn survival_bin(duration: f64) -> f64 {
    (duration / 150.0).max(ms(0.5))
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

/// Storage-time measurement: simulate the ensemble under the configured
/// schedule/feedback and fit the survival curve.
pub fn run_storage(cfg: &ExperimentConfig) -> Result<StorageResult> {
    run_storage_at(cfg, 0, cfg.run.n_atoms, cfg.drive_params(), None)
}

fn run_storage_at(
    cfg: &ExperimentConfig,
    point: u64,
    n_atoms: usize,
    drive: DriveParams,
    duration_override: Option<f64>,
) -> Result<StorageResult> {
    let cavity = cfg.cavity_params()?;
    let duration = duration_override.unwrap_or(ms(cfg.run.duration_ms));
    let spec = EnsembleSpec {
        cfg,
        drive,
        cavity: &cavity,
        feedback: cfg.feedback_params(),
        schedule: cfg.schedule_params(),
        duration,
        retention: Retention::escape_only(),
        point,
        n_atoms,
        atom_offset: 0,
    };
    let records = run_ensemble(&spec)?;
    storage_from_records(records, duration, survival_bin(duration))
}

/// One-knob heating calibration: bisection on ln ζ until the no-feedback
/// storage time matches the target. Monotone because heating strictly
/// accelerates escape; common random numbers keep the map smooth.
pub fn calibrate_heating(cfg: &ExperimentConfig) -> Result<CalibrationResult> {
    let cal = &cfg.calibration;
    let target = ms(cal.target_tau_ms);
    let duration = ms(cal.duration_ms);
    let mut probe_cfg = cfg.clone();
    probe_cfg.feedback.enabled = false;
    probe_cfg.schedule.kind = crate::config::ScheduleKind::Constant;
    probe_cfg.schedule.level = crate::config::LevelName::High;

    let mut history = Vec::new();
    let mut fitted = |zeta: f64, history: &mut Vec<(f64, f64)>| -> Result<f64> {
        probe_cfg.dynamics.zeta_heat = zeta;
        let res = run_storage_at(
            &probe_cfg,
            10_000,
            cal.n_atoms,
            probe_cfg.drive_params(),
            Some(duration),
        )?;
        // A flat curve (no escapes) behaves as an unbounded storage time.
        let tau = res.fit.map_or(f64::INFINITY, |f| f.tau);
        history.push((zeta, tau * 1e3));
        Ok(tau)
    };

    let mut lo = cal.zeta_min;
    let mut hi = cal.zeta_max;
    let tau_lo = fitted(lo, &mut history)?;
    let tau_hi = fitted(hi, &mut history)?;
    if !(tau_lo > target && tau_hi < target) {
        return Err(Error::CalibrationRange(format!(
            "target {} ms not bracketed: τ({lo}) = {:.3} ms, τ({hi}) = {:.3} ms",
            cal.target_tau_ms,
            tau_lo * 1e3,
            tau_hi * 1e3
        )));
    }
    let mut best = (lo, tau_lo);
    for _ in 0..30 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let tau = fitted(mid, &mut history)?;
        if (tau - target).abs() < (best.1 - target).abs() {
            best = (mid, tau);
        }
        if ((tau - target) / target).abs() <= cal.tolerance {
            return Ok(CalibrationResult {
                zeta_heat: mid,
                fitted_tau: tau,
                history,
            });
        }
        if tau > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CalibrationResult {
        zeta_heat: best.0,
        fitted_tau: best.1,
        history,
    })
}

/// Storage scan over detection attenuations, feedback enabled.
pub fn run_attenuation_scan(cfg: &ExperimentConfig) -> Result<Vec<(f64, StorageResult)>> {
    let n_atoms = if cfg.scan.n_atoms > 0 { cfg.scan.n_atoms } else { cfg.run.n_atoms };
    let duration = ms(cfg.scan.duration_ms);
    let mut out = Vec::new();
    for (i, &att) in cfg.scan.attenuations.iter().enumerate() {
        let mut drive = cfg.drive_params();
        drive.attenuation = att;
        drive.validate()?;
        let res = run_storage_at(cfg, i as u64, n_atoms, drive, Some(duration))?;
        out.push((att, res));
    }
    Ok(out)
}

/// Storage scan over probe powers, with and without feedback at each point.
pub fn run_power_scan(cfg: &ExperimentConfig) -> Result<Vec<PowerScanPoint>> {
    let n_atoms = if cfg.scan.n_atoms > 0 { cfg.scan.n_atoms } else { cfg.run.n_atoms };
    let duration = ms(cfg.scan.duration_ms);
    let mut out = Vec::new();
    for (i, &n_empty) in cfg.scan.powers.iter().enumerate() {
        let mut drive = cfg.drive_params();
        drive.n_empty = n_empty;
        drive.validate()?;

        let mut on_cfg = cfg.clone();
        on_cfg.feedback.enabled = true;
        let with_feedback =
            run_storage_at(&on_cfg, (2 * i) as u64, n_atoms, drive.clone(), Some(duration))?;

        let mut off_cfg = cfg.clone();
        off_cfg.feedback.enabled = false;
        let without_feedback =
            run_storage_at(&off_cfg, (2 * i + 1) as u64, n_atoms, drive, Some(duration))?;

        out.push(PowerScanPoint {
            n_empty,
            with_feedback,
            without_feedback,
        });
    }
    Ok(out)
}

/// Ramp-down thermometry: hold each atom for `thermometry.hold_ms` with the
/// feedback on or off, then disable feedback and ramp the trap down,
/// recording where each atom unbinds. Escape depths map to initial
/// energies through the conserved action.
pub fn run_thermometry(cfg: &ExperimentConfig) -> Result<ThermometryResult> {
    let on = run_thermometry_arm(cfg, true, 0)?;
    let off = run_thermometry_arm(cfg, false, 1)?;
    Ok(ThermometryResult { on, off })
}

fn run_thermometry_arm(
    cfg: &ExperimentConfig,
    feedback_on: bool,
    point: u64,
) -> Result<ThermometryArm> {
    let cavity = cfg.cavity_params()?;
    let drive = cfg.drive_params();
    let params = cfg.dynamics_params();
    let master = cfg.run.master_seed;
    let hold = ms(cfg.thermometry.hold_ms);
    let u_start_uk = cfg.schedule.ramp_start_uk;
    let u_end_uk = cfg.schedule.ramp_end_uk;
    let ramp = ms(cfg.schedule.ramp_ms);
    let t_init = cfg.dynamics.t_init_uk * 1e-6;

    let mut hold_feedback = cfg.feedback_params();
    hold_feedback.enabled = feedback_on;
    let hold_setup = TrajectorySetup {
        drive: &drive,
        cavity: &cavity,
        params: &params,
        feedback: hold_feedback,
        schedule: Schedule::Constant { level: TrapLevel::High },
        duration: hold,
        dt: us(cfg.run.dt_us),
        bin_duration: us(cfg.run.bin_us),
        retention: Retention::escape_only(),
    };
    let mut ramp_feedback = cfg.feedback_params();
    ramp_feedback.enabled = false;
    let ramp_setup = TrajectorySetup {
        feedback: ramp_feedback,
        schedule: Schedule::Ramp {
            u_start: uk(u_start_uk),
            u_end: uk(u_end_uk),
            duration: ramp,
        },
        duration: ramp,
        ..hold_setup.clone()
    };

    enum Outcome {
        EscapedDuringHold,
        SurvivedRamp,
        Sample(EnergySample),
    }

    let outcomes: Vec<Outcome> = (0..cfg.run.n_atoms as u64)
        .into_par_iter()
        .map(|atom| -> Result<Outcome> {
            let mut init_rng = stream(master, point, atom, Channel::Init);
            let mut physics = stream(master, point, atom, Channel::Physics);
            let mut detection = stream(master, point, atom, Channel::Detection);
            let seed = derive_seed(master, &[point, atom]);
            let init = sample_initial(t_init, uk(u_start_uk), &params, &cavity, &mut init_rng);
            let (hold_rec, state) =
                simulate_trajectory(&hold_setup, init, &mut physics, &mut detection, seed)?;
            if hold_rec.escape_time.is_some() {
                return Ok(Outcome::EscapedDuringHold);
            }
            let mut state = state;
            state.status = crate::dynamics::AtomStatus::Trapped;
            let (ramp_rec, _) =
                simulate_trajectory(&ramp_setup, state, &mut physics, &mut detection, seed)?;
            // The measured escape time is the unbinding moment; waiting for
            // the guard radius would bias the escape depth low.
            match ramp_rec.first_unbound {
                None => Ok(Outcome::SurvivedRamp),
                Some(t) => {
                    let u_esc_uk =
                        to_uk(analysis::escape_depth(t, uk(u_start_uk), uk(u_end_uk), ramp)?);
                    let e0 = analysis::reconstruct_energy(u_esc_uk, u_start_uk)?;
                    Ok(Outcome::Sample(EnergySample {
                        u_escape: u_esc_uk,
                        e0,
                    }))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut n_escaped_during_hold = 0;
    let mut n_survived_ramp = 0;
    for o in outcomes {
        match o {
            Outcome::EscapedDuringHold => n_escaped_during_hold += 1,
            Outcome::SurvivedRamp => n_survived_ramp += 1,
            Outcome::Sample(s) => samples.push(s),
        }
    }

    let floor_uk = analysis::reconstruct_energy(u_end_uk, u_start_uk)?;
    let energies: Vec<f64> = samples.iter().map(|s| s.e0).collect();
    let support = cfg
        .thermometry
        .fit_above_floor
        .then_some(floor_uk * (1.0 - 1e-9));
    let fit = if cfg.thermometry.binned_fit {
        analysis::fit_truncated_boltzmann_binned(
            &energies,
            u_start_uk,
            support,
            cfg.thermometry.n_bins,
        )
        .ok()
    } else {
        analysis::fit_truncated_boltzmann(&energies, u_start_uk, support).ok()
    };

    Ok(ThermometryArm {
        feedback_on,
        samples,
        fit,
        n_atoms: cfg.run.n_atoms,
        n_escaped_during_hold,
        n_survived_ramp,
        floor_uk,
    })
}

/// Toggle protocol: feedback alternately enabled/disabled every
/// `toggle.phase_ms`, phase-averaged transmission plus the cooling fit.
pub fn run_toggle(cfg: &ExperimentConfig) -> Result<ToggleRunResult> {
    let cavity = cfg.cavity_params()?;
    let drive = cfg.drive_params();
    let mut feedback = cfg.feedback_params();
    feedback.enabled = true;
    let spec = EnsembleSpec {
        cfg,
        drive: drive.clone(),
        cavity: &cavity,
        feedback,
        schedule: Schedule::Toggle {
            period: ms(cfg.toggle.phase_ms),
        },
        duration: ms(cfg.toggle.duration_ms),
        retention: Retention::all(),
        point: 0,
        n_atoms: cfg.toggle.n_atoms,
        atom_offset: 0,
    };
    let records = run_ensemble(&spec)?;
    let empty_per_bin = detected_rate(1.0, &drive, &cavity) * us(cfg.run.bin_us);
    let analysis = analysis::toggle_average(
        &records,
        ms(cfg.toggle.phase_ms),
        cfg.toggle.selection,
        empty_per_bin,
    )?;
    Ok(ToggleRunResult { analysis, records })
}

/// Intensity-correlation protocol: R(τ) without feedback in the deep and
/// shallow traps, and with feedback at the configured integration times.
pub fn run_correlation(cfg: &ExperimentConfig) -> Result<CorrelationRunResult> {
    let cavity = cfg.cavity_params()?;
    let drive = cfg.drive_params();
    let empty_per_bin = detected_rate(1.0, &drive, &cavity) * us(cfg.run.bin_us);
    let duration = ms(cfg.correlation.duration_ms);
    let n_atoms = cfg.correlation.n_atoms;

    let mut curves = Vec::new();
    let mut all_records = Vec::new();
    let mut point = 0u64;

    let run_one = |label: String,
                       t_int_us: Option<f64>,
                       feedback_enabled: bool,
                       level: TrapLevel,
                       point: u64|
     -> Result<(LabeledCorrelation, Vec<TrajectoryRecord>)> {
        let mut feedback = cfg.feedback_params();
        feedback.enabled = feedback_enabled;
        if let Some(t) = t_int_us {
            feedback.t_int = us(t);
        }
        let spec = EnsembleSpec {
            cfg,
            drive: drive.clone(),
            cavity: &cavity,
            feedback,
            schedule: Schedule::Constant { level },
            duration,
            retention: Retention::all(),
            point,
            n_atoms,
            atom_offset: 0,
        };
        let records = run_ensemble(&spec)?;
        let curve = analysis::intensity_correlation(
            &records,
            ms(cfg.correlation.interval_ms),
            cfg.correlation.selection,
            us(cfg.correlation.tau_max_us),
            empty_per_bin,
        )?;
        Ok((
            LabeledCorrelation {
                label,
                t_int_us,
                curve,
            },
            records,
        ))
    };

    let (c, r) = run_one("nofb_deep".into(), None, false, TrapLevel::High, point)?;
    curves.push(c);
    all_records.push(r);
    point += 1;
    let (c, r) = run_one("nofb_shallow".into(), None, false, TrapLevel::Low, point)?;
    curves.push(c);
    all_records.push(r);
    point += 1;
    for &t_int in &cfg.correlation.t_ints_us {
        let (c, r) = run_one(
            format!("fb_tint{}", t_int.round() as u64),
            Some(t_int),
            true,
            TrapLevel::High,
            point,
        )?;
        curves.push(c);
        all_records.push(r);
        point += 1;
    }

    Ok(CorrelationRunResult {
        curves,
        records: all_records,
    })
}

/// Split-ensemble storage run used by the additivity invariant: simulate
/// atoms [offset, offset+n) of scan point 0 with the same seeds a full run
/// would use.
pub fn run_storage_slice(
    cfg: &ExperimentConfig,
    offset: u64,
    n_atoms: usize,
) -> Result<Vec<TrajectoryRecord>> {
    let cavity = cfg.cavity_params()?;
    let spec = EnsembleSpec {
        cfg,
        drive: cfg.drive_params(),
        cavity: &cavity,
        feedback: cfg.feedback_params(),
        schedule: cfg.schedule_params(),
        duration: ms(cfg.run.duration_ms),
        retention: Retention::escape_only(),
        point: 0,
        n_atoms,
        atom_offset: offset,
    };
    run_ensemble(&spec)
}
