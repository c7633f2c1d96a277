//! Experiment configuration: a flat, serializable description of one run,
//! with interface units (µK, µs/ms, MHz) and validated conversion into the
//! internal SI parameter structs. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::constants::{mhz, ms, uk, us};
use crate::controller::{FeedbackConfig, Schedule, TrapLevel};
use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::model::{CavityParams, DriveParams};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_atoms: usize,
    pub master_seed: u64,
    /// Simulated span per atom (ms).
    pub duration_ms: f64,
    /// Integrator step (µs).
    pub dt_us: f64,
    /// Intensity bin (µs).
    pub bin_us: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_atoms: 200,
            master_seed: 1,
            duration_ms: 1500.0,
            dt_us: 0.5,
            bin_us: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavitySection {
    /// g₀/2π (MHz).
    pub g0_mhz: f64,
    /// κ/2π (MHz).
    pub kappa_mhz: f64,
    /// γ/2π (MHz).
    pub gamma_mhz: f64,
    pub length_um: f64,
    pub mirror_curvatures_mm: [f64; 2],
    pub mirror_transmissions_ppm: [f64; 2],
    pub round_trip_loss_ppm: f64,
    pub lambda_probe_nm: f64,
    pub lambda_trap_nm: f64,
}

impl Default for CavitySection {
    fn default() -> Self {
        Self {
            g0_mhz: 16.0,
            kappa_mhz: 1.5,
            gamma_mhz: 3.0,
            length_um: 260.0,
            mirror_curvatures_mm: [200.0, 10.0],
            mirror_transmissions_ppm: [2.0, 16.0],
            round_trip_loss_ppm: 11.0,
            lambda_probe_nm: 780.0,
            lambda_trap_nm: 785.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    /// Probe–atom detuning /2π (MHz), positive = blue.
    pub delta_atom_mhz: f64,
    /// Probe–cavity detuning /2π (MHz).
    pub delta_cavity_mhz: f64,
    pub n_empty: f64,
    pub eta_det: f64,
    pub attenuation: f64,
    /// Light shift of the transition at the full 950 µK reference depth
    /// (MHz, signed; negative pulls the transition toward the probe).
    pub light_shift_at_950uk_mhz: f64,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            delta_atom_mhz: 40.0,
            delta_cavity_mhz: 0.0,
            n_empty: 0.1,
            eta_det: 0.23,
            attenuation: 1.0,
            light_shift_at_950uk_mhz: -10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub t_int_us: f64,
    pub threshold: u32,
    pub u_high_uk: f64,
    pub u_low_uk: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub strict_greater: bool,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        Self {
            t_int_us: 13.0,
            threshold: 3,
            u_high_uk: 950.0,
            u_low_uk: 400.0,
            enabled: true,
            strict_greater: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    /// Probe-heating calibration factor; see the calibrate subcommand.
    pub zeta_heat: f64,
    /// Initial ensemble temperature (µK).
    pub t_init_uk: f64,
    pub escape_radius_waists: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            // Calibrated so the no-feedback storage time is 35 ms at the
            // default probe settings; `fbsim calibrate` reproduces it.
            zeta_heat: ZETA_HEAT_CALIBRATED,
            t_init_uk: 400.0,
            escape_radius_waists: 3.0,
        }
    }
}

/// One-knob heating calibration shipped with the defaults.
pub const ZETA_HEAT_CALIBRATED: f64 = 0.4067;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Toggle,
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelName {
    High,
    Low,
    Off,
}

impl From<LevelName> for TrapLevel {
    fn from(l: LevelName) -> Self {
        match l {
            LevelName::High => TrapLevel::High,
            LevelName::Low => TrapLevel::Low,
            LevelName::Off => TrapLevel::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    /// Idle level for `constant`.
    pub level: LevelName,
    /// Toggle phase length (ms).
    pub toggle_period_ms: f64,
    pub ramp_start_uk: f64,
    pub ramp_end_uk: f64,
    pub ramp_ms: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            level: LevelName::High,
            toggle_period_ms: 5.0,
            ramp_start_uk: 950.0,
            ramp_end_uk: 100.0,
            ramp_ms: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermometrySection {
    pub hold_ms: f64,
    /// Fit only energies above the reconstruction floor set by the ramp
    /// end depth (the observable window of the protocol).
    pub fit_above_floor: bool,
    /// Use the binned least-squares fit instead of the MLE.
    pub binned_fit: bool,
    pub n_bins: usize,
}

impl Default for ThermometrySection {
    fn default() -> Self {
        Self {
            hold_ms: 10.0,
            fit_above_floor: true,
            binned_fit: false,
            n_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationSection {
    pub interval_ms: f64,
    /// Keep intervals below this fraction of the empty-cavity transmission.
    pub selection: f64,
    pub tau_max_us: f64,
    /// Per-atom span for the correlation runs (ms).
    pub duration_ms: f64,
    pub n_atoms: usize,
    /// Feedback integration times to measure (µs).
    pub t_ints_us: Vec<f64>,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self {
            interval_ms: 2.0,
            selection: 0.8,
            tau_max_us: 800.0,
            duration_ms: 40.0,
            n_atoms: 150,
            t_ints_us: vec![16.0, 32.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToggleSection {
    pub phase_ms: f64,
    pub selection: f64,
    pub duration_ms: f64,
    pub n_atoms: usize,
}

impl Default for ToggleSection {
    fn default() -> Self {
        Self {
            phase_ms: 5.0,
            selection: 0.5,
            duration_ms: 60.0,
            n_atoms: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub attenuations: Vec<f64>,
    pub powers: Vec<f64>,
    /// Per-point ensemble size for scans (storage scans reuse run.n_atoms
    /// when 0).
    pub n_atoms: usize,
    /// Cap on the simulated span per scan point (ms).
    pub duration_ms: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            attenuations: vec![1.0, 0.5, 0.25],
            powers: vec![0.05, 0.1, 0.2, 0.3, 0.45, 0.6],
            n_atoms: 0,
            duration_ms: 1200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Target no-feedback storage time (ms).
    pub target_tau_ms: f64,
    /// Relative tolerance of the bisection.
    pub tolerance: f64,
    pub n_atoms: usize,
    pub duration_ms: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            target_tau_ms: 35.0,
            tolerance: 0.08,
            n_atoms: 200,
            duration_ms: 250.0,
            zeta_min: 1e-3,
            zeta_max: 1e3,
        }
    }
}

/// Complete configuration of a simulation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub cavity: CavitySection,
    pub drive: DriveSection,
    pub feedback: FeedbackSection,
    pub dynamics: DynamicsSection,
    pub schedule: ScheduleSection,
    pub thermometry: ThermometrySection,
    pub correlation: CorrelationSection,
    pub toggle: ToggleSection,
    pub scan: ScanSection,
    pub calibration: CalibrationSection,
}

impl ExperimentConfig {
    /// Validate every invariant; returns the first violated key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| -> Result<()> {
            Err(Error::InvalidConfig {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.run.n_atoms < 1 {
            return bad("run.n_atoms", "must be >= 1");
        }
        if !(self.run.dt_us > 0.0) || self.run.dt_us > 1.0 {
            return bad("run.dt_us", "must be in (0, 1] µs");
        }
        if !(self.run.bin_us > 0.0) || !(self.run.duration_ms > 0.0) {
            return bad("run.bin_us/duration_ms", "must be positive");
        }
        if self.feedback.threshold < 1 {
            return bad("feedback.threshold", "must be >= 1");
        }
        if !(self.feedback.t_int_us > 0.0) {
            return bad("feedback.t_int_us", "must be > 0");
        }
        if !(self.feedback.u_high_uk > self.feedback.u_low_uk && self.feedback.u_low_uk > 0.0) {
            return bad("feedback.u_high_uk", "requires u_high > u_low > 0");
        }
        if !(0.0..=1.0).contains(&self.drive.attenuation) {
            return bad("drive.attenuation", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.drive.eta_det) {
            return bad("drive.eta_det", "must be in [0, 1]");
        }
        if self.drive.n_empty < 0.0 {
            return bad("drive.n_empty", "must be >= 0");
        }
        if !(self.dynamics.zeta_heat >= 0.0) {
            return bad("dynamics.zeta_heat", "must be >= 0");
        }
        if !(self.dynamics.t_init_uk > 0.0) {
            return bad("dynamics.t_init_uk", "must be > 0");
        }
        if !(self.schedule.toggle_period_ms > 0.0) {
            return bad("schedule.toggle_period_ms", "must be > 0");
        }
        if !(self.schedule.ramp_ms > 0.0)
            || self.schedule.ramp_start_uk < 0.0
            || self.schedule.ramp_end_uk < 0.0
        {
            return bad("schedule.ramp_*", "ramp duration must be > 0 and depths >= 0");
        }
        if !(self.correlation.tau_max_us * 1e-3 < self.correlation.interval_ms) {
            return bad("correlation.tau_max_us", "must be below the interval duration");
        }
        if self.scan.attenuations.is_empty() || self.scan.powers.is_empty() {
            return bad("scan", "scan lists must be non-empty");
        }
        // Geometry/model invariants.
        self.cavity_params()?.validate()?;
        self.drive_params().validate()?;
        Ok(())
    }

    pub fn cavity_params(&self) -> Result<CavityParams> {
        let c = &self.cavity;
        CavityParams::new(
            mhz(c.g0_mhz),
            mhz(c.kappa_mhz),
            mhz(c.gamma_mhz),
            c.length_um * 1e-6,
            (
                Some(c.mirror_curvatures_mm[0] * 1e-3),
                Some(c.mirror_curvatures_mm[1] * 1e-3),
            ),
            (
                c.mirror_transmissions_ppm[0] * 1e-6,
                c.mirror_transmissions_ppm[1] * 1e-6,
            ),
            c.round_trip_loss_ppm * 1e-6,
            c.lambda_probe_nm * 1e-9,
            c.lambda_trap_nm * 1e-9,
        )
    }

    pub fn drive_params(&self) -> DriveParams {
        let d = &self.drive;
        DriveParams {
            delta_atom: mhz(d.delta_atom_mhz),
            delta_cavity: mhz(d.delta_cavity_mhz),
            n_empty: d.n_empty,
            eta_det: d.eta_det,
            attenuation: d.attenuation,
            light_shift_coeff: mhz(d.light_shift_at_950uk_mhz) / uk(950.0),
        }
    }

    pub fn feedback_params(&self) -> FeedbackConfig {
        let f = &self.feedback;
        FeedbackConfig {
            t_int: us(f.t_int_us),
            threshold: f.threshold,
            u_high: uk(f.u_high_uk),
            u_low: uk(f.u_low_uk),
            enabled: f.enabled,
            strict_greater: f.strict_greater,
        }
    }

    pub fn dynamics_params(&self) -> DynamicsParams {
        DynamicsParams {
            mass: crate::constants::MASS_RB85,
            zeta_heat: self.dynamics.zeta_heat,
            escape_radius_waists: self.dynamics.escape_radius_waists,
        }
    }

    pub fn schedule_params(&self) -> Schedule {
        match self.schedule.kind {
            ScheduleKind::Constant => Schedule::Constant {
                level: self.schedule.level.into(),
            },
            ScheduleKind::Toggle => Schedule::Toggle {
                period: ms(self.schedule.toggle_period_ms),
            },
            ScheduleKind::Ramp => Schedule::Ramp {
                u_start: uk(self.schedule.ramp_start_uk),
                u_end: uk(self.schedule.ramp_end_uk),
                duration: ms(self.schedule.ramp_ms),
            },
        }
    }
}
