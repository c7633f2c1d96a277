//! Stochastic 2D radial motion of the trapped atom: Gaussian trap forces,
//! probe-induced momentum diffusion, a weak-order-1 integrator with a
//! velocity-Verlet deterministic core, and the per-atom trajectory loop
//! that ties motion, detection and feedback together.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, MASS_RB85};
use crate::controller::{FeedbackConfig, Schedule, WindowController};
use crate::detection::{sample_poisson, WindowCounts};
use crate::error::{Error, Result};
use crate::model::{rel_transmission, CavityParams, DriveParams};

/// Trapped-or-gone status; once escaped the state is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AtomStatus {
    Trapped,
    Escaped { at: f64 },
}

/// Radial phase-space state of the atom (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomState {
    /// Position in the plane transverse to the cavity axis (m).
    pub position: [f64; 2],
    /// Velocity (m/s).
    pub velocity: [f64; 2],
    pub status: AtomStatus,
}

impl AtomState {
    pub fn at_rest() -> Self {
        Self {
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            status: AtomStatus::Trapped,
        }
    }

    pub fn radius(&self) -> f64 {
        self.position[0].hypot(self.position[1])
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * (self.velocity[0] * self.velocity[0] + self.velocity[1] * self.velocity[1])
    }

    /// Total energy KE + V(r); negative means bound (V → 0 far away).
    pub fn total_energy(&self, depth: f64, cavity: &CavityParams) -> f64 {
        self.kinetic_energy(MASS_RB85) + trap_potential(self.radius(), depth, cavity)
    }
}

/// Knobs of the motional model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Atomic mass (kg).
    pub mass: f64,
    /// Dimensionless calibration factor of the probe heating strength.
    pub zeta_heat: f64,
    /// Escape guard radius in units of the trap waist.
    pub escape_radius_waists: f64,
}

impl DynamicsParams {
    pub fn default_params() -> Self {
        Self {
            mass: MASS_RB85,
            zeta_heat: 1.0,
            escape_radius_waists: 3.0,
        }
    }
}

/// Gaussian trap potential V(r) = −depth · exp(−2r²/w_t²) (J).
#[inline]
pub fn trap_potential(r: f64, depth: f64, cavity: &CavityParams) -> f64 {
    let w = cavity.waist_trap;
    -depth * (-2.0 * r * r / (w * w)).exp()
}

/// In-plane force F = −∇V; central, inward, zero on axis (N).
#[inline]
pub fn trap_force(position: [f64; 2], depth: f64, cavity: &CavityParams) -> [f64; 2] {
    let w2 = cavity.waist_trap * cavity.waist_trap;
    let r2 = position[0] * position[0] + position[1] * position[1];
    let coeff = -(4.0 * depth / w2) * (-2.0 * r2 / w2).exp();
    [coeff * position[0], coeff * position[1]]
}

/// Momentum diffusion coefficient per axis (kg²m²/s³) from probe photon
/// scattering: D_p = ζ (ħk)² R_sc evaluated at radius `r` under trap depth
/// `depth` (the local depth sets the light shift).
pub fn heating_diffusion(
    r: f64,
    depth: f64,
    params: &DynamicsParams,
    drive: &DriveParams,
    cavity: &CavityParams,
) -> f64 {
    let w = cavity.waist_trap;
    let u_local = depth * (-2.0 * r * r / (w * w)).exp();
    let r_sc = crate::model::scattering_rate(r, u_local, drive, cavity);
    let k = std::f64::consts::TAU / cavity.lambda_probe;
    params.zeta_heat * (HBAR * k) * (HBAR * k) * r_sc
}

/// Everything the integrator needs at one phase-space point, computed in a
/// single pass so the hot loop evaluates the model once per step.
#[derive(Debug, Clone, Copy)]
struct Local {
    /// exp(−2r²/w_t²), the trap profile.
    profile: f64,
    /// Force = force_coeff · position.
    force_coeff: f64,
    /// Detected click rate (s⁻¹).
    rate: f64,
    /// Momentum diffusion per axis.
    diffusion: f64,
}

struct Integrator<'a> {
    drive: &'a DriveParams,
    cavity: &'a CavityParams,
    params: &'a DynamicsParams,
    /// attenuation·η·out_coupling·n_empty·2κ, precomputed.
    rate_scale: f64,
    /// ζ(ħk)²·2γ·n_empty, precomputed.
    diff_scale: f64,
    inv_wt2: f64,
    inv_wp2: f64,
}

impl<'a> Integrator<'a> {
    fn new(drive: &'a DriveParams, cavity: &'a CavityParams, params: &'a DynamicsParams) -> Self {
        let k = std::f64::consts::TAU / cavity.lambda_probe;
        Self {
            drive,
            cavity,
            params,
            rate_scale: drive.attenuation
                * drive.eta_det
                * cavity.out_coupling_fraction
                * drive.n_empty
                * 2.0
                * cavity.kappa,
            diff_scale: params.zeta_heat * (HBAR * k) * (HBAR * k) * 2.0 * cavity.gamma * drive.n_empty,
            inv_wt2: 1.0 / (cavity.waist_trap * cavity.waist_trap),
            inv_wp2: 1.0 / (cavity.waist_probe * cavity.waist_probe),
        }
    }

    fn eval(&self, position: [f64; 2], depth: f64) -> Local {
        let r2 = position[0] * position[0] + position[1] * position[1];
        let profile = (-2.0 * r2 * self.inv_wt2).exp();
        let g = self.cavity.g0 * (-r2 * self.inv_wp2).exp();
        let delta_eff = self.drive.effective_delta_atom(depth * profile);
        let t_rel = rel_transmission(g, delta_eff, self.drive.delta_cavity, self.cavity);
        let gamma = self.cavity.gamma;
        let delta = self.drive.delta_atom;
        Local {
            profile,
            force_coeff: -(4.0 * depth * self.inv_wt2) * profile,
            rate: self.rate_scale * t_rel,
            diffusion: self.diff_scale * g * g * t_rel / (delta * delta + gamma * gamma),
        }
    }

    /// One Euler–Maruyama-class update: velocity-Verlet deterministic part
    /// plus an additive momentum kick √(2 D dt) ξ per axis. Returns the
    /// `Local` evaluated at the new position for reuse.
    fn advance<R: Rng>(
        &self,
        state: &mut AtomState,
        loc: &Local,
        depth: f64,
        dt: f64,
        rng: &mut R,
    ) -> Local {
        let m = self.params.mass;
        let half = 0.5 * dt / m;
        let mut v = state.velocity;
        let mut x = state.position;
        v[0] += half * loc.force_coeff * x[0];
        v[1] += half * loc.force_coeff * x[1];
        x[0] += dt * v[0];
        x[1] += dt * v[1];
        let next = self.eval(x, depth);
        v[0] += half * next.force_coeff * x[0];
        v[1] += half * next.force_coeff * x[1];
        if loc.diffusion > 0.0 {
            let kick = (2.0 * loc.diffusion * dt).sqrt() / m;
            let xi0: f64 = rng.sample(StandardNormal);
            let xi1: f64 = rng.sample(StandardNormal);
            v[0] += kick * xi0;
            v[1] += kick * xi1;
        }
        state.position = x;
        state.velocity = v;
        next
    }
}

/// Advance a trapped atom by one time step under a fixed trap depth.
/// No-op once the atom has escaped. Escape status is re-checked after the
/// update (unbound and past the guard radius).
pub fn step<R: Rng>(
    state: &mut AtomState,
    depth: f64,
    t: f64,
    dt: f64,
    params: &DynamicsParams,
    drive: &DriveParams,
    cavity: &CavityParams,
    rng: &mut R,
) {
    if !matches!(state.status, AtomStatus::Trapped) {
        return;
    }
    let integ = Integrator::new(drive, cavity, params);
    let loc = integ.eval(state.position, depth);
    let next = integ.advance(state, &loc, depth, dt, rng);
    let energy = state.kinetic_energy(params.mass) - depth * next.profile;
    if energy > 0.0 && state.radius() > params.escape_radius_waists * cavity.waist_trap {
        state.status = AtomStatus::Escaped { at: t + dt };
    }
}

/// Boltzmann sample of a trapped atom at temperature `t_init` (K),
/// truncated to bound states (energy above the bottom below `depth`).
pub fn sample_initial<R: Rng>(
    t_init: f64,
    depth: f64,
    params: &DynamicsParams,
    cavity: &CavityParams,
    rng: &mut R,
) -> AtomState {
    assert!(t_init > 0.0, "t_init must be positive");
    let kt = crate::constants::K_B * t_init;
    let w = cavity.waist_trap;
    let r_max = 3.0 * w;
    let sigma_v = (kt / params.mass).sqrt();
    for _ in 0..100_000_000u64 {
        let u: f64 = rng.gen();
        let r = r_max * u.sqrt();
        let phi = std::f64::consts::TAU * rng.gen::<f64>();
        let vx = sigma_v * rng.sample::<f64, _>(StandardNormal);
        let vy = sigma_v * rng.sample::<f64, _>(StandardNormal);
        let profile = (-2.0 * r * r / (w * w)).exp();
        let kinetic = 0.5 * params.mass * (vx * vx + vy * vy);
        let e_above = kinetic + depth * (1.0 - profile);
        if e_above >= depth {
            continue;
        }
        // Importance weight for the flat positional proposal.
        if rng.gen::<f64>() < (-depth * (1.0 - profile) / kt).exp() {
            return AtomState {
                position: [r * phi.cos(), r * phi.sin()],
                velocity: [vx, vy],
                status: AtomStatus::Trapped,
            };
        }
    }
    unreachable!("rejection sampling failed to accept; t_init unreasonably small")
}

/// What a trajectory run keeps in memory besides escape bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub bins: bool,
    pub windows: bool,
}

impl Retention {
    pub fn all() -> Self {
        Self { bins: true, windows: true }
    }
    pub fn escape_only() -> Self {
        Self { bins: false, windows: false }
    }
}

/// Per-atom output of one simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Time the escape criterion fired (s), if the atom was lost.
    pub escape_time: Option<f64>,
    /// First time the total energy crossed zero (s); for ramp protocols
    /// this is the measured escape time (the guard-radius flight would
    /// bias the inferred escape depth).
    pub first_unbound: Option<f64>,
    /// Simulated span (s); the run stops at the end of the escape bin.
    pub duration: f64,
    pub bin_duration: f64,
    /// Detected counts per 1 µs bin, when retained.
    pub intensity_bins: Option<Vec<u32>>,
    /// Counts per integration window, when retained.
    pub window_counts: Option<Vec<u32>>,
    /// Trap level at the start of each window ('H'/'L'/'R'/'O').
    pub trap_history: Option<String>,
    /// Seed identifying this atom's RNG streams.
    pub rng_seed: u64,
}

/// Full setup of one trajectory run.
#[derive(Debug, Clone)]
pub struct TrajectorySetup<'a> {
    pub drive: &'a DriveParams,
    pub cavity: &'a CavityParams,
    pub params: &'a DynamicsParams,
    pub feedback: FeedbackConfig,
    pub schedule: Schedule,
    /// Total simulated time (s).
    pub duration: f64,
    /// Integrator step (s); must divide the bin duration.
    pub dt: f64,
    /// Intensity bin duration (s); must divide the integration window.
    pub bin_duration: f64,
    pub retention: Retention,
}

impl TrajectorySetup<'_> {
    fn validate(&self) -> Result<(usize, usize)> {
        if self.dt > 1.001e-6 {
            return Err(Error::InvalidConfig {
                key: "run.dt".into(),
                message: format!("dt = {} s exceeds 1 µs", self.dt),
            });
        }
        let steps_per_bin = self.bin_duration / self.dt;
        if (steps_per_bin - steps_per_bin.round()).abs() > 1e-9 || steps_per_bin < 1.0 {
            return Err(Error::MisalignedWindow {
                window_us: self.bin_duration * 1e6,
                bin_us: self.dt * 1e6,
            });
        }
        let bins_per_window = self.feedback.t_int / self.bin_duration;
        if (bins_per_window - bins_per_window.round()).abs() > 1e-9 || bins_per_window < 1.0 {
            return Err(Error::MisalignedWindow {
                window_us: self.feedback.t_int * 1e6,
                bin_us: self.bin_duration * 1e6,
            });
        }
        Ok((steps_per_bin.round() as usize, bins_per_window.round() as usize))
    }

    fn trap_symbol(&self, active: bool, controller: &WindowController) -> char {
        if active {
            controller.level().symbol()
        } else {
            match self.schedule {
                Schedule::Constant { level } => level.symbol(),
                Schedule::Toggle { .. } => 'H',
                Schedule::Ramp { .. } => 'R',
            }
        }
    }
}

/// Simulate one atom: advance the physics at `dt`, Poisson-sample the
/// detected intensity on the 1 µs grid, hand completed windows to the
/// feedback controller, and stop at escape or after `duration`.
/// Deterministic given the two RNG streams.
pub fn simulate_trajectory<R: Rng, S: Rng>(
    setup: &TrajectorySetup,
    init: AtomState,
    physics_rng: &mut R,
    detection_rng: &mut S,
    rng_seed: u64,
) -> Result<(TrajectoryRecord, AtomState)> {
    let (steps_per_bin, bins_per_window) = setup.validate()?;
    let n_bins = (setup.duration / setup.bin_duration).round() as usize;
    let dt = setup.dt;
    let integ = Integrator::new(setup.drive, setup.cavity, setup.params);
    let mut controller = WindowController::new(setup.feedback.clone());
    let escape_r2 = {
        let r = setup.params.escape_radius_waists * setup.cavity.waist_trap;
        r * r
    };
    let empty_rate = setup.drive.attenuation
        * setup.drive.eta_det
        * setup.cavity.out_coupling_fraction
        * setup.drive.n_empty
        * 2.0
        * setup.cavity.kappa;

    let mut state = init;
    let mut bins: Vec<u32> = Vec::with_capacity(if setup.retention.bins { n_bins } else { 0 });
    let mut windows: Vec<u32> = Vec::new();
    let mut trap_history = String::new();
    let mut escape_time = None;
    let mut first_unbound = None;

    let mut window_sum: u32 = 0;
    let mut bins_in_window = 0usize;
    let mut window_index: u64 = 0;
    let mut bins_done = 0usize;

    // Local cache, valid for (state.position, depth).
    let mut depth = current_depth(setup, &controller, 0.0);
    let mut loc = integ.eval(state.position, depth);
    let mut cache_depth = depth;

    'outer: for bin_idx in 0..n_bins {
        let mut lambda = 0.0f64;
        let mut escaped_in_bin = false;
        for s in 0..steps_per_bin {
            let t = (bin_idx * steps_per_bin + s) as f64 * dt;
            depth = current_depth(setup, &controller, t);
            if depth != cache_depth {
                loc = integ.eval(state.position, depth);
                cache_depth = depth;
            }
            lambda += loc.rate * dt;
            let next = integ.advance(&mut state, &loc, depth, dt, physics_rng);
            loc = next;
            let energy = state.kinetic_energy(setup.params.mass) - depth * loc.profile;
            if energy > 0.0 {
                let t_next = t + dt;
                if first_unbound.is_none() {
                    first_unbound = Some(t_next);
                }
                let r2 = state.position[0] * state.position[0]
                    + state.position[1] * state.position[1];
                if r2 > escape_r2 {
                    state.status = AtomStatus::Escaped { at: t_next };
                    escape_time = Some(t_next);
                    // Detector sees the empty cavity for the rest of the bin.
                    lambda += empty_rate * (steps_per_bin - 1 - s) as f64 * dt;
                    escaped_in_bin = true;
                }
            }
            if escaped_in_bin {
                break;
            }
        }

        let counts = sample_poisson(lambda, detection_rng);
        if setup.retention.bins {
            bins.push(counts);
        }
        bins_done = bin_idx + 1;
        window_sum += counts;
        bins_in_window += 1;
        if bins_in_window == bins_per_window {
            let t_end = bins_done as f64 * setup.bin_duration;
            let window = WindowCounts {
                window_index,
                counts: window_sum,
                window_duration: setup.feedback.t_int,
            };
            let active = setup.schedule.feedback_active(t_end, &setup.feedback);
            if setup.retention.windows {
                let t_start = t_end - setup.feedback.t_int;
                let active_at_start = setup.schedule.feedback_active(t_start, &setup.feedback);
                trap_history.push(setup.trap_symbol(active_at_start, &controller));
                windows.push(window_sum);
            }
            controller.on_window(&window, active);
            window_index += 1;
            window_sum = 0;
            bins_in_window = 0;
        }
        if escaped_in_bin {
            break 'outer;
        }
    }

    let record = TrajectoryRecord {
        escape_time,
        first_unbound,
        duration: bins_done as f64 * setup.bin_duration,
        bin_duration: setup.bin_duration,
        intensity_bins: setup.retention.bins.then_some(bins),
        window_counts: setup.retention.windows.then_some(windows),
        trap_history: setup.retention.windows.then_some(trap_history),
        rng_seed,
    };
    Ok((record, state))
}

#[inline]
fn current_depth(setup: &TrajectorySetup, controller: &WindowController, t: f64) -> f64 {
    if setup.schedule.feedback_active(t, &setup.feedback) {
        setup.feedback.depth_of(controller.level())
    } else {
        setup.schedule.idle_depth(t, &setup.feedback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ms, to_uk, uk, us, K_B};
    use crate::controller::TrapLevel;
    use crate::rng::{stream, Channel};

    fn cavity() -> CavityParams {
        CavityParams::default_params()
    }
    fn drive() -> DriveParams {
        DriveParams::default_params()
    }
    fn dynp() -> DynamicsParams {
        DynamicsParams::default_params()
    }

    #[test]
    fn potential_shape() {
        let c = cavity();
        let u = uk(950.0);
        assert!((trap_potential(0.0, u, &c) + u).abs() < 1e-40);
        assert!(trap_potential(1.0, u, &c).abs() < 1e-60);
        let r = c.waist_trap / 2.0_f64.sqrt();
        let v = trap_potential(r, u, &c);
        assert!(((v + u / std::f64::consts::E) / u).abs() < 1e-12);
    }

    #[test]
    fn force_matches_finite_difference() {
        let c = cavity();
        let u = uk(950.0);
        for &r in &[2e-6, 8e-6, 15e-6, 25e-6] {
            let f = trap_force([r, 0.0], u, &c)[0];
            let h = 1e-11;
            let dv = (trap_potential(r + h, u, &c) - trap_potential(r - h, u, &c)) / (2.0 * h);
            let oracle = -dv;
            assert!(
                ((f - oracle) / oracle).abs() < 1e-6,
                "r = {r}: {f} vs {oracle}"
            );
        }
        assert_eq!(trap_force([0.0, 0.0], u, &c), [0.0, 0.0]);
    }

    #[test]
    fn force_harmonic_small_r() {
        let c = cavity();
        let u = uk(950.0);
        let r = 1e-8;
        let f = trap_force([r, 0.0], u, &c)[0].abs();
        let harmonic = 4.0 * u / (c.waist_trap * c.waist_trap) * r;
        assert!(((f - harmonic) / harmonic).abs() < 1e-4);
    }

    #[test]
    fn diffusion_vanishes_without_probe() {
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        assert_eq!(heating_diffusion(5e-6, uk(950.0), &dynp(), &d, &c), 0.0);
    }

    #[test]
    fn diffusion_linear_in_probe_power() {
        let c = cavity();
        let mut lo = drive();
        lo.n_empty = 0.05;
        let mut hi = drive();
        hi.n_empty = 0.10;
        for &r in &[0.0, 5e-6, 12e-6] {
            let dl = heating_diffusion(r, uk(950.0), &dynp(), &lo, &c);
            let dh = heating_diffusion(r, uk(950.0), &dynp(), &hi, &c);
            assert!(dl > 0.0);
            assert!((dh / dl - 2.0).abs() < 1e-9);
        }
    }

    /// Measured oscillation period from zero crossings of x(t), D = 0.
    fn measured_period(x0: f64, depth: f64, dt: f64, periods: usize) -> f64 {
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0; // deterministic limit
        let p = dynp();
        let mut rng = stream(0, 0, 0, Channel::Physics);
        let mut state = AtomState {
            position: [x0, 0.0],
            velocity: [0.0, 0.0],
            status: AtomStatus::Trapped,
        };
        let mut crossings = Vec::new();
        let mut prev_x = state.position[0];
        let mut t = 0.0;
        while crossings.len() < 2 * periods + 1 {
            step(&mut state, depth, t, dt, &p, &d, &c, &mut rng);
            t += dt;
            let x = state.position[0];
            if prev_x > 0.0 && x <= 0.0 || prev_x < 0.0 && x >= 0.0 {
                // Linear interpolation of the crossing time.
                let frac = prev_x / (prev_x - x);
                crossings.push(t - dt + frac * dt);
            }
            prev_x = x;
            assert!(t < 1.0, "no oscillation detected");
        }
        (crossings[2 * periods] - crossings[0]) / periods as f64
    }

    #[test]
    fn harmonic_period_small_amplitude() {
        let c = cavity();
        let u = uk(950.0);
        let expected = std::f64::consts::TAU
            * (dynp().mass * c.waist_trap * c.waist_trap / (4.0 * u)).sqrt();
        let t = measured_period(0.02 * c.waist_trap, u, us(0.5), 10);
        assert!(((t - expected) / expected).abs() < 0.01, "{t} vs {expected}");
    }

    #[test]
    fn anharmonic_softening() {
        let c = cavity();
        let u = uk(950.0);
        let mut prev = 0.0;
        for &amp in &[0.3, 0.6, 0.9, 1.2, 1.5] {
            let t = measured_period(amp * c.waist_trap, u, us(0.5), 4);
            assert!(t > prev, "period not increasing at amplitude {amp}");
            prev = t;
        }
    }

    #[test]
    fn equilibrium_point_is_fixed() {
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        let p = dynp();
        let mut rng = stream(0, 0, 1, Channel::Physics);
        let mut state = AtomState::at_rest();
        for i in 0..1000 {
            step(&mut state, uk(950.0), i as f64 * us(0.5), us(0.5), &p, &d, &c, &mut rng);
        }
        assert_eq!(state.position, [0.0, 0.0]);
        assert_eq!(state.velocity, [0.0, 0.0]);
    }

    #[test]
    fn energy_drift_one_period() {
        // Deterministic limit: relative energy drift < 1e-4 over one period.
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        let p = dynp();
        let u = uk(950.0);
        let mut rng = stream(0, 0, 2, Channel::Physics);
        let x0 = 0.3 * c.waist_trap;
        let mut state = AtomState {
            position: [x0, 0.0],
            velocity: [0.0, 0.0],
            status: AtomStatus::Trapped,
        };
        let e0 = state.total_energy(u, &c);
        let period = std::f64::consts::TAU
            * (p.mass * c.waist_trap * c.waist_trap / (4.0 * u)).sqrt();
        let steps = (period / us(0.5)).round() as usize;
        for i in 0..steps {
            step(&mut state, u, i as f64 * us(0.5), us(0.5), &p, &d, &c, &mut rng);
        }
        let e1 = state.total_energy(u, &c);
        assert!(((e1 - e0) / e0).abs() < 1e-4, "drift {}", ((e1 - e0) / e0).abs());
    }

    #[test]
    fn energy_drift_hundred_periods() {
        // Secular drift over 100 periods at dt = 1 µs, comparing
        // period-averaged energies to cancel the bounded VV oscillation.
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        let p = dynp();
        let u = uk(950.0);
        let mut rng = stream(0, 0, 3, Channel::Physics);
        let dt = us(1.0);
        let x0 = 0.4 * c.waist_trap;
        let mut state = AtomState {
            position: [x0, 0.0],
            velocity: [0.0, 0.0],
            status: AtomStatus::Trapped,
        };
        // Use the measured anharmonic period so windows line up with orbits.
        let period = measured_period(x0, u, dt, 2);
        let steps_per_period = (period / dt).round() as usize;
        let mut mean_first = 0.0;
        let mut mean_last = 0.0;
        let total = steps_per_period * 100;
        for i in 0..total {
            step(&mut state, u, i as f64 * dt, dt, &p, &d, &c, &mut rng);
            let e = state.total_energy(u, &c);
            if i < steps_per_period {
                mean_first += e;
            }
            if i >= total - steps_per_period {
                mean_last += e;
            }
        }
        let drift = ((mean_last - mean_first) / mean_first).abs();
        assert!(drift < 1e-4, "secular drift {drift}");
    }

    #[test]
    fn free_diffusion_velocity_variance() {
        // Free-diffusion statistics: trap off, flat coupling profile so the
        // diffusion coefficient is uniform; Var(v) per axis grows at 2D/m².
        let c = cavity().with_waists(1.0, 1.0);
        let d = drive();
        let p = dynp();
        let diff = heating_diffusion(0.0, 0.0, &p, &d, &c);
        assert!(diff > 0.0);
        let t_total = us(200.0);
        let dt = us(0.5);
        let steps = (t_total / dt).round() as usize;
        let n = 10_000;
        let mut sum_v2 = 0.0;
        for atom in 0..n {
            let mut rng = stream(99, 0, atom, Channel::Physics);
            let mut state = AtomState::at_rest();
            for i in 0..steps {
                step(&mut state, 0.0, i as f64 * dt, dt, &p, &d, &c, &mut rng);
            }
            sum_v2 += state.velocity[0] * state.velocity[0];
        }
        let var = sum_v2 / n as f64;
        let expected = 2.0 * diff * t_total / (p.mass * p.mass);
        assert!(
            ((var - expected) / expected).abs() < 0.05,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn initial_samples_are_bound() {
        let c = cavity();
        let p = dynp();
        let u = uk(950.0);
        let mut rng = stream(5, 0, 0, Channel::Init);
        for _ in 0..2000 {
            let s = sample_initial(400e-6, u, &p, &c, &mut rng);
            let e_above = s.kinetic_energy(p.mass) + u * (1.0 - (-2.0 * s.radius().powi(2) / c.waist_trap.powi(2)).exp());
            assert!(e_above < u);
        }
    }

    #[test]
    fn initial_cold_limit_concentrates_at_origin() {
        let c = cavity();
        let p = dynp();
        let mut rng = stream(6, 0, 0, Channel::Init);
        let t_init = 0.05e-6;
        let sigma_v = (K_B * t_init / p.mass).sqrt();
        for _ in 0..50 {
            let s = sample_initial(t_init, uk(950.0), &p, &c, &mut rng);
            assert!(s.radius() < 0.05 * c.waist_trap);
            assert!(s.velocity[0].hypot(s.velocity[1]) < 5.0 * sigma_v);
        }
    }

    #[test]
    fn initial_mean_energy_matches_quadrature_oracle() {
        // Brute-force oracle: 2D quadrature of the truncated Boltzmann
        // phase-space density in the Gaussian trap.
        let c = cavity();
        let p = dynp();
        let u = uk(950.0);
        let t_init = 400e-6;
        let kt = K_B * t_init;
        let w = c.waist_trap;
        let mass = p.mass;
        let nr = 400;
        let nv = 400;
        let r_max = 3.0 * w;
        let mut z = 0.0;
        let mut ez = 0.0;
        for i in 0..nr {
            let r = (i as f64 + 0.5) / nr as f64 * r_max;
            let profile = (-2.0 * r * r / (w * w)).exp();
            let pe = u * (1.0 - profile);
            if pe >= u {
                continue;
            }
            let v_max = (2.0 * (u - pe) / mass).sqrt();
            for j in 0..nv {
                let v = (j as f64 + 0.5) / nv as f64 * v_max;
                let ke = 0.5 * mass * v * v;
                let e = ke + pe;
                let weight = r * v * (-e / kt).exp() * v_max;
                z += weight;
                ez += e * weight;
            }
        }
        let oracle = ez / z;

        let mut rng = stream(7, 0, 0, Channel::Init);
        let n = 40_000;
        let mean = (0..n)
            .map(|_| {
                let s = sample_initial(t_init, u, &p, &c, &mut rng);
                s.kinetic_energy(mass)
                    + u * (1.0 - (-2.0 * s.radius().powi(2) / (w * w)).exp())
            })
            .sum::<f64>()
            / n as f64;
        assert!(
            ((mean - oracle) / oracle).abs() < 0.025,
            "mean {} µK vs oracle {} µK",
            to_uk(mean),
            to_uk(oracle)
        );
    }

    fn setup_constant<'a>(
        drive: &'a DriveParams,
        cavity: &'a CavityParams,
        params: &'a DynamicsParams,
        feedback_enabled: bool,
        duration: f64,
    ) -> TrajectorySetup<'a> {
        let feedback = FeedbackConfig {
            enabled: feedback_enabled,
            ..FeedbackConfig::default_params()
        };
        TrajectorySetup {
            drive,
            cavity,
            params,
            feedback,
            schedule: Schedule::Constant { level: TrapLevel::High },
            duration,
            dt: us(0.5),
            bin_duration: us(1.0),
            retention: Retention::all(),
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let c = cavity();
        let d = drive();
        let p = dynp();
        let setup = setup_constant(&d, &c, &p, true, ms(5.0));
        let run = || {
            let mut phys = stream(21, 0, 4, Channel::Physics);
            let mut det = stream(21, 0, 4, Channel::Detection);
            let mut init_rng = stream(21, 0, 4, Channel::Init);
            let init = sample_initial(400e-6, uk(950.0), &p, &c, &mut init_rng);
            simulate_trajectory(&setup, init, &mut phys, &mut det, 4).unwrap()
        };
        let (rec_a, fin_a) = run();
        let (rec_b, fin_b) = run();
        assert_eq!(rec_a, rec_b);
        assert_eq!(fin_a, fin_b);
    }

    #[test]
    fn no_probe_conservative_atom_never_escapes() {
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        let p = dynp();
        let setup = setup_constant(&d, &c, &p, false, ms(20.0));
        let mut phys = stream(22, 0, 0, Channel::Physics);
        let mut det = stream(22, 0, 0, Channel::Detection);
        let mut init_rng = stream(22, 0, 0, Channel::Init);
        let init = sample_initial(400e-6, uk(950.0), &p, &c, &mut init_rng);
        let (rec, _) = simulate_trajectory(&setup, init, &mut phys, &mut det, 0).unwrap();
        assert_eq!(rec.escape_time, None);
        assert_eq!(rec.duration, ms(20.0));
        let bins = rec.intensity_bins.unwrap();
        assert_eq!(bins.len(), 20_000);
        // No probe, no clicks.
        assert!(bins.iter().all(|&b| b == 0));
    }

    #[test]
    fn record_series_lengths_consistent() {
        let c = cavity();
        let d = drive();
        let p = dynp();
        let setup = setup_constant(&d, &c, &p, true, ms(2.0));
        let mut phys = stream(23, 0, 1, Channel::Physics);
        let mut det = stream(23, 0, 1, Channel::Detection);
        let init = AtomState::at_rest();
        let (rec, _) = simulate_trajectory(&setup, init, &mut phys, &mut det, 1).unwrap();
        let bins = rec.intensity_bins.as_ref().unwrap();
        let windows = rec.window_counts.as_ref().unwrap();
        assert_eq!(bins.len(), (rec.duration / rec.bin_duration).round() as usize);
        assert_eq!(windows.len(), bins.len() / 13);
        assert_eq!(rec.trap_history.as_ref().unwrap().len(), windows.len());
        // Window counts equal the sums of their constituent bins.
        for (w, chunk) in windows.iter().zip(bins.chunks_exact(13)) {
            assert_eq!(*w, chunk.iter().sum::<u32>());
        }
    }

    #[test]
    fn escape_monotone_in_depth() {
        // Deterministic unbound atom: a deeper trap never shortens residence.
        let c = cavity();
        let mut d = drive();
        d.n_empty = 0.0;
        let p = dynp();
        let t_cap = ms(5.0);
        let residence = |depth_uk: f64| -> f64 {
            let mut rng = stream(0, 0, 0, Channel::Physics);
            let mut state = AtomState {
                position: [1.2 * c.waist_trap, 0.0],
                velocity: [0.10, 0.0],
                status: AtomStatus::Trapped,
            };
            let dt = us(0.5);
            let steps = (t_cap / dt) as usize;
            for i in 0..steps {
                step(&mut state, uk(depth_uk), i as f64 * dt, dt, &p, &d, &c, &mut rng);
                if let AtomStatus::Escaped { at } = state.status {
                    return at;
                }
            }
            t_cap
        };
        let t1 = residence(300.0);
        let t2 = residence(600.0);
        let t3 = residence(950.0);
        assert!(t1 < t_cap, "shallow atom should escape");
        assert!(t2 >= t1);
        assert!(t3 >= t2);
        assert_eq!(t3, t_cap, "deep atom is bound");
    }
}
