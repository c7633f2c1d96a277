//! Temporary diagnostics for the feedback energetics (run with --ignored).

use fbsim_core::config::ExperimentConfig;
use fbsim_core::constants::{to_uk, uk, us, MASS_RB85};
use fbsim_core::controller::{decide, FeedbackConfig, TrapLevel};
use fbsim_core::detection::sample_counts;
use fbsim_core::dynamics::{step, AtomState, AtomStatus};
use fbsim_core::model::{detected_rate, transmission_at, CavityParams, DriveParams};
use fbsim_core::rng::{stream, Channel};

#[test]
#[ignore]
fn probe_feedback_energetics() {
    let cfg = ExperimentConfig::default();
    let cavity = cfg.cavity_params().unwrap();
    let drive = cfg.drive_params();
    let mut params = cfg.dynamics_params();
    params.zeta_heat = 0.4217; // calibrated
    let fb = FeedbackConfig::default_params();
    let dt = us(0.5);
    let w = cavity.waist_trap;

    for &e_uk in &[300.0f64, 450.0, 600.0, 750.0] {
        let e = uk(e_uk);
        // turning radius in the high trap
        let frac: f64 = 1.0 - e / fb.u_high;
        let r0 = w * (-frac.ln() / 2.0).sqrt();

        let mut tally_low = 0u64;
        let mut tally_windows = 0u64;
        let mut de_low_inbound = 0.0;
        let mut n_low_inbound = 0u64;
        let mut de_low_outbound = 0.0;
        let mut n_low_outbound = 0u64;
        let mut e_start = 0.0;
        let mut e_end = 0.0;
        let mut t_total = 0.0;

        for atom in 0..40u64 {
            let mut phys = stream(777, 0, atom, Channel::Physics);
            let mut det = stream(777, 0, atom, Channel::Detection);
            let mut state = AtomState {
                position: [r0 * (0.3 * atom as f64).cos(), r0 * (0.3 * atom as f64).sin()],
                velocity: [0.0, 0.0],
                status: AtomStatus::Trapped,
            };
            let mut level = TrapLevel::High;
            let mut prev_counts: Option<u32> = None;
            e_start += to_uk(state.kinetic_energy(MASS_RB85)) + to_uk(fb.u_high)
                - to_uk(fb.u_high * (-2.0 * state.radius().powi(2) / (w * w)).exp());
            let windows = 6000usize; // 78 ms
            for wi in 0..windows {
                let depth = fb.depth_of(level);
                let r_before = state.radius();
                let e_before = state.kinetic_energy(MASS_RB85)
                    + fbsim_core::dynamics::trap_potential(r_before, depth, &cavity);
                let mut counts = 0u32;
                for s in 0..26 {
                    let t = (wi * 26 + s) as f64 * dt;
                    let u_local = depth * (-2.0 * state.radius().powi(2) / (w * w)).exp();
                    let rate =
                        detected_rate(transmission_at(state.radius(), u_local, &drive, &cavity), &drive, &cavity);
                    counts += sample_counts(rate * dt, 1.0, &mut det);
                    step(&mut state, depth, t, dt, &params, &drive, &cavity, &mut phys);
                    if !matches!(state.status, AtomStatus::Trapped) {
                        break;
                    }
                }
                if !matches!(state.status, AtomStatus::Trapped) {
                    break;
                }
                let r_after = state.radius();
                tally_windows += 1;
                if level == TrapLevel::Low {
                    tally_low += 1;
                    // energy change across the low window incl. both switches
                    let e_after_high = state.kinetic_energy(MASS_RB85)
                        + fbsim_core::dynamics::trap_potential(r_after, fb.u_high, &cavity);
                    let e_before_high = e_before
                        + fbsim_core::dynamics::trap_potential(r_before, fb.u_high, &cavity)
                        - fbsim_core::dynamics::trap_potential(r_before, depth, &cavity);
                    let de = to_uk(e_after_high - e_before_high);
                    if r_after < r_before {
                        de_low_inbound += de;
                        n_low_inbound += 1;
                    } else {
                        de_low_outbound += de;
                        n_low_outbound += 1;
                    }
                }
                let next = match prev_counts {
                    Some(p) => decide(p, counts, &fb),
                    None => TrapLevel::High,
                };
                prev_counts = Some(counts);
                level = next;
                t_total = (wi + 1) as f64 * 26.0 * dt as f64;
            }
            e_end += to_uk(
                state.kinetic_energy(MASS_RB85)
                    + fb.u_high
                    + fbsim_core::dynamics::trap_potential(state.radius(), fb.u_high, &cavity),
            );
        }
        println!(
            "E={e_uk:5.0} µK: low fraction {:.4} ({} of {}), ΔE/low inbound {:+.1} µK (n={}), outbound {:+.1} µK (n={}), ⟨E⟩ {:.0}→{:.0} µK over {:.0} ms/atom",
            tally_low as f64 / tally_windows as f64,
            tally_low,
            tally_windows,
            de_low_inbound / n_low_inbound.max(1) as f64,
            n_low_inbound,
            de_low_outbound / n_low_outbound.max(1) as f64,
            n_low_outbound,
            e_start / 40.0,
            e_end / 40.0,
            t_total * 1e3,
        );
    }
}
