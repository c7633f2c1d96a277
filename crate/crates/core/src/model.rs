//! Closed-form physics of the coupled atom–cavity system: mode geometry,
//! position-dependent coupling, steady-state transmission, detected click
//! rate, and the shot-noise position sensitivity.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{mhz, uk};
use crate::error::{Error, Result};

/// Cavity QED constants and resonator geometry.
///
/// Derived fields (mode waists, out-coupling fraction) are computed once by
/// [`CavityParams::new`] so hot paths read plain floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    /// Maximum atom–field coupling (rad/s).
    pub g0: f64,
    /// Cavity field decay rate (rad/s).
    pub kappa: f64,
    /// Atomic dipole decay rate (rad/s).
    pub gamma: f64,
    /// Mirror separation (m).
    pub cavity_length: f64,
    /// Mirror radii of curvature (m); `None` means planar.
    pub mirror_curvatures: (Option<f64>, Option<f64>),
    /// Mirror power transmissions (fractional, e.g. 16e-6).
    pub mirror_transmissions: (f64, f64),
    /// Total round-trip scatter/absorption loss (fractional).
    pub round_trip_loss: f64,
    /// Probe wavelength (m).
    pub lambda_probe: f64,
    /// Trap wavelength (m).
    pub lambda_trap: f64,
    /// TEM₀₀ waist of the probe mode (m), derived.
    pub waist_probe: f64,
    /// TEM₀₀ waist of the trap mode (m), derived.
    pub waist_trap: f64,
    /// Fraction of cavity decay exiting through the detection mirror, derived.
    pub out_coupling_fraction: f64,
}

impl CavityParams {
    /// Build parameters, deriving waists and out-coupling from the geometry.
    pub fn new(
        g0: f64,
        kappa: f64,
        gamma: f64,
        cavity_length: f64,
        mirror_curvatures: (Option<f64>, Option<f64>),
        mirror_transmissions: (f64, f64),
        round_trip_loss: f64,
        lambda_probe: f64,
        lambda_trap: f64,
    ) -> Result<Self> {
        let waist_probe = mode_waist(cavity_length, mirror_curvatures, lambda_probe)?;
        let waist_trap = mode_waist(cavity_length, mirror_curvatures, lambda_trap)?;
        let (t1, t2) = mirror_transmissions;
        let denom = t1 + t2 + round_trip_loss;
        let cavity = Self {
            g0,
            kappa,
            gamma,
            cavity_length,
            mirror_curvatures,
            mirror_transmissions,
            round_trip_loss,
            lambda_probe,
            lambda_trap,
            waist_probe,
            waist_trap,
            out_coupling_fraction: t2 / denom,
        };
        cavity.validate()?;
        Ok(cavity)
    }

    /// The measured cavity of the experiment this toolkit models.
    pub fn default_params() -> Self {
        Self::new(
            mhz(16.0),
            mhz(1.5),
            mhz(3.0),
            260e-6,
            (Some(200e-3), Some(10e-3)),
            (2e-6, 16e-6),
            11e-6,
            780e-9,
            785e-9,
        )
        .expect("default geometry is stable")
    }

    /// Replace the derived waists; test/modeling knob.
    pub fn with_waists(mut self, waist_probe: f64, waist_trap: f64) -> Self {
        self.waist_probe = waist_probe;
        self.waist_trap = waist_trap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, message: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    key: key.into(),
                    message: message.into(),
                })
            }
        };
        check(self.g0 > 0.0, "cavity.g0", "must be > 0")?;
        check(self.kappa > 0.0, "cavity.kappa", "must be > 0")?;
        check(self.gamma > 0.0, "cavity.gamma", "must be > 0")?;
        check(
            self.g0 > self.kappa && self.g0 > self.gamma,
            "cavity.g0",
            "strong coupling requires g0 > kappa and g0 > gamma",
        )?;
        check(self.waist_probe > 0.0, "cavity.waist_probe", "must be > 0")?;
        check(self.waist_trap > 0.0, "cavity.waist_trap", "must be > 0")?;
        check(
            self.out_coupling_fraction > 0.0 && self.out_coupling_fraction < 1.0,
            "cavity.out_coupling_fraction",
            "must be in (0, 1)",
        )?;
        Ok(())
    }
}

/// Probe drive and detection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    /// Probe–atom detuning (rad/s), positive = blue.
    pub delta_atom: f64,
    /// Probe–cavity detuning (rad/s).
    pub delta_cavity: f64,
    /// Empty-cavity intracavity photon number (probe power unit).
    pub n_empty: f64,
    /// Overall photon detection efficiency.
    pub eta_det: f64,
    /// Extra attenuation applied to the detected signal, in [0, 1].
    pub attenuation: f64,
    /// Light shift of the probe–atom detuning per unit local trap depth
    /// (rad/s per J). Negative by default: a deeper trap pulls the shifted
    /// transition toward the blue-detuned probe, so a shallower trap sees a
    /// larger detuning and higher transmission.
    pub light_shift_coeff: f64,
}

impl DriveParams {
    pub fn default_params() -> Self {
        Self {
            delta_atom: mhz(40.0),
            delta_cavity: 0.0,
            n_empty: 0.1,
            eta_det: 0.23,
            attenuation: 1.0,
            light_shift_coeff: default_light_shift_coeff(),
        }
    }

    /// Probe–atom detuning seen by an atom at local trap depth `u_local` (J).
    #[inline]
    pub fn effective_delta_atom(&self, u_local: f64) -> f64 {
        self.delta_atom + self.light_shift_coeff * u_local
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, message: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    key: key.into(),
                    message: message.into(),
                })
            }
        };
        check(self.n_empty >= 0.0, "drive.n_empty", "must be >= 0")?;
        check(
            (0.0..=1.0).contains(&self.eta_det),
            "drive.eta_det",
            "must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.attenuation),
            "drive.attenuation",
            "must be in [0, 1]",
        )?;
        Ok(())
    }
}

/// Default light-shift coefficient: −2π×10 MHz at the full 950 µK depth.
pub fn default_light_shift_coeff() -> f64 {
    -mhz(10.0) / uk(950.0)
}

/// TEM₀₀ waist radius of a two-mirror resonator.
///
/// Uses the Rayleigh-range form z_R² = L(R₁−L)(R₂−L)(R₁+R₂−L)/(R₁+R₂−2L)²,
/// w₀² = λ z_R/π. The symmetric confocal point (R₁ = R₂ = L) is the 0/0
/// limit of that expression and is evaluated by its closed form
/// w₀² = Lλ/(2π); every other marginally stable geometry is rejected.
pub fn mode_waist(
    length: f64,
    curvatures: (Option<f64>, Option<f64>),
    wavelength: f64,
) -> Result<f64> {
    let g = |r: Option<f64>| r.map_or(1.0, |r| 1.0 - length / r);
    let g1 = g(curvatures.0);
    let g2 = g(curvatures.1);
    let g1g2 = g1 * g2;
    if (g1 - g2).abs() < 1e-12 && g1.abs() < 1e-12 {
        // Symmetric confocal.
        return Ok((length * wavelength / (2.0 * std::f64::consts::PI)).sqrt());
    }
    if g1g2 <= 0.0 || g1g2 >= 1.0 {
        return Err(Error::UnstableResonator { g1g2 });
    }
    let (r1, r2) = (
        curvatures.0.expect("finite curvature given stability"),
        curvatures.1.expect("finite curvature given stability"),
    );
    let zr2 = length * (r1 - length) * (r2 - length) * (r1 + r2 - length)
        / ((r1 + r2 - 2.0 * length) * (r1 + r2 - 2.0 * length));
    Ok((wavelength * zr2.sqrt() / std::f64::consts::PI).sqrt())
}

/// Atom–field coupling at radial distance `r` from the cavity axis (rad/s).
///
/// Gaussian field profile: g(r) = g₀ exp(−r²/w_p²), so g(w_p) = g₀/e.
#[inline]
pub fn coupling(r: f64, cavity: &CavityParams) -> f64 {
    debug_assert!(r >= 0.0);
    let w = cavity.waist_probe;
    cavity.g0 * (-(r * r) / (w * w)).exp()
}

/// Steady-state cavity transmission relative to the empty cavity.
///
/// T_rel = |κ(γ + iΔ_a)|² / |(κ + iΔ_c)(γ + iΔ_a) + g²|², exactly 1 at
/// (g = 0, Δ_c = 0) and monotonically increasing as g falls at Δ_c = 0.
pub fn rel_transmission(g: f64, delta_atom: f64, delta_cavity: f64, cavity: &CavityParams) -> f64 {
    let atom = Complex64::new(cavity.gamma, delta_atom);
    let num = cavity.kappa * atom;
    let den = Complex64::new(cavity.kappa, delta_cavity) * atom + g * g;
    num.norm_sqr() / den.norm_sqr()
}

/// Transmission for an atom at radius `r` under local trap depth `u_local`
/// (J), folding in the coupling profile and the light shift.
#[inline]
pub fn transmission_at(r: f64, u_local: f64, drive: &DriveParams, cavity: &CavityParams) -> f64 {
    let g = coupling(r, cavity);
    rel_transmission(g, drive.effective_delta_atom(u_local), drive.delta_cavity, cavity)
}

/// Detected click rate (s⁻¹) for a given relative transmission.
///
/// rate = attenuation · η · (T₂/ΣT,L) · n_empty · 2κ · T_rel.
#[inline]
pub fn detected_rate(t_rel: f64, drive: &DriveParams, cavity: &CavityParams) -> f64 {
    debug_assert!(t_rel >= 0.0);
    drive.attenuation
        * drive.eta_det
        * cavity.out_coupling_fraction
        * drive.n_empty
        * 2.0
        * cavity.kappa
        * t_rel
}

/// Intracavity photon number for a given relative transmission.
#[inline]
pub fn intracavity_photons(t_rel: f64, drive: &DriveParams) -> f64 {
    drive.n_empty * t_rel
}

/// Photon scattering rate (s⁻¹) of the atom at radius `r` and local depth
/// `u_local`: R_sc = 2γ g² n_cav / (Δ_a² + γ²). The intracavity photon
/// number follows the light-shifted transmission; the free-scattering
/// prefactor uses the bare probe–atom detuning.
pub fn scattering_rate(r: f64, u_local: f64, drive: &DriveParams, cavity: &CavityParams) -> f64 {
    let g = coupling(r, cavity);
    let delta_eff = drive.effective_delta_atom(u_local);
    let t_rel = rel_transmission(g, delta_eff, drive.delta_cavity, cavity);
    let n_cav = intracavity_photons(t_rel, drive);
    let delta = drive.delta_atom;
    2.0 * cavity.gamma * g * g * n_cav / (delta * delta + cavity.gamma * cavity.gamma)
}

/// Shot-noise signal-to-noise ratio of the position signal for an atom
/// whose radial energy is `energy` (J above the trap bottom) in a trap of
/// depth `depth` (J), integrating clicks for `window` seconds.
///
/// Signal: expected window counts at the turning radius minus the counts
/// for an atom on axis. Noise: shot noise of the on-axis reference level.
pub fn snr_vs_energy(
    energy: f64,
    window: f64,
    depth: f64,
    drive: &DriveParams,
    cavity: &CavityParams,
) -> Result<f64> {
    if energy < 0.0 {
        return Err(Error::Domain(format!("energy {energy} < 0")));
    }
    if window <= 0.0 {
        return Err(Error::Domain(format!("window {window} <= 0")));
    }
    if energy > depth {
        return Err(Error::EnergyExceedsDepth {
            energy_uk: crate::constants::to_uk(energy),
            depth_uk: crate::constants::to_uk(depth),
        });
    }
    let counts_at = |r: f64, u_local: f64| -> f64 {
        detected_rate(transmission_at(r, u_local, drive, cavity), drive, cavity) * window
    };
    let c0 = counts_at(0.0, depth);
    if c0 <= 0.0 {
        return Err(Error::Domain("no detected signal (zero reference counts)".into()));
    }
    // Turning radius: depth·(1 − e^{−2r²/w_t²}) = energy.
    let frac = 1.0 - energy / depth;
    if frac <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let w = cavity.waist_trap;
    let r_turn = (-frac.ln() * 0.5).sqrt() * w;
    let c_turn = counts_at(r_turn, depth * frac);
    Ok((c_turn - c0) / c0.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::us;
    use std::f64::consts::TAU;

    #[test]
    fn waist_matches_independent_rayleigh_form() {
        // Independent oracle: g-parameter form of the same geometry.
        let (l, r1, r2, lam) = (260e-6, 200e-3, 10e-3, 780e-9);
        let g1: f64 = 1.0 - l / r1;
        let g2: f64 = 1.0 - l / r2;
        let w0sq =
            (lam * l / std::f64::consts::PI) * (g1 * g2 * (1.0 - g1 * g2)).sqrt() / (g1 + g2 - 2.0 * g1 * g2);
        let oracle = w0sq.sqrt();
        let w = mode_waist(l, (Some(r1), Some(r2)), lam).unwrap();
        assert!(((w - oracle) / oracle).abs() < 1e-12);
        // ≈ 20 µm for the default geometry.
        assert!((w - 20e-6).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn waist_planar_is_unstable() {
        let err = mode_waist(260e-6, (None, None), 780e-9).unwrap_err();
        assert!(matches!(err, Error::UnstableResonator { .. }));
    }

    #[test]
    fn waist_symmetric_confocal_closed_form() {
        let l = 1e-2;
        let lam = 780e-9;
        let w = mode_waist(l, (Some(l), Some(l)), lam).unwrap();
        let expected = (l * lam / TAU).sqrt();
        assert!(((w - expected) / expected).abs() < 1e-10);
    }

    #[test]
    fn coupling_profile() {
        let cavity = CavityParams::default_params();
        assert!((coupling(0.0, &cavity) - cavity.g0).abs() < 1e-6);
        assert!(coupling(1.0, &cavity) < 1e-30 * cavity.g0);
        let at_waist = coupling(cavity.waist_probe, &cavity);
        assert!(((at_waist - cavity.g0 / std::f64::consts::E) / cavity.g0).abs() < 1e-12);
        // Strictly decreasing.
        let mut prev = coupling(0.0, &cavity);
        for i in 1..50 {
            let g = coupling(i as f64 * 1e-6, &cavity);
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn transmission_empty_cavity_is_unity() {
        let cavity = CavityParams::default_params();
        assert_eq!(rel_transmission(0.0, mhz(40.0), 0.0, &cavity), 1.0);
    }

    #[test]
    fn transmission_matches_complex_oracle() {
        // Independent complex-arithmetic evaluation, frozen before the build:
        // κ=2π·1.5 MHz, γ=2π·3 MHz, Δa=2π·40 MHz, g=2π·16 MHz
        // → T_rel = 3620.25/71460.25 = 0.050661031832382346.
        let cavity = CavityParams::default_params();
        let t = rel_transmission(cavity.g0, mhz(40.0), 0.0, &cavity);
        let oracle = 0.050_661_031_832_382_346;
        assert!(((t - oracle) / oracle).abs() < 1e-12, "t = {t}");
        assert!((t - 0.05).abs() < 0.002);
    }

    #[test]
    fn transmission_monotone_in_radius() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let mut prev = 0.0;
        for i in 0..60 {
            let r = i as f64 * 1e-6;
            let t = rel_transmission(coupling(r, &cavity), drive.delta_atom, 0.0, &cavity);
            assert!(t > prev);
            assert!(t <= 1.0 + 1e-12);
            prev = t;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn detected_rate_budget() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        // Photon-budget oracle: n·2κ·(16/29)·0.23.
        let oracle = 0.1 * 2.0 * mhz(1.5) * (16.0 / 29.0) * 0.23;
        let rate = detected_rate(1.0, &drive, &cavity);
        assert!(((rate - oracle) / oracle).abs() < 1e-12);
        let per_window = rate * us(13.0);
        assert!((per_window - 3.1).abs() < 0.05, "counts/window = {per_window}");
        assert_eq!(detected_rate(0.0, &drive, &cavity), 0.0);
        // Linear in attenuation.
        let mut half = drive.clone();
        half.attenuation = 0.5;
        assert!((detected_rate(1.0, &half, &cavity) - 0.5 * rate).abs() < 1e-12 * rate);
        // Linear in n_empty and eta_det.
        let mut d2 = drive.clone();
        d2.n_empty *= 3.0;
        assert!((detected_rate(0.7, &d2, &cavity) - 3.0 * detected_rate(0.7, &drive, &cavity)).abs() < 1e-9);
    }

    #[test]
    fn snr_zero_at_trap_center() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let snr = snr_vs_energy(0.0, us(13.0), uk(950.0), &drive, &cavity).unwrap();
        assert!(snr.abs() < 1e-12);
    }

    #[test]
    fn snr_crosses_unity_near_450_uk() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let snr = |e_uk: f64| snr_vs_energy(uk(e_uk), us(13.0), uk(950.0), &drive, &cavity).unwrap();
        // Bracket the crossing on a 1 µK grid.
        let mut crossing = None;
        for e in 100..900 {
            if snr(e as f64) < 1.0 && snr((e + 1) as f64) >= 1.0 {
                crossing = Some(e as f64 + 0.5);
                break;
            }
        }
        let e1 = crossing.expect("SNR must cross 1");
        assert!(e1 > 450.0 * 0.7 && e1 < 450.0 * 1.3, "crossing at {e1} µK");
    }

    #[test]
    fn snr_increases_with_window() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let mut prev = 0.0;
        for k in 1..=8 {
            let snr = snr_vs_energy(uk(300.0), us(13.0) * k as f64, uk(950.0), &drive, &cavity).unwrap();
            assert!(snr > prev);
            prev = snr;
        }
    }

    #[test]
    fn snr_rejects_energy_above_depth() {
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let err = snr_vs_energy(uk(1000.0), us(13.0), uk(950.0), &drive, &cavity).unwrap_err();
        assert!(matches!(err, Error::EnergyExceedsDepth { .. }));
    }

    #[test]
    fn light_shift_direction() {
        // Shallower local depth → larger detuning → higher transmission.
        let cavity = CavityParams::default_params();
        let drive = DriveParams::default_params();
        let t_deep = transmission_at(0.0, uk(950.0), &drive, &cavity);
        let t_shallow = transmission_at(0.0, uk(400.0), &drive, &cavity);
        assert!(t_shallow > t_deep);
        let d_eff = drive.effective_delta_atom(uk(950.0));
        assert!((d_eff - mhz(30.0)).abs() < 1.0);
    }
}
