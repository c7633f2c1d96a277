//! Ensemble analysis: survival curves and exponential storage-time fits,
//! adiabatic-invariant thermometry (action integral, escape-depth energy
//! reconstruction, truncated Boltzmann temperature fit), the intensity
//! autocorrelation estimator, and the toggle-protocol phase averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::numeric::{bisect, golden_max, levenberg_marquardt, quad};

// ---------------------------------------------------------------------------
// Survival curves and exponential fits
// ---------------------------------------------------------------------------

/// Fraction of atoms remaining trapped versus time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    /// Bin edges (s), starting at 0.
    pub times: Vec<f64>,
    pub fraction: Vec<f64>,
    /// Binomial standard error per point.
    pub stderr: Vec<f64>,
    pub n_atoms: usize,
}

/// Parameters of p(t) = A·exp(−t/τ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFit {
    pub amplitude: f64,
    /// 1/e storage time (s).
    pub tau: f64,
    /// Covariance of (A, τ).
    pub covariance: [[f64; 2]; 2],
}

/// Non-increasing step curve of the surviving fraction. Atoms that never
/// escaped (`None`) are right-censored at `duration`.
pub fn survival_curve(
    escape_times: &[Option<f64>],
    duration: f64,
    bin_width: f64,
) -> Result<SurvivalCurve> {
    if escape_times.is_empty() {
        return Err(Error::EmptyInput("survival_curve needs at least one atom".into()));
    }
    if !(bin_width > 0.0) || !(duration > 0.0) {
        return Err(Error::Domain("duration and bin_width must be positive".into()));
    }
    let n = escape_times.len();
    let n_bins = (duration / bin_width).floor() as usize;
    let mut times = Vec::with_capacity(n_bins + 1);
    let mut fraction = Vec::with_capacity(n_bins + 1);
    let mut stderr = Vec::with_capacity(n_bins + 1);
    for k in 0..=n_bins {
        let t = k as f64 * bin_width;
        let alive = escape_times
            .iter()
            .filter(|e| match e {
                Some(esc) => *esc > t,
                None => true,
            })
            .count();
        let p = alive as f64 / n as f64;
        times.push(t);
        fraction.push(p);
        stderr.push((p * (1.0 - p) / n as f64).sqrt());
    }
    Ok(SurvivalCurve {
        times,
        fraction,
        stderr,
        n_atoms: n,
    })
}

/// Least-squares fit of A·exp(−t/τ) to a survival curve.
pub fn fit_exponential(curve: &SurvivalCurve) -> Result<SurvivalFit> {
    let distinct = {
        let mut v: Vec<u64> = curve.times.iter().map(|t| t.to_bits()).collect();
        v.dedup();
        v.len()
    };
    if distinct < 3 {
        return Err(Error::DegenerateData("need at least 3 distinct time bins".into()));
    }
    let fmax = curve.fraction.iter().cloned().fold(f64::MIN, f64::max);
    let fmin = curve.fraction.iter().cloned().fold(f64::MAX, f64::min);
    if fmax <= 0.0 || (fmax - fmin) < 1e-12 {
        return Err(Error::DegenerateData(
            "survival curve is constant; storage time unconstrained".into(),
        ));
    }

    // Log-linear initial guess over the strictly positive part.
    let (mut sx, mut sy, mut sxx, mut sxy, mut np) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for (&t, &f) in curve.times.iter().zip(&curve.fraction) {
        if f > 0.0 {
            let y = f.ln();
            sx += t;
            sy += y;
            sxx += t * t;
            sxy += t * y;
            np += 1.0;
        }
    }
    let denom = np * sxx - sx * sx;
    let t_end = curve.times[curve.times.len() - 1].max(1e-9);
    // Fallback: time at which the curve first drops below fmax/e.
    let crossing = curve
        .times
        .iter()
        .zip(&curve.fraction)
        .find(|(_, &f)| f < fmax / std::f64::consts::E)
        .map(|(&t, _)| t.max(t_end * 1e-4));
    let (a0, tau0) = if denom.abs() > 1e-300 && np >= 3.0 {
        let slope = (np * sxy - sx * sy) / denom;
        let icept = (sy - slope * sx) / np;
        let tau = if slope < -1e-300 {
            -1.0 / slope
        } else {
            crossing.unwrap_or(t_end)
        };
        (icept.exp().clamp(1e-6, 2.0), tau)
    } else {
        (fmax, crossing.unwrap_or(t_end))
    };

    let out = levenberg_marquardt(
        &curve.times,
        &curve.fraction,
        &[a0, tau0],
        |t, p| p[0] * (-t / p[1]).exp(),
        |t, p, g| {
            let e = (-t / p[1]).exp();
            g[0] = e;
            g[1] = p[0] * e * t / (p[1] * p[1]);
        },
    )?;
    if !(out.params[1] > 0.0) || !out.params[1].is_finite() {
        return Err(Error::DegenerateData(format!(
            "fit produced non-physical storage time {}",
            out.params[1]
        )));
    }
    Ok(SurvivalFit {
        amplitude: out.params[0],
        tau: out.params[1],
        covariance: [
            [out.covariance[0][0], out.covariance[0][1]],
            [out.covariance[1][0], out.covariance[1][1]],
        ],
    })
}

// ---------------------------------------------------------------------------
// Adiabatic-invariant thermometry
// ---------------------------------------------------------------------------

/// Escape depth and reconstructed initial energy of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub u_escape: f64,
    pub e0: f64,
}

/// Radial action of an orbit with energy `energy` above the bottom of a
/// Gaussian well of depth `depth`, in the normalized coordinate where
/// V(x) = −U·e^{−x²}:
///
/// S(E, U) = 4 ∫₀^{x_max} √(E − U(1 − e^{−x²})) dx
///
/// Constant prefactors are dropped; only the equality
/// S(E₀,U₀) = S(U_esc,U_esc) is ever consumed. `energy` and `depth` may be
/// in any common energy unit (S scales as √unit).
pub fn action(energy: f64, depth: f64) -> Result<f64> {
    if !(energy > 0.0) {
        return Err(Error::Domain(format!("action requires E > 0, got {energy}")));
    }
    if energy > depth {
        return Err(Error::EnergyExceedsDepth {
            energy_uk: energy,
            depth_uk: depth,
        });
    }
    let eps = 1e-12 * depth.sqrt();
    if energy == depth {
        // Marginally bound orbit: integrand is exactly √U·e^{−x²/2}; the
        // tail beyond x = 9 is below 1e-17 of the total.
        return Ok(4.0 * quad(|x| depth.sqrt() * (-0.5 * x * x).exp(), 0.0, 9.0, Some(eps)));
    }
    let x_max = (-(1.0 - energy / depth).ln()).sqrt();
    // Substitute x = x_max·sin θ to remove the square-root turning point.
    let f = |theta: f64| {
        let x = x_max * theta.sin();
        let v = energy - depth * (1.0 - (-x * x).exp());
        v.max(0.0).sqrt() * x_max * theta.cos()
    };
    Ok(4.0 * quad(f, 0.0, std::f64::consts::FRAC_PI_2, Some(eps)))
}

/// Trap depth at the measured escape time of a linear ramp.
pub fn escape_depth(t_escape: f64, u_start: f64, u_end: f64, ramp_duration: f64) -> Result<f64> {
    if t_escape < 0.0 || t_escape > ramp_duration {
        return Err(Error::OutOfRamp {
            t_ms: t_escape * 1e3,
            ramp_ms: ramp_duration * 1e3,
        });
    }
    Ok(crate::controller::ramp_depth(t_escape, u_start, u_end, ramp_duration))
}

/// Initial energy E₀ before an adiabatic ramp from `u_start`, for an atom
/// that escaped at depth `u_esc`: the unique root of
/// S(E₀, u_start) = S(u_esc, u_esc) on (0, u_start].
pub fn reconstruct_energy(u_esc: f64, u_start: f64) -> Result<f64> {
    if !(u_esc > 0.0) || u_esc > u_start {
        return Err(Error::Domain(format!(
            "u_esc = {u_esc} outside (0, u_start = {u_start}]"
        )));
    }
    if u_esc == u_start {
        return Ok(u_start);
    }
    let target = action(u_esc, u_esc)?;
    let f = |e: f64| action(e, u_start).map(|s| s - target).unwrap_or(f64::NAN);
    let lo = u_start * 1e-12;
    if f(lo) > 0.0 {
        return Err(Error::Bracketing(
            "action at the lower bracket exceeds the target; monotonicity broken".into(),
        ));
    }
    bisect(f, lo, u_start, 1e-9)
}

// ---------------------------------------------------------------------------
// Truncated Boltzmann temperature fit
// ---------------------------------------------------------------------------

/// Maximum-likelihood temperature and its Fisher uncertainty, in the same
/// units as the fitted energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub fit_uncertainty: f64,
}

/// ∫₀^z t² e^{−t} dt = 2(1 − e^{−z}(1 + z + z²/2)).
#[inline]
fn gamma3(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        2.0 * (1.0 - (-z).exp() * (1.0 + z + 0.5 * z * z))
    }
}

fn log_likelihood(energies: &[f64], lo: f64, hi: f64, theta: f64) -> f64 {
    let z = gamma3(hi / theta) - gamma3(lo / theta);
    if z <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = energies.len() as f64;
    let sum_e: f64 = energies.iter().sum();
    -sum_e / theta - n * (3.0 * theta.ln() + z.ln())
}

/// Maximum-likelihood fit of the 3D harmonic-oscillator Boltzmann energy
/// density p(E) ∝ E² e^{−E/k_BT}, truncated and renormalized on
/// (`support_min`, `u0`]. `support_min = None` fits the plain (0, u0] form.
///
/// Energies, `u0` and the returned temperature share one energy unit
/// (temperatures are quoted as k_BT in that unit).
pub fn fit_truncated_boltzmann(
    energies: &[f64],
    u0: f64,
    support_min: Option<f64>,
) -> Result<TemperatureFit> {
    if energies.len() < 10 {
        return Err(Error::EmptyInput(format!(
            "need at least 10 energy samples, got {}",
            energies.len()
        )));
    }
    let lo = support_min.unwrap_or(0.0);
    if !(u0 > 0.0) || lo < 0.0 || lo >= u0 {
        return Err(Error::Domain(format!("invalid support ({lo}, {u0}]")));
    }
    if let Some(bad) = energies.iter().find(|&&e| e <= lo || e > u0) {
        return Err(Error::OutOfRange(format!(
            "energy sample {bad} outside ({lo}, {u0}]"
        )));
    }

    // As T → ∞ the truncated density tends to ∝ E² with mean m∞; sample
    // means at or above it cannot be matched by any finite temperature.
    let mean: f64 = energies.iter().sum::<f64>() / energies.len() as f64;
    let mean_inf = 0.75 * (u0.powi(4) - lo.powi(4)) / (u0.powi(3) - lo.powi(3));
    if mean >= mean_inf * (1.0 - 1e-9) {
        return Err(Error::NonConvergence {
            what: format!("Boltzmann fit (sample mean {mean} at the T→∞ boundary {mean_inf})"),
            iterations: 0,
        });
    }

    let ln_lo = (u0 * 1e-4).ln();
    let ln_hi = (u0 * 1e3).ln();
    let ln_theta = golden_max(
        |lt| log_likelihood(energies, lo, u0, lt.exp()),
        ln_lo,
        ln_hi,
        1e-12,
    );
    let theta = ln_theta.exp();
    if ln_theta > ln_hi - 1e-3 {
        return Err(Error::NonConvergence {
            what: "Boltzmann fit (temperature ran to the search boundary)".into(),
            iterations: 0,
        });
    }

    // Observed Fisher information from the numerical curvature at the peak.
    let h = theta * 1e-4;
    let l0 = log_likelihood(energies, lo, u0, theta);
    let lp = log_likelihood(energies, lo, u0, theta + h);
    let lm = log_likelihood(energies, lo, u0, theta - h);
    let info = -(lp - 2.0 * l0 + lm) / (h * h);
    if !(info > 0.0) {
        return Err(Error::NonConvergence {
            what: "Boltzmann fit (non-positive observed information)".into(),
            iterations: 0,
        });
    }
    Ok(TemperatureFit {
        temperature: theta,
        fit_uncertainty: 1.0 / info.sqrt(),
    })
}

/// Binned least-squares variant of the temperature fit, provided for
/// comparison with the MLE.
pub fn fit_truncated_boltzmann_binned(
    energies: &[f64],
    u0: f64,
    support_min: Option<f64>,
    n_bins: usize,
) -> Result<TemperatureFit> {
    if energies.len() < 10 {
        return Err(Error::EmptyInput(format!(
            "need at least 10 energy samples, got {}",
            energies.len()
        )));
    }
    let lo = support_min.unwrap_or(0.0);
    let n_bins = n_bins.max(3);
    let width = (u0 - lo) / n_bins as f64;
    let mut counts = vec![0.0f64; n_bins];
    for &e in energies {
        if e <= lo || e > u0 {
            return Err(Error::OutOfRange(format!("energy sample {e} outside ({lo}, {u0}]")));
        }
        let idx = (((e - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1.0;
    }
    let n = energies.len() as f64;
    let predicted = |theta: f64, i: usize| -> f64 {
        let a = lo + i as f64 * width;
        let b = a + width;
        let z = gamma3(u0 / theta) - gamma3(lo / theta);
        n * (gamma3(b / theta) - gamma3(a / theta)) / z
    };
    let sse = |theta: f64| -> f64 {
        (0..n_bins)
            .map(|i| {
                let d = counts[i] - predicted(theta, i);
                d * d
            })
            .sum()
    };
    let ln_theta = golden_max(|lt| -sse(lt.exp()), (u0 * 1e-4).ln(), (u0 * 1e3).ln(), 1e-12);
    let theta = ln_theta.exp();
    // 1σ from the SSE curvature, scaled by the residual variance.
    let h = theta * 1e-3;
    let curv = (sse(theta + h) - 2.0 * sse(theta) + sse(theta - h)) / (h * h);
    let dof = (n_bins.saturating_sub(1)).max(1) as f64;
    let sigma = if curv > 0.0 {
        (2.0 * sse(theta) / dof / curv).sqrt()
    } else {
        f64::NAN
    };
    Ok(TemperatureFit {
        temperature: theta,
        fit_uncertainty: sigma,
    })
}

// ---------------------------------------------------------------------------
// Intensity correlation
// ---------------------------------------------------------------------------

/// Discrete R(τ) estimate averaged over selected intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    /// Lag grid (s), spaced by the bin duration starting at 0.
    pub tau: Vec<f64>,
    /// ⟨I(t)I(t+τ)⟩ in counts² per bin².
    pub r: Vec<f64>,
    pub n_intervals: usize,
    pub interval_duration: f64,
    pub selection_threshold: f64,
}

/// Unnormalized autocorrelation of one interval:
/// R_k = Σ_t I_t·I_{t+k} / (N − k).
pub fn correlation_of(interval: &[f64], max_lag: usize) -> Vec<f64> {
    let n = interval.len();
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag.min(n - 1) {
        let mut s = 0.0;
        for t in 0..(n - k) {
            s += interval[t] * interval[t + k];
        }
        out.push(s / (n - k) as f64);
    }
    out
}

/// Chop the stored 1 µs intensity series into intervals of
/// `interval_duration`, keep those whose mean transmission is below
/// `selection` × the empty-cavity level, and average the per-interval
/// autocorrelation up to `tau_max`.
pub fn intensity_correlation(
    records: &[TrajectoryRecord],
    interval_duration: f64,
    selection: f64,
    tau_max: f64,
    empty_counts_per_bin: f64,
) -> Result<CorrelationCurve> {
    let bin = records
        .first()
        .map(|r| r.bin_duration)
        .ok_or_else(|| Error::EmptyInput("no trajectory records".into()))?;
    let n_int = (interval_duration / bin).round() as usize;
    let max_lag = (tau_max / bin).round() as usize;
    if n_int < 2 || max_lag >= n_int {
        return Err(Error::Domain(format!(
            "tau_max ({tau_max} s) must be below the interval duration ({interval_duration} s)"
        )));
    }
    let threshold = selection * empty_counts_per_bin;

    let mut intervals: Vec<&[u32]> = Vec::new();
    for rec in records {
        let Some(bins) = rec.intensity_bins.as_ref() else {
            continue;
        };
        for chunk in bins.chunks_exact(n_int) {
            let mean = chunk.iter().map(|&c| c as f64).sum::<f64>() / n_int as f64;
            if mean < threshold {
                intervals.push(chunk);
            }
        }
    }
    if intervals.is_empty() {
        return Err(Error::NoSelectedIntervals { threshold: selection });
    }

    let partials: Vec<Vec<f64>> = intervals
        .par_iter()
        .map(|chunk| {
            let as_f64: Vec<f64> = chunk.iter().map(|&c| c as f64).collect();
            correlation_of(&as_f64, max_lag)
        })
        .collect();
    let mut r = vec![0.0f64; max_lag + 1];
    for p in &partials {
        for (acc, v) in r.iter_mut().zip(p) {
            *acc += v;
        }
    }
    let n = intervals.len() as f64;
    for v in &mut r {
        *v /= n;
    }
    Ok(CorrelationCurve {
        tau: (0..=max_lag).map(|k| k as f64 * bin).collect(),
        r,
        n_intervals: intervals.len(),
        interval_duration,
        selection_threshold: selection,
    })
}

/// Location and contrast of the radial-oscillation bump of an R(τ) curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpMetrics {
    pub tau_peak: f64,
    /// (peak − floor)/floor with the floor taken from the long-lag tail.
    pub contrast: f64,
}

/// Find the oscillation bump inside `search` (s) after light smoothing.
/// The floor is the smoothed level over the last quarter of the range.
pub fn bump_metrics(curve: &CorrelationCurve, search: (f64, f64), smooth_bins: usize) -> BumpMetrics {
    let bin = curve.tau.get(1).copied().unwrap_or(1e-6) - curve.tau[0];
    let half = smooth_bins / 2;
    let smoothed: Vec<f64> = (0..curve.r.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(curve.r.len());
            curve.r[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let k_lo = ((search.0 / bin).round() as usize).min(smoothed.len() - 1);
    let k_hi = ((search.1 / bin).round() as usize).min(smoothed.len() - 1);
    let (mut k_peak, mut peak) = (k_lo, f64::MIN);
    for k in k_lo..=k_hi {
        if smoothed[k] > peak {
            peak = smoothed[k];
            k_peak = k;
        }
    }
    let floor_lo = k_hi - (k_hi - k_lo) / 4;
    let floor = smoothed[floor_lo..=k_hi].iter().sum::<f64>() / (k_hi - floor_lo + 1) as f64;
    BumpMetrics {
        tau_peak: k_peak as f64 * bin,
        contrast: (peak - floor) / floor.max(1e-300),
    }
}

/// Width of the short-lag feedback feature: first lag where R falls below
/// the midpoint between the short-lag plateau and the post-feature
/// baseline. Returns the crossing time in seconds.
pub fn square_feature_edge(curve: &CorrelationCurve, t_int: f64) -> f64 {
    let bin = curve.tau.get(1).copied().unwrap_or(1e-6) - curve.tau[0];
    let k_int = (t_int / bin).round() as usize;
    let k_head = (k_int * 7 / 10).max(2);
    // Exclude τ=0 (Poisson self-term).
    let head = curve.r[1..k_head].iter().sum::<f64>() / (k_head - 1) as f64;
    let base_lo = 2 * k_int;
    let base_hi = (3 * k_int).min(curve.r.len() - 1);
    let base = curve.r[base_lo..=base_hi].iter().sum::<f64>() / (base_hi - base_lo + 1) as f64;
    let mid = 0.5 * (head + base);
    // 3-bin smoothing for the edge scan.
    let smooth = |k: usize| -> f64 {
        let lo = k.saturating_sub(1);
        let hi = (k + 2).min(curve.r.len());
        curve.r[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    };
    for k in 1..base_hi {
        if smooth(k) < mid {
            return k as f64 * bin;
        }
    }
    base_hi as f64 * bin
}

// ---------------------------------------------------------------------------
// Toggle protocol averages
// ---------------------------------------------------------------------------

/// Fitted offset + amplitude·e^{−t/τ} of the feedback-on phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToggleFit {
    pub offset: f64,
    pub amplitude: f64,
    pub tau: f64,
}

/// Phase-aligned averages of the toggle protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToggleResult {
    /// Time within a phase (s).
    pub time: Vec<f64>,
    /// Relative transmission, feedback enabled.
    pub on_curve: Vec<f64>,
    /// Relative transmission, feedback disabled.
    pub off_curve: Vec<f64>,
    pub n_cycles: usize,
    pub on_fit: ToggleFit,
    /// Linear slope of the off phase (1/s) and its standard error.
    pub off_slope: f64,
    pub off_slope_stderr: f64,
    /// mean(on) − mean(off); carries the light-shift offset between the
    /// trap configurations of the two phases.
    pub phase_offset: f64,
}

/// Fit y = offset + amplitude·e^{−t/τ}.
pub fn fit_offset_exponential(times: &[f64], values: &[f64]) -> Result<ToggleFit> {
    let n = values.len();
    if n < 4 {
        return Err(Error::DegenerateData("need at least 4 points".into()));
    }
    let tail = values[(n * 4 / 5)..].iter().sum::<f64>() / (n - n * 4 / 5) as f64;
    let head_n = (n / 10).max(1);
    let head = values[..head_n].iter().sum::<f64>() / head_n as f64;
    let span = times[n - 1] - times[0];
    let init = [tail, head - tail, (span / 5.0).max(1e-9)];
    let out = levenberg_marquardt(
        times,
        values,
        &init,
        |t, p| p[0] + p[1] * (-t / p[2]).exp(),
        |t, p, g| {
            let e = (-t / p[2]).exp();
            g[0] = 1.0;
            g[1] = e;
            g[2] = p[1] * e * t / (p[2] * p[2]);
        },
    )?;
    Ok(ToggleFit {
        offset: out.params[0],
        amplitude: out.params[1],
        tau: out.params[2],
    })
}

fn linear_fit(times: &[f64], values: &[f64]) -> (f64, f64, f64) {
    let n = times.len() as f64;
    let sx: f64 = times.iter().sum();
    let sy: f64 = values.iter().sum();
    let sxx: f64 = times.iter().map(|t| t * t).sum();
    let sxy: f64 = times.iter().zip(values).map(|(t, v)| t * v).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let icept = (sy - slope * sx) / n;
    let sse: f64 = times
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let r = v - icept - slope * t;
            r * r
        })
        .sum();
    let stderr = (sse / (n - 2.0) / (sxx - sx * sx / n)).sqrt();
    (icept, slope, stderr)
}

/// Phase-aligned average of the relative transmission over all selected
/// toggle cycles. A cycle (on, off) is kept when the on phase, the off
/// phase and the following on phase each stay below `selection` × the
/// empty-cavity transmission, which excludes cycles where the atom leaves.
pub fn toggle_average(
    records: &[TrajectoryRecord],
    phase_duration: f64,
    selection: f64,
    empty_counts_per_bin: f64,
) -> Result<ToggleResult> {
    let bin = records
        .first()
        .map(|r| r.bin_duration)
        .ok_or_else(|| Error::EmptyInput("no trajectory records".into()))?;
    let p = (phase_duration / bin).round() as usize;
    if p < 4 {
        return Err(Error::Domain("phase too short for the bin grid".into()));
    }
    let threshold = selection * empty_counts_per_bin;

    let mut on_sum = vec![0.0f64; p];
    let mut off_sum = vec![0.0f64; p];
    let mut n_cycles = 0usize;
    for rec in records {
        let Some(bins) = rec.intensity_bins.as_ref() else {
            continue;
        };
        let n_full_cycles = bins.len() / (2 * p);
        for c in 0..n_full_cycles {
            let on = &bins[2 * c * p..(2 * c + 1) * p];
            let off = &bins[(2 * c + 1) * p..(2 * c + 2) * p];
            let next_start = (2 * c + 2) * p;
            let next_end = next_start + p;
            if next_end > bins.len() {
                continue; // no following interval to validate against
            }
            let next = &bins[next_start..next_end];
            let mean = |s: &[u32]| s.iter().map(|&c| c as f64).sum::<f64>() / p as f64;
            if mean(on) < threshold && mean(off) < threshold && mean(next) < threshold {
                for (acc, &v) in on_sum.iter_mut().zip(on) {
                    *acc += v as f64;
                }
                for (acc, &v) in off_sum.iter_mut().zip(off) {
                    *acc += v as f64;
                }
                n_cycles += 1;
            }
        }
    }
    if n_cycles == 0 {
        return Err(Error::NoSelectedPhases { threshold: selection });
    }

    let scale = 1.0 / (n_cycles as f64 * empty_counts_per_bin);
    let on_curve: Vec<f64> = on_sum.iter().map(|&s| s * scale).collect();
    let off_curve: Vec<f64> = off_sum.iter().map(|&s| s * scale).collect();
    let time: Vec<f64> = (0..p).map(|i| i as f64 * bin).collect();

    let on_fit = fit_offset_exponential(&time, &on_curve)?;
    let (_, off_slope, off_slope_stderr) = linear_fit(&time, &off_curve);
    let phase_offset =
        on_curve.iter().sum::<f64>() / p as f64 - off_curve.iter().sum::<f64>() / p as f64;

    Ok(ToggleResult {
        time,
        on_curve,
        off_curve,
        n_cycles,
        on_fit,
        off_slope,
        off_slope_stderr,
        phase_offset,
    })
}
