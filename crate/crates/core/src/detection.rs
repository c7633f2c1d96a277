//! Photon-counting observables: Poisson shot noise on 1 µs intensity bins
//! and their aggregation into the controller's integration windows.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photon counts accumulated over one integration window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub window_index: u64,
    pub counts: u32,
    /// Window duration in seconds (13 µs default).
    pub window_duration: f64,
}

/// One Poisson-distributed photon count with mean `mean_rate · duration`.
///
/// A zero mean consumes no randomness, so runs that differ only in a fully
/// attenuated detector share identical physics streams bit for bit.
pub fn sample_counts<R: Rng>(mean_rate: f64, duration: f64, rng: &mut R) -> u32 {
    debug_assert!(mean_rate >= 0.0);
    sample_poisson(mean_rate * duration, rng)
}

/// Poisson sample for a given mean.
pub fn sample_poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as u32
}

/// Sum 1 µs bins into one window; the same sampled bins feed the feedback
/// logic and the stored intensity series.
pub fn accumulate_window(
    bins: &[u32],
    window_index: u64,
    bin_duration: f64,
    window_duration: f64,
) -> Result<WindowCounts> {
    let ratio = window_duration / bin_duration;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::MisalignedWindow {
            window_us: window_duration * 1e6,
            bin_us: bin_duration * 1e6,
        });
    }
    if bins.len() != ratio.round() as usize {
        return Err(Error::MisalignedWindow {
            window_us: bins.len() as f64 * bin_duration * 1e6,
            bin_us: bin_duration * 1e6,
        });
    }
    Ok(WindowCounts {
        window_index,
        counts: bins.iter().sum(),
        window_duration,
    })
}
