//! The feedback logic of the photon-counting FPGA: compare the two most
//! recent integration windows and switch the trap depth, plus the toggle
//! and ramp schedules used by the measurement protocols.

use serde::{Deserialize, Serialize};

use crate::detection::WindowCounts;

/// Discrete dipole-trap setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrapLevel {
    High,
    Low,
    Off,
}

impl TrapLevel {
    pub fn symbol(self) -> char {
        match self {
            TrapLevel::High => 'H',
            TrapLevel::Low => 'L',
            TrapLevel::Off => 'O',
        }
    }
}

/// Two-window feedback parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Integration time of one counting window (s).
    pub t_int: f64,
    /// Click-count excess of the earlier window that triggers the low trap.
    pub threshold: u32,
    /// Deep trap depth (J).
    pub u_high: f64,
    /// Shallow trap depth (J).
    pub u_low: f64,
    /// Master enable; a disabled controller always commands the deep trap.
    pub enabled: bool,
    /// Interpret "surpasses by the threshold" strictly (difference >
    /// threshold) instead of the default difference ≥ threshold.
    pub strict_greater: bool,
}

impl FeedbackConfig {
    pub fn default_params() -> Self {
        Self {
            t_int: crate::constants::us(13.0),
            threshold: 3,
            u_high: crate::constants::uk(950.0),
            u_low: crate::constants::uk(400.0),
            enabled: true,
            strict_greater: false,
        }
    }

    pub fn depth_of(&self, level: TrapLevel) -> f64 {
        match level {
            TrapLevel::High => self.u_high,
            TrapLevel::Low => self.u_low,
            TrapLevel::Off => 0.0,
        }
    }
}

/// Time-dependent trap programme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// Fixed level whenever the feedback is not actuating.
    Constant { level: TrapLevel },
    /// Feedback enabled/disabled alternately, `period` seconds each phase,
    /// starting enabled; the disabled phase holds the deep trap.
    Toggle { period: f64 },
    /// Linear depth ramp with the feedback disabled.
    Ramp { u_start: f64, u_end: f64, duration: f64 },
}

impl Schedule {
    /// Is the feedback allowed to actuate at time `t`?
    pub fn feedback_active(&self, t: f64, cfg: &FeedbackConfig) -> bool {
        if !cfg.enabled {
            return false;
        }
        match self {
            Schedule::Constant { .. } => true,
            Schedule::Toggle { period } => (t / period).floor() as u64 % 2 == 0,
            Schedule::Ramp { .. } => false,
        }
    }

    /// Trap depth at time `t` when the feedback is not actuating (J).
    pub fn idle_depth(&self, t: f64, cfg: &FeedbackConfig) -> f64 {
        match self {
            Schedule::Constant { level } => cfg.depth_of(*level),
            Schedule::Toggle { .. } => cfg.u_high,
            Schedule::Ramp { u_start, u_end, duration } => {
                ramp_depth(t, *u_start, *u_end, *duration)
            }
        }
    }
}

/// Linear ramp U(t) = u_start + (u_end − u_start)·min(t/duration, 1).
pub fn ramp_depth(t: f64, u_start: f64, u_end: f64, duration: f64) -> f64 {
    debug_assert!(t >= 0.0 && duration > 0.0);
    u_start + (u_end - u_start) * (t / duration).min(1.0)
}

/// Switch low iff the earlier window surpasses the later one by the
/// threshold (the atom is judged inbound); otherwise command the deep trap.
pub fn decide(counts_earlier: u32, counts_later: u32, cfg: &FeedbackConfig) -> TrapLevel {
    let diff = counts_earlier as i64 - counts_later as i64;
    let hit = if cfg.strict_greater {
        diff > cfg.threshold as i64
    } else {
        diff >= cfg.threshold as i64
    };
    if hit {
        TrapLevel::Low
    } else {
        TrapLevel::High
    }
}

/// Per-trajectory controller state: remembers the last completed window and
/// emits one actuation per window (sliding comparison, latency one window).
#[derive(Debug, Clone)]
pub struct WindowController {
    cfg: FeedbackConfig,
    prev_counts: Option<u32>,
    level: TrapLevel,
}

impl WindowController {
    pub fn new(cfg: FeedbackConfig) -> Self {
        Self {
            cfg,
            prev_counts: None,
            level: TrapLevel::High,
        }
    }

    pub fn cfg(&self) -> &FeedbackConfig {
        &self.cfg
    }

    /// Currently commanded level.
    pub fn level(&self) -> TrapLevel {
        self.level
    }

    /// Feed one completed window. Returns the level commanded for the next
    /// window: the `decide` outcome while `active`, the deep trap otherwise.
    /// Window history keeps accumulating while inactive so the first
    /// decision after re-enabling uses real data.
    pub fn on_window(&mut self, window: &WindowCounts, active: bool) -> TrapLevel {
        let next = match (active, self.prev_counts) {
            (true, Some(prev)) => decide(prev, window.counts, &self.cfg),
            _ => TrapLevel::High,
        };
        self.prev_counts = Some(window.counts);
        self.level = next;
        next
    }
}
