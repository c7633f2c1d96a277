//! Config file handling: TOML parsing with full validation, canonical
//! serialization, and the config hash embedded in every output.

use std::path::Path;

use anyhow::{Context, Result};
use fbsim_core::config::ExperimentConfig;
use sha2::{Digest, Sha256};

/// Parse a config file. An empty file yields all documented defaults;
/// unknown keys are rejected with the offending name.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).context("config parse error")?;
    cfg.validate().context("config validation error")?;
    Ok(cfg)
}

/// Canonical TOML serialization; `parse(write(cfg)) == cfg`.
pub fn write_config(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

/// SHA-256 of the canonical serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(write_config(cfg).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.cavity.g0_mhz, 16.0);
        assert_eq!(cfg.cavity.kappa_mhz, 1.5);
        assert_eq!(cfg.cavity.gamma_mhz, 3.0);
        assert_eq!(cfg.feedback.t_int_us, 13.0);
        assert_eq!(cfg.feedback.threshold, 3);
        assert_eq!(cfg.feedback.u_high_uk, 950.0);
        assert_eq!(cfg.feedback.u_low_uk, 400.0);
        assert_eq!(cfg.drive.n_empty, 0.1);
        assert_eq!(cfg.drive.eta_det, 0.23);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.n_atoms = 37;
        cfg.drive.n_empty = 0.07;
        cfg.scan.powers = vec![0.03, 0.333333333333, 1.25];
        let text = write_config(&cfg);
        let back = parse_config_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config_str("[run]\nn_atom = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("n_atom"), "{err:#}");
    }

    #[test]
    fn validation_failures_name_the_key() {
        let err = parse_config_str("[feedback]\nthreshold = 0\n").unwrap_err();
        assert!(format!("{err:#}").contains("threshold"));
        let err = parse_config_str("[drive]\nattenuation = 1.5\n").unwrap_err();
        assert!(format!("{err:#}").contains("attenuation"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&ExperimentConfig::default());
        let mut cfg = ExperimentConfig::default();
        cfg.run.master_seed = 2;
        let b = config_hash(&cfg);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&ExperimentConfig::default()));
    }
}
