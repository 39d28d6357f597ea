//! Run configuration and reproducibility manifests.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::AttackParams;
use crate::circuit::CircuitParams;
use crate::noise::NoiseSpec;
use crate::protocol::{ProtocolConfig, Seeds};
use crate::{Error, Result};

/// Everything a batch run depends on. Missing sections take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub noise: NoiseSpec,
    pub circuit: CircuitParams,
    pub protocol: ProtocolConfig,
    pub attack: AttackParams,
    pub output_dir: Option<PathBuf>,
    /// Every random stream derives from this by [`Seeds::from_master`].
    pub master_seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every cross-module rule before anything runs. Returns
    /// non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.noise.validate()?;
        let warnings = self.circuit.validate(&self.noise)?;
        self.protocol.validate()?;
        self.protocol.decimation(&self.circuit, &self.noise)?;
        self.attack.validate()?;
        Ok(warnings)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.master_seed)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// What produced a directory of artifacts; feeding it back reproduces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    /// BEP count actually simulated, when the command simulates.
    pub beps: Option<usize>,
    pub seeds: Seeds,
    /// The resolved configuration, without `output_dir` so reruns into a
    /// different directory stay byte-identical.
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, beps: Option<usize>, config: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            beps,
            seeds: config.seeds(),
            config: RunConfig {
                output_dir: None,
                ..config.clone()
            },
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::config("manifest", format!("cannot read {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::config("manifest", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c =
            RunConfig::from_json(r#"{"master_seed": 9, "noise": {"cutoff_hz": 4000}}"#).unwrap();
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.noise.cutoff_hz, 4000.0);
        assert_eq!(c.noise.sample_rate_hz, 250_000.0);
        assert_eq!(c.circuit, CircuitParams::default());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = RunConfig::from_json(r#"{"noise": {"cutof_hz": 4000}}"#).unwrap_err();
        assert!(e.to_string().contains("cutof_hz"), "{e}");
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::default();
        c.protocol.guard_fraction = 0.7;
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "protocol.guard_fraction"),
            other => panic!("{other:?}"),
        }
        let mut c = RunConfig::default();
        c.protocol.measurement_rate_hz = 300_000.0;
        assert!(
            matches!(c.validate(), Err(Error::Config { field, .. }) if field == "protocol.measurement_rate_hz")
        );
        let mut c = RunConfig::default();
        c.circuit.internal_oversample = 2;
        assert!(
            matches!(c.validate(), Err(Error::Config { field, .. }) if field == "circuit.internal_oversample")
        );
    }

    #[test]
    fn default_warns_about_timescale_separation() {
        let w = RunConfig::default().validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("timescale separation"));
    }

    #[test]
    fn manifest_round_trip_drops_output_dir() {
        let c = RunConfig {
            output_dir: Some("x".into()),
            master_seed: 3,
            ..Default::default()
        };
        let m = Manifest::new("simulate", Some(10), &c);
        let text = serde_json::to_string(&m).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config.output_dir, None);
        assert_eq!(back.seeds, Seeds::from_master(3));
    }
}
