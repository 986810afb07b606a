//! Run configuration: JSON file with a versioned schema. Unknown keys are
//! rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backoff::{BssId, PolicyKind, PolicyParams};
use crate::mac::{MacTimings, TxopLimits};
use crate::phy::{default_mcs_table, McsEntry, PathLossParams, RadioConfig};
use crate::scenario::{validate, ExperimentSpec, ValidationError};

pub const SCHEMA_VERSION: u32 = 1;

/// Policy applied to every BSS without an override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub cw0: u32,
    pub n_max: u32,
    pub db_base: u32,
}

impl Default for PolicySpec {
    fn default() -> Self {
        let p = PolicyParams::default();
        Self {
            kind: PolicyKind::Beb,
            cw0: p.cw0,
            n_max: p.n_max,
            db_base: p.db_base,
        }
    }
}

impl PolicySpec {
    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            cw0: self.cw0,
            n_max: self.n_max,
            db_base: self.db_base,
        }
    }
}

/// Per-BSS replacement of any subset of the policy settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BssOverride {
    pub bss_id: BssId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cw0: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_base: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub path_loss: PathLossParams,
    #[serde(default)]
    pub mac: MacTimings,
    #[serde(default)]
    pub txop: TxopLimits,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub bss_overrides: Vec<BssOverride>,
    #[serde(default = "default_mcs_table")]
    pub mcs_table: Vec<McsEntry>,
    #[serde(default)]
    pub master_seed: u64,
    /// Prefix of the output files; the config file stem when absent.
    #[serde(default)]
    pub output_prefix: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentSpec::default(),
            radio: RadioConfig::default(),
            path_loss: PathLossParams::default(),
            mac: MacTimings::default(),
            txop: TxopLimits::default(),
            policy: PolicySpec::default(),
            bss_overrides: Vec::new(),
            mcs_table: default_mcs_table(),
            master_seed: 0,
            output_prefix: None,
        }
    }
}

impl RunConfig {
    /// Policy and parameters of `bss_id` after overrides.
    pub fn policy_for(&self, bss_id: BssId) -> (PolicyKind, PolicyParams) {
        let mut kind = self.policy.kind;
        let mut params = self.policy.params();
        if let Some(o) = self.bss_overrides.iter().find(|o| o.bss_id == bss_id) {
            kind = o.policy.unwrap_or(kind);
            params.cw0 = o.cw0.unwrap_or(params.cw0);
            params.n_max = o.n_max.unwrap_or(params.n_max);
            params.db_base = o.db_base.unwrap_or(params.db_base);
        }
        (kind, params)
    }

    /// Seed of deployment `run_index`.
    pub fn seed_for(&self, run_index: usize) -> u64 {
        match &self.experiment.seeds {
            Some(seeds) => seeds[run_index],
            None => self.master_seed.wrapping_add(run_index as u64),
        }
    }

    /// Label of the policy mix, e.g. `iyt` or `beb+iyt`.
    pub fn policy_label(&self) -> String {
        let mut kinds: Vec<PolicyKind> = (1..=self.experiment.n_bss as BssId)
            .map(|b| self.policy_for(b).0)
            .collect();
        kinds.sort();
        kinds.dedup();
        kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            message: e.inner().to_string(),
            file: None,
        })?;
        validate(&config).map_err(ConfigError::Invalid)?;
        Ok(config)
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text).map_err(|e| e.in_file(path))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("{}invalid config at `{field}`: {message}", file_prefix(.file))]
    Parse {
        field: String,
        message: String,
        file: Option<String>,
    },
    #[error("config failed validation:\n{}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn file_prefix(file: &Option<String>) -> String {
    file.as_ref().map(|f| format!("{f}: ")).unwrap_or_default()
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    fn in_file(self, path: &Path) -> Self {
        match self {
            ConfigError::Parse { field, message, .. } => ConfigError::Parse {
                field,
                message,
                file: Some(path.display().to_string()),
            },
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = RunConfig::from_json_str(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.radio.cca_dbm, -82.0);
        assert_eq!(c.policy.cw0, 16);
    }

    #[test]
    fn schema_version_is_required() {
        let e = RunConfig::from_json_str("{}").unwrap_err();
        assert!(e.to_string().contains("schema_version"), "{e}");
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = RunConfig::from_json_str(r#"{"schema_version":1,"radio":{"cca_dbmm":-80}}"#).unwrap_err();
        match e {
            ConfigError::Parse { field, message, .. } => {
                assert_eq!(field, "radio.cca_dbmm");
                assert!(message.contains("unknown field"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_surface() {
        let e = RunConfig::from_json_str(r#"{"schema_version":1,"experiment":{"n_bss":12}}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(ref v) if v[0].field == "experiment.n_bss"));
    }

    #[test]
    fn overrides_replace_only_given_fields() {
        let c = RunConfig::from_json_str(
            r#"{"schema_version":1,"experiment":{"kind":"toy_a","n_bss":2},
                "bss_overrides":[{"bss_id":2,"policy":"iyt","cw0":5}]}"#,
        )
        .unwrap();
        assert_eq!(c.policy_for(1), (PolicyKind::Beb, PolicyParams::default()));
        let (k, p) = c.policy_for(2);
        assert_eq!(k, PolicyKind::Iyt);
        assert_eq!((p.cw0, p.n_max), (5, 5));
        assert_eq!(c.policy_label(), "beb+iyt");
    }

    #[test]
    fn seeds_follow_master_seed_or_list() {
        let mut c = RunConfig::default();
        c.master_seed = 40;
        assert_eq!(c.seed_for(2), 42);
        c.experiment.n_sim = 2;
        c.experiment.seeds = Some(vec![7, 9]);
        assert_eq!(c.seed_for(1), 9);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.bss_overrides.push(BssOverride {
            bss_id: 3,
            db_base: Some(7),
            ..Default::default()
        });
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&text).unwrap(), c);
    }
}
