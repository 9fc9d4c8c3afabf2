//! Experiment configuration: TOML parsing, validation, seed overrides and
//! dotted-path sweep parameters.

use std::path::{Path, PathBuf};

use fdlab_core::flow::{IntegratorConfig, Method};
use fdlab_core::harness::VerificationConfig;
use fdlab_core::problem::InstanceConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Keys that are derived from other fields and may not be set directly.
const DERIVED_KEYS: [(&str, &str); 3] = [
    ("instance", "seed"),
    ("verify", "seed"),
    ("verify", "instance"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path of a numeric field, e.g. `instance.eps`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Instances per run (and per sweep value).
    pub instances: usize,
    pub methods: Vec<Method>,
    pub instance: InstanceConfig,
    pub integrator: IntegratorConfig,
    pub verify: VerificationConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("fdlab-out"),
            instances: 1,
            methods: vec![Method::FineTuning, Method::LinearProbing, Method::LpFt],
            instance: InstanceConfig::default(),
            integrator: IntegratorConfig::default(),
            verify: VerificationConfig::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for (section, key) in DERIVED_KEYS {
            if table
                .get(section)
                .and_then(Value::as_table)
                .is_some_and(|t| t.contains_key(key))
            {
                return Err(CliError::Config(format!(
                    "`{section}.{key}` is derived from master_seed and [instance]; remove it"
                )));
            }
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(cfg.synced())
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(seed) = seed_override {
            cfg.master_seed = seed;
            cfg = cfg.synced();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies the master seed and instance template into the verify block.
    fn synced(mut self) -> Self {
        self.verify.seed = self.master_seed;
        self.verify.instance = self.instance.clone();
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::Config("methods must not be empty".into()));
        }
        if self.instances == 0 {
            return Err(CliError::Config("instances must be positive".into()));
        }
        let core = |e: fdlab_core::Error| CliError::Config(e.to_string());
        self.instance.validate().map_err(core)?;
        self.integrator.validate().map_err(core)?;
        self.verify.validate().map_err(core)?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep.values must not be empty".into()));
            }
            for &v in &sweep.values {
                self.with_parameter(&sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let mut value = Value::try_from(self).expect("config serializes");
        let table = value.as_table_mut().expect("config is a table");
        for (section, key) in DERIVED_KEYS {
            if let Some(t) = table.get_mut(section).and_then(Value::as_table_mut) {
                t.remove(key);
            }
        }
        toml::to_string_pretty(&value).expect("config serializes")
    }

    /// Copy of this config with the numeric field at `path` set to `value`.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self, CliError> {
        if path.split('.').next() == Some("sweep") {
            return Err(CliError::Config("cannot sweep the sweep block".into()));
        }
        let mut root = Value::try_from(self).expect("config serializes");
        let mut slot = &mut root;
        for part in path.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| {
                    CliError::Config(format!("sweep parameter `{path}` names no config field"))
                })?;
        }
        *slot = match slot {
            Value::Integer(_) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(CliError::Config(format!(
                        "sweep parameter `{path}` is an integer field; got {value}"
                    )));
                }
                Value::Integer(value as i64)
            }
            Value::Float(_) => Value::Float(value),
            _ => {
                return Err(CliError::Config(format!(
                    "sweep parameter `{path}` is not a numeric field"
                )))
            }
        };
        let table = match root {
            Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        };
        let mut cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.sweep = None;
        let cfg = cfg.synced();
        let core = |e: fdlab_core::Error| CliError::Config(format!("sweep value {value}: {e}"));
        cfg.instance.validate().map_err(core)?;
        cfg.integrator.validate().map_err(core)?;
        Ok(cfg)
    }
}

fn doc_for(section: &str, key: &str) -> Option<&'static str> {
    Some(match (section, key) {
        ("", "master_seed") => {
            "Master seed; instance seeds derive from it. FDLAB_SEED overrides it."
        }
        ("", "output_dir") => "Output directory (overridden by --out).",
        ("", "instances") => "Instances per run and per sweep value.",
        ("", "methods") => "Methods to run: FT, LP, LPFT.",
        ("instance", "d") => "Input dimension.",
        ("instance", "k") => "Feature dimension (k < m < d - k).",
        ("instance", "m") => "Dimension of the ID subspace.",
        ("instance", "n") => "Training examples (n >= m).",
        ("instance", "eps") => {
            "Target distance between pretrained and optimal extractors, in [0, 0.5)."
        }
        ("instance", "w_norm") => "Norm of the optimal linear predictor.",
        ("instance.head", "mode") => "Head initialization: zero, gaussian (set sigma_sq) or lp.",
        ("instance.sigma", "mode") => "OOD second moment: identity, or diagonal (set entries).",
        ("integrator", "t_max") => {
            "Final time. initial_step may be set; unset uses 1e-3 / sigma_max(X)^2."
        }
        ("integrator", "loss_tol") => {
            "Stop once the loss (or gradient norm) falls below this fraction of its start."
        }
        ("integrator", "n_samples") => "Log-spaced sample times per trajectory.",
        ("integrator", "max_halvings") => "Consecutive step rejections before giving up.",
        ("integrator", "local_error_tol") => {
            "Step-doubling error tolerance relative to 1 + max|state|."
        }
        ("integrator", "min_time") => "Integrate at least to this time even after convergence.",
        ("verify", "suites") => {
            "Verification suites a run executes, e.g. [\"THM1\", \"LEM_BALANCE\"]."
        }
        ("verify", "n_instances") => "Instances per verification battery.",
        ("verify", "n_mc_trials") => "Trials of the random-subspace angle check.",
        ("verify", "delta") => "Confidence parameter of the probabilistic checks.",
        ("verify", "eps_sweep") => "Strictly decreasing eps values of the OOD ratio sweep.",
        ("verify", "sweep_seeds") => "Seeds per eps value in the ratio sweep.",
        ("verify", "theorem1_instances") => "Instances in the fine-tuning lower-bound battery.",
        ("verify", "head_mc_trials") => "Samples per phase of the head anti-concentration check.",
        ("verify", "head_sigma_sq") => "Head variances of the anti-concentration check.",
        ("verify", "angle_trials") => "Random triples of the angle perturbation check.",
        ("verify", "gaussian_seeds") => "Seeds of the non-asymptotic comparison.",
        ("verify", "id_eps") => "eps of the ID comparison battery.",
        ("verify", "lpft_horizon") => "Time horizon forced on LP-FT runs.",
        ("verify.baselines", "thm1_min_ratio") => {
            "Regression fixture: at least half of it is required."
        }
        ("verify.baselines", "lpft_random_head_min_ood") => {
            "Regression fixture: at least half of it is required."
        }
        _ => return None,
    })
}

/// `default.toml`: the default configuration with every key documented.
pub fn default_toml() -> String {
    let body = ExperimentConfig::default().to_toml();
    let mut out = String::from(
        "# fdlab default configuration. Every key is optional.\n\
         # A [sweep] block (parameter = \"instance.eps\", values = [...]) enables `fdlab sweep`.\n\n",
    );
    let mut section = String::new();
    for line in body.lines() {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
        } else if let Some((key, _)) = trimmed.split_once(" = ") {
            if let Some(doc) = doc_for(&section, key) {
                out.push_str("# ");
                out.push_str(doc);
                out.push('\n');
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let text = default_toml();
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, ExperimentConfig::default().synced());
        cfg.validate().unwrap();
    }

    #[test]
    fn every_default_key_is_documented() {
        let text = default_toml();
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.contains(" = ") && !line.starts_with('#') {
                assert!(
                    i > 0 && lines[i - 1].starts_with('#'),
                    "undocumented: {line}"
                );
            }
        }
    }

    #[test]
    fn derived_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("[instance]\nseed = 3\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[instance]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("methods = [\"XX\"]\n").is_err());
    }

    #[test]
    fn dimension_violation_names_constraint() {
        let cfg = ExperimentConfig::from_toml_str("[instance]\nd = 24\n").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("m < d - k"), "{msg}");
    }

    #[test]
    fn sweep_parameters_resolve_by_path() {
        let base = ExperimentConfig::default();
        assert_eq!(
            base.with_parameter("instance.eps", 0.2)
                .unwrap()
                .instance
                .eps,
            0.2
        );
        assert_eq!(
            base.with_parameter("instance.n", 60.0).unwrap().instance.n,
            60
        );
        assert_eq!(
            base.with_parameter("integrator.t_max", 5.0)
                .unwrap()
                .integrator
                .t_max,
            5.0
        );
        assert!(base.with_parameter("instance.n", 60.5).is_err());
        assert!(base.with_parameter("instance.nope", 1.0).is_err());
        assert!(base.with_parameter("methods", 1.0).is_err());
        assert!(base.with_parameter("instance.m", 96.0).is_err());
    }

    #[test]
    fn seed_override_reaches_verify_block() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "master_seed = 4\n").unwrap();
        let cfg = ExperimentConfig::load(&path, Some(9)).unwrap();
        assert_eq!((cfg.master_seed, cfg.verify.seed), (9, 9));
    }
}
