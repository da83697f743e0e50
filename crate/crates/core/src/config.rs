//! TOML experiment configuration with named profiles.
//!
//! A file may name a base profile (`profile = "desk"` or `"full"`); every
//! other key overrides that profile's value.
//!
//! ```toml
//! profile = "desk"
//!
//! [data]
//! rho = 0.05
//!
//! [train]
//! epochs_biased = 10
//! norm = { s = "inf", r = 1.0 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{DatasetSpec, ImageSize};
use crate::error::{Error, Result};
use crate::pipelines::{JttConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 10k training images, 30 epochs split evenly between the two stages.
    #[default]
    Desk,
    /// Colored-MNIST scale: 55k/5k/10k splits at 28×28, 100 epochs.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected desk or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub profile: Profile,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub jtt: JttConfig,
}

impl ExperimentConfig {
    pub fn from_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                profile,
                data: DatasetSpec::default(),
                train: TrainConfig::default(),
                jtt: JttConfig::default(),
            },
            Profile::Full => Self {
                profile,
                data: DatasetSpec {
                    n_train: 55_000,
                    n_val: 5_000,
                    n_test: 10_000,
                    image_size: ImageSize {
                        height: 28,
                        width: 28,
                        channels: 3,
                    },
                    ..DatasetSpec::default()
                },
                train: TrainConfig {
                    epochs_biased: 50,
                    epochs_debiased: 50,
                    ..TrainConfig::default()
                },
                jtt: JttConfig::default(),
            },
        }
    }

    pub fn desk() -> Self {
        Self::from_profile(Profile::Desk)
    }

    pub fn full() -> Self {
        Self::from_profile(Profile::Full)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Self::from_table(user)
    }

    /// Overlays `user` on the profile it names.
    pub fn from_table(user: Table) -> Result<Self> {
        let profile = match user.get("profile") {
            Some(Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
            None => Profile::Desk,
        };
        let mut base = Table::try_from(Self::from_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(detail) => Error::Format {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.jtt.resolve(self.data.rho).map(|_| ())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Recursive table overlay; non-table values in `over` replace those in `base`.
pub(crate) fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debias::NormOrder;

    #[test]
    fn full_profile_carries_reference_hyperparameters() {
        let p = ExperimentConfig::full();
        assert_eq!(p.train.total_epochs(), 100);
        assert_eq!(p.train.batch_size, 128);
        assert_eq!(p.train.optimizer.learning_rate, 0.02);
        assert_eq!(p.train.optimizer.lr_decay_step_epochs, 40);
        assert_eq!(p.train.gce.alpha, 0.7);
        let d = ExperimentConfig::desk();
        assert_eq!(d.train.total_epochs(), 30);
        assert_eq!(d.data.n_train, 10_000);
    }

    #[test]
    fn overrides_apply_on_top_of_profile() {
        let cfg = ExperimentConfig::from_toml_str(
            "profile = \"full\"\n[data]\nrho = 0.05\n[train]\nepochs_biased = 3\nnorm = { s = \"inf\" }\n",
        )
        .unwrap();
        assert_eq!(cfg.data.rho, 0.05);
        assert_eq!(cfg.data.n_train, 55_000);
        assert_eq!(cfg.train.epochs_biased, 3);
        assert_eq!(cfg.train.epochs_debiased, 50);
        assert_eq!(cfg.train.norm.s, NormOrder::Inf);
        assert_eq!(cfg.train.norm.r, 1.0);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::desk();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values_and_unknown_sections() {
        assert!(ExperimentConfig::from_toml_str("[data]\nrho = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[dataa]\nrho = 0.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("profile = \"huge\"\n").is_err());
    }
}
