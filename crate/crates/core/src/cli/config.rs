use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compositor::PostprocessConfig;
use crate::dataset::{object_names, Origin};
use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::training::TrainConfig;

pub const CONFIG_ENV: &str = "GRABAR_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<String>,
    /// Objects flagged as unseen in generated manifests.
    pub unseen: Vec<String>,
    pub origin: Origin,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            height: 320,
            width: 320,
            objects: object_names().iter().map(|s| s.to_string()).collect(),
            unseen: Vec::new(),
            origin: Origin::Synthetic,
        }
    }
}

/// Fallbacks for the path flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub real_data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub seg_ckpt: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub log_level: String,
    /// Single worker thread. Reductions are ordered, so results do not depend on it.
    pub deterministic: bool,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub network: NetworkConfig,
    /// `train.seed` is always replaced by the top-level `seed`.
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            seed: 0,
            log_level: "info".into(),
            deterministic: false,
            data: DataConfig::default(),
            paths: PathsConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Defaults overlaid with `explicit`, else with the file named by `GRABAR_CONFIG`.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            None => Ok(GlobalConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Self::from_toml(&text, &p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = GlobalConfig::from_toml("seed = 9\n[train]\nbatch_size = 4\n[postprocess]\nclose_kernel = 3\n", Path::new("x")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.postprocess.close_kernel, 3);
        assert_eq!(c.network, NetworkConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = GlobalConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(GlobalConfig::from_toml(&text, Path::new("x")).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(GlobalConfig::from_toml("sede = 1", Path::new("x")), Err(Error::Malformed { .. })));
    }
}
