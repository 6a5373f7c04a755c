//! Run configuration file: a TOML document with optional `[net]` and
//! `[train]` tables. Absent tables fall back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub net: Option<NetConfig>,
    pub train: Option<TrainConfig>,
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigText(e.to_string()))
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigText(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_defaults() {
        let cfg = RunConfig {
            net: Some(NetConfig::toy()),
            train: Some(TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            }),
        };
        assert_eq!(RunConfig::from_text(&cfg.to_text().unwrap()).unwrap(), cfg);
        assert_eq!(RunConfig::from_text("").unwrap(), RunConfig::default());
        let partial = RunConfig::from_text("[train]\nepochs = 3\n").unwrap();
        assert_eq!(partial.train.unwrap().batch_size, 8);
        assert!(RunConfig::from_text("[bogus]\n").is_err());
    }
}
