use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use groundcap_core::store::is_safe_id;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterConfig {
    pub id: String,
    pub token: String,
}

/// Service configuration file, e.g.
///
/// ```toml
/// store = "data"
/// bind = "127.0.0.1:8080"
/// study_seed = 7
///
/// [[raters]]
/// id = "ana"
/// token = "c2f0..."
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub store: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub study_seed: u64,
    #[serde(default = "default_ratings")]
    pub ratings_per_caption: usize,
    #[serde(default)]
    pub raters: Vec<RaterConfig>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_ratings() -> usize {
    3
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads the file; a relative `store` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if cfg.store.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.store = dir.join(&cfg.store);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.ratings_per_caption == 0 {
            return Err("ratings_per_caption must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for r in &self.raters {
            if !is_safe_id(&r.id) {
                return Err(format!("rater id `{}` must match [A-Za-z0-9_-]+", r.id));
            }
            if r.token.len() < 8 {
                return Err(format!("token for rater `{}` is shorter than 8 characters", r.id));
            }
            if !ids.insert(&r.id) {
                return Err(format!("duplicate rater id `{}`", r.id));
            }
            if !tokens.insert(&r.token) {
                return Err(format!("rater `{}` reuses another rater's token", r.id));
            }
        }
        Ok(())
    }
}
