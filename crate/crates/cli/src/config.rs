//! Run configuration: an optional TOML file, overridden field by field by
//! command-line flags.
//!
//! ```toml
//! store = "data"
//! seed = 7
//!
//! [decomposition]
//! k_max = 6
//! restarts_per_k = 10
//!
//! [ordering]
//! min_score = 0.7
//!
//! [refine]
//! threshold = 0.9
//!
//! [captioner]
//! endpoint = "http://127.0.0.1:9000/caption"
//! ```

use std::path::{Path, PathBuf};

use clap::Args;
use groundcap_core::ordering::OrderingParams;
use groundcap_core::refine::http::HttpCaptionerConfig;
use groundcap_core::refine::RefineParams;
use groundcap_core::region::DecompositionParams;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub decomposition: DecompositionFile,
    #[serde(default)]
    pub ordering: OrderingFile,
    #[serde(default)]
    pub refine: RefineFile,
    #[serde(default)]
    pub captioner: CaptionerFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionFile {
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub restarts_per_k: Option<usize>,
    pub min_coverage: Option<f64>,
    pub max_overflow: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingFile {
    pub min_score: Option<f64>,
    pub max_detections: Option<usize>,
    pub band_edges: Option<(f64, f64)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineFile {
    pub threshold: Option<f64>,
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionerFile {
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    /// Reads the file; a relative `store` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(store), Some(dir)) = (&cfg.store, path.parent()) {
            if store.is_relative() {
                cfg.store = Some(dir.join(store));
            }
        }
        Ok(cfg)
    }
}

/// Decomposition flags. Defaults: K in 1..=6, 10 restarts, coverage 0.90,
/// overflow 0.30.
#[derive(Debug, Clone, Default, Args)]
pub struct DecompositionFlags {
    #[arg(long, help = "smallest cluster count tried [default: 1]")]
    pub k_min: Option<usize>,
    #[arg(long, help = "largest cluster count tried [default: 6]")]
    pub k_max: Option<usize>,
    #[arg(long, help = "k-means restarts per cluster count [default: 10]")]
    pub restarts: Option<usize>,
    #[arg(long, help = "minimum pixel coverage of a valid configuration [default: 0.90]")]
    pub min_coverage: Option<f64>,
    #[arg(long, help = "maximum box overflow of a valid configuration [default: 0.30]")]
    pub max_overflow: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OrderingFlags {
    #[arg(long, help = "drop detections scored below this [default: 0.7]")]
    pub min_score: Option<f64>,
    #[arg(long, help = "keep at most this many detections [default: 40]")]
    pub max_detections: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RefineFlags {
    #[arg(long, help = "grounding F1 that ends the loop [default: 0.9]")]
    pub threshold: Option<f64>,
    #[arg(long, help = "captioner attempts per frame [default: 10]")]
    pub max_attempts: Option<u32>,
    #[arg(long, help = "captioner URL; overrides GROUNDCAP_CAPTIONER_URL")]
    pub endpoint: Option<String>,
    #[arg(long, help = "captioner request timeout in seconds [default: 120]")]
    pub timeout: Option<u64>,
}

pub fn decomposition(
    file: &FileConfig,
    flags: &DecompositionFlags,
    seed: u64,
) -> Result<DecompositionParams, CliError> {
    let d = DecompositionParams::default();
    let f = &file.decomposition;
    let p = DecompositionParams {
        k_min: flags.k_min.or(f.k_min).unwrap_or(d.k_min),
        k_max: flags.k_max.or(f.k_max).unwrap_or(d.k_max),
        restarts_per_k: flags.restarts.or(f.restarts_per_k).unwrap_or(d.restarts_per_k),
        min_coverage: flags.min_coverage.or(f.min_coverage).unwrap_or(d.min_coverage),
        max_overflow: flags.max_overflow.or(f.max_overflow).unwrap_or(d.max_overflow),
        base_seed: seed,
        ..d
    };
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(p)
}

pub fn ordering(file: &FileConfig, flags: &OrderingFlags) -> Result<OrderingParams, CliError> {
    let d = OrderingParams::default();
    let f = &file.ordering;
    let p = OrderingParams {
        min_score: flags.min_score.or(f.min_score).unwrap_or(d.min_score),
        max_detections: flags.max_detections.or(f.max_detections).unwrap_or(d.max_detections),
        band_edges: f.band_edges.unwrap_or(d.band_edges),
    };
    p.validate().map_err(CliError::Config)?;
    Ok(p)
}

pub fn refine(file: &FileConfig, flags: &RefineFlags) -> Result<RefineParams, CliError> {
    let d = RefineParams::default();
    let p = RefineParams {
        threshold: flags.threshold.or(file.refine.threshold).unwrap_or(d.threshold),
        max_attempts: flags
            .max_attempts
            .or(file.refine.max_attempts)
            .unwrap_or(d.max_attempts),
    };
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(p)
}

/// Flag, then environment, then file.
pub fn captioner(file: &FileConfig, flags: &RefineFlags) -> Result<HttpCaptionerConfig, CliError> {
    let mut cfg = HttpCaptionerConfig::new(file.captioner.endpoint.clone().unwrap_or_default());
    if let Some(t) = file.captioner.timeout_secs {
        cfg.timeout_secs = t;
    }
    cfg = cfg.apply_env();
    if let Some(e) = &flags.endpoint {
        cfg.endpoint = e.clone();
    }
    if let Some(t) = flags.timeout {
        cfg.timeout_secs = t;
    }
    if cfg.endpoint.is_empty() {
        return Err(CliError::Config(
            "no captioner endpoint: pass --endpoint, set GROUNDCAP_CAPTIONER_URL or [captioner] endpoint".into(),
        ));
    }
    Ok(cfg)
}
