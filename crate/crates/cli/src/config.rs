//! Run configuration: an optional TOML file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::{BetaArgs, ModelArgs};

/// Keys accepted in the `--config` file. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub sigma2: Option<f64>,
    pub prior: Option<String>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub beta_points: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<u64>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub direction: Option<String>,
    pub max_iters: Option<usize>,
    pub exclude_achromatic: Option<bool>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Model and frontier settings after defaults, file and flags are merged.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub data_dir: PathBuf,
    pub sigma2: f64,
    pub prior: String,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_points: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Resolved {
    pub fn new(
        file: &FileConfig,
        model: &ModelArgs,
        betas: Option<&BetaArgs>,
        seed: Option<u64>,
    ) -> anyhow::Result<Self> {
        let b = betas.cloned().unwrap_or_default();
        let r = Resolved {
            data_dir: model
                .data_dir
                .clone()
                .or_else(|| file.data_dir.clone())
                .unwrap_or_else(|| "data/wcs".into()),
            sigma2: model.sigma2.or(file.sigma2).unwrap_or(ibconvex::wcs::DEFAULT_SIGMA2),
            prior: model
                .prior
                .clone()
                .or_else(|| file.prior.clone())
                .unwrap_or_else(|| "uniform".into()),
            beta_min: b.beta_min.or(file.beta_min).unwrap_or(1.0),
            beta_max: b.beta_max.or(file.beta_max).unwrap_or(1024.0),
            beta_points: b.beta_points.or(file.beta_points).unwrap_or(1000),
            seed: seed.or(file.seed).unwrap_or(0),
            out: model.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| "out".into()),
        };
        if !(r.sigma2.is_finite() && r.sigma2 > 0.0) {
            bail!("--sigma2 must be positive, got {}", r.sigma2);
        }
        if !(r.beta_min > 0.0 && r.beta_max > r.beta_min && r.beta_points >= 2) {
            bail!(
                "beta grid needs 0 < beta-min < beta-max and at least 2 points (got {}, {}, {})",
                r.beta_min,
                r.beta_max,
                r.beta_points
            );
        }
        if r.prior != "uniform" && !Path::new(&r.prior).is_file() {
            bail!("--prior must be `uniform` or an existing file, got {}", r.prior);
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults() {
        let file: FileConfig = toml::from_str("sigma2 = 32.0\nbeta_points = 10\nseed = 4").unwrap();
        let model = ModelArgs {
            sigma2: Some(16.0),
            ..Default::default()
        };
        let r = Resolved::new(&file, &model, None, None).unwrap();
        assert_eq!(r.sigma2, 16.0);
        assert_eq!(r.beta_points, 10);
        assert_eq!(r.seed, 4);
        assert_eq!(r.beta_max, 1024.0);
        assert_eq!(r.prior, "uniform");
    }

    #[test]
    fn rejects_bad_values() {
        let file = FileConfig::default();
        let model = ModelArgs {
            sigma2: Some(-1.0),
            ..Default::default()
        };
        assert!(Resolved::new(&file, &model, None, None).is_err());
        let model = ModelArgs {
            prior: Some("/nonexistent/prior.txt".into()),
            ..Default::default()
        };
        assert!(Resolved::new(&file, &model, None, None).is_err());
        assert!(toml::from_str::<FileConfig>("unknown_key = 1").is_err());
    }
}
