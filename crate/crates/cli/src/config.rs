use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vocalfx::chain::{ChainConfig, Routing};
use vocalfx::delay::DelayConfig;
use vocalfx::fdn::FdnConfig;
use vocalfx::params::BoundsConfig;
use vocalfx::pipeline::{FitConfig, PrepareConfig, SegmentConfig};

/// Settings read from `--config` or the `VOCALFX_CONFIG` file. Every field is optional; flags
/// override the file and the file overrides the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub bounds: Option<String>,
    pub workers: Option<usize>,
    pub routing: Option<String>,
    /// Training IR lengths; 4 s and 12 s when unset.
    pub delay_ir_seconds: Option<f64>,
    pub fdn_ir_seconds: Option<f64>,
    pub fit: Option<FitConfig>,
    pub segment: Option<SegmentConfig>,
    pub prepare: Option<PrepareConfig>,
}

impl FileConfig {
    /// TOML when the extension is `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }
}

/// Flags shared by every subcommand, before merging with the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bounds id (`default`) or path to a bounds JSON file.
    #[arg(long)]
    pub bounds: Option<String>,
    /// Worker threads; all cores when unset.
    #[arg(long)]
    pub workers: Option<usize>,
    /// TOML or JSON settings file.
    #[arg(long, env = "VOCALFX_CONFIG")]
    pub config: Option<PathBuf>,
}

/// Fully resolved settings of one invocation, written into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_file: Option<PathBuf>,
    pub seed: u64,
    pub bounds: String,
    pub workers: Option<usize>,
    pub routing: String,
    pub delay_ir_seconds: Option<f64>,
    pub fdn_ir_seconds: Option<f64>,
    pub fit: FitConfig,
    pub segment: SegmentConfig,
    pub prepare: PrepareConfig,
}

impl RunConfig {
    pub fn resolve(command: &str, common: &CommonArgs, steps: Option<usize>, lr: Option<f64>, routing: Option<&str>) -> Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let seed = common.seed.or(file.seed).unwrap_or(0);
        let mut fit = file.fit.unwrap_or_default();
        if let Some(s) = steps.or(file.steps) {
            fit.steps = s;
        }
        if let Some(l) = lr.or(file.lr) {
            if !(l > 0.0 && l.is_finite()) {
                bail!("learning rate must be positive, got {l}");
            }
            fit.adam.lr = l;
        }
        fit.seed = seed;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_file: common.config.clone(),
            seed,
            bounds: common.bounds.clone().or(file.bounds).unwrap_or_else(|| "default".into()),
            workers: common.workers.or(file.workers),
            routing: routing.map(str::to_string).or(file.routing).unwrap_or_else(|| "full".into()),
            delay_ir_seconds: file.delay_ir_seconds,
            fdn_ir_seconds: file.fdn_ir_seconds,
            fit,
            segment: file.segment.unwrap_or_default(),
            prepare: file.prepare.unwrap_or_default(),
        })
    }

    pub fn bounds_for(&self, sample_rate: f64) -> Result<BoundsConfig> {
        if self.bounds == "default" {
            return Ok(BoundsConfig::for_sample_rate(sample_rate));
        }
        let path = Path::new(&self.bounds);
        let text = std::fs::read_to_string(path).with_context(|| format!("bounds `{}` is neither `default` nor a readable file", self.bounds))?;
        let b: BoundsConfig = serde_json::from_str(&text).with_context(|| format!("parsing bounds {}", path.display()))?;
        if (b.sample_rate - sample_rate).abs() > 1e-9 {
            bail!("bounds `{}` are for {} Hz but the audio is {} Hz", b.id, b.sample_rate, sample_rate);
        }
        Ok(b)
    }

    /// Chain used for fitting at `sample_rate`.
    pub fn training_chain(&self, sample_rate: f64) -> Result<ChainConfig> {
        let base = ChainConfig::new(sample_rate);
        let samples = |s: f64| -> Result<usize> {
            if !(s > 0.0 && s.is_finite()) {
                bail!("IR length must be positive, got {s} s");
            }
            Ok((s * sample_rate).round() as usize)
        };
        let mut cfg = ChainConfig {
            routing: Routing::named(&self.routing)?,
            ..base
        };
        if let Some(s) = self.delay_ir_seconds {
            cfg.delay = DelayConfig::new(samples(s)?);
        }
        if let Some(s) = self.fdn_ir_seconds {
            cfg.fdn = FdnConfig {
                interpolation: base.fdn.interpolation,
                ..FdnConfig::new(samples(s)?)
            };
        }
        Ok(cfg)
    }

    pub fn apply_workers(&self) -> Result<()> {
        if let Some(n) = self.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .context("configuring worker threads")?;
        }
        Ok(())
    }
}
