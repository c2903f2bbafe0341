//! Run configuration. Every knob can come from a command-line flag, from an
//! optional TOML file, or from its default, in that order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use lira::codec::VecFormat;
use serde::{Deserialize, Serialize};

pub const DEFAULT_OUT_DIR: &str = "lira_out";

/// Knobs shared by all stages. Each is optional here so that flags and the
/// config file can be layered before defaults apply.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Knobs {
    /// Base vectors file (.fvecs or .bvecs); replaces the synthetic generator
    #[arg(long, global = true, value_name = "FILE")]
    pub base: Option<PathBuf>,

    /// Query vectors file, used together with --base
    #[arg(long, global = true, value_name = "FILE")]
    pub queries: Option<PathBuf>,

    /// Vector file format: fvecs or bvecs [default: from file extension]
    #[arg(long, global = true)]
    pub format: Option<String>,

    /// Synthetic data: number of base points [default: 100000]
    #[arg(long, global = true)]
    pub synthetic_n: Option<usize>,

    /// Synthetic data: dimensionality [default: 32]
    #[arg(long, global = true)]
    pub dim: Option<usize>,

    /// Synthetic data: number of mixture components [default: 64]
    #[arg(long, global = true)]
    pub clusters: Option<usize>,

    /// Synthetic data: per-dimension standard deviation of each component [default: 0.3]
    #[arg(long, global = true)]
    pub spread: Option<f32>,

    /// Synthetic data: held-out query count [default: 1000]
    #[arg(long, global = true)]
    pub holdout: Option<usize>,

    /// Neighbours per query (k of Recall@k) [default: 100]
    #[arg(long, global = true)]
    pub k: Option<usize>,

    /// Number of partitions B [default: 64]
    #[arg(long, global = true)]
    pub partitions: Option<usize>,

    /// K-Means iteration cap [default: 25]
    #[arg(long, global = true)]
    pub kmeans_iters: Option<usize>,

    /// Percentage of points duplicated by learned redundancy [default: 3]
    #[arg(long, global = true)]
    pub eta: Option<f64>,

    /// Probability threshold for learned probing [default: 0.5]
    #[arg(long, global = true)]
    pub sigma: Option<f32>,

    /// Fixed number of probed partitions; overrides --sigma for lira [default: 8 for ivf/fuzzy]
    #[arg(long, global = true)]
    pub nprobe: Option<usize>,

    /// Training subset size [default: 20000]
    #[arg(long, global = true)]
    pub sample_size: Option<usize>,

    /// Mini-batch size [default: 512]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,

    /// Training epochs [default: 10]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,

    /// Adam learning rate [default: 0.001]
    #[arg(long, global = true)]
    pub lr: Option<f32>,

    /// Seed for every random choice in the pipeline [default: 7]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

macro_rules! layer {
    ($top:expr, $below:expr, $($field:ident),*) => {
        Knobs { $($field: $top.$field.or($below.$field),)* }
    };
}

impl Knobs {
    /// Fields set in `self` win over those in `below`.
    pub fn over(self, below: Knobs) -> Knobs {
        layer!(
            self, below, base, queries, format, synthetic_n, dim, clusters, spread, holdout, k, partitions,
            kmeans_iters, eta, sigma, nprobe, sample_size, batch_size, epochs, lr, seed
        )
    }

    pub fn from_file(path: &Path) -> Result<Knobs> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Files {
        base: PathBuf,
        queries: PathBuf,
        format: Option<String>,
    },
    Synthetic {
        n: usize,
        dim: usize,
        clusters: usize,
        spread: f32,
        holdout: usize,
    },
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub k: usize,
    pub partitions: usize,
    pub kmeans_iters: usize,
    pub eta: f64,
    pub sigma: Option<f32>,
    pub nprobe: Option<usize>,
    pub sample_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl RunConfig {
    pub fn resolve(knobs: Knobs) -> Result<RunConfig> {
        let data = match (knobs.base, knobs.queries) {
            (Some(base), Some(queries)) => DataSource::Files {
                base,
                queries,
                format: knobs.format,
            },
            (None, None) => DataSource::Synthetic {
                n: knobs.synthetic_n.unwrap_or(100_000),
                dim: knobs.dim.unwrap_or(32),
                clusters: knobs.clusters.unwrap_or(64),
                spread: knobs.spread.unwrap_or(0.3),
                holdout: knobs.holdout.unwrap_or(1000),
            },
            _ => bail!("base and queries must be given together"),
        };
        Ok(RunConfig {
            data,
            k: knobs.k.unwrap_or(100),
            partitions: knobs.partitions.unwrap_or(64),
            kmeans_iters: knobs.kmeans_iters.unwrap_or(lira::partition::DEFAULT_KMEANS_ITERS),
            eta: knobs.eta.unwrap_or(3.0),
            sigma: knobs.sigma,
            nprobe: knobs.nprobe,
            sample_size: knobs.sample_size.unwrap_or(20_000),
            batch_size: knobs.batch_size.unwrap_or(512),
            epochs: knobs.epochs.unwrap_or(10),
            lr: knobs.lr.unwrap_or(1e-3),
            seed: knobs.seed.unwrap_or(7),
        })
    }

    pub fn format_for(&self, path: &Path) -> Result<VecFormat> {
        let explicit = match &self.data {
            DataSource::Files { format: Some(f), .. } => Some(f.parse::<VecFormat>()?),
            _ => None,
        };
        match explicit.or_else(|| VecFormat::from_path(path)) {
            Some(VecFormat::Ivecs) => bail!("{}: ivecs holds ids, not vectors", path.display()),
            Some(f) => Ok(f),
            None => bail!("cannot tell the format of {}; pass --format", path.display()),
        }
    }

    /// Stable text form, hashed into report headers.
    pub fn describe(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = RunConfig::resolve(Knobs::default()).unwrap();
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.partitions, 64);
        assert_eq!(cfg.eta, 3.0);
        assert_eq!(cfg.batch_size, 512);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.sigma, None);
        assert!(matches!(cfg.data, DataSource::Synthetic { n: 100_000, dim: 32, .. }));
    }

    #[test]
    fn flags_win_over_file() {
        let file: Knobs = toml::from_str("k = 10\nepochs = 3\nsynthetic-n = 500").unwrap();
        let flags = Knobs {
            k: Some(20),
            ..Knobs::default()
        };
        let cfg = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.epochs, 3);
        assert!(matches!(cfg.data, DataSource::Synthetic { n: 500, .. }));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Knobs>("kk = 1").is_err());
    }

    #[test]
    fn describe_is_stable() {
        let a = RunConfig::resolve(Knobs::default()).unwrap();
        assert_eq!(a.describe(), a.clone().describe());
        let b = RunConfig::resolve(Knobs {
            seed: Some(1),
            ..Knobs::default()
        })
        .unwrap();
        assert_ne!(a.describe(), b.describe());
    }
}
