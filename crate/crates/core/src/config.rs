use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::TrainConfig;
use crate::dataset::{QP_HI, QP_LO};
use crate::error::{Error, Result};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "TBA_CONFIG";

/// Everything a pipeline command needs. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; there is no clock-derived fallback.
    pub seed: Option<u64>,
    /// Directory of `*.pgm` luma frames.
    pub corpus: PathBuf,
    /// Directory of `{id}.importance.pgm` / `{id}.instances.pgm` maps.
    pub maps: PathBuf,
    pub cache: PathBuf,
    pub model: PathBuf,
    /// Directory for the report, training log and allocation dumps.
    pub reports: PathBuf,
    /// Synthetic corpus description for `gen-maps`; the default is a
    /// 200-frame 576x576 corpus.
    pub synth_spec: Option<PathBuf>,
    /// Optional CSV of measured task distortion (`frame_id,qp,distortion`)
    /// that replaces the weighted-MSE proxy in the cache.
    pub task_distortion: Option<PathBuf>,
    pub lambda: f64,
    /// Overrides the cache's corpus mean anchor MSE.
    pub distortion_scale: Option<f64>,
    pub qp_min: u8,
    pub qp_max: u8,
    pub train_fraction: f64,
    /// Row label in the report.
    pub task: String,
    /// Worker threads for dataset builds and evaluation; 0 = all cores.
    pub jobs: usize,
    /// `train.seed` is replaced by `seed`.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            corpus: "data/frames".into(),
            maps: "data/maps".into(),
            cache: "data/tba.csv".into(),
            model: "data/agent.tbaq".into(),
            reports: "data/reports".into(),
            synth_spec: None,
            task_distortion: None,
            lambda: 1.0,
            distortion_scale: None,
            qp_min: QP_LO,
            qp_max: QP_HI,
            train_fraction: 0.8,
            task: "synthetic".into(),
            jobs: 0,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// `path` if given, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("no seed: set \"seed\" in the config file or pass --seed"))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if let Some(s) = self.distortion_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!(
                    "distortion_scale must be positive, got {s}"
                )));
            }
        }
        if self.qp_min < crate::codec::QP_MIN
            || self.qp_max > crate::codec::QP_MAX
            || self.qp_min > self.qp_max
        {
            return Err(Error::config(format!(
                "QP range {}..={} is not within 1..=51",
                self.qp_min, self.qp_max
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.train
            .validate()
            .map_err(|e| Error::config(e.to_string()))
    }

    /// Training hyperparameters with the run seed applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            seed: self.seed()?,
            ..self.train.clone()
        })
    }

    pub fn report_csv(&self) -> PathBuf {
        self.reports.join("report.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.reports.join("report.txt")
    }

    pub fn train_log(&self) -> PathBuf {
        self.reports.join("train_log.csv")
    }

    pub fn allocation_csv(&self) -> PathBuf {
        self.reports.join("allocation.csv")
    }
}
