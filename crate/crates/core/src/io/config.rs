//! Experiment configuration and the JSON-lines metrics stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, IoError};
use crate::toy::{CeConfig, MetricsRecord, SynthConfig, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Where commands read and write their files unless `--out-dir` is given.
    pub out_dir: Option<PathBuf>,
}

/// One TOML file with `[synth]`, `[ce]`, `[train]` and optional `[paths]`
/// sections. Unknown keys are errors and every seed must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub ce: CeConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self, IoError> {
        Self::parse(&read_file(path)?)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Appends one JSON object per line, flushing after each row so a crash
/// leaves every completed iteration on disk.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &FsPath) -> Result<Self, IoError> {
        let wrap = |source| IoError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(wrap)?;
        }
        let file = File::create(path).map_err(wrap)?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), IoError> {
        let line = serde_json::to_string(record).expect("metrics serialize");
        let wrap = |source| IoError::Io {
            path: self.path.clone(),
            source,
        };
        writeln!(self.out, "{line}").map_err(wrap)?;
        self.out.flush().map_err(wrap)
    }
}

/// Parses a metrics stream back into records.
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRecord>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| super::parse_err(i + 1, e.to_string())))
        .collect()
}
