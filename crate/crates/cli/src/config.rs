use std::path::{Path, PathBuf};

use anyhow::Result;
use frmdn_core::model::{parse_kv_lines, ModelConfig, OptimizerConfig, TrainOptions};

use crate::invalid;

/// Everything `train` needs, settable from a key=value file and then flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub window: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Model keys given explicitly, checked against a resumed checkpoint.
    pub model_overrides: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainOptions::default();
        Self {
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: train.batch_size,
            window: train.window,
            epochs: 10,
            seed: 0,
            data: None,
            test: None,
            out: None,
            metrics: None,
            resume: None,
            model_overrides: Vec::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(format!("bad value '{value}' for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value).map_err(|e| invalid(e.to_string()))? {
            self.model_overrides.push((key.to_string(), value.to_string()));
            return Ok(());
        }
        match key {
            "optimizer" => self.optimizer.kind = value.parse().map_err(|e: frmdn_core::Error| invalid(e.to_string()))?,
            "lr" => self.optimizer.lr = parse(key, value)?,
            "clip_norm" => self.optimizer.clip_norm = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "metrics" => self.metrics = Some(value.into()),
            "resume" => self.resume = Some(value.into()),
            _ => return Err(invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_kv_lines(&text).map_err(|e| invalid(e.to_string()))? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        self.optimizer.validate().map_err(|e| invalid(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if self.window < 2 {
            return Err(invalid("window must be at least 2"));
        }
        if self.data.is_none() {
            return Err(invalid("missing training data (data=...)"));
        }
        if self.out.is_none() {
            return Err(invalid("missing checkpoint path (out=...)"));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            window: self.window,
            seed: self.seed,
        }
    }

    /// Resolved settings in a stable order, for log headers.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = frmdn_core::model::parse_kv_lines(&self.model.to_text()).unwrap_or_default();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        out.extend([
            ("optimizer".to_string(), self.optimizer.kind.to_string()),
            ("lr".into(), self.optimizer.lr.to_string()),
            ("clip_norm".into(), self.optimizer.clip_norm.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("window".into(), self.window.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("data".into(), path(&self.data)),
            ("test".into(), path(&self.test)),
            ("out".into(), path(&self.out)),
            ("metrics".into(), path(&self.metrics)),
            ("resume".into(), path(&self.resume)),
        ]);
        out
    }
}
