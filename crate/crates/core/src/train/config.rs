use std::path::{Path, PathBuf};

use super::{AdamConfig, InitPolicy};
use crate::error::{Error, Result};
use crate::kv;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `best/` and `last/` checkpoints go here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Validate every this many steps; 0 means at the end of each epoch.
    pub eval_every: usize,
    /// Stop after this many evaluations without a better validation DSC; 0 disables.
    pub patience: usize,
    pub init_std: InitPolicy,
    pub adam: AdamConfig,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub threshold: f64,
    pub smooth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            seed: 0,
            checkpoint_dir: None,
            eval_every: 0,
            patience: 10,
            init_std: InitPolicy::Scaled,
            adam: AdamConfig::default(),
            max_steps: None,
            threshold: 0.5,
            smooth: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.smooth > 0.0) {
            return Err(Error::Config("smooth must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let dir = self.checkpoint_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let max = self.max_steps.map(|m| m.to_string()).unwrap_or_default();
        [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_dir", dir),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("init_std", self.init_std.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("epsilon", self.adam.epsilon.to_string()),
            ("max_steps", max),
            ("threshold", self.threshold.to_string()),
            ("smooth", self.smooth.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Returns `false` for keys this type does not own.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = kv::value(key, v)?,
            "batch_size" => self.batch_size = kv::value(key, v)?,
            "seed" => self.seed = kv::value(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "eval_every" => self.eval_every = kv::value(key, v)?,
            "patience" => self.patience = kv::value(key, v)?,
            "init_std" => self.init_std = v.parse()?,
            "lr" => self.adam.lr = kv::value(key, v)?,
            "beta1" => self.adam.beta1 = kv::value(key, v)?,
            "beta2" => self.adam.beta2 = kv::value(key, v)?,
            "epsilon" => self.adam.epsilon = kv::value(key, v)?,
            "max_steps" => self.max_steps = if v.is_empty() { None } else { Some(kv::value(key, v)?) },
            "threshold" => self.threshold = kv::value(key, v)?,
            "smooth" => self.smooth = kv::value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Model and training settings read from one `key = value` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        if self.model.apply(key, v)? || self.train.apply(key, v)? {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key `{key}`")))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in kv::parse(text)? {
            cfg.apply(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every resolved setting, model keys first.
    pub fn render(&self) -> String {
        kv::render(self.model.to_pairs().into_iter().chain(self.train.to_pairs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = RunConfig::default();
        c.train.max_steps = Some(500);
        c.train.checkpoint_dir = Some("/tmp/x".into());
        c.train.init_std = InitPolicy::Fixed(0.02);
        c.model.width_multiplier = 0.25;
        let back = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("batch_size = x").is_err());
        let mut bad = RunConfig::default();
        bad.train.batch_size = 0;
        assert!(bad.validate().is_err());
    }
}
