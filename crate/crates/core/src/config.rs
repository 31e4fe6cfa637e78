//! `key = value` run configuration shared by every CLI command.
//!
//! Precedence: command-line flag > config file > default. Unknown keys are
//! rejected. [`RunConfig::to_text`] writes every key, so a saved copy
//! reproduces the run exactly. The worker-thread count is a command-line
//! flag only: it never changes results, so it is not part of the config.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::losses::SettingKind;
use crate::sampler::SamplerConfig;
use crate::schedule::Schedule;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleChoice {
    Geometric,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Empty means `<out_dir>/model.ckpt`.
    pub checkpoint_path: PathBuf,
    /// Empty means `<out_dir>/data.txt`.
    pub data_path: PathBuf,
    // model and training
    pub setting: SettingKind,
    /// Remembered so `loss.setting = hybrid` / `adaptive` can be given in
    /// any order relative to these two keys.
    pub n_lambda: u32,
    pub adaptive_virtual_item: bool,
    pub include_beta: bool,
    pub dim: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub nonpref_prob: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    // schedule
    pub schedule: ScheduleChoice,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_scale: f64,
    pub steps: usize,
    // sampling and evaluation
    pub w: f64,
    /// Reverse steps; 0 means every schedule step.
    pub sample_steps: usize,
    pub trajectories: usize,
    pub eval_ks: Vec<usize>,
    pub top_k: usize,
    // synthetic data
    pub synth_n: usize,
    pub synth_count: usize,
    pub synth_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            checkpoint_path: PathBuf::new(),
            data_path: PathBuf::new(),
            setting: t.setting,
            n_lambda: 4,
            adaptive_virtual_item: true,
            include_beta: t.include_beta,
            dim: t.dim,
            ffn_dim: t.ffn_dim,
            blocks: t.blocks,
            nonpref_prob: t.nonpref_prob,
            batch_size: t.batch_size,
            lr: t.lr,
            max_epochs: t.max_epochs,
            patience: t.patience,
            schedule: ScheduleChoice::Geometric,
            beta_min: 1e-3,
            beta_max: 10.0,
            beta_scale: 0.01,
            steps: 20,
            w: 1.0,
            sample_steps: 0,
            trajectories: 1,
            eval_ks: vec![1, 5, 10, 20],
            top_k: 10,
            synth_n: 50,
            synth_count: 3000,
            synth_noise: 0.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ConfigError(format!("invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_path" => self.checkpoint_path = PathBuf::from(v),
            "data_path" => self.data_path = PathBuf::from(v),
            "loss.setting" => {
                self.setting = match v {
                    "hybrid" => SettingKind::Hybrid {
                        n_lambda: self.n_lambda,
                    },
                    "adaptive" => SettingKind::Adaptive {
                        virtual_item: self.adaptive_virtual_item,
                    },
                    other => other.parse()?,
                };
                match self.setting {
                    SettingKind::Hybrid { n_lambda } => self.n_lambda = n_lambda,
                    SettingKind::Adaptive { virtual_item } => {
                        self.adaptive_virtual_item = virtual_item
                    }
                    _ => {}
                }
            }
            "loss.n_lambda" => {
                self.n_lambda = parse(key, v)?;
                if self.n_lambda == 0 {
                    return Err(Error::ConfigError("loss.n_lambda must be positive".into()));
                }
                if let SettingKind::Hybrid { n_lambda } = &mut self.setting {
                    *n_lambda = self.n_lambda;
                }
            }
            "loss.adaptive_virtual_item" => {
                self.adaptive_virtual_item = parse(key, v)?;
                if let SettingKind::Adaptive { virtual_item } = &mut self.setting {
                    *virtual_item = self.adaptive_virtual_item;
                }
            }
            "loss.include_beta" => self.include_beta = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "ffn_dim" => self.ffn_dim = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "nonpref_prob" => self.nonpref_prob = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "schedule.kind" => {
                self.schedule = match v {
                    "geometric" => ScheduleChoice::Geometric,
                    "linear" => ScheduleChoice::Linear,
                    _ => return Err(Error::ConfigError(format!("unknown schedule `{v}`"))),
                }
            }
            "schedule.beta_min" => self.beta_min = parse(key, v)?,
            "schedule.beta_max" => self.beta_max = parse(key, v)?,
            "schedule.beta_scale" => self.beta_scale = parse(key, v)?,
            "schedule.steps" => self.steps = parse(key, v)?,
            "w" => self.w = parse(key, v)?,
            "sample_steps" => self.sample_steps = parse(key, v)?,
            "trajectories" => self.trajectories = parse(key, v)?,
            "eval_ks" => {
                self.eval_ks = v
                    .split(',')
                    .map(|k| parse(key, k.trim()))
                    .collect::<Result<_>>()?;
                if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
                    return Err(Error::ConfigError("eval_ks must be positive".into()));
                }
            }
            "top_k" => self.top_k = parse(key, v)?,
            "synth_n" => self.synth_n = parse(key, v)?,
            "synth_count" => self.synth_count = parse(key, v)?,
            "synth_noise" => self.synth_noise = parse(key, v)?,
            other => return Err(Error::ConfigError(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ParseError {
                line: i + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(k, v).map_err(|e| Error::ParseError {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let ks: Vec<String> = self.eval_ks.iter().map(|k| k.to_string()).collect();
        let schedule = match self.schedule {
            ScheduleChoice::Geometric => "geometric",
            ScheduleChoice::Linear => "linear",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "checkpoint_path",
            self.checkpoint_path.display().to_string(),
        );
        kv("data_path", self.data_path.display().to_string());
        kv("loss.setting", self.setting.name().to_string());
        kv("loss.n_lambda", self.n_lambda.to_string());
        kv(
            "loss.adaptive_virtual_item",
            self.adaptive_virtual_item.to_string(),
        );
        kv("loss.include_beta", self.include_beta.to_string());
        kv("dim", self.dim.to_string());
        kv("ffn_dim", self.ffn_dim.to_string());
        kv("blocks", self.blocks.to_string());
        kv("nonpref_prob", self.nonpref_prob.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("schedule.kind", schedule.to_string());
        kv("schedule.beta_min", self.beta_min.to_string());
        kv("schedule.beta_max", self.beta_max.to_string());
        kv("schedule.beta_scale", self.beta_scale.to_string());
        kv("schedule.steps", self.steps.to_string());
        kv("w", self.w.to_string());
        kv("sample_steps", self.sample_steps.to_string());
        kv("trajectories", self.trajectories.to_string());
        kv("eval_ks", ks.join(","));
        kv("top_k", self.top_k.to_string());
        kv("synth_n", self.synth_n.to_string());
        kv("synth_count", self.synth_count.to_string());
        kv("synth_noise", self.synth_noise.to_string());
        s
    }

    pub fn checkpoint(&self) -> PathBuf {
        if self.checkpoint_path.as_os_str().is_empty() {
            self.out_dir.join("model.ckpt")
        } else {
            self.checkpoint_path.clone()
        }
    }

    pub fn data(&self) -> PathBuf {
        if self.data_path.as_os_str().is_empty() {
            self.out_dir.join("data.txt")
        } else {
            self.data_path.clone()
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match self.schedule {
            ScheduleChoice::Geometric => {
                Schedule::geometric(self.beta_min, self.beta_max, self.steps)
            }
            ScheduleChoice::Linear => Schedule::linear(self.beta_scale, self.steps),
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            w: self.w,
            steps: (self.sample_steps > 0).then_some(self.sample_steps),
            trajectories: self.trajectories,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            setting: self.setting,
            dim: self.dim,
            ffn_dim: self.ffn_dim,
            blocks: self.blocks,
            nonpref_prob: self.nonpref_prob,
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            include_beta: self.include_beta,
            sampler: self.sampler(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nlr = 0.003 # trailing\nloss.setting = hybrid\nloss.n_lambda = 2\neval_ks = 1,3\n\n")
            .unwrap();
        assert_eq!(c.lr, 0.003);
        assert_eq!(c.setting, SettingKind::Hybrid { n_lambda: 2 });
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(
            RunConfig::from_text(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn loss_keys_combine_in_any_order() {
        let a = RunConfig::from_text("loss.adaptive_virtual_item = false\nloss.setting = adaptive")
            .unwrap();
        let b = RunConfig::from_text("loss.setting = adaptive\nloss.adaptive_virtual_item = false")
            .unwrap();
        assert_eq!(
            a.setting,
            SettingKind::Adaptive {
                virtual_item: false
            }
        );
        assert_eq!(a, b);
        let c = RunConfig::from_text("loss.setting = hybrid:3").unwrap();
        assert_eq!(c.n_lambda, 3);
        assert!(RunConfig::from_text("loss.n_lambda = 0").is_err());
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        assert!(matches!(
            RunConfig::from_text("colour = blue"),
            Err(Error::ParseError { line: 1, .. })
        ));
        assert!(RunConfig::from_text("\nseed 4").is_err());
        assert!(RunConfig::from_text("dim = -3").is_err());
        assert!(RunConfig::from_text("eval_ks = 0").is_err());
    }

    #[test]
    fn default_paths_follow_out_dir() {
        let mut c = RunConfig::default();
        c.set("out_dir", "runs/a").unwrap();
        assert_eq!(c.checkpoint(), PathBuf::from("runs/a/model.ckpt"));
        c.set("checkpoint_path", "m.ckpt").unwrap();
        assert_eq!(c.checkpoint(), PathBuf::from("m.ckpt"));
    }
}
