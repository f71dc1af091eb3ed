//! Flat key=value run configuration with defaults, file parsing and
//! command-line overrides.
//!
//! The config file is a plain text file of `key = value` lines (`#`
//! comments allowed). Every key has a default, so an empty file is a
//! valid run; unknown or duplicate keys are hard errors so typos never
//! silently fall back to defaults. Command-line overrides are applied
//! after the file, flag wins. `resolved()` dumps every key in sorted
//! order, which makes run directories self-describing and lets the
//! report command pair ablation runs by diffing configs.

use std::path::{Path, PathBuf};

use crate::data::{DataConfig, HrKind};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, StabChannelMode};
use crate::model::NetConfig;
use crate::schedule::NoiseSchedule;

/// Which half of the training recipe to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn as_u8(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Stage> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            other => Err(Error::Config(format!(
                "stage must be 1 or 2, got {other}"
            ))),
        }
    }
}

/// Fully resolved run configuration; defaults target a single-core
/// desk run of a few minutes per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage: Stage,
    pub out_dir: PathBuf,

    pub iters_stage1: u64,
    pub iters_stage2: u64,
    pub sync_period: u64,
    pub batch_size: usize,
    /// Stage 1 learning rate.
    pub lr: f32,
    /// Stage 2 learning rate; the refinement stage needs a gentler step
    /// than stage 1 or its edge-space objectives drag pixel fidelity.
    pub lr_stage2: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub log_every: u64,

    pub t_total: u32,
    pub exponent_stage1: f64,
    pub exponent_stage2: f64,
    /// Optional smaller T for late Stage I iterations; 0 disables.
    pub t_late: u32,
    /// Iteration at which `t_late` takes over (when enabled).
    pub switch_iter: u64,

    pub width: usize,
    pub depth: usize,

    pub lambda_ta: f32,
    pub lambda_dtm: f32,
    pub lambda_stab: f32,
    pub lambda_rect: f32,
    pub charbonnier_eps: f32,
    pub percep_seed: u64,
    pub stab_mode: StabChannelMode,

    pub data_size: usize,
    pub data_scale: usize,
    pub blur_sigma: (f32, f32),
    pub noise_sigma: (f32, f32),
    /// None = uniform per-sample mix of all kinds.
    pub data_kind: Option<HrKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            stage: Stage::One,
            out_dir: PathBuf::from("runs/default"),
            iters_stage1: 3000,
            iters_stage2: 600,
            sync_period: 150,
            batch_size: 8,
            lr: 1e-3,
            lr_stage2: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            log_every: 10,
            t_total: 5,
            exponent_stage1: 2.5,
            exponent_stage2: 1.0,
            t_late: 0,
            switch_iter: 0,
            width: 16,
            depth: 3,
            lambda_ta: 0.5,
            lambda_dtm: 1.6,
            lambda_stab: 0.032,
            lambda_rect: 1.0,
            charbonnier_eps: 1e-3,
            percep_seed: 1000,
            stab_mode: StabChannelMode::Average,
            data_size: 32,
            data_scale: 4,
            blur_sigma: (0.5, 1.5),
            noise_sigma: (0.01, 0.05),
            data_kind: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| {
        Error::Config(format!(
            "key {key}: cannot parse {value:?} as {}",
            std::any::type_name::<T>()
        ))
    })
}

impl TrainConfig {
    /// Apply one `key = value` assignment. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "stage" => self.stage = Stage::from_u8(parse_num(key, v)?)?,
            "out.dir" => self.out_dir = PathBuf::from(v),
            "train.iters_stage1" => self.iters_stage1 = parse_num(key, v)?,
            "train.iters_stage2" => self.iters_stage2 = parse_num(key, v)?,
            "train.sync_period" => self.sync_period = parse_num(key, v)?,
            "train.batch_size" => self.batch_size = parse_num(key, v)?,
            "train.lr" => self.lr = parse_num(key, v)?,
            "train.lr_stage2" => self.lr_stage2 = parse_num(key, v)?,
            "train.beta1" => self.beta1 = parse_num(key, v)?,
            "train.beta2" => self.beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.adam_eps = parse_num(key, v)?,
            "train.log_every" => self.log_every = parse_num(key, v)?,
            "schedule.t_total" => self.t_total = parse_num(key, v)?,
            "schedule.n_stage1" => self.exponent_stage1 = parse_num(key, v)?,
            "schedule.n_stage2" => self.exponent_stage2 = parse_num(key, v)?,
            "schedule.t_late" => self.t_late = parse_num(key, v)?,
            "schedule.switch_iter" => self.switch_iter = parse_num(key, v)?,
            "model.width" => self.width = parse_num(key, v)?,
            "model.depth" => self.depth = parse_num(key, v)?,
            "loss.lambda_ta" => self.lambda_ta = parse_num(key, v)?,
            "loss.lambda_dtm" => self.lambda_dtm = parse_num(key, v)?,
            "loss.lambda_stab" => self.lambda_stab = parse_num(key, v)?,
            "loss.lambda_rect" => self.lambda_rect = parse_num(key, v)?,
            "loss.charbonnier_eps" => self.charbonnier_eps = parse_num(key, v)?,
            "loss.percep_seed" => self.percep_seed = parse_num(key, v)?,
            "loss.stab_mode" => self.stab_mode = v.parse()?,
            "data.size" => self.data_size = parse_num(key, v)?,
            "data.scale" => self.data_scale = parse_num(key, v)?,
            "data.blur_lo" => self.blur_sigma.0 = parse_num(key, v)?,
            "data.blur_hi" => self.blur_sigma.1 = parse_num(key, v)?,
            "data.noise_lo" => self.noise_sigma.0 = parse_num(key, v)?,
            "data.noise_hi" => self.noise_sigma.1 = parse_num(key, v)?,
            "data.kind" => {
                self.data_kind = if v == "mix" { None } else { Some(v.parse()?) }
            }
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse config text over the defaults. Duplicate keys are errors.
    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    /// Load from an optional file, then apply command-line overrides
    /// (flag wins), then validate.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
                TrainConfig::from_text(&text)?
            }
            None => TrainConfig::default(),
        };
        for (key, value) in overrides {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters_stage2 > 0 && self.sync_period > self.iters_stage2 {
            return Err(Error::Config(format!(
                "sync_period {} exceeds iters_stage2 {}",
                self.sync_period, self.iters_stage2
            )));
        }
        if self.sync_period == 0 {
            return Err(Error::Config("sync_period must be >= 1".into()));
        }
        for (name, v) in [("train.lr", self.lr), ("train.lr_stage2", self.lr_stage2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("train.adam_eps must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("train.log_every must be >= 1".into()));
        }
        if self.t_total == 0 {
            return Err(Error::Config("schedule.t_total must be >= 1".into()));
        }
        for (name, v) in [
            ("loss.lambda_ta", self.lambda_ta),
            ("loss.lambda_dtm", self.lambda_dtm),
            ("loss.lambda_stab", self.lambda_stab),
            ("loss.lambda_rect", self.lambda_rect),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::Config("loss.charbonnier_eps must be positive".into()));
        }
        // Exercises the constructors of the downstream types so their
        // own validation runs against the resolved values.
        self.schedule_for(Stage::One)?;
        self.schedule_for(Stage::Two)?;
        if self.t_late > 0 {
            NoiseSchedule::new(self.t_late, self.exponent_stage1)?;
        }
        self.data_config().validate()?;
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config(
                "model.width and model.depth must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            base_width: self.width,
            depth: self.depth,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            size: self.data_size,
            scale: self.data_scale,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            kind: self.data_kind,
            batch_size: self.batch_size,
            global_seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_ta: self.lambda_ta,
            lambda_dtm: self.lambda_dtm,
            lambda_stab: self.lambda_stab,
            lambda_rect: self.lambda_rect,
        }
    }

    pub fn schedule_for(&self, stage: Stage) -> Result<NoiseSchedule> {
        let n = match stage {
            Stage::One => self.exponent_stage1,
            Stage::Two => self.exponent_stage2,
        };
        NoiseSchedule::new(self.t_total, n)
    }

    /// Learning rate for the configured stage.
    pub fn stage_lr(&self) -> f32 {
        match self.stage {
            Stage::One => self.lr,
            Stage::Two => self.lr_stage2,
        }
    }

    /// Every key in sorted order, one per line; the exact inverse of
    /// `from_text` and byte-deterministic for a fixed config.
    pub fn resolved(&self) -> String {
        let kind = match self.data_kind {
            None => "mix".to_string(),
            Some(k) => k.to_string(),
        };
        let mut rows = vec![
            ("data.blur_hi", format!("{}", self.blur_sigma.1)),
            ("data.blur_lo", format!("{}", self.blur_sigma.0)),
            ("data.kind", kind),
            ("data.noise_hi", format!("{}", self.noise_sigma.1)),
            ("data.noise_lo", format!("{}", self.noise_sigma.0)),
            ("data.scale", format!("{}", self.data_scale)),
            ("data.size", format!("{}", self.data_size)),
            ("loss.charbonnier_eps", format!("{}", self.charbonnier_eps)),
            ("loss.lambda_dtm", format!("{}", self.lambda_dtm)),
            ("loss.lambda_rect", format!("{}", self.lambda_rect)),
            ("loss.lambda_stab", format!("{}", self.lambda_stab)),
            ("loss.lambda_ta", format!("{}", self.lambda_ta)),
            ("loss.percep_seed", format!("{}", self.percep_seed)),
            ("loss.stab_mode", format!("{}", self.stab_mode)),
            ("model.depth", format!("{}", self.depth)),
            ("model.width", format!("{}", self.width)),
            ("out.dir", self.out_dir.display().to_string()),
            ("schedule.n_stage1", format!("{}", self.exponent_stage1)),
            ("schedule.n_stage2", format!("{}", self.exponent_stage2)),
            ("schedule.switch_iter", format!("{}", self.switch_iter)),
            ("schedule.t_late", format!("{}", self.t_late)),
            ("schedule.t_total", format!("{}", self.t_total)),
            ("seed", format!("{}", self.seed)),
            ("stage", format!("{}", self.stage.as_u8())),
            ("train.adam_eps", format!("{}", self.adam_eps)),
            ("train.batch_size", format!("{}", self.batch_size)),
            ("train.beta1", format!("{}", self.beta1)),
            ("train.beta2", format!("{}", self.beta2)),
            ("train.iters_stage1", format!("{}", self.iters_stage1)),
            ("train.iters_stage2", format!("{}", self.iters_stage2)),
            ("train.log_every", format!("{}", self.log_every)),
            ("train.lr", format!("{}", self.lr)),
            ("train.lr_stage2", format!("{}", self.lr_stage2)),
            ("train.sync_period", format!("{}", self.sync_period)),
        ];
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
