//! Run configuration: flat `section.key = value` lines with `#` comments.
//! Unknown keys are rejected; absent keys keep their defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use metareg::data::{DomainSpec, TaskSpec, TextureKind, TextureParams};
use metareg::eval::{ArmKind, ArmSpec, ComparisonConfig};
use metareg::metatrain::{InnerPairs, TrainConfig};
use metareg::model::{ArchSpec, EncoderLevel};
use metareg::rng::derive_seed;
use metareg::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub warp_sigma: f64,
    pub warp_amplitude: f64,
    pub noise_sigma: f64,
    pub pairs: usize,
    pub landmarks: usize,
    pub sources: Vec<TextureKind>,
    pub target: TextureKind,
    pub seed: u64,
    pub textures: Vec<(TextureKind, TextureParams)>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let base = DomainSpec::new(TextureKind::Curves);
        Self {
            height: base.height,
            width: base.width,
            warp_sigma: base.warp_sigma,
            warp_amplitude: base.warp_amplitude,
            noise_sigma: base.noise_sigma,
            pairs: 60,
            landmarks: 25,
            sources: vec![TextureKind::Blobs, TextureKind::Checker, TextureKind::Ridges],
            target: TextureKind::Curves,
            seed: 0,
            textures: TextureKind::ALL.iter().map(|&k| (k, TextureParams::default_for(k))).collect(),
        }
    }
}

impl DataConfig {
    pub fn domain(&self, kind: TextureKind) -> DomainSpec {
        let texture = self
            .textures
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, p)| *p)
            .unwrap_or_else(|| TextureParams::default_for(kind));
        DomainSpec {
            kind,
            texture,
            warp_sigma: self.warp_sigma,
            warp_amplitude: self.warp_amplitude,
            noise_sigma: self.noise_sigma,
            height: self.height,
            width: self.width,
        }
    }

    /// Synthetic task for `kind`, seeded from the data seed and the kind.
    pub fn task(&self, kind: TextureKind) -> TaskSpec {
        let index = TextureKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64;
        let mut spec = TaskSpec::synthetic(kind.name(), self.domain(kind), self.pairs, derive_seed(self.seed, &[index]));
        if let metareg::data::TaskSource::Synthetic { landmarks, .. } = &mut spec.source {
            *landmarks = self.landmarks;
        }
        spec
    }

    pub fn source_tasks(&self) -> Vec<TaskSpec> {
        self.sources.iter().map(|&k| self.task(k)).collect()
    }

    pub fn target_task(&self) -> TaskSpec {
        self.task(self.target)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub arms: Vec<ArmKind>,
    pub model_epochs: Vec<usize>,
    pub fine_tune_epochs: Vec<usize>,
    pub ours_epochs: Vec<usize>,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    pub curve_every: usize,
    pub vary_data: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            arms: ArmKind::ALL.to_vec(),
            model_epochs: vec![200],
            fine_tune_epochs: vec![10, 200],
            ours_epochs: vec![10, 200],
            seeds: vec![0, 1, 2, 3, 4],
            test_fraction: 0.2,
            curve_every: 10,
            vary_data: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub finetune_epochs: usize,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            precision: Precision::F32,
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            finetune_epochs: 10,
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_kind(key: &str, value: &str) -> Result<TextureKind> {
    value.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

fn parse_encoder(key: &str, value: &str) -> Result<Vec<EncoderLevel>> {
    value
        .split(',')
        .map(str::trim)
        .map(|level| {
            let (c, s) = level
                .split_once('s')
                .ok_or_else(|| Error::Config(format!("{key}: level {level:?} must look like 16s2")))?;
            Ok(EncoderLevel::new(parse(key, c)?, parse(key, s)?))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} must be key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "run.seed" => self.seed = parse(key, value)?,
            "run.workers" => self.workers = parse(key, value)?,
            "run.precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::Config(format!("{key}: expected f32 or f64, got {value:?}"))),
                }
            }
            "model.preset" => {
                self.arch = match value {
                    "desk" => ArchSpec::desk(),
                    "compact" => ArchSpec::compact(),
                    "tiny" => ArchSpec::tiny(),
                    _ => return Err(Error::Config(format!("{key}: unknown preset {value:?}"))),
                }
            }
            "model.encoder" => self.arch.encoder = parse_encoder(key, value)?,
            "model.decoder" => self.arch.decoder = parse_list(key, value)?,
            "model.leaky_slope" => self.arch.leaky_slope = parse(key, value)?,
            "model.final_zero_init" => self.arch.final_zero_init = parse_bool(key, value)?,
            "loss.window" => t.loss.window = parse(key, value)?,
            "loss.lambda" => t.loss.lambda = parse(key, value)?,
            "loss.eps" => t.loss.eps = parse(key, value)?,
            "train.inner_lr" => t.inner_lr = parse(key, value)?,
            "train.meta_alpha" => t.meta_alpha = parse(key, value)?,
            "train.meta_batch" => t.meta_batch = parse(key, value)?,
            "train.inner_steps" => t.inner_steps = parse(key, value)?,
            "train.iterations" => t.iterations = parse(key, value)?,
            "train.pretrain_steps" => t.pretrain_steps = parse(key, value)?,
            "train.outer_adam" => t.outer_adam = parse_bool(key, value)?,
            "train.inner_pairs" => t.inner_pairs = value.parse::<InnerPairs>()?,
            "train.early_stop" => t.early_stop = parse_bool(key, value)?,
            "train.finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "data.height" => self.data.height = parse(key, value)?,
            "data.width" => self.data.width = parse(key, value)?,
            "data.warp_sigma" => self.data.warp_sigma = parse(key, value)?,
            "data.warp_amplitude" => self.data.warp_amplitude = parse(key, value)?,
            "data.noise_sigma" => self.data.noise_sigma = parse(key, value)?,
            "data.pairs" => self.data.pairs = parse(key, value)?,
            "data.landmarks" => self.data.landmarks = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "data.target" => self.data.target = parse_kind(key, value)?,
            "data.sources" => {
                self.data.sources = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_kind(key, s))
                    .collect::<Result<_>>()?
            }
            "eval.arms" => {
                self.eval.arms = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<ArmKind>().map_err(|e| Error::Config(format!("{key}: {e}"))))
                    .collect::<Result<_>>()?
            }
            "eval.model_epochs" => self.eval.model_epochs = parse_list(key, value)?,
            "eval.fine_tune_epochs" => self.eval.fine_tune_epochs = parse_list(key, value)?,
            "eval.ours_epochs" => self.eval.ours_epochs = parse_list(key, value)?,
            "eval.seeds" => self.eval.seeds = parse_list(key, value)?,
            "eval.test_fraction" => self.eval.test_fraction = parse(key, value)?,
            "eval.curve_every" => self.eval.curve_every = parse(key, value)?,
            "eval.vary_data" => self.eval.vary_data = parse_bool(key, value)?,
            _ => return self.set_texture(key, value),
        }
        Ok(())
    }

    fn set_texture(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key {key:?}"));
        let rest = key.strip_prefix("texture.").ok_or_else(unknown)?;
        let (kind, field) = rest.split_once('.').ok_or_else(unknown)?;
        let kind: TextureKind = kind.parse().map_err(|_| unknown())?;
        let v: f64 = parse(key, value)?;
        let slot = self
            .data
            .textures
            .iter_mut()
            .find(|(k, _)| *k == kind)
            .ok_or_else(unknown)?;
        match field {
            "density" => slot.1.density = v,
            "thickness" => slot.1.thickness = v,
            "frequency" => slot.1.frequency = v,
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`RunConfig::parse_str`] accepts.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let enc: Vec<String> = self.arch.encoder.iter().map(|l| format!("{}s{}", l.channels, l.stride)).collect();
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("run.seed", self.seed.to_string());
        line("run.workers", self.workers.to_string());
        line("run.precision", if self.precision == Precision::F32 { "f32" } else { "f64" }.into());
        line("model.encoder", enc.join(","));
        line("model.decoder", join(&self.arch.decoder));
        line("model.leaky_slope", self.arch.leaky_slope.to_string());
        line("model.final_zero_init", self.arch.final_zero_init.to_string());
        line("loss.window", t.loss.window.to_string());
        line("loss.lambda", t.loss.lambda.to_string());
        line("loss.eps", t.loss.eps.to_string());
        line("train.inner_lr", t.inner_lr.to_string());
        line("train.meta_alpha", t.meta_alpha.to_string());
        line("train.meta_batch", t.meta_batch.to_string());
        line("train.inner_steps", t.inner_steps.to_string());
        line("train.iterations", t.iterations.to_string());
        line("train.pretrain_steps", t.pretrain_steps.to_string());
        line("train.outer_adam", t.outer_adam.to_string());
        line("train.inner_pairs", t.inner_pairs.to_string());
        line("train.early_stop", t.early_stop.to_string());
        line("train.finetune_epochs", self.finetune_epochs.to_string());
        line("data.height", self.data.height.to_string());
        line("data.width", self.data.width.to_string());
        line("data.warp_sigma", self.data.warp_sigma.to_string());
        line("data.warp_amplitude", self.data.warp_amplitude.to_string());
        line("data.noise_sigma", self.data.noise_sigma.to_string());
        line("data.pairs", self.data.pairs.to_string());
        line("data.landmarks", self.data.landmarks.to_string());
        line("data.seed", self.data.seed.to_string());
        line("data.sources", join(&self.data.sources));
        line("data.target", self.data.target.to_string());
        for (k, p) in &self.data.textures {
            line(&format!("texture.{k}.density"), p.density.to_string());
            line(&format!("texture.{k}.thickness"), p.thickness.to_string());
            line(&format!("texture.{k}.frequency"), p.frequency.to_string());
        }
        line("eval.arms", join(&self.eval.arms));
        line("eval.model_epochs", join(&self.eval.model_epochs));
        line("eval.fine_tune_epochs", join(&self.eval.fine_tune_epochs));
        line("eval.ours_epochs", join(&self.eval.ours_epochs));
        line("eval.seeds", join(&self.eval.seeds));
        line("eval.test_fraction", self.eval.test_fraction.to_string());
        line("eval.curve_every", self.eval.curve_every.to_string());
        line("eval.vary_data", self.eval.vary_data.to_string());
        out
    }

    /// Training settings with the run seed and worker count applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, workers: self.workers, ..self.train.clone() }
    }

    pub fn arms(&self) -> Vec<ArmSpec> {
        self.eval
            .arms
            .iter()
            .map(|&kind| {
                let epochs = match kind {
                    ArmKind::ModelSeen | ArmKind::ModelUnseen => self.eval.model_epochs.clone(),
                    ArmKind::FineTune => self.eval.fine_tune_epochs.clone(),
                    ArmKind::Ours => self.eval.ours_epochs.clone(),
                    ArmKind::Transfer | ArmKind::NotDeformed => Vec::new(),
                };
                ArmSpec { kind, epochs }
            })
            .collect()
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            arch: self.arch.clone(),
            train: self.train_config(),
            seeds: self.eval.seeds.clone(),
            test_fraction: self.eval.test_fraction,
            curve_every: self.eval.curve_every,
            vary_data: self.eval.vary_data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train_config().validate()?;
        let stride = self.arch.stride_product();
        if self.data.height % stride != 0 || self.data.width % stride != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} is not divisible by the network stride {stride}",
                self.data.height, self.data.width
            )));
        }
        for kind in self.data.sources.iter().chain([&self.data.target]) {
            self.data.domain(*kind).validate()?;
        }
        if self.data.sources.contains(&self.data.target) {
            return Err(Error::Config(format!("target domain {} is also a source", self.data.target)));
        }
        Ok(())
    }
}
