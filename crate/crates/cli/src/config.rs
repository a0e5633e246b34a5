//! Layered run configuration.
//!
//! One plain-text file with section-prefixed keys (`world.h = 6`), `#`
//! comments, and command-line `--set key=value` overrides applied on top.
//! Every command echoes the fully resolved configuration into its output
//! directory for provenance. Unknown keys are errors.

use anyhow::{anyhow, bail, Context, Result};
use hoi_idiff_core::denoiser::{ModelConfig, Patchify};
use hoi_idiff_core::diffusion::{self, NoiseSchedule};
use hoi_idiff_core::infer::{InitKind, ReverseMode, ScoreMode};
use hoi_idiff_core::train::TrainConfig;
use hoi_idiff_core::world::WorldConfig;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub steps: usize,
    pub trials: u64,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: diffusion::DEFAULT_STEPS,
            trials: diffusion::DEFAULT_TRIALS,
            beta_start: diffusion::DEFAULT_BETA_START,
            beta_end: diffusion::DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_step: usize,
    pub patchify: Patchify,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            d_model: d.d_model,
            blocks: d.blocks,
            heads: d.heads,
            d_step: d.d_step,
            patchify: d.patchify,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub mode: ReverseMode,
    pub init: InitKind,
    pub score_mode: ScoreMode,
    pub seed: u64,
    /// Worker cap; 0 means use HOI_IDIFF_THREADS or all cores.
    pub threads: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: ReverseMode::Deterministic,
            init: InitKind::NoisyPrior,
            score_mode: ScoreMode::PresenceTimesObject,
            seed: 1,
            threads: 0,
        }
    }
}

/// Sizes for the `diag` statistical suite (defaults match the verification
/// suite's pinned sizes).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagSection {
    pub conservation_chains: u64,
    pub terminal_pairs: u64,
    pub terminal_samples: u64,
    pub moment_samples: u64,
    pub tv_chains: u64,
    pub seed: u64,
}

impl Default for DiagSection {
    fn default() -> Self {
        Self {
            conservation_chains: 1000,
            terminal_pairs: 20,
            terminal_samples: 10_000,
            moment_samples: 100_000,
            tv_chains: 1_000_000,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub diag: DiagSection,
}

impl RunConfig {
    /// Parses a config file (if given) and applies `--set` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), lineno + 1))?;
                cfg.apply(key.trim(), value.trim())
                    .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            }
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set needs key=value, got {item:?}"))?;
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("--set {item}"))?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
        }
        match key {
            "world.h" => self.world.h = parse(key, value)?,
            "world.w" => self.world.w = parse(key, value)?,
            "world.d_appearance" => self.world.d_appearance = parse(key, value)?,
            "world.pairs_per_scene.min" => self.world.pairs_per_scene.0 = parse(key, value)?,
            "world.pairs_per_scene.max" => self.world.pairs_per_scene.1 = parse(key, value)?,
            "world.scenes" => self.world.scenes = parse(key, value)?,
            "world.appearance_snr" => self.world.appearance_snr = parse(key, value)?,
            "world.prior_temperature" => self.world.prior_temperature = parse(key, value)?,
            "world.prior_error_rate" => self.world.prior_error_rate = parse(key, value)?,
            "world.interaction_rate" => self.world.interaction_rate = parse(key, value)?,
            "world.train_fraction" => self.world.train_fraction = parse(key, value)?,
            "world.seed" => self.world.seed = parse(key, value)?,
            "schedule.steps" => self.schedule.steps = parse(key, value)?,
            "schedule.trials" => self.schedule.trials = parse(key, value)?,
            "schedule.beta_start" => self.schedule.beta_start = parse(key, value)?,
            "schedule.beta_end" => self.schedule.beta_end = parse(key, value)?,
            "model.d_model" => self.model.d_model = parse(key, value)?,
            "model.blocks" => self.model.blocks = parse(key, value)?,
            "model.heads" => self.model.heads = parse(key, value)?,
            "model.d_step" => self.model.d_step = parse(key, value)?,
            "model.patchify" => self.model.patchify = parse(key, value)?,
            "train.m_samples" => self.train.m_samples = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.loss_mode" => self.train.loss_mode = parse(key, value)?,
            "train.step_mode" => self.train.step_mode = parse(key, value)?,
            "train.process" => self.train.process = parse(key, value)?,
            "eval.mode" => {
                self.eval.mode = match value {
                    "deterministic" => ReverseMode::Deterministic,
                    "stochastic" => ReverseMode::Stochastic,
                    other => bail!("invalid eval.mode {other:?} (deterministic or stochastic)"),
                }
            }
            "eval.init" => {
                self.eval.init = match value {
                    "noisy" => InitKind::NoisyPrior,
                    "uniform" => InitKind::Uniform,
                    other => bail!("invalid eval.init {other:?} (noisy or uniform)"),
                }
            }
            "eval.score_mode" => {
                self.eval.score_mode = match value {
                    "presence-times-object" => ScoreMode::PresenceTimesObject,
                    "presence-only" => ScoreMode::PresenceOnly,
                    other => bail!("invalid eval.score_mode {other:?}"),
                }
            }
            "eval.seed" => self.eval.seed = parse(key, value)?,
            "eval.threads" => self.eval.threads = parse(key, value)?,
            "diag.conservation_chains" => self.diag.conservation_chains = parse(key, value)?,
            "diag.terminal_pairs" => self.diag.terminal_pairs = parse(key, value)?,
            "diag.terminal_samples" => self.diag.terminal_samples = parse(key, value)?,
            "diag.moment_samples" => self.diag.moment_samples = parse(key, value)?,
            "diag.tv_chains" => self.diag.tv_chains = parse(key, value)?,
            "diag.seed" => self.diag.seed = parse(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies an `--ablation` shorthand.
    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        match name {
            "gaussian-process" => self.apply("train.process", "gaussian"),
            "uniform-init" => self.apply("eval.init", "uniform"),
            "local-patch" => self.apply("model.patchify", "local"),
            "horizontal-only" => self.apply("model.patchify", "horizontal-only"),
            "vertical-only" => self.apply("model.patchify", "vertical-only"),
            other => bail!(
                "unknown ablation {other:?} (expected gaussian-process, uniform-init, local-patch, horizontal-only or vertical-only)"
            ),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(
            self.schedule.steps,
            self.schedule.trials,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )?)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            h: self.world.h,
            w: self.world.w,
            d_model: self.model.d_model,
            blocks: self.model.blocks,
            heads: self.model.heads,
            d_appearance: self.world.d_appearance,
            d_step: self.model.d_step,
            patchify: self.model.patchify,
        }
    }

    /// Worker count for evaluation: explicit config, else HOI_IDIFF_THREADS,
    /// else available parallelism.
    pub fn eval_threads(&self) -> usize {
        if self.eval.threads > 0 {
            return self.eval.threads;
        }
        if let Ok(v) = std::env::var("HOI_IDIFF_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    return n;
                }
            }
        }
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }

    /// The fully resolved key-value listing, echoed into output directories.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let _ = writeln!(s, "world.h = {}", w.h);
        let _ = writeln!(s, "world.w = {}", w.w);
        let _ = writeln!(s, "world.d_appearance = {}", w.d_appearance);
        let _ = writeln!(s, "world.pairs_per_scene.min = {}", w.pairs_per_scene.0);
        let _ = writeln!(s, "world.pairs_per_scene.max = {}", w.pairs_per_scene.1);
        let _ = writeln!(s, "world.scenes = {}", w.scenes);
        let _ = writeln!(s, "world.appearance_snr = {}", w.appearance_snr);
        let _ = writeln!(s, "world.prior_temperature = {}", w.prior_temperature);
        let _ = writeln!(s, "world.prior_error_rate = {}", w.prior_error_rate);
        let _ = writeln!(s, "world.interaction_rate = {}", w.interaction_rate);
        let _ = writeln!(s, "world.train_fraction = {}", w.train_fraction);
        let _ = writeln!(s, "world.seed = {}", w.seed);
        let c = &self.schedule;
        let _ = writeln!(s, "schedule.steps = {}", c.steps);
        let _ = writeln!(s, "schedule.trials = {}", c.trials);
        let _ = writeln!(s, "schedule.beta_start = {}", c.beta_start);
        let _ = writeln!(s, "schedule.beta_end = {}", c.beta_end);
        let m = &self.model;
        let _ = writeln!(s, "model.d_model = {}", m.d_model);
        let _ = writeln!(s, "model.blocks = {}", m.blocks);
        let _ = writeln!(s, "model.heads = {}", m.heads);
        let _ = writeln!(s, "model.d_step = {}", m.d_step);
        let _ = writeln!(s, "model.patchify = {}", m.patchify.name());
        let t = &self.train;
        let _ = writeln!(s, "train.m_samples = {}", t.m_samples);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "train.weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "train.epochs = {}", t.epochs);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(
            s,
            "train.loss_mode = {}",
            match t.loss_mode {
                hoi_idiff_core::train::LossMode::CleanTarget => "clean-target",
                hoi_idiff_core::train::LossMode::PrevStepTarget => "prev-step-target",
                hoi_idiff_core::train::LossMode::Both => "both",
            }
        );
        let _ = writeln!(
            s,
            "train.step_mode = {}",
            match t.step_mode {
                hoi_idiff_core::train::StepMode::Sampled => "sampled",
                hoi_idiff_core::train::StepMode::FullSweep => "full-sweep",
            }
        );
        let _ = writeln!(
            s,
            "train.process = {}",
            match t.process {
                hoi_idiff_core::train::ProcessKind::Multinomial => "multinomial",
                hoi_idiff_core::train::ProcessKind::Gaussian => "gaussian",
            }
        );
        let e = &self.eval;
        let _ = writeln!(
            s,
            "eval.mode = {}",
            match e.mode {
                ReverseMode::Deterministic => "deterministic",
                ReverseMode::Stochastic => "stochastic",
            }
        );
        let _ = writeln!(
            s,
            "eval.init = {}",
            match e.init {
                InitKind::NoisyPrior => "noisy",
                InitKind::Uniform => "uniform",
            }
        );
        let _ = writeln!(
            s,
            "eval.score_mode = {}",
            match e.score_mode {
                ScoreMode::PresenceTimesObject => "presence-times-object",
                ScoreMode::PresenceOnly => "presence-only",
            }
        );
        let _ = writeln!(s, "eval.seed = {}", e.seed);
        let _ = writeln!(s, "eval.threads = {}", e.threads);
        let d = &self.diag;
        let _ = writeln!(s, "diag.conservation_chains = {}", d.conservation_chains);
        let _ = writeln!(s, "diag.terminal_pairs = {}", d.terminal_pairs);
        let _ = writeln!(s, "diag.terminal_samples = {}", d.terminal_samples);
        let _ = writeln!(s, "diag.moment_samples = {}", d.moment_samples);
        let _ = writeln!(s, "diag.tv_chains = {}", d.tv_chains);
        let _ = writeln!(s, "diag.seed = {}", d.seed);
        s
    }

    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.resolved.cfg"), self.dump())?;
        Ok(())
    }
}
