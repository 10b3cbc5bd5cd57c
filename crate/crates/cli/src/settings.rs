//! The flat key=value configuration space behind `--config` files and
//! `--set` overrides.
//!
//! File format: `key = value` lines, optional `[section]` headers that
//! prefix the keys that follow (`[train]` + `epochs = 20` means
//! `train.epochs = 20`), `#` comments. Unknown keys are rejected. The
//! effective configuration printed at startup is itself a valid config
//! file, so every run is reproducible from its own dump.

use std::fmt::Write as _;
use std::path::Path;

use scatterhsd::corpus::{gen_split, gen_split_for, DatasetSplit, ShapeClass};
use scatterhsd::downstream::{HeadMode, HfeConfig, LossWeights};
use scatterhsd::scatter::ScatterConfig;
use scatterhsd::trainer::{Regularizer, Schedule, TaskMode, TrainConfig};
use scatterhsd::upstream::UpstreamConfig;
use scatterhsd::{Error, Result};

#[derive(Debug, Clone)]
pub struct Settings {
    pub corpus_classes: usize,
    pub corpus_per_class: usize,
    pub corpus_seed: u64,

    pub scatter_seeds: usize,
    pub scatter_neighbors: usize,
    pub scatter_source_size: usize,
    pub scatter_views: usize,
    pub scatter_rng_seed: u64,

    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_lr_init: f64,
    pub train_schedule: String,
    pub train_step_factor: f64,
    pub train_step_every: usize,
    pub train_cosine_min_scale: f64,
    pub train_alpha: f64,
    pub train_beta: f64,
    pub train_gamma: f64,
    pub train_seed: u64,
    pub train_mode: String,
    pub train_regularizer: String,
    pub train_cascade_grad: bool,
    pub train_trace_objects: usize,
    pub train_bins: usize,

    pub model_encoder_widths: Vec<usize>,
    pub model_coarse_points: usize,
    pub model_split_ratios: Vec<usize>,
    pub model_target_points: usize,
    pub model_refine_hidden: usize,
    pub model_levels: usize,
    pub model_k_per_level: Vec<usize>,
    pub model_centroids_per_level: Vec<usize>,
    pub model_level_widths: Vec<usize>,
    pub model_head_dim: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let up = UpstreamConfig::default();
        let hfe = HfeConfig::default();
        let w = LossWeights::default();
        Self {
            corpus_classes: 8,
            corpus_per_class: 15,
            corpus_seed: 42,
            scatter_seeds: 64,
            scatter_neighbors: 8,
            scatter_source_size: 10_000,
            scatter_views: 8,
            scatter_rng_seed: 0,
            train_epochs: 40,
            train_batch_size: 8,
            train_lr_init: 0.001,
            train_schedule: "step".into(),
            train_step_factor: 0.8,
            train_step_every: 50,
            train_cosine_min_scale: 0.005,
            train_alpha: w.alpha,
            train_beta: w.beta,
            train_gamma: w.gamma,
            train_seed: 0,
            train_mode: "classify".into(),
            train_regularizer: "hsd".into(),
            train_cascade_grad: true,
            train_trace_objects: 24,
            train_bins: 6,
            model_encoder_widths: up.encoder_widths,
            model_coarse_points: up.coarse_points,
            model_split_ratios: up.split_ratios,
            model_target_points: up.target_points,
            model_refine_hidden: up.refine_hidden,
            model_levels: hfe.levels,
            model_k_per_level: hfe.k_per_level,
            model_centroids_per_level: hfe.centroids_per_level,
            model_level_widths: hfe.level_widths,
            model_head_dim: 64,
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidInput(format!("bad list entry {v:?}: {e}")))
        })
        .collect()
}

fn list_to_string(list: &[usize]) -> String {
    list.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Settings {
    /// Applies one `key=value` assignment; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        macro_rules! parse {
            () => {
                value
                    .parse()
                    .map_err(|e| Error::InvalidInput(format!("bad value for {key}: {e}")))?
            };
        }
        match key {
            "corpus.classes" => self.corpus_classes = parse!(),
            "corpus.per_class" => self.corpus_per_class = parse!(),
            "corpus.seed" => self.corpus_seed = parse!(),
            "scatter.seeds" => self.scatter_seeds = parse!(),
            "scatter.neighbors" => self.scatter_neighbors = parse!(),
            "scatter.source_size" => self.scatter_source_size = parse!(),
            "scatter.views" => self.scatter_views = parse!(),
            "scatter.rng_seed" => self.scatter_rng_seed = parse!(),
            "train.epochs" => self.train_epochs = parse!(),
            "train.batch_size" => self.train_batch_size = parse!(),
            "train.lr_init" => self.train_lr_init = parse!(),
            "train.schedule" => self.train_schedule = value.to_string(),
            "train.step_factor" => self.train_step_factor = parse!(),
            "train.step_every" => self.train_step_every = parse!(),
            "train.cosine_min_scale" => self.train_cosine_min_scale = parse!(),
            "train.alpha" => self.train_alpha = parse!(),
            "train.beta" => self.train_beta = parse!(),
            "train.gamma" => self.train_gamma = parse!(),
            "train.seed" => self.train_seed = parse!(),
            "train.mode" => self.train_mode = value.to_string(),
            "train.regularizer" => self.train_regularizer = value.to_string(),
            "train.cascade_grad" => self.train_cascade_grad = parse!(),
            "train.trace_objects" => self.train_trace_objects = parse!(),
            "train.bins" => self.train_bins = parse!(),
            "model.encoder_widths" => self.model_encoder_widths = parse_list(value)?,
            "model.coarse_points" => self.model_coarse_points = parse!(),
            "model.split_ratios" => self.model_split_ratios = parse_list(value)?,
            "model.target_points" => self.model_target_points = parse!(),
            "model.refine_hidden" => self.model_refine_hidden = parse!(),
            "model.levels" => self.model_levels = parse!(),
            "model.k_per_level" => self.model_k_per_level = parse_list(value)?,
            "model.centroids_per_level" => self.model_centroids_per_level = parse_list(value)?,
            "model.level_widths" => self.model_level_widths = parse_list(value)?,
            "model.head_dim" => self.model_head_dim = parse!(),
            _ => return Err(Error::InvalidInput(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Loads `key = value` assignments with optional `[section]` prefixes.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected key=value, found {line:?}"),
                });
            };
            let key = key.trim();
            let full_key = if section.is_empty() || key.contains('.') {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.apply(&full_key, value).map_err(|e| Error::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` override strings (from `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for entry in overrides {
            let Some((key, value)) = entry.split_once('=') else {
                return Err(Error::InvalidInput(format!(
                    "override {entry:?} is not of the form key=value"
                )));
            };
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    /// The effective configuration as a reloadable config file.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "corpus.classes = {}", self.corpus_classes);
        let _ = writeln!(out, "corpus.per_class = {}", self.corpus_per_class);
        let _ = writeln!(out, "corpus.seed = {}", self.corpus_seed);
        let _ = writeln!(out, "scatter.seeds = {}", self.scatter_seeds);
        let _ = writeln!(out, "scatter.neighbors = {}", self.scatter_neighbors);
        let _ = writeln!(out, "scatter.source_size = {}", self.scatter_source_size);
        let _ = writeln!(out, "scatter.views = {}", self.scatter_views);
        let _ = writeln!(out, "scatter.rng_seed = {}", self.scatter_rng_seed);
        let _ = writeln!(out, "train.epochs = {}", self.train_epochs);
        let _ = writeln!(out, "train.batch_size = {}", self.train_batch_size);
        let _ = writeln!(out, "train.lr_init = {}", self.train_lr_init);
        let _ = writeln!(out, "train.schedule = {}", self.train_schedule);
        let _ = writeln!(out, "train.step_factor = {}", self.train_step_factor);
        let _ = writeln!(out, "train.step_every = {}", self.train_step_every);
        let _ = writeln!(out, "train.cosine_min_scale = {}", self.train_cosine_min_scale);
        let _ = writeln!(out, "train.alpha = {}", self.train_alpha);
        let _ = writeln!(out, "train.beta = {}", self.train_beta);
        let _ = writeln!(out, "train.gamma = {}", self.train_gamma);
        let _ = writeln!(out, "train.seed = {}", self.train_seed);
        let _ = writeln!(out, "train.mode = {}", self.train_mode);
        let _ = writeln!(out, "train.regularizer = {}", self.train_regularizer);
        let _ = writeln!(out, "train.cascade_grad = {}", self.train_cascade_grad);
        let _ = writeln!(out, "train.trace_objects = {}", self.train_trace_objects);
        let _ = writeln!(out, "train.bins = {}", self.train_bins);
        let _ = writeln!(out, "model.encoder_widths = {}", list_to_string(&self.model_encoder_widths));
        let _ = writeln!(out, "model.coarse_points = {}", self.model_coarse_points);
        let _ = writeln!(out, "model.split_ratios = {}", list_to_string(&self.model_split_ratios));
        let _ = writeln!(out, "model.target_points = {}", self.model_target_points);
        let _ = writeln!(out, "model.refine_hidden = {}", self.model_refine_hidden);
        let _ = writeln!(out, "model.levels = {}", self.model_levels);
        let _ = writeln!(out, "model.k_per_level = {}", list_to_string(&self.model_k_per_level));
        let _ = writeln!(
            out,
            "model.centroids_per_level = {}",
            list_to_string(&self.model_centroids_per_level)
        );
        let _ = writeln!(out, "model.level_widths = {}", list_to_string(&self.model_level_widths));
        let _ = writeln!(out, "model.head_dim = {}", self.model_head_dim);
        out
    }

    pub fn task_mode(&self) -> Result<TaskMode> {
        match self.train_mode.as_str() {
            "classify" => Ok(TaskMode::Classify),
            "segment" => Ok(TaskMode::Segment),
            other => Err(Error::InvalidInput(format!(
                "train.mode must be classify or segment, got {other:?}"
            ))),
        }
    }

    pub fn scatter_config(&self) -> Result<ScatterConfig> {
        ScatterConfig::new(
            self.scatter_seeds,
            self.scatter_neighbors,
            self.scatter_source_size,
            self.scatter_rng_seed,
        )
    }

    /// Builds the dataset split: all requested classes for classification,
    /// the composite classes for segmentation.
    pub fn split(&self) -> Result<DatasetSplit> {
        match self.task_mode()? {
            TaskMode::Classify => gen_split(self.corpus_classes, self.corpus_per_class, self.corpus_seed),
            TaskMode::Segment => gen_split_for(
                &[ShapeClass::Mug, ShapeClass::Hammer],
                self.corpus_per_class,
                self.corpus_seed,
            ),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let schedule = match self.train_schedule.as_str() {
            "step" => Schedule::StepDecay {
                factor: self.train_step_factor,
                every: self.train_step_every,
            },
            "cosine" => Schedule::Cosine {
                min_scale: self.train_cosine_min_scale,
            },
            other => {
                return Err(Error::InvalidInput(format!(
                    "train.schedule must be step or cosine, got {other:?}"
                )))
            }
        };
        let regularizer = match self.train_regularizer.as_str() {
            "baseline" => Regularizer::Baseline,
            "dsn" => Regularizer::Dsn,
            "hsd" => Regularizer::Hsd,
            other => {
                return Err(Error::InvalidInput(format!(
                    "train.regularizer must be baseline, dsn, or hsd, got {other:?}"
                )))
            }
        };
        let mode = self.task_mode()?;
        let classes = match mode {
            TaskMode::Classify => self.corpus_classes,
            TaskMode::Segment => 2,
        };
        let cfg = TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lr_init: self.train_lr_init,
            schedule,
            weights: LossWeights {
                alpha: self.train_alpha,
                beta: self.train_beta,
                gamma: self.train_gamma,
            },
            views: self.scatter_views,
            seed: self.train_seed,
            mode,
            regularizer,
            stream: scatterhsd::trainer::StreamMode::Joint,
            cascade_grad: self.train_cascade_grad,
            upstream: UpstreamConfig {
                encoder_widths: self.model_encoder_widths.clone(),
                coarse_points: self.model_coarse_points,
                split_ratios: self.model_split_ratios.clone(),
                target_points: self.model_target_points,
                refine_hidden: self.model_refine_hidden,
            },
            hfe: HfeConfig {
                levels: self.model_levels,
                k_per_level: self.model_k_per_level.clone(),
                centroids_per_level: self.model_centroids_per_level.clone(),
                level_widths: self.model_level_widths.clone(),
                head_dim: self.model_head_dim,
                classes,
                heads: HeadMode::PerLevel,
            },
            bins: self.train_bins,
            trace_objects: self.train_trace_objects,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let mut s = Settings::default();
        assert!(s.apply("train.warp_speed", "9").is_err());
    }

    #[test]
    fn dump_reloads_identically() {
        let mut s = Settings::default();
        s.apply("train.gamma", "1.0").unwrap();
        s.apply("model.level_widths", "16,16,16").unwrap();
        let dump = s.dump();
        let dir = std::env::temp_dir().join(format!("shsd-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.txt");
        std::fs::write(&path, &dump).unwrap();
        let mut reloaded = Settings::default();
        reloaded.load_file(&path).unwrap();
        assert_eq!(reloaded.dump(), dump);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sections_prefix_keys() {
        let dir = std::env::temp_dir().join(format!("shsd-sections-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.txt");
        std::fs::write(&path, "[train]\nepochs = 7\ngamma = 1.0\n[scatter]\nseeds = 32\n").unwrap();
        let mut s = Settings::default();
        s.load_file(&path).unwrap();
        assert_eq!(s.train_epochs, 7);
        assert_eq!(s.train_gamma, 1.0);
        assert_eq!(s.scatter_seeds, 32);
        std::fs::remove_dir_all(&dir).ok();
    }
}
