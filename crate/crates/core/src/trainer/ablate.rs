//! The regularization ablation suite: baseline (single head), deep
//! supervision, same-code-length distillation, and full distillation, each
//! trained over a shared set of seeds and laid out one row per
//! configuration.

use rayon::prelude::*;

use crate::corpus::DatasetSplit;
use crate::scatter::ScatterConfig;
use crate::{Error, Result};

use super::eval::{evaluate, pool};
use super::{prepare_objects, Model, Regularizer, TrainConfig, train};

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationConfig {
    /// Full hierarchy, one deepest head.
    Baseline,
    /// Per-level heads, hard labels only.
    Dsn,
    /// Distillation with equal pre-alignment widths at every level.
    Scl,
    /// Distillation with growing widths (the full setting).
    FullHsd,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::Baseline,
        AblationConfig::Dsn,
        AblationConfig::Scl,
        AblationConfig::FullHsd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationConfig::Baseline => "baseline",
            AblationConfig::Dsn => "dsn",
            AblationConfig::Scl => "scl",
            AblationConfig::FullHsd => "full_hsd",
        }
    }

    /// Derives the training configuration for this ablation row from the
    /// shared base.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationConfig::Baseline => cfg.regularizer = Regularizer::Baseline,
            AblationConfig::Dsn => cfg.regularizer = Regularizer::Dsn,
            AblationConfig::Scl => {
                cfg.regularizer = Regularizer::Hsd;
                cfg.hfe = cfg.hfe.with_equal_widths();
            }
            AblationConfig::FullHsd => cfg.regularizer = Regularizer::Hsd,
        }
        cfg
    }
}

/// One trained-and-evaluated run.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: &'static str,
    pub seed: u64,
    pub per_level_oa: Vec<f64>,
    pub per_level_macc: Vec<f64>,
    /// Teacher-head overall accuracy.
    pub oa: f64,
    pub macc: f64,
    pub cd_x1000: f64,
}

/// All runs plus per-config medians.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn median_oa(&self, config: AblationConfig) -> Option<f64> {
        let mut values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.config == config.name())
            .map(|r| r.oa)
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Some(values[values.len() / 2])
    }

    pub fn median_cd(&self, config: AblationConfig) -> Option<f64> {
        let mut values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.config == config.name())
            .map(|r| r.cd_x1000)
            .collect();
        if values.is_empty() {
            return None;
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Some(values[values.len() / 2])
    }
}

/// Trains and evaluates one (config, seed) cell on pre-materialized
/// objects.
pub fn run_cell(
    config: AblationConfig,
    seed: u64,
    objects: &[super::TrainObject],
    test: &[crate::corpus::ShapeSpec],
    scatter: &ScatterConfig,
    base: &TrainConfig,
) -> Result<AblationRow> {
    let mut cfg = config.apply(base);
    cfg.seed = seed;
    let mut model = Model::build(&cfg)?;
    train(&mut model, objects, &cfg, None)?;
    let report = evaluate(&model, test, scatter, &cfg)?;
    Ok(AblationRow {
        config: config.name(),
        seed,
        per_level_oa: report.per_level_oa.clone(),
        per_level_macc: report.per_level_macc.clone(),
        oa: report.oa.ok_or_else(|| Error::invalid("classification report expected"))?,
        macc: report.macc.expect("classification report"),
        cd_x1000: report.cd_x1000,
    })
}

/// Runs the full suite: every configuration in `suite` crossed with every
/// seed. The corpus, scattered views, and augmentation seeds are prepared
/// once and shared across all cells.
pub fn ablate(
    suite: &[AblationConfig],
    seeds: &[u64],
    split: &DatasetSplit,
    scatter: &ScatterConfig,
    base: &TrainConfig,
) -> Result<AblationTable> {
    if suite.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one config and seed"));
    }
    let objects = prepare_objects(&split.train, scatter, base.views, base.upstream.target_points)?;
    let cells: Vec<(AblationConfig, u64)> = suite
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let rows: Vec<Result<AblationRow>> = pool().install(|| {
        cells
            .par_iter()
            .map(|&(config, seed)| run_cell(config, seed, &objects, &split.test, scatter, base))
            .collect()
    });
    Ok(AblationTable {
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}
