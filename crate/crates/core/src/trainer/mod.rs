//! End-to-end joint training: scatter a view, reconstruct it, push the
//! reconstruction through the hierarchical heads, combine the losses, and
//! step Adam — one backward pass through both streams.
//!
//! Everything is deterministic under a fixed seed: object order, view
//! sampling, parameter init, and the optimizer trajectory, so a retrain
//! reproduces the checkpoint hash bit for bit.

mod ablate;
mod eval;
pub mod logs;

pub use ablate::{ablate, AblationConfig, AblationRow, AblationTable};
pub use eval::{
    classification_metrics, evaluate, expected_random_miou, iou_per_part, EvalReport,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, collect_grads, Adam, ParamStore, TapeParams, Tape, Tensor};
use crate::corpus::{gen_shape, ShapeSpec};
use crate::downstream::{
    ce_rows_mean, dsn_loss, hsd_kl_rows, joint_loss, kl_gap_values, Downstream, HeadMode,
    HfeConfig, LevelOutputs, LossBreakdown, LossWeights,
};
use crate::geometry::{nearest_map_points, PointCloud};
use crate::infoplane::{trace_epoch, EpochObservations, MITrace};
use crate::scatter::{mix_seed, multi_view, ScatterConfig};
use crate::upstream::{rec_loss, Upstream, UpstreamConfig};
use crate::{Error, Result};

const SALT_GT: u64 = 0x6712;
const SALT_SCATTER: u64 = 0x5ca7;
const SALT_SHUFFLE: u64 = 0x0e0e;

/// Learning-rate schedule over epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// lr(e) = lr_init * factor^floor(e / every).
    StepDecay { factor: f64, every: usize },
    /// Cosine annealing from lr_init down to min_scale * lr_init.
    Cosine { min_scale: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::StepDecay {
            factor: 0.8,
            every: 50,
        }
    }
}

impl Schedule {
    pub fn lr(&self, lr_init: f64, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            Schedule::StepDecay { factor, every } => {
                lr_init * factor.powi((epoch / every) as i32)
            }
            Schedule::Cosine { min_scale } => {
                let eta_min = min_scale * lr_init;
                let t = epoch as f64 / total_epochs.max(1) as f64;
                eta_min + 0.5 * (lr_init - eta_min) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Task selector: object classification or two-part segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Classify,
    Segment,
}

/// Which regularization scheme shapes the downstream objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    /// Single deepest head, no extra supervision.
    Baseline,
    /// Per-level heads, cross-entropy only (the explicit deep-supervision
    /// path; equivalent to gamma = 1).
    Dsn,
    /// Per-level heads with teacher-to-student distillation.
    Hsd,
}

/// Which parts of the cascade receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// Both streams, single backward pass.
    Joint,
    /// Reconstruction only; the downstream never runs.
    UpstreamOnly,
    /// Downstream only: the upstream is frozen and the cascade gradient is
    /// severed (two-stage second phase).
    DownstreamFrozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub weights: LossWeights,
    /// Scattered views per object; epoch e trains on view e mod views.
    pub views: usize,
    pub seed: u64,
    pub mode: TaskMode,
    pub regularizer: Regularizer,
    pub stream: StreamMode,
    /// When false, the reconstruction is detached before the downstream, so
    /// no downstream gradient reaches the upstream.
    pub cascade_grad: bool,
    pub upstream: UpstreamConfig,
    pub hfe: HfeConfig,
    /// Bins for the information-plane discretization.
    pub bins: usize,
    /// Objects in the fixed per-epoch trace batch (0 disables tracing).
    pub trace_objects: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            lr_init: 0.001,
            schedule: Schedule::default(),
            weights: LossWeights::default(),
            views: 8,
            seed: 0,
            mode: TaskMode::Classify,
            regularizer: Regularizer::Hsd,
            stream: StreamMode::Joint,
            cascade_grad: true,
            upstream: UpstreamConfig::default(),
            // Desk-scale head width; the module default of 256 is reachable
            // through configuration.
            hfe: HfeConfig {
                head_dim: 64,
                ..HfeConfig::default()
            },
            bins: crate::infoplane::DEFAULT_BINS,
            trace_objects: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.views == 0 {
            return Err(Error::invalid("views must be at least 1"));
        }
        self.weights.validate()?;
        self.upstream.validate()?;
        self.hfe.validate()?;
        Ok(())
    }

    /// The weights actually applied given the regularizer choice.
    fn effective_weights(&self) -> LossWeights {
        match self.regularizer {
            Regularizer::Hsd => self.weights,
            // Baseline and DSN train on hard labels only.
            Regularizer::Baseline | Regularizer::Dsn => LossWeights {
                gamma: 1.0,
                ..self.weights
            },
        }
    }

    fn head_mode(&self) -> HeadMode {
        match self.regularizer {
            Regularizer::Baseline => HeadMode::DeepestOnly,
            _ => HeadMode::PerLevel,
        }
    }

    /// Heads that actually produce logits.
    pub fn head_count(&self) -> usize {
        match self.regularizer {
            Regularizer::Baseline => 1,
            _ => self.hfe.levels,
        }
    }
}

/// The two networks plus their shared parameter store.
pub struct Model {
    pub upstream: Upstream,
    pub downstream: Downstream,
    pub store: ParamStore,
}

impl Model {
    /// Builds both networks with seed-deterministic initialization.
    pub fn build(cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1217));
        let upstream = Upstream::new(cfg.upstream.clone(), "up", &mut store, &mut rng)?;
        let hfe = HfeConfig {
            heads: cfg.head_mode(),
            ..cfg.hfe.clone()
        };
        let downstream = match cfg.mode {
            TaskMode::Classify => Downstream::new(hfe, "hfe", &mut store, &mut rng)?,
            TaskMode::Segment => Downstream::new_segmenter(hfe, "hfe", 2, &mut store, &mut rng)?,
        };
        Ok(Model {
            upstream,
            downstream,
            store,
        })
    }

    /// Swaps in a loaded checkpoint after verifying names and shapes match
    /// this model's registration.
    pub fn replace_store(&mut self, loaded: ParamStore) -> Result<()> {
        if loaded.len() != self.store.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                self.store.len()
            )));
        }
        for (a, b) in self.store.entries().iter().zip(loaded.entries()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::invalid(format!(
                    "checkpoint parameter {:?} {:?} does not match model {:?} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        self.store = loaded;
        Ok(())
    }
}

/// One object fully prepared for training: ground truth target and its
/// pre-sampled scattered views.
pub struct TrainObject {
    pub id: u64,
    pub class: usize,
    pub gt: PointCloud,
    pub views: Vec<PointCloud>,
}

/// Materializes specs into clouds and scattered views. Deterministic.
pub fn prepare_objects(
    specs: &[ShapeSpec],
    scatter: &ScatterConfig,
    views: usize,
    target_points: usize,
) -> Result<Vec<TrainObject>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let dense = gen_shape(spec, scatter.source_size)?;
            let gt_spec = ShapeSpec {
                rng_seed: mix_seed(spec.rng_seed, SALT_GT),
                ..spec.clone()
            };
            let gt = gen_shape(&gt_spec, target_points)?;
            let object_scatter = ScatterConfig {
                rng_seed: mix_seed(spec.rng_seed, SALT_SCATTER),
                ..*scatter
            };
            let views = multi_view(&dense, &object_scatter, views)?;
            Ok(TrainObject {
                id: i as u64,
                class: spec.class.class_id() as usize,
                gt,
                views,
            })
        })
        .collect()
}

/// Per-step log entry.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    pub lr: f64,
}

/// Per-level accuracy snapshot on the trace batch.
#[derive(Debug, Clone)]
pub struct LevelMetricsRow {
    pub epoch: usize,
    pub level: usize,
    pub oa: f64,
    pub macc: f64,
    pub ce: f64,
    pub kl_gap: f64,
}

/// Everything a training run produces.
pub struct TrainOutcome {
    pub store: ParamStore,
    pub steps: Vec<StepLog>,
    pub traces: Vec<MITrace>,
    pub level_metrics: Vec<LevelMetricsRow>,
    pub checkpoint_hash: String,
}

struct ObjectLoss {
    total: Tensor,
    breakdown: LossBreakdown,
}

/// Forward and loss for one object view. `label` is the class for
/// classification; for segmentation the part labels are transferred from
/// the ground truth onto the predicted points via nearest-neighbor
/// alignment.
fn object_loss(
    model: &Model,
    params: &TapeParams,
    cfg: &TrainConfig,
    view: &PointCloud,
    gt: &PointCloud,
    label: usize,
) -> Result<ObjectLoss> {
    let x = Tensor::constant(view.flat(), &[view.len(), 3])?;
    let pred = model.upstream.forward(params, &x)?;
    let rec = rec_loss(&pred, gt)?;
    if cfg.stream == StreamMode::UpstreamOnly {
        let total = rec.scale(cfg.weights.alpha)?;
        let breakdown = LossBreakdown {
            rec: rec.value(),
            ce_per_level: Vec::new(),
            kl_per_level: Vec::new(),
            total: total.value(),
            weights: cfg.effective_weights(),
        };
        return Ok(ObjectLoss { total, breakdown });
    }
    let down_in = if cfg.cascade_grad && cfg.stream == StreamMode::Joint {
        pred.clone()
    } else {
        pred.detach()
    };
    let weights = cfg.effective_weights();
    match cfg.mode {
        TaskMode::Classify => {
            let outs = model.downstream.forward_cls(params, &down_in)?;
            let (total, breakdown) = match cfg.regularizer {
                // The explicit deep-supervision path: hard labels only,
                // assembled without consulting gamma.
                Regularizer::Baseline | Regularizer::Dsn => {
                    joint_loss_hard(&rec, &outs, label, weights)?
                }
                Regularizer::Hsd => joint_loss(&rec, &outs, label, weights)?,
            };
            Ok(ObjectLoss { total, breakdown })
        }
        TaskMode::Segment => {
            let pred_points = pred.rows3()?;
            let transfer = nearest_map_points(&pred_points, gt.points())?;
            let gt_labels = gt
                .labels()
                .ok_or_else(|| Error::invalid("segmentation requires labeled ground truth"))?;
            let point_labels: Vec<u32> = transfer.iter().map(|&i| gt_labels[i]).collect();
            let outs = model.downstream.forward_seg(params, &down_in)?;
            let mut ce_values = Vec::with_capacity(outs.point_logits.len());
            let mut ce_total: Option<Tensor> = None;
            for logits in &outs.point_logits {
                let ce = ce_rows_mean(logits, &point_labels)?;
                ce_values.push(ce.value());
                ce_total = Some(match ce_total {
                    None => ce,
                    Some(t) => t.add(&ce)?,
                });
            }
            let ce_term = ce_total.expect("at least one level");
            let mut total = rec
                .scale(weights.alpha)?
                .add(&ce_term.scale(weights.ce_weight())?)?;
            let kl_values;
            if weights.kl_weight() != 0.0 && outs.shape_codes.len() >= 2 {
                let (kl_term, values) = hsd_kl_rows(&outs.shape_codes)?;
                total = total.add(&kl_term.scale(weights.kl_weight())?)?;
                kl_values = values;
            } else {
                kl_values = kl_gap_values(&outs.shape_codes);
            }
            let breakdown = LossBreakdown {
                rec: rec.value(),
                ce_per_level: ce_values,
                kl_per_level: kl_values,
                total: total.value(),
                weights,
            };
            Ok(ObjectLoss { total, breakdown })
        }
    }
}

/// DSN-form joint loss: alpha * rec + beta * sum CE, no distillation node.
fn joint_loss_hard(
    rec: &Tensor,
    outs: &LevelOutputs,
    label: usize,
    weights: LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    let (ce_term, ce_values) = dsn_loss(outs, label)?;
    let total = rec
        .scale(weights.alpha)?
        .add(&ce_term.scale(weights.ce_weight())?)?;
    let breakdown = LossBreakdown {
        rec: rec.value(),
        ce_per_level: ce_values,
        kl_per_level: kl_gap_values(&outs.logits),
        total: total.value(),
        weights,
    };
    Ok((total, breakdown))
}

fn mean_breakdown(parts: &[LossBreakdown], batch_total: f64) -> LossBreakdown {
    let n = parts.len() as f64;
    let levels = parts[0].ce_per_level.len();
    let kls = parts[0].kl_per_level.len();
    let mut out = LossBreakdown {
        rec: parts.iter().map(|b| b.rec).sum::<f64>() / n,
        ce_per_level: (0..levels)
            .map(|l| parts.iter().map(|b| b.ce_per_level[l]).sum::<f64>() / n)
            .collect(),
        kl_per_level: (0..kls)
            .map(|l| parts.iter().map(|b| b.kl_per_level[l]).sum::<f64>() / n)
            .collect(),
        total: batch_total,
        weights: parts[0].weights,
    };
    // Guard against ragged level counts (never expected within one run).
    debug_assert!(parts.iter().all(|b| b.ce_per_level.len() == levels));
    out.weights = parts[0].weights;
    out
}

/// Collects the fixed trace batch observations (classification mode).
fn observe_for_trace(
    model: &Model,
    objects: &[TrainObject],
    count: usize,
    classes: usize,
) -> Result<EpochObservations> {
    let take = count.min(objects.len());
    let params = model.store.constants()?;
    let mut aligned: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut logits: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut labels = Vec::with_capacity(take);
    let mut ids = Vec::with_capacity(take);
    for obj in objects.iter().take(take) {
        let view = &obj.views[0];
        let x = Tensor::constant(view.flat(), &[view.len(), 3])?;
        let pred = model.upstream.forward(&params, &x)?;
        let outs = model.downstream.forward_cls(&params, &pred)?;
        if aligned.is_empty() {
            aligned = vec![Vec::with_capacity(take); outs.logits.len()];
            logits = vec![Vec::with_capacity(take); outs.logits.len()];
        }
        for (l, (a, lg)) in outs.aligned.iter().zip(&outs.logits).enumerate() {
            aligned[l].push(a.data().to_vec());
            logits[l].push(lg.data().to_vec());
        }
        labels.push(obj.class);
        ids.push(obj.id);
    }
    Ok(EpochObservations {
        aligned,
        logits,
        labels,
        object_ids: ids,
        classes,
    })
}

fn level_metrics_from(obs: &EpochObservations, traces: &[MITrace], epoch: usize) -> Vec<LevelMetricsRow> {
    let levels = obs.logits.len();
    let n = obs.labels.len();
    let mut rows = Vec::with_capacity(levels);
    for l in 0..levels {
        let mut correct = 0usize;
        let mut per_class_total = vec![0usize; obs.classes];
        let mut per_class_correct = vec![0usize; obs.classes];
        for (i, row) in obs.logits[l].iter().enumerate() {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            per_class_total[obs.labels[i]] += 1;
            if best == obs.labels[i] {
                correct += 1;
                per_class_correct[obs.labels[i]] += 1;
            }
        }
        let present: Vec<usize> = (0..obs.classes).filter(|&c| per_class_total[c] > 0).collect();
        let macc = present
            .iter()
            .map(|&c| per_class_correct[c] as f64 / per_class_total[c] as f64)
            .sum::<f64>()
            / present.len().max(1) as f64;
        let trace = traces.iter().find(|t| t.epoch == epoch && t.level == l);
        rows.push(LevelMetricsRow {
            epoch,
            level: l,
            oa: correct as f64 / n as f64,
            macc,
            ce: trace.map(|t| t.ce).unwrap_or(f64::NAN),
            kl_gap: trace.map(|t| t.kl_gap_to_teacher).unwrap_or(f64::NAN),
        });
    }
    rows
}

/// Runs the full training loop over prepared objects.
///
/// When `out_dir` is given, a checkpoint is written after every epoch (so a
/// numeric abort retains the last good one) together with the step and
/// trace CSVs at the end.
pub fn train(
    model: &mut Model,
    objects: &[TrainObject],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(Error::invalid("no training objects"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut adam = Adam::new(&model.store);
    let mut steps = Vec::new();
    let mut traces = Vec::new();
    let mut level_metrics = Vec::new();
    let mut step_counter = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(cfg.lr_init, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..objects.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, SALT_SHUFFLE ^ epoch as u64));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let view_index = epoch % cfg.views;
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let params = model.store.leaves(&tape)?;
            let mut totals: Option<Tensor> = None;
            let mut breakdowns = Vec::with_capacity(batch.len());
            for &oi in batch {
                let obj = &objects[oi];
                let view = &obj.views[view_index % obj.views.len()];
                let result = object_loss(model, &params, cfg, view, &obj.gt, obj.class)?;
                breakdowns.push(result.breakdown);
                totals = Some(match totals {
                    None => result.total,
                    Some(t) => t.add(&result.total)?,
                });
            }
            let batch_loss = totals.expect("non-empty batch").scale(1.0 / batch.len() as f64)?;
            let grads = backward(&batch_loss)?;
            let grad_vecs = collect_grads(&model.store, &params, &grads);
            adam.step(&mut model.store, &grad_vecs, lr);
            let breakdown = mean_breakdown(&breakdowns, batch_loss.value());
            steps.push(StepLog {
                step: step_counter,
                epoch,
                breakdown,
                lr,
            });
            step_counter += 1;
        }
        if cfg.trace_objects > 0 && cfg.mode == TaskMode::Classify && cfg.stream != StreamMode::UpstreamOnly
        {
            let obs = observe_for_trace(model, objects, cfg.trace_objects, cfg.hfe.classes)?;
            let epoch_traces = trace_epoch(epoch, &obs, cfg.bins)?;
            level_metrics.extend(level_metrics_from(&obs, &epoch_traces, epoch));
            traces.extend(epoch_traces);
        }
        if let Some(dir) = out_dir {
            model.store.save(&dir.join("checkpoint.bin"))?;
        }
    }
    if let Some(dir) = out_dir {
        logs::write_steps_csv(&steps, cfg.head_count(), &dir.join("steps.csv"))?;
        logs::write_epochs_csv(&traces, &dir.join("epochs.csv"))?;
        logs::write_level_metrics_csv(&level_metrics, &dir.join("level_metrics.csv"))?;
    }
    Ok(TrainOutcome {
        checkpoint_hash: model.store.sha256_hex(),
        store: model.store.clone(),
        steps,
        traces,
        level_metrics,
    })
}

/// Two-stage pipeline: the upstream trains alone on reconstruction, then
/// the downstream trains on the frozen upstream's outputs. Returns the
/// upstream-only outcome and the second-stage outcome.
pub fn train_two_stage(
    objects: &[TrainObject],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Model, TrainOutcome, TrainOutcome)> {
    let mut phase_a_cfg = cfg.clone();
    phase_a_cfg.stream = StreamMode::UpstreamOnly;
    phase_a_cfg.trace_objects = 0;
    let mut model = Model::build(&phase_a_cfg)?;
    let upstream_outcome = train(
        &mut model,
        objects,
        &phase_a_cfg,
        out_dir.map(|d| d.join("upstream_only")).as_deref(),
    )?;

    let mut phase_b_cfg = cfg.clone();
    phase_b_cfg.stream = StreamMode::DownstreamFrozen;
    phase_b_cfg.cascade_grad = false;
    phase_b_cfg.weights = LossWeights {
        alpha: 0.0,
        ..cfg.weights
    };
    let downstream_outcome = train(
        &mut model,
        objects,
        &phase_b_cfg,
        out_dir.map(|d| d.join("two_stage")).as_deref(),
    )?;
    Ok((model, upstream_outcome, downstream_outcome))
}
