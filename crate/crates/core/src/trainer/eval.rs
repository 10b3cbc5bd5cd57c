//! Held-out evaluation: overall and mean-class accuracy, Chamfer distance
//! (reported x1000), and segmentation IOU with nearest-neighbor label
//! transfer onto the predicted points.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::corpus::ShapeSpec;
use crate::downstream::{predict, PredictMode};
use crate::geometry::{chamfer_points, nearest_map_points};
use crate::scatter::ScatterConfig;
use crate::{Error, Result};

use super::{prepare_objects, Model, TaskMode, TrainConfig, TrainObject};

/// Shared pool for read-only evaluation work; SCATTERHSD_THREADS caps its
/// size.
pub(crate) fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("SCATTERHSD_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            builder = builder.num_threads(n);
        }
        builder.build().expect("failed to build thread pool")
    })
}

/// Evaluation metrics; classification fields are absent in segment mode and
/// segmentation fields absent in classify mode. Accuracies and IOUs are
/// fractions in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub oa: Option<f64>,
    pub macc: Option<f64>,
    pub cd_x1000: f64,
    pub per_level_oa: Vec<f64>,
    pub per_level_macc: Vec<f64>,
    pub miou: Option<f64>,
    pub ciou: Option<f64>,
    pub objects: usize,
}

struct ObjectEval {
    class: usize,
    teacher_prediction: Option<usize>,
    per_level_predictions: Vec<usize>,
    cd: f64,
    /// Per-part IOU for segmentation instances.
    part_iou: Option<Vec<f64>>,
}

/// Overall and mean-class accuracy from (label, prediction) pairs. Classes
/// absent from the labels are excluded from mAcc with a warning.
pub fn classification_metrics(pairs: &[(usize, usize)], classes: usize) -> (f64, f64) {
    let mut per_class_total = vec![0usize; classes];
    let mut per_class_correct = vec![0usize; classes];
    let mut correct = 0usize;
    for &(label, pred) in pairs {
        per_class_total[label] += 1;
        if pred == label {
            correct += 1;
            per_class_correct[label] += 1;
        }
    }
    let present: Vec<usize> = (0..classes).filter(|&c| per_class_total[c] > 0).collect();
    for c in 0..classes {
        if per_class_total[c] == 0 {
            eprintln!("warning: class {c} absent from the test set; excluded from mAcc");
        }
    }
    let oa = correct as f64 / pairs.len().max(1) as f64;
    let macc = present
        .iter()
        .map(|&c| per_class_correct[c] as f64 / per_class_total[c] as f64)
        .sum::<f64>()
        / present.len().max(1) as f64;
    (oa, macc)
}

/// Per-part intersection-over-union; an empty union counts as a perfect 1.
pub fn iou_per_part(pred: &[u32], gt: &[u32], parts: usize) -> Vec<f64> {
    let mut inter = vec![0usize; parts];
    let mut union = vec![0usize; parts];
    for (&p, &g) in pred.iter().zip(gt) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    (0..parts)
        .map(|p| {
            if union[p] == 0 {
                1.0
            } else {
                inter[p] as f64 / union[p] as f64
            }
        })
        .collect()
}

/// Expected mIOU of a uniform-random two-part labeler on these ground-truth
/// labels, via the first-order ratio of expectations: for a part holding
/// n_p of n points, E[IOU_p] ~ n_p / (n + n_p).
pub fn expected_random_miou(gt_labels: &[u32]) -> f64 {
    let n = gt_labels.len() as f64;
    let n1 = gt_labels.iter().filter(|&&l| l == 1).count() as f64;
    let n0 = n - n1;
    0.5 * (n0 / (n + n0) + n1 / (n + n1))
}

fn eval_object(model: &Model, cfg: &TrainConfig, obj: &TrainObject) -> Result<ObjectEval> {
    let params = model.store.constants()?;
    let view = &obj.views[0];
    let x = Tensor::constant(view.flat(), &[view.len(), 3])?;
    let pred = model.upstream.forward(&params, &x)?;
    let pred_points = pred.rows3()?;
    let cd = chamfer_points(&pred_points, obj.gt.points())? * 1000.0;
    match cfg.mode {
        TaskMode::Classify => {
            let outs = model.downstream.forward_cls(&params, &pred)?;
            let teacher = predict(&outs, PredictMode::Teacher)?;
            let per_level = (0..outs.logits.len())
                .map(|l| predict(&outs, PredictMode::Level(l)))
                .collect::<Result<Vec<_>>>()?;
            Ok(ObjectEval {
                class: obj.class,
                teacher_prediction: Some(teacher),
                per_level_predictions: per_level,
                cd,
                part_iou: None,
            })
        }
        TaskMode::Segment => {
            let gt_labels = obj
                .gt
                .labels()
                .ok_or_else(|| Error::invalid("segment evaluation needs labeled ground truth"))?;
            let transfer = nearest_map_points(&pred_points, obj.gt.points())?;
            let point_gt: Vec<u32> = transfer.iter().map(|&i| gt_labels[i]).collect();
            let outs = model.downstream.forward_seg(&params, &pred)?;
            let teacher_logits = outs.point_logits.last().expect("at least one level");
            let parts = teacher_logits.cols();
            let data = teacher_logits.data();
            let point_pred: Vec<u32> = (0..teacher_logits.rows())
                .map(|i| {
                    let row = &data[i * parts..(i + 1) * parts];
                    let mut best = 0usize;
                    for (j, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best as u32
                })
                .collect();
            Ok(ObjectEval {
                class: obj.class,
                teacher_prediction: None,
                per_level_predictions: Vec::new(),
                cd,
                part_iou: Some(iou_per_part(&point_pred, &point_gt, parts)),
            })
        }
    }
}

/// Evaluates a model over test specs with a single eval view per object
/// (the same view seeds training uses).
pub fn evaluate(
    model: &Model,
    specs: &[ShapeSpec],
    scatter: &ScatterConfig,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    if specs.is_empty() {
        return Err(Error::invalid("no evaluation objects"));
    }
    let objects = prepare_objects(specs, scatter, 1, cfg.upstream.target_points)?;
    let evals: Vec<Result<ObjectEval>> = pool().install(|| {
        objects
            .par_iter()
            .map(|obj| eval_object(model, cfg, obj))
            .collect()
    });
    let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;

    let n = evals.len();
    let cd_x1000 = evals.iter().map(|e| e.cd).sum::<f64>() / n as f64;
    match cfg.mode {
        TaskMode::Classify => {
            let classes = cfg.hfe.classes;
            let levels = evals[0].per_level_predictions.len();
            let teacher_pairs: Vec<(usize, usize)> = evals
                .iter()
                .map(|e| (e.class, e.teacher_prediction.expect("classify eval")))
                .collect();
            let (oa, macc) = classification_metrics(&teacher_pairs, classes);
            let mut per_level_oa = Vec::with_capacity(levels);
            let mut per_level_macc = Vec::with_capacity(levels);
            for l in 0..levels {
                let pairs: Vec<(usize, usize)> = evals
                    .iter()
                    .map(|e| (e.class, e.per_level_predictions[l]))
                    .collect();
                let (loa, lmacc) = classification_metrics(&pairs, classes);
                per_level_oa.push(loa);
                per_level_macc.push(lmacc);
            }
            Ok(EvalReport {
                oa: Some(oa),
                macc: Some(macc),
                cd_x1000,
                per_level_oa,
                per_level_macc,
                miou: None,
                ciou: None,
                objects: n,
            })
        }
        TaskMode::Segment => {
            let parts = evals[0].part_iou.as_ref().map(|v| v.len()).unwrap_or(0);
            let miou = evals
                .iter()
                .map(|e| {
                    let ious = e.part_iou.as_ref().expect("segment eval");
                    ious.iter().sum::<f64>() / ious.len() as f64
                })
                .sum::<f64>()
                / n as f64;
            let ciou = (0..parts)
                .map(|p| {
                    evals
                        .iter()
                        .map(|e| e.part_iou.as_ref().expect("segment eval")[p])
                        .sum::<f64>()
                        / n as f64
                })
                .sum::<f64>()
                / parts.max(1) as f64;
            Ok(EvalReport {
                oa: None,
                macc: None,
                cd_x1000,
                per_level_oa: Vec::new(),
                per_level_macc: Vec::new(),
                miou: Some(miou),
                ciou: Some(ciou),
                objects: n,
            })
        }
    }
}
