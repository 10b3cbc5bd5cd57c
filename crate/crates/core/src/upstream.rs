//! The completion stream: a masked autoencoder that maps a scattered input
//! to a fixed-size complete prediction.
//!
//! The encoder is a shared pointwise MLP followed by a max-pool, so the
//! global code is permutation invariant by construction. The decoder emits
//! coarse points from the code, then refines them through point-splitting
//! stages: each stage duplicates every parent `ratio` times and adds a
//! learned per-child offset computed from the parent point and the global
//! code. Offsets pass through tanh and a fixed scale, keeping refinement
//! local in normalized space.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, TapeParams, Tensor};
use crate::geometry::{nearest_map_points, PointCloud};
use crate::{Error, Result};

/// Bound applied to refinement offsets after tanh.
pub const OFFSET_SCALE: f64 = 0.2;

/// Minimum number of input points the encoder accepts.
pub const MIN_INPUT_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamConfig {
    /// Widths of the shared pointwise encoder layers; the last is the code
    /// dimension.
    pub encoder_widths: Vec<usize>,
    /// Coarse points emitted by the decoder's fully-connected seed layer.
    pub coarse_points: usize,
    /// Per-stage duplication ratios; their product times `coarse_points`
    /// must equal `target_points`.
    pub split_ratios: Vec<usize>,
    /// Size of the completed prediction.
    pub target_points: usize,
    /// Hidden width of each refinement stage's MLP.
    pub refine_hidden: usize,
}

impl Default for UpstreamConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![32, 64],
            coarse_points: 512,
            split_ratios: vec![1, 1, 2],
            target_points: 1024,
            refine_hidden: 64,
        }
    }
}

impl UpstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        if self.split_ratios.iter().any(|&r| r == 0) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        let product: usize = self.split_ratios.iter().product();
        if self.coarse_points * product != self.target_points {
            return Err(Error::invalid(format!(
                "coarse_points {} x split product {} != target_points {}",
                self.coarse_points, product, self.target_points
            )));
        }
        Ok(())
    }

    pub fn code_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated non-empty")
    }
}

/// The upstream network. Holds configuration and parameter names; values
/// live in a [`ParamStore`].
pub struct Upstream {
    cfg: UpstreamConfig,
    prefix: String,
}

impl Upstream {
    /// Registers parameters under `prefix` and returns the network.
    pub fn new(
        cfg: UpstreamConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut in_dim = 3;
        for (i, &w) in cfg.encoder_widths.iter().enumerate() {
            store.register_xavier(&format!("{prefix}.enc.{i}.w"), in_dim, w, rng)?;
            store.register_zeros(&format!("{prefix}.enc.{i}.b"), &[w])?;
            in_dim = w;
        }
        let code = cfg.code_dim();
        store.register_xavier(&format!("{prefix}.dec.seed.w"), code, cfg.coarse_points * 3, rng)?;
        store.register_zeros(&format!("{prefix}.dec.seed.b"), &[cfg.coarse_points * 3])?;
        for (s, &ratio) in cfg.split_ratios.iter().enumerate() {
            store.register_xavier(
                &format!("{prefix}.dec.stage{s}.hidden.w"),
                3 + code,
                cfg.refine_hidden,
                rng,
            )?;
            store.register_zeros(&format!("{prefix}.dec.stage{s}.hidden.b"), &[cfg.refine_hidden])?;
            store.register_xavier(
                &format!("{prefix}.dec.stage{s}.offset.w"),
                cfg.refine_hidden,
                3 * ratio,
                rng,
            )?;
            store.register_zeros(&format!("{prefix}.dec.stage{s}.offset.b"), &[3 * ratio])?;
        }
        Ok(Self {
            cfg,
            prefix: prefix.to_string(),
        })
    }

    pub fn config(&self) -> &UpstreamConfig {
        &self.cfg
    }

    /// Encodes an (N' x 3) input into the permutation-invariant global code
    /// (1-D, code_dim).
    pub fn encode(&self, params: &TapeParams, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != 3 {
            return Err(Error::shape(format!(
                "encode expects (n x 3) input, got {:?}",
                x.shape()
            )));
        }
        if x.rows() < MIN_INPUT_POINTS {
            return Err(Error::invalid(format!(
                "encode needs at least {MIN_INPUT_POINTS} points, got {}",
                x.rows()
            )));
        }
        let mut h = x.clone();
        for i in 0..self.cfg.encoder_widths.len() {
            let w = params.get(&format!("{}.enc.{i}.w", self.prefix))?;
            let b = params.get(&format!("{}.enc.{i}.b", self.prefix))?;
            h = h.linear(w, b)?.relu()?;
        }
        h.max_over_set(0)
    }

    /// Decodes the global code into exactly `target_points` points.
    pub fn decode(&self, params: &TapeParams, code: &Tensor) -> Result<Tensor> {
        if code.shape() != [self.cfg.code_dim()] {
            return Err(Error::shape(format!(
                "decode expects a code of shape [{}], got {:?}",
                self.cfg.code_dim(),
                code.shape()
            )));
        }
        let seed_w = params.get(&format!("{}.dec.seed.w", self.prefix))?;
        let seed_b = params.get(&format!("{}.dec.seed.b", self.prefix))?;
        let mut points = code
            .reshape(&[1, self.cfg.code_dim()])?
            .linear(seed_w, seed_b)?
            .reshape(&[self.cfg.coarse_points, 3])?;
        for (s, &ratio) in self.cfg.split_ratios.iter().enumerate() {
            let n = points.rows();
            let ctx = points.concat_cols(&code.broadcast_rows(n)?)?;
            let hw = params.get(&format!("{}.dec.stage{s}.hidden.w", self.prefix))?;
            let hb = params.get(&format!("{}.dec.stage{s}.hidden.b", self.prefix))?;
            let ow = params.get(&format!("{}.dec.stage{s}.offset.w", self.prefix))?;
            let ob = params.get(&format!("{}.dec.stage{s}.offset.b", self.prefix))?;
            let offsets = ctx
                .linear(hw, hb)?
                .relu()?
                .linear(ow, ob)?
                .tanh()?
                .scale(OFFSET_SCALE)?
                .reshape(&[n * ratio, 3])?;
            points = points.repeat_rows(ratio)?.add(&offsets)?;
        }
        Ok(points)
    }

    /// Full completion pass: encode then decode.
    pub fn forward(&self, params: &TapeParams, x: &Tensor) -> Result<Tensor> {
        let code = self.encode(params, x)?;
        self.decode(params, &code)
    }
}

/// Differentiable Chamfer reconstruction loss between a predicted (N x 3)
/// tensor and a ground-truth cloud.
///
/// Nearest-neighbor matching is recomputed from the current prediction and
/// treated as constant during backward (the standard subgradient), so the
/// gradient flows through both directional terms.
pub fn rec_loss(pred: &Tensor, gt: &PointCloud) -> Result<Tensor> {
    if gt.is_empty() {
        return Err(Error::invalid("rec_loss requires a non-empty ground truth"));
    }
    let pred_points = pred.rows3()?;
    if pred_points.is_empty() {
        return Err(Error::invalid("rec_loss requires a non-empty prediction"));
    }
    let gt_const = Tensor::constant(gt.flat(), &[gt.len(), 3])?;
    let pred_to_gt = nearest_map_points(&pred_points, gt.points())?;
    let gt_to_pred = nearest_map_points(gt.points(), &pred_points)?;

    let d1 = pred.sub(&gt_const.gather_rows(&pred_to_gt)?)?;
    let term1 = d1.mul(&d1)?.sum()?.scale(1.0 / pred_points.len() as f64)?;
    let d2 = pred.gather_rows(&gt_to_pred)?.sub(&gt_const)?;
    let term2 = d2.mul(&d2)?.sum()?.scale(1.0 / gt.len() as f64)?;
    term1.add(&term2)
}
