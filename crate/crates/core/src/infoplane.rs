//! Binned mutual-information estimates over per-level representations.
//!
//! Each aligned feature dimension is quantized into equal-width bins over
//! the range observed in the current batch (recomputed every epoch so bins
//! track growing activations); a sample's discrete code is the tuple of bin
//! indices. Plug-in entropies over the empirical code distribution give
//! I(X;Z) = H(Z) - H(Z|X) and I(Y;Z) = H(Z) - H(Z|Y), in nats. Alongside,
//! each level's softened distance to the teacher is tracked as a mean KL
//! gap, and its cross-entropy against the labels.

use std::collections::BTreeMap;

use crate::downstream::kl_divergence;
use crate::{Error, Result};

/// Default number of bins per activation dimension.
pub const DEFAULT_BINS: usize = 6;

/// One per-epoch, per-level information-plane record.
#[derive(Debug, Clone, PartialEq)]
pub struct MITrace {
    pub epoch: usize,
    /// 0-based level; the deepest level is the teacher.
    pub level: usize,
    /// Binned estimate of I(X;Z_l), nats.
    pub i_xz: f64,
    /// Binned estimate of I(Y;Z_l), nats; bounded by ln(C).
    pub i_yz: f64,
    /// Mean KL(teacher || level) over the batch; zero for the teacher.
    pub kl_gap_to_teacher: f64,
    /// Mean cross-entropy of this level's head against the labels.
    pub ce: f64,
}

/// Everything the analyzer needs from one evaluation batch, laid out as
/// `[level][sample]`.
pub struct EpochObservations {
    /// Aligned per-level features Z_l.
    pub aligned: Vec<Vec<Vec<f64>>>,
    /// Per-level class logits.
    pub logits: Vec<Vec<Vec<f64>>>,
    /// Ground-truth class labels, one per sample.
    pub labels: Vec<usize>,
    /// Identities of the input objects (conditioning variable for I(X;Z)).
    pub object_ids: Vec<u64>,
    /// Number of classes C.
    pub classes: usize,
}

/// Quantizes activations into per-dimension equal-width bins over the
/// observed min/max. A dimension with zero range collapses into a single
/// bin.
pub fn bin_activations(batch: &[Vec<f64>], bins: usize) -> Result<Vec<Vec<u16>>> {
    if bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    if batch.is_empty() {
        return Err(Error::invalid("cannot bin an empty batch"));
    }
    let dims = batch[0].len();
    if batch.iter().any(|row| row.len() != dims) {
        return Err(Error::invalid("ragged activation batch"));
    }
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for row in batch {
        for (d, &v) in row.iter().enumerate() {
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
        }
    }
    let codes = batch
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(d, &v)| {
                    let range = hi[d] - lo[d];
                    if range <= 0.0 {
                        0u16
                    } else {
                        let idx = ((v - lo[d]) / range * bins as f64) as usize;
                        idx.min(bins - 1) as u16
                    }
                })
                .collect()
        })
        .collect();
    Ok(codes)
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    // H = ln N - (1/N) sum c ln c.
    n.ln() - counts.map(|c| (c as f64) * (c as f64).ln()).sum::<f64>() / n
}

/// Plug-in entropy of the empirical code distribution, nats.
pub fn code_entropy(codes: &[Vec<u16>]) -> f64 {
    let mut counts: BTreeMap<&[u16], usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c.as_slice()).or_insert(0) += 1;
    }
    entropy_of_counts(counts.values().copied(), codes.len())
}

/// Plug-in mutual information I(cond; Z) = H(Z) - H(Z | cond), nats.
pub fn mutual_information(codes: &[Vec<u16>], conditioner: &[u64]) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::invalid("mutual information needs at least one sample"));
    }
    if codes.len() != conditioner.len() {
        return Err(Error::invalid(format!(
            "{} codes vs {} conditioner values",
            codes.len(),
            conditioner.len()
        )));
    }
    let h_z = code_entropy(codes);
    let mut groups: BTreeMap<u64, Vec<&Vec<u16>>> = BTreeMap::new();
    for (code, &cond) in codes.iter().zip(conditioner) {
        groups.entry(cond).or_default().push(code);
    }
    let n = codes.len() as f64;
    let mut h_z_given = 0.0;
    for members in groups.values() {
        let mut counts: BTreeMap<&[u16], usize> = BTreeMap::new();
        for c in members {
            *counts.entry(c.as_slice()).or_insert(0) += 1;
        }
        let h = entropy_of_counts(counts.values().copied(), members.len());
        h_z_given += members.len() as f64 / n * h;
    }
    Ok(h_z - h_z_given)
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Computes one epoch's per-level traces from an evaluation batch.
pub fn trace_epoch(epoch: usize, obs: &EpochObservations, bins: usize) -> Result<Vec<MITrace>> {
    let levels = obs.aligned.len();
    if levels == 0 || obs.logits.len() != levels {
        return Err(Error::invalid("observations need matching aligned/logits levels"));
    }
    let n = obs.labels.len();
    if n == 0 {
        return Err(Error::invalid("empty evaluation batch"));
    }
    for level in 0..levels {
        if obs.aligned[level].len() != n || obs.logits[level].len() != n {
            return Err(Error::invalid("ragged observation batch"));
        }
    }
    if obs.object_ids.len() != n {
        return Err(Error::invalid("object id count mismatch"));
    }
    let labels_u64: Vec<u64> = obs.labels.iter().map(|&l| l as u64).collect();
    let teacher_soft: Vec<Vec<f64>> = obs.logits[levels - 1].iter().map(|r| softmax(r)).collect();
    let mut traces = Vec::with_capacity(levels);
    for level in 0..levels {
        let codes = bin_activations(&obs.aligned[level], bins)?;
        let i_xz = mutual_information(&codes, &obs.object_ids)?;
        let i_yz = mutual_information(&codes, &labels_u64)?;
        let mut kl_gap = 0.0;
        let mut ce = 0.0;
        for (i, row) in obs.logits[level].iter().enumerate() {
            let q = softmax(row);
            kl_gap += kl_divergence(&teacher_soft[i], &q);
            ce -= q[obs.labels[i]].max(f64::MIN_POSITIVE).ln();
        }
        kl_gap /= n as f64;
        ce /= n as f64;
        traces.push(MITrace {
            epoch,
            level,
            i_xz,
            i_yz,
            kl_gap_to_teacher: kl_gap,
            ce,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_activations_share_one_code() {
        let batch = vec![vec![0.5, -1.0]; 10];
        let codes = bin_activations(&batch, 6).unwrap();
        assert!(codes.iter().all(|c| c == &codes[0]));
    }

    #[test]
    fn extreme_pair_differs_in_every_live_dimension() {
        let batch = vec![vec![0.0, 3.0, 7.0], vec![1.0, -3.0, 7.0]];
        let codes = bin_activations(&batch, 6).unwrap();
        assert_ne!(codes[0][0], codes[1][0]);
        assert_ne!(codes[0][1], codes[1][1]);
        // Constant dimension collapses to a single bin.
        assert_eq!(codes[0][2], codes[1][2]);
    }

    #[test]
    fn uniform_samples_occupy_bins_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6000;
        let batch: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>()]).collect();
        let codes = bin_activations(&batch, 6).unwrap();
        let mut counts = [0usize; 6];
        for c in &codes {
            counts[c[0] as usize] += 1;
        }
        let expected = n as f64 / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 5 dof, p > 0.001.
        assert!(chi2 < 20.515, "chi2 = {chi2}");
    }

    #[test]
    fn deterministic_code_per_id_gives_ln2() {
        // X uniform over 2 ids, Z deterministic given X, distinct codes.
        let codes: Vec<Vec<u16>> = (0..100)
            .map(|i| if i % 2 == 0 { vec![0, 3] } else { vec![5, 1] })
            .collect();
        let ids: Vec<u64> = (0..100).map(|i| (i % 2) as u64).collect();
        let mi = mutual_information(&codes, &ids).unwrap();
        assert!((mi - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shuffled_codes_carry_almost_no_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        // Small alphabet keeps the plug-in bias below the threshold.
        let codes: Vec<Vec<u16>> = (0..n).map(|_| vec![rng.gen_range(0..6u16)]).collect();
        let labels: Vec<u64> = (0..n).map(|_| rng.gen_range(0..2u64)).collect();
        let mi = mutual_information(&codes, &labels).unwrap();
        assert!(mi >= 0.0);
        assert!(mi < 0.05, "mi = {mi}");
    }

    #[test]
    fn plugin_mi_matches_exact_enumeration() {
        // A fully enumerated 4 x 3 joint table (12 cells, n = 60).
        let table = [
            (0u64, 0u16, 7usize),
            (0, 1, 3),
            (0, 2, 5),
            (1, 0, 2),
            (1, 1, 8),
            (1, 2, 5),
            (2, 0, 6),
            (2, 1, 1),
            (2, 2, 8),
            (3, 0, 4),
            (3, 1, 9),
            (3, 2, 2),
        ];
        let mut codes = Vec::new();
        let mut ids = Vec::new();
        for &(x, z, count) in &table {
            for _ in 0..count {
                codes.push(vec![z]);
                ids.push(x);
            }
        }
        let n: usize = table.iter().map(|t| t.2).sum();
        let nf = n as f64;
        // Closed form: sum p(x,z) ln(p(x,z) / (p(x) p(z))).
        let mut px = BTreeMap::new();
        let mut pz = BTreeMap::new();
        for &(x, z, c) in &table {
            *px.entry(x).or_insert(0usize) += c;
            *pz.entry(z).or_insert(0usize) += c;
        }
        let mut exact = 0.0;
        for &(x, z, c) in &table {
            let pxz = c as f64 / nf;
            let p_x = px[&x] as f64 / nf;
            let p_z = pz[&z] as f64 / nf;
            exact += pxz * (pxz / (p_x * p_z)).ln();
        }
        let plugin = mutual_information(&codes, &ids).unwrap();
        assert!((plugin - exact).abs() < 1e-12, "plugin {plugin} vs exact {exact}");
    }

    #[test]
    fn i_yz_bounded_by_ln_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let classes = 5u64;
        let n = 400;
        let codes: Vec<Vec<u16>> = (0..n).map(|_| vec![rng.gen_range(0..40u16)]).collect();
        let labels: Vec<u64> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let mi = mutual_information(&codes, &labels).unwrap();
        assert!(mi <= (classes as f64).ln() + 1e-12);
    }

    #[test]
    fn trace_epoch_produces_finite_rows_per_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 16;
        let levels = 3;
        let obs = EpochObservations {
            aligned: (0..levels)
                .map(|_| {
                    (0..n)
                        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect(),
            logits: (0..levels)
                .map(|_| {
                    (0..n)
                        .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                        .collect()
                })
                .collect(),
            labels: (0..n).map(|i| i % 4).collect(),
            object_ids: (0..n as u64).collect(),
            classes: 4,
        };
        let traces = trace_epoch(0, &obs, DEFAULT_BINS).unwrap();
        assert_eq!(traces.len(), 3);
        for t in &traces {
            assert!(t.i_xz.is_finite() && t.i_yz.is_finite());
            assert!(t.i_yz <= (obs.classes as f64).ln() + 1e-12);
            assert!(t.kl_gap_to_teacher >= -1e-12);
            assert!(t.ce.is_finite());
        }
        // The teacher's gap to itself vanishes.
        assert!(traces[2].kl_gap_to_teacher.abs() < 1e-12);
    }

    #[test]
    fn traces_are_deterministic() {
        let obs = EpochObservations {
            aligned: vec![vec![vec![0.1, 0.9], vec![0.4, 0.2], vec![0.8, 0.5]]],
            logits: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]],
            labels: vec![0, 1, 0],
            object_ids: vec![10, 20, 30],
            classes: 2,
        };
        let a = trace_epoch(4, &obs, 6).unwrap();
        let b = trace_epoch(4, &obs, 6).unwrap();
        assert_eq!(a, b);
    }
}
