//! Scattered-input synthesis: sparse, patchy clouds built from a dense
//! source by picking patch centroids with FPS and gathering their kNN
//! neighborhoods.
//!
//! A `(seeds, neighbors)` pair fixes one sparsity configuration, e.g.
//! 32x16 = 512 points at low sparsity or 64x8 = 512 points at high
//! sparsity when drawn from a 10,000-point source. Patches may overlap;
//! duplicates are kept so the output size is always exactly
//! `seeds * neighbors`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{fps, knn, PointCloud};
use crate::{Error, Result};

/// One sparsity configuration: how many patches, how large, from how dense
/// a source, and with which deterministic seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScatterConfig {
    /// Number of patch centroids selected by FPS.
    pub seeds: usize,
    /// Neighbors gathered around each centroid.
    pub neighbors: usize,
    /// Required size of the dense source cloud.
    pub source_size: usize,
    /// Base RNG seed; the FPS start index is drawn from it.
    pub rng_seed: u64,
}

impl ScatterConfig {
    pub fn new(seeds: usize, neighbors: usize, source_size: usize, rng_seed: u64) -> Result<Self> {
        if seeds == 0 || neighbors == 0 {
            return Err(Error::invalid("seeds and neighbors must be positive"));
        }
        if seeds * neighbors > source_size {
            return Err(Error::invalid(format!(
                "{seeds} seeds x {neighbors} neighbors exceeds source size {source_size}"
            )));
        }
        Ok(Self {
            seeds,
            neighbors,
            source_size,
            rng_seed,
        })
    }

    /// Output size of one scattered draw.
    pub fn output_size(&self) -> usize {
        self.seeds * self.neighbors
    }
}

/// Mixes a salt into a base seed (splitmix64 finalizer).
pub(crate) fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws one scattered cloud from a dense source.
///
/// FPS (started at an index drawn from `cfg.rng_seed`) picks `seeds`
/// centroids, then each centroid contributes its `neighbors` nearest source
/// points. Every output point is a member of the source; labels are carried
/// along. Deterministic given `(dense, cfg)`.
pub fn scatter_sample(dense: &PointCloud, cfg: &ScatterConfig) -> Result<PointCloud> {
    if dense.len() != cfg.source_size {
        return Err(Error::invalid(format!(
            "source has {} points, config expects {}",
            dense.len(),
            cfg.source_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let start = rng.gen_range(0..dense.len());
    let centroids = fps(dense, cfg.seeds, start)?;
    let mut indices = Vec::with_capacity(cfg.output_size());
    for &c in &centroids {
        indices.extend(knn(dense, c, cfg.neighbors)?.neighbor_indices);
    }
    Ok(dense.select(&indices))
}

/// `views` independent scattered draws of the same object, the v-th using
/// `cfg.rng_seed` mixed with the view index. Deterministic given
/// `(cfg.rng_seed, views)`.
pub fn multi_view(dense: &PointCloud, cfg: &ScatterConfig, views: usize) -> Result<Vec<PointCloud>> {
    if views == 0 {
        return Err(Error::invalid("views must be at least 1"));
    }
    (0..views)
        .map(|v| {
            let view_cfg = ScatterConfig {
                rng_seed: mix_seed(cfg.rng_seed, v as u64),
                ..*cfg
            };
            scatter_sample(dense, &view_cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_shape, ShapeClass, ShapeSpec};

    fn dense_shape(n: usize, seed: u64) -> PointCloud {
        let spec = ShapeSpec::sampled(ShapeClass::Torus, seed);
        gen_shape(&spec, n).unwrap()
    }

    #[test]
    fn single_patch_covers_whole_cloud() {
        let dense = dense_shape(64, 7);
        let cfg = ScatterConfig::new(1, 64, 64, 3).unwrap();
        let out = scatter_sample(&dense, &cfg).unwrap();
        assert_eq!(out.len(), 64);
        let mut got: Vec<_> = out.points().to_vec();
        let mut want: Vec<_> = dense.points().to_vec();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn output_size_is_seeds_times_neighbors() {
        let dense = dense_shape(500, 11);
        let cfg = ScatterConfig::new(32, 8, 500, 5).unwrap();
        let out = scatter_sample(&dense, &cfg).unwrap();
        assert_eq!(out.len(), 256);
    }

    #[test]
    fn every_output_point_is_in_source() {
        let dense = dense_shape(300, 2);
        let cfg = ScatterConfig::new(16, 8, 300, 9).unwrap();
        let out = scatter_sample(&dense, &cfg).unwrap();
        for p in out.points() {
            assert!(dense.points().contains(p));
        }
    }

    #[test]
    fn deterministic_given_config() {
        let dense = dense_shape(400, 4);
        let cfg = ScatterConfig::new(16, 16, 400, 21).unwrap();
        let a = scatter_sample(&dense, &cfg).unwrap();
        let b = scatter_sample(&dense, &cfg).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn source_size_mismatch_rejected() {
        let dense = dense_shape(100, 4);
        let cfg = ScatterConfig::new(4, 4, 128, 0).unwrap();
        assert!(scatter_sample(&dense, &cfg).is_err());
    }

    #[test]
    fn oversized_request_rejected_at_config() {
        assert!(ScatterConfig::new(64, 16, 512, 0).is_err());
    }

    #[test]
    fn multi_view_single_equals_scatter_sample() {
        let dense = dense_shape(256, 8);
        let cfg = ScatterConfig::new(8, 8, 256, 13).unwrap();
        let views = multi_view(&dense, &cfg, 1).unwrap();
        let direct_cfg = ScatterConfig {
            rng_seed: mix_seed(13, 0),
            ..cfg
        };
        let direct = scatter_sample(&dense, &direct_cfg).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].points(), direct.points());
    }

    #[test]
    fn multi_view_reproduces_bit_exactly() {
        let dense = dense_shape(256, 8);
        let cfg = ScatterConfig::new(8, 8, 256, 13).unwrap();
        let a = multi_view(&dense, &cfg, 8).unwrap();
        let b = multi_view(&dense, &cfg, 8).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.points(), y.points());
        }
    }

    #[test]
    fn labels_carried_through_scatter() {
        let spec = ShapeSpec::sampled(ShapeClass::Mug, 3);
        let dense = gen_shape(&spec, 400).unwrap();
        assert!(dense.labels().is_some());
        let cfg = ScatterConfig::new(10, 10, 400, 1).unwrap();
        let out = scatter_sample(&dense, &cfg).unwrap();
        let labels = out.labels().expect("labels carried");
        assert_eq!(labels.len(), out.len());
    }
}
