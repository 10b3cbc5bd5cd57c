//! Deterministic point-set kernels: sampling, neighborhoods, distances,
//! normalization.
//!
//! All comparisons use squared Euclidean distances and break ties by lowest
//! index, so every kernel is a pure deterministic function of its inputs.
//! Brute force is deliberate: clouds here stay well under 10k points.

use crate::{Error, Result};

/// An ordered list of 3D points with optional per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    labels: Option<Vec<u32>>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points, labels: None })
    }

    /// Builds a labeled cloud; `labels` must match `points` in length.
    pub fn with_labels(points: Vec<[f64; 3]>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::invalid(format!(
                "label count {} does not match point count {}",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Selects a subset of the cloud by index, carrying labels along.
    /// Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self { points, labels }
    }

    /// Flat row-major coordinate buffer, for feeding tensors.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Centers a cloud on its centroid and scales the farthest point to unit norm.
///
/// Idempotent within 1e-6; labels are preserved. A degenerate cloud whose
/// points all coincide is centered but left unscaled.
pub fn normalize(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot normalize an empty cloud"));
    }
    let n = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    for p in cloud.points() {
        centroid[0] += p[0];
        centroid[1] += p[1];
        centroid[2] += p[2];
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut shifted: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    let max_norm2 = shifted
        .iter()
        .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        .fold(0.0_f64, f64::max);
    if max_norm2 > 0.0 {
        let inv = 1.0 / max_norm2.sqrt();
        for p in &mut shifted {
            p[0] *= inv;
            p[1] *= inv;
            p[2] *= inv;
        }
    }
    Ok(PointCloud {
        points: shifted,
        labels: cloud.labels.clone(),
    })
}

/// Farthest point sampling over raw coordinates.
///
/// Greedy max-min selection: the first pick is `start`, each subsequent pick
/// maximizes the minimum squared distance to everything already selected,
/// ties resolved to the lowest index.
pub fn fps_points(points: &[[f64; 3]], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "fps requested {m} samples from {n} points"
        )));
    }
    if start >= n {
        return Err(Error::invalid(format!(
            "fps start index {start} out of range for {n} points"
        )));
    }
    let mut selected = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    selected.push(start);
    taken[start] = true;
    for _ in 1..m {
        let cp = points[*selected.last().expect("non-empty")];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, &cp);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        selected.push(best);
        taken[best] = true;
    }
    Ok(selected)
}

/// Farthest point sampling on a cloud. See [`fps_points`].
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    fps_points(cloud.points(), m, start)
}

/// Index of the lexicographically smallest point (x, then y, then z).
///
/// Used as a coordinate-canonical FPS start so downstream features stay
/// invariant under input permutation.
pub fn lex_min_index(points: &[[f64; 3]]) -> usize {
    let mut best = 0usize;
    for (i, p) in points.iter().enumerate().skip(1) {
        if *p < points[best] {
            best = i;
        }
    }
    best
}

/// A center point together with its k nearest neighbor indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub center_index: usize,
    /// Sorted by (squared distance, index) ascending; no duplicates.
    pub neighbor_indices: Vec<usize>,
}

/// The k nearest neighbors of `points[center]`, the center itself included
/// at distance zero. Ties resolve to the lowest index.
pub fn knn_points(points: &[[f64; 3]], center: usize, k: usize) -> Result<NeighborIndex> {
    let n = points.len();
    if k > n {
        return Err(Error::invalid(format!(
            "knn requested {k} neighbors from {n} points"
        )));
    }
    if center >= n {
        return Err(Error::invalid(format!(
            "knn center index {center} out of range for {n} points"
        )));
    }
    let cp = points[center];
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, &cp), i))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(NeighborIndex {
        center_index: center,
        neighbor_indices: order[..k].iter().map(|&(_, i)| i).collect(),
    })
}

/// kNN on a cloud. See [`knn_points`].
pub fn knn(cloud: &PointCloud, center: usize, k: usize) -> Result<NeighborIndex> {
    knn_points(cloud.points(), center, k)
}

fn min_dist2_to(points: &[[f64; 3]], q: &[f64; 3]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, q))
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance in
/// both directions.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_points(a.points(), b.points())
}

/// Chamfer distance over raw coordinate slices.
pub fn chamfer_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance requires non-empty clouds"));
    }
    let ab: f64 = a.iter().map(|p| min_dist2_to(b, p)).sum();
    let ba: f64 = b.iter().map(|q| min_dist2_to(a, q)).sum();
    Ok(ab / a.len() as f64 + ba / b.len() as f64)
}

/// For each point of `a`, the index of its nearest point in `b`
/// (ties to the lowest index).
pub fn nearest_map(a: &PointCloud, b: &PointCloud) -> Result<Vec<usize>> {
    nearest_map_points(a.points(), b.points())
}

/// Nearest-neighbor index map over raw coordinate slices.
pub fn nearest_map_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<Vec<usize>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("nearest_map requires non-empty clouds"));
    }
    Ok(a.iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, q) in b.iter().enumerate() {
                let d = dist2(p, q);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn normalize_symmetric_pair() {
        let c = cloud(&[[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        let n = normalize(&c).unwrap();
        assert_eq!(n.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let c = cloud(&[[0.3, -1.2, 0.7], [2.0, 0.1, -0.4], [-0.5, 0.9, 1.1]]);
        let once = normalize(&c).unwrap();
        let twice = normalize(&once).unwrap();
        for (p, q) in once.points().iter().zip(twice.points()) {
            for d in 0..3 {
                assert!((p[d] - q[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_hand_computed_triangle() {
        let c = cloud(&[[0.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.0, 2.0, 0.0]]);
        let n = normalize(&c).unwrap();
        // Centroid (0, 2/3, 2/3); farthest shifted point has norm sqrt(20)/3.
        let scale = 3.0 / 20.0_f64.sqrt();
        let expected = [
            [0.0, -2.0 / 3.0 * scale, -2.0 / 3.0 * scale],
            [0.0, -2.0 / 3.0 * scale, 4.0 / 3.0 * scale],
            [0.0, 4.0 / 3.0 * scale, -2.0 / 3.0 * scale],
        ];
        for (p, e) in n.points().iter().zip(&expected) {
            for d in 0..3 {
                assert!((p[d] - e[d]).abs() < 1e-12);
            }
        }
        let max_norm = n
            .points()
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0_f64, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_empty_rejected() {
        let c = cloud(&[]);
        assert!(matches!(normalize(&c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn normalize_preserves_labels() {
        let c = PointCloud::with_labels(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], vec![0, 1]).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.labels(), Some(&[0u32, 1][..]));
    }

    #[test]
    fn fps_collinear_tie_breaks_low_index() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = cloud(&pts);
        // After {0, 9}, x=4 and x=5 both have min squared distance 16; the
        // lower index wins.
        assert_eq!(fps(&c, 3, 0).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn fps_single_sample_is_start() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 0.0, 1.0]]);
        assert_eq!(fps(&c, 1, 2).unwrap(), vec![2]);
    }

    #[test]
    fn fps_exhaustive_is_permutation() {
        let pts: Vec<[f64; 3]> = (0..7).map(|i| [(i * i) as f64, i as f64, 0.0]).collect();
        let c = cloud(&pts);
        let mut idx = fps(&c, 7, 3).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(fps(&c, 3, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn knn_self_is_nearest() {
        let c = cloud(&[[0.0; 3], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]]);
        let nn = knn(&c, 1, 1).unwrap();
        assert_eq!(nn.neighbor_indices, vec![1]);
    }

    #[test]
    fn knn_unit_square_corner() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
        ]);
        let nn = knn(&c, 0, 3).unwrap();
        // Self first, then the two edge-adjacent corners at distance 1.
        assert_eq!(nn.neighbor_indices, vec![0, 1, 2]);
    }

    #[test]
    fn knn_tie_takes_lower_index() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let nn = knn(&c, 0, 2).unwrap();
        assert_eq!(nn.neighbor_indices, vec![0, 1]);
    }

    #[test]
    fn knn_rejects_oversized_k() {
        let c = cloud(&[[0.0; 3]]);
        assert!(matches!(knn(&c, 0, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn chamfer_identical_is_zero() {
        let c = cloud(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_unit_offset_pair() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert!((chamfer(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chamfer_empty_rejected() {
        let a = cloud(&[]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert!(chamfer(&a, &b).is_err());
    }

    #[test]
    fn nearest_map_identity() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(nearest_map(&c, &c).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn nearest_map_single_target() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let b = cloud(&[[9.0, 9.0, 9.0]]);
        assert_eq!(nearest_map(&a, &b).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn labels_length_mismatch_rejected() {
        assert!(PointCloud::with_labels(vec![[0.0; 3]], vec![0, 1]).is_err());
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }
}
