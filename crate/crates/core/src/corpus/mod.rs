//! Ground-truth complete clouds: a procedural shape corpus with
//! classification and two-part segmentation labels, plus ingestion of
//! external xyz/ply/off files.
//!
//! Shapes are built centered at the origin and scaled so the farthest point
//! sits at unit norm. Points are drawn uniformly by surface area, so local
//! density is honest for patch-based scattering. The two composite classes
//! (mug, hammer) carry per-point part labels {0, 1} to exercise the
//! segmentation path.

mod io;
mod shapes;

pub use io::{
    load_cloud, read_manifest, sample_triangles, save_ply, save_xyz, write_manifest, Format,
    ManifestEntry,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::PointCloud;
use crate::scatter::mix_seed;
use crate::{Error, Result};

/// The built-in shape classes. The first six are single-part; `Mug` and
/// `Hammer` are two-part composites with per-point labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Cone,
    Capsule,
    Mug,
    Hammer,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Box,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
        ShapeClass::Cone,
        ShapeClass::Capsule,
        ShapeClass::Mug,
        ShapeClass::Hammer,
    ];

    pub fn class_id(&self) -> u32 {
        Self::ALL.iter().position(|c| c == self).expect("listed") as u32
    }

    pub fn from_id(id: u32) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown shape class id {id}")))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
            ShapeClass::Cone => "cone",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Mug => "mug",
            ShapeClass::Hammer => "hammer",
        }
    }

    /// Whether clouds of this class carry part labels.
    pub fn is_composite(&self) -> bool {
        matches!(self, ShapeClass::Mug | ShapeClass::Hammer)
    }
}

/// A fully determined shape instance: class, concrete surface parameters,
/// and the seed that drives point placement. Identical specs generate
/// identical clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    /// Class-specific parameters (radii, extents, proportions); see
    /// [`shapes`] for the per-class layout.
    pub params: Vec<f64>,
    pub rng_seed: u64,
}

impl ShapeSpec {
    /// Draws class-appropriate parameters from `seed`.
    pub fn sampled(class: ShapeClass, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5a17));
        let params = shapes::sample_params(class, &mut rng);
        Self {
            class,
            params,
            rng_seed: seed,
        }
    }
}

/// Deterministic train/test split of shape specs, disjoint by seed.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ShapeSpec>,
    pub test: Vec<ShapeSpec>,
}

/// Generates `n` surface points for a spec. Composite classes carry part
/// labels; every cloud is scaled so its farthest point has unit norm.
pub fn gen_shape(spec: &ShapeSpec, n: usize) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::invalid(format!("need at least 8 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, label) = shapes::sample_point(spec.class, &spec.params, &mut rng)?;
        points.push(p);
        labels.push(label);
    }
    // Scale to the unit ball; shapes are constructed origin-centered.
    let max_norm2 = points
        .iter()
        .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        .fold(0.0_f64, f64::max);
    if max_norm2 > 0.0 {
        let inv = 1.0 / max_norm2.sqrt();
        for p in &mut points {
            p[0] *= inv;
            p[1] *= inv;
            p[2] *= inv;
        }
    }
    if spec.class.is_composite() {
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    }
}

/// Deterministic 80/20 train/test split with `per_class` instances of each
/// of the first `classes` built-in classes.
pub fn gen_split(classes: usize, per_class: usize, seed: u64) -> Result<DatasetSplit> {
    if classes == 0 || classes > ShapeClass::ALL.len() {
        return Err(Error::invalid(format!(
            "classes must be in 1..={}, got {classes}",
            ShapeClass::ALL.len()
        )));
    }
    gen_split_for(&ShapeClass::ALL[..classes], per_class, seed)
}

/// Deterministic 80/20 split over an explicit class list (e.g. only the
/// composite classes for segmentation).
pub fn gen_split_for(classes: &[ShapeClass], per_class: usize, seed: u64) -> Result<DatasetSplit> {
    if classes.is_empty() {
        return Err(Error::invalid("need at least one class"));
    }
    if per_class == 0 {
        return Err(Error::invalid("per_class must be positive"));
    }
    let train_per_class = (per_class * 4) / 5;
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, class) in classes.iter().enumerate() {
        for j in 0..per_class {
            let spec_seed = mix_seed(seed, (c as u64) << 32 | j as u64);
            let spec = ShapeSpec::sampled(*class, spec_seed);
            if j < train_per_class {
                split.train.push(spec);
            } else {
                split.test.push(spec);
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_sit_on_unit_radius() {
        let spec = ShapeSpec::sampled(ShapeClass::Sphere, 42);
        let cloud = gen_shape(&spec, 1024).unwrap();
        for p in cloud.points() {
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn cube_face_fractions_are_binomial() {
        // Unit cube: each face should collect ~1/6 of samples, within 3 sigma.
        let spec = ShapeSpec {
            class: ShapeClass::Box,
            params: vec![1.0, 1.0, 1.0],
            rng_seed: 7,
        };
        let n = 4096;
        let cloud = gen_shape(&spec, n).unwrap();
        // Identify faces by the coordinate with maximal |value| (cube is
        // scaled uniformly, so faces stay axis-aligned planes).
        let mut counts = [0usize; 6];
        for p in cloud.points() {
            let abs = [p[0].abs(), p[1].abs(), p[2].abs()];
            let axis = (0..3).max_by(|&a, &b| abs[a].partial_cmp(&abs[b]).unwrap()).unwrap();
            let side = if p[axis] >= 0.0 { 0 } else { 1 };
            counts[axis * 2 + side] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            let dev = (c as f64 - n as f64 * p).abs();
            assert!(dev < 3.0 * sigma, "face count {c} deviates {dev:.1} > {:.1}", 3.0 * sigma);
        }
    }

    #[test]
    fn mug_has_exactly_two_part_labels() {
        let spec = ShapeSpec::sampled(ShapeClass::Mug, 5);
        let cloud = gen_shape(&spec, 2048).unwrap();
        let labels = cloud.labels().expect("composite carries labels");
        let mut seen: Vec<u32> = labels.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![0, 1]);
    }

    #[test]
    fn hammer_has_exactly_two_part_labels() {
        let spec = ShapeSpec::sampled(ShapeClass::Hammer, 5);
        let cloud = gen_shape(&spec, 2048).unwrap();
        let labels = cloud.labels().expect("composite carries labels");
        assert!(labels.contains(&0) && labels.contains(&1));
    }

    #[test]
    fn identical_specs_generate_identical_clouds() {
        let spec = ShapeSpec::sampled(ShapeClass::Capsule, 99);
        let a = gen_shape(&spec, 512).unwrap();
        let b = gen_shape(&spec, 512).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn split_is_80_20_and_deterministic() {
        let a = gen_split(8, 10, 3).unwrap();
        let b = gen_split(8, 10, 3).unwrap();
        assert_eq!(a.train.len(), 64);
        assert_eq!(a.test.len(), 16);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        // Disjoint by seed.
        for tr in &a.train {
            assert!(a.test.iter().all(|te| te.rng_seed != tr.rng_seed));
        }
    }

    #[test]
    fn different_seeds_draw_different_params() {
        let a = ShapeSpec::sampled(ShapeClass::Torus, 1);
        let b = ShapeSpec::sampled(ShapeClass::Torus, 2);
        assert_ne!(a.params, b.params);
    }

    #[test]
    fn too_few_points_rejected() {
        let spec = ShapeSpec::sampled(ShapeClass::Sphere, 0);
        assert!(gen_shape(&spec, 4).is_err());
    }

    #[test]
    fn generated_clouds_pass_normalize_idempotence() {
        for class in ShapeClass::ALL {
            let spec = ShapeSpec::sampled(class, 11);
            let cloud = gen_shape(&spec, 256).unwrap();
            let once = crate::geometry::normalize(&cloud).unwrap();
            let twice = crate::geometry::normalize(&once).unwrap();
            for (p, q) in once.points().iter().zip(twice.points()) {
                for d in 0..3 {
                    assert!((p[d] - q[d]).abs() < 1e-6);
                }
            }
        }
    }
}
