//! Independent brute-force oracles for the geometry kernels. These are
//! deliberately written as plain, slow re-derivations of the contracts and
//! share no code with the implementations they check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// O(n*m) greedy max-min selection, ties to the lowest index.
pub fn fps_oracle(points: &[[f64; 3]], m: usize, start: usize) -> Vec<usize> {
    let mut selected = vec![start];
    while selected.len() < m {
        let mut best_idx = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for i in 0..points.len() {
            if selected.contains(&i) {
                continue;
            }
            let min_d = selected
                .iter()
                .map(|&s| d2(&points[i], &points[s]))
                .fold(f64::INFINITY, f64::min);
            if min_d > best_dist {
                best_dist = min_d;
                best_idx = i;
            }
        }
        selected.push(best_idx);
    }
    selected
}

/// Full sort by (squared distance, index), then take k.
pub fn knn_oracle(points: &[[f64; 3]], center: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (d2(p, &points[center]), i))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    order[..k].iter().map(|&(_, i)| i).collect()
}

/// Double-loop Chamfer evaluation.
pub fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let ab: f64 = a
        .iter()
        .map(|p| b.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    let ba: f64 = b
        .iter()
        .map(|q| a.iter().map(|p| d2(p, q)).fold(f64::INFINITY, f64::min))
        .sum();
    ab / a.len() as f64 + ba / b.len() as f64
}

/// Argmin scan per source point.
pub fn nearest_map_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<usize> {
    a.iter()
        .map(|p| {
            let mut best = 0;
            for j in 1..b.len() {
                if d2(p, &b[j]) < d2(p, &b[best]) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
