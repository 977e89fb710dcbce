//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use dbt_core::tree::{FeatureKind, FeatureMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A small random table with numeric and categorical columns and missing
/// cells, plus targets with deliberate ties.
pub fn random_table(rng: &mut ChaCha8Rng) -> (FeatureMatrix, Vec<f64>) {
    let n = rng.random_range(2..=50);
    let f = rng.random_range(1..=3);
    let mut kinds = Vec::new();
    let mut cols = Vec::new();
    for _ in 0..f {
        let missing_rate = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.4) };
        if rng.random_bool(0.5) {
            let levels = rng.random_range(1..=6);
            kinds.push(FeatureKind::Categorical);
            cols.push(
                (0..n)
                    .map(|_| {
                        if rng.random_bool(missing_rate) {
                            f64::NAN
                        } else {
                            f64::from(rng.random_range(0..levels))
                        }
                    })
                    .collect(),
            );
        } else {
            // A coarse grid so values repeat.
            let grid = rng.random_range(2..=20);
            kinds.push(FeatureKind::Numeric);
            cols.push(
                (0..n)
                    .map(|_| {
                        if rng.random_bool(missing_rate) {
                            f64::NAN
                        } else {
                            f64::from(rng.random_range(0..grid)) * 0.5 - 3.0
                        }
                    })
                    .collect(),
            );
        }
    }
    let y = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                1.0
            } else {
                rng.random_range(-5.0..5.0)
            }
        })
        .collect();
    (FeatureMatrix::new(kinds, cols).unwrap(), y)
}

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).powi(2)).sum()
}

/// Largest SSE reduction over every admissible binary partition at the root:
/// all thresholds between distinct values of numeric columns and all subsets
/// of categories, with missing rows sent either way. Both children must hold
/// at least `min_leaf` rows.
pub fn brute_force_root_gain(x: &FeatureMatrix, y: &[f64], min_leaf: usize) -> f64 {
    let parent = sse(y);
    let mut best = 0.0f64;
    let mut consider = |left: &[bool]| {
        let (l, r): (Vec<f64>, Vec<f64>) = {
            let mut l = Vec::new();
            let mut r = Vec::new();
            for (i, &go) in left.iter().enumerate() {
                if go {
                    l.push(y[i]);
                } else {
                    r.push(y[i]);
                }
            }
            (l, r)
        };
        if l.len() >= min_leaf && r.len() >= min_leaf {
            best = best.max(parent - sse(&l) - sse(&r));
        }
    };
    for j in 0..x.n_features() {
        let col = x.column(j);
        for missing_left in [false, true] {
            match x.kinds()[j] {
                FeatureKind::Numeric => {
                    let mut values: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                    values.sort_by(f64::total_cmp);
                    values.dedup();
                    for &t in &values {
                        let left: Vec<bool> = col.iter().map(|&v| if v.is_nan() { missing_left } else { v <= t }).collect();
                        consider(&left);
                    }
                }
                FeatureKind::Categorical => {
                    let mut cats: Vec<u32> = col.iter().filter(|v| !v.is_nan()).map(|&v| v as u32).collect();
                    cats.sort_unstable();
                    cats.dedup();
                    for mask in 0u32..(1 << cats.len()) {
                        let left: Vec<bool> = col
                            .iter()
                            .map(|&v| {
                                if v.is_nan() {
                                    missing_left
                                } else {
                                    let k = cats.binary_search(&(v as u32)).unwrap();
                                    mask & (1 << k) != 0
                                }
                            })
                            .collect();
                        consider(&left);
                    }
                }
            }
        }
    }
    best
}
