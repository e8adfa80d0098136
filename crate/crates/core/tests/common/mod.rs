//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use fedshield::federation::ModelUpdate;
use fedshield::nn::{LayerShape, ParamVector, ShapeMap};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

pub fn central_difference(params: &ParamVector, loss: impl Fn(&ParamVector) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.values_mut()[i] += STEP;
            let mut minus = params.clone();
            minus.values_mut()[i] -= STEP;
            (loss(&plus) - loss(&minus)) / (2.0 * STEP)
        })
        .collect()
}

pub fn assert_close(analytic: &[f64], numeric: &[f64], label: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        assert!(
            diff <= ABS_FLOOR || diff <= REL_TOL * scale,
            "{label}: component {i} analytic {a} numeric {n}"
        );
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn shape(dim: usize) -> Arc<ShapeMap> {
    Arc::new(ShapeMap::new(vec![LayerShape::new("w", &[dim])]))
}

pub fn updates_from(rows: &[Vec<f64>]) -> Vec<ModelUpdate> {
    let s = shape(rows[0].len());
    rows.iter()
        .enumerate()
        .map(|(i, r)| ModelUpdate {
            ed_id: i,
            round: 0,
            delta: ParamVector::from_values(Arc::clone(&s), r.clone()).unwrap(),
            fee: 0.3,
        })
        .collect()
}

pub fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

pub fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn oracle_comed(rows: &[Vec<f64>]) -> Vec<f64> {
    (0..rows[0].len())
        .map(|j| {
            let c = sorted(column(rows, j));
            let n = c.len();
            if n % 2 == 1 {
                c[n / 2]
            } else {
                (c[n / 2 - 1] + c[n / 2]) / 2.0
            }
        })
        .collect()
}

pub fn oracle_cotmed(rows: &[Vec<f64>], b: usize) -> Vec<f64> {
    (0..rows[0].len())
        .map(|j| {
            let c = sorted(column(rows, j));
            let kept = &c[b..c.len() - b];
            let mut s = 0.0;
            for v in kept {
                s += v;
            }
            s / kept.len() as f64
        })
        .collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn oracle_krum_index(rows: &[Vec<f64>], f: usize) -> usize {
    let m = rows.len();
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            let d = sorted((0..m).filter(|&j| j != i).map(|j| sq_dist(&rows[i], &rows[j])).collect());
            d[..m - f - 2].iter().sum()
        })
        .collect();
    (0..m).min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap()).unwrap()
}

pub fn norm(r: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in r {
        s += v * v;
    }
    s.sqrt()
}

pub fn oracle_normbound(rows: &[Vec<f64>]) -> Vec<f64> {
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    let by_size = sorted(norms.clone());
    let n = by_size.len();
    let cap = if n % 2 == 1 { by_size[n / 2] } else { (by_size[n / 2 - 1] + by_size[n / 2]) / 2.0 };
    let clipped: Vec<Vec<f64>> = rows
        .iter()
        .zip(&norms)
        .map(|(r, &n)| {
            let f = if n > cap { cap / n } else { 1.0 };
            r.iter().map(|v| v * f).collect()
        })
        .collect();
    (0..rows[0].len())
        .map(|j| {
            let mut s = 0.0;
            for r in &clipped {
                s += r[j];
            }
            s / rows.len() as f64
        })
        .collect()
}

pub fn oracle_rsa(rows: &[Vec<f64>], step: f64) -> Vec<f64> {
    (0..rows[0].len())
        .map(|j| {
            let s: f64 = column(rows, j).iter().map(|&v| v.signum() * (v != 0.0) as u8 as f64).sum();
            step * (s / rows.len() as f64)
        })
        .collect()
}


/// True when every component agrees within the relative tolerance or the absolute floor.
pub fn gradients_agree(analytic: &[f64], numeric: &[f64]) -> bool {
    analytic.iter().zip(numeric).all(|(a, n)| {
        let diff = (a - n).abs();
        diff <= ABS_FLOOR || diff <= REL_TOL * a.abs().max(n.abs())
    })
}

/// Sum of Euclidean distances from `z` to the planar points.
pub fn objective(points: &[[f64; 2]], z: [f64; 2]) -> f64 {
    points.iter().map(|p| ((p[0] - z[0]).powi(2) + (p[1] - z[1]).powi(2)).sqrt()).sum()
}

/// Smallest objective over an `n x n` grid spanning the points' bounding box.
pub fn grid_minimum(points: &[[f64; 2]], n: usize) -> f64 {
    let (x0, x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[0]), b.max(p[0])));
    let (y0, y1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[1]), b.max(p[1])));
    let last = (n - 1) as f64;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let g = [x0 + (x1 - x0) * i as f64 / last, y0 + (y1 - y0) * j as f64 / last];
            best = best.min(objective(points, g));
        }
    }
    best
}
