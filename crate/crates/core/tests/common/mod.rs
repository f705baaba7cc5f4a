#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-6;

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + FD_STEP;
            let hi = f(&p);
            p[i] = v - FD_STEP;
            let lo = f(&p);
            p[i] = v;
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn gaussian_vec<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal))
}

pub fn gaussian_mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Gaussian entries pushed away from zero: `sign(g) * (0.1 + |g|)`.
pub fn away_from_zero<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    gaussian_vec(n, rng).mapv(|g: f64| g.signum() * (0.1 + g.abs()))
}

/// Random orthonormal `n × n` matrix by Gram-Schmidt.
pub fn orthonormal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = gaussian_mat(n, n, rng);
    for j in 0..n {
        for k in 0..j {
            let d = q.column(j).dot(&q.column(k));
            let ck = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-d, &ck);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}
