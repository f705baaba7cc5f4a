//! Small dense helpers and the monotone proximal-gradient solver shared by
//! every inference routine in the crate.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// `sign(v) * max(|v| - t, 0)`
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1(z: ArrayView1<f64>) -> f64 {
    z.iter().map(|v| v.abs()).sum()
}

pub fn sq_norm(z: ArrayView1<f64>) -> f64 {
    z.iter().map(|v| v * v).sum()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Rescales every column to unit Euclidean norm. Zero columns are replaced
/// by the first basis vector so the invariant holds unconditionally.
pub fn normalize_columns(w: &mut Array2<f64>) {
    for mut col in w.axis_iter_mut(Axis(1)) {
        let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            col.mapv_inplace(|v| v / n);
        } else {
            col.fill(0.0);
            col[0] = 1.0;
        }
    }
}

pub fn column_norms(w: &Array2<f64>) -> Vec<f64> {
    w.axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Largest squared singular value by power iteration.
pub fn spectral_norm_sq(w: &Array2<f64>) -> f64 {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..100 {
        let u = w.t().dot(&w.dot(&v));
        let nu = u.dot(&u).sqrt();
        if nu == 0.0 {
            return 0.0;
        }
        let prev = est;
        est = nu;
        v = u / nu;
        if (est - prev).abs() <= 1e-10 * est {
            break;
        }
    }
    est
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is numerically singular.
pub fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[[row, col]] / a[[col, col]];
            if f != 0.0 {
                for k in col..n {
                    a[[row, k]] -= f * a[[col, k]];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[[row, k]] * x[k];
        }
        x[row] = s / a[[row, row]];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Outcome of [`proximal_descent`].
#[derive(Debug, Clone)]
pub struct DescentResult {
    pub z: Array1<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Settings for [`proximal_descent`].
#[derive(Debug, Clone, Copy)]
pub struct DescentSettings {
    pub step: f64,
    pub max_iters: usize,
    /// Relative change of the objective below which iteration stops.
    pub tolerance: f64,
}

/// Proximal gradient descent with backtracking on `f(z) + h(z)`.
///
/// `smooth` returns `f` and its gradient, `prox(v, t)` the proximal map of
/// `t * h` at `v`, and `nonsmooth` evaluates `h`. A candidate is accepted only
/// when it satisfies the quadratic upper-bound test and does not raise the
/// objective, so the trace is non-increasing by construction.
pub fn proximal_descent(
    z0: Array1<f64>,
    settings: DescentSettings,
    smooth: impl Fn(&Array1<f64>) -> (f64, Array1<f64>),
    prox: impl Fn(Array1<f64>, f64) -> Array1<f64>,
    nonsmooth: impl Fn(&Array1<f64>) -> f64,
) -> DescentResult {
    const MAX_HALVINGS: usize = 60;
    let mut z = z0;
    let (mut f, mut g) = smooth(&z);
    let mut energy = f + nonsmooth(&z);
    let mut trace = vec![energy];
    let mut step = settings.step;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < settings.max_iters {
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = prox(&z - &(&g * step), step);
            let diff = &cand - &z;
            let dd = diff.dot(&diff);
            if dd == 0.0 {
                // fixed point of the prox-gradient map
                converged = true;
                break 'outer;
            }
            let (fc, gc) = smooth(&cand);
            let bound = f + g.dot(&diff) + dd / (2.0 * step);
            let ec = fc + nonsmooth(&cand);
            if fc <= bound && ec <= energy {
                accepted = Some((cand, fc, gc, ec));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc, ec)) = accepted else {
            break;
        };
        iterations += 1;
        // let the step recover after a local curvature spike
        step = (step * 2.0).min(settings.step);
        let change = energy - ec;
        z = cand;
        f = fc;
        g = gc;
        energy = ec;
        trace.push(energy);
        if change <= settings.tolerance * energy.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    DescentResult { z, energy, iterations, converged, trace }
}
