//! Analysis of learned filters and codes.
//!
//! Orientations follow one convention throughout: the angle of the carrier
//! wave vector (normal to the stripes), in `x`-right, `y`-down pixel
//! coordinates, reduced modulo `pi`. [`crate::synth::edge_stimulus`] uses the
//! same angle for the edge normal.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::ImageFrame;
use crate::linalg;
use crate::synth::{edge_stimulus, rng_from_seed};

/// Fits with `r2` at or above this value count as oriented filters.
pub const VALID_R2: f64 = 0.5;

/// `A exp(-x'^2/2sx^2 - y'^2/2sy^2) cos(2 pi f x' + phase)` with
/// `x' = (x-cx) cos t + (y-cy) sin t`, `y' = -(x-cx) sin t + (y-cy) cos t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborFit {
    /// Radians in `[0, pi)`.
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    /// Radians in `(-pi, pi]`.
    pub phase: f64,
    pub center: (f64, f64),
    /// Envelope widths along and across the carrier.
    pub sigma: (f64, f64),
    pub amplitude: f64,
    pub r2: f64,
    /// The patch had no variance to explain.
    pub degenerate: bool,
}

impl GaborFit {
    pub fn is_valid(&self) -> bool {
        !self.degenerate && self.r2 >= VALID_R2
    }

    fn params(&self) -> [f64; 8] {
        [
            self.center.0,
            self.center.1,
            self.orientation,
            self.frequency,
            self.phase,
            self.sigma.0,
            self.sigma.1,
            self.amplitude,
        ]
    }

    /// The model rendered on a `width × height` grid.
    pub fn render(&self, width: usize, height: usize) -> ImageFrame {
        let p = self.params();
        ImageFrame::from_fn(width, height, |x, y| gabor_at(&p, x as f64, y as f64))
    }

    pub const CSV_HEADER: &'static str =
        "index,orientation,frequency,phase,center_x,center_y,sigma_x,sigma_y,amplitude,r2,valid";

    pub fn csv_row(&self, index: usize) -> String {
        format!(
            "{index},{},{},{},{},{},{},{},{},{},{}",
            self.orientation,
            self.frequency,
            self.phase,
            self.center.0,
            self.center.1,
            self.sigma.0,
            self.sigma.1,
            self.amplitude,
            self.r2,
            u8::from(self.is_valid())
        )
    }
}

/// Parameters: `[cx, cy, theta, f, phase, sx, sy, a]`.
fn gabor_at(p: &[f64; 8], x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - p[0], y - p[1]);
    let (c, s) = (p[2].cos(), p[2].sin());
    let xr = dx * c + dy * s;
    let yr = -dx * s + dy * c;
    let (sx, sy) = (p[5].abs().max(1e-6), p[6].abs().max(1e-6));
    p[7] * (-(xr * xr) / (2.0 * sx * sx) - (yr * yr) / (2.0 * sy * sy)).exp() * (2.0 * PI * p[3] * xr + p[4]).cos()
}

/// Model value and its gradient in the eight parameters.
fn gabor_grad(p: &[f64; 8], x: f64, y: f64) -> (f64, [f64; 8]) {
    let (dx, dy) = (x - p[0], y - p[1]);
    let (c, s) = (p[2].cos(), p[2].sin());
    let xr = dx * c + dy * s;
    let yr = -dx * s + dy * c;
    let (sx, sy) = (p[5].abs().max(1e-6), p[6].abs().max(1e-6));
    let k = 2.0 * PI * p[3];
    let env = (-(xr * xr) / (2.0 * sx * sx) - (yr * yr) / (2.0 * sy * sy)).exp();
    let (sn, cs) = (k * xr + p[4]).sin_cos();
    let a = p[7];
    let g = a * env * cs;
    let g_xr = a * env * (-xr / (sx * sx) * cs - k * sn);
    let g_yr = -g * yr / (sy * sy);
    (
        g,
        [
            -g_xr * c + g_yr * s,
            -g_xr * s - g_yr * c,
            g_xr * yr - g_yr * xr,
            -a * env * sn * 2.0 * PI * xr,
            -a * env * sn,
            g * xr * xr / (sx * sx * sx) * p[5].signum(),
            g * yr * yr / (sy * sy * sy) * p[6].signum(),
            env * cs,
        ],
    )
}

fn residuals(p: &[f64; 8], patch: &ImageFrame) -> Array1<f64> {
    let w = patch.width();
    Array1::from_shape_fn(patch.len(), |i| patch.data()[i] - gabor_at(p, (i % w) as f64, (i / w) as f64))
}

fn sse(p: &[f64; 8], patch: &ImageFrame) -> f64 {
    let r = residuals(p, patch);
    r.dot(&r)
}

fn wrap_phase(phi: f64) -> f64 {
    let t = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Brings parameters to canonical form: `a >= 0`, `f >= 0`, positive widths,
/// `theta` in `[0, pi)`, `phase` in `(-pi, pi]`.
fn canonical(mut p: [f64; 8]) -> [f64; 8] {
    p[5] = p[5].abs();
    p[6] = p[6].abs();
    if p[7] < 0.0 {
        p[7] = -p[7];
        p[4] += PI;
    }
    if p[3] < 0.0 {
        p[3] = -p[3];
        p[4] = -p[4];
    }
    let turns = (p[2] / PI).floor();
    p[2] -= turns * PI;
    if p[2] >= PI {
        p[2] -= PI;
    }
    if turns.rem_euclid(2.0) == 1.0 {
        // x' changes sign under a half turn
        p[4] = -p[4];
    }
    p[4] = wrap_phase(p[4]);
    p
}

/// Number of spectral peaks used as separate starting points.
const N_STARTS: usize = 3;

/// Strongest `(theta, f)` cells of the DTFT power of the mean-removed patch
/// on a 36-angle grid, best first.
fn spectral_peaks(patch: &ImageFrame) -> Vec<(f64, f64)> {
    let (w, h) = (patch.width(), patch.height());
    let mean = patch.mean();
    let d: Vec<f64> = patch.data().iter().map(|v| v - mean).collect();
    const N_THETA: usize = 36;
    let n_f = 2 * w.max(h);
    let mut cells = Vec::with_capacity(N_THETA * n_f);
    for it in 0..N_THETA {
        let t = it as f64 * PI / N_THETA as f64;
        let (c, s) = (t.cos(), t.sin());
        for jf in 1..=n_f {
            let f = 0.5 * jf as f64 / n_f as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in d.iter().enumerate() {
                let arg = 2.0 * PI * f * ((i % w) as f64 * c + (i / w) as f64 * s);
                re += v * arg.cos();
                im -= v * arg.sin();
            }
            cells.push((t, f, re * re + im * im));
        }
    }
    cells.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(N_STARTS);
    for (t, f, _) in cells {
        // skip neighbours of a peak already taken
        let near = peaks.iter().any(|&(pt, pf)| orientation_distance(pt, t) < 0.2 && (pf - f).abs() < 0.05);
        if !near {
            peaks.push((t, f));
            if peaks.len() == N_STARTS {
                break;
            }
        }
    }
    peaks
}

/// Coarse start for one carrier: energy moments for the envelope, linear
/// least squares for amplitude and phase.
fn initial_guess(patch: &ImageFrame, theta: f64, freq: f64) -> [f64; 8] {
    let (w, h) = (patch.width(), patch.height());
    let d = patch.data();
    let total: f64 = d.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, v) in d.iter().enumerate() {
        mx += v * v * (i % w) as f64;
        my += v * v * (i / w) as f64;
    }
    let (cx, cy) = (mx / total, my / total);
    let (c, s) = (theta.cos(), theta.sin());
    let (mut vx, mut vy) = (0.0, 0.0);
    for (i, v) in d.iter().enumerate() {
        let (dx, dy) = ((i % w) as f64 - cx, (i / w) as f64 - cy);
        vx += v * v * (dx * c + dy * s).powi(2);
        vy += v * v * (-dx * s + dy * c).powi(2);
    }
    let sx = (2.0 * vx / total).sqrt().clamp(0.5, w.max(h) as f64);
    let sy = (2.0 * vy / total).sqrt().clamp(0.5, w.max(h) as f64);
    // a cos(phi) * env*cos(k) - a sin(phi) * env*sin(k)
    let mut basis = Array2::zeros((d.len(), 2));
    for i in 0..d.len() {
        let mut pc = [cx, cy, theta, freq, 0.0, sx, sy, 1.0];
        basis[[i, 0]] = gabor_at(&pc, (i % w) as f64, (i / w) as f64);
        pc[4] = -PI / 2.0;
        basis[[i, 1]] = gabor_at(&pc, (i % w) as f64, (i / w) as f64);
    }
    let y = Array1::from(d.to_vec());
    let coef = linalg::solve(basis.t().dot(&basis), basis.t().dot(&y)).unwrap_or_else(|| Array1::zeros(2));
    let amp = coef[0].hypot(coef[1]);
    let phase = coef[1].atan2(coef[0]);
    [cx, cy, theta, freq, phase, sx, sy, amp]
}

const NYQUIST: f64 = 0.5;

fn levenberg_marquardt(mut p: [f64; 8], patch: &ImageFrame, max_iters: usize) -> [f64; 8] {
    let mut lambda = 1e-2;
    let mut cost = sse(&p, patch);
    for _ in 0..max_iters {
        let w = patch.width();
        let mut r0 = Array1::zeros(patch.len());
        let mut jac = Array2::zeros((patch.len(), 8));
        for (i, v) in patch.data().iter().enumerate() {
            let (g, grad) = gabor_grad(&p, (i % w) as f64, (i / w) as f64);
            r0[i] = v - g;
            for k in 0..8 {
                jac[[i, k]] = grad[k];
            }
        }
        let jtj = jac.t().dot(&jac);
        let jtr = jac.t().dot(&r0);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..8 {
                a[[k, k]] += lambda * jtj[[k, k]].max(1e-12);
            }
            let Some(step) = linalg::solve(a, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = p;
            for k in 0..8 {
                cand[k] += step[k];
            }
            // beyond Nyquist the carrier aliases onto a lower frequency
            let c = if cand[3].abs() <= NYQUIST { sse(&cand, patch) } else { f64::INFINITY };
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = cand;
                cost = c;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-10 {
                    return p;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p
}

/// Least-squares Gabor fit: spectral-grid start, then Levenberg–Marquardt.
pub fn fit_gabor(patch: &ImageFrame) -> Result<GaborFit> {
    if patch.width() < 5 || patch.height() < 5 {
        return Err(Error::InvalidInput("Gabor fitting needs at least a 5x5 patch".into()));
    }
    if !patch.is_finite() {
        return Err(Error::InvalidInput("patch contains non-finite values".into()));
    }
    let mean = patch.mean();
    let sst: f64 = patch.data().iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= 1e-24 * patch.len() as f64 {
        return Ok(GaborFit {
            orientation: 0.0,
            frequency: 0.0,
            phase: 0.0,
            center: ((patch.width() as f64 - 1.0) / 2.0, (patch.height() as f64 - 1.0) / 2.0),
            sigma: (1.0, 1.0),
            amplitude: 0.0,
            r2: 0.0,
            degenerate: true,
        });
    }
    let p = spectral_peaks(patch)
        .into_iter()
        .map(|(t, f)| levenberg_marquardt(initial_guess(patch, t, f), patch, 200))
        .min_by(|a, b| sse(a, patch).total_cmp(&sse(b, patch)))
        .map(canonical)
        .expect("at least one spectral peak");
    let r2 = (1.0 - sse(&p, patch) / sst).clamp(0.0, 1.0);
    Ok(GaborFit {
        orientation: p[2],
        frequency: p[3],
        phase: p[4],
        center: (p[0], p[1]),
        sigma: (p[5], p[6]),
        amplitude: p[7],
        r2,
        degenerate: false,
    })
}

/// Fits every patch, in parallel; results keep the input order.
pub fn fit_gabor_all(patches: &[ImageFrame]) -> Result<Vec<GaborFit>> {
    patches.par_iter().map(fit_gabor).collect()
}

/// Smallest angle between two orientations taken modulo `pi`, in `[0, pi/2]`.
pub fn orientation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Binary PPM (`P6`, 8 bits per channel).
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.data {
            out.extend(px.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        out
    }
}

/// Saturation used for cells without a valid fit.
pub const INVALID_SATURATION: f64 = 0.15;

/// Hue in `[0, 1)` for an orientation: `theta / pi` after reduction mod `pi`.
pub fn orientation_hue(theta: f64) -> f64 {
    let h = theta.rem_euclid(PI) / PI;
    if h >= 1.0 {
        0.0
    } else {
        h
    }
}

/// Standard HSV to RGB with `h` in `[0, 1)`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue in `[0, 1)` of an RGB triple; `None` for grays.
pub fn rgb_hue(rgb: [f64; 3]) -> Option<f64> {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c <= 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    Some((h / 6.0).rem_euclid(1.0))
}

/// Orientation hue map over a `width × height` grid of fits (row-major).
/// Cells without a valid fit are drawn with low saturation.
pub fn orientation_map(fits: &[GaborFit], width: usize, height: usize) -> Result<RgbImage> {
    if fits.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} fits for a {width}x{height} grid",
            fits.len()
        )));
    }
    let data = fits
        .iter()
        .map(|f| {
            let s = if f.is_valid() { 1.0 } else { INVALID_SATURATION };
            hsv_to_rgb(orientation_hue(f.orientation), s, 1.0)
        })
        .collect();
    Ok(RgbImage { width, height, data })
}

/// One row of an edge-response table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseRow {
    pub cell: usize,
    pub orientation: f64,
    pub position: f64,
    pub activation: f64,
}

pub const RESPONSE_CSV_HEADER: &str = "cell,orientation,position,activation";

/// Responses of every cell to a grid of edges over orientation × position.
/// `encode` maps a stimulus frame to one activation per cell.
pub fn response_profile(
    encode: impl Fn(&ImageFrame) -> Result<Vec<f64>>,
    size: (usize, usize),
    orientations: &[f64],
    positions: &[f64],
    softness: f64,
    contrast: f64,
) -> Result<Vec<ResponseRow>> {
    let mut rows = Vec::new();
    for &o in orientations {
        for &p in positions {
            let stim = edge_stimulus(o, p, size.0, size.1, softness).scale(contrast);
            for (cell, a) in encode(&stim)?.into_iter().enumerate() {
                rows.push(ResponseRow { cell, orientation: o, position: p, activation: a });
            }
        }
    }
    rows.sort_by(|a, b| a.cell.cmp(&b.cell));
    Ok(rows)
}

pub fn response_csv(rows: &[ResponseRow]) -> String {
    let mut s = String::from(RESPONSE_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.cell, r.orientation, r.position, r.activation);
    }
    s
}

/// Per-cell summary of a response table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSummary {
    pub cell: usize,
    /// Orientation (mod pi) of the strongest absolute response.
    pub preferred_orientation: f64,
    pub peak: f64,
    /// Full width at half maximum of `|activation|` over position at the
    /// preferred orientation.
    pub position_fwhm: f64,
}

/// Summarizes rows produced by [`response_profile`] for each cell.
pub fn summarize_responses(rows: &[ResponseRow]) -> Vec<ResponseSummary> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let cell = rows[i].cell;
        let mut j = i;
        while j < rows.len() && rows[j].cell == cell {
            j += 1;
        }
        let group = &rows[i..j];
        let best = group
            .iter()
            .max_by(|a, b| a.activation.abs().total_cmp(&b.activation.abs()))
            .expect("non-empty group");
        let mut curve: Vec<(f64, f64)> = group
            .iter()
            .filter(|r| r.orientation == best.orientation)
            .map(|r| (r.position, r.activation.abs()))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (ps, vs): (Vec<f64>, Vec<f64>) = curve.into_iter().unzip();
        out.push(ResponseSummary {
            cell,
            preferred_orientation: best.orientation.rem_euclid(PI),
            peak: best.activation.abs(),
            position_fwhm: fwhm(&ps, &vs),
        });
        i = j;
    }
    out
}

/// Full width at half maximum of a sampled curve, interpolating linearly
/// at the outermost half-maximum crossings. Zero for an all-zero curve.
pub fn fwhm(xs: &[f64], ys: &[f64]) -> f64 {
    let Some(imax) = (0..ys.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b])) else {
        return 0.0;
    };
    let half = ys[imax] / 2.0;
    if !(half > 0.0) {
        return 0.0;
    }
    let mut lo = xs[0];
    for i in (0..imax).rev() {
        if ys[i] < half {
            let t = (half - ys[i]) / (ys[i + 1] - ys[i]);
            lo = xs[i] + t * (xs[i + 1] - xs[i]);
            break;
        }
    }
    let mut hi = xs[xs.len() - 1];
    for i in imax + 1..ys.len() {
        if ys[i] < half {
            let t = (ys[i - 1] - half) / (ys[i - 1] - ys[i]);
            hi = xs[i - 1] + t * (xs[i] - xs[i - 1]);
            break;
        }
    }
    hi - lo
}

/// Orientation and frequency of a pooling unit from its connections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexParams {
    /// `None` when the weighted doubled-angle mean has (near) zero length.
    pub orientation: Option<f64>,
    pub frequency: Option<f64>,
    /// Length of the weighted doubled-angle mean, in `[0, 1]`.
    pub resultant: f64,
}

/// Resultant lengths below this are reported as undefined orientations.
pub const MIN_RESULTANT: f64 = 1e-9;

/// For each column `j` of `w` (`n_simple × n_complex`), the circular mean of
/// simple-cell orientations (doubled angles) and the mean frequency, both
/// weighted by `w[i, j]^2`. Only valid fits contribute.
pub fn complex_cell_params(w: &Array2<f64>, fits: &[GaborFit]) -> Result<Vec<ComplexParams>> {
    crate::error::check_len("simple-cell fits", w.nrows(), fits.len())?;
    Ok(w
        .columns()
        .into_iter()
        .map(|col| {
            let (mut c, mut s, mut wsum, mut fsum) = (0.0, 0.0, 0.0, 0.0);
            for (wi, fit) in col.iter().zip(fits) {
                if !fit.is_valid() {
                    continue;
                }
                let q = wi * wi;
                c += q * (2.0 * fit.orientation).cos();
                s += q * (2.0 * fit.orientation).sin();
                fsum += q * fit.frequency;
                wsum += q;
            }
            if wsum == 0.0 {
                return ComplexParams { orientation: None, frequency: None, resultant: 0.0 };
            }
            let resultant = c.hypot(s) / wsum;
            let orientation = (resultant > MIN_RESULTANT).then(|| (s.atan2(c) / 2.0).rem_euclid(PI));
            ComplexParams { orientation, frequency: Some(fsum / wsum), resultant }
        })
        .collect())
}

/// One line of a connection plot: a pooling unit, a simple cell it connects
/// to, where that simple cell sits and the squared weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionLine {
    pub complex: usize,
    pub simple: usize,
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// The `top_k` strongest squared connections of every pooling unit.
pub fn connection_lines(w: &Array2<f64>, positions: &[(f64, f64)], top_k: usize) -> Result<Vec<ConnectionLine>> {
    crate::error::check_len("simple-cell positions", w.nrows(), positions.len())?;
    let mut out = Vec::new();
    for (j, col) in w.columns().into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..col.len()).collect();
        idx.sort_by(|&a, &b| (col[b] * col[b]).total_cmp(&(col[a] * col[a])).then(a.cmp(&b)));
        for &i in idx.iter().take(top_k) {
            let (x, y) = positions[i];
            out.push(ConnectionLine { complex: j, simple: i, x, y, weight: col[i] * col[i] });
        }
    }
    Ok(out)
}

/// Result of [`topography_score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Topography {
    /// Mean orientation distance (radians, in `[0, pi/2]`) over 4-neighbour pairs.
    pub score: f64,
    pub p_value: f64,
    pub null_mean: f64,
    pub null_std: f64,
    pub n_valid: usize,
    pub n_pairs: usize,
    pub n_permutations: usize,
}

fn neighbour_pairs(valid: &[bool], width: usize, height: usize, wrap: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !valid[i] {
                continue;
            }
            let right = if x + 1 < width { Some(i + 1) } else if wrap && width > 2 { Some(y * width) } else { None };
            let down = if y + 1 < height { Some(i + width) } else if wrap && height > 2 { Some(x) } else { None };
            for j in [right, down].into_iter().flatten() {
                if valid[j] {
                    pairs.push((i, j));
                }
            }
        }
    }
    pairs
}

fn mean_pair_distance(theta: &[f64], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(a, b)| orientation_distance(theta[a], theta[b])).sum::<f64>() / pairs.len() as f64
}

/// Mean orientation distance between 4-neighbours on a `width × height` grid
/// (row-major, `None` for cells without a valid fit), with a permutation
/// p-value: orientations are shuffled among the valid cells and
/// `p = (1 + #{null <= observed}) / (1 + n_permutations)`.
pub fn topography_score(
    orientations: &[Option<f64>],
    width: usize,
    height: usize,
    wrap: bool,
    n_permutations: usize,
    seed: u64,
) -> Result<Topography> {
    if orientations.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} orientations for a {width}x{height} grid",
            orientations.len()
        )));
    }
    let valid: Vec<bool> = orientations.iter().map(Option::is_some).collect();
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid < 10 {
        return Err(Error::InsufficientData(format!("{n_valid} valid fits, need at least 10")));
    }
    let pairs = neighbour_pairs(&valid, width, height, wrap);
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no neighbouring pairs of valid fits".into()));
    }
    let mut theta: Vec<f64> = orientations.iter().map(|o| o.unwrap_or(0.0)).collect();
    let score = mean_pair_distance(&theta, &pairs);
    let slots: Vec<usize> = (0..theta.len()).filter(|&i| valid[i]).collect();
    let mut values: Vec<f64> = slots.iter().map(|&i| theta[i]).collect();
    let mut rng = rng_from_seed(seed);
    let mut null = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        values.shuffle(&mut rng);
        for (&i, &v) in slots.iter().zip(&values) {
            theta[i] = v;
        }
        null.push(mean_pair_distance(&theta, &pairs));
    }
    let below = null.iter().filter(|&&v| v <= score).count();
    let n = null.len().max(1) as f64;
    let null_mean = null.iter().sum::<f64>() / n;
    let null_std = (null.iter().map(|v| (v - null_mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Topography {
        score,
        p_value: (1 + below) as f64 / (1 + n_permutations) as f64,
        null_mean,
        null_std,
        n_valid,
        n_pairs: pairs.len(),
        n_permutations,
    })
}

/// `(orientation, frequency)` of every valid fit.
pub fn frequency_orientation_points(fits: &[GaborFit]) -> Vec<(f64, f64)> {
    fits.iter().filter(|f| f.is_valid()).map(|f| (f.orientation, f.frequency)).collect()
}

/// Tiles filters into one frame, each rescaled so its largest magnitude maps
/// to `±1`, separated by `pad` pixels of zero.
pub fn filter_mosaic(filters: &[ImageFrame], cols: usize, pad: usize) -> Result<ImageFrame> {
    let Some(first) = filters.first() else {
        return Ok(ImageFrame::zeros(0, 0));
    };
    let (fw, fh) = (first.width(), first.height());
    if filters.iter().any(|f| (f.width(), f.height()) != (fw, fh)) {
        return Err(Error::DimensionMismatch("filters differ in size".into()));
    }
    let cols = cols.max(1);
    let rows = filters.len().div_ceil(cols);
    let (w, h) = (cols * (fw + pad) + pad, rows * (fh + pad) + pad);
    let mut out = ImageFrame::zeros(w, h);
    for (k, f) in filters.iter().enumerate() {
        let m = f.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let s = if m > 0.0 { 1.0 / m } else { 0.0 };
        let (ox, oy) = (pad + (k % cols) * (fw + pad), pad + (k / cols) * (fh + pad));
        for y in 0..fh {
            for x in 0..fw {
                out.set(ox + x, oy + y, f.get(x, y) * s);
            }
        }
    }
    Ok(out)
}
