//! Temporal product network.
//!
//! A window of `n_tau` non-negative input vectors `S^tau` (absolute simple-cell
//! activations, or raw frames in the toy setting) is explained by one location
//! code `z1[tau]` per frame and a single invariant code `z2` shared by the
//! whole window:
//!
//! ```text
//! S_hat[tau] = sqrt( relu(W_D1 z1[tau]) * relu(W_D2 z2) )          (elementwise)
//! E = sum_tau ||S[tau] - S_hat[tau]||^2 + alpha1 sum_tau |z1[tau]| + alpha2 |z2|
//! ```
//!
//! Codes are constrained to be non-negative; inference is projected gradient
//! descent with backtracking. Both decoders keep unit-norm columns.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::frame::ImageFrame;
use crate::linalg::{self, proximal_descent, DescentSettings};
use crate::sparse::Flavor;
use crate::synth::gaussian_bump;

/// Added under the square root wherever it appears in a denominator.
pub const SQRT_EPS: f64 = 1e-8;

/// Default window length.
pub const DEFAULT_N_TAU: usize = 3;

/// Default sparsity weight of both codes.
pub const DEFAULT_ALPHA: f64 = 0.02;

/// Double-tanh encoder with per-unit gain and bias and a scalar notch.
#[derive(Debug, Clone, PartialEq)]
pub struct TpnEncoder {
    pub w_e: Array2<f64>,
    pub bias: Array1<f64>,
    pub gain: Array1<f64>,
    pub notch: f64,
}

impl TpnEncoder {
    pub fn n_code(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.w_e.ncols()
    }

    /// Unclamped `D (tanh(Y + U) + tanh(Y - U))` with `Y = W_E s + B`.
    pub fn raw(&self, s: &Array1<f64>) -> Result<Array1<f64>> {
        check_len("encoder input", self.n_in(), s.len())?;
        let y = self.w_e.dot(s) + &self.bias;
        Ok(Array1::from_shape_fn(y.len(), |i| {
            self.gain[i] * Flavor::DoubleTanh.apply(y[i], self.notch)
        }))
    }

    fn validate(&self) -> Result<()> {
        check_len("encoder bias", self.n_code(), self.bias.len())?;
        check_len("encoder gain", self.n_code(), self.gain.len())?;
        Ok(())
    }
}

/// The two decoders, two encoders and the sparsity weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TpnModel {
    /// `n_s × n_1` location decoder.
    pub w_d1: Array2<f64>,
    /// `n_s × n_2` invariant decoder.
    pub w_d2: Array2<f64>,
    pub enc1: TpnEncoder,
    pub enc2: TpnEncoder,
    pub n_tau: usize,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl TpnModel {
    /// Decoders with non-negative random columns, encoders initialized to the
    /// scaled decoder transposes with zero bias and unit gain.
    pub fn random<R: Rng + ?Sized>(n_s: usize, n1: usize, n2: usize, n_tau: usize, rng: &mut R) -> Self {
        let mut w_d1 = Array2::from_shape_simple_fn((n_s, n1), || rng.sample::<f64, _>(StandardNormal).abs());
        let mut w_d2 = Array2::from_shape_simple_fn((n_s, n2), || rng.sample::<f64, _>(StandardNormal).abs());
        linalg::normalize_columns(&mut w_d1);
        linalg::normalize_columns(&mut w_d2);
        let enc = |w: &Array2<f64>, scale: f64| TpnEncoder {
            w_e: w.t().to_owned() * scale,
            bias: Array1::zeros(w.ncols()),
            gain: Array1::ones(w.ncols()),
            notch: crate::sparse::EncoderParams::DEFAULT_NOTCH,
        };
        let enc1 = enc(&w_d1, 1.0);
        let enc2 = enc(&w_d2, 1.0 / n_tau.max(1) as f64);
        Self { w_d1, w_d2, enc1, enc2, n_tau, alpha1: DEFAULT_ALPHA, alpha2: DEFAULT_ALPHA }
    }

    pub fn n_s(&self) -> usize {
        self.w_d1.nrows()
    }

    pub fn n1(&self) -> usize {
        self.w_d1.ncols()
    }

    pub fn n2(&self) -> usize {
        self.w_d2.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("invariant decoder rows", self.n_s(), self.w_d2.nrows())?;
        check_len("location encoder rows", self.n1(), self.enc1.n_code())?;
        check_len("invariant encoder rows", self.n2(), self.enc2.n_code())?;
        check_len("location encoder inputs", self.n_s(), self.enc1.n_in())?;
        check_len("invariant encoder inputs", self.n_s(), self.enc2.n_in())?;
        self.enc1.validate()?;
        self.enc2.validate()?;
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(Error::InvalidInput("alpha1 and alpha2 must be positive".into()));
        }
        if self.n_tau == 0 {
            return Err(Error::InvalidInput("n_tau must be positive".into()));
        }
        Ok(())
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut v = linalg::column_norms(&self.w_d1);
        v.extend(linalg::column_norms(&self.w_d2));
        v
    }
}

/// `n_tau` non-negative input vectors, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameWindow {
    frames: Vec<Array1<f64>>,
}

impl FrameWindow {
    pub fn new(frames: Vec<Array1<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("empty frame window".into()));
        }
        let n = frames[0].len();
        for f in &frames {
            check_len("window frame", n, f.len())?;
            if f.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidInput("window entries must be finite and >= 0".into()));
            }
        }
        Ok(Self { frames })
    }

    /// Takes absolute values of arbitrary (e.g. simple-cell) activations.
    pub fn from_activations(frames: Vec<Array1<f64>>) -> Result<Self> {
        Self::new(frames.into_iter().map(|f| f.mapv(f64::abs)).collect())
    }

    pub fn frames(&self) -> &[Array1<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }
}

/// Inferred location codes (one per frame) and the shared invariant code.
#[derive(Debug, Clone, PartialEq)]
pub struct TpnCode {
    pub z1: Vec<Array1<f64>>,
    pub z2: Array1<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl TpnCode {
    /// A code with no inference diagnostics; `energy` is left at zero.
    pub fn from_parts(z1: Vec<Array1<f64>>, z2: Array1<f64>) -> Self {
        Self { z1, z2, energy: 0.0, iterations: 0, converged: false, trace: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpnHyper {
    pub max_iters: usize,
    pub step_size: f64,
    pub tolerance: f64,
}

impl Default for TpnHyper {
    fn default() -> Self {
        Self { max_iters: 200, step_size: 0.5, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpnRates {
    pub decoder: f64,
    pub encoder: f64,
}

impl Default for TpnRates {
    fn default() -> Self {
        Self { decoder: 0.02, encoder: 0.02 }
    }
}

/// `sqrt(relu(W_D1 z1) * relu(W_D2 z2))`
pub fn tpn_reconstruct(z1: &Array1<f64>, z2: &Array1<f64>, model: &TpnModel) -> Result<Array1<f64>> {
    check_len("location code", model.n1(), z1.len())?;
    check_len("invariant code", model.n2(), z2.len())?;
    let a = model.w_d1.dot(z1);
    let b = model.w_d2.dot(z2);
    Ok(Array1::from_shape_fn(a.len(), |i| (a[i].max(0.0) * b[i].max(0.0)).sqrt()))
}

fn check_window(window: &FrameWindow, model: &TpnModel) -> Result<()> {
    check_len("window length", model.n_tau, window.len())?;
    check_len("window frame", model.n_s(), window.dim())
}

fn check_code(code_z1: &[Array1<f64>], z2: &Array1<f64>, model: &TpnModel) -> Result<()> {
    check_len("location codes", model.n_tau, code_z1.len())?;
    for z in code_z1 {
        check_len("location code", model.n1(), z.len())?;
    }
    check_len("invariant code", model.n2(), z2.len())
}

/// Reconstruction error plus both sparsity terms.
pub fn tpn_energy(window: &FrameWindow, z1: &[Array1<f64>], z2: &Array1<f64>, model: &TpnModel) -> Result<f64> {
    check_window(window, model)?;
    check_code(z1, z2, model)?;
    let mut e = 0.0;
    for (s, z) in window.frames().iter().zip(z1) {
        let r = tpn_reconstruct(z, z2, model)?;
        e += linalg::sq_norm((s - &r).view()) + model.alpha1 * linalg::l1(z.view());
    }
    Ok(e + model.alpha2 * linalg::l1(z2.view()))
}

/// Everything needed for gradients of the reconstruction term at one code.
struct Forward {
    /// Per frame: `dE/da` (pre-rectification location decoder output).
    da: Vec<Array1<f64>>,
    /// Per frame: `dE/db`.
    db: Vec<Array1<f64>>,
    recon: f64,
}

fn forward(window: &FrameWindow, z1: &[Array1<f64>], z2: &Array1<f64>, model: &TpnModel) -> Forward {
    let b = model.w_d2.dot(z2);
    let mut out = Forward { da: Vec::with_capacity(z1.len()), db: Vec::with_capacity(z1.len()), recon: 0.0 };
    for (s, z) in window.frames().iter().zip(z1) {
        let a = model.w_d1.dot(z);
        let n = a.len();
        let mut da = Array1::zeros(n);
        let mut db = Array1::zeros(n);
        for i in 0..n {
            let (ar, br) = (a[i].max(0.0), b[i].max(0.0));
            let p = ar * br;
            let r = p.sqrt();
            let e = s[i] - r;
            out.recon += e * e;
            let dr = -2.0 * e;
            let denom = 2.0 * (p + SQRT_EPS).sqrt();
            // one-sided derivative at 0 so that a zero factor can grow
            if a[i] >= 0.0 {
                da[i] = dr * br / denom;
            }
            if b[i] >= 0.0 {
                db[i] = dr * ar / denom;
            }
        }
        out.da.push(da);
        out.db.push(db);
    }
    out
}

/// Gradients of the energy with respect to the codes and both decoders.
#[derive(Debug, Clone)]
pub struct TpnGrads {
    pub z1: Vec<Array1<f64>>,
    pub z2: Array1<f64>,
    pub w_d1: Array2<f64>,
    pub w_d2: Array2<f64>,
}

/// Analytic gradient of [`tpn_energy`]. The L1 terms contribute
/// `alpha` per component (codes are non-negative).
pub fn tpn_energy_grads(
    window: &FrameWindow,
    z1: &[Array1<f64>],
    z2: &Array1<f64>,
    model: &TpnModel,
) -> Result<TpnGrads> {
    check_window(window, model)?;
    check_code(z1, z2, model)?;
    let fw = forward(window, z1, z2, model);
    let mut g2 = Array1::from_elem(model.n2(), model.alpha2);
    let mut gw1 = Array2::zeros(model.w_d1.raw_dim());
    let mut gw2 = Array2::zeros(model.w_d2.raw_dim());
    let mut g1 = Vec::with_capacity(z1.len());
    for ((da, db), z) in fw.da.iter().zip(&fw.db).zip(z1) {
        g1.push(model.w_d1.t().dot(da) + model.alpha1);
        g2 += &model.w_d2.t().dot(db);
        gw1 += &outer(da, z);
        gw2 += &outer(db, z2);
    }
    Ok(TpnGrads { z1: g1, z2: g2, w_d1: gw1, w_d2: gw2 })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

/// Location-code prediction for one frame, clamped at zero.
pub fn tpn_encode_z1(s: &Array1<f64>, model: &TpnModel) -> Result<Array1<f64>> {
    Ok(model.enc1.raw(s)?.mapv_into(|v| v.max(0.0)))
}

fn encode_z2_raw(window: &FrameWindow, model: &TpnModel) -> Result<Array1<f64>> {
    let mut acc = Array1::zeros(model.n2());
    for s in window.frames() {
        acc += &model.enc2.raw(s)?;
    }
    Ok(acc)
}

/// Invariant-code prediction: sum over the window of per-frame double-tanh
/// maps, clamped at zero.
pub fn tpn_encode_z2(window: &FrameWindow, model: &TpnModel) -> Result<Array1<f64>> {
    Ok(encode_z2_raw(window, model)?.mapv_into(|v| v.max(0.0)))
}

fn pack(z1: &[Array1<f64>], z2: &Array1<f64>) -> Array1<f64> {
    let mut v = Vec::with_capacity(z1.iter().map(|z| z.len()).sum::<usize>() + z2.len());
    for z in z1 {
        v.extend(z.iter());
    }
    v.extend(z2.iter());
    Array1::from(v)
}

fn unpack(v: &Array1<f64>, n_tau: usize, n1: usize) -> (Vec<Array1<f64>>, Array1<f64>) {
    let z1 = (0..n_tau).map(|t| v.slice(ndarray::s![t * n1..(t + 1) * n1]).to_owned()).collect();
    let z2 = v.slice(ndarray::s![n_tau * n1..]).to_owned();
    (z1, z2)
}

/// Starting point used when a block of the encoder prediction is all zero:
/// at exactly zero the rectified product has no gradient to follow.
const FALLBACK_INIT: f64 = 0.1;

/// Projected-gradient inference initialized from the encoders.
pub fn tpn_infer(window: &FrameWindow, model: &TpnModel, hyper: &TpnHyper) -> Result<TpnCode> {
    check_window(window, model)?;
    let mut z1: Vec<Array1<f64>> =
        window.frames().iter().map(|s| tpn_encode_z1(s, model)).collect::<Result<_>>()?;
    let mut z2 = tpn_encode_z2(window, model)?;
    for z in z1.iter_mut().chain(std::iter::once(&mut z2)) {
        if z.iter().all(|&v| v == 0.0) {
            z.fill(FALLBACK_INIT);
        }
    }
    tpn_infer_from(window, model, hyper, z1, z2)
}

/// Projected-gradient inference from an explicit starting code.
pub fn tpn_infer_from(
    window: &FrameWindow,
    model: &TpnModel,
    hyper: &TpnHyper,
    z1: Vec<Array1<f64>>,
    z2: Array1<f64>,
) -> Result<TpnCode> {
    check_window(window, model)?;
    check_code(&z1, &z2, model)?;
    if !(hyper.step_size > 0.0) {
        return Err(Error::InvalidInput("step_size must be positive".into()));
    }
    let (n_tau, n1) = (model.n_tau, model.n1());
    let z0 = pack(&z1, &z2).mapv_into(|v| v.max(0.0));
    let res = proximal_descent(
        z0,
        DescentSettings { step: hyper.step_size, max_iters: hyper.max_iters, tolerance: hyper.tolerance },
        |v| {
            let (z1, z2) = unpack(v, n_tau, n1);
            let fw = forward(window, &z1, &z2, model);
            let l1 = model.alpha1 * z1.iter().map(|z| z.sum()).sum::<f64>() + model.alpha2 * z2.sum();
            let mut g2 = Array1::from_elem(model.n2(), model.alpha2);
            let mut g = Vec::with_capacity(v.len());
            for (da, db) in fw.da.iter().zip(&fw.db) {
                g.extend((model.w_d1.t().dot(da) + model.alpha1).iter());
                g2 += &model.w_d2.t().dot(db);
            }
            g.extend(g2.iter());
            (fw.recon + l1, Array1::from(g))
        },
        |v, _| v.mapv_into(|x| x.max(0.0)),
        |_| 0.0,
    );
    let (z1, z2) = unpack(&res.z, n_tau, n1);
    Ok(TpnCode { z1, z2, energy: res.energy, iterations: res.iterations, converged: res.converged, trace: res.trace })
}

/// Gradients of the encoder regression loss
/// `sum_tau ||z1*[tau] - enc1(S[tau])||^2 + ||z2* - sum_tau enc2(S[tau])||^2`
/// computed on the unclamped encoder outputs.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub w_e: Array2<f64>,
    pub bias: Array1<f64>,
    pub gain: Array1<f64>,
    pub notch: f64,
}

impl EncoderGrads {
    fn zeros(enc: &TpnEncoder) -> Self {
        Self {
            w_e: Array2::zeros(enc.w_e.raw_dim()),
            bias: Array1::zeros(enc.n_code()),
            gain: Array1::zeros(enc.n_code()),
            notch: 0.0,
        }
    }
}

/// Accumulates into `g` the gradient of `sum_i dp[i] * p_i(s)` with
/// `p = D (tanh(Y + U) + tanh(Y - U))`.
fn accumulate_encoder(enc: &TpnEncoder, s: &Array1<f64>, dp: &Array1<f64>, g: &mut EncoderGrads) {
    let y = enc.w_e.dot(s) + &enc.bias;
    let mut dy = Array1::zeros(y.len());
    for i in 0..y.len() {
        let h = Flavor::DoubleTanh.apply(y[i], enc.notch);
        let (hy, hu) = Flavor::DoubleTanh.derivs(y[i], enc.notch);
        g.gain[i] += dp[i] * h;
        dy[i] = dp[i] * enc.gain[i] * hy;
        g.notch += dp[i] * enc.gain[i] * hu;
    }
    g.bias += &dy;
    g.w_e += &outer(&dy, s);
}

pub fn encoder_loss(window: &FrameWindow, code: &TpnCode, model: &TpnModel) -> Result<f64> {
    let mut loss = 0.0;
    for (s, z) in window.frames().iter().zip(&code.z1) {
        loss += linalg::sq_norm((z - &model.enc1.raw(s)?).view());
    }
    Ok(loss + linalg::sq_norm((&code.z2 - &encode_z2_raw(window, model)?).view()))
}

pub fn encoder_grads(window: &FrameWindow, code: &TpnCode, model: &TpnModel) -> Result<(EncoderGrads, EncoderGrads)> {
    check_window(window, model)?;
    check_code(&code.z1, &code.z2, model)?;
    let mut g1 = EncoderGrads::zeros(&model.enc1);
    for (s, z) in window.frames().iter().zip(&code.z1) {
        let dp = (model.enc1.raw(s)? - z) * 2.0;
        accumulate_encoder(&model.enc1, s, &dp, &mut g1);
    }
    let mut g2 = EncoderGrads::zeros(&model.enc2);
    let dp = (encode_z2_raw(window, model)? - &code.z2) * 2.0;
    for s in window.frames() {
        accumulate_encoder(&model.enc2, s, &dp, &mut g2);
    }
    Ok((g1, g2))
}

fn apply_encoder(enc: &mut TpnEncoder, g: &EncoderGrads, lr: f64) {
    enc.w_e.scaled_add(-lr, &g.w_e);
    enc.bias.scaled_add(-lr, &g.bias);
    enc.gain.scaled_add(-lr, &g.gain);
    enc.gain.mapv_inplace(|d| d.max(0.0));
    enc.notch = (enc.notch - lr * g.notch).max(0.0);
}

/// Training diagnostics at the inferred code (before the update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpnStepDiagnostics {
    pub energy: f64,
    pub encoder_loss: f64,
}

/// Infers the optimal code, steps both decoders on the energy and both
/// encoders on the regression loss, then renormalizes the decoder columns.
pub fn tpn_train_step(
    window: &FrameWindow,
    model: &mut TpnModel,
    hyper: &TpnHyper,
    rates: &TpnRates,
) -> Result<TpnStepDiagnostics> {
    tpn_train_batch(std::slice::from_ref(window), model, hyper, rates)
}

/// Mini-batch version of [`tpn_train_step`]; gradients are averaged.
pub fn tpn_train_batch(
    windows: &[FrameWindow],
    model: &mut TpnModel,
    hyper: &TpnHyper,
    rates: &TpnRates,
) -> Result<TpnStepDiagnostics> {
    model.validate()?;
    if windows.is_empty() {
        return Ok(TpnStepDiagnostics::default());
    }
    let n = windows.len() as f64;
    let mut gw1 = Array2::zeros(model.w_d1.raw_dim());
    let mut gw2 = Array2::zeros(model.w_d2.raw_dim());
    let mut ge1 = EncoderGrads::zeros(&model.enc1);
    let mut ge2 = EncoderGrads::zeros(&model.enc2);
    let mut diag = TpnStepDiagnostics::default();
    for w in windows {
        let code = tpn_infer(w, model, hyper)?;
        let g = tpn_energy_grads(w, &code.z1, &code.z2, model)?;
        gw1 += &g.w_d1;
        gw2 += &g.w_d2;
        let (e1, e2) = encoder_grads(w, &code, model)?;
        for (acc, e) in [(&mut ge1, e1), (&mut ge2, e2)] {
            acc.w_e += &e.w_e;
            acc.bias += &e.bias;
            acc.gain += &e.gain;
            acc.notch += e.notch;
        }
        diag.energy += code.energy / n;
        diag.encoder_loss += encoder_loss(w, &code, model)? / n;
    }
    model.w_d1.scaled_add(-rates.decoder / n, &gw1);
    model.w_d2.scaled_add(-rates.decoder / n, &gw2);
    linalg::normalize_columns(&mut model.w_d1);
    linalg::normalize_columns(&mut model.w_d2);
    apply_encoder(&mut model.enc1, &ge1, rates.encoder / n);
    apply_encoder(&mut model.enc2, &ge2, rates.encoder / n);
    Ok(diag)
}

/// Mean inferred energy over a set of windows.
pub fn mean_energy(windows: &[FrameWindow], model: &TpnModel, hyper: &TpnHyper) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        total += tpn_infer(w, model, hyper)?.energy;
    }
    Ok(total / windows.len().max(1) as f64)
}

/// Sliding windows over a sequence, most recent frame first.
pub fn windows_from_sequence(seq: &[Array1<f64>], n_tau: usize) -> Result<Vec<FrameWindow>> {
    if n_tau == 0 {
        return Err(Error::InvalidInput("n_tau must be positive".into()));
    }
    (n_tau - 1..seq.len())
        .map(|t| FrameWindow::from_activations((0..n_tau).map(|k| seq[t - k].clone()).collect()))
        .collect()
}

/// Codes of every unit for a bump that slid to `(x, y)` along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionResponses {
    pub size: usize,
    /// `[unit][y * size + x]` response of the newest location code.
    pub location: Vec<Vec<f64>>,
    /// `[unit][y * size + x]` response of the invariant code.
    pub invariant: Vec<Vec<f64>>,
}

/// Probes the model with windows of a Gaussian bump of the given width whose
/// newest frame is centered at `(x, y)` and whose older frames lag one pixel
/// per step in `x`, for every position of a `size × size` grid.
pub fn position_responses(model: &TpnModel, size: usize, width: f64, hyper: &TpnHyper) -> Result<PositionResponses> {
    check_len("frame pixels", model.n_s(), size * size)?;
    position_responses_with(model, size, width, hyper, |f| Ok(Array1::from(f.data().to_vec())))
}

/// [`position_responses`] for a model whose input is `|encode(frame)|`, e.g.
/// the activations of a frozen simple-cell layer.
pub fn position_responses_with(
    model: &TpnModel,
    size: usize,
    width: f64,
    hyper: &TpnHyper,
    encode: impl Fn(&ImageFrame) -> Result<Array1<f64>>,
) -> Result<PositionResponses> {
    let mut out = PositionResponses {
        size,
        location: vec![vec![0.0; size * size]; model.n1()],
        invariant: vec![vec![0.0; size * size]; model.n2()],
    };
    for y in 0..size {
        for x in 0..size {
            let frames = (0..model.n_tau)
                .map(|k| encode(&gaussian_bump(size, width, x as f64 - k as f64, y as f64)))
                .collect::<Result<Vec<_>>>()?;
            let code = tpn_infer(&FrameWindow::from_activations(frames)?, model, hyper)?;
            for (j, r) in out.location.iter_mut().enumerate() {
                r[y * size + x] = code.z1[0][j];
            }
            for (j, r) in out.invariant.iter_mut().enumerate() {
                r[y * size + x] = code.z2[j];
            }
        }
    }
    Ok(out)
}

/// Mean variance along rows (`x` varies) and along columns (`y` varies) of a
/// row-major `size × size` response map.
pub fn axis_variances(map: &[f64], size: usize) -> (f64, f64) {
    let var = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let vx = (0..size).map(|y| var(&mut (0..size).map(|x| map[y * size + x]))).sum::<f64>() / size as f64;
    let vy = (0..size).map(|x| var(&mut (0..size).map(|y| map[y * size + x]))).sum::<f64>() / size as f64;
    (vx, vy)
}

/// `var_x / var_y` for every unit that responds at all.
pub fn variance_ratios(maps: &[Vec<f64>], size: usize) -> Vec<f64> {
    maps.iter()
        .map(|m| axis_variances(m, size))
        .filter(|&(vx, vy)| vx + vy > 1e-12)
        .map(|(vx, vy)| vx / vy.max(f64::MIN_POSITIVE))
        .collect()
}
