//! Patch-level sparse coding and predictive sparse decomposition (PSD).
//!
//! A [`Dictionary`] holds the decoder `W_D` (unit-norm columns); an
//! [`EncoderParams`] holds the feed-forward predictor
//!
//! ```text
//! tanh:         Enc(x) = D * tanh(W_E x + B)
//! double tanh:  Enc(x) = D * (tanh(W_E x + B + U) + tanh(W_E x + B - U))
//! ```
//!
//! The sparse-coding energy is `||x - W_D z||^2 + alpha |z|_1`; PSD adds the
//! prediction term `||z - Enc(x)||^2`. Inference runs proximal gradient steps
//! (soft thresholding) with backtracking, so the energy never increases.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, proximal_descent, DescentSettings};

/// Decoder matrix `W_D` of shape `n_x × n_z` with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    w: Array2<f64>,
}

impl Dictionary {
    /// Wraps `w` after normalizing its columns.
    pub fn from_matrix(mut w: Array2<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.ncols() == 0 {
            return Err(Error::InvalidInput("empty dictionary".into()));
        }
        linalg::normalize_columns(&mut w);
        Ok(Self { w })
    }

    /// I.i.d. Gaussian columns, normalized.
    pub fn random<R: Rng + ?Sized>(n_x: usize, n_z: usize, rng: &mut R) -> Self {
        let mut w = linalg::gaussian_matrix(n_x, n_z, rng);
        linalg::normalize_columns(&mut w);
        Self { w }
    }

    pub fn n_x(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_z(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.w.column(j)
    }

    pub fn reconstruct(&self, z: &Array1<f64>) -> Result<Array1<f64>> {
        check_len("code", self.n_z(), z.len())?;
        Ok(self.w.dot(z))
    }

    /// Applies `W_D -= lr * grad` and renormalizes the columns.
    pub fn apply_gradient(&mut self, grad: &Array2<f64>, lr: f64) {
        self.w.scaled_add(-lr, grad);
        linalg::normalize_columns(&mut self.w);
    }

    pub fn column_norms(&self) -> Vec<f64> {
        linalg::column_norms(&self.w)
    }
}

/// Encoder nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Tanh,
    DoubleTanh,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Tanh => "tanh",
            Flavor::DoubleTanh => "double_tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Flavor::Tanh),
            "double_tanh" | "double-tanh" => Ok(Flavor::DoubleTanh),
            _ => Err(Error::InvalidInput(format!("unknown encoder flavor '{s}'"))),
        }
    }

    /// `h(y; u)` without the gain.
    #[inline]
    pub fn apply(self, y: f64, u: f64) -> f64 {
        match self {
            Flavor::Tanh => y.tanh(),
            Flavor::DoubleTanh => (y + u).tanh() + (y - u).tanh(),
        }
    }

    /// `(dh/dy, dh/du)`
    #[inline]
    pub fn derivs(self, y: f64, u: f64) -> (f64, f64) {
        match self {
            Flavor::Tanh => {
                let t = y.tanh();
                (1.0 - t * t, 0.0)
            }
            Flavor::DoubleTanh => {
                let a = (y + u).tanh();
                let b = (y - u).tanh();
                let (sa, sb) = (1.0 - a * a, 1.0 - b * b);
                (sa + sb, sa - sb)
            }
        }
    }
}

/// Feed-forward encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `n_z × n_x` filter matrix.
    pub w_e: Array2<f64>,
    /// Diagonal gain `D`, kept non-negative.
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
    /// Notch half-width `U`: one shared entry or one per unit. Unused by [`Flavor::Tanh`].
    pub notch: Array1<f64>,
    pub flavor: Flavor,
}

impl EncoderParams {
    pub const DEFAULT_NOTCH: f64 = 0.5;

    /// `W_E = W_D^T`, `D = 1`, `B = 0`, shared `U = 0.5`.
    pub fn init_from(dict: &Dictionary, flavor: Flavor) -> Self {
        let n_z = dict.n_z();
        Self {
            w_e: dict.matrix().t().to_owned(),
            gain: Array1::ones(n_z),
            bias: Array1::zeros(n_z),
            notch: Array1::from_elem(1, Self::DEFAULT_NOTCH),
            flavor,
        }
    }

    /// Switches to one notch width per unit, seeded from the current value(s).
    pub fn with_per_unit_notch(mut self) -> Self {
        let n = self.n_z();
        if self.notch.len() != n {
            let u = self.notch[0];
            self.notch = Array1::from_elem(n, u);
        }
        self
    }

    pub fn n_z(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.w_e.ncols()
    }

    #[inline]
    pub fn notch_at(&self, i: usize) -> f64 {
        if self.notch.len() == 1 {
            self.notch[0]
        } else {
            self.notch[i]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_z();
        check_len("encoder gain", n, self.gain.len())?;
        check_len("encoder bias", n, self.bias.len())?;
        if self.notch.len() != 1 && self.notch.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "notch must have 1 or {n} entries, got {}",
                self.notch.len()
            )));
        }
        if self.gain.iter().any(|&d| d < 0.0) || self.notch.iter().any(|&u| u < 0.0) {
            return Err(Error::InvalidInput("encoder gains and notch widths must be >= 0".into()));
        }
        Ok(())
    }

    /// `Y = W_E x + B`
    pub fn preactivation(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_len("encoder input", self.n_x(), x.len())?;
        Ok(self.w_e.dot(x) + &self.bias)
    }

    pub fn encode(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let y = self.preactivation(x)?;
        Ok(Array1::from_shape_fn(y.len(), |i| {
            self.gain[i] * self.flavor.apply(y[i], self.notch_at(i))
        }))
    }

    fn clamp(&mut self) {
        self.gain.mapv_inplace(|d| d.max(0.0));
        self.notch.mapv_inplace(|u| u.max(0.0));
    }
}

/// An inferred code with its final energy and iteration diagnostics.
#[derive(Debug, Clone)]
pub struct CodeState {
    pub z: Array1<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after every accepted iteration, starting with the initial code.
    pub trace: Vec<f64>,
}

impl From<linalg::DescentResult> for CodeState {
    fn from(r: linalg::DescentResult) -> Self {
        Self { z: r.z, energy: r.energy, iterations: r.iterations, converged: r.converged, trace: r.trace }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseHyper {
    pub alpha: f64,
    pub max_iters: usize,
    /// Initial step of the backtracking line search.
    pub step_size: f64,
    /// Relative energy change that ends inference.
    pub tolerance: f64,
}

impl Default for SparseHyper {
    fn default() -> Self {
        Self { alpha: 0.5, max_iters: 100, step_size: 0.5, tolerance: 1e-6 }
    }
}

impl SparseHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::InvalidInput("alpha and step_size must be positive".into()));
        }
        Ok(())
    }

    fn descent(&self) -> DescentSettings {
        DescentSettings { step: self.step_size, max_iters: self.max_iters, tolerance: self.tolerance }
    }
}

/// SGD learning rates for the decoder and encoder parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub decoder: f64,
    pub encoder: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { decoder: 0.01, encoder: 0.01 }
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    pub recon_err: f64,
    pub pred_err: f64,
    pub l1: f64,
    pub energy: f64,
}

impl StepDiagnostics {
    pub const CSV_HEADER: &'static str = "step,recon_err,pred_err,l1,energy";

    pub fn csv_row(&self, step: usize) -> String {
        format!("{step},{},{},{},{}", self.recon_err, self.pred_err, self.l1, self.energy)
    }

    pub fn mean(items: &[StepDiagnostics]) -> StepDiagnostics {
        let n = items.len().max(1) as f64;
        let mut m = StepDiagnostics::default();
        for d in items {
            m.recon_err += d.recon_err / n;
            m.pred_err += d.pred_err / n;
            m.l1 += d.l1 / n;
            m.energy += d.energy / n;
        }
        m
    }
}

/// A patch-level PSD model.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub dict: Dictionary,
    pub enc: EncoderParams,
}

impl SparseModel {
    pub fn new(dict: Dictionary, enc: EncoderParams) -> Result<Self> {
        enc.validate()?;
        check_len("encoder rows", dict.n_z(), enc.n_z())?;
        check_len("encoder columns", dict.n_x(), enc.n_x())?;
        Ok(Self { dict, enc })
    }

    pub fn random<R: Rng + ?Sized>(n_x: usize, n_z: usize, flavor: Flavor, rng: &mut R) -> Self {
        let dict = Dictionary::random(n_x, n_z, rng);
        let enc = EncoderParams::init_from(&dict, flavor);
        Self { dict, enc }
    }
}

fn residual(x: &Array1<f64>, z: &Array1<f64>, dict: &Dictionary) -> Array1<f64> {
    x - &dict.matrix().dot(z)
}

/// `||x - W_D z||^2 + alpha |z|_1`
pub fn energy_sc(x: &Array1<f64>, z: &Array1<f64>, dict: &Dictionary, alpha: f64) -> Result<f64> {
    check_len("input", dict.n_x(), x.len())?;
    check_len("code", dict.n_z(), z.len())?;
    let r = residual(x, z, dict);
    Ok(r.dot(&r) + alpha * linalg::l1(z.view()))
}

/// `||x - W_D z||^2 + ||z - Enc(x)||^2 + alpha |z|_1`
pub fn energy_psd(
    x: &Array1<f64>,
    z: &Array1<f64>,
    dict: &Dictionary,
    enc: &EncoderParams,
    alpha: f64,
) -> Result<f64> {
    let p = enc.encode(x)?;
    check_len("code", p.len(), z.len())?;
    let d = z - &p;
    Ok(energy_sc(x, z, dict, alpha)? + d.dot(&d))
}

/// Gradient of `energy_sc` in `z`, using `sign(0) = 0` for the L1 term.
pub fn energy_sc_grad_code(
    x: &Array1<f64>,
    z: &Array1<f64>,
    dict: &Dictionary,
    alpha: f64,
) -> Result<Array1<f64>> {
    check_len("input", dict.n_x(), x.len())?;
    check_len("code", dict.n_z(), z.len())?;
    let r = residual(x, z, dict);
    Ok(dict.matrix().t().dot(&r) * -2.0 + &z.mapv(|v| alpha * linalg::sign(v)))
}

/// Gradient of `energy_psd` in `z`, using `sign(0) = 0` for the L1 term.
pub fn energy_psd_grad_code(
    x: &Array1<f64>,
    z: &Array1<f64>,
    dict: &Dictionary,
    enc: &EncoderParams,
    alpha: f64,
) -> Result<Array1<f64>> {
    let p = enc.encode(x)?;
    Ok(energy_sc_grad_code(x, z, dict, alpha)? + &((z - &p) * 2.0))
}

/// Gradient of `||x - W_D z||^2` with respect to `W_D`: `-2 (x - W_D z) z^T`.
pub fn recon_grad_dict(x: &Array1<f64>, z: &Array1<f64>, dict: &Dictionary) -> Result<Array2<f64>> {
    check_len("input", dict.n_x(), x.len())?;
    check_len("code", dict.n_z(), z.len())?;
    let r = residual(x, z, dict);
    Ok(outer(&r, z) * -2.0)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Gradients of `energy_psd` at a fixed code with respect to every trainable parameter.
#[derive(Debug, Clone)]
pub struct PsdGrads {
    pub dict: Array2<f64>,
    pub w_e: Array2<f64>,
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
    pub notch: Array1<f64>,
}

/// Gradient of `||z - Enc(x)||^2` with respect to the encoder parameters.
pub fn encoder_regression_grads(
    x: &Array1<f64>,
    target: &Array1<f64>,
    enc: &EncoderParams,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>, Array1<f64>)> {
    let y = enc.preactivation(x)?;
    check_len("target", y.len(), target.len())?;
    let n = y.len();
    let mut dy = Array1::zeros(n);
    let mut dgain = Array1::zeros(n);
    let mut dnotch = Array1::zeros(enc.notch.len());
    for i in 0..n {
        let u = enc.notch_at(i);
        let h = enc.flavor.apply(y[i], u);
        let (hy, hu) = enc.flavor.derivs(y[i], u);
        // d/dp of (z - p)^2
        let dp = -2.0 * (target[i] - enc.gain[i] * h);
        dgain[i] = dp * h;
        dy[i] = dp * enc.gain[i] * hy;
        if enc.flavor == Flavor::DoubleTanh {
            let k = if enc.notch.len() == 1 { 0 } else { i };
            dnotch[k] += dp * enc.gain[i] * hu;
        }
    }
    let dw = outer(&dy, x);
    Ok((dw, dgain, dy, dnotch))
}

pub fn psd_param_grads(x: &Array1<f64>, z: &Array1<f64>, model: &SparseModel) -> Result<PsdGrads> {
    let dict = recon_grad_dict(x, z, &model.dict)?;
    let (w_e, gain, bias, notch) = encoder_regression_grads(x, z, &model.enc)?;
    Ok(PsdGrads { dict, w_e, gain, bias, notch })
}

/// Sparse-coding inference from `z = 0`.
pub fn infer_code_sc(x: &Array1<f64>, dict: &Dictionary, hyper: &SparseHyper) -> Result<CodeState> {
    infer_code_sc_from(x, dict, hyper, Array1::zeros(dict.n_z()))
}

pub fn infer_code_sc_from(
    x: &Array1<f64>,
    dict: &Dictionary,
    hyper: &SparseHyper,
    z0: Array1<f64>,
) -> Result<CodeState> {
    hyper.validate()?;
    check_len("input", dict.n_x(), x.len())?;
    check_len("initial code", dict.n_z(), z0.len())?;
    let w = dict.matrix();
    let alpha = hyper.alpha;
    let res = proximal_descent(
        z0,
        hyper.descent(),
        |z| {
            let r = x - &w.dot(z);
            (r.dot(&r), w.t().dot(&r) * -2.0)
        },
        |v, t| v.mapv_into(|a| linalg::soft_threshold(a, alpha * t)),
        |z| alpha * linalg::l1(z.view()),
    );
    Ok(res.into())
}

/// PSD inference warm-started from the encoder prediction.
pub fn infer_code_psd(x: &Array1<f64>, model: &SparseModel, hyper: &SparseHyper) -> Result<CodeState> {
    let p = model.enc.encode(x)?;
    infer_code_psd_from(x, model, hyper, p)
}

pub fn infer_code_psd_from(
    x: &Array1<f64>,
    model: &SparseModel,
    hyper: &SparseHyper,
    z0: Array1<f64>,
) -> Result<CodeState> {
    hyper.validate()?;
    check_len("input", model.dict.n_x(), x.len())?;
    check_len("initial code", model.dict.n_z(), z0.len())?;
    let p = model.enc.encode(x)?;
    let w = model.dict.matrix();
    let alpha = hyper.alpha;
    let res = proximal_descent(
        z0,
        hyper.descent(),
        |z| {
            let r = x - &w.dot(z);
            let d = z - &p;
            (r.dot(&r) + d.dot(&d), w.t().dot(&r) * -2.0 + &(d * 2.0))
        },
        |v, t| v.mapv_into(|a| linalg::soft_threshold(a, alpha * t)),
        |z| alpha * linalg::l1(z.view()),
    );
    Ok(res.into())
}

fn diagnostics(x: &Array1<f64>, z: &Array1<f64>, dict: &Dictionary, pred: Option<&Array1<f64>>, alpha: f64) -> StepDiagnostics {
    let r = residual(x, z, dict);
    let recon_err = r.dot(&r);
    let pred_err = pred.map(|p| linalg::sq_norm((z - p).view())).unwrap_or(0.0);
    let l1 = linalg::l1(z.view());
    StepDiagnostics { recon_err, pred_err, l1, energy: recon_err + pred_err + alpha * l1 }
}

/// One PSD step: infer `z*`, take an SGD step on every parameter at `z*`,
/// clamp `D, U >= 0` and renormalize the decoder columns. Diagnostics are
/// measured at `z*` before the update.
pub fn train_step_psd(
    x: &Array1<f64>,
    model: &mut SparseModel,
    hyper: &SparseHyper,
    rates: &LearningRates,
) -> Result<StepDiagnostics> {
    let code = infer_code_psd(x, model, hyper)?;
    let pred = model.enc.encode(x)?;
    let diag = diagnostics(x, &code.z, &model.dict, Some(&pred), hyper.alpha);
    let g = psd_param_grads(x, &code.z, model)?;
    model.dict.apply_gradient(&g.dict, rates.decoder);
    let enc = &mut model.enc;
    enc.w_e.scaled_add(-rates.encoder, &g.w_e);
    enc.gain.scaled_add(-rates.encoder, &g.gain);
    enc.bias.scaled_add(-rates.encoder, &g.bias);
    enc.notch.scaled_add(-rates.encoder, &g.notch);
    enc.clamp();
    Ok(diag)
}

/// Mini-batch PSD step; gradients are averaged over the batch.
pub fn train_batch_psd(
    xs: &[Array1<f64>],
    model: &mut SparseModel,
    hyper: &SparseHyper,
    rates: &LearningRates,
) -> Result<StepDiagnostics> {
    if xs.is_empty() {
        return Ok(StepDiagnostics::default());
    }
    let n = xs.len() as f64;
    let (n_x, n_z) = (model.dict.n_x(), model.dict.n_z());
    let mut acc = PsdGrads {
        dict: Array2::zeros((n_x, n_z)),
        w_e: Array2::zeros((n_z, n_x)),
        gain: Array1::zeros(n_z),
        bias: Array1::zeros(n_z),
        notch: Array1::zeros(model.enc.notch.len()),
    };
    let mut diags = Vec::with_capacity(xs.len());
    for x in xs {
        let code = infer_code_psd(x, model, hyper)?;
        let pred = model.enc.encode(x)?;
        diags.push(diagnostics(x, &code.z, &model.dict, Some(&pred), hyper.alpha));
        let g = psd_param_grads(x, &code.z, model)?;
        acc.dict += &g.dict;
        acc.w_e += &g.w_e;
        acc.gain += &g.gain;
        acc.bias += &g.bias;
        acc.notch += &g.notch;
    }
    model.dict.apply_gradient(&acc.dict, rates.decoder / n);
    let enc = &mut model.enc;
    let lr = rates.encoder / n;
    enc.w_e.scaled_add(-lr, &acc.w_e);
    enc.gain.scaled_add(-lr, &acc.gain);
    enc.bias.scaled_add(-lr, &acc.bias);
    enc.notch.scaled_add(-lr, &acc.notch);
    enc.clamp();
    Ok(StepDiagnostics::mean(&diags))
}

/// One sparse-coding dictionary step (no encoder).
pub fn train_dictionary_sc(
    x: &Array1<f64>,
    dict: &mut Dictionary,
    hyper: &SparseHyper,
    lr: f64,
) -> Result<StepDiagnostics> {
    train_dictionary_sc_batch(std::slice::from_ref(x), dict, hyper, lr)
}

/// Mini-batch sparse-coding dictionary step; gradients averaged over the batch.
pub fn train_dictionary_sc_batch(
    xs: &[Array1<f64>],
    dict: &mut Dictionary,
    hyper: &SparseHyper,
    lr: f64,
) -> Result<StepDiagnostics> {
    if xs.is_empty() {
        return Ok(StepDiagnostics::default());
    }
    let mut grad = Array2::zeros((dict.n_x(), dict.n_z()));
    let mut diags = Vec::with_capacity(xs.len());
    for x in xs {
        let code = infer_code_sc(x, dict, hyper)?;
        diags.push(diagnostics(x, &code.z, dict, None, hyper.alpha));
        grad += &recon_grad_dict(x, &code.z, dict)?;
    }
    dict.apply_gradient(&grad, lr / xs.len() as f64);
    Ok(StepDiagnostics::mean(&diags))
}

/// Average `F_psd` (PSD energy at the inferred code) over a batch.
pub fn mean_psd_objective(xs: &[Array1<f64>], model: &SparseModel, hyper: &SparseHyper) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        total += infer_code_psd(x, model, hyper)?.energy;
    }
    Ok(total / xs.len().max(1) as f64)
}

/// Mean squared distance between the optimal code and the encoder prediction.
pub fn mean_prediction_error(xs: &[Array1<f64>], model: &SparseModel, hyper: &SparseHyper) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        let z = infer_code_psd(x, model, hyper)?.z;
        total += linalg::sq_norm((&z - &model.enc.encode(x)?).view());
    }
    Ok(total / xs.len().max(1) as f64)
}
