//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! The figure reproductions (6, 9, 10) run the shipped configs through the
//! CLI in-process, so they take several minutes.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use tpn_cli::data::{load_model, Model};
use tpn_cli::Cli;
use tpn_core::analysis::{fit_gabor_all, topography_score};
use tpn_core::group::{group_penalty, group_penalty_grad};
use tpn_core::linalg::{gaussian_matrix, soft_threshold};
use tpn_core::local::{
    infer_image_code, train_local_frame_with, Density, LocalHyper, LocalRates, LocalSparsity,
};
use tpn_core::preprocess::preprocess;
use tpn_core::sparse::{
    energy_psd, energy_psd_grad_code, energy_sc, energy_sc_grad_code, infer_code_psd, infer_code_sc,
    mean_prediction_error, psd_param_grads, recon_grad_dict, train_batch_psd, train_dictionary_sc_batch,
    LearningRates,
};
use tpn_core::synth::{dead_leaves, dead_leaves_with_radii, rng_from_seed};
use tpn_core::tpn::{
    encoder_grads, encoder_loss, position_responses, tpn_energy, tpn_energy_grads, tpn_infer, tpn_train_batch,
    variance_ratios, windows_from_sequence, TpnEncoder, TpnHyper, TpnRates,
};
use tpn_core::{
    Dictionary, EncoderParams, Flavor, FrameWindow, GroupSparsityConfig, ImageFrame, LocalNet, LocalTopology,
    PreprocessConfig, SparseHyper, SparseModel, TpnCode, TpnModel,
};

type Outcome = (bool, String);

fn gvec<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    gaussian_matrix(n, 1, rng).into_shape(n).unwrap()
}

fn noise(w: usize, h: usize, seed: u64) -> ImageFrame {
    let mut rng = rng_from_seed(seed);
    ImageFrame::from_fn(w, h, |_, _| rng.gen_range(-1.0..1.0))
}

fn max_abs(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs one CLI command in-process.
fn tpn(args: &[&str]) {
    let cli: Cli = clap::Parser::try_parse_from(std::iter::once("tpn").chain(args.iter().copied()))
        .unwrap_or_else(|e| panic!("{args:?}: {e}"));
    tpn_cli::run(&cli).unwrap_or_else(|e| panic!("tpn {args:?}: {e:#}"));
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------- 1

fn orthonormal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = gaussian_matrix(n, n, rng);
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

fn c1_soft_threshold_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng_from_seed(21);
    let hyper = SparseHyper { alpha: 0.3, max_iters: 500, tolerance: 1e-14, ..Default::default() };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let q = orthonormal(16, &mut rng);
        let dict = Dictionary::from_matrix(q.clone()).unwrap();
        let x = gvec(16, &mut rng);
        let z = infer_code_sc(&x, &dict, &hyper).unwrap().z;
        let oracle = q.t().dot(&x).mapv(|v| soft_threshold(v, hyper.alpha / 2.0));
        worst = worst.max(max_abs(&z, &oracle));
    }
    let t = t0.elapsed();
    (worst < 1e-5 && t < Duration::from_secs(1), format!("max error {worst:.2e} over 20 trials, {:.3} s", secs(t)))
}

// ---------------------------------------------------------------- 2

const FD_STEP: f64 = 1e-6;

fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
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

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape(v: &[f64], like: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_vec(like.raw_dim(), v.to_vec()).unwrap()
}

fn away_from_zero<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    gvec(n, rng).mapv(|g| g.signum() * (0.1 + g.abs()))
}

const SAMPLES: usize = 100;

fn grad_sparse_coding(worst: &mut f64) {
    let mut rng = rng_from_seed(11);
    for _ in 0..SAMPLES {
        let dict = Dictionary::random(9, 12, &mut rng);
        let x = gvec(9, &mut rng);
        let z = away_from_zero(12, &mut rng);
        let alpha = rng.gen_range(0.1..1.0);
        let a = energy_sc_grad_code(&x, &z, &dict, alpha).unwrap();
        let n = numeric_grad(z.as_slice().unwrap(), |p| energy_sc(&x, &Array1::from(p.to_vec()), &dict, alpha).unwrap());
        *worst = worst.max(rel_err(a.as_slice().unwrap(), &n));

        let a = recon_grad_dict(&x, &z, &dict).unwrap();
        let w0 = dict.matrix().clone();
        let n = numeric_grad(&flat(&w0), |p| {
            let r = &x - &reshape(p, &w0).dot(&z);
            r.dot(&r)
        });
        *worst = worst.max(rel_err(&flat(&a), &n));
    }
}

fn grad_psd(worst: &mut f64) {
    let mut rng = rng_from_seed(13);
    for k in 0..SAMPLES {
        let flavor = if k % 2 == 0 { Flavor::DoubleTanh } else { Flavor::Tanh };
        let mut m = SparseModel::random(6, 8, flavor, &mut rng);
        m.enc.w_e = gaussian_matrix(8, 6, &mut rng) * 0.4;
        m.enc.bias = gvec(8, &mut rng) * 0.3;
        m.enc.gain = gvec(8, &mut rng).mapv(|g| 0.5 + g.abs());
        m.enc.notch = Array1::from_elem(1, rng.gen_range(0.2..1.0));
        if k % 4 == 0 {
            m.enc = m.enc.clone().with_per_unit_notch();
        }
        let x = gvec(6, &mut rng);
        let z = away_from_zero(8, &mut rng);
        let alpha = 0.5;
        let a = energy_psd_grad_code(&x, &z, &m.dict, &m.enc, alpha).unwrap();
        let n = numeric_grad(z.as_slice().unwrap(), |p| {
            energy_psd(&x, &Array1::from(p.to_vec()), &m.dict, &m.enc, alpha).unwrap()
        });
        *worst = worst.max(rel_err(a.as_slice().unwrap(), &n));

        let g = psd_param_grads(&x, &z, &m).unwrap();
        let e = |enc: &EncoderParams| energy_psd(&x, &z, &m.dict, enc, alpha).unwrap();
        let with = |f: &dyn Fn(&mut EncoderParams)| {
            let mut enc = m.enc.clone();
            f(&mut enc);
            e(&enc)
        };
        let n = numeric_grad(&flat(&m.enc.w_e), |p| with(&|enc| enc.w_e = reshape(p, &m.enc.w_e)));
        *worst = worst.max(rel_err(&flat(&g.w_e), &n));
        let n = numeric_grad(m.enc.bias.as_slice().unwrap(), |p| with(&|enc| enc.bias = Array1::from(p.to_vec())));
        *worst = worst.max(rel_err(g.bias.as_slice().unwrap(), &n));
        let n = numeric_grad(m.enc.gain.as_slice().unwrap(), |p| with(&|enc| enc.gain = Array1::from(p.to_vec())));
        *worst = worst.max(rel_err(g.gain.as_slice().unwrap(), &n));
        let n = numeric_grad(m.enc.notch.as_slice().unwrap(), |p| with(&|enc| enc.notch = Array1::from(p.to_vec())));
        *worst = worst.max(rel_err(g.notch.as_slice().unwrap(), &n));
        // decoder gradient of the PSD energy is the reconstruction gradient
        let a = recon_grad_dict(&x, &z, &m.dict).unwrap();
        let n = numeric_grad(&flat(m.dict.matrix()), |p| {
            let r = &x - &reshape(p, m.dict.matrix()).dot(&z);
            r.dot(&r)
        });
        *worst = worst.max(rel_err(&flat(&a), &n));
    }
}

fn grad_group(worst: &mut f64) {
    let mut rng = rng_from_seed(14);
    for k in 0..SAMPLES {
        let (w, h) = (5 + k % 3, 4 + k % 2);
        let cfg = GroupSparsityConfig { epsilon: 1e-3, ..GroupSparsityConfig::with_sigma(0.7, 1.0 + (k % 3) as f64 * 0.5) };
        let z = gvec(w * h, &mut rng);
        let wrap = k % 2 == 0;
        let a = group_penalty_grad(z.as_slice().unwrap(), w, h, wrap, &cfg).unwrap();
        let n = numeric_grad(z.as_slice().unwrap(), |p| group_penalty(p, w, h, wrap, &cfg).unwrap());
        *worst = worst.max(rel_err(&a, &n));
    }
}

fn positive_tpn<R: Rng>(rng: &mut R) -> (TpnModel, FrameWindow, Vec<Array1<f64>>, Array1<f64>) {
    let (n_s, n1, n2, n_tau) = (7, 5, 4, 3);
    let mut m = TpnModel::random(n_s, n1, n2, n_tau, rng);
    m.w_d1.mapv_inplace(|v| v + 0.1);
    m.w_d2.mapv_inplace(|v| v + 0.1);
    let mut pos = |n: usize| Array1::from_shape_simple_fn(n, || rng.gen_range(0.2..1.5));
    let window = FrameWindow::new((0..n_tau).map(|_| pos(n_s)).collect()).unwrap();
    let z1 = (0..n_tau).map(|_| pos(n1)).collect();
    let z2 = pos(n2);
    (m, window, z1, z2)
}

fn grad_tpn(worst: &mut f64) {
    let mut rng = rng_from_seed(15);
    for _ in 0..SAMPLES {
        let (mut model, window, z1, z2) = positive_tpn(&mut rng);
        let g = tpn_energy_grads(&window, &z1, &z2, &model).unwrap();
        let n1 = model.n1();
        let packed: Vec<f64> = z1.iter().flat_map(|z| z.iter().copied()).collect();
        let n = numeric_grad(&packed, |p| {
            let zs: Vec<Array1<f64>> = p.chunks(n1).map(|c| Array1::from(c.to_vec())).collect();
            tpn_energy(&window, &zs, &z2, &model).unwrap()
        });
        let a: Vec<f64> = g.z1.iter().flat_map(|z| z.iter().copied()).collect();
        *worst = worst.max(rel_err(&a, &n));
        let n = numeric_grad(z2.as_slice().unwrap(), |p| tpn_energy(&window, &z1, &Array1::from(p.to_vec()), &model).unwrap());
        *worst = worst.max(rel_err(g.z2.as_slice().unwrap(), &n));
        let n = numeric_grad(&flat(&model.w_d1), |p| {
            let mut m = model.clone();
            m.w_d1 = reshape(p, &model.w_d1);
            tpn_energy(&window, &z1, &z2, &m).unwrap()
        });
        *worst = worst.max(rel_err(&flat(&g.w_d1), &n));
        let n = numeric_grad(&flat(&model.w_d2), |p| {
            let mut m = model.clone();
            m.w_d2 = reshape(p, &model.w_d2);
            tpn_energy(&window, &z1, &z2, &m).unwrap()
        });
        *worst = worst.max(rel_err(&flat(&g.w_d2), &n));

        for enc in [&mut model.enc1, &mut model.enc2] {
            enc.bias = gvec(enc.n_code(), &mut rng) * 0.2;
            enc.gain = gvec(enc.n_code(), &mut rng).mapv(|g| 0.5 + g.abs());
            enc.notch = rng.gen_range(0.2..0.8);
        }
        let code = TpnCode::from_parts(z1, z2);
        let (g1, g2) = encoder_grads(&window, &code, &model).unwrap();
        for (which, g) in [(1, &g1), (2, &g2)] {
            let base = if which == 1 { model.enc1.clone() } else { model.enc2.clone() };
            let loss = |f: &dyn Fn(&mut TpnEncoder)| {
                let mut m = model.clone();
                f(if which == 1 { &mut m.enc1 } else { &mut m.enc2 });
                encoder_loss(&window, &code, &m).unwrap()
            };
            let n = numeric_grad(&flat(&base.w_e), |p| loss(&|e| e.w_e = reshape(p, &base.w_e)));
            *worst = worst.max(rel_err(&flat(&g.w_e), &n));
            let n = numeric_grad(base.bias.as_slice().unwrap(), |p| loss(&|e| e.bias = Array1::from(p.to_vec())));
            *worst = worst.max(rel_err(g.bias.as_slice().unwrap(), &n));
            let n = numeric_grad(base.gain.as_slice().unwrap(), |p| loss(&|e| e.gain = Array1::from(p.to_vec())));
            *worst = worst.max(rel_err(g.gain.as_slice().unwrap(), &n));
            let n = numeric_grad(&[base.notch], |p| loss(&|e| e.notch = p[0]));
            *worst = worst.max(rel_err(&[g.notch], &n));
        }
    }
}

fn c2_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut all = 0.0f64;
    let families: [(&str, fn(&mut f64)); 4] =
        [("sc", grad_sparse_coding), ("psd", grad_psd), ("group", grad_group), ("tpn", grad_tpn)];
    for (name, f) in families {
        let mut w = 0.0;
        f(&mut w);
        all = all.max(w);
        parts.push(format!("{name} {w:.1e}"));
    }
    let t = t0.elapsed();
    (
        all < 1e-4 && t < Duration::from_secs(30),
        format!("max rel error {} ({SAMPLES} samples each), {:.1} s", parts.join(", "), secs(t)),
    )
}

// ---------------------------------------------------------------- 3

fn norm_dev(norms: impl IntoIterator<Item = f64>) -> f64 {
    norms.into_iter().fold(0.0, |m, n| m.max((n - 1.0).abs()))
}

fn patches(side: usize, count: usize, seed: u64) -> Vec<Array1<f64>> {
    let img = preprocess(&dead_leaves(64, 64, 120, seed), &PreprocessConfig::with_width(4.0)).unwrap();
    let mut rng = rng_from_seed(seed + 1);
    (0..count)
        .map(|_| {
            let (x, y) = (rng.gen_range(0..=64 - side), rng.gen_range(0..=64 - side));
            Array1::from(img.window(x, y, side, side).unwrap().into_data())
        })
        .collect()
}

fn c3_normalization() -> Outcome {
    let mut worst = 0.0f64;
    let mut steps = 0usize;
    let xs = patches(6, 400, 3);
    let hyper = SparseHyper { alpha: 0.3, ..Default::default() };
    let mut dict = Dictionary::random(36, 48, &mut rng_from_seed(1));
    for b in xs.chunks(10) {
        train_dictionary_sc_batch(b, &mut dict, &hyper, 0.5).unwrap();
        worst = worst.max(norm_dev(dict.column_norms()));
        steps += 1;
    }
    for flavor in [Flavor::Tanh, Flavor::DoubleTanh] {
        let mut m = SparseModel::random(36, 48, flavor, &mut rng_from_seed(2));
        let rates = LearningRates { decoder: 0.05, encoder: 0.05 };
        for b in xs.chunks(10) {
            train_batch_psd(b, &mut m, &hyper, &rates).unwrap();
            worst = worst.max(norm_dev(m.dict.column_norms()));
            steps += 1;
        }
    }
    let group = LocalSparsity::Group(GroupSparsityConfig::with_sigma(0.5, 1.5));
    for (period, sparsity) in [(Some(6), LocalSparsity::L1(0.5)), (None, LocalSparsity::L1(0.5)), (Some(6), group)] {
        let topo = LocalTopology::square(24, 6, Density::COMPLETE, period);
        let mut net = LocalNet::random(topo, Flavor::DoubleTanh, &mut rng_from_seed(4)).unwrap();
        let hyper = LocalHyper { sparsity, adjust_iters: 1, ..Default::default() };
        let rates = LocalRates { decoder: 0.05, encoder: 0.05 };
        for seed in 0..2 {
            let frame = preprocess(&dead_leaves(24, 24, 60, 50 + seed), &PreprocessConfig::with_width(3.0)).unwrap();
            train_local_frame_with(&frame, &mut net, &hyper, &rates, |net| {
                worst = worst.max(norm_dev(net.decoder_norms()));
                steps += 1;
            })
            .unwrap();
        }
    }
    let seq: Vec<Array1<f64>> = tpn_core::synth::moving_gaussian(60, 6, 1.0, 5)
        .unwrap()
        .frames
        .iter()
        .map(|f| Array1::from(f.data().to_vec()))
        .collect();
    let windows = windows_from_sequence(&seq, 3).unwrap();
    let mut model = TpnModel::random(36, 6, 6, 3, &mut rng_from_seed(6));
    for b in windows.chunks(5) {
        tpn_train_batch(b, &mut model, &TpnHyper::default(), &TpnRates::default()).unwrap();
        worst = worst.max(norm_dev(model.column_norms()));
        steps += 1;
    }
    (worst <= 1e-6, format!("max |norm - 1| {worst:.1e} over {steps} steps (sc, psd, local l1/group, tpn)"))
}

// ---------------------------------------------------------------- 4

fn c4_descent() -> Outcome {
    const SLACK: f64 = 1e-10;
    let mut worst = f64::NEG_INFINITY;
    let mut problems = 0;
    let mut check = |trace: &[f64]| {
        for w in trace.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
        problems += 1;
    };
    let mut rng = rng_from_seed(40);
    for k in 0..200 {
        let dict = Dictionary::random(16, 24, &mut rng);
        let x = gvec(16, &mut rng);
        let hyper = SparseHyper { alpha: rng.gen_range(0.05..1.0), ..Default::default() };
        check(&infer_code_sc(&x, &dict, &hyper).unwrap().trace);
        let flavor = if k % 2 == 0 { Flavor::DoubleTanh } else { Flavor::Tanh };
        let m = SparseModel::random(16, 24, flavor, &mut rng);
        check(&infer_code_psd(&x, &m, &hyper).unwrap().trace);
    }
    for _ in 0..200 {
        let mut m = TpnModel::random(9, 4, 3, 3, &mut rng);
        m.alpha1 = rng.gen_range(0.0..0.1);
        m.alpha2 = rng.gen_range(0.0..0.1);
        let w = FrameWindow::new((0..3).map(|_| Array1::from_shape_simple_fn(9, || rng.gen_range(0.0..1.0))).collect())
            .unwrap();
        check(&tpn_infer(&w, &m, &TpnHyper::default()).unwrap().trace);
    }
    for k in 0..400u64 {
        let n = 8 + (k % 5) as usize;
        let period = if k % 3 == 0 { None } else { Some(2) };
        let topo = LocalTopology::square(n, 3 + (k % 2) as usize, Density::COMPLETE, period);
        let net = LocalNet::random(topo, Flavor::DoubleTanh, &mut rng).unwrap();
        let sparsity = if k % 2 == 0 {
            LocalSparsity::L1(rng.gen_range(0.05..1.0))
        } else {
            LocalSparsity::Group(GroupSparsityConfig::with_sigma(rng.gen_range(0.05..1.0), rng.gen_range(0.8..2.0)))
        };
        let hyper = LocalHyper { sparsity, psd: k % 4 < 2, ..Default::default() };
        check(&infer_image_code(&noise(n, n, 1000 + k), &net, &hyper).unwrap().trace);
    }
    (
        worst <= SLACK,
        format!("{problems} problems (sc, psd, tpn, local l1/group), largest per-iteration energy change {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn c5_planted_recovery() -> Outcome {
    let t0 = Instant::now();
    let (n_x, n_z) = (64, 128);
    let mut rng = rng_from_seed(5);
    let truth = Dictionary::random(n_x, n_z, &mut rng);
    let mut dict = Dictionary::random(n_x, n_z, &mut rng);
    let hyper = SparseHyper { alpha: 0.1, ..Default::default() };
    for _ in 0..1500 {
        let xs: Vec<Array1<f64>> = (0..10)
            .map(|_| {
                let mut z = Array1::zeros(n_z);
                for _ in 0..3 {
                    z[rng.gen_range(0..n_z)] = rng.gen_range(0.5..1.5);
                }
                truth.matrix().dot(&z)
            })
            .collect();
        train_dictionary_sc_batch(&xs, &mut dict, &hyper, 2.0).unwrap();
    }
    let recovered =
        (0..n_z).filter(|&j| (0..n_z).any(|i| truth.column(j).dot(&dict.column(i)).abs() > 0.95)).count();
    let t = t0.elapsed();
    (
        recovered * 10 >= n_z * 9 && t < Duration::from_secs(300),
        format!("{recovered}/{n_z} columns at |cos| > 0.95, {:.1} s", secs(t)),
    )
}

// ---------------------------------------------------------------- 6, 10

/// Frames of the still-image dataset shared by the local-network figures.
fn still_images(dir: &Path) -> PathBuf {
    let (g, p) = (dir.join("gen"), dir.join("pre"));
    tpn(&["gen", "--config", &config("fig1_gen.conf"), "--out", s(&g)]);
    let frames = g.join("frames.tpn");
    tpn(&["preprocess", "--config", &config("fig1_preprocess.conf"), "--input", s(&frames), "--out", s(&p)]);
    p.join("frames.tpn")
}

fn train_local_cli(conf: &str, input: &Path, out: &Path) -> LocalNet {
    tpn(&["train-local", "--config", &config(conf), "--input", s(input), "--out", s(out)]);
    match load_model(&out.join("model.tpn")).unwrap().0 {
        Model::Local(n) => *n,
        m => panic!("expected a local model, got {}", m.kind()),
    }
}

fn c6_fig1(images: &Path, dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let net = train_local_cli("fig1_train_local.conf", images, &dir.join("fig1"));
    let tiles: Vec<ImageFrame> = (0..net.tile_filters().len()).map(|i| net.tile_decoder_frame(i)).collect();
    let fits = fit_gabor_all(&tiles).unwrap();
    let valid = fits.iter().filter(|f| f.r2 >= 0.5).count();
    let share = valid as f64 / fits.len() as f64;
    let side = net.topology().patch.0 as f64;
    let sub_cycle = fits.iter().filter(|f| f.r2 >= 0.5 && f.frequency * side < 1.0).count();
    // energy of each tile filter's projection inside the receptive field of a unit using it
    let mut min_inside = f64::INFINITY;
    for i in 0..net.tile_filters().len() {
        let u = net.users(tpn_core::local::FilterRef::Tile(i))[0];
        let mut z = Array1::zeros(net.n_units());
        z[u] = 1.0;
        let proj = net.reconstruct(&z).unwrap();
        let r = net.unit(u).rect;
        let (mut inside, mut total) = (0.0, 0.0);
        for y in 0..proj.height() {
            for x in 0..proj.width() {
                let e = proj.get(x, y).powi(2);
                total += e;
                if r.contains(x, y) {
                    inside += e;
                }
            }
        }
        min_inside = min_inside.min(inside / total);
    }
    let t = t0.elapsed();
    (
        share >= 0.6 && min_inside >= 0.8 && t < Duration::from_secs(1800),
        format!(
            "{valid}/{} tile filters with Gabor r2 >= 0.5 ({:.1}%; {sub_cycle} of them under one carrier cycle), \
             min energy inside receptive field {:.3}, {:.0} s",
            fits.len(),
            100.0 * share,
            min_inside,
            secs(t)
        ),
    )
}

fn c10_topography(images: &Path, dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let net = train_local_cli("fig2_train_local.conf", images, &dir.join("fig2"));
    let Some((px, py)) = net.topology().period else { return (false, "config is not periodic".into()) };
    let tiles: Vec<ImageFrame> = (0..net.tile_filters().len()).map(|i| net.tile_decoder_frame(i)).collect();
    let fits = fit_gabor_all(&tiles).unwrap();
    let mut orients = vec![None; px * py];
    for (f, &(kx, ky)) in fits.iter().zip(net.tile_keys()) {
        orients[ky * px + kx] = f.is_valid().then_some(f.orientation);
    }
    let t = t0.elapsed();
    match topography_score(&orients, px, py, true, 1000, 1) {
        Ok(r) => (
            r.p_value < 0.01 && t < Duration::from_secs(1200),
            format!(
                "score {:.3} vs shuffled {:.3} +- {:.3}, p = {:.4} ({} valid fits), {:.0} s",
                r.score,
                r.null_mean,
                r.null_std,
                r.p_value,
                r.n_valid,
                secs(t)
            ),
        ),
        Err(e) => (false, format!("no topography score: {e}")),
    }
}

// ---------------------------------------------------------------- 7, 8

fn c7_tile_shift() -> Outcome {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (n, p, t, seed) in [(60, 10, 20, 7), (48, 8, 12, 8)] {
        let topo = LocalTopology::square(n, p, Density::COMPLETE, Some(t));
        let net = LocalNet::random(topo, Flavor::DoubleTanh, &mut rng_from_seed(seed)).unwrap();
        let frame = noise(n, n, seed + 100);
        let shifted = ImageFrame::from_fn(n, n, |x, y| if x >= t { frame.get(x - t, y) } else { 0.0 });
        let (a, b) = (net.encode_image(&frame).unwrap(), net.encode_image(&shifted).unwrap());
        // interior: both sites bulk and both receptive fields clear of the zero-filled strip
        for sy in 0..n {
            for sx in 0..n - t {
                let (u, v) = (net.unit_at(sx, sy), net.unit_at(sx + t, sy));
                if net.is_bulk(u) && net.is_bulk(v) {
                    worst = worst.max((a[u] - b[v]).abs());
                    compared += 1;
                }
            }
        }
    }
    (compared > 0 && worst < 1e-6, format!("max abs diff {worst:.1e} over {compared} bulk unit pairs"))
}

fn c8_convolution() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (n, p, seed) in [(24, 6, 5), (30, 7, 6)] {
        let topo = LocalTopology::square(n, p, Density::COMPLETE, Some(1));
        let net = LocalNet::random(topo, Flavor::DoubleTanh, &mut rng_from_seed(seed)).unwrap();
        let frame = noise(n, n, seed + 10);
        let code = net.encode_image(&frame).unwrap();
        let k = &net.tile_filters()[0];
        for sy in 0..n {
            for sx in 0..n {
                let u = net.unit_at(sx, sy);
                if !net.is_bulk(u) {
                    continue;
                }
                let r = net.unit(u).rect;
                let mut acc = k.bias;
                for j in 0..p {
                    for i in 0..p {
                        acc += k.encoder[j * p + i] * frame.get(r.x0 + i, r.y0 + j);
                    }
                }
                let direct = k.gain * net.flavor.apply(acc, net.notch);
                worst = worst.max((code[u] - direct).abs());
                checked += 1;
            }
        }
    }
    (checked > 0 && worst < 1e-6, format!("max abs diff {worst:.1e} over {checked} interior positions"))
}

// ---------------------------------------------------------------- 9

fn c9_fig3(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let (g, t) = (dir.join("fig3_gen"), dir.join("fig3_tpn"));
    tpn(&["gen", "--config", &config("fig3_gen.conf"), "--out", s(&g)]);
    let frames = g.join("frames.tpn");
    tpn(&["train-tpn", "--config", &config("fig3_train_tpn.conf"), "--input", s(&frames), "--out", s(&t)]);
    let Model::Tpn(model) = load_model(&t.join("model.tpn")).unwrap().0 else {
        return (false, "train-tpn did not write a tpn model".into());
    };
    let r = position_responses(&model, 10, 1.5, &TpnHyper::default()).unwrap();
    let median = |maps: &[Vec<f64>]| {
        let mut q = variance_ratios(maps, r.size);
        q.sort_by(f64::total_cmp);
        if q.is_empty() {
            f64::NAN
        } else {
            q[q.len() / 2]
        }
    };
    let (inv, loc) = (median(&r.invariant), median(&r.location));
    let el = t0.elapsed();
    (
        inv < 0.5 && loc > 1.0 && el < Duration::from_secs(600),
        format!("median var_x/var_y: invariant {inv:.3}, location {loc:.3}, {:.0} s", secs(el)),
    )
}

// ---------------------------------------------------------------- 11

fn c11_double_tanh() -> Outcome {
    let t0 = Instant::now();
    let (p, n_z, steps, batch) = (8, 128, 1000, 10);
    let cfg = PreprocessConfig::with_width(11.3);
    let imgs: Vec<ImageFrame> =
        (0..10).map(|s| preprocess(&dead_leaves_with_radii(128, 128, 300, (4.0, 32.0), 100 + s), &cfg).unwrap()).collect();
    let mut rng = rng_from_seed(11);
    let mut sample = |n: usize| -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| {
                let f = &imgs[rng.gen_range(0..imgs.len())];
                let (x, y) = (rng.gen_range(0..=f.width() - p), rng.gen_range(0..=f.height() - p));
                Array1::from(f.window(x, y, p, p).unwrap().into_data())
            })
            .collect()
    };
    let train: Vec<Vec<Array1<f64>>> = (0..steps).map(|_| sample(batch)).collect();
    let test = sample(500);
    let hyper = SparseHyper { alpha: 0.5, ..Default::default() };
    let rates = LearningRates { decoder: 0.01, encoder: 0.01 };
    let err = |flavor| {
        let mut m = SparseModel::random(p * p, n_z, flavor, &mut rng_from_seed(4));
        for xs in &train {
            train_batch_psd(xs, &mut m, &hyper, &rates).unwrap();
        }
        mean_prediction_error(&test, &m, &hyper).unwrap()
    };
    let (tanh, double) = (err(Flavor::Tanh), err(Flavor::DoubleTanh));
    (
        double <= tanh,
        format!("prediction error double tanh {double:.4} vs tanh {tanh:.4} (ratio {:.2}), {:.0} s", tanh / double, secs(t0.elapsed())),
    )
}

// ---------------------------------------------------------------- 12

fn c12_determinism(dir: &Path) -> Outcome {
    let g = dir.join("det_gen");
    tpn(&["gen", "--set", "gen.kind=dead_leaves", "--set", "gen.frames=2", "--set", "gen.image_size=48", "--out", s(&g)]);
    let frames = g.join("frames.tpn");
    let mg = dir.join("det_mg");
    tpn(&["gen", "--set", "gen.frames=30", "--out", s(&mg)]);
    let mg_frames = mg.join("frames.tpn");
    let runs: [(&str, &Path, &[&str]); 4] = [
        ("train-sc", &frames, &["--set", "model.patch=6", "--set", "model.code=12", "--set", "train.steps=10"]),
        ("train-psd", &frames, &["--set", "model.patch=6", "--set", "model.code=12", "--set", "train.steps=10"]),
        (
            "train-local",
            &frames,
            &["--set", "local.image=16", "--set", "local.patch=4", "--set", "local.period=4", "--set", "train.frames=3"],
        ),
        ("train-tpn", &mg_frames, &["--set", "train.epochs=1"]),
    ];
    let mut same = 0;
    let mut bad = Vec::new();
    for (verb, input, extra) in runs {
        let bytes: Vec<Vec<u8>> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.join(format!("det_{verb}_{tag}"));
                let mut args = vec![verb, "--deterministic", "--seed", "17", "--input", s(input), "--out", s(&out)];
                args.extend_from_slice(extra);
                tpn(&args);
                std::fs::read(out.join("model.tpn")).unwrap()
            })
            .collect();
        if bytes[0] == bytes[1] {
            same += 1;
        } else {
            bad.push(verb);
        }
    }
    (bad.is_empty(), format!("{same}/4 stages bit-identical across repeated runs{}", if bad.is_empty() { String::new() } else { format!(", differing: {bad:?}") }))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let o = f();
        println!("criterion {n:>2} {} {name}: {}", if o.0 { "PASS" } else { "FAIL" }, o.1);
        results.push((n, name, o));
    };
    record(1, "soft-threshold oracle", &mut c1_soft_threshold_oracle);
    record(2, "gradient suite", &mut c2_gradients);
    record(3, "unit-norm decoders", &mut c3_normalization);
    record(4, "energy descent", &mut c4_descent);
    record(5, "planted dictionary recovery", &mut c5_planted_recovery);
    let images = still_images(dir);
    record(6, "local filters are localized Gabors", &mut || c6_fig1(&images, dir));
    record(7, "tile-period equivariance", &mut c7_tile_shift);
    record(8, "period-1 convolution", &mut c8_convolution);
    record(9, "tpn invariant and location units", &mut || c9_fig3(dir));
    record(10, "topographic orientation map", &mut || c10_topography(&images, dir));
    record(11, "double tanh predicts better", &mut c11_double_tanh);
    record(12, "deterministic containers", &mut || c12_determinism(dir));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
