//! The pipeline verbs. Each stage reads its inputs first, then writes every
//! artifact through the run's [`OutputDir`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array1;
use rand::Rng;
use tpn_core::analysis::{
    complex_cell_params, connection_lines, filter_mosaic, fit_gabor_all, orientation_map, response_csv,
    response_profile, summarize_responses, topography_score, GaborFit,
};
use tpn_core::container::Persist;
use tpn_core::local::{train_local_frame, Density, FilterRef, LocalHyper, LocalRates, LocalSparsity};
use tpn_core::preprocess::{preprocess, Cutoff, CutoffMode};
use tpn_core::sparse::{train_batch_psd, train_dictionary_sc_batch, LearningRates, StepDiagnostics};
use tpn_core::synth::{
    dead_leaves_with_radii, edge_stimulus, moving_gaussian, rng_from_seed, shifting_window,
};
use tpn_core::tpn::{
    position_responses_with, tpn_train_step, variance_ratios, windows_from_sequence, PositionResponses, TpnHyper,
    TpnRates,
};
use tpn_core::{
    Dictionary, EncoderParams, Flavor, GroupSparsityConfig, ImageFrame, LocalNet, LocalTopology, ModelContainer,
    PreprocessConfig, SparseHyper, SparseModel, TpnModel,
};

use crate::config::Config;
use crate::data::{frames_container, load_frames, load_model, Model, SimpleEncoder};
use crate::output::OutputDir;

const MODEL_FILE: &str = "model.tpn";

fn seed(cfg: &Config) -> Result<u64> {
    cfg.get("seed")
}

fn input_frames(cfg: &Config) -> Result<Vec<ImageFrame>> {
    let path = cfg.opt_str("input").ok_or_else(|| anyhow!("no input: set `input` in the config or pass --input"))?;
    let frames = load_frames(Path::new(path))?;
    if frames.is_empty() {
        bail!("input {path} holds no frames");
    }
    Ok(frames)
}

/// Records the run configuration inside a model container.
fn stamp(c: &mut ModelContainer, cfg: &Config) {
    c.set_meta("config", cfg.render());
    c.set_meta("seed", cfg.raw("seed"));
}

fn write_frames(out: &mut OutputDir, frames: &[ImageFrame]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        out.write_pgm(&format!("frames/{i:06}.pgm"), f)?;
    }
    out.write_container("frames.tpn", &frames_container(frames)?)?;
    Ok(())
}

fn dead_leaves_image(cfg: &Config, seed: u64) -> Result<ImageFrame> {
    let size: usize = cfg.get("gen.image_size")?;
    let radii = (cfg.get("gen.min_radius")?, size as f64 / 4.0);
    Ok(dead_leaves_with_radii(size, size, cfg.get("gen.shapes")?, radii, seed))
}

pub fn gen(cfg: &Config, out: &mut OutputDir) -> Result<()> {
    let seed = seed(cfg)?;
    let n: usize = cfg.get("gen.frames")?;
    let mut manifest = String::new();
    let frames = match cfg.raw("gen.kind") {
        "moving_gaussian" => {
            let mg = moving_gaussian(n, cfg.get("gen.size")?, cfg.get("gen.width")?, seed)?;
            manifest.push_str("index,x,y\n");
            for (i, (x, y)) in mg.centers.iter().enumerate() {
                let _ = writeln!(manifest, "{i},{x},{y}");
            }
            mg.frames
        }
        "shifting_window" => {
            let source = match cfg.opt_str("input") {
                Some(p) => load_frames(Path::new(p))?.swap_remove(0),
                None => dead_leaves_image(cfg, seed)?,
            };
            let w: usize = cfg.get("gen.window")?;
            let walk = shifting_window(&source, (w, w), n, seed)?;
            manifest.push_str("index,x0,y0\n");
            for (i, (x, y)) in walk.positions.iter().enumerate() {
                let _ = writeln!(manifest, "{i},{x},{y}");
            }
            walk.frames
        }
        "edge" => {
            let size: usize = cfg.get("gen.size")?;
            let k: usize = cfg.get("gen.orientations")?;
            let positions: Vec<f64> = cfg.list("gen.positions")?;
            let softness: f64 = cfg.get("gen.softness")?;
            manifest.push_str("index,orientation,position\n");
            let mut frames = Vec::new();
            for i in 0..k {
                let theta = 2.0 * PI * i as f64 / k as f64;
                for &p in &positions {
                    let _ = writeln!(manifest, "{},{theta},{p}", frames.len());
                    frames.push(edge_stimulus(theta, p, size, size, softness));
                }
            }
            frames
        }
        "dead_leaves" => {
            manifest.push_str("index,seed\n");
            (0..n as u64)
                .map(|i| {
                    let _ = writeln!(manifest, "{i},{}", seed + i);
                    dead_leaves_image(cfg, seed + i)
                })
                .collect::<Result<_>>()?
        }
        other => bail!("unknown gen.kind `{other}` (moving_gaussian, shifting_window, edge, dead_leaves)"),
    };
    write_frames(out, &frames)?;
    out.write_text("manifest.csv", &manifest)?;
    Ok(())
}

fn preprocess_config(cfg: &Config) -> Result<PreprocessConfig> {
    let c: f64 = cfg.get("preprocess.cutoff")?;
    let cutoff = match cfg.raw("preprocess.cutoff_kind") {
        "relative" => Cutoff::Relative(c),
        "absolute" => Cutoff::Absolute(c),
        other => bail!("unknown preprocess.cutoff_kind `{other}` (relative, absolute)"),
    };
    let mode = match cfg.raw("preprocess.cutoff_mode") {
        "max" => CutoffMode::Max,
        "quadrature" => CutoffMode::Quadrature,
        other => bail!("unknown preprocess.cutoff_mode `{other}` (max, quadrature)"),
    };
    let p = PreprocessConfig { gaussian_width: cfg.get("preprocess.width")?, cutoff, mode };
    p.validate()?;
    Ok(p)
}

pub fn preprocess_stage(cfg: &Config, out: &mut OutputDir) -> Result<()> {
    let frames = input_frames(cfg)?;
    let p = preprocess_config(cfg)?;
    let done = frames.iter().map(|f| preprocess(f, &p)).collect::<tpn_core::Result<Vec<_>>>()?;
    write_frames(out, &done)
}

fn flavor(cfg: &Config, key: &str) -> Result<Flavor> {
    Ok(Flavor::parse(cfg.raw(key))?)
}

/// Random `p × p` patches, flattened.
fn sample_patches<R: Rng>(frames: &[ImageFrame], p: usize, n: usize, rng: &mut R) -> Result<Vec<Array1<f64>>> {
    if frames.iter().any(|f| f.width() < p || f.height() < p) {
        bail!("input frames are smaller than the {p}x{p} patch");
    }
    (0..n)
        .map(|_| {
            let f = &frames[rng.gen_range(0..frames.len())];
            let x = rng.gen_range(0..=f.width() - p);
            let y = rng.gen_range(0..=f.height() - p);
            Ok(Array1::from(f.window(x, y, p, p)?.into_data()))
        })
        .collect()
}

pub fn train_patch(cfg: &Config, out: &mut OutputDir, psd: bool) -> Result<()> {
    let frames = input_frames(cfg)?;
    let mut rng = rng_from_seed(seed(cfg)?);
    let p: usize = cfg.get("model.patch")?;
    let n_z: usize = cfg.get("model.code")?;
    let fl = flavor(cfg, "model.flavor")?;
    let hyper = SparseHyper {
        alpha: cfg.get("model.alpha")?,
        max_iters: cfg.get("infer.max_iters")?,
        tolerance: cfg.get("infer.tolerance")?,
        ..SparseHyper::default()
    };
    let rates = LearningRates { decoder: cfg.get("train.lr_decoder")?, encoder: cfg.get("train.lr_encoder")? };
    let steps: usize = cfg.get("train.steps")?;
    let batch: usize = cfg.get("train.batch")?;
    let mut model = SparseModel::random(p * p, n_z, fl, &mut rng);
    let mut log = format!("{}\n", StepDiagnostics::CSV_HEADER);
    for step in 0..steps {
        let xs = sample_patches(&frames, p, batch, &mut rng)?;
        let d = if psd {
            train_batch_psd(&xs, &mut model, &hyper, &rates)?
        } else {
            train_dictionary_sc_batch(&xs, &mut model.dict, &hyper, rates.decoder)?
        };
        log.push_str(&d.csv_row(step));
        log.push('\n');
    }
    if !psd {
        // the encoder is not trained by plain sparse coding
        model.enc = EncoderParams::init_from(&model.dict, fl);
    }
    let mut c = model.to_container()?;
    stamp(&mut c, cfg);
    out.write_container(MODEL_FILE, &c)?;
    out.write_text("train_log.csv", &log)?;
    out.write_pgm("filters.pgm", &filter_mosaic(&sparse_filters(&model.dict)?, grid_cols(n_z), 1)?)?;
    Ok(())
}

fn grid_cols(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

fn sparse_filters(dict: &Dictionary) -> Result<Vec<ImageFrame>> {
    let n_x = dict.n_x();
    let p = (n_x as f64).sqrt().round() as usize;
    if p * p != n_x {
        bail!("dictionary columns of length {n_x} are not square patches");
    }
    (0..dict.n_z()).map(|j| Ok(ImageFrame::new(p, p, dict.column(j).to_vec())?)).collect()
}

fn local_topology(cfg: &Config) -> Result<LocalTopology> {
    let p: usize = cfg.get("local.patch")?;
    let n: usize = match cfg.opt_str("local.image") {
        Some(_) => cfg.get("local.image")?,
        None => 3 * p,
    };
    let density = Density::parse(cfg.raw("local.density"))?;
    let period = match cfg.raw("local.period") {
        "none" => None,
        _ => Some(cfg.get::<usize>("local.period")?),
    };
    let t = LocalTopology::square(n, p, density, period);
    t.validate()?;
    Ok(t)
}

fn local_hyper(cfg: &Config) -> Result<LocalHyper> {
    let alpha: f64 = cfg.get("local.alpha")?;
    let sparsity = match cfg.raw("local.sparsity") {
        "l1" => LocalSparsity::L1(alpha),
        "group" => LocalSparsity::Group(GroupSparsityConfig::with_sigma(alpha, cfg.get("local.sigma")?)),
        other => bail!("unknown local.sparsity `{other}` (l1, group)"),
    };
    Ok(LocalHyper {
        sparsity,
        psd: cfg.get("local.psd")?,
        max_sweeps: cfg.get("infer.max_sweeps")?,
        tolerance: cfg.get("infer.tolerance")?,
        adjust_iters: cfg.get("train.adjust_iters")?,
    })
}

pub fn train_local(cfg: &Config, out: &mut OutputDir) -> Result<()> {
    let images = input_frames(cfg)?;
    let seed = seed(cfg)?;
    let topo = local_topology(cfg)?;
    let hyper = local_hyper(cfg)?;
    let rates = LocalRates { decoder: cfg.get("train.lr_decoder")?, encoder: cfg.get("train.lr_encoder")? };
    let total: usize = cfg.get("train.frames")?;
    let per: usize = cfg.get::<usize>("train.frames_per_image")?.max(1);
    let mut rng = rng_from_seed(seed);
    let mut net = LocalNet::random(topo, flavor(cfg, "local.flavor")?, &mut rng)?;
    let mut log = String::from("frame,image,energy_before,energy_after,pred_err\n");
    let mut done = 0;
    for (walk, img) in (0..).zip(images.iter().cycle()) {
        if done >= total {
            break;
        }
        let n = per.min(total - done);
        let frames = shifting_window(img, topo.image, n, seed.wrapping_add(walk))
            .with_context(|| format!("cutting {}x{} windows", topo.image.0, topo.image.1))?
            .frames;
        for f in &frames {
            let r = train_local_frame(f, &mut net, &hyper, &rates)?;
            let _ = writeln!(
                log,
                "{done},{},{},{},{}",
                walk as usize % images.len(),
                r.energy_before,
                r.energy_after,
                r.pred_err
            );
            done += 1;
        }
    }
    let mut c = net.to_container()?;
    stamp(&mut c, cfg);
    out.write_container(MODEL_FILE, &c)?;
    out.write_text("train_log.csv", &log)?;
    let grid = LocalGrid::new(&net);
    let full = grid.full_filters(&net);
    if !full.is_empty() {
        out.write_pgm("filters.pgm", &filter_mosaic(&full, grid.width, 1)?)?;
    }
    Ok(())
}

/// One representative unit per slot of a grid: the tile grid of a periodic
/// net (the first user of each tile filter), the cell grid otherwise.
struct LocalGrid {
    slots: Vec<Option<usize>>,
    width: usize,
    height: usize,
}

impl LocalGrid {
    fn new(net: &LocalNet) -> Self {
        let topo = net.topology();
        match topo.cell_period() {
            Some((width, height)) => {
                let mut slots = vec![None; width * height];
                for (i, &(kx, ky)) in net.tile_keys().iter().enumerate() {
                    slots[ky * width + kx] = net.users(FilterRef::Tile(i)).first().copied();
                }
                Self { slots, width, height }
            }
            None => {
                let (width, height) = topo.cells();
                let mut slots = vec![None; width * height];
                for u in 0..net.n_units() {
                    let (cx, cy) = net.unit(u).cell;
                    slots[cy * width + cx] = Some(u);
                }
                Self { slots, width, height }
            }
        }
    }

    /// `(slot, unit)` for every occupied slot.
    fn occupied(&self) -> Vec<(usize, usize)> {
        self.slots.iter().enumerate().filter_map(|(i, u)| u.map(|u| (i, u))).collect()
    }

    /// Occupied slots whose unit sees a full patch.
    fn full_units(&self, net: &LocalNet) -> Vec<(usize, usize)> {
        let patch = net.topology().patch;
        self.occupied()
            .into_iter()
            .filter(|&(_, u)| (net.unit(u).rect.width(), net.unit(u).rect.height()) == patch)
            .collect()
    }

    fn full_filters(&self, net: &LocalNet) -> Vec<ImageFrame> {
        self.full_units(net).into_iter().map(|(_, u)| net.unit_decoder_frame(u)).collect()
    }
}

fn tpn_hyper(cfg: &Config) -> Result<TpnHyper> {
    Ok(TpnHyper { max_iters: cfg.get("infer.max_iters")?, tolerance: cfg.get("infer.tolerance")?, ..TpnHyper::default() })
}

fn encode_sequence(frames: &[ImageFrame], simple: Option<&SimpleEncoder>) -> Result<Vec<Array1<f64>>> {
    frames
        .iter()
        .map(|f| match simple {
            Some(s) => Ok(s.encode(f)?.mapv(f64::abs)),
            None => Ok(Array1::from(f.data().to_vec())),
        })
        .collect()
}

pub fn train_tpn(cfg: &Config, out: &mut OutputDir) -> Result<()> {
    let frames = input_frames(cfg)?;
    let simple = cfg.opt_str("tpn.simple_model").map(|p| SimpleEncoder::load(Path::new(p))).transpose()?;
    let seq = encode_sequence(&frames, simple.as_ref())?;
    let n_tau: usize = cfg.get("tpn.n_tau")?;
    let windows = windows_from_sequence(&seq, n_tau)?;
    if windows.is_empty() {
        bail!("{} frames are too few for windows of {n_tau}", seq.len());
    }
    let mut rng = rng_from_seed(seed(cfg)?);
    let mut model = TpnModel::random(seq[0].len(), cfg.get("tpn.n1")?, cfg.get("tpn.n2")?, n_tau, &mut rng);
    model.alpha1 = cfg.get("tpn.alpha1")?;
    model.alpha2 = cfg.get("tpn.alpha2")?;
    model.validate()?;
    let hyper = tpn_hyper(cfg)?;
    let rates = TpnRates { decoder: cfg.get("train.lr_decoder")?, encoder: cfg.get("train.lr_encoder")? };
    let epochs: usize = cfg.get("train.epochs")?;
    let mut log = String::from("step,energy,encoder_loss\n");
    let mut step = 0;
    for _ in 0..epochs {
        for w in &windows {
            let d = tpn_train_step(w, &mut model, &hyper, &rates)?;
            let _ = writeln!(log, "{step},{},{}", d.energy, d.encoder_loss);
            step += 1;
        }
    }
    let mut c = model.to_container()?;
    stamp(&mut c, cfg);
    out.write_container(MODEL_FILE, &c)?;
    out.write_text("train_log.csv", &log)?;
    Ok(())
}

fn fits_csv(fits: &[GaborFit]) -> String {
    let mut s = format!("{}\n", GaborFit::CSV_HEADER);
    for (i, f) in fits.iter().enumerate() {
        s.push_str(&f.csv_row(i));
        s.push('\n');
    }
    s
}

fn response_grid(cfg: &Config) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let k: usize = cfg.get("analyze.orientations")?;
    let orientations = (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect();
    Ok((orientations, cfg.list("analyze.positions")?, cfg.get("analyze.softness")?, cfg.get("analyze.contrast")?))
}

/// `labels[i]` is the cell index reported for the `i`-th encoder output.
fn write_responses(
    cfg: &Config,
    out: &mut OutputDir,
    size: (usize, usize),
    labels: &[usize],
    encode: impl Fn(&ImageFrame) -> tpn_core::Result<Vec<f64>>,
) -> Result<()> {
    let (orientations, positions, softness, contrast) = response_grid(cfg)?;
    let mut rows = response_profile(encode, size, &orientations, &positions, softness, contrast)?;
    for r in &mut rows {
        r.cell = labels[r.cell];
    }
    out.write_text("responses.csv", &response_csv(&rows))?;
    let mut s = String::from("cell,preferred_orientation,peak,position_fwhm\n");
    for r in summarize_responses(&rows) {
        let _ = writeln!(s, "{},{},{},{}", r.cell, r.preferred_orientation, r.peak, r.position_fwhm);
    }
    out.write_text("responses_summary.csv", &s)?;
    Ok(())
}

fn topography_report(
    cfg: &Config,
    fits: &[Option<GaborFit>],
    width: usize,
    wrap: bool,
) -> Result<String> {
    let orientations: Vec<Option<f64>> =
        fits.iter().map(|f| f.filter(GaborFit::is_valid).map(|f| f.orientation)).collect();
    let height = fits.len() / width.max(1);
    let mut s = String::new();
    match topography_score(&orientations, width, height, wrap, cfg.get("analyze.permutations")?, seed(cfg)?) {
        Ok(t) => {
            let _ = writeln!(s, "grid = {width}x{height}");
            let _ = writeln!(s, "wrap = {wrap}");
            let _ = writeln!(s, "valid = {}", t.n_valid);
            let _ = writeln!(s, "pairs = {}", t.n_pairs);
            let _ = writeln!(s, "score = {}", t.score);
            let _ = writeln!(s, "null_mean = {}", t.null_mean);
            let _ = writeln!(s, "null_std = {}", t.null_std);
            let _ = writeln!(s, "permutations = {}", t.n_permutations);
            let _ = writeln!(s, "p_value = {}", t.p_value);
        }
        Err(e) => {
            let _ = writeln!(s, "unavailable = {e}");
        }
    }
    Ok(s)
}

fn analyze_sparse(cfg: &Config, out: &mut OutputDir, model: &SparseModel) -> Result<()> {
    let filters = sparse_filters(&model.dict)?;
    let fits = fit_gabor_all(&filters)?;
    out.write_text("fits.csv", &fits_csv(&fits))?;
    out.write_pgm("filters.pgm", &filter_mosaic(&filters, grid_cols(filters.len()), 1)?)?;
    let (w, h) = (filters[0].width(), filters[0].height());
    let labels: Vec<usize> = (0..filters.len()).collect();
    write_responses(cfg, out, (w, h), &labels, |stim| Ok(model.enc.encode(&Array1::from(stim.data().to_vec()))?.to_vec()))
}

fn analyze_local(cfg: &Config, out: &mut OutputDir, net: &LocalNet) -> Result<()> {
    let topo = *net.topology();
    let grid = LocalGrid::new(net);
    let present = grid.occupied();
    if present.is_empty() {
        bail!("the network has no units to analyze");
    }
    let frames: Vec<ImageFrame> = present.iter().map(|&(_, u)| net.unit_decoder_frame(u)).collect();
    let fitted = fit_gabor_all(&frames)?;
    let mut fits: Vec<Option<GaborFit>> = vec![None; grid.slots.len()];
    let mut csv = format!("{}\n", GaborFit::CSV_HEADER);
    for (&(slot, _), f) in present.iter().zip(&fitted) {
        fits[slot] = Some(*f);
        csv.push_str(&f.csv_row(slot));
        csv.push('\n');
    }
    out.write_text("fits.csv", &csv)?;
    let full = grid.full_filters(net);
    if !full.is_empty() {
        out.write_pgm("filters.pgm", &filter_mosaic(&full, grid.width, 1)?)?;
    }
    // slots without a filter render black
    let placeholder = GaborFit { r2: 0.0, degenerate: true, ..fitted[0] };
    let map_fits: Vec<GaborFit> = fits.iter().map(|f| f.unwrap_or(placeholder)).collect();
    out.write_bytes("orientation_map.ppm", &orientation_map(&map_fits, grid.width, grid.height)?.to_ppm_bytes())?;
    out.write_text("topography.txt", &topography_report(cfg, &fits, grid.width, topo.period.is_some())?)?;
    // full-size filters are probed directly with patch-sized edges
    let units = grid.full_units(net);
    let labels: Vec<usize> = units.iter().map(|&(slot, _)| slot).collect();
    write_responses(cfg, out, topo.patch, &labels, |stim| {
        Ok(units
            .iter()
            .map(|&(_, u)| {
                let f = net.filter(u);
                let y = f.encoder.iter().zip(stim.data()).map(|(a, b)| a * b).sum::<f64>() + f.bias;
                f.gain * net.flavor.apply(y, net.notch)
            })
            .collect())
    })
}

fn position_csv(r: &PositionResponses) -> String {
    let mut s = String::from("layer,unit,x,y,response\n");
    for (layer, maps) in [("location", &r.location), ("invariant", &r.invariant)] {
        for (j, m) in maps.iter().enumerate() {
            for (i, v) in m.iter().enumerate() {
                let _ = writeln!(s, "{layer},{j},{},{},{v}", i % r.size, i / r.size);
            }
        }
    }
    s
}

fn ratios_report(r: &PositionResponses) -> String {
    let mut s = String::new();
    for (layer, maps) in [("location", &r.location), ("invariant", &r.invariant)] {
        let mut q = variance_ratios(maps, r.size);
        q.sort_by(f64::total_cmp);
        let median = if q.is_empty() { f64::NAN } else { q[q.len() / 2] };
        let _ = writeln!(s, "{layer}.responsive = {}", q.len());
        let _ = writeln!(s, "{layer}.median_var_x_over_var_y = {median}");
    }
    s
}

/// Moving-bump responses of a TPN model, through the simple-cell layer when
/// one is configured.
fn tpn_position_responses(cfg: &Config, model: &TpnModel, simple_key: &str) -> Result<PositionResponses> {
    let simple = cfg.opt_str(simple_key).map(|p| SimpleEncoder::load(Path::new(p))).transpose()?;
    let width: f64 = cfg.get("analyze.bump_width")?;
    let size = match &simple {
        None => {
            let n = model.n_s();
            let s = (n as f64).sqrt().round() as usize;
            if s * s != n {
                bail!("tpn input of {n} values is not a square frame; set {simple_key}");
            }
            s
        }
        Some(SimpleEncoder::Sparse(m)) => (m.dict.n_x() as f64).sqrt().round() as usize,
        Some(SimpleEncoder::Local(n)) => n.topology().image.0,
    };
    let hyper = TpnHyper::default();
    Ok(position_responses_with(model, size, width, &hyper, |f| match &simple {
        Some(s) => s.encode(f).map_err(|e| tpn_core::Error::InvalidInput(e.to_string())),
        None => Ok(Array1::from(f.data().to_vec())),
    })?)
}

fn analyze_tpn(cfg: &Config, out: &mut OutputDir, model: &TpnModel) -> Result<()> {
    let r = tpn_position_responses(cfg, model, "analyze.simple_model")?;
    out.write_text("tpn_responses.csv", &position_csv(&r))?;
    out.write_text("variance_ratios.txt", &ratios_report(&r))?;
    let Some(path) = cfg.opt_str("analyze.simple_model") else { return Ok(()) };
    let (filters, positions) = match load_model(Path::new(path))?.0 {
        Model::Sparse(m) => {
            let f = sparse_filters(&m.dict)?;
            let fits = fit_gabor_all(&f)?;
            (f, fits.iter().map(|g| g.center).collect::<Vec<_>>())
        }
        Model::Local(net) => {
            let f: Vec<ImageFrame> = (0..net.n_units()).map(|u| net.unit_decoder_frame(u)).collect();
            let pos = (0..net.n_units()).map(|u| (net.unit(u).cell.0 as f64, net.unit(u).cell.1 as f64)).collect();
            (f, pos)
        }
        Model::Tpn(_) => bail!("analyze.simple_model must be a sparse or local model"),
    };
    let fits = fit_gabor_all(&filters)?;
    let top_k: usize = cfg.get("analyze.top_k")?;
    let mut s = String::from("layer,unit,orientation,frequency,resultant\n");
    let mut lines = String::from("layer,unit,simple,x,y,weight\n");
    for (layer, w) in [("location", &model.w_d1), ("invariant", &model.w_d2)] {
        for (j, p) in complex_cell_params(w, &fits)?.iter().enumerate() {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(s, "{layer},{j},{},{},{}", opt(p.orientation), opt(p.frequency), p.resultant);
        }
        for l in connection_lines(w, &positions, top_k)? {
            let _ = writeln!(lines, "{layer},{},{},{},{},{}", l.complex, l.simple, l.x, l.y, l.weight);
        }
    }
    out.write_text("complex_cells.csv", &s)?;
    out.write_text("connections.csv", &lines)?;
    Ok(())
}

pub fn analyze(cfg: &Config, out: &mut OutputDir, model_path: &Path) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    match &model {
        Model::Sparse(m) => analyze_sparse(cfg, out, m),
        Model::Local(n) => analyze_local(cfg, out, n),
        Model::Tpn(m) => analyze_tpn(cfg, out, m),
    }
}

pub fn tpn_responses(cfg: &Config, out: &mut OutputDir, model_path: &Path) -> Result<()> {
    let Model::Tpn(model) = load_model(model_path)?.0 else {
        bail!("{} is not a tpn model", model_path.display());
    };
    let r = tpn_position_responses(cfg, &model, "analyze.simple_model")?;
    out.write_text("tpn_responses.csv", &position_csv(&r))?;
    out.write_text("variance_ratios.txt", &ratios_report(&r))?;
    Ok(())
}

/// Human-readable summary of a model container.
pub fn describe(model_path: &Path) -> Result<String> {
    let (model, c) = load_model(model_path)?;
    let mut s = String::new();
    let _ = writeln!(s, "kind: {}", model.kind());
    match &model {
        Model::Sparse(m) => {
            let _ = writeln!(s, "inputs: {}", m.dict.n_x());
            let _ = writeln!(s, "code units: {}", m.dict.n_z());
            let _ = writeln!(s, "encoder: {}", m.enc.flavor.name());
        }
        Model::Local(n) => {
            let t = n.topology();
            let _ = writeln!(s, "topology: {t}");
            let _ = writeln!(s, "units: {}", n.n_units());
            let _ = writeln!(s, "overcompleteness: {}", t.overcompleteness());
            let _ = writeln!(s, "nominal connections (C*N^2*P^2): {}", t.nominal_connections());
            let _ = writeln!(s, "connections: {}", t.connections());
            let _ = writeln!(s, "tile filters: {}", n.tile_filters().len());
            let _ = writeln!(s, "boundary filters: {}", n.boundary_filters().len());
            let _ = writeln!(s, "encoder: {}", n.flavor.name());
        }
        Model::Tpn(m) => {
            let _ = writeln!(s, "inputs: {}", m.n_s());
            let _ = writeln!(s, "location units: {}", m.n1());
            let _ = writeln!(s, "invariant units: {}", m.n2());
            let _ = writeln!(s, "window: {}", m.n_tau);
            let _ = writeln!(s, "alpha: {} {}", m.alpha1, m.alpha2);
        }
    }
    if let Some(seed) = c.meta("seed") {
        let _ = writeln!(s, "seed: {seed}");
    }
    let _ = writeln!(s, "content hash: {}", c.content_hash()?);
    Ok(s)
}
