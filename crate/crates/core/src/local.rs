//! Locally connected sparse coding over whole images.
//!
//! Cells form a regular grid over the image with `rho` cells per pixel along
//! each axis. A cell `s` reads (encoder) and writes (decoder) the rectangle
//! `[m, m')` with `m = max(floor(s/rho - P/2), 0)` and
//! `m' = min(floor(s/rho + P/2), N)`. Units whose rectangle is the full
//! `P_x × P_y` neighbourhood are *bulk* units; they may share a filter with
//! every unit a whole number of tile periods away. Units clipped by the image
//! edge are *boundary* units and always own their filter.
//!
//! The tile period is given in pixels; a period of `T` pixels corresponds to
//! `T * rho` cells, which must be an integer.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::frame::ImageFrame;
use crate::group::{GroupPenalty, GroupSparsityConfig};
use crate::linalg;
use crate::sparse::{CodeState, EncoderParams, Flavor};

/// Cells per pixel along one axis: `num / den` with one of them equal to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Density {
    num: usize,
    den: usize,
}

impl Density {
    pub const COMPLETE: Density = Density { num: 1, den: 1 };

    /// `k` cells per pixel.
    pub fn over(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("density factor must be positive".into()));
        }
        Ok(Self { num: k, den: 1 })
    }

    /// One cell every `k` pixels.
    pub fn under(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("density factor must be positive".into()));
        }
        Ok(Self { num: 1, den: k })
    }

    /// Parses `"k"` or `"1/k"`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad density '{s}', expected k or 1/k"));
        match s.trim().split_once('/') {
            Some((a, b)) if a.trim() == "1" => Self::under(b.trim().parse().map_err(|_| bad())?),
            Some(_) => Err(bad()),
            None => Self::over(s.trim().parse().map_err(|_| bad())?),
        }
    }

    pub fn num(self) -> usize {
        self.num
    }

    pub fn den(self) -> usize {
        self.den
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Number of cells covering `n` pixels: `ceil(n * rho)`.
    pub fn cells(self, n: usize) -> usize {
        (n * self.num).div_ceil(self.den)
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "1/{}", self.den)
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Geometry of a locally connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalTopology {
    /// `(N_x, N_y)` in pixels.
    pub image: (usize, usize),
    /// `(P_x, P_y)` in pixels.
    pub patch: (usize, usize),
    pub density: (Density, Density),
    /// Tile period `(T_x, T_y)` in pixels, or `None` for no sharing.
    pub period: Option<(usize, usize)>,
}

fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

/// `[max(floor(s/rho - P/2), 0), min(floor(s/rho + P/2), N))`
fn axis_rf(s: usize, n: usize, p: usize, rho: Density) -> (usize, usize) {
    let (s, p, num, den) = (s as i64, p as i64, rho.num as i64, rho.den as i64);
    let lo = floor_div(2 * s * den - p * num, 2 * num);
    let hi = floor_div(2 * s * den + p * num, 2 * num);
    (lo.max(0) as usize, (hi.min(n as i64)).max(0) as usize)
}

impl LocalTopology {
    /// Square image, square neighbourhood, equal density on both axes.
    pub fn square(n: usize, p: usize, rho: Density, period: Option<usize>) -> Self {
        Self { image: (n, n), patch: (p, p), density: (rho, rho), period: period.map(|t| (t, t)) }
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny) = self.image;
        let (px, py) = self.patch;
        if nx == 0 || ny == 0 || px == 0 || py == 0 {
            return Err(Error::InvalidInput("image and neighbourhood sizes must be positive".into()));
        }
        if px > nx || py > ny {
            return Err(Error::InvalidInput("neighbourhood larger than the image".into()));
        }
        if let Some((tx, ty)) = self.period {
            for (t, rho) in [(tx, self.density.0), (ty, self.density.1)] {
                if t == 0 || (t * rho.num) % rho.den != 0 {
                    return Err(Error::InvalidInput(format!(
                        "period {t} px times density {rho} must be a positive integer number of cells"
                    )));
                }
            }
        }
        let (cx, cy) = self.cells();
        for s in 0..cx {
            let (a, b) = axis_rf(s, nx, px, self.density.0);
            if b <= a {
                return Err(Error::InvalidInput(format!("cell column {s} has an empty receptive field")));
            }
        }
        for s in 0..cy {
            let (a, b) = axis_rf(s, ny, py, self.density.1);
            if b <= a {
                return Err(Error::InvalidInput(format!("cell row {s} has an empty receptive field")));
            }
        }
        Ok(())
    }

    /// Cell grid size.
    pub fn cells(&self) -> (usize, usize) {
        (self.density.0.cells(self.image.0), self.density.1.cells(self.image.1))
    }

    pub fn n_units(&self) -> usize {
        let (cx, cy) = self.cells();
        cx * cy
    }

    /// Tile period in cells.
    pub fn cell_period(&self) -> Option<(usize, usize)> {
        self.period.map(|(tx, ty)| {
            (tx * self.density.0.num / self.density.0.den, ty * self.density.1.num / self.density.1.den)
        })
    }

    pub fn receptive_field(&self, sx: usize, sy: usize) -> Result<Rect> {
        let (cx, cy) = self.cells();
        if sx >= cx || sy >= cy {
            return Err(Error::InvalidInput(format!("cell ({sx}, {sy}) outside the {cx}×{cy} grid")));
        }
        let (x0, x1) = axis_rf(sx, self.image.0, self.patch.0, self.density.0);
        let (y0, y1) = axis_rf(sy, self.image.1, self.patch.1, self.density.1);
        Ok(Rect { x0, x1, y0, y1 })
    }

    /// Overcompleteness `C = rho_x rho_y`.
    pub fn overcompleteness(&self) -> f64 {
        self.density.0.value() * self.density.1.value()
    }

    /// `C · N_x N_y · P_x P_y`: every unit counted with a full neighbourhood.
    pub fn nominal_connections(&self) -> f64 {
        self.overcompleteness() * (self.image.0 * self.image.1) as f64 * (self.patch.0 * self.patch.1) as f64
    }

    /// Connections actually present (clipped receptive fields included).
    pub fn connections(&self) -> usize {
        let (cx, cy) = self.cells();
        let wx: usize = (0..cx).map(|s| {
            let (a, b) = axis_rf(s, self.image.0, self.patch.0, self.density.0);
            b - a
        }).sum();
        let wy: usize = (0..cy).map(|s| {
            let (a, b) = axis_rf(s, self.image.1, self.patch.1, self.density.1);
            b - a
        }).sum();
        wx * wy
    }
}

impl fmt::Display for LocalTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (cx, cy) = self.cells();
        write!(
            f,
            "image {}x{}, neighbourhood {}x{}, density {}x{}, cells {}x{}",
            self.image.0, self.image.1, self.patch.0, self.patch.1, self.density.0, self.density.1, cx, cy
        )?;
        match self.period {
            Some((tx, ty)) => write!(f, ", period {tx}x{ty} px"),
            None => write!(f, ", no periodicity"),
        }
    }
}

/// Decoder and encoder weights of one filter over its rectangle, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub decoder: Vec<f64>,
    pub encoder: Vec<f64>,
    pub gain: f64,
    pub bias: f64,
}

impl Filter {
    fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut decoder: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut decoder);
        Self { encoder: decoder.clone(), decoder, gain: 1.0, bias: 0.0 }
    }

    pub fn decoder_norm(&self) -> f64 {
        self.decoder.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterRef {
    Tile(usize),
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub cell: (usize, usize),
    pub rect: Rect,
    pub filter: FilterRef,
}

/// Units sharing one receptive-field rectangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub rect: Rect,
    pub units: Vec<usize>,
}

/// A locally connected layer: topology, filters and the unit → filter map.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalNet {
    topo: LocalTopology,
    units: Vec<Unit>,
    sites: Vec<Site>,
    tile: Vec<Filter>,
    tile_keys: Vec<(usize, usize)>,
    boundary: Vec<Filter>,
    /// Units referencing each filter, tile filters first.
    users: BTreeMap<FilterRef, Vec<usize>>,
    pub flavor: Flavor,
    pub notch: f64,
}

impl LocalNet {
    /// Builds the unit layout; every filter is a random unit vector with the
    /// encoder set to the decoder.
    pub fn random<R: Rng + ?Sized>(topo: LocalTopology, flavor: Flavor, rng: &mut R) -> Result<Self> {
        let mut net = Self::layout(topo, flavor)?;
        let full = topo.patch.0 * topo.patch.1;
        net.tile = (0..net.tile_keys.len()).map(|_| Filter::random(full, rng)).collect();
        let areas: Vec<usize> = net.boundary_areas();
        net.boundary = areas.into_iter().map(|a| Filter::random(a, rng)).collect();
        Ok(net)
    }

    /// Same layout with all-zero filters, to be filled in by a loader.
    pub fn zeroed(topo: LocalTopology, flavor: Flavor) -> Result<Self> {
        let mut net = Self::layout(topo, flavor)?;
        let full = topo.patch.0 * topo.patch.1;
        let zero = |n: usize| Filter { decoder: vec![0.0; n], encoder: vec![0.0; n], gain: 1.0, bias: 0.0 };
        net.tile = (0..net.tile_keys.len()).map(|_| zero(full)).collect();
        net.boundary = net.boundary_areas().into_iter().map(zero).collect();
        Ok(net)
    }

    fn boundary_areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.count_boundary()];
        for u in &self.units {
            if let FilterRef::Boundary(i) = u.filter {
                areas[i] = u.rect.area();
            }
        }
        areas
    }

    fn count_boundary(&self) -> usize {
        self.units.iter().filter(|u| matches!(u.filter, FilterRef::Boundary(_))).count()
    }

    fn layout(topo: LocalTopology, flavor: Flavor) -> Result<Self> {
        topo.validate()?;
        let (cx, cy) = topo.cells();
        let full = (topo.patch.0, topo.patch.1);
        let cell_period = topo.cell_period();
        let mut tile_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut units = Vec::with_capacity(cx * cy);
        let mut n_boundary = 0;
        // tile keys are assigned in raster order of key so that tile index
        // k corresponds to key (k % qx, k / qx) when the tile is complete
        let mut raw = Vec::with_capacity(cx * cy);
        for sy in 0..cy {
            for sx in 0..cx {
                let rect = topo.receptive_field(sx, sy)?;
                let bulk = (rect.width(), rect.height()) == full;
                let key = bulk.then(|| match cell_period {
                    Some((qx, qy)) => (sx % qx, sy % qy),
                    None => (sx, sy),
                });
                raw.push(((sx, sy), rect, key));
            }
        }
        let mut keys: Vec<(usize, usize)> = raw.iter().filter_map(|r| r.2).collect();
        keys.sort_by_key(|&(kx, ky)| (ky, kx));
        keys.dedup();
        for (i, k) in keys.iter().enumerate() {
            tile_index.insert(*k, i);
        }
        for (cell, rect, key) in raw {
            let filter = match key {
                Some(k) => FilterRef::Tile(tile_index[&k]),
                None => {
                    n_boundary += 1;
                    FilterRef::Boundary(n_boundary - 1)
                }
            };
            units.push(Unit { cell, rect, filter });
        }
        let mut by_rect: BTreeMap<(usize, usize, usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            by_rect.entry((u.rect.y0, u.rect.y1, u.rect.x0, u.rect.x1)).or_default().push(i);
        }
        let sites = by_rect
            .into_iter()
            .map(|((y0, y1, x0, x1), units)| Site { rect: Rect { x0, x1, y0, y1 }, units })
            .collect();
        let mut users: BTreeMap<FilterRef, Vec<usize>> = BTreeMap::new();
        for (i, u) in units.iter().enumerate() {
            users.entry(u.filter).or_default().push(i);
        }
        Ok(Self {
            topo,
            units,
            sites,
            tile: Vec::new(),
            tile_keys: keys,
            boundary: Vec::with_capacity(n_boundary),
            users,
            flavor,
            notch: EncoderParams::DEFAULT_NOTCH,
        })
    }

    pub fn topology(&self) -> &LocalTopology {
        &self.topo
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn unit(&self, u: usize) -> &Unit {
        &self.units[u]
    }

    /// Index of the unit at cell `(sx, sy)`.
    pub fn unit_at(&self, sx: usize, sy: usize) -> usize {
        sy * self.topo.cells().0 + sx
    }

    /// Sites in raster order of their rectangles.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn is_bulk(&self, u: usize) -> bool {
        matches!(self.units[u].filter, FilterRef::Tile(_))
    }

    pub fn filter_ref(&self, u: usize) -> FilterRef {
        self.units[u].filter
    }

    pub fn filter(&self, u: usize) -> &Filter {
        self.get(self.units[u].filter)
    }

    pub fn filter_mut(&mut self, u: usize) -> &mut Filter {
        let r = self.units[u].filter;
        self.get_mut(r)
    }

    pub fn get(&self, r: FilterRef) -> &Filter {
        match r {
            FilterRef::Tile(i) => &self.tile[i],
            FilterRef::Boundary(i) => &self.boundary[i],
        }
    }

    pub fn get_mut(&mut self, r: FilterRef) -> &mut Filter {
        match r {
            FilterRef::Tile(i) => &mut self.tile[i],
            FilterRef::Boundary(i) => &mut self.boundary[i],
        }
    }

    /// Units referencing `r`.
    pub fn users(&self, r: FilterRef) -> &[usize] {
        self.users.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tile_filters(&self) -> &[Filter] {
        &self.tile
    }

    pub fn tile_filters_mut(&mut self) -> &mut [Filter] {
        &mut self.tile
    }

    /// Cell coordinates (reduced modulo the tile) of each tile filter.
    pub fn tile_keys(&self) -> &[(usize, usize)] {
        &self.tile_keys
    }

    pub fn boundary_filters(&self) -> &[Filter] {
        &self.boundary
    }

    pub fn boundary_filters_mut(&mut self) -> &mut [Filter] {
        &mut self.boundary
    }

    /// Decoder of a tile filter as a `P_x × P_y` frame.
    pub fn tile_decoder_frame(&self, i: usize) -> ImageFrame {
        let (px, py) = self.topo.patch;
        ImageFrame::new(px, py, self.tile[i].decoder.clone()).expect("tile filter size")
    }

    /// Decoder of unit `u` over its (possibly clipped) receptive field.
    pub fn unit_decoder_frame(&self, u: usize) -> ImageFrame {
        let r = self.units[u].rect;
        ImageFrame::new(r.width(), r.height(), self.filter(u).decoder.clone()).expect("filter matches its rect")
    }

    /// Norms of every decoder filter, tile filters first.
    pub fn decoder_norms(&self) -> Vec<f64> {
        self.tile.iter().chain(&self.boundary).map(Filter::decoder_norm).collect()
    }

    fn check_frame(&self, frame: &ImageFrame) -> Result<()> {
        if (frame.width(), frame.height()) != self.topo.image {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}, topology expects {}x{}",
                frame.width(),
                frame.height(),
                self.topo.image.0,
                self.topo.image.1
            )));
        }
        Ok(())
    }

    fn check_code(&self, z: &Array1<f64>) -> Result<()> {
        crate::error::check_len("image code", self.n_units(), z.len())
    }

    /// `sum_u z_u * decoder_u` placed on each unit's rectangle.
    pub fn reconstruct(&self, z: &Array1<f64>) -> Result<ImageFrame> {
        self.check_code(z)?;
        let (w, h) = self.topo.image;
        let mut out = ImageFrame::zeros(w, h);
        for (u, unit) in self.units.iter().enumerate() {
            if z[u] != 0.0 {
                axpy_rect(out.data_mut(), w, &unit.rect, z[u], &self.filter(u).decoder);
            }
        }
        Ok(out)
    }

    fn preactivation(&self, u: usize, x: &[f64]) -> f64 {
        let f = self.filter(u);
        dot_rect(x, self.topo.image.0, &self.units[u].rect, &f.encoder) + f.bias
    }

    /// Feed-forward code: each unit's encoder applied to its window.
    pub fn encode_image(&self, frame: &ImageFrame) -> Result<Array1<f64>> {
        self.check_frame(frame)?;
        let x = frame.data();
        Ok(Array1::from_shape_fn(self.n_units(), |u| {
            self.filter(u).gain * self.flavor.apply(self.preactivation(u, x), self.notch)
        }))
    }
}

fn dot_rect(img: &[f64], width: usize, r: &Rect, f: &[f64]) -> f64 {
    let rw = r.width();
    let mut acc = 0.0;
    for (j, y) in (r.y0..r.y1).enumerate() {
        let row = &img[y * width + r.x0..y * width + r.x1];
        acc += row.iter().zip(&f[j * rw..(j + 1) * rw]).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

fn axpy_rect(img: &mut [f64], width: usize, r: &Rect, a: f64, f: &[f64]) {
    let rw = r.width();
    for (j, y) in (r.y0..r.y1).enumerate() {
        let row = &mut img[y * width + r.x0..y * width + r.x1];
        for (p, w) in row.iter_mut().zip(&f[j * rw..(j + 1) * rw]) {
            *p += a * w;
        }
    }
}

/// Sparsity term used by whole-image inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSparsity {
    /// `alpha |z|_1` with the given `alpha`.
    L1(f64),
    /// Gaussian-pooled group penalty on the cell grid; wraps on periodic topologies.
    Group(GroupSparsityConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalHyper {
    pub sparsity: LocalSparsity,
    /// Include the prediction term `||z - Enc(x)||^2` and warm-start from the encoder.
    pub psd: bool,
    pub max_sweeps: usize,
    pub tolerance: f64,
    /// Code re-adjustment passes after each site update during training.
    pub adjust_iters: usize,
}

impl Default for LocalHyper {
    fn default() -> Self {
        Self {
            sparsity: LocalSparsity::L1(0.5),
            psd: true,
            max_sweeps: 50,
            tolerance: 1e-6,
            adjust_iters: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRates {
    pub decoder: f64,
    pub encoder: f64,
}

impl Default for LocalRates {
    fn default() -> Self {
        Self { decoder: 0.02, encoder: 0.02 }
    }
}

/// Inference state for one frame: the code, the residual image and the
/// encoder prediction (when the prediction term is on).
struct Workspace<'a> {
    net: &'a LocalNet,
    hyper: &'a LocalHyper,
    z: Array1<f64>,
    resid: Vec<f64>,
    pred: Option<Array1<f64>>,
    group: Option<&'a GroupPenalty>,
    /// Pool sums of `z`, kept in step with it when `group` is set.
    sums: Vec<f64>,
}

fn build_group(net: &LocalNet, hyper: &LocalHyper) -> Result<Option<GroupPenalty>> {
    match hyper.sparsity {
        LocalSparsity::Group(cfg) => {
            let (cx, cy) = net.topo.cells();
            Ok(Some(GroupPenalty::new(cfg, cx, cy, net.topo.period.is_some())?))
        }
        LocalSparsity::L1(a) if !(a >= 0.0) => Err(Error::InvalidInput("alpha must be >= 0".into())),
        LocalSparsity::L1(_) => Ok(None),
    }
}

impl<'a> Workspace<'a> {
    fn new(
        net: &'a LocalNet,
        hyper: &'a LocalHyper,
        frame: &'a ImageFrame,
        z: Array1<f64>,
        group: Option<&'a GroupPenalty>,
    ) -> Result<Self> {
        net.check_frame(frame)?;
        net.check_code(&z)?;
        let pred = if hyper.psd { Some(net.encode_image(frame)?) } else { None };
        let recon = net.reconstruct(&z)?;
        let resid = frame.data().iter().zip(recon.data()).map(|(a, b)| a - b).collect();
        let sums = match group {
            Some(g) => g.pool_sums(z.as_slice().expect("contiguous code"))?,
            None => Vec::new(),
        };
        Ok(Self { net, hyper, z, resid, pred, group, sums })
    }

    fn recon_energy(&self) -> f64 {
        self.resid.iter().map(|r| r * r).sum()
    }

    fn pred_energy(&self) -> f64 {
        self.pred.as_ref().map_or(0.0, |p| linalg::sq_norm((&self.z - p).view()))
    }

    fn sparsity(&self, z: &Array1<f64>) -> Result<f64> {
        match (self.group, self.hyper.sparsity) {
            (Some(g), _) => g.penalty(z.as_slice().expect("contiguous code")),
            (None, LocalSparsity::L1(a)) => Ok(a * linalg::l1(z.view())),
            (None, LocalSparsity::Group(_)) => unreachable!("group penalty is built with the workspace"),
        }
    }

    fn energy(&self) -> Result<f64> {
        Ok(self.recon_energy() + self.pred_energy() + self.sparsity(&self.z)?)
    }

    /// Exact minimization of the energy over one code component.
    fn coordinate_step(&mut self, u: usize) {
        let unit = &self.net.units[u];
        let d = &self.net.filter(u).decoder;
        let dd: f64 = d.iter().map(|v| v * v).sum();
        let zu = self.z[u];
        let width = self.net.topo.image.0;
        let mut b = dot_rect(&self.resid, width, &unit.rect, d) + zu * dd;
        let mut a = dd;
        if let Some(p) = &self.pred {
            b += p[u];
            a += 1.0;
        }
        let new = match (self.group, self.hyper.sparsity) {
            (Some(g), _) => g.coordinate_min(u, a, b, zu, &mut self.sums),
            (None, LocalSparsity::L1(alpha)) if a > 0.0 => linalg::soft_threshold(b, alpha / 2.0) / a,
            (None, _) => 0.0,
        };
        if new != zu {
            axpy_rect(&mut self.resid, width, &unit.rect, zu - new, d);
            self.z[u] = new;
        }
    }

    fn coordinate_pass(&mut self, units: impl Iterator<Item = usize>) {
        for u in units {
            self.coordinate_step(u);
        }
    }

    fn full_sweep(&mut self) {
        let net = self.net;
        self.coordinate_pass(net.sites.iter().flat_map(|s| s.units.iter().copied()));
    }
}

/// Joint inference over the whole image.
///
/// The code is updated by exact coordinate minimization, site by site in
/// raster order; each full sweep is one iteration.
pub fn infer_image_code(frame: &ImageFrame, net: &LocalNet, hyper: &LocalHyper) -> Result<CodeState> {
    let z0 = if hyper.psd { net.encode_image(frame)? } else { Array1::zeros(net.n_units()) };
    infer_image_code_from(frame, net, hyper, z0)
}

pub fn infer_image_code_from(
    frame: &ImageFrame,
    net: &LocalNet,
    hyper: &LocalHyper,
    z0: Array1<f64>,
) -> Result<CodeState> {
    let group = build_group(net, hyper)?;
    let mut ws = Workspace::new(net, hyper, frame, z0, group.as_ref())?;
    let mut energy = ws.energy()?;
    let mut trace = vec![energy];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < hyper.max_sweeps {
        ws.full_sweep();
        iterations += 1;
        let e = ws.energy()?;
        trace.push(e);
        let change = energy - e;
        energy = e;
        if change <= hyper.tolerance * e.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    Ok(CodeState { z: ws.z, energy, iterations, converged, trace })
}

/// Whole-image energy of a given code.
pub fn image_energy(frame: &ImageFrame, z: &Array1<f64>, net: &LocalNet, hyper: &LocalHyper) -> Result<f64> {
    let group = build_group(net, hyper)?;
    Workspace::new(net, hyper, frame, z.clone(), group.as_ref())?.energy()
}

/// Outcome of training on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainReport {
    /// Energy after the initial inference.
    pub energy_before: f64,
    pub energy_after: f64,
    /// Whole-image energy after each site.
    pub site_trace: Vec<f64>,
    /// Mean prediction error per unit after the sweep.
    pub pred_err: f64,
}

/// One training pass over a frame: infer the code, then for each site in
/// raster order step the filters used by that site on the gradient of its own
/// units, renormalize, and re-adjust the affected codes.
pub fn train_local_frame(
    frame: &ImageFrame,
    net: &mut LocalNet,
    hyper: &LocalHyper,
    rates: &LocalRates,
) -> Result<LocalTrainReport> {
    train_local_frame_with(frame, net, hyper, rates, |_| {})
}

/// [`train_local_frame`] with a callback invoked after every site update.
pub fn train_local_frame_with(
    frame: &ImageFrame,
    net: &mut LocalNet,
    hyper: &LocalHyper,
    rates: &LocalRates,
    mut on_site: impl FnMut(&LocalNet),
) -> Result<LocalTrainReport> {
    let code = infer_image_code(frame, net, hyper)?;
    let group = build_group(net, hyper)?;
    let (mut z, mut resid, mut pred, mut sums) = {
        let ws = Workspace::new(net, hyper, frame, code.z, group.as_ref())?;
        (ws.z, ws.resid, ws.pred, ws.sums)
    };
    let energy_before = code.energy;
    let mut site_trace = Vec::with_capacity(net.sites.len());
    let width = net.topo.image.0;
    let x = frame.data();
    for si in 0..net.sites.len() {
        let site_units = net.sites[si].units.clone();
        let rect = net.sites[si].rect;
        let mut filters: Vec<FilterRef> = site_units.iter().map(|&u| net.units[u].filter).collect();
        filters.sort();
        filters.dedup();
        let mut touched: Vec<usize> = site_units.clone();
        for &fr in &filters {
            let mine: Vec<usize> = site_units.iter().copied().filter(|&u| net.units[u].filter == fr).collect();
            let changed_dec = decoder_step(net, fr, &mine, &z, &mut resid, width, &rect, rates.decoder);
            let changed_enc = match &mut pred {
                Some(p) => encoder_step(net, fr, &mine, &z, p, x, rates.encoder),
                None => false,
            };
            if changed_dec || changed_enc {
                touched.extend_from_slice(net.users(fr));
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let mut ws = Workspace {
            net,
            hyper,
            z: std::mem::take(&mut z),
            resid: std::mem::take(&mut resid),
            pred: pred.take(),
            group: group.as_ref(),
            sums: std::mem::take(&mut sums),
        };
        for _ in 0..hyper.adjust_iters {
            ws.coordinate_pass(touched.iter().copied());
        }
        site_trace.push(ws.energy()?);
        z = ws.z;
        resid = ws.resid;
        pred = ws.pred;
        sums = ws.sums;
        on_site(net);
    }
    let energy_after = *site_trace.last().unwrap_or(&energy_before);
    let pred_err = pred.as_ref().map_or(0.0, |p| linalg::sq_norm((&z - p).view()) / z.len() as f64);
    Ok(LocalTrainReport { energy_before, energy_after, site_trace, pred_err })
}

/// Trains on every frame in order; returns one report per frame.
pub fn train_local(
    frames: &[ImageFrame],
    net: &mut LocalNet,
    hyper: &LocalHyper,
    rates: &LocalRates,
) -> Result<Vec<LocalTrainReport>> {
    frames.iter().map(|f| train_local_frame(f, net, hyper, rates)).collect()
}

const MAX_HALVINGS: usize = 8;

/// Steps one decoder filter on the gradient of the site units `mine`, keeping
/// the step only if the whole-image reconstruction error does not grow.
#[allow(clippy::too_many_arguments)]
fn decoder_step(
    net: &mut LocalNet,
    fr: FilterRef,
    mine: &[usize],
    z: &Array1<f64>,
    resid: &mut [f64],
    width: usize,
    rect: &Rect,
    lr: f64,
) -> bool {
    if mine.iter().all(|&u| z[u] == 0.0) {
        return false;
    }
    let zsum: f64 = mine.iter().map(|&u| z[u]).sum();
    let grad: Vec<f64> = dot_rect_collect(resid, width, rect).into_iter().map(|r| -2.0 * zsum * r).collect();
    let users: Vec<usize> = net.users(fr).to_vec();
    let before: f64 = resid.iter().map(|r| r * r).sum();
    let old = net.get(fr).decoder.clone();
    let mut step = lr;
    for _ in 0..MAX_HALVINGS {
        let mut cand: Vec<f64> = old.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
        normalize(&mut cand);
        let delta: Vec<f64> = cand.iter().zip(&old).map(|(a, b)| a - b).collect();
        for &v in &users {
            if z[v] != 0.0 {
                axpy_rect(resid, width, &net.units[v].rect, -z[v], &delta);
            }
        }
        let after: f64 = resid.iter().map(|r| r * r).sum();
        if after <= before {
            net.get_mut(fr).decoder = cand;
            return true;
        }
        for &v in &users {
            if z[v] != 0.0 {
                axpy_rect(resid, width, &net.units[v].rect, z[v], &delta);
            }
        }
        step *= 0.5;
    }
    false
}

fn dot_rect_collect(img: &[f64], width: usize, r: &Rect) -> Vec<f64> {
    let mut out = Vec::with_capacity(r.area());
    for y in r.y0..r.y1 {
        out.extend_from_slice(&img[y * width + r.x0..y * width + r.x1]);
    }
    out
}

/// Steps one encoder filter on the prediction error of the site units,
/// keeping the step only if the prediction error summed over every user of
/// the filter does not grow.
fn encoder_step(
    net: &mut LocalNet,
    fr: FilterRef,
    mine: &[usize],
    z: &Array1<f64>,
    pred: &mut Array1<f64>,
    x: &[f64],
    lr: f64,
) -> bool {
    let width = net.topo.image.0;
    let n = net.get(fr).encoder.len();
    let (mut gw, mut gb, mut gg) = (vec![0.0; n], 0.0, 0.0);
    for &u in mine {
        let y = net.preactivation(u, x);
        let f = net.get(fr);
        let h = net.flavor.apply(y, net.notch);
        let (hy, _) = net.flavor.derivs(y, net.notch);
        let dp = -2.0 * (z[u] - f.gain * h);
        let dy = dp * f.gain * hy;
        gg += dp * h;
        gb += dy;
        let xs = dot_rect_collect(x, width, &net.units[u].rect);
        for (g, xv) in gw.iter_mut().zip(&xs) {
            *g += dy * xv;
        }
    }
    if gg == 0.0 && gb == 0.0 && gw.iter().all(|&g| g == 0.0) {
        return false;
    }
    let users: Vec<usize> = net.users(fr).to_vec();
    let loss = |p: &Array1<f64>| users.iter().map(|&v| (z[v] - p[v]).powi(2)).sum::<f64>();
    let before = loss(pred);
    let old = net.get(fr).clone();
    let mut step = lr;
    let mut trial = pred.clone();
    for _ in 0..MAX_HALVINGS {
        {
            let f = net.get_mut(fr);
            f.encoder = old.encoder.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            f.bias = old.bias - step * gb;
            f.gain = (old.gain - step * gg).max(0.0);
        }
        for &v in &users {
            let f = net.filter(v);
            trial[v] = f.gain * net.flavor.apply(net.preactivation(v, x), net.notch);
        }
        if loss(&trial) <= before {
            for &v in &users {
                pred[v] = trial[v];
            }
            return true;
        }
        step *= 0.5;
    }
    *net.get_mut(fr) = old;
    false
}

/// Fraction of a filter's squared L2 norm inside the central window that
/// leaves a `margin`-pixel band on every side.
pub fn central_energy_fraction(filter: &ImageFrame, margin: usize) -> f64 {
    let (w, h) = (filter.width(), filter.height());
    let total: f64 = filter.data().iter().map(|v| v * v).sum();
    if total == 0.0 || 2 * margin >= w.min(h) {
        return 0.0;
    }
    let mut inner = 0.0;
    for y in margin..h - margin {
        for x in margin..w - margin {
            inner += filter.get(x, y).powi(2);
        }
    }
    inner / total
}
