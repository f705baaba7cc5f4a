//! Reading frame sequences and models from disk.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array1;
use tpn_core::container::Persist;
use tpn_core::{ImageFrame, LocalNet, ModelContainer, SparseModel, TpnModel};

/// `kind` metadata of a frame-sequence container.
pub const FRAMES_KIND: &str = "frames";

/// Packs equally sized frames into a container (`frames` tensor `[n, h, w]`).
pub fn frames_container(frames: &[ImageFrame]) -> Result<ModelContainer> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
    if frames.iter().any(|f| (f.width(), f.height()) != (w, h)) {
        bail!("frames differ in size");
    }
    let mut c = ModelContainer::new();
    c.set_meta("kind", FRAMES_KIND);
    c.push_f64("frames", vec![frames.len(), h, w], frames.iter().flat_map(|f| f.data().iter().copied()))?;
    Ok(c)
}

pub fn frames_from_container(c: &ModelContainer) -> Result<Vec<ImageFrame>> {
    match c.meta("kind") {
        Some(FRAMES_KIND) => {}
        Some(k) => bail!("expected a frames container, found a '{k}' model"),
        None => bail!("container has no 'kind' metadata"),
    }
    let t = c.tensor("frames")?;
    let &[n, h, w] = t.dims.as_slice() else {
        bail!("frames tensor must have rank 3, found dims {:?}", t.dims);
    };
    let data = t.to_f64();
    (0..n)
        .map(|i| Ok(ImageFrame::new(w, h, data[i * w * h..(i + 1) * w * h].to_vec())?))
        .collect()
}

/// Frames from a frames container, a single PGM, or a directory of PGMs
/// (sorted by file name).
pub fn load_frames(path: &Path) -> Result<Vec<ImageFrame>> {
    if !path.exists() {
        bail!("input {} does not exist", path.display());
    }
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .pgm files in {}", path.display());
        }
        return files
            .iter()
            .map(|f| ImageFrame::read_pgm(f).with_context(|| format!("reading {}", f.display())))
            .collect();
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return Ok(vec![ImageFrame::read_pgm(path).with_context(|| format!("reading {}", path.display()))?]);
    }
    let c = ModelContainer::read(path).with_context(|| format!("reading {}", path.display()))?;
    frames_from_container(&c)
}

/// Any model the CLI can train.
#[derive(Debug, Clone)]
pub enum Model {
    Sparse(SparseModel),
    Local(Box<LocalNet>),
    Tpn(TpnModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Sparse(_) => SparseModel::KIND,
            Model::Local(_) => LocalNet::KIND,
            Model::Tpn(_) => TpnModel::KIND,
        }
    }
}

pub fn model_from_container(c: &ModelContainer) -> Result<Model> {
    Ok(match c.meta("kind") {
        Some(SparseModel::KIND) => Model::Sparse(SparseModel::from_container(c)?),
        Some(LocalNet::KIND) => Model::Local(Box::new(LocalNet::from_container(c)?)),
        Some(TpnModel::KIND) => Model::Tpn(TpnModel::from_container(c)?),
        Some(k) => bail!("'{k}' containers do not hold a model"),
        None => bail!("container has no 'kind' metadata"),
    })
}

pub fn load_model(path: &Path) -> Result<(Model, ModelContainer)> {
    let c = ModelContainer::read(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok((model_from_container(&c)?, c))
}

/// Feed-forward simple-cell encoder applied to whole frames.
pub enum SimpleEncoder {
    Sparse(SparseModel),
    Local(Box<LocalNet>),
}

impl SimpleEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        match load_model(path)?.0 {
            Model::Sparse(m) => Ok(Self::Sparse(m)),
            Model::Local(n) => Ok(Self::Local(n)),
            Model::Tpn(_) => Err(anyhow!("a tpn model cannot serve as the simple-cell layer")),
        }
    }

    pub fn encode(&self, frame: &ImageFrame) -> Result<Array1<f64>> {
        Ok(match self {
            Self::Sparse(m) => m.enc.encode(&Array1::from(frame.data().to_vec()))?,
            Self::Local(n) => n.encode_image(frame)?,
        })
    }
}
