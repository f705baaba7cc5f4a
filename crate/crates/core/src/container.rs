//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TPN1"                      magic
//! u32 version                  currently 1
//! u32 n_meta
//!   n_meta × { u16 key_len, key, u32 value_len, value }      UTF-8
//! u32 n_tensors
//!   n_tensors × { u16 name_len, name, u8 rank, rank × u32 dim,
//!                 prod(dims) × f32 }                         row-major
//! [u8; 32]                     SHA-256 of every preceding byte
//! ```
//!
//! Values are stored as `f32`; models convert from and to `f64` at the edge,
//! so a container round-trips bit-exactly while a model round-trips to
//! single precision.

use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::local::{Density, LocalNet, LocalTopology};
use crate::sparse::{Dictionary, EncoderParams, Flavor, SparseModel};
use crate::tpn::{TpnEncoder, TpnModel};

pub const MAGIC: &[u8; 4] = b"TPN1";
pub const VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(name: impl Into<String>, dims: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<Self> {
        let data: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor '{name}': dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn matrix(&self) -> Result<Array2<f64>> {
        match self.dims[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.to_f64()).expect("checked on construction")),
            _ => Err(Error::Format(format!("tensor '{}' is not a matrix", self.name))),
        }
    }

    fn vector(&self) -> Array1<f64> {
        Array1::from(self.to_f64())
    }
}

/// Ordered metadata and tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelContainer {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

impl ModelContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| Error::Format(format!("missing metadata '{key}'")))
    }

    fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require_meta(key)?;
        v.parse().map_err(|_| Error::Format(format!("bad value '{v}' for metadata '{key}'")))
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn push_f64(&mut self, name: &str, dims: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<()> {
        self.tensors.push(Tensor::from_f64(name, dims, data)?);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    /// Serialized bytes including the trailing digest.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count_u32(self.meta.len(), "metadata count")?.to_le_bytes());
        for (k, v) in &self.meta {
            put_str16(&mut out, k)?;
            out.extend_from_slice(&count_u32(v.len(), "metadata value length")?.to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&count_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            put_str16(&mut out, &t.name)?;
            let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Format("tensor rank above 255".into()))?;
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&count_u32(d, "tensor dimension")?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a model container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes.len() < 8 + HASH_LEN {
            return Err(Error::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - HASH_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 8 };
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let k = r.str16()?;
            let n = r.u32()? as usize;
            let v = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
            meta.push((k, v));
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(1024));
        for _ in 0..n_tensors {
            let name = r.str16()?;
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Format("tensor size overflows".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(Tensor { name, dims, data });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }
        Ok(Self { meta, tensors })
    }

    /// Hex SHA-256 of the serialized container body.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(bytes[bytes.len() - HASH_LEN..].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in 32 bits")))
}

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len()).map_err(|_| Error::Format("name longer than 65535 bytes".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("container truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn str16(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

/// Models that can be stored in a [`ModelContainer`].
pub trait Persist: Sized {
    /// Value of the `kind` metadata entry.
    const KIND: &'static str;

    fn to_container(&self) -> Result<ModelContainer>;

    fn from_container(c: &ModelContainer) -> Result<Self>;
}

fn check_kind(c: &ModelContainer, kind: &str) -> Result<()> {
    match c.meta("kind") {
        Some(k) if k == kind => Ok(()),
        Some(k) => Err(Error::Format(format!("container holds a '{k}' model, expected '{kind}'"))),
        None => Err(Error::Format("container has no 'kind' metadata".into())),
    }
}

fn push_matrix(c: &mut ModelContainer, name: &str, m: &Array2<f64>) -> Result<()> {
    c.push_f64(name, vec![m.nrows(), m.ncols()], m.iter().copied())
}

fn push_vector(c: &mut ModelContainer, name: &str, v: &Array1<f64>) -> Result<()> {
    c.push_f64(name, vec![v.len()], v.iter().copied())
}

impl Persist for SparseModel {
    const KIND: &'static str = "sparse";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.set_meta("kind", Self::KIND);
        c.set_meta("flavor", self.enc.flavor.name());
        push_matrix(&mut c, "decoder", self.dict.matrix())?;
        push_matrix(&mut c, "encoder.weight", &self.enc.w_e)?;
        push_vector(&mut c, "encoder.gain", &self.enc.gain)?;
        push_vector(&mut c, "encoder.bias", &self.enc.bias)?;
        push_vector(&mut c, "encoder.notch", &self.enc.notch)?;
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        check_kind(c, Self::KIND)?;
        let enc = EncoderParams {
            w_e: c.tensor("encoder.weight")?.matrix()?,
            gain: c.tensor("encoder.gain")?.vector(),
            bias: c.tensor("encoder.bias")?.vector(),
            notch: c.tensor("encoder.notch")?.vector(),
            flavor: Flavor::parse(c.require_meta("flavor")?)?,
        };
        SparseModel::new(Dictionary::from_matrix(c.tensor("decoder")?.matrix()?)?, enc)
    }
}

impl Persist for TpnModel {
    const KIND: &'static str = "tpn";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.set_meta("kind", Self::KIND);
        c.set_meta("n_tau", self.n_tau.to_string());
        c.set_meta("alpha1", self.alpha1.to_string());
        c.set_meta("alpha2", self.alpha2.to_string());
        push_matrix(&mut c, "w_d1", &self.w_d1)?;
        push_matrix(&mut c, "w_d2", &self.w_d2)?;
        for (p, e) in [("enc1", &self.enc1), ("enc2", &self.enc2)] {
            push_matrix(&mut c, &format!("{p}.weight"), &e.w_e)?;
            push_vector(&mut c, &format!("{p}.bias"), &e.bias)?;
            push_vector(&mut c, &format!("{p}.gain"), &e.gain)?;
            c.push_f64(&format!("{p}.notch"), vec![1], [e.notch])?;
        }
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        check_kind(c, Self::KIND)?;
        let enc = |p: &str| -> Result<TpnEncoder> {
            let notch = c.tensor(&format!("{p}.notch"))?;
            Ok(TpnEncoder {
                w_e: c.tensor(&format!("{p}.weight"))?.matrix()?,
                bias: c.tensor(&format!("{p}.bias"))?.vector(),
                gain: c.tensor(&format!("{p}.gain"))?.vector(),
                notch: notch.to_f64().first().copied().ok_or_else(|| Error::Format("empty notch".into()))?,
            })
        };
        let m = TpnModel {
            w_d1: c.tensor("w_d1")?.matrix()?,
            w_d2: c.tensor("w_d2")?.matrix()?,
            enc1: enc("enc1")?,
            enc2: enc("enc2")?,
            n_tau: c.parse_meta("n_tau")?,
            alpha1: c.parse_meta("alpha1")?,
            alpha2: c.parse_meta("alpha2")?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Writes the topology into container metadata.
pub fn put_topology(c: &mut ModelContainer, t: &LocalTopology) {
    c.set_meta("image", format!("{}x{}", t.image.0, t.image.1));
    c.set_meta("patch", format!("{}x{}", t.patch.0, t.patch.1));
    c.set_meta("density", format!("{}x{}", t.density.0, t.density.1));
    c.set_meta(
        "period",
        t.period.map_or_else(|| "none".to_string(), |(x, y)| format!("{x}x{y}")),
    );
}

fn parse_pair<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<(T, T)> {
    let (a, b) = s.split_once('x').ok_or_else(|| Error::Format(format!("expected AxB, got '{s}'")))?;
    Ok((f(a)?, f(b)?))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad integer '{s}'")))
}

/// Reads a topology written by [`put_topology`].
pub fn get_topology(c: &ModelContainer) -> Result<LocalTopology> {
    let period = match c.require_meta("period")? {
        "none" => None,
        s => Some(parse_pair(s, parse_usize)?),
    };
    let t = LocalTopology {
        image: parse_pair(c.require_meta("image")?, parse_usize)?,
        patch: parse_pair(c.require_meta("patch")?, parse_usize)?,
        density: parse_pair(c.require_meta("density")?, Density::parse)?,
        period,
    };
    t.validate()?;
    Ok(t)
}

impl Persist for LocalNet {
    const KIND: &'static str = "local";

    fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.set_meta("kind", Self::KIND);
        put_topology(&mut c, self.topology());
        c.set_meta("flavor", self.flavor.name());
        c.push_f64("notch", vec![1], [self.notch])?;
        let full = self.topology().patch.0 * self.topology().patch.1;
        for (prefix, filters, dims) in [
            ("tile", self.tile_filters(), vec![self.tile_filters().len(), full]),
            (
                "boundary",
                self.boundary_filters(),
                vec![self.boundary_filters().iter().map(|f| f.decoder.len()).sum()],
            ),
        ] {
            let n = filters.len();
            c.push_f64(&format!("{prefix}.decoder"), dims.clone(), filters.iter().flat_map(|f| f.decoder.iter().copied()))?;
            c.push_f64(&format!("{prefix}.encoder"), dims, filters.iter().flat_map(|f| f.encoder.iter().copied()))?;
            c.push_f64(&format!("{prefix}.gain"), vec![n], filters.iter().map(|f| f.gain))?;
            c.push_f64(&format!("{prefix}.bias"), vec![n], filters.iter().map(|f| f.bias))?;
        }
        Ok(c)
    }

    fn from_container(c: &ModelContainer) -> Result<Self> {
        check_kind(c, Self::KIND)?;
        let topo = get_topology(c)?;
        let mut net = LocalNet::zeroed(topo, Flavor::parse(c.require_meta("flavor")?)?)?;
        net.notch = c.tensor("notch")?.to_f64().first().copied().ok_or_else(|| Error::Format("empty notch".into()))?;
        for prefix in ["tile", "boundary"] {
            let dec = c.tensor(&format!("{prefix}.decoder"))?.to_f64();
            let enc = c.tensor(&format!("{prefix}.encoder"))?.to_f64();
            let gain = c.tensor(&format!("{prefix}.gain"))?.to_f64();
            let bias = c.tensor(&format!("{prefix}.bias"))?.to_f64();
            let filters = if prefix == "tile" { net.tile_filters_mut() } else { net.boundary_filters_mut() };
            let total: usize = filters.iter().map(|f| f.decoder.len()).sum();
            if dec.len() != total || enc.len() != total || gain.len() != filters.len() || bias.len() != filters.len() {
                return Err(Error::Format(format!("{prefix} filters do not match the topology")));
            }
            let mut off = 0;
            for (i, f) in filters.iter_mut().enumerate() {
                let n = f.decoder.len();
                f.decoder.copy_from_slice(&dec[off..off + n]);
                f.encoder.copy_from_slice(&enc[off..off + n]);
                f.gain = gain[i];
                f.bias = bias[i];
                off += n;
            }
        }
        Ok(net)
    }
}
