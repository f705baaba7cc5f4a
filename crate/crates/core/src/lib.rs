//! Unsupervised learning of simple and complex cells.
//!
//! The crate covers the whole pipeline from raw frames to invariant codes:
//!
//! - [`preprocess`]: local mean removal and contrast normalization.
//! - [`sparse`]: patch-level sparse coding and predictive sparse decomposition
//!   (PSD) with `tanh` and double-`tanh` encoders.
//! - [`local`]: locally-connected networks with periodic weight tiles and
//!   independent boundary units.
//! - [`group`]: Gaussian-pooled group sparsity for topographic maps.
//! - [`tpn`]: the temporal product network splitting a short frame window into
//!   per-frame location codes and one shared invariant code.
//! - [`synth`]: seeded stimulus generators.
//! - [`analysis`]: Gabor fits, orientation maps, response profiles and
//!   topography statistics.
//! - [`container`]: the binary model container shared by every model type.

pub mod analysis;
pub mod container;
pub mod error;
pub mod frame;
pub mod group;
pub mod linalg;
pub mod local;
pub mod preprocess;
pub mod sparse;
pub mod synth;
pub mod tpn;

pub use container::{ModelContainer, Tensor};
pub use error::{Error, Result};
pub use frame::ImageFrame;
pub use group::GroupSparsityConfig;
pub use local::{LocalNet, LocalTopology};
pub use preprocess::PreprocessConfig;
pub use sparse::{CodeState, Dictionary, EncoderParams, Flavor, SparseHyper, SparseModel};
pub use tpn::{FrameWindow, TpnCode, TpnModel};
