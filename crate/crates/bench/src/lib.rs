//! Seeded fixtures shared by the benchmarks.

use ndarray::Array1;
use rand::Rng;
use tpn_core::local::Density;
use tpn_core::preprocess::preprocess;
use tpn_core::synth::{dead_leaves, moving_gaussian, rng_from_seed};
use tpn_core::tpn::windows_from_sequence;
use tpn_core::{Flavor, FrameWindow, ImageFrame, LocalNet, LocalTopology, PreprocessConfig, SparseModel, TpnModel};

/// A preprocessed dead-leaves image.
pub fn still(size: usize, seed: u64) -> ImageFrame {
    preprocess(&dead_leaves(size, size, 200, seed), &PreprocessConfig::with_width(4.0)).expect("preprocess")
}

/// Random `side × side` patches of [`still`] images, flattened.
pub fn patches(side: usize, count: usize, seed: u64) -> Vec<Array1<f64>> {
    let img = still(64, seed);
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let (x, y) = (rng.gen_range(0..=64 - side), rng.gen_range(0..=64 - side));
            Array1::from(img.window(x, y, side, side).expect("window").into_data())
        })
        .collect()
}

pub fn sparse_model(side: usize, overcomplete: usize, flavor: Flavor) -> SparseModel {
    SparseModel::random(side * side, overcomplete * side * side, flavor, &mut rng_from_seed(1))
}

/// A complete locally connected net on an `n × n` image.
pub fn local_net(n: usize, patch: usize, period: Option<usize>) -> LocalNet {
    let topo = LocalTopology::square(n, patch, Density::COMPLETE, period);
    LocalNet::random(topo, Flavor::DoubleTanh, &mut rng_from_seed(2)).expect("valid topology")
}

/// Sliding windows over a moving-bump sequence on a `size × size` grid.
pub fn bump_windows(size: usize, frames: usize, n_tau: usize) -> Vec<FrameWindow> {
    let seq: Vec<Array1<f64>> = moving_gaussian(frames, size, 1.5, 3)
        .expect("bump sequence")
        .frames
        .iter()
        .map(|f| Array1::from(f.data().to_vec()))
        .collect();
    windows_from_sequence(&seq, n_tau).expect("windows")
}

pub fn tpn_model(size: usize, n1: usize, n2: usize, n_tau: usize) -> TpnModel {
    TpnModel::random(size * size, n1, n2, n_tau, &mut rng_from_seed(4))
}
