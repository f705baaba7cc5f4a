//! Plain-text `key = value` experiment configuration.
//!
//! Every stage declares the keys it understands together with their defaults.
//! A config file may only set keys of the stage it is run with; anything else
//! is an error. The resolved view (defaults overlaid with the file) is what a
//! run records next to its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use crate::Stage;

/// `(key, default)`; an empty default means "unset".
type KeyTable = &'static [(&'static str, &'static str)];

const COMMON: KeyTable = &[("seed", "0"), ("input", "")];

const GEN: KeyTable = &[
    ("gen.kind", "moving_gaussian"),
    ("gen.frames", "100"),
    ("gen.size", "10"),
    ("gen.width", "1.5"),
    ("gen.image_size", "237"),
    ("gen.window", "79"),
    ("gen.shapes", "300"),
    ("gen.min_radius", "2"),
    ("gen.orientations", "12"),
    ("gen.positions", "-4,-2,0,2,4"),
    ("gen.softness", "1"),
];

const PREPROCESS: KeyTable = &[
    ("preprocess.width", "11.3"),
    ("preprocess.cutoff", "0.1"),
    ("preprocess.cutoff_kind", "relative"),
    ("preprocess.cutoff_mode", "max"),
];

const PATCH_TRAIN: KeyTable = &[
    ("model.patch", "8"),
    ("model.code", "128"),
    ("model.flavor", "double_tanh"),
    ("model.alpha", "0.5"),
    ("infer.max_iters", "100"),
    ("infer.tolerance", "1e-6"),
    ("train.steps", "1000"),
    ("train.batch", "10"),
    ("train.lr_decoder", "0.01"),
    ("train.lr_encoder", "0.01"),
];

const LOCAL_TRAIN: KeyTable = &[
    // empty: three times the patch
    ("local.image", ""),
    ("local.patch", "20"),
    ("local.density", "1"),
    ("local.period", "20"),
    ("local.flavor", "double_tanh"),
    ("local.sparsity", "l1"),
    ("local.alpha", "0.5"),
    ("local.sigma", "1.5"),
    ("local.psd", "true"),
    ("infer.max_sweeps", "50"),
    ("infer.tolerance", "1e-6"),
    ("train.frames", "100"),
    ("train.frames_per_image", "20"),
    ("train.adjust_iters", "3"),
    ("train.lr_decoder", "0.005"),
    ("train.lr_encoder", "0.005"),
];

const TPN_TRAIN: KeyTable = &[
    ("tpn.n_tau", "3"),
    ("tpn.n1", "10"),
    ("tpn.n2", "10"),
    ("tpn.alpha1", "0.02"),
    ("tpn.alpha2", "0.02"),
    ("tpn.simple_model", ""),
    ("infer.max_iters", "200"),
    ("infer.tolerance", "1e-6"),
    ("train.epochs", "1"),
    ("train.lr_decoder", "0.05"),
    ("train.lr_encoder", "0.05"),
];

const ANALYZE: KeyTable = &[
    ("analyze.simple_model", ""),
    ("analyze.permutations", "1000"),
    ("analyze.orientations", "36"),
    ("analyze.positions", "-8,-6,-4,-2,0,2,4,6,8"),
    ("analyze.softness", "1"),
    ("analyze.contrast", "1"),
    ("analyze.top_k", "5"),
    ("analyze.bump_width", "1.5"),
];

const TPN_RESPONSES: KeyTable = &[("analyze.simple_model", ""), ("analyze.bump_width", "1.5")];

const DESCRIBE: KeyTable = &[];

fn table(stage: Stage) -> KeyTable {
    match stage {
        Stage::Gen => GEN,
        Stage::Preprocess => PREPROCESS,
        Stage::TrainSc | Stage::TrainPsd => PATCH_TRAIN,
        Stage::TrainLocal => LOCAL_TRAIN,
        Stage::TrainTpn => TPN_TRAIN,
        Stage::Analyze => ANALYZE,
        Stage::TpnResponses => TPN_RESPONSES,
        Stage::Describe => DESCRIBE,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    stage: Stage,
    values: BTreeMap<String, String>,
}

impl Config {
    /// Defaults of `stage` only.
    pub fn defaults(stage: Stage) -> Self {
        let values = COMMON
            .iter()
            .chain(table(stage))
            .map(|&(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { stage, values }
    }

    /// Defaults overlaid with the assignments in `text`.
    pub fn parse(stage: Stage, text: &str) -> Result<Self> {
        let mut cfg = Self::defaults(stage);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("config line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(stage: Stage, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(stage, &text)
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}` for stage {}", self.stage),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared config key {key}"))
    }

    /// `None` when the key is empty.
    pub fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e| anyhow!("config key `{key}`: cannot parse `{v}`: {e}"))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("config key `{key}`: cannot parse `{s}`: {e}")))
            .collect()
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        let mut s = format!("# stage: {}\n", self.stage);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
