//! Local mean removal and contrast normalization.
//!
//! Both steps use the same truncated Gaussian window. Near the border the
//! window is renormalized over the pixels that fall inside the frame, so a
//! constant image stays exactly constant under the weighted mean everywhere.

use crate::error::{Error, Result};
use crate::frame::ImageFrame;

/// Default Gaussian width in pixels.
pub const DEFAULT_WIDTH: f64 = 11.3;

/// How the contrast divisor treats low-variance regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffMode {
    /// `max(sigma, c)`
    Max,
    /// `sqrt(sigma^2 + c^2)`
    Quadrature,
}

/// The cutoff scale `c` of the contrast divisor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    /// Absolute luminance units.
    Absolute(f64),
    /// Fraction of the global standard deviation of the frame being normalized.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Standard deviation of the Gaussian window, in pixels.
    pub gaussian_width: f64,
    pub cutoff: Cutoff,
    pub mode: CutoffMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { gaussian_width: DEFAULT_WIDTH, cutoff: Cutoff::Relative(0.1), mode: CutoffMode::Max }
    }
}

impl PreprocessConfig {
    pub fn with_width(gaussian_width: f64) -> Self {
        Self { gaussian_width, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_width > 0.0 && self.gaussian_width.is_finite()) {
            return Err(Error::InvalidInput("gaussian_width must be positive".into()));
        }
        let c = match self.cutoff {
            Cutoff::Absolute(c) | Cutoff::Relative(c) => c,
        };
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput("cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Unnormalized 1-D Gaussian taps for offsets `-r..=r`, `r = floor(3 * sigma)`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).floor() as isize;
    (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn blur_axis(src: &[f64], w: usize, h: usize, taps: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    let (len, lines) = if horizontal { (w, h) } else { (h, w) };
    for line in 0..lines {
        for i in 0..len as isize {
            let mut acc = 0.0;
            let mut norm = 0.0;
            let lo = (i - r).max(0);
            let hi = (i + r).min(len as isize - 1);
            for j in lo..=hi {
                let k = taps[(j - i + r) as usize];
                let idx = if horizontal {
                    line * w + j as usize
                } else {
                    j as usize * w + line
                };
                acc += k * src[idx];
                norm += k;
            }
            let idx = if horizontal { line * w + i as usize } else { i as usize * w + line };
            out[idx] = acc / norm;
        }
    }
    out
}

/// Gaussian-weighted neighborhood mean with border renormalization.
pub fn weighted_mean(frame: &ImageFrame, sigma: f64) -> Result<ImageFrame> {
    if frame.is_empty() {
        return Err(Error::InvalidInput("zero-sized frame".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput("gaussian width must be positive".into()));
    }
    let taps = gaussian_taps(sigma);
    let (w, h) = (frame.width(), frame.height());
    let tmp = blur_axis(frame.data(), w, h, &taps, true);
    let out = blur_axis(&tmp, w, h, &taps, false);
    ImageFrame::new(w, h, out)
}

/// Replaces every pixel by itself minus the Gaussian-weighted mean of its neighborhood.
pub fn local_mean_subtract(frame: &ImageFrame, cfg: &PreprocessConfig) -> Result<ImageFrame> {
    cfg.validate()?;
    if frame.is_empty() {
        return Err(Error::InvalidInput("zero-sized frame".into()));
    }
    // the weighted mean commutes with a global shift; shifting by one pixel
    // value makes constant frames cancel exactly instead of to rounding noise
    let k = frame.data()[0];
    let shifted = frame.map(|v| v - k);
    let mean = weighted_mean(&shifted, cfg.gaussian_width)?;
    let data = shifted.data().iter().zip(mean.data()).map(|(x, m)| x - m).collect();
    ImageFrame::new(frame.width(), frame.height(), data)
}

/// Gaussian-weighted local standard deviation of an already mean-subtracted frame.
pub fn local_std(frame: &ImageFrame, sigma: f64) -> Result<ImageFrame> {
    let sq = frame.map(|v| v * v);
    Ok(weighted_mean(&sq, sigma)?.map(|v| v.max(0.0).sqrt()))
}

/// Divides every pixel by the smoothed local standard deviation.
pub fn contrast_normalize(frame: &ImageFrame, cfg: &PreprocessConfig) -> Result<ImageFrame> {
    cfg.validate()?;
    let sigma = local_std(frame, cfg.gaussian_width)?;
    let c = match cfg.cutoff {
        Cutoff::Absolute(c) => c,
        Cutoff::Relative(f) => f * frame.rms(),
    };
    let data = frame
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&x, &s)| {
            let d = match cfg.mode {
                CutoffMode::Max => s.max(c),
                CutoffMode::Quadrature => (s * s + c * c).sqrt(),
            };
            if d > 0.0 {
                x / d
            } else {
                0.0
            }
        })
        .collect();
    ImageFrame::new(frame.width(), frame.height(), data)
}

pub fn preprocess(frame: &ImageFrame, cfg: &PreprocessConfig) -> Result<ImageFrame> {
    contrast_normalize(&local_mean_subtract(frame, cfg)?, cfg)
}
