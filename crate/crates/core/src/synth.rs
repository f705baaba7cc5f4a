//! Seeded stimulus generators.
//!
//! Every generator is a pure function of its parameters and seed. Randomness
//! comes from ChaCha8, which produces the same stream on every platform.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::ImageFrame;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-peak isotropic Gaussian centered at `(cx, cy)`.
pub fn gaussian_bump(size: usize, width: f64, cx: f64, cy: f64) -> ImageFrame {
    let k = 1.0 / (2.0 * width * width);
    ImageFrame::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-(dx * dx + dy * dy) * k).exp()
    })
}

/// Frames of a Gaussian bump sliding one pixel per frame along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingGaussian {
    pub frames: Vec<ImageFrame>,
    /// Integer center `(x, y)` of every frame.
    pub centers: Vec<(usize, usize)>,
}

/// A bump of the given width moves right by one pixel per frame. After the
/// last column it restarts at `x = 0` on a uniformly drawn row. The bump is
/// truncated at the frame edges.
pub fn moving_gaussian(frames: usize, size: usize, width: f64, seed: u64) -> Result<MovingGaussian> {
    if !(width > 0.0) {
        return Err(Error::InvalidInput("gaussian width must be positive".into()));
    }
    if size == 0 {
        return Err(Error::InvalidInput("frame size must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut y = rng.gen_range(0..size);
    let mut x = 0usize;
    let mut out = MovingGaussian { frames: Vec::with_capacity(frames), centers: Vec::with_capacity(frames) };
    for _ in 0..frames {
        out.frames.push(gaussian_bump(size, width, x as f64, y as f64));
        out.centers.push((x, y));
        x += 1;
        if x >= size {
            x = 0;
            y = rng.gen_range(0..size);
        }
    }
    Ok(out)
}

/// Windows cut from one still image along a random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWalk {
    pub frames: Vec<ImageFrame>,
    /// Top-left corner of every window.
    pub positions: Vec<(usize, usize)>,
}

const DIRECTIONS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Consecutive windows differ by a shift of 1 or 2 pixels in one of the eight
/// compass directions. Moves that would leave the image are never drawn.
pub fn shifting_window(
    image: &ImageFrame,
    window: (usize, usize),
    frames: usize,
    seed: u64,
) -> Result<WindowWalk> {
    let (ww, wh) = window;
    if ww == 0 || wh == 0 || ww > image.width() || wh > image.height() {
        return Err(Error::InvalidInput(format!(
            "window {ww}x{wh} does not fit in {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let mut out = WindowWalk { frames: Vec::with_capacity(frames), positions: Vec::with_capacity(frames) };
    if frames == 0 {
        return Ok(out);
    }
    let (max_x, max_y) = ((image.width() - ww) as i64, (image.height() - wh) as i64);
    if frames > 1 && max_x == 0 && max_y == 0 {
        return Err(Error::InvalidInput("window leaves no room to shift".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut px = rng.gen_range(0..=max_x);
    let mut py = rng.gen_range(0..=max_y);
    let mut moves = Vec::with_capacity(16);
    for t in 0..frames {
        if t > 0 {
            moves.clear();
            for step in 1..=2i64 {
                for &(dx, dy) in &DIRECTIONS {
                    let (nx, ny) = (px + dx * step, py + dy * step);
                    if (0..=max_x).contains(&nx) && (0..=max_y).contains(&ny) {
                        moves.push((nx, ny));
                    }
                }
            }
            let &(nx, ny) = moves
                .choose(&mut rng)
                .ok_or_else(|| Error::InvalidInput("window leaves no room to shift".into()))?;
            px = nx;
            py = ny;
        }
        out.frames.push(image.window(px as usize, py as usize, ww, wh)?);
        out.positions.push((px as usize, py as usize));
    }
    Ok(out)
}

/// A zero-mean step edge.
///
/// The edge line is perpendicular to the direction `orientation mod pi` and
/// passes `position` pixels from the patch center along that direction.
/// Orientations in `[pi, 2 pi)` give the same line with opposite polarity.
/// The step follows a logistic profile with scale `softness` pixels.
pub fn edge_stimulus(orientation: f64, position: f64, width: usize, height: usize, softness: f64) -> ImageFrame {
    let theta = orientation.rem_euclid(2.0 * PI);
    let (line, polarity) = if theta >= PI { (theta - PI, -1.0) } else { (theta, 1.0) };
    let (nx, ny) = (line.cos(), line.sin());
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let s = softness.max(1e-9);
    let f = ImageFrame::from_fn(width, height, |x, y| {
        let u = (x as f64 - cx) * nx + (y as f64 - cy) * ny - position;
        polarity * 0.5 * (u / (2.0 * s)).tanh()
    });
    let m = f.mean();
    f.map(|v| v - m)
}

/// Bilinear rotation about the frame center by `angle` radians
/// (counter-clockwise in `x`-right, `y`-down pixel coordinates seen as a
/// standard mathematical frame). Samples falling outside are zero.
pub fn rotate_bilinear(frame: &ImageFrame, angle: f64) -> ImageFrame {
    let (w, h) = (frame.width(), frame.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (c, s) = (angle.cos(), angle.sin());
    ImageFrame::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        // inverse rotation
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        sample_bilinear(frame, sx, sy)
    })
}

fn sample_bilinear(frame: &ImageFrame, x: f64, y: f64) -> f64 {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
        return 0.0;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let x1 = (x0 + 1).min(frame.width() - 1);
    let y1 = (y0 + 1).min(frame.height() - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = frame.get(x0, y0) * (1.0 - fx) + frame.get(x1, y0) * fx;
    let bot = frame.get(x0, y1) * (1.0 - fx) + frame.get(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Exact rotation by 90 degrees on the pixel grid (same direction as [`rotate_bilinear`]).
pub fn rotate90(frame: &ImageFrame) -> ImageFrame {
    let (w, h) = (frame.width(), frame.height());
    // dest (x, y) samples src at the inverse rotation: (y, w-1-x) for square frames
    ImageFrame::from_fn(h, w, |x, y| frame.get(y, h - 1 - x))
}

/// A "dead leaves" still image: opaque discs and rectangles with random gray
/// levels stacked on top of each other, radii drawn from a `r^-3` law.
/// Shape borders are anti-aliased over about one pixel. Radii span
/// `2..min(width, height) / 4` pixels.
pub fn dead_leaves(width: usize, height: usize, shapes: usize, seed: u64) -> ImageFrame {
    let rmax = (width.min(height) as f64 / 4.0).max(3.0);
    dead_leaves_with_radii(width, height, shapes, (2.0, rmax), seed)
}

/// [`dead_leaves`] with an explicit radius range `(rmin, rmax)`.
pub fn dead_leaves_with_radii(width: usize, height: usize, shapes: usize, radii: (f64, f64), seed: u64) -> ImageFrame {
    let mut rng = rng_from_seed(seed);
    let mut img = ImageFrame::filled(width, height, rng.gen_range(0.0..1.0));
    let (rmin, rmax) = (radii.0.max(0.5), radii.1.max(radii.0.max(0.5) + 0.5));
    for _ in 0..shapes {
        // inverse-CDF sample of p(r) ~ r^-3 on [rmin, rmax]
        let u: f64 = rng.gen_range(0.0..1.0);
        let inv = 1.0 / (rmin * rmin) - u * (1.0 / (rmin * rmin) - 1.0 / (rmax * rmax));
        let r = inv.powf(-0.5);
        let cx = rng.gen_range(-r..width as f64 + r);
        let cy = rng.gen_range(-r..height as f64 + r);
        let gray = rng.gen_range(0.0..1.0);
        let rect = rng.gen_bool(0.5);
        let angle = rng.gen_range(0.0..PI);
        let aspect = rng.gen_range(0.3..1.0);
        let (ca, sa) = (angle.cos(), angle.sin());
        let x0 = (cx - r - 2.0).floor().max(0.0) as usize;
        let x1 = ((cx + r + 2.0).ceil().max(0.0) as usize).min(width);
        let y0 = (cy - r - 2.0).floor().max(0.0) as usize;
        let y1 = ((cy + r + 2.0).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // signed distance, positive inside
                let inside = if rect {
                    let u = ca * dx + sa * dy;
                    let v = -sa * dx + ca * dy;
                    (r - u.abs()).min(r * aspect - v.abs())
                } else {
                    r - (dx * dx + dy * dy).sqrt()
                };
                let cover = (inside + 0.5).clamp(0.0, 1.0);
                if cover > 0.0 {
                    let old = img.get(x, y);
                    img.set(x, y, old + cover * (gray - old));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_gaussian_defaults() {
        let mg = moving_gaussian(25, 10, 1.5, 7).unwrap();
        assert_eq!(mg.frames.len(), 25);
        for (f, &(x, y)) in mg.frames.iter().zip(&mg.centers) {
            assert_eq!((f.width(), f.height()), (10, 10));
            assert_eq!(f.get(x, y), 1.0);
            assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // the bump restarts at x = 0 after crossing the frame
        assert_eq!(mg.centers[9].0, 9);
        assert_eq!(mg.centers[10].0, 0);
    }

    #[test]
    fn consecutive_frames_are_translations() {
        let mg = moving_gaussian(9, 10, 1.5, 3).unwrap();
        for t in 0..8 {
            let (a, b) = (&mg.frames[t], &mg.frames[t + 1]);
            for y in 0..10 {
                for x in 1..10 {
                    assert!((b.get(x, y) - a.get(x - 1, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn moving_gaussian_is_deterministic() {
        assert_eq!(moving_gaussian(40, 10, 1.5, 11).unwrap(), moving_gaussian(40, 10, 1.5, 11).unwrap());
        assert!(moving_gaussian(5, 10, 0.0, 1).is_err());
    }

    #[test]
    fn window_walk_steps_are_one_or_two() {
        let img = dead_leaves(60, 50, 200, 1);
        let walk = shifting_window(&img, (20, 20), 300, 5).unwrap();
        for p in walk.positions.windows(2) {
            let dx = (p[1].0 as i64 - p[0].0 as i64).abs();
            let dy = (p[1].1 as i64 - p[0].1 as i64).abs();
            let cheb = dx.max(dy);
            assert!(cheb == 1 || cheb == 2);
            // moves are along one of the eight compass directions
            assert!(dx == 0 || dy == 0 || dx == dy);
        }
        for (f, &(x, y)) in walk.frames.iter().zip(&walk.positions) {
            assert_eq!(f, &img.window(x, y, 20, 20).unwrap());
        }
    }

    #[test]
    fn window_walk_edge_cases() {
        let img = dead_leaves(30, 30, 50, 2);
        assert!(shifting_window(&img, (20, 20), 0, 1).unwrap().frames.is_empty());
        assert!(shifting_window(&img, (31, 20), 3, 1).is_err());
        let a = shifting_window(&img, (20, 20), 30, 1).unwrap();
        let b = shifting_window(&img, (20, 20), 30, 1).unwrap();
        let c = shifting_window(&img, (20, 20), 30, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn edge_polarity_flip() {
        let a = edge_stimulus(0.3, 2.0, 16, 16, 1.0);
        let b = edge_stimulus(0.3 + PI, 2.0, 16, 16, 1.0);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x + y).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_edge_is_antisymmetric() {
        let e = edge_stimulus(0.0, 0.0, 15, 15, 1.0);
        assert!(e.mean().abs() < 1e-12);
        for y in 0..15 {
            for x in 0..15 {
                assert!((e.get(x, y) + e.get(14 - x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotating_an_edge_matches_generating_it_rotated() {
        let (n, r) = (31usize, 12.0);
        let base = edge_stimulus(0.2, 1.5, n, n, 1.0);
        let dtheta = 0.5;
        let rotated = rotate_bilinear(&base, dtheta);
        let direct = edge_stimulus(0.2 + dtheta, 1.5, n, n, 1.0);
        // compare inside a disc, each side re-centered over the disc
        let c = (n as f64 - 1.0) / 2.0;
        let inside: Vec<(usize, usize)> = (0..n)
            .flat_map(|y| (0..n).map(move |x| (x, y)))
            .filter(|&(x, y)| ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= r)
            .collect();
        let mean = |f: &ImageFrame| inside.iter().map(|&(x, y)| f.get(x, y)).sum::<f64>() / inside.len() as f64;
        let (ma, mb) = (mean(&rotated), mean(&direct));
        let rms = (inside
            .iter()
            .map(|&(x, y)| ((rotated.get(x, y) - ma) - (direct.get(x, y) - mb)).powi(2))
            .sum::<f64>()
            / inside.len() as f64)
            .sqrt();
        assert!(rms < 1e-2, "rms {rms}");
    }

    #[test]
    fn rotate90_matches_bilinear() {
        let e = edge_stimulus(0.4, 1.0, 9, 9, 1.0);
        let a = rotate90(&e);
        let b = rotate_bilinear(&e, PI / 2.0);
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn dead_leaves_is_deterministic_and_bounded() {
        let a = dead_leaves(40, 40, 100, 3);
        assert_eq!(a, dead_leaves(40, 40, 100, 3));
        assert_ne!(a, dead_leaves(40, 40, 100, 4));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.std() > 0.05);
    }
}
