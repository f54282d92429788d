//! Fixed image operators: Sobel gradients, Gaussian smoothing and Canny.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// Horizontal-derivative Sobel kernel (correlation form). The vertical
/// kernel is its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

pub fn sobel_y_kernel() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for (r, row) in SOBEL_X.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            k[c][r] = v;
        }
    }
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Border {
    Zero,
    Replicate,
}

fn correlate3(img: &GrayImage, k: &[[f64; 3]; 3], border: Border) -> GrayImage {
    let (h, w) = img.dims();
    GrayImage::from_fn(h, w, |y, x| {
        let mut acc = 0.0;
        for (dy, row) in k.iter().enumerate() {
            for (dx, &kv) in row.iter().enumerate() {
                let (sy, sx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                let v = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    img.get(sy as usize, sx as usize)
                } else {
                    match border {
                        Border::Zero => continue,
                        Border::Replicate => {
                            img.get(sy.clamp(0, h as isize - 1) as usize, sx.clamp(0, w as isize - 1) as usize)
                        }
                    }
                };
                acc += kv * v;
            }
        }
        acc
    })
}

fn check_sobel_size(img: &GrayImage) -> Result<()> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::Geometry(format!(
            "sobel needs at least 3x3, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Zero-padded Sobel responses `(gx, gy)`, same size as the input.
pub fn sobel(img: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    check_sobel_size(img)?;
    Ok((correlate3(img, &SOBEL_X, Border::Zero), correlate3(img, &sobel_y_kernel(), Border::Zero)))
}

/// Normalized 1-D Gaussian taps, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with symmetric reflection at the borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dims();
    if h == 0 || w == 0 {
        return Ok(img.clone());
    }
    let rows = GrayImage::from_fn(h, w, |y, x| {
        k.iter()
            .enumerate()
            .map(|(t, &kv)| kv * img.get(y, reflect(x as isize + t as isize - r, w)))
            .sum()
    });
    Ok(GrayImage::from_fn(h, w, |y, x| {
        k.iter()
            .enumerate()
            .map(|(t, &kv)| kv * rows.get(reflect(y as isize + t as isize - r, h), x))
            .sum()
    }))
}

/// How non-maximum suppression treats two equally strong pixels across an
/// edge (the two sides of a sharp step).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Keep the pixel closer to the image centre. Independent of intensity
    /// polarity.
    #[default]
    Centre,
    /// Keep the darker pixel of the smoothed image, falling back to the
    /// centre rule when both are equally bright. Local, so the chosen side
    /// of a step does not depend on where the step lies in the image.
    Darker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
    #[serde(default)]
    pub tie: TieBreak,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams { low: 0.1, high: 0.2, sigma: 1.0, tie: TieBreak::Centre }
    }
}

/// Gradient magnitude the Canny pipeline thresholds: blur, then Sobel with
/// replicated borders so that the frame of the image is not an edge.
pub fn canny_magnitude(img: &GrayImage, sigma: f64) -> Result<(GrayImage, GrayImage, GrayImage)> {
    check_sobel_size(img)?;
    let smooth = gaussian_blur(img, sigma)?;
    Ok(smoothed_gradients(&smooth))
}

fn smoothed_gradients(smooth: &GrayImage) -> (GrayImage, GrayImage, GrayImage) {
    let gx = correlate3(smooth, &SOBEL_X, Border::Replicate);
    let gy = correlate3(smooth, &sobel_y_kernel(), Border::Replicate);
    let mag = GrayImage::from_vec(
        smooth.height(),
        smooth.width(),
        gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect(),
    )
    .expect("same size");
    (mag, gx, gy)
}

/// Canny edge detector: Gaussian blur, Sobel, 4-direction non-maximum
/// suppression, 8-connected hysteresis.
pub fn canny(img: &GrayImage, params: CannyParams) -> Result<BinaryMask> {
    let CannyParams { low, high, sigma, tie } = params;
    if !(0.0 <= low && low <= high) {
        return Err(Error::Contract(format!("canny needs 0 <= low <= high, got low={low}, high={high}")));
    }
    check_sobel_size(img)?;
    let smooth = gaussian_blur(img, sigma)?;
    let (mag, gx, gy) = smoothed_gradients(&smooth);
    let thin = non_maximum_suppression(&mag, &gx, &gy, &smooth, tie);
    Ok(hysteresis(&thin, low, high))
}

/// Neighbour offsets `(dy, dx)` across the edge for a gradient direction
/// quantized to 0°, 45°, 90° or 135°.
fn across_edge(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Magnitudes closer than this (relative) are treated as equal.
const TIE_TOLERANCE: f64 = 1e-9;

/// Keeps pixels that are maxima across the edge. A step edge produces two
/// equally strong pixels; `tie` picks one of them, which keeps lines one
/// pixel wide without making the result depend on flips. Pixels the rule
/// cannot separate are both kept. Out-of-image neighbours count as zero.
fn non_maximum_suppression(mag: &GrayImage, gx: &GrayImage, gy: &GrayImage, smooth: &GrayImage, tie: TieBreak) -> GrayImage {
    let (h, w) = mag.dims();
    let at = |y: isize, x: isize| -> f64 {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            mag.get(y as usize, x as usize)
        } else {
            0.0
        }
    };
    // Twice the squared distance to the centre, kept integral.
    let centre_dist = |y: isize, x: isize| -> isize {
        let (dy, dx) = (2 * y - (h as isize - 1), 2 * x - (w as isize - 1));
        dy * dy + dx * dx
    };
    GrayImage::from_fn(h, w, |y, x| {
        let m = mag.get(y, x);
        if m == 0.0 {
            return 0.0;
        }
        let (dy, dx) = across_edge(gx.get(y, x), gy.get(y, x));
        let (yi, xi) = (y as isize, x as isize);
        let here = centre_dist(yi, xi);
        let survives = [(yi + dy, xi + dx), (yi - dy, xi - dx)].into_iter().all(|(ny, nx)| {
            let other = at(ny, nx);
            let tol = TIE_TOLERANCE * m.max(other);
            if (m - other).abs() <= tol {
                if tie == TieBreak::Darker {
                    let (a, b) = (smooth.get(y, x), smooth.get(ny as usize, nx as usize));
                    if (a - b).abs() > TIE_TOLERANCE * a.abs().max(b.abs()) {
                        return a < b;
                    }
                }
                here <= centre_dist(ny, nx)
            } else {
                m > other
            }
        });
        if survives {
            m
        } else {
            0.0
        }
    })
}

fn hysteresis(thin: &GrayImage, low: f64, high: f64) -> BinaryMask {
    let (h, w) = thin.dims();
    let mut out = BinaryMask::new(h, w);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let v = thin.get(y, x);
            if v > 0.0 && v >= high {
                out.set(y, x, true);
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                let v = thin.get(ny, nx);
                if !out.get(ny, nx) && v > 0.0 && v >= low {
                    out.set(ny, nx, true);
                    queue.push_back((ny, nx));
                }
            }
        }
    }
    out
}
