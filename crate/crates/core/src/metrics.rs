//! Strict pixel-wise F-measure for edge maps and PSNR/SSIM for denoising.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// Default binarization threshold for probability maps.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub threshold: f64,
}

impl EdgeScore {
    /// Rates from confusion counts; empty denominators give a rate of 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, threshold: f64) -> Self {
        let rate = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = rate(tp, tp + fp);
        let recall = rate(tp, tp + fn_);
        let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        EdgeScore { precision, recall, f, tp, fp, fn_, threshold }
    }
}

/// Binarizes `y` at `y >= threshold` and scores it against `labels` with no
/// neighbourhood tolerance.
pub fn strict_f_measure(y: &GrayImage, labels: &BinaryMask, threshold: f64) -> Result<EdgeScore> {
    if y.dims() != labels.dims() {
        return Err(Error::dim("strict F-measure", y.dims(), labels.dims()));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&v, &l) in y.data().iter().zip(labels.data()) {
        match (v >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(EdgeScore::from_counts(tp, fp, fn_, threshold))
}

/// Scores every threshold and returns `(best, table)`. The best entry has
/// the highest F; ties go to the lowest threshold.
pub fn f_sweep(y: &GrayImage, labels: &BinaryMask, thresholds: &[f64]) -> Result<(EdgeScore, Vec<EdgeScore>)> {
    if thresholds.is_empty() {
        return Err(Error::Contract("threshold sweep needs at least one threshold".into()));
    }
    let table = thresholds.iter().map(|&t| strict_f_measure(y, labels, t)).collect::<Result<Vec<_>>>()?;
    let mut best = table[0];
    for s in &table[1..] {
        if s.f > best.f || (s.f == best.f && s.threshold < best.threshold) {
            best = *s;
        }
    }
    Ok((best, table))
}

/// `count` evenly spaced thresholds in `(0, 1)`: `1/(count+1), .., count/(count+1)`.
pub fn uniform_thresholds(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / (count + 1) as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    /// Decibels; `+inf` when the images are identical.
    pub db: f64,
    pub saturated: bool,
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim("mse", a.dims(), b.dims()));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

/// `10·log10(peak² / MSE)`.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(Error::Contract(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Psnr { db: f64::INFINITY, saturated: true });
    }
    Ok(Psnr { db: 10.0 * (peak * peak / m).log10(), saturated: false })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filtering keeping only fully covered positions.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11×11 Gaussian windows (σ = 1.5)
/// lying fully inside the image, for unit dynamic range.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim("ssim", a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Geometry(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let k = ssim_kernel();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (da, db) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let mu_a = filter_valid(da, h, w, &k);
    let mu_b = filter_valid(db, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub psnr: Psnr,
    pub ssim: f64,
}

pub fn quality(output: &GrayImage, clean: &GrayImage, peak: f64) -> Result<QualityScore> {
    Ok(QualityScore { psnr: psnr(output, clean, peak)?, ssim: ssim(output, clean)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        GrayImage::from_vec(h, w, data).unwrap()
    }

    #[test]
    fn f_identical_and_half() {
        let l = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 3 == 0);
        let s = strict_f_measure(&l.to_image(), &l, 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f), (1.0, 1.0, 1.0));
        let half = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        let s = strict_f_measure(&GrayImage::filled(4, 4, 1.0), &half, 0.5).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f_empty_cases() {
        let empty = BinaryMask::new(3, 3);
        let s = strict_f_measure(&GrayImage::new(3, 3), &empty, 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f), (0.0, 0.0, 0.0));
        assert!(matches!(strict_f_measure(&GrayImage::new(3, 4), &empty, 0.5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sweep_single_and_ties() {
        let y = img(8, 8, 1);
        let l = BinaryMask::threshold(&img(8, 8, 2), 0.7);
        let (best, table) = f_sweep(&y, &l, &[0.3]).unwrap();
        assert_eq!(best, strict_f_measure(&y, &l, 0.3).unwrap());
        assert_eq!(table.len(), 1);
        let exact = l.to_image();
        let (best, table) = f_sweep(&exact, &l, &[0.9, 0.2, 0.5, 1.0]).unwrap();
        assert!(table.iter().all(|s| s.f == 1.0));
        assert_eq!(best.threshold, 0.2);
        assert!(f_sweep(&exact, &l, &[]).is_err());
    }

    #[test]
    fn psnr_cases() {
        let a = img(8, 8, 3);
        let p = psnr(&a, &a, 1.0).unwrap();
        assert!(p.saturated && p.db.is_infinite());
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap().db - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 1.0 / 255.0);
        assert!((psnr(&a, &c, 1.0).unwrap().db - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((psnr(&a, &c, 1.0).unwrap().db - 48.13).abs() < 0.01);
    }

    #[test]
    fn ssim_cases() {
        let a = img(16, 20, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let b = img(16, 20, 5);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let c = ssim(&GrayImage::filled(12, 12, 0.3), &GrayImage::filled(12, 12, 0.5)).unwrap();
        assert!((c - (0.3 + 1e-4) / (0.34 + 1e-4)).abs() < 1e-9);
        let board = GrayImage::from_fn(16, 16, |y, x| ((y + x) % 2) as f64);
        assert!(ssim(&board, &board.map(|v| 1.0 - v)).unwrap() < 0.0);
        assert!(matches!(ssim(&GrayImage::new(10, 12), &GrayImage::new(10, 12)), Err(Error::Geometry(_))));
    }
}
