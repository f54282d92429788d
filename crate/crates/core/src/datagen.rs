//! Synthetic training data: binary line-art patterns, the faint-edge noise
//! model, augmentation, splits, and Gaussian-noise denoising pairs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{canny, CannyParams, TieBreak};
use crate::image::{BinaryMask, GrayImage, RgbImage};
use crate::pnm;

/// Background level of the noise model.
pub const NOISE_OFFSET: f64 = 0.45;
/// Gain applied to signal and noise.
pub const NOISE_GAIN: f64 = 0.1;
/// Signal-to-noise ratios used for training data.
pub const DEFAULT_SNRS: [f64; 6] = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
pub const DEFAULT_PURE_NOISE_FRACTION: f64 = 0.02;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;
pub const MIN_EVAL_PATTERN: usize = 64;

/// RNG domains; keep values stable, they are part of the data format.
pub mod domain {
    pub const PATTERN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const GRAY_IMAGE: u64 = 4;
    pub const DENOISE: u64 = 5;
    pub const EPOCH_NOISE: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const AUGMENT: u64 = 8;
    pub const INIT: u64 = 9;
    pub const SWEEP: u64 = 10;
    pub const SNR_SWEEP: u64 = 11;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, parts)`. Streams depend only on the
/// index path, never on generation order.
pub fn derive_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let stream = parts.iter().fold(0x5EED_u64, |h, &p| splitmix(h ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Luma `0.299 R + 0.587 G + 0.114 B`.
pub fn grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
    GrayImage::from_vec(rgb.height, rgb.width, data).expect("rgb buffer length")
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<bool>,
}

type Pt = (f64, f64);

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas { h, w, px: vec![false; h * w] }
    }

    fn stamp(&mut self, (cx, cy): Pt, r: f64) {
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().min(self.h as f64 - 1.0));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().min(self.w as f64 - 1.0));
        if y1 < 0.0 || x1 < 0.0 {
            return;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.px[y * self.w + x] = true;
                }
            }
        }
    }

    fn path(&mut self, points: &[Pt], r: f64) {
        for pair in points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let steps = (len / 0.25).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                self.stamp((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)), r);
            }
        }
    }

    /// Even-odd fill sampled at pixel centres.
    fn polygon(&mut self, v: &[Pt]) {
        for y in 0..self.h {
            let py = y as f64;
            for x in 0..self.w {
                let px = x as f64;
                let mut inside = false;
                let mut j = v.len() - 1;
                for i in 0..v.len() {
                    let ((xi, yi), (xj, yj)) = (v[i], v[j]);
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                if inside {
                    self.px[y * self.w + x] = true;
                }
            }
        }
    }

    fn ellipse(&mut self, c: Pt, a: f64, b: f64, theta: f64) {
        let (s, co) = theta.sin_cos();
        for y in 0..self.h {
            for x in 0..self.w {
                let (dx, dy) = (x as f64 - c.0, y as f64 - c.1);
                let (u, v) = (dx * co + dy * s, -dx * s + dy * co);
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    self.px[y * self.w + x] = true;
                }
            }
        }
    }

    fn ellipse_outline(&mut self, c: Pt, a: f64, b: f64, theta: f64, r: f64) {
        let (s, co) = theta.sin_cos();
        let n = ((a + b) * 8.0).ceil().max(16.0) as usize;
        let pts: Vec<Pt> = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                let (u, v) = (a * t.cos(), b * t.sin());
                (c.0 + u * co - v * s, c.1 + u * s + v * co)
            })
            .collect();
        self.path(&pts, r);
    }

    fn bezier(&mut self, ctrl: &[Pt], r: f64) {
        let hull: f64 = ctrl.windows(2).map(|p| ((p[1].0 - p[0].0).powi(2) + (p[1].1 - p[0].1).powi(2)).sqrt()).sum();
        let n = (hull * 2.0).ceil().max(8.0) as usize;
        let pts: Vec<Pt> = (0..=n).map(|i| de_casteljau(ctrl, i as f64 / n as f64)).collect();
        self.path(&pts, r);
    }

    fn into_image(self) -> GrayImage {
        let data = self.px.iter().map(|&b| b as u8 as f64).collect();
        GrayImage::from_vec(self.h, self.w, data).expect("canvas size")
    }
}

fn de_casteljau(ctrl: &[Pt], t: f64) -> Pt {
    let mut p = ctrl.to_vec();
    while p.len() > 1 {
        for i in 0..p.len() - 1 {
            p[i] = (p[i].0 + t * (p[i + 1].0 - p[i].0), p[i].1 + t * (p[i + 1].1 - p[i].1));
        }
        p.pop();
    }
    p[0]
}

fn foreground_fraction(img: &GrayImage) -> f64 {
    img.data().iter().filter(|&&v| v > 0.5).count() as f64 / img.data().len() as f64
}

/// Fixed evaluation pattern: a filled triangle, straight segments at several
/// angles, an S-shaped cubic curve and three concentric circles.
pub fn render_eval_pattern(height: usize, width: usize) -> Result<GrayImage> {
    if height < MIN_EVAL_PATTERN || width < MIN_EVAL_PATTERN {
        return Err(Error::Geometry(format!(
            "evaluation pattern needs at least {MIN_EVAL_PATTERN}x{MIN_EVAL_PATTERN}, got {height}x{width}"
        )));
    }
    let (fw, fh) = (width as f64, height as f64);
    let p = |x: f64, y: f64| (x * fw, y * fh);
    let r = (height.min(width) as f64 / 128.0).max(1.0);
    let mut c = Canvas::new(height, width);
    c.polygon(&[p(0.10, 0.40), p(0.26, 0.10), p(0.42, 0.40)]);
    c.path(&[p(0.55, 0.08), p(0.92, 0.18)], r);
    c.path(&[p(0.55, 0.30), p(0.92, 0.30)], r);
    c.path(&[p(0.58, 0.45), p(0.80, 0.22)], r);
    c.path(&[p(0.50, 0.05), p(0.50, 0.42)], r);
    c.bezier(&[p(0.38, 0.56), p(0.00, 0.52), p(0.48, 0.98), p(0.08, 0.93)], r);
    let centre = p(0.72, 0.72);
    let s = height.min(width) as f64;
    for k in 1..=3 {
        c.ellipse_outline(centre, 0.065 * k as f64 * s, 0.065 * k as f64 * s, 0.0, r);
    }
    Ok(c.into_image())
}

fn random_point<R: Rng>(rng: &mut R, h: usize, w: usize) -> Pt {
    (rng.gen_range(2.0..w as f64 - 2.0), rng.gen_range(2.0..h as f64 - 2.0))
}

fn draw_random_primitive<R: Rng>(c: &mut Canvas, rng: &mut R) {
    let (h, w) = (c.h, c.w);
    let s = h.min(w) as f64;
    let r = if rng.gen_bool(0.7) { (s / 128.0).max(1.0) } else { (s / 64.0).max(1.5) };
    match rng.gen_range(0..5) {
        0 => {
            let centre = random_point(rng, h, w);
            let n = rng.gen_range(3..=6);
            let radius = rng.gen_range(0.08..0.25) * s;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let pts: Vec<Pt> = (0..n)
                .map(|i| {
                    let a = phase + i as f64 / n as f64 * std::f64::consts::TAU + rng.gen_range(-0.3..0.3);
                    let d = radius * rng.gen_range(0.6..1.0);
                    (centre.0 + d * a.cos(), centre.1 + d * a.sin())
                })
                .collect();
            if rng.gen_bool(0.6) {
                c.polygon(&pts);
            } else {
                let mut closed = pts.clone();
                closed.push(pts[0]);
                c.path(&closed, r);
            }
        }
        1 => {
            let centre = random_point(rng, h, w);
            let (a, b) = (rng.gen_range(0.05..0.25) * s, rng.gen_range(0.05..0.25) * s);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            if rng.gen_bool(0.5) {
                c.ellipse(centre, a, b, theta);
            } else {
                c.ellipse_outline(centre, a, b, theta, r);
            }
        }
        2 => {
            let n = rng.gen_range(2..=4);
            let pts: Vec<Pt> = (0..=n).map(|_| random_point(rng, h, w)).collect();
            c.path(&pts, r);
        }
        k => {
            let n = if k == 3 { 3 } else { 4 };
            let pts: Vec<Pt> = (0..n).map(|_| random_point(rng, h, w)).collect();
            c.bezier(&pts, r);
        }
    }
}

/// Accepted foreground fraction range of generated patterns.
pub const FRACTION_RANGE: (f64, f64) = (0.005, 0.5);

/// One procedurally generated pattern of 2 to 6 primitives.
pub fn generate_binary_image(height: usize, width: usize, seed: u64, index: u64) -> GrayImage {
    let mut rng = derive_rng(seed, &[domain::PATTERN, index]);
    let mut last = None;
    for _ in 0..64 {
        let mut c = Canvas::new(height, width);
        for _ in 0..rng.gen_range(2..=6) {
            draw_random_primitive(&mut c, &mut rng);
        }
        let img = c.into_image();
        let f = foreground_fraction(&img);
        if f > FRACTION_RANGE.0 && f < FRACTION_RANGE.1 {
            return img;
        }
        last = Some(img);
    }
    last.expect("at least one attempt")
}

pub fn generate_binary_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<GrayImage> {
    (0..count as u64).map(|i| generate_binary_image(height, width, seed, i)).collect()
}

/// Canny edges of a clean pattern with default thresholds and smoothing,
/// step ties kept on the dark side, restricted to
/// pixels within one pixel (8-neighbourhood) of a value transition. The
/// restriction only removes responses that smoothing pushes off the true
/// contour where structures crowd together.
pub fn extract_labels(binary: &GrayImage) -> Result<BinaryMask> {
    let edges = canny(binary, CannyParams { tie: TieBreak::Darker, ..CannyParams::default() })?;
    let (h, w) = binary.dims();
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        if !edges.get(y, x) {
            return false;
        }
        let v = binary.get(y, x);
        (y.saturating_sub(1)..=(y + 1).min(h - 1))
            .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| binary.get(yy, xx) != v))
    }))
}

/// Standard-normal field of `len` values.
pub fn normal_field<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `clip(0.1·(snr·clean + noise) + 0.45)` with an explicit noise field.
pub fn noise_model_with(clean: &GrayImage, snr: f64, noise: &[f64]) -> GrayImage {
    assert_eq!(clean.data().len(), noise.len(), "noise field size");
    let data = clean
        .data()
        .iter()
        .zip(noise)
        .map(|(&c, &n)| (NOISE_GAIN * (snr * c + n) + NOISE_OFFSET).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_vec(clean.height(), clean.width(), data).expect("same size")
}

/// Faint-edge noise model with a noise field drawn from `seed`.
pub fn apply_noise_model(clean: &GrayImage, snr: f64, seed: u64) -> Result<GrayImage> {
    apply_noise_model_rng(clean, snr, &mut derive_rng(seed, &[domain::NOISE]))
}

pub fn apply_noise_model_rng<R: Rng>(clean: &GrayImage, snr: f64, rng: &mut R) -> Result<GrayImage> {
    if !(snr >= 0.0) {
        return Err(Error::Contract(format!("snr must be >= 0, got {snr}")));
    }
    Ok(noise_model_with(clean, snr, &normal_field(rng, clean.data().len())))
}

/// `clip(clean + n/255)` with `n ~ N(0, sigma²)`, sigma on the 0..255 scale.
pub fn add_gaussian_noise<R: Rng>(clean: &GrayImage, sigma: f64, rng: &mut R) -> Result<GrayImage> {
    if !(sigma >= 0.0) {
        return Err(Error::Contract(format!("sigma must be >= 0, got {sigma}")));
    }
    let field = normal_field(rng, clean.data().len());
    let data = clean.data().iter().zip(field).map(|(&c, n)| (c + sigma / 255.0 * n).clamp(0.0, 1.0)).collect();
    GrayImage::from_vec(clean.height(), clean.width(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Edges,
    Denoise,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Edges => "edges",
            Task::Denoise => "denoise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Identity,
    Hflip,
    PureNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    /// Source image index; `None` for pure-noise samples.
    pub base: Option<usize>,
    pub variant: Variant,
    /// SNR (edges) or sigma on the 0..255 scale (denoise).
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub task: Task,
    pub seed: u64,
    /// `[height, width]` of generated patterns; `None` for mixed sizes.
    pub size: Option<[usize; 2]>,
    pub base_count: usize,
    pub levels: Vec<f64>,
    pub hflip: bool,
    pub vflip_online: bool,
    pub pure_noise_fraction: f64,
    /// `[train, test]`.
    pub split: [f64; 2],
    pub samples: Vec<SampleRecord>,
}

/// Supervision target of a sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Edges(BinaryMask),
    Clean(GrayImage),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub record: SampleRecord,
    /// Noise-free source (binary pattern or clean photo), already flipped.
    pub clean: GrayImage,
    pub target: Target,
    /// Noisy network input.
    pub input: GrayImage,
}

impl Sample {
    pub fn edges(&self) -> Option<&BinaryMask> {
        match &self.target {
            Target::Edges(m) => Some(m),
            Target::Clean(_) => None,
        }
    }

    /// Fresh noisy input under this sample's noise model.
    pub fn renoise<R: Rng>(&self, task: Task, clean: &GrayImage, rng: &mut R) -> Result<GrayImage> {
        match task {
            Task::Edges => apply_noise_model_rng(clean, self.record.level, rng),
            Task::Denoise => add_gaussian_noise(clean, self.record.level, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.record.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDatasetConfig {
    pub base_count: usize,
    pub height: usize,
    pub width: usize,
    pub snrs: Vec<f64>,
    pub hflip: bool,
    pub vflip_online: bool,
    pub pure_noise_fraction: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for EdgeDatasetConfig {
    fn default() -> Self {
        EdgeDatasetConfig {
            base_count: 100,
            height: 256,
            width: 256,
            snrs: DEFAULT_SNRS.to_vec(),
            hflip: true,
            vflip_online: true,
            pure_noise_fraction: DEFAULT_PURE_NOISE_FRACTION,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
        }
    }
}

/// Splits `count` base images; at least one lands on each side.
fn split_bases(count: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if count < 2 {
        return Err(Error::Contract(format!("need at least 2 base images to split, got {count}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n_train = ((count as f64 * train_fraction).floor() as usize).clamp(1, count - 1);
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = derive_rng(seed, &[domain::SPLIT]);
    for i in (1..count).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut splits = vec![Split::Test; count];
    for &b in &order[..n_train] {
        splits[b] = Split::Train;
    }
    Ok(splits)
}

fn level_tag(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

/// Builds the faint-edge dataset: `{identity, hflip} × snrs` per base
/// pattern plus pure-noise samples with empty labels. Splits are drawn per
/// base pattern; pure-noise samples are training-only.
pub fn build_edge_dataset(cfg: &EdgeDatasetConfig) -> Result<Dataset> {
    if cfg.snrs.is_empty() {
        return Err(Error::Contract("snr list is empty".into()));
    }
    if !(0.0..1.0).contains(&cfg.pure_noise_fraction) {
        return Err(Error::Contract(format!("pure-noise fraction must lie in [0, 1), got {}", cfg.pure_noise_fraction)));
    }
    let splits = split_bases(cfg.base_count, cfg.train_fraction, cfg.seed)?;
    let variants: &[Variant] = if cfg.hflip { &[Variant::Identity, Variant::Hflip] } else { &[Variant::Identity] };
    let mut samples = Vec::new();
    for base in 0..cfg.base_count {
        let pattern = generate_binary_image(cfg.height, cfg.width, cfg.seed, base as u64);
        let labels = extract_labels(&pattern)?;
        for &variant in variants {
            let (clean, edges) = match variant {
                Variant::Hflip => (pattern.flip_horizontal(), labels.flip_horizontal()),
                _ => (pattern.clone(), labels.clone()),
            };
            for (li, &snr) in cfg.snrs.iter().enumerate() {
                let index = samples.len() as u64;
                let input = apply_noise_model_rng(&clean, snr, &mut derive_rng(cfg.seed, &[domain::NOISE, index]))?;
                let v = if variant == Variant::Hflip { "h" } else { "i" };
                samples.push(Sample {
                    record: SampleRecord {
                        id: format!("b{base:05}{v}{li}_snr{}", level_tag(snr)),
                        split: splits[base],
                        base: Some(base),
                        variant,
                        level: snr,
                    },
                    clean: clean.clone(),
                    target: Target::Edges(edges.clone()),
                    input,
                });
            }
        }
    }
    let extra = (cfg.pure_noise_fraction * samples.len() as f64).ceil() as usize;
    let blank = GrayImage::new(cfg.height, cfg.width);
    for k in 0..extra {
        let index = samples.len() as u64;
        let input = apply_noise_model_rng(&blank, 0.0, &mut derive_rng(cfg.seed, &[domain::NOISE, index]))?;
        samples.push(Sample {
            record: SampleRecord {
                id: format!("noise{k:05}"),
                split: Split::Train,
                base: None,
                variant: Variant::PureNoise,
                level: 0.0,
            },
            clean: blank.clone(),
            target: Target::Edges(BinaryMask::new(cfg.height, cfg.width)),
            input,
        });
    }
    let manifest = DatasetManifest {
        format: 1,
        task: Task::Edges,
        seed: cfg.seed,
        size: Some([cfg.height, cfg.width]),
        base_count: cfg.base_count,
        levels: cfg.snrs.clone(),
        hflip: cfg.hflip,
        vflip_online: cfg.vflip_online,
        pure_noise_fraction: cfg.pure_noise_fraction,
        split: [cfg.train_fraction, 1.0 - cfg.train_fraction],
        samples: samples.iter().map(|s| s.record.clone()).collect(),
    };
    Ok(Dataset { manifest, samples })
}

impl EdgeDatasetConfig {
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        let [height, width] = m
            .size
            .ok_or_else(|| Error::Format("edge dataset manifest lacks a pattern size".into()))?;
        Ok(EdgeDatasetConfig {
            base_count: m.base_count,
            height,
            width,
            snrs: m.levels.clone(),
            hflip: m.hflip,
            vflip_online: m.vflip_online,
            pure_noise_fraction: m.pure_noise_fraction,
            train_fraction: m.split[0],
            seed: m.seed,
        })
    }
}

/// Noisy/clean pairs at one noise level. Each image gets its own stream.
pub fn build_denoise_pairs(images: &[GrayImage], sigma: f64, seed: u64) -> Result<Vec<Sample>> {
    images
        .iter()
        .enumerate()
        .map(|(i, clean)| {
            if !clean.is_unit_range() {
                return Err(Error::Contract(format!("image {i} has pixels outside [0, 1]")));
            }
            let mut rng = derive_rng(seed, &[domain::DENOISE, i as u64, sigma.to_bits()]);
            let input = add_gaussian_noise(clean, sigma, &mut rng)?;
            Ok(Sample {
                record: SampleRecord {
                    id: format!("img{i:05}_sigma{}", level_tag(sigma)),
                    split: Split::Train,
                    base: Some(i),
                    variant: Variant::Identity,
                    level: sigma,
                },
                clean: clean.clone(),
                target: Target::Clean(clean.clone()),
                input,
            })
        })
        .collect()
}

/// Denoising dataset over several sigmas, split per source image.
pub fn build_denoise_dataset(images: &[GrayImage], sigmas: &[f64], train_fraction: f64, seed: u64) -> Result<Dataset> {
    if sigmas.is_empty() {
        return Err(Error::Contract("sigma list is empty".into()));
    }
    let splits = split_bases(images.len(), train_fraction, seed)?;
    let mut samples = Vec::new();
    for &sigma in sigmas {
        for mut s in build_denoise_pairs(images, sigma, seed)? {
            s.record.split = splits[s.record.base.expect("denoise samples have a base")];
            samples.push(s);
        }
    }
    let dims: Vec<_> = images.iter().map(|i| i.dims()).collect();
    let size = dims.windows(2).all(|p| p[0] == p[1]).then(|| [dims[0].0, dims[0].1]);
    let manifest = DatasetManifest {
        format: 1,
        task: Task::Denoise,
        seed,
        size,
        base_count: images.len(),
        levels: sigmas.to_vec(),
        hflip: false,
        vflip_online: true,
        pure_noise_fraction: 0.0,
        split: [train_fraction, 1.0 - train_fraction],
        samples: samples.iter().map(|s| s.record.clone()).collect(),
    };
    Ok(Dataset { manifest, samples })
}

/// Smooth-shaded grayscale scenes with piecewise-constant objects, used as
/// clean images when no photographs are supplied.
pub fn synthetic_gray_image(height: usize, width: usize, seed: u64, index: u64) -> GrayImage {
    let mut rng = derive_rng(seed, &[domain::GRAY_IMAGE, index]);
    let (a, b, c0) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(0.3..0.7));
    let (fx, fy, amp) = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(0.0..0.08));
    let mut img = GrayImage::from_fn(height, width, |y, x| {
        let (u, v) = (x as f64 / width as f64 - 0.5, y as f64 / height as f64 - 0.5);
        let wave = amp * (std::f64::consts::TAU * (fx * u + fy * v)).sin();
        (c0 + a * u + b * v + wave).clamp(0.0, 1.0)
    });
    for _ in 0..rng.gen_range(3..=7) {
        let mut c = Canvas::new(height, width);
        draw_random_primitive(&mut c, &mut rng);
        let level: f64 = rng.gen_range(0.0..1.0);
        for (p, &on) in img.data_mut().iter_mut().zip(&c.px) {
            if on {
                *p = level;
            }
        }
    }
    img
}

pub fn synthetic_gray_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<GrayImage> {
    (0..count as u64).map(|i| synthetic_gray_image(height, width, seed, i)).collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<root>/{train,test}/<id>_{in,label}.pgm` and `manifest.json`.
pub fn write_dataset(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for split in [Split::Train, Split::Test] {
        let dir = root.join(split.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in &ds.samples {
        let dir = root.join(s.record.split.dir());
        pnm::write_pgm(&s.input, dir.join(format!("{}_in.pgm", s.record.id)))?;
        let label = match &s.target {
            Target::Edges(m) => m.to_image(),
            Target::Clean(c) => c.clone(),
        };
        pnm::write_pgm(&label, dir.join(format!("{}_label.pgm", s.record.id)))?;
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&ds.manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads a dataset directory. Edge datasets are regenerated from the
/// manifest (the clean patterns are not stored) and checked against its
/// sample list; denoising datasets are read from their PGM pairs.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    match manifest.task {
        Task::Edges => {
            let ds = build_edge_dataset(&EdgeDatasetConfig::from_manifest(&manifest)?)?;
            if ds.manifest != manifest {
                return Err(Error::Format(format!(
                    "{}: manifest does not match the dataset its settings generate",
                    root.join(MANIFEST_FILE).display()
                )));
            }
            Ok(ds)
        }
        Task::Denoise => {
            let samples = manifest
                .samples
                .iter()
                .map(|r| {
                    let dir = root.join(r.split.dir());
                    let input = pnm::read_gray(dir.join(format!("{}_in.pgm", r.id)))?;
                    let clean = pnm::read_gray(dir.join(format!("{}_label.pgm", r.id)))?;
                    Ok(Sample { record: r.clone(), clean: clean.clone(), target: Target::Clean(clean), input })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset { manifest, samples })
        }
    }
}
