//! Plain single-plane images used for data preparation and evaluation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Row-major single-channel image. Pixel values are nominally in `[0, 1]`;
/// filter responses (e.g. Sobel) reuse the type without that bound.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("GrayImage::from_vec", (height, width), data.len()));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        GrayImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |y, x| self.get(self.height - 1 - y, x))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<GrayImage> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Geometry(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(GrayImage::from_fn(height, width, |y, x| self.get(top + y, left + x)))
    }

    /// `1 × 1 × H × W` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("image shape")
    }

    /// Image `n` of a single-channel batch tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<GrayImage> {
        let [batch, c, h, w] = t.shape().0;
        if c != 1 || n >= batch {
            return Err(Error::dim("GrayImage::from_tensor", t.shape(), format!("single-channel item {n}")));
        }
        let data = t.data()[n * h * w..(n + 1) * h * w]
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        GrayImage::from_vec(h, w, data)
    }
}

/// Strictly binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMask { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x);
            }
        }
        m
    }

    /// Pixels `>= threshold` are set.
    pub fn threshold(img: &GrayImage, threshold: f64) -> Self {
        BinaryMask {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// Accepts only images whose pixels are exactly 0 or 1.
    pub fn from_binary_image(img: &GrayImage) -> Result<Self> {
        if !img.is_binary() {
            return Err(Error::Contract("image is not strictly binary".into()));
        }
        Ok(Self::threshold(img, 0.5))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |y, x| if self.get(y, x) { 1.0 } else { 0.0 })
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |y, x| self.get(self.height - 1 - y, x))
    }
}

/// Interleaved RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    /// `height * width * 3` values, RGB interleaved.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 3 {
            return Err(Error::dim("RgbImage", format!("{channels} channels"), "3 channels"));
        }
        if data.len() != height * width * 3 {
            return Err(Error::dim("RgbImage", (height, width, 3), data.len()));
        }
        Ok(RgbImage { height, width, data })
    }
}
