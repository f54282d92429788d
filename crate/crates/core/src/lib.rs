//! Faint-edge detection and edge-preserving denoising with a U-Net trained
//! from scratch on a small reverse-mode differentiation engine.

pub mod autodiff;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod filters;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod pnm;
pub mod report;
pub mod selfcheck;
pub mod sweep;
pub mod tensor;
pub mod trainer;
pub mod unet;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use losses::LossValue;
pub use image::{BinaryMask, GrayImage, RgbImage};
pub use tensor::{DType, Scalar, Shape, Tensor};
pub use unet::{InputNorm, Model, UNetSpec};
