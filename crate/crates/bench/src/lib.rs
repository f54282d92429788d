//! Shared inputs for the benchmarks.

use faintline::datagen::{apply_noise_model, render_eval_pattern, synthetic_gray_image};
use faintline::{GrayImage, Model, Tensor, UNetSpec};

/// Deterministic `[1, channels, side, side]` activations in `[0, 1)`.
pub fn activations(channels: usize, side: usize) -> Tensor<f32> {
    let planes: Vec<f32> = (0..channels as u64)
        .flat_map(|c| synthetic_gray_image(side, side, 1, c).data().iter().map(|&v| v as f32).collect::<Vec<_>>())
        .collect();
    Tensor::from_vec([1, channels, side, side], planes).expect("shape")
}

/// Untrained network of the given width with fixed weights.
pub fn model(base_width: usize) -> Model<f32> {
    Model::build(UNetSpec::new(1, base_width).expect("width"), 0)
}

/// The evaluation pattern under the faint-edge noise model at SNR 1.
pub fn noisy_pattern(side: usize) -> GrayImage {
    let clean = render_eval_pattern(side, side).expect("pattern size");
    apply_noise_model(&clean, 1.0, 0).expect("noise")
}
