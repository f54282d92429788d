//! Declarative 39-layer U-Net and its forward pass.
//!
//! Encoder: three levels of (conv3×3, ReLU) ×2 followed by 2×2 max pooling,
//! then a bottleneck. Decoder: three levels of bilinear ×2 upsampling,
//! concatenation with the matching encoder activation, and (conv3×3, ReLU) ×2.
//! A 1×1 convolution and a sigmoid produce the single-channel map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Channel width of the full-size network.
pub const FULL_BASE_WIDTH: usize = 64;
/// Number of 2× downsamplings; inputs must be divisible by `2^POOL_LEVELS`.
pub const POOL_LEVELS: usize = 3;
pub const SPATIAL_MULTIPLE: usize = 1 << POOL_LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    /// Bilinear upsampling by a factor of two.
    Upsample,
    Concat,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based position in the network.
    pub index: usize,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub kernel: Option<(usize, usize)>,
    pub stride: usize,
    pub pad: usize,
    /// For concatenation: the earlier layer whose output is appended after
    /// the previous layer's output.
    pub concat_with: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 4],
}

/// Fixed affine map `(x - shift) * scale` applied to the input before the
/// first convolution. Not trained; stored with the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: f64,
    pub scale: f64,
}

impl InputNorm {
    pub const IDENTITY: InputNorm = InputNorm { shift: 0.0, scale: 1.0 };
    /// Faint-edge inputs: background level 0 and unit noise deviation.
    pub const EDGES: InputNorm = InputNorm { shift: 0.45, scale: 10.0 };
    /// Natural images: roughly zero mean and unit deviation.
    pub const DENOISE: InputNorm = InputNorm { shift: 0.5, scale: 4.0 };
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm::IDENTITY
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub base_width: usize,
    pub input_norm: InputNorm,
    pub layers: Vec<LayerSpec>,
    pub registry: Vec<ParamEntry>,
}

impl UNetSpec {
    pub fn new(in_channels: usize, base_width: usize) -> Result<Self> {
        if in_channels == 0 || base_width == 0 {
            return Err(Error::Contract(format!(
                "in_channels ({in_channels}) and base_width ({base_width}) must be at least 1"
            )));
        }
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(39);
        let mut push = |kind, out_channels, kernel, stride, pad, concat_with| {
            let index = layers.len() + 1;
            layers.push(LayerSpec { index, kind, out_channels, kernel, stride, pad, concat_with });
            index
        };
        let width = |level: usize| base_width << level;

        let mut skips = Vec::new();
        for level in 0..=POOL_LEVELS {
            let c = width(level);
            push(LayerKind::Conv, c, Some((3, 3)), 1, 1, None);
            push(LayerKind::Relu, c, None, 1, 0, None);
            push(LayerKind::Conv, c, Some((3, 3)), 1, 1, None);
            let skip = push(LayerKind::Relu, c, None, 1, 0, None);
            if level < POOL_LEVELS {
                skips.push((skip, c));
                push(LayerKind::MaxPool, c, Some((2, 2)), 2, 0, None);
            }
        }
        let mut channels = width(POOL_LEVELS);
        for level in (0..POOL_LEVELS).rev() {
            let (skip, skip_c) = skips[level];
            push(LayerKind::Upsample, channels, None, 1, 0, None);
            push(LayerKind::Concat, channels + skip_c, None, 1, 0, Some(skip));
            channels = width(level);
            push(LayerKind::Conv, channels, Some((3, 3)), 1, 1, None);
            push(LayerKind::Relu, channels, None, 1, 0, None);
            push(LayerKind::Conv, channels, Some((3, 3)), 1, 1, None);
            push(LayerKind::Relu, channels, None, 1, 0, None);
        }
        push(LayerKind::Conv, 1, Some((1, 1)), 1, 0, None);
        push(LayerKind::Sigmoid, 1, None, 1, 0, None);

        let mut registry = Vec::new();
        let mut in_c = in_channels;
        for layer in &layers {
            if let (LayerKind::Conv, Some((kh, kw))) = (layer.kind, layer.kernel) {
                registry.push(ParamEntry {
                    name: format!("conv{:02}.weight", layer.index),
                    shape: [layer.out_channels, in_c, kh, kw],
                });
                registry.push(ParamEntry {
                    name: format!("conv{:02}.bias", layer.index),
                    shape: [layer.out_channels, 1, 1, 1],
                });
            }
            in_c = layer.out_channels;
        }
        Ok(UNetSpec { in_channels, base_width, input_norm: InputNorm::IDENTITY, layers, registry })
    }

    pub fn with_input_norm(mut self, input_norm: InputNorm) -> Self {
        self.input_norm = input_norm;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.registry.iter().map(|e| e.shape.iter().product::<usize>()).sum()
    }

    /// Checks that an input shape can pass through the network.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c() != self.in_channels {
            return Err(Error::dim(
                "unet input channels",
                shape,
                format!("{} channels expected", self.in_channels),
            ));
        }
        if shape.h() == 0
            || shape.w() == 0
            || !shape.h().is_multiple_of(SPATIAL_MULTIPLE)
            || !shape.w().is_multiple_of(SPATIAL_MULTIPLE)
        {
            return Err(Error::Geometry(format!(
                "input height and width must be positive multiples of {SPATIAL_MULTIPLE} (divisible by 8), got {}x{}",
                shape.h(),
                shape.w()
            )));
        }
        Ok(())
    }
}

/// Runs the network on `input` with parameters already recorded on `graph`
/// (in registry order).
pub fn forward_graph<T: Scalar>(spec: &UNetSpec, graph: &mut Graph<T>, input: Var, params: &[Var]) -> Result<Var> {
    spec.check_input(graph.shape(input))?;
    if params.len() != spec.registry.len() {
        return Err(Error::Contract(format!(
            "expected {} parameter tensors, got {}",
            spec.registry.len(),
            params.len()
        )));
    }
    let mut outputs: Vec<Var> = Vec::with_capacity(spec.layers.len());
    let mut params = params.iter().copied();
    let mut current = input;
    let norm = spec.input_norm;
    if norm != InputNorm::IDENTITY {
        let shifted = graph.add_scalar(current, T::from_f64_lossy(-norm.shift));
        current = graph.scale(shifted, T::from_f64_lossy(norm.scale));
    }
    for layer in &spec.layers {
        current = match layer.kind {
            LayerKind::Conv => {
                let (w, b) = (params.next().expect("weight"), params.next().expect("bias"));
                graph.conv2d(current, w, b, layer.stride, layer.pad)?
            }
            LayerKind::Relu => graph.relu(current),
            LayerKind::MaxPool => graph.maxpool2(current)?,
            LayerKind::Upsample => graph.upsample2(current),
            LayerKind::Concat => {
                let src = layer.concat_with.expect("concat source");
                graph.concat_channels(current, outputs[src - 1])?
            }
            LayerKind::Sigmoid => graph.sigmoid(current),
        };
        outputs.push(current);
    }
    Ok(current)
}

/// A U-Net with concrete parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: UNetSpec,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn build(spec: UNetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .registry
            .iter()
            .map(|entry| {
                let [o, i, kh, kw] = entry.shape;
                if entry.name.ends_with(".bias") {
                    return Tensor::zeros(entry.shape);
                }
                let bound = (6.0 / (i * kh * kw) as f64).sqrt();
                let data = (0..o * i * kh * kw)
                    .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                    .collect();
                Tensor::from_vec(entry.shape, data).expect("registry shape")
            })
            .collect();
        Model { spec, params }
    }

    pub fn from_params(spec: UNetSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        if params.len() != spec.registry.len() {
            return Err(Error::Compatibility(format!(
                "expected {} parameter tensors, got {}",
                spec.registry.len(),
                params.len()
            )));
        }
        for (entry, p) in spec.registry.iter().zip(&params) {
            if p.shape().0 != entry.shape {
                return Err(Error::Compatibility(format!(
                    "{}: expected shape {:?}, got {:?}",
                    entry.name,
                    Shape(entry.shape),
                    p.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Records the parameters on `graph`, trainable or constant.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { graph.param(p.clone()) } else { graph.constant(p.clone()) })
            .collect()
    }

    /// Inference: `input` is `batch × in_channels × H × W`, output `batch × 1 × H × W`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.spec.check_input(input.shape())?;
        let mut graph = Graph::new();
        let params = self.bind(&mut graph, false);
        let x = graph.constant(input.clone());
        let y = forward_graph(&self.spec, &mut graph, x, &params)?;
        Ok(graph.value(y).clone())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_table_rows() {
        let spec = UNetSpec::new(1, FULL_BASE_WIDTH).unwrap();
        assert_eq!(spec.layers.len(), 39);
        let channels: Vec<usize> = spec.layers.iter().map(|l| l.out_channels).collect();
        assert_eq!(
            channels,
            vec![
                64, 64, 64, 64, 64, 128, 128, 128, 128, 128, 256, 256, 256, 256, 256, 512, 512, 512,
                512, 512, 768, 256, 256, 256, 256, 256, 384, 128, 128, 128, 128, 128, 192, 64, 64,
                64, 64, 1, 1
            ]
        );
        let concats: Vec<(usize, usize)> = spec
            .layers
            .iter()
            .filter_map(|l| l.concat_with.map(|s| (l.index - 1, s)))
            .collect();
        assert_eq!(concats, vec![(20, 14), (26, 9), (32, 4)]);
        let convs: Vec<usize> = spec
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .map(|l| l.index)
            .collect();
        assert_eq!(convs, vec![1, 3, 6, 8, 11, 13, 16, 18, 22, 24, 28, 30, 34, 36, 38]);
        assert_eq!(spec.registry.len(), 30);
        assert_eq!(spec.layers[37].kernel, Some((1, 1)));
        assert_eq!(spec.layers[37].pad, 0);
        let pools = spec.layers.iter().filter(|l| l.kind == LayerKind::MaxPool).count();
        let ups = spec.layers.iter().filter(|l| l.kind == LayerKind::Upsample).count();
        assert_eq!((pools, ups), (3, 3));
    }

    #[test]
    fn width_scaling() {
        let spec = UNetSpec::new(1, 4).unwrap();
        assert_eq!(spec.layers[0].out_channels, 4);
        assert_eq!(spec.layers[15].out_channels, 32);
        assert_eq!(spec.registry[0].shape, [4, 1, 3, 3]);
        assert_eq!(spec.registry[16].shape, [16, 48, 3, 3]);
        assert!(UNetSpec::new(0, 4).is_err());
        assert!(UNetSpec::new(1, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = UNetSpec::new(1, 4).unwrap();
        let a = Model::<f32>::build(spec.clone(), 9);
        let b = Model::<f32>::build(spec.clone(), 9);
        let c = Model::<f32>::build(spec, 10);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        }));
        assert_ne!(a, c);
    }

    #[test]
    fn forward_shape_and_range() {
        let model = Model::<f32>::build(UNetSpec::new(1, 4).unwrap(), 1);
        let x = Tensor::<f32>::full([1, 1, 64, 64], 0.5);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 64, 64));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_input_is_a_geometry_error() {
        let model = Model::<f32>::build(UNetSpec::new(1, 4).unwrap(), 1);
        let err = model.forward(&Tensor::zeros([1, 1, 64, 63])).unwrap_err();
        assert!(matches!(err, Error::Geometry(ref m) if m.contains("divisible by 8")), "{err}");
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let mut model = Model::<f64>::build(UNetSpec::new(1, 4).unwrap(), 1);
        model.params_mut().iter_mut().for_each(|p| p.fill(0.0));
        let y = model.forward(&Tensor::full([1, 1, 16, 16], 0.3)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn input_norm_matches_normalizing_the_input() {
        let norm = InputNorm { shift: 0.45, scale: 10.0 };
        let plain = Model::<f64>::build(UNetSpec::new(1, 4).unwrap(), 3);
        let normed = Model::from_params(plain.spec().clone().with_input_norm(norm), plain.params().to_vec()).unwrap();
        let x = Tensor::from_vec([1, 1, 16, 16], (0..256).map(|i| (i % 17) as f64 / 16.0).collect()).unwrap();
        let x_normed = Tensor::from_vec([1, 1, 16, 16], x.data().iter().map(|v| (v - norm.shift) * norm.scale).collect()).unwrap();
        let (a, b) = (normed.forward(&x).unwrap(), plain.forward(&x_normed).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
