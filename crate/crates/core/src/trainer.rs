//! Deterministic mini-batch training and evaluation for both tasks.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::checkpoint::{self, save_checkpoint};
use crate::datagen::{derive_rng, domain, Dataset, Sample, Split, Target, Task};
use crate::error::{Error, Result};
use crate::filters::{canny, CannyParams};
use crate::image::{BinaryMask, GrayImage};
use crate::losses::{combined_denoise_loss, dice_loss, LossValue};
use crate::metrics::{psnr, ssim, strict_f_measure, DEFAULT_THRESHOLD};
use crate::report::fmt6;
use crate::tensor::{DType, Scalar, Tensor};
use crate::unet::{forward_graph, InputNorm, Model, UNetSpec, SPATIAL_MULTIPLE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::SgdMomentum { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::SgdMomentum { lr, .. } => lr,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

/// Moment buffers mirroring the parameter list. `second` is empty for SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub t: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[Tensor<T>], cfg: &OptimizerConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        let second = match cfg {
            OptimizerConfig::Adam { .. } => zeros(),
            OptimizerConfig::SgdMomentum { .. } => Vec::new(),
        };
        OptimizerState { t: 0, first: zeros(), second }
    }
}

fn check_aligned<T: Scalar>(params: &[Tensor<T>], grads: &[Tensor<T>], buffers: &[&[Tensor<T>]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("optimizer (tensor count)", params.len(), grads.len()));
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].shape() != p.shape() {
            return Err(Error::dim("optimizer (gradient shape)", p.shape(), grads[i].shape()));
        }
        for b in buffers {
            if b.get(i).map(|t| t.shape()) != Some(p.shape()) {
                return Err(Error::dim("optimizer (state shape)", p.shape(), b.get(i).map(|t| t.shape())));
            }
        }
    }
    Ok(())
}

/// Bias-corrected Adam, in place.
pub fn step_adam<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_aligned(params, grads, &[&state.first, &state.second])?;
    state.t += 1;
    let t = state.t as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2, lr_t, eps_t) = (c(beta1), c(beta2), c(lr), c(eps));
    let (one_b1, one_b2) = (c(1.0 - beta1), c(1.0 - beta2));
    let (bc1, bc2) = (c(1.0 - beta1.powi(t)), c(1.0 - beta2.powi(t)));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.first[i].data_mut(), state.second[i].data_mut());
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
        }
    }
    Ok(())
}

/// Heavy-ball SGD: `v ← μ v + g`, `w ← w − lr v`.
pub fn step_sgd<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_aligned(params, grads, &[&state.first])?;
    state.t += 1;
    let (mu, lr_t) = (T::from_f64_lossy(momentum), T::from_f64_lossy(lr));
    for (i, p) in params.iter_mut().enumerate() {
        for ((w, &g), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(state.first[i].data_mut()) {
            *v = mu * *v + g;
            *w -= lr_t * *v;
        }
    }
    Ok(())
}

pub fn apply_step<T: Scalar>(
    cfg: &OptimizerConfig,
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    match *cfg {
        OptimizerConfig::Adam { lr, beta1, beta2, eps } => step_adam(params, grads, state, lr, beta1, beta2, eps),
        OptimizerConfig::SgdMomentum { lr, momentum } => step_sgd(params, grads, state, lr, momentum),
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let x = v.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Weight of the edge-preservation term (denoising only).
    pub lambda_edge: f64,
    pub seed: u64,
    pub base_width: usize,
    pub input_norm: InputNorm,
    /// Evaluate every this many epochs (and after the last); 0 disables.
    pub eval_every: usize,
    pub eval_split: Split,
    pub eval: EvalOptions,
    /// Final checkpoint path; the best-scoring one goes next to it.
    pub checkpoint: Option<PathBuf>,
    /// Random square crop side; `None` trains on full images.
    pub crop: Option<usize>,
    pub clip_grad_norm: Option<f64>,
    /// Draw fresh noise for every sample each epoch instead of reusing the
    /// stored noisy input.
    pub resample_noise: bool,
    /// Online vertical flips with probability 1/2.
    pub vflip: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    pub fn edges() -> Self {
        TrainConfig {
            task: Task::Edges,
            epochs: 100,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            lambda_edge: 0.0,
            seed: 0,
            base_width: crate::unet::FULL_BASE_WIDTH,
            input_norm: InputNorm::EDGES,
            eval_every: 1,
            eval_split: Split::Test,
            eval: EvalOptions::default(),
            checkpoint: None,
            crop: Some(128),
            clip_grad_norm: Some(10.0),
            resample_noise: true,
            vflip: true,
            max_steps: None,
        }
    }

    /// Denoiser; `lambda_edge = 0` trains on L2 alone.
    pub fn denoise(lambda_edge: f64) -> Self {
        TrainConfig { task: Task::Denoise, epochs: 200, lambda_edge, input_norm: InputNorm::DENOISE, ..TrainConfig::edges() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if let Some(c) = self.crop {
            if c == 0 || c % SPATIAL_MULTIPLE != 0 {
                return fail(format!("crop size must be a positive multiple of {SPATIAL_MULTIPLE}, got {c}"));
            }
        }
        if !(self.lambda_edge >= 0.0) {
            return fail(format!("lambda_edge must be >= 0, got {}", self.lambda_edge));
        }
        if !(self.optimizer.lr() >= 0.0) {
            return fail(format!("learning rate must be >= 0, got {}", self.optimizer.lr()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return fail(format!("threshold must lie in [0, 1], got {}", self.eval.threshold));
        }
        if self.base_width == 0 {
            return fail("base width must be positive".into());
        }
        let norm = self.input_norm;
        if !(norm.shift.is_finite() && norm.scale.is_finite() && norm.scale != 0.0) {
            return fail(format!("input normalization needs a finite shift and a finite nonzero scale, got {norm:?}"));
        }
        Ok(())
    }
}

/// `m.nel` → `m.best.nel`.
pub fn best_checkpoint_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    path.with_file_name(name)
}

/// `m.nel` → `m.nel.state`.
pub fn state_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".state");
    PathBuf::from(s)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub loss_l2: Option<f64>,
    pub loss_edge: Option<f64>,
    pub eval_metric: Option<f64>,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "epoch,step,loss,loss_l2,loss_edge,eval_metric,wall_ms";

impl LogRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            fmt6(self.loss),
            opt(self.loss_l2),
            opt(self.loss_edge),
            opt(self.eval_metric),
            fmt6(self.wall_ms)
        )
    }

    /// The row without its timing column, for reproducibility checks.
    pub fn timeless(&self) -> LogRow {
        LogRow { wall_ms: 0.0, ..self.clone() }
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<T> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub best_metric: Option<f64>,
    pub log: Vec<LogRow>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    kind: String,
    version: u32,
    in_channels: usize,
    base_width: usize,
    dtype: DType,
    #[serde(default)]
    input_norm: InputNorm,
    optimizer: String,
    t: u64,
    epoch: usize,
    step: u64,
    best_metric: Option<f64>,
    log: Vec<LogRow>,
}

const STATE_KIND: &str = "trainer-state";

impl<T: Scalar> TrainerState<T> {
    pub fn fresh(model: Model<T>, optimizer: &OptimizerConfig) -> Self {
        let opt = OptimizerState::new(model.params(), optimizer);
        TrainerState { model, optimizer: opt, epoch: 0, step: 0, best_metric: None, log: Vec::new() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = self.model.spec();
        let meta = StateMeta {
            kind: STATE_KIND.into(),
            version: checkpoint::FORMAT_VERSION,
            in_channels: spec.in_channels,
            base_width: spec.base_width,
            dtype: T::DTYPE,
            input_norm: spec.input_norm,
            optimizer: if self.optimizer.second.is_empty() { "sgd_momentum" } else { "adam" }.into(),
            t: self.optimizer.t,
            epoch: self.epoch,
            step: self.step,
            best_metric: self.best_metric,
            log: self.log.clone(),
        };
        let tensors: Vec<Tensor<T>> = self
            .model
            .params()
            .iter()
            .chain(&self.optimizer.first)
            .chain(&self.optimizer.second)
            .cloned()
            .collect();
        checkpoint::write_file(path.as_ref(), &checkpoint::encode(&meta, &tensors)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = checkpoint::read_file(path.as_ref())?;
        let (meta, section) = checkpoint::decode::<StateMeta>(&bytes)?;
        if meta.kind != STATE_KIND || meta.version != checkpoint::FORMAT_VERSION {
            return Err(Error::Format(format!("{}: not a trainer state file", path.as_ref().display())));
        }
        if meta.dtype != T::DTYPE {
            return Err(Error::Compatibility(format!("state dtype {} does not match {}", meta.dtype, T::DTYPE)));
        }
        let spec = UNetSpec::new(meta.in_channels, meta.base_width)?.with_input_norm(meta.input_norm);
        let shapes: Vec<[usize; 4]> = spec.registry.iter().map(|e| e.shape).collect();
        let copies = if meta.optimizer == "adam" { 3 } else { 2 };
        let all: Vec<[usize; 4]> = (0..copies).flat_map(|_| shapes.iter().copied()).collect();
        let mut tensors = checkpoint::read_tensors::<T>(section, &all)?;
        let n = shapes.len();
        let second = if copies == 3 { tensors.split_off(2 * n) } else { Vec::new() };
        let first = tensors.split_off(n);
        Ok(TrainerState {
            model: Model::from_params(spec, tensors)?,
            optimizer: OptimizerState { t: meta.t, first, second },
            epoch: meta.epoch,
            step: meta.step,
            best_metric: meta.best_metric,
            log: meta.log,
        })
    }
}

/// Applies the training-time flip and crop to an image.
fn transform(img: &GrayImage, vflip: bool, crop: Option<(usize, usize, usize)>) -> Result<GrayImage> {
    let img = if vflip { img.flip_vertical() } else { img.clone() };
    match crop {
        Some((top, left, side)) => img.crop(top, left, side, side),
        None => Ok(img),
    }
}

/// One augmented training example: `(input, target)` as single-item tensors.
fn prepare<T: Scalar>(cfg: &TrainConfig, sample: &Sample, index: usize, epoch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut rng = derive_rng(cfg.seed, &[domain::AUGMENT, epoch as u64, index as u64]);
    let vflip = cfg.vflip && rng.gen_bool(0.5);
    let (h, w) = sample.clean.dims();
    let crop = match cfg.crop {
        Some(side) if side < h || side < w => {
            if side > h || side > w {
                return Err(Error::Geometry(format!(
                    "crop {side} exceeds sample {} of size {h}x{w}",
                    sample.record.id
                )));
            }
            Some((rng.gen_range(0..=h - side), rng.gen_range(0..=w - side), side))
        }
        _ => None,
    };
    let clean = transform(&sample.clean, vflip, crop)?;
    let input = if cfg.resample_noise {
        let mut noise_rng = derive_rng(cfg.seed, &[domain::EPOCH_NOISE, epoch as u64, index as u64]);
        sample.renoise(cfg.task, &clean, &mut noise_rng)?
    } else {
        transform(&sample.input, vflip, crop)?
    };
    let target = match &sample.target {
        Target::Edges(m) => transform(&m.to_image(), vflip, crop)?,
        Target::Clean(_) => clean,
    };
    Ok((input.to_tensor(), target.to_tensor()))
}

fn task_loss<T: Scalar>(cfg: &TrainConfig, g: &mut Graph<T>, y: crate::Var, target: crate::Var) -> Result<LossValue> {
    match cfg.task {
        Task::Edges => dice_loss(g, y, target),
        Task::Denoise => combined_denoise_loss(g, y, target, cfg.lambda_edge),
    }
}

fn breakdown_text(loss: &LossValue) -> String {
    let mut parts = vec![format!("loss={}", loss.value)];
    parts.extend(loss.breakdown.iter().map(|(n, v)| format!("{n}={v}")));
    parts.join(", ")
}

/// Result of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: LossValue,
    pub grad_norm: f64,
}

/// Forward, backward and one optimizer update on a prepared batch.
pub fn train_step<T: Scalar>(
    cfg: &TrainConfig,
    state: &mut TrainerState<T>,
    input: Tensor<T>,
    target: Tensor<T>,
    epoch: usize,
    batch: usize,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let params = state.model.bind(&mut g, true);
    let x = g.constant(input);
    let t = g.constant(target);
    let y = forward_graph(state.model.spec(), &mut g, x, &params)?;
    let loss = task_loss(cfg, &mut g, y, t)?;
    if !loss.value.is_finite() {
        return Err(Error::NonFinite { epoch, batch, breakdown: breakdown_text(&loss) });
    }
    g.backward(loss.var)?;
    let mut grads: Vec<Tensor<T>> = params
        .iter()
        .zip(state.model.params())
        .map(|(&v, p)| g.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(g);
    let grad_norm = match cfg.clip_grad_norm {
        Some(max) => clip_global_norm(&mut grads, max),
        None => f64::NAN,
    };
    apply_step(&cfg.optimizer, state.model.params_mut(), &grads, &mut state.optimizer)?;
    state.step += 1;
    Ok(StepResult { loss, grad_norm })
}

/// Shuffled training order for `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, indices: &[usize]) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = derive_rng(seed, &[domain::SHUFFLE, epoch as u64]);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

/// Runs epochs `state.epoch .. cfg.epochs`, evaluating, logging and writing
/// checkpoints as configured. `on_epoch` sees each new log row.
pub fn train_from<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset,
    mut state: TrainerState<T>,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainerState<T>> {
    cfg.validate()?;
    crate::ops::flush_subnormals();
    if data.manifest.task != cfg.task {
        return Err(Error::Contract(format!("dataset is for {}, config trains {}", data.manifest.task, cfg.task)));
    }
    let train_idx: Vec<usize> =
        data.samples.iter().enumerate().filter(|(_, s)| s.record.split == Split::Train).map(|(i, _)| i).collect();
    if train_idx.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    if cfg.eval_every > 0 && data.count(cfg.eval_split) == 0 {
        return Err(Error::Contract(format!("{} split is empty; cannot evaluate", cfg.eval_split.dir())));
    }
    while state.epoch < cfg.epochs {
        if cfg.max_steps.is_some_and(|m| state.step >= m) {
            break;
        }
        let epoch = state.epoch;
        let started = Instant::now();
        let order = epoch_order(cfg.seed, epoch, &train_idx);
        let (mut total, mut l2, mut edge, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                break;
            }
            let items = chunk
                .iter()
                .map(|&i| prepare::<T>(cfg, &data.samples[i], i, epoch))
                .collect::<Result<Vec<_>>>()?;
            let (inputs, targets): (Vec<_>, Vec<_>) = items.into_iter().unzip();
            let step = train_step(cfg, &mut state, Tensor::stack(&inputs)?, Tensor::stack(&targets)?, epoch, b)?;
            total += step.loss.value;
            l2 += step.loss.term("l2").unwrap_or(0.0);
            edge += step.loss.term("edge").unwrap_or(0.0);
            batches += 1;
        }
        state.epoch += 1;
        let last = state.epoch == cfg.epochs || cfg.max_steps.is_some_and(|m| state.step >= m);
        let eval_metric = if cfg.eval_every > 0 && (state.epoch.is_multiple_of(cfg.eval_every) || last) {
            Some(evaluate(&state.model, data, cfg.eval_split, &cfg.eval)?.headline())
        } else {
            None
        };
        if let (Some(m), Some(path)) = (eval_metric, &cfg.checkpoint) {
            if state.best_metric.is_none_or(|b| m > b) {
                save_checkpoint(&state.model, best_checkpoint_path(path))?;
            }
        }
        if let Some(m) = eval_metric {
            if state.best_metric.is_none_or(|b| m > b) {
                state.best_metric = Some(m);
            }
        }
        let n = batches.max(1) as f64;
        let denoise = cfg.task == Task::Denoise;
        let row = LogRow {
            epoch: state.epoch,
            step: state.step,
            loss: total / n,
            loss_l2: denoise.then_some(l2 / n),
            loss_edge: denoise.then_some(edge / n),
            eval_metric,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&row);
        state.log.push(row);
        if let Some(path) = &cfg.checkpoint {
            save_checkpoint(&state.model, path)?;
            state.save(state_path(path))?;
        }
    }
    Ok(state)
}

/// Weight-initialisation seed derived from a run seed.
pub fn init_seed(seed: u64) -> u64 {
    derive_rng(seed, &[domain::INIT]).gen()
}

/// Trains a fresh model initialised from `cfg.seed`.
pub fn train<T: Scalar>(cfg: &TrainConfig, data: &Dataset, on_epoch: impl FnMut(&LogRow)) -> Result<TrainerState<T>> {
    let spec = UNetSpec::new(1, cfg.base_width)?.with_input_norm(cfg.input_norm);
    let model = Model::build(spec, init_seed(cfg.seed));
    train_from(cfg, data, TrainerState::fresh(model, &cfg.optimizer), on_epoch)
}

/// Maps a noisy image to an edge-probability map or a denoised image.
pub trait Predictor {
    fn predict(&self, input: &GrayImage) -> Result<GrayImage>;
}

impl<T: Scalar> Predictor for Model<T> {
    fn predict(&self, input: &GrayImage) -> Result<GrayImage> {
        let out = self.forward(&input.to_tensor())?;
        GrayImage::from_tensor(&out, 0)
    }
}

/// Classical baseline: the Canny mask as a 0/1 image.
#[derive(Clone, Copy, Debug, Default)]
pub struct CannyPredictor(pub CannyParams);

impl Predictor for CannyPredictor {
    fn predict(&self, input: &GrayImage) -> Result<GrayImage> {
        Ok(canny(input, self.0)?.to_image())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Fresh noise draws per sample; 0 scores the stored noisy input.
    pub draws: usize,
    pub seed: u64,
    /// PSNR peak value.
    pub peak: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: DEFAULT_THRESHOLD, draws: 0, seed: 0, peak: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBucket {
    pub snr: f64,
    pub count: usize,
    pub f_mean: f64,
    pub f_std: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseBucket {
    pub sigma: f64,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub input_psnr: f64,
    pub input_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "buckets", rename_all = "lowercase")]
pub enum MetricsReport {
    Edges(Vec<EdgeBucket>),
    Denoise(Vec<DenoiseBucket>),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

impl MetricsReport {
    /// Model-selection score: mean F over SNR buckets, or mean SSIM over
    /// sigma buckets.
    pub fn headline(&self) -> f64 {
        match self {
            MetricsReport::Edges(b) => mean(&b.iter().map(|b| b.f_mean).collect::<Vec<_>>()),
            MetricsReport::Denoise(b) => mean(&b.iter().map(|b| b.ssim).collect::<Vec<_>>()),
        }
    }

    pub fn csv(&self) -> String {
        let mut s = String::new();
        match self {
            MetricsReport::Edges(rows) => {
                s.push_str("snr,count,f_mean,f_std,precision,recall\n");
                for r in rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        fmt6(r.snr),
                        r.count,
                        fmt6(r.f_mean),
                        fmt6(r.f_std),
                        fmt6(r.precision),
                        fmt6(r.recall)
                    ));
                }
            }
            MetricsReport::Denoise(rows) => {
                s.push_str("sigma,count,psnr,ssim,input_psnr,input_ssim\n");
                for r in rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        fmt6(r.sigma),
                        r.count,
                        fmt6(r.psnr),
                        fmt6(r.ssim),
                        fmt6(r.input_psnr),
                        fmt6(r.input_ssim)
                    ));
                }
            }
        }
        s
    }
}

fn group_levels<'a>(items: impl Iterator<Item = (usize, &'a Sample)>) -> Vec<(f64, Vec<(usize, &'a Sample)>)> {
    let mut groups: Vec<(f64, Vec<(usize, &Sample)>)> = Vec::new();
    for (i, s) in items {
        match groups.iter_mut().find(|(l, _)| *l == s.record.level) {
            Some((_, g)) => g.push((i, s)),
            None => groups.push((s.record.level, vec![(i, s)])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
}

/// Noisy inputs scored for sample `index`: the stored one, or `draws`
/// fresh draws.
fn eval_inputs(task: Task, index: usize, sample: &Sample, opts: &EvalOptions) -> Result<Vec<GrayImage>> {
    if opts.draws == 0 {
        return Ok(vec![sample.input.clone()]);
    }
    (0..opts.draws)
        .map(|d| {
            let mut rng = derive_rng(opts.seed, &[domain::SWEEP, index as u64, d as u64]);
            sample.renoise(task, &sample.clean, &mut rng)
        })
        .collect()
}

/// Scores `predictor` on one split. Edge samples with empty labels are
/// skipped (their F-measure is undefined).
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, data: &Dataset, split: Split, opts: &EvalOptions) -> Result<MetricsReport> {
    let task = data.manifest.task;
    let selected = data.samples.iter().enumerate().filter(|(_, s)| s.record.split == split);
    let selected: Vec<_> = match task {
        Task::Edges => selected.filter(|(_, s)| s.edges().is_some_and(|m| !m.is_empty())).collect(),
        Task::Denoise => selected.collect(),
    };
    if selected.is_empty() {
        return Err(Error::Contract(format!("no scorable samples in the {} split", split.dir())));
    }
    let groups = group_levels(selected.into_iter());
    match task {
        Task::Edges => {
            let mut rows = Vec::new();
            for (snr, members) in groups {
                let (mut f, mut p, mut r) = (Vec::new(), Vec::new(), Vec::new());
                for (i, s) in members {
                    let labels: &BinaryMask = s.edges().expect("edge sample");
                    for input in eval_inputs(task, i, s, opts)? {
                        let score = strict_f_measure(&predictor.predict(&input)?, labels, opts.threshold)?;
                        f.push(score.f);
                        p.push(score.precision);
                        r.push(score.recall);
                    }
                }
                rows.push(EdgeBucket { snr, count: f.len(), f_mean: mean(&f), f_std: std_dev(&f), precision: mean(&p), recall: mean(&r) });
            }
            Ok(MetricsReport::Edges(rows))
        }
        Task::Denoise => {
            let mut rows = Vec::new();
            for (sigma, members) in groups {
                let (mut ps, mut ss, mut ips, mut iss) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for (i, s) in members {
                    for input in eval_inputs(task, i, s, opts)? {
                        let out = predictor.predict(&input)?;
                        ps.push(psnr(&out, &s.clean, opts.peak)?.db);
                        ss.push(ssim(&out, &s.clean)?);
                        ips.push(psnr(&input, &s.clean, opts.peak)?.db);
                        iss.push(ssim(&input, &s.clean)?);
                    }
                }
                rows.push(DenoiseBucket {
                    sigma,
                    count: ps.len(),
                    psnr: mean(&ps),
                    ssim: mean(&ss),
                    input_psnr: mean(&ips),
                    input_ssim: mean(&iss),
                });
            }
            Ok(MetricsReport::Denoise(rows))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_denoise_dataset, build_edge_dataset, synthetic_gray_images, EdgeDatasetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64, shapes: &[[usize; 4]]) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shapes
            .iter()
            .map(|&s| Tensor::from_vec(s, (0..s.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn adam_hand_example() {
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = OptimizerState::new(&p, &OptimizerConfig::adam(0.1));
        step_adam(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((p[0].data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_zero_lr_moves_moments_only() {
        let mut p = random_params(1, &[[2, 3, 1, 1]]);
        let before = p.clone();
        let g = random_params(2, &[[2, 3, 1, 1]]);
        let mut st = OptimizerState::new(&p, &OptimizerConfig::adam(0.0));
        step_adam(&mut p, &g, &mut st, 0.0, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p, before);
        assert!(st.first[0].data().iter().all(|&m| m != 0.0));
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let shapes = [[3, 2, 2, 2], [1, 5, 1, 1]];
        let mut p = random_params(3, &shapes);
        let mut st = OptimizerState::new(&p, &OptimizerConfig::adam(0.01));
        let (mut rp, mut rm, mut rv): (Vec<f64>, Vec<f64>, Vec<f64>) =
            (p.iter().flat_map(|t| t.data().to_vec()).collect(), vec![0.0; 29], vec![0.0; 29]);
        for step in 1..=5 {
            let g = random_params(10 + step, &shapes);
            step_adam(&mut p, &g, &mut st, 0.01, 0.9, 0.999, 1e-8).unwrap();
            let flat: Vec<f64> = g.iter().flat_map(|t| t.data().to_vec()).collect();
            for k in 0..29 {
                rm[k] = 0.9 * rm[k] + 0.1 * flat[k];
                rv[k] = 0.999 * rv[k] + 0.001 * flat[k] * flat[k];
                let mh = rm[k] / (1.0 - 0.9f64.powi(step as i32));
                let vh = rv[k] / (1.0 - 0.999f64.powi(step as i32));
                rp[k] -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
        }
        let got: Vec<f64> = p.iter().flat_map(|t| t.data().to_vec()).collect();
        for (a, b) in got.iter().zip(&rp) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = OptimizerState::new(&p, &OptimizerConfig::adam(0.1));
        let mut last = 1.0f64;
        for _ in 0..10 {
            let g = vec![Tensor::scalar(2.0 * p[0].data()[0])];
            step_adam(&mut p, &g, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
            let w = p[0].data()[0].abs();
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn optimizer_shape_errors() {
        let mut p = vec![Tensor::<f64>::zeros([2, 1, 1, 1])];
        let mut st = OptimizerState::new(&p, &OptimizerConfig::adam(0.1));
        let bad = vec![Tensor::zeros([3, 1, 1, 1])];
        assert!(matches!(step_adam(&mut p, &bad, &mut st, 0.1, 0.9, 0.999, 1e-8), Err(Error::Dimension { .. })));
        let mut sgd = OptimizerState::new(&p, &OptimizerConfig::sgd_momentum(0.1, 0.9));
        assert!(matches!(step_sgd(&mut p, &bad, &mut sgd, 0.1, 0.9), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sgd_momentum_reference() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = OptimizerState::new(&p, &OptimizerConfig::sgd_momentum(0.1, 0.5));
        step_sgd(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1, 0.5).unwrap();
        step_sgd(&mut p, &[Tensor::scalar(1.0)], &mut st, 0.1, 0.5).unwrap();
        assert!((p[0].data()[0] - (1.0 - 0.1 - 0.15)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::<f64>::from_vec([1, 1, 1, 2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::edges().validate().is_ok());
        assert!(TrainConfig { crop: Some(60), ..TrainConfig::edges() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::edges() }.validate().is_err());
        assert!(TrainConfig { lambda_edge: -1.0, ..TrainConfig::denoise(1.0) }.validate().is_err());
    }

    #[test]
    fn paths() {
        assert_eq!(best_checkpoint_path(Path::new("out/m.nel")), PathBuf::from("out/m.best.nel"));
        assert_eq!(state_path(Path::new("out/m.nel")), PathBuf::from("out/m.nel.state"));
    }

    struct Oracle<'a>(&'a Dataset);

    impl Predictor for Oracle<'_> {
        fn predict(&self, input: &GrayImage) -> Result<GrayImage> {
            let s = self.0.samples.iter().find(|s| &s.input == input).expect("known input");
            Ok(s.edges().unwrap().to_image())
        }
    }

    struct Constant(f64);

    impl Predictor for Constant {
        fn predict(&self, input: &GrayImage) -> Result<GrayImage> {
            Ok(GrayImage::filled(input.height(), input.width(), self.0))
        }
    }

    fn small_edges() -> Dataset {
        let cfg = EdgeDatasetConfig { base_count: 4, height: 32, width: 32, snrs: vec![1.0, 2.0], seed: 1, ..Default::default() };
        build_edge_dataset(&cfg).unwrap()
    }

    #[test]
    fn evaluate_oracle_and_constant() {
        let ds = small_edges();
        let report = evaluate(&Oracle(&ds), &ds, Split::Train, &EvalOptions::default()).unwrap();
        let MetricsReport::Edges(rows) = &report else { panic!() };
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.f_mean == 1.0));
        let half = evaluate(&Constant(0.5), &ds, Split::Test, &EvalOptions::default()).unwrap();
        let MetricsReport::Edges(rows) = &half else { panic!() };
        let expected: Vec<f64> = ds
            .split(Split::Test)
            .filter(|s| s.record.level == 1.0)
            .map(|s| {
                let m = s.edges().unwrap();
                let d = m.count() as f64 / (32.0 * 32.0);
                2.0 * d / (1.0 + d)
            })
            .collect();
        assert!((rows[0].f_mean - mean(&expected)).abs() < 1e-12);
        assert_eq!(half.csv(), evaluate(&Constant(0.5), &ds, Split::Test, &EvalOptions::default()).unwrap().csv());
        let empty = Dataset { samples: vec![], ..ds.clone() };
        assert!(matches!(evaluate(&Constant(0.5), &empty, Split::Test, &EvalOptions::default()), Err(Error::Contract(_))));
    }

    fn tiny_cfg(task: Task) -> TrainConfig {
        TrainConfig {
            task,
            epochs: 2,
            batch_size: 2,
            base_width: 2,
            crop: Some(16),
            eval_every: 1,
            ..if task == Task::Edges { TrainConfig::edges() } else { TrainConfig::denoise(1.0) }
        }
    }

    #[test]
    fn zero_lr_keeps_eval_metric() {
        let ds = small_edges();
        let cfg = TrainConfig { optimizer: OptimizerConfig::adam(0.0), ..tiny_cfg(Task::Edges) };
        let st = train::<f32>(&cfg, &ds, |_| {}).unwrap();
        assert_eq!(st.log[0].eval_metric, st.log[1].eval_metric);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let ds = small_edges();
        let cfg = tiny_cfg(Task::Edges);
        let a = train::<f32>(&cfg, &ds, |_| {}).unwrap();
        let b = train::<f32>(&cfg, &ds, |_| {}).unwrap();
        assert_eq!(a.model, b.model);

        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.nel");
        let first = TrainConfig { epochs: 1, checkpoint: Some(ckpt.clone()), ..cfg.clone() };
        train::<f32>(&first, &ds, |_| {}).unwrap();
        assert!(best_checkpoint_path(&ckpt).exists());
        let resumed = TrainerState::<f32>::load(state_path(&ckpt)).unwrap();
        let done = train_from(&cfg, &ds, resumed, |_| {}).unwrap();
        assert_eq!(done.model, a.model);
        assert_eq!(done.optimizer, a.optimizer);
        let strip = |l: &[LogRow]| l.iter().map(LogRow::timeless).collect::<Vec<_>>();
        assert_eq!(strip(&done.log), strip(&a.log));
    }

    #[test]
    fn denoise_lambda_changes_parameters() {
        let imgs = synthetic_gray_images(4, 16, 16, 3);
        let ds = build_denoise_dataset(&imgs, &[25.0], 0.5, 2).unwrap();
        let base = TrainConfig { crop: None, ..tiny_cfg(Task::Denoise) };
        let with = train::<f32>(&base, &ds, |_| {}).unwrap();
        let without = train::<f32>(&TrainConfig { lambda_edge: 0.0, ..base }, &ds, |_| {}).unwrap();
        assert_ne!(with.model, without.model);
        assert!(with.log[0].loss_edge.unwrap() > 0.0);
        assert_eq!(without.log[0].loss_edge, Some(0.0));
    }

    #[test]
    fn log_format() {
        let row = LogRow { epoch: 1, step: 4, loss: -0.25, loss_l2: None, loss_edge: None, eval_metric: Some(0.5), wall_ms: 12.345678 };
        assert_eq!(row.csv(), "1,4,-0.25,,,0.5,12.3457");
        assert!(log_csv(&[row]).starts_with(LOG_HEADER));
    }
}
