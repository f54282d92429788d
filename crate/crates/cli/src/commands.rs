use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use faintline::checkpoint::load_checkpoint_auto;
use faintline::datagen::{
    build_denoise_dataset, build_edge_dataset, load_dataset, synthetic_gray_image, synthetic_gray_images,
    write_dataset, EdgeDatasetConfig, Task,
};
use faintline::filters::CannyParams;
use faintline::metrics::{psnr, ssim, strict_f_measure};
use faintline::pnm::{quantize, read_gray, write_pgm};
use faintline::report::fmt6;
use faintline::selfcheck::{op_checks, unet_check};
use faintline::sweep::{snr_sweep, sweep_csv, sweep_svg, SweepConfig};
use faintline::trainer::{
    evaluate, log_csv, state_path, train_from, CannyPredictor, EvalOptions, OptimizerConfig, Predictor, TrainConfig,
    TrainerState,
};
use faintline::{BinaryMask, GrayImage, InputNorm, Model, UNetSpec};

use crate::args::*;

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenEdges(a) => gen_edges(a),
        Command::GenDenoise(a) => gen_denoise(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Detect(a) => detect(a),
        Command::Denoise(a) => denoise(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Sweep(a) => sweep(a),
        Command::Rerun { .. } => bail!("a run configuration cannot itself be a rerun"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_checkpoint_auto(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_edges(a: &GenEdgesArgs) -> Result<()> {
    let cfg = EdgeDatasetConfig {
        base_count: a.base,
        height: a.size,
        width: a.size,
        snrs: a.snrs.clone(),
        hflip: !a.no_hflip,
        vflip_online: !a.no_vflip,
        pure_noise_fraction: a.pure_noise,
        train_fraction: a.train_fraction,
        seed: a.seed,
    };
    let ds = build_edge_dataset(&cfg)?;
    write_dataset(&ds, &a.out)?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(())
}

fn read_image_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm" || e == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("{}: no .pgm or .ppm images", dir.display());
    }
    paths.iter().map(|p| Ok(read_gray(p)?)).collect()
}

fn gen_denoise(a: &GenDenoiseArgs) -> Result<()> {
    let images = match &a.images {
        Some(dir) => read_image_dir(dir)?,
        None => synthetic_gray_images(a.count, a.size, a.size, a.seed),
    };
    let ds = build_denoise_dataset(&images, &a.sigmas, a.train_fraction, a.seed)?;
    write_dataset(&ds, &a.out)?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let task = a.task.context("training task unresolved")?;
    let base = match task {
        Task::Edges => TrainConfig::edges(),
        Task::Denoise => TrainConfig::denoise(0.0),
    };
    let optimizer = match a.optimizer {
        OptimizerKind::Adam => OptimizerConfig::adam(a.lr),
        OptimizerKind::Sgd => OptimizerConfig::sgd_momentum(a.lr, a.momentum),
    };
    Ok(TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch,
        optimizer,
        lambda_edge: a.lambda_edge.unwrap_or(0.0),
        seed: a.seed,
        base_width: a.width,
        input_norm: InputNorm {
            shift: a.input_shift.unwrap_or(base.input_norm.shift),
            scale: a.input_scale.unwrap_or(base.input_norm.scale),
        },
        eval_every: a.eval_every,
        eval_split: a.eval_split.into(),
        eval: EvalOptions { threshold: a.threshold, draws: a.draws, seed: a.seed, ..EvalOptions::default() },
        checkpoint: Some(a.ckpt.clone()),
        crop: (a.crop > 0).then_some(a.crop),
        clip_grad_norm: (a.clip > 0.0).then_some(a.clip),
        resample_noise: !a.no_resample,
        vflip: !a.no_vflip,
        max_steps: a.max_steps,
        ..base
    })
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    cfg.validate()?;
    let data = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let resume_from = state_path(&a.ckpt);
    let state = if a.resume && resume_from.exists() {
        let state = TrainerState::<f32>::load(&resume_from)?;
        if state.model.spec() != &UNetSpec::new(1, cfg.base_width)?.with_input_norm(cfg.input_norm) {
            bail!("{}: saved model does not match the requested architecture", resume_from.display());
        }
        state
    } else {
        let spec = UNetSpec::new(1, cfg.base_width)?.with_input_norm(cfg.input_norm);
        let seed = faintline::trainer::init_seed(cfg.seed);
        TrainerState::fresh(Model::build(spec, seed), &cfg.optimizer)
    };
    let state = train_from(&cfg, &data, state, |row| eprintln!("{}", row.csv()))?;
    let log = a.log.as_deref().context("log path unresolved")?;
    write_text(log, &log_csv(&state.log))
}

fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(pred) = &a.pred {
        let y = read_gray(pred)?;
        let text = if let Some(clean) = &a.clean {
            let clean = read_gray(clean)?;
            let p = psnr(&y, &clean, a.peak)?;
            format!("psnr,ssim\n{},{}\n", fmt6(p.db), fmt6(ssim(&y, &clean)?))
        } else {
            let labels = BinaryMask::from_binary_image(&read_gray(a.labels.as_ref().context("labels missing")?)?)?;
            let s = strict_f_measure(&y, &labels, a.threshold)?;
            format!("f,precision,recall\n{},{},{}\n", fmt6(s.f), fmt6(s.precision), fmt6(s.recall))
        };
        return emit(a.out.as_deref(), &text);
    }
    let data_dir = a.data.as_ref().context("dataset missing")?;
    let data = load_dataset(data_dir).with_context(|| format!("loading dataset {}", data_dir.display()))?;
    let opts = EvalOptions { threshold: a.threshold, draws: a.draws, seed: a.seed, peak: a.peak };
    let predictor: Box<dyn Predictor> = match &a.ckpt {
        Some(ckpt) => Box::new(load_model(ckpt)?),
        None => Box::new(CannyPredictor(CannyParams::default())),
    };
    let report = evaluate(predictor.as_ref(), &data, a.split.into(), &opts)?;
    emit(a.out.as_deref(), &report.csv())
}

fn detect(a: &DetectArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let input = read_gray(&a.input)?;
    let y = model.predict(&input)?;
    let out = match a.threshold {
        Some(t) => BinaryMask::threshold(&y, t).to_image(),
        None => y,
    };
    write_pgm(&out, &a.out)?;
    Ok(())
}

fn denoise(a: &DenoiseArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let input = read_gray(&a.input)?;
    let y = model.predict(&input)?;
    write_pgm(&y, &a.out)?;
    if let Some(clean) = &a.clean {
        let clean = read_gray(clean)?;
        // Score what was written, not the unquantized prediction.
        let written = y.map(|v| quantize(v) as f64 / 255.0);
        let p = psnr(&written, &clean, 1.0)?;
        let noisy = psnr(&input, &clean, 1.0)?;
        print!(
            "psnr,ssim,input_psnr,input_ssim\n{},{},{},{}\n",
            fmt6(p.db),
            fmt6(ssim(&written, &clean)?),
            fmt6(noisy.db),
            fmt6(ssim(&input, &clean)?)
        );
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn bench(a: &BenchArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let mut text = String::from("size,median_ms\n");
    for &size in &a.sizes {
        let input = synthetic_gray_image(size, size, 0, 0).to_tensor::<f32>();
        model.forward(&input)?;
        let times = (0..a.repeat)
            .map(|_| {
                let t = Instant::now();
                model.forward(&input)?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<Vec<f64>>>()?;
        text.push_str(&format!("{size},{}\n", fmt6(median(times))));
    }
    emit(a.out.as_deref(), &text)
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut text = String::from("check,seed,checked,max_rel_error,tol,passed\n");
    let mut failed = 0usize;
    let mut line = |name: &str, seed: u64, report: &faintline::autodiff::GradCheckReport| {
        let checked: usize = report.inputs.iter().map(|i| i.checked).sum();
        failed += usize::from(!report.passed());
        text.push_str(&format!(
            "{name},{seed},{checked},{},{},{}\n",
            fmt6(report.max_rel_error()),
            fmt6(report.tol),
            report.passed()
        ));
    };
    for seed in 0..a.seeds {
        for c in op_checks(seed, a.op_tol)? {
            line(&c.name, seed, &c.report);
        }
    }
    let net = unet_check(0, a.width, a.size, a.network_tol)?;
    line(&net.name, 0, &net.report);
    print!("{text}");
    if failed > 0 {
        bail!("{failed} gradient checks failed");
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let cfg = SweepConfig {
        snrs: a.snrs.clone(),
        iterations: a.iterations,
        seed: a.seed,
        size: a.size,
        threshold: a.threshold,
        canny: CannyParams::default(),
    };
    let rows = snr_sweep(&model, &cfg)?;
    write_text(&a.csv, &sweep_csv(&rows))?;
    write_text(&a.svg, &sweep_svg(&rows))
}
