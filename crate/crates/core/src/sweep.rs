//! F-measure against SNR on the fixed evaluation pattern, for a model and
//! the Canny baseline under identical noise draws.

use serde::{Deserialize, Serialize};

use crate::datagen::{apply_noise_model_rng, derive_rng, domain, extract_labels, render_eval_pattern};
use crate::error::{Error, Result};
use crate::filters::CannyParams;
use crate::metrics::strict_f_measure;
use crate::report::{fmt6, svg_line_chart, Series};
use crate::trainer::{CannyPredictor, Predictor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub snrs: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    /// Side of the square evaluation pattern.
    pub size: usize,
    pub threshold: f64,
    pub canny: CannyParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            snrs: crate::datagen::DEFAULT_SNRS.to_vec(),
            iterations: 10,
            seed: 0,
            size: 256,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            canny: CannyParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr: f64,
    pub method: String,
    pub f_mean: f64,
    pub f_std: f64,
}

pub const MODEL_METHOD: &str = "model";
pub const CANNY_METHOD: &str = "canny";

/// Mean and population deviation of the strict F over `iterations` noise
/// draws per SNR. Draw `i` at SNR index `k` is the same for every method.
pub fn snr_sweep(model: &dyn Predictor, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.snrs.is_empty() {
        return Err(Error::Contract("sweep needs at least one snr".into()));
    }
    if cfg.iterations == 0 {
        return Err(Error::Contract("sweep needs at least one iteration".into()));
    }
    let pattern = render_eval_pattern(cfg.size, cfg.size)?;
    let labels = extract_labels(&pattern)?;
    let canny = CannyPredictor(cfg.canny);
    let methods: [(&str, &dyn Predictor); 2] = [(MODEL_METHOD, model), (CANNY_METHOD, &canny)];
    let mut rows = Vec::new();
    for (k, &snr) in cfg.snrs.iter().enumerate() {
        let mut scores = vec![Vec::with_capacity(cfg.iterations); methods.len()];
        for i in 0..cfg.iterations {
            let mut rng = derive_rng(cfg.seed, &[domain::SNR_SWEEP, k as u64, i as u64]);
            let noisy = apply_noise_model_rng(&pattern, snr, &mut rng)?;
            for (m, (_, p)) in methods.iter().enumerate() {
                scores[m].push(strict_f_measure(&p.predict(&noisy)?, &labels, cfg.threshold)?.f);
            }
        }
        for ((name, _), f) in methods.iter().zip(scores) {
            let mean = f.iter().sum::<f64>() / f.len() as f64;
            let var = f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64;
            rows.push(SweepRow { snr, method: (*name).into(), f_mean: mean, f_std: var.sqrt() });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("snr,method,f_mean,f_std\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", fmt6(r.snr), r.method, fmt6(r.f_mean), fmt6(r.f_std)));
    }
    s
}

/// One line per method of mean F against SNR.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let points: Vec<Vec<(f64, f64)>> = methods
        .iter()
        .map(|m| rows.iter().filter(|r| r.method == *m).map(|r| (r.snr, r.f_mean)).collect())
        .collect();
    let series: Vec<Series<'_>> = methods.iter().zip(&points).map(|(name, p)| Series { name, points: p }).collect();
    svg_line_chart("F-measure vs SNR", "SNR", "mean F", &series)
}

/// Mean F of `method` at `snr`, if present.
pub fn f_at(rows: &[SweepRow], method: &str, snr: f64) -> Option<f64> {
    rows.iter().find(|r| r.method == method && r.snr == snr).map(|r| r.f_mean)
}
