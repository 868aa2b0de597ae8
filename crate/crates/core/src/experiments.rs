//! Monte Carlo error measurements: random `N x N` by `N` products in
//! `[-1, 1]`, analog minus exact, summarized by a Gaussian fit.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::device::Precision;
use crate::engine::{mvm_oracle, MvmEngine};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream, tag};

pub const SWEEP_CSV_HEADER: &str = "axis,value,mean,std,trials,seed";
pub const HISTOGRAM_CSV_HEADER: &str = "bin_lo,bin_hi,count";
pub const DEFAULT_BINS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Analog minus exact, trial-major then row.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
    pub config_digest: String,
    pub seed: u64,
    pub trials: usize,
}

/// Sample mean and unbiased standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Sample skewness and excess kurtosis (population moments).
pub fn shape_stats(samples: &[f64]) -> Result<(f64, f64)> {
    let (mean, _) = fit_gaussian(samples)?;
    let n = samples.len() as f64;
    let m = |p: i32| samples.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n;
    let m2 = m(2);
    if m2 == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((m(3) / m2.powf(1.5), m(4) / (m2 * m2) - 3.0))
}

pub fn histogram(samples: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let (mut lo, mut hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if samples.is_empty() {
        (lo, hi) = (0.0, 1.0);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTOGRAM_CSV_HEADER}\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }
}

fn trial_errors(engine: &mut MvmEngine, seed: u64, t: usize) -> Result<Vec<f64>> {
    let n = engine.n();
    let mut r = stream(seed, &[tag::TRIAL, t as u64]);
    let w = Matrix::from_fn(n, n, |_, _| r.random_range(-1.0..=1.0));
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..=1.0)).collect();
    if engine.array().noise().active() {
        engine.reseed_noise(derive_seed(seed, &[tag::NOISE, t as u64]));
    }
    let analog = engine.mvm(&w, &v)?.output;
    let exact = mvm_oracle(&w, &v)?;
    Ok(analog.iter().zip(&exact).map(|(a, e)| a - e).collect())
}

/// Runs `trials` random products on one array built and calibrated from
/// `(config, seed)`. The result is identical for every `jobs`.
pub fn run_error_experiment(
    config: &RunConfig,
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<ErrorReport> {
    if trials < 1 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let engine = MvmEngine::from_config(config, derive_seed(seed, &[tag::ARRAY]))?;
    let per_trial: Vec<Result<Vec<f64>>> = if jobs <= 1 {
        let mut e = engine;
        (0..trials).map(|t| trial_errors(&mut e, seed, t)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map_init(|| engine.clone(), |e, t| trial_errors(e, seed, t))
                .collect()
        })
    };
    let mut samples = Vec::with_capacity(trials * config.array.n);
    for r in per_trial {
        samples.extend(r?);
    }
    let (mean, std) = fit_gaussian(&samples).unwrap_or((samples[0], 0.0));
    Ok(ErrorReport {
        histogram: histogram(&samples, DEFAULT_BINS),
        samples,
        mean,
        std,
        config_digest: config.digest(),
        seed,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Variation,
    AdcBits,
    /// Multiples of the configured `p0`.
    Power,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Variation => "variation",
            SweepAxis::AdcBits => "adc_bits",
            SweepAxis::Power => "power",
        }
    }

    /// `config` with this axis set to `value`.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        match self {
            SweepAxis::Variation => c.device.variation = value,
            SweepAxis::AdcBits => {
                if value.fract() != 0.0 || !(1.0..=24.0).contains(&value) {
                    return Err(Error::Domain(format!(
                        "adc_bits value {value} is not an integer in 1..=24"
                    )));
                }
                c.quantizer.adc_bits = Precision::Bits(value as u32);
            }
            SweepAxis::Power => c.array.p0 = config.array.p0 * value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variation" => Ok(SweepAxis::Variation),
            "adc_bits" => Ok(SweepAxis::AdcBits),
            "power" => Ok(SweepAxis::Power),
            _ => Err(Error::Domain(format!(
                "unknown sweep axis '{s}' (expected variation, adc_bits or power)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    pub seed: u64,
}

/// One experiment per value. Every point uses the same seed, so arrays,
/// inputs and noise are common across points and only the swept setting
/// changes.
pub fn sweep(
    config: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<SweepPoint>> {
    Ok(sweep_reports(config, axis, values, trials, seed, jobs)?
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

/// Like [`sweep`], also returning the full report of every point.
pub fn sweep_reports(
    config: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<(SweepPoint, ErrorReport)>> {
    if values.is_empty() {
        return Err(Error::Domain("sweep needs at least one value".into()));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain(
            "sweep values must be strictly ascending".into(),
        ));
    }
    values
        .iter()
        .map(|&value| {
            let c = axis.apply(config, value)?;
            let r = run_error_experiment(&c, trials, seed, jobs)?;
            let p = SweepPoint {
                axis,
                value,
                mean: r.mean,
                std: r.std,
                trials,
                seed,
            };
            Ok((p, r))
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.axis.name(),
            p.value,
            p.mean,
            p.std,
            p.trials,
            p.seed
        );
    }
    s
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|a| a.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|a| a.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
