//! `optomvm`: calibrate a simulated optoelectronic array and run MVM, GEMM,
//! error sweeps and the ML demos on it.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optomvm_core::{CalibrationMode, Error, Precision, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "optomvm",
    version,
    about = "Graphene optoelectronic MVM simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Settings that override the config file.
#[derive(Args, Debug, Clone)]
pub struct Overrides {
    /// TOML run configuration; defaults apply for missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps, GEMM and evaluation. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Array dimension N.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Optical input power per SLM pixel, watts.
    #[arg(long, global = true)]
    pub p0: Option<f64>,
    /// Device variation p (0 to 1).
    #[arg(long, global = true)]
    pub variation: Option<f64>,
    /// Gate DAC precision: bit count or `ideal`.
    #[arg(long, global = true)]
    pub dac_bits: Option<Precision>,
    /// Readout ADC precision: bit count or `ideal`.
    #[arg(long, global = true)]
    pub adc_bits: Option<Precision>,
    /// Readout noise standard deviation, amperes.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Exposures averaged per calibration sample.
    #[arg(long, global = true)]
    pub repeats: Option<u32>,
    /// Calibration mode.
    #[arg(long, global = true, value_enum)]
    pub calibration_mode: Option<ModeArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Measured,
    NominalTwin,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendArg {
    Analog,
    Oracle,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Calibrate the array and write the calibration file.
    Calibrate {
        /// Calibration file (default: <out>/calibration.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Multiply an N x N matrix by an N-vector on the array.
    Mvm {
        /// Matrix file.
        #[arg(long)]
        matrix: PathBuf,
        /// Vector file (N x 1 or 1 x N matrix).
        #[arg(long)]
        vector: PathBuf,
        /// Use this calibration file instead of calibrating.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output vector file (default: <out>/mvm.txt).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Multiply two matrices with blocked GEMM.
    Gemm {
        /// Left factor A.
        #[arg(long)]
        a: PathBuf,
        /// Right factor B.
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Analog)]
        backend: BackendArg,
        /// Use this calibration file instead of calibrating (analog backend).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output matrix file (default: <out>/gemm.txt).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the output in binary form.
        #[arg(long)]
        binary: bool,
    },
    /// Monte Carlo error sweep over one setting.
    Sweep {
        /// Swept setting: variation, adc_bits or power (multiples of p0).
        #[arg(long)]
        axis: String,
        /// Comma-separated ascending values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Random products per value.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Low-rank SVD image reconstruction.
    DemoSvd {
        /// Grayscale PGM input (default: built-in 64 x 64 test image).
        #[arg(long)]
        image: Option<PathBuf>,
        /// Singular vectors kept.
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, value_enum, default_value_t = BackendArg::Analog)]
        backend: BackendArg,
    },
    /// Least-squares classification of Gaussian blobs.
    DemoBlobs {
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
    },
    /// Two-layer linear MLP on MNIST.
    DemoMlp {
        /// Directory holding the four MNIST IDX files (default: paths.mnist_dir).
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        train: usize,
        #[arg(long, default_value_t = 2_000)]
        test: usize,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 1000)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
    },
}

impl Overrides {
    pub fn resolve(&self) -> optomvm_core::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.paths.out_dir = v.clone();
        }
        if let Some(v) = self.n {
            c.array.n = v;
        }
        if let Some(v) = self.p0 {
            c.array.p0 = v;
        }
        if let Some(v) = self.variation {
            c.device.variation = v;
        }
        if let Some(v) = self.dac_bits {
            c.quantizer.dac_bits = v;
        }
        if let Some(v) = self.adc_bits {
            c.quantizer.adc_bits = v;
        }
        if let Some(v) = self.sigma {
            c.noise.sigma = v;
        }
        if let Some(v) = self.repeats {
            c.calibration.repeats = v;
        }
        if let Some(m) = self.calibration_mode {
            c.calibration.mode = match m {
                ModeArg::Measured => CalibrationMode::Measured,
                ModeArg::NominalTwin => CalibrationMode::NominalTwin,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Domain(_) => 2,
        Error::Format { .. } | Error::Io { .. } => 3,
        Error::Calibration(_) | Error::State(_) => 4,
        Error::Numeric(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("optomvm: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
