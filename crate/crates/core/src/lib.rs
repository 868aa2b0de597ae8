//! Simulator for graphene optoelectronic analog matrix-vector multiplication:
//! device curves, a calibrated N x N array, signed MVM and blocked GEMM on top
//! of it, Monte Carlo error studies and small ML workloads.

pub mod array;
pub mod calibration;
pub mod config;
pub mod device;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod gemm;
pub mod io;
pub mod matrix;
pub mod ml;
pub mod rng;

pub use array::{build_array, ArrayInstance, Plane, RowReadout};
pub use calibration::{
    calibrate_array, calibrate_nominal_twin, calibrate_row, calibrate_rows, decode_row,
    ArrayCalibration, CalibrationOptions, Gate, PairTable, Reference, RowCalibration,
};
pub use config::RunConfig;
pub use config::{CalibrationMode, FullScale};
pub use device::{CurveKind, NoiseSpec, Precision, QuantizerSpec, ResponseCurve, VariationSpec};
pub use engine::{mvm_oracle, normalize, split_signed, MvmEngine, MvmResult};
pub use error::{Error, Result};
pub use experiments::{
    fit_gaussian, run_error_experiment, sweep, ErrorReport, SweepAxis, SweepPoint,
};
pub use gemm::{gemm, plan_blocks, AnalogBackend, BlockPlan, OracleBackend, TileBackend};
pub use matrix::Matrix;
