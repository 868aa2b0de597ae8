use std::path::{Path, PathBuf};

use optomvm_core::experiments::{sweep_csv, sweep_reports};
use optomvm_core::io::{as_vector, read_matrix, write_bytes, write_matrix};
use optomvm_core::ml::blobs::{make_blobs, one_hot, BlobSpec};
use optomvm_core::ml::idx::load_labelled;
use optomvm_core::ml::image::{psnr, reconstruct_topk, synthetic_image};
use optomvm_core::ml::linear::{train_linear_mse, Standardizer};
use optomvm_core::ml::mlp::{train_mlp2, Mlp2, TrainOptions};
use optomvm_core::ml::pgm::{load_pgm, save_pgm};
use optomvm_core::ml::svd::jacobi_svd;
use optomvm_core::ml::{adam::AdamState, confusion_csv, evaluate_linear, evaluate_mlp, Evaluation};
use optomvm_core::rng::{derive_seed, tag};
use optomvm_core::{
    gemm, AnalogBackend, ArrayCalibration, Error, Matrix, MvmEngine, OracleBackend, Result,
    RunConfig, SweepAxis,
};
use serde_json::json;

use crate::{BackendArg, Cli, Command};

/// Seed of the physical array for a run.
pub fn array_seed(config: &RunConfig) -> u64 {
    derive_seed(config.seed, &[tag::ARRAY])
}

fn out_path(config: &RunConfig, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| config.paths.out_dir.join(default))
}

/// Writes the resolved configuration beside `output`.
fn write_resolved(config: &RunConfig, output: &Path, command: &str) -> Result<()> {
    let dir = output.parent().unwrap_or(Path::new("."));
    write_bytes(
        &dir.join(format!("{command}.resolved.toml")),
        config.to_toml_string().as_bytes(),
    )
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The configured array, calibrated either fresh or from `calibration`.
fn engine(config: &RunConfig, calibration: &Option<PathBuf>) -> Result<MvmEngine> {
    match calibration {
        None => MvmEngine::from_config(config, array_seed(config)),
        Some(path) => {
            let (cal, digest) = ArrayCalibration::from_json(&read_text(path)?)?;
            if digest != config.digest() {
                return Err(Error::Calibration(format!(
                    "{} was made under a different configuration",
                    path.display()
                )));
            }
            let mut e =
                MvmEngine::uncalibrated(optomvm_core::build_array(config, array_seed(config))?);
            e.set_calibration(cal)?;
            Ok(e)
        }
    }
}

fn analog_backend(config: &RunConfig, calibration: &Option<PathBuf>) -> Result<AnalogBackend> {
    Ok(AnalogBackend::new(
        engine(config, calibration)?,
        derive_seed(config.seed, &[tag::TILE]),
    ))
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = cli.overrides.resolve()?;
    let jobs = cli.overrides.jobs.max(1);
    match &cli.command {
        Command::Calibrate { output } => {
            let path = out_path(&config, output, "calibration.json");
            let e = engine(&config, &None)?;
            let cal = e.calibration().expect("engine from config is calibrated");
            write_bytes(&path, cal.to_json(&config.digest()).as_bytes())?;
            write_resolved(&config, &path, "calibrate")
        }
        Command::Mvm {
            matrix,
            vector,
            calibration,
            output,
        } => {
            let w = read_matrix(matrix)?;
            let v = as_vector(&read_matrix(vector)?)?;
            let path = out_path(&config, output, "mvm.txt");
            let mut e = engine(&config, calibration)?;
            let r = e.mvm(&w, &v)?;
            let out = Matrix::from_vec(r.output.len(), 1, r.output.clone())?;
            write_matrix(&path, &out, false)?;
            let diag = json!({
                "passes_used": r.passes_used,
                "clamp_events": r.diagnostics.clamp_events,
                "row_units": r.diagnostics.units,
                "scale_w": r.diagnostics.scale_w,
                "scale_v": r.diagnostics.scale_v,
            });
            write_json(&path.with_extension("diagnostics.json"), &diag)?;
            write_resolved(&config, &path, "mvm")
        }
        Command::Gemm {
            a,
            b,
            backend,
            calibration,
            output,
            binary,
        } => {
            let a = read_matrix(a)?;
            let b = read_matrix(b)?;
            let path = out_path(&config, output, "gemm.txt");
            let c = match backend {
                BackendArg::Oracle => gemm(
                    &a,
                    &b,
                    &OracleBackend {
                        tile: config.array.n,
                    },
                    jobs,
                )?,
                BackendArg::Analog => gemm(&a, &b, &analog_backend(&config, calibration)?, jobs)?,
            };
            write_matrix(&path, &c, *binary)?;
            write_resolved(&config, &path, "gemm")
        }
        Command::Sweep {
            axis,
            values,
            trials,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let dir = config.paths.out_dir.clone();
            let results = sweep_reports(&config, axis, values, *trials, config.seed, jobs)?;
            let points: Vec<_> = results.iter().map(|(p, _)| p.clone()).collect();
            let csv_path = dir.join(format!("sweep_{}.csv", axis.name()));
            write_bytes(&csv_path, sweep_csv(&points).as_bytes())?;
            for (k, (_, report)) in results.iter().enumerate() {
                let p = dir.join(format!("sweep_{}_hist_{k}.csv", axis.name()));
                write_bytes(&p, report.histogram.to_csv().as_bytes())?;
            }
            write_resolved(&config, &csv_path, "sweep")
        }
        Command::DemoSvd { image, k, backend } => demo_svd(&config, image, *k, *backend, jobs),
        Command::DemoBlobs {
            clusters,
            points,
            spread,
            epochs,
        } => {
            let spec = BlobSpec {
                k: *clusters,
                n_per: *points,
                spread: *spread,
            };
            demo_blobs(&config, spec, *epochs, jobs)
        }
        Command::DemoMlp {
            mnist_dir,
            train,
            test,
            epochs,
            batch,
            hidden,
        } => {
            let dir = mnist_dir
                .clone()
                .unwrap_or_else(|| config.paths.mnist_dir.clone());
            let opts = TrainOptions {
                epochs: *epochs,
                batch: *batch,
                seed: derive_seed(config.seed, &[tag::SHUFFLE]),
            };
            demo_mlp(&config, &dir, (*train, *test), *hidden, opts, jobs)
        }
    }
}

fn demo_svd(
    config: &RunConfig,
    image: &Option<PathBuf>,
    k: usize,
    backend: BackendArg,
    jobs: usize,
) -> Result<()> {
    let img = match image {
        Some(p) => load_pgm(p)?,
        None => synthetic_image(64, config.seed)?,
    };
    let f = jacobi_svd(&img)?;
    let rec = match backend {
        BackendArg::Oracle => reconstruct_topk(
            &f,
            k,
            &OracleBackend {
                tile: config.array.n,
            },
            jobs,
        )?,
        BackendArg::Analog => reconstruct_topk(&f, k, &analog_backend(config, &None)?, jobs)?,
    };
    let dir = &config.paths.out_dir;
    let name = match backend {
        BackendArg::Oracle => "oracle",
        BackendArg::Analog => "analog",
    };
    let pgm = dir.join(format!("svd_k{k}_{name}.pgm"));
    save_pgm(&pgm, &rec, true)?;
    if image.is_none() {
        save_pgm(&dir.join("svd_input.pgm"), &img, true)?;
    }
    let tail: f64 = f.s[k.min(f.s.len())..].iter().map(|s| s * s).sum();
    let metrics = json!({
        "k": k,
        "backend": name,
        "rows": img.rows(),
        "cols": img.cols(),
        "psnr_db": finite_or_null(psnr(&img, &rec)?),
        "tail_energy": tail,
        "singular_values": f.s,
    });
    write_json(&dir.join(format!("svd_k{k}_{name}.json")), &metrics)?;
    write_resolved(config, &pgm, "demo-svd")
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn eval_json(e: &Evaluation) -> serde_json::Value {
    json!({ "loss": e.loss, "accuracy": e.accuracy })
}

fn demo_blobs(config: &RunConfig, spec: BlobSpec, epochs: usize, jobs: usize) -> Result<()> {
    let (x, labels) = make_blobs(spec, derive_seed(config.seed, &[tag::DATA]))?;
    let x = Standardizer::fit(&x).apply(&x);
    let targets = one_hot(&labels, spec.k);
    let mut adam = AdamState::new(spec.k * (x.cols() + 1));
    let model = train_linear_mse(&x, &targets, &mut adam, epochs)?;
    let oracle = evaluate_linear(
        &model,
        &x,
        &labels,
        &OracleBackend {
            tile: config.array.n,
        },
        jobs,
    )?;
    let analog = evaluate_linear(&model, &x, &labels, &analog_backend(config, &None)?, jobs)?;
    let dir = &config.paths.out_dir;
    write_bytes(
        &dir.join("blobs_model.txt"),
        model.to_checkpoint().as_bytes(),
    )?;
    write_bytes(
        &dir.join("blobs_confusion_oracle.csv"),
        confusion_csv(&oracle.confusion).as_bytes(),
    )?;
    write_bytes(
        &dir.join("blobs_confusion_analog.csv"),
        confusion_csv(&analog.confusion).as_bytes(),
    )?;
    let metrics = json!({
        "clusters": spec.k,
        "points_per_cluster": spec.n_per,
        "spread": spec.spread,
        "epochs": epochs,
        "final_training_loss": model.loss_history.last(),
        "oracle": eval_json(&oracle),
        "analog": eval_json(&analog),
        "relative_loss_difference": (analog.loss - oracle.loss).abs() / oracle.loss,
    });
    let path = dir.join("blobs_metrics.json");
    write_json(&path, &metrics)?;
    write_resolved(config, &path, "demo-blobs")
}

fn demo_mlp(
    config: &RunConfig,
    dir: &Path,
    (n_train, n_test): (usize, usize),
    hidden: usize,
    opts: TrainOptions,
    jobs: usize,
) -> Result<()> {
    let (x, labels) = load_labelled(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        n_train,
    )?;
    let (xt, lt) = load_labelled(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        n_test,
    )?;
    let mut model = Mlp2::new(x.cols(), hidden, 10, derive_seed(config.seed, &[tag::INIT]));
    let mut adam = AdamState::new(model.num_params());
    let history = train_mlp2(&x, &labels, &mut model, &mut adam, opts)?;
    let oracle = evaluate_mlp(
        &model,
        &xt,
        &lt,
        &OracleBackend {
            tile: config.array.n,
        },
        jobs,
    )?;
    let analog = evaluate_mlp(&model, &xt, &lt, &analog_backend(config, &None)?, jobs)?;
    let out = &config.paths.out_dir;
    write_bytes(&out.join("mlp_model.txt"), model.to_checkpoint().as_bytes())?;
    write_bytes(
        &out.join("mlp_confusion_oracle.csv"),
        confusion_csv(&oracle.confusion).as_bytes(),
    )?;
    write_bytes(
        &out.join("mlp_confusion_analog.csv"),
        confusion_csv(&analog.confusion).as_bytes(),
    )?;
    let metrics = json!({
        "train_samples": x.rows(),
        "test_samples": xt.rows(),
        "hidden": hidden,
        "epochs": opts.epochs,
        "batch": opts.batch,
        "training_loss": history,
        "oracle": eval_json(&oracle),
        "analog": eval_json(&analog),
        "accuracy_gap": oracle.accuracy - analog.accuracy,
    });
    let path = out.join("mlp_metrics.json");
    write_json(&path, &metrics)?;
    write_resolved(config, &path, "demo-mlp")
}
