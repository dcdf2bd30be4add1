//! Mode dispatch and artifact emission.
//!
//! Every mode computes all of its artifacts in memory first; files are then
//! written through a temporary in the output directory and renamed into
//! place, so a failed run leaves nothing half-written behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use ctia_ipc::array::{readout_frame, ArrayMode};
use ctia_ipc::device::{fit_polynomial, TransferKind, TransferSample};
use ctia_ipc::frame::{encode_pgm, load_frame, BayerFrame};
use ctia_ipc::golden::{compare_runs, golden_layer, CompareReport};
use ctia_ipc::mapper::{FusedLayer, ImageDims};
use ctia_ipc::metrics::metrics_report;
use ctia_ipc::montecarlo::monte_carlo;
use ctia_ipc::sweep::{self, linearity_sweep, SweepConfig, SweepMode};
use ctia_ipc::weights_io::{load_weights, LayerWeights};
use ctia_ipc::{simulate_layer, synth, Error};
use serde::Serialize;
use serde_json::json;
use thiserror::Error as ThisError;

use crate::config::{Mode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const DEFAULT_OUT_DIR: &str = "ctia-out";
pub const MONTECARLO_CSV_HEADER: &str = "trial,v_adc_in";
pub const READOUT_CSV_HEADER: &str = "row,col,volts";
pub const TRANSFER_CSV_HEADER: &str = "w_norm,x_norm,volts";

#[derive(Debug, ThisError)]
#[error("{module}: {source}")]
pub struct CliError {
    pub module: &'static str,
    #[source]
    pub source: Error,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        }
    }
}

trait Context<T> {
    fn ctx(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, Error> {
    fn ctx(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError { module, source })
    }
}

/// One command-line request.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub mode: Mode,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    /// False only when a verification comparison missed its thresholds.
    pub passed: bool,
    pub message: String,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_VERIFY_FAILED
        }
    }
}

struct Artifact {
    name: String,
    bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    fn json(name: impl Into<String>, value: &impl Serialize) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("plain data serializes");
        bytes.push(b'\n');
        Self::new(name, bytes)
    }
}

struct Output {
    artifacts: Vec<Artifact>,
    passed: bool,
    message: String,
}

impl Output {
    fn ok(artifacts: Vec<Artifact>, message: String) -> Self {
        Self {
            artifacts,
            passed: true,
            message,
        }
    }
}

/// Loads, validates and executes one invocation.
pub fn run(inv: &Invocation) -> Result<RunSummary, CliError> {
    let mut cfg = RunConfig::load(&inv.config).ctx("config")?;
    let seed = inv.seed.unwrap_or(cfg.seed);
    let out_dir = inv
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    cfg.mode = Some(inv.mode);
    cfg.seed = seed;
    cfg.mismatch.seed = seed;
    // The destination is not part of what the artifacts describe.
    cfg.out = None;
    cfg.validate(inv.mode).ctx("config")?;
    if cfg.conv.n_b != cfg.adc.out_bits {
        return Err(Error::Validation(vec![format!(
            "conv.n_b ({}) must equal adc.out_bits ({})",
            cfg.conv.n_b, cfg.adc.out_bits
        )]))
        .ctx("config");
    }

    let output = match inv.mode {
        Mode::Simulate => simulate(&cfg)?,
        Mode::Verify => verify(&cfg)?,
        Mode::Sweep => sweep_mode(&cfg)?,
        Mode::Montecarlo => montecarlo_mode(&cfg)?,
        Mode::Metrics => metrics_mode(&cfg)?,
        Mode::ExportTransfer => export_transfer(&cfg)?,
        Mode::Readout => readout(&cfg)?,
    };

    let mut artifacts = output.artifacts;
    let names: Vec<&str> = artifacts.iter().map(|a| a.name.as_str()).collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": inv.mode,
        "seed": seed,
        "passed": output.passed,
        "artifacts": names,
        "config": cfg,
    });
    artifacts.push(Artifact::json("manifest.json", &manifest));
    let written = write_all(&out_dir, &artifacts).ctx("output")?;
    Ok(RunSummary {
        mode: inv.mode,
        out_dir,
        artifacts: written,
        passed: output.passed,
        message: output.message,
    })
}

fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, &e))?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, &e))?;
            tmp.write_all(&a.bytes).map_err(|e| Error::io(&path, &e))?;
            tmp.persist(&path).map_err(|e| Error::io(&path, &e.error))?;
            Ok(path)
        })
        .collect()
}

fn input_frame(cfg: &RunConfig) -> Result<BayerFrame, CliError> {
    let path = cfg.frame.as_ref().expect("validated");
    load_frame(path, cfg.pixel.i_max).ctx("frame")
}

fn input_layer(cfg: &RunConfig) -> Result<LayerWeights, CliError> {
    let path = cfg.weights.as_ref().expect("validated");
    let layer = load_weights(path).ctx("weights")?;
    let w = &layer.weights;
    if (w.c_o, w.c_in, w.k) != (cfg.conv.c_o, cfg.conv.c_in, cfg.conv.k) {
        return Err(Error::Dimension(format!(
            "weights are {}x{}x{k}x{k} but conv expects {}x{}x{}x{}",
            w.c_o,
            w.c_in,
            cfg.conv.c_o,
            cfg.conv.c_in,
            cfg.conv.k,
            cfg.conv.k,
            k = w.k
        )))
        .ctx("weights");
    }
    Ok(layer)
}

fn simulate(cfg: &RunConfig) -> Result<Output, CliError> {
    let frame = input_frame(cfg)?;
    let layer = input_layer(cfg)?;
    let fused = FusedLayer::build(&layer.weights, &layer.bn, &cfg.conv).ctx("mapper")?;
    let out = simulate_layer(&cfg.hardware(), &frame, &fused, &cfg.conv).ctx("simulator")?;
    let mut artifacts = Vec::new();
    let mut files = Vec::new();
    for (ch, map) in out.activations.iter().enumerate() {
        let name = format!("act_{ch:02}.pgm");
        artifacts.push(Artifact::new(name.clone(), encode_pgm(map.rows, map.cols, &map.raw())));
        files.push(name);
    }
    let (rows, cols) = out.activations.first().map_or((0, 0), |m| (m.rows, m.cols));
    let index = json!({
        "channels": out.channels,
        "rows": rows,
        "cols": cols,
        "conv_rows": out.dims.conv_rows,
        "conv_cols": out.dims.conv_cols,
        "pool_stride": cfg.conv.p_s,
        "out_bits": cfg.adc.out_bits,
        "files": files,
    });
    artifacts.push(Artifact::json("activations.json", &index));
    let message = format!("{} channels of {rows}x{cols} activations", out.channels);
    Ok(Output::ok(artifacts, message))
}

#[derive(Serialize)]
struct CaseReport {
    case: usize,
    #[serde(flatten)]
    report: CompareReport,
}

fn verify(cfg: &RunConfig) -> Result<Output, CliError> {
    let hw = cfg.hardware();
    let cal = hw.calibration().ctx("golden")?;
    let cases: Vec<(BayerFrame, LayerWeights)> = if cfg.frame.is_some() {
        vec![(input_frame(cfg)?, input_layer(cfg)?)]
    } else {
        (0..cfg.verify.cases)
            .map(|i| {
                let c = synth::random_case(&cfg.conv, cfg.verify.rows, cfg.verify.cols, cfg.pixel.i_max, cfg.seed, i as u64)?;
                Ok((
                    c.frame,
                    LayerWeights {
                        weights: c.weights,
                        bn: c.bn,
                    },
                ))
            })
            .collect::<Result<_, Error>>()
            .ctx("verify")?
    };

    let mut reports = Vec::with_capacity(cases.len());
    for (i, (frame, layer)) in cases.iter().enumerate() {
        let fused = FusedLayer::build(&layer.weights, &layer.bn, &cfg.conv).ctx("mapper")?;
        let sim = simulate_layer(&hw, frame, &fused, &cfg.conv).ctx("simulator")?;
        let gold = golden_layer(frame, &fused, &cfg.conv, &cfg.adc, &cal).ctx("golden")?;
        let report = compare_runs(&sim.activations, &gold.activations).ctx("golden")?;
        reports.push(CaseReport { case: i, report });
    }

    let nodes: usize = reports.iter().map(|r| r.report.nodes).sum();
    let weighted = |f: fn(&CompareReport) -> f64| {
        if nodes == 0 {
            1.0
        } else {
            reports.iter().map(|r| f(&r.report) * r.report.nodes as f64).sum::<f64>() / nodes as f64
        }
    };
    let total = CompareReport {
        nodes,
        max_abs_diff: reports.iter().map(|r| r.report.max_abs_diff).max().unwrap_or(0),
        fraction_exact: weighted(|r| r.fraction_exact),
        fraction_within_one: weighted(|r| r.fraction_within_one),
    };
    let passed = reports.iter().all(|r| r.report.passes(&cfg.verify.thresholds));
    let doc = json!({
        "passed": passed,
        "thresholds": cfg.verify.thresholds,
        "total": total,
        "cases": reports,
    });
    let message = format!(
        "{} case(s), {} nodes, max |diff| {}, within one {:.6}: {}",
        reports.len(),
        nodes,
        total.max_abs_diff,
        total.fraction_within_one,
        if passed { "pass" } else { "FAIL" }
    );
    Ok(Output {
        artifacts: vec![Artifact::json("verify.json", &doc)],
        passed,
        message,
    })
}

fn sweep_mode(cfg: &RunConfig) -> Result<Output, CliError> {
    let rows = linearity_sweep(&cfg.hardware(), &cfg.sweep).ctx("sweep")?;
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.dedup();
    let fits = ks
        .iter()
        .map(|&k| Ok(json!({ "k": k, "fit": sweep::fit_rows(&rows, k)? })))
        .collect::<Result<Vec<_>, Error>>()
        .ctx("transfer")?;
    let message = format!("{} sweep points", rows.len());
    Ok(Output::ok(
        vec![
            Artifact::new("sweep.csv", sweep::to_csv(&rows).into_bytes()),
            Artifact::json("sweep_fit.json", &fits),
        ],
        message,
    ))
}

fn montecarlo_mode(cfg: &RunConfig) -> Result<Output, CliError> {
    let result = monte_carlo(&cfg.hardware(), &cfg.montecarlo, &cfg.mismatch).ctx("montecarlo")?;
    let mut csv = String::with_capacity(32 * (result.samples.len() + 1));
    csv.push_str(MONTECARLO_CSV_HEADER);
    csv.push('\n');
    for (t, v) in result.samples.iter().enumerate() {
        csv.push_str(&format!("{t},{v}\n"));
    }
    let message = format!(
        "{} trials, mean {} V, std {} V (nominal {} V)",
        result.samples.len(),
        result.summary.mean,
        result.summary.std,
        result.summary.nominal
    );
    Ok(Output::ok(
        vec![
            Artifact::new("montecarlo.csv", csv.into_bytes()),
            Artifact::json("montecarlo_summary.json", &result.summary),
        ],
        message,
    ))
}

fn metrics_mode(cfg: &RunConfig) -> Result<Output, CliError> {
    let m = &cfg.metrics;
    let report = metrics_report(
        &cfg.conv,
        ImageDims::new(m.rows, m.cols),
        &cfg.wtc,
        m.power_per_pixel_w,
        m.cycle_time,
    )
    .ctx("metrics")?;
    let message = format!(
        "br_bits {:.4}, br_printed {:.5}, cycle-0 pixels {}, ops {}",
        report.br_bits, report.br_printed, report.activation_count_cycle0, report.total_ops
    );
    Ok(Output::ok(vec![Artifact::json("metrics.json", &report)], message))
}

fn read_samples(path: &Path) -> Result<Vec<TransferSample>, Error> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| csv_format(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != TRANSFER_CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected header `{TRANSFER_CSV_HEADER}`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_format(path, e)))
        .collect()
}

fn csv_format(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = e.kind() {
        return Error::io(path, io);
    }
    Error::Format {
        offset: e.position().map_or(0, |p| p.byte() as usize),
        message: e.to_string(),
    }
}

fn export_transfer(cfg: &RunConfig) -> Result<Output, CliError> {
    let samples = match &cfg.transfer.samples {
        Some(path) => read_samples(path).ctx("transfer")?,
        None => {
            let sweep_cfg = SweepConfig {
                mode: SweepMode::VsProduct,
                k: 1,
                points: cfg.transfer.points,
                ..SweepConfig::default()
            };
            linearity_sweep(&cfg.hardware(), &sweep_cfg)
                .ctx("metrics")?
                .iter()
                .map(|r| r.sample())
                .collect()
        }
    };
    let (model, fit) = fit_polynomial(&samples, cfg.transfer.degree).ctx("transfer")?;
    let mut samples_csv = format!("{TRANSFER_CSV_HEADER}\n");
    for s in &samples {
        samples_csv.push_str(&format!("{},{},{}\n", s.w_norm, s.x_norm, s.volts));
    }
    let coeffs = match &model.kind {
        TransferKind::FittedPolynomial(c) => c.clone(),
        TransferKind::IdealLinear => vec![model.intercept, model.slope],
    };
    let mut coeffs_csv = String::from("power,coefficient\n");
    for (p, c) in coeffs.iter().enumerate() {
        coeffs_csv.push_str(&format!("{p},{c}\n"));
    }
    let message = format!("degree {} fit, r_squared {}", cfg.transfer.degree, fit.r_squared);
    Ok(Output::ok(
        vec![
            Artifact::new("transfer_samples.csv", samples_csv.into_bytes()),
            Artifact::new("transfer_coeffs.csv", coeffs_csv.into_bytes()),
            Artifact::json("transfer_model.json", &json!({ "model": model, "fit": fit })),
        ],
        message,
    ))
}

fn readout(cfg: &RunConfig) -> Result<Output, CliError> {
    let frame = input_frame(cfg)?;
    let array = ctia_ipc::array::ArrayConfig {
        mode: ArrayMode::Readout,
        ..cfg.array
    };
    let exposure = cfg.readout.exposure.unwrap_or_else(|| cfg.wtc.max_exposure());
    if !(exposure.is_finite() && exposure >= 0.0) {
        return Err(Error::Validation(vec![format!("readout.exposure must be >= 0, got {exposure}")])).ctx("config");
    }
    let volts = readout_frame(&array, &cfg.pixel, &frame, exposure).ctx("simulator")?;
    let mut csv = String::with_capacity(24 * (volts.len() + 1));
    csv.push_str(READOUT_CSV_HEADER);
    csv.push('\n');
    for (i, v) in volts.iter().enumerate() {
        csv.push_str(&format!("{},{},{v}\n", i / frame.cols(), i % frame.cols()));
    }
    let message = format!("{}x{} pixels read out", frame.rows(), frame.cols());
    Ok(Output::ok(vec![Artifact::new("readout.csv", csv.into_bytes())], message))
}
