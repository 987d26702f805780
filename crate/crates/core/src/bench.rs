//! Staged, deterministic benchmark: load a synthetic two-class EDF fixture,
//! extract AR features, train LDA and run leave-one-out validation, timing
//! each stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::{s, Array2};
use serde::Serialize;
use thiserror::Error;

use crate::classify::{self, ClassifyError, CvScheme, DiscriminantKind, DiscriminantModel, FeatureMatrix};
use crate::evaluate::{self, EvalError};
use crate::formats::{self, ChannelSpec, Event, EventTable, FormatError, FormatId, OutputFormat, RecordHeader, SignalRecord};
use crate::par::{map_ordered, Execution};
use crate::preprocess::{self, PreprocessError};
use crate::rng::SplitMix64;
use crate::tsa::ar_features;

pub const DEFAULT_SEED: u64 = 20060301;
pub const DEFAULT_AR_ORDER: usize = 3;

pub const TRIGGER_EVENT: u16 = 1;
pub const CLASS_A_EVENT: u16 = 2;
pub const CLASS_B_EVENT: u16 = 3;
pub const CLASS_A_COEFFS: [f64; 2] = [1.2, -0.5];
pub const CLASS_B_COEFFS: [f64; 2] = [0.4, -0.3];

// Samples discarded before each trial so the AR recursion forgets its
// zero start.
const BURN_IN: usize = 200;
const PHYS_LIMIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchSize {
    /// 60 trials, 4 channels, 512 samples.
    Small,
    /// 360 trials, 8 channels, 1024 samples.
    Paper,
    Custom {
        trials: usize,
        channels: usize,
        samples: usize,
    },
}

impl BenchSize {
    /// `(trials, channels, samples)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            BenchSize::Small => (60, 4, 512),
            BenchSize::Paper => (360, 8, 1024),
            BenchSize::Custom {
                trials,
                channels,
                samples,
            } => (trials, channels, samples),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchSize::Small => "small",
            BenchSize::Paper => "paper",
            BenchSize::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub size: BenchSize,
    pub ar_order: usize,
    pub seed: u64,
    pub workdir: PathBuf,
    /// Scheduling of per-trial features and cross-validation folds.
    pub execution: Execution,
}

impl BenchConfig {
    pub fn new(size: BenchSize, workdir: impl Into<PathBuf>) -> Self {
        BenchConfig {
            size,
            ar_order: DEFAULT_AR_ORDER,
            seed: DEFAULT_SEED,
            workdir: workdir.into(),
            execution: Execution::Sequential,
        }
    }

    pub fn fixture_path(&self) -> PathBuf {
        let (t, c, n) = self.size.dims();
        self.workdir.join(format!("bench-{t}x{c}x{n}-{}.edf", self.seed))
    }

    fn validate(&self) -> Result<(), BenchError> {
        let (t, c, n) = self.size.dims();
        if t < 1 || c < 1 || n < 1 {
            return Err(BenchError::Config("trial, channel and sample counts must be at least 1".into()));
        }
        if self.ar_order < 1 || self.ar_order >= n {
            return Err(BenchError::Config(format!("AR order {} must be in 1..{n}", self.ar_order)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Features,
    Train,
    Crossval,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Load, Stage::Features, Stage::Train, Stage::Crossval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Crossval => "crossval",
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("fixture: {0}")]
    Fixture(#[source] FormatError),
    #[error("stage load: {0}")]
    Load(#[source] FormatError),
    #[error("stage features: {0}")]
    Features(String),
    #[error("stage train: {0}")]
    Train(#[source] ClassifyError),
    #[error("stage crossval: {0}")]
    Crossval(String),
}

impl BenchError {
    /// Stage that failed; None for configuration and fixture errors.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            BenchError::Config(_) | BenchError::Fixture(_) => None,
            BenchError::Load(_) => Some(Stage::Load),
            BenchError::Features(_) => Some(Stage::Features),
            BenchError::Train(_) => Some(Stage::Train),
            BenchError::Crossval(_) => Some(Stage::Crossval),
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            BenchError::Fixture(e) | BenchError::Load(e) => e.is_io(),
            _ => false,
        }
    }
}

impl From<PreprocessError> for BenchError {
    fn from(e: PreprocessError) -> Self {
        BenchError::Features(e.to_string())
    }
}

/// Builds the fixture record in memory.
///
/// Each trial is one 1-second EDF data record. Every channel of a trial is
/// an independent AR(2) process with unit Gaussian innovations, using
/// [`CLASS_A_COEFFS`] or [`CLASS_B_COEFFS`]. Classes alternate and are then
/// shuffled; a trigger event and a class event mark each trial start.
pub fn fixture_record(config: &BenchConfig) -> Result<SignalRecord, BenchError> {
    config.validate()?;
    let (trials, channels, samples) = config.size.dims();
    let mut rng = SplitMix64::new(config.seed);
    let mut classes: Vec<bool> = (0..trials).map(|t| t % 2 == 1).collect();
    rng.shuffle(&mut classes);

    let mut data = vec![Vec::with_capacity(trials * samples); channels];
    for &is_b in &classes {
        let a = if is_b { CLASS_B_COEFFS } else { CLASS_A_COEFFS };
        for row in data.iter_mut() {
            let (mut x1, mut x2) = (0.0, 0.0);
            for i in 0..BURN_IN + samples {
                let x = a[0] * x1 + a[1] * x2 + rng.next_gaussian();
                x2 = x1;
                x1 = x;
                if i >= BURN_IN {
                    row.push(x);
                }
            }
        }
    }

    let specs = (0..channels)
        .map(|c| ChannelSpec {
            label: format!("C{}", c + 1),
            transducer: String::new(),
            physical_dim: "uV".into(),
            phys_min: -PHYS_LIMIT,
            phys_max: PHYS_LIMIT,
            dig_min: -32768,
            dig_max: 32767,
            prefilter: String::new(),
            samples_per_record: samples,
        })
        .collect();
    let mut events = Vec::with_capacity(2 * trials);
    for (t, &is_b) in classes.iter().enumerate() {
        let pos = (t * samples) as u64;
        events.push(Event::new(pos, TRIGGER_EVENT));
        events.push(Event::new(pos, if is_b { CLASS_B_EVENT } else { CLASS_A_EVENT }));
    }
    let header = RecordHeader {
        format: FormatId::Edf,
        patient_id: "X X X X".into(),
        recording_id: format!("Startdate 01-MAR-2006 X bench seed={}", config.seed),
        start: NaiveDate::from_ymd_opt(2006, 3, 1).and_then(|d| d.and_hms_opt(0, 0, 0)),
        record_duration: 1.0,
        num_records: trials,
        channels: specs,
    };
    SignalRecord::new(header, data, EventTable::from_events(events)).map_err(BenchError::Fixture)
}

/// Writes the fixture and its event sidecar under `config.workdir`.
pub fn generate_fixture(config: &BenchConfig) -> Result<PathBuf, BenchError> {
    let record = fixture_record(config)?;
    std::fs::create_dir_all(&config.workdir).map_err(|source| {
        BenchError::Fixture(FormatError::PathUnwritable {
            path: config.workdir.clone(),
            source,
        })
    })?;
    let path = config.fixture_path();
    formats::write_record(&record, &path, OutputFormat::Edf).map_err(BenchError::Fixture)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTime {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub hardware: String,
    pub software: String,
}

impl Environment {
    pub fn detect(execution: Execution) -> Self {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_owned())
            })
            .unwrap_or_else(|| std::env::consts::ARCH.to_owned());
        let mode = match execution {
            Execution::Parallel if Execution::PARALLEL_AVAILABLE => "parallel",
            Execution::Parallel => "parallel requested, sequential build",
            Execution::Sequential => "sequential",
        };
        Environment {
            hardware: format!("{cpu}, {threads} threads"),
            software: format!(
                "biosig {} ({}, {}, {mode})",
                env!("CARGO_PKG_VERSION"),
                std::env::consts::OS,
                std::env::consts::ARCH
            ),
        }
    }

    pub fn describe(&self) -> String {
        format!("{}; {}", self.hardware, self.software)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Always in the order load, features, train, crossval.
    pub stage_times: Vec<StageTime>,
    pub total_s: f64,
    pub env: Environment,
    pub result_checksum: u64,
    pub loo_accuracy: f64,
    pub kappa: f64,
    pub config: BenchConfig,
    pub num_features: usize,
    pub ridge: f64,
    pub loo_predictions: Vec<String>,
}

fn millis(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

impl BenchReport {
    pub fn render_text(&self) -> String {
        let time = format!("{:.3}", self.total_s);
        let rows = [
            ("Hardware", "Software", "Time [s]"),
            (self.env.hardware.as_str(), self.env.software.as_str(), time.as_str()),
        ];
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (i, (h, s, t)) in rows.iter().enumerate() {
            let _ = writeln!(out, "{h:<w0$} | {s:<w1$} | {t}");
            if i == 0 {
                let _ = writeln!(out, "{}-+-{}-+-{}", "-".repeat(w0), "-".repeat(w1), "-".repeat(8));
            }
        }
        out.push('\n');
        for st in &self.stage_times {
            let _ = writeln!(out, "  {:<9} {:>9.3} s", st.stage.name(), st.seconds);
        }
        let (t, c, n) = self.config.size.dims();
        let _ = writeln!(out);
        let _ = writeln!(out, "  size      {} ({t} trials x {c} channels x {n} samples)", self.config.size.name());
        let _ = writeln!(out, "  features  {}", self.num_features);
        let _ = writeln!(out, "  accuracy  {:.4} (leave-one-out)", self.loo_accuracy);
        let _ = writeln!(out, "  kappa     {:.4}", self.kappa);
        let _ = writeln!(out, "  checksum  {:016x}", self.result_checksum);
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (trials, channels, samples) = self.config.size.dims();
        serde_json::json!({
            "stage_times": self.stage_times.iter().map(|s| serde_json::json!({
                "stage": s.stage.name(),
                "seconds": s.seconds,
            })).collect::<Vec<_>>(),
            "total_s": self.total_s,
            "env": self.env.describe(),
            "result_checksum": format!("{:016x}", self.result_checksum),
            "loo_accuracy": self.loo_accuracy,
            "kappa": self.kappa,
            "config": {
                "size": self.config.size.name(),
                "trials": trials,
                "channels": channels,
                "samples": samples,
                "ar_order": self.config.ar_order,
                "seed": self.config.seed,
                "workdir": self.config.workdir.display().to_string(),
                "execution": self.config.execution,
            },
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Text hashed into the result checksum: one `p <trial> <label>` line per
/// leave-one-out prediction in trial order, then one `m <class> <feature>
/// <value>` line per model mean rounded to 9 decimals.
pub fn canonical_rendering(predictions: &[String], model: &DiscriminantModel) -> String {
    let mut out = String::new();
    for (i, p) in predictions.iter().enumerate() {
        let _ = writeln!(out, "p {i} {p}");
    }
    for (c, row) in model.means.rows().into_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let mut s = format!("{v:.9}");
            if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
                s.remove(0);
            }
            let _ = writeln!(out, "m {} {j} {s}", model.labels[c]);
        }
    }
    out
}

/// AR coefficients then log-variance per channel, one row per trial.
pub fn trial_features(epochs: &ndarray::Array3<f64>, order: usize, exec: Execution) -> Array2<f64> {
    let trials: Vec<usize> = (0..epochs.shape()[0]).collect();
    let rows = map_ordered(&trials, exec, |&t| ar_features(epochs.slice(s![t, .., ..]), order).into_vec());
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("equal feature counts")
}

fn feature_names(channels: &[ChannelSpec], order: usize) -> Vec<String> {
    let mut names: Vec<String> = channels
        .iter()
        .flat_map(|c| (1..=order).map(move |k| format!("{}.ar{k}", c.label)))
        .collect();
    names.extend(channels.iter().map(|c| format!("{}.logvar", c.label)));
    names
}

/// Generates the fixture, then times load, features, train and crossval.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    let path = generate_fixture(config)?;
    run_on_file(config, &path)
}

/// Runs the timed stages against an existing fixture file.
pub fn run_on_file(config: &BenchConfig, path: &Path) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let exec = config.execution;
    let mut stage_times = Vec::with_capacity(4);
    let mut lap = |stage: Stage, since: Instant| {
        stage_times.push(StageTime {
            stage,
            seconds: millis(since.elapsed().as_secs_f64()),
        })
    };
    let start = Instant::now();

    let t = Instant::now();
    let record = formats::read_record(path).map_err(BenchError::Load)?;
    lap(Stage::Load, t);

    let t = Instant::now();
    let samples = record.header.channels.first().map_or(0, |c| c.samples_per_record);
    if samples == 0 {
        return Err(BenchError::Features("fixture has no channels".into()));
    }
    let label_map = BTreeMap::from([(CLASS_A_EVENT, "A".to_owned()), (CLASS_B_EVENT, "B".to_owned())]);
    let epochs = preprocess::extract_epochs(&record, TRIGGER_EVENT, 0, samples - 1, Some(&label_map))?;
    let y = epochs
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.clone().ok_or_else(|| BenchError::Features(format!("trial {i} has no class event"))))
        .collect::<Result<Vec<_>, _>>()?;
    let x = trial_features(&epochs.data, config.ar_order, exec);
    let names = feature_names(&record.header.channels, config.ar_order);
    let features = FeatureMatrix::with_names(x, y, names).map_err(|e| BenchError::Features(e.to_string()))?;
    lap(Stage::Features, t);

    let t = Instant::now();
    let model = classify::train(&features, DiscriminantKind::Lda, classify::DEFAULT_RIDGE_FLOOR).map_err(BenchError::Train)?;
    lap(Stage::Train, t);

    let t = Instant::now();
    let cv = classify::cross_validate_with(
        &features,
        DiscriminantKind::Lda,
        CvScheme::LeaveOneOut,
        classify::DEFAULT_RIDGE_FLOOR,
        exec,
    )
    .map_err(|e| BenchError::Crossval(e.to_string()))?;
    let metrics = |e: EvalError| BenchError::Crossval(e.to_string());
    let cm = evaluate::confusion(features.y(), &cv.predictions).map_err(metrics)?;
    let loo_accuracy = evaluate::accuracy(&cm).map_err(metrics)?;
    let kappa = evaluate::kappa(&cm).map_err(metrics)?.kappa;
    lap(Stage::Crossval, t);

    let result_checksum = fnv1a64(canonical_rendering(&cv.predictions, &model).as_bytes());
    let total_s = millis(start.elapsed().as_secs_f64());
    Ok(BenchReport {
        stage_times,
        total_s,
        env: Environment::detect(exec),
        result_checksum,
        loo_accuracy,
        kappa,
        config: config.clone(),
        num_features: features.num_features(),
        ridge: model.ridge,
        loo_predictions: cv.predictions,
    })
}
