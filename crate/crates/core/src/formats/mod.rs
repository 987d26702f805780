//! Signal container formats.
//!
//! Reading covers EDF, BDF, PCM WAV and numeric CSV, each optionally wrapped
//! in a single gzip member. Writing covers EDF and CSV. GDF is recognised by
//! [`detect_format`] but rejected by [`read_record`].
//!
//! Samples are held in physical units. Digital codes outside a channel's
//! `[dig_min, dig_max]` become NaN on read, which is how missing data enters
//! the rest of the pipeline.

mod csvdata;
mod detect;
mod edf;
mod events;
mod wav;

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use flate2::read::GzDecoder;
use thiserror::Error;

pub use detect::{detect_file, detect_format};
pub use events::{
    read_events_sidecar, render_events_sidecar, sidecar_path, write_events_sidecar, Event, EventTable, ARTIFACT_EVENT,
    NAN_RUN_EVENT,
};

/// Bytes inspected by [`detect_file`].
pub const DETECT_PREFIX_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unknown file format")]
    UnknownFormat,
    #[error("{0} files are recognized but not supported")]
    RecognizedUnsupported(FormatId),
    #[error("truncated file: header declares {declared} records but only {available} are present")]
    TruncatedFile { declared: i64, available: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("cannot write format {0}")]
    UnsupportedFormat(String),
    #[error("header field {0} is not finite")]
    NonFiniteHeaderField(String),
    #[error("cannot write {}: {source}", path.display())]
    PathUnwritable { path: PathBuf, source: io::Error },
    #[error("malformed event sidecar at row {row}: {reason}")]
    MalformedSidecar { row: usize, reason: String },
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FormatError {
    /// True for errors caused by the filesystem rather than file content.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io(_) | FormatError::PathUnwritable { .. })
    }
}

/// A concrete container format, without compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum BaseFormat {
    Edf,
    Bdf,
    Gdf,
    Wav,
    Csv,
}

impl BaseFormat {
    pub fn name(self) -> &'static str {
        match self {
            BaseFormat::Edf => "EDF",
            BaseFormat::Bdf => "BDF",
            BaseFormat::Gdf => "GDF",
            BaseFormat::Wav => "WAV",
            BaseFormat::Csv => "CSV",
        }
    }
}

/// Result of format detection.
///
/// Gzip wrapping is one level deep by construction: the wrapped value is a
/// [`BaseFormat`], and doubly-compressed input is reported as `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormatId {
    Edf,
    Bdf,
    /// Recognised by its magic bytes, not readable.
    Gdf,
    Wav,
    Csv,
    GzipWrapped(BaseFormat),
    Unknown,
}

impl FormatId {
    pub fn base(self) -> Option<BaseFormat> {
        match self {
            FormatId::Edf => Some(BaseFormat::Edf),
            FormatId::Bdf => Some(BaseFormat::Bdf),
            FormatId::Gdf => Some(BaseFormat::Gdf),
            FormatId::Wav => Some(BaseFormat::Wav),
            FormatId::Csv => Some(BaseFormat::Csv),
            FormatId::GzipWrapped(b) => Some(b),
            FormatId::Unknown => None,
        }
    }

    pub fn is_gzip(self) -> bool {
        matches!(self, FormatId::GzipWrapped(_))
    }

    fn from_base(base: BaseFormat) -> Self {
        match base {
            BaseFormat::Edf => FormatId::Edf,
            BaseFormat::Bdf => FormatId::Bdf,
            BaseFormat::Gdf => FormatId::Gdf,
            BaseFormat::Wav => FormatId::Wav,
            BaseFormat::Csv => FormatId::Csv,
        }
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatId::Gdf => f.write_str("GDF (unsupported)"),
            FormatId::GzipWrapped(BaseFormat::Gdf) => f.write_str("GDF (gzip, unsupported)"),
            FormatId::GzipWrapped(b) => write!(f, "{} (gzip)", b.name()),
            FormatId::Unknown => f.write_str("Unknown"),
            other => f.write_str(other.base().map_or("Unknown", BaseFormat::name)),
        }
    }
}

/// Output formats accepted by [`write_record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Edf,
    Csv,
}

/// Per-channel calibration and labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

impl ChannelSpec {
    /// A channel whose physical and digital ranges coincide.
    pub fn uncalibrated(label: impl Into<String>, dig_min: i32, dig_max: i32, spr: usize) -> Self {
        ChannelSpec {
            label: label.into(),
            transducer: String::new(),
            physical_dim: String::new(),
            phys_min: dig_min as f64,
            phys_max: dig_max as f64,
            dig_min,
            dig_max,
            prefilter: String::new(),
            samples_per_record: spr,
        }
    }

    pub fn scale(&self) -> f64 {
        (self.phys_max - self.phys_min) / (self.dig_max as f64 - self.dig_min as f64)
    }

    pub fn offset(&self) -> f64 {
        self.phys_min - self.scale() * self.dig_min as f64
    }

    /// Digital code to physical value; codes outside the digital range give NaN.
    pub fn to_physical(&self, digital: i32) -> f64 {
        if digital < self.dig_min || digital > self.dig_max {
            f64::NAN
        } else {
            self.scale() * digital as f64 + self.offset()
        }
    }

    /// Physical value to digital code, rounded half-to-even then clamped.
    /// The flag reports whether clamping changed the code. NaN maps to `None`.
    pub fn to_digital(&self, physical: f64) -> Option<(i32, bool)> {
        if physical.is_nan() {
            return None;
        }
        let scale = self.scale();
        let raw = if scale == 0.0 {
            self.dig_min as f64
        } else {
            ((physical - self.offset()) / scale).round_ties_even()
        };
        let lo = self.dig_min as f64;
        let hi = self.dig_max as f64;
        if raw < lo {
            Some((self.dig_min, true))
        } else if raw > hi {
            Some((self.dig_max, true))
        } else {
            Some((raw as i32, false))
        }
    }

    pub fn check(&self) -> Result<(), FormatError> {
        if self.dig_max <= self.dig_min {
            return Err(FormatError::InvalidHeader(format!(
                "channel {:?}: dig_max {} must exceed dig_min {}",
                self.label, self.dig_max, self.dig_min
            )));
        }
        Ok(())
    }

    /// Sampling rate in Hz given the record duration.
    pub fn rate(&self, record_duration: f64) -> f64 {
        self.samples_per_record as f64 / record_duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub format: FormatId,
    pub patient_id: String,
    pub recording_id: String,
    /// Start of recording; formats without a timestamp leave this empty.
    pub start: Option<NaiveDateTime>,
    /// Seconds per data record.
    pub record_duration: f64,
    pub num_records: usize,
    pub channels: Vec<ChannelSpec>,
}

impl RecordHeader {
    pub fn total_duration(&self) -> f64 {
        self.num_records as f64 * self.record_duration
    }

    pub fn samples_in_channel(&self, channel: usize) -> usize {
        self.num_records * self.channels[channel].samples_per_record
    }
}

/// Header, samples in physical units (NaN = missing) and events.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub header: RecordHeader,
    pub samples: Vec<Vec<f64>>,
    pub events: EventTable,
}

impl SignalRecord {
    /// Builds a record after checking channel count, row lengths and ranges.
    pub fn new(
        header: RecordHeader,
        samples: Vec<Vec<f64>>,
        events: EventTable,
    ) -> Result<Self, FormatError> {
        if samples.len() != header.channels.len() {
            return Err(FormatError::InvalidHeader(format!(
                "{} sample rows for {} channels",
                samples.len(),
                header.channels.len()
            )));
        }
        if !(header.record_duration > 0.0 && header.record_duration.is_finite()) {
            return Err(FormatError::InvalidHeader(format!(
                "record duration {} must be positive",
                header.record_duration
            )));
        }
        for (c, (spec, row)) in header.channels.iter().zip(&samples).enumerate() {
            spec.check()?;
            let expected = header.num_records * spec.samples_per_record;
            if row.len() != expected {
                return Err(FormatError::InvalidHeader(format!(
                    "channel {c} has {} samples, header implies {expected}",
                    row.len()
                )));
            }
        }
        Ok(SignalRecord {
            header,
            samples,
            events,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    /// Samples in channel 0, the grid on which event positions are expressed.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether every channel has the same number of samples.
    pub fn is_uniform(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].len() == w[1].len())
    }
}

/// What a write had to adjust.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteSummary {
    /// Finite samples clamped into the digital range.
    pub clamped: usize,
    /// NaN runs recorded as reserved events in the sidecar.
    pub nan_runs: usize,
}

/// Generates one reserved event per run of NaN samples in each channel.
///
/// Positions are in that channel's own sample grid; `channel` is 1-based.
pub fn nan_run_events(samples: &[Vec<f64>]) -> Vec<Event> {
    let mut out = Vec::new();
    for (c, row) in samples.iter().enumerate() {
        let mut i = 0;
        while i < row.len() {
            if row[i].is_nan() {
                let start = i;
                while i < row.len() && row[i].is_nan() {
                    i += 1;
                }
                out.push(Event {
                    position: start as u64,
                    type_code: NAN_RUN_EVENT,
                    channel: c as u32 + 1,
                    duration: (i - start) as u64,
                    label: None,
                });
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Sets samples covered by reserved NaN-run events to NaN and removes those
/// events from the table.
fn apply_nan_run_events(samples: &mut [Vec<f64>], events: EventTable) -> EventTable {
    let (nan_runs, kept): (Vec<Event>, Vec<Event>) = events
        .into_iter()
        .partition(|e| e.type_code == NAN_RUN_EVENT);
    for ev in nan_runs {
        let targets: Vec<usize> = if ev.channel == 0 {
            (0..samples.len()).collect()
        } else {
            vec![ev.channel as usize - 1]
        };
        for c in targets {
            if let Some(row) = samples.get_mut(c) {
                let start = (ev.position as usize).min(row.len());
                let end = start.saturating_add(ev.duration as usize).min(row.len());
                row[start..end].fill(f64::NAN);
            }
        }
    }
    EventTable::from_events(kept)
}

/// Reads a record from an already-detected stream.
///
/// `format` must be an uncompressed readable format; the caller is
/// responsible for unwrapping gzip.
pub fn read_stream<R: Read>(reader: R, format: BaseFormat) -> Result<SignalRecord, FormatError> {
    match format {
        BaseFormat::Edf => edf::read(reader, edf::Flavor::Edf),
        BaseFormat::Bdf => edf::read(reader, edf::Flavor::Bdf),
        BaseFormat::Wav => wav::read(reader),
        BaseFormat::Csv => csvdata::read(reader),
        BaseFormat::Gdf => Err(FormatError::RecognizedUnsupported(FormatId::Gdf)),
    }
}

fn read_prefix<R: Read>(reader: &mut R, limit: usize) -> io::Result<Vec<u8>> {
    let mut prefix = Vec::with_capacity(limit);
    reader.by_ref().take(limit as u64).read_to_end(&mut prefix)?;
    Ok(prefix)
}

/// Detects the format of `path` and reads it, decompressing gzip on the fly.
///
/// A sidecar event file is loaded when present; for `x.gz` the sidecar of
/// `x` is used if `x.gz` has none of its own.
pub fn read_record(path: impl AsRef<Path>) -> Result<SignalRecord, FormatError> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path)?);
    let prefix = read_prefix(&mut file, DETECT_PREFIX_LEN)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let format = detect_format(&prefix, name);
    let stream = io::Cursor::new(prefix).chain(file);

    let mut record = match format {
        FormatId::Unknown => return Err(FormatError::UnknownFormat),
        FormatId::Gdf | FormatId::GzipWrapped(BaseFormat::Gdf) => {
            return Err(FormatError::RecognizedUnsupported(format))
        }
        FormatId::GzipWrapped(base) => {
            let mut rec = read_stream(BufReader::new(GzDecoder::new(stream)), base)?;
            rec.header.format = FormatId::GzipWrapped(base);
            rec
        }
        plain => read_stream(stream, plain.base().expect("plain format"))?,
    };

    if let Some(sidecar) = find_sidecar(path) {
        let events = read_events_sidecar(&sidecar)?;
        record.events = apply_nan_run_events(&mut record.samples, events);
    }
    Ok(record)
}

fn find_sidecar(path: &Path) -> Option<PathBuf> {
    let own = sidecar_path(path);
    if own.is_file() {
        return Some(own);
    }
    let s = path.to_str()?;
    let stripped = s.strip_suffix(".gz")?;
    let inner = sidecar_path(Path::new(stripped));
    inner.is_file().then_some(inner)
}

/// Writes `record` to `path` plus its event sidecar.
///
/// NaN samples are stored as `dig_max` (EDF) or the literal `NaN` (CSV); in
/// both cases each NaN run is also recorded as a reserved event so a read
/// restores it exactly.
pub fn write_record(
    record: &SignalRecord,
    path: impl AsRef<Path>,
    format: OutputFormat,
) -> Result<WriteSummary, FormatError> {
    let path = path.as_ref();
    let create = |p: &Path| {
        File::create(p).map_err(|source| FormatError::PathUnwritable {
            path: p.to_path_buf(),
            source,
        })
    };
    let summary = match format {
        OutputFormat::Edf => {
            let prepared = edf::prepare(record)?;
            let mut out = io::BufWriter::new(create(path)?);
            let s = edf::write(&prepared, record, &mut out)?;
            io::Write::flush(&mut out)?;
            s
        }
        OutputFormat::Csv => {
            csvdata::check_writable(record)?;
            let out = create(path)?;
            csvdata::write(record, out)?
        }
    };

    let mut events: Vec<Event> = record
        .events
        .iter()
        .filter(|e| e.type_code != NAN_RUN_EVENT)
        .cloned()
        .collect();
    let nan_events = nan_run_events(&record.samples);
    let nan_runs = nan_events.len();
    events.extend(nan_events);
    write_events_sidecar(&EventTable::from_events(events), sidecar_path(path))?;
    Ok(WriteSummary { nan_runs, ..summary })
}
