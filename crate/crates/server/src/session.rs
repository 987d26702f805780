//! One open recording with its editable event list.

use std::io;
use std::path::{Path, PathBuf};

use biosig::formats::{self, Event, EventTable, FormatError, SignalRecord, NAN_RUN_EVENT};
use biosig::safeparse::parse_uint;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is read-only")]
    ReadOnly,
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("event id {0} was already issued")]
    IdReuse(u64),
    #[error("no event with id {0}")]
    NotFound(u64),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("start {start} is beyond the last sample ({len} samples)")]
    BeyondEnd { start: u64, len: u64 },
    #[error("cannot save events: {0}")]
    Save(#[source] FormatError),
}

impl From<io::Error> for SessionError {
    fn from(e: io::Error) -> Self {
        SessionError::Save(FormatError::Io(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoredEvent {
    pub id: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Body of `POST /api/events`. `type` is taken wide so out-of-range codes
/// are reported as invalid rather than as a parse failure.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewEvent {
    pub position: u64,
    #[serde(rename = "type")]
    pub type_code: u64,
    #[serde(default)]
    pub channel: u32,
    #[serde(default)]
    pub duration: u64,
    #[serde(default)]
    pub label: Option<String>,
    /// Requested id; must not be one that was already issued.
    #[serde(default)]
    pub id: Option<u64>,
}

#[derive(Debug)]
pub struct ViewSession {
    record: SignalRecord,
    path: PathBuf,
    events: Vec<StoredEvent>,
    dirty: bool,
    readonly: bool,
    next_event_id: u64,
}

impl ViewSession {
    /// Loads `path` (and its sidecar) and numbers the existing events from 1
    /// in position order.
    pub fn open(path: impl AsRef<Path>, readonly: bool) -> Result<Self, FormatError> {
        let path = path.as_ref().to_path_buf();
        let record = formats::read_record(&path)?;
        Ok(Self::from_record(record, path, readonly))
    }

    pub fn from_record(record: SignalRecord, path: PathBuf, readonly: bool) -> Self {
        let events: Vec<StoredEvent> = record
            .events
            .iter()
            .cloned()
            .zip(1..)
            .map(|(event, id)| StoredEvent { id, event })
            .collect();
        let next_event_id = events.len() as u64 + 1;
        ViewSession {
            record,
            path,
            events,
            dirty: false,
            readonly,
            next_event_id,
        }
    }

    pub fn record(&self) -> &SignalRecord {
        &self.record
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn is_readonly(&self) -> bool {
        self.readonly
    }

    pub fn next_event_id(&self) -> u64 {
        self.next_event_id
    }

    /// Events by position, then id.
    pub fn events(&self) -> Vec<StoredEvent> {
        let mut out = self.events.clone();
        out.sort_by_key(|e| (e.event.position, e.id));
        out
    }

    fn channel_len(&self, channel: u32) -> Option<u64> {
        match channel {
            0 => Some(self.record.len() as u64),
            c => self.record.samples.get(c as usize - 1).map(|s| s.len() as u64),
        }
    }

    pub fn add_event(&mut self, req: NewEvent) -> Result<StoredEvent, SessionError> {
        if self.readonly {
            return Err(SessionError::ReadOnly);
        }
        let type_code = match u16::try_from(req.type_code) {
            Ok(t) if (1..=65534).contains(&t) && t != NAN_RUN_EVENT => t,
            _ => {
                return Err(SessionError::InvalidEvent(format!(
                    "type {} must be in 1..=65534 and not the reserved {NAN_RUN_EVENT}",
                    req.type_code
                )))
            }
        };
        let len = self.channel_len(req.channel).ok_or_else(|| {
            SessionError::InvalidEvent(format!(
                "channel {} does not exist ({} channels)",
                req.channel,
                self.record.num_channels()
            ))
        })?;
        if req.position >= len {
            return Err(SessionError::InvalidEvent(format!(
                "position {} outside 0..{len}",
                req.position
            )));
        }
        if req.position.checked_add(req.duration).is_none_or(|end| end > len) {
            return Err(SessionError::InvalidEvent(format!(
                "duration {} runs past the end ({len} samples)",
                req.duration
            )));
        }
        let id = match req.id {
            Some(id) if id < self.next_event_id => return Err(SessionError::IdReuse(id)),
            Some(id) => id,
            None => self.next_event_id,
        };
        let stored = StoredEvent {
            id,
            event: Event {
                position: req.position,
                type_code,
                channel: req.channel,
                duration: req.duration,
                label: req.label,
            },
        };
        self.next_event_id = id + 1;
        self.events.push(stored.clone());
        self.dirty = true;
        Ok(stored)
    }

    pub fn delete_event(&mut self, id: u64) -> Result<StoredEvent, SessionError> {
        if self.readonly {
            return Err(SessionError::ReadOnly);
        }
        let at = self
            .events
            .iter()
            .position(|e| e.id == id)
            .ok_or(SessionError::NotFound(id))?;
        self.dirty = true;
        Ok(self.events.remove(at))
    }

    pub fn sidecar_path(&self) -> PathBuf {
        formats::sidecar_path(&self.path)
    }

    /// Writes the sidecar atomically: all events go to a temporary file
    /// next to it, which then replaces the sidecar by rename.
    pub fn save(&mut self) -> Result<PathBuf, SessionError> {
        self.save_with_hook(|_| Ok(()))
    }

    /// As [`save`](Self::save), calling `before_rename` with the temporary
    /// path once it is fully written. An error from the hook aborts the save
    /// and leaves the existing sidecar untouched.
    pub fn save_with_hook(
        &mut self,
        before_rename: impl FnOnce(&Path) -> io::Result<()>,
    ) -> Result<PathBuf, SessionError> {
        if self.readonly {
            return Err(SessionError::ReadOnly);
        }
        let target = self.sidecar_path();
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = target.with_file_name(format!(".{name}.{}.tmp", std::process::id()));

        let mut all: Vec<Event> = self.events().into_iter().map(|e| e.event).collect();
        all.extend(formats::nan_run_events(&self.record.samples));
        let table = EventTable::from_events(all);

        let result = (|| {
            formats::write_events_sidecar(&table, &tmp).map_err(SessionError::Save)?;
            std::fs::File::open(&tmp)?.sync_all()?;
            before_rename(&tmp)?;
            std::fs::rename(&tmp, &target)?;
            Ok(())
        })();
        if let Err(e) = result {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
        self.dirty = false;
        Ok(target)
    }

    pub fn header_json(&self) -> Value {
        let h = &self.record.header;
        let format = h.format.base().map_or("Unknown", |b| b.name());
        let channels: Vec<Value> = h
            .channels
            .iter()
            .zip(&self.record.samples)
            .enumerate()
            .map(|(i, (c, s))| {
                json!({
                    "index": i + 1,
                    "label": c.label,
                    "transducer": c.transducer,
                    "physical_dim": c.physical_dim,
                    "phys_min": c.phys_min,
                    "phys_max": c.phys_max,
                    "dig_min": c.dig_min,
                    "dig_max": c.dig_max,
                    "prefilter": c.prefilter,
                    "samples_per_record": c.samples_per_record,
                    "rate": c.rate(h.record_duration),
                    "samples": s.len(),
                })
            })
            .collect();
        json!({
            "format": format,
            "patient_id": h.patient_id,
            "recording_id": h.recording_id,
            "start": h.start.map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string()),
            "record_duration": h.record_duration,
            "num_records": h.num_records,
            "duration": h.total_duration(),
            "channels": channels,
        })
    }

    /// Signal window for `GET /api/data`.
    pub fn window(&self, q: &DataQuery) -> Result<Value, SessionError> {
        let nch = self.record.num_channels();
        let channels: Vec<usize> = match &q.channels {
            None => (0..nch).collect(),
            Some(list) => list
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    parse_uint(item)
                        .and_then(|n| (1..=nch as u64).contains(&n).then_some(n as usize - 1))
                        .or_else(|| self.record.header.channels.iter().position(|c| c.label == item))
                        .ok_or_else(|| SessionError::BadRequest(format!("unknown channel {item:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        if channels.is_empty() {
            return Err(SessionError::BadRequest("no channels selected".into()));
        }
        let longest = channels.iter().map(|&c| self.record.samples[c].len()).max().unwrap_or(0) as u64;
        if q.start >= longest {
            return Err(SessionError::BeyondEnd {
                start: q.start,
                len: longest,
            });
        }
        let decimated = q.decimate > 1;
        let mut actual = 0;
        let out: Vec<Value> = channels
            .iter()
            .map(|&c| {
                let row = &self.record.samples[c];
                let from = (q.start as usize).min(row.len());
                let to = from.saturating_add(q.count as usize).min(row.len());
                let slice = &row[from..to];
                actual = actual.max(slice.len());
                let data: Vec<Value> = if decimated {
                    slice.chunks(q.decimate as usize).map(min_max).collect()
                } else {
                    slice.iter().map(|&v| number(v)).collect()
                };
                json!({
                    "index": c + 1,
                    "label": self.record.header.channels[c].label,
                    "count": slice.len(),
                    "data": data,
                })
            })
            .collect();
        Ok(json!({
            "start": q.start,
            "count": actual,
            "decimate": q.decimate,
            "decimated": decimated,
            "channels": out,
        }))
    }
}

fn number(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// `[min, max]` over the valid samples of a bucket; nulls when none are.
fn min_max(bucket: &[f64]) -> Value {
    let valid = bucket.iter().copied().filter(|v| !v.is_nan());
    let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        json!([null, null])
    } else {
        json!([number(lo), number(hi)])
    }
}

pub const DEFAULT_COUNT: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataQuery {
    pub start: u64,
    pub count: u64,
    pub channels: Option<String>,
    pub decimate: u64,
}

impl DataQuery {
    /// Parses raw query parameters; unknown keys are rejected.
    pub fn parse<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, SessionError> {
        let mut q = DataQuery {
            start: 0,
            count: DEFAULT_COUNT,
            channels: None,
            decimate: 1,
        };
        let number = |key: &str, v: &str| {
            parse_uint(v).ok_or_else(|| SessionError::BadRequest(format!("{key} must be a non-negative integer, got {v:?}")))
        };
        for (k, v) in pairs {
            match k {
                "start" => q.start = number(k, v)?,
                "count" => q.count = number(k, v)?,
                "decimate" => q.decimate = number(k, v)?,
                "channels" => q.channels = Some(v.to_owned()),
                other => return Err(SessionError::BadRequest(format!("unknown parameter {other:?}"))),
            }
        }
        if q.count == 0 {
            return Err(SessionError::BadRequest("count must be at least 1".into()));
        }
        if q.decimate == 0 {
            return Err(SessionError::BadRequest("decimate must be at least 1".into()));
        }
        Ok(q)
    }
}
