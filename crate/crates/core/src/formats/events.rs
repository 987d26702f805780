//! Event tables and their CSV sidecar files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::safeparse::parse_uint;

/// Reserved type marking a run of NaN samples (written by the EDF/CSV writers).
pub const NAN_RUN_EVENT: u16 = 0x7FFF;
/// Type appended by artifact marking.
pub const ARTIFACT_EVENT: u16 = 0x7FFE;

const SIDECAR_HEADER: [&str; 5] = ["position", "type", "channel", "duration", "label"];

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Event {
    /// Sample index, 0-based.
    pub position: u64,
    #[serde(rename = "type")]
    pub type_code: u16,
    /// 0 means all channels, otherwise 1-based channel number.
    pub channel: u32,
    /// Length in samples; 0 for instantaneous events.
    pub duration: u64,
    pub label: Option<String>,
}

impl Event {
    pub fn new(position: u64, type_code: u16) -> Self {
        Event {
            position,
            type_code,
            channel: 0,
            duration: 0,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// Events ordered by position; ties keep insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTable {
    events: Vec<Event>,
}

impl EventTable {
    pub fn from_events(mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| e.position);
        EventTable { events }
    }

    /// Inserts after any existing events at the same position.
    pub fn push(&mut self, event: Event) {
        let at = self.events.partition_point(|e| e.position <= event.position);
        self.events.insert(at, event);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn as_slice(&self) -> &[Event] {
        &self.events
    }

    pub fn of_type(&self, type_code: u16) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.type_code == type_code)
    }
}

impl IntoIterator for EventTable {
    type Item = Event;
    type IntoIter = std::vec::IntoIter<Event>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.into_iter()
    }
}

impl<'a> IntoIterator for &'a EventTable {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}

/// `<datafile>.evt.csv`
pub fn sidecar_path(data_path: impl AsRef<Path>) -> PathBuf {
    let mut s = data_path.as_ref().as_os_str().to_owned();
    s.push(".evt.csv");
    PathBuf::from(s)
}

fn malformed(row: usize, reason: impl Into<String>) -> FormatError {
    FormatError::MalformedSidecar {
        row,
        reason: reason.into(),
    }
}

pub fn read_events_sidecar(path: impl AsRef<Path>) -> Result<EventTable, FormatError> {
    let file = File::open(path)?;
    read_sidecar_from(BufReader::new(file))
}

pub(crate) fn read_sidecar_from<R: std::io::Read>(reader: R) -> Result<EventTable, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // rows are reported 1-based, the header being row 1
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if i == 0 {
            let header: Vec<&str> = rec.iter().map(str::trim).collect();
            if header != SIDECAR_HEADER {
                return Err(malformed(row, format!("unexpected header {header:?}")));
            }
            continue;
        }
        if rec.len() != 5 {
            return Err(malformed(row, format!("expected 5 columns, found {}", rec.len())));
        }
        let int = |k: usize, name: &str| {
            parse_uint(&rec[k]).ok_or_else(|| malformed(row, format!("bad {name} {:?}", &rec[k])))
        };
        let position = int(0, "position")?;
        let type_code = int(1, "type")?;
        if type_code == 0 || type_code > 0xFFFF {
            return Err(malformed(row, format!("type {type_code} out of range")));
        }
        let channel = u32::try_from(int(2, "channel")?)
            .map_err(|_| malformed(row, "channel out of range"))?;
        let duration = int(3, "duration")?;
        let label = (!rec[4].is_empty()).then(|| rec[4].to_owned());
        events.push(Event {
            position,
            type_code: type_code as u16,
            channel,
            duration,
            label,
        });
    }
    Ok(EventTable::from_events(events))
}

pub(crate) fn write_sidecar_to<W: Write>(events: &EventTable, writer: W) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| FormatError::Io(e.into());
    w.write_record(SIDECAR_HEADER).map_err(io)?;
    for e in events {
        w.write_record([
            e.position.to_string().as_str(),
            e.type_code.to_string().as_str(),
            e.channel.to_string().as_str(),
            e.duration.to_string().as_str(),
            e.label.as_deref().unwrap_or(""),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders the sidecar into memory.
pub fn render_events_sidecar(events: &EventTable) -> Vec<u8> {
    let mut out = Vec::new();
    write_sidecar_to(events, &mut out).expect("writing to memory");
    out
}

pub fn write_events_sidecar(events: &EventTable, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| FormatError::PathUnwritable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    write_sidecar_to(events, &mut out)?;
    out.flush()?;
    Ok(())
}
