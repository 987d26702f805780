//! Column-per-channel numeric CSV.

use std::io::{Read, Write};

use super::{ChannelSpec, EventTable, FormatError, FormatId, RecordHeader, SignalRecord, WriteSummary};
use crate::safeparse::parse_double;

// Digital range assigned to CSV channels, which carry no calibration.
const DIG_MIN: i32 = -32768;
const DIG_MAX: i32 = 32767;

fn malformed(line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::MalformedCsv {
        line,
        reason: reason.into(),
    }
}

pub(crate) fn read<R: Read>(reader: R) -> Result<SignalRecord, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut labels: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = rec
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i + 1, |p| p.line() as usize);
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let tokens: Vec<_> = rec.iter().map(parse_double).collect();
        match width {
            None => {
                width = Some(tokens.len());
                columns = vec![Vec::new(); tokens.len()];
                let ok = tokens.iter().filter(|t| t.ok).count();
                if 2 * ok < tokens.len() {
                    labels = Some(rec.iter().map(str::to_owned).collect());
                    continue;
                }
            }
            Some(w) if w != tokens.len() => {
                return Err(malformed(line, format!("{} fields, expected {w}", tokens.len())));
            }
            Some(_) => {}
        }
        for (col, t) in columns.iter_mut().zip(tokens) {
            col.push(t.value);
        }
    }
    let nch = width.ok_or_else(|| malformed(1, "empty CSV file"))?;
    if nch == 0 {
        return Err(malformed(1, "no columns"));
    }
    let rows = columns[0].len();
    let labels = labels.unwrap_or_else(|| (1..=nch).map(|c| format!("ch{c}")).collect());

    let (num_records, spr) = if rows == 0 { (0, 1) } else { (1, rows) };
    let channels = labels
        .into_iter()
        .zip(&columns)
        .map(|(label, col)| {
            let (lo, hi) = col
                .iter()
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let (phys_min, phys_max) = if lo < hi { (lo, hi) } else if lo == hi { (lo - 1.0, hi + 1.0) } else { (-1.0, 1.0) };
            ChannelSpec {
                label,
                transducer: String::new(),
                physical_dim: String::new(),
                phys_min,
                phys_max,
                dig_min: DIG_MIN,
                dig_max: DIG_MAX,
                prefilter: String::new(),
                samples_per_record: spr,
            }
        })
        .collect();
    // one sample per second: CSV carries no rate
    let header = RecordHeader {
        format: FormatId::Csv,
        patient_id: String::new(),
        recording_id: String::new(),
        start: None,
        record_duration: spr as f64,
        num_records,
        channels,
    };
    SignalRecord::new(header, columns, EventTable::default())
}

pub(crate) fn check_writable(record: &SignalRecord) -> Result<(), FormatError> {
    if !record.is_uniform() {
        return Err(FormatError::InvalidHeader(
            "CSV output needs every channel at the same sample count".into(),
        ));
    }
    Ok(())
}

pub(crate) fn write<W: Write>(record: &SignalRecord, out: W) -> Result<WriteSummary, FormatError> {
    let io = |e: csv::Error| FormatError::Io(e.into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(record.header.channels.iter().map(|c| c.label.as_str()))
        .map_err(io)?;
    let mut row = Vec::with_capacity(record.num_channels());
    for i in 0..record.len() {
        row.clear();
        row.extend(record.samples.iter().map(|ch| {
            let v = ch[i];
            if v.is_nan() {
                "NaN".to_owned()
            } else {
                format!("{v}")
            }
        }));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(WriteSummary::default())
}
