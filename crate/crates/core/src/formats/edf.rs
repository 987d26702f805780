//! EDF and BDF (16- and 24-bit) fixed-layout headers and data records.

use std::io::{self, Read, Write};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use super::{ChannelSpec, EventTable, FormatError, FormatId, RecordHeader, SignalRecord, WriteSummary};
use crate::safeparse::{parse_double, parse_int, parse_uint};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL_HEADER: usize = 256;
// label, transducer, physical_dim, phys_min, phys_max, dig_min, dig_max,
// prefilter, samples_per_record, reserved
const SIGNAL_FIELDS: [usize; 10] = [16, 80, 8, 8, 8, 8, 8, 80, 8, 32];
const MAX_SIGNALS: usize = 9999;
const MAX_EDF_SAMPLES_PER_RECORD: usize = 61440 / 2;
// Refuse headers whose single data record would exceed this.
const MAX_RECORD_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Flavor {
    Edf,
    Bdf,
}

impl Flavor {
    fn sample_bytes(self) -> usize {
        match self {
            Flavor::Edf => 2,
            Flavor::Bdf => 3,
        }
    }

    fn format_id(self) -> FormatId {
        match self {
            Flavor::Edf => FormatId::Edf,
            Flavor::Bdf => FormatId::Bdf,
        }
    }
}

fn invalid(msg: impl Into<String>) -> FormatError {
    FormatError::InvalidHeader(msg.into())
}

fn text_field(bytes: &[u8]) -> String {
    let s = String::from_utf8_lossy(bytes);
    s.trim_end_matches([' ', '\0']).to_owned()
}

/// Reads until `buf` is full or the stream ends; returns bytes read.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn two_digits(bytes: &[u8], what: &str) -> Result<u32, FormatError> {
    parse_uint(bytes)
        .filter(|_| bytes.len() == 2)
        .map(|v| v as u32)
        .ok_or_else(|| invalid(format!("unparseable {what} {:?}", String::from_utf8_lossy(bytes))))
}

fn parse_start(date: &[u8], time: &[u8]) -> Result<NaiveDateTime, FormatError> {
    let day = two_digits(&date[0..2], "day")?;
    let month = two_digits(&date[3..5], "month")?;
    let yy = two_digits(&date[6..8], "year")?;
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    let hour = two_digits(&time[0..2], "hour")?;
    let minute = two_digits(&time[3..5], "minute")?;
    let second = two_digits(&time[6..8], "second")?;
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, second))
        .ok_or_else(|| {
            invalid(format!(
                "invalid start {}/{}",
                String::from_utf8_lossy(date),
                String::from_utf8_lossy(time)
            ))
        })
}

fn decode_sample(flavor: Flavor, b: &[u8]) -> i32 {
    match flavor {
        Flavor::Edf => i16::from_le_bytes([b[0], b[1]]) as i32,
        // sign-extend 24-bit two's complement
        Flavor::Bdf => (i32::from_le_bytes([0, b[0], b[1], b[2]])) >> 8,
    }
}

pub(crate) fn read<R: Read>(mut reader: R, flavor: Flavor) -> Result<SignalRecord, FormatError> {
    let mut fixed = [0u8; FIXED_HEADER];
    if read_full(&mut reader, &mut fixed)? < FIXED_HEADER {
        return Err(invalid("file shorter than the 256-byte fixed header"));
    }
    let version_ok = match flavor {
        Flavor::Edf => fixed[0] == b'0' && fixed[1..8].iter().all(|&b| b == b' '),
        Flavor::Bdf => fixed[0] == 0xFF && &fixed[1..8] == b"BIOSEMI",
    };
    if !version_ok {
        return Err(invalid("bad version field"));
    }
    let patient_id = text_field(&fixed[8..88]);
    let recording_id = text_field(&fixed[88..168]);
    let start = parse_start(&fixed[168..176], &fixed[176..184])?;
    let header_bytes =
        parse_uint(&fixed[184..192]).ok_or_else(|| invalid("unparseable header size"))?;
    let num_records =
        parse_int(&fixed[236..244]).ok_or_else(|| invalid("unparseable record count"))?;
    if num_records < -1 {
        return Err(invalid(format!("record count {num_records}")));
    }
    let duration = parse_double(&fixed[244..252]);
    let record_duration = duration
        .get()
        .filter(|d| d.is_finite() && *d > 0.0)
        .ok_or_else(|| invalid(format!("record duration {:?}", duration.text)))?;
    let ns = parse_uint(&fixed[252..256])
        .filter(|&n| n >= 1 && n as usize <= MAX_SIGNALS)
        .ok_or_else(|| invalid("unparseable or zero signal count"))? as usize;
    if header_bytes != ((ns + 1) * PER_SIGNAL_HEADER) as u64 {
        return Err(invalid(format!(
            "header size {header_bytes} does not match {ns} signals"
        )));
    }

    let mut sig = vec![0u8; ns * PER_SIGNAL_HEADER];
    if read_full(&mut reader, &mut sig)? < sig.len() {
        return Err(invalid("signal headers truncated"));
    }
    let field = |k: usize, i: usize| -> &[u8] {
        let base: usize = SIGNAL_FIELDS[..k].iter().sum::<usize>() * ns;
        let w = SIGNAL_FIELDS[k];
        &sig[base + i * w..base + (i + 1) * w]
    };
    let mut channels = Vec::with_capacity(ns);
    for i in 0..ns {
        let number = |k: usize, what: &str| {
            parse_double(field(k, i))
                .get()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(format!("signal {i}: unparseable {what}")))
        };
        let integer = |k: usize, what: &str| {
            parse_int(field(k, i))
                .and_then(|v| i32::try_from(v).ok())
                .ok_or_else(|| invalid(format!("signal {i}: unparseable {what}")))
        };
        let spec = ChannelSpec {
            label: text_field(field(0, i)),
            transducer: text_field(field(1, i)),
            physical_dim: text_field(field(2, i)),
            phys_min: number(3, "physical minimum")?,
            phys_max: number(4, "physical maximum")?,
            dig_min: integer(5, "digital minimum")?,
            dig_max: integer(6, "digital maximum")?,
            prefilter: text_field(field(7, i)),
            samples_per_record: parse_uint(field(8, i))
                .filter(|&n| n >= 1)
                .ok_or_else(|| invalid(format!("signal {i}: unparseable samples per record")))?
                as usize,
        };
        spec.check()?;
        channels.push(spec);
    }

    let width = flavor.sample_bytes();
    let record_bytes = channels
        .iter()
        .try_fold(0usize, |acc, c| acc.checked_add(c.samples_per_record.checked_mul(width)?))
        .filter(|&b| b <= MAX_RECORD_BYTES)
        .ok_or_else(|| invalid("data record size too large"))?;

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); ns];
    let mut buf = vec![0u8; record_bytes];
    let mut available = 0usize;
    loop {
        if num_records >= 0 && available as i64 == num_records {
            break;
        }
        let got = read_full(&mut reader, &mut buf)?;
        if got == 0 {
            break;
        }
        if got < record_bytes {
            return Err(FormatError::TruncatedFile {
                declared: num_records,
                available,
            });
        }
        let mut off = 0;
        for (spec, row) in channels.iter().zip(samples.iter_mut()) {
            let n = spec.samples_per_record;
            let scale = spec.scale();
            let offset = spec.offset();
            row.extend(buf[off..off + n * width].chunks_exact(width).map(|b| {
                let d = decode_sample(flavor, b);
                if d < spec.dig_min || d > spec.dig_max {
                    f64::NAN
                } else {
                    scale * d as f64 + offset
                }
            }));
            off += n * width;
        }
        available += 1;
    }
    if num_records >= 0 && (available as i64) < num_records {
        return Err(FormatError::TruncatedFile {
            declared: num_records,
            available,
        });
    }

    let header = RecordHeader {
        format: flavor.format_id(),
        patient_id,
        recording_id,
        start: Some(start),
        record_duration,
        num_records: available,
        channels,
    };
    SignalRecord::new(header, samples, EventTable::default())
}

/// Renders `v` in at most `width` characters, shortest exact form first.
pub(crate) fn render_number(v: f64, width: usize) -> Option<String> {
    let exact = format!("{v}");
    if exact.len() <= width {
        return Some(exact);
    }
    let exact_exp = format!("{v:e}");
    if exact_exp.len() <= width {
        return Some(exact_exp);
    }
    for prec in (0..width).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= width {
            return Some(s);
        }
    }
    for prec in (0..width).rev() {
        let s = format!("{v:.prec$e}");
        if s.len() <= width {
            return Some(s);
        }
    }
    None
}

fn put(dst: &mut Vec<u8>, text: &str, width: usize, what: &str) -> Result<(), FormatError> {
    if text.len() > width {
        return Err(invalid(format!("{what} {text:?} longer than {width} bytes")));
    }
    if !text.bytes().all(|b| (0x20..=0x7E).contains(&b)) {
        return Err(invalid(format!("{what} {text:?} is not printable ASCII")));
    }
    dst.extend_from_slice(text.as_bytes());
    dst.resize(dst.len() + width - text.len(), b' ');
    Ok(())
}

fn put_number(dst: &mut Vec<u8>, v: f64, width: usize, what: &str) -> Result<f64, FormatError> {
    if !v.is_finite() {
        return Err(FormatError::NonFiniteHeaderField(what.to_owned()));
    }
    let s = render_number(v, width)
        .ok_or_else(|| invalid(format!("{what} {v} does not fit in {width} bytes")))?;
    put(dst, &s, width, what)?;
    // Digitising with the rendered value keeps writer and reader scaling identical.
    Ok(parse_double(&s).value)
}

/// Header bytes plus the calibration a reader will reconstruct from them.
pub(crate) struct Prepared {
    header: Vec<u8>,
    channels: Vec<ChannelSpec>,
}

pub(crate) fn prepare(record: &SignalRecord) -> Result<Prepared, FormatError> {
    let h = &record.header;
    let ns = h.channels.len();
    if ns == 0 || ns > MAX_SIGNALS {
        return Err(invalid(format!("{ns} signals")));
    }
    let mut out = Vec::with_capacity((ns + 1) * PER_SIGNAL_HEADER);
    put(&mut out, "0", 8, "version")?;
    put(&mut out, &h.patient_id, 80, "patient id")?;
    put(&mut out, &h.recording_id, 80, "recording id")?;
    let start = h.start.unwrap_or_else(|| {
        NaiveDate::from_ymd_opt(1985, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid default date")
    });
    if !(1985..=2084).contains(&start.year()) {
        return Err(invalid(format!("start year {} outside 1985-2084", start.year())));
    }
    let date = format!("{:02}.{:02}.{:02}", start.day(), start.month(), start.year() % 100);
    let time = format!("{:02}.{:02}.{:02}", start.hour(), start.minute(), start.second());
    put(&mut out, &date, 8, "start date")?;
    put(&mut out, &time, 8, "start time")?;
    put(&mut out, &((ns + 1) * PER_SIGNAL_HEADER).to_string(), 8, "header size")?;
    put(&mut out, "", 44, "reserved")?;
    put(&mut out, &h.num_records.to_string(), 8, "record count")?;
    let written_duration = put_number(&mut out, h.record_duration, 8, "record duration")?;
    if !(written_duration > 0.0) {
        return Err(invalid("record duration must be positive"));
    }
    put(&mut out, &ns.to_string(), 4, "signal count")?;

    let mut channels = h.channels.clone();
    for c in &channels {
        if c.samples_per_record == 0 || c.samples_per_record > MAX_EDF_SAMPLES_PER_RECORD {
            return Err(invalid(format!(
                "channel {:?}: {} samples per record",
                c.label, c.samples_per_record
            )));
        }
        if c.dig_min < i16::MIN as i32 || c.dig_max > i16::MAX as i32 {
            return Err(invalid(format!("channel {:?}: digital range exceeds 16 bits", c.label)));
        }
        c.check()?;
    }
    for c in &channels {
        put(&mut out, &c.label, 16, "label")?;
    }
    for c in &channels {
        put(&mut out, &c.transducer, 80, "transducer")?;
    }
    for c in &channels {
        put(&mut out, &c.physical_dim, 8, "physical dimension")?;
    }
    for c in channels.iter_mut() {
        c.phys_min = put_number(&mut out, c.phys_min, 8, "physical minimum")?;
    }
    for c in channels.iter_mut() {
        c.phys_max = put_number(&mut out, c.phys_max, 8, "physical maximum")?;
    }
    for c in &channels {
        put(&mut out, &c.dig_min.to_string(), 8, "digital minimum")?;
    }
    for c in &channels {
        put(&mut out, &c.dig_max.to_string(), 8, "digital maximum")?;
    }
    for c in &channels {
        put(&mut out, &c.prefilter, 80, "prefilter")?;
    }
    for c in &channels {
        put(&mut out, &c.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for _ in &channels {
        put(&mut out, "", 32, "reserved")?;
    }
    debug_assert_eq!(out.len(), (ns + 1) * PER_SIGNAL_HEADER);
    Ok(Prepared {
        header: out,
        channels,
    })
}

pub(crate) fn write<W: Write>(
    prepared: &Prepared,
    record: &SignalRecord,
    out: &mut W,
) -> Result<WriteSummary, FormatError> {
    out.write_all(&prepared.header)?;
    let mut summary = WriteSummary::default();
    let mut buf = Vec::new();
    for r in 0..record.header.num_records {
        buf.clear();
        for (spec, row) in prepared.channels.iter().zip(&record.samples) {
            let n = spec.samples_per_record;
            for &x in &row[r * n..(r + 1) * n] {
                let code = match spec.to_digital(x) {
                    None => spec.dig_max,
                    Some((d, clamped)) => {
                        summary.clamped += clamped as usize;
                        d
                    }
                };
                buf.extend_from_slice(&(code as i16).to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::testutil::{channel, record};

    #[test]
    fn header_is_byte_exact() {
        let ch = channel("Fp1", (-100.0, 100.0), (-2048, 2047), 2);
        let rec = record(vec![ch], 1, vec![vec![0.0, 1.0]]);
        let p = prepare(&rec).unwrap();
        let h = &p.header;
        assert_eq!(h.len(), 512);
        assert_eq!(&h[0..8], b"0       ");
        assert_eq!(&h[168..176], b"01.03.06");
        assert_eq!(&h[176..184], b"12.30.00");
        assert_eq!(&h[184..192], b"512     ");
        assert_eq!(&h[236..244], b"1       ");
        assert_eq!(&h[244..252], b"1       ");
        assert_eq!(&h[252..256], b"1   ");
        assert_eq!(&h[256..272], b"Fp1             ");
        // phys_min sits after label(16) + transducer(80) + dim(8)
        assert_eq!(&h[360..368], b"-100    ");
        assert_eq!(&h[376..384], b"-2048   ");
        assert_eq!(&h[384..392], b"2047    ");
        assert_eq!(&h[472..480], b"2       ");
    }

    #[test]
    fn year_pivot() {
        assert_eq!(parse_start(b"01.01.85", b"00.00.00").unwrap().year(), 1985);
        assert_eq!(parse_start(b"01.01.99", b"00.00.00").unwrap().year(), 1999);
        assert_eq!(parse_start(b"01.01.00", b"00.00.00").unwrap().year(), 2000);
        assert_eq!(parse_start(b"31.12.84", b"23.59.59").unwrap().year(), 2084);
        assert!(parse_start(b"32.01.00", b"00.00.00").is_err());
        assert!(parse_start(b"aa.01.00", b"00.00.00").is_err());
    }

    #[test]
    fn renders_numbers_into_field_width() {
        assert_eq!(render_number(-100.0, 8).unwrap(), "-100");
        assert_eq!(render_number(0.1, 8).unwrap(), "0.1");
        assert_eq!(render_number(1.0 / 3.0, 8).unwrap(), "0.333333");
        assert_eq!(render_number(-3276.75, 8).unwrap(), "-3276.75");
        assert_eq!(render_number(1e20, 8).unwrap(), "1e20");
        assert!(render_number(-1.5e300, 5).is_none());
        assert_eq!(render_number(-1.234e-300, 4).unwrap(), "-0.0");
    }

    #[test]
    fn truncated_data_is_reported() {
        let ch = channel("a", (-1.0, 1.0), (-100, 100), 4);
        let rec = record(vec![ch], 3, vec![vec![0.0; 12]]);
        let p = prepare(&rec).unwrap();
        let mut bytes = Vec::new();
        write(&p, &rec, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 9);
        match read(&bytes[..], Flavor::Edf) {
            Err(FormatError::TruncatedFile { declared: 3, available: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_record_count_is_resolved_by_scanning() {
        let ch = channel("a", (-1.0, 1.0), (-100, 100), 2);
        let rec = record(vec![ch], 3, vec![vec![0.0; 6]]);
        let p = prepare(&rec).unwrap();
        let mut bytes = Vec::new();
        write(&p, &rec, &mut bytes).unwrap();
        bytes[236..244].copy_from_slice(b"-1      ");
        let back = read(&bytes[..], Flavor::Edf).unwrap();
        assert_eq!(back.header.num_records, 3);
        bytes.pop();
        assert!(matches!(
            read(&bytes[..], Flavor::Edf),
            Err(FormatError::TruncatedFile { declared: -1, available: 2 })
        ));
    }

    #[test]
    fn rejects_inverted_digital_range_and_size_mismatch() {
        let ch = channel("a", (-1.0, 1.0), (-100, 100), 1);
        let rec = record(vec![ch], 1, vec![vec![0.0]]);
        let p = prepare(&rec).unwrap();
        let mut bytes = Vec::new();
        write(&p, &rec, &mut bytes).unwrap();

        let mut swapped = bytes.clone();
        // dig_min field of signal 0 -> 500
        swapped[256 + 120..256 + 128].copy_from_slice(b"500     ");
        assert!(matches!(read(&swapped[..], Flavor::Edf), Err(FormatError::InvalidHeader(_))));

        let mut size = bytes.clone();
        size[184..192].copy_from_slice(b"768     ");
        assert!(matches!(read(&size[..], Flavor::Edf), Err(FormatError::InvalidHeader(_))));

        let mut hostile = bytes;
        hostile[244..252].copy_from_slice(b"unix('x'");
        assert!(matches!(read(&hostile[..], Flavor::Edf), Err(FormatError::InvalidHeader(_))));
    }

    #[test]
    fn bdf_24_bit_samples() {
        let mut bytes = Vec::new();
        bytes.push(0xFF);
        bytes.extend_from_slice(b"BIOSEMI");
        let mut rest = Vec::new();
        put(&mut rest, "", 80, "p").unwrap();
        put(&mut rest, "", 80, "r").unwrap();
        put(&mut rest, "01.03.06", 8, "d").unwrap();
        put(&mut rest, "10.00.00", 8, "t").unwrap();
        put(&mut rest, "512", 8, "h").unwrap();
        put(&mut rest, "24BIT", 44, "x").unwrap();
        put(&mut rest, "1", 8, "n").unwrap();
        put(&mut rest, "1", 8, "d").unwrap();
        put(&mut rest, "1", 4, "s").unwrap();
        for (v, w) in [
            ("A1", 16),
            ("", 80),
            ("uV", 8),
            ("-8388608", 8),
            ("8388607", 8),
            ("-8388608", 8),
            ("8388607", 8),
            ("", 80),
            ("3", 8),
            ("", 32),
        ] {
            put(&mut rest, v, w, "f").unwrap();
        }
        bytes.extend(rest);
        for d in [-8_388_608_i32, -1, 8_388_607] {
            bytes.extend_from_slice(&d.to_le_bytes()[..3]);
        }
        let rec = read(&bytes[..], Flavor::Bdf).unwrap();
        assert_eq!(rec.header.format, FormatId::Bdf);
        assert_eq!(rec.samples[0], vec![-8_388_608.0, -1.0, 8_388_607.0]);
    }
}
