//! RIFF/WAVE reader for 8- and 16-bit integer PCM.

use std::io::{self, Read};

use super::{ChannelSpec, EventTable, FormatError, FormatId, RecordHeader, SignalRecord};

const PCM: u16 = 1;

struct Fmt {
    channels: u16,
    rate: u32,
    bits: u16,
}

fn invalid(msg: impl Into<String>) -> FormatError {
    FormatError::InvalidHeader(msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn skip<R: Read>(r: &mut R, n: u64) -> Result<(), FormatError> {
    let skipped = io::copy(&mut r.take(n), &mut io::sink())?;
    if skipped < n {
        return Err(invalid("chunk extends past end of file"));
    }
    Ok(())
}

pub(crate) fn read<R: Read>(mut r: R) -> Result<SignalRecord, FormatError> {
    let mut riff = [0u8; 12];
    r.read_exact(&mut riff)
        .map_err(|_| invalid("file shorter than the RIFF header"))?;
    if &riff[0..4] != b"RIFF" || &riff[8..12] != b"WAVE" {
        return Err(invalid("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<Fmt> = None;
    let data = loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(invalid("no data chunk"));
            }
            Err(e) => return Err(e.into()),
        }
        let size = read_u32(&mut r).map_err(|_| invalid("chunk header truncated"))?;
        let padded = size as u64 + (size as u64 & 1);
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(invalid("fmt chunk too short"));
                }
                let mut b = [0u8; 16];
                r.read_exact(&mut b).map_err(|_| invalid("fmt chunk truncated"))?;
                let tag = u16::from_le_bytes([b[0], b[1]]);
                if tag != PCM {
                    return Err(invalid(format!("WAV encoding {tag} is not integer PCM")));
                }
                fmt = Some(Fmt {
                    channels: u16::from_le_bytes([b[2], b[3]]),
                    rate: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                    bits: u16::from_le_bytes([b[14], b[15]]),
                });
                skip(&mut r, padded - 16)?;
            }
            b"data" => {
                if fmt.is_none() {
                    return Err(invalid("data chunk before fmt chunk"));
                }
                let mut data = Vec::new();
                let limit = if size == u32::MAX { u64::MAX } else { size as u64 };
                r.by_ref().take(limit).read_to_end(&mut data)?;
                if size != u32::MAX && data.len() < size as usize {
                    return Err(FormatError::TruncatedFile {
                        declared: size as i64,
                        available: data.len(),
                    });
                }
                break data;
            }
            _ => skip(&mut r, padded)?,
        }
    };

    let fmt = fmt.expect("checked above");
    if fmt.channels == 0 || fmt.rate == 0 {
        return Err(invalid("WAV with zero channels or zero sample rate"));
    }
    let (width, dig_min, dig_max) = match fmt.bits {
        8 => (1usize, -128, 127),
        16 => (2, -32768, 32767),
        b => return Err(invalid(format!("{b}-bit WAV samples are not supported"))),
    };
    let nch = fmt.channels as usize;
    let frame = width * nch;
    let frames = data.len() / frame;
    let mut samples = vec![Vec::with_capacity(frames); nch];
    for f in data.chunks_exact(frame) {
        for (c, s) in f.chunks_exact(width).enumerate() {
            let d = match width {
                1 => s[0] as i32 - 128,
                _ => i16::from_le_bytes([s[0], s[1]]) as i32,
            };
            samples[c].push(d as f64);
        }
    }

    // One record holding every frame; an empty file gets zero records.
    let (num_records, spr) = if frames == 0 { (0, 1) } else { (1, frames) };
    let channels = (0..nch)
        .map(|c| ChannelSpec::uncalibrated(format!("ch{}", c + 1), dig_min, dig_max, spr))
        .collect();
    let header = RecordHeader {
        format: FormatId::Wav,
        patient_id: String::new(),
        recording_id: String::new(),
        start: None,
        record_duration: spr as f64 / fmt.rate as f64,
        num_records,
        channels,
    };
    SignalRecord::new(header, samples, EventTable::default())
}

#[cfg(test)]
pub(crate) fn encode(channels: u16, rate: u32, bits: u16, frames: &[Vec<i32>], extra_chunk: bool) -> Vec<u8> {
    let width = (bits / 8) as usize;
    let mut data = Vec::new();
    for f in frames {
        for &s in f {
            match width {
                1 => data.push((s + 128) as u8),
                _ => data.extend_from_slice(&(s as i16).to_le_bytes()),
            }
        }
    }
    let mut body = b"WAVE".to_vec();
    if extra_chunk {
        body.extend_from_slice(b"LIST");
        body.extend_from_slice(&3u32.to_le_bytes());
        body.extend_from_slice(b"abc\0");
    }
    body.extend_from_slice(b"fmt ");
    body.extend_from_slice(&16u32.to_le_bytes());
    body.extend_from_slice(&PCM.to_le_bytes());
    body.extend_from_slice(&channels.to_le_bytes());
    body.extend_from_slice(&rate.to_le_bytes());
    body.extend_from_slice(&(rate * channels as u32 * width as u32).to_le_bytes());
    body.extend_from_slice(&(channels * width as u16).to_le_bytes());
    body.extend_from_slice(&bits.to_le_bytes());
    body.extend_from_slice(b"data");
    body.extend_from_slice(&(data.len() as u32).to_le_bytes());
    body.extend(data);
    let mut out = b"RIFF".to_vec();
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend(body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_16_bit_stereo_skipping_unknown_chunks() {
        let bytes = encode(2, 8000, 16, &[vec![1, -1], vec![32767, -32768], vec![0, 5]], true);
        let rec = read(&bytes[..]).unwrap();
        assert_eq!(rec.header.format, FormatId::Wav);
        assert_eq!(rec.samples[0], vec![1.0, 32767.0, 0.0]);
        assert_eq!(rec.samples[1], vec![-1.0, -32768.0, 5.0]);
        let ch = &rec.header.channels[0];
        assert_eq!(ch.scale(), 1.0);
        assert!((ch.rate(rec.header.record_duration) - 8000.0).abs() < 1e-9);
    }

    #[test]
    fn reads_8_bit_unsigned() {
        let bytes = encode(1, 100, 8, &[vec![-128], vec![0], vec![127]], false);
        let rec = read(&bytes[..]).unwrap();
        assert_eq!(rec.samples[0], vec![-128.0, 0.0, 127.0]);
    }

    #[test]
    fn rejects_wide_samples_and_truncation() {
        let mut bytes = encode(1, 100, 16, &[vec![1], vec![2]], false);
        bytes[34] = 24;
        assert!(matches!(read(&bytes[..]), Err(FormatError::InvalidHeader(_))));
        let mut short = encode(1, 100, 16, &[vec![1], vec![2]], false);
        short.pop();
        assert!(matches!(read(&short[..]), Err(FormatError::TruncatedFile { .. })));
    }
}
