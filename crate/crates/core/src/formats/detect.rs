use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{BaseFormat, FormatId, DETECT_PREFIX_LEN};
use crate::safeparse::parse_double_list;

const INNER_PREFIX_LEN: usize = 512;

fn plain(prefix: &[u8], filename: &str) -> Option<BaseFormat> {
    if prefix.len() >= 8 && prefix[0] == b'0' && prefix[1..8].iter().all(|&b| b == b' ') {
        return Some(BaseFormat::Edf);
    }
    if prefix.len() >= 8 && prefix[0] == 0xFF && &prefix[1..8] == b"BIOSEMI" {
        return Some(BaseFormat::Bdf);
    }
    if prefix.starts_with(b"GDF") {
        return Some(BaseFormat::Gdf);
    }
    if prefix.len() >= 12 && &prefix[0..4] == b"RIFF" && &prefix[8..12] == b"WAVE" {
        return Some(BaseFormat::Wav);
    }
    if looks_numeric(prefix) || filename.to_ascii_lowercase().ends_with(".csv") {
        return Some(BaseFormat::Csv);
    }
    None
}

fn looks_numeric(prefix: &[u8]) -> bool {
    let line_end = prefix.iter().position(|&b| b == b'\n').unwrap_or(prefix.len());
    let tokens = parse_double_list(&prefix[..line_end]);
    let ok = tokens.iter().filter(|t| t.ok).count();
    !tokens.is_empty() && 2 * ok >= tokens.len()
}

/// Classifies a file from its leading bytes. Content always outranks the
/// filename, which only matters for CSV files with a label row.
pub fn detect_format(prefix: &[u8], filename: &str) -> FormatId {
    if prefix.starts_with(&[0x1F, 0x8B]) {
        let mut inner = Vec::with_capacity(INNER_PREFIX_LEN);
        let mut decoder = GzDecoder::new(prefix).take(INNER_PREFIX_LEN as u64);
        // A prefix usually cuts the member short; keep what decoded cleanly.
        let mut chunk = [0u8; 128];
        loop {
            match decoder.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => inner.extend_from_slice(&chunk[..n]),
            }
        }
        if inner.is_empty() || inner.starts_with(&[0x1F, 0x8B]) {
            return FormatId::Unknown;
        }
        let inner_name = filename.strip_suffix(".gz").unwrap_or(filename);
        return plain(&inner, inner_name).map_or(FormatId::Unknown, FormatId::GzipWrapped);
    }
    plain(prefix, filename).map_or(FormatId::Unknown, FormatId::from_base)
}

/// Reads the first bytes of `path` and runs [`detect_format`] on them.
pub fn detect_file(path: impl AsRef<Path>) -> io::Result<FormatId> {
    let path = path.as_ref();
    let mut prefix = Vec::with_capacity(DETECT_PREFIX_LEN);
    File::open(path)?
        .take(DETECT_PREFIX_LEN as u64)
        .read_to_end(&mut prefix)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    Ok(detect_format(&prefix, name))
}
