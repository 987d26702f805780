//! Numeric parsing for text that comes from untrusted file headers.
//!
//! Nothing in here evaluates its input. A field is scanned against a small
//! decimal grammar and only a grammar-conformant slice is handed to the
//! standard library's decimal-to-double conversion.
//!
//! Grammar (after trimming ASCII whitespace):
//!
//! ```text
//! number   := [sign] mantissa [exponent]
//! mantissa := digits ["." [digits]] | "." digits
//! exponent := ("e" | "E") [sign] digits
//! literal  := "nan" | [sign] "inf"          (case-insensitive)
//! ```
//!
//! Hexadecimal, octal prefixes, thousands separators and decimal commas are
//! all rejected.

use std::fmt;

/// One parsed field.
///
/// `ok` separates a field that literally says "NaN" (`ok == true`) from a
/// field that is garbage (`ok == false`). A failed token always carries NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedToken {
    pub text: String,
    pub value: f64,
    pub ok: bool,
}

impl ParsedToken {
    fn failed(text: &[u8]) -> Self {
        ParsedToken {
            text: String::from_utf8_lossy(text).into_owned(),
            value: f64::NAN,
            ok: false,
        }
    }

    /// The value when the token parsed, `None` otherwise.
    pub fn get(&self) -> Option<f64> {
        self.ok.then_some(self.value)
    }
}

impl fmt::Display for ParsedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            write!(f, "{}", self.value)
        } else {
            write!(f, "<invalid {:?}>", self.text)
        }
    }
}

fn is_delimiter(b: u8) -> bool {
    b.is_ascii_whitespace() || b == b',' || b == b';'
}

fn trim_ascii(bytes: &[u8]) -> &[u8] {
    let start = bytes
        .iter()
        .position(|b| !b.is_ascii_whitespace())
        .unwrap_or(bytes.len());
    let end = bytes
        .iter()
        .rposition(|b| !b.is_ascii_whitespace())
        .map_or(start, |i| i + 1);
    &bytes[start..end]
}

/// Returns true iff `s` (already trimmed) matches the `number` production.
fn scan_number(s: &[u8]) -> bool {
    let mut i = 0;
    if matches!(s.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let mut mantissa_digits = i - int_start;
    if i < s.len() && s[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        mantissa_digits += i - frac_start;
    }
    if mantissa_digits == 0 {
        return false;
    }
    if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
        i += 1;
        if i < s.len() && (s[i] == b'+' || s[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == s.len()
}

fn scan_literal(s: &[u8]) -> Option<f64> {
    if s.eq_ignore_ascii_case(b"nan") {
        return Some(f64::NAN);
    }
    let (negative, rest) = match s.first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    if rest.eq_ignore_ascii_case(b"inf") {
        Some(if negative { f64::NEG_INFINITY } else { f64::INFINITY })
    } else {
        None
    }
}

/// Parse a single numeric field.
///
/// Total over all byte strings: failure is reported through
/// [`ParsedToken::ok`], never as an error or a panic. Exponents that overflow
/// saturate to ±infinity with `ok == true`.
pub fn parse_double(text: impl AsRef<[u8]>) -> ParsedToken {
    let raw = text.as_ref();
    let s = trim_ascii(raw);
    if let Some(v) = scan_literal(s) {
        return ParsedToken {
            text: String::from_utf8_lossy(s).into_owned(),
            value: v,
            ok: true,
        };
    }
    if !scan_number(s) {
        return ParsedToken::failed(s);
    }
    // The scanner only admits ASCII, so this cannot fail.
    let Ok(ascii) = std::str::from_utf8(s) else {
        return ParsedToken::failed(s);
    };
    match ascii.parse::<f64>() {
        Ok(value) => ParsedToken {
            text: ascii.to_owned(),
            value,
            ok: true,
        },
        Err(_) => ParsedToken::failed(s),
    }
}

/// Split `text` on runs of ASCII whitespace, commas and semicolons and parse
/// each field. Empty input gives an empty list.
pub fn parse_double_list(text: impl AsRef<[u8]>) -> Vec<ParsedToken> {
    text.as_ref()
        .split(|&b| is_delimiter(b))
        .filter(|field| !field.is_empty())
        .map(parse_double)
        .collect()
}

/// Parse an optionally signed decimal integer (no fraction, no exponent).
pub fn parse_int(text: impl AsRef<[u8]>) -> Option<i64> {
    let s = trim_ascii(text.as_ref());
    let digits = match s.first() {
        Some(b'+' | b'-') => &s[1..],
        _ => s,
    };
    if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(s).ok()?.parse().ok()
}

/// Parse an unsigned decimal integer (digits only).
pub fn parse_uint(text: impl AsRef<[u8]>) -> Option<u64> {
    let s = trim_ascii(text.as_ref());
    if s.is_empty() || !s.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(s).ok()?.parse().ok()
}
