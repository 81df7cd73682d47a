//! Line-oriented ASCII telemetry frames.
//!
//! A frame carries one [`Reading`]:
//!
//! ```text
//! $COMO,<device_id>,<ts>,<lat>,<lng>,<ppm>*<CS>\n
//! ```
//!
//! `lat`/`lng` are printed with exactly six fraction digits and `ppm` with
//! exactly four. `CS` is the XOR of every byte strictly between `$` and `*`,
//! as two uppercase hex digits. Decoding accepts 1-9 fraction digits and an
//! optional CR before the LF, and re-canonicalizes the numbers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{InvalidInput, Reading};

pub const FRAME_START: u8 = b'$';
pub const TALKER: &str = "COMO";
const CHECKSUM_DELIM: u8 = b'*';
const PAYLOAD_FIELDS: usize = 5;
const MAX_FRACTION_DIGITS: usize = 9;
const MAX_INTEGER_DIGITS: usize = 12;

/// XOR of all payload bytes as two uppercase hex digits.
pub fn checksum(payload: &[u8]) -> String {
    format!("{:02X}", xor_bytes(payload))
}

fn xor_bytes(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, b| acc ^ b)
}

/// Canonical frame text for `r`, including the trailing LF.
pub fn encode_frame(r: &Reading) -> String {
    let payload = format!(
        "{TALKER},{},{},{:.6},{:.6},{:.4}",
        r.device_id(),
        r.ts(),
        r.lat(),
        r.lng(),
        r.ppm()
    );
    let cs = checksum(payload.as_bytes());
    format!("${payload}*{cs}\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DecodeErrorKind {
    MissingPrefix,
    BadChecksum,
    FieldCount,
    NumericParse,
    RangeError,
}

impl DecodeErrorKind {
    pub const ALL: [DecodeErrorKind; 5] = [
        DecodeErrorKind::MissingPrefix,
        DecodeErrorKind::BadChecksum,
        DecodeErrorKind::FieldCount,
        DecodeErrorKind::NumericParse,
        DecodeErrorKind::RangeError,
    ];
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Why a line was rejected. `offset` is the byte offset within the line where
/// the problem was found; `line` is filled in by stream readers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    pub offset: usize,
    pub line: Option<usize>,
    pub detail: String,
}

impl DecodeError {
    fn new(kind: DecodeErrorKind, offset: usize, detail: impl Into<String>) -> Self {
        Self {
            kind,
            offset,
            line: None,
            detail: detail.into(),
        }
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(f, "{} at byte {}: {}", self.kind, self.offset, self.detail)
    }
}

impl std::error::Error for DecodeError {}

/// Decodes one frame line. Arbitrary bytes are accepted; the first failing
/// check determines the error kind, in this order: start sentinel, checksum,
/// talker tag, field count, number syntax, value ranges.
///
/// The talker tag is checked after the checksum so that any corruption inside
/// the checksummed region reports as [`DecodeErrorKind::BadChecksum`].
pub fn decode_frame(line: impl AsRef<[u8]>) -> Result<Reading, DecodeError> {
    use DecodeErrorKind::*;

    let mut bytes = line.as_ref();
    if let Some(rest) = bytes.strip_suffix(b"\n") {
        bytes = rest;
    }
    if let Some(rest) = bytes.strip_suffix(b"\r") {
        bytes = rest;
    }

    if bytes.first() != Some(&FRAME_START) {
        return Err(DecodeError::new(MissingPrefix, 0, "line does not start with '$'"));
    }
    let star = bytes
        .iter()
        .rposition(|&b| b == CHECKSUM_DELIM)
        .ok_or_else(|| DecodeError::new(BadChecksum, bytes.len(), "no '*' checksum delimiter"))?;
    let payload = &bytes[1..star];
    let cs_text = &bytes[star + 1..];
    let declared = parse_hex_pair(cs_text).ok_or_else(|| {
        DecodeError::new(
            BadChecksum,
            star + 1,
            format!(
                "checksum must be two uppercase hex digits, found {:?}",
                String::from_utf8_lossy(cs_text)
            ),
        )
    })?;
    let actual = xor_bytes(payload);
    if declared != actual {
        return Err(DecodeError::new(
            BadChecksum,
            star + 1,
            format!("expected {actual:02X}, found {declared:02X}"),
        ));
    }

    // Checksum passed, so the payload bytes are as sent; they may still be
    // non-UTF-8 if the sender was broken.
    let payload = std::str::from_utf8(payload)
        .map_err(|e| DecodeError::new(MissingPrefix, 1 + e.valid_up_to(), "payload is not ASCII"))?;
    let fields_text = payload
        .strip_prefix(TALKER)
        .and_then(|rest| rest.strip_prefix(','))
        .ok_or_else(|| DecodeError::new(MissingPrefix, 1, format!("expected '{TALKER},' tag")))?;

    let fields_start = 1 + TALKER.len() + 1;
    let fields: Vec<&str> = fields_text.split(',').collect();
    if fields.len() != PAYLOAD_FIELDS {
        return Err(DecodeError::new(
            FieldCount,
            fields_start,
            format!("expected {PAYLOAD_FIELDS} fields, found {}", fields.len()),
        ));
    }
    let mut offsets = [0usize; PAYLOAD_FIELDS];
    let mut at = fields_start;
    for (slot, field) in offsets.iter_mut().zip(&fields) {
        *slot = at;
        at += field.len() + 1;
    }

    let ts = parse_integer(fields[1])
        .ok_or_else(|| DecodeError::new(NumericParse, offsets[1], format!("bad timestamp {:?}", fields[1])))?;
    let mut decimals = [0f64; 3];
    for (i, value) in decimals.iter_mut().enumerate() {
        let field = fields[2 + i];
        *value = parse_decimal(field).ok_or_else(|| {
            DecodeError::new(NumericParse, offsets[2 + i], format!("bad number {field:?}"))
        })?;
    }
    let [lat, lng, ppm] = decimals;

    Reading::new(fields[0], ts, lat, lng, ppm).map_err(|e| {
        let field = match e {
            InvalidInput::DeviceId(_) => 0,
            InvalidInput::Timestamp(_) => 1,
            InvalidInput::Latitude(_) => 2,
            InvalidInput::Longitude(_) => 3,
            InvalidInput::Concentration(_) | InvalidInput::ConcentrationTooHigh(_) => 4,
        };
        DecodeError::new(RangeError, offsets[field], e.to_string())
    })
}

fn parse_hex_pair(text: &[u8]) -> Option<u8> {
    fn nibble(b: u8) -> Option<u8> {
        match b {
            b'0'..=b'9' => Some(b - b'0'),
            b'A'..=b'F' => Some(b - b'A' + 10),
            _ => None,
        }
    }
    match text {
        [hi, lo] => Some(nibble(*hi)? << 4 | nibble(*lo)?),
        _ => None,
    }
}

/// `-?[0-9]+`
fn parse_integer(text: &str) -> Option<i64> {
    let digits = text.strip_prefix('-').unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}

/// `-?[0-9]{1,12}(\.[0-9]{1,9})?`
fn parse_decimal(text: &str) -> Option<f64> {
    let unsigned = text.strip_prefix('-').unwrap_or(text);
    let (int_part, frac_part) = match unsigned.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (unsigned, None),
    };
    let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int_part.is_empty() || int_part.len() > MAX_INTEGER_DIGITS || !all_digits(int_part) {
        return None;
    }
    if let Some(frac) = frac_part {
        if frac.is_empty() || frac.len() > MAX_FRACTION_DIGITS || !all_digits(frac) {
            return None;
        }
    }
    text.parse().ok()
}
