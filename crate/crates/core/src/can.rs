//! CAN frame data model and the text log format.
//!
//! One frame per line:
//!
//! ```text
//! timestamp,id_hex,dlc,b0,...,b{dlc-1},flag
//! 1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R
//! ```
//!
//! `flag` is `R` for normal traffic and `T` for injected frames. The reader
//! also accepts the `Timestamp: ... ID: ... DLC: ...` layout used by the
//! attack-free capture of the public car-hacking dataset (labelled normal).
//! The writer always emits the canonical CSV form: six fractional digits,
//! three lowercase hex digits for the id, two per data byte.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// Highest standard (11-bit) arbitration identifier.
pub const MAX_STANDARD_ID: u16 = 0x7FF;

/// Errors raised while parsing a single log line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("identifier 0x{0:x} exceeds the 11-bit range")]
    IdOutOfRange(u32),
}

/// Errors raised while reading or writing a whole log.
#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {kind}")]
    Line { line: usize, kind: ParseError },
    #[error("line {0}: timestamp earlier than the previous frame")]
    UnsortedTimestamps(usize),
    #[error("frame {0}: timestamp earlier than the previous frame")]
    UnsortedFrames(usize),
    #[error("read failure: {0}")]
    Io(#[source] std::io::Error),
    #[error("write failure: {0}")]
    SinkFailure(#[source] std::io::Error),
}

impl LogError {
    /// Line number (1-based) the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::Line { line, .. } | LogError::UnsortedTimestamps(line) => Some(*line),
            _ => None,
        }
    }
}

/// Seconds with exact microsecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    /// Nearest microsecond to a non-negative number of seconds.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs.max(0.0) * 1e6).round() as u64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

impl FromStr for Timestamp {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseError::MalformedLine(format!("bad timestamp {s:?}"));
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let secs: u64 = whole.parse().map_err(|_| bad())?;
        let mut micros = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
        }
        secs.checked_mul(1_000_000)
            .and_then(|v| v.checked_add(micros))
            .map(Timestamp)
            .ok_or_else(bad)
    }
}

/// Standard-frame arbitration identifier, `0x000..=0x7FF`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanId(u16);

impl CanId {
    pub fn new(raw: u32) -> Result<Self, ParseError> {
        if raw > u32::from(MAX_STANDARD_ID) {
            Err(ParseError::IdOutOfRange(raw))
        } else {
            Ok(CanId(raw as u16))
        }
    }

    pub const fn raw(self) -> u16 {
        self.0
    }
}

impl fmt::Display for CanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03x}", self.0)
    }
}

impl TryFrom<u32> for CanId {
    type Error = ParseError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        CanId::new(v)
    }
}

/// Up to eight data bytes; the length is the frame's DLC.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Payload {
    bytes: [u8; 8],
    len: u8,
}

impl Payload {
    pub fn new(data: &[u8]) -> Result<Self, ParseError> {
        if data.len() > 8 {
            return Err(ParseError::MalformedLine(format!(
                "payload of {} bytes exceeds 8",
                data.len()
            )));
        }
        let mut bytes = [0u8; 8];
        bytes[..data.len()].copy_from_slice(data);
        Ok(Payload { bytes, len: data.len() as u8 })
    }

    pub fn dlc(&self) -> u8 {
        self.len
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bytes[..usize::from(self.len)]
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Normal,
    Injected,
}

impl FrameLabel {
    fn flag(self) -> char {
        match self {
            FrameLabel::Normal => 'R',
            FrameLabel::Injected => 'T',
        }
    }
}

/// One timestamped CAN message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    pub timestamp: Timestamp,
    pub id: CanId,
    pub payload: Payload,
    pub label: FrameLabel,
}

impl CanFrame {
    pub fn new(timestamp: Timestamp, id: CanId, data: &[u8], label: FrameLabel) -> Result<Self, ParseError> {
        Ok(CanFrame { timestamp, id, payload: Payload::new(data)?, label })
    }

    pub fn dlc(&self) -> u8 {
        self.payload.dlc()
    }

    pub fn data(&self) -> &[u8] {
        self.payload.as_slice()
    }

    pub fn is_injected(&self) -> bool {
        self.label == FrameLabel::Injected
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.timestamp, self.id, self.dlc())?;
        for b in self.data() {
            write!(f, ",{b:02x}")?;
        }
        write!(f, ",{}", self.label.flag())
    }
}

/// A time-ordered sequence of frames.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CanLog {
    frames: Vec<CanFrame>,
    /// Free-text provenance tag. Not serialized.
    pub source: String,
}

impl CanLog {
    /// Fails with [`LogError::UnsortedFrames`] naming the first out-of-order index.
    pub fn new(frames: Vec<CanFrame>, source: impl Into<String>) -> Result<Self, LogError> {
        if let Some(i) = first_unsorted(&frames) {
            return Err(LogError::UnsortedFrames(i));
        }
        Ok(CanLog { frames, source: source.into() })
    }

    pub fn frames(&self) -> &[CanFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<CanFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Timestamps of the first and last frame.
    pub fn span(&self) -> Option<(Timestamp, Timestamp)> {
        Some((self.frames.first()?.timestamp, self.frames.last()?.timestamp))
    }

    pub fn injected_count(&self) -> usize {
        self.frames.iter().filter(|f| f.is_injected()).count()
    }
}

fn first_unsorted(frames: &[CanFrame]) -> Option<usize> {
    frames
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
        .map(|i| i + 1)
}

fn parse_hex(field: &str, what: &str) -> Result<u32, ParseError> {
    if field.is_empty() || field.len() > 8 || !field.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ParseError::MalformedLine(format!("bad {what} {field:?}")));
    }
    u32::from_str_radix(field, 16).map_err(|_| ParseError::MalformedLine(format!("bad {what} {field:?}")))
}

fn parse_byte(field: &str) -> Result<u8, ParseError> {
    let v = parse_hex(field, "data byte")?;
    u8::try_from(v).map_err(|_| ParseError::MalformedLine(format!("data byte {field:?} exceeds 0xff")))
}

fn parse_dlc(field: &str) -> Result<usize, ParseError> {
    match field.parse::<usize>() {
        Ok(d) if d <= 8 && !field.starts_with('+') => Ok(d),
        _ => Err(ParseError::MalformedLine(format!("bad dlc {field:?}"))),
    }
}

/// Parses one line in either accepted layout.
pub fn parse_log_line(line: &str) -> Result<CanFrame, ParseError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if let Some(rest) = line.trim_start().strip_prefix("Timestamp:") {
        return parse_capture_line(rest);
    }
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 4 {
        return Err(ParseError::MalformedLine(format!("expected at least 4 fields, got {}", fields.len())));
    }
    let timestamp: Timestamp = fields[0].parse()?;
    let id = CanId::new(parse_hex(fields[1], "identifier")?)?;
    let dlc = parse_dlc(fields[2])?;
    if fields.len() != dlc + 4 {
        return Err(ParseError::MalformedLine(format!(
            "dlc {dlc} requires {} fields, got {}",
            dlc + 4,
            fields.len()
        )));
    }
    let mut data = [0u8; 8];
    for (slot, field) in data.iter_mut().zip(&fields[3..3 + dlc]) {
        *slot = parse_byte(field)?;
    }
    let label = match fields[3 + dlc] {
        "R" | "r" => FrameLabel::Normal,
        "T" | "t" => FrameLabel::Injected,
        other => return Err(ParseError::MalformedLine(format!("bad flag {other:?}"))),
    };
    CanFrame::new(timestamp, id, &data[..dlc], label)
}

// `Timestamp: 1479121434.850202        ID: 0350    000    DLC: 8    05 28 84 66 6d 00 00 a2`
fn parse_capture_line(rest: &str) -> Result<CanFrame, ParseError> {
    let mut tokens = rest.split_whitespace();
    let malformed = |why: &str| ParseError::MalformedLine(why.to_string());
    let timestamp: Timestamp = tokens.next().ok_or_else(|| malformed("missing timestamp"))?.parse()?;
    if tokens.next() != Some("ID:") {
        return Err(malformed("expected `ID:`"));
    }
    let id = CanId::new(parse_hex(tokens.next().ok_or_else(|| malformed("missing identifier"))?, "identifier")?)?;
    // The capture tool prints a remote-frame flag column before `DLC:`.
    let mut tok = tokens.next().ok_or_else(|| malformed("missing DLC"))?;
    if tok != "DLC:" {
        parse_hex(tok, "flag column")?;
        tok = tokens.next().ok_or_else(|| malformed("missing DLC"))?;
    }
    if tok != "DLC:" {
        return Err(malformed("expected `DLC:`"));
    }
    let dlc = parse_dlc(tokens.next().ok_or_else(|| malformed("missing DLC value"))?)?;
    let bytes: Vec<&str> = tokens.collect();
    if bytes.len() != dlc {
        return Err(ParseError::MalformedLine(format!("dlc {dlc} but {} data bytes", bytes.len())));
    }
    let mut data = [0u8; 8];
    for (slot, field) in data.iter_mut().zip(&bytes) {
        *slot = parse_byte(field)?;
    }
    CanFrame::new(timestamp, id, &data[..dlc], FrameLabel::Normal)
}

/// Reads a whole log. Blank lines are skipped; line numbers are 1-based.
pub fn read_log<R: BufRead>(reader: R) -> Result<CanLog, LogError> {
    let mut frames: Vec<CanFrame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(LogError::Io)?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let frame = parse_log_line(&line).map_err(|kind| LogError::Line { line: line_no, kind })?;
        if frames.last().is_some_and(|prev| frame.timestamp < prev.timestamp) {
            return Err(LogError::UnsortedTimestamps(line_no));
        }
        frames.push(frame);
    }
    Ok(CanLog { frames, source: String::new() })
}

pub fn read_log_str(text: &str) -> Result<CanLog, LogError> {
    read_log(text.as_bytes())
}

/// Writes the canonical CSV form, one `\n`-terminated line per frame.
pub fn write_log<W: Write>(log: &CanLog, sink: W) -> Result<(), LogError> {
    let mut sink = std::io::BufWriter::new(sink);
    for frame in &log.frames {
        writeln!(sink, "{frame}").map_err(LogError::SinkFailure)?;
    }
    sink.flush().map_err(LogError::SinkFailure)
}

pub fn write_log_string(log: &CanLog) -> String {
    let mut out = Vec::with_capacity(log.len() * 48);
    write_log(log, &mut out).expect("writing to memory cannot fail");
    String::from_utf8(out).expect("log text is ASCII")
}
