//! CAN-ID windows to binary "CAN images".
//!
//! In one-hot mode each frame becomes a 48-column row: the three hex digits
//! of the 11-bit identifier, most significant first, each one-hot encoded in
//! a 16-column block with the hot column equal to the digit value. A window
//! of `input_size` consecutive frames stacks into an `input_size x 48` image.
//! Raw-binary mode writes the 11 identifier bits instead (MSB first).

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::can::{CanFrame, CanId, CanLog, ParseError};

pub const DIGIT_WIDTH: usize = 16;
pub const ONE_HOT_COLS: usize = 3 * DIGIT_WIDTH;
pub const RAW_BINARY_COLS: usize = 11;
pub const DEFAULT_INPUT_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("image dump, record {record}: {reason}")]
    BadDump { record: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodingMode {
    #[default]
    OneHot,
    RawBinary,
}

impl EncodingMode {
    pub fn columns(self) -> usize {
        match self {
            EncodingMode::OneHot => ONE_HOT_COLS,
            EncodingMode::RawBinary => RAW_BINARY_COLS,
        }
    }

    /// Inverse of [`EncodingMode::columns`].
    pub fn from_columns(cols: usize) -> Option<Self> {
        match cols {
            ONE_HOT_COLS => Some(EncodingMode::OneHot),
            RAW_BINARY_COLS => Some(EncodingMode::RawBinary),
            _ => None,
        }
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingMode::OneHot => "onehot",
            EncodingMode::RawBinary => "raw",
        })
    }
}

impl FromStr for EncodingMode {
    type Err = EncoderError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "onehot" | "one-hot" => Ok(EncodingMode::OneHot),
            "raw" | "rawbinary" | "raw-binary" | "binary" => Ok(EncodingMode::RawBinary),
            other => Err(EncoderError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub stride: usize,
    pub mode: EncodingMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::grouped(DEFAULT_INPUT_SIZE, EncodingMode::OneHot)
    }
}

impl EncoderConfig {
    /// Non-overlapping windows.
    pub fn grouped(input_size: usize, mode: EncodingMode) -> Self {
        EncoderConfig { input_size, stride: input_size, mode }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.input_size == 0 {
            return Err(EncoderError::InvalidConfig("input_size must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.input_size {
            return Err(EncoderError::InvalidConfig(format!(
                "stride {} outside 1..={}",
                self.stride, self.input_size
            )));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        self.mode.columns()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.input_size * self.columns()
    }

    /// Number of complete windows over `n` frames.
    pub fn image_count(&self, n: usize) -> usize {
        if n < self.input_size {
            0
        } else {
            (n - self.input_size) / self.stride + 1
        }
    }
}

/// A value in `0..=15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HexDigit(u8);

impl HexDigit {
    pub fn new(d: u8) -> Option<Self> {
        (d < 16).then_some(HexDigit(d))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

pub fn encode_digit(d: HexDigit) -> [u8; DIGIT_WIDTH] {
    let mut v = [0u8; DIGIT_WIDTH];
    v[usize::from(d.0)] = 1;
    v
}

fn nibbles(id: CanId) -> [HexDigit; 3] {
    let raw = id.raw();
    [HexDigit((raw >> 8) as u8 & 0xF), HexDigit((raw >> 4) as u8 & 0xF), HexDigit(raw as u8 & 0xF)]
}

pub fn encode_id(id: CanId) -> [u8; ONE_HOT_COLS] {
    let mut row = [0u8; ONE_HOT_COLS];
    encode_id_into(id, &mut row);
    row
}

/// Checked variant for identifiers not yet validated.
pub fn encode_raw_id(raw: u32) -> Result<[u8; ONE_HOT_COLS], ParseError> {
    Ok(encode_id(CanId::new(raw)?))
}

fn encode_id_into(id: CanId, row: &mut [u8]) {
    row.fill(0);
    for (block, digit) in nibbles(id).into_iter().enumerate() {
        row[block * DIGIT_WIDTH + usize::from(digit.0)] = 1;
    }
}

fn encode_bits_into(id: CanId, row: &mut [u8]) {
    for (bit, px) in row.iter_mut().enumerate() {
        *px = ((id.raw() >> (RAW_BINARY_COLS - 1 - bit)) & 1) as u8;
    }
}

/// Recovers the identifier from a one-hot row, `None` unless each block has exactly one hot column.
pub fn decode_row(row: &[u8]) -> Option<CanId> {
    if row.len() != ONE_HOT_COLS {
        return None;
    }
    let mut raw = 0u32;
    for block in row.chunks_exact(DIGIT_WIDTH) {
        let mut hot = block.iter().enumerate().filter(|(_, &p)| p != 0);
        let (digit, _) = hot.next()?;
        if hot.next().is_some() {
            return None;
        }
        raw = (raw << 4) | digit as u32;
    }
    CanId::new(raw).ok()
}

pub fn decode_raw_row(row: &[u8]) -> Option<CanId> {
    if row.len() != RAW_BINARY_COLS || row.iter().any(|&p| p > 1) {
        return None;
    }
    CanId::new(row.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b))).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageLabel {
    Normal,
    Abnormal,
}

impl ImageLabel {
    pub fn is_abnormal(self) -> bool {
        self == ImageLabel::Abnormal
    }
}

impl fmt::Display for ImageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImageLabel::Normal => "normal",
            ImageLabel::Abnormal => "abnormal",
        })
    }
}

/// A binary window image plus its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanImage {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    pub label: ImageLabel,
    /// Indices of the source frames.
    pub frame_span: Range<usize>,
}

impl CanImage {
    pub fn from_pixels(rows: usize, cols: usize, pixels: Vec<u8>, label: ImageLabel) -> Option<Self> {
        (pixels.len() == rows * cols && pixels.iter().all(|&p| p <= 1))
            .then_some(CanImage { rows, cols, pixels, label, frame_span: 0..rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.pixels[r * self.cols..(r + 1) * self.cols]
    }

    /// Pixels mapped from `{0, 1}` to `{-1, 1}`, the range networks consume.
    pub fn write_signed(&self, out: &mut [f32]) {
        for (o, &p) in out.iter_mut().zip(&self.pixels) {
            *o = if p != 0 { 1.0 } else { -1.0 };
        }
    }

    pub fn to_signed(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.pixels.len()];
        self.write_signed(&mut out);
        out
    }
}

fn encode_window(frames: &[CanFrame], start: usize, cfg: &EncoderConfig) -> CanImage {
    let cols = cfg.columns();
    let window = &frames[start..start + cfg.input_size];
    let mut pixels = vec![0u8; cfg.input_size * cols];
    for (frame, row) in window.iter().zip(pixels.chunks_exact_mut(cols)) {
        match cfg.mode {
            EncodingMode::OneHot => encode_id_into(frame.id, row),
            EncodingMode::RawBinary => encode_bits_into(frame.id, row),
        }
    }
    let label = if window.iter().any(CanFrame::is_injected) { ImageLabel::Abnormal } else { ImageLabel::Normal };
    CanImage { rows: cfg.input_size, cols, pixels, label, frame_span: start..start + cfg.input_size }
}

/// Windows `[k*stride, k*stride + input_size)`; an incomplete tail is dropped.
pub fn build_images_from_frames(frames: &[CanFrame], cfg: &EncoderConfig) -> Result<Vec<CanImage>, EncoderError> {
    cfg.validate()?;
    Ok((0..cfg.image_count(frames.len()))
        .map(|k| encode_window(frames, k * cfg.stride, cfg))
        .collect())
}

pub fn build_images(log: &CanLog, cfg: &EncoderConfig) -> Result<Vec<CanImage>, EncoderError> {
    build_images_from_frames(log.frames(), cfg)
}

/// Writes images as `label rows cols` followed by one line of `0`/`1` per row.
pub fn write_image_dump<W: Write>(images: &[CanImage], mut sink: W) -> Result<(), EncoderError> {
    for img in images {
        writeln!(sink, "{} {} {}", img.label, img.rows, img.cols)?;
        let mut line = String::with_capacity(img.cols + 1);
        for r in 0..img.rows {
            line.clear();
            line.extend(img.row(r).iter().map(|&p| if p != 0 { '1' } else { '0' }));
            line.push('\n');
            sink.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}

pub fn read_image_dump<R: BufRead>(reader: R) -> Result<Vec<CanImage>, EncoderError> {
    let mut images = Vec::new();
    let mut lines = reader.lines();
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let record = images.len();
        let bad = |reason: String| EncoderError::BadDump { record, reason };
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [label, rows, cols] = parts[..] else {
            return Err(bad(format!("bad header {header:?}")));
        };
        let label = match label {
            "normal" => ImageLabel::Normal,
            "abnormal" => ImageLabel::Abnormal,
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        let rows: usize = rows.parse().map_err(|_| bad(format!("bad rows {rows:?}")))?;
        let cols: usize = cols.parse().map_err(|_| bad(format!("bad cols {cols:?}")))?;
        let mut pixels = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| bad("truncated image".into()))??;
            if line.len() != cols {
                return Err(bad(format!("row of width {} instead of {cols}", line.len())));
            }
            for c in line.bytes() {
                match c {
                    b'0' => pixels.push(0),
                    b'1' => pixels.push(1),
                    _ => return Err(bad(format!("bad pixel {:?}", c as char))),
                }
            }
        }
        let start = record * rows;
        images.push(CanImage { rows, cols, pixels, label, frame_span: start..start + rows });
    }
    Ok(images)
}
