//! Binary weight files.
//!
//! ```text
//! "GIDSW1\n"                      magic
//! u8                              arch tag (0 discriminator, 1 generator)
//! u32                             layer count
//! per layer:
//!   u8                            kind (0 dense, 1 transposed conv)
//!   u32 x 3   dense               out, in_rows, in_cols
//!   u32 x 10  transposed conv     in_ch, out_ch, kH, kW, strideH, strideW, padH, padW, inH, inW
//!   f32 x N                       weights, row-major
//!   f32 x M                       bias
//! ```
//!
//! All integers and floats are little-endian. Activations are implied by the
//! arch tag and layer position.

use thiserror::Error;

use super::model::Layer;
use super::{ArchTag, ModelWeights, NnError};

pub const WEIGHTS_MAGIC: &[u8; 7] = b"GIDSW1\n";

const KIND_DENSE: u8 = 0;
const KIND_DECONV: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WeightsError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("inconsistent shape header: {0}")]
    ShapeHeaderMismatch(String),
    #[error("weight stream ends early")]
    TruncatedStream,
    #[error("{0} unexpected bytes after the last layer")]
    TrailingBytes(usize),
}

fn arch_code(arch: ArchTag) -> u8 {
    match arch {
        ArchTag::DiscriminatorDnn => 0,
        ArchTag::GeneratorDeconv => 1,
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    out.reserve(vals.len() * 4);
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_weights(model: &ModelWeights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.num_params() * 4);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(arch_code(model.arch()));
    put_u32(&mut out, model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Dense(l) => {
                out.push(KIND_DENSE);
                for v in [l.outputs(), l.input_shape[0], l.input_shape[1]] {
                    put_u32(&mut out, v);
                }
            }
            Layer::Deconv(l) => {
                out.push(KIND_DECONV);
                let [kh, kw] = l.kernel_hw();
                for v in [
                    l.in_channels(),
                    l.out_channels(),
                    kh,
                    kw,
                    l.stride[0],
                    l.stride[1],
                    l.padding[0],
                    l.padding[1],
                    l.input_hw[0],
                    l.input_hw[1],
                ] {
                    put_u32(&mut out, v);
                }
            }
        }
        for block in layer.param_blocks() {
            put_f32s(&mut out, block);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        if self.buf.len() < n {
            return Err(WeightsError::TruncatedStream);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, WeightsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn dims<const N: usize>(&mut self) -> Result<[usize; N], WeightsError> {
        let mut d = [0usize; N];
        for v in &mut d {
            *v = self.u32()?;
        }
        Ok(d)
    }

    fn f32s(&mut self, count: Option<usize>) -> Result<Vec<f32>, WeightsError> {
        let bytes = count.and_then(|c| c.checked_mul(4)).ok_or(WeightsError::TruncatedStream)?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

fn product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn header(e: NnError) -> WeightsError {
    WeightsError::ShapeHeaderMismatch(e.to_string())
}

pub fn load_weights(bytes: &[u8]) -> Result<ModelWeights<f32>, WeightsError> {
    if bytes.len() < WEIGHTS_MAGIC.len() || &bytes[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let mut r = Reader { buf: &bytes[WEIGHTS_MAGIC.len()..] };
    let arch = match r.u8()? {
        0 => ArchTag::DiscriminatorDnn,
        1 => ArchTag::GeneratorDeconv,
        other => return Err(WeightsError::ShapeHeaderMismatch(format!("unknown arch tag {other}"))),
    };
    let count = r.u32()?;
    if count == 0 {
        return Err(WeightsError::ShapeHeaderMismatch("zero layers".into()));
    }
    let mut layers = Vec::new();
    for index in 0..count {
        let act = ModelWeights::conventional_activation(arch, index, count);
        let layer = match r.u8()? {
            KIND_DENSE => {
                let [out, rows, cols] = r.dims::<3>()?;
                if out == 0 || rows == 0 || cols == 0 {
                    return Err(WeightsError::ShapeHeaderMismatch(format!("dense layer {index} has a zero dimension")));
                }
                let weights = r.f32s(product(&[out, rows, cols]))?;
                let bias = r.f32s(Some(out))?;
                ModelWeights::dense_from_parts(out, rows, cols, weights, bias, act).map_err(header)?
            }
            KIND_DECONV => {
                let [cin, cout, kh, kw, sh, sw, ph, pw, ih, iw] = r.dims::<10>()?;
                if product(&[cin, cout, kh, kw, ih, iw]).is_none_or(|p| p == 0) {
                    return Err(WeightsError::ShapeHeaderMismatch(format!("deconv layer {index} has a zero dimension")));
                }
                let kernels = r.f32s(product(&[cin, cout, kh, kw]))?;
                let bias = r.f32s(Some(cout))?;
                ModelWeights::deconv_from_parts([cin, cout, kh, kw], [sh, sw], [ph, pw], [ih, iw], kernels, bias, act)
                    .map_err(header)?
            }
            other => return Err(WeightsError::ShapeHeaderMismatch(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    if !r.buf.is_empty() {
        return Err(WeightsError::TrailingBytes(r.buf.len()));
    }
    ModelWeights::new(arch, layers).map_err(header)
}
