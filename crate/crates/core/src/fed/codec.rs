//! Binary parameter codec.
//!
//! ```text
//! u32 layer_count
//! per layer: u32 out | u32 in | u8 activation | f64 weights[out*in] (row-major) | f64 bias[out]
//! ```
//!
//! All integers and floats are little-endian.

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, ModelParams};

pub fn encoded_len(params: &ModelParams) -> usize {
    4 + params
        .layers
        .iter()
        .map(|l| 9 + 8 * (l.weights.len() + l.bias.len()))
        .sum::<usize>()
}

pub fn encode_params_into(params: &ModelParams, out: &mut Vec<u8>) {
    out.reserve(encoded_len(params));
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        out.extend_from_slice(&(l.n_out as u32).to_le_bytes());
        out.extend_from_slice(&(l.n_in as u32).to_le_bytes());
        out.push(l.activation.tag());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    encode_params_into(params, &mut out);
    out
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Codec(format!(
                    "truncated buffer: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Codec(format!("invalid utf-8: {e}")))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn params(&mut self) -> Result<ModelParams> {
        let count = self.u32()? as usize;
        // every layer needs at least its 9-byte header
        if count.saturating_mul(9) > self.remaining() {
            return Err(Error::Codec(format!(
                "truncated buffer: {count} layers declared"
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for k in 0..count {
            let n_out = self.u32()? as usize;
            let n_in = self.u32()? as usize;
            let tag = self.u8()?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::Codec(format!("layer {k}: unknown activation tag {tag}")))?;
            let n_w = n_out
                .checked_mul(n_in)
                .ok_or_else(|| Error::Codec(format!("layer {k}: dimensions overflow")))?;
            if n_w.saturating_add(n_out).saturating_mul(8) > self.remaining() {
                return Err(Error::Codec(format!("truncated buffer in layer {k}")));
            }
            let weights = (0..n_w).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..n_out).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                n_in,
                n_out,
                weights,
                bias,
                activation,
            });
        }
        ModelParams::new(layers)
            .map_err(|e| Error::Codec(format!("decoded parameters are invalid: {e}")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    let p = r.params()?;
    if r.remaining() != 0 {
        return Err(Error::Codec(format!(
            "{} trailing bytes after parameters",
            r.remaining()
        )));
    }
    Ok(p)
}
