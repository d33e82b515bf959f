use std::io::{Read, Write};

use crate::dtype::{Dtype, Real};
use crate::error::TensorError;
use crate::tensor::Tensor;

/// Tensor blob format: magic, dtype byte, rank byte, u64 little-endian
/// extents, then raw little-endian element data.
pub const TENSOR_MAGIC: &[u8; 4] = b"HGT1";

pub fn write_tensor<S: Real, W: Write>(w: &mut W, t: &Tensor<S>) -> Result<(), TensorError> {
    let mut buf = Vec::with_capacity(6 + 8 * t.rank() + t.numel() * S::DTYPE.size());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.push(S::DTYPE.byte());
    let rank = u8::try_from(t.rank())
        .map_err(|_| TensorError::Serialization(format!("rank {} too large", t.rank())))?;
    buf.push(rank);
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a tensor blob; the stored dtype is converted to `S` (lossless when
/// they match, and f32 -> f64 is exact).
pub fn read_tensor<S: Real, R: Read>(r: &mut R) -> Result<Tensor<S>, TensorError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[0..4] != TENSOR_MAGIC {
        return Err(TensorError::Serialization("bad tensor magic".into()));
    }
    let dtype = Dtype::from_byte(head[4])
        .ok_or_else(|| TensorError::Serialization(format!("unknown dtype byte {}", head[4])))?;
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut ext = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut ext)?;
        let e = u64::from_le_bytes(ext);
        shape.push(usize::try_from(e).map_err(|_| {
            TensorError::Serialization(format!("extent {} exceeds platform usize", e))
        })?);
    }
    let numel: usize = shape.iter().product();
    let mut raw = vec![0u8; numel * dtype.size()];
    r.read_exact(&mut raw)?;
    let data: Vec<S> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::read_le(c).as_f64()))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| S::from_f64(f64::read_le(c)))
            .collect(),
    };
    Tensor::new(shape, data)
}
