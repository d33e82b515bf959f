//! "HGW1" checkpoint container: a JSON header followed by a named tensor
//! table. Tensor payloads reuse the tensor blob format, so round-trips are
//! bitwise for a matching element type.

use std::io::{Read, Write};

use hypergen_tensor::{read_tensor, write_tensor, Real, Tensor};

use crate::error::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HGW1";

pub fn write_checkpoint<'a, S: Real + 'a, W: Write>(
    w: &mut W,
    header: &serde_json::Value,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<S>)>,
) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| ModelError::checkpoint(format!("header encode: {}", e)))?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        let len = u16::try_from(name_bytes.len())
            .map_err(|_| ModelError::checkpoint(format!("tensor name too long: {:?}", name)))?;
        w.write_all(&len.to_le_bytes()).map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        write_tensor(w, tensor)?;
    }
    Ok(())
}

pub fn read_checkpoint<S: Real, R: Read>(
    r: &mut R,
) -> Result<(serde_json::Value, Vec<(String, Tensor<S>)>), ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::checkpoint("bad checkpoint magic"));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4).map_err(io_err)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len4) as usize];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::checkpoint(format!("header decode: {}", e)))?;
    r.read_exact(&mut len4).map_err(io_err)?;
    let count = u32::from_le_bytes(len4) as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut len2 = [0u8; 2];
    for _ in 0..count {
        r.read_exact(&mut len2).map_err(io_err)?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(len2) as usize];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| ModelError::checkpoint(format!("tensor name is not utf-8: {}", e)))?;
        tensors.push((name, read_tensor(r)?));
    }
    Ok((header, tensors))
}

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::checkpoint(format!("io: {}", e))
}
