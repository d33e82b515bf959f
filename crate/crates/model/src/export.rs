//! Attention-map export: one NPY array per (CNN layer, block, attention
//! kind) plus a JSON sidecar annotating every token with its role, so the
//! maps can be read back as labeled axes.

use std::io::Write;
use std::path::{Path, PathBuf};

use hypergen_tensor::{Dtype, Real, Tensor};
use serde::Serialize;

use crate::error::ModelError;
use crate::generator::LayerAttention;
use crate::tokens::TokenRole;
use crate::transformer::AttentionKind;

/// Writes a tensor as a standard NPY v1.0 array (row-major, little-endian).
pub fn write_npy<S: Real, W: Write>(w: &mut W, t: &Tensor<S>) -> Result<(), ModelError> {
    let descr = match S::DTYPE {
        Dtype::F32 => "<f4",
        Dtype::F64 => "<f8",
    };
    let dims: String = t
        .shape()
        .iter()
        .map(|e| format!("{},", e))
        .collect::<Vec<_>>()
        .join(" ");
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}), }}",
        descr, dims
    );
    // Pad so that magic + version + length + header is 64-byte aligned, with
    // a trailing newline as the format requires.
    let base = 10 + header.len() + 1;
    header.push_str(&" ".repeat(base.div_ceil(64) * 64 - base));
    header.push('\n');
    let mut buf = Vec::with_capacity(10 + header.len() + t.numel() * S::DTYPE.size());
    buf.extend_from_slice(b"\x93NUMPY\x01\x00");
    buf.extend_from_slice(&(header.len() as u16).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)
        .map_err(|e| ModelError::checkpoint(format!("npy write: {}", e)))?;
    Ok(())
}

#[derive(Serialize)]
struct MapEntry<'a> {
    file: String,
    cnn_layer: usize,
    block: usize,
    kind: AttentionKind,
    heads: usize,
    queries: usize,
    keys: usize,
    /// Roles of the query rows and key columns, in axis order.
    query_roles: &'a [TokenRole],
    key_roles: &'a [TokenRole],
}

/// Writes every retained attention map under `dir` and returns the files
/// written (arrays plus the `annotations.json` sidecar).
pub fn export_attention_maps<S: Real>(
    records: &[LayerAttention<S>],
    dir: &Path,
) -> Result<Vec<PathBuf>, ModelError> {
    if records.is_empty() {
        return Err(ModelError::config(
            "no attention maps were retained; run the pass with retention on",
        ));
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| ModelError::checkpoint(format!("create {}: {}", dir.display(), e)))?;
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for record in records {
        let roles = &record.layout.roles;
        let samples = record.layout.n_samples();
        for map in &record.maps {
            let kind_tag = match map.kind {
                AttentionKind::EncoderSelf => "encoder_self",
                AttentionKind::DecoderSelf => "decoder_self",
                AttentionKind::DecoderCross => "decoder_cross",
            };
            let file = format!(
                "attn_layer{}_block{}_{}.npy",
                record.cnn_layer, map.block, kind_tag
            );
            let path = dir.join(&file);
            let mut out = std::fs::File::create(&path)
                .map_err(|e| ModelError::checkpoint(format!("create {}: {}", path.display(), e)))?;
            write_npy(&mut out, &map.weights)?;
            let shape = map.weights.shape();
            // Axis roles depend on which sequence the attention ran over:
            // encoder-decoder splits the token list at the placeholder offset.
            let (query_roles, key_roles) = match map.kind {
                AttentionKind::EncoderSelf if shape[1] == roles.len() => {
                    (&roles[..], &roles[..])
                }
                AttentionKind::EncoderSelf => (&roles[..samples], &roles[..samples]),
                AttentionKind::DecoderSelf => (&roles[samples..], &roles[samples..]),
                AttentionKind::DecoderCross => (&roles[samples..], &roles[..samples]),
            };
            entries.push(MapEntry {
                file,
                cnn_layer: record.cnn_layer,
                block: map.block,
                kind: map.kind,
                heads: shape[0],
                queries: shape[1],
                keys: shape[2],
                query_roles,
                key_roles,
            });
            files.push(path);
        }
    }
    let sidecar = dir.join("annotations.json");
    let json = serde_json::to_vec_pretty(&entries)
        .map_err(|e| ModelError::checkpoint(format!("annotations encode: {}", e)))?;
    std::fs::write(&sidecar, json)
        .map_err(|e| ModelError::checkpoint(format!("write {}: {}", sidecar.display(), e)))?;
    files.push(sidecar);
    Ok(files)
}
