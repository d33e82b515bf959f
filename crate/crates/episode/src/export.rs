use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hypergen_tensor::write_tensor;
use serde::Serialize;

use crate::error::EpisodeError;
use crate::index::DatasetIndex;
use crate::sample::sample_episode;

#[derive(Serialize)]
struct SampleRef {
    blob: String,
    /// Episode label; null for unlabeled support samples.
    label: Option<usize>,
}

#[derive(Serialize)]
struct EpisodeRecord {
    seed: u64,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    u_unlabeled: usize,
    class_map: Vec<usize>,
    class_names: Vec<String>,
    support: Vec<SampleRef>,
    query: Vec<SampleRef>,
}

/// Materializes an episode stream: a JSONL manifest (one episode per line)
/// plus one tensor blob per image under `dir/blobs/`. Returns the manifest
/// path.
#[allow(clippy::too_many_arguments)]
pub fn export_episodes(
    index: &DatasetIndex,
    n: usize,
    k: usize,
    q: usize,
    u: usize,
    seeds: &[u64],
    dir: &Path,
) -> Result<PathBuf, EpisodeError> {
    let blob_dir = dir.join("blobs");
    std::fs::create_dir_all(&blob_dir)?;
    let manifest_path = dir.join("episodes.jsonl");
    let mut manifest = BufWriter::new(File::create(&manifest_path)?);
    for &seed in seeds {
        let ep = sample_episode(index, n, k, q, u, seed)?;
        let write_blob = |tag: &str, i: usize, t: &hypergen_tensor::Tensor<f32>| {
            let name = format!("ep{}_{}{}.hgt", seed, tag, i);
            let mut f = BufWriter::new(File::create(blob_dir.join(&name))?);
            write_tensor(&mut f, t).map_err(|e| EpisodeError::Serialization(e.to_string()))?;
            Ok::<String, EpisodeError>(format!("blobs/{}", name))
        };
        let mut support = Vec::with_capacity(ep.support.len());
        for (i, s) in ep.support.iter().enumerate() {
            support.push(SampleRef {
                blob: write_blob("s", i, &s.image)?,
                label: s.label,
            });
        }
        let mut query = Vec::with_capacity(ep.query.len());
        for (i, qs) in ep.query.iter().enumerate() {
            query.push(SampleRef {
                blob: write_blob("q", i, &qs.image)?,
                label: Some(qs.label),
            });
        }
        let record = EpisodeRecord {
            seed,
            n_way: ep.n_way,
            k_shot: ep.k_shot,
            q_query: ep.q_query,
            u_unlabeled: ep.u_unlabeled,
            class_map: ep.class_map.clone(),
            class_names: ep
                .class_map
                .iter()
                .map(|&c| index.classes[c].name.clone())
                .collect(),
            support,
            query,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| EpisodeError::Serialization(e.to_string()))?;
        manifest.write_all(line.as_bytes())?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}
