use std::path::Path;

use url::Url;

use crate::error::EpisodeError;
use crate::index::{load_dataset, DatasetIndex, SplitConfig};
use crate::synth::synth_glyphs_with;

struct SynthParams {
    classes: usize,
    per: usize,
    size: usize,
    seed: u64,
}

fn parse_synth(uri: &str) -> Result<SynthParams, EpisodeError> {
    let url = Url::parse(uri).map_err(|e| EpisodeError::Uri(format!("{}: {}", uri, e)))?;
    let family = url.host_str().unwrap_or("");
    if family != "glyphs" {
        return Err(EpisodeError::Uri(format!(
            "unknown synthetic dataset '{}' in {}",
            family, uri
        )));
    }
    let mut params = SynthParams {
        classes: 20,
        per: 30,
        size: 16,
        seed: 0,
    };
    for (key, value) in url.query_pairs() {
        let parse_usize = || {
            value
                .parse::<usize>()
                .map_err(|_| EpisodeError::Uri(format!("bad value for {}: {}", key, value)))
        };
        match key.as_ref() {
            "classes" => params.classes = parse_usize()?,
            "per" => params.per = parse_usize()?,
            "size" => params.size = parse_usize()?,
            "seed" => {
                params.seed = value
                    .parse::<u64>()
                    .map_err(|_| EpisodeError::Uri(format!("bad value for seed: {}", value)))?
            }
            other => {
                return Err(EpisodeError::Uri(format!("unknown parameter '{}'", other)));
            }
        }
    }
    Ok(params)
}

/// Resolves a dataset address. `synth://glyphs?classes=..&per=..&size=..&seed=..`
/// builds the procedural glyph dataset; anything else is a filesystem root of
/// per-class PNG directories.
pub fn dataset_from_uri(uri: &str, cfg: &SplitConfig) -> Result<DatasetIndex, EpisodeError> {
    if uri.starts_with("synth://") {
        let p = parse_synth(uri)?;
        synth_glyphs_with(p.classes, p.per, p.size, p.seed, cfg)
    } else {
        load_dataset(Path::new(uri), cfg)
    }
}

/// Number of base classes the URI would yield, without building the index.
/// Lets callers size an all-in-one-split config before loading.
pub fn count_classes(uri: &str) -> Result<usize, EpisodeError> {
    if uri.starts_with("synth://") {
        return Ok(parse_synth(uri)?.classes);
    }
    let root = Path::new(uri);
    if !root.is_dir() {
        return Err(EpisodeError::Dataset(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut n = 0usize;
    for entry in std::fs::read_dir(root)? {
        if entry?.file_type()?.is_dir() {
            n += 1;
        }
    }
    if n == 0 {
        return Err(EpisodeError::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    Ok(n)
}
