use hypergen_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::augment;
use crate::error::EpisodeError;
use crate::index::DatasetIndex;

#[derive(Debug, Clone)]
pub struct SupportSample {
    /// Normalized [C,H,W] image.
    pub image: Tensor<f32>,
    /// Episode label in [0,n), or None for unlabeled samples.
    pub label: Option<usize>,
    /// The episode label the sample would carry; audit only, never an input.
    pub hidden_label: usize,
}

#[derive(Debug, Clone)]
pub struct QuerySample {
    pub image: Tensor<f32>,
    pub label: usize,
}

/// One n-way-k-shot episode: labeled (and optionally unlabeled) support
/// samples plus labeled query samples, drawn without replacement.
#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<SupportSample>,
    pub query: Vec<QuerySample>,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub u_unlabeled: usize,
    /// episode label -> dataset class id.
    pub class_map: Vec<usize>,
    pub seed: u64,
}

impl Episode {
    pub fn labeled_count(&self) -> usize {
        self.support.iter().filter(|s| s.label.is_some()).count()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.support.len() - self.labeled_count()
    }
}

/// Draws `count` distinct indices from [0, pool) by partial Fisher-Yates;
/// deterministic in the rng stream.
fn draw_distinct(rng: &mut ChaCha8Rng, pool: usize, count: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..pool).collect();
    for i in 0..count {
        let j = rng.gen_range(i..pool);
        ids.swap(i, j);
    }
    ids.truncate(count);
    ids
}

/// Samples one episode. Pure function of (index, shape, seed): the same
/// arguments always produce byte-identical tensors.
pub fn sample_episode(
    index: &DatasetIndex,
    n: usize,
    k: usize,
    q: usize,
    u: usize,
    seed: u64,
) -> Result<Episode, EpisodeError> {
    if n == 0 || k == 0 {
        return Err(EpisodeError::Request(format!(
            "need n >= 1 and k >= 1, got n={} k={}",
            n, k
        )));
    }
    if n > index.num_classes() {
        return Err(EpisodeError::Request(format!(
            "{}-way episode from {} classes",
            n,
            index.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The drawn order of classes is itself a uniform random permutation, so
    // episode labels carry no information about class identity.
    let class_map = draw_distinct(&mut rng, index.num_classes(), n);
    let per_class = k + u + q;
    let mut picks: Vec<Vec<usize>> = Vec::with_capacity(n);
    for &class in &class_map {
        let avail = index.samples_in_class(class);
        if avail < per_class {
            return Err(EpisodeError::Class {
                class: index.classes[class].name.clone(),
                detail: format!("episode needs {} samples, class has {}", per_class, avail),
            });
        }
        picks.push(draw_distinct(&mut rng, avail, per_class));
    }
    let fetch = |index: &DatasetIndex,
                 rng: &mut ChaCha8Rng,
                 class: usize,
                 sample: usize|
     -> Result<Tensor<f32>, EpisodeError> {
        let base = index.base_image(class, sample)?;
        let aug_seed = rng.gen::<u64>();
        let img = augment(&base, &index.augment, index.classes[class].rot, aug_seed);
        Ok(img.to_tensor(index.norm_mean, index.norm_std))
    };
    let mut support = Vec::with_capacity(n * (k + u));
    for (label, &class) in class_map.iter().enumerate() {
        for j in 0..k {
            support.push(SupportSample {
                image: fetch(index, &mut rng, class, picks[label][j])?,
                label: Some(label),
                hidden_label: label,
            });
        }
    }
    for (label, &class) in class_map.iter().enumerate() {
        for j in 0..u {
            support.push(SupportSample {
                image: fetch(index, &mut rng, class, picks[label][k + j])?,
                label: None,
                hidden_label: label,
            });
        }
    }
    let mut query = Vec::with_capacity(n * q);
    for (label, &class) in class_map.iter().enumerate() {
        for j in 0..q {
            query.push(QuerySample {
                image: fetch(index, &mut rng, class, picks[label][k + u + j])?,
                label,
            });
        }
    }
    Ok(Episode {
        support,
        query,
        n_way: n,
        k_shot: k,
        q_query: q,
        u_unlabeled: u,
        class_map,
        seed,
    })
}

/// Probability of keeping each unlabeled support sample at a training step:
/// the ignore probability starts at 0.7 and falls linearly to 0 by half the
/// run, so keep rises from 0.3 to 1.0 and stays there.
pub fn unlabeled_keep_probability(step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return 1.0;
    }
    let frac = step as f64 / total_steps as f64;
    let ignore = 0.7 * (1.0 - 2.0 * frac).max(0.0);
    1.0 - ignore
}

/// Independently drops each unlabeled support sample with probability
/// 1 - keep. Labeled support and queries are untouched; dropped samples are
/// removed outright (the token sequence shrinks, nothing is zeroed).
pub fn mask_unlabeled(episode: &Episode, keep: f64, seed: u64) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = episode.clone();
    out.support = episode
        .support
        .iter()
        .filter(|s| s.label.is_some() || rng.gen_bool(keep.clamp(0.0, 1.0)))
        .cloned()
        .collect();
    out
}
