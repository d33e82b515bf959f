//! Episode tokenization: the label codebook, sample tokens, and weight
//! placeholder tokens.
//!
//! A sample token is the concatenation of a label embedding (or the shared
//! unlabeled embedding), the image embedding, and the current layer's
//! activation embedding. A placeholder token is that layer's learnable slice
//! embedding padded with zeros to the common token width. The width is the
//! larger of the sample token size and the layer's weight slice length, so
//! output tokens always have room to carry a full slice.

use hypergen_tensor::{Real, Tape, Tensor, Tid};
use rand::Rng;
use serde::Serialize;

use crate::error::ModelError;
use crate::params::{normal_init, Bound, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum TokenRole {
    Labeled { class: usize },
    Unlabeled,
    #[serde(rename = "weights")]
    Weight { slice: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenLayout {
    /// Raw sample token size: label + image + activation embedding dims.
    pub sample_dim: usize,
    /// Common token width; `max(sample_dim, slice_len)` for the layer.
    pub width: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_placeholders: usize,
    /// Role of every token, in sequence order.
    pub roles: Vec<TokenRole>,
}

impl TokenLayout {
    pub fn n_samples(&self) -> usize {
        self.n_labeled + self.n_unlabeled
    }

    pub fn n_tokens(&self) -> usize {
        self.n_samples() + self.n_placeholders
    }

    /// Row index of the first placeholder token.
    pub fn placeholder_offset(&self) -> usize {
        self.n_samples()
    }
}

/// Learnable label embeddings: one row per episode class plus one shared
/// "unlabeled" row. Placeholder embeddings live with their layers; everything
/// is d-dimensional.
pub struct LabelCodebook {
    pub xi: ParamId,
    pub xi_hat: ParamId,
    pub n_way: usize,
    pub d: usize,
}

impl LabelCodebook {
    pub fn init<S: Real, R: Rng>(
        n_way: usize,
        d: usize,
        params: &mut ParamSet<S>,
        rng: &mut R,
    ) -> LabelCodebook {
        let std = (1.0 / d as f64).sqrt();
        LabelCodebook {
            xi: params.add("codebook.xi", normal_init(rng, vec![n_way, d], std)),
            xi_hat: params.add("codebook.xi_hat", normal_init(rng, vec![1, d], std)),
            n_way,
            d,
        }
    }
}

/// Builds the token matrix for one generated layer.
#[allow(clippy::too_many_arguments)]
pub fn encode_tokens<S: Real>(
    tape: &mut Tape<S>,
    bound: &Bound,
    codebook: &LabelCodebook,
    labels: &[Option<usize>],
    image_embed: Option<Tid>,
    act_embed: Tid,
    mu: ParamId,
    width: usize,
) -> Result<(Tid, TokenLayout), ModelError> {
    let m = labels.len();
    if m == 0 {
        return Err(ModelError::config("empty support set"));
    }
    if let Some(&bad) = labels.iter().flatten().find(|&&c| c >= codebook.n_way) {
        return Err(ModelError::config(format!(
            "label {} outside the {}-way codebook",
            bad, codebook.n_way
        )));
    }
    for (name, t) in [("image", image_embed), ("activation", Some(act_embed))] {
        if let Some(t) = t {
            let s = tape.shape(t);
            if s.len() != 2 || s[0] != m {
                return Err(ModelError::config(format!(
                    "{} embedding {:?} for {} samples",
                    name, s, m
                )));
            }
        }
    }
    // Row n_way of the stacked codebook is the unlabeled embedding; gathering
    // keeps gradients flowing into exactly the rows an episode touches.
    let xi_full = tape.concat(&[bound.tid(codebook.xi), bound.tid(codebook.xi_hat)], 0)?;
    let idx: Vec<usize> = labels.iter().map(|l| l.unwrap_or(codebook.n_way)).collect();
    let label_rows = tape.gather_rows(xi_full, &idx)?;
    let mut parts = vec![label_rows];
    if let Some(img) = image_embed {
        parts.push(img);
    }
    parts.push(act_embed);
    let samples = tape.concat(&parts, 1)?;
    let sample_dim = tape.shape(samples)[1];
    if width < sample_dim {
        return Err(ModelError::config(format!(
            "token width {} below sample token size {}",
            width, sample_dim
        )));
    }
    let samples = pad_cols(tape, samples, width)?;
    let mu_rows = bound.tid(mu);
    let n_placeholders = tape.shape(mu_rows)[0];
    let placeholders = pad_cols(tape, mu_rows, width)?;
    let tokens = tape.concat(&[samples, placeholders], 0)?;
    let mut roles: Vec<TokenRole> = labels
        .iter()
        .map(|l| match l {
            Some(class) => TokenRole::Labeled { class: *class },
            None => TokenRole::Unlabeled,
        })
        .collect();
    roles.extend((0..n_placeholders).map(|slice| TokenRole::Weight { slice }));
    let layout = TokenLayout {
        sample_dim,
        width,
        n_labeled: labels.iter().filter(|l| l.is_some()).count(),
        n_unlabeled: labels.iter().filter(|l| l.is_none()).count(),
        n_placeholders,
        roles,
    };
    Ok((tokens, layout))
}

/// Zero-pads a [R, C] matrix on the right to [R, width].
fn pad_cols<S: Real>(tape: &mut Tape<S>, x: Tid, width: usize) -> Result<Tid, ModelError> {
    let s = tape.shape(x).to_vec();
    if s[1] == width {
        return Ok(x);
    }
    let zeros = tape.constant(Tensor::zeros(vec![s[0], width - s[1]]));
    Ok(tape.concat(&[x, zeros], 1)?)
}
