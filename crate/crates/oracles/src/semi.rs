//! Two-layer construction for partially labeled support sets.
//!
//! Layer 1 propagates class marks to unlabeled samples: an unlabeled token
//! with embedding e_u attends over all tokens with weights
//! softmax_j(beta1 * e_u . e_j) and adds C_SCALE * p_j * xi(c_j) for every
//! labeled token j to its own label part (labeled and placeholder tokens
//! contribute zero values, and only unlabeled tokens are updated; labeled
//! tokens keep their exact class codes). Layer 2 is the supervised
//! attention generator run over the marked tokens with unit value scale.
//!
//! C_SCALE is 2 because an unlabeled duplicate of a labeled sample splits
//! its attention evenly between the labeled twin and itself (both dot
//! products equal |e|^2), so doubling the propagated mark restores a unit
//! class coefficient and layer 2 then weighs the pair members equally.

use hypergen_tensor::Tensor;

use crate::attention::{run_heads, AttentionHead, OracleCodebook, TokenSet};
use crate::OracleError;

const C_SCALE: f64 = 2.0;

/// Output of [`semi_supervised_propagation`].
///
/// `slices` is the generated `[n_classes, d_e]` weight matrix. `marks` is
/// `[n, n_classes]`: the class coefficients layer 1 added to each sample
/// token (rows for labeled samples are zero). `attention` holds the layer-2
/// placeholder attention rows `[n_classes, n_tokens]` (samples first, then
/// placeholders).
#[derive(Debug, Clone)]
pub struct PropagationReport {
    pub slices: Tensor<f64>,
    pub marks: Tensor<f64>,
    pub attention: Tensor<f64>,
}

/// Generate logits weight slices from a partially labeled support set.
///
/// `partial_labels[m] = None` marks sample m as unlabeled. Classes are
/// `0..=max(labels)` and each needs at least one labeled sample. With no
/// unlabeled samples this reduces exactly (bitwise) to
/// [`crate::construct_attention_generator`] with `gamma = 1`.
pub fn semi_supervised_propagation(
    embeddings: &Tensor<f64>,
    partial_labels: &[Option<usize>],
    beta1: f64,
    beta2: f64,
) -> Result<PropagationReport, OracleError> {
    if embeddings.rank() != 2 {
        return Err(OracleError::invalid(format!(
            "embeddings must be [n, d_e], got rank {}",
            embeddings.rank()
        )));
    }
    let n = embeddings.shape()[0];
    let d_e = embeddings.shape()[1];
    if n == 0 || partial_labels.len() != n {
        return Err(OracleError::invalid(format!(
            "need n >= 1 labels matching embeddings, got {} labels for {n} samples",
            partial_labels.len()
        )));
    }
    if !embeddings.is_finite() {
        return Err(OracleError::invalid("embeddings contain non-finite values"));
    }
    let n_classes = match partial_labels.iter().flatten().max() {
        Some(max) => max + 1,
        None => return Err(OracleError::invalid("no labeled samples")),
    };
    for c in 0..n_classes {
        if !partial_labels.contains(&Some(c)) {
            return Err(OracleError::invalid(format!("class {c} has no labeled sample")));
        }
    }

    let codebook = OracleCodebook::new(n_classes);
    let mut tokens = TokenSet::from_labeled(embeddings, partial_labels, &codebook);

    let mut marks = Tensor::zeros(vec![n, n_classes]);
    for u in 0..n {
        if partial_labels[u].is_some() {
            continue;
        }
        let eu = tokens.embeds[u].clone();
        let logits: Vec<f64> = (0..tokens.n_tokens())
            .map(|j| beta1 * eu.iter().zip(&tokens.embeds[j]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (j, lab) in partial_labels.iter().enumerate() {
            if let Some(c) = lab {
                let mark = C_SCALE * exps[j] / z;
                *marks.at_mut(&[u, *c]) += mark;
                tokens.label_parts[u][*c] += mark;
            }
        }
    }

    let head = AttentionHead::matching(&codebook, d_e, beta2, 1.0);
    let (slices, mut attention) = run_heads(&tokens, &[head], &codebook);
    Ok(PropagationReport { slices, marks, attention: attention.remove(0) })
}
