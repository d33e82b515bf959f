//! One-step gradient-descent update of a logits layer.
//!
//! For a linear classifier softmax(W e + b) initialized label-independently
//! (identical rows of W, identical entries of b), one plain gradient step on
//! the softmax cross-entropy over n support samples gives exactly
//!
//!   dW[i][j] = gamma/n * sum_m (y[m][i] - 1/C) * e[m][j]
//!   db[i]    = gamma/n * sum_m (y[m][i] - 1/C)
//!
//! because the label-independent init makes every class probability 1/C.
//! This is the closed form the attention generator is measured against.

use hypergen_tensor::Tensor;

use crate::OracleError;

/// Logits-layer update produced by [`one_step_gd_logits`].
///
/// `delta_w` is `[n_classes, dim_e]`, `delta_b` is `[n_classes]`. The update
/// is computed on centered embeddings; `shift` (`[dim_e]`) records the mean
/// that was subtracted so callers can reproduce the exact inputs.
#[derive(Debug, Clone)]
pub struct LogitsUpdate {
    pub delta_w: Tensor<f64>,
    pub delta_b: Tensor<f64>,
    pub gamma: f64,
    pub shift: Tensor<f64>,
}

/// One exact gradient-descent step on the logits layer.
///
/// `embeddings` is `[n, dim_e]`, `one_hot_labels` is `[n, n_classes]` with
/// exact one-hot rows. Embeddings are centered first (the construction
/// assumes unbiased embeddings) and the subtracted mean is recorded.
///
/// The bias update is computed from per-class counts, `gamma/n * (k_i - n/C)`,
/// which is algebraically identical to the sum form and exactly zero for
/// balanced episodes where C divides n.
pub fn one_step_gd_logits(
    embeddings: &Tensor<f64>,
    one_hot_labels: &Tensor<f64>,
    gamma: f64,
    n_classes: usize,
) -> Result<LogitsUpdate, OracleError> {
    if embeddings.rank() != 2 {
        return Err(OracleError::invalid(format!(
            "embeddings must be [n, dim_e], got rank {}",
            embeddings.rank()
        )));
    }
    let n = embeddings.shape()[0];
    let dim_e = embeddings.shape()[1];
    if n == 0 {
        return Err(OracleError::invalid("need at least one sample"));
    }
    if n_classes == 0 {
        return Err(OracleError::invalid("need at least one class"));
    }
    if one_hot_labels.shape() != [n, n_classes] {
        return Err(OracleError::invalid(format!(
            "one-hot labels must be [{n}, {n_classes}], got {:?}",
            one_hot_labels.shape()
        )));
    }
    if !embeddings.is_finite() {
        return Err(OracleError::invalid("embeddings contain non-finite values"));
    }
    for m in 0..n {
        let mut ones = 0usize;
        for c in 0..n_classes {
            let v = one_hot_labels.at(&[m, c]);
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(OracleError::invalid(format!(
                    "label row {m} is not one-hot: entry {c} = {v}"
                )));
            }
        }
        if ones != 1 {
            return Err(OracleError::invalid(format!(
                "label row {m} has {ones} ones, expected exactly 1"
            )));
        }
    }

    let mut shift = vec![0.0f64; dim_e];
    for m in 0..n {
        for j in 0..dim_e {
            shift[j] += embeddings.at(&[m, j]);
        }
    }
    for s in shift.iter_mut() {
        *s /= n as f64;
    }

    let inv_c = 1.0 / n_classes as f64;
    let scale = gamma / n as f64;
    let mut delta_w = vec![0.0f64; n_classes * dim_e];
    let mut counts = vec![0.0f64; n_classes];
    for m in 0..n {
        for i in 0..n_classes {
            let y = one_hot_labels.at(&[m, i]);
            counts[i] += y;
            let coeff = y - inv_c;
            let row = &mut delta_w[i * dim_e..(i + 1) * dim_e];
            for (j, w) in row.iter_mut().enumerate() {
                *w += coeff * (embeddings.at(&[m, j]) - shift[j]);
            }
        }
    }
    for w in delta_w.iter_mut() {
        *w *= scale;
    }
    let per_class = n as f64 / n_classes as f64;
    let delta_b: Vec<f64> = counts.iter().map(|&k| scale * (k - per_class)).collect();

    Ok(LogitsUpdate {
        delta_w: Tensor::new(vec![n_classes, dim_e], delta_w).expect("shape consistent"),
        delta_b: Tensor::from_vec(delta_b),
        gamma,
        shift: Tensor::from_vec(shift),
    })
}
