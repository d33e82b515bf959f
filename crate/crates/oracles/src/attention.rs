//! Hand-wired self-attention layer that generates a logits weight matrix.
//!
//! Tokens are [label part; embedding part]. Sample tokens carry an
//! orthonormal class code xi(c) and their embedding; one placeholder token
//! per weight slice carries a code mu(i) and a zero embedding. The matrices
//! are chosen so the placeholder for slice i attends (sharpness beta) to
//! exactly the samples labeled i and reads out their embeddings:
//!
//!   Q = beta * sum_i xi(i) mu(i)^T   (placeholder i queries along xi(i))
//!   K = sum_c xi(c) xi(c)^T          (samples key by their class code)
//!   V = gamma * [0 | I]              (values are scaled embeddings)
//!
//! As beta grows, slice i converges to gamma/n_i * sum over class-i samples
//! of e_m: the per-class embedding mean. Everything here is computed with
//! plain f64 loops through the exported matrices, so the matrices themselves
//! are the construction, not a description of it.

use hypergen_tensor::Tensor;

use crate::OracleError;

/// Orthonormal codes for class labels, the unlabeled marker, and weight
/// slice placeholders. Basis vectors in `d_label = 2 * n_classes + 1` dims:
/// xi(c) = basis c, xi_hat = basis C, mu(i) = basis C + 1 + i.
#[derive(Debug, Clone, Copy)]
pub struct OracleCodebook {
    pub n_classes: usize,
}

impl OracleCodebook {
    pub fn new(n_classes: usize) -> Self {
        OracleCodebook { n_classes }
    }

    pub fn d_label(&self) -> usize {
        2 * self.n_classes + 1
    }

    fn basis(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.d_label()];
        v[idx] = 1.0;
        v
    }

    /// Class code for label `c`.
    pub fn xi(&self, c: usize) -> Vec<f64> {
        assert!(c < self.n_classes, "label {c} out of range");
        self.basis(c)
    }

    /// Marker carried by unlabeled sample tokens.
    pub fn xi_hat(&self) -> Vec<f64> {
        self.basis(self.n_classes)
    }

    /// Placeholder code for weight slice `i`.
    pub fn mu(&self, i: usize) -> Vec<f64> {
        assert!(i < self.n_classes, "slice {i} out of range");
        self.basis(self.n_classes + 1 + i)
    }
}

/// One attention head as explicit matrices over tokens of width
/// `D = d_label + d_e`: `q` and `k` are `[d_label, D]`, `v` is `[d_e, D]`.
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub q: Tensor<f64>,
    pub k: Tensor<f64>,
    pub v: Tensor<f64>,
}

impl AttentionHead {
    /// The label-matching head: queries map mu(i) to beta * xi(i), keys
    /// project onto the class codes, values read out embeddings scaled by
    /// `value_scale`.
    pub(crate) fn matching(
        codebook: &OracleCodebook,
        d_e: usize,
        beta: f64,
        value_scale: f64,
    ) -> Self {
        let c = codebook.n_classes;
        let d_label = codebook.d_label();
        let d = d_label + d_e;
        let mut q = Tensor::zeros(vec![d_label, d]);
        let mut k = Tensor::zeros(vec![d_label, d]);
        for r in 0..c {
            *q.at_mut(&[r, c + 1 + r]) = beta;
            *k.at_mut(&[r, r]) = 1.0;
        }
        AttentionHead { q, k, v: embedding_values(d_label, d_e, value_scale) }
    }

    /// The mean-correction head: zero queries give uniform attention over
    /// all tokens, so the output is a scaled mean of every sample embedding
    /// (placeholders contribute zero values).
    fn uniform(codebook: &OracleCodebook, d_e: usize, value_scale: f64) -> Self {
        let d_label = codebook.d_label();
        let d = d_label + d_e;
        AttentionHead {
            q: Tensor::zeros(vec![d_label, d]),
            k: Tensor::zeros(vec![d_label, d]),
            v: embedding_values(d_label, d_e, value_scale),
        }
    }

    fn apply(m: &Tensor<f64>, token: &[f64]) -> Vec<f64> {
        let rows = m.shape()[0];
        let cols = m.shape()[1];
        assert_eq!(cols, token.len(), "token width mismatch");
        let data = m.data();
        (0..rows)
            .map(|r| {
                let row = &data[r * cols..(r + 1) * cols];
                row.iter().zip(token).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

fn embedding_values(d_label: usize, d_e: usize, scale: f64) -> Tensor<f64> {
    let mut v = Tensor::zeros(vec![d_e, d_label + d_e]);
    for r in 0..d_e {
        *v.at_mut(&[r, d_label + r]) = scale;
    }
    v
}

/// Token list fed to the attention layer: `n_samples` sample tokens in input
/// order followed by one placeholder token per class.
#[derive(Debug, Clone)]
pub(crate) struct TokenSet {
    pub label_parts: Vec<Vec<f64>>,
    pub embeds: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub d_e: usize,
}

impl TokenSet {
    pub fn from_labeled(
        embeddings: &Tensor<f64>,
        labels: &[Option<usize>],
        codebook: &OracleCodebook,
    ) -> Self {
        let n = embeddings.shape()[0];
        let d_e = embeddings.shape()[1];
        let mut label_parts = Vec::with_capacity(n + codebook.n_classes);
        let mut embeds = Vec::with_capacity(n + codebook.n_classes);
        for (m, lab) in labels.iter().enumerate() {
            label_parts.push(match lab {
                Some(c) => codebook.xi(*c),
                None => codebook.xi_hat(),
            });
            embeds.push((0..d_e).map(|j| embeddings.at(&[m, j])).collect());
        }
        for i in 0..codebook.n_classes {
            label_parts.push(codebook.mu(i));
            embeds.push(vec![0.0; d_e]);
        }
        TokenSet { label_parts, embeds, n_samples: n, d_e }
    }

    pub fn n_tokens(&self) -> usize {
        self.label_parts.len()
    }

    fn token(&self, j: usize) -> Vec<f64> {
        let mut t = self.label_parts[j].clone();
        t.extend_from_slice(&self.embeds[j]);
        t
    }
}

/// Run the heads over the placeholder queries. Head outputs are summed
/// (an output projection of ones). Returns the generated slices
/// `[n_classes, d_e]` and per-head attention rows `[n_classes, n_tokens]`.
pub(crate) fn run_heads(
    tokens: &TokenSet,
    heads: &[AttentionHead],
    codebook: &OracleCodebook,
) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let c = codebook.n_classes;
    let n_tokens = tokens.n_tokens();
    let full: Vec<Vec<f64>> = (0..n_tokens).map(|j| tokens.token(j)).collect();
    let mut slices = Tensor::zeros(vec![c, tokens.d_e]);
    let mut attention = Vec::with_capacity(heads.len());
    for head in heads {
        let keys: Vec<Vec<f64>> = full.iter().map(|t| AttentionHead::apply(&head.k, t)).collect();
        let values: Vec<Vec<f64>> = full.iter().map(|t| AttentionHead::apply(&head.v, t)).collect();
        let mut attn = Tensor::zeros(vec![c, n_tokens]);
        for i in 0..c {
            let q = AttentionHead::apply(&head.q, &full[tokens.n_samples + i]);
            let logits: Vec<f64> =
                keys.iter().map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, &e) in exps.iter().enumerate() {
                let p = e / z;
                *attn.at_mut(&[i, j]) = p;
                for (out, v) in (0..tokens.d_e).zip(&values[j]) {
                    *slices.at_mut(&[i, out]) += p * v;
                }
            }
        }
        attention.push(attn);
    }
    (slices, attention)
}

/// Attention layer with hand-set weights that emits logits weight slices.
///
/// `slices` is the generated `[n_classes, d_e]` weight matrix. `attention`
/// holds each head's placeholder attention rows over the token list
/// (samples first, then placeholders). `mismatch_attention` is the worst
/// probability mass any slice puts on tokens not labeled with its class;
/// it grows as `exp(-beta_scale)` and is the quantitative leakage report.
#[derive(Debug, Clone)]
pub struct AttentionGenerator {
    pub codebook: OracleCodebook,
    pub heads: Vec<AttentionHead>,
    pub gamma: f64,
    pub beta_scale: f64,
    pub slices: Tensor<f64>,
    pub attention: Vec<Tensor<f64>>,
    pub mismatch_attention: f64,
}

impl AttentionGenerator {
    /// Error if the label-matching head leaks more than `tol` probability
    /// mass onto wrong-class tokens (beta_scale too small).
    pub fn check_leakage(&self, tol: f64) -> Result<(), OracleError> {
        if self.mismatch_attention > tol {
            return Err(OracleError::invalid(format!(
                "attention leakage {:.3e} exceeds tolerance {tol:.3e}; increase beta_scale (currently {})",
                self.mismatch_attention, self.beta_scale
            )));
        }
        Ok(())
    }
}

fn validate_labeled(
    embeddings: &Tensor<f64>,
    labels: &[usize],
) -> Result<(usize, usize, usize), OracleError> {
    if embeddings.rank() != 2 {
        return Err(OracleError::invalid(format!(
            "embeddings must be [n, d_e], got rank {}",
            embeddings.rank()
        )));
    }
    let n = embeddings.shape()[0];
    let d_e = embeddings.shape()[1];
    if n == 0 || labels.len() != n {
        return Err(OracleError::invalid(format!(
            "need n >= 1 labels matching embeddings, got {} labels for {n} samples",
            labels.len()
        )));
    }
    if !embeddings.is_finite() {
        return Err(OracleError::invalid("embeddings contain non-finite values"));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(OracleError::invalid(format!("class {c} has no samples")));
        }
    }
    Ok((n, d_e, n_classes))
}

fn build(
    embeddings: &Tensor<f64>,
    labels: &[usize],
    gamma: f64,
    beta_scale: f64,
    mean_correction: bool,
) -> Result<AttentionGenerator, OracleError> {
    let (n, d_e, n_classes) = validate_labeled(embeddings, labels)?;
    let codebook = OracleCodebook::new(n_classes);
    let some_labels: Vec<Option<usize>> = labels.iter().map(|&c| Some(c)).collect();
    let tokens = TokenSet::from_labeled(embeddings, &some_labels, &codebook);

    let mut heads = Vec::new();
    if mean_correction {
        // Both heads carry gamma/C: the matching head then reproduces the
        // y-term of the one-step update on balanced episodes and the uniform
        // head the -1/C mean term. The uniform head sees n_tokens tokens but
        // only n nonzero values, hence the compensation factor.
        let g = gamma / n_classes as f64;
        let compensation = tokens.n_tokens() as f64 / n as f64;
        heads.push(AttentionHead::matching(&codebook, d_e, beta_scale, g));
        heads.push(AttentionHead::uniform(&codebook, d_e, -g * compensation));
    } else {
        heads.push(AttentionHead::matching(&codebook, d_e, beta_scale, gamma));
    }

    let (slices, attention) = run_heads(&tokens, &heads, &codebook);
    let mut mismatch = 0.0f64;
    for i in 0..n_classes {
        let mut mass = 0.0;
        for j in 0..tokens.n_tokens() {
            if j >= n || labels[j] != i {
                mass += attention[0].at(&[i, j]);
            }
        }
        mismatch = mismatch.max(mass);
    }

    Ok(AttentionGenerator {
        codebook,
        heads,
        gamma,
        beta_scale,
        slices,
        attention,
        mismatch_attention: mismatch,
    })
}

/// Single-head generator: slice i approximates `gamma/n_i * sum e_m` over
/// samples labeled i, with leakage of order `exp(-beta_scale)`. Classes are
/// `0..=max(labels)` and each must be populated.
pub fn construct_attention_generator(
    embeddings: &Tensor<f64>,
    labels: &[usize],
    gamma: f64,
    beta_scale: f64,
) -> Result<AttentionGenerator, OracleError> {
    build(embeddings, labels, gamma, beta_scale, false)
}

/// Two-head generator adding the mean-correction term. On balanced episodes
/// the summed heads reproduce the full one-step weight update with learning
/// rate `gamma` (both value scales are configured as `gamma / n_classes`).
pub fn construct_attention_generator_two_head(
    embeddings: &Tensor<f64>,
    labels: &[usize],
    gamma: f64,
    beta_scale: f64,
) -> Result<AttentionGenerator, OracleError> {
    build(embeddings, labels, gamma, beta_scale, true)
}
