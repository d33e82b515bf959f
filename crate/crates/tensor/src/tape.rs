use crate::dtype::Real;
use crate::error::TensorError;
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(pub(crate) usize);

impl Tid {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running batch-norm statistics, owned by the caller and updated in train
/// mode. Values are detached: gradients never flow through them.
#[derive(Debug, Clone)]
pub struct RunningStats<S: Real> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Real> RunningStats<S> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        }
    }
}

#[derive(Debug)]
enum Op<S: Real> {
    Leaf,
    Add(Tid, Tid),
    Sub(Tid, Tid),
    Mul(Tid, Tid),
    Neg(Tid),
    Scale(Tid, S),
    Matmul(Tid, Tid),
    Transpose2d(Tid),
    Reshape(Tid),
    Concat {
        parts: Vec<Tid>,
        axis: usize,
    },
    GatherRows {
        x: Tid,
        idx: Vec<usize>,
    },
    SliceAxis {
        x: Tid,
        axis: usize,
        start: usize,
        len: usize,
    },
    SumAxes {
        x: Tid,
        axes: Vec<usize>,
        mean: bool,
    },
    Relu(Tid),
    Softmax {
        x: Tid,
        axis: usize,
    },
    CrossEntropy {
        logits: Tid,
        labels: Vec<usize>,
    },
    LayerNorm {
        x: Tid,
        gamma: Tid,
        beta: Tid,
        eps: S,
    },
    BnApply {
        x: Tid,
        mean: Tid,
        var: Tid,
        gamma: Tid,
        beta: Tid,
        eps: S,
    },
    AddChan(Tid, Tid),
    AddRowVec(Tid, Tid),
    Conv2d {
        x: Tid,
        w: Tid,
        bias: Tid,
        stride: usize,
        pad: Padding,
    },
    MaxPool2d { x: Tid, argmax: Vec<usize> },
}

struct Node<S: Real> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, addressed by tensor id.
pub struct Gradients<S: Real> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, id: Tid) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: Tid) -> Option<Tensor<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Append-only arena of recorded operations. Backward walks the arena in
/// strict reverse append order, so any value computed through tape ops is
/// differentiable, including weights that are themselves network outputs.
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: Tid) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: Tid) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Register an input tensor. Gradients are reported only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Tid {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Tid {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: S) -> Tid {
        self.constant(Tensor::scalar(v))
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Tid {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Tid(self.nodes.len() - 1)
    }

    fn needs(&self, id: Tid) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn any_needs(&self, ids: &[Tid]) -> bool {
        ids.iter().any(|&i| self.needs(i))
    }

    fn same_shape(&self, op: &'static str, a: Tid, b: Tid) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.any_needs(&[a, b]);
        Ok(self.push(data, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.any_needs(&[a, b]);
        Ok(self.push(data, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.any_needs(&[a, b]);
        Ok(self.push(data, Op::Mul(a, b), ng))
    }

    pub fn neg(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let data = map(self.value(a), |x| -x);
        let ng = self.needs(a);
        Ok(self.push(data, Op::Neg(a), ng))
    }

    pub fn scale(&mut self, a: Tid, c: S) -> Result<Tid, TensorError> {
        let data = map(self.value(a), |x| x * c);
        let ng = self.needs(a);
        Ok(self.push(data, Op::Scale(a, c), ng))
    }

    pub fn relu(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let data = map(self.value(a), |x| if x > S::zero() { x } else { S::zero() });
        let ng = self.needs(a);
        Ok(self.push(data, Op::Relu(a), ng))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("{:?} x {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul_fwd(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out).expect("matmul shape");
        let ng = self.any_needs(&[a, b]);
        Ok(self.push(t, Op::Matmul(a, b), ng))
    }

    pub fn transpose2d(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::shape("transpose2d", format!("{:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out).expect("transpose shape");
        let ng = self.needs(a);
        Ok(self.push(t, Op::Transpose2d(a), ng))
    }

    pub fn reshape(&mut self, a: Tid, shape: Vec<usize>) -> Result<Tid, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(a), shape),
            ));
        }
        let t = Tensor::new(shape, self.value(a).data().to_vec()).expect("reshape");
        let ng = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// matmul(x, w) + bias broadcast over rows.
    pub fn linear(&mut self, x: Tid, w: Tid, bias: Tid) -> Result<Tid, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_rowvec(y, bias)
    }

    // ---- shape surgery ----

    pub fn concat(&mut self, parts: &[Tid], axis: usize) -> Result<Tid, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::invalid("concat", "no parts"));
        }
        let base = self.shape(parts[0]).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid(
                "concat",
                format!("axis {} of rank {}", axis, base.len()),
            ));
        }
        let mut total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::shape(
                    "concat",
                    format!("{:?} vs {:?} on axis {}", s, base, axis),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let mut out = vec![S::zero(); shape.iter().product()];
        let row_out = total * inner;
        let mut at = 0usize;
        for &p in parts {
            let plen = self.shape(p)[axis];
            let data = self.value(p).data();
            for o in 0..outer {
                let src = &data[o * plen * inner..(o + 1) * plen * inner];
                let dst = &mut out[o * row_out + at * inner..o * row_out + (at + plen) * inner];
                dst.copy_from_slice(src);
            }
            at += plen;
        }
        let t = Tensor::new(shape, out).expect("concat shape");
        let ng = self.any_needs(parts);
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Select rows of a 2-D tensor; indices may repeat. Gradient scatter-adds.
    pub fn gather_rows(&mut self, x: Tid, idx: &[usize]) -> Result<Tid, TensorError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::shape("gather_rows", format!("{:?}", s)));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row index {} out of {}", bad, rows),
            ));
        }
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![idx.len(), cols], out).expect("gather shape");
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// Contiguous slice along one axis.
    pub fn slice_axis(
        &mut self,
        x: Tid,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Tid, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::invalid(
                "slice_axis",
                format!("axis {} [{}..{}) of {:?}", axis, start, start + len, s),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(shape, out).expect("slice shape");
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::SliceAxis {
                x,
                axis,
                start,
                len,
            },
            ng,
        ))
    }

    // ---- reductions ----

    pub fn sum_axes(&mut self, x: Tid, axes: &[usize]) -> Result<Tid, TensorError> {
        self.reduce(x, axes, false)
    }

    pub fn mean_axes(&mut self, x: Tid, axes: &[usize]) -> Result<Tid, TensorError> {
        self.reduce(x, axes, true)
    }

    pub fn sum_all(&mut self, x: Tid) -> Result<Tid, TensorError> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, &axes, false)
    }

    pub fn mean_all(&mut self, x: Tid) -> Result<Tid, TensorError> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, &axes, true)
    }

    fn reduce(&mut self, x: Tid, axes: &[usize], mean: bool) -> Result<Tid, TensorError> {
        let s = self.shape(x).to_vec();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() || sorted.iter().any(|&a| a >= s.len()) {
            return Err(TensorError::invalid(
                "reduce",
                format!("axes {:?} for rank {}", axes, s.len()),
            ));
        }
        let out_shape: Vec<usize> = s
            .iter()
            .enumerate()
            .filter(|(i, _)| !sorted.contains(i))
            .map(|(_, &e)| e)
            .collect();
        let count: usize = sorted.iter().map(|&a| s[a]).product();
        let mut out = vec![S::zero(); out_shape.iter().product::<usize>().max(1)];
        let data = self.value(x).data();
        for_each_offset(&s, &sorted, |in_off, out_off| {
            out[out_off] += data[in_off];
        });
        if mean {
            let inv = S::one() / S::from_usize(count);
            for v in &mut out {
                *v *= inv;
            }
        }
        let t = Tensor::new(out_shape, out).expect("reduce shape");
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::SumAxes {
                x,
                axes: sorted,
                mean,
            },
            ng,
        ))
    }

    /// Per-channel mean of a [B,C,H,W] tensor -> [C].
    pub fn mean_channels(&mut self, x: Tid) -> Result<Tid, TensorError> {
        if self.shape(x).len() != 4 {
            return Err(TensorError::shape(
                "mean_channels",
                format!("{:?}", self.shape(x)),
            ));
        }
        self.mean_axes(x, &[0, 2, 3])
    }

    // ---- broadcasts ----

    /// x [B,C,H,W] + v [C], broadcast over batch and spatial axes.
    pub fn add_chan(&mut self, x: Tid, v: Tid) -> Result<Tid, TensorError> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if sx.len() != 4 || sv.len() != 1 || sv[0] != sx[1] {
            return Err(TensorError::shape(
                "add_chan",
                format!("{:?} + {:?}", sx, sv),
            ));
        }
        let [b, c, h, w] = [sx[0], sx[1], sx[2], sx[3]];
        let xv = self.value(x).data();
        let vv = self.value(v).data();
        let mut out = xv.to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let add = vv[ci];
                let base = (bi * c + ci) * h * w;
                for p in &mut out[base..base + h * w] {
                    *p += add;
                }
            }
        }
        let t = Tensor::new(sx.to_vec(), out).expect("add_chan shape");
        let ng = self.any_needs(&[x, v]);
        Ok(self.push(t, Op::AddChan(x, v), ng))
    }

    /// x [R,C] + v [C], broadcast over rows.
    pub fn add_rowvec(&mut self, x: Tid, v: Tid) -> Result<Tid, TensorError> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if sx.len() != 2 || sv.len() != 1 || sv[0] != sx[1] {
            return Err(TensorError::shape(
                "add_rowvec",
                format!("{:?} + {:?}", sx, sv),
            ));
        }
        let (r, c) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let vv = self.value(v).data();
        let mut out = xv.to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += vv[j];
            }
        }
        let t = Tensor::new(vec![r, c], out).expect("add_rowvec shape");
        let ng = self.any_needs(&[x, v]);
        Ok(self.push(t, Op::AddRowVec(x, v), ng))
    }

    // ---- nonlinear blocks ----

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Tid, axis: usize) -> Result<Tid, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::invalid(
                "softmax",
                format!("axis {} of rank {}", axis, s.len()),
            ));
        }
        if !self.value(x).is_finite() {
            return Err(TensorError::non_finite("softmax", "input"));
        }
        let (outer, len, inner) = split3(&s, axis);
        let data = self.value(x).data();
        let mut out = vec![S::zero(); data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| o * len * inner + a * inner + i;
                let mut mx = S::neg_infinity();
                for a in 0..len {
                    mx = mx.max(data[at(a)]);
                }
                let mut denom = S::zero();
                for a in 0..len {
                    let e = (data[at(a)] - mx).exp();
                    out[at(a)] = e;
                    denom += e;
                }
                let inv = S::one() / denom;
                for a in 0..len {
                    out[at(a)] *= inv;
                }
            }
        }
        let t = Tensor::new(s, out).expect("softmax shape");
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, axis }, ng))
    }

    /// Mean softmax cross-entropy of logits [B,n] against integer labels.
    /// Computed as logsumexp(row) - row[label], averaged over the batch.
    pub fn cross_entropy(&mut self, logits: Tid, labels: &[usize]) -> Result<Tid, TensorError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("logits {:?} vs {} labels", s, labels.len()),
            ));
        }
        let (b, n) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {} out of {}", bad, n),
            ));
        }
        if !self.value(logits).is_finite() {
            return Err(TensorError::non_finite("cross_entropy", "logits"));
        }
        let data = self.value(logits).data();
        let mut loss = S::zero();
        for (bi, &lab) in labels.iter().enumerate() {
            let row = &data[bi * n..(bi + 1) * n];
            let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for &v in row {
                denom += (v - mx).exp();
            }
            loss += mx + denom.ln() - row[lab];
        }
        loss = loss / S::from_usize(b);
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Layer normalization over the last axis: (x - mu) / sqrt(var + eps) *
    /// gamma + beta, with biased variance.
    pub fn layer_norm(
        &mut self,
        x: Tid,
        gamma: Tid,
        beta: Tid,
        eps: S,
    ) -> Result<Tid, TensorError> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| {
            TensorError::shape("layer_norm", "rank-0 input".to_string())
        })?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                format!(
                    "gamma {:?} beta {:?} for feature dim {}",
                    self.shape(gamma),
                    self.shape(beta),
                    d
                ),
            ));
        }
        let rows = self.value(x).numel() / d;
        let data = self.value(x).data();
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let mut out = vec![S::zero(); data.len()];
        let invd = S::one() / S::from_usize(d);
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mut mu = S::zero();
            for &v in row {
                mu += v;
            }
            mu *= invd;
            let mut var = S::zero();
            for &v in row {
                let dlt = v - mu;
                var += dlt * dlt;
            }
            var *= invd;
            let inv = S::one() / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * inv * g[j] + bta[j];
            }
        }
        let t = Tensor::new(s, out).expect("layer_norm shape");
        let ng = self.any_needs(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            ng,
        ))
    }

    /// Batch-norm affine transform with explicit statistics tensors:
    /// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel.
    ///
    /// mean/var are ordinary tape tensors, so normalization statistics computed
    /// on one batch (the support set) can be reused for another (the query
    /// set) with exact gradients through both uses.
    pub fn bn_apply(
        &mut self,
        x: Tid,
        mean: Tid,
        var: Tid,
        gamma: Tid,
        beta: Tid,
        eps: S,
    ) -> Result<Tid, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TensorError::shape("bn_apply", format!("{:?}", s)));
        }
        let c = s[1];
        for (name, t) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
            if self.shape(t) != [c] {
                return Err(TensorError::shape(
                    "bn_apply",
                    format!("{} {:?} for {} channels", name, self.shape(t), c),
                ));
            }
        }
        let [b, _, h, w] = [s[0], s[1], s[2], s[3]];
        let xv = self.value(x).data();
        let mv = self.value(mean).data();
        let vv = self.value(var).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![S::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv = S::one() / (vv[ci] + eps).sqrt();
                let scale = gv[ci] * inv;
                let shift = bv[ci] - mv[ci] * scale;
                let base = (bi * c + ci) * h * w;
                for p in 0..h * w {
                    out[base + p] = xv[base + p] * scale + shift;
                }
            }
        }
        let t = Tensor::new(s, out).expect("bn_apply shape");
        let ng = self.any_needs(&[x, mean, var, gamma, beta]);
        Ok(self.push(
            t,
            Op::BnApply {
                x,
                mean,
                var,
                gamma,
                beta,
                eps,
            },
            ng,
        ))
    }

    /// Per-channel batch mean and biased variance of a [B,C,H,W] tensor,
    /// composed from recorded ops so both are differentiable.
    pub fn batch_stats(&mut self, x: Tid) -> Result<(Tid, Tid), TensorError> {
        let mu = self.mean_channels(x)?;
        let neg_mu = self.neg(mu)?;
        let centered = self.add_chan(x, neg_mu)?;
        let sq = self.mul(centered, centered)?;
        let var = self.mean_channels(sq)?;
        Ok((mu, var))
    }

    /// Standard batch norm with caller-owned running statistics. Train mode
    /// normalizes with differentiable batch statistics and folds them into the
    /// running buffers; eval mode normalizes with the (constant) running
    /// buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Tid,
        gamma: Tid,
        beta: Tid,
        mode: BnMode,
        stats: &mut RunningStats<S>,
        momentum: S,
        eps: S,
    ) -> Result<Tid, TensorError> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::shape("batchnorm", format!("{:?}", s)));
        }
        match mode {
            BnMode::Train => {
                if s[0] < 2 {
                    return Err(TensorError::invalid(
                        "batchnorm",
                        "train mode needs batch size >= 2 for usable statistics",
                    ));
                }
                let (mu, var) = self.batch_stats(x)?;
                let one_m = S::one() - momentum;
                for (r, &v) in stats.mean.iter_mut().zip(self.value(mu).data()) {
                    *r = *r * one_m + v * momentum;
                }
                for (r, &v) in stats.var.iter_mut().zip(self.value(var).data()) {
                    *r = *r * one_m + v * momentum;
                }
                self.bn_apply(x, mu, var, gamma, beta, eps)
            }
            BnMode::Eval => {
                let mu = self.constant(Tensor::from_vec(stats.mean.clone()));
                let var = self.constant(Tensor::from_vec(stats.var.clone()));
                self.bn_apply(x, mu, var, gamma, beta, eps)
            }
        }
    }

    // ---- convolution ----

    pub fn conv2d(
        &mut self,
        x: Tid,
        w: Tid,
        bias: Tid,
        stride: usize,
        pad: Padding,
    ) -> Result<Tid, TensorError> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(bias));
        if sx.len() != 4 || sw.len() != 4 {
            return Err(TensorError::shape(
                "conv2d",
                format!("x {:?}, w {:?}", sx, sw),
            ));
        }
        let (k, c_in, c_out) = (sw[0], sw[2], sw[3]);
        if sw[1] != k {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel must be square, got {:?}", sw),
            ));
        }
        if sx[1] != c_in {
            return Err(TensorError::shape(
                "conv2d",
                format!("{} input channels vs kernel {}", sx[1], c_in),
            ));
        }
        if sb != [c_out] {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias {:?} for {} output channels", sb, c_out),
            ));
        }
        if pad == Padding::Same && k % 2 == 0 {
            return Err(TensorError::invalid("conv2d", "SAME padding needs odd k"));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        if pad == Padding::Valid && (sx[2] < k || sx[3] < k) {
            return Err(TensorError::invalid(
                "conv2d",
                format!("VALID input {:?} smaller than kernel {}", &sx[2..], k),
            ));
        }
        let xs = [sx[0], sx[1], sx[2], sx[3]];
        let (out, os) = kernels::conv2d_fwd(
            self.value(x).data(),
            xs,
            self.value(w).data(),
            k,
            c_out,
            self.value(bias).data(),
            stride,
            pad,
        );
        let t = Tensor::new(os.to_vec(), out).expect("conv2d shape");
        let ng = self.any_needs(&[x, w, bias]);
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            },
            ng,
        ))
    }

    pub fn maxpool2d(&mut self, x: Tid, window: usize, stride: usize) -> Result<Tid, TensorError> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(TensorError::shape("maxpool2d", format!("{:?}", s)));
        }
        if window == 0 || stride == 0 || window > s[2] || window > s[3] {
            return Err(TensorError::invalid(
                "maxpool2d",
                format!("window {} stride {} on {:?}", window, stride, s),
            ));
        }
        let xs = [s[0], s[1], s[2], s[3]];
        let (out, os, argmax) = kernels::maxpool2d_fwd(self.value(x).data(), xs, window, stride);
        let t = Tensor::new(os.to_vec(), out).expect("maxpool shape");
        let ng = self.needs(x);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }, ng))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar root. Pure: the tape is left intact
    /// (values stay readable) and repeated calls return identical gradients.
    pub fn backward(&self, root: Tid) -> Result<Gradients<S>, TensorError> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let g = match &grads[i] {
                Some(_) => {
                    if matches!(self.nodes[i].op, Op::Leaf) {
                        continue;
                    }
                    grads[i].take().unwrap()
                }
                None => continue,
            };
            self.accumulate_inputs(i, &g, &mut grads);
        }
        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (g, &self.nodes[i].op) {
                (Some(v), Op::Leaf) if self.nodes[i].needs_grad => Some(
                    Tensor::new(self.nodes[i].value.shape().to_vec(), v).expect("grad shape"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn acc<'a>(
        &self,
        grads: &'a mut [Option<Vec<S>>],
        id: Tid,
    ) -> Option<&'a mut [S]> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![S::zero(); self.nodes[id.0].value.numel()]);
        }
        slot.as_deref_mut()
    }

    fn accumulate_inputs(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        da[j] += g[j] * bv[j];
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for j in 0..g.len() {
                        db[j] += g[j] * av[j];
                    }
                }
            }
            Op::Neg(a) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(da) = self.acc(grads, *a) {
                    for j in 0..g.len() {
                        if av[j] > S::zero() {
                            da[j] += g[j];
                        }
                    }
                }
            }
            Op::Matmul(a, b) => {
                let sa = self.value(*a).shape();
                let (m, k) = (sa[0], sa[1]);
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // Split borrows: compute into temporaries, then accumulate.
                let need_a = self.nodes[a.0].needs_grad;
                let need_b = self.nodes[b.0].needs_grad;
                let mut da = if need_a { Some(vec![S::zero(); m * k]) } else { None };
                let mut db = if need_b { Some(vec![S::zero(); k * n]) } else { None };
                kernels::matmul_bwd(av, bv, m, k, n, g, da.as_deref_mut(), db.as_deref_mut());
                if let (Some(src), Some(dst)) = (da, self.acc(grads, *a)) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                if let (Some(src), Some(dst)) = (db, self.acc(grads, *b)) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::Transpose2d(a) => {
                let s = self.value(*a).shape();
                let (m, n) = (s[0], s[1]);
                if let Some(da) = self.acc(grads, *a) {
                    for i2 in 0..m {
                        for j in 0..n {
                            da[i2 * n + j] += g[j * m + i2];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let out_shape = self.value(Tid(i)).shape().to_vec();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let outer: usize = out_shape[..axis].iter().product();
                let row_out = out_shape[axis] * inner;
                let mut at = 0usize;
                for &p in parts {
                    let plen = self.value(p).shape()[axis];
                    if let Some(dp) = self.acc(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * row_out + at * inner..o * row_out + (at + plen) * inner];
                            let dst = &mut dp[o * plen * inner..(o + 1) * plen * inner];
                            for (d, &gv) in dst.iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    at += plen;
                }
            }
            Op::GatherRows { x, idx } => {
                let cols = self.value(*x).shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &src_row) in idx.iter().enumerate() {
                        for j in 0..cols {
                            dx[src_row * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::SliceAxis {
                x,
                axis,
                start,
                len,
            } => {
                let s = self.value(*x).shape().to_vec();
                let inner: usize = s[axis + 1..].iter().product();
                let outer: usize = s[..*axis].iter().product();
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let base = o * s[*axis] * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &gv) in dx[base..base + len * inner].iter_mut().zip(src) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::SumAxes { x, axes, mean } => {
                let s = self.value(*x).shape().to_vec();
                let count: usize = axes.iter().map(|&a| s[a]).product();
                let scale = if *mean {
                    S::one() / S::from_usize(count)
                } else {
                    S::one()
                };
                if let Some(dx) = self.acc(grads, *x) {
                    for_each_offset(&s, axes, |in_off, out_off| {
                        dx[in_off] += g[out_off] * scale;
                    });
                }
            }
            Op::Softmax { x, axis } => {
                let y = self.value(Tid(i)).data();
                let s = self.value(Tid(i)).shape().to_vec();
                let (outer, len, inner) = split3(&s, *axis);
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |a: usize| o * len * inner + a * inner + ii;
                            let mut dot = S::zero();
                            for a in 0..len {
                                dot += g[at(a)] * y[at(a)];
                            }
                            for a in 0..len {
                                dx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let data = self.value(*logits).data();
                let n = self.value(*logits).shape()[1];
                let b = labels.len();
                let gv = g[0] / S::from_usize(b);
                if let Some(dl) = self.acc(grads, *logits) {
                    for (bi, &lab) in labels.iter().enumerate() {
                        let row = &data[bi * n..(bi + 1) * n];
                        let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
                        let mut denom = S::zero();
                        for &v in row {
                            denom += (v - mx).exp();
                        }
                        for j in 0..n {
                            let p = (row[j] - mx).exp() / denom;
                            let ind = if j == lab { S::one() } else { S::zero() };
                            dl[bi * n + j] += gv * (p - ind);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let s = self.value(*x).shape().to_vec();
                let d = *s.last().unwrap();
                let rows = self.value(*x).numel() / d;
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let invd = S::one() / S::from_usize(d);
                // Recompute per-row statistics; cheaper than saving them.
                for r in 0..rows {
                    let row = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut mu = S::zero();
                    for &v in row {
                        mu += v;
                    }
                    mu *= invd;
                    let mut var = S::zero();
                    for &v in row {
                        let dv = v - mu;
                        var += dv * dv;
                    }
                    var *= invd;
                    let inv = S::one() / (var + *eps).sqrt();
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mu) * inv;
                        let dxhat = gr[j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    sum_dxhat *= invd;
                    sum_dxhat_xhat *= invd;
                    if let Some(dx) = self.acc(grads, *x) {
                        for j in 0..d {
                            let xhat = (row[j] - mu) * inv;
                            let dxhat = gr[j] * gv[j];
                            dx[r * d + j] += inv * (dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                        }
                    }
                    if let Some(dg) = self.acc(grads, *gamma) {
                        for j in 0..d {
                            let xhat = (row[j] - mu) * inv;
                            dg[j] += gr[j] * xhat;
                        }
                    }
                    if let Some(db) = self.acc(grads, *beta) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                }
            }
            Op::BnApply {
                x,
                mean,
                var,
                gamma,
                beta,
                eps,
            } => {
                let s = self.value(*x).shape().to_vec();
                let [b, c, h, w] = [s[0], s[1], s[2], s[3]];
                let xv = self.value(*x).data();
                let mv = self.value(*mean).data();
                let vv = self.value(*var).data();
                let gv = self.value(*gamma).data();
                let hw = h * w;
                for ci in 0..c {
                    let inv = S::one() / (vv[ci] + *eps).sqrt();
                    let mut sum_g = S::zero();
                    let mut sum_g_xc = S::zero();
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        for p in 0..hw {
                            let gd = g[base + p];
                            sum_g += gd;
                            sum_g_xc += gd * (xv[base + p] - mv[ci]);
                        }
                    }
                    if let Some(dx) = self.acc(grads, *x) {
                        let scale = gv[ci] * inv;
                        for bi in 0..b {
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                dx[base + p] += g[base + p] * scale;
                            }
                        }
                    }
                    if let Some(dm) = self.acc(grads, *mean) {
                        dm[ci] += -gv[ci] * inv * sum_g;
                    }
                    if let Some(dv) = self.acc(grads, *var) {
                        let half = S::from_f64(0.5);
                        dv[ci] += -half * gv[ci] * inv * inv * inv * sum_g_xc;
                    }
                    if let Some(dg) = self.acc(grads, *gamma) {
                        dg[ci] += inv * sum_g_xc;
                    }
                    if let Some(db) = self.acc(grads, *beta) {
                        db[ci] += sum_g;
                    }
                }
            }
            Op::AddChan(x, v) => {
                let s = self.value(*x).shape().to_vec();
                let [b, c, h, w] = [s[0], s[1], s[2], s[3]];
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(dv) = self.acc(grads, *v) {
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * h * w;
                            let mut sum = S::zero();
                            for p in 0..h * w {
                                sum += g[base + p];
                            }
                            dv[ci] += sum;
                        }
                    }
                }
            }
            Op::AddRowVec(x, v) => {
                let s = self.value(*x).shape();
                let (r, c) = (s[0], s[1]);
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(dv) = self.acc(grads, *v) {
                    for i2 in 0..r {
                        for j in 0..c {
                            dv[j] += g[i2 * c + j];
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => {
                let sx = self.value(*x).shape().to_vec();
                let sw = self.value(*w).shape().to_vec();
                let xs = [sx[0], sx[1], sx[2], sx[3]];
                let (k, c_out) = (sw[0], sw[3]);
                let need_x = self.nodes[x.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let need_b = self.nodes[bias.0].needs_grad;
                let mut dx = if need_x {
                    Some(vec![S::zero(); self.value(*x).numel()])
                } else {
                    None
                };
                let mut dw = if need_w {
                    Some(vec![S::zero(); self.value(*w).numel()])
                } else {
                    None
                };
                let mut db = if need_b {
                    Some(vec![S::zero(); c_out])
                } else {
                    None
                };
                kernels::conv2d_bwd(
                    self.value(*x).data(),
                    xs,
                    self.value(*w).data(),
                    k,
                    c_out,
                    *stride,
                    *pad,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let (Some(src), Some(dst)) = (dx, self.acc(grads, *x)) {
                    for (d, s2) in dst.iter_mut().zip(src) {
                        *d += s2;
                    }
                }
                if let (Some(src), Some(dst)) = (dw, self.acc(grads, *w)) {
                    for (d, s2) in dst.iter_mut().zip(src) {
                        *d += s2;
                    }
                }
                if let (Some(src), Some(dst)) = (db, self.acc(grads, *bias)) {
                    for (d, s2) in dst.iter_mut().zip(src) {
                        *d += s2;
                    }
                }
            }
            Op::MaxPool2d { x, argmax, .. } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                }
            }
        }
    }
}

fn map<S: Real>(t: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("map shape")
}

fn zip_map<S: Real>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("zip shape")
}

/// (outer, len, inner) view of `shape` around `axis`.
fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Visit every element of a tensor with shape `shape`, yielding its flat
/// offset and the flat offset in the reduced tensor (axes in `axes` removed).
/// `axes` must be sorted.
fn for_each_offset(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let mut keep = vec![true; rank];
    for &a in axes {
        keep[a] = false;
    }
    // Precompute strides of the reduced tensor aligned to the input axes.
    let mut out_stride = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..rank).rev() {
        if keep[i] {
            out_stride[i] = acc;
            acc *= shape[i];
        }
    }
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    for in_off in 0..numel {
        let mut out_off = 0usize;
        for i in 0..rank {
            if keep[i] {
                out_off += idx[i] * out_stride[i];
            }
        }
        f(in_off, out_off);
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
}
