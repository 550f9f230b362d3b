//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Each forward call records a node holding its value and the operation
//! that produced it. [`Tape::backward`] walks the nodes in reverse, and
//! frees each node's value and gradient as soon as it has been processed,
//! so peak memory during backward never exceeds the forward peak.
//!
//! The op set is deliberately closed: dense linear maps, the activations
//! and normalisations used by the encoders, sparse neighbour aggregation
//! (mean, symmetric GCN normalisation, multi-head attention), and the
//! masked class-weighted cross-entropy.

use std::sync::Arc;

use super::matrix::{gemm_nn, gemm_nt, gemm_tn};
use super::{Matrix, Real};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance, used for normalisation.
    pub var: Vec<T>,
    /// Unbiased variance, used for running-stat updates.
    pub var_unbiased: Vec<T>,
}

#[derive(Clone, Debug)]
pub enum NormSource<'a, T> {
    /// Normalise with statistics of the current batch.
    Batch,
    /// Normalise with stored running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Multi-head attention configuration for [`Tape::attention`].
#[derive(Clone, Debug)]
pub struct AttentionConfig {
    pub heads: usize,
    pub negative_slope: f64,
    /// Attend to the node itself in addition to its neighbours.
    pub self_loops: bool,
    /// Keep-mask over `(slot, head)` pairs applied to the coefficients after
    /// the softmax; survivors are scaled by `1 / (1 - p)`.
    pub edge_dropout: Option<(Vec<bool>, f64)>,
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    DualLinear {
        x1: Var,
        w1: Var,
        x2: Var,
        w2: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Dropout {
        x: Var,
        keep: Vec<bool>,
        scale: T,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch: bool,
    },
    BnReluDropout {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch: bool,
        scale: T,
    },
    NeighborMean {
        x: Var,
        graph: Arc<Graph>,
    },
    GcnPropagate {
        x: Var,
        graph: Arc<Graph>,
        inv_sqrt_deg: Vec<T>,
    },
    Attention {
        h: Var,
        att_src: Var,
        att_dst: Var,
        bias: Option<Var>,
        graph: Arc<Graph>,
        heads: usize,
        slope: T,
        self_loops: bool,
        /// Softmax coefficients before dropout, `(slot, head)` row-major.
        alpha: Vec<T>,
        /// Multiplier applied after softmax (0 or 1/(1-p)); empty if none.
        drop_scale: Vec<T>,
        src_score: Vec<T>,
        dst_score: Vec<T>,
    },
    ConcatCols(Var, Var),
    WeightedCe {
        logits: Var,
        rows: Arc<[usize]>,
        labels: Arc<[usize]>,
        class_weights: Vec<T>,
    },
    SumSquares(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
    name: &'static str,
}

/// Records a forward computation for one backward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the loss with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((self.nodes.len(), name));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push("param", value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Matrix<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Matrix::zeros(0, 0))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Errors if any forward value so far contained NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite {
            None => Ok(()),
            Some((i, name)) => Err(Error::Numeric(format!(
                "non-finite value produced by `{name}` (node {i})"
            ))),
        }
    }

    /// `x·w (+ b)`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.shape(x);
        let (k2, m) = self.shape(w);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "linear: input {n}x{k}, weight {k2}x{m}"
            )));
        }
        let mut out = Matrix::zeros(n, m);
        gemm_nn(self.value(x), self.value(w), &mut out, T::zero());
        if let Some(b) = b {
            self.check_bias(b, m)?;
            add_row(&mut out, self.value(b).data());
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push("linear", out, Op::Linear { x, w, b }, needs))
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.linear(x, w, None)
    }

    /// `x1·w1 + x2·w2 (+ b)`, i.e. a linear map on `[x1 ‖ x2]` without
    /// materialising the concatenation.
    pub fn dual_linear(
        &mut self,
        x1: Var,
        w1: Var,
        x2: Var,
        w2: Var,
        b: Option<Var>,
    ) -> Result<Var> {
        let (n, k1) = self.shape(x1);
        let (n2, k2) = self.shape(x2);
        let (wk1, m) = self.shape(w1);
        let (wk2, m2) = self.shape(w2);
        if n != n2 || k1 != wk1 || k2 != wk2 || m != m2 {
            return Err(Error::Dimension("dual_linear operand shapes".into()));
        }
        let mut out = Matrix::zeros(n, m);
        gemm_nn(self.value(x1), self.value(w1), &mut out, T::zero());
        gemm_nn(self.value(x2), self.value(w2), &mut out, T::one());
        if let Some(b) = b {
            self.check_bias(b, m)?;
            add_row(&mut out, self.value(b).data());
        }
        let needs =
            [x1, w1, x2, w2].iter().any(|&v| self.needs(v)) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(
            "dual_linear",
            out,
            Op::DualLinear { x1, w1, x2, w2, b },
            needs,
        ))
    }

    fn check_bias(&self, b: Var, width: usize) -> Result<()> {
        if self.shape(b) != (1, width) {
            return Err(Error::Dimension(format!(
                "bias {:?} for width {width}",
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push("add", out, Op::Add(a, b), needs))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_bias(b, self.shape(x).1)?;
        let mut out = self.value(x).clone();
        add_row(&mut out, self.value(b).data());
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push("add_bias", out, Op::AddBias(x, b), needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let needs = self.needs(x);
        self.push("scale", out, Op::Scale(x, s), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push("relu", out, Op::Relu(x), needs)
    }

    /// Inverted dropout with an externally drawn keep-mask.
    pub fn dropout(&mut self, x: Var, keep: Vec<bool>, p: f64) -> Result<Var> {
        if keep.len() != self.value(x).len() {
            return Err(Error::Dimension("dropout mask size".into()));
        }
        let scale = T::of(1.0 / (1.0 - p));
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { T::zero() })
            .collect();
        let (r, c) = self.shape(x);
        let out = Matrix::new(r, c, data)?;
        let needs = self.needs(x);
        Ok(self.push("dropout", out, Op::Dropout { x, keep, scale }, needs))
    }

    /// Per-column batch normalisation. Returns the batch moments when
    /// normalising with batch statistics so the caller can update running
    /// statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        source: NormSource<'_, T>,
        eps: f64,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (mean, inv_std, moments) = self.norm_stats(x, gamma, beta, &source, eps)?;
        let mut out = self.value(x).clone();
        normalize_affine(
            &mut out,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let batch = moments.is_some();
        let v = self.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch,
            },
            needs,
        );
        Ok((v, moments))
    }

    /// `dropout(relu(batch_norm(x)))` as a single node. Only the output is
    /// stored; the backward pass recomputes the normalised input.
    #[allow(clippy::too_many_arguments)]
    pub fn bn_relu_dropout(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        source: NormSource<'_, T>,
        eps: f64,
        keep: Option<(Vec<bool>, f64)>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (mean, inv_std, moments) = self.norm_stats(x, gamma, beta, &source, eps)?;
        let mut out = self.value(x).clone();
        normalize_affine(
            &mut out,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let mut scale = T::one();
        if let Some((keep, p)) = &keep {
            if keep.len() != out.len() {
                return Err(Error::Dimension("dropout mask size".into()));
            }
            scale = T::of(1.0 / (1.0 - p));
            for (v, &k) in out.data_mut().iter_mut().zip(keep) {
                *v = if k {
                    v.max(T::zero()) * scale
                } else {
                    T::zero()
                };
            }
        } else {
            for v in out.data_mut() {
                *v = v.max(T::zero());
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let batch = moments.is_some();
        let v = self.push(
            "bn_relu_dropout",
            out,
            Op::BnReluDropout {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch,
                scale,
            },
            needs,
        );
        Ok((v, moments))
    }

    #[allow(clippy::type_complexity)]
    fn norm_stats(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        source: &NormSource<'_, T>,
        eps: f64,
    ) -> Result<(Vec<T>, Vec<T>, Option<BatchMoments<T>>)> {
        let (n, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(Error::Dimension("batch_norm affine parameters".into()));
        }
        let eps = T::of(eps);
        match source {
            NormSource::Batch => {
                if n < 2 {
                    return Err(Error::Numeric(
                        "batch_norm in training mode needs at least two rows".into(),
                    ));
                }
                let xv = self.value(x);
                // Accumulate moments in f64 regardless of T.
                let mut sum = vec![0.0f64; c];
                for i in 0..n {
                    for (s, v) in sum.iter_mut().zip(xv.row(i)) {
                        *s += v.f64();
                    }
                }
                let mean64: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
                let mut sq = vec![0.0f64; c];
                for i in 0..n {
                    for ((s, v), m) in sq.iter_mut().zip(xv.row(i)).zip(&mean64) {
                        let d = v.f64() - m;
                        *s += d * d;
                    }
                }
                let var: Vec<T> = sq.iter().map(|s| T::of(s / n as f64)).collect();
                let var_unbiased: Vec<T> = sq.iter().map(|s| T::of(s / (n - 1) as f64)).collect();
                let mean: Vec<T> = mean64.iter().map(|&m| T::of(m)).collect();
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                Ok((
                    mean.clone(),
                    inv_std,
                    Some(BatchMoments {
                        mean,
                        var,
                        var_unbiased,
                    }),
                ))
            }
            NormSource::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::Dimension("running statistics width".into()));
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                Ok((mean.to_vec(), inv_std, None))
            }
        }
    }

    /// Row `v` of the output is the mean of its neighbours' rows; isolated
    /// nodes get a zero row.
    pub fn neighbor_mean(&mut self, x: Var, graph: Arc<Graph>) -> Result<Var> {
        let (n, c) = self.shape(x);
        if graph.num_nodes() != n {
            return Err(Error::Dimension(format!(
                "neighbor_mean: {n} rows for a {}-node graph",
                graph.num_nodes()
            )));
        }
        let xv = self.value(x);
        let mut out = Matrix::zeros(n, c);
        for v in 0..n {
            let nb = graph.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let inv = T::one() / T::of(nb.len() as f64);
            let row = out.row_mut(v);
            for &u in nb {
                for (o, &s) in row.iter_mut().zip(xv.row(u as usize)) {
                    *o = *o + s;
                }
            }
            for o in row.iter_mut() {
                *o = *o * inv;
            }
        }
        let needs = self.needs(x);
        Ok(self.push("neighbor_mean", out, Op::NeighborMean { x, graph }, needs))
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2} x` with self-loops added on the fly.
    pub fn gcn_propagate(&mut self, x: Var, graph: Arc<Graph>) -> Result<Var> {
        let (n, _) = self.shape(x);
        if graph.num_nodes() != n {
            return Err(Error::Dimension(format!(
                "gcn_propagate: {n} rows for a {}-node graph",
                graph.num_nodes()
            )));
        }
        let inv_sqrt_deg: Vec<T> = (0..n)
            .map(|v| T::one() / T::of((graph.degree(v) + 1) as f64).sqrt())
            .collect();
        let out = gcn_apply(self.value(x), &graph, &inv_sqrt_deg);
        let needs = self.needs(x);
        Ok(self.push(
            "gcn_propagate",
            out,
            Op::GcnPropagate {
                x,
                graph,
                inv_sqrt_deg,
            },
            needs,
        ))
    }

    /// Multi-head additive attention over each node's neighbourhood.
    ///
    /// `h` holds the projected features with heads laid out as contiguous
    /// column blocks (`N x heads·F`); `att_src` and `att_dst` are `1 x
    /// heads·F`. Output head blocks are concatenated, plus an optional bias.
    /// Slots are enumerated per target node: neighbours in CSR order, then
    /// the node itself when `self_loops` is set.
    pub fn attention(
        &mut self,
        h: Var,
        att_src: Var,
        att_dst: Var,
        bias: Option<Var>,
        graph: Arc<Graph>,
        cfg: AttentionConfig,
    ) -> Result<Var> {
        let (n, width) = self.shape(h);
        let heads = cfg.heads;
        if heads == 0 || width % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention: width {width} over {heads} heads"
            )));
        }
        if graph.num_nodes() != n {
            return Err(Error::Dimension("attention: graph size".into()));
        }
        if self.shape(att_src) != (1, width) || self.shape(att_dst) != (1, width) {
            return Err(Error::Dimension("attention vectors".into()));
        }
        if let Some(b) = bias {
            self.check_bias(b, width)?;
        }
        let f = width / heads;
        let slope = T::of(cfg.negative_slope);
        let hv = self.value(h);
        let a_src = self.value(att_src).data();
        let a_dst = self.value(att_dst).data();

        let mut src_score = vec![T::zero(); n * heads];
        let mut dst_score = vec![T::zero(); n * heads];
        for v in 0..n {
            let row = hv.row(v);
            for k in 0..heads {
                let block = &row[k * f..(k + 1) * f];
                src_score[v * heads + k] = dot(block, &a_src[k * f..(k + 1) * f]);
                dst_score[v * heads + k] = dot(block, &a_dst[k * f..(k + 1) * f]);
            }
        }

        let n_slots = graph.directed_edge_count() + if cfg.self_loops { n } else { 0 };
        let drop_scale: Vec<T> = match &cfg.edge_dropout {
            Some((keep, p)) => {
                if keep.len() != n_slots * heads {
                    return Err(Error::Dimension("attention dropout mask size".into()));
                }
                let s = T::of(1.0 / (1.0 - p));
                keep.iter()
                    .map(|&k| if k { s } else { T::zero() })
                    .collect()
            }
            None => Vec::new(),
        };

        let mut alpha = vec![T::zero(); n_slots * heads];
        let mut out = Matrix::zeros(n, width);
        let mut slot = 0usize;
        let mut raw = Vec::new();
        for v in 0..n {
            let sources = slot_sources(&graph, v, cfg.self_loops);
            let deg = sources.len();
            if deg == 0 {
                continue;
            }
            for k in 0..heads {
                raw.clear();
                for &u in &sources {
                    let e = dst_score[v * heads + k] + src_score[u * heads + k];
                    raw.push(if e > T::zero() { e } else { e * slope });
                }
                let max = raw.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for e in raw.iter_mut() {
                    *e = (*e - max).exp();
                    z = z + *e;
                }
                for (j, &u) in sources.iter().enumerate() {
                    let idx = (slot + j) * heads + k;
                    let a = raw[j] / z;
                    alpha[idx] = a;
                    let coeff = if drop_scale.is_empty() {
                        a
                    } else {
                        a * drop_scale[idx]
                    };
                    if coeff == T::zero() {
                        continue;
                    }
                    let src = &hv.row(u)[k * f..(k + 1) * f];
                    let dst = &mut out.row_mut(v)[k * f..(k + 1) * f];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o = *o + coeff * s;
                    }
                }
            }
            slot += deg;
        }
        if let Some(b) = bias {
            add_row(&mut out, self.value(b).data());
        }
        let needs = self.needs(h)
            || self.needs(att_src)
            || self.needs(att_dst)
            || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            "attention",
            out,
            Op::Attention {
                h,
                att_src,
                att_dst,
                bias,
                graph,
                heads,
                slope,
                self_loops: cfg.self_loops,
                alpha,
                drop_scale,
                src_score,
                dst_score,
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hconcat(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push("concat_cols", out, Op::ConcatCols(a, b), needs))
    }

    /// Mean over `rows` of `w[y] · (−log softmax(z)[y])`.
    pub fn weighted_ce(
        &mut self,
        logits: Var,
        rows: Arc<[usize]>,
        labels: Arc<[usize]>,
        class_weights: &[f64],
    ) -> Result<Var> {
        let (n, c) = self.shape(logits);
        if rows.is_empty() {
            return Err(Error::Config("cross-entropy over an empty mask".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Dimension("one label per masked row".into()));
        }
        if class_weights.len() != c {
            return Err(Error::Dimension(format!(
                "{} class weights for {c} logits",
                class_weights.len()
            )));
        }
        let z = self.value(logits);
        let mut total = 0.0f64;
        for (&r, &y) in rows.iter().zip(labels.iter()) {
            if r >= n || y >= c {
                return Err(Error::Dimension(format!(
                    "row {r} / label {y} out of range"
                )));
            }
            let row = z.row(r);
            total += class_weights[y] * -log_softmax_at(row, y);
        }
        let loss = T::of(total / rows.len() as f64);
        let cw = class_weights.iter().map(|&w| T::of(w)).collect();
        let needs = self.needs(logits);
        Ok(self.push(
            "weighted_ce",
            Matrix::scalar(loss),
            Op::WeightedCe {
                logits,
                rows,
                labels,
                class_weights: cw,
            },
            needs,
        ))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).squared_norm();
        let needs = self.needs(x);
        self.push("sum_squares", Matrix::scalar(s), Op::SumSquares(x), needs)
    }

    /// Backpropagates from the scalar `loss`, consuming the tape.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        self.ensure_finite()?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Dimension("backward from a non-scalar".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                self.nodes[i].value = Matrix::zeros(0, 0);
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            let contributions = self.local_backward(i, &g)?;
            for (v, dg) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
            self.nodes[i].value = Matrix::zeros(0, 0);
        }
        if let Some((i, name)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.as_ref().is_some_and(|g| !g.is_finite()))
            .map(|(i, _)| (i, self.nodes[i].name))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient at `{name}` (node {i})"
            )));
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, i: usize, g: &Matrix<T>) -> Result<Vec<(Var, Matrix<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if self.needs(*x) {
                    let wv = self.value(*w);
                    let mut dx = Matrix::zeros(g.rows(), wv.rows());
                    gemm_nt(g, wv, &mut dx, T::zero());
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let xv = self.value(*x);
                    let mut dw = Matrix::zeros(xv.cols(), g.cols());
                    gemm_tn(xv, g, &mut dw, T::zero());
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    out.push((*b, Matrix::row_vector(g.column_sums())));
                }
            }
            Op::DualLinear { x1, w1, x2, w2, b } => {
                for (x, w) in [(*x1, *w1), (*x2, *w2)] {
                    if self.needs(x) {
                        let wv = self.value(w);
                        let mut dx = Matrix::zeros(g.rows(), wv.rows());
                        gemm_nt(g, wv, &mut dx, T::zero());
                        out.push((x, dx));
                    }
                    if self.needs(w) {
                        let xv = self.value(x);
                        let mut dw = Matrix::zeros(xv.cols(), g.cols());
                        gemm_tn(xv, g, &mut dw, T::zero());
                        out.push((w, dw));
                    }
                }
                if let Some(b) = b {
                    out.push((*b, Matrix::row_vector(g.column_sums())));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::AddBias(x, b) => {
                out.push((*x, g.clone()));
                out.push((*b, Matrix::row_vector(g.column_sums())));
            }
            Op::Scale(x, s) => out.push((*x, g.map(|v| v * *s))),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                out.push((*x, dx));
            }
            Op::Dropout { x, keep, scale } => {
                let mut dx = g.clone();
                for (d, &k) in dx.data_mut().iter_mut().zip(keep) {
                    *d = if k { *d * *scale } else { T::zero() };
                }
                out.push((*x, dx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch,
            } => {
                self.bn_backward(
                    g.clone(),
                    *x,
                    *gamma,
                    *beta,
                    mean,
                    inv_std,
                    *batch,
                    &mut out,
                );
            }
            Op::BnReluDropout {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch,
                scale,
            } => {
                let y = &node.value;
                let mut dbn = g.clone();
                for (d, &o) in dbn.data_mut().iter_mut().zip(y.data()) {
                    *d = if o > T::zero() {
                        *d * *scale
                    } else {
                        T::zero()
                    };
                }
                self.bn_backward(dbn, *x, *gamma, *beta, mean, inv_std, *batch, &mut out);
            }
            Op::NeighborMean { x, graph } => {
                let mut dx = Matrix::zeros(g.rows(), g.cols());
                for v in 0..graph.num_nodes() {
                    let nb = graph.neighbors(v);
                    if nb.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::of(nb.len() as f64);
                    let gv = g.row(v);
                    for &u in nb {
                        for (d, &s) in dx.row_mut(u as usize).iter_mut().zip(gv) {
                            *d = *d + s * inv;
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::GcnPropagate {
                x,
                graph,
                inv_sqrt_deg,
            } => {
                // The normalised operator is symmetric.
                out.push((*x, gcn_apply(g, graph, inv_sqrt_deg)));
            }
            Op::Attention {
                h,
                att_src,
                att_dst,
                bias,
                graph,
                heads,
                slope,
                self_loops,
                alpha,
                drop_scale,
                src_score,
                dst_score,
            } => {
                let hv = self.value(*h);
                let (n, width) = hv.shape();
                let heads = *heads;
                let f = width / heads;
                let a_src = self.value(*att_src).data();
                let a_dst = self.value(*att_dst).data();
                let mut dh = Matrix::zeros(n, width);
                let mut d_src_score = vec![T::zero(); n * heads];
                let mut d_dst_score = vec![T::zero(); n * heads];
                let mut slot = 0usize;
                let mut dcoef = Vec::new();
                for v in 0..n {
                    let sources = slot_sources(graph, v, *self_loops);
                    let deg = sources.len();
                    if deg == 0 {
                        continue;
                    }
                    let gv = g.row(v);
                    for k in 0..heads {
                        let gblock = &gv[k * f..(k + 1) * f];
                        dcoef.clear();
                        for (j, &u) in sources.iter().enumerate() {
                            let idx = (slot + j) * heads + k;
                            let ds = if drop_scale.is_empty() {
                                T::one()
                            } else {
                                drop_scale[idx]
                            };
                            let coeff = alpha[idx] * ds;
                            let src = &hv.row(u)[k * f..(k + 1) * f];
                            // d coefficient, then through dropout to d alpha.
                            dcoef.push(dot(gblock, src) * ds);
                            if coeff != T::zero() {
                                let dst = &mut dh.row_mut(u)[k * f..(k + 1) * f];
                                for (d, &s) in dst.iter_mut().zip(gblock) {
                                    *d = *d + coeff * s;
                                }
                            }
                        }
                        let weighted: T = (0..deg)
                            .map(|j| alpha[(slot + j) * heads + k] * dcoef[j])
                            .sum();
                        for (j, &u) in sources.iter().enumerate() {
                            let a = alpha[(slot + j) * heads + k];
                            let de = a * (dcoef[j] - weighted);
                            let e = dst_score[v * heads + k] + src_score[u * heads + k];
                            let draw = if e > T::zero() { de } else { de * *slope };
                            d_dst_score[v * heads + k] = d_dst_score[v * heads + k] + draw;
                            d_src_score[u * heads + k] = d_src_score[u * heads + k] + draw;
                        }
                    }
                    slot += deg;
                }
                let mut da_src = vec![T::zero(); width];
                let mut da_dst = vec![T::zero(); width];
                for u in 0..n {
                    let hrow = hv.row(u);
                    let drow = dh.row_mut(u);
                    for k in 0..heads {
                        let ds = d_src_score[u * heads + k];
                        let dd = d_dst_score[u * heads + k];
                        for j in k * f..(k + 1) * f {
                            drow[j] = drow[j] + ds * a_src[j] + dd * a_dst[j];
                            da_src[j] = da_src[j] + ds * hrow[j];
                            da_dst[j] = da_dst[j] + dd * hrow[j];
                        }
                    }
                }
                out.push((*h, dh));
                out.push((*att_src, Matrix::row_vector(da_src)));
                out.push((*att_dst, Matrix::row_vector(da_dst)));
                if let Some(b) = bias {
                    out.push((*b, Matrix::row_vector(g.column_sums())));
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).1;
                let cb = self.shape(*b).1;
                let mut da = Matrix::zeros(g.rows(), ca);
                let mut db = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::WeightedCe {
                logits,
                rows,
                labels,
                class_weights,
            } => {
                let z = self.value(*logits);
                let upstream = g.item() / T::of(rows.len() as f64);
                let mut dz = Matrix::zeros(z.rows(), z.cols());
                let mut p = vec![T::zero(); z.cols()];
                for (&r, &y) in rows.iter().zip(labels.iter()) {
                    softmax_into(z.row(r), &mut p);
                    let w = class_weights[y] * upstream;
                    let drow = dz.row_mut(r);
                    for (c, d) in drow.iter_mut().enumerate() {
                        let target = if c == y { T::one() } else { T::zero() };
                        *d = *d + w * (p[c] - target);
                    }
                }
                out.push((*logits, dz));
            }
            Op::SumSquares(x) => {
                let two_g = T::of(2.0) * g.item();
                out.push((*x, self.value(*x).map(|v| v * two_g)));
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        dy: Matrix<T>,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        batch: bool,
        out: &mut Vec<(Var, Matrix<T>)>,
    ) {
        let xv = self.value(x);
        let gv = self.value(gamma).data();
        let (n, c) = xv.shape();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..n {
            let xr = xv.row(i);
            for j in 0..c {
                let xhat = (xr[j] - mean[j]) * inv_std[j];
                let d = dy.get(i, j);
                sum_dy[j] = sum_dy[j] + d;
                sum_dy_xhat[j] = sum_dy_xhat[j] + d * xhat;
            }
        }
        if self.needs(x) {
            let mut dx = dy;
            let nf = T::of(n as f64);
            for i in 0..n {
                let xr = xv.row(i);
                let dr = dx.row_mut(i);
                for j in 0..c {
                    let k = gv[j] * inv_std[j];
                    if batch {
                        let xhat = (xr[j] - mean[j]) * inv_std[j];
                        dr[j] = k * (dr[j] - sum_dy[j] / nf - xhat * sum_dy_xhat[j] / nf);
                    } else {
                        dr[j] = k * dr[j];
                    }
                }
            }
            out.push((x, dx));
        }
        out.push((gamma, Matrix::row_vector(sum_dy_xhat)));
        out.push((beta, Matrix::row_vector(sum_dy)));
    }
}

fn slot_sources(graph: &Graph, v: usize, self_loops: bool) -> Vec<usize> {
    let mut s: Vec<usize> = graph.neighbors(v).iter().map(|&u| u as usize).collect();
    if self_loops {
        s.push(v);
    }
    s
}

fn gcn_apply<T: Real>(x: &Matrix<T>, graph: &Graph, inv_sqrt_deg: &[T]) -> Matrix<T> {
    let (n, c) = x.shape();
    let mut out = Matrix::zeros(n, c);
    for v in 0..n {
        let dv = inv_sqrt_deg[v];
        let row = out.row_mut(v);
        let self_w = dv * dv;
        for (o, &s) in row.iter_mut().zip(x.row(v)) {
            *o = s * self_w;
        }
        for &u in graph.neighbors(v) {
            let w = dv * inv_sqrt_deg[u as usize];
            for (o, &s) in row.iter_mut().zip(x.row(u as usize)) {
                *o = *o + w * s;
            }
        }
    }
    out
}

fn add_row<T: Real>(m: &mut Matrix<T>, b: &[T]) {
    for i in 0..m.rows() {
        for (v, &bb) in m.row_mut(i).iter_mut().zip(b) {
            *v = *v + bb;
        }
    }
}

fn normalize_affine<T: Real>(
    m: &mut Matrix<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) {
    for i in 0..m.rows() {
        for (j, v) in m.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j] * gamma[j] + beta[j];
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn log_softmax_at<T: Real>(row: &[T], y: usize) -> f64 {
    let max = row
        .iter()
        .map(|v| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln() + max;
    row[y].f64() - lse
}

/// Numerically stable softmax of one row.
pub fn softmax_into<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        z = z + *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}
