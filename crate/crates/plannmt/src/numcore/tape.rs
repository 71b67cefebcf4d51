use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// LSTM recurrent state: hidden and cell vectors.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatVec { m: NodeId, v: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, k: f64 },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    // probs cached at record time for the backward pass
    SoftmaxXent { logits: NodeId, target: usize, probs: Vec<f64> },
    Concat { parts: Vec<NodeId> },
    Slice { x: NodeId, start: usize, len: usize },
    EmbedRow { table: NodeId, row: usize },
    Dot { a: NodeId, b: NodeId },
    PackScalars { xs: Vec<NodeId> },
    AxpyMany { w: NodeId, xs: Vec<NodeId> },
    MeanVecs { xs: Vec<NodeId> },
    MeanScalars { xs: Vec<NodeId> },
    OneHotSt { x: NodeId },
}

/// One forward pass recorded as a flat operation list.
///
/// Values live in an arena indexed by [`NodeId`]; nodes are appended in
/// execution order, so the list is already topologically sorted and the
/// backward pass is a single reverse sweep that visits each node once.
/// A parameter becomes a leaf the first time it is referenced and is reused
/// afterwards, so gradients from every use accumulate on one leaf.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
    param_leaves: HashMap<String, NodeId>,
    train: bool,
    rng: Option<ChaCha8Rng>,
}

impl Tape {
    /// Tape for evaluation: dropout is the identity.
    pub fn inference() -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            param_leaves: HashMap::new(),
            train: false,
            rng: None,
        }
    }

    /// Tape for training: dropout samples masks from a seeded stream.
    pub fn training(seed: u64) -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            param_leaves: HashMap::new(),
            train: true,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    /// Drop the recorded graph but keep mode and RNG state, so one tape can be
    /// reused across minibatches without reallocating.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.vals.clear();
        self.param_leaves.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.vals[id.0]
    }

    fn push(&mut self, op: Op, val: Tensor) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.vals.push(val);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn constant_vec(&mut self, v: Vec<f64>) -> NodeId {
        self.constant(Tensor::vector(v))
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf for a named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, NumError> {
        if let Some(&id) = self.param_leaves.get(name) {
            return Ok(id);
        }
        let t = store.get(name)?.clone();
        let id = self.push(Op::Input, t);
        self.param_leaves.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NumError> {
        self.matvec_named(m, v, "matvec")
    }

    fn matvec_named(&mut self, m: NodeId, v: NodeId, context: &str) -> Result<NodeId, NumError> {
        let (mt, vt) = (&self.vals[m.0], &self.vals[v.0]);
        if mt.shape().len() != 2 || vt.shape().len() != 1 || mt.cols() != vt.len() {
            return Err(NumError::ShapeMismatch {
                context: context.into(),
                expected: format!("matrix [r,{}]", vt.len()),
                actual: format!("matrix {:?} x vector [{}]", mt.shape(), vt.len()),
            });
        }
        let rows = mt.rows();
        let mut out = vec![0.0; rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = mt.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(vt.data()) {
                acc += a * b;
            }
            *o = acc;
        }
        Ok(self.push(Op::MatVec { m, v }, Tensor::vector(out)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (at, bt) = (&self.vals[a.0], &self.vals[b.0]);
        if at.shape() != bt.shape() {
            return Err(NumError::ShapeMismatch {
                context: "add".into(),
                expected: format!("{:?}", at.shape()),
                actual: format!("{:?}", bt.shape()),
            });
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(at.shape(), data).expect("same shape");
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (at, bt) = (&self.vals[a.0], &self.vals[b.0]);
        if at.shape() != bt.shape() {
            return Err(NumError::ShapeMismatch {
                context: "mul".into(),
                expected: format!("{:?}", at.shape()),
                actual: format!("{:?}", bt.shape()),
            });
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(at.shape(), data).expect("same shape");
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let xt = &self.vals[x.0];
        let data = xt.data().iter().map(|v| v * k).collect();
        let out = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(Op::Scale { x, k }, out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xt = &self.vals[x.0];
        let data = xt.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(Op::Sigmoid { x }, out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xt = &self.vals[x.0];
        let data = xt.data().iter().map(|&v| v.tanh()).collect();
        let out = Tensor::from_vec(xt.shape(), data).expect("same shape");
        self.push(Op::Tanh { x }, out)
    }

    /// Softmax over a rank-1 vector, max-subtracted for stability.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        let xt = &self.vals[x.0];
        if xt.shape().len() != 1 {
            return Err(NumError::ShapeMismatch {
                context: "softmax".into(),
                expected: "rank-1 vector".into(),
                actual: format!("{:?}", xt.shape()),
            });
        }
        let out = softmax_values(xt.data());
        Ok(self.push(Op::Softmax { x }, Tensor::vector(out)))
    }

    /// Fused softmax + cross-entropy: `-log softmax(logits)[target]`.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId, NumError> {
        let lt = &self.vals[logits.0];
        if lt.shape().len() != 1 {
            return Err(NumError::ShapeMismatch {
                context: "softmax_xent".into(),
                expected: "rank-1 logits".into(),
                actual: format!("{:?}", lt.shape()),
            });
        }
        if target >= lt.len() {
            return Err(NumError::IndexOutOfRange {
                context: "softmax_xent target".into(),
                index: target,
                len: lt.len(),
            });
        }
        let probs = softmax_values(lt.data());
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        Ok(self.push(
            Op::SoftmaxXent { logits, target, probs },
            Tensor::scalar(loss),
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        if parts.is_empty() {
            return Err(NumError::Contract {
                context: "concat of zero parts".into(),
            });
        }
        let mut data = Vec::new();
        for p in parts {
            let t = &self.vals[p.0];
            if t.shape().len() != 1 {
                return Err(NumError::ShapeMismatch {
                    context: "concat".into(),
                    expected: "rank-1 parts".into(),
                    actual: format!("{:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, Tensor::vector(data)))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumError> {
        let xt = &self.vals[x.0];
        if xt.shape().len() != 1 || start + len > xt.len() {
            return Err(NumError::IndexOutOfRange {
                context: "slice".into(),
                index: start + len,
                len: xt.len(),
            });
        }
        let data = xt.data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start, len }, Tensor::vector(data)))
    }

    /// One row of an embedding table (rank-2 parameter).
    pub fn embed_row(&mut self, table: NodeId, row: usize) -> Result<NodeId, NumError> {
        let tt = &self.vals[table.0];
        if tt.shape().len() != 2 {
            return Err(NumError::ShapeMismatch {
                context: "embed_row".into(),
                expected: "rank-2 table".into(),
                actual: format!("{:?}", tt.shape()),
            });
        }
        if row >= tt.rows() {
            return Err(NumError::IndexOutOfRange {
                context: "embed_row".into(),
                index: row,
                len: tt.rows(),
            });
        }
        let data = tt.row(row).to_vec();
        Ok(self.push(Op::EmbedRow { table, row }, Tensor::vector(data)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (at, bt) = (&self.vals[a.0], &self.vals[b.0]);
        if at.shape().len() != 1 || at.shape() != bt.shape() {
            return Err(NumError::ShapeMismatch {
                context: "dot".into(),
                expected: format!("{:?}", at.shape()),
                actual: format!("{:?}", bt.shape()),
            });
        }
        let v = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(v)))
    }

    /// Gather scalars into a vector.
    pub fn pack_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId, NumError> {
        let mut data = Vec::with_capacity(xs.len());
        for x in xs {
            data.push(self.vals[x.0].as_scalar()?);
        }
        Ok(self.push(Op::PackScalars { xs: xs.to_vec() }, Tensor::vector(data)))
    }

    /// Weighted sum of vectors: `sum_i w[i] * xs[i]`.
    pub fn axpy_many(&mut self, w: NodeId, xs: &[NodeId]) -> Result<NodeId, NumError> {
        let wt = &self.vals[w.0];
        if wt.shape().len() != 1 || wt.len() != xs.len() || xs.is_empty() {
            return Err(NumError::ShapeMismatch {
                context: "axpy_many".into(),
                expected: format!("weight vector of length {}", xs.len()),
                actual: format!("{:?}", wt.shape()),
            });
        }
        let dim = self.vals[xs[0].0].len();
        let mut out = vec![0.0; dim];
        for (i, x) in xs.iter().enumerate() {
            let xt = &self.vals[x.0];
            if xt.shape().len() != 1 || xt.len() != dim {
                return Err(NumError::ShapeMismatch {
                    context: "axpy_many".into(),
                    expected: format!("vectors of length {dim}"),
                    actual: format!("{:?}", xt.shape()),
                });
            }
            let wi = wt.data()[i];
            for (o, v) in out.iter_mut().zip(xt.data()) {
                *o += wi * v;
            }
        }
        Ok(self.push(Op::AxpyMany { w, xs: xs.to_vec() }, Tensor::vector(out)))
    }

    /// Elementwise mean of equal-shape vectors.
    pub fn mean_vecs(&mut self, xs: &[NodeId]) -> Result<NodeId, NumError> {
        if xs.is_empty() {
            return Err(NumError::Contract {
                context: "mean of zero vectors".into(),
            });
        }
        let dim = self.vals[xs[0].0].len();
        let mut out = vec![0.0; dim];
        for x in xs {
            let xt = &self.vals[x.0];
            if xt.shape().len() != 1 || xt.len() != dim {
                return Err(NumError::ShapeMismatch {
                    context: "mean_vecs".into(),
                    expected: format!("vectors of length {dim}"),
                    actual: format!("{:?}", xt.shape()),
                });
            }
            for (o, v) in out.iter_mut().zip(xt.data()) {
                *o += v;
            }
        }
        let n = xs.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
        Ok(self.push(Op::MeanVecs { xs: xs.to_vec() }, Tensor::vector(out)))
    }

    /// Mean of scalar nodes (used for per-sentence and per-batch losses).
    pub fn mean_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId, NumError> {
        if xs.is_empty() {
            return Err(NumError::Contract {
                context: "mean of zero scalars".into(),
            });
        }
        let mut acc = 0.0;
        for x in xs {
            acc += self.vals[x.0].as_scalar()?;
        }
        acc /= xs.len() as f64;
        Ok(self.push(Op::MeanScalars { xs: xs.to_vec() }, Tensor::scalar(acc)))
    }

    /// Straight-through one-hot: forward emits `onehot(argmax(x))` (ties to
    /// the lowest index), backward passes the gradient through unchanged.
    pub fn onehot_st(&mut self, x: NodeId) -> Result<NodeId, NumError> {
        let xt = &self.vals[x.0];
        if xt.shape().len() != 1 || xt.is_empty() {
            return Err(NumError::ShapeMismatch {
                context: "onehot_st".into(),
                expected: "non-empty rank-1 vector".into(),
                actual: format!("{:?}", xt.shape()),
            });
        }
        let best = argmax(xt.data());
        let mut out = vec![0.0; xt.len()];
        out[best] = 1.0;
        Ok(self.push(Op::OneHotSt { x }, Tensor::vector(out)))
    }

    /// `W·x + b` with parameters `{prefix}.w` and `{prefix}.b`.
    pub fn affine(&mut self, store: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId, NumError> {
        let w = self.param(store, &format!("{prefix}.w"))?;
        let b = self.param(store, &format!("{prefix}.b"))?;
        let wx = self.matvec_named(w, x, &format!("affine '{prefix}.w'"))?;
        self.add(wx, b)
    }

    /// Standard LSTM step with sigmoid gates and tanh candidate/output.
    /// Parameters `{prefix}.wx`, `{prefix}.wh`, `{prefix}.b`; gate order
    /// input/forget/candidate/output along the 4H axis.
    pub fn lstm_cell(
        &mut self,
        store: &ParamStore,
        prefix: &str,
        x: NodeId,
        state: LstmState,
    ) -> Result<LstmState, NumError> {
        for (id, what) in [(x, "input"), (state.h, "hidden state"), (state.c, "cell state")] {
            if !self.vals[id.0].all_finite() {
                return Err(NumError::NonFinite {
                    context: format!("lstm '{prefix}' {what}"),
                });
            }
        }
        let wx = self.param(store, &format!("{prefix}.wx"))?;
        let wh = self.param(store, &format!("{prefix}.wh"))?;
        let b = self.param(store, &format!("{prefix}.b"))?;
        let hidden = self.vals[state.h.0].len();

        let ux = self.matvec_named(wx, x, &format!("lstm '{prefix}.wx'"))?;
        let uh = self.matvec_named(wh, state.h, &format!("lstm '{prefix}.wh'"))?;
        let u0 = self.add(ux, uh)?;
        let u = self.add(u0, b)?;

        let i_pre = self.slice(u, 0, hidden)?;
        let f_pre = self.slice(u, hidden, hidden)?;
        let g_pre = self.slice(u, 2 * hidden, hidden)?;
        let o_pre = self.slice(u, 3 * hidden, hidden)?;
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let g = self.tanh(g_pre);
        let o = self.sigmoid(o_pre);

        let fc = self.mul(f, state.c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let c_tanh = self.tanh(c_new);
        let h_new = self.mul(o, c_tanh)?;
        Ok(LstmState { h: h_new, c: c_new })
    }

    /// Zero-initialized LSTM state of the given width.
    pub fn zero_state(&mut self, hidden: usize) -> LstmState {
        let h = self.constant(Tensor::zeros(&[hidden]));
        let c = self.constant(Tensor::zeros(&[hidden]));
        LstmState { h, c }
    }

    /// Inverted dropout: zero entries with probability `rate` and scale the
    /// survivors by `1/(1-rate)`. Identity in evaluation mode.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId, NumError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Contract {
                context: format!("dropout rate {rate} outside [0, 1)"),
            });
        }
        if !self.train || rate == 0.0 {
            return Ok(x);
        }
        let len = self.vals[x.0].len();
        let shape = self.vals[x.0].shape().to_vec();
        let rng = self.rng.as_mut().expect("training tape has rng");
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.gen::<f64>() < keep { inv } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::from_vec(&shape, mask).expect("same shape"));
        self.mul(x, m)
    }

    /// Reverse sweep from a scalar loss. Returns one gradient tensor per
    /// parameter in `store`; parameters the forward pass never touched get
    /// zeros.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<GradMap, NumError> {
        if !self.vals[loss.0].is_scalar() {
            return Err(NumError::NotScalar {
                context: format!("backward on shape {:?}", self.vals[loss.0].shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Input => {
                    // leaf: keep the gradient for collection below
                    grads[id] = Some(g);
                }
                Op::MatVec { m, v } => {
                    let (mt, vt) = (&self.vals[m.0], &self.vals[v.0]);
                    let (rows, cols) = (mt.rows(), mt.cols());
                    {
                        let gm = ensure(&mut grads, *m, rows * cols);
                        for i in 0..rows {
                            let gi = g[i];
                            let row = &mut gm[i * cols..(i + 1) * cols];
                            for (j, r) in row.iter_mut().enumerate() {
                                *r += gi * vt.data()[j];
                            }
                        }
                    }
                    {
                        let gv = ensure(&mut grads, *v, cols);
                        for i in 0..rows {
                            let gi = g[i];
                            let row = mt.row(i);
                            for (j, gvj) in gv.iter_mut().enumerate() {
                                *gvj += gi * row[j];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Mul { a, b } => {
                    let (at, bt) = (&self.vals[a.0], &self.vals[b.0]);
                    {
                        let ga = ensure(&mut grads, *a, g.len());
                        for (i, gi) in g.iter().enumerate() {
                            ga[i] += gi * bt.data()[i];
                        }
                    }
                    {
                        let gb = ensure(&mut grads, *b, g.len());
                        for (i, gi) in g.iter().enumerate() {
                            gb[i] += gi * at.data()[i];
                        }
                    }
                }
                Op::Scale { x, k } => {
                    let gx = ensure(&mut grads, *x, g.len());
                    for (i, gi) in g.iter().enumerate() {
                        gx[i] += gi * k;
                    }
                }
                Op::Sigmoid { x } => {
                    let y = &self.vals[id];
                    let gx = ensure(&mut grads, *x, g.len());
                    for (i, gi) in g.iter().enumerate() {
                        let yi = y.data()[i];
                        gx[i] += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.vals[id];
                    let gx = ensure(&mut grads, *x, g.len());
                    for (i, gi) in g.iter().enumerate() {
                        let yi = y.data()[i];
                        gx[i] += gi * (1.0 - yi * yi);
                    }
                }
                Op::Softmax { x } => {
                    let y = self.vals[id].data();
                    let s: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let gx = ensure(&mut grads, *x, g.len());
                    for (i, gi) in g.iter().enumerate() {
                        gx[i] += y[i] * (gi - s);
                    }
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let gl = ensure(&mut grads, *logits, probs.len());
                    let gs = g[0];
                    for (i, p) in probs.iter().enumerate() {
                        let ind = if i == *target { 1.0 } else { 0.0 };
                        gl[i] += gs * (p - ind);
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.vals[p.0].len();
                        accumulate(&mut grads, *p, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    let total = self.vals[x.0].len();
                    let gx = ensure(&mut grads, *x, total);
                    for i in 0..*len {
                        gx[start + i] += g[i];
                    }
                }
                Op::EmbedRow { table, row } => {
                    let tt = &self.vals[table.0];
                    let (rows, cols) = (tt.rows(), tt.cols());
                    let gt = ensure(&mut grads, *table, rows * cols);
                    for (j, gi) in g.iter().enumerate() {
                        gt[row * cols + j] += gi;
                    }
                }
                Op::Dot { a, b } => {
                    let (at, bt) = (&self.vals[a.0], &self.vals[b.0]);
                    let gs = g[0];
                    {
                        let ga = ensure(&mut grads, *a, at.len());
                        for (i, gai) in ga.iter_mut().enumerate() {
                            *gai += gs * bt.data()[i];
                        }
                    }
                    {
                        let gb = ensure(&mut grads, *b, bt.len());
                        for (i, gbi) in gb.iter_mut().enumerate() {
                            *gbi += gs * at.data()[i];
                        }
                    }
                }
                Op::PackScalars { xs } => {
                    for (i, x) in xs.iter().enumerate() {
                        accumulate(&mut grads, *x, &g[i..i + 1]);
                    }
                }
                Op::AxpyMany { w, xs } => {
                    let wt = &self.vals[w.0];
                    {
                        let gw = ensure(&mut grads, *w, xs.len());
                        for (i, x) in xs.iter().enumerate() {
                            let xt = &self.vals[x.0];
                            let mut acc = 0.0;
                            for (gi, xi) in g.iter().zip(xt.data()) {
                                acc += gi * xi;
                            }
                            gw[i] += acc;
                        }
                    }
                    for (i, x) in xs.iter().enumerate() {
                        let wi = wt.data()[i];
                        let gx = ensure(&mut grads, *x, g.len());
                        for (j, gi) in g.iter().enumerate() {
                            gx[j] += wi * gi;
                        }
                    }
                }
                Op::MeanVecs { xs } => {
                    let inv = 1.0 / xs.len() as f64;
                    let scaled: Vec<f64> = g.iter().map(|gi| gi * inv).collect();
                    for x in xs {
                        accumulate(&mut grads, *x, &scaled);
                    }
                }
                Op::MeanScalars { xs } => {
                    let share = [g[0] / xs.len() as f64];
                    for x in xs {
                        accumulate(&mut grads, *x, &share);
                    }
                }
                Op::OneHotSt { x } => {
                    // straight-through: identity jacobian
                    accumulate(&mut grads, *x, &g);
                }
            }
        }

        let mut out = GradMap::default();
        for (name, t) in store.iter() {
            let grad = match self.param_leaves.get(name) {
                Some(leaf) => match &grads[leaf.0] {
                    Some(g) => Tensor::from_vec(t.shape(), g.clone()).expect("leaf shape"),
                    None => Tensor::zeros(t.shape()),
                },
                None => Tensor::zeros(t.shape()),
            };
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }
}

fn ensure(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    let slot = grads[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
    for (s, v) in slot.iter_mut().zip(g) {
        *s += v;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a slice.
pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the maximum entry; ties break to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}
