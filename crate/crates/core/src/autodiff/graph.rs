//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Trainable tensors live
//! in a [`ParamStore`] outside the graph; [`Graph::param`] snapshots a
//! parameter onto the tape and [`Graph::backward`] accumulates `d loss / d
//! param` into the store's gradient buffers.
//!
//! Binary elementwise ops accept either identical shapes or a right operand
//! whose shape equals the left operand's shape without its leading (batch)
//! dimension. No other broadcasting is performed.

use crate::autodiff::tensor::{dot, matmul_into, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
}

/// Named trainable tensors and their gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Frozen parameters are recorded as constants and skipped by the optimiser.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, &Tensor) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &e.grad)
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Row(Var, usize),
    RelaxedGate {
        alpha: Var,
        centered: Var,
        mean: Var,
        gate: Vec<f64>,
        inv_tau: f64,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    sigmoid(x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let trainable = store.is_trainable(id);
        self.push(store.value(id).clone(), Op::Param(id), trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// Checks the elementwise broadcasting rule; returns true when `b` is
    /// broadcast along the leading dimension of `a`.
    fn broadcast_rule(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if !sa.is_empty() && &sa[1..] == sb {
            Ok(true)
        } else {
            Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.broadcast_rule(op_name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let w = bv.len().max(1);
        let mut data = Vec::with_capacity(av.len());
        for chunk in av.data().chunks(w) {
            data.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Elementwise `|a|`; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sa != sb {
            return Err(Error::Shape {
                op: "dot",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let s = dot(self.value(a).data(), self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), needs))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 || i >= sa[0] {
            return Err(Error::Shape {
                op: "row",
                left: sa.to_vec(),
                right: vec![i],
            });
        }
        let row = self.value(a).row(i).to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(row), Op::Row(a, i), needs))
    }

    /// Relaxed Bernoulli gate with mean imputation as one node:
    ///
    /// ```text
    /// out = m * centered + mean,   m = 1 / (1 + exp(-alpha / tau) * factor)
    /// ```
    ///
    /// `alpha` and `mean` are vectors broadcast over the rows of `centered`;
    /// `factor = exp(-noise / tau)` holds one pre-drawn entry per element of
    /// `centered`, see [`crate::gates::gate_noise_factors`].
    pub fn relaxed_gate(
        &mut self,
        alpha: Var,
        factor: &Tensor,
        tau: f64,
        centered: Var,
        mean: Var,
    ) -> Result<Var> {
        let (sa, sc, sm) = (self.shape(alpha), self.shape(centered), self.shape(mean));
        if sc.len() != 2 || sa != &sc[1..] || sm != sa || factor.shape() != sc {
            return Err(Error::Shape {
                op: "relaxed_gate",
                left: sc.to_vec(),
                right: sa.to_vec(),
            });
        }
        if !(tau > 0.0) {
            return Err(Error::invalid("relaxed_gate: temperature must be positive"));
        }
        let inv_tau = 1.0 / tau;
        let scale: Vec<f64> = self.value(alpha).data().iter().map(|a| (-a * inv_tau).exp()).collect();
        let w = scale.len().max(1);
        let cv = self.value(centered).data();
        let mv = self.value(mean).data();
        let mut gate = Vec::with_capacity(cv.len());
        let mut out = Vec::with_capacity(cv.len());
        for (fc, cc) in factor.data().chunks(w).zip(cv.chunks(w)) {
            for (((f, c), e), mean) in fc.iter().zip(cc).zip(&scale).zip(mv) {
                let m = 1.0 / (1.0 + e * f);
                gate.push(m);
                out.push(m * c + mean);
            }
        }
        let value = Tensor::new(sc.to_vec(), out)?;
        let needs = self.needs(alpha) || self.needs(centered) || self.needs(mean);
        Ok(self.push(
            value,
            Op::RelaxedGate {
                alpha,
                centered,
                mean,
                gate,
                inv_tau,
            },
            needs,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let shape = lv.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: shape.to_vec(),
                right: vec![labels.len()],
            });
        }
        let (batch, classes) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {bad} outside [0, {classes})"
            )));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            let mut arg = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = c;
                }
            }
            let max = row[arg];
            // log-sum-exp as max + ln(1 + rest) keeps precision when one logit dominates.
            let mut rest = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * classes + c] = e;
                if c != arg {
                    rest += e;
                }
            }
            let z = 1.0 + rest;
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p /= z;
            }
            total += rest.ln_1p() - (row[label] - max);
        }
        let loss = total / batch as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Accumulates `d loss / d param` into `store` for every trainable
    /// parameter reachable from `loss`. Gradients are added to whatever the
    /// store already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: Vec::new(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(mut g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let dst = store.grad_mut(*id);
                    for (d, v) in dst.data_mut().iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.needs(*a) {
                        let da = slot(&mut grads, *a, m * k);
                        matmul_nt_acc(&g, self.value(*b).data(), da, m, k, n);
                    }
                    if self.needs(*b) {
                        let db = slot(&mut grads, *b, k * n);
                        matmul_tn_acc(self.value(*a).data(), &g, db, m, k, n);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.needs(*b) {
                        let w = self.value(*b).len().max(1);
                        let db = slot(&mut grads, *b, w);
                        for chunk in g.chunks(w) {
                            for (d, gv) in db.iter_mut().zip(chunk) {
                                *d += sign * gv;
                            }
                        }
                    }
                    if self.needs(*a) {
                        give(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let w = bv.len().max(1);
                    if self.needs(*b) {
                        let db = slot(&mut grads, *b, w);
                        for (gc, ac) in g.chunks(w).zip(av.chunks(w)) {
                            for ((d, gv), x) in db.iter_mut().zip(gc).zip(ac) {
                                *d += gv * x;
                            }
                        }
                    }
                    if self.needs(*a) {
                        for gc in g.chunks_mut(w) {
                            for (gv, y) in gc.iter_mut().zip(bv) {
                                *gv *= y;
                            }
                        }
                        give(&mut grads, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a).data();
                    for (gv, x) in g.iter_mut().zip(av) {
                        if *x <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    give(&mut grads, *a, g);
                }
                Op::Sigmoid(a) => {
                    let out = node.value.data();
                    for (gv, s) in g.iter_mut().zip(out) {
                        *gv *= s * (1.0 - s);
                    }
                    give(&mut grads, *a, g);
                }
                Op::Abs(a) => {
                    let av = self.value(*a).data();
                    for (gv, x) in g.iter_mut().zip(av) {
                        if *x == 0.0 {
                            *gv = 0.0;
                        } else if *x < 0.0 {
                            *gv = -*gv;
                        }
                    }
                    give(&mut grads, *a, g);
                }
                Op::Square(a) => {
                    let av = self.value(*a).data();
                    for (gv, x) in g.iter_mut().zip(av) {
                        *gv *= 2.0 * x;
                    }
                    give(&mut grads, *a, g);
                }
                Op::Scale(a, f) => {
                    g.iter_mut().for_each(|gv| *gv *= f);
                    give(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let da = slot(&mut grads, *a, n);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let da = slot(&mut grads, *a, n);
                    let gv = g[0] / n as f64;
                    da.iter_mut().for_each(|d| *d += gv);
                }
                Op::Dot(a, b) => {
                    let n = self.value(*a).len();
                    if self.needs(*a) {
                        let bv = self.value(*b).data();
                        let da = slot(&mut grads, *a, n);
                        for (d, x) in da.iter_mut().zip(bv) {
                            *d += g[0] * x;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.value(*a).data();
                        let db = slot(&mut grads, *b, n);
                        for (d, x) in db.iter_mut().zip(av) {
                            *d += g[0] * x;
                        }
                    }
                }
                Op::Row(a, i) => {
                    let total = self.value(*a).len();
                    let w = g.len();
                    let da = slot(&mut grads, *a, total);
                    add_assign(&mut da[i * w..(i + 1) * w], &g);
                }
                Op::RelaxedGate {
                    alpha,
                    centered,
                    mean,
                    gate,
                    inv_tau,
                } => {
                    let w = self.value(*alpha).len().max(1);
                    if self.needs(*alpha) {
                        let cv = self.value(*centered).data();
                        let da = slot(&mut grads, *alpha, w);
                        for ((gc, mc), cc) in g.chunks(w).zip(gate.chunks(w)).zip(cv.chunks(w)) {
                            for (((d, gv), m), c) in da.iter_mut().zip(gc).zip(mc).zip(cc) {
                                *d += gv * c * m * (1.0 - m) * inv_tau;
                            }
                        }
                    }
                    if self.needs(*mean) {
                        let dm = slot(&mut grads, *mean, w);
                        for gc in g.chunks(w) {
                            add_assign(dm, gc);
                        }
                    }
                    if self.needs(*centered) {
                        for (gv, m) in g.iter_mut().zip(gate) {
                            *gv *= m;
                        }
                        give(&mut grads, *centered, g);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = self.shape(*logits)[1];
                    let batch = labels.len();
                    let scale = g[0] / batch as f64;
                    let dl = slot(&mut grads, *logits, batch * classes);
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            dl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Hands an owned gradient buffer to `v`, adding it to any existing one.
fn give(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(d) => add_assign(d, &g),
        slot @ None => *slot = Some(g),
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
