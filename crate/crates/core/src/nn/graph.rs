//! Tape-based reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters
//! enter the tape as leaves that remember their [`ParamId`]; calling
//! [`Graph::backward`] walks the tape in reverse and *adds* each leaf's
//! gradient into the owning [`ParamStore`]. Gradients therefore accumulate
//! across backward passes until [`ParamStore::zero_grad`] is called.
//!
//! Batch-norm running moments are not written during the forward pass;
//! train-mode batch norm queues the update and [`Graph::commit_buffers`]
//! applies it. This keeps forward passes read-only with respect to the
//! store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
        stride: usize,
    },
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        xhat: Tensor,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    GlobalAvgPool(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x * s` where `s` has a single element.
    ScaleBy {
        x: NodeId,
        s: NodeId,
    },
    OneMinus(NodeId),
    Reshape(NodeId),
    Mse {
        pred: NodeId,
        target: Tensor,
    },
    Mae {
        pred: NodeId,
        target: Tensor,
    },
    WeightedSum(Vec<(NodeId, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug)]
struct BufferUpdate {
    mean_id: ParamId,
    var_id: ParamId,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    momentum: f64,
    batch: usize,
}

/// One recorded forward computation.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    pending: Vec<BufferUpdate>,
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn train(seed: u64) -> Self {
        Self::new(Mode::Train, seed)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = ops::dense_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Dense { x, w, b }, needs))
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let out = ops::conv2d_forward(self.value(x), self.value(k), self.value(b), stride)?;
        let needs = self.needs(&[x, k, b]);
        Ok(self.push(out, Op::Conv2d { x, k, b, stride }, needs))
    }

    /// Batch norm over `[batch, features]`.
    ///
    /// In train mode the current batch moments are used (batch must be at
    /// least 2) and an exponential update of `running_mean`/`running_var`
    /// with `momentum` is queued. In eval mode the running moments are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        store: &ParamStore,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        running_mean: ParamId,
        running_var: ParamId,
        eps: f64,
        momentum: f64,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim("batchnorm", xv.shape(), &[0, 0]));
        }
        let batch = xv.batch();
        let train = self.mode == Mode::Train;
        let (mean, var) = if train && batch > 0 {
            if batch < 2 {
                return Err(Error::Contract(
                    "train-mode batch norm needs a batch of at least 2".into(),
                ));
            }
            ops::batch_moments(xv)
        } else {
            (
                store.value(running_mean).data().to_vec(),
                store.value(running_var).data().to_vec(),
            )
        };
        let (out, xhat, inv_std) =
            ops::batchnorm_apply(xv, &mean, &var, self.value(scale), self.value(shift), eps)?;
        if train && batch > 0 {
            self.pending.push(BufferUpdate {
                mean_id: running_mean,
                var_id: running_var,
                batch_mean: mean,
                batch_var: var,
                momentum,
                batch,
            });
        }
        let needs = self.needs(&[x, scale, shift]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                train,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu_forward(self.value(x));
        let needs = self.needs(&[x]);
        self.push(out, Op::Relu(x), needs)
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let len = self.value(x).len();
        let mask = ops::dropout_mask(len, p, &mut self.rng)?;
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, needs))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool_forward(self.value(x))?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), needs))
    }

    /// Concatenates two `[batch, *]` tensors along the feature axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.batch() != bv.batch() {
            return Err(Error::dim("concat", av.shape(), bv.shape()));
        }
        let (batch, na, nb) = (av.batch(), av.shape()[1], bv.shape()[1]);
        let mut data = Vec::with_capacity(batch * (na + nb));
        for r in 0..batch {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::new(vec![batch, na + nb], data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), needs))
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.elementwise(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::dim("scale_by", self.value(x).shape(), sv.shape()));
        }
        let factor = sv.data()[0];
        let out = self.value(x).map(|v| v * factor);
        let needs = self.needs(&[x, s]);
        Ok(self.push(out, Op::ScaleBy { x, s }, needs))
    }

    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| 1.0 - v);
        let needs = self.needs(&[x]);
        self.push(out, Op::OneMinus(x), needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    fn check_loss_inputs(&self, pred: NodeId, target: &Tensor) -> Result<usize> {
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Error::dim("loss", pv.shape(), target.shape()));
        }
        if pv.is_empty() {
            return Err(Error::Empty("loss over an empty batch".into()));
        }
        Ok(pv.len())
    }

    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let n = self.check_loss_inputs(pred, target)?;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let needs = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(sum / n as f64),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            needs,
        ))
    }

    pub fn mae(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let n = self.check_loss_inputs(pred, target)?;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        let needs = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(sum / n as f64),
            Op::Mae {
                pred,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// `sum_i c_i * term_i` over single-element terms.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, c) in terms {
            let v = self.value(id);
            if v.len() != 1 {
                return Err(Error::dim("weighted_sum", v.shape(), &[1]));
            }
            total += c * v.data()[0];
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let needs = self.needs(&ids);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), needs))
    }

    /// Applies queued batch-norm running-moment updates. Running variance is
    /// tracked with the unbiased estimator.
    pub fn commit_buffers(&mut self, store: &mut ParamStore) {
        for u in self.pending.drain(..) {
            let correction = u.batch as f64 / (u.batch as f64 - 1.0);
            let m = u.momentum;
            for (r, b) in store
                .get_mut(u.mean_id)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.batch_mean)
            {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in store
                .get_mut(u.var_id)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.batch_var)
            {
                *r = (1.0 - m) * *r + m * b * correction;
            }
        }
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |id: NodeId, t: Tensor| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    store.get_mut(*pid).gradient.add_assign(&g);
                }
                Op::Dense { x, w, b } => {
                    let need_dx = self.nodes[x.0].needs_grad;
                    let (dx, dw, db) =
                        ops::dense_backward(self.value(*x), self.value(*w), &g, need_dx);
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                    send(*w, dw);
                    send(*b, db);
                }
                Op::Conv2d { x, k, b, stride } => {
                    let need_dx = self.nodes[x.0].needs_grad;
                    let (dx, dk, db) = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*k),
                        *stride,
                        &g,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                    send(*k, dk);
                    send(*b, db);
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (dx, ds, dsh) = if *train {
                        ops::batchnorm_train_backward(xhat, inv_std, self.value(*scale), &g)
                    } else {
                        ops::batchnorm_eval_backward(xhat, inv_std, self.value(*scale), &g)
                    };
                    send(*x, dx);
                    send(*scale, ds);
                    send(*shift, dsh);
                }
                Op::Relu(x) => {
                    send(*x, ops::relu_backward(self.value(*x), &g));
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    send(*x, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::GlobalAvgPool(x) => {
                    send(*x, ops::global_avg_pool_backward(self.value(*x).shape(), &g));
                }
                Op::Concat(a, b) => {
                    let (batch, na) = (g.batch(), self.value(*a).shape()[1]);
                    let nb = self.value(*b).shape()[1];
                    let mut da = Vec::with_capacity(batch * na);
                    let mut dbv = Vec::with_capacity(batch * nb);
                    for r in 0..batch {
                        let row = g.row(r);
                        da.extend_from_slice(&row[..na]);
                        dbv.extend_from_slice(&row[na..]);
                    }
                    send(*a, Tensor::new(vec![batch, na], da)?);
                    send(*b, Tensor::new(vec![batch, nb], dbv)?);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    let dbv = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    send(*a, Tensor::new(g.shape().to_vec(), da)?);
                    send(*b, Tensor::new(g.shape().to_vec(), dbv)?);
                }
                Op::ScaleBy { x, s } => {
                    let factor = self.value(*s).data()[0];
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, v)| g * v)
                        .sum();
                    send(*x, g.map(|v| v * factor));
                    send(*s, Tensor::full(self.value(*s).shape(), ds));
                }
                Op::OneMinus(x) => {
                    send(*x, g.map(|v| -v));
                }
                Op::Reshape(x) => {
                    send(*x, g.reshape(self.value(*x).shape().to_vec())?);
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.data()[0] / pv.len() as f64;
                    let data = pv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, t)| scale * (p - t))
                        .collect();
                    send(*pred, Tensor::new(pv.shape().to_vec(), data)?);
                }
                Op::Mae { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = g.data()[0] / pv.len() as f64;
                    let data = pv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, t)| {
                            let d = p - t;
                            if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    send(*pred, Tensor::new(pv.shape().to_vec(), data)?);
                }
                Op::WeightedSum(terms) => {
                    for &(id, c) in terms {
                        let shape = self.value(id).shape().to_vec();
                        send(id, Tensor::full(&shape, c * g.data()[0]));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Parameter;

    #[test]
    fn square_of_product() {
        // f(w) = (w x)^2 at w = 2, x = 3: df/dw = 2 w x^2 = 36
        let mut store = ParamStore::new();
        let w = store.add(Parameter::new("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap()));
        let zero = store.add(Parameter::buffer("zero", Tensor::zeros(&[1])));
        let mut g = Graph::eval();
        let x = g.input(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let wn = g.param(&store, w);
        let bn = g.param(&store, zero);
        let y = g.dense(x, wn, bn).unwrap();
        let loss = g.mul(y, y).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).gradient.data(), &[36.0]);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.add(Parameter::new("a", Tensor::scalar(1.5)));
        let unused = store.add(Parameter::new("unused", Tensor::scalar(4.0)));
        let mut g = Graph::eval();
        let an = g.param(&store, a);
        let _ = g.param(&store, unused);
        let loss = g.mul(an, an).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(unused).gradient.data(), &[0.0]);
        assert_eq!(store.get(a).gradient.data(), &[3.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let a = store.add(Parameter::new("a", Tensor::scalar(1.5)));
        let mut g = Graph::eval();
        let an = g.param(&store, a);
        let loss = g.mul(an, an).unwrap();
        g.backward(loss, &mut store).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(a).gradient.data(), &[6.0]);
        store.zero_grad();
        assert_eq!(store.get(a).gradient.data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let mut g = Graph::eval();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn train_batchnorm_rejects_single_sample() {
        let mut store = ParamStore::new();
        let s = store.add(Parameter::new("s", Tensor::full(&[1], 1.0)));
        let t = store.add(Parameter::new("t", Tensor::zeros(&[1])));
        let m = store.add(Parameter::buffer("m", Tensor::zeros(&[1])));
        let v = store.add(Parameter::buffer("v", Tensor::full(&[1], 1.0)));
        let mut g = Graph::train(0);
        let x = g.input(Tensor::zeros(&[1, 1]));
        let (sn, tn) = (g.param(&store, s), g.param(&store, t));
        let r = g.batchnorm(&store, x, sn, tn, m, v, 1e-5, 0.1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let input = Tensor::from_vec(vec![0.25, -1.0, 3.5]);
        let mut g = Graph::eval();
        let x = g.input(input.clone());
        let y = g.dropout(x, 0.7).unwrap();
        assert_eq!(g.value(y), &input);

        let mut g = Graph::train(3);
        let x = g.input(input.clone());
        let y = g.dropout(x, 0.0).unwrap();
        assert_eq!(g.value(y), &input);
    }
}
