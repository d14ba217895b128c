//! Reverse-mode differentiation on a tape of recorded operations.
//!
//! Every backward rule is itself expressed with tape operations, so the
//! gradients returned by [`Tape::grad`] are ordinary [`Var`]s that can be
//! differentiated again. This is what makes input-gradient penalties
//! (`‖∇ₓ D(x)‖²` differentiated with respect to the parameters of `D`) work.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, ConvDims, ConvGeom};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    ClampMin(usize, f64),
    Log(usize),
    SafeRecip(usize),
    Sqrt(usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Reshape(usize),
    Broadcast { x: usize, outer: usize, inner: usize },
    ReduceSum { x: usize, outer: usize, inner: usize },
    SliceMid { x: usize, outer: usize, mid: usize, inner: usize, start: usize, len: usize },
    PadMid { x: usize, start: usize, len: usize },
    Conv2d { x: usize, w: usize, geom: ConvGeom },
    ConvBackInput { gy: usize, w: usize, geom: ConvGeom },
    ConvBackWeight { x: usize, gy: usize, geom: ConvGeom },
    Upsample2x(usize),
    SumPool2x(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// An append-only record of tensor operations.
///
/// A tape is meant to live for one forward/backward pass; create a fresh one
/// per training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a leaf value. Leaves are differentiable only when listed in the
    /// `wrt` argument of [`Tape::grad`]; otherwise they act as constants.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.var(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn at(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Variables that `output` does not depend on receive a zero tensor. The
    /// returned gradients are recorded on the tape and can be differentiated
    /// further.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        assert!(std::ptr::eq(output.tape, self), "output belongs to another tape");
        assert_eq!(
            self.value(output.id).len(),
            1,
            "grad() needs a scalar output"
        );
        let n = output.id + 1;
        let ops: Vec<Op> = self.nodes.borrow()[..n].iter().map(|nd| nd.op.clone()).collect();

        let mut needs = vec![false; n];
        for v in wrt {
            if v.id < n {
                needs[v.id] = true;
            }
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = inputs(&ops[i]).iter().any(|&j| needs[j]);
            }
        }

        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        let out_shape = self.value(output.id).shape().to_vec();
        grads[output.id] = Some(self.var(Tensor::full(&out_shape, 1.0)));

        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            if matches!(ops[i], Op::Leaf) {
                continue;
            }
            for (j, gj) in self.backward(i, &ops[i], g, &needs) {
                grads[j] = Some(match grads[j] {
                    Some(acc) => acc.add(gj),
                    None => gj,
                });
            }
        }

        wrt.iter()
            .map(|v| match grads.get(v.id).copied().flatten() {
                Some(g) => g,
                None => self.var(Tensor::zeros(self.value(v.id).shape())),
            })
            .collect()
    }

    fn backward<'t>(&'t self, id: usize, op: &Op, g: Var<'t>, needs: &[bool]) -> Vec<(usize, Var<'t>)> {
        let y = self.at(id);
        let mut out = Vec::with_capacity(2);
        let mut emit = |j: usize, f: &dyn Fn() -> Var<'t>| {
            if needs[j] {
                out.push((j, f()));
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g);
            }
            Op::Sub(a, b) => {
                emit(a, &|| g);
                emit(b, &|| g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                emit(a, &|| g.mul(self.at(b)));
                emit(b, &|| g.mul(self.at(a)));
            }
            Op::Scale(a, c) => emit(a, &|| g.scale(c)),
            Op::AddScalar(a) => emit(a, &|| g),
            Op::Sigmoid(a) => emit(a, &|| g.mul(y.sub(y.mul(y)))),
            Op::Tanh(a) => emit(a, &|| g.sub(g.mul(y.mul(y)))),
            Op::LeakyRelu(a, slope) => emit(a, &|| {
                let mask = self.value(a).map(|v| if v > 0.0 { 1.0 } else { slope });
                g.mul(self.var(mask))
            }),
            Op::ClampMin(a, lo) => emit(a, &|| {
                let mask = self.value(a).map(|v| if v > lo { 1.0 } else { 0.0 });
                g.mul(self.var(mask))
            }),
            Op::Log(a) => emit(a, &|| g.mul(self.at(a).safe_recip())),
            Op::SafeRecip(a) => emit(a, &|| g.mul(y.mul(y)).scale(-1.0)),
            Op::Sqrt(a) => emit(a, &|| g.mul(y.safe_recip()).scale(0.5)),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.at(a), self.at(b));
                emit(a, &|| if ta { vb.matmul_t(g, tb, true) } else { g.matmul_t(vb, false, !tb) });
                emit(b, &|| if tb { g.matmul_t(va, true, ta) } else { va.matmul_t(g, !ta, false) });
            }
            Op::Reshape(a) => emit(a, &|| g.reshape(self.value(a).shape())),
            Op::Broadcast { x, outer, inner } => {
                emit(x, &|| g.reduce_sum(outer, inner, self.value(x).shape()))
            }
            Op::ReduceSum { x, outer, inner } => {
                emit(x, &|| g.broadcast(outer, inner, self.value(x).shape()))
            }
            Op::SliceMid { x, outer, mid, inner, start, len } => {
                emit(x, &|| g.pad_mid(outer, mid, inner, start, len))
            }
            Op::PadMid { x, start, len, .. } => emit(x, &|| g.slice_channels(start, len)),
            Op::Conv2d { x, w, geom } => {
                let (vx, vw) = (self.at(x), self.at(w));
                emit(x, &|| g.conv2d_back_input(vw, geom, self.value(x).shape()));
                emit(w, &|| vx.conv2d_back_weight(g, geom, self.value(w).shape()));
            }
            Op::ConvBackInput { gy, w, geom, .. } => {
                let (vgy, vw) = (self.at(gy), self.at(w));
                emit(gy, &|| g.conv2d(vw, geom));
                emit(w, &|| g.conv2d_back_weight(vgy, geom, self.value(w).shape()));
            }
            Op::ConvBackWeight { x, gy, geom, .. } => {
                let (vx, vgy) = (self.at(x), self.at(gy));
                emit(gy, &|| vx.conv2d(g, geom));
                emit(x, &|| vgy.conv2d_back_input(g, geom, self.value(x).shape()));
            }
            Op::Upsample2x(a) => emit(a, &|| g.sum_pool2x()),
            Op::SumPool2x(a) => emit(a, &|| g.upsample2x()),
        }
        out
    }
}

fn inputs(op: &Op) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
        Op::MatMul { a, b, .. } => vec![a, b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::LeakyRelu(a, _)
        | Op::ClampMin(a, _)
        | Op::Log(a)
        | Op::SafeRecip(a)
        | Op::Sqrt(a)
        | Op::Reshape(a)
        | Op::Upsample2x(a)
        | Op::SumPool2x(a) => vec![a],
        Op::Broadcast { x, .. }
        | Op::ReduceSum { x, .. }
        | Op::SliceMid { x, .. }
        | Op::PadMid { x, .. } => vec![x],
        Op::Conv2d { x, w, .. } => vec![x, w],
        Op::ConvBackInput { gy, w, .. } => vec![gy, w],
        Op::ConvBackWeight { x, gy, .. } => vec![x, gy],
    }
}

fn split4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected a [B, C, H, W] tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.check_same_tape(&other);
        let v = self.value().zip_map(&other.value(), f);
        self.tape.push(v, op)
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| a * c)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a + c)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| if a > 0.0 { a } else { slope * a })
    }

    pub fn relu(&self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    /// `max(x, lo)`; the gradient is zero where the clamp is active.
    pub fn clamp_min(&self, lo: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, lo), |a| a.max(lo))
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// `1/x`, defined as 0 at `x = 0`.
    pub fn safe_recip(&self) -> Var<'t> {
        self.unary(Op::SafeRecip(self.id), |a| if a == 0.0 { 0.0 } else { 1.0 / a })
    }

    /// Square root whose derivative is taken as 0 at the origin.
    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self)
    }

    /// Matrix product of 2-D variables.
    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        self.check_same_tape(&other);
        let (a, b) = (self.value(), other.value());
        assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul needs 2-D operands");
        let (m, ka) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
        let (kb, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        assert_eq!(ka, kb, "matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape());
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, ka, n, a.data(), ta, b.data(), tb, 0.0, &mut c);
        self.tape.push(
            Tensor::new(vec![m, n], c),
            Op::MatMul { a: self.id, b: other.id, ta, tb },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshaped(shape);
        self.tape.push(v, Op::Reshape(self.id))
    }

    /// Repeats every element over an `outer × · × inner` layout with the given shape.
    pub fn broadcast(&self, outer: usize, inner: usize, shape: &[usize]) -> Var<'t> {
        let v = kernels::broadcast(outer, inner, self.value().data());
        self.tape.push(
            Tensor::new(shape.to_vec(), v),
            Op::Broadcast { x: self.id, outer, inner },
        )
    }

    /// Sums an `outer × · × inner` layout down to the given shape.
    pub fn reduce_sum(&self, outer: usize, inner: usize, shape: &[usize]) -> Var<'t> {
        let v = kernels::reduce_sum(outer, inner, self.value().data());
        self.tape.push(
            Tensor::new(shape.to_vec(), v),
            Op::ReduceSum { x: self.id, outer, inner },
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Var<'t> {
        let n = self.value().len();
        self.reduce_sum(1, n, &[1])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums everything but the leading axis: `[B, ...] -> [B]`.
    pub fn sum_per_row(&self) -> Var<'t> {
        let shape = self.shape();
        let rows = shape[0];
        let inner = shape[1..].iter().product();
        self.reshape(&[1, rows, inner]).reduce_sum(1, inner, &[rows])
    }

    /// Broadcasts a `[B]` vector over the trailing dimensions of `shape`.
    pub fn expand_rows(&self, shape: &[usize]) -> Var<'t> {
        let inner = shape[1..].iter().product();
        self.broadcast(1, inner, shape)
    }

    /// Adds a per-channel bias `[C]` to a `[B, C, ...]` tensor.
    pub fn add_channel_bias(&self, bias: Var<'t>) -> Var<'t> {
        let shape = self.shape();
        assert!(shape.len() >= 2, "channel bias needs a [B, C, ...] tensor");
        assert_eq!(bias.value().len(), shape[1], "bias length must equal channel count");
        let inner = shape[2..].iter().product();
        let b = bias.broadcast(shape[0], inner, &shape);
        self.add(b)
    }

    /// Broadcasts a `[...]` tensor over a new leading batch axis of size `batch`.
    pub fn expand_batch(&self, batch: usize) -> Var<'t> {
        let mut shape = vec![batch];
        shape.extend(self.shape());
        self.broadcast(batch, 1, &shape)
    }

    /// Channel slice `[start, start + len)` of a `[B, C, ...]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Var<'t> {
        let shape = self.shape();
        let inner: usize = shape[2..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[1] = len;
        let v = kernels::slice_mid(shape[0], shape[1], inner, start, len, self.value().data());
        self.tape.push(
            Tensor::new(out_shape, v),
            Op::SliceMid { x: self.id, outer: shape[0], mid: shape[1], inner, start, len },
        )
    }

    fn pad_mid(&self, outer: usize, mid: usize, inner: usize, start: usize, len: usize) -> Var<'t> {
        let mut shape = self.shape();
        shape[1] = mid;
        let v = kernels::pad_mid(outer, mid, inner, start, len, self.value().data());
        self.tape.push(
            Tensor::new(shape, v),
            Op::PadMid { x: self.id, start, len },
        )
    }

    /// 2-D cross-correlation of `[B, Ci, H, W]` with weights `[Co, Ci, kh, kw]`.
    pub fn conv2d(&self, w: Var<'t>, geom: ConvGeom) -> Var<'t> {
        self.check_same_tape(&w);
        let (x, wv) = (self.value(), w.value());
        let d = ConvDims::from_shapes(x.shape(), wv.shape(), geom);
        let y = kernels::conv2d(&d, x.data(), wv.data());
        self.tape.push(
            Tensor::new(d.output_shape(), y),
            Op::Conv2d { x: self.id, w: w.id, geom },
        )
    }

    /// Adjoint of [`Var::conv2d`] in its input, applied to `self` (output-shaped).
    pub fn conv2d_back_input(&self, w: Var<'t>, geom: ConvGeom, x_shape: &[usize]) -> Var<'t> {
        self.check_same_tape(&w);
        let (gy, wv) = (self.value(), w.value());
        let d = ConvDims::from_shapes(x_shape, wv.shape(), geom);
        debug_assert_eq!(d.output_shape(), gy.shape());
        let gx = kernels::conv2d_back_input(&d, gy.data(), wv.data());
        self.tape.push(
            Tensor::new(x_shape.to_vec(), gx),
            Op::ConvBackInput { gy: self.id, w: w.id, geom },
        )
    }

    /// Adjoint of [`Var::conv2d`] in its weights; `self` is the input and `gy`
    /// is output-shaped.
    pub fn conv2d_back_weight(&self, gy: Var<'t>, geom: ConvGeom, w_shape: &[usize]) -> Var<'t> {
        self.check_same_tape(&gy);
        let (x, gyv) = (self.value(), gy.value());
        let d = ConvDims::from_shapes(x.shape(), w_shape, geom);
        debug_assert_eq!(d.output_shape(), gyv.shape());
        let gw = kernels::conv2d_back_weight(&d, x.data(), gyv.data());
        self.tape.push(
            Tensor::new(w_shape.to_vec(), gw),
            Op::ConvBackWeight { x: self.id, gy: gy.id, geom },
        )
    }

    /// Nearest-neighbour 2× upsampling of a `[B, C, H, W]` tensor.
    pub fn upsample2x(&self) -> Var<'t> {
        let x = self.value();
        let (b, c, h, w) = split4(x.shape());
        let y = kernels::upsample2x(b * c, h, w, x.data());
        self.tape.push(Tensor::new(vec![b, c, 2 * h, 2 * w], y), Op::Upsample2x(self.id))
    }

    fn sum_pool2x(&self) -> Var<'t> {
        let x = self.value();
        let (b, c, h, w) = split4(x.shape());
        let y = kernels::sum_pool2x(b * c, h, w, x.data());
        self.tape.push(Tensor::new(vec![b, c, h / 2, w / 2], y), Op::SumPool2x(self.id))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
