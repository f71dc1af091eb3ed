//! Dense f32 tensors with reverse-mode automatic differentiation.
//!
//! Gradients are computed on a Wengert tape: every differentiable op
//! records a node holding its inputs' node ids and its output value.
//! `Tensor::backward` walks the tape once in reverse and returns a
//! [`GradientMap`]. Tapes are single-use; a second backward on the same
//! tape is an error.
//!
//! Tensors created by constructors are *detached* values. Attaching a
//! tensor to a tape (`Tape::var`) yields a leaf that requires gradients.
//! Ops between detached tensors stay in value space and record nothing,
//! so the same forward code serves both live (tracked) and frozen
//! (value-only) networks.
//!
//! Reductions accumulate in f64 before rounding back to f32 so that
//! verification probes are not dominated by summation noise.

mod backward;
mod conv;
mod gradcheck;

pub use backward::GradientMap;
pub use gradcheck::{finite_difference_check, DEFAULT_FD_STEP};

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shift added under the square root by [`Tensor::sqrt_eps`].
pub const SQRT_SHIFT: f32 = 1e-12;

/// Dense row-major f32 tensor, optionally attached to an autodiff tape.
#[derive(Clone)]
pub struct Tensor {
    data: Arc<Vec<f32>>,
    shape: Vec<usize>,
    node: Option<NodeRef>,
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

/// Single-use autodiff tape. Cloning is shallow; clones share the tape.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

struct Node {
    op: Op,
    parents: Vec<usize>,
    value: Arc<Vec<f32>>,
    shape: Vec<usize>,
    needs_grad: bool,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Abs,
    Square,
    SqrtEps,
    Silu,
    StopGrad,
    Reshape,
    ConcatC,
    UpsampleNearest2x,
    BiasAddC,
    ScaleC,
    Conv2d { stride: usize, padding: usize },
    Sum,
    Mean,
    L1Mean,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    fn same(a: &Tape, b: &Tape) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    /// Attach `t`'s value to this tape as a leaf that requires gradients.
    pub fn var(&self, t: &Tensor) -> Tensor {
        self.leaf(t, true)
    }

    /// Attach `t`'s value as a constant leaf (tracked but no gradient).
    pub fn constant(&self, t: &Tensor) -> Tensor {
        self.leaf(t, false)
    }

    fn leaf(&self, t: &Tensor, needs_grad: bool) -> Tensor {
        let id = self.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value: t.data.clone(),
            shape: t.shape.clone(),
            needs_grad,
        });
        Tensor {
            data: t.data.clone(),
            shape: t.shape.clone(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    fn push(&self, node: Node) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    /// Node id of `t` on this tape, registering a constant leaf if needed.
    fn ensure(&self, t: &Tensor) -> usize {
        if let Some(nr) = &t.node {
            debug_assert!(Tape::same(&nr.tape, self));
            return nr.id;
        }
        self.push(Node {
            op: Op::Leaf,
            parents: Vec::new(),
            value: t.data.clone(),
            shape: t.shape.clone(),
            needs_grad: false,
        })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Tape shared by `a` and `b`, or None when both are detached.
fn joint_tape(a: &Tensor, b: &Tensor) -> Result<Option<Tape>> {
    match (&a.node, &b.node) {
        (None, None) => Ok(None),
        (Some(x), None) => Ok(Some(x.tape.clone())),
        (None, Some(y)) => Ok(Some(y.tape.clone())),
        (Some(x), Some(y)) => {
            if Tape::same(&x.tape, &y.tape) {
                Ok(Some(x.tape.clone()))
            } else {
                Err(Error::TapeMismatch)
            }
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::InvalidShape(format!(
                "{} elements do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor {
            data: Arc::new(data),
            shape: shape.to_vec(),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        check_shape(shape).expect("full: invalid shape");
        let numel: usize = shape.iter().product();
        Tensor {
            data: Arc::new(vec![v; numel]),
            shape: shape.to_vec(),
            node: None,
        }
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::full(&[1], v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    /// Value of a one-element tensor. Panics on any other shape: callers
    /// use this only where a scalar is structurally guaranteed.
    pub fn item(&self) -> f32 {
        assert!(
            self.numel() == 1,
            "item() on non-scalar tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    /// Copy of the value with no tape attachment.
    pub fn detach(&self) -> Tensor {
        Tensor {
            data: self.data.clone(),
            shape: self.shape.clone(),
            node: None,
        }
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    /// True when gradients will flow to this tensor in a backward pass.
    pub fn requires_grad(&self) -> bool {
        match &self.node {
            None => false,
            Some(nr) => nr.tape.inner.borrow().nodes[nr.id].needs_grad,
        }
    }

    fn record(
        &self,
        tape: Option<Tape>,
        op: Op,
        parents: &[&Tensor],
        data: Vec<f32>,
        shape: Vec<usize>,
    ) -> Result<Tensor> {
        let data = Arc::new(data);
        let node = match tape {
            None => None,
            Some(tape) => {
                if tape.is_consumed() {
                    return Err(Error::TapeConsumed);
                }
                let ids: Vec<usize> = parents.iter().map(|p| tape.ensure(p)).collect();
                let needs_grad = {
                    let inner = tape.inner.borrow();
                    !matches!(op, Op::StopGrad)
                        && ids.iter().any(|&id| inner.nodes[id].needs_grad)
                };
                let id = tape.push(Node {
                    op,
                    parents: ids,
                    value: data.clone(),
                    shape: shape.clone(),
                    needs_grad,
                });
                Some(NodeRef { tape, id })
            }
        };
        Ok(Tensor { data, shape, node })
    }

    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (data, shape) = ew_binary(self, other, &op, f)?;
        let tape = joint_tape(self, other)?;
        self.record(tape, op, &[self, other], data, shape)
    }

    fn unary(&self, op: Op, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        let tape = self.node.as_ref().map(|nr| nr.tape.clone());
        self.record(tape, op, &[self], data, self.shape.clone())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn add_scalar(&self, c: f32) -> Result<Tensor> {
        self.add(&Tensor::scalar(c))
    }

    pub fn scale(&self, c: f32) -> Result<Tensor> {
        self.mul(&Tensor::scalar(c))
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(Op::Abs, f32::abs)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(Op::Square, |v| v * v)
    }

    /// Elementwise `sqrt(x + SQRT_SHIFT)`; the shift keeps the gradient
    /// finite at zero.
    pub fn sqrt_eps(&self) -> Result<Tensor> {
        self.unary(Op::SqrtEps, |v| (v + SQRT_SHIFT).sqrt())
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.unary(Op::Silu, |v| v * sigmoid(v))
    }

    /// Identity in value space; blocks all gradient flow in backward.
    pub fn stop_gradient(&self) -> Tensor {
        let tape = self.node.as_ref().map(|nr| nr.tape.clone());
        self.record(
            tape,
            Op::StopGrad,
            &[self],
            self.data.to_vec(),
            self.shape.clone(),
        )
        .expect("stop_gradient records an identity node")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let tape = self.node.as_ref().map(|nr| nr.tape.clone());
        self.record(tape, Op::Reshape, &[self], self.data.to_vec(), shape.to_vec())
    }

    /// Concatenate along the channel axis of NCHW tensors.
    pub fn concat_c(&self, other: &Tensor) -> Result<Tensor> {
        let (n, c1, h, w) = nchw(self, "concat_c")?;
        let (n2, c2, h2, w2) = nchw(other, "concat_c")?;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::ShapeMismatch {
                context: "concat_c",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 + c2) * plane);
        for i in 0..n {
            data.extend_from_slice(&self.data[i * c1 * plane..(i + 1) * c1 * plane]);
            data.extend_from_slice(&other.data[i * c2 * plane..(i + 1) * c2 * plane]);
        }
        let tape = joint_tape(self, other)?;
        self.record(tape, Op::ConcatC, &[self, other], data, vec![n, c1 + c2, h, w])
    }

    /// Nearest-neighbour 2x spatial upsampling of an NCHW tensor.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor> {
        let (n, c, h, w) = nchw(self, "upsample_nearest_2x")?;
        let mut data = vec![0.0f32; n * c * 4 * h * w];
        let ow = 2 * w;
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    let base = 2 * y * ow + 2 * x;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + ow] = v;
                    dst[base + ow + 1] = v;
                }
            }
        }
        let tape = self.node.as_ref().map(|nr| nr.tape.clone());
        self.record(tape, Op::UpsampleNearest2x, &[self], data, vec![n, c, 2 * h, 2 * w])
    }

    /// Add a per-channel bias (shape `[C]`) to an NCHW tensor.
    pub fn bias_add_c(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = nchw(self, "bias_add_c")?;
        if bias.shape != [c] {
            return Err(Error::ShapeMismatch {
                context: "bias_add_c",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let plane = h * w;
        let mut data = self.data.to_vec();
        for i in 0..n {
            for ch in 0..c {
                let b = bias.data[ch];
                for v in &mut data[(i * c + ch) * plane..(i * c + ch + 1) * plane] {
                    *v += b;
                }
            }
        }
        let tape = joint_tape(self, bias)?;
        self.record(tape, Op::BiasAddC, &[self, bias], data, self.shape.clone())
    }

    /// Multiply each channel of an NCHW tensor by a per-channel factor.
    pub fn scale_c(&self, scales: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = nchw(self, "scale_c")?;
        if scales.shape != [c] {
            return Err(Error::ShapeMismatch {
                context: "scale_c",
                lhs: self.shape.clone(),
                rhs: scales.shape.clone(),
            });
        }
        let plane = h * w;
        let mut data = self.data.to_vec();
        for i in 0..n {
            for ch in 0..c {
                let s = scales.data[ch];
                for v in &mut data[(i * c + ch) * plane..(i * c + ch + 1) * plane] {
                    *v *= s;
                }
            }
        }
        let tape = joint_tape(self, scales)?;
        self.record(tape, Op::ScaleC, &[self, scales], data, self.shape.clone())
    }

    /// 2D cross-correlation of an NCHW input with an OIKK kernel,
    /// zero padding on all sides.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (data, shape) = conv::forward(self, kernel, stride, padding)?;
        let tape = joint_tape(self, kernel)?;
        self.record(tape, Op::Conv2d { stride, padding }, &[self, kernel], data, shape)
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().map(|&v| v as f64).sum();
        self.reduce(Op::Sum, s as f32)
    }

    pub fn mean(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().map(|&v| v as f64).sum();
        self.reduce(Op::Mean, (s / self.numel() as f64) as f32)
    }

    /// Mean absolute value.
    pub fn l1_mean(&self) -> Result<Tensor> {
        let s: f64 = self.data.iter().map(|&v| v.abs() as f64).sum();
        self.reduce(Op::L1Mean, (s / self.numel() as f64) as f32)
    }

    fn reduce(&self, op: Op, v: f32) -> Result<Tensor> {
        let tape = self.node.as_ref().map(|nr| nr.tape.clone());
        self.record(tape, op, &[self], vec![v], vec![1])
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn nchw(t: &Tensor, context: &str) -> Result<(usize, usize, usize, usize)> {
    if t.shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "{context} expects an NCHW tensor, got shape {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1], t.shape[2], t.shape[3]))
}

/// Elementwise binary with scalar broadcast (either side may be a
/// one-element tensor).
fn ew_binary(
    a: &Tensor,
    b: &Tensor,
    op: &Op,
    f: impl Fn(f32, f32) -> f32,
) -> Result<(Vec<f32>, Vec<usize>)> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok((data, a.shape.clone()));
    }
    if b.numel() == 1 {
        let y = b.data[0];
        return Ok((a.data.iter().map(|&x| f(x, y)).collect(), a.shape.clone()));
    }
    if a.numel() == 1 {
        let x = a.data[0];
        return Ok((b.data.iter().map(|&y| f(x, y)).collect(), b.shape.clone()));
    }
    let context = match op {
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        _ => "binary op",
    };
    Err(Error::ShapeMismatch {
        context,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<f32> = self.data.iter().take(6).copied().collect();
        let ellipsis = if self.numel() > 6 { ", .." } else { "" };
        write!(
            f,
            "Tensor(shape={:?}, attached={}, data={head:?}{ellipsis})",
            self.shape,
            self.node.is_some()
        )
    }
}

#[cfg(test)]
mod tests;
