//! Reverse pass over the tape and the resulting gradient lookup table.

use std::sync::Arc;

use super::{conv, sigmoid, Node, Op, Tape, Tensor};
use crate::error::{Error, Result};

/// Gradients of one scalar loss w.r.t. every gradient-requiring tensor
/// on its tape. Tensors the loss never touched (e.g. behind a
/// stop-gradient) hold all-zero buffers; detached tensors and tensors
/// from other tapes have no entry.
pub struct GradientMap {
    tape: Tape,
    grads: Vec<Option<Vec<f32>>>,
}

impl std::fmt::Debug for GradientMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let present = self.grads.iter().filter(|g| g.is_some()).count();
        write!(f, "GradientMap({present} of {} nodes)", self.grads.len())
    }
}

impl GradientMap {
    /// Gradient buffer for `t`, or None when `t` carries no gradient
    /// (detached, constant, or recorded on a different tape).
    pub fn wrt(&self, t: &Tensor) -> Option<&[f32]> {
        let nr = t.node.as_ref()?;
        if !Tape::same(&nr.tape, &self.tape) {
            return None;
        }
        self.grads[nr.id].as_deref()
    }

    /// Like [`GradientMap::wrt`] but substituting zeros, for callers that
    /// treat "no gradient" as "zero gradient".
    pub fn wrt_or_zeros(&self, t: &Tensor) -> Vec<f32> {
        self.wrt(t)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

impl Tensor {
    /// Reverse-mode gradients of a scalar loss. Consumes the tape: a
    /// second backward on the same tape errors.
    pub fn backward(&self) -> Result<GradientMap> {
        let nr = self
            .node
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("backward on a detached tensor".into()))?;
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape.clone()));
        }
        let tape = nr.tape.clone();
        {
            let mut inner = tape.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::TapeConsumed);
            }
            inner.consumed = true;
        }

        let inner = tape.inner.borrow();
        let nodes = &inner.nodes;
        let loss_id = nr.id;

        let mut grads: Vec<Option<Vec<f32>>> = nodes
            .iter()
            .map(|nd| nd.needs_grad.then(|| vec![0.0f32; nd.value.len()]))
            .collect();
        if grads[loss_id].is_none() {
            // Constant loss: gradients of everything are zero, but the
            // seed buffer must still exist for the walk below.
            grads[loss_id] = Some(vec![0.0f32]);
        }
        grads[loss_id].as_mut().unwrap()[0] = 1.0;

        let mut touched = vec![false; nodes.len()];
        touched[loss_id] = true;

        for id in (0..=loss_id).rev() {
            if !touched[id] || grads[id].is_none() {
                continue;
            }
            let (before, rest) = grads.split_at_mut(id);
            let g = rest[0].as_deref().expect("checked above");
            propagate(&nodes[id], nodes, g, before, &mut touched);
        }

        drop(inner);
        Ok(GradientMap { tape, grads })
    }
}

/// Accumulate `node`'s output gradient `g` into its parents' buffers.
/// `before` covers tape ids `< node id`, which includes every parent.
fn propagate(
    node: &Node,
    nodes: &[Node],
    g: &[f32],
    before: &mut [Option<Vec<f32>>],
    touched: &mut [bool],
) {
    fn pnode<'a>(nodes: &'a [Node], node: &Node, i: usize) -> &'a Node {
        &nodes[node.parents[i]]
    }
    let parent = |i: usize| pnode(nodes, node, i);
    let mut add = |before: &mut [Option<Vec<f32>>], i: usize, f: &mut dyn FnMut(&mut [f32])| {
        let pid = node.parents[i];
        if let Some(buf) = before[pid].as_mut() {
            f(buf);
            touched[pid] = true;
        }
    };

    match node.op {
        Op::Leaf => {}
        Op::StopGrad => {}
        Op::Add => {
            add(before, 0, &mut |buf| acc_broadcast(buf, g, |_, gv| gv));
            add(before, 1, &mut |buf| acc_broadcast(buf, g, |_, gv| gv));
        }
        Op::Sub => {
            add(before, 0, &mut |buf| acc_broadcast(buf, g, |_, gv| gv));
            add(before, 1, &mut |buf| acc_broadcast(buf, g, |_, gv| -gv));
        }
        Op::Mul => {
            let a = parent(0).value.clone();
            let b = parent(1).value.clone();
            add(before, 0, &mut |buf| acc_mul(buf, g, &b));
            add(before, 1, &mut |buf| acc_mul(buf, g, &a));
        }
        Op::Abs => {
            let a = parent(0).value.clone();
            add(before, 0, &mut |buf| {
                for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(a.iter()) {
                    *d += gv * sign(av);
                }
            });
        }
        Op::Square => {
            let a = parent(0).value.clone();
            add(before, 0, &mut |buf| {
                for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(a.iter()) {
                    *d += gv * 2.0 * av;
                }
            });
        }
        Op::SqrtEps => {
            // d/dx sqrt(x + eps) = 1 / (2 * out)
            let out = node.value.clone();
            add(before, 0, &mut |buf| {
                for ((d, &gv), &ov) in buf.iter_mut().zip(g).zip(out.iter()) {
                    *d += gv * 0.5 / ov;
                }
            });
        }
        Op::Silu => {
            let a = parent(0).value.clone();
            add(before, 0, &mut |buf| {
                for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(a.iter()) {
                    let s = sigmoid(av);
                    *d += gv * s * (1.0 + av * (1.0 - s));
                }
            });
        }
        Op::Reshape => {
            add(before, 0, &mut |buf| {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        Op::ConcatC => {
            let (n, _, h, w) = dims4(&node.shape);
            let c1 = parent(0).shape[1];
            let c2 = parent(1).shape[1];
            let plane = h * w;
            add(before, 0, &mut |buf| {
                for i in 0..n {
                    let src = &g[i * (c1 + c2) * plane..][..c1 * plane];
                    for (d, &gv) in buf[i * c1 * plane..][..c1 * plane].iter_mut().zip(src) {
                        *d += gv;
                    }
                }
            });
            add(before, 1, &mut |buf| {
                for i in 0..n {
                    let src = &g[(i * (c1 + c2) + c1) * plane..][..c2 * plane];
                    for (d, &gv) in buf[i * c2 * plane..][..c2 * plane].iter_mut().zip(src) {
                        *d += gv;
                    }
                }
            });
        }
        Op::UpsampleNearest2x => {
            let (n, c, oh, ow) = dims4(&node.shape);
            let (h, w) = (oh / 2, ow / 2);
            add(before, 0, &mut |buf| {
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..][..oh * ow];
                    let bp = &mut buf[p * h * w..][..h * w];
                    for y in 0..h {
                        for x in 0..w {
                            let base = 2 * y * ow + 2 * x;
                            bp[y * w + x] +=
                                gp[base] + gp[base + 1] + gp[base + ow] + gp[base + ow + 1];
                        }
                    }
                }
            });
        }
        Op::BiasAddC => {
            let (n, c, h, w) = dims4(&node.shape);
            let plane = h * w;
            add(before, 0, &mut |buf| {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            add(before, 1, &mut |buf| {
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for i in 0..n {
                        for &gv in &g[(i * c + ch) * plane..][..plane] {
                            s += gv as f64;
                        }
                    }
                    buf[ch] += s as f32;
                }
            });
        }
        Op::ScaleC => {
            let (n, c, h, w) = dims4(&node.shape);
            let plane = h * w;
            let x = parent(0).value.clone();
            let s = parent(1).value.clone();
            add(before, 0, &mut |buf| {
                for ch in 0..c {
                    let sv = s[ch];
                    for i in 0..n {
                        let off = (i * c + ch) * plane;
                        for (d, &gv) in buf[off..][..plane].iter_mut().zip(&g[off..][..plane]) {
                            *d += gv * sv;
                        }
                    }
                }
            });
            add(before, 1, &mut |buf| {
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for i in 0..n {
                        let off = (i * c + ch) * plane;
                        for (&gv, &xv) in g[off..][..plane].iter().zip(&x[off..][..plane]) {
                            acc += (gv * xv) as f64;
                        }
                    }
                    buf[ch] += acc as f32;
                }
            });
        }
        Op::Conv2d { stride, padding } => {
            let geom = conv::geometry(&parent(0).shape, &parent(1).shape, stride, padding)
                .expect("shapes validated at record time");
            let kernel = parent(1).value.clone();
            let input = parent(0).value.clone();
            add(before, 0, &mut |buf| {
                let gi = conv::grad_input(g, &kernel, &geom);
                for (d, gv) in buf.iter_mut().zip(gi) {
                    *d += gv;
                }
            });
            add(before, 1, &mut |buf| {
                let gk = conv::grad_kernel(g, &input, &geom);
                for (d, gv) in buf.iter_mut().zip(gk) {
                    *d += gv;
                }
            });
        }
        Op::Sum => {
            let g0 = g[0];
            add(before, 0, &mut |buf| {
                for d in buf.iter_mut() {
                    *d += g0;
                }
            });
        }
        Op::Mean => {
            let scale = (g[0] as f64 / parent(0).value.len() as f64) as f32;
            add(before, 0, &mut |buf| {
                for d in buf.iter_mut() {
                    *d += scale;
                }
            });
        }
        Op::L1Mean => {
            let a = parent(0).value.clone();
            let scale = (g[0] as f64 / a.len() as f64) as f32;
            add(before, 0, &mut |buf| {
                for (d, &av) in buf.iter_mut().zip(a.iter()) {
                    *d += scale * sign(av);
                }
            });
        }
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// buf += map(g), reducing to a single slot when buf is scalar while g
/// is not (the scalar-broadcast case of binary ops).
fn acc_broadcast(buf: &mut [f32], g: &[f32], f: impl Fn(usize, f32) -> f32) {
    if buf.len() == g.len() {
        for (i, (d, &gv)) in buf.iter_mut().zip(g).enumerate() {
            *d += f(i, gv);
        }
    } else {
        debug_assert_eq!(buf.len(), 1);
        let mut s = 0.0f64;
        for (i, &gv) in g.iter().enumerate() {
            s += f(i, gv) as f64;
        }
        buf[0] += s as f32;
    }
}

/// buf += g * other, handling every scalar/full combination of Mul.
fn acc_mul(buf: &mut [f32], g: &[f32], other: &Arc<Vec<f32>>) {
    if other.len() == 1 {
        let ov = other[0];
        acc_broadcast(buf, g, |_, gv| gv * ov);
    } else if buf.len() == g.len() {
        for ((d, &gv), &ov) in buf.iter_mut().zip(g).zip(other.iter()) {
            *d += gv * ov;
        }
    } else {
        debug_assert_eq!(buf.len(), 1);
        let mut s = 0.0f64;
        for (&gv, &ov) in g.iter().zip(other.iter()) {
            s += (gv * ov) as f64;
        }
        buf[0] += s as f32;
    }
}
