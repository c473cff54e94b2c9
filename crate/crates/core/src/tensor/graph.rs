use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`]. Ops only ever reference earlier nodes, so
/// reverse creation order is a valid topological order for backprop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sum(Var),
    Dot(Var, Var),
    Relu(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxColumns(Var),
    L2NormChannels {
        x: Var,
        eps: S,
    },
    BilinearSample {
        x: Var,
        grid: Var,
    },
    MatTn {
        a: Var,
        b: Var,
    },
    MakeGrid {
        theta: Var,
        hp: usize,
        wp: usize,
        scale: S,
    },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Tape of eagerly evaluated operations. `backward` walks the tape in reverse
/// and accumulates gradients; nodes not on a path to the loss keep zero
/// gradients. Accumulation order is fixed, so gradients are deterministic.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of `v` after `backward`; all-zero when `v` is unreachable
    /// from the loss (or backward has not run).
    pub fn grad(&self, v: Var) -> Tensor<S> {
        let shape = self.nodes[v.0].value.shape();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_vec(shape, g.clone()).unwrap(),
            None => Tensor::zeros(shape),
        }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- elementwise and reductions -----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += *v;
        }
        Ok(self.push(out, self.any_grad(&[a, b]), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= *v;
        }
        Ok(self.push(out, self.any_grad(&[a, b]), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= *v;
        }
        Ok(self.push(out, self.any_grad(&[a, b]), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let mut out = self.value(x).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        Ok(self.push(out, self.any_grad(&[x]), Op::Scale(x, c)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let mut acc = S::zero();
        for v in self.value(x).data() {
            acc += *v;
        }
        Ok(self.push(Tensor::scalar(acc), self.any_grad(&[x]), Op::Sum(x)))
    }

    /// Frobenius inner product of two tensors of identical shape.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = kernels::dot(self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(v), self.any_grad(&[a, b]), Op::Dot(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let mut out = Tensor::zeros(self.value(x).shape());
        kernels::relu_forward(self.value(x).data(), out.data_mut());
        Ok(self.push(out, self.any_grad(&[x]), Op::Relu(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.value(x).shape()),
            ));
        }
        let out = Tensor::from_vec(shape, self.value(x).data().to_vec())?;
        Ok(self.push(out, self.any_grad(&[x]), Op::Reshape(x)))
    }

    // ----- neural primitives -----

    /// x: [c_in, h, w], w: [c_out, c_in, k, k], b: [c_out]; zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(
                "conv2d",
                format!("expected x rank 3, w rank 4, b rank 1; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        if ws[1] != xs[0] || ws[2] != ws[3] || bs[0] != ws[0] {
            return Err(Error::shape(
                "conv2d",
                format!("weight {ws:?} incompatible with input {xs:?} and bias {bs:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", format!("stride must be >= 1")));
        }
        let dims = ConvDims {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            c_out: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        if dims.k > dims.h + 2 * pad || dims.k > dims.w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {} larger than padded input {}x{} (pad {pad})",
                    dims.k, xs[1], xs[2]
                ),
            ));
        }
        let mut out = Tensor::zeros(&[dims.c_out, dims.h_out(), dims.w_out()]);
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
            out.data_mut(),
        );
        Ok(self.push(out, self.any_grad(&[x, w, b]), Op::Conv2d { x, w, b, dims }))
    }

    /// x: [n], w: [m, n], b: [m].
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::shape(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        let mut out = Tensor::zeros(&[ws[0]]);
        kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            ws[0],
            ws[1],
            out.data_mut(),
        );
        Ok(self.push(out, self.any_grad(&[x, w, b]), Op::Linear { x, w, b }))
    }

    /// Column-wise softmax of a [r, c] matrix.
    pub fn softmax_columns(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::shape(
                "softmax_columns",
                format!("expected rank 2, got {xs:?}"),
            ));
        }
        let mut out = Tensor::zeros(&xs);
        kernels::softmax_columns(self.value(x).data(), xs[0], xs[1], out.data_mut());
        Ok(self.push(out, self.any_grad(&[x]), Op::SoftmaxColumns(x)))
    }

    /// Channel vectors of a [c, h, w] map divided by max(l2 norm, eps).
    pub fn l2_normalize_channels(&mut self, x: Var, eps: S) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(
                "l2_normalize_channels",
                format!("expected rank 3, got {xs:?}"),
            ));
        }
        if !(eps > S::zero()) {
            return Err(Error::invalid(
                "l2_normalize_channels",
                format!("eps must be positive, got {eps}"),
            ));
        }
        let n = xs[1] * xs[2];
        let mut out = Tensor::zeros(&xs);
        kernels::l2_normalize_channels(self.value(x).data(), xs[0], n, eps, out.data_mut());
        Ok(self.push(out, self.any_grad(&[x]), Op::L2NormChannels { x, eps }))
    }

    /// Sample x: [c, h, w] at grid: [hp*wp, 2] normalized points, zero padding
    /// outside; output [c, hp, wp].
    pub fn bilinear_sample(&mut self, x: Var, grid: Var, hp: usize, wp: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let gs = self.value(grid).shape().to_vec();
        if xs.len() != 3 || gs.len() != 2 || gs[1] != 2 {
            return Err(Error::shape(
                "bilinear_sample",
                format!("x {xs:?}, grid {gs:?}"),
            ));
        }
        if gs[0] != hp * wp {
            return Err(Error::shape(
                "bilinear_sample",
                format!("grid has {} points, output wants {hp}x{wp}", gs[0]),
            ));
        }
        if !self.value(grid).is_finite() {
            return Err(Error::non_finite(
                "bilinear_sample",
                format!("grid contains NaN or infinity"),
            ));
        }
        let mut out = Tensor::zeros(&[xs[0], hp, wp]);
        kernels::bilinear_sample(
            self.value(x).data(),
            xs[0],
            xs[1],
            xs[2],
            self.value(grid).data(),
            out.data_mut(),
        );
        Ok(self.push(out, self.any_grad(&[x, grid]), Op::BilinearSample { x, grid }))
    }

    /// Per-position dot products: a: [c, ...] with Na positions, b: [c, ...]
    /// with Nb positions; output [Na, Nb] of channel-vector inner products.
    pub fn mat_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.is_empty() || sb.is_empty() || sa[0] != sb[0] {
            return Err(Error::shape(
                "mat_tn",
                format!("channel dims differ: {sa:?} vs {sb:?}"),
            ));
        }
        let c = sa[0];
        let na = self.value(a).numel() / c;
        let nb = self.value(b).numel() / c;
        let mut out = Tensor::zeros(&[na, nb]);
        kernels::mm_tn(
            self.value(a).data(),
            self.value(b).data(),
            na,
            c,
            nb,
            out.data_mut(),
        );
        Ok(self.push(out, self.any_grad(&[a, b]), Op::MatTn { a, b }))
    }

    /// Pose theta: [3] = (tx, ty, rot) to sampling grid [hp*wp, 2].
    pub fn make_grid(&mut self, theta: Var, hp: usize, wp: usize, scale: S) -> Result<Var> {
        let ts = self.value(theta).shape().to_vec();
        if ts != [3] {
            return Err(Error::shape(
                "make_grid",
                format!("theta must be [3], got {ts:?}"),
            ));
        }
        if hp == 0 || wp == 0 {
            return Err(Error::invalid("make_grid", format!("empty grid {hp}x{wp}")));
        }
        let mut out = Tensor::zeros(&[hp * wp, 2]);
        kernels::make_grid(self.value(theta).data(), hp, wp, scale, out.data_mut());
        Ok(self.push(
            out,
            self.any_grad(&[theta]),
            Op::MakeGrid {
                theta,
                hp,
                wp,
                scale,
            },
        ))
    }

    // ----- backward -----

    fn acc(&mut self, v: Var, f: impl FnOnce(&[Node<S>], &mut [S])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        if self.grads[v.0].is_none() {
            self.grads[v.0] = Some(vec![S::zero(); self.nodes[v.0].value.numel()]);
        }
        let mut g = self.grads[v.0].take().unwrap();
        f(&self.nodes, &mut g);
        self.grads[v.0] = Some(g);
    }

    /// Reverse pass from a scalar loss. Seeds d loss/d loss = 1 and walks the
    /// tape in reverse creation order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // constant loss: every gradient is zero
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || self.grads[idx].is_none() {
                continue;
            }
            let g = self.grads[idx].take().unwrap();
            self.node_backward(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn node_backward(&mut self, idx: usize, g: &[S]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, |_, ga| kernels::axpy(ga, S::one(), g));
                self.acc(b, |_, gb| kernels::axpy(gb, S::one(), g));
            }
            Op::Sub(a, b) => {
                self.acc(a, |_, ga| kernels::axpy(ga, S::one(), g));
                self.acc(b, |_, gb| kernels::axpy(gb, -S::one(), g));
            }
            Op::Mul(a, b) => {
                self.acc(a, |nodes, ga| {
                    let bv = nodes[b.0].value.data();
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(b, |nodes, gb| {
                    let av = nodes[a.0].value.data();
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(x, |_, gx| kernels::axpy(gx, c, g));
            }
            Op::Sum(x) => {
                self.acc(x, |_, gx| {
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Dot(a, b) => {
                self.acc(a, |nodes, ga| kernels::axpy(ga, g[0], nodes[b.0].value.data()));
                self.acc(b, |nodes, gb| kernels::axpy(gb, g[0], nodes[a.0].value.data()));
            }
            Op::Relu(x) => {
                self.acc(x, |nodes, gx| {
                    kernels::relu_backward(nodes[x.0].value.data(), g, gx)
                });
            }
            Op::Reshape(x) => {
                self.acc(x, |_, gx| kernels::axpy(gx, S::one(), g));
            }
            Op::Conv2d { x, w, b, dims } => {
                // Local buffers keep aliasing impossible when inputs coincide.
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let need_b = self.nodes[b.0].requires_grad;
                let mut bx = need_x.then(|| vec![S::zero(); self.nodes[x.0].value.numel()]);
                let mut bw = need_w.then(|| vec![S::zero(); self.nodes[w.0].value.numel()]);
                let mut bb = need_b.then(|| vec![S::zero(); self.nodes[b.0].value.numel()]);
                kernels::conv2d_backward(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    &dims,
                    g,
                    bx.as_deref_mut(),
                    bw.as_deref_mut(),
                    bb.as_deref_mut(),
                );
                if let Some(bx) = bx {
                    self.acc(x, |_, gx| kernels::axpy(gx, S::one(), &bx));
                }
                if let Some(bw) = bw {
                    self.acc(w, |_, gw| kernels::axpy(gw, S::one(), &bw));
                }
                if let Some(bb) = bb {
                    self.acc(b, |_, gb| kernels::axpy(gb, S::one(), &bb));
                }
            }
            Op::Linear { x, w, b } => {
                let (m, n) = {
                    let ws = self.nodes[w.0].value.shape();
                    (ws[0], ws[1])
                };
                let need_x = self.nodes[x.0].requires_grad;
                let need_w = self.nodes[w.0].requires_grad;
                let need_b = self.nodes[b.0].requires_grad;
                let mut bx = need_x.then(|| vec![S::zero(); n]);
                let mut bw = need_w.then(|| vec![S::zero(); m * n]);
                let mut bb = need_b.then(|| vec![S::zero(); m]);
                kernels::linear_backward(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    m,
                    n,
                    g,
                    bx.as_deref_mut(),
                    bw.as_deref_mut(),
                    bb.as_deref_mut(),
                );
                if let Some(bx) = bx {
                    self.acc(x, |_, gx| kernels::axpy(gx, S::one(), &bx));
                }
                if let Some(bw) = bw {
                    self.acc(w, |_, gw| kernels::axpy(gw, S::one(), &bw));
                }
                if let Some(bb) = bb {
                    self.acc(b, |_, gb| kernels::axpy(gb, S::one(), &bb));
                }
            }
            Op::SoftmaxColumns(x) => {
                let (r, c) = {
                    let s = self.nodes[idx].value.shape();
                    (s[0], s[1])
                };
                self.acc(x, |nodes, gx| {
                    kernels::softmax_columns_backward(nodes[idx].value.data(), g, r, c, gx)
                });
            }
            Op::L2NormChannels { x, eps } => {
                let (c, n) = {
                    let s = self.nodes[x.0].value.shape();
                    (s[0], s[1] * s[2])
                };
                self.acc(x, |nodes, gx| {
                    kernels::l2_normalize_channels_backward(
                        nodes[x.0].value.data(),
                        nodes[idx].value.data(),
                        g,
                        c,
                        n,
                        eps,
                        gx,
                    )
                });
            }
            Op::BilinearSample { x, grid } => {
                let (c, h, w) = {
                    let s = self.nodes[x.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let need_x = self.nodes[x.0].requires_grad;
                let need_g = self.nodes[grid.0].requires_grad;
                let mut bx = need_x.then(|| vec![S::zero(); c * h * w]);
                let mut bg = need_g.then(|| vec![S::zero(); self.nodes[grid.0].value.numel()]);
                kernels::bilinear_sample_backward(
                    self.nodes[x.0].value.data(),
                    c,
                    h,
                    w,
                    self.nodes[grid.0].value.data(),
                    g,
                    bx.as_deref_mut(),
                    bg.as_deref_mut(),
                );
                if let Some(bx) = bx {
                    self.acc(x, |_, gx| kernels::axpy(gx, S::one(), &bx));
                }
                if let Some(bg) = bg {
                    self.acc(grid, |_, gg| kernels::axpy(gg, S::one(), &bg));
                }
            }
            Op::MatTn { a, b } => {
                let c = self.nodes[a.0].value.shape()[0];
                let na = self.nodes[a.0].value.numel() / c;
                let nb = self.nodes[b.0].value.numel() / c;
                // ga[c, na] += b[c, nb] * g[na, nb]^T ; gb[c, nb] += a[c, na] * g
                self.acc(a, |nodes, ga| {
                    kernels::mm_nt(nodes[b.0].value.data(), g, c, nb, na, ga)
                });
                self.acc(b, |nodes, gb| {
                    kernels::mm_nn(nodes[a.0].value.data(), g, c, na, nb, gb)
                });
            }
            Op::MakeGrid {
                theta,
                hp,
                wp,
                scale,
            } => {
                self.acc(theta, |nodes, gt| {
                    kernels::make_grid_backward(nodes[theta.0].value.data(), hp, wp, scale, g, gt)
                });
            }
        }
    }
}
