use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::kernels::{self, ConvGeometry};

/// Exponent bound applied inside [`Graph::sdb`].
pub const SDB_EXP_CLAMP: f64 = 30.0;
/// Probabilities are clamped to `[BCE_PROB_CLAMP, 1 - BCE_PROB_CLAMP]` before logs.
pub const BCE_PROB_CLAMP: f64 = 1e-7;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    AvgPool2(Var),
    Upsample2(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    Relu(Var),
    Add(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Sdb { p: Var, b: Var, k: T },
    Mse(Var, Var),
    Bce { prob: Var, target: Var },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation and replays it in reverse to get gradients.
///
/// Values are immutable once recorded. A graph is built for one forward pass
/// and discarded afterwards; parameters are re-bound for every pass.
#[derive(Debug, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Scalar value of a `(1,1,1,1)` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let [co, ci, kh, kw] = ws.0;
        if xs.c() != ci {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs} has {} channels but weight {ws} expects {ci}", xs.c()),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd-sized")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be at least 1".into()));
        }
        let bn = self.value(bias).numel();
        if bn != co {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {bn} values for {co} output channels"),
            ));
        }
        let (oh, ow) = kernels::conv2d_out_dims(xs.h(), xs.w(), kh, kw, stride, pad).ok_or_else(|| {
            Error::shape("conv2d", format!("kernel {kh}x{kw} larger than padded input {xs}"))
        })?;
        let geom = ConvGeometry {
            input: xs,
            weight: ws,
            output: Shape::new(xs.n(), co, oh, ow),
            stride,
            pad,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Tensor::new(geom.output, out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Mean over non-overlapping 2x2 windows.
    pub fn avgpool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.h() % 2 != 0 || s.w() % 2 != 0 {
            return Err(Error::shape("avgpool2", format!("spatial dims of {s} must be even")));
        }
        let out = kernels::avgpool2_forward(s, self.value(input).data());
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::new(Shape::new(s.n(), s.c(), s.h() / 2, s.w() / 2), out)?,
            Op::AvgPool2(input),
            rg,
        ))
    }

    /// Bilinear x2 upsampling with half-pixel aligned centres and clamped edges.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let out = kernels::upsample2_forward(s, self.value(input).data());
        let rg = self.needs(input);
        Ok(self.push(
            Tensor::new(Shape::new(s.n(), s.c(), s.h() * 2, s.w() * 2), out)?,
            Op::Upsample2(input),
            rg,
        ))
    }

    /// Matrix product over the last two axes, batched over `(n, c)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.c() != sb.c() || sa.w() != sb.h() {
            return Err(Error::shape("matmul", format!("cannot multiply {sa} by {sb}")));
        }
        let batch = sa.n() * sa.c();
        let out = kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            sa.h(),
            sa.w(),
            sb.w(),
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(Shape::new(sa.n(), sa.c(), sa.h(), sb.w()), out)?,
            Op::MatMul(a, b),
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let out = kernels::transpose(self.value(x).data(), s.n() * s.c(), s.h(), s.w());
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::new(Shape::new(s.n(), s.c(), s.w(), s.h()), out)?,
            Op::Transpose(x),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Softmax along the last axis, stabilised by subtracting each row's max.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax_rows input contains NaN".into()));
        }
        let s = t.shape();
        let out = kernels::softmax_rows(t.data(), s.w());
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(s, out)?, Op::SoftmaxRows(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(T::zero())).collect();
        let s = t.shape();
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(s, out)?, Op::Relu(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, Op::Add(a, b), rg))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v * factor).collect();
        let s = t.shape();
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(s, out)?, Op::Scale(x, factor), rg))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w() {
                return Err(Error::shape("concat_channels", format!("{s} vs {s0}")));
            }
            channels += s.c();
        }
        let hw = s0.h() * s0.w();
        let mut out = Vec::with_capacity(s0.n() * channels * hw);
        for n in 0..s0.n() {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape().c() * hw;
                out.extend_from_slice(&t.data()[n * block..(n + 1) * block]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(Shape::new(s0.n(), channels, s0.h(), s0.w()), out)?,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Steep differentiable binarization `1 / (1 + exp(-k (p - b)))`.
    ///
    /// The exponent is clamped to `±SDB_EXP_CLAMP`; the gradient is zero where
    /// the clamp is active.
    pub fn sdb(&mut self, p: Var, b: Var, k: T) -> Result<Var> {
        let (sp, sb) = (self.shape(p), self.shape(b));
        if sp != sb {
            return Err(Error::shape("sdb", format!("{sp} vs {sb}")));
        }
        if !(k > T::zero()) {
            return Err(Error::InvalidArgument(format!("sdb slope k must be positive, got {k:?}")));
        }
        let clamp = T::of(SDB_EXP_CLAMP);
        let out = self
            .value(p)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&pv, &bv)| kernels::steep_sigmoid(pv, bv, k, clamp))
            .collect();
        let rg = self.needs(p) || self.needs(b);
        Ok(self.push(Tensor::new(sp, out)?, Op::Sdb { p, b, k }, rg))
    }

    /// Mean squared error, reduced to a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::shape("mse", format!("prediction {sp} vs target {st}")));
        }
        let n = sp.numel().max(1) as f64;
        let total: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&a, &b)| {
                let d = (a - b).as_f64();
                d * d
            })
            .sum();
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(T::of(total / n)), Op::Mse(pred, target), rg))
    }

    /// Mean binary cross-entropy `-(y ln m + (1-y) ln(1-m))` for a binary target.
    pub fn bce(&mut self, prob: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(prob), self.shape(target));
        if sp != st {
            return Err(Error::shape("bce", format!("probabilities {sp} vs target {st}")));
        }
        let y = self.value(target).data();
        if y.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidArgument("bce target must be binary".into()));
        }
        let (lo, hi) = bce_bounds::<T>();
        let n = sp.numel().max(1) as f64;
        let total: f64 = self
            .value(prob)
            .data()
            .iter()
            .zip(y)
            .map(|(&m, &y)| {
                let m = m.max(lo).min(hi).as_f64();
                if y == T::one() {
                    -m.ln()
                } else {
                    -(1.0 - m).ln()
                }
            })
            .sum();
        let rg = self.needs(prob);
        Ok(self.push(Tensor::scalar(T::of(total / n)), Op::Bce { prob, target }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum_f64();
        let rg = self.needs(x);
        Ok(self.push(Tensor::scalar(T::of(total)), Op::Sum(x), rg))
    }

    /// Reverse pass from a scalar node. Gradients land on every node that
    /// depends on a [`Graph::param`] leaf and are read with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("target must be a scalar, got {}", self.shape(loss)),
            ));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.set_grad(vec![T::one()])?;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = node.value.grad() else { continue };
            let contributions = self.local_grads(idx, gy);
            for (v, g) in contributions {
                if self.nodes[v.0].requires_grad {
                    self.nodes[v.0].value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut grads = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let geom = ConvGeometry {
                    input: self.shape(input),
                    weight: self.shape(weight),
                    output: out.shape(),
                    stride,
                    pad,
                };
                let (gx, gw, gb) = kernels::conv2d_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(weight).data(),
                    gy,
                    self.needs(input),
                    self.needs(weight),
                    self.needs(bias),
                );
                grads.extend(gx.map(|g| (input, g)));
                grads.extend(gw.map(|g| (weight, g)));
                grads.extend(gb.map(|g| (bias, g)));
            }
            &Op::AvgPool2(x) => grads.push((x, kernels::avgpool2_backward(self.shape(x), gy))),
            &Op::Upsample2(x) => grads.push((x, kernels::upsample2_backward(self.shape(x), gy))),
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let batch = sa.n() * sa.c();
                let (m, k, p) = (sa.h(), sa.w(), sb.w());
                if self.needs(a) {
                    let bt = kernels::transpose(self.value(b).data(), batch, k, p);
                    grads.push((a, kernels::matmul(gy, &bt, batch, m, p, k)));
                }
                if self.needs(b) {
                    let at = kernels::transpose(self.value(a).data(), batch, m, k);
                    grads.push((b, kernels::matmul(&at, gy, batch, k, m, p)));
                }
            }
            &Op::Transpose(x) => {
                let s = out.shape();
                grads.push((x, kernels::transpose(gy, s.n() * s.c(), s.h(), s.w())));
            }
            &Op::Reshape(x) => grads.push((x, gy.to_vec())),
            &Op::SoftmaxRows(x) => {
                grads.push((x, kernels::softmax_rows_backward(out.data(), gy, out.shape().w())))
            }
            &Op::Relu(x) => {
                let g = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                grads.push((x, g));
            }
            &Op::Add(a, b) => {
                grads.push((a, gy.to_vec()));
                grads.push((b, gy.to_vec()));
            }
            &Op::Scale(x, f) => grads.push((x, gy.iter().map(|&d| d * f).collect())),
            Op::Concat(parts) => {
                let s = out.shape();
                let hw = s.h() * s.w();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).c();
                    let mut g = Vec::with_capacity(s.n() * pc * hw);
                    for n in 0..s.n() {
                        let start = (n * s.c() + offset) * hw;
                        g.extend_from_slice(&gy[start..start + pc * hw]);
                    }
                    grads.push((p, g));
                    offset += pc;
                }
            }
            &Op::Sdb { p, b, k } => {
                let clamp = T::of(SDB_EXP_CLAMP);
                let gp: Vec<T> = self
                    .value(p)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .zip(out.data().iter().zip(gy))
                    .map(|((&pv, &bv), (&m, &d))| {
                        if (k * (pv - bv)).abs() < clamp {
                            d * k * m * (T::one() - m)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let gb = gp.iter().map(|&v| -v).collect();
                grads.push((p, gp));
                grads.push((b, gb));
            }
            &Op::Mse(pred, target) => {
                let scale = T::of(2.0 / out_numel(self.shape(pred))) * gy[0];
                let g: Vec<T> = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&a, &b)| (a - b) * scale)
                    .collect();
                if self.needs(target) {
                    grads.push((target, g.iter().map(|&v| -v).collect()));
                }
                grads.push((pred, g));
            }
            &Op::Bce { prob, target } => {
                let (lo, hi) = bce_bounds::<T>();
                let scale = gy[0] / T::of(out_numel(self.shape(prob)));
                let g = self
                    .value(prob)
                    .data()
                    .iter()
                    .zip(self.value(target).data())
                    .map(|(&m, &y)| {
                        if m <= lo || m >= hi {
                            T::zero()
                        } else if y == T::one() {
                            -scale / m
                        } else {
                            scale / (T::one() - m)
                        }
                    })
                    .collect();
                grads.push((prob, g));
            }
            &Op::Sum(x) => grads.push((x, vec![gy[0]; self.value(x).numel()])),
        }
        grads
    }
}

fn out_numel(s: Shape) -> f64 {
    s.numel().max(1) as f64
}

fn bce_bounds<T: Element>() -> (T, T) {
    (T::of(BCE_PROB_CLAMP), T::of(1.0 - BCE_PROB_CLAMP))
}
