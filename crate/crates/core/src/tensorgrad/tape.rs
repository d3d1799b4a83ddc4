//! Define-by-run tape for reverse-mode differentiation.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for its vector-Jacobian product. Node indices are therefore a topological
//! order, and [`Tape::backward`] walks them once in reverse.

use super::error::TensorError;
use super::kernels::{self, ConvGeometry};
use super::scalar::Real;
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    ConvTranspose3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    MaxPool { x: Var, arg: Vec<u32> },
    InstanceNorm { x: Var, inv_std: Vec<F> },
    Prelu { x: Var, slope: Var },
    Concat { xs: Vec<Var> },
    Broadcast { v: Var },
    Huber { pred: Var, target: Var, delta: F },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: F },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss w.r.t. `v`, or `None` when `v` does not require
    /// gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records an input. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Cross-correlation of `x [N, Cin, D, H, W]` with `w [Cout, Cin, kd, kh, kw]`
    /// plus optional per-channel bias `b [Cout]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var, TensorError> {
        let [n, cin, d, h, wd] = self.value(x).dims5("conv3d")?;
        let [cout, wcin, kd, kh, kw] = self.value(w).dims5("conv3d").map_err(|_| TensorError::InvalidShape {
            op: "conv3d",
            shape: self.shape(w).to_vec(),
            reason: "weight must be [Cout, Cin, kd, kh, kw]".into(),
        })?;
        if cin != wcin {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs_name: "input",
                lhs: self.shape(x).to_vec(),
                rhs_name: "weight",
                rhs: self.shape(w).to_vec(),
            });
        }
        self.check_bias("conv3d", b, cout)?;
        let geom = ConvGeometry::new("conv3d", cin, [d, h, wd], [kd, kh, kw], stride, padding)?;
        let y = kernels::conv3d_forward(
            &geom,
            n,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            cout,
        );
        let [od, oh, ow] = geom.output;
        let value = Tensor::new(&[n, cout, od, oh, ow], y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }, ng))
    }

    /// Transposed convolution of `x [N, Cin, D, H, W]` with
    /// `w [Cin, Cout, kd, kh, kw]`; the adjoint of [`Tape::conv3d`] under the
    /// same weights, stride and padding.
    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var, TensorError> {
        let [n, cin, d, h, wd] = self.value(x).dims5("conv_transpose3d")?;
        let [wcin, cout, kd, kh, kw] =
            self.value(w).dims5("conv_transpose3d").map_err(|_| TensorError::InvalidShape {
                op: "conv_transpose3d",
                shape: self.shape(w).to_vec(),
                reason: "weight must be [Cin, Cout, kd, kh, kw]".into(),
            })?;
        if cin != wcin {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose3d",
                lhs_name: "input",
                lhs: self.shape(x).to_vec(),
                rhs_name: "weight",
                rhs: self.shape(w).to_vec(),
            });
        }
        self.check_bias("conv_transpose3d", b, cout)?;
        let small = [d, h, wd];
        let kernel = [kd, kh, kw];
        let mut big = [0; 3];
        for a in 0..3 {
            big[a] = kernels::conv_transpose_output_extent(small[a], kernel[a], stride[a], padding[a]).ok_or_else(
                || TensorError::InvalidArgument {
                    op: "conv_transpose3d",
                    reason: format!("padding {padding:?} leaves no output for extents {small:?}"),
                },
            )?;
        }
        let geom = ConvGeometry::new("conv_transpose3d", cout, big, kernel, stride, padding)?;
        debug_assert_eq!(geom.output, small);
        let y = kernels::conv_transpose3d_forward(
            &geom,
            n,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            cin,
        );
        let value = Tensor::new(&[n, cout, big[0], big[1], big[2]], y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        Ok(self.push(value, Op::ConvTranspose3d { x, w, b, geom }, ng))
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, cout: usize) -> Result<(), TensorError> {
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs_name: "bias",
                    lhs: self.shape(b).to_vec(),
                    rhs_name: "expected",
                    rhs: vec![cout],
                });
            }
        }
        Ok(())
    }

    /// 2×2×2 max pooling with stride 2. Odd spatial extents are rejected.
    pub fn maxpool3d(&mut self, x: Var) -> Result<Var, TensorError> {
        let [n, c, d, h, w] = self.value(x).dims5("maxpool3d")?;
        if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "maxpool3d",
                shape: self.shape(x).to_vec(),
                reason: "spatial extents must be even".into(),
            });
        }
        let (y, arg) = kernels::maxpool2_forward(self.value(x).data(), n * c, [d, h, w]);
        let value = Tensor::new(&[n, c, d / 2, h / 2, w / 2], y)?;
        let ng = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool { x, arg }, ng))
    }

    /// Standardizes every (sample, channel) volume; no affine parameters.
    pub fn instance_norm3d(&mut self, x: Var, epsilon: f64) -> Result<Var, TensorError> {
        let [n, c, d, h, w] = self.value(x).dims5("instance_norm3d")?;
        let volume = d * h * w;
        if volume < 2 {
            return Err(TensorError::InvalidShape {
                op: "instance_norm3d",
                shape: self.shape(x).to_vec(),
                reason: "each (sample, channel) needs at least 2 voxels".into(),
            });
        }
        if !(epsilon > 0.0) {
            return Err(TensorError::InvalidArgument { op: "instance_norm3d", reason: "epsilon must be positive".into() });
        }
        let (y, inv_std) = kernels::instance_norm_forward(self.value(x).data(), n * c, volume, epsilon);
        let value = Tensor::new(self.shape(x), y)?;
        let ng = self.any_grad(&[x]);
        Ok(self.push(value, Op::InstanceNorm { x, inv_std }, ng))
    }

    /// Parametric ReLU with one learnable slope per channel (`slope [C]`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(slope) != [shape[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "prelu",
                lhs_name: "input",
                lhs: shape,
                rhs_name: "slope",
                rhs: self.shape(slope).to_vec(),
            });
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let a = self.value(slope).data();
        let y: Vec<F> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v >= F::zero() { v } else { a[(i / inner) % c] * v })
            .collect();
        let value = Tensor::new(&shape, y)?;
        let ng = self.any_grad(&[x, slope]);
        Ok(self.push(value, Op::Prelu { x, slope }, ng))
    }

    /// Concatenates along axis 1; all other extents must agree.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = xs.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_channels",
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if base.len() < 2 {
            return Err(TensorError::InvalidShape { op: "concat_channels", shape: base, reason: "need a channel axis".into() });
        }
        let mismatch = xs.iter().any(|&v| {
            let s = self.shape(v);
            s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..]
        });
        if mismatch {
            return Err(TensorError::Incompatible {
                op: "concat_channels",
                shapes: xs.iter().map(|&v| self.shape(v).to_vec()).collect(),
                reason: "batch and spatial extents must match".into(),
            });
        }
        let n = base[0];
        let inner: usize = base[2..].iter().product();
        let total_c: usize = xs.iter().map(|&v| self.shape(v)[1]).sum();
        let mut out = Vec::with_capacity(n * total_c * inner);
        for s in 0..n {
            for &v in xs {
                let c = self.shape(v)[1];
                let data = self.value(v).data();
                out.extend_from_slice(&data[s * c * inner..(s + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = total_c;
        let value = Tensor::new(&shape, out)?;
        let ng = self.any_grad(xs);
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }, ng))
    }

    /// Fills `shape` with the scalar held by `v`. When `v` holds `shape[0]`
    /// values, sample `i` of the batch is filled with `v[i]`.
    pub fn broadcast_scalar(&mut self, v: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let k = self.value(v).numel();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || !(k == 1 || k == shape[0]) {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_scalar",
                lhs_name: "value",
                lhs: self.shape(v).to_vec(),
                rhs_name: "target",
                rhs: shape.to_vec(),
            });
        }
        let per_sample: usize = shape[1..].iter().product();
        let src = self.value(v).data();
        let mut data = Vec::with_capacity(shape[0] * per_sample);
        for s in 0..shape[0] {
            let val = if k == 1 { src[0] } else { src[s] };
            data.extend(std::iter::repeat(val).take(per_sample));
        }
        let value = Tensor::new(shape, data)?;
        let ng = self.any_grad(&[v]);
        Ok(self.push(value, Op::Broadcast { v }, ng))
    }

    /// Mean Huber penalty of `pred - target`.
    pub fn huber_loss(&mut self, pred: Var, target: Var, delta: f64) -> Result<Var, TensorError> {
        if self.shape(pred) != self.shape(target) {
            return Err(TensorError::ShapeMismatch {
                op: "huber_loss",
                lhs_name: "prediction",
                lhs: self.shape(pred).to_vec(),
                rhs_name: "target",
                rhs: self.shape(target).to_vec(),
            });
        }
        if !(delta > 0.0) {
            return Err(TensorError::InvalidArgument { op: "huber_loss", reason: "delta must be positive".into() });
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let total: f64 = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| huber(a.to_f64_lossy() - b.to_f64_lossy(), delta))
            .sum();
        let value = Tensor::scalar(F::lit(total / p.len() as f64));
        let ng = self.any_grad(&[pred, target]);
        Ok(self.push(value, Op::Huber { pred, target, delta: F::lit(delta) }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let value = Tensor::new(self.shape(x), data).expect("shape preserved");
        let ng = self.any_grad(&[x]);
        self.push(value, Op::Scale { x, s }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: F = self.value(x).data().iter().copied().sum();
        let ng = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::Sum { x }, ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs_name: "lhs",
                lhs: self.shape(a).to_vec(),
                rhs_name: "rhs",
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`. Gradients from multiple uses of a
    /// value are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match g {
                Some(g) if node.needs_grad => Some(Tensor::new(node.value.shape(), g).expect("gradient shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                let xv = self.value(*x);
                let batch = xv.shape()[0];
                let cout = self.shape(*w)[0];
                let bw = b.is_some_and(|b| self.wants(b));
                let (dx, dw, db) = kernels::conv3d_backward(
                    geom,
                    batch,
                    xv.data(),
                    self.value(*w).data(),
                    cout,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                    bw,
                );
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, db);
                }
            }
            Op::ConvTranspose3d { x, w, b, geom } => {
                let xv = self.value(*x);
                let batch = xv.shape()[0];
                let cin = xv.shape()[1];
                let bw = b.is_some_and(|b| self.wants(b));
                let (dx, dw, db) = kernels::conv_transpose3d_backward(
                    geom,
                    batch,
                    xv.data(),
                    self.value(*w).data(),
                    cin,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                    bw,
                );
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, db);
                }
            }
            Op::MaxPool { x, arg } => {
                if self.wants(*x) {
                    let s = self.shape(*x);
                    let dx = kernels::maxpool2_backward(g, arg, s[0] * s[1], [s[2], s[3], s[4]]);
                    accumulate(grads, *x, Some(dx));
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                if self.wants(*x) {
                    let s = self.shape(*x);
                    let volume = s[2..].iter().product();
                    let dx = kernels::instance_norm_backward(node.value.data(), inv_std, g, volume);
                    accumulate(grads, *x, Some(dx));
                }
            }
            Op::Prelu { x, slope } => {
                let xs = self.value(*x);
                let c = xs.shape()[1];
                let inner: usize = xs.shape()[2..].iter().product();
                let a = self.value(*slope).data();
                if self.wants(*x) {
                    let dx = xs
                        .data()
                        .iter()
                        .zip(g)
                        .enumerate()
                        .map(|(i, (&v, &gv))| if v >= F::zero() { gv } else { a[(i / inner) % c] * gv })
                        .collect();
                    accumulate(grads, *x, Some(dx));
                }
                if self.wants(*slope) {
                    let mut da = vec![F::zero(); c];
                    for (i, (&v, &gv)) in xs.data().iter().zip(g).enumerate() {
                        if v < F::zero() {
                            da[(i / inner) % c] += v * gv;
                        }
                    }
                    accumulate(grads, *slope, Some(da));
                }
            }
            Op::Concat { xs } => {
                let shape = node.value.shape();
                let n = shape[0];
                let total_c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut dv = Vec::with_capacity(n * c * inner);
                        for s in 0..n {
                            let start = (s * total_c + offset) * inner;
                            dv.extend_from_slice(&g[start..start + c * inner]);
                        }
                        accumulate(grads, v, Some(dv));
                    }
                    offset += c;
                }
            }
            Op::Broadcast { v } => {
                if self.wants(*v) {
                    let k = self.value(*v).numel();
                    let n = node.value.shape()[0];
                    let per = node.value.numel() / n;
                    let dv = if k == 1 {
                        vec![g.iter().copied().sum()]
                    } else {
                        (0..n).map(|s| g[s * per..(s + 1) * per].iter().copied().sum()).collect()
                    };
                    accumulate(grads, *v, Some(dv));
                }
            }
            Op::Huber { pred, target, delta } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = g[0] / F::lit(p.len() as f64);
                let d: Vec<F> = p.iter().zip(t).map(|(&a, &b)| huber_grad(a - b, *delta) * scale).collect();
                if self.wants(*target) {
                    accumulate(grads, *target, Some(d.iter().map(|&v| -v).collect()));
                }
                if self.wants(*pred) {
                    accumulate(grads, *pred, Some(d));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, Some(g.to_vec()));
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *a, Some(d));
                }
                if self.wants(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *b, Some(d));
                }
            }
            Op::Scale { x, s } => {
                if self.wants(*x) {
                    accumulate(grads, *x, Some(g.iter().map(|&v| v * *s).collect()));
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    accumulate(grads, *x, Some(vec![g[0]; self.value(*x).numel()]));
                }
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, d: Option<Vec<F>>) {
    let Some(d) = d else { return };
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

/// Huber penalty of a single residual.
pub fn huber(a: f64, delta: f64) -> f64 {
    if a.abs() <= delta {
        0.5 * a * a
    } else {
        delta * (a.abs() - 0.5 * delta)
    }
}

fn huber_grad<F: Real>(a: F, delta: F) -> F {
    if a.abs() <= delta {
        a
    } else {
        delta * a.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_scale_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let y = t.scale(x, 3.0);
        assert_eq!(t.value(y).data(), &[6.0]);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]), true);
        let y = t.scale(x, 2.0);
        assert!(matches!(t.backward(y), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(1.0), true);
        let c = t.constant(Tensor::scalar(5.0));
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn huber_branches() {
        assert!((huber(0.3, 0.5) - 0.045).abs() < 1e-15);
        assert!((huber(1.0, 0.5) - 0.375).abs() < 1e-15);
        assert_eq!(huber(0.0, 0.5), 0.0);
        assert!((huber(-1.0, 0.5) - 0.375).abs() < 1e-15);
    }
}
