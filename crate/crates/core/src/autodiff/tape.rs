use super::params::{ParamId, ParamStore};
use super::tensor::{axis_extents, Tensor};
use super::TensorError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is expanded to the left operand's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs shape is a trailing suffix of lhs shape; repeated along leading axes.
    Leading,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    SqDist(Var, Var),
    Cosine(Var, Var, f64),
    IndexSelect(Var, usize, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    RowNorm(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf or parameter node.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adds parameter gradients into the store's grad buffers (`+=`).
    pub fn accumulate(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

/// Records operations in execution order for a single reverse pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn dim_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Dimension { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a free variable whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a snapshot of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Copies a value into a fresh constant node (no gradient flows through it).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast, TensorError> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa == sb {
            Ok(Bcast::Same)
        } else if self.value(b).numel() == 1 && sb.len() <= 1 {
            Ok(Bcast::Scalar)
        } else if sb.len() < sa.len() && sa[sa.len() - sb.len()..] == *sb {
            Ok(Bcast::Leading)
        } else {
            Err(dim_err(op, format!("{:?} vs {:?}", sa, sb)))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var, TensorError> {
        let kind = self.bcast(name, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<f64> = match kind {
            Bcast::Same => av.data().iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Scalar => av.data().iter().map(|x| f(*x, bv[0])).collect(),
            Bcast::Leading => {
                let n = bv.len();
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| f(*x, bv[i % n]))
                    .collect()
            }
        };
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op(a, b, kind), rg))
    }

    /// Elementwise `a + b`; `b` may be a scalar or a trailing-axis suffix of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let value = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|&x| f(x)).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `c - a`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(), TensorError> {
        let shape = self.value(a).shape();
        if axis >= shape.len() {
            return Err(dim_err(
                op,
                format!("axis {} out of range for {:?}", axis, shape),
            ));
        }
        Ok(())
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("sum_axis", a, axis)?;
        let av = self.value(a);
        let (outer, len, inner) = axis_extents(av.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = av.data();
        for o in 0..outer {
            for j in 0..len {
                let base = (o * len + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis(a, axis), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("mean_axis", a, axis)?;
        let len = self.value(a).shape()[axis].max(1) as f64;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len))
    }

    fn softmax_like(&mut self, a: Var, axis: usize, log: bool) -> Result<Var, TensorError> {
        self.check_axis(if log { "log_softmax" } else { "softmax" }, a, axis)?;
        let av = self.value(a);
        let (outer, len, inner) = axis_extents(av.shape(), axis);
        let d = av.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..len).map(|j| (d[at(j)] - max).exp()).sum();
                for j in 0..len {
                    out[at(j)] = if log {
                        d[at(j)] - max - z.ln()
                    } else {
                        (d[at(j)] - max).exp() / z
                    };
                }
            }
        }
        let shape = av.shape().to_vec();
        let rg = self.rg(&[a]);
        let op = if log {
            Op::LogSoftmax(a, axis)
        } else {
            Op::Softmax(a, axis)
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.softmax_like(a, axis, false)
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.softmax_like(a, axis, true)
    }

    fn pairwise_dims(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<(usize, usize, usize), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(dim_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok((sa[0], sb[0], sa[1]))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (N x d) and `b` (K x d).
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, k, d) = self.pairwise_dims("sq_dist", a, b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                out[i * k + j] = (0..d)
                    .map(|c| {
                        let t = ad[i * d + c] - bd[j * d + c];
                        t * t
                    })
                    .sum();
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::SqDist(a, b), rg))
    }

    /// Pairwise cosine similarity between rows of `a` (V x d) and `b` (K x d).
    /// Row norms are floored at `eps`.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var, TensorError> {
        let (n, k, d) = self.pairwise_dims("cosine", a, b)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let na = row_norms(ad, n, d, eps);
        let nb = row_norms(bd, k, d, eps);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let dot: f64 = (0..d).map(|c| ad[i * d + c] * bd[j * d + c]).sum();
                out[i * k + j] = dot / (na[i] * nb[j]);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::Cosine(a, b, eps), rg))
    }

    /// Euclidean norm of each row of a 2-D tensor, shape `[N]`.
    pub fn row_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(dim_err("row_norm", format!("{:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        let out = row_norms(self.value(a).data(), n, d, 0.0);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(out), Op::RowNorm(a), rg))
    }

    /// Gathers slices `indices` along `axis`.
    pub fn index_select(
        &mut self,
        a: Var,
        axis: usize,
        indices: &[usize],
    ) -> Result<Var, TensorError> {
        self.check_axis("index_select", a, axis)?;
        let av = self.value(a);
        let (outer, len, inner) = axis_extents(av.shape(), axis);
        if let Some(bad) = indices.iter().find(|&&i| i >= len) {
            return Err(dim_err(
                "index_select",
                format!(
                    "index {} out of range for axis {} of {:?}",
                    bad,
                    axis,
                    av.shape()
                ),
            ));
        }
        let d = av.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                let base = (o * len + j) * inner;
                out.extend_from_slice(&d[base..base + inner]);
            }
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = indices.len();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::IndexSelect(a, axis, indices.to_vec()),
            rg,
        ))
    }

    /// Row gather, `out[r] = a[indices[r]]`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        self.index_select(a, 0, indices)
    }

    /// `out[targets[r]] += a[r]` over rows; the output has `n_out` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        targets: &[usize],
        n_out: usize,
    ) -> Result<Var, TensorError> {
        let av = self.value(a);
        let shape = av.shape();
        if shape.is_empty() || shape[0] != targets.len() {
            return Err(dim_err(
                "scatter_add",
                format!("{} targets for input {:?}", targets.len(), shape),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= n_out) {
            return Err(dim_err(
                "scatter_add",
                format!("target {} >= {}", bad, n_out),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let d = av.data();
        let mut out = vec![0.0; n_out * inner];
        for (r, &t) in targets.iter().enumerate() {
            let src = &d[r * inner..(r + 1) * inner];
            for (o, s) in out[t * inner..(t + 1) * inner].iter_mut().zip(src) {
                *o += s;
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = n_out;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::ScatterAdd(a, targets.to_vec()),
            rg,
        ))
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var, TensorError> {
        let av = self.value(a);
        if av.ndim() == 0 || av.shape()[0] != factors.len() {
            return Err(dim_err(
                "scale_rows",
                format!("{} factors for {:?}", factors.len(), av.shape()),
            ));
        }
        let inner = av.numel() / factors.len().max(1);
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * factors[i / inner])
            .collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::ScaleRows(a, factors.to_vec()),
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat", "no inputs".to_string()))?;
        self.check_axis("concat", *first, axis)?;
        let ref_shape = self.value(*first).shape().to_vec();
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(dim_err("concat", format!("{:?} vs {:?}", s, ref_shape)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&ref_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Reverse pass from a scalar `loss`. A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::State(
                "tape already consumed by a backward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    params.push((id, idx));
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[idx].take() else { continue };
            for (parent, pg) in self.vjp(idx, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn vjp(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        let map = |v: Var, f: &dyn Fn(usize, f64) -> f64| {
            like(v, gd.iter().enumerate().map(|(i, &x)| f(i, x)).collect())
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b, k) => vec![(*a, g.clone()), (*b, reduce_bcast(g, self.value(*b), *k))],
            Op::Sub(a, b, k) => {
                let neg = map(*a, &|_, x| -x);
                vec![
                    (*a, g.clone()),
                    (*b, reduce_bcast(&neg, self.value(*b), *k)),
                ]
            }
            Op::Mul(a, b, k) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let nb = bv.len();
                let bval = |i: usize| match k {
                    Bcast::Same => bv[i],
                    Bcast::Scalar => bv[0],
                    Bcast::Leading => bv[i % nb],
                };
                let ga = map(*a, &|i, x| x * bval(i));
                let gb_full = map(*a, &|i, x| x * av[i]);
                vec![(*a, ga), (*b, reduce_bcast(&gb_full, self.value(*b), *k))]
            }
            Op::Scale(a, c) => vec![(*a, map(*a, &|_, x| x * c))],
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).shape()[1];
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut gb);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                vec![(*a, map(*a, &|i, x| if av[i] > 0.0 { x } else { 0.0 }))]
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                vec![(*a, map(*a, &|i, x| x * y[i] * (1.0 - y[i])))]
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                vec![(*a, map(*a, &|i, x| x / av[i]))]
            }
            Op::Exp(a) => {
                let y = out.data();
                vec![(*a, map(*a, &|i, x| x * y[i]))]
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                vec![(*a, map(*a, &|i, x| 2.0 * x * av[i]))]
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                vec![(
                    *a,
                    map(*a, &|i, x| {
                        if av[i] >= *lo && av[i] <= *hi {
                            x
                        } else {
                            0.0
                        }
                    }),
                )]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.value(*a).shape(), gd[0]))],
            Op::SumAxis(a, axis) => {
                let shape = self.value(*a).shape();
                let (outer, len, inner) = axis_extents(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            ga[(o * len + j) * inner + i] = gd[o * inner + i];
                        }
                    }
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let log = matches!(node.op, Op::LogSoftmax(..));
                let y = out.data();
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        if log {
                            let gs: f64 = (0..len).map(|j| gd[at(j)]).sum();
                            for j in 0..len {
                                ga[at(j)] = gd[at(j)] - y[at(j)].exp() * gs;
                            }
                        } else {
                            let dot: f64 = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                ga[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                            }
                        }
                    }
                }
                vec![(*a, like(*a, ga))]
            }
            Op::SqDist(a, b) => {
                let (n, d) = self.value(*a).dims2();
                let k = self.value(*b).shape()[0];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; k * d];
                for i in 0..n {
                    for j in 0..k {
                        let w = 2.0 * gd[i * k + j];
                        for c in 0..d {
                            let diff = w * (ad[i * d + c] - bd[j * d + c]);
                            ga[i * d + c] += diff;
                            gb[j * d + c] -= diff;
                        }
                    }
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Cosine(a, b, eps) => {
                let (n, d) = self.value(*a).dims2();
                let k = self.value(*b).shape()[0];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let na = row_norms(ad, n, d, *eps);
                let nb = row_norms(bd, k, d, *eps);
                // The norm only depends on the row when it exceeds the floor.
                let a_free = row_norms(ad, n, d, 0.0)
                    .iter()
                    .map(|&x| x > *eps)
                    .collect::<Vec<_>>();
                let b_free = row_norms(bd, k, d, 0.0)
                    .iter()
                    .map(|&x| x > *eps)
                    .collect::<Vec<_>>();
                let cos = out.data();
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; k * d];
                for i in 0..n {
                    for j in 0..k {
                        let w = gd[i * k + j];
                        if w == 0.0 {
                            continue;
                        }
                        let c = cos[i * k + j];
                        let inv = 1.0 / (na[i] * nb[j]);
                        for t in 0..d {
                            let (x, y) = (ad[i * d + t], bd[j * d + t]);
                            let mut da = y * inv;
                            if a_free[i] {
                                da -= c * x / (na[i] * na[i]);
                            }
                            let mut db = x * inv;
                            if b_free[j] {
                                db -= c * y / (nb[j] * nb[j]);
                            }
                            ga[i * d + t] += w * da;
                            gb[j * d + t] += w * db;
                        }
                    }
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::RowNorm(a) => {
                let (n, d) = self.value(*a).dims2();
                let ad = self.value(*a).data();
                let norms = out.data();
                let mut ga = vec![0.0; n * d];
                for i in 0..n {
                    if norms[i] > 0.0 {
                        for c in 0..d {
                            ga[i * d + c] = gd[i] * ad[i * d + c] / norms[i];
                        }
                    }
                }
                vec![(*a, like(*a, ga))]
            }
            Op::IndexSelect(a, axis, indices) => {
                let shape = self.value(*a).shape();
                let (outer, len, inner) = axis_extents(shape, *axis);
                let mut ga = vec![0.0; outer * len * inner];
                let m = indices.len();
                for o in 0..outer {
                    for (r, &j) in indices.iter().enumerate() {
                        let src = (o * m + r) * inner;
                        let dst = (o * len + j) * inner;
                        for i in 0..inner {
                            ga[dst + i] += gd[src + i];
                        }
                    }
                }
                vec![(*a, like(*a, ga))]
            }
            Op::ScatterAdd(a, targets) => {
                let inner = g.numel() / g.shape()[0].max(1);
                let mut ga = Vec::with_capacity(targets.len() * inner);
                for &t in targets {
                    ga.extend_from_slice(&gd[t * inner..(t + 1) * inner]);
                }
                vec![(*a, like(*a, ga))]
            }
            Op::ScaleRows(a, factors) => {
                let inner = g.numel() / factors.len().max(1);
                vec![(*a, map(*a, &|i, x| x * factors[i / inner]))]
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&gd[start..start + len * inner]);
                    }
                    offset += len;
                    res.push((*p, like(*p, gp)));
                }
                res
            }
        }
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

fn row_norms(data: &[f64], rows: usize, cols: usize, floor: f64) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let n = data[r * cols..(r + 1) * cols]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            n.max(floor)
        })
        .collect()
}

/// Sums a full-shape gradient down to the shape of a broadcast operand.
fn reduce_bcast(g: &Tensor, target: &Tensor, kind: Bcast) -> Tensor {
    match kind {
        Bcast::Same => g.clone(),
        Bcast::Scalar => {
            Tensor::new(target.shape().to_vec(), vec![g.data().iter().sum()]).expect("scalar shape")
        }
        Bcast::Leading => {
            let n = target.numel();
            let mut out = vec![0.0; n];
            for (i, x) in g.data().iter().enumerate() {
                out[i % n] += x;
            }
            Tensor::new(target.shape().to_vec(), out).expect("suffix shape")
        }
    }
}

/// `c = op(a) * op(b)` for row-major matrices, where `op` optionally transposes.
/// `m x k` times `k x n`, dimensions given after transposition.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // Strides of the logical (post-transpose) operands.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        // SAFETY: slice lengths cover m*k, k*n and m*n elements with the strides above.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
