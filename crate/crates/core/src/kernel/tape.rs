//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive application in evaluation order
//! together with the inputs it needs for the backward sweep. Backward walks
//! the nodes in reverse, which is a reverse topological order because a node
//! can only reference nodes recorded before it.

use std::collections::BTreeMap;

use super::ops;
use super::tensor::Tensor;
use crate::error::Result;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Opaque parameter identity used to key gradient accumulators.
pub type ParamKey = usize;

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamKey),
    ParamRows { key: ParamKey, ids: Vec<usize>, rows: usize },
    Conv { x: Var, kernel: Var, bias: Var, width: usize, skip: Option<Vec<bool>> },
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Mask { x: Var, mask: Vec<f64> },
    Softmax(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    SumRows(Var),
    MaxRows { x: Var, arg: Vec<usize> },
    MatVec { m: Var, v: Var },
    MatTVec { m: Var, v: Var },
    Dot(Var, Var),
    PairProducts { m: Var, v: Var },
    Reshape(Var),
    SumSquares(Var),
    AbsSum(Var),
    SumScalars(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient accumulated for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Tensor),
    /// Only the touched rows of a `rows × cols` table.
    Rows { rows: usize, cols: usize, touched: BTreeMap<usize, Vec<f64>> },
}

impl ParamGrad {
    pub fn to_dense(&self) -> Tensor {
        match self {
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::Rows { rows, cols, touched } => {
                let mut out = Tensor::zeros(&[*rows, *cols]);
                for (r, vals) in touched {
                    out.row_mut(*r).copy_from_slice(vals);
                }
                out
            }
        }
    }

    fn merge(&mut self, other: ParamGrad) {
        match (self, other) {
            (ParamGrad::Dense(a), ParamGrad::Dense(b)) => a.add_assign(&b),
            (ParamGrad::Rows { touched, .. }, ParamGrad::Rows { touched: other, .. }) => {
                for (r, vals) in other {
                    add_row(touched, r, &vals);
                }
            }
            (this @ ParamGrad::Rows { .. }, ParamGrad::Dense(b)) => {
                let mut a = this.to_dense();
                a.add_assign(&b);
                *this = ParamGrad::Dense(a);
            }
            (ParamGrad::Dense(a), other @ ParamGrad::Rows { .. }) => {
                a.add_assign(&other.to_dense());
            }
        }
    }
}

fn add_row(touched: &mut BTreeMap<usize, Vec<f64>>, r: usize, vals: &[f64]) {
    match touched.get_mut(&r) {
        Some(acc) => acc.iter_mut().zip(vals).for_each(|(a, v)| *a += v),
        None => {
            touched.insert(r, vals.to_vec());
        }
    }
}

/// Gradient accumulators keyed by parameter identity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    entries: BTreeMap<ParamKey, ParamGrad>,
}

impl ParamGrads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: ParamKey) -> Option<&ParamGrad> {
        self.entries.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.entries.keys().copied()
    }

    pub fn add_dense(&mut self, key: ParamKey, grad: Tensor) {
        self.merge_entry(key, ParamGrad::Dense(grad));
    }

    fn merge_entry(&mut self, key: ParamKey, grad: ParamGrad) {
        match self.entries.get_mut(&key) {
            Some(existing) => existing.merge(grad),
            None => {
                self.entries.insert(key, grad);
            }
        }
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: ParamGrads) {
        for (k, g) in other.entries {
            self.merge_entry(k, g);
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Backward {
    nodes: Vec<Option<Tensor>>,
    pub params: ParamGrads,
}

impl Backward {
    /// Gradient flowing into a recorded node, if any reached it.
    pub fn node(&self, var: Var) -> Option<&Tensor> {
        self.nodes[var.0].as_ref()
    }
}

/// A single-threaded recording of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
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
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A non-parameter leaf whose gradient is reported by [`Backward::node`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// A dense parameter leaf; its gradient lands under `key`.
    pub fn param(&mut self, key: ParamKey, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(key), true)
    }

    /// Selected rows of a parameter table, as an `ids.len() × cols` matrix.
    /// Gradients are scattered back as a row-sparse entry under `key`.
    pub fn param_rows(&mut self, key: ParamKey, table: &Tensor, ids: &[usize]) -> Result<Var> {
        let value = ops::gather_rows(table, ids)?;
        Ok(self.push(
            value,
            Op::ParamRows { key, ids: ids.to_vec(), rows: table.rows() },
            true,
        ))
    }

    /// One row of a parameter table as a vector.
    pub fn param_row(&mut self, key: ParamKey, table: &Tensor, id: usize) -> Result<Var> {
        let rows = self.param_rows(key, table, &[id])?;
        self.reshape(rows, vec![table.cols()])
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        width: usize,
        skip: Option<Vec<bool>>,
    ) -> Result<Var> {
        let value = ops::conv1d(
            self.value(x),
            self.value(kernel),
            self.value(bias),
            width,
            skip.as_deref(),
        )?;
        let ng = self.ng(x) || self.ng(kernel) || self.ng(bias);
        Ok(self.push(value, Op::Conv { x, kernel, bias, width, skip }, ng))
    }

    pub fn conv_context(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        width: usize,
        skip: Option<Vec<bool>>,
    ) -> Result<Var> {
        let pre = self.conv1d(x, kernel, bias, width, skip)?;
        Ok(self.relu(pre))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    pub fn linear_relu(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let pre = self.linear(x, w, Some(b))?;
        Ok(self.relu(pre))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    /// Multiplies by a fixed mask (dropout with the keep-scale folded in).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let src = self.value(x);
        assert_eq!(src.len(), mask.len(), "mask length mismatch");
        let value = Tensor::from_parts(
            src.shape().to_vec(),
            src.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        );
        let ng = self.ng(x);
        self.push(value, Op::Mask { x, mask }, ng)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_rows(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SoftmaxRows(x), ng))
    }

    pub fn softmax_cols(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_cols(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SoftmaxCols(x), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::elementwise_product(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(crate::Error::Shape(format!(
                "elementwise: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok(Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        value.scale(factor);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, factor), ng)
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let value = ops::sum_rows(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SumRows(x), ng))
    }

    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (value, arg) = ops::max_rows(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::MaxRows { x, arg }, ng))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let value = ops::matvec(self.value(m), self.value(v))?;
        let ng = self.ng(m) || self.ng(v);
        Ok(self.push(value, Op::MatVec { m, v }, ng))
    }

    pub fn mat_t_vec(&mut self, m: Var, v: Var) -> Result<Var> {
        let value = ops::mat_t_vec(self.value(m), self.value(v))?;
        let ng = self.ng(m) || self.ng(v);
        Ok(self.push(value, Op::MatTVec { m, v }, ng))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::dot(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Dot(a, b), ng))
    }

    pub fn pair_products(&mut self, m: Var, v: Var) -> Result<Var> {
        let value = ops::pair_products(self.value(m), self.value(v))?;
        let ng = self.ng(m) || self.ng(v);
        Ok(self.push(value, Op::PairProducts { m, v }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).squared_norm());
        let ng = self.ng(x);
        self.push(value, Op::SumSquares(x), ng)
    }

    pub fn abs_sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).abs_sum());
        let ng = self.ng(x);
        self.push(value, Op::AbsSum(x), ng)
    }

    /// Sum of scalar nodes, accumulated in the given order.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        let total = terms.iter().fold(0.0, |acc, v| acc + self.value(*v).item());
        let ng = terms.iter().any(|v| self.ng(*v));
        self.push(Tensor::scalar(total), Op::SumScalars(terms.to_vec()), ng)
    }

    /// Backward sweep from a scalar output with seed 1.
    pub fn backward(&self, output: Var) -> Backward {
        assert_eq!(self.value(output).len(), 1, "backward() needs a scalar output");
        let seed = Tensor::from_parts(self.value(output).shape().to_vec(), vec![1.0]);
        self.backward_with(output, seed)
    }

    /// Backward sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Backward {
        assert_eq!(self.value(output).shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params = ParamGrads::new();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Backward { nodes: grads, params }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut ParamGrads,
    ) {
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Constant | Op::Input => {}
            Op::Param(key) => params.add_dense(*key, g.clone()),
            Op::ParamRows { key, ids, rows } => {
                let cols = node.value.cols();
                let mut touched = BTreeMap::new();
                for (i, &id) in ids.iter().enumerate() {
                    add_row(&mut touched, id, &g.data()[i * cols..(i + 1) * cols]);
                }
                params.merge_entry(*key, ParamGrad::Rows { rows: *rows, cols, touched });
            }
            Op::Conv { x, kernel, bias, width, skip } => {
                let (xt, kt) = (val(*x), val(*kernel));
                let (len, d) = (xt.rows(), xt.cols());
                let n_f = kt.rows();
                let half = (width - 1) / 2;
                let want_x = self.ng(*x);
                let mut dx = vec![0.0; if want_x { len * d } else { 0 }];
                let mut dk = vec![0.0; kt.len()];
                let mut db = vec![0.0; n_f];
                let (xs, ks, gs) = (xt.data(), kt.data(), g.data());
                for j in 0..len {
                    if skip.as_ref().is_some_and(|s| s[j]) {
                        continue;
                    }
                    for f in 0..n_f {
                        let gp = gs[j * n_f + f];
                        if gp == 0.0 {
                            continue;
                        }
                        db[f] += gp;
                        let base = f * width * d;
                        for t in 0..*width {
                            let pos = j + t;
                            if pos < half || pos - half >= len {
                                continue;
                            }
                            let r = pos - half;
                            let off = base + t * d;
                            for k in 0..d {
                                dk[off + k] += gp * xs[r * d + k];
                            }
                            if want_x {
                                for k in 0..d {
                                    dx[r * d + k] += gp * ks[off + k];
                                }
                            }
                        }
                    }
                }
                if want_x {
                    self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
                }
                self.accum(grads, *kernel, Tensor::from_parts(kt.shape().to_vec(), dk));
                self.accum(grads, *bias, Tensor::from_parts(val(*bias).shape().to_vec(), db));
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (val(*x), val(*w));
                let (n, in_dim, out_dim) = (xt.rows(), wt.cols(), wt.rows());
                let gs = g.data();
                if self.ng(*x) {
                    let mut dx = vec![0.0; n * in_dim];
                    for r in 0..n {
                        for o in 0..out_dim {
                            let go = gs[r * out_dim + o];
                            for (d, wv) in dx[r * in_dim..(r + 1) * in_dim].iter_mut().zip(wt.row(o)) {
                                *d += go * wv;
                            }
                        }
                    }
                    self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; out_dim * in_dim];
                    for r in 0..n {
                        let xrow = xt.row(r);
                        for o in 0..out_dim {
                            let go = gs[r * out_dim + o];
                            for (d, xv) in dw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(xrow) {
                                *d += go * xv;
                            }
                        }
                    }
                    self.accum(grads, *w, Tensor::from_parts(wt.shape().to_vec(), dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; out_dim];
                    for r in 0..n {
                        for (d, go) in db.iter_mut().zip(&gs[r * out_dim..(r + 1) * out_dim]) {
                            *d += go;
                        }
                    }
                    self.accum(grads, *b, Tensor::from_parts(val(*b).shape().to_vec(), db));
                }
            }
            Op::Relu(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| if *y > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accum(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Mask { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accum(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Softmax(x) => {
                let dx = softmax_backward(node.value.data(), g.data());
                self.accum(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for r in 0..node.value.rows() {
                    dx.extend(softmax_backward(node.value.row(r), g.row(r)));
                }
                debug_assert_eq!(dx.len(), c * node.value.rows());
                self.accum(grads, *x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::SoftmaxCols(x) => {
                let yt = node.value.transpose();
                let gt = g.transpose();
                let mut dx = Vec::with_capacity(g.len());
                for r in 0..yt.rows() {
                    dx.extend(softmax_backward(yt.row(r), gt.row(r)));
                }
                let dxt = Tensor::from_parts(yt.shape().to_vec(), dx).transpose();
                self.accum(grads, *x, dxt);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                self.accum(grads, *a, Tensor::from_parts(g.shape().to_vec(), da));
                self.accum(grads, *b, Tensor::from_parts(g.shape().to_vec(), db));
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale(-1.0);
                self.accum(grads, *b, neg);
            }
            Op::Scale(x, s) => {
                let mut dx = g.clone();
                dx.scale(*s);
                self.accum(grads, *x, dx);
            }
            Op::SumRows(x) => {
                let xt = val(*x);
                let mut dx = Vec::with_capacity(xt.len());
                for _ in 0..xt.rows() {
                    dx.extend_from_slice(g.data());
                }
                self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::MaxRows { x, arg } => {
                let xt = val(*x);
                let k = xt.cols();
                let mut dx = vec![0.0; xt.len()];
                for (c, &r) in arg.iter().enumerate() {
                    dx[r * k + c] += g.data()[c];
                }
                self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::MatVec { m, v } => {
                let (mt, vt) = (val(*m), val(*v));
                if self.ng(*m) {
                    let mut dm = Vec::with_capacity(mt.len());
                    for r in 0..mt.rows() {
                        let gr = g.data()[r];
                        dm.extend(vt.data().iter().map(|x| gr * x));
                    }
                    self.accum(grads, *m, Tensor::from_parts(mt.shape().to_vec(), dm));
                }
                if self.ng(*v) {
                    let dv = ops::mat_t_vec(mt, g).expect("shapes checked on forward");
                    self.accum(grads, *v, dv);
                }
            }
            Op::MatTVec { m, v } => {
                let (mt, vt) = (val(*m), val(*v));
                if self.ng(*m) {
                    let mut dm = Vec::with_capacity(mt.len());
                    for r in 0..mt.rows() {
                        let vr = vt.data()[r];
                        dm.extend(g.data().iter().map(|x| vr * x));
                    }
                    self.accum(grads, *m, Tensor::from_parts(mt.shape().to_vec(), dm));
                }
                if self.ng(*v) {
                    let dv = ops::matvec(mt, g).expect("shapes checked on forward");
                    self.accum(grads, *v, dv);
                }
            }
            Op::Dot(a, b) => {
                let s = g.item();
                let (ta, tb) = (val(*a), val(*b));
                let da = tb.data().iter().map(|x| s * x).collect();
                let db = ta.data().iter().map(|x| s * x).collect();
                self.accum(grads, *a, Tensor::from_parts(ta.shape().to_vec(), da));
                self.accum(grads, *b, Tensor::from_parts(tb.shape().to_vec(), db));
            }
            Op::PairProducts { m, v } => {
                let (mt, vt) = (val(*m), val(*v));
                let (f, p, r) = (mt.rows(), mt.cols(), vt.cols());
                let mut dm = vec![0.0; mt.len()];
                let mut dv = vec![0.0; vt.len()];
                for x in 0..p {
                    for y in 0..r {
                        let grow = g.row(x * r + y);
                        for k in 0..f {
                            dm[k * p + x] += grow[k] * vt.get2(k, y);
                            dv[k * r + y] += grow[k] * mt.get2(k, x);
                        }
                    }
                }
                self.accum(grads, *m, Tensor::from_parts(mt.shape().to_vec(), dm));
                self.accum(grads, *v, Tensor::from_parts(vt.shape().to_vec(), dv));
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                self.accum(grads, *x, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::SumSquares(x) => {
                let s = g.item();
                let xt = val(*x);
                let dx = xt.data().iter().map(|v| 2.0 * v * s).collect();
                self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::AbsSum(x) => {
                let s = g.item();
                let xt = val(*x);
                let dx = xt.data().iter().map(|v| sign(*v) * s).collect();
                self.accum(grads, *x, Tensor::from_parts(xt.shape().to_vec(), dx));
            }
            Op::SumScalars(terms) => {
                for t in terms {
                    self.accum(grads, *t, g.clone());
                }
            }
        }
    }
}

/// Sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_backward(y: &[f64], g: &[f64]) -> Vec<f64> {
    let inner = y.iter().zip(g).fold(0.0, |acc, (a, b)| acc + a * b);
    y.iter().zip(g).map(|(yv, gv)| yv * (gv - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_via_mul() {
        let mut tape = Tape::new();
        let x = tape.param(0, &Tensor::vector(vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum_squares(y);
        let back = tape.backward(s);
        // d/dx (x^2)^2 = 4x^3
        let g = back.params.get(0).unwrap().to_dense();
        assert_eq!(g.data(), &[108.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = tape.param(7, &Tensor::vector(vec![0.5, 0.5]));
        let d = tape.dot(c, p).unwrap();
        let back = tape.backward(d);
        assert!(back.node(c).is_none());
        assert_eq!(back.params.get(7).unwrap().to_dense().data(), &[1.0, 2.0]);
    }

    #[test]
    fn row_gradients_scatter_and_merge() {
        let table = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut tape = Tape::new();
        let rows = tape.param_rows(1, &table, &[2, 0, 2]).unwrap();
        let s = tape.sum_squares(rows);
        let back = tape.backward(s);
        let g = back.params.get(1).unwrap().to_dense();
        assert_eq!(g.data(), &[2., 4., 0., 0., 20., 24.]);
    }

    #[test]
    fn abs_sum_subgradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(0, &Tensor::vector(vec![0.0, -2.0, 3.0]));
        let s = tape.abs_sum(x);
        let back = tape.backward(s);
        assert_eq!(back.params.get(0).unwrap().to_dense().data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let w = tape.param(0, &Tensor::matrix(2, 3, vec![0.1, -0.4, 0.3, 0.9, 0.2, -0.7]).unwrap());
            let x = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., -1., 0.5, 0.25]).unwrap());
            let h = tape.linear(x, w, None).unwrap();
            let h = tape.relu(h);
            let s = tape.sum_rows(h).unwrap();
            let p = tape.softmax(s).unwrap();
            let l = tape.sum_squares(p);
            tape.backward(l).params.get(0).unwrap().to_dense()
        };
        let a = run();
        let b = run();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
