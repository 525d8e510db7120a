//! Minimal reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters live in
//! a [`ParamStore`] and are referenced, not copied, by the tape; `backward`
//! returns dense gradients indexed like the store.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::error::{DstError, Result};
use crate::scalar::{c, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F: Scalar> {
    pub names: Vec<String>,
    pub values: Vec<Array2<F>>,
    /// Excluded from weight decay (biases and normalization parameters).
    pub no_decay: Vec<bool>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            no_decay: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>, no_decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.no_decay.push(no_decay);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<F>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F: Scalar> {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    MulConst(Var, Array2<F>),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        inv_std: Vec<F>,
    },
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    Sum(Vec<Var>),
    SoftmaxCe {
        logits: Var,
        probs: Array2<F>,
        targets: Vec<Option<usize>>,
    },
    SigmoidBce {
        logits: Var,
        sig: Array2<F>,
        targets: Vec<Option<F>>,
    },
}

struct Node<F: Scalar> {
    value: Option<Array2<F>>,
    op: Op<F>,
}

pub struct Tape<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

/// Gradients of one scalar output, indexed like the parameter store.
pub struct Gradients<F: Scalar> {
    pub params: Vec<Option<Array2<F>>>,
}

fn gelu_f64(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_f64(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(DstError::Shape(format!("matmul {:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul { a, b, trans_b: false }))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(DstError::Shape(format!("matmul_t {:?} x {:?}ᵀ", va.dim(), vb.dim())));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMul { a, b, trans_b: true }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(DstError::Shape(format!("add {:?} + {:?}", va.dim(), vb.dim())));
        }
        let out = va + vb;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(DstError::Shape(format!("add_row {:?} + {:?}", va.dim(), vr.dim())));
        }
        let out = va + vr;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn mul_const(&mut self, a: Var, mask: Array2<F>) -> Result<Var> {
        if self.value(a).dim() != mask.dim() {
            return Err(DstError::Shape("mul_const shape".into()));
        }
        let out = self.value(a) * &mask;
        Ok(self.push(out, Op::MulConst(a, mask)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| c::<F>(gelu_f64(x.to_f64_lossy())));
        self.push(out, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.dim();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.dim() != (1, cols) || b.dim() != (1, cols) {
            return Err(DstError::Shape("layer_norm parameters".into()));
        }
        let n = c::<F>(cols as f64);
        let mut xhat = Array2::<F>::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in vx.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .fold(F::zero(), |a, b| a + b)
                / n;
            let inv = F::one() / (var + c(eps)).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                xhat[[r, j]] = (v - mean) * inv;
            }
        }
        let out = &xhat * g + b;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= va.nrows()) {
            return Err(DstError::Index(format!("row {bad} of {}", va.nrows())));
        }
        let out = va.select(Axis(0), &rows);
        Ok(self.push(out, Op::GatherRows(a, rows)))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).map_err(|e| DstError::Shape(format!("concat: {e}")))?;
        Ok(self.push(out, Op::ConcatCols(parts)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start, end))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return Err(DstError::Shape(format!("reshape {:?} -> ({rows}, {cols})", va.dim())));
        }
        let flat: Vec<F> = va.iter().copied().collect();
        let out = Array2::from_shape_vec((rows, cols), flat).expect("size checked");
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn sum(&mut self, parts: Vec<Var>) -> Result<Var> {
        let mut out: Option<Array2<F>> = None;
        for &p in &parts {
            let v = self.value(p);
            out = Some(match out {
                None => v.clone(),
                Some(acc) if acc.dim() == v.dim() => acc + v,
                Some(_) => return Err(DstError::Shape("sum of differently shaped terms".into())),
            });
        }
        let out = out.unwrap_or_else(|| Array2::zeros((1, 1)));
        Ok(self.push(out, Op::Sum(parts)))
    }

    /// Summed softmax cross-entropy over the rows that have a target.
    pub fn softmax_ce(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var> {
        let v = self.value(logits);
        if targets.len() != v.nrows() {
            return Err(DstError::Shape(format!(
                "{} targets for {} rows",
                targets.len(),
                v.nrows()
            )));
        }
        let probs = softmax_rows(v.view());
        let mut total = F::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= v.ncols() {
                    return Err(DstError::Index(format!("class {t} of {}", v.ncols())));
                }
                let row: Vec<F> = v.row(r).to_vec();
                total += -log_softmax_at(&row, t);
            }
        }
        let out = Array2::from_elem((1, 1), total);
        Ok(self.push(out, Op::SoftmaxCe { logits, probs, targets }))
    }

    /// Summed binary cross-entropy with logits over elements that have a target.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: Vec<Option<F>>) -> Result<Var> {
        let v = self.value(logits);
        if targets.len() != v.len() {
            return Err(DstError::Shape(format!(
                "{} targets for {} logits",
                targets.len(),
                v.len()
            )));
        }
        let sig = v.mapv(sigmoid);
        let mut total = F::zero();
        for (x, t) in v.iter().zip(&targets) {
            if let Some(t) = *t {
                total += bce_with_logits(*x, t);
            }
        }
        let out = Array2::from_elem((1, 1), total);
        Ok(self.push(out, Op::SigmoidBce { logits, sig, targets }))
    }

    /// Gradients of the (scalar) `output` w.r.t. all parameters used on the tape.
    pub fn backward(&self, output: Var) -> Gradients<F> {
        let mut grads: Vec<Option<Array2<F>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Array2::from_elem(self.value(output).raw_dim(), F::one()));
        let mut param_grads: Vec<Option<Array2<F>>> = vec![None; self.params.len()];

        fn acc<F: Scalar>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
            match slot {
                Some(existing) => *existing += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => acc(&mut param_grads[id.0], g),
                Op::MatMul { a, b, trans_b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if *trans_b {
                        acc(&mut grads[a.0], g.dot(vb));
                        acc(&mut grads[b.0], g.t().dot(va));
                    } else {
                        acc(&mut grads[a.0], g.dot(&vb.t()));
                        acc(&mut grads[b.0], va.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads[a.0], g);
                    acc(&mut grads[row.0], gr);
                }
                Op::Scale(a, k) => acc(&mut grads[a.0], g * *k),
                Op::MulConst(a, m) => acc(&mut grads[a.0], g * m),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(|x| c::<F>(gelu_grad_f64(x.to_f64_lossy())));
                    acc(&mut grads[a.0], g * &d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let vg = self.value(*gamma);
                    acc(&mut grads[gamma.0], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads[beta.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * vg;
                    let n = c::<F>(xhat.ncols() as f64);
                    let mut dx = Array2::<F>::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.iter().zip(xr.iter()).fold(F::zero(), |a, (&d, &x)| a + d * x);
                        for j in 0..xhat.ncols() {
                            dx[[r, j]] = inv_std[r] / n * (n * dr[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut dx = Array2::<F>::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let dot = g
                            .row(r)
                            .iter()
                            .zip(y.row(r).iter())
                            .fold(F::zero(), |s, (&gg, &yy)| s + gg * yy);
                        for j in 0..y.ncols() {
                            dx[[r, j]] = y[[r, j]] * (g[[r, j]] - dot);
                        }
                    }
                    acc(&mut grads[a.0], dx);
                }
                Op::GatherRows(a, rows) => {
                    let va = self.value(*a);
                    let mut dx = Array2::<F>::zeros(va.raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = dx.row_mut(r);
                        dst += &g.row(k);
                    }
                    acc(&mut grads[a.0], dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let va = self.value(*a);
                    let mut dx = Array2::<F>::zeros(va.raw_dim());
                    dx.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(&mut grads[a.0], dx);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).raw_dim();
                    let flat: Vec<F> = g.iter().copied().collect();
                    acc(&mut grads[a.0], Array2::from_shape_vec(dim, flat).expect("same size"));
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut grads[p.0], g.clone());
                    }
                }
                Op::SoftmaxCe { logits, probs, targets } => {
                    let k = g[[0, 0]];
                    let mut dx = Array2::<F>::zeros(probs.raw_dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for j in 0..probs.ncols() {
                                let onehot = if j == t { F::one() } else { F::zero() };
                                dx[[r, j]] = (probs[[r, j]] - onehot) * k;
                            }
                        }
                    }
                    acc(&mut grads[logits.0], dx);
                }
                Op::SigmoidBce { logits, sig, targets } => {
                    let k = g[[0, 0]];
                    let mut dx = Array2::<F>::zeros(sig.raw_dim());
                    for ((d, s), t) in dx.iter_mut().zip(sig.iter()).zip(targets) {
                        if let Some(t) = *t {
                            *d = (*s - t) * k;
                        }
                    }
                    acc(&mut grads[logits.0], dx);
                }
            }
        }
        Gradients { params: param_grads }
    }
}

pub fn softmax_rows<F: Scalar>(v: ArrayView2<F>) -> Array2<F> {
    let mut out = v.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let max = if max.is_finite() { max } else { F::zero() };
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        if sum > F::zero() {
            row.mapv_inplace(|x| x / sum);
        }
    }
    out
}

fn log_softmax_at<F: Scalar>(row: &[F], t: usize) -> F {
    let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    let lse = row.iter().map(|&x| (x - max).exp()).fold(F::zero(), |a, b| a + b).ln() + max;
    row[t] - lse
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `-[t·log σ(x) + (1-t)·log(1-σ(x))]`, computed stably.
pub fn bce_with_logits<F: Scalar>(x: F, t: F) -> F {
    x.max(F::zero()) - x * t + (F::one() + (-x.abs()).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(store: &mut ParamStore<f64>, id: ParamId, f: &dyn Fn(&ParamStore<f64>) -> f64) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(store.values[id.0].raw_dim());
        for idx in 0..g.len() {
            let (r, cc) = (idx / g.ncols(), idx % g.ncols());
            let orig = store.values[id.0][[r, cc]];
            store.values[id.0][[r, cc]] = orig + h;
            let up = f(store);
            store.values[id.0][[r, cc]] = orig - h;
            let down = f(store);
            store.values[id.0][[r, cc]] = orig;
            g[[r, cc]] = (up - down) / (2.0 * h);
        }
        g
    }

    fn graph(tape: &mut Tape<f64>, w: ParamId, b: ParamId, g: ParamId, be: ParamId) -> Var {
        let x = tape.constant(array![[0.3, -1.2, 0.5], [1.0, 0.2, -0.7]]);
        let w = tape.param(w);
        let b = tape.param(b);
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add_row(h, b).unwrap();
        let gm = tape.param(g);
        let bt = tape.param(be);
        let h = tape.layer_norm(h, gm, bt, 1e-12).unwrap();
        let h = tape.gelu(h);
        let att = tape.matmul_t(h, h).unwrap();
        let att = tape.softmax_rows(att);
        let h2 = tape.matmul(att, h).unwrap();
        let cat = tape.concat_cols(vec![h2, h]).unwrap();
        let sl = tape.slice_cols(cat, 1, 5);
        let r = tape.reshape(sl, 4, 2).unwrap();
        let gathered = tape.gather_rows(r, vec![0, 3, 3]).unwrap();
        let ce = tape.softmax_ce(gathered, vec![Some(1), None, Some(0)]).unwrap();
        let col = tape.slice_cols(r, 0, 1);
        let bce = tape
            .sigmoid_bce(col, vec![Some(1.0), Some(0.0), None, Some(1.0)])
            .unwrap();
        let bce = tape.scale(bce, 0.5);
        tape.sum(vec![ce, bce]).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::default();
        let w = store.add(
            "w",
            array![[0.1, -0.4, 0.3, 0.9], [0.5, 0.2, -0.6, 0.1], [-0.3, 0.8, 0.05, -0.2]],
            false,
        );
        let b = store.add("b", array![[0.01, -0.02, 0.03, 0.0]], true);
        let g = store.add("g", array![[1.1, 0.9, 1.0, 1.2]], true);
        let be = store.add("be", array![[0.0, 0.1, -0.1, 0.05]], true);
        let f = |s: &ParamStore<f64>| {
            let mut t = Tape::new(s);
            let out = graph(&mut t, w, b, g, be);
            t.value(out)[[0, 0]]
        };
        let analytic = {
            let mut t = Tape::new(&store);
            let out = graph(&mut t, w, b, g, be);
            t.backward(out)
        };
        for id in [w, b, g, be] {
            let num = numeric_grad(&mut store, id, &f);
            let ana = analytic.params[id.0].as_ref().unwrap();
            for (a, n) in ana.iter().zip(num.iter()) {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn masked_targets_have_zero_gradient() {
        let store = ParamStore::<f64>::default();
        let mut t = Tape::new(&store);
        let x = t.constant(array![[1.0, 2.0], [3.0, -1.0]]);
        let ce = t.softmax_ce(x, vec![None, Some(1)]).unwrap();
        assert!(t.value(ce)[[0, 0]] > 0.0);
        let bad = t.gather_rows(x, vec![2]);
        assert!(bad.is_err());
    }

    #[test]
    fn bce_is_stable() {
        assert!(bce_with_logits(1000.0f64, 1.0) < 1e-12);
        assert!((bce_with_logits(-1000.0f64, 1.0) - 1000.0).abs() < 1e-9);
        assert!((bce_with_logits(0.0f64, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
