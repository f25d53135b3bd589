//! Reverse-mode differentiation over matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed, not copied; [`Tape::backward`] accumulates their gradients into
//! caller-owned buffers.

use crate::tensor::{dot, Mat};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(usize),
}

enum Op {
    Input,
    Param(usize),
    Gather(usize, Vec<usize>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Cols(Var, usize),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Rows(Var, Vec<usize>),
    Bce(Var, f64),
    CrossEntropy(Var, usize),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(p) => &self.params[*p],
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.nodes.push(Node { value: Value::Param(index), op: Op::Param(index) });
        Var(self.nodes.len() - 1)
    }

    /// Rows `ids` of parameter `index`.
    pub fn gather(&mut self, index: usize, ids: &[usize]) -> Var {
        let table = &self.params[index];
        let mut out = Mat::zeros(ids.len(), table.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(out, Op::Gather(index, ids.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, out.cols), "bias shape mismatch");
        for r in 0..out.rows {
            for (x, y) in out.row_mut(r).iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Row-wise normalization to zero mean and unit variance, then `gain` and `bias` (both 1×c).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let cols = input.cols;
        let mut normalized = Mat::zeros(input.rows, cols);
        let mut out = Mat::zeros(input.rows, cols);
        let mut inv_std = Vec::with_capacity(input.rows);
        for r in 0..input.rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normalized.data[r * cols + c] = n;
                out.data[r * cols + c] = n * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, normalized, inv_std })
    }

    /// Row-wise softmax. `-inf` entries get probability 0; a row with no
    /// finite entry becomes all zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                row.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Columns `start..start + width`.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(m.rows, width);
        for r in 0..m.rows {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
        }
        self.push(out, Op::Cols(a, start))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for &p in parts {
                let m = self.value(p);
                out.row_mut(r)[c..c + m.cols].copy_from_slice(m.row(r));
                c += m.cols;
            }
        }
        self.push(out, Op::HCat(parts.to_vec()))
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "vcat width mismatch");
            data.extend_from_slice(&m.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Mat::from_vec(rows, cols, data), Op::VCat(parts.to_vec()))
    }

    pub fn rows(&mut self, a: Var, ids: &[usize]) -> Var {
        let m = self.value(a);
        let mut out = Mat::zeros(ids.len(), m.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(m.row(id));
        }
        self.push(out, Op::Rows(a, ids.to_vec()))
    }

    /// Binary cross-entropy of the 1×1 logit `a` against `target`.
    pub fn bce(&mut self, a: Var, target: f64) -> Var {
        let x = self.scalar(a);
        let loss = x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::Bce(a, target))
    }

    /// Cross-entropy of the 1×n logit row `a` (possibly with `-inf` entries) at class `gold`.
    pub fn cross_entropy(&mut self, a: Var, gold: usize) -> Var {
        let row = &self.value(a).data;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - row[gold];
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::CrossEntropy(a, gold))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::WeightedSum(terms.to_vec()))
    }

    /// Back-propagates from the 1×1 node `root`, adding parameter gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut [Mat]) {
        let mut adj: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else {
                continue;
            };
            let out = match &self.nodes[i].value {
                Value::Owned(m) => m,
                Value::Param(p) => &self.params[*p],
            };
            let send = |v: Var, m: Mat, adj: &mut Vec<Option<Mat>>| match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&m),
                slot => *slot = Some(m),
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => grads[*p].add_assign(&g),
                Op::Gather(p, ids) => {
                    let table = &mut grads[*p];
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, x) in table.row_mut(id).iter_mut().zip(g.row(r)) {
                            *t += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_t(self.value(*b)), &mut adj);
                    send(*b, self.value(*a).t_matmul(&g), &mut adj);
                }
                Op::MatMulT(a, b) => {
                    send(*a, g.matmul(self.value(*b)), &mut adj);
                    send(*b, g.t_matmul(self.value(*a)), &mut adj);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut adj);
                    send(*b, g, &mut adj);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    send(*bias, gb, &mut adj);
                    send(*a, g, &mut adj);
                }
                Op::Scale(a, s) => {
                    let mut m = g;
                    m.data.iter_mut().for_each(|x| *x *= s);
                    send(*a, m, &mut adj);
                }
                Op::Relu(a) => {
                    let mut m = g;
                    for (x, y) in m.data.iter_mut().zip(&out.data) {
                        if *y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    send(*a, m, &mut adj);
                }
                Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                    let gv = self.value(*gain);
                    let cols = g.cols;
                    let n = cols as f64;
                    let mut dx = Mat::zeros(g.rows, cols);
                    let mut dgain = Mat::zeros(1, cols);
                    let mut dbias = Mat::zeros(1, cols);
                    for r in 0..g.rows {
                        let dy = g.row(r);
                        let xhat = normalized.row(r);
                        let dn: Vec<f64> = dy.iter().zip(&gv.data).map(|(d, w)| d * w).collect();
                        let sum_dn: f64 = dn.iter().sum();
                        let sum_dn_x = dot(&dn, xhat);
                        for c in 0..cols {
                            dgain.data[c] += dy[c] * xhat[c];
                            dbias.data[c] += dy[c];
                            dx.data[r * cols + c] =
                                inv_std[r] / n * (n * dn[c] - sum_dn - xhat[c] * sum_dn_x);
                        }
                    }
                    send(*gain, dgain, &mut adj);
                    send(*bias, dbias, &mut adj);
                    send(*x, dx, &mut adj);
                }
                Op::Softmax(a) => {
                    let mut m = g;
                    for r in 0..m.rows {
                        let y = out.row(r);
                        let s = dot(m.row(r), y);
                        for (d, p) in m.row_mut(r).iter_mut().zip(y) {
                            *d = p * (*d - s);
                        }
                    }
                    send(*a, m, &mut adj);
                }
                Op::Cols(a, start) => {
                    let src = self.value(*a);
                    let mut m = Mat::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        m.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    send(*a, m, &mut adj);
                }
                Op::HCat(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut m = Mat::zeros(g.rows, w);
                        for r in 0..g.rows {
                            m.row_mut(r).copy_from_slice(&g.row(r)[c..c + w]);
                        }
                        c += w;
                        send(p, m, &mut adj);
                    }
                }
                Op::VCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).data.len();
                        let rows = self.value(p).rows;
                        let m = Mat::from_vec(rows, g.cols, g.data[offset..offset + len].to_vec());
                        offset += len;
                        send(p, m, &mut adj);
                    }
                }
                Op::Rows(a, ids) => {
                    let src = self.value(*a);
                    let mut m = Mat::zeros(src.rows, src.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, x) in m.row_mut(id).iter_mut().zip(g.row(r)) {
                            *t += x;
                        }
                    }
                    send(*a, m, &mut adj);
                }
                Op::Bce(a, target) => {
                    let d = (sigmoid(self.scalar(*a)) - target) * g.data[0];
                    send(*a, Mat::from_vec(1, 1, vec![d]), &mut adj);
                }
                Op::CrossEntropy(a, gold) => {
                    let row = &self.value(*a).data;
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    let mut d: Vec<f64> = exps.iter().map(|e| e / total * g.data[0]).collect();
                    d[*gold] -= g.data[0];
                    send(*a, Mat::from_vec(1, row.len(), d), &mut adj);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        send(v, Mat::from_vec(1, 1, vec![w * g.data[0]]), &mut adj);
                    }
                }
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` with respect to every entry of every parameter.
    fn numeric(params: &[Mat], f: &dyn Fn(&[Mat]) -> f64) -> Vec<Mat> {
        let h = 1e-5;
        let mut out: Vec<Mat> = params.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
        for p in 0..params.len() {
            for i in 0..params[p].data.len() {
                let mut plus = params.to_vec();
                plus[p].data[i] += h;
                let mut minus = params.to_vec();
                minus[p].data[i] -= h;
                out[p].data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
            }
        }
        out
    }

    fn analytic(params: &[Mat], build: &dyn Fn(&mut Tape) -> Var) -> Vec<Mat> {
        let mut grads: Vec<Mat> = params.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
        let mut tape = Tape::new(params);
        let root = build(&mut tape);
        tape.backward(root, &mut grads);
        grads
    }

    fn check(params: Vec<Mat>, build: &dyn Fn(&mut Tape) -> Var) {
        let f = |ps: &[Mat]| {
            let mut t = Tape::new(ps);
            let r = build(&mut t);
            t.scalar(r)
        };
        let a = analytic(&params, build);
        let n = numeric(&params, &f);
        for (x, y) in a.iter().zip(&n) {
            assert!(x.max_abs_diff(y) < 1e-6, "{x:?} vs {y:?}");
        }
    }

    fn m(rows: usize, cols: usize, seed: u64) -> Mat {
        let data = (0..rows * cols)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Mat::from_vec(rows, cols, data)
    }

    #[test]
    fn attention_block_gradients() {
        check(vec![m(3, 4, 1), m(4, 4, 2), m(1, 4, 3), m(1, 4, 4), m(5, 4, 5)], &|t| {
            let x = t.param(0);
            let w = t.param(1);
            let q = t.matmul(x, w);
            let bias = t.param(2);
            let q = t.add_row(q, bias);
            let ctx = t.param(4);
            let ctx = t.rows(ctx, &[0, 2, 4, 1]);
            let mut mask = Mat::zeros(3, 4);
            mask.data[3] = f64::NEG_INFINITY;
            let s = t.matmul_t(q, ctx);
            let s = t.scale(s, 0.5);
            let mask = t.input(mask);
            let s = t.add(s, mask);
            let a = t.softmax(s);
            let o = t.matmul(a, ctx);
            let left = t.cols(o, 0, 2);
            let right = t.cols(o, 2, 2);
            let o = t.hcat(&[right, left]);
            let (g, b) = (t.param(2), t.param(3));
            let o = t.layer_norm(o, g, b);
            let o = t.relu(o);
            let o = t.vcat(&[o, g]);
            let logits = t.rows(o, &[3]);
            let ce = t.cross_entropy(logits, 1);
            let first = t.rows(o, &[0]);
            let first = t.cols(first, 1, 1);
            let bce = t.bce(first, 1.0);
            t.weighted_sum(&[(ce, 0.7), (bce, 1.3)])
        });
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        check(vec![m(4, 3, 9)], &|t| {
            let e = t.gather(0, &[1, 1, 3]);
            let w = t.input(Mat::from_vec(3, 1, vec![0.5, -1.0, 2.0]));
            let s = t.matmul(e, w);
            let s = t.matmul_t(s, s);
            let s = t.rows(s, &[2]);
            t.cross_entropy(s, 0)
        });
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let params = [];
        let mut t = Tape::new(&params);
        let x = t.input(Mat::from_vec(1, 2, vec![f64::NEG_INFINITY; 2]));
        let y = t.softmax(x);
        assert_eq!(t.value(y).data, vec![0.0, 0.0]);
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        let params = [];
        let mut t = Tape::new(&params);
        let x = t.input(Mat::from_vec(1, 1, vec![800.0]));
        let l = t.bce(x, 1.0);
        assert!(t.scalar(l).abs() < 1e-300);
        let l = t.bce(x, 0.0);
        assert_eq!(t.scalar(l), 800.0);
    }
}
