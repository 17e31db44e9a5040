//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates parameter gradients.

use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type ParamId = usize;
pub type NodeId = usize;

/// Named parameter matrices in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn add(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Per-parameter gradients; `None` means the parameter was not touched.
#[derive(Clone, Debug)]
pub struct Grads(pub Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Grads(vec![None; params.len()])
    }

    pub fn accumulate(&mut self, other: Grads) {
        for (mine, theirs) in self.0.iter_mut().zip(other.0) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => *m += &g,
                    None => *mine = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|x| x * f);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.0[id].as_ref()
    }
}

enum Op {
    Leaf,
    Gather { table: NodeId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulBT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    SliceCols { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    /// Sum over rows of −log softmax(logits)[target].
    CrossEntropy { logits: NodeId, targets: Vec<u32>, probs: Array2<f64> },
}

struct Node {
    value: Option<Array2<f64>>,
    param: Option<ParamId>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        let n = &self.nodes[id];
        match n.param {
            Some(p) => self.params.get(p).view(),
            None => n.value.as_ref().expect("node without value").view(),
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            param: Some(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn gather(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i as usize));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.iter().map(|&i| i as usize).collect(),
            },
            ng,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBT(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x * f);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, f), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = Array2::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            xhat.row_mut(r).assign(&row.mapv(|v| (v - mean) * is));
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax; with `causal`, entry (i, j) for j > i is masked out.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> NodeId {
        let mut v = self.value(a).to_owned();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let limit = if causal { (i + 1).min(row.len()) } else { row.len() };
            let max = row
                .slice(s![..limit])
                .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for (j, x) in row.iter_mut().enumerate() {
                if j < limit {
                    *x = (*x - max).exp();
                    sum += *x;
                } else {
                    *x = 0.0;
                }
            }
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.ng(a);
        self.push(v, Op::Softmax(a), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols { a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// 1×1 node holding Σ_rows −log softmax(row)[target].
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[u32]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per row");
        let mut probs = Array2::zeros(lv.raw_dim());
        let mut total = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let (lse, _) = log_sum_exp(row.iter().copied());
            total += lse - row[targets[r] as usize];
            probs
                .row_mut(r)
                .assign(&row.mapv(|x| (x - lse).exp()));
        }
        let ng = self.ng(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Backpropagates from `seeds` (1×1 nodes with upstream gradient).
    pub fn backward(&self, seeds: &[(NodeId, f64)]) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        for &(id, g) in seeds {
            add_grad(&mut grads[id], Array2::from_elem((1, 1), g).view());
        }
        let mut out = Grads::zeros_like(self.params);
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = node.param {
                        add_grad(&mut out.0[p], g.view());
                    }
                }
                Op::Gather { table, ids } => {
                    if self.ng(*table) {
                        let tv = self.value(*table);
                        let entry = grads[*table].get_or_insert_with(|| Array2::zeros(tv.raw_dim()));
                        for (r, &i) in ids.iter().enumerate() {
                            let mut dst = entry.row_mut(i);
                            dst += &g.row(r);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        add_owned(&mut grads[*a], ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        add_owned(&mut grads[*b], gb);
                    }
                }
                Op::MatMulBT(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b));
                        add_owned(&mut grads[*a], ga);
                    }
                    if self.ng(*b) {
                        let gb = g.t().dot(&self.value(*a));
                        add_owned(&mut grads[*b], gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        add_grad(&mut grads[*a], g.view());
                    }
                    if self.ng(*b) {
                        add_grad(&mut grads[*b], g.view());
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        add_owned(&mut grads[*row], gr);
                    }
                    if self.ng(*a) {
                        add_owned(&mut grads[*a], g);
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    add_owned(&mut grads[*a], g.mapv(|x| x * f));
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().unwrap();
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|gx, &o| {
                        if o <= 0.0 {
                            *gx = 0.0;
                        }
                    });
                    add_owned(&mut grads[*a], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        add_owned(&mut grads[*gamma], gg);
                    }
                    if self.ng(*beta) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        add_owned(&mut grads[*beta], gb);
                    }
                    if self.ng(*x) {
                        let dxhat = &g * &self.value(*gamma);
                        let n = dxhat.ncols() as f64;
                        let mut gx = Array2::zeros(dxhat.raw_dim());
                        for r in 0..dxhat.nrows() {
                            let d = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum_d = d.sum();
                            let sum_dx = d.dot(&xh);
                            let is = inv_std[r];
                            for c in 0..d.len() {
                                gx[[r, c]] = is / n * (n * d[c] - sum_d - xh[c] * sum_dx);
                            }
                        }
                        add_owned(&mut grads[*x], gx);
                    }
                }
                Op::Softmax(a) => {
                    let p = node.value.as_ref().unwrap();
                    let mut ga = &g * p;
                    for (mut row, prow) in ga.rows_mut().into_iter().zip(p.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&prow).for_each(|x, &pp| *x -= pp * dot);
                    }
                    add_owned(&mut grads[*a], ga);
                }
                Op::SliceCols { a, start } => {
                    let av = self.value(*a);
                    let entry = grads[*a].get_or_insert_with(|| Array2::zeros(av.raw_dim()));
                    let mut dst = entry.slice_mut(s![.., *start..*start + g.ncols()]);
                    dst += &g;
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.ng(p) {
                            add_grad(&mut grads[p], g.slice(s![.., col..col + w]));
                        }
                        col += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let up = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[[r, t as usize]] -= 1.0;
                    }
                    gl.mapv_inplace(|x| x * up);
                    add_owned(&mut grads[*logits], gl);
                }
            }
        }
        out
    }
}

fn add_grad(slot: &mut Option<Array2<f64>>, g: ArrayView2<f64>) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g.to_owned()),
    }
}

fn add_owned(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g),
    }
}

/// Returns (log Σ exp(x), max x).
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.map(|x| (x - max).exp()).sum();
    (max + sum.ln(), max)
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let (lse, _) = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|x| x - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` w.r.t. every entry of parameter `p`.
    fn numeric_grad(store: &mut ParamStore, p: ParamId, f: &dyn Fn(&ParamStore) -> f64) -> Array2<f64> {
        let eps = 1e-5;
        let shape = store.get(p).raw_dim();
        let mut out = Array2::zeros(shape);
        for idx in ndarray::indices(out.raw_dim()) {
            let orig = store.get(p)[idx];
            store.get_mut(p)[idx] = orig + eps;
            let up = f(store);
            store.get_mut(p)[idx] = orig - eps;
            let down = f(store);
            store.get_mut(p)[idx] = orig;
            out[idx] = (up - down) / (2.0 * eps);
        }
        out
    }

    #[test]
    fn ops_match_finite_differences() {
        let mut store = ParamStore::default();
        let x = store.add("x", array![[0.3, -1.2, 0.5], [1.1, 0.4, -0.7]]);
        let w = store.add("w", array![[0.2, -0.1, 0.4, 0.9], [0.5, 0.3, -0.8, 0.1], [-0.6, 0.7, 0.2, -0.3]]);
        let gamma = store.add("g", array![[1.1, 0.9, 1.3, 0.7]]);
        let beta = store.add("b", array![[0.1, -0.2, 0.05, 0.3]]);
        let emb = store.add("e", array![[0.1, 0.2, 0.3, 0.4], [-0.5, 0.6, -0.7, 0.8], [0.9, -1.0, 0.2, 0.1]]);

        let build = |s: &ParamStore| -> (f64, Grads) {
            let mut t = Tape::new(s);
            let xn = t.param(x);
            let wn = t.param(w);
            let h = t.matmul(xn, wn);
            let en = t.param(emb);
            let g = t.gather(en, &[2, 0]);
            let h = t.add(h, g);
            let gn = t.param(gamma);
            let bn = t.param(beta);
            let h = t.layer_norm(h, gn, bn);
            let h = t.relu(h);
            let left = t.slice_cols(h, 0, 2);
            let right = t.slice_cols(h, 2, 2);
            let sc = t.matmul_bt(left, right);
            let sc = t.scale(sc, 0.7);
            let p = t.softmax(sc, true);
            let o = t.matmul(p, right);
            let cat = t.concat_cols(&[o, left]);
            let logits = t.matmul_bt(cat, en);
            let b0 = t.slice_cols(bn, 0, 3);
            let logits = t.add_row(logits, b0);
            let ce = t.cross_entropy(logits, &[1, 2]);
            let val = t.scalar(ce);
            (val, t.backward(&[(ce, 1.0)]))
        };
        let (_, grads) = build(&store);
        for p in 0..store.len() {
            let num = numeric_grad(&mut store, p, &|s| build(s).0);
            let ana = grads.get(p).unwrap();
            for (a, n) in ana.iter().zip(num.iter()) {
                assert!((a - n).abs() < 1e-6, "param {}: {a} vs {n}", store.name(p));
            }
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let a = t.constant(Array2::from_elem((3, 3), 1.0));
        let p = t.softmax(a, true);
        let v = t.value(p);
        assert_eq!(v.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert!((v[[1, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(v[[1, 2]], 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let store = ParamStore::default();
        let mut t = Tape::new(&store);
        let l = t.constant(Array2::zeros((1, 4)));
        let ce = t.cross_entropy(l, &[2]);
        assert!((t.scalar(ce) - 4f64.ln()).abs() < 1e-12);
    }
}
