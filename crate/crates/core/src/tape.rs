//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Every value is a 2-D matrix (row vectors are `1 x n`, scalars `1 x 1`).
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Mat),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    Sum(Var),
    WeightedSum(Var, Mat),
    GatherSum(Var, Vec<(usize, usize, f64)>),
}

struct Node {
    value: Arc<Mat>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf sharing storage with a parameter matrix.
    pub fn shared(&mut self, value: Arc<Mat>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a + row` where `row` is `1 x n` and broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a * col` where `col` is a constant `r x 1` column broadcast over the columns.
    pub fn mul_col(&mut self, a: Var, col: Mat) -> Var {
        let value = self.value(a) * &col;
        let ng = self.needs(a);
        self.push(value, Op::MulCol(a, col), ng)
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let value = self.value(a).mapv(|x| alpha * x + beta);
        let ng = self.needs(a);
        self.push(value, Op::Affine(a, alpha), ng)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let ng = self.needs(a);
        self.push(value, Op::LogSoftmax(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + width]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, height: usize) -> Var {
        let value = self
            .value(a)
            .slice(s![start..start + height, ..])
            .to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    /// Gathers rows of `a` (embedding lookup when `a` is a table).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((rows.len(), src.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).assign(&src.row(r));
        }
        let ng = self.needs(a);
        self.push(value, Op::SelectRows(a, rows.to_vec()), ng)
    }

    /// Column-wise max over consecutive row segments of the given lengths.
    /// Output row `i` is the max over segment `i`. Every segment must be nonempty.
    pub fn segment_max(&mut self, a: Var, lengths: &[usize]) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut value = Mat::zeros((lengths.len(), cols));
        let mut argmax = vec![0usize; lengths.len() * cols];
        let mut start = 0;
        for (i, &len) in lengths.iter().enumerate() {
            assert!(len > 0, "segment_max: empty segment");
            for c in 0..cols {
                let mut best = start;
                for r in start + 1..start + len {
                    if src[[r, c]] > src[[best, c]] {
                        best = r;
                    }
                }
                value[[i, c]] = src[[best, c]];
                argmax[i * cols + c] = best;
            }
            start += len;
        }
        let ng = self.needs(a);
        self.push(value, Op::SegmentMax(a, argmax), ng)
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// `sum(a .* weights)` for a constant weight matrix, as a `1 x 1` node.
    pub fn weighted_sum(&mut self, a: Var, weights: Mat) -> Var {
        let value = Mat::from_elem((1, 1), (self.value(a) * &weights).sum());
        let ng = self.needs(a);
        self.push(value, Op::WeightedSum(a, weights), ng)
    }

    /// `sum_k w_k * a[r_k, c_k]` over sparse `(row, col, weight)` picks, as a `1 x 1` node.
    pub fn gather_sum(&mut self, a: Var, picks: Vec<(usize, usize, f64)>) -> Var {
        let src = self.value(a);
        let total: f64 = picks.iter().map(|&(r, c, w)| w * src[[r, c]]).sum();
        let ng = self.needs(a);
        self.push(Mat::from_elem((1, 1), total), Op::GatherSum(a, picks), ng)
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, col) => self.accumulate(grads, *a, g * col),
            Op::Affine(a, alpha) => self.accumulate(grads, *a, g * *alpha),
            Op::Sigmoid(a) => {
                let d = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&g, &y| g * y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&g, &y| g * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = ndarray::Zip::from(g)
                    .and(out)
                    .map_collect(|&g, &y| if y > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * out),
            Op::LogSoftmax(a) => {
                let row_sums = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = g - &(out.mapv(f64::exp) * &row_sums);
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if self.needs(p) {
                        self.accumulate(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentMax(a, argmax) => {
                let cols = g.ncols();
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for i in 0..g.nrows() {
                    for c in 0..cols {
                        d[[argmax[i * cols + c], c]] += g[[i, c]];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::WeightedSum(a, w) => self.accumulate(grads, *a, w * g[[0, 0]]),
            Op::GatherSum(a, picks) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                for &(r, c, w) in picks {
                    d[[r, c]] += w * g[[0, 0]];
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax_rows(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
