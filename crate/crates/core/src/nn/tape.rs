//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations eagerly; [`Graph::backward`] walks the
//! record in reverse and returns gradients for every parameter that took
//! part in the computation.

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    Sum(Var),
    Mse(Var),
    BceLogits(Var),
}

struct Node {
    op: Op,
    value: Mat,
    // Op-specific saved data: normalized input for layer norm, targets for losses.
    aux: Option<Mat>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Sparse per-parameter gradients produced by one backward pass.
pub struct Gradients {
    pub by_param: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param[id.index()].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, value: Mat, aux: Option<Mat>) -> Var {
        self.nodes.push(Node { op, value, aux });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Input, m, None)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Mat::zeros((0, 0)), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v, None)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v, None)
    }

    /// Adds a `1 × m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v, None)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v, None)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v, None)
    }

    /// Scales row `i` of `a` by `col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.push(Op::MulCol(a, col), v, None)
    }

    /// Scales `a` by the `1 × 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(a) * k;
        self.push(Op::MulScalar(a, s), v, None)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), v, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v, None)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(Op::Gelu(a), v, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v, None)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(Op::SoftmaxRows(a), v, None)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Mat::zeros((xv.nrows(), 1));
        for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / cols;
            let var = row.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / cols;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[[r, 0]] = is;
            row.mapv_inplace(|v| (v - mean) * is);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let aux = concatenate(Axis(1), &[xhat.view(), inv_std.view()]).expect("layer norm aux");
        self.push(Op::LayerNorm { x, gamma, beta }, v, Some(aux))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v, None)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Op::ConcatCols(parts.to_vec()), v, None)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Op::ConcatRows(parts.to_vec()), v, None)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(Op::SliceRows(a, start, end), v, None)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start, end), v, None)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape size mismatch");
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Mat::from_shape_vec((rows, cols), data).expect("reshape");
        self.push(Op::Reshape(a), v, None)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), v, None)
    }

    /// Mean squared difference against a constant target.
    pub fn mse(&mut self, a: Var, target: &Mat) -> Var {
        let av = self.value(a);
        assert_eq!(av.dim(), target.dim(), "mse shape mismatch");
        let n = av.len() as f64;
        let loss = av.iter().zip(target.iter()).map(|(x, t)| (x - t) * (x - t)).sum::<f64>() / n;
        self.push(Op::Mse(a), Mat::from_elem((1, 1), loss), Some(target.clone()))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against constant soft targets.
    pub fn bce_logits(&mut self, logits: Var, target: &Mat) -> Var {
        let zv = self.value(logits);
        assert_eq!(zv.dim(), target.dim(), "bce shape mismatch");
        let n = zv.len() as f64;
        let loss = zv.iter().zip(target.iter()).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n;
        self.push(Op::BceLogits(logits), Mat::from_elem((1, 1), loss), Some(target.clone()))
    }

    /// Back-propagates from the scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut by_param: Vec<Option<Mat>> = (0..self.store.len()).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut by_param[id.index()] {
                    Some(existing) => *existing += &gy,
                    slot => *slot = Some(gy),
                },
                Op::MatMul(a, b) => {
                    let ga = gy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gy);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = gy.dot(self.value(*b));
                    let gb = gy.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gy.clone());
                    acc(&mut grads, *a, gy);
                }
                Op::AddRow(a, row) => {
                    let gr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, gy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&gy);
                    acc(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.value(*b);
                    let gb = &gy * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulCol(a, col) => {
                    let ga = &gy * self.value(*col);
                    let gc = (&gy * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, gc);
                }
                Op::MulScalar(a, sv) => {
                    let k = self.scalar(*sv);
                    let gs = (&gy * self.value(*a)).sum();
                    acc(&mut grads, *a, &gy * k);
                    acc(&mut grads, *sv, Mat::from_elem((1, 1), gs));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, gy * *k),
                Op::Tanh(a) => {
                    let g = &gy * &node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(|x| {
                        let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                    });
                    acc(&mut grads, *a, gy * d);
                }
                Op::Sigmoid(a) => {
                    let g = &gy * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = &gy * y;
                    let dots = g.sum_axis(Axis(1));
                    for (r, mut row) in g.rows_mut().into_iter().enumerate() {
                        let yr = y.row(r);
                        for (c, v) in row.iter_mut().enumerate() {
                            *v -= yr[c] * dots[r];
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let aux = node.aux.as_ref().expect("layer norm aux");
                    let cols = aux.ncols() - 1;
                    let xhat = aux.slice(s![.., ..cols]);
                    let inv_std = aux.column(cols);
                    let gbeta = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&gy * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &gy * self.value(*gamma);
                    let n = cols as f64;
                    let mut gx = Mat::zeros(dxhat.dim());
                    for r in 0..dxhat.nrows() {
                        let d = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = d.sum() / n;
                        let mean_dx = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..cols {
                            gx[[r, c]] = inv_std[r] * (d[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *x, gx);
                }
                Op::Transpose(a) => acc(&mut grads, *a, gy.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, gy.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, gy.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut g = Mat::zeros(self.value(*a).dim());
                    g.slice_mut(s![*start..*end, ..]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::SliceCols(a, start, end) => {
                    let mut g = Mat::zeros(self.value(*a).dim());
                    g.slice_mut(s![.., *start..*end]).assign(&gy);
                    acc(&mut grads, *a, g);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let data: Vec<f64> = gy.iter().copied().collect();
                    acc(&mut grads, *a, Mat::from_shape_vec(dim, data).expect("reshape grad"));
                }
                Op::Sum(a) => {
                    let g = Mat::from_elem(self.value(*a).dim(), gy[[0, 0]]);
                    acc(&mut grads, *a, g);
                }
                Op::Mse(a) => {
                    let t = node.aux.as_ref().expect("mse target");
                    let n = t.len() as f64;
                    let g = (self.value(*a) - t) * (2.0 * gy[[0, 0]] / n);
                    acc(&mut grads, *a, g);
                }
                Op::BceLogits(a) => {
                    let t = node.aux.as_ref().expect("bce target");
                    let n = t.len() as f64;
                    let g = (self.value(*a).mapv(sigmoid) - t) * (gy[[0, 0]] / n);
                    acc(&mut grads, *a, g);
                }
            }
        }
        Gradients { by_param }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
