//! Tape-based reverse-mode automatic differentiation over `ndarray::Array2<f64>`.
//!
//! Every tensor on the tape is a 2-D array; scalars are `[1 x 1]`. Operations
//! append a node holding the result value plus a record of the op and its
//! input node ids. `backward` walks the records in reverse, accumulating
//! adjoints. If any forward op produces a non-finite value the tape is marked
//! poisoned with the name of the offending op; callers check `fault()` before
//! trusting values or gradients.

use ndarray::{Array2, Axis};
use std::cell::RefCell;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct V(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// `[m x n] + [1 x n]`, row vector broadcast over rows.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    Reshape(usize),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    Row(usize, usize),
    VStack(Vec<usize>),
    MeanRows(usize),
    RepeatRows(usize),
    SumSq(usize),
    Sum(usize),
}

struct Inner {
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    fault: Option<String>,
}

pub struct Tape {
    inner: RefCell<Inner>,
}

const LN_EPS: f64 = 1e-5;

fn reshape_rm(a: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    assert_eq!(
        a.len(),
        rows * cols,
        "reshape: {:?} -> ({rows},{cols})",
        a.dim()
    );
    Array2::from_shape_vec((rows, cols), a.iter().cloned().collect()).unwrap()
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                values: Vec::new(),
                ops: Vec::new(),
                fault: None,
            }),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first op that produced a non-finite value, if any.
    pub fn fault(&self) -> Option<String> {
        self.inner.borrow().fault.clone()
    }

    fn push(&self, name: &str, op: Op, value: Array2<f64>) -> V {
        let mut inner = self.inner.borrow_mut();
        if inner.fault.is_none() && !value.iter().all(|v| v.is_finite()) {
            inner.fault = Some(name.to_string());
        }
        inner.values.push(value);
        inner.ops.push(op);
        V(inner.values.len() - 1)
    }

    /// Insert an input tensor. Gradients accumulate into leaves like any
    /// other node; read them back with [`Gradients::get`].
    pub fn leaf(&self, value: Array2<f64>) -> V {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.ops.push(Op::Leaf);
        V(inner.values.len() - 1)
    }

    /// Insert a `[1 x 1]` scalar leaf.
    pub fn scalar(&self, x: f64) -> V {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: V) -> Array2<f64> {
        self.inner.borrow().values[v.0].clone()
    }

    pub fn scalar_value(&self, v: V) -> f64 {
        let inner = self.inner.borrow();
        let a = &inner.values[v.0];
        assert_eq!(a.dim(), (1, 1), "scalar_value on non-scalar node");
        a[(0, 0)]
    }

    pub fn shape(&self, v: V) -> (usize, usize) {
        self.inner.borrow().values[v.0].dim()
    }

    fn val<R>(&self, v: V, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.inner.borrow().values[v.0])
    }

    pub fn matmul(&self, a: V, b: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.ncols(), y.nrows(), "matmul: {:?} x {:?}", x.dim(), y.dim());
            x.dot(y)
        };
        self.push("matmul", Op::MatMul(a.0, b.0), out)
    }

    pub fn add(&self, a: V, b: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.dim(), y.dim(), "add: {:?} vs {:?}", x.dim(), y.dim());
            x + y
        };
        self.push("add", Op::Add(a.0, b.0), out)
    }

    /// Add a `[1 x n]` row vector to every row of `a`.
    pub fn add_row(&self, a: V, row: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, r) = (&inner.values[a.0], &inner.values[row.0]);
            assert_eq!(r.nrows(), 1, "add_row: row operand must be 1 x n");
            assert_eq!(x.ncols(), r.ncols(), "add_row: {:?} vs {:?}", x.dim(), r.dim());
            x + r
        };
        self.push("add_row", Op::AddRow(a.0, row.0), out)
    }

    pub fn sub(&self, a: V, b: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.dim(), y.dim(), "sub: {:?} vs {:?}", x.dim(), y.dim());
            x - y
        };
        self.push("sub", Op::Sub(a.0, b.0), out)
    }

    /// Elementwise product.
    pub fn mul(&self, a: V, b: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.dim(), y.dim(), "mul: {:?} vs {:?}", x.dim(), y.dim());
            x * y
        };
        self.push("mul", Op::Mul(a.0, b.0), out)
    }

    pub fn scale(&self, a: V, c: f64) -> V {
        let out = self.val(a, |x| x * c);
        self.push("scale", Op::Scale(a.0, c), out)
    }

    pub fn transpose(&self, a: V) -> V {
        let out = self.val(a, |x| x.t().to_owned());
        self.push("transpose", Op::Transpose(a.0), out)
    }

    /// Reinterpret in row-major order as `[rows x cols]`.
    pub fn reshape(&self, a: V, rows: usize, cols: usize) -> V {
        let out = self.val(a, |x| reshape_rm(x, rows, cols));
        self.push("reshape", Op::Reshape(a.0), out)
    }

    /// Row-wise softmax (max-shifted for stability).
    pub fn softmax_rows(&self, a: V) -> V {
        let out = self.val(a, |x| {
            let mut y = x.clone();
            for mut row in y.rows_mut() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            y
        });
        self.push("softmax_rows", Op::SoftmaxRows(a.0), out)
    }

    /// Row-wise layer normalisation with learnable `[1 x n]` scale and shift.
    pub fn layer_norm(&self, x: V, gamma: V, beta: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (xs, g, b) = (
                &inner.values[x.0],
                &inner.values[gamma.0],
                &inner.values[beta.0],
            );
            let n = xs.ncols();
            assert_eq!(g.dim(), (1, n), "layer_norm: gamma shape");
            assert_eq!(b.dim(), (1, n), "layer_norm: beta shape");
            let mut y = Array2::zeros(xs.dim());
            for (i, row) in xs.rows().into_iter().enumerate() {
                let mean = row.mean().unwrap();
                let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                let inv = 1.0 / (var + LN_EPS).sqrt();
                for j in 0..n {
                    y[(i, j)] = (row[j] - mean) * inv * g[(0, j)] + b[(0, j)];
                }
            }
            y
        };
        self.push(
            "layer_norm",
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            out,
        )
    }

    pub fn relu(&self, a: V) -> V {
        let out = self.val(a, |x| x.mapv(|v| v.max(0.0)));
        self.push("relu", Op::Relu(a.0), out)
    }

    pub fn sigmoid(&self, a: V) -> V {
        let out = self.val(a, |x| x.mapv(|v| 1.0 / (1.0 + (-v).exp())));
        self.push("sigmoid", Op::Sigmoid(a.0), out)
    }

    pub fn tanh(&self, a: V) -> V {
        let out = self.val(a, |x| x.mapv(f64::tanh));
        self.push("tanh", Op::Tanh(a.0), out)
    }

    pub fn exp(&self, a: V) -> V {
        let out = self.val(a, |x| x.mapv(f64::exp));
        self.push("exp", Op::Exp(a.0), out)
    }

    /// Horizontal concatenation `[m x p] ++ [m x q] -> [m x (p+q)]`.
    pub fn concat_cols(&self, a: V, b: V) -> V {
        let out = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.values[a.0], &inner.values[b.0]);
            assert_eq!(x.nrows(), y.nrows(), "concat_cols: row mismatch");
            ndarray::concatenate(Axis(1), &[x.view(), y.view()]).unwrap()
        };
        self.push("concat_cols", Op::ConcatCols(a.0, b.0), out)
    }

    /// Columns `[start, start+len)`.
    pub fn slice_cols(&self, a: V, start: usize, len: usize) -> V {
        let out = self.val(a, |x| {
            assert!(start + len <= x.ncols(), "slice_cols: out of range");
            x.slice(ndarray::s![.., start..start + len]).to_owned()
        });
        self.push("slice_cols", Op::SliceCols { x: a.0, start }, out)
    }

    /// Row `i` as a `[1 x n]` tensor.
    pub fn row(&self, a: V, i: usize) -> V {
        let out = self.val(a, |x| {
            assert!(i < x.nrows(), "row: index out of range");
            x.row(i).to_owned().insert_axis(Axis(0))
        });
        self.push("row", Op::Row(a.0, i), out)
    }

    /// Stack `[1 x n]` rows into `[m x n]`.
    pub fn vstack(&self, rows: &[V]) -> V {
        assert!(!rows.is_empty(), "vstack: empty input");
        let out = {
            let inner = self.inner.borrow();
            let views: Vec<_> = rows
                .iter()
                .map(|v| {
                    let a = &inner.values[v.0];
                    assert_eq!(a.nrows(), 1, "vstack: operands must be 1 x n");
                    a.view()
                })
                .collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        };
        self.push("vstack", Op::VStack(rows.iter().map(|v| v.0).collect()), out)
    }

    /// Mean over rows: `[m x n] -> [1 x n]`.
    pub fn mean_rows(&self, a: V) -> V {
        let out = self.val(a, |x| x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0)));
        self.push("mean_rows", Op::MeanRows(a.0), out)
    }

    /// Repeat a `[1 x n]` row `m` times.
    pub fn repeat_rows(&self, a: V, m: usize) -> V {
        let out = self.val(a, |x| {
            assert_eq!(x.nrows(), 1, "repeat_rows: operand must be 1 x n");
            let views: Vec<_> = (0..m).map(|_| x.view()).collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        });
        self.push("repeat_rows", Op::RepeatRows(a.0), out)
    }

    /// Sum of squared entries as a `[1 x 1]` scalar.
    pub fn sum_sq(&self, a: V) -> V {
        let out = self.val(a, |x| {
            Array2::from_elem((1, 1), x.iter().map(|v| v * v).sum())
        });
        self.push("sum_sq", Op::SumSq(a.0), out)
    }

    /// Sum of all entries as a `[1 x 1]` scalar.
    pub fn sum(&self, a: V) -> V {
        let out = self.val(a, |x| Array2::from_elem((1, 1), x.sum()));
        self.push("sum", Op::Sum(a.0), out)
    }

    /// Reverse pass from a scalar output node. Returns adjoints for every
    /// node reached; unreached nodes have no gradient.
    pub fn backward(&self, out: V) -> Gradients {
        let inner = self.inner.borrow();
        assert_eq!(
            inner.values[out.0].dim(),
            (1, 1),
            "backward: output must be a scalar node"
        );
        let mut g: Vec<Option<Array2<f64>>> = vec![None; inner.values.len()];
        g[out.0] = Some(Array2::from_elem((1, 1), 1.0));

        fn acc(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
            match slot {
                Some(a) => *a += &delta,
                None => *slot = Some(delta),
            }
        }

        for i in (0..=out.0).rev() {
            let grad = match g[i].take() {
                Some(gr) => gr,
                None => continue,
            };
            let vals = &inner.values;
            match &inner.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = grad.dot(&vals[*b].t());
                    let db = vals[*a].t().dot(&grad);
                    acc(&mut g[*a], da);
                    acc(&mut g[*b], db);
                }
                Op::Add(a, b) => {
                    acc(&mut g[*a], grad.clone());
                    acc(&mut g[*b], grad.clone());
                }
                Op::AddRow(a, r) => {
                    acc(&mut g[*r], grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g[*a], grad.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut g[*b], -&grad);
                    acc(&mut g[*a], grad.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut g[*a], &grad * &vals[*b]);
                    acc(&mut g[*b], &grad * &vals[*a]);
                }
                Op::Scale(a, c) => acc(&mut g[*a], &grad * *c),
                Op::Transpose(a) => acc(&mut g[*a], grad.t().to_owned()),
                Op::Reshape(a) => {
                    let (r, c) = vals[*a].dim();
                    acc(&mut g[*a], reshape_rm(&grad, r, c));
                }
                Op::SoftmaxRows(a) => {
                    let y = &vals[i];
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| grad[(r, c)] * y[(r, c)]).sum();
                        for c in 0..y.ncols() {
                            dx[(r, c)] = y[(r, c)] * (grad[(r, c)] - dot);
                        }
                    }
                    acc(&mut g[*a], dx);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xs = &vals[*x];
                    let gm = &vals[*gamma];
                    let n = xs.ncols() as f64;
                    let mut dx = Array2::zeros(xs.dim());
                    let mut dgamma = Array2::zeros((1, xs.ncols()));
                    let mut dbeta = Array2::zeros((1, xs.ncols()));
                    for r in 0..xs.nrows() {
                        let row = xs.row(r);
                        let mean = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        // xhat_j = (x_j - mean) * inv; dxhat_j = g_j * gamma_j
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..xs.ncols() {
                            let xhat = (row[c] - mean) * inv;
                            let dxhat = grad[(r, c)] * gm[(0, c)];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            dgamma[(0, c)] += grad[(r, c)] * xhat;
                            dbeta[(0, c)] += grad[(r, c)];
                        }
                        for c in 0..xs.ncols() {
                            let xhat = (row[c] - mean) * inv;
                            let dxhat = grad[(r, c)] * gm[(0, c)];
                            dx[(r, c)] =
                                inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                        }
                    }
                    acc(&mut g[*x], dx);
                    acc(&mut g[*gamma], dgamma);
                    acc(&mut g[*beta], dbeta);
                }
                Op::Relu(a) => {
                    let mask = vals[*a].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut g[*a], &grad * &mask);
                }
                Op::Sigmoid(a) => {
                    let y = &vals[i];
                    acc(&mut g[*a], &grad * &(y * &(1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = &vals[i];
                    acc(&mut g[*a], &grad * &(1.0 - y * y));
                }
                Op::Exp(a) => acc(&mut g[*a], &grad * &vals[i]),
                Op::ConcatCols(a, b) => {
                    let p = vals[*a].ncols();
                    let q = vals[*b].ncols();
                    acc(&mut g[*a], grad.slice(ndarray::s![.., ..p]).to_owned());
                    acc(&mut g[*b], grad.slice(ndarray::s![.., p..p + q]).to_owned());
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Array2::zeros(vals[*x].dim());
                    dx.slice_mut(ndarray::s![.., *start..*start + grad.ncols()])
                        .assign(&grad);
                    acc(&mut g[*x], dx);
                }
                Op::Row(a, r) => {
                    let mut dx = Array2::zeros(vals[*a].dim());
                    dx.row_mut(*r).assign(&grad.row(0));
                    acc(&mut g[*a], dx);
                }
                Op::VStack(ids) => {
                    for (r, id) in ids.iter().enumerate() {
                        acc(&mut g[*id], grad.row(r).to_owned().insert_axis(Axis(0)));
                    }
                }
                Op::MeanRows(a) => {
                    let m = vals[*a].nrows();
                    let per = &grad / m as f64;
                    let views: Vec<_> = (0..m).map(|_| per.view()).collect();
                    acc(&mut g[*a], ndarray::concatenate(Axis(0), &views).unwrap());
                }
                Op::RepeatRows(a) => {
                    acc(&mut g[*a], grad.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SumSq(a) => {
                    acc(&mut g[*a], &vals[*a] * (2.0 * grad[(0, 0)]));
                }
                Op::Sum(a) => {
                    acc(&mut g[*a], Array2::from_elem(vals[*a].dim(), grad[(0, 0)]));
                }
            }
            g[i] = Some(grad);
        }
        Gradients { g }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    g: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the output with respect to node `v`, if `v` influenced it.
    pub fn get(&self, v: V) -> Option<&Array2<f64>> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }
}
