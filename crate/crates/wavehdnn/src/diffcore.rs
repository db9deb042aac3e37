//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations define-by-run; [`Tape::backward`] walks the
//! records in reverse creation order exactly once and accumulates
//! vector-Jacobian products into every `requires_grad` leaf. Constant linear
//! operators (sparse incidence products, wavelet applications) enter the
//! graph through the [`LinearMap`] trait so the tape never materializes them.
//!
//! The op set is intentionally small: dense matmul, constant linear maps,
//! elementwise arithmetic, relu/sigmoid/log/exp, row-wise layer norm and L2
//! normalization, column concat, row and full reductions, gather/scatter over
//! rows, row-wise logsumexp, and transpose. Everything a two-channel
//! hypergraph encoder with BPR + InfoNCE objectives needs, and nothing more.

use crate::{Error, Result};
use ndarray::{Array2, Axis};
use std::cell::{Cell, Ref, RefCell};
use std::sync::Arc;

/// A constant linear operator `Y = M · X` acting on the row dimension.
///
/// Implementors supply the transpose application used for the backward pass.
/// The operator itself is treated as a constant: no gradient flows into it.
pub trait LinearMap: Send + Sync {
    /// Number of rows of `M` (rows of the output).
    fn out_rows(&self) -> usize;
    /// Number of columns of `M` (rows of the input).
    fn in_rows(&self) -> usize;
    /// Compute `M · x`.
    fn apply(&self, x: &Array2<f64>) -> Array2<f64>;
    /// Compute `Mᵀ · g`.
    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64>;
    /// Short human-readable description for error messages.
    fn describe(&self) -> String {
        format!("linear map ({}x{})", self.out_rows(), self.in_rows())
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    LinearConst { map: Arc<dyn LinearMap>, x: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowBroadcast { x: usize, row: usize },
    Scale { x: usize, c: f64 },
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    RowLayerNorm { x: usize, eps: f64 },
    RowL2Normalize { x: usize, eps: f64 },
    ScaleRows { x: usize, v: usize },
    ConcatColumns(usize, usize),
    MeanOverRows(usize),
    SumAll(usize),
    GatherRows { x: usize, idx: Arc<Vec<usize>> },
    ScatterAddRows { x: usize, idx: Arc<Vec<usize>> },
    LogsumexpRows(usize),
    Transpose(usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Array2<f64>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    /// Tape index of this variable; unique within its tape.
    pub fn node_id(&self) -> usize {
        self.id
    }
}

/// Records forward operations and replays them in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
}

fn shape_str(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var { id }
    }

    /// Insert a leaf variable.
    pub fn leaf(&self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert a constant (a leaf that never receives gradients).
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    /// Convenience: an all-ones constant.
    pub fn ones(&self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::ones((rows, cols)))
    }

    /// Convenience: an all-zeros constant.
    pub fn zeros(&self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// Clone out the current value of `v`.
    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Borrow the value of `v` without cloning.
    pub fn value_ref(&self, v: Var) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.id].value)
    }

    /// Value of a 1×1 variable as a plain scalar.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.id].value;
        if val.dim() != (1, 1) {
            return Err(Error::LossNotScalar {
                rows: val.nrows(),
                cols: val.ncols(),
            });
        }
        Ok(val[(0, 0)])
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        nodes[v.id].value.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Gradient of `v` after [`Tape::backward`]; `None` before backward or
    /// for variables that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<Array2<f64>> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let (sa, sb) = (nodes[a.id].value.dim(), nodes[b.id].value.dim());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                expected: format!("{}x{}", sa.0, sa.1),
                got: format!("{}x{}", sb.0, sb.1),
            });
        }
        Ok(())
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        let nodes = self.nodes.borrow();
        nodes[a.id].requires_grad || nodes[b.id].requires_grad
    }

    /// Dense matrix product `a · b`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
            if va.ncols() != vb.nrows() {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    expected: format!("inner dims to agree ({})", va.ncols()),
                    got: format!("{} vs {}", shape_str(va), shape_str(vb)),
                });
            }
            va.dot(vb)
        };
        Ok(self.push(value, Op::MatMul(a.id, b.id), self.rg2(a, b)))
    }

    /// Apply a constant linear operator to the rows of `x` (covers the
    /// sparse-constant × dense-variable product).
    pub fn apply_linear(&self, map: Arc<dyn LinearMap>, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            if vx.nrows() != map.in_rows() {
                return Err(Error::ShapeMismatch {
                    op: "apply_linear",
                    expected: format!("{} input rows for {}", map.in_rows(), map.describe()),
                    got: shape_str(vx),
                });
            }
            map.apply(vx)
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::LinearConst { map, x: x.id }, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value + &nodes[b.id].value
        };
        Ok(self.push(value, Op::Add(a.id, b.id), self.rg2(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value - &nodes[b.id].value
        };
        Ok(self.push(value, Op::Sub(a.id, b.id), self.rg2(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value * &nodes[b.id].value
        };
        Ok(self.push(value, Op::Mul(a.id, b.id), self.rg2(a, b)))
    }

    /// Add a 1×d row to every row of an n×d matrix (bias add).
    pub fn add_row_broadcast(&self, x: Var, row: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (vx, vr) = (&nodes[x.id].value, &nodes[row.id].value);
            if vr.nrows() != 1 || vr.ncols() != vx.ncols() {
                return Err(Error::ShapeMismatch {
                    op: "add_row_broadcast",
                    expected: format!("1x{}", vx.ncols()),
                    got: shape_str(vr),
                });
            }
            vx + &vr.row(0)
        };
        Ok(self.push(
            value,
            Op::AddRowBroadcast { x: x.id, row: row.id },
            self.rg2(x, row),
        ))
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[x.id].value * c
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Scale { x: x.id, c }, rg))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.mapv(|v| v.max(0.0))
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Relu(x.id), rg))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.mapv(stable_sigmoid)
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Sigmoid(x.id), rg))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.mapv(f64::ln)
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Log(x.id), rg))
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.mapv(f64::exp)
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Exp(x.id), rg))
    }

    /// Row-wise layer normalization with population variance and no learned
    /// affine terms: `(row - mean) / sqrt(var + eps)`.
    pub fn row_layer_norm(&self, x: Var, eps: f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            if vx.ncols() == 0 {
                return Err(Error::ContractViolation(
                    "row_layer_norm needs at least one column".into(),
                ));
            }
            layer_norm_forward(vx, eps)
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::RowLayerNorm { x: x.id, eps }, rg))
    }

    /// Row-wise L2 normalization: `row / max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(&self, x: Var, eps: f64) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            let mut out = vx.clone();
            for mut row in out.rows_mut() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let denom = norm.max(eps);
                row.mapv_inplace(|v| v / denom);
            }
            out
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::RowL2Normalize { x: x.id, eps }, rg))
    }

    /// Scale row `i` of `x` (n×d) by `v[i]` where `v` is n×1.
    pub fn scale_rows(&self, x: Var, v: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (vx, vv) = (&nodes[x.id].value, &nodes[v.id].value);
            if vv.ncols() != 1 || vv.nrows() != vx.nrows() {
                return Err(Error::ShapeMismatch {
                    op: "scale_rows",
                    expected: format!("{}x1", vx.nrows()),
                    got: shape_str(vv),
                });
            }
            let mut out = vx.clone();
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                let s = vv[(i, 0)];
                row.mapv_inplace(|val| val * s);
            }
            out
        };
        Ok(self.push(value, Op::ScaleRows { x: x.id, v: v.id }, self.rg2(x, v)))
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn concat_columns(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.id].value, &nodes[b.id].value);
            if va.nrows() != vb.nrows() {
                return Err(Error::ShapeMismatch {
                    op: "concat_columns",
                    expected: format!("{} rows", va.nrows()),
                    got: shape_str(vb),
                });
            }
            let mut out = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
            out.slice_mut(ndarray::s![.., ..va.ncols()]).assign(va);
            out.slice_mut(ndarray::s![.., va.ncols()..]).assign(vb);
            out
        };
        Ok(self.push(value, Op::ConcatColumns(a.id, b.id), self.rg2(a, b)))
    }

    /// Column means across rows: n×d → 1×d.
    pub fn mean_over_rows(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            if vx.nrows() == 0 {
                return Err(Error::ContractViolation(
                    "mean_over_rows on an empty matrix".into(),
                ));
            }
            let mean = vx.mean_axis(Axis(0)).expect("nonempty");
            mean.insert_axis(Axis(0))
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::MeanOverRows(x.id), rg))
    }

    /// Sum of all entries: n×d → 1×1.
    pub fn sum_all(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            Array2::from_elem((1, 1), nodes[x.id].value.sum())
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::SumAll(x.id), rg))
    }

    /// Select rows by index; duplicate indices are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let idx = Arc::new(idx.to_vec());
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            for &i in idx.iter() {
                if i >= vx.nrows() {
                    return Err(Error::ContractViolation(format!(
                        "gather_rows index {} out of range (rows = {})",
                        i,
                        vx.nrows()
                    )));
                }
            }
            let mut out = Array2::zeros((idx.len(), vx.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                out.row_mut(k).assign(&vx.row(i));
            }
            out
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::GatherRows { x: x.id, idx }, rg))
    }

    /// Scatter rows of `x` (m×d) into an `out_rows`×d zero matrix, adding
    /// row `k` of `x` into row `idx[k]`.
    pub fn scatter_add_rows(&self, x: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let idx = Arc::new(idx.to_vec());
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            if idx.len() != vx.nrows() {
                return Err(Error::ContractViolation(format!(
                    "scatter_add_rows: {} indices for {} rows",
                    idx.len(),
                    vx.nrows()
                )));
            }
            for &i in idx.iter() {
                if i >= out_rows {
                    return Err(Error::ContractViolation(format!(
                        "scatter_add_rows index {i} out of range (out_rows = {out_rows})"
                    )));
                }
            }
            let mut out = Array2::zeros((out_rows, vx.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                let src = vx.row(k);
                let mut dst = out.row_mut(i);
                dst += &src;
            }
            out
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::ScatterAddRows { x: x.id, idx }, rg))
    }

    /// Row-wise log-sum-exp: n×d → n×1, computed stably.
    pub fn logsumexp_rows(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let vx = &nodes[x.id].value;
            if vx.ncols() == 0 {
                return Err(Error::ContractViolation(
                    "logsumexp_rows needs at least one column".into(),
                ));
            }
            let mut out = Array2::zeros((vx.nrows(), 1));
            for (i, row) in vx.rows().into_iter().enumerate() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                out[(i, 0)] = m + s.ln();
            }
            out
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::LogsumexpRows(x.id), rg))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.t().to_owned()
        };
        let rg = self.nodes.borrow()[x.id].requires_grad;
        Ok(self.push(value, Op::Transpose(x.id), rg))
    }

    /// Reverse pass. `loss` must be 1×1; each `requires_grad` variable ends
    /// with `grad = ∂loss/∂value` (zeros if it does not reach the loss).
    pub fn backward(&self, loss: Var) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let mut nodes = self.nodes.borrow_mut();
        {
            let lv = &nodes[loss.id].value;
            if lv.dim() != (1, 1) {
                return Err(Error::LossNotScalar {
                    rows: lv.nrows(),
                    cols: lv.ncols(),
                });
            }
        }
        self.backward_done.set(true);

        let n = nodes.len();
        // Adjoint buffers for every node that participates in the backward
        // sweep; requires_grad nodes always get one so unreached leaves still
        // report zero gradients.
        let mut adj: Vec<Option<Array2<f64>>> = (0..n)
            .map(|i| {
                if nodes[i].requires_grad {
                    Some(Array2::zeros(nodes[i].value.dim()))
                } else {
                    None
                }
            })
            .collect();
        if let Some(a) = adj[loss.id].as_mut() {
            a[(0, 0)] = 1.0;
        } else {
            // Loss may legitimately not require gradients (all-constant graph).
            for node in nodes.iter_mut() {
                if node.requires_grad {
                    node.grad = Some(Array2::zeros(node.value.dim()));
                }
            }
            return Ok(());
        }

        for id in (0..n).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            // Macro-free accumulation helper: readd below via closure over adj.
            let accumulate = |target: usize,
                                  contribution: Array2<f64>,
                                  nodes: &Vec<Node>,
                                  adj: &mut Vec<Option<Array2<f64>>>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match adj[target].as_mut() {
                    Some(buf) => *buf += &contribution,
                    None => adj[target] = Some(contribution),
                }
            };

            match &nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.dot(&nodes[b].value.t());
                    let gb = nodes[a].value.t().dot(&g);
                    accumulate(a, ga, &nodes, &mut adj);
                    accumulate(b, gb, &nodes, &mut adj);
                }
                Op::LinearConst { map, x } => {
                    let x = *x;
                    let gx = map.apply_transpose(&g);
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(a, g.clone(), &nodes, &mut adj);
                    accumulate(b, g.clone(), &nodes, &mut adj);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(a, g.clone(), &nodes, &mut adj);
                    accumulate(b, -&g, &nodes, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = &g * &nodes[b].value;
                    let gb = &g * &nodes[a].value;
                    accumulate(a, ga, &nodes, &mut adj);
                    accumulate(b, gb, &nodes, &mut adj);
                }
                Op::AddRowBroadcast { x, row } => {
                    let (x, row) = (*x, *row);
                    accumulate(x, g.clone(), &nodes, &mut adj);
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(row, col_sums, &nodes, &mut adj);
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    accumulate(x, &g * c, &nodes, &mut adj);
                }
                Op::Relu(x) => {
                    let x = *x;
                    let mask = nodes[x].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(x, &g * &mask, &nodes, &mut adj);
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let s = &nodes[id].value;
                    let ds = s * &s.mapv(|v| 1.0 - v);
                    accumulate(x, &g * &ds, &nodes, &mut adj);
                }
                Op::Log(x) => {
                    let x = *x;
                    let gx = &g / &nodes[x].value;
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::Exp(x) => {
                    let x = *x;
                    let gx = &g * &nodes[id].value;
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::RowLayerNorm { x, eps } => {
                    let (x, eps) = (*x, *eps);
                    let gx = layer_norm_backward(&nodes[x].value, &nodes[id].value, &g, eps);
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::RowL2Normalize { x, eps } => {
                    let (x, eps) = (*x, *eps);
                    let vx = &nodes[x].value;
                    let vy = &nodes[id].value;
                    let mut gx = Array2::zeros(vx.dim());
                    for i in 0..vx.nrows() {
                        let xr = vx.row(i);
                        let yr = vy.row(i);
                        let gr = g.row(i);
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let mut out = gx.row_mut(i);
                        if norm > eps {
                            let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..xr.len() {
                                out[j] = (gr[j] - yr[j] * dot) / norm;
                            }
                        } else {
                            for j in 0..xr.len() {
                                out[j] = gr[j] / eps;
                            }
                        }
                    }
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::ScaleRows { x, v } => {
                    let (x, v) = (*x, *v);
                    let vx = &nodes[x].value;
                    let vv = &nodes[v].value;
                    let mut gx = g.clone();
                    for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let s = vv[(i, 0)];
                        row.mapv_inplace(|val| val * s);
                    }
                    let mut gv = Array2::zeros((vx.nrows(), 1));
                    for i in 0..vx.nrows() {
                        gv[(i, 0)] = g
                            .row(i)
                            .iter()
                            .zip(vx.row(i).iter())
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                    accumulate(x, gx, &nodes, &mut adj);
                    accumulate(v, gv, &nodes, &mut adj);
                }
                Op::ConcatColumns(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = nodes[a].value.ncols();
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    accumulate(a, ga, &nodes, &mut adj);
                    accumulate(b, gb, &nodes, &mut adj);
                }
                Op::MeanOverRows(x) => {
                    let x = *x;
                    let n = nodes[x].value.nrows() as f64;
                    let row = g.row(0).mapv(|v| v / n);
                    let gx = Array2::from_shape_fn(nodes[x].value.dim(), |(_, j)| row[j]);
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::SumAll(x) => {
                    let x = *x;
                    let gx = Array2::from_elem(nodes[x].value.dim(), g[(0, 0)]);
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    let mut gx = Array2::zeros(nodes[x].value.dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let src = g.row(k);
                        let mut dst = gx.row_mut(i);
                        dst += &src;
                    }
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::ScatterAddRows { x, idx } => {
                    let x = *x;
                    let mut gx = Array2::zeros(nodes[x].value.dim());
                    for (k, &i) in idx.iter().enumerate() {
                        gx.row_mut(k).assign(&g.row(i));
                    }
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::LogsumexpRows(x) => {
                    let x = *x;
                    let vx = &nodes[x].value;
                    let vy = &nodes[id].value;
                    let mut gx = Array2::zeros(vx.dim());
                    for i in 0..vx.nrows() {
                        let gi = g[(i, 0)];
                        let lse = vy[(i, 0)];
                        for j in 0..vx.ncols() {
                            gx[(i, j)] = gi * (vx[(i, j)] - lse).exp();
                        }
                    }
                    accumulate(x, gx, &nodes, &mut adj);
                }
                Op::Transpose(x) => {
                    let x = *x;
                    accumulate(x, g.t().to_owned(), &nodes, &mut adj);
                }
            }

            if matches!(nodes[id].op, Op::Leaf) {
                nodes[id].grad = Some(g);
            }
        }

        // Leaves that were never visited keep their zero buffers.
        for id in 0..n {
            if nodes[id].requires_grad && nodes[id].grad.is_none() {
                let buf = adj[id]
                    .take()
                    .unwrap_or_else(|| Array2::zeros(nodes[id].value.dim()));
                nodes[id].grad = Some(buf);
            }
        }
        Ok(())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn layer_norm_forward(x: &Array2<f64>, eps: f64) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = Array2::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out[(i, j)] = (v - mean) * inv_std;
        }
    }
    out
}

fn layer_norm_backward(x: &Array2<f64>, y: &Array2<f64>, g: &Array2<f64>, eps: f64) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + eps).sqrt();
        let gr = g.row(i);
        let yr = y.row(i);
        let g_mean = gr.sum() / d;
        let gy_mean = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for j in 0..x.ncols() {
            out[(i, j)] = inv_std * (gr[j] - g_mean - yr[j] * gy_mean);
        }
    }
    out
}

/// A named tensor fed to [`check_gradients`].
pub struct GradCheckParam {
    pub name: String,
    pub value: Array2<f64>,
    pub requires_grad: bool,
}

/// One sampled entry comparison.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    /// Entries exceeding the tolerance, plus non-finite evaluations, each
    /// tagged with the parameter location.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `build_loss` must deterministically rebuild the scalar loss from leaf
/// variables handed over in the same order as `params`. Frozen tensors
/// (`requires_grad = false`) are excluded from the report. The relative
/// error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn check_gradients<F>(
    params: &mut [GradCheckParam],
    build_loss: F,
    h: f64,
    tol: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let eval = |params: &[GradCheckParam]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), false))
            .collect();
        let loss = build_loss(&tape, &vars)?;
        tape.scalar_value(loss)
    };

    // Analytic gradients at the base point.
    let tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.value.clone(), p.requires_grad))
        .collect();
    let loss = build_loss(&tape, &vars)?;
    let base_loss = tape.scalar_value(loss)?;
    tape.backward(loss)?;
    let analytic: Vec<Option<Array2<f64>>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut report = GradCheckReport::default();
    if !base_loss.is_finite() {
        report
            .failures
            .push(format!("loss is non-finite ({base_loss}) at the base point"));
        return Ok(report);
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for pi in 0..params.len() {
        if !params[pi].requires_grad {
            continue;
        }
        let (rows, cols) = params[pi].value.dim();
        let numel = rows * cols;
        if numel == 0 {
            continue;
        }
        let mut indices: Vec<usize> = (0..numel).collect();
        indices.shuffle(&mut rng);
        indices.truncate(samples_per_tensor.min(numel));

        let grad = analytic[pi]
            .as_ref()
            .expect("requires_grad params have gradients after backward")
            .clone();
        for flat in indices {
            let (r, c) = (flat / cols, flat % cols);
            let original = params[pi].value[(r, c)];

            params[pi].value[(r, c)] = original + h;
            let f_plus = eval(params)?;
            params[pi].value[(r, c)] = original - h;
            let f_minus = eval(params)?;
            params[pi].value[(r, c)] = original;

            let location = format!("{}[{},{}]", params[pi].name, r, c);
            if !f_plus.is_finite() || !f_minus.is_finite() {
                report
                    .failures
                    .push(format!("non-finite loss while perturbing {location}"));
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = grad[(r, c)];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
            }
            if rel_err > tol {
                report.failures.push(format!(
                    "{location}: analytic {a:.6e} vs numeric {numeric:.6e} (rel err {rel_err:.3e})"
                ));
            }
            report.entries.push(GradCheckEntry {
                tensor: params[pi].name.clone(),
                row: r,
                col: c,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    Ok(report)
}
