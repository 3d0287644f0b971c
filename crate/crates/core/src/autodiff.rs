//! Reverse-mode differentiation over dense rank-2 f64 tensors.
//!
//! A [`Tape`] records every operation whose result may need a gradient;
//! [`Tape::backward`] replays the records in reverse and accumulates
//! gradients into the `requires_grad` leaves. Values are immutable once
//! created, so reading them concurrently is safe; a tape itself is
//! single-threaded.
//!
//! Conventions baked into the backward rules:
//! - relu / clamp_min_zero use subgradient 0 at the kink,
//! - sqrt uses gradient 0 at input 0 (valid subgradient for the norm
//!   composites it serves here),
//! - max-style reductions break ties toward the lowest row index,
//! - atan2 at the origin is rejected in the forward pass.

use crate::error::{Error, Result};

/// Dense row-major rank-2 value. All activations and parameters use this.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "tensor_new",
                detail: format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// Build from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "tensor_from_rows",
                    detail: format!("ragged rows: {} vs {}", row.len(), c),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Broadcast mode resolved at op-creation time for add/sub/mul.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    None,
    /// Left operand is 1x1.
    ScalarLeft,
    /// Right operand is 1x1.
    ScalarRight,
    /// Left operand is a 1xC row repeated over the right's rows.
    RowLeft,
    /// Right operand is a 1xC row repeated over the left's rows.
    RowRight,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Matmul(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// Column-wise max over all rows; saves the winning row per column.
    MaxOverRows(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Vec<usize>),
    /// Row-group max; `arg` saves the winning source row per (group, col), -1 for empty.
    ScatterMax { src: Var, arg: Vec<i64>, src_rows: usize },
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Sin(Var),
    Cos(Var),
    Atan2(Var, Var),
    Transpose(Var),
    SliceCols(Var, usize, usize),
    /// Sum over rows of -ln(max(p[r, label_r], 1e-12)).
    CrossEntropyRows(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    /// Leaf flag: gradient requested by the caller.
    requires_grad: bool,
    /// Whether any gradient must flow through this node.
    needs_grad: bool,
}

/// Gradients returned by [`Tape::backward`], indexed by the consumed tape's vars.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a `requires_grad` leaf. Leaves that did
    /// not participate in the loss get an all-zero gradient.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Probability floor used by the cross-entropy primitive.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Records a forward computation for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input value. Gradients are produced only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, requires_grad)
    }

    /// Register a constant (never receives a gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn bcast_for(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ar, ac) = self.shape_of(a);
        let (br, bc) = self.shape_of(b);
        if ar == br && ac == bc {
            Ok(Bcast::None)
        } else if ar == 1 && ac == 1 {
            Ok(Bcast::ScalarLeft)
        } else if br == 1 && bc == 1 {
            Ok(Bcast::ScalarRight)
        } else if ar == 1 && ac == bc {
            Ok(Bcast::RowLeft)
        } else if br == 1 && bc == ac {
            Ok(Bcast::RowRight)
        } else {
            Err(Error::ShapeMismatch { op, detail: format!("{}x{} vs {}x{}", ar, ac, br, bc) })
        }
    }

    fn ew2(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let bc = self.bcast_for(opname, a, b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (rows, cols) = match bc {
            Bcast::None | Bcast::RowRight | Bcast::ScalarRight => av.shape(),
            Bcast::ScalarLeft | Bcast::RowLeft => bv.shape(),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = match bc {
                    Bcast::ScalarLeft => av.data[0],
                    Bcast::RowLeft => av.data[c],
                    _ => av.data[r * cols + c],
                };
                let y = match bc {
                    Bcast::ScalarRight => bv.data[0],
                    Bcast::RowRight => bv.data[c],
                    _ => bv.data[r * cols + c],
                };
                data.push(f(x, y));
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { rows, cols, data }, mk(a, b, bc), false, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew2("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew2("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ew2("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Multiply by a compile-time scalar (recorded as mul with a constant leaf).
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::scalar(c));
        self.mul(a, k)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape_of(a);
        let (kb, n) = self.shape_of(b);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} vs {}x{}", m, ka, kb, n),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, &mut out, m, ka, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { rows: m, cols: n, data: out }, Op::Matmul(a, b), false, needs))
    }

    fn ew1(&mut self, x: Var, f: impl Fn(f64) -> f64, mk: impl Fn(Var) -> Op) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().map(|&v| f(v)).collect(),
        };
        let needs = self.needs(x);
        self.push(out, mk(x), false, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.ew1(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu)
    }

    /// Same computation as [`Tape::relu`]; named form used by hinge penalties.
    pub fn clamp_min_zero(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.ew1(x, |v| v * v, Op::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.ew1(x, f64::sqrt, Op::Sqrt)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.ew1(x, f64::sin, Op::Sin)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.ew1(x, f64::cos, Op::Cos)
    }

    /// Elementwise atan2(y, x); rejected where both arguments vanish.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        let (yr, yc) = self.shape_of(y);
        let (xr, xc) = self.shape_of(x);
        if (yr, yc) != (xr, xc) {
            return Err(Error::ShapeMismatch {
                op: "atan2",
                detail: format!("{}x{} vs {}x{}", yr, yc, xr, xc),
            });
        }
        let yv = &self.nodes[y.0].value;
        let xv = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(yv.data.len());
        for (a, b) in yv.data.iter().zip(xv.data.iter()) {
            if a.abs() < 1e-30 && b.abs() < 1e-30 {
                return Err(Error::Atan2Origin);
            }
            data.push(a.atan2(*b));
        }
        let needs = self.needs(y) || self.needs(x);
        Ok(self.push(Tensor { rows: yr, cols: yc, data }, Op::Atan2(y, x), false, needs))
    }

    /// Softmax applied independently to each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv.data[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                data[r * cols + j] = e;
                sum += e;
            }
            for j in 0..cols {
                data[r * cols + j] /= sum;
            }
        }
        let needs = self.needs(x);
        self.push(Tensor { rows, cols, data }, Op::SoftmaxRows(x), false, needs)
    }

    /// Column-wise max over all rows -> 1xC. Ties go to the lowest row.
    pub fn max_over_rows(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let mut out = vec![f64::NEG_INFINITY; cols];
        let mut arg = vec![0usize; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = xv.data[r * cols + c];
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
        let needs = self.needs(x);
        self.push(Tensor { rows: 1, cols, data: out }, Op::MaxOverRows(x, arg), false, needs)
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = widen columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::InvalidArgument {
                op: "concat",
                detail: format!("{} parts, axis {}", parts.len(), axis),
            });
        }
        let shapes: Vec<(usize, usize)> = parts.iter().map(|p| self.shape_of(*p)).collect();
        let (out, rows, cols) = if axis == 0 {
            let cols = shapes[0].1;
            if shapes.iter().any(|s| s.1 != cols) {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("{:?}", shapes),
                });
            }
            let rows: usize = shapes.iter().map(|s| s.0).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                out.extend_from_slice(&self.nodes[p.0].value.data);
            }
            (out, rows, cols)
        } else {
            let rows = shapes[0].0;
            if shapes.iter().any(|s| s.0 != rows) {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("{:?}", shapes),
                });
            }
            let cols: usize = shapes.iter().map(|s| s.1).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (p, s) in parts.iter().zip(shapes.iter()) {
                    let d = &self.nodes[p.0].value.data[r * s.1..(r + 1) * s.1];
                    out.extend_from_slice(d);
                }
            }
            (out, rows, cols)
        };
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor { rows, cols, data: out }, Op::Concat(parts.to_vec(), axis), false, needs))
    }

    /// out[r, :] = x[idx[r], :]
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument {
                op: "gather_rows",
                detail: format!("index {} out of {} rows", bad, rows),
            });
        }
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&xv.data[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor { rows: idx.len(), cols, data: out },
            Op::GatherRows(x, idx.to_vec()),
            false,
            needs,
        ))
    }

    /// Group rows of `src` by `groups[r]` and take the columnwise max within
    /// each group; groups with no member produce zeros. Ties go to the lowest
    /// source row.
    pub fn scatter_max(&mut self, src: Var, groups: &[usize], n_groups: usize) -> Result<Var> {
        let sv = &self.nodes[src.0].value;
        let (rows, cols) = sv.shape();
        if groups.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "scatter_max",
                detail: format!("{} group ids for {} rows", groups.len(), rows),
            });
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= n_groups) {
            return Err(Error::InvalidArgument {
                op: "scatter_max",
                detail: format!("group {} out of {}", bad, n_groups),
            });
        }
        let mut out = vec![f64::NEG_INFINITY; n_groups * cols];
        let mut arg = vec![-1i64; n_groups * cols];
        for r in 0..rows {
            let g = groups[r];
            for c in 0..cols {
                let v = sv.data[r * cols + c];
                if v > out[g * cols + c] {
                    out[g * cols + c] = v;
                    arg[g * cols + c] = r as i64;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(arg.iter()) {
            if *a < 0 {
                *o = 0.0;
            }
        }
        let needs = self.needs(src);
        Ok(self.push(
            Tensor { rows: n_groups, cols, data: out },
            Op::ScatterMax { src, arg, src_rows: rows },
            false,
            needs,
        ))
    }

    /// Sum of all entries -> 1x1.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), false, needs)
    }

    /// Mean of all entries -> 1x1.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s: f64 = v.data.iter().sum();
        let n = v.data.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), false, needs)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = xv.data[r * cols + c];
            }
        }
        let needs = self.needs(x);
        self.push(Tensor { rows: cols, cols: rows, data: out }, Op::Transpose(x), false, needs)
    }

    /// Columns [start, end) of x.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        if start >= end || end > cols {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                detail: format!("[{}, {}) of {} cols", start, end, cols),
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&xv.data[r * cols + start..r * cols + end]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor { rows, cols: w, data: out }, Op::SliceCols(x, start, end), false, needs))
    }

    /// Sum over rows of -ln(max(p[r, labels[r]], 1e-12)) -> 1x1.
    pub fn cross_entropy_rows(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = &self.nodes[probs.0].value;
        let (rows, cols) = pv.shape();
        if labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_rows",
                detail: format!("{} labels for {} rows", labels.len(), rows),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::InvalidArgument {
                op: "cross_entropy_rows",
                detail: format!("label {} out of {} classes", bad, cols),
            });
        }
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            total -= pv.data[r * cols + l].max(CE_PROB_FLOOR).ln();
        }
        let needs = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropyRows(probs, labels.to_vec()),
            false,
            needs,
        ))
    }

    /// Reverse pass from a scalar loss. Consumes the tape; gradients for
    /// every `requires_grad` leaf are returned (zeros when the leaf did not
    /// reach the loss).
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.rows, lv.cols));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut add_into = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, contrib: &[f64]| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                let slot = grads[v.0]
                    .get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.data.len()]);
                for (s, c) in slot.iter_mut().zip(contrib.iter()) {
                    *s += c;
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b, bc) => {
                    self.bcast_back(&mut add_into, &mut grads, *a, &g, node, BcSide::Left(*bc), 1.0);
                    self.bcast_back(&mut add_into, &mut grads, *b, &g, node, BcSide::Right(*bc), 1.0);
                }
                Op::Sub(a, b, bc) => {
                    self.bcast_back(&mut add_into, &mut grads, *a, &g, node, BcSide::Left(*bc), 1.0);
                    self.bcast_back(&mut add_into, &mut grads, *b, &g, node, BcSide::Right(*bc), -1.0);
                }
                Op::Mul(a, b, bc) => {
                    let (rows, cols) = node.value.shape();
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.nodes[a.0].needs_grad {
                        let mut contrib = vec![0.0; rows * cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                let y = match bc {
                                    Bcast::ScalarRight => bv.data[0],
                                    Bcast::RowRight => bv.data[c],
                                    _ => bv.data[r * cols + c],
                                };
                                contrib[r * cols + c] = g[r * cols + c] * y;
                            }
                        }
                        self.bcast_back(&mut add_into, &mut grads, *a, &contrib, node, BcSide::Left(*bc), 1.0);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut contrib = vec![0.0; rows * cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                let x = match bc {
                                    Bcast::ScalarLeft => av.data[0],
                                    Bcast::RowLeft => av.data[c],
                                    _ => av.data[r * cols + c],
                                };
                                contrib[r * cols + c] = g[r * cols + c] * x;
                            }
                        }
                        self.bcast_back(&mut add_into, &mut grads, *b, &contrib, node, BcSide::Right(*bc), 1.0);
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape_of(*a);
                    let (_, nn) = self.shape_of(*b);
                    if self.nodes[a.0].needs_grad {
                        // dA = dC . B^T; materializing B^T keeps the fast
                        // row-major kernel in play.
                        let bt = transpose_buf(&self.nodes[b.0].value.data, k, nn);
                        let mut da = vec![0.0; m * k];
                        matmul_nn(&g, &bt, &mut da, m, nn, k);
                        add_into(&mut grads, *a, &da);
                    }
                    if self.nodes[b.0].needs_grad {
                        // dB = A^T . dC
                        let mut db = vec![0.0; k * nn];
                        matmul_tn(&self.nodes[a.0].value.data, &g, &mut db, m, k, nn);
                        add_into(&mut grads, *b, &db);
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let contrib: Vec<f64> = xv
                        .data
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gg)| if v > 0.0 { gg } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let contrib: Vec<f64> =
                        xv.data.iter().zip(g.iter()).map(|(&v, &gg)| 2.0 * v * gg).collect();
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Sqrt(x) => {
                    let xv = &self.nodes[x.0].value;
                    let contrib: Vec<f64> = xv
                        .data
                        .iter()
                        .zip(g.iter())
                        .map(|(&v, &gg)| if v > 0.0 { gg * 0.5 / v.sqrt() } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Sin(x) => {
                    let xv = &self.nodes[x.0].value;
                    let contrib: Vec<f64> =
                        xv.data.iter().zip(g.iter()).map(|(&v, &gg)| v.cos() * gg).collect();
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Cos(x) => {
                    let xv = &self.nodes[x.0].value;
                    let contrib: Vec<f64> =
                        xv.data.iter().zip(g.iter()).map(|(&v, &gg)| -v.sin() * gg).collect();
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Atan2(y, x) => {
                    let yv = &self.nodes[y.0].value;
                    let xv = &self.nodes[x.0].value;
                    if self.nodes[y.0].needs_grad {
                        let contrib: Vec<f64> = yv
                            .data
                            .iter()
                            .zip(xv.data.iter())
                            .zip(g.iter())
                            .map(|((&yy, &xx), &gg)| gg * xx / (xx * xx + yy * yy))
                            .collect();
                        add_into(&mut grads, *y, &contrib);
                    }
                    if self.nodes[x.0].needs_grad {
                        let contrib: Vec<f64> = yv
                            .data
                            .iter()
                            .zip(xv.data.iter())
                            .zip(g.iter())
                            .map(|((&yy, &xx), &gg)| -gg * yy / (xx * xx + yy * yy))
                            .collect();
                        add_into(&mut grads, *x, &contrib);
                    }
                }
                Op::SoftmaxRows(x) => {
                    let yv = &node.value;
                    let (rows, cols) = yv.shape();
                    let mut contrib = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yrow = &yv.data[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yrow.iter().zip(grow.iter()).map(|(&y, &gg)| y * gg).sum();
                        for c in 0..cols {
                            contrib[r * cols + c] = yrow[c] * (grow[c] - dot);
                        }
                    }
                    add_into(&mut grads, *x, &contrib);
                }
                Op::MaxOverRows(x, arg) => {
                    let (_, cols) = self.shape_of(*x);
                    let xrows = self.shape_of(*x).0;
                    let mut contrib = vec![0.0; xrows * cols];
                    for c in 0..cols {
                        contrib[arg[c] * cols + c] += g[c];
                    }
                    add_into(&mut grads, *x, &contrib);
                }
                Op::Concat(parts, axis) => {
                    let mut row_off = 0usize;
                    let mut col_off = 0usize;
                    let (_, out_cols) = node.value.shape();
                    for p in parts {
                        let (pr, pc) = self.shape_of(*p);
                        if self.nodes[p.0].needs_grad {
                            let mut contrib = vec![0.0; pr * pc];
                            if *axis == 0 {
                                contrib.copy_from_slice(&g[row_off * pc..(row_off + pr) * pc]);
                            } else {
                                for r in 0..pr {
                                    contrib[r * pc..(r + 1) * pc].copy_from_slice(
                                        &g[r * out_cols + col_off..r * out_cols + col_off + pc],
                                    );
                                }
                            }
                            add_into(&mut grads, *p, &contrib);
                        }
                        row_off += pr;
                        col_off += pc;
                    }
                }
                Op::GatherRows(x, idx) => {
                    let (xr, cols) = self.shape_of(*x);
                    let mut contrib = vec![0.0; xr * cols];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            contrib[i * cols + c] += g[r * cols + c];
                        }
                    }
                    add_into(&mut grads, *x, &contrib);
                }
                Op::ScatterMax { src, arg, src_rows } => {
                    let (_, cols) = node.value.shape();
                    let mut contrib = vec![0.0; src_rows * cols];
                    for (gi, &a) in arg.iter().enumerate() {
                        if a >= 0 {
                            let col = gi % cols;
                            contrib[(a as usize) * cols + col] += g[gi];
                        }
                    }
                    add_into(&mut grads, *src, &contrib);
                }
                Op::Sum(x) => {
                    let xlen = self.nodes[x.0].value.data.len();
                    add_into(&mut grads, *x, &vec![g[0]; xlen]);
                }
                Op::Mean(x) => {
                    let xlen = self.nodes[x.0].value.data.len();
                    add_into(&mut grads, *x, &vec![g[0] / xlen as f64; xlen]);
                }
                Op::Transpose(x) => {
                    let (xr, xc) = self.shape_of(*x);
                    let mut contrib = vec![0.0; xr * xc];
                    for r in 0..xr {
                        for c in 0..xc {
                            contrib[r * xc + c] = g[c * xr + r];
                        }
                    }
                    add_into(&mut grads, *x, &contrib);
                }
                Op::SliceCols(x, start, _end) => {
                    let (xr, xc) = self.shape_of(*x);
                    let (_, w) = node.value.shape();
                    let mut contrib = vec![0.0; xr * xc];
                    for r in 0..xr {
                        for c in 0..w {
                            contrib[r * xc + start + c] = g[r * w + c];
                        }
                    }
                    add_into(&mut grads, *x, &contrib);
                }
                Op::CrossEntropyRows(p, labels) => {
                    let pv = &self.nodes[p.0].value;
                    let (rows, cols) = pv.shape();
                    let mut contrib = vec![0.0; rows * cols];
                    for (r, &l) in labels.iter().enumerate() {
                        let v = pv.data[r * cols + l];
                        if v > CE_PROB_FLOOR {
                            contrib[r * cols + l] = -g[0] / v;
                        }
                    }
                    add_into(&mut grads, *p, &contrib);
                }
            }
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad {
                let (r, c) = node.value.shape();
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; r * c]);
                out.push(Some(Tensor { rows: r, cols: c, data }));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients { grads: out })
    }

    /// Reduce an output-shaped gradient back to an operand's shape
    /// (identity, row-sum or full-sum depending on the broadcast used),
    /// optionally negating (for sub's right operand).
    #[allow(clippy::too_many_arguments)]
    fn bcast_back(
        &self,
        add_into: &mut impl FnMut(&mut Vec<Option<Vec<f64>>>, Var, &[f64]),
        grads: &mut Vec<Option<Vec<f64>>>,
        v: Var,
        g: &[f64],
        node: &Node,
        side: BcSide,
        sign: f64,
    ) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let (rows, cols) = node.value.shape();
        let reduced = match side.mode() {
            ReduceMode::Identity => g.iter().map(|&x| x * sign).collect::<Vec<f64>>(),
            ReduceMode::SumAll => vec![g.iter().sum::<f64>() * sign],
            ReduceMode::SumRows => {
                let mut acc = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        acc[c] += g[r * cols + c];
                    }
                }
                acc.iter().map(|&x| x * sign).collect()
            }
        };
        add_into(grads, v, &reduced);
    }
}

#[derive(Clone, Copy)]
enum BcSide {
    Left(Bcast),
    Right(Bcast),
}

enum ReduceMode {
    Identity,
    SumAll,
    SumRows,
}

impl BcSide {
    fn mode(self) -> ReduceMode {
        match self {
            BcSide::Left(Bcast::ScalarLeft) | BcSide::Right(Bcast::ScalarRight) => ReduceMode::SumAll,
            BcSide::Left(Bcast::RowLeft) | BcSide::Right(Bcast::RowRight) => ReduceMode::SumRows,
            _ => ReduceMode::Identity,
        }
    }
}

// ---- matmul kernels -------------------------------------------------------

/// C[m,n] = A[m,k] . B[k,n]; processes four A rows at a time so each B row
/// load feeds four accumulating C rows.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    c.fill(0.0);
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, rest) = rest.split_at_mut(n);
        let c3 = &mut rest[..n];
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
        i += 1;
    }
}

pub(crate) fn transpose_buf(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// C[k,n] = A^T . B where A is [m,k], B is [m,n]. The zero skip pays off
/// when A is a relu output (about half the entries vanish).
fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    c.fill(0.0);
    for p in 0..m {
        let brow = &b[p * n..(p + 1) * n];
        for j in 0..k {
            let av = a[p * k + j];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[j * n..(j + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

// ---- numeric gradient checking -------------------------------------------

/// Outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - central| / max(1, |analytic|).
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because one-sided derivatives disagree (kinks).
    pub skipped: usize,
}

/// Compare the tape gradient of a scalar-valued builder `f` against central
/// differences at `x`. Coordinates where the left and right one-sided
/// derivatives disagree (a kink, e.g. relu at exactly zero) are skipped.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.data.len()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates, for parameter
/// tensors too large to probe exhaustively.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument { op: "grad_check", detail: "eps must be positive".into() });
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone(), false);
        let out = f(&mut tape, v)?;
        let val = tape.value(out);
        if !val.is_scalar() {
            return Err(Error::NonScalarLoss(val.rows, val.cols));
        }
        let y = val.scalar_value();
        if y.is_nan() {
            return Err(Error::NonFinite("grad_check forward"));
        }
        Ok(y)
    };

    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let out = f(&mut tape, v)?;
        if !tape.value(out).is_scalar() {
            let (r, c) = tape.value(out).shape();
            return Err(Error::NonScalarLoss(r, c));
        }
        let grads = tape.backward(out)?;
        grads.wrt(v).cloned().expect("leaf requires grad")
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let f0 = eval(x)?;
    let probe = |i: usize, h: f64| -> Result<(f64, f64)> {
        let mut xp = x.clone();
        xp.data[i] += h;
        let fp = eval(&xp)?;
        let mut xm = x.clone();
        xm.data[i] -= h;
        let fm = eval(&xm)?;
        Ok((fp, fm))
    };
    for &i in coords {
        let (fp, fm) = probe(i, eps)?;
        let d_c = (fp - fm) / (2.0 * eps);
        let d_r = (fp - f0) / eps;
        let d_l = (f0 - fm) / eps;
        // One-sided slopes that disagree mean the interval straddles a kink.
        if (d_r - d_l).abs() > 1e-3 * d_r.abs().max(d_l.abs()).max(1.0) {
            skipped += 1;
            continue;
        }
        // Halving the step must not move the estimate; if it does, a small
        // non-smooth feature sits inside the interval. The factor is far
        // above smooth-path noise (O(eps^2 f''') truncation and roundoff).
        let (fp2, fm2) = probe(i, eps / 2.0)?;
        let d_c2 = (fp2 - fm2) / eps;
        if (d_c - d_c2).abs() > 2e-5 * d_c.abs().max(d_c2.abs()).max(1.0) {
            skipped += 1;
            continue;
        }
        let a = analytic.data[i];
        let rel = (a - d_c2).abs() / a.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
        checked += 1;
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked, skipped })
}
