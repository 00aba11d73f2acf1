//! Dense matrices and a reverse-mode gradient tape.
//!
//! The tape records exactly the operation set the model needs: matrix
//! product, weighted scatter aggregation over edge lists, ReLU, column
//! concatenation, row mean, row selection, dropout, and elementwise
//! add/sub/scale. Values are 64-bit floats so finite-difference checks can
//! run at tight tolerances.
//!
//! A [`Tape`] is a single-threaded unit of work: build a forward graph,
//! call [`Tape::backward`] once, read gradients back. Distinct tapes may
//! live on distinct threads.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major 64-bit float matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { rows: r, cols: c, data }
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    fn assert_finite(&self, op: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value after {op}"
        );
    }
}

/// Plain (untracked) matrix product.
pub fn matmul_plain(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape_str(),
            rhs: b.shape_str(),
        });
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            let o_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in o_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    SelectRow(Var, usize),
    Dropout(Var, Vec<f64>),
    Scatter {
        src: Var,
        entries: Vec<(usize, usize, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradient tape. Single-shot: after [`Tape::backward`] runs,
/// further backward calls error; start a fresh tape per forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Tensor>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.assert_finite(match op {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::SelectRow(..) => "select_row",
            Op::Dropout(..) => "dropout",
            Op::Scatter { .. } => "scatter",
        });
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    /// Record a trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Record a fixed input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar convenience accessor for 1x1 values.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!((t.rows, t.cols), (1, 1));
        t.data[0]
    }

    /// Gradient of the last backward pass w.r.t. `v`; zeros if `v` was not
    /// reached from the loss.
    pub fn grad(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_plain(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Matmul(a, b), false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape_str(),
                rhs: tb.shape_str(),
            });
        }
        let mut out = ta.clone();
        for (o, v) in out.data.iter_mut().zip(&tb.data) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: ta.shape_str(),
                rhs: tb.shape_str(),
            });
        }
        let mut out = ta.clone();
        for (o, v) in out.data.iter_mut().zip(&tb.data) {
            *o -= v;
        }
        Ok(self.push(out, Op::Sub(a, b), false))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v += c;
        }
        self.push(out, Op::AddScalar(a), false)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            *v *= c;
        }
        self.push(out, Op::Scale(a, c), false)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(a), false)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape_str(),
                    rhs: t.shape_str(),
                });
            }
            cols += t.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let t = &self.nodes[p.0].value;
                out.data[i * cols + offset..i * cols + offset + t.cols]
                    .copy_from_slice(t.row(i));
                offset += t.cols;
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), false))
    }

    /// Column-wise mean over rows, producing a 1xd row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows as f64;
        let mut out = Tensor::zeros(1, t.cols);
        for i in 0..t.rows {
            for j in 0..t.cols {
                out.data[j] += t.get(i, j);
            }
        }
        for v in out.data.iter_mut() {
            *v /= n;
        }
        self.push(out, Op::MeanRows(a), false)
    }

    pub fn select_row(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.rows {
            return Err(Error::IndexOutOfRange {
                op: "select_row",
                index: i,
                limit: t.rows,
            });
        }
        let out = Tensor::from_vec(1, t.cols, t.row(i).to_vec());
        Ok(self.push(out, Op::SelectRow(a, i), false))
    }

    /// Inverted dropout: zero each element with probability `p` and scale
    /// survivors by `1/(1-p)`. Identity when `training` is off.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidDropout(p));
        }
        if !training || p == 0.0 {
            // Recorded as a pass-through so graph structure is stable.
            let mask = vec![1.0; self.value(a).data.len()];
            let out = self.value(a).clone();
            return Ok(self.push(out, Op::Dropout(a, mask), false));
        }
        let keep = 1.0 - p;
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.data.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
            .collect();
        let mut out = t.clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout(a, mask), false))
    }

    /// Weighted scatter: `out[dst] += weight * src[src_row]` for each
    /// `(dst, src_row, weight)` entry. Realizes normalized neighbor sums
    /// over explicit edge lists.
    pub fn scatter_agg(
        &mut self,
        src: Var,
        entries: &[(usize, usize, f64)],
        out_rows: usize,
    ) -> Result<Var> {
        let t = self.value(src);
        for &(dst, s, w) in entries {
            if dst >= out_rows {
                return Err(Error::IndexOutOfRange {
                    op: "scatter_agg dst",
                    index: dst,
                    limit: out_rows,
                });
            }
            if s >= t.rows {
                return Err(Error::IndexOutOfRange {
                    op: "scatter_agg src",
                    index: s,
                    limit: t.rows,
                });
            }
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "scatter_agg weight {w} is not finite"
                )));
            }
        }
        let cols = t.cols;
        let mut out = Tensor::zeros(out_rows, cols);
        for &(dst, s, w) in entries {
            let src_row = &t.data[s * cols..(s + 1) * cols];
            let dst_row = &mut out.data[dst * cols..(dst + 1) * cols];
            for (o, v) in dst_row.iter_mut().zip(src_row) {
                *o += w * v;
            }
        }
        Ok(self.push(
            out,
            Op::Scatter {
                src,
                entries: entries.to_vec(),
            },
            false,
        ))
    }

    /// Propagate adjoints from a 1x1 loss back to every recorded value.
    /// Gradient accumulation is additive: a value consumed twice receives
    /// the sum of both adjoints.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = self.value(loss);
        if (lt.rows, lt.cols) != (1, 1) {
            return Err(Error::NonScalarLoss(lt.rows, lt.cols));
        }
        self.consumed = true;
        self.grads = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        self.grads[loss.0].data[0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let go = self.grads[id].clone();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = matmul_plain(&go, &self.nodes[b.0].value.transpose())?;
                    let db = matmul_plain(&self.nodes[a.0].value.transpose(), &go)?;
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &go);
                    self.accumulate(b, &go);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &go);
                    let mut neg = go.clone();
                    for v in neg.data.iter_mut() {
                        *v = -*v;
                    }
                    self.accumulate(b, &neg);
                }
                Op::AddScalar(a) => {
                    let a = *a;
                    self.accumulate(a, &go);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let mut g = go.clone();
                    for v in g.data.iter_mut() {
                        *v *= c;
                    }
                    self.accumulate(a, &g);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let mut g = go.clone();
                    for (gv, xv) in g.data.iter_mut().zip(&self.nodes[a.0].value.data) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(a, &g);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = go.rows;
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols;
                        let mut g = Tensor::zeros(rows, pc);
                        for i in 0..rows {
                            g.data[i * pc..(i + 1) * pc]
                                .copy_from_slice(&go.data[i * go.cols + offset..i * go.cols + offset + pc]);
                        }
                        offset += pc;
                        self.accumulate(p, &g);
                    }
                }
                Op::MeanRows(a) => {
                    let a = *a;
                    let src = &self.nodes[a.0].value;
                    let n = src.rows as f64;
                    let mut g = Tensor::zeros(src.rows, src.cols);
                    for i in 0..src.rows {
                        for j in 0..src.cols {
                            g.data[i * src.cols + j] = go.data[j] / n;
                        }
                    }
                    self.accumulate(a, &g);
                }
                Op::SelectRow(a, i) => {
                    let (a, i) = (*a, *i);
                    let src = &self.nodes[a.0].value;
                    let mut g = Tensor::zeros(src.rows, src.cols);
                    g.data[i * src.cols..(i + 1) * src.cols].copy_from_slice(&go.data);
                    self.accumulate(a, &g);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let mut g = go.clone();
                    for (gv, m) in g.data.iter_mut().zip(mask) {
                        *gv *= m;
                    }
                    self.accumulate(a, &g);
                }
                Op::Scatter { src, entries } => {
                    let src = *src;
                    let entries = entries.clone();
                    let cols = go.cols;
                    let src_t = &self.nodes[src.0].value;
                    let mut g = Tensor::zeros(src_t.rows, src_t.cols);
                    for (dst, s, w) in entries {
                        for j in 0..cols {
                            g.data[s * cols + j] += w * go.data[dst * cols + j];
                        }
                    }
                    self.accumulate(src, &g);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: &Tensor) {
        let acc = &mut self.grads[v.0];
        debug_assert!(acc.same_shape(g));
        for (a, b) in acc.data.iter_mut().zip(&g.data) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Smallest |input| over every ReLU recorded on this tape (infinity when
    /// none ran). Finite-difference checks straddle the kink when this is
    /// on the order of the probe step, so harnesses resample such cases.
    pub fn min_relu_input_abs(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &v in &self.nodes[a.0].value.data {
                    min = min.min(v.abs());
                }
            }
        }
        min
    }
}

/// Result of a finite-difference gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Central-difference check of `f`'s gradients w.r.t. every element of every
/// tensor in `params`. `f` must be deterministic (dropout disabled). The
/// numeric side re-runs the forward pass with perturbed inputs, so it is
/// independent of the adjoint code it validates.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    // Analytic gradients at the base point.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).clone()).collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut worst = 0.0f64;
        for j in 0..params[pi].data().len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]);
        let c = matmul_plain(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_passes_gradient_through() {
        let mut tape = Tape::new();
        let id = tape.constant(Tensor::identity(2));
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let y = tape.matmul(id, x).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
        // sum() via mean trick: 1x1 loss built from mean of rows then cols.
        let pooled = tape.mean_rows(y);
        let ones = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let loss = tape.matmul(pooled, ones).unwrap();
        tape.backward(loss).unwrap();
        // d(mean)/dx spreads 1/(rows) per element through identity matmul.
        for &g in tape.grad(x).data() {
            assert!((g - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn scatter_single_entry_copies_row() {
        let mut tape = Tape::new();
        let src = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.scatter_agg(src, &[(0, 1, 1.0)], 2).unwrap();
        assert_eq!(tape.value(out).row(0), &[3.0, 4.0]);
        assert_eq!(tape.value(out).row(1), &[0.0, 0.0]);
    }

    #[test]
    fn scatter_mean_of_two_rows() {
        let mut tape = Tape::new();
        let src = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![4.0, 6.0]]));
        let out = tape
            .scatter_agg(src, &[(0, 0, 0.5), (0, 1, 0.5)], 1)
            .unwrap();
        assert_eq!(tape.value(out).row(0), &[3.0, 3.0]);
    }

    #[test]
    fn scatter_rejects_out_of_range() {
        let mut tape = Tape::new();
        let src = tape.constant(Tensor::zeros(2, 2));
        assert!(tape.scatter_agg(src, &[(5, 0, 1.0)], 2).is_err());
        assert!(tape.scatter_agg(src, &[(0, 5, 1.0)], 2).is_err());
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![-1.0, 2.0]]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let ones = tape.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]));
        let loss = tape.matmul(y, ones).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn mean_rows_of_single_row_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, -3.0, 1.0]]));
        let y = tape.mean_rows(x);
        assert_eq!(tape.value(y).data(), &[5.0, -3.0, 1.0]);
    }

    #[test]
    fn dropout_p_zero_and_eval_mode_are_identity() {
        let x0 = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]);
        let mut rng = rng::stream(0, "dropout");
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone());
        let y = tape.dropout(x, 0.0, &mut rng, true).unwrap();
        assert_eq!(tape.value(y).data(), x0.data());
        let z = tape.dropout(x, 0.9, &mut rng, false).unwrap();
        assert_eq!(tape.value(z).data(), x0.data());
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let mut rng = rng::stream(0, "dropout");
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 4));
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = rng::stream(7, "dropout");
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 1000, vec![1.0; 1000]));
        let y = tape.dropout(x, 0.5, &mut rng, true).unwrap();
        for &v in tape.value(y).data() {
            assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
        }
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 350 && kept < 650, "kept {kept} of 1000 at p=0.5");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(2, 2))));
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0]]));
        tape.backward(x).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::TapeConsumed)));
    }

    #[test]
    fn unreached_tensors_get_zero_grad() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[vec![2.0]]));
        let loss = tape.leaf(Tensor::from_rows(&[vec![1.0]]));
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).data(), &[0.0]);
    }

    #[test]
    fn fan_out_accumulates_adjoints() {
        // loss = x + x => dloss/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![3.0]]));
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).data(), &[2.0]);
    }

    #[test]
    fn sum_of_w_times_x_has_broadcast_gradient() {
        // loss = sum(W·x) with x fixed => grad(W)[i][k] = x[k]
        let x0 = Tensor::from_rows(&[vec![2.0], vec![-1.0], vec![4.0]]);
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[vec![1.0, 1.0, 1.0], vec![0.5, 0.0, -2.0]]));
        let x = tape.constant(x0.clone());
        let wx = tape.matmul(w, x).unwrap();
        let pooled = tape.mean_rows(wx);
        let loss = tape.scale(pooled, 2.0); // mean of 2 rows * 2 = sum
        tape.backward(loss).unwrap();
        for i in 0..2 {
            for k in 0..3 {
                assert!((tape.grad(w).get(i, k) - x0.get(k, 0)).abs() < 1e-12);
            }
        }
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut rng::Rng) -> Tensor {
        Tensor::uniform(rows, cols, 1.0, rng)
    }

    #[test]
    fn matmul_gradcheck_tight() {
        let mut r = rng::stream(11, "gradcheck");
        let a = random_tensor(3, 4, &mut r);
        let b = random_tensor(4, 2, &mut r);
        let report = grad_check(
            |tape, vars| {
                let c = tape.matmul(vars[0], vars[1])?;
                let pooled = tape.mean_rows(c);
                let ones = tape.constant(Tensor::from_vec(2, 1, vec![1.0, 1.0]));
                tape.matmul(pooled, ones)
            },
            &[a, b],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn scatter_gradcheck_tight() {
        let mut r = rng::stream(13, "gradcheck");
        let src = random_tensor(4, 3, &mut r);
        let entries = vec![(0, 1, 0.5), (0, 2, 0.5), (1, 0, 1.0), (1, 3, -0.25)];
        let report = grad_check(
            |tape, vars| {
                let agg = tape.scatter_agg(vars[0], &entries, 2)?;
                let pooled = tape.mean_rows(agg);
                let ones = tape.constant(Tensor::from_vec(3, 1, vec![1.0; 3]));
                tape.matmul(pooled, ones)
            },
            &[src],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn composite_three_layer_gradcheck() {
        // relu(relu(x W1) W2) W3 pooled to a scalar, checked against central
        // differences. Inputs shifted away from relu kinks by construction.
        let mut r = rng::stream(17, "gradcheck");
        let x = random_tensor(5, 4, &mut r);
        let w1 = random_tensor(4, 6, &mut r);
        let w2 = random_tensor(6, 3, &mut r);
        let w3 = random_tensor(3, 1, &mut r);
        let report = grad_check(
            |tape, vars| {
                let x = tape.constant(x.clone());
                let h1 = tape.matmul(x, vars[0])?;
                let h1 = tape.relu(h1);
                let h2 = tape.matmul(h1, vars[1])?;
                let h2 = tape.relu(h2);
                let out = tape.matmul(h2, vars[2])?;
                Ok(tape.mean_rows(out))
            },
            &[w1, w2, w3],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn linear_function_gradcheck_is_exact() {
        let w = Tensor::from_rows(&[vec![0.25, -0.5], vec![1.5, 2.0]]);
        let report = grad_check(
            |tape, vars| {
                let pooled = tape.mean_rows(vars[0]);
                let ones = tape.constant(Tensor::from_vec(2, 1, vec![1.0, 1.0]));
                tape.matmul(pooled, ones)
            },
            &[w],
            1e-4,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }

    #[test]
    fn concat_and_select_row_gradcheck() {
        let mut r = rng::stream(19, "gradcheck");
        let a = random_tensor(3, 2, &mut r);
        let b = random_tensor(3, 3, &mut r);
        let report = grad_check(
            |tape, vars| {
                let cat = tape.concat_cols(&[vars[0], vars[1]])?;
                let row = tape.select_row(cat, 1)?;
                let ones = tape.constant(Tensor::from_vec(5, 1, vec![1.0; 5]));
                tape.matmul(row, ones)
            },
            &[a, b],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error);
    }
}
