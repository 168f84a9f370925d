//! Op kinds with their forward values and vector-Jacobian products.

use super::{AutodiffError, Tensor};

/// Axis of a 2-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce down each column.
    Rows,
    /// Reduce across each row.
    Cols,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Input or parameter; no inputs.
    Leaf,
    /// `[r, k] x [k, c] -> [r, c]`.
    MatMul,
    /// Elementwise add. The right operand may also be a `[1, c]` row
    /// broadcast over every row of an `[r, c]` left operand.
    Add,
    /// Elementwise product of equal shapes.
    Mul,
    /// Multiply by a constant.
    Scale(f64),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    /// `log(max(x, floor))`; zero gradient where the floor is active.
    ClampedLog(f64),
    Softmax(Axis),
    LogSoftmax(Axis),
    /// Sum of every entry, producing a `[1, 1]` scalar.
    Sum,
    Concat(Axis),
    /// Selects one row of a matrix as a `[1, c]` row vector.
    RowSelect(usize),
    /// Selects one entry (flat index) as a `[1, 1]` scalar.
    Pick(usize),
    /// Multiplies by a fixed mask (dropout with mask scaling baked in).
    MaskMul(Tensor),
    Transpose,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::ClampedLog(_) => "clamped_log",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum => "sum",
            Op::Concat(_) => "concat",
            Op::RowSelect(_) => "row_select",
            Op::Pick(_) => "pick",
            Op::MaskMul(_) => "mask_mul",
            Op::Transpose => "transpose",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf => Some(0),
            Op::MatMul | Op::Add | Op::Mul => Some(2),
            Op::Concat(_) => None,
            _ => Some(1),
        }
    }
}

fn mismatch(op: &Op, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn need_matrix(op: &Op, t: &Tensor) -> Result<(), AutodiffError> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(AutodiffError::NotAMatrix {
            op: op.name(),
            shape: t.shape().to_vec(),
        })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Iterates the index groups an axis reduction runs over: for `Cols` each
/// group is one row, for `Rows` each group is one column.
fn lanes(shape: &[usize], axis: Axis) -> Vec<Vec<usize>> {
    let (r, c) = (shape[0], shape[1]);
    match axis {
        Axis::Cols => (0..r).map(|i| (0..c).map(|j| i * c + j).collect()).collect(),
        Axis::Rows => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
    }
}

fn softmax_values(x: &Tensor, axis: Axis, log: bool) -> Tensor {
    let mut out = vec![0.0; x.numel()];
    let d = x.data();
    for lane in lanes(x.shape(), axis) {
        let max = lane.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = lane.iter().map(|&i| (d[i] - max).exp()).sum();
        let log_denom = denom.ln();
        for &i in &lane {
            out[i] = if log {
                d[i] - max - log_denom
            } else {
                (d[i] - max).exp() / denom
            };
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Computes the value of `op` applied to `inputs`.
///
/// The result may contain non-finite values (e.g. `log(0)`); the graph
/// checks for that and reports the node.
pub fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: n,
                got: inputs.len(),
            });
        }
    } else if inputs.is_empty() {
        return Err(AutodiffError::Arity {
            op: op.name(),
            expected: 1,
            got: 0,
        });
    }
    match op {
        Op::Leaf => unreachable!("leaf has no inputs and is created directly"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            need_matrix(op, a)?;
            need_matrix(op, b)?;
            if a.cols() != b.rows() {
                return Err(mismatch(op, a, b));
            }
            let (r, k, c) = (a.rows(), a.cols(), b.cols());
            Ok(Tensor::from_parts(
                vec![r, c],
                matmul_raw(a.data(), b.data(), r, k, c),
            ))
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                Ok(zip(a, b, |x, y| x + y))
            } else if a.is_matrix() && b.is_matrix() && b.rows() == 1 && a.cols() == b.cols() {
                let c = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x + b.data()[i % c])
                    .collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), data))
            } else {
                Err(mismatch(op, a, b))
            }
        }
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            Ok(zip(a, b, |x, y| x * y))
        }
        Op::Scale(s) => Ok(map(inputs[0], |x| x * s)),
        Op::Sigmoid => Ok(map(inputs[0], sigmoid)),
        Op::Tanh => Ok(map(inputs[0], f64::tanh)),
        Op::Exp => Ok(map(inputs[0], f64::exp)),
        Op::Log => Ok(map(inputs[0], f64::ln)),
        Op::ClampedLog(floor) => Ok(map(inputs[0], |x| x.max(*floor).ln())),
        Op::Softmax(axis) => {
            need_matrix(op, inputs[0])?;
            Ok(softmax_values(inputs[0], *axis, false))
        }
        Op::LogSoftmax(axis) => {
            need_matrix(op, inputs[0])?;
            Ok(softmax_values(inputs[0], *axis, true))
        }
        Op::Sum => Ok(Tensor::scalar_unchecked(inputs[0].sum())),
        Op::Concat(axis) => {
            for t in inputs {
                need_matrix(op, t)?;
            }
            let first = inputs[0];
            match axis {
                Axis::Rows => {
                    let c = first.cols();
                    let mut data = Vec::new();
                    let mut rows = 0;
                    for t in inputs {
                        if t.cols() != c {
                            return Err(mismatch(op, first, t));
                        }
                        rows += t.rows();
                        data.extend_from_slice(t.data());
                    }
                    Ok(Tensor::from_parts(vec![rows, c], data))
                }
                Axis::Cols => {
                    let r = first.rows();
                    for t in inputs {
                        if t.rows() != r {
                            return Err(mismatch(op, first, t));
                        }
                    }
                    let cols: usize = inputs.iter().map(|t| t.cols()).sum();
                    let mut data = Vec::with_capacity(r * cols);
                    for i in 0..r {
                        for t in inputs {
                            let c = t.cols();
                            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                        }
                    }
                    Ok(Tensor::from_parts(vec![r, cols], data))
                }
            }
        }
        Op::RowSelect(row) => {
            let t = inputs[0];
            need_matrix(op, t)?;
            if *row >= t.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: op.name(),
                    index: *row,
                    len: t.rows(),
                });
            }
            let c = t.cols();
            Ok(Tensor::from_parts(
                vec![1, c],
                t.data()[row * c..(row + 1) * c].to_vec(),
            ))
        }
        Op::Pick(index) => {
            let t = inputs[0];
            if *index >= t.numel() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: op.name(),
                    index: *index,
                    len: t.numel(),
                });
            }
            Ok(Tensor::scalar_unchecked(t.data()[*index]))
        }
        Op::MaskMul(mask) => {
            let t = inputs[0];
            if t.shape() != mask.shape() {
                return Err(mismatch(op, t, mask));
            }
            Ok(zip(t, mask, |x, m| x * m))
        }
        Op::Transpose => {
            let t = inputs[0];
            need_matrix(op, t)?;
            let (r, c) = (t.rows(), t.cols());
            Ok(Tensor::from_parts(
                vec![c, r],
                transpose_raw(t.data(), r, c),
            ))
        }
    }
}

/// Gradients with respect to each input, given the op's inputs, its output
/// and the gradient flowing into the output.
pub(crate) fn vjp(op: &Op, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (r, k, c) = (a.rows(), a.cols(), b.cols());
            // dA = G B^T, dB = A^T G
            let bt = transpose_raw(b.data(), k, c);
            let at = transpose_raw(a.data(), r, k);
            vec![
                Tensor::from_parts(vec![r, k], matmul_raw(grad.data(), &bt, r, c, k)),
                Tensor::from_parts(vec![k, c], matmul_raw(&at, grad.data(), k, r, c)),
            ]
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let db = if a.shape() == b.shape() {
                grad.clone()
            } else {
                let c = b.cols();
                let mut acc = vec![0.0; c];
                for (i, &g) in grad.data().iter().enumerate() {
                    acc[i % c] += g;
                }
                Tensor::from_parts(b.shape().to_vec(), acc)
            };
            vec![grad.clone(), db]
        }
        Op::Mul => vec![
            zip(grad, inputs[1], |g, y| g * y),
            zip(grad, inputs[0], |g, x| g * x),
        ],
        Op::Scale(s) => vec![map(grad, |g| g * s)],
        Op::Sigmoid => vec![zip(grad, output, |g, y| g * y * (1.0 - y))],
        Op::Tanh => vec![zip(grad, output, |g, y| g * (1.0 - y * y))],
        Op::Exp => vec![zip(grad, output, |g, y| g * y)],
        Op::Log => vec![zip(grad, inputs[0], |g, x| g / x)],
        Op::ClampedLog(floor) => vec![zip(grad, inputs[0], |g, x| {
            if x > *floor {
                g / x
            } else {
                0.0
            }
        })],
        Op::Softmax(axis) => {
            let (y, g) = (output.data(), grad.data());
            let mut dx = vec![0.0; y.len()];
            for lane in lanes(output.shape(), *axis) {
                let dot: f64 = lane.iter().map(|&i| g[i] * y[i]).sum();
                for &i in &lane {
                    dx[i] = y[i] * (g[i] - dot);
                }
            }
            vec![Tensor::from_parts(output.shape().to_vec(), dx)]
        }
        Op::LogSoftmax(axis) => {
            let (y, g) = (output.data(), grad.data());
            let mut dx = vec![0.0; y.len()];
            for lane in lanes(output.shape(), *axis) {
                let total: f64 = lane.iter().map(|&i| g[i]).sum();
                for &i in &lane {
                    dx[i] = g[i] - y[i].exp() * total;
                }
            }
            vec![Tensor::from_parts(output.shape().to_vec(), dx)]
        }
        Op::Sum => vec![Tensor::from_parts(
            inputs[0].shape().to_vec(),
            vec![grad.item(); inputs[0].numel()],
        )],
        Op::Concat(axis) => {
            let g = grad.data();
            match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    inputs
                        .iter()
                        .map(|t| {
                            let n = t.numel();
                            let part = g[offset..offset + n].to_vec();
                            offset += n;
                            Tensor::from_parts(t.shape().to_vec(), part)
                        })
                        .collect()
                }
                Axis::Cols => {
                    let total = grad.cols();
                    let mut col_offset = 0;
                    inputs
                        .iter()
                        .map(|t| {
                            let (r, c) = (t.rows(), t.cols());
                            let mut part = Vec::with_capacity(r * c);
                            for i in 0..r {
                                let start = i * total + col_offset;
                                part.extend_from_slice(&g[start..start + c]);
                            }
                            col_offset += c;
                            Tensor::from_parts(t.shape().to_vec(), part)
                        })
                        .collect()
                }
            }
        }
        Op::RowSelect(row) => {
            let t = inputs[0];
            let c = t.cols();
            let mut dx = vec![0.0; t.numel()];
            dx[row * c..(row + 1) * c].copy_from_slice(grad.data());
            vec![Tensor::from_parts(t.shape().to_vec(), dx)]
        }
        Op::Pick(index) => {
            let t = inputs[0];
            let mut dx = vec![0.0; t.numel()];
            dx[*index] = grad.item();
            vec![Tensor::from_parts(t.shape().to_vec(), dx)]
        }
        Op::MaskMul(mask) => vec![zip(grad, mask, |g, m| g * m)],
        Op::Transpose => {
            let (r, c) = (grad.rows(), grad.cols());
            vec![Tensor::from_parts(
                vec![c, r],
                transpose_raw(grad.data(), r, c),
            )]
        }
    }
}

impl Tensor {
    fn scalar_unchecked(v: f64) -> Tensor {
        Tensor::from_parts(vec![1, 1], vec![v])
    }
}
