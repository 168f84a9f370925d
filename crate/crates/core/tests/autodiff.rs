use attncorr_core::autodiff::{forward, grad_check, Axis, Graph, NodeId, Op, Tensor};
use proptest::prelude::*;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

/// Contracts an arbitrary output with fixed weights so every entry of the
/// output gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, y: NodeId) -> Result<NodeId, attncorr_core::autodiff::AutodiffError> {
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.7 - 0.37 * i as f64).collect())?;
    let w = g.leaf(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check_unary(op: Op, x: Tensor) -> Result<(), TestCaseError> {
    let report = grad_check(
        |g, ids| {
            let y = g.apply(op.clone(), &[ids[0]])?;
            weighted_sum(g, y)
        },
        &[x],
        EPS,
    )
    .unwrap();
    prop_assert!(report.max_rel_error < TOL, "{}: {report:?}", op.name());
    Ok(())
}

fn check_binary(op: Op, a: Tensor, b: Tensor) -> Result<(), TestCaseError> {
    let report = grad_check(
        |g, ids| {
            let y = g.apply(op.clone(), &[ids[0], ids[1]])?;
            weighted_sum(g, y)
        },
        &[a, b],
        EPS,
    )
    .unwrap();
    prop_assert!(report.max_rel_error < TOL, "{}: {report:?}", op.name());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_unary_ops(x in matrix(2, 3, -3.0, 3.0)) {
        for op in [
            Op::Sigmoid,
            Op::Tanh,
            Op::Exp,
            Op::Scale(-1.7),
            Op::Softmax(Axis::Cols),
            Op::Softmax(Axis::Rows),
            Op::LogSoftmax(Axis::Cols),
            Op::LogSoftmax(Axis::Rows),
            Op::Sum,
            Op::Transpose,
            Op::RowSelect(1),
            Op::Pick(4),
        ] {
            check_unary(op, x.clone())?;
        }
    }

    #[test]
    fn logs_on_positive_inputs(x in matrix(2, 3, 0.05, 4.0)) {
        check_unary(Op::Log, x.clone())?;
        check_unary(Op::ClampedLog(0.01), x)?;
    }

    #[test]
    fn mask_mul(x in matrix(2, 3, -2.0, 2.0), keep in prop::collection::vec(any::<bool>(), 6)) {
        let mask = Tensor::matrix(2, 3, keep.iter().map(|&k| if k { 2.0 } else { 0.0 }).collect()).unwrap();
        check_unary(Op::MaskMul(mask), x)?;
    }

    #[test]
    fn binary_ops(a in matrix(2, 3, -2.0, 2.0), b in matrix(2, 3, -2.0, 2.0), row in matrix(1, 3, -2.0, 2.0)) {
        check_binary(Op::Add, a.clone(), b.clone())?;
        check_binary(Op::Add, a.clone(), row)?;
        check_binary(Op::Mul, a.clone(), b.clone())?;
        check_binary(Op::Concat(Axis::Rows), a.clone(), b.clone())?;
        check_binary(Op::Concat(Axis::Cols), a, b)?;
    }

    #[test]
    fn matmul(a in matrix(2, 4, -2.0, 2.0), b in matrix(4, 3, -2.0, 2.0)) {
        check_binary(Op::MatMul, a, b)?;
    }

    #[test]
    fn composed_graph(x in matrix(1, 4, -2.0, 2.0), w in matrix(4, 4, -1.0, 1.0)) {
        // tanh(x W) fed through a softmax and a log, reusing x twice
        let report = grad_check(
            |g, ids| {
                let h = g.matmul(ids[0], ids[1])?;
                let t = g.tanh(h)?;
                let s = g.add(t, ids[0])?;
                let p = g.softmax(s, Axis::Cols)?;
                let l = g.log(p)?;
                weighted_sum(g, l)
            },
            &[x, w],
            EPS,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < TOL, "{report:?}");
    }

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(3, 5, -50.0, 50.0)) {
        let y = forward(&Op::Softmax(Axis::Cols), &[&x]).unwrap();
        for r in 0..3 {
            let s: f64 = (0..5).map(|c| y.get(r, c)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!((0..5).all(|c| y.get(r, c) >= 0.0));
        }
        let ly = forward(&Op::LogSoftmax(Axis::Cols), &[&x]).unwrap();
        for (a, b) in y.data().iter().zip(ly.data()) {
            prop_assert!((a.ln() - b).abs() < 1e-9 || *a < 1e-300);
        }
    }
}
