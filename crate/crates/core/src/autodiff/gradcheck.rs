use super::{AutodiffError, Graph, NodeId, Tensor};

/// Largest number of parameter entries [`grad_check`] will perturb.
pub const MAX_CHECK_ENTRIES: usize = 10_000;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(param index, flat entry)` where the max was attained.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares backward-pass gradients of a scalar function against central
/// finite differences.
///
/// `f` receives a fresh graph and one leaf per parameter, and returns the
/// scalar loss node. It is invoked `1 + 2 * entries` times.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(AutodiffError::InvalidArgument(format!(
            "grad_check eps must lie in (0, 1e-2], got {eps}"
        )));
    }
    let entries: usize = params.iter().map(Tensor::numel).sum();
    if entries > MAX_CHECK_ENTRIES {
        return Err(AutodiffError::InvalidArgument(format!(
            "grad_check over {entries} entries exceeds {MAX_CHECK_ENTRIES}"
        )));
    }

    let eval = |values: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let v = g.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    };

    let analytic: Vec<Tensor> = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let grads = g.backward(loss)?;
        ids.iter().map(|&id| grads.get(id)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for e in 0..params[p].numel() {
            let orig = params[p].data()[e];
            work[p].set_flat(e, orig + eps);
            let plus = eval(&work)?;
            work[p].set_flat(e, orig - eps);
            let minus = eval(&work)?;
            work[p].set_flat(e, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[e];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_sum() {
        let x = Tensor::row(vec![0.3, -0.8, 1.1]).unwrap();
        let report = grad_check(
            |g, p| {
                let s = g.sum(p[0])?;
                g.sigmoid(s)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::matrix(2, 2, vec![0.5, -1.5, 2.0, 0.25]).unwrap();
        let report = grad_check(
            |g, p| {
                let s = g.scale(p[0], 3.0)?;
                g.sum(s)
            },
            &[w],
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::scalar(1.0);
        for eps in [0.0, -1e-4, 0.1] {
            assert!(grad_check(|g, p| g.sum(p[0]), std::slice::from_ref(&x), eps).is_err());
        }
    }

    #[test]
    fn reports_non_finite_node() {
        let x = Tensor::scalar(0.0);
        let err = grad_check(|g, p| g.log(p[0]), &[x], 1e-4).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { node: 1, .. }));
    }
}
