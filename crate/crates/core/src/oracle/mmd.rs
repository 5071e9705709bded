use super::OracleError;
use crate::kernel::Kernel;

fn check_dims<V: AsRef<[f64]>>(a: &[V], b: &[V]) -> Result<usize, OracleError> {
    if a.is_empty() || b.is_empty() {
        return Err(OracleError::EmptySample);
    }
    let dim = a[0].as_ref().len();
    for v in a.iter().chain(b) {
        if v.as_ref().len() != dim {
            return Err(OracleError::DimensionMismatch(dim, v.as_ref().len()));
        }
    }
    Ok(dim)
}

fn mean_kernel<V: AsRef<[f64]>>(a: &[V], b: &[V], kernel: &Kernel) -> f64 {
    let mut sum = 0.0;
    for u in a {
        for v in b {
            sum += kernel.eval(u.as_ref(), v.as_ref());
        }
    }
    sum / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) squared MMD between two samples, clamped at 0.
pub fn mmd_squared<V: AsRef<[f64]>>(a: &[V], b: &[V], kernel: &Kernel) -> Result<f64, OracleError> {
    check_dims(a, b)?;
    let raw = mean_kernel(a, a, kernel) + mean_kernel(b, b, kernel) - 2.0 * mean_kernel(a, b, kernel);
    Ok(raw.max(0.0))
}

/// Gradient of the unclamped squared MMD with respect to every sample point:
/// returns `(d/da_i, d/db_j)`.
pub fn mmd_squared_grad<V: AsRef<[f64]>>(a: &[V], b: &[V], kernel: &Kernel) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), OracleError> {
    let dim = check_dims(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let side = |own: &[V], other: &[V], n_own: f64, n_other: f64| -> Vec<Vec<f64>> {
        own.iter()
            .map(|u| {
                let u = u.as_ref();
                let mut g = vec![0.0; dim];
                // Each point appears in both slots of the within-sample sum.
                for v in own {
                    kernel.add_grad_first(u, v.as_ref(), 2.0 / (n_own * n_own), &mut g);
                }
                for v in other {
                    kernel.add_grad_first(u, v.as_ref(), -2.0 / (n_own * n_other), &mut g);
                }
                g
            })
            .collect()
    };
    Ok((side(a, b, na, nb), side(b, a, nb, na)))
}
