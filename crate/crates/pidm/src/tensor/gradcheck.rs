//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, ParamStore, Result, Tensor, TensorError};

/// Compare reverse-mode gradients of `loss_fn` against central finite
/// differences over every entry of every parameter in `store`.
///
/// Returns the max over entries of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
/// A model with no parameters yields 0. `loss_fn` must be deterministic; it
/// is called twice at the base point and an error is raised if the two values
/// differ bitwise.
pub fn gradcheck<F>(loss_fn: F, store: &ParamStore<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Graph<f64>, &ParamStore<f64>) -> Result<Tensor<f64>>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(TensorError::BadEps(eps));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let g = Graph::new();
        let loss = loss_fn(&g, s)?;
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
        }
        Ok(loss.item())
    };

    let base = eval(store)?;
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministic(base, again));
    }

    let analytic = {
        let g = Graph::new();
        let loss = loss_fn(&g, store)?;
        loss.backward(store)?
    };

    let mut scratch = store.clone();
    let mut max_rel: f64 = 0.0;
    let names: Vec<String> = store.names().cloned().collect();
    for name in &names {
        let n = store.get(name).data.len();
        for i in 0..n {
            let orig = scratch.get(name).data[i];
            scratch.get_mut(name).data[i] = orig + eps;
            let up = eval(&scratch)?;
            scratch.get_mut(name).data[i] = orig - eps;
            let down = eval(&scratch)?;
            scratch.get_mut(name).data[i] = orig;
            let g_fd = (up - down) / (2.0 * eps);
            let g_ad = analytic.get(name).data[i];
            let denom = g_ad.abs().max(g_fd.abs()).max(1e-8);
            let rel = (g_ad - g_fd).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
