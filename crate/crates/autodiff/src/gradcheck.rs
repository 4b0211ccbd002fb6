//! Finite-difference gradient verification. The numeric side is an
//! independent oracle: it only ever evaluates the forward pass.

use crate::graph::{Graph, VarId};
use crate::tensor::Tensor;
use crate::Result;

/// Evaluate a scalar-valued graph function on plain tensors.
pub fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[VarId]) -> Result<VarId>,
{
    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<_>>()?;
    let out = f(&mut g, &ids)?;
    Ok(g.value(out).item())
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// at the given inputs. Returns the maximum relative error over all input
/// elements, with the relative error of a pair `(a, n)` defined as
/// `|a - n| / max(|a|, |n|, 1)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[VarId]) -> Result<VarId>,
{
    // Analytic gradients.
    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<_>>()?;
    let out = f(&mut g, &ids)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| g.grad(id)).collect();

    // Central differences, one element at a time.
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let orig = input.data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let plus = eval_scalar(&f, &work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let minus = eval_scalar(&f, &work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti].data()[ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_has_zero_error() {
        let f = |g: &mut Graph, ids: &[VarId]| g.sum(ids[0]);
        let x = Tensor::from_vec(&[3], vec![0.4, -1.2, 2.5]).unwrap();
        let err = grad_check(f, &[x], 1e-4).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }
}
