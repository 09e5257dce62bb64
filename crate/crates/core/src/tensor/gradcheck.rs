use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::Result;

/// Largest discrepancy between reverse-mode and central-difference
/// gradients, normalized by the larger of the two gradient magnitudes.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(input), eps, None)
}

/// Checks several inputs at once. With `probes = Some(n)` only about `n`
/// evenly spaced entries of each input are perturbed.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64, probes: Option<usize>) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work = inputs.to_vec();
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for (k, an) in analytic.iter().enumerate() {
        let n = inputs[k].numel();
        let stride = probes.map_or(1, |p| n.div_ceil(p.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = an.data()[i];
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
    }
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}
