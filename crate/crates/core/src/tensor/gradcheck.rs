use super::{Graph, Tensor, TensorError, Var};

/// Compares the reverse-mode gradient of a scalar function against
/// central finite differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over all
/// coordinates of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point), epsilon)
}

/// [`grad_check`] for functions of several tensor arguments; every
/// coordinate of every argument is checked.
pub fn grad_check_many<F>(f: F, points: &[Tensor], epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |args: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = args.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out);

    let mut worst = 0.0f64;
    let mut args = points.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(points[which].shape()));
        for i in 0..points[which].len() {
            let orig = points[which].data()[i];
            args[which].data_mut()[i] = orig + epsilon;
            let plus = eval(&args)?;
            args[which].data_mut()[i] = orig - epsilon;
            let minus = eval(&args)?;
            args[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64, TensorError> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(TensorError::InvalidShape {
            op: "grad_check",
            shape: t.shape().to_vec(),
            reason: "function must return a single value".into(),
        });
    }
    Ok(t.item())
}
