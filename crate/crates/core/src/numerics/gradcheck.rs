use super::{Graph, NumericsError, Tensor, Var};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all coordinates of all inputs.
    pub max_rel_error: f64,
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
    /// `(input, coordinate)` of the overall worst entry.
    pub worst: (usize, usize),
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with an absolute floor: `|a − n| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Checks the gradient of the scalar built by `build` with respect to each
/// tensor in `inputs` against central differences with step `h`.
pub fn grad_check<E, F>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
{
    grad_check_with(build, inputs, h, |_, _| {})
}

/// [`grad_check`] with a hook that may tamper with analytic gradients.
pub fn grad_check_with<E, F, H>(build: F, inputs: &[Tensor], h: f64, tamper: H) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    H: Fn(usize, &mut Tensor),
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
    for (i, a) in analytic.iter_mut().enumerate() {
        tamper(i, a);
    }

    let eval = |point: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut point: Vec<Tensor> = inputs.to_vec();
    let mut per_input = vec![0.0; inputs.len()];
    let mut worst = (0, 0);
    let mut max_rel_error = 0.0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = point[i].data()[j];
            point[i].data_mut()[j] = orig + h;
            let plus = eval(&point)?;
            point[i].data_mut()[j] = orig - h;
            let minus = eval(&point)?;
            point[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[j], numeric);
            if err > per_input[i] {
                per_input[i] = err;
            }
            if err > max_rel_error {
                max_rel_error = err;
                worst = (i, j);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        worst,
    })
}
