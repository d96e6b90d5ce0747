use super::graph::{Graph, Var};
use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`, for every entry of every input.
pub fn gradcheck<F>(inputs: &[Matrix], f: F, h: f64) -> GradcheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |xs: &[Matrix]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    let grads = g.backward(out);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        n_checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(inputs[k].rows, inputs[k].cols));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data[i];
            work[k].data[i] = x0 + h;
            let (gp, _, op) = eval(&work);
            work[k].data[i] = x0 - h;
            let (gm, _, om) = eval(&work);
            work[k].data[i] = x0;
            let numeric = (gp.value(op).scalar() - gm.value(om).scalar()) / (2.0 * h);
            let a = analytic.data[i];
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report
                .max_rel_error
                .max(abs / a.abs().max(numeric.abs()).max(1e-4));
            report.n_checked += 1;
        }
    }
    report
}
