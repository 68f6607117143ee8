use crate::error::{Error, Result};
use crate::numcore::{Matrix, Tape, Var};

/// Compares tape gradients against central finite differences.
///
/// `build` records a scalar loss on a fresh tape given one [`Var`] per
/// parameter. At most `max_entries` entries of each parameter are probed,
/// spread evenly over the matrix. Returns the largest
/// `|analytic − numeric| / max(|analytic|, |numeric|, floor)` seen, where
/// `floor = 1e-6·max(1, |loss|)` sits above the rounding noise of the
/// difference quotient, so entries whose gradient is exactly zero are judged
/// on an absolute scale.
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64, max_entries: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid("eps", format!("must lie in (0, 1e-3], got {eps}")));
    }
    let eval = |ps: &[Matrix]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let base = tape.scalar(out);
    if !base.is_finite() {
        return Err(Error::NonFinite { context: "loss at the unperturbed point".into() });
    }
    let grads = tape.backward(out)?;
    let floor = 1e-6 * base.abs().max(1.0);

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, (p, v)) in params.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, p.shape());
        let n = p.len();
        let stride = (n / max_entries.max(1)).max(1);
        for k in (0..n).step_by(stride) {
            let orig = p.as_slice()[k];
            probe[pi].as_mut_slice()[k] = orig + eps;
            let (t_plus, _, o_plus) = eval(&probe)?;
            probe[pi].as_mut_slice()[k] = orig - eps;
            let (t_minus, _, o_minus) = eval(&probe)?;
            probe[pi].as_mut_slice()[k] = orig;

            let (fp, fm) = (t_plus.scalar(o_plus), t_minus.scalar(o_minus));
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite { context: format!("loss when perturbing parameter {pi}, entry {k}") });
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
