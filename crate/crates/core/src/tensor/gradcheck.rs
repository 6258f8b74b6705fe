use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients which are
/// analytically zero compare on an absolute scale. It is multiplied by
/// `max(1, |f(p)|)` because the rounding noise of the central difference
/// grows with the magnitude of `f`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
    pub pass: bool,
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences `(f(p + h) − f(p − h)) / 2h`, element by element.
///
/// `f` must be deterministic: it is re-run once per perturbed element, so any
/// randomness inside it has to be frozen by the caller.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let floor = REL_ERR_FLOOR * g.value(loss).item()?.abs().max(1.0);
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
        pass: true,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::NonFinite("grad_check".into()));
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}
