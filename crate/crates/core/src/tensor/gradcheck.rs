use super::{Graph, ParamId, ParamStore, TensorError, Var};

/// Outcome of a central finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over entries of `|analytic − numeric| / max(1, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares `backward` against central differences for every entry of every
/// parameter in `params`.
///
/// `build` must be deterministic and return a scalar loss node.
pub fn grad_check<E, F>(
    params: &ParamStore<f64>,
    eps: f64,
    build: F,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<f64>) -> Result<Var, E>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let grad = analytic.param(id);
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work, &build)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work, &build)?;
            work.get_mut(id).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite {
                    param: params.name(id).to_string(),
                    index: i,
                }
                .into());
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad[i];
            let rel = (a - numeric).abs() / f64::max(1.0, a.abs() + numeric.abs());
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(params.name(id).to_string());
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn eval<E, F>(params: &ParamStore<f64>, build: &F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<f64>) -> Result<Var, E>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    Ok(g.scalar(loss))
}
