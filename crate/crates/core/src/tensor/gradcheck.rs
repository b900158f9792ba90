use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::Result;

/// Step of the five-point central difference
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub const FD_STEP: f64 = 1e-3;

/// Relative errors below this denominator are measured absolutely. The
/// five-point stencil at `h = 1e-3` carries roughly `1e-12` of truncation
/// and round-off error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of a scalar graph against central finite
/// differences for every entry of every non-frozen parameter.
///
/// `build` must record a computation on the given tape and return the node
/// whose summed value is the objective. It is re-run for each perturbation,
/// so it must be deterministic for fixed parameter values.
pub fn grad_check<F>(params: &ParamStore, tolerance: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let root = build(&mut tape)?;
        tape.backward(root)?
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let root = build(&mut tape)?;
        Ok(tape.value(root).sum())
    };

    let mut scratch = params.clone();
    let mut report = GradCheckReport {
        params: Vec::new(),
        tolerance,
    };
    for id in params.ids() {
        if params.is_frozen(id) {
            continue;
        }
        report.params.push(check_param(&mut scratch, id, analytic.get(id), &eval)?);
    }
    Ok(report)
}

fn check_param(
    scratch: &mut ParamStore,
    id: ParamId,
    analytic: Option<&super::Matrix>,
    eval: &dyn Fn(&ParamStore) -> Result<f64>,
) -> Result<ParamCheck> {
    let mut worst = ParamCheck {
        name: scratch.name(id).to_string(),
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let n = scratch.value(id).data().len();
    for i in 0..n {
        let orig = scratch.value(id).data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            scratch.value_mut(id).data_mut()[i] = orig + offset * FD_STEP;
            eval(scratch)
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        scratch.value_mut(id).data_mut()[i] = orig;

        let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * FD_STEP);
        let a = analytic.map_or(0.0, |g| g.data()[i]);
        let err = relative_error(a, numeric);
        if err > worst.max_rel_error || i == 0 {
            worst.max_rel_error = err;
            worst.worst_index = i;
            worst.analytic = a;
            worst.numeric = numeric;
        }
    }
    Ok(worst)
}
