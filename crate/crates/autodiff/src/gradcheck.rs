use crate::error::{AutodiffError, Result};
use crate::params::{Bound, ParamSet};
use crate::tape::{Tape, Var};

/// Worst finite-difference disagreement found for one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> Result<f64> {
    tape.value(v)
        .item()
        .ok_or_else(|| AutodiffError::NonScalarLoss(tape.shape(v).to_vec()))
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(θ+eps) - f(θ-eps)) / 2eps` for every scalar of every parameter.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`.
/// `f` must be deterministic (dropout disabled).
pub fn grad_check<Fun>(params: &ParamSet<f64>, f: Fun, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut analytic = params.clone();
    let mut tape = Tape::new();
    let bound = tape.bind(&analytic);
    let loss = f(&mut tape, &bound)?;
    tape.backward(loss, &mut analytic)?;

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let bound = tape.bind(p);
        let v = f(&mut tape, &bound)?;
        scalar_of(&tape, v)
    };

    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for id in params.ids() {
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..params.value(id).numel() {
            let orig = params.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.grad(id).data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > check.max_rel_error || j == 0 {
                check.max_rel_error = rel;
                check.worst_index = j;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        entries.push(check);
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_error,
        tol,
    })
}
