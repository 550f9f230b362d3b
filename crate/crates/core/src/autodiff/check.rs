//! Central finite-difference gradient checking in double precision.

use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Magnitudes below this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_input: usize,
    pub worst_entry: usize,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `eps`, for every entry of every input.
pub fn check_gradients<F>(inputs: &[Matrix<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.ensure_finite()?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_input: 0,
        worst_entry: 0,
        entries_checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zero = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        let analytic = grads.get(*v).unwrap_or(&zero);
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic.data()[j], numeric);
            if !err.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient check diverged at input {k}[{j}]"
                )));
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_input = k;
                report.worst_entry = j;
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
