//! Central finite-difference gradient checks in 64-bit mode.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const STEP: f64 = 1e-4;

/// Denominator floor so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares tape gradients of `f` at `inputs` against central differences.
///
/// `f` builds a scalar from leaves registered in the same order as
/// `inputs`. Inputs with `requires_grad == false` are treated as constants.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        if !x.requires_grad {
            continue;
        }
        let zeros = vec![0.0; x.numel()];
        let analytic = tape.grad(vars[i]).unwrap_or(&zeros).to_vec();
        for j in 0..x.numel() {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err || report.checked == 1 {
                report = GradCheck {
                    max_rel_err: rel,
                    worst: (i, j),
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
