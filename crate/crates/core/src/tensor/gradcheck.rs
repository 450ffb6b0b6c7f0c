//! Central-difference gradient checking in double precision.

use super::{OpKind, Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference settings. `fault` corrupts one op's backward rule (negative control).
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub epsilon: f64,
    pub tolerance: f64,
    pub fault: Option<OpKind>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-6,
            fault: None,
        }
    }
}

/// Denominator floor of [`relative_error`]. Below it the comparison is effectively
/// absolute: with ε = 1e-5 the central difference of an O(10) loss carries
/// roundoff near 1e-10, which would dominate a coincidentally tiny gradient.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

impl GradCheck {
    /// Checks every element of every input of the scalar function `f`.
    pub fn run<F>(&self, f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.inject_fault(kind);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
            let out = f(&mut t, &vs)?;
            Ok(t.value(out).data()[0])
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            tolerance: self.tolerance,
            passed: true,
        };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let orig = work[i].data()[j];
                work[i].data_mut()[j] = orig + self.epsilon;
                let plus = eval(&work)?;
                work[i].data_mut()[j] = orig - self.epsilon;
                let minus = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((i, j));
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
        report.passed = report.max_rel_error < self.tolerance;
        Ok(report)
    }
}

/// Checks `∂f/∂x` for a single input.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    GradCheck {
        epsilon,
        tolerance,
        fault: None,
    }
    .run(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x))
}
