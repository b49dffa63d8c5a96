//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Denominator floor in the relative error.
    pub floor: f64,
    /// Check at most this many evenly spaced elements of each input.
    pub max_elements_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-8,
            max_elements_per_input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], with_grad: bool) -> Result<(Tape<f64>, Var, Vec<Var>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if with_grad { tape.variable(t) } else { tape.constant(t) })
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(TensorError::InvalidArgument {
            op: "finite_difference_check",
            msg: format!("closure must return a scalar, got shape {:?}", tape.shape(out)),
        });
    }
    if !tape.item(out).is_finite() {
        return Err(TensorError::NonFinite {
            op: "finite_difference_check",
            index: 0,
        });
    }
    Ok((tape, out, vars))
}

/// Scalar output and reverse-mode gradient for every input (zeros where unreachable).
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, out, vars) = evaluate(f, inputs, true)?;
    let grads = tape.backward(out)?;
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((tape.item(out), per_input))
}

/// Element indices of an input of length `len` that get checked.
pub fn selected_elements(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Central-difference estimate `(f(x+h) − f(x−h)) / 2h` at the given elements of one input.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor<f64>], input: usize, elements: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(elements.len());
    for &e in elements {
        let orig = work[input].data()[e];
        work[input].data_mut()[e] = orig + h;
        let (t, v, _) = evaluate(f, &work, false)?;
        let plus = t.item(v);
        work[input].data_mut()[e] = orig - h;
        let (t, v, _) = evaluate(f, &work, false)?;
        let minus = t.item(v);
        work[input].data_mut()[e] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Worst relative error between analytic and central-difference gradients over all inputs.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&f, inputs)?;
    compare_with_numeric(&f, inputs, &analytic, opts)
}

/// Compare externally supplied analytic gradients with central differences.
pub fn compare_with_numeric<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (i, t) in inputs.iter().enumerate() {
        let elements = selected_elements(t.len(), opts.max_elements_per_input);
        let numeric = numeric_gradient(f, inputs, i, &elements, opts.h)?;
        for (&e, &n) in elements.iter().zip(&numeric) {
            let err = relative_error(analytic[i][e], n, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, e));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact_to_rounding() {
        let x = Tensor::from_f64(vec![4], &[0.5, -1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_f64(vec![4], &[1.5, 2.0, -0.25, 0.75]).unwrap();
        let report = finite_difference_check(
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                Ok(t.sum(y))
            },
            &[x, w],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap();
        assert!(finite_difference_check(|t, v| Ok(t.relu(v[0])), &[x], GradCheckOptions::default()).is_err());
    }

    #[test]
    fn selection_is_evenly_spaced() {
        assert_eq!(selected_elements(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(selected_elements(3, Some(5)), vec![0, 1, 2]);
    }
}
