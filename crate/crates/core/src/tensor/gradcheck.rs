use super::{DiffTensor, Tape, Var};
use crate::error::Result;

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the backward gradient of `f` with respect to every element of
/// `params` against central finite differences of step `step`. The numeric
/// side only evaluates forward values, so it is independent of the adjoint
/// code it checks.
pub fn check_gradients<F>(
    params: &mut [DiffTensor],
    step: f64,
    abs_floor: f64,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(v, p)| {
            tape.grad(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let eval = |params: &[DiffTensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.bind(params);
        let root = f(&mut tape, &vars)?;
        Ok(tape.scalar(root))
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..params.len() {
        if !params[i].requires_grad() {
            continue;
        }
        for (j, &a) in analytic[i].iter().enumerate() {
            let orig = params[i].values()[j];
            params[i].values_mut()[j] = orig + step;
            let up = eval(params)?;
            params[i].values_mut()[j] = orig - step;
            let down = eval(params)?;
            params[i].values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(abs_floor);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
