//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;
use std::fmt;

use crate::diff::Value;
use crate::error::{Error, Result};
use crate::optim::ParameterStore;
use crate::real::Real;

/// Maximum relative gradient error per parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport<T> {
    pub per_tensor: BTreeMap<String, T>,
    pub max_rel_err: T,
    pub tolerance: T,
}

impl<T: Real> GradCheckReport<T> {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl<T: Real> fmt::Display for GradCheckReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, err) in &self.per_tensor {
            writeln!(f, "  {name}: max rel err {err:.3e}")?;
        }
        write!(
            f,
            "  overall: {:.3e} (tolerance {:.1e}) -> {}",
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// Compare the analytic gradient of `loss` against the central difference
/// `(L(p+h) − L(p−h)) / 2h` for every scalar parameter.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// The loss must be a deterministic function of the store's current values;
/// this is probed by evaluating it twice before differencing.
pub fn finite_difference_check<T, F>(
    loss: F,
    params: &ParameterStore<T>,
    step: T,
    tolerance: T,
) -> Result<GradCheckReport<T>>
where
    T: Real,
    F: Fn(&ParameterStore<T>) -> Result<Value<T>>,
{
    if step.is_nan() || step <= T::zero() {
        return Err(Error::InvalidInput(format!("step must be > 0, got {step}")));
    }
    let l0 = loss(params)?.forward_eval()?;
    let l0_again = loss(params)?.forward_eval()?;
    if l0 != l0_again {
        return Err(Error::Contract(format!(
            "loss is not deterministic: {l0} vs {l0_again}"
        )));
    }

    params.zero_grads();
    loss(params)?.backward();
    let analytic: BTreeMap<String, Vec<T>> = params
        .names()
        .map(|n| (n.to_string(), params.get(n).iter().map(|v| v.grad()).collect()))
        .collect();
    params.zero_grads();

    let floor = T::of(1e-8);
    let mut per_tensor = BTreeMap::new();
    let mut max_rel = T::zero();
    for name in params.names().map(str::to_string).collect::<Vec<_>>() {
        let leaves = params.get(&name).to_vec();
        let mut tensor_max = T::zero();
        for (i, leaf) in leaves.iter().enumerate() {
            let original = leaf.value();
            leaf.set_value(original + step);
            let plus = loss(params)?.forward_eval()?;
            leaf.set_value(original - step);
            let minus = loss(params)?.forward_eval()?;
            leaf.set_value(original);

            let numeric = (plus - minus) / (T::of(2.0) * step);
            let a = analytic[&name][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            tensor_max = tensor_max.max(rel);
        }
        max_rel = max_rel.max(tensor_max);
        per_tensor.insert(name, tensor_max);
    }
    params.zero_grads();
    Ok(GradCheckReport { per_tensor, max_rel_err: max_rel, tolerance })
}
