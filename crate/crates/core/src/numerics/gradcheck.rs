//! Central finite-difference check of tape gradients.

use super::{Gradients, ParamStore};

/// Relative errors are measured against at least this magnitude so that
/// near-zero partials compare absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against `(f(p + h) - f(p - h)) / 2h` for every scalar
/// in `store`.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &Gradients,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> GradCheck {
    let mut probe = store.clone();
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids() {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.get_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.get(id).data()[i];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if rel > result.max_relative_error || rel.is_nan() {
                result.max_relative_error = if rel.is_nan() { f64::INFINITY } else { rel };
                result.worst = Some((store.name(id).to_string(), i));
            }
            result.checked += 1;
        }
    }
    result
}
