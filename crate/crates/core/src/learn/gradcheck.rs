//! Central finite-difference oracle for analytic gradients.
//!
//! The oracle only evaluates the forward pass; it shares no code with
//! [`Graph::backward`] beyond the forward primitives themselves.

use super::autodiff::{Graph, Var};
use super::params::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares `Graph::backward` against central differences for every scalar
/// of every parameter in `store`.
pub fn check_gradients<F>(store: &mut ParamStore, config: GradCheck, loss: F) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = loss(&mut g);
        g.backward(out).expect("loss must depend on parameters")
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::frozen(store);
        let out = loss(&mut g);
        g.scalar(out)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + config.step;
            let plus = eval(store);
            store.get_mut(id).data_mut()[k] = orig - config.step;
            let minus = eval(store);
            store.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * config.step);
            let exact = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let denom = exact.abs().max(numeric.abs()).max(config.floor);
            let rel = (exact - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{k}]", store.name(id));
            }
        }
    }
    report
}
