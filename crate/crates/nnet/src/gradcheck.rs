//! Central finite-difference verification of analytic gradients.
//!
//! The checker perturbs a sample of coordinates from every tensor that has an
//! analytic gradient, re-evaluates the loss through a caller-supplied closure,
//! and reports the worst relative discrepancy. The closure must be a pure
//! function of the store (fixed data, fixed noise), otherwise the comparison
//! is meaningless.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::store::ParamStore;

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all probed coordinates.
    pub max_rel_err: f64,
    /// Tensor holding the worst coordinate.
    pub worst_name: String,
    /// Number of coordinates probed.
    pub n_checked: usize,
}

/// Relative error with a floor so that near-zero gradient pairs compare by
/// absolute difference: `|a - f| / max(|a|, |f|, 1e-3)`.
fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-3)
}

/// Compares `analytic` gradients against central finite differences of
/// `eval`, probing up to `coords_per_tensor` random coordinates per tensor
/// (all coordinates if the tensor is smaller than that).
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: &HashMap<String, Array2<f64>>,
    eval: impl Fn(&ParamStore) -> f64,
    coords_per_tensor: usize,
    h: f64,
    rng: &mut impl Rng,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_name: String::new(),
        n_checked: 0,
    };
    let names: Vec<String> = analytic.keys().cloned().collect();
    let mut names = names;
    names.sort(); // deterministic probe order

    for name in &names {
        let grad = &analytic[name];
        let len = grad.len();
        let cols = grad.dim().1;
        let picks: Vec<usize> = if len <= coords_per_tensor {
            (0..len).collect()
        } else {
            (0..coords_per_tensor)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };
        for flat in picks {
            let (r, c) = (flat / cols, flat % cols);
            let original = store.get(name)[(r, c)];

            set_coord(store, name, r, c, original + h);
            let plus = eval(store);
            set_coord(store, name, r, c, original - h);
            let minus = eval(store);
            set_coord(store, name, r, c, original);

            let fd = (plus - minus) / (2.0 * h);
            let err = rel_err(grad[(r, c)], fd);
            report.n_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_name = format!("{name}[{r},{c}]");
            }
        }
    }
    report
}

fn set_coord(store: &mut ParamStore, name: &str, r: usize, c: usize, value: f64) {
    let current: Rc<Array2<f64>> = store.get(name);
    let mut arr = (*current).clone();
    drop(current);
    arr[(r, c)] = value;
    store.set(name, arr).expect("known parameter");
}
