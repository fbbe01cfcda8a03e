//! Central finite differences over every coordinate of a [`ParamStore`],
//! used as the oracle for the hand-written backward passes.

use super::{Gradients, ParamStore};

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every scalar parameter.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamStore, h: f64) -> Gradients
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut work = params.clone();
    let mut out = params.zero_gradients();
    for id in params.ids() {
        for i in 0..params.value(id).len() {
            let orig = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let plus = f(&work);
            work.value_mut(id).data_mut()[i] = orig - h;
            let minus = f(&work);
            work.value_mut(id).data_mut()[i] = orig;
            out.get_mut(id).data_mut()[i] = (plus - minus) / (2.0 * h);
        }
    }
    out
}

/// Worst coordinate-wise relative error
/// `|a - n| / max(1e-8, |a| + |n|)` and the parameter name where it occurs.
pub fn max_relative_error(
    params: &ParamStore,
    analytic: &Gradients,
    numeric: &Gradients,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for id in params.ids() {
        for (a, n) in analytic.get(id).data().iter().zip(numeric.get(id).data()) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
            if rel > worst.0 {
                worst = (rel, params.name(id).to_string());
            }
        }
    }
    worst
}

/// Analytic and central-difference gradients of one scalar objective.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub params: ParamStore,
    pub analytic: Gradients,
    pub numeric: Gradients,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> (f64, String) {
        max_relative_error(&self.params, &self.analytic, &self.numeric)
    }

    /// First coordinate whose relative error is at least `rel_tol` and whose
    /// absolute error is at least `abs_tol`.
    pub fn first_mismatch(&self, rel_tol: f64, abs_tol: f64) -> Option<String> {
        for id in self.params.ids() {
            let pairs = self.analytic.get(id).data().iter().zip(self.numeric.get(id).data());
            for (i, (a, n)) in pairs.enumerate() {
                let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
                if !(rel < rel_tol || (a - n).abs() < abs_tol) {
                    return Some(format!(
                        "{}[{i}]: analytic {a:e}, numeric {n:e}",
                        self.params.name(id)
                    ));
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("a", Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]).unwrap())
            .unwrap();
        p.add("b", Matrix::column(&[4.0, -0.25, 1.5])).unwrap();
        p
    }

    fn all_values(p: &ParamStore) -> Vec<f64> {
        p.slots().iter().flat_map(|s| s.value.data().to_vec()).collect()
    }

    #[test]
    fn sum_has_unit_gradient() {
        let p = store();
        let g = finite_difference_gradient(|p| all_values(p).iter().sum(), &p, 1e-6);
        assert!(g.iter().flat_map(|m| m.data()).all(|x| (x - 1.0).abs() < 1e-8));
    }

    #[test]
    fn half_square_norm_gradient_is_theta() {
        let p = store();
        let g = finite_difference_gradient(
            |p| 0.5 * all_values(p).iter().map(|x| x * x).sum::<f64>(),
            &p,
            1e-5,
        );
        for id in p.ids() {
            for (gi, xi) in g.get(id).data().iter().zip(p.value(id).data()) {
                assert!((gi - xi).abs() < 1e-8);
            }
        }
    }
}
