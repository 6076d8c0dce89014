use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Entries compared per parameter array (all entries when the array is smaller).
    pub samples_per_param: usize,
    /// Denominator floor of the relative error, so that two gradients that
    /// are both numerically zero compare as equal.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-4, samples_per_param: 4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Every compared entry, worst first.
    pub entries: Vec<GradientFailure>,
    /// Parameters whose analytic or numeric gradient was not finite.
    pub non_finite: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < tolerance
    }

    pub fn failures(&self, tolerance: f64) -> impl Iterator<Item = &GradientFailure> {
        self.entries.iter().filter(move |e| !(e.rel_error < tolerance))
    }
}

/// Compares the tape gradient of `loss` with central differences on a seeded
/// sample of entries of every parameter array.
pub fn check_gradients<F>(loss: F, params: &ParamStore, opts: &GradCheckOptions) -> GradCheckReport
where
    F: for<'a> Fn(&mut Graph<'a>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g);
        g.backward(l)
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (id, name, value) in params.iter() {
        let grad = analytic.get_or_zeros(params, id);
        let n = value.data().len();
        let picks: Vec<usize> =
            if n <= opts.samples_per_param { (0..n).collect() } else { sample(&mut rng, n, opts.samples_per_param).into_vec() };
        for index in picks {
            let original = value.data()[index];
            work.get_mut(id).data_mut()[index] = original + opts.epsilon;
            let up = eval(&work);
            work.get_mut(id).data_mut()[index] = original - opts.epsilon;
            let down = eval(&work);
            work.get_mut(id).data_mut()[index] = original;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let a = grad.data()[index];
            report.checked += 1;
            if !a.is_finite() || !numeric.is_finite() {
                if !report.non_finite.iter().any(|p| p == name) {
                    report.non_finite.push(name.to_string());
                }
                continue;
            }
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_rel_error = report.max_rel_error.max(rel_error);
            report.entries.push(GradientFailure { param: name.to_string(), index, analytic: a, numeric, rel_error });
        }
    }
    report.entries.sort_by(|x, y| y.rel_error.total_cmp(&x.rel_error));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]));
        s.add("b", Matrix::row_vector(vec![0.5, -0.25]));
        s
    }

    #[test]
    fn smooth_loss_passes() {
        let s = store();
        let report = check_gradients(
            |g| {
                let w = g.param(crate::graph::ParamId(0));
                let b = g.param(crate::graph::ParamId(1));
                let x = g.matmul(b, w);
                let y = g.tanh(x);
                let y = g.mul(y, y);
                let ones = g.constant(Matrix::row_vector(vec![1.0, 1.0]));
                g.matmul_nt(y, ones)
            },
            &s,
            &GradCheckOptions::default(),
        );
        assert_eq!(report.checked, 6);
        assert!(report.passed(1e-6), "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let s = store();
        let report = check_gradients(|g| g.constant(Matrix::scalar(3.0)), &s, &GradCheckOptions::default());
        assert!(report.entries.iter().all(|e| e.analytic == 0.0 && e.numeric == 0.0));
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store();
        s.get_mut(crate::graph::ParamId(1)).data_mut()[0] = f64::INFINITY;
        let report = check_gradients(
            |g| {
                let b = g.param(crate::graph::ParamId(1));
                let y = g.mul(b, b);
                let y = g.sum_rows(y);
                g.matmul_nt(y, y)
            },
            &s,
            &GradCheckOptions::default(),
        );
        assert!(report.non_finite.iter().any(|p| p == "b"));
        assert!(!report.passed(1.0));
    }
}
