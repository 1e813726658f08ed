use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are judged absolutely.
    pub abs_floor: f64,
    /// Coordinates probed per tensor; `None` probes all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, abs_floor: 1e-6, max_coords_per_tensor: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param id, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the gradients stored in `store` against central differences of
/// `loss`. Values are restored exactly after each probe.
pub fn finite_diff_check(
    store: &mut ParamStore,
    mut loss: impl FnMut(&ParamStore) -> f64,
    opts: GradCheckOptions,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, passed: true };
    for t in 0..store.len() {
        let n = store.tensors()[t].len();
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let original = store.tensors()[t].values[i];
            store.tensors_mut()[t].values[i] = original + opts.step;
            let plus = loss(store);
            store.tensors_mut()[t].values[i] = original - opts.step;
            let minus = loss(store);
            store.tensors_mut()[t].values[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = store.tensors()[t].grad[i];
            let denom = analytic.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((store.tensors()[t].id.clone(), i, analytic, numeric));
            }
        }
    }
    report.passed = report.max_rel_error < opts.tolerance;
    report
}
