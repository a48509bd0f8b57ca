//! Finite-difference gradient checking in `f64`.

use rand::{Rng, SeedableRng};

use crate::{ops, Array, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_error: f64,
    pub checked: usize,
}

/// Compare analytic and central-difference gradients of the scalar
/// `sum(f(inputs) * r)` for a fixed random `r`. At most `max_probes`
/// coordinates per input are probed, chosen deterministically from `seed`.
pub fn check<F>(f: F, inputs: &[Array<f64>], step: f64, max_probes: usize, seed: u64) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|a| Tensor::leaf(a.clone())).collect();
    let y = f(&leaves);
    let r = Array::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
    let objective = |xs: &[Tensor<f64>]| ops::sum_all(&ops::mul(&f(xs), &Tensor::constant(r.clone())));
    let grads = objective(&leaves).backward();

    let mut max_error = 0.0f64;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(&leaves[k]).cloned().unwrap_or_else(|| Array::zeros(input.shape().to_vec()));
        let probes: Vec<usize> = if input.len() <= max_probes {
            (0..input.len()).collect()
        } else {
            (0..max_probes).map(|_| rng.gen_range(0..input.len())).collect()
        };
        for i in probes {
            let eval = |delta: f64| {
                let xs: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, a)| {
                        let mut a = a.clone();
                        if j == k {
                            a.data_mut()[i] += delta;
                        }
                        Tensor::constant(a)
                    })
                    .collect();
                objective(&xs).item()
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            max_error = max_error.max(err);
            checked += 1;
        }
    }
    GradCheckReport { max_error, checked }
}
