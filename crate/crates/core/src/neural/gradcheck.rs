use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cross_entropy_grad, Mlp, NeuralError};

/// Coordinates above which only a random 1% subsample is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Max relative error between `analytic` and central differences of `loss`
/// around `params`.
pub fn max_relative_error<F>(params: &[f64], analytic: &[f64], h: f64, seed: u64, mut loss: F) -> Result<f64, NeuralError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(NeuralError::InvalidStep(h));
    }
    if params.len() != analytic.len() {
        return Err(NeuralError::DimMismatch { expected: params.len(), got: analytic.len() });
    }
    let coords: Vec<usize> = if params.len() > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, params.len(), params.len().div_ceil(100)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..params.len()).collect()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check of the mean cross-entropy loss of `mlp` on `batch`.
pub fn grad_check(mlp: &Mlp, batch: &[(Vec<f64>, usize)], h: f64) -> Result<f64, NeuralError> {
    let (_, grads) = cross_entropy_grad(mlp, batch)?;
    let mut probe = mlp.clone();
    max_relative_error(mlp.params(), &grads, h, 0, |p| {
        probe.params_mut().copy_from_slice(p);
        cross_entropy_grad(&probe, batch).map(|(l, _)| l).unwrap_or(f64::NAN)
    })
}
