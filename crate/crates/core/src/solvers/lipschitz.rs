use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Power-method estimate of the largest eigenvalue magnitude of the linear
/// map `op` acting on vectors of length `dim`.
///
/// The map is iterated on itself, so for a symmetric operator this is its
/// spectral norm; for the non-symmetric zoom operator it is the dominant
/// eigenvalue, which is what bounds the step of a gradient-type iteration.
pub fn estimate_lipschitz(
    mut op: impl FnMut(&[f64]) -> Vec<f64>,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if iters < 10 {
        return Err(Error::invalid("iters", "power method needs at least 10 iterations"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim", "operator acts on an empty space"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let mut w = op(&v);
        if w.len() != dim {
            return Err(Error::mismatch("power method operator output", dim, w.len()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("power method operator"));
        }
        estimate = normalize(&mut w);
        if estimate == 0.0 {
            break;
        }
        v = w;
    }
    Ok(estimate)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}
