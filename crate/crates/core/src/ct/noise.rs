use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{Sinogram, SinogramKind, SparseSystemMatrix};
use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Draws photon counts `Poisson(i0 * exp(-[A x]_i))` independently per ray.
pub fn simulate_poisson(a: &SparseSystemMatrix, x_true: &ImageGrid, i0: f64, seed: u64) -> Result<Sinogram> {
    if !(i0.is_finite() && i0 > 0.0) {
        return Err(Error::invalid("i0", format!("photon flux {i0} must be positive")));
    }
    if x_true.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("x_true", "negative attenuation"));
    }
    simulate_from_line_integrals(&a.forward(x_true)?, i0, seed)
}

/// Poisson counts with means `i0 * exp(-l)` for precomputed line integrals `l`.
pub fn simulate_from_line_integrals(line: &Sinogram, i0: f64, seed: u64) -> Result<Sinogram> {
    if !(i0.is_finite() && i0 > 0.0) {
        return Err(Error::invalid("i0", format!("photon flux {i0} must be positive")));
    }
    if line.values().iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("line integrals"));
    }
    let rates: Vec<f64> = line.values().iter().map(|&l| i0 * (-l).exp()).collect();
    let counts = sample_counts(&rates, seed)?;
    Ok(Sinogram::from_parts(line.n_views, line.n_det, SinogramKind::RawCounts, counts))
}

/// Independent Poisson draws for each rate from one seeded stream.
pub fn sample_counts(rates: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rates
        .iter()
        .map(|&rate| {
            if rate == 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(rate).map_err(|e| Error::invalid("rate", e.to_string()))?;
            Ok(dist.sample(&mut rng))
        })
        .collect()
}

/// Converts counts to line integrals `ln(i0 / max(count, 1))`.
pub fn log_linearize(counts: &Sinogram, i0: f64) -> Result<Sinogram> {
    if !(i0.is_finite() && i0 > 0.0) {
        return Err(Error::invalid("i0", format!("photon flux {i0} must be positive")));
    }
    if counts.values().iter().any(|&c| c < 0.0) {
        return Err(Error::invalid("counts", "negative count"));
    }
    let values = counts.values().iter().map(|&c| (i0 / c.max(1.0)).ln()).collect();
    Ok(Sinogram::from_parts(counts.n_views, counts.n_det, SinogramKind::LogLinearized, values))
}

/// Poisson log-likelihood of `counts` under `rates`, per ray.
pub fn poisson_log_likelihood(counts: &[f64], rates: &[f64]) -> Vec<f64> {
    counts
        .iter()
        .zip(rates)
        .map(|(&k, &lam)| k * lam.ln() - lam - ln_factorial(k))
        .collect()
}

fn ln_factorial(k: f64) -> f64 {
    // Stirling series is accurate to ~1e-10 beyond 20
    if k < 20.0 {
        (1..=k as u64).map(|i| (i as f64).ln()).sum()
    } else {
        k * k.ln() - k + 0.5 * (2.0 * std::f64::consts::PI * k).ln() + 1.0 / (12.0 * k) - 1.0 / (360.0 * k * k * k)
    }
}
