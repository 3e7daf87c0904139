//! Accelerated proximal-gradient loop shared by the first-stage and zoom solvers.

use std::time::Instant;

use super::Momentum;
use crate::error::{Error, Result};
use crate::image::{psnr_auto, ImageGrid};
use crate::regularizers::DenoiserSpec;

/// Snapshot handed to observers after every iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationInfo {
    pub iteration: usize,
    pub max_iters: usize,
    pub objective: f64,
    pub relative_change: f64,
}

/// Optional ground truth for PSNR tracing plus a per-iteration callback.
/// The callback returns `false` to cancel the run.
#[derive(Default)]
pub struct RunContext<'a> {
    pub truth: Option<&'a ImageGrid>,
    pub observer: Option<&'a mut dyn FnMut(&IterationInfo) -> bool>,
}

impl<'a> RunContext<'a> {
    pub fn with_truth(mut self, truth: &'a ImageGrid) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_observer(mut self, observer: &'a mut dyn FnMut(&IterationInfo) -> bool) -> Self {
        self.observer = Some(observer);
        self
    }

    /// Reborrows for a nested run.
    pub fn reborrow(&mut self) -> RunContext<'_> {
        RunContext {
            truth: self.truth,
            observer: match &mut self.observer {
                Some(o) => Some(&mut **o),
                None => None,
            },
        }
    }
}

/// FISTA extrapolation coefficients `(a_k - 1)/a_{k+1}` starting from `a_0 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct FistaSequence {
    a: f64,
}

impl Default for FistaSequence {
    fn default() -> Self {
        Self { a: 1.0 }
    }
}

impl FistaSequence {
    pub fn current(&self) -> f64 {
        self.a
    }
}

impl Iterator for FistaSequence {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let next = 0.5 * (1.0 + (1.0 + 4.0 * self.a * self.a).sqrt());
        let coef = (self.a - 1.0) / next;
        self.a = next;
        Some(coef)
    }
}

/// `(k - 1)/(k + 3)` for `k >= 1`.
pub fn chambolle_coefficient(k: usize) -> f64 {
    debug_assert!(k >= 1);
    (k as f64 - 1.0) / (k as f64 + 3.0)
}

/// The differentiable part of a problem as seen by the loop.
pub(crate) trait SmoothTerm {
    /// Gradient (or gradient surrogate) at `y` for iteration `k >= 1`.
    fn gradient(&mut self, y: &[f64], k: usize) -> Result<(Vec<f64>, u64)>;
    /// Traced objective at `x`.
    fn objective(&self, x: &ImageGrid) -> (f64, u64);
    fn image(&self, values: Vec<f64>) -> ImageGrid;
}

pub(crate) struct LoopSettings<'s> {
    pub denoiser: &'s DenoiserSpec,
    pub momentum: Momentum,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub step: &'s dyn Fn(usize) -> f64,
}

pub(crate) struct LoopOutput {
    pub x: ImageGrid,
    pub objective_trace: Vec<f64>,
    pub psnr_trace: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub ops: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn run(
    term: &mut dyn SmoothTerm,
    init: &ImageGrid,
    settings: LoopSettings<'_>,
    ctx: &mut RunContext<'_>,
) -> Result<LoopOutput> {
    let start = Instant::now();
    let mut x = init.clone();
    let mut y: Vec<f64> = init.values().to_vec();
    let mut fista = FistaSequence::default();
    let mut out = LoopOutput {
        x: init.clone(),
        objective_trace: Vec::new(),
        psnr_trace: Vec::new(),
        wall_ms: Vec::new(),
        iterations_run: 0,
        converged: false,
        ops: 0,
    };
    let mut best = f64::INFINITY;

    for k in 1..=settings.max_iters {
        let eta = (settings.step)(k);
        let (grad, ops) = term.gradient(&y, k)?;
        out.ops += ops;
        let moved: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - eta * gi).collect();
        let x_next = settings.denoiser.apply(&term.image(moved), eta)?;
        if !x_next.is_finite() {
            return Err(Error::NonFinite("solver iterate (diverged)"));
        }

        let beta = match settings.momentum {
            Momentum::Fista => fista.next().unwrap(),
            Momentum::Chambolle => chambolle_coefficient(k),
            Momentum::None => 0.0,
        };
        let diff: Vec<f64> = x_next.values().iter().zip(x.values()).map(|(a, b)| a - b).collect();
        y = if beta == 0.0 {
            x_next.values().to_vec()
        } else {
            x_next.values().iter().zip(&diff).map(|(a, d)| a + beta * d).collect()
        };
        let x_norm = norm(x.values());
        let change = norm(&diff);
        let relative_change = if x_norm > 0.0 {
            change / x_norm
        } else if change == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        x = x_next;

        let (objective, ops) = term.objective(&x);
        out.ops += ops;
        out.objective_trace.push(objective);
        if let Some(truth) = ctx.truth {
            out.psnr_trace.push(psnr_auto(&x, truth)?);
        }
        out.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        out.iterations_run = k;

        if let Some(observer) = ctx.observer.as_mut() {
            let info = IterationInfo {
                iteration: k,
                max_iters: settings.max_iters,
                objective,
                relative_change,
            };
            if !observer(&info) {
                return Err(Error::Cancelled);
            }
        }

        if !objective.is_finite() {
            return Err(Error::NonFinite("objective (diverged)"));
        }
        best = best.min(objective);
        if objective > 10.0 * best && objective > f64::MIN_POSITIVE {
            return Err(Error::Divergence {
                iteration: k,
                objective,
                minimum: best,
            });
        }
        if relative_change <= settings.stop_tol {
            out.converged = true;
            break;
        }
    }
    out.x = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fista_sequence_closed_forms() {
        let mut s = FistaSequence::default();
        assert_eq!(s.next().unwrap(), 0.0);
        let a1 = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s.current() - a1).abs() < 1e-12);
        s.next();
        let a2 = (1.0 + (1.0 + 4.0 * a1 * a1).sqrt()) / 2.0;
        assert!((s.current() - a2).abs() < 1e-12);
        assert!((s.current() - 2.1935).abs() < 1e-4);
    }

    #[test]
    fn fista_sequence_strictly_increasing() {
        let mut s = FistaSequence::default();
        let mut prev = s.current();
        for _ in 0..1000 {
            s.next();
            assert!(s.current() > prev);
            prev = s.current();
        }
    }

    #[test]
    fn chambolle_values() {
        assert_eq!(chambolle_coefficient(1), 0.0);
        assert_eq!(chambolle_coefficient(5), 0.5);
        for k in 1..10_000 {
            let c = chambolle_coefficient(k);
            assert!((0.0..1.0).contains(&c));
        }
    }
}
