use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roizoom::ct::{FanBeamGeometry, Sinogram, SinogramKind, SparseSystemMatrix, ViewSelection, ZoomOperator};
use roizoom::image::{downsample, extract_roi, upsample, ImageGrid, RoiSpec, Upsampler};
use roizoom::regularizers::{DenoiserFamily, DenoiserSpec};
use roizoom::solvers::{
    estimate_lipschitz, fista_reconstruct, lambda_path, lzfg, lzfg_with, lzsg, naive_zoom, Momentum, RunContext,
    SolverConfig, StepRule, StepSchedule,
};
use roizoom::Error;

fn matrix(side: usize, views: usize) -> SparseSystemMatrix {
    let g = FanBeamGeometry::standard(side, 1.0, views, 2 * side);
    SparseSystemMatrix::build(&g, side, side).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, pixel: f64) -> ImageGrid {
    ImageGrid::new(w, h, pixel, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn dense(a: &SparseSystemMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.n_rows(), a.n_cols());
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            m[(i, c as usize)] = v;
        }
    }
    m
}

fn sinogram(a: &SparseSystemMatrix, values: Vec<f64>) -> Sinogram {
    Sinogram::new(a.n_views(), a.n_det(), SinogramKind::LogLinearized, values).unwrap()
}

#[test]
fn zero_data_reconstructs_zero() {
    let a = matrix(8, 12);
    let b = Sinogram::zeros(a.n_views(), a.n_det());
    let rec = fista_reconstruct(&a, &b, 0.1, &SolverConfig::with_iters(20)).unwrap();
    assert!(rec.image.values().iter().all(|&v| v == 0.0));
}

#[test]
fn unregularized_fista_solves_normal_equations() {
    let a = matrix(8, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b: Vec<f64> = (0..a.n_rows()).map(|_| rng.random_range(0.0..3.0)).collect();
    let cfg = SolverConfig {
        stop_tol: 0.0,
        ..SolverConfig::with_iters(20_000)
    };
    let rec = fista_reconstruct(&a, &sinogram(&a, b.clone()), 0.0, &cfg).unwrap();

    let m = dense(&a);
    let bv = DVector::from_vec(b);
    let atb = m.transpose() * &bv;
    let x = DVector::from_column_slice(rec.image.values());
    let normal_resid = m.transpose() * (&m * &x - &bv);
    assert!(normal_resid.norm() <= 1e-4 * atb.norm(), "{}", normal_resid.norm() / atb.norm());

    let oracle = (m.transpose() * &m).cholesky().unwrap().solve(&atb);
    assert!((x - &oracle).norm() <= 1e-3 * oracle.norm());
}

#[test]
fn fista_descends_with_auto_step() {
    let a = matrix(16, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = random_image(&mut rng, 16, 16, 1.0);
    let b = a.forward(&truth).unwrap();
    let rec = fista_reconstruct(&a, &b, 0.05, &SolverConfig::with_iters(50)).unwrap();
    let initial = 0.5 * b.values().iter().map(|v| v * v).sum::<f64>();
    assert!(*rec.objective_trace.last().unwrap() <= initial);
    assert_eq!(rec.objective_trace.len(), rec.iterations_run);
}

#[test]
fn fista_divergence_is_reported() {
    let a = matrix(8, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = a.forward(&random_image(&mut rng, 8, 8, 1.0)).unwrap();
    let cfg = SolverConfig {
        step: StepRule::Explicit(10.0),
        ..SolverConfig::with_iters(200)
    };
    let err = fista_reconstruct(&a, &b, 0.0, &cfg).unwrap_err();
    assert!(
        matches!(err, Error::Divergence { .. } | Error::NonFinite(_)),
        "{err}"
    );
    assert!(err.to_string().contains("diverged"));
}

/// Unit zoom on the whole image with no momentum is gradient descent on the
/// least-squares objective, reproduced here with a dense matrix.
#[test]
fn lzfg_matches_dense_gradient_descent() {
    let side = 32;
    let a = matrix(side, 30);
    let m = dense(&a);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = a.forward(&random_image(&mut rng, side, side, 1.0)).unwrap();
    let roi = RoiSpec::full(side, side, 1);
    let init = ImageGrid::zeros(side, side, 1.0);
    let eta = 1.0 / 4000.0;

    let mut x = vec![0.0; side * side];
    for k in 1..=6 {
        // dense step, accumulating in the same index order as the sparse product
        let mut r = vec![0.0; a.n_rows()];
        for (i, ri) in r.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += m[(i, j)] * xj;
            }
            *ri = acc - b.values()[i];
        }
        let mut g = vec![0.0; side * side];
        for (i, ri) in r.iter().enumerate() {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += m[(i, j)] * ri;
            }
        }
        x = x.iter().zip(&g).map(|(xi, gi)| xi - eta * gi).collect();

        let cfg = SolverConfig {
            step: StepRule::Explicit(eta),
            momentum: Momentum::None,
            stop_tol: 0.0,
            ..SolverConfig::with_iters(k)
        };
        let res = lzfg(&a, &b, &roi, &init, &DenoiserSpec::Identity, &cfg).unwrap();
        assert_eq!(res.x_high.values(), &x[..], "iteration {k}");
    }
}

fn zoom_setup(seed: u64) -> (SparseSystemMatrix, Sinogram, RoiSpec, ImageGrid) {
    let a = matrix(24, 36);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = random_image(&mut rng, 24, 24, 1.0);
    let b = a.forward(&truth).unwrap();
    let roi = RoiSpec::new(6, 8, 8, 6, 2);
    let init = upsample(&extract_roi(&truth, &roi).unwrap(), 2).unwrap();
    (a, b, roi, init)
}

#[test]
fn full_batch_lzsg_equals_lzfg_chambolle() {
    let (a, b, roi, init) = zoom_setup(5);
    for seed in [0, 17, 99] {
        let base = SolverConfig {
            momentum: Momentum::Chambolle,
            stop_tol: 0.0,
            seed,
            ..SolverConfig::with_iters(50)
        };
        let stochastic = SolverConfig {
            minibatch_views: Some(a.n_views()),
            step_schedule: StepSchedule::Constant,
            ..base
        };
        let spec = DenoiserSpec::tv(0.05);
        let f = lzfg(&a, &b, &roi, &init, &spec, &base).unwrap();
        let s = lzsg(&a, &b, &roi, &init, &spec, &stochastic).unwrap();
        assert_eq!(f.x_high.values(), s.x_high.values());
        assert_eq!(f.objective_trace, s.objective_trace);
    }
}

#[test]
fn lzsg_is_seed_deterministic_and_needs_minibatch() {
    let (a, b, roi, init) = zoom_setup(6);
    let cfg = SolverConfig {
        minibatch_views: Some(6),
        step_schedule: StepSchedule::InvSqrt { eta0: None },
        seed: 3,
        ..SolverConfig::with_iters(20)
    };
    let spec = DenoiserSpec::tv(0.02);
    let r1 = lzsg(&a, &b, &roi, &init, &spec, &cfg).unwrap();
    let r2 = lzsg(&a, &b, &roi, &init, &spec, &cfg).unwrap();
    assert_eq!(r1.x_high, r2.x_high);
    let other = lzsg(&a, &b, &roi, &init, &spec, &SolverConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(r1.x_high, other.x_high);
    let missing = SolverConfig {
        minibatch_views: None,
        ..cfg
    };
    assert!(lzsg(&a, &b, &roi, &init, &spec, &missing).is_err());
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let (a, b, roi, init) = zoom_setup(7);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::Bicubic).unwrap();
    let full = op.gradient(init.values(), ViewSelection::All).gradient;
    let n_views = op.n_views();
    let mb = 6;
    let draws = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sum = vec![0.0; full.len()];
    let mut sum_sq = vec![0.0; full.len()];
    let mut mask = vec![false; n_views];
    for _ in 0..draws {
        mask.iter_mut().for_each(|m| *m = false);
        for v in sample(&mut rng, n_views, mb) {
            mask[v] = true;
        }
        let g = op
            .gradient(
                init.values(),
                ViewSelection::Subset {
                    views: &mask,
                    scale: n_views as f64 / mb as f64,
                },
            )
            .gradient;
        for (i, gi) in g.iter().enumerate() {
            sum[i] += gi;
            sum_sq[i] += gi * gi;
        }
    }
    // 3 sigma per coordinate, allowing the ~0.3% of coordinates that exceed it by chance
    let n = draws as f64;
    let mut beyond = 0;
    for i in 0..full.len() {
        let mean = sum[i] / n;
        let sd = (sum_sq[i] / n - mean * mean).max(0.0).sqrt();
        let z = (mean - full[i]).abs() / (sd / n.sqrt() + 1e-300);
        assert!(z < 4.5, "pixel {i}: {mean} vs {}", full[i]);
        if z > 3.0 {
            beyond += 1;
        }
    }
    assert!(beyond as f64 <= 0.02 * full.len() as f64, "{beyond} coordinates beyond 3 sigma");
}

#[test]
fn single_view_gradients_average_to_full_gradient() {
    let (a, b, roi, init) = zoom_setup(21);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::Bicubic).unwrap();
    let full = op.gradient(init.values(), ViewSelection::All).gradient;
    let n_views = op.n_views();
    let mut mean = vec![0.0; full.len()];
    for v in 0..n_views {
        let mut mask = vec![false; n_views];
        mask[v] = true;
        let g = op
            .gradient(
                init.values(),
                ViewSelection::Subset {
                    views: &mask,
                    scale: n_views as f64,
                },
            )
            .gradient;
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi / n_views as f64;
        }
    }
    let scale = full.iter().map(|g| g.abs()).fold(0.0, f64::max);
    for (m, f) in mean.iter().zip(&full) {
        assert!((m - f).abs() <= 1e-10 * scale);
    }
}

#[test]
fn adjoint_consistent_zoom_descends_to_stationarity() {
    let (a, b, roi, init) = zoom_setup(9);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::AdjointOfDownsample).unwrap();
    let cfg = SolverConfig {
        stop_tol: 1e-5,
        ..SolverConfig::with_iters(20_000)
    };
    let start = init.map(|v| v + 0.3);
    let (initial, _) = op.objective(start.values());
    let res = lzfg_with(&op, &start, &DenoiserSpec::Identity, &cfg, &mut RunContext::default()).unwrap();
    assert!(*res.objective_trace.last().unwrap() <= initial);
    assert!(res.converged, "ran {} iterations", res.iterations_run);
}

#[test]
fn zoom_lipschitz_matches_dense_operator() {
    let (a, b, roi, _) = zoom_setup(10);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::AdjointOfDownsample).unwrap();
    let n = op.high_res_len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let (col, _) = op.normal(&e);
        m.set_column(j, &DVector::from_vec(col));
    }
    let sym = (&m + m.transpose()) * 0.5;
    let oracle = sym.symmetric_eigen().eigenvalues.max();
    let l = estimate_lipschitz(|v| op.normal(v).0, n, 3000, 1).unwrap();
    assert!((l - oracle).abs() <= 1e-4 * oracle, "{l} vs {oracle}");
}

#[test]
fn naive_zoom_is_crop_then_upsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x1 = random_image(&mut rng, 20, 20, 0.8);
    let roi = RoiSpec::new(3, 5, 7, 9, 3);
    let z = naive_zoom(&x1, &roi).unwrap();
    let want = upsample(&extract_roi(&x1, &roi).unwrap(), 3).unwrap();
    assert_eq!(z, want);
    let unit = naive_zoom(&x1, &RoiSpec::new(3, 5, 7, 9, 1)).unwrap();
    assert_eq!(unit.values(), extract_roi(&x1, &RoiSpec::new(3, 5, 7, 9, 1)).unwrap().values());
    let flat = naive_zoom(&ImageGrid::filled(20, 20, 1.0, 0.4), &roi).unwrap();
    assert!(flat.values().iter().all(|v| (v - 0.4).abs() < 1e-12));
    assert!(naive_zoom(&x1, &RoiSpec::new(15, 0, 8, 4, 2)).is_err());
}

#[test]
fn zoom_rejects_mismatched_init() {
    let (a, b, roi, _) = zoom_setup(12);
    let err = lzfg(&a, &b, &roi, &ImageGrid::zeros(5, 5, 0.5), &DenoiserSpec::Identity, &SolverConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}

#[test]
fn zoom_improves_on_naive_with_consistent_data() {
    // coarse first stage that misses the fine detail of the truth
    let a = matrix(24, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fine = random_image(&mut rng, 48, 48, 0.5);
    let coarse = downsample(&fine, 2).unwrap();
    let b = a.forward(&coarse).unwrap();
    let roi = RoiSpec::new(8, 8, 8, 8, 2);
    let x1 = coarse.map(|v| v + 0.05);
    let path = lambda_path(&a, &b, &x1, &roi, &[1e-4], DenoiserFamily::Tv, &SolverConfig::with_iters(200)).unwrap();
    let bz_obj = path[0].objective_trace.clone();
    assert!(bz_obj.last().unwrap() < &bz_obj[0]);
}

#[test]
fn path_single_entry_matches_plain_run() {
    let (a, b, roi, _) = zoom_setup(14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x1 = random_image(&mut rng, 24, 24, 1.0);
    let cfg = SolverConfig::with_iters(15);
    let path = lambda_path(&a, &b, &x1, &roi, &[0.03], DenoiserFamily::Tv, &cfg).unwrap();
    let bz = roizoom::ct::compute_bz(&a, &b, &x1, &roi).unwrap();
    let init = naive_zoom(&x1, &roi).unwrap();
    let single = lzfg(&a, &bz, &roi, &init, &DenoiserSpec::tv(0.03), &cfg).unwrap();
    assert_eq!(path[0].x_high, single.x_high);
    assert_eq!(path[0].objective_trace, single.objective_trace);
}

#[test]
fn path_warm_start_and_ordering() {
    let (a, b, roi, _) = zoom_setup(16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x1 = random_image(&mut rng, 24, 24, 1.0);
    let cfg = SolverConfig {
        stop_tol: 1e-9,
        momentum: Momentum::None,
        ..SolverConfig::with_iters(3000)
    };
    let same = lambda_path(&a, &b, &x1, &roi, &[0.02, 0.02], DenoiserFamily::Tv, &cfg).unwrap();
    let first = *same[0].objective_trace.last().unwrap();
    assert!(same[1].objective_trace[0] <= first + 1e-9);

    let cfg = SolverConfig::with_iters(10);
    let grid = [0.3, 0.01, 0.1];
    let path = lambda_path(&a, &b, &x1, &roi, &grid, DenoiserFamily::Tv, &cfg).unwrap();
    for (r, s) in path.iter().zip(grid) {
        assert_eq!(r.denoiser, DenoiserSpec::tv(s));
    }
}

#[test]
fn path_errors_name_the_strength() {
    let (a, b, roi, _) = zoom_setup(18);
    let x1 = ImageGrid::zeros(24, 24, 1.0);
    let err = lambda_path(&a, &b, &x1, &roi, &[0.1, -1.0], DenoiserFamily::Tv, &SolverConfig::with_iters(5))
        .unwrap_err();
    assert!(matches!(err, Error::PathEntry { strength, .. } if strength == -1.0));
    assert!(lambda_path(&a, &b, &x1, &roi, &[], DenoiserFamily::Tv, &SolverConfig::with_iters(5)).is_err());
}

#[test]
fn observer_can_cancel() {
    let (a, b, roi, init) = zoom_setup(19);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::Bicubic).unwrap();
    let mut seen = Vec::new();
    let mut obs = |info: &roizoom::solvers::IterationInfo| {
        seen.push(info.iteration);
        info.iteration < 3
    };
    let mut ctx = RunContext::default().with_observer(&mut obs);
    let err = lzfg_with(&op, &init, &DenoiserSpec::Identity, &SolverConfig::with_iters(10), &mut ctx).unwrap_err();
    assert!(matches!(err, Error::Cancelled));
    assert_eq!(seen, vec![1, 2, 3]);
}

#[test]
fn psnr_trace_tracks_truth() {
    let (a, b, roi, init) = zoom_setup(20);
    let op = ZoomOperator::new(&a, &roi, &b, Upsampler::Bicubic).unwrap();
    let truth = init.map(|v| v * 0.9);
    let mut ctx = RunContext::default().with_truth(&truth);
    let res = lzfg_with(&op, &init, &DenoiserSpec::tv(0.01), &SolverConfig::with_iters(12), &mut ctx).unwrap();
    assert_eq!(res.psnr_trace.len(), res.iterations_run);
    assert_eq!(res.wall_ms.len(), res.iterations_run);
    assert!(res.x_high.is_finite());
}

