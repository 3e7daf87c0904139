use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roizoom::ct::{FanBeamGeometry, Sinogram, SinogramKind, SparseSystemMatrix};
use roizoom::harness::io::{read_rzf, Sidecar};
use roizoom::harness::{
    config_hash, grid_search_lambda, logspace, run_experiment, ExperimentConfig, MeasurementModel, Method, RoiRect,
};
use roizoom::image::{mse, ImageGrid};
use roizoom::solvers::{fista_reconstruct, SolverConfig, StepSchedule};

fn tiny(methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        preset: "tiny".into(),
        phantom: "shepp_logan".into(),
        q: 2,
        measurement: MeasurementModel::FineGrid,
        rois: vec![RoiRect { row0: 8, col0: 10, h: 8, w: 8 }, RoiRect { row0: 16, col0: 6, h: 8, w: 10 }],
        methods,
        global_lambdas: logspace(0.01, 0.3, 3).unwrap(),
        zoom_lambdas: logspace(0.01, 0.1, 2).unwrap(),
        nlm_strengths: vec![0.05],
        first_stage: SolverConfig::with_iters(15),
        zoom: SolverConfig::with_iters(10),
        nlm_zoom: SolverConfig::with_iters(3),
        lzsg: SolverConfig {
            minibatch_views: Some(12),
            step_schedule: StepSchedule::InvSqrt { eta0: None },
            ..SolverConfig::with_iters(10)
        },
        ..ExperimentConfig::desk()
    }
}

#[test]
fn naive_only_reports_one_psnr_per_roi_and_no_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(vec![Method::Naive]);
    let rep = run_experiment(&cfg, Some(dir.path())).unwrap();
    assert_eq!(rep.summary.rois.len(), 2);
    for roi in &rep.summary.rois {
        assert_eq!(roi.methods.len(), 1);
        assert_eq!(roi.methods[0].psnr, roi.naive_psnr);
        assert_eq!(roi.methods[0].psnr_gain, 0.0);
        assert!(roi.naive_psnr.is_finite());
    }
    let csvs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 0);
    assert!(dir.path().join("roi1_naive.png").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = tiny(Method::ALL.to_vec());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, Some(d1.path())).unwrap();
    run_experiment(&cfg, Some(d2.path())).unwrap();
    let mut names: Vec<_> = fs::read_dir(d1.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.iter().filter(|n| n.ends_with(".csv")).count() == 6);
    for name in &names {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn every_png_has_a_provenance_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(vec![Method::Naive, Method::LzfgTv]);
    let rep = run_experiment(&cfg, Some(dir.path())).unwrap();
    let hash = config_hash(&cfg).unwrap();
    assert_eq!(rep.summary.config_hash, hash);
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|x| x == "png") {
            let side: Sidecar = serde_json::from_slice(&fs::read(path.with_extension("json")).unwrap()).unwrap();
            assert_eq!(side.provenance["config_hash"], hash.as_str());
            assert_eq!(side.provenance["seed"], cfg.seed);
            assert!(side.provenance["method"].is_string());
        }
    }
    let zoom = read_rzf(&dir.path().join("roi0_lzfg-tv.rzf")).unwrap();
    assert_eq!((zoom.width(), zoom.height()), (16, 16));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rois"][1]["methods"][1]["method"], "lzfg-tv");
}

#[test]
fn stage_errors_are_named() {
    let mut cfg = tiny(vec![Method::Naive]);
    cfg.rois[0].row0 = 30;
    let err = run_experiment(&cfg, None).unwrap_err().to_string();
    assert!(err.contains("config"), "{err}");
}

fn small_problem() -> (SparseSystemMatrix, Sinogram, ImageGrid) {
    let g = FanBeamGeometry::standard(8, 1.0, 16, 16);
    let a = SparseSystemMatrix::build(&g, 8, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = ImageGrid::new(8, 8, 1.0, (0..64).map(|i| if (i / 8 + i % 8) % 5 < 2 { 1.0 } else { 0.2 }).collect())
        .unwrap();
    let clean = a.forward(&truth).unwrap();
    let noisy = clean.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    let b = Sinogram::new(a.n_views(), a.n_det(), SinogramKind::LogLinearized, noisy).unwrap();
    (a, b, truth)
}

#[test]
fn grid_search_is_exhaustive() {
    let (a, b, truth) = small_problem();
    let cfg = SolverConfig::with_iters(40);
    let grid = logspace(0.01, 3.0, 9).unwrap();
    let (best, rec) = grid_search_lambda(&a, &b, &truth, &grid, &cfg).unwrap();
    let errors: Vec<f64> = grid
        .iter()
        .map(|&l| mse(&fista_reconstruct(&a, &b, l, &cfg).unwrap().image, &truth).unwrap())
        .collect();
    let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(mse(&rec.image, &truth).unwrap(), min);
    assert_eq!(errors[grid.iter().position(|&l| l == best).unwrap()], min);
}

#[test]
fn grid_search_ties_go_to_first_entry() {
    let (a, b, truth) = small_problem();
    let cfg = SolverConfig::with_iters(20);
    let (only, _) = grid_search_lambda(&a, &b, &truth, &[0.2], &cfg).unwrap();
    assert_eq!(only, 0.2);

    let grid = logspace(0.01, 3.0, 5).unwrap();
    let (best, _) = grid_search_lambda(&a, &b, &truth, &grid, &cfg).unwrap();
    let mut dup = grid.clone();
    dup.push(best);
    dup.insert(0, 10.0);
    let (again, _) = grid_search_lambda(&a, &b, &truth, &dup, &cfg).unwrap();
    assert_eq!(again, best);
    assert!(grid_search_lambda(&a, &b, &truth, &[], &cfg).is_err());
}
