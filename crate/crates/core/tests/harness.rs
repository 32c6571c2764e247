use nvolo::harness::{
    run_olo, run_sweep, Grid, Metric, OloSpec, ReadoutObjective, SweepMode, SweepSpec,
};
use nvolo::{OptimizerConfig, PiecewiseWaveform, RateParams, SequenceConfig};

fn quick_spec() -> OloSpec {
    OloSpec {
        baseline: SweepSpec {
            amplitudes: Grid::Linspace {
                start: 0.05,
                stop: 0.4,
                count: 8,
            },
            durations_ns: Grid::Values(vec![100.0, 200.0, 400.0]),
            mode: SweepMode::Global,
        },
        init_amplitudes: Grid::Linspace {
            start: 0.005,
            stop: 0.1,
            count: 20,
        },
        ..OloSpec::default()
    }
}

#[test]
fn olo_never_ends_below_its_start() {
    let r = run_olo(
        &quick_spec(),
        &SequenceConfig::default(),
        &RateParams::default(),
    )
    .unwrap();
    assert!(r.final_snr >= r.start_snr);
    assert_eq!(r.state.best, r.readout.amplitudes());
    assert!((r.improvement - (r.final_snr / r.baseline_snr() - 1.0)).abs() < 1e-15);
    assert_eq!(r.init.n(), 1);
    assert_eq!(r.readout.n(), 20);
}

#[test]
fn starting_at_the_best_constant_readout_keeps_the_baseline() {
    let base = run_sweep(
        &quick_spec().baseline,
        &SequenceConfig::default(),
        &RateParams::default(),
    )
    .unwrap();
    let best = base.best(Metric::Snr).unwrap();
    let spec = OloSpec {
        start_duration_ns: best.duration_ns,
        start_amplitude: None,
        ..quick_spec()
    };
    let r = run_olo(&spec, &SequenceConfig::default(), &RateParams::default()).unwrap();
    // The init scan alone already lifts the start above the baseline.
    assert!(r.start_snr >= r.baseline_snr());
    assert!(r.final_snr >= r.baseline_snr());
}

#[test]
fn single_piece_olo_matches_a_dense_amplitude_scan() {
    let spec = OloSpec {
        n_read: 1,
        ..quick_spec()
    };
    let params = RateParams::default();
    let seq = SequenceConfig::default();
    let r = run_olo(&spec, &seq, &params).unwrap();

    let template = PiecewiseWaveform::constant(spec.start_duration_ns, 0.02, 1).unwrap();
    let mut obj = ReadoutObjective::new(&params, &seq, &r.init, &template, false).unwrap();
    let (mut best_u, mut best_v) = (0.0, f64::NEG_INFINITY);
    for k in 0..=10_000 {
        let u = k as f64 * 1e-4;
        let v = obj.expected_snr(&[u]).unwrap();
        if v > best_v {
            (best_u, best_v) = (u, v);
        }
    }
    let alpha_min = spec.optimizer.alpha_min;
    assert!(
        (r.state.best[0] - best_u).abs() <= alpha_min,
        "{} vs {best_u}",
        r.state.best[0]
    );
    assert!(r.final_snr <= best_v + 1e-9);
}

#[test]
fn tied_pieces_never_beat_free_pieces() {
    let seq = SequenceConfig::default();
    let params = RateParams::default();
    let free = run_olo(&quick_spec(), &seq, &params).unwrap();
    let tied = run_olo(
        &OloSpec {
            tied: true,
            ..quick_spec()
        },
        &seq,
        &params,
    )
    .unwrap();
    let a = tied.readout.amplitudes();
    assert!(a.iter().all(|&u| u == a[0]));
    assert!(tied.final_snr <= free.final_snr);
}

#[test]
fn runs_are_reproducible() {
    let seq = SequenceConfig::default();
    let params = RateParams::default();
    for stochastic in [false, true] {
        let spec = OloSpec {
            stochastic,
            optimizer: OptimizerConfig {
                max_queries: 300,
                seed: 7,
                ..OptimizerConfig::default()
            },
            ..quick_spec()
        };
        let a = run_olo(&spec, &seq, &params).unwrap();
        let b = run_olo(&spec, &seq, &params).unwrap();
        assert_eq!(a.state.log_jsonl(), b.state.log_jsonl());
        assert_eq!(a.readout, b.readout);
    }
}

#[test]
fn stochastic_queries_depend_on_the_seed() {
    let seq = SequenceConfig::default();
    let params = RateParams::default();
    let run = |seed| {
        let spec = OloSpec {
            stochastic: true,
            optimizer: OptimizerConfig {
                max_queries: 50,
                seed,
                ..OptimizerConfig::default()
            },
            ..quick_spec()
        };
        run_olo(&spec, &seq, &params).unwrap().state.log_jsonl()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn budget_exhaustion_is_reported_not_fatal() {
    let spec = OloSpec {
        optimizer: OptimizerConfig {
            max_queries: 25,
            ..OptimizerConfig::default()
        },
        ..quick_spec()
    };
    let r = run_olo(&spec, &SequenceConfig::default(), &RateParams::default()).unwrap();
    assert!(r.state.budget_exhausted);
    assert_eq!(r.state.queries, 25);
}

#[test]
fn init_only_sweep_keeps_the_readout() {
    let seq = SequenceConfig::default();
    let spec = SweepSpec {
        amplitudes: Grid::Values(vec![0.01, 0.1]),
        durations_ns: Grid::Values(vec![1000.0, 3000.0]),
        mode: SweepMode::InitOnly,
    };
    let r = run_sweep(&spec, &seq, &RateParams::default()).unwrap();
    assert_eq!(r.points.len(), 4);
    // Same readout everywhere, so totals differ only through the init.
    let global = run_sweep(
        &SweepSpec {
            mode: SweepMode::Global,
            ..spec
        },
        &seq,
        &RateParams::default(),
    )
    .unwrap();
    assert_ne!(r.points, global.points);
    assert!(r.points.iter().all(|p| p.snr.unwrap() > 0.0));
}
