use std::f64::consts::PI;

use nvolo::harness::{constant_scheme, run_sweep, Grid, Metric, PulsePair, SweepSpec};
use nvolo::pump::window_counts;
use nvolo::rabi::{compare_schemes, simulate_rabi, RabiConfig, RabiScheme, SchemeKind};
use nvolo::{simulate_pair, PiecewiseWaveform, RateParams, SequenceConfig};

fn square_scheme(kind: SchemeKind, d: f64, a: f64) -> RabiScheme {
    let p = PiecewiseWaveform::constant(d, a, 1).unwrap();
    RabiScheme {
        kind,
        pulses: PulsePair {
            init: p.clone(),
            readout: p,
        },
    }
}

#[test]
fn endpoints_match_the_paired_branches() {
    let omega = RabiConfig::default().omega;
    let cfg = RabiConfig {
        // 0, π/Ω and a few extra points to cover two periods.
        taus_ns: Grid::Values(vec![0.0, 50.0, PI / omega, 150.0, 250.0, 330.0, 400.0]),
        ..RabiConfig::default()
    };
    let scheme = square_scheme(SchemeKind::ConstantSnr, 200.0, 0.175);
    let params = RateParams::default();
    let skeleton = SequenceConfig::default();
    let curve = simulate_rabi(&cfg, &scheme, &skeleton, &params).unwrap();

    let seq = SequenceConfig {
        repetitions: cfg.repetitions,
        ..scheme.pulses.sequence(&skeleton)
    };
    let (t0, t1) = simulate_pair(&seq, &params).unwrap();
    let l0 = window_counts(&t0, 0.0, 200.0, cfg.repetitions).unwrap().0;
    let l1 = window_counts(&t1, 0.0, 200.0, cfg.repetitions).unwrap().0;
    assert_eq!(curve.counts[0], l0);
    assert!((curve.counts[2] - l1).abs() <= 1e-12 * l1);
}

#[test]
fn deterministic_curve_is_periodic_and_on_the_fit() {
    let cfg = RabiConfig::default();
    let c = simulate_rabi(
        &cfg,
        &square_scheme(SchemeKind::ConstantSnr, 300.0, 0.1),
        &SequenceConfig::default(),
        &RateParams::default(),
    )
    .unwrap();
    // 64 points over 400 ns; the period is 200 ns.
    let taus = &c.taus;
    let step = taus[1] - taus[0];
    let shift = (2.0 * PI / cfg.omega / step).round() as usize;
    for i in 0..c.ys.len() - shift {
        if ((taus[i + shift] - taus[i]) - 2.0 * PI / cfg.omega).abs() < 1e-9 {
            assert!((c.ys[i] - c.ys[i + shift]).abs() < 1e-9);
        }
    }
    assert!(c.mean_dev.unwrap() < 1e-6);
    let fit = c.fit.unwrap();
    assert_eq!(c.contrast.unwrap(), (fit.max() - fit.min()) / fit.max());
    let top = c.ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(top, 1.0);
}

#[test]
fn stochastic_deviation_follows_the_square_root_law() {
    let scheme = square_scheme(SchemeKind::ConstantSnr, 200.0, 0.175);
    let params = RateParams::default();
    let skeleton = SequenceConfig::default();
    let dev = |n: u64| {
        (0..4)
            .map(|seed| {
                let cfg = RabiConfig {
                    repetitions: n,
                    stochastic: true,
                    seed,
                    ..RabiConfig::default()
                };
                simulate_rabi(&cfg, &scheme, &skeleton, &params)
                    .unwrap()
                    .mean_dev
                    .unwrap()
            })
            .sum::<f64>()
            / 4.0
    };
    let d = [dev(10_000), dev(1_000_000), dev(100_000_000)];
    for w in d.windows(2) {
        let ratio = w[0] / w[1];
        assert!((10.0 / 1.5..=10.0 * 1.5).contains(&ratio), "{d:?}");
    }
}

#[test]
fn contrast_scheme_has_the_higher_contrast() {
    let params = RateParams::default();
    let skeleton = SequenceConfig::default();
    let sweep = run_sweep(&SweepSpec::default(), &skeleton, &params).unwrap();
    let by_snr = sweep.best(Metric::Snr).unwrap();
    let by_contrast = sweep.best(Metric::Contrast).unwrap();
    assert!(by_contrast.contrast.unwrap() >= by_snr.contrast.unwrap());

    let schemes = [
        RabiScheme {
            kind: SchemeKind::ConstantSnr,
            pulses: constant_scheme(&sweep, Metric::Snr).unwrap(),
        },
        RabiScheme {
            kind: SchemeKind::ConstantContrast,
            pulses: constant_scheme(&sweep, Metric::Contrast).unwrap(),
        },
    ];
    let cmp = compare_schemes(&RabiConfig::default(), &schemes, &skeleton, &params).unwrap();
    let c_snr = cmp
        .curve(SchemeKind::ConstantSnr)
        .unwrap()
        .contrast
        .unwrap();
    let c_con = cmp
        .curve(SchemeKind::ConstantContrast)
        .unwrap()
        .contrast
        .unwrap();
    assert!(c_con >= c_snr);
    // Without the optimized scheme the orderings are not defined.
    assert_eq!(cmp.olo_beats_constant_snr_contrast(), None);
}

#[test]
fn csv_rows_follow_the_grid() {
    let c = simulate_rabi(
        &RabiConfig::default(),
        &square_scheme(SchemeKind::Olo, 200.0, 0.2),
        &SequenceConfig::default(),
        &RateParams::default(),
    )
    .unwrap();
    let csv = c.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tau_ns,y,fit_y,deviation"));
    assert_eq!(lines.count(), 64);
}
