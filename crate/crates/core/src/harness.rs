//! Constant-power parameter traversal and online optimization of the
//! readout waveform, wired from the simulator, metrics and optimizer.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{contrast, snr};
use crate::optimizer::{hj_optimize, OptimizerConfig, OptimizerState, QueryContext};
use crate::photophysics::{Populations, RateParams};
use crate::pump::{
    sample_counts, sub_seed, window_counts, PumpSimulator, PumpTrace, SequenceConfig, WindowCounts,
};
use crate::waveform::PiecewiseWaveform;

pub const SWEEP_CSV_HEADER: &str = "power,duration_ns,snr";
pub const PROJECTION_CSV_HEADER: &str = "power,best_snr,best_duration_ns";

/// A list of values or an evenly spaced range (both ends included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Linspace { start: f64, stop: f64, count: usize },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Linspace { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|k| start + (stop - start) * k as f64 / (*n - 1) as f64)
                    .collect(),
            },
        }
    }

    fn validate(&self, what: &str) -> Result<Vec<f64>> {
        let v = self.values();
        if v.is_empty() {
            return Err(Error::Config(format!("{what} grid is empty")));
        }
        if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "{what} grid must be finite and strictly increasing"
            )));
        }
        Ok(v)
    }
}

/// Which pulse the traversal varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Initialization and readout share one (amplitude, duration).
    #[default]
    Global,
    /// Only the initialization pulse varies; readout comes from the skeleton.
    InitOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Snr,
    Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Normalized drive amplitudes (the power axis).
    pub amplitudes: Grid,
    pub durations_ns: Grid,
    #[serde(default)]
    pub mode: SweepMode,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            amplitudes: Grid::Linspace {
                start: 0.025,
                stop: 0.5,
                count: 20,
            },
            durations_ns: Grid::Linspace {
                start: 100.0,
                stop: 2000.0,
                count: 20,
            },
            mode: SweepMode::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub duration_ns: f64,
    pub l0: f64,
    pub l1: f64,
    /// `None` where no photons were collected.
    pub snr: Option<f64>,
    pub contrast: Option<f64>,
}

impl SweepPoint {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Snr => self.snr,
            Metric::Contrast => self.contrast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub amplitude: f64,
    pub best: Option<f64>,
    pub best_duration_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub mode: SweepMode,
    pub amplitudes: Vec<f64>,
    pub durations: Vec<f64>,
    /// Amplitude-major: `points[i * durations.len() + j]`.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn at(&self, i_amp: usize, i_dur: usize) -> &SweepPoint {
        &self.points[i_amp * self.durations.len() + i_dur]
    }

    /// Best value over durations for each amplitude.
    pub fn projection(&self, metric: Metric) -> Vec<ProjectionRow> {
        (0..self.amplitudes.len())
            .map(|i| {
                let best = (0..self.durations.len())
                    .map(|j| self.at(i, j))
                    .filter_map(|p| p.metric(metric).map(|v| (v, p.duration_ns)))
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                ProjectionRow {
                    amplitude: self.amplitudes[i],
                    best: best.map(|b| b.0),
                    best_duration_ns: best.map(|b| b.1),
                }
            })
            .collect()
    }

    pub fn best(&self, metric: Metric) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.metric(metric).is_some())
            .max_by(|a, b| {
                a.metric(metric)
                    .unwrap()
                    .total_cmp(&b.metric(metric).unwrap())
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.amplitude, p.duration_ns, fmt_opt(p.snr));
        }
        out
    }

    pub fn projection_csv(&self) -> String {
        let mut out = String::from(PROJECTION_CSV_HEADER);
        out.push('\n');
        for row in self.projection(Metric::Snr) {
            let _ = writeln!(
                out,
                "{},{},{}",
                row.amplitude,
                fmt_opt(row.best),
                fmt_opt(row.best_duration_ns)
            );
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

fn sequence_for(
    spec_mode: SweepMode,
    skeleton: &SequenceConfig,
    amplitude: f64,
    duration: f64,
) -> Result<SequenceConfig> {
    let pulse = PiecewiseWaveform::constant(duration, amplitude, 1)?;
    Ok(match spec_mode {
        SweepMode::Global => skeleton.with_pulses(pulse.clone(), pulse),
        SweepMode::InitOnly => SequenceConfig {
            init: pulse,
            ..skeleton.clone()
        },
    })
}

fn point_metrics(l0: WindowCounts, l1: WindowCounts) -> (Option<f64>, Option<f64>) {
    (snr(l0, l1).ok(), contrast(l0, l1).ok())
}

/// Evaluates every (amplitude, duration) pair of the grid.
///
/// Grid points are independent and run in parallel; results are ordered
/// amplitude-major regardless of scheduling.
pub fn run_sweep(
    spec: &SweepSpec,
    skeleton: &SequenceConfig,
    params: &RateParams,
) -> Result<SweepResult> {
    params.validate()?;
    let amplitudes = spec.amplitudes.validate("amplitude")?;
    let durations = spec.durations_ns.validate("duration")?;
    let cells: Vec<(f64, f64)> = amplitudes
        .iter()
        .flat_map(|&a| durations.iter().map(move |&d| (a, d)))
        .collect();
    let points = cells
        .par_iter()
        .map(|&(a, d)| {
            let cfg = sequence_for(spec.mode, skeleton, a, d)?;
            let mut sim = PumpSimulator::new(params)?;
            let (l0, l1) = sim.pair_counts(&cfg)?;
            let (snr, contrast) = point_metrics(l0, l1);
            Ok(SweepPoint {
                amplitude: a,
                duration_ns: d,
                l0: l0.0,
                l1: l1.0,
                snr,
                contrast,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        mode: spec.mode,
        amplitudes,
        durations,
        points,
    })
}

/// Initialization and readout pulses that together define one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsePair {
    pub init: PiecewiseWaveform,
    pub readout: PiecewiseWaveform,
}

impl PulsePair {
    pub fn sequence(&self, skeleton: &SequenceConfig) -> SequenceConfig {
        skeleton.with_pulses(self.init.clone(), self.readout.clone())
    }
}

/// The square-pulse scheme at the best grid point of a global sweep.
pub fn constant_scheme(sweep: &SweepResult, metric: Metric) -> Result<PulsePair> {
    if sweep.mode != SweepMode::Global {
        return Err(Error::Config(
            "constant schemes come from a global sweep".into(),
        ));
    }
    let best = sweep
        .best(metric)
        .ok_or_else(|| Error::UndefinedMetric("no grid point has a defined metric".into()))?;
    let pulse = PiecewiseWaveform::constant(best.duration_ns, best.amplitude, 1)?;
    Ok(PulsePair {
        init: pulse.clone(),
        readout: pulse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OloSpec {
    pub n_init: usize,
    pub n_read: usize,
    pub start_duration_ns: f64,
    /// `None` starts from the best constant amplitude of the baseline sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_amplitude: Option<f64>,
    /// Optimize a single amplitude shared by all readout pieces.
    pub tied: bool,
    /// Sample Poisson counts at every query instead of using expectations.
    pub stochastic: bool,
    pub optimizer: OptimizerConfig,
    pub baseline: SweepSpec,
    /// Amplitudes scanned for the initialization pulse, whose duration is
    /// taken from the sequence skeleton.
    pub init_amplitudes: Grid,
}

impl Default for OloSpec {
    fn default() -> Self {
        Self {
            n_init: 1,
            n_read: 20,
            start_duration_ns: 920.0,
            start_amplitude: Some(0.02),
            tied: false,
            stochastic: false,
            optimizer: OptimizerConfig::default(),
            baseline: SweepSpec::default(),
            init_amplitudes: Grid::Linspace {
                start: 0.005,
                stop: 0.2,
                count: 40,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OloResult {
    pub state: OptimizerState,
    pub init: PiecewiseWaveform,
    pub readout: PiecewiseWaveform,
    /// Best point of the global traversal.
    pub baseline: SweepPoint,
    pub init_choice: SweepPoint,
    pub start_snr: f64,
    /// Expected-count SNR of the optimized waveform.
    pub final_snr: f64,
    /// `final_snr / baseline_snr - 1`.
    pub improvement: f64,
    pub traces: (PumpTrace, PumpTrace),
}

impl OloResult {
    pub fn baseline_snr(&self) -> f64 {
        self.baseline.snr.expect("baseline has a defined SNR")
    }

    pub fn pulses(&self) -> PulsePair {
        PulsePair {
            init: self.init.clone(),
            readout: self.readout.clone(),
        }
    }
}

/// SNR objective over readout amplitudes for a fixed initialization.
///
/// The prepared pre-readout state is computed once; every query only runs
/// the two readout branches.
pub struct ReadoutObjective {
    sim: PumpSimulator,
    skeleton: SequenceConfig,
    template: PiecewiseWaveform,
    prepared: Populations,
    stochastic: bool,
}

impl ReadoutObjective {
    pub fn new(
        params: &RateParams,
        skeleton: &SequenceConfig,
        init: &PiecewiseWaveform,
        template: &PiecewiseWaveform,
        stochastic: bool,
    ) -> Result<Self> {
        let skeleton = skeleton.with_pulses(init.clone(), template.clone());
        skeleton.validate()?;
        let mut sim = PumpSimulator::new(params)?;
        let prepared = sim.prepare(&skeleton)?;
        Ok(Self {
            sim,
            skeleton,
            template: template.clone(),
            prepared,
            stochastic,
        })
    }

    /// Expected window totals `(L0, L1)` for readout amplitudes `u`.
    pub fn counts(&mut self, u: &[f64]) -> Result<(WindowCounts, WindowCounts)> {
        let readout = self.template.with_amplitudes(u.to_vec())?;
        let cfg = &self.skeleton;
        let bw = cfg.bin_width_ns;
        let t0 = self.sim.run(&self.prepared, &readout, bw)?;
        let t1 = self.sim.run(&self.prepared.swap_ground(), &readout, bw)?;
        let w = cfg.detection_width();
        Ok((
            window_counts(&t0, cfg.detection_offset_ns, w, cfg.repetitions)?,
            window_counts(&t1, cfg.detection_offset_ns, w, cfg.repetitions)?,
        ))
    }

    /// Expected-count SNR; a dark readout scores 0.
    pub fn expected_snr(&mut self, u: &[f64]) -> Result<f64> {
        let (l0, l1) = self.counts(u)?;
        Ok(snr(l0, l1).unwrap_or(0.0))
    }

    pub fn evaluate(&mut self, u: &[f64], seed: Option<u64>) -> Result<f64> {
        let (mut l0, mut l1) = self.counts(u)?;
        if self.stochastic {
            let seed = seed.unwrap_or(0);
            l0 = sample_counts(l0, sub_seed(seed, 0))?;
            l1 = sample_counts(l1, sub_seed(seed, 1))?;
        }
        Ok(snr(l0, l1).unwrap_or(0.0))
    }
}

/// Full online-optimization run: global traversal baseline, an amplitude
/// scan for the initialization pulse, then Hooke-Jeeves over the readout
/// amplitudes.
pub fn run_olo(
    spec: &OloSpec,
    skeleton: &SequenceConfig,
    params: &RateParams,
) -> Result<OloResult> {
    if spec.n_init == 0 || spec.n_read == 0 {
        return Err(Error::Config("piece counts must be >= 1".into()));
    }
    if spec.baseline.mode != SweepMode::Global {
        return Err(Error::Config(
            "the OLO baseline must be a global sweep".into(),
        ));
    }
    let baseline_sweep = run_sweep(&spec.baseline, skeleton, params)?;
    let baseline = *baseline_sweep
        .best(Metric::Snr)
        .ok_or_else(|| Error::UndefinedMetric("baseline sweep has no defined SNR".into()))?;
    let base_readout = PiecewiseWaveform::constant(baseline.duration_ns, baseline.amplitude, 1)?;

    let init_skeleton = SequenceConfig {
        readout: base_readout,
        detection_width_ns: None,
        ..skeleton.clone()
    };
    let init_search = SweepSpec {
        amplitudes: spec.init_amplitudes.clone(),
        durations_ns: Grid::Values(vec![skeleton.init.duration()]),
        mode: SweepMode::InitOnly,
    };
    let init_sweep = run_sweep(&init_search, &init_skeleton, params)?;
    let init_choice = *init_sweep
        .best(Metric::Snr)
        .ok_or_else(|| Error::UndefinedMetric("initialization search has no defined SNR".into()))?;
    let init =
        PiecewiseWaveform::constant(init_choice.duration_ns, init_choice.amplitude, spec.n_init)?;

    let start_amp = spec.start_amplitude.unwrap_or(baseline.amplitude);
    let template = PiecewiseWaveform::constant(spec.start_duration_ns, start_amp, spec.n_read)?;
    let mut objective = ReadoutObjective::new(params, skeleton, &init, &template, spec.stochastic)?;
    let start_snr = objective.expected_snr(template.amplitudes())?;

    let mut opt_cfg = spec.optimizer.clone();
    if spec.stochastic
        && opt_cfg.seed_policy == crate::optimizer::SeedPolicy::DeterministicObjective
    {
        opt_cfg.seed_policy = crate::optimizer::SeedPolicy::FreshSeedPerQuery;
    }
    let n_read = spec.n_read;
    let mut failure = None;
    let mut eval = |u: &[f64], ctx: QueryContext| -> f64 {
        let full;
        let u = if spec.tied {
            full = vec![u[0]; n_read];
            &full[..]
        } else {
            u
        };
        match objective.evaluate(u, ctx.seed) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let u0 = if spec.tied {
        vec![start_amp]
    } else {
        template.amplitudes().to_vec()
    };
    let outcome = hj_optimize(&mut eval, &u0, &opt_cfg);
    if let Some(e) = failure {
        return Err(e);
    }
    let state = outcome?;

    let best = if spec.tied {
        vec![state.best[0]; n_read]
    } else {
        state.best.clone()
    };
    let readout = template.with_amplitudes(best)?;
    let final_snr = objective.expected_snr(readout.amplitudes())?;
    let final_cfg = skeleton.with_pulses(init.clone(), readout.clone());
    let traces = PumpSimulator::new(params)?.pair(&final_cfg)?;
    let baseline_snr = baseline.snr.unwrap();
    Ok(OloResult {
        state,
        init,
        readout,
        baseline,
        init_choice,
        start_snr,
        final_snr,
        improvement: final_snr / baseline_snr - 1.0,
        traces,
    })
}
