//! Optical pumping sequences: expected photon time traces and window totals.
//!
//! Counts are integrated exactly over each constant-rate stretch by
//! exponentiating the generator augmented with a photon-counter row, so
//! traces carry no time-step error. Binning only decides where the
//! counter is read out.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::photophysics::{build_rate_matrix, Level, Populations, RateParams, NUM_LEVELS};
use crate::waveform::{rates_of, PiecewiseWaveform};

pub const TRACE_CSV_HEADER: &str =
    "bin_start_ns,expected_counts_per_rep_branch0,expected_counts_per_rep_branch1,diff";

const AUG: usize = NUM_LEVELS + 1;
const CACHE_LIMIT: usize = 4096;

/// Initialization → dark wait → readout, repeated `repetitions` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub init: PiecewiseWaveform,
    #[serde(default = "default_wait")]
    pub wait_ns: f64,
    pub readout: PiecewiseWaveform,
    #[serde(default = "default_bin_width")]
    pub bin_width_ns: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u64,
    #[serde(default)]
    pub detection_offset_ns: f64,
    /// Defaults to the rest of the readout after the offset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_width_ns: Option<f64>,
}

fn default_wait() -> f64 {
    1500.0
}

fn default_bin_width() -> f64 {
    2.0
}

fn default_repetitions() -> u64 {
    100_000_000
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            init: PiecewiseWaveform::constant(2000.0, 0.2, 1).unwrap(),
            wait_ns: default_wait(),
            readout: PiecewiseWaveform::constant(600.0, 0.2, 1).unwrap(),
            bin_width_ns: default_bin_width(),
            repetitions: default_repetitions(),
            detection_offset_ns: 0.0,
            detection_width_ns: None,
        }
    }
}

impl SequenceConfig {
    pub fn detection_width(&self) -> f64 {
        self.detection_width_ns
            .unwrap_or(self.readout.duration() - self.detection_offset_ns)
    }

    /// Same sequence with new pulses, keeping the detection offset and
    /// resetting the window to the full remainder of the readout.
    pub fn with_pulses(&self, init: PiecewiseWaveform, readout: PiecewiseWaveform) -> Self {
        Self {
            init,
            readout,
            detection_width_ns: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wait_ns.is_finite() && self.wait_ns >= 0.0) {
            return Err(Error::Config(format!(
                "wait must be >= 0 ns, got {}",
                self.wait_ns
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        bin_count(self.readout.duration(), self.bin_width_ns)?;
        let offset = self.detection_offset_ns;
        let width = self.detection_width();
        if !(offset >= 0.0 && width >= 0.0) {
            return Err(Error::Config(format!(
                "detection window [{offset}, {offset}+{width}] must be non-negative"
            )));
        }
        if offset + width > self.readout.duration() * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "detection window ends at {} ns, after the {} ns readout",
                offset + width,
                self.readout.duration()
            )));
        }
        Ok(())
    }
}

/// Expected detected photons per repetition, binned over a waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct PumpTrace {
    pub bin_starts: Vec<f64>,
    pub bin_width: f64,
    pub expected_counts_per_rep: Vec<f64>,
    pub final_populations: Populations,
}

impl PumpTrace {
    pub fn total_per_rep(&self) -> f64 {
        self.expected_counts_per_rep.iter().sum()
    }
}

/// Photon total in the detection window over all repetitions.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct WindowCounts(pub f64);

impl WindowCounts {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn bin_count(duration: f64, bin_width: f64) -> Result<usize> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Config(format!(
            "bin width must be > 0, got {bin_width}"
        )));
    }
    let n = (duration / bin_width).round();
    if n < 1.0 || (n * bin_width - duration).abs() > 1e-9 * duration {
        return Err(Error::Config(format!(
            "bin width {bin_width} ns does not divide the {duration} ns waveform"
        )));
    }
    Ok(n as usize)
}

/// Rate-equation integrator with a propagator cache keyed by pumping rate
/// and step length. Reuse one instance across branches of a sequence.
#[derive(Debug)]
pub struct PumpSimulator {
    params: RateParams,
    cache: HashMap<(u64, i64), Mat<AUG>>,
}

impl PumpSimulator {
    pub fn new(params: &RateParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: *params,
            cache: HashMap::new(),
        })
    }

    pub fn params(&self) -> &RateParams {
        &self.params
    }

    fn propagator(&mut self, beta: f64, dt: f64) -> Result<&Mat<AUG>> {
        // Steps that differ only by rounding share one propagator.
        let key = (beta.to_bits(), (dt * 1e6).round() as i64);
        if !self.cache.contains_key(&key) {
            // Optimizer runs visit many distinct rates; keep memory bounded.
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            let m = build_rate_matrix(&self.params, beta)?;
            let mut a = [[0.0; AUG]; AUG];
            for (arow, mrow) in a.iter_mut().zip(m.as_array()) {
                arow[..NUM_LEVELS].copy_from_slice(mrow);
            }
            let gain = self.params.eta * self.params.k_rad;
            a[NUM_LEVELS][Level::E0.index()] = gain;
            a[NUM_LEVELS][Level::E1.index()] = gain;
            for x in a.iter_mut().flatten() {
                *x *= dt;
            }
            self.cache.insert(key, linalg::expm(&a));
        }
        Ok(&self.cache[&key])
    }

    /// Runs `wf` from `p0`, reading the photon counter every `bin_width` ns.
    pub fn run(
        &mut self,
        p0: &Populations,
        wf: &PiecewiseWaveform,
        bin_width: f64,
    ) -> Result<PumpTrace> {
        let nbins = bin_count(wf.duration(), bin_width)?;
        let segments = rates_of(wf, &self.params.amp_map);
        let bin_edge = |j: usize| {
            if j == nbins {
                wf.duration()
            } else {
                wf.duration() * j as f64 / nbins as f64
            }
        };
        let scatter = self.params.scatter;

        let mut state = [0.0; AUG];
        state[..NUM_LEVELS].copy_from_slice(p0.as_array());
        let mut counts = Vec::with_capacity(nbins);
        let mut starts = Vec::with_capacity(nbins);
        let mut seg = 0;
        for j in 0..nbins {
            let (lo, hi) = (bin_edge(j), bin_edge(j + 1));
            starts.push(lo);
            state[NUM_LEVELS] = 0.0;
            let mut extra = 0.0;
            let mut t = lo;
            while t < hi {
                while seg + 1 < segments.len() && segments[seg].start + segments[seg].width <= t {
                    seg += 1;
                }
                let s = segments[seg];
                let seg_end = if seg + 1 == segments.len() {
                    hi
                } else {
                    (s.start + s.width).min(hi)
                };
                let dt = seg_end - t;
                if dt > 1e-12 * wf.duration() {
                    let u = *self.propagator(s.beta, dt)?;
                    state = linalg::mat_vec(&u, &state);
                    extra += scatter * s.beta * dt;
                }
                t = seg_end;
            }
            counts.push(state[NUM_LEVELS] + extra);
        }
        let mut p = [0.0; NUM_LEVELS];
        p.copy_from_slice(&state[..NUM_LEVELS]);
        Ok(PumpTrace {
            bin_starts: starts,
            bin_width: wf.duration() / nbins as f64,
            expected_counts_per_rep: counts,
            final_populations: Populations::new(p)?,
        })
    }

    /// Populations at the end of `wf`.
    pub fn advance(&mut self, p0: &Populations, wf: &PiecewiseWaveform) -> Result<Populations> {
        Ok(self.run(p0, wf, wf.duration())?.final_populations)
    }

    /// Laser-off evolution for `dt` ns.
    pub fn dark(&mut self, p0: &Populations, dt: f64) -> Result<Populations> {
        if dt == 0.0 {
            return Ok(*p0);
        }
        let m = build_rate_matrix(&self.params, 0.0)?;
        crate::photophysics::propagate(&m, p0, dt)
    }

    /// State just before the readout pulse (and before any microwave
    /// operation): thermal start, initialization pulse, dark wait.
    pub fn prepare(&mut self, cfg: &SequenceConfig) -> Result<Populations> {
        let p = self.advance(&Populations::thermal(), &cfg.init)?;
        self.dark(&p, cfg.wait_ns)
    }

    pub fn pair(&mut self, cfg: &SequenceConfig) -> Result<(PumpTrace, PumpTrace)> {
        cfg.validate()?;
        let p = self.prepare(cfg)?;
        let t0 = self.run(&p, &cfg.readout, cfg.bin_width_ns)?;
        let t1 = self.run(&p.swap_ground(), &cfg.readout, cfg.bin_width_ns)?;
        Ok((t0, t1))
    }

    /// Window totals `(L0, L1)` over the configured repetitions.
    pub fn pair_counts(&mut self, cfg: &SequenceConfig) -> Result<(WindowCounts, WindowCounts)> {
        let (t0, t1) = self.pair(cfg)?;
        let width = cfg.detection_width();
        Ok((
            window_counts(&t0, cfg.detection_offset_ns, width, cfg.repetitions)?,
            window_counts(&t1, cfg.detection_offset_ns, width, cfg.repetitions)?,
        ))
    }
}

/// Expected per-bin photons for `wf` starting from `p0`.
pub fn simulate_pump(
    p0: &Populations,
    wf: &PiecewiseWaveform,
    params: &RateParams,
    bin_width: f64,
) -> Result<PumpTrace> {
    PumpSimulator::new(params)?.run(p0, wf, bin_width)
}

/// Paired measurement: branch 0 reads out the prepared state, branch 1
/// applies an ideal π pulse first.
pub fn simulate_pair(cfg: &SequenceConfig, params: &RateParams) -> Result<(PumpTrace, PumpTrace)> {
    PumpSimulator::new(params)?.pair(cfg)
}

/// Sums bins in `[offset, offset + width]` and scales by `repetitions`.
pub fn window_counts(
    trace: &PumpTrace,
    offset: f64,
    width: f64,
    repetitions: u64,
) -> Result<WindowCounts> {
    let bw = trace.bin_width;
    let to_bins = |x: f64, what: &str| -> Result<usize> {
        let k = (x / bw).round();
        if !(x >= 0.0) || (k * bw - x).abs() > 1e-9 * bw.max(x) {
            return Err(Error::Config(format!(
                "detection {what} {x} ns is not a multiple of the {bw} ns bin"
            )));
        }
        Ok(k as usize)
    };
    let first = to_bins(offset, "offset")?;
    let count = to_bins(width, "width")?;
    if first + count > trace.expected_counts_per_rep.len() {
        return Err(Error::Config(format!(
            "detection window [{offset}, {}] ns exceeds the trace",
            offset + width
        )));
    }
    let per_rep: f64 = trace.expected_counts_per_rep[first..first + count]
        .iter()
        .sum();
    Ok(WindowCounts(repetitions as f64 * per_rep))
}

/// One Poisson draw with mean `expected`, from a ChaCha8 stream seeded
/// with `seed`.
pub fn sample_counts(expected: WindowCounts, seed: u64) -> Result<WindowCounts> {
    let mean = expected.0;
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Numeric(format!(
            "Poisson mean must be finite and >= 0, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(WindowCounts(0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Poisson::new(mean).map_err(|e| Error::Numeric(format!("Poisson({mean}): {e}")))?;
    Ok(WindowCounts(dist.sample(&mut rng)))
}

/// Derives an independent seed for item `index` of a run seeded with `seed`
/// (SplitMix64 finalizer).
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn pair_trace_csv(t0: &PumpTrace, t1: &PumpTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for ((t, a), b) in t0
        .bin_starts
        .iter()
        .zip(&t0.expected_counts_per_rep)
        .zip(&t1.expected_counts_per_rep)
    {
        let _ = writeln!(out, "{t},{a},{b},{}", a - b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photophysics::{steady_state, Level};
    use crate::waveform::AmplitudeBounds;

    fn no_scatter() -> RateParams {
        RateParams {
            scatter: 0.0,
            ..RateParams::default()
        }
    }

    #[test]
    fn dark_waveform_emits_nothing() {
        let wf = PiecewiseWaveform::constant(400.0, 0.0, 20).unwrap();
        let tr = simulate_pump(&Populations::thermal(), &wf, &RateParams::default(), 2.0).unwrap();
        assert!(tr.expected_counts_per_rep.iter().all(|&c| c == 0.0));
        assert_eq!(tr.expected_counts_per_rep.len(), 200);
    }

    #[test]
    fn bright_state_starts_brighter() {
        let wf = PiecewiseWaveform::constant(300.0, 0.3, 1).unwrap();
        let p = RateParams::default();
        let a = simulate_pump(&Populations::pure(Level::G0), &wf, &p, 2.0).unwrap();
        let b = simulate_pump(&Populations::pure(Level::G1), &wf, &p, 2.0).unwrap();
        assert!(a.expected_counts_per_rep[0] > b.expected_counts_per_rep[0]);
    }

    #[test]
    fn long_pulse_ends_in_steady_state() {
        let p = RateParams::default();
        let wf = PiecewiseWaveform::constant(10_000.0, 0.4, 1).unwrap();
        let tr = simulate_pump(&Populations::thermal(), &wf, &p, 100.0).unwrap();
        let ss = steady_state(&build_rate_matrix(&p, p.amp_map.rate(0.4)).unwrap()).unwrap();
        for l in Level::ALL {
            assert!((tr.final_populations.get(l) - ss.get(l)).abs() < 1e-6);
        }
    }

    #[test]
    fn counts_match_quadrature_of_emission_rate() {
        // Independent check: midpoint-rule integration of eta*k_rad*p_E(t)
        // using the plain 5x5 propagator at fine steps.
        let p = no_scatter();
        let wf =
            PiecewiseWaveform::new(60.0, vec![0.1, 0.7, 0.3], AmplitudeBounds::default()).unwrap();
        let tr = simulate_pump(&Populations::pure(Level::G0), &wf, &p, 20.0).unwrap();
        // Steps must tile the pieces exactly.
        let steps = 24_000;
        let h = 60.0 / steps as f64;
        let mut pop = Populations::pure(Level::G0);
        let mut bins = [0.0; 3];
        for k in 0..steps {
            let t = (k as f64 + 0.5) * h;
            let piece = (t / 20.0) as usize;
            let m = build_rate_matrix(&p, p.amp_map.rate(wf.amplitudes()[piece])).unwrap();
            let mid = crate::photophysics::propagate(&m, &pop, 0.5 * h).unwrap();
            bins[piece] += crate::photophysics::emission_rate(&mid, &p) * h;
            pop = crate::photophysics::propagate(&m, &pop, h).unwrap();
        }
        for (got, want) in tr.expected_counts_per_rep.iter().zip(bins) {
            assert!((got - want).abs() < 1e-8 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn scatter_adds_rate_times_duration() {
        let base = no_scatter();
        let with = RateParams {
            scatter: 1e-3,
            ..base
        };
        let wf = PiecewiseWaveform::new(100.0, vec![0.2, 0.6], AmplitudeBounds::default()).unwrap();
        let a = simulate_pump(&Populations::thermal(), &wf, &base, 50.0).unwrap();
        let b = simulate_pump(&Populations::thermal(), &wf, &with, 50.0).unwrap();
        let extra = 1e-3 * 50.0 * (0.1 + 0.3);
        assert!((b.total_per_rep() - a.total_per_rep() - extra).abs() < 1e-15);
    }

    #[test]
    fn bins_that_straddle_pieces_are_split() {
        let p = RateParams::default();
        let wf =
            PiecewiseWaveform::new(90.0, vec![0.1, 0.9, 0.4], AmplitudeBounds::default()).unwrap();
        let coarse = simulate_pump(&Populations::thermal(), &wf, &p, 45.0).unwrap();
        let fine = simulate_pump(&Populations::thermal(), &wf, &p, 1.0).unwrap();
        let fine_first: f64 = fine.expected_counts_per_rep[..45].iter().sum();
        assert!((coarse.expected_counts_per_rep[0] - fine_first).abs() < 1e-12 * fine_first);
    }

    #[test]
    fn misaligned_bins_are_rejected() {
        let wf = PiecewiseWaveform::constant(100.0, 0.3, 1).unwrap();
        assert!(matches!(
            simulate_pump(&Populations::thermal(), &wf, &RateParams::default(), 3.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unpolarized_init_gives_identical_branches() {
        let cfg = SequenceConfig {
            init: PiecewiseWaveform::constant(100.0, 0.0, 1).unwrap(),
            ..SequenceConfig::default()
        };
        let (t0, t1) = simulate_pair(&cfg, &RateParams::default()).unwrap();
        assert_eq!(t0.expected_counts_per_rep, t1.expected_counts_per_rep);
    }

    #[test]
    fn repetitions_only_scale_window_totals() {
        let mut cfg = SequenceConfig::default();
        let p = RateParams::default();
        let (a0, _) = simulate_pair(&cfg, &p).unwrap();
        cfg.repetitions *= 2;
        let (b0, _) = simulate_pair(&cfg, &p).unwrap();
        assert_eq!(a0, b0);
        let w1 = window_counts(&a0, 0.0, 600.0, 1000).unwrap();
        let w2 = window_counts(&a0, 0.0, 600.0, 2000).unwrap();
        assert_eq!(w2.0, 2.0 * w1.0);
    }

    #[test]
    fn window_examples() {
        let tr = PumpTrace {
            bin_starts: vec![0.0, 1.0, 2.0, 3.0],
            bin_width: 1.0,
            expected_counts_per_rep: vec![5e-3; 4],
            final_populations: Populations::thermal(),
        };
        assert_eq!(window_counts(&tr, 1.0, 0.0, 100).unwrap().0, 0.0);
        assert!((window_counts(&tr, 0.0, 4.0, 100_000_000).unwrap().0 - 2.0e6).abs() < 1e-6);
        assert!(window_counts(&tr, 0.5, 1.0, 1).is_err());
        assert!(window_counts(&tr, 2.0, 3.0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        assert_eq!(sample_counts(WindowCounts(0.0), 3).unwrap().0, 0.0);
        let a = sample_counts(WindowCounts(1e6), 42).unwrap();
        let b = sample_counts(WindowCounts(1e6), 42).unwrap();
        assert_eq!(a, b);
        assert!(sample_counts(WindowCounts(f64::NAN), 1).is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let cfg = SequenceConfig::default();
        let (t0, t1) = simulate_pair(&cfg, &RateParams::default()).unwrap();
        let csv = pair_trace_csv(&t0, &t1);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_CSV_HEADER));
        assert_eq!(lines.count(), 300);
    }

    #[test]
    fn sequence_validation() {
        let mut cfg = SequenceConfig::default();
        cfg.detection_offset_ns = 500.0;
        cfg.detection_width_ns = Some(200.0);
        assert!(cfg.validate().is_err());
        cfg.detection_width_ns = Some(100.0);
        cfg.validate().unwrap();
        cfg.repetitions = 0;
        assert!(cfg.validate().is_err());
    }
}
