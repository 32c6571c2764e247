//! Piecewise-constant laser drive: `n` equal-width pieces, one normalized
//! amplitude per piece.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photophysics::AmplitudeMap;

pub const WAVEFORM_CSV_HEADER: &str = "piece_index,start_ns,width_ns,amplitude";

/// Box constraint on every amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for AmplitudeBounds {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl AmplitudeBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Domain(format!(
                "amplitude bounds need lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    pub fn clip(&self, u: f64) -> f64 {
        u.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WaveformRepr", into = "WaveformRepr")]
pub struct PiecewiseWaveform {
    duration: f64,
    amplitudes: Vec<f64>,
    bounds: AmplitudeBounds,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaveformRepr {
    duration_ns: f64,
    amplitudes: Vec<f64>,
    #[serde(default)]
    bounds: AmplitudeBounds,
}

impl TryFrom<WaveformRepr> for PiecewiseWaveform {
    type Error = Error;

    fn try_from(r: WaveformRepr) -> Result<Self> {
        PiecewiseWaveform::new(r.duration_ns, r.amplitudes, r.bounds)
    }
}

impl From<PiecewiseWaveform> for WaveformRepr {
    fn from(w: PiecewiseWaveform) -> Self {
        Self {
            duration_ns: w.duration,
            amplitudes: w.amplitudes,
            bounds: w.bounds,
        }
    }
}

/// One constant-rate stretch of the drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment {
    pub start: f64,
    pub width: f64,
    pub beta: f64,
}

impl PiecewiseWaveform {
    pub fn new(duration: f64, amplitudes: Vec<f64>, bounds: AmplitudeBounds) -> Result<Self> {
        bounds.validate()?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Domain(format!(
                "waveform duration must be > 0, got {duration}"
            )));
        }
        if amplitudes.is_empty() {
            return Err(Error::Domain("waveform needs at least one piece".into()));
        }
        if let Some((i, u)) = amplitudes
            .iter()
            .enumerate()
            .find(|(_, u)| !bounds.contains(**u))
        {
            return Err(Error::Domain(format!(
                "amplitude {u} of piece {i} outside [{}, {}]",
                bounds.lo, bounds.hi
            )));
        }
        Ok(Self {
            duration,
            amplitudes,
            bounds,
        })
    }

    /// A square pulse split into `n` identical pieces.
    pub fn constant(duration: f64, amplitude: f64, n: usize) -> Result<Self> {
        Self::new(duration, vec![amplitude; n], AmplitudeBounds::default())
    }

    pub fn n(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn bounds(&self) -> AmplitudeBounds {
        self.bounds
    }

    pub fn piece_width(&self) -> f64 {
        self.duration / self.n() as f64
    }

    /// Start time of piece `i`; `edge(n)` is the duration exactly.
    pub fn edge(&self, i: usize) -> f64 {
        if i == self.n() {
            self.duration
        } else {
            self.duration * i as f64 / self.n() as f64
        }
    }

    /// Same duration and bounds, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<f64>) -> Result<Self> {
        Self::new(self.duration, amplitudes, self.bounds)
    }

    pub fn is_dark(&self) -> bool {
        self.amplitudes.iter().all(|&u| u == 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(WAVEFORM_CSV_HEADER);
        out.push('\n');
        for (i, u) in self.amplitudes.iter().enumerate() {
            let start = self.edge(i);
            let width = self.edge(i + 1) - start;
            let _ = writeln!(out, "{i},{start},{width},{u}");
        }
        out
    }

    /// Parses the CSV written by [`to_csv`](Self::to_csv). Pieces must be
    /// contiguous, in order and of equal width.
    pub fn from_csv(text: &str, bounds: AmplitudeBounds) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == WAVEFORM_CSV_HEADER => {}
            other => {
                return Err(Error::Config(format!(
                    "waveform CSV header must be `{WAVEFORM_CSV_HEADER}`, got {other:?}"
                )))
            }
        }
        let mut amplitudes = Vec::new();
        let mut widths = Vec::new();
        let mut end = 0.0;
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "waveform CSV row {row}: expected 4 fields"
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("waveform CSV row {row}: {e}")))
            };
            let index: usize = fields[0]
                .parse()
                .map_err(|e| Error::Config(format!("waveform CSV row {row}: {e}")))?;
            if index != row {
                return Err(Error::Config(format!(
                    "waveform CSV row {row}: piece index {index}"
                )));
            }
            let start = parse(fields[1])?;
            let width = parse(fields[2])?;
            if (start - end).abs() > 1e-9 * (1.0 + end.abs()) {
                return Err(Error::Config(format!(
                    "waveform CSV row {row}: gap before piece"
                )));
            }
            end = start + width;
            widths.push(width);
            amplitudes.push(parse(fields[3])?);
        }
        let wf = Self::new(end, amplitudes, bounds)?;
        let w = wf.piece_width();
        for width in widths {
            if (width - w).abs() > 1e-9 * w {
                return Err(Error::Config(
                    "waveform CSV pieces have unequal widths".into(),
                ));
            }
        }
        Ok(wf)
    }
}

/// Square pulse of `n` equal pieces at one amplitude.
pub fn make_constant(duration: f64, amplitude: f64, n: usize) -> Result<PiecewiseWaveform> {
    PiecewiseWaveform::constant(duration, amplitude, n)
}

/// Converts the waveform to constant-rate segments through `map`.
pub fn rates_of(wf: &PiecewiseWaveform, map: &AmplitudeMap) -> Vec<RateSegment> {
    wf.amplitudes
        .iter()
        .enumerate()
        .map(|(i, &u)| RateSegment {
            start: wf.edge(i),
            width: wf.edge(i + 1) - wf.edge(i),
            beta: map.rate(u),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_pulse() {
        let wf = make_constant(300.0, 0.2, 1).unwrap();
        assert_eq!(wf.n(), 1);
        assert_eq!(wf.amplitudes(), &[0.2]);
        assert_eq!(wf.piece_width(), 300.0);

        let dark = make_constant(400.0, 0.0, 20).unwrap();
        assert!(dark.is_dark());
        assert_eq!(dark.piece_width(), 20.0);
    }

    #[test]
    fn out_of_bounds_and_degenerate_inputs_are_rejected() {
        assert!(make_constant(300.0, 1.2, 1).is_err());
        assert!(make_constant(300.0, -0.1, 4).is_err());
        assert!(make_constant(0.0, 0.5, 4).is_err());
        assert!(make_constant(100.0, 0.5, 0).is_err());
        assert!(AmplitudeBounds::new(1.0, 1.0).is_err());
    }

    #[test]
    fn rates_follow_the_map() {
        let wf =
            PiecewiseWaveform::new(100.0, vec![0.0, 0.5, 1.0, 0.25], AmplitudeBounds::default())
                .unwrap();
        let segs = rates_of(&wf, &AmplitudeMap::linear(0.5));
        assert_eq!(segs.len(), 4);
        assert_eq!(segs[1].beta, 0.25);
        assert_eq!(segs[0].beta, 0.0);
        assert!(segs.iter().all(|s| s.width == 25.0));

        let sat = rates_of(&wf, &AmplitudeMap::saturating(0.5, 0.25));
        assert_eq!(sat[0].beta, 0.0);
        assert!((sat[3].beta - 0.25).abs() < 1e-15);
    }

    #[test]
    fn widths_sum_to_duration() {
        for n in 1..50 {
            let wf = make_constant(920.0 / 3.0, 0.3, n).unwrap();
            let total: f64 = rates_of(&wf, &AmplitudeMap::default())
                .iter()
                .map(|s| s.width)
                .sum();
            assert!((total - wf.duration()).abs() <= 1e-12 * wf.duration());
            assert_eq!(wf.edge(n), wf.duration());
        }
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(PiecewiseWaveform::from_csv("a,b\n", AmplitudeBounds::default()).is_err());
        let gap = format!("{WAVEFORM_CSV_HEADER}\n0,0,10,0.5\n1,20,10,0.5\n");
        assert!(PiecewiseWaveform::from_csv(&gap, AmplitudeBounds::default()).is_err());
        let uneven = format!("{WAVEFORM_CSV_HEADER}\n0,0,10,0.5\n1,10,20,0.5\n");
        assert!(PiecewiseWaveform::from_csv(&uneven, AmplitudeBounds::default()).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            duration in 1.0f64..5000.0,
            amps in proptest::collection::vec(0.0f64..=1.0, 1..40),
        ) {
            let wf = PiecewiseWaveform::new(duration, amps, AmplitudeBounds::default()).unwrap();
            let back = PiecewiseWaveform::from_csv(&wf.to_csv(), AmplitudeBounds::default()).unwrap();
            prop_assert_eq!(back.amplitudes(), wf.amplitudes());
            prop_assert!((back.duration() - wf.duration()).abs() <= 1e-9 * wf.duration());
        }

        #[test]
        fn rate_map_preserves_order(a in 0.0f64..=1.0, b in 0.0f64..=1.0, sat in 0.05f64..=0.5) {
            for map in [AmplitudeMap::linear(0.5), AmplitudeMap::saturating(0.5, sat)] {
                if a <= b {
                    prop_assert!(map.rate(a) <= map.rate(b));
                } else {
                    prop_assert!(map.rate(a) >= map.rate(b));
                }
            }
        }
    }
}
