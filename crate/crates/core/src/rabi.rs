//! Simulated Rabi experiments used to compare readout schemes.
//!
//! Each point prepares the spin, rotates the ground populations by Ωτ,
//! reads out with the scheme's pulse and records the window total.
//! Curves are normalized to their largest total before fitting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Grid, PulsePair};
use crate::metrics::{fit_sinusoid, mean_deviation, SinusoidFit};
use crate::photophysics::RateParams;
use crate::pump::{sample_counts, sub_seed, window_counts, PumpSimulator, SequenceConfig};

pub const RABI_CSV_HEADER: &str = "tau_ns,y,fit_y,deviation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiConfig {
    /// Rabi angular frequency, rad/ns.
    pub omega: f64,
    pub taus_ns: Grid,
    /// Repetitions per τ point.
    pub repetitions: u64,
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for RabiConfig {
    fn default() -> Self {
        Self {
            omega: std::f64::consts::TAU * 0.005,
            taus_ns: Grid::Linspace {
                start: 0.0,
                stop: 400.0,
                count: 64,
            },
            repetitions: 1_000_000,
            stochastic: false,
            seed: 0,
        }
    }
}

impl RabiConfig {
    pub fn validate(&self) -> Result<Vec<f64>> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::Config(format!(
                "Rabi omega must be > 0, got {}",
                self.omega
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("Rabi repetitions must be >= 1".into()));
        }
        let taus = self.taus_ns.values();
        if taus.len() < 4 || taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config(
                "Rabi needs at least 4 finite, non-negative τ values".into(),
            ));
        }
        let span = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - taus.iter().cloned().fold(f64::INFINITY, f64::min);
        if span < std::f64::consts::TAU / self.omega {
            return Err(Error::Config(format!(
                "τ grid spans {span} ns, less than one Rabi period"
            )));
        }
        Ok(taus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Olo,
    ConstantSnr,
    ConstantContrast,
}

impl SchemeKind {
    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::Olo => "olo",
            SchemeKind::ConstantSnr => "constant-snr",
            SchemeKind::ConstantContrast => "constant-contrast",
        }
    }

    fn stream(self) -> u64 {
        match self {
            SchemeKind::Olo => 0,
            SchemeKind::ConstantSnr => 1,
            SchemeKind::ConstantContrast => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiScheme {
    pub kind: SchemeKind,
    pub pulses: PulsePair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiCurve {
    pub kind: SchemeKind,
    pub taus: Vec<f64>,
    /// Window totals per τ, sampled in stochastic mode.
    pub counts: Vec<f64>,
    /// `counts / max(counts)`.
    pub ys: Vec<f64>,
    /// `None` when the data admit no sinusoid fit; see `fit_error`.
    pub fit: Option<SinusoidFit>,
    pub fit_error: Option<String>,
    /// `(max - min) / max` of the fitted curve.
    pub contrast: Option<f64>,
    /// Observed mean absolute deviation from the fit.
    pub mean_dev: Option<f64>,
    /// Mean absolute deviation that shot noise alone would produce.
    pub noise_dev: f64,
    /// Mean expected photons per repetition over the curve.
    pub photons_per_rep: f64,
}

impl RabiCurve {
    /// Observed deviation when sampling, shot-noise expectation otherwise.
    pub fn deviation(&self, stochastic: bool) -> Option<f64> {
        if stochastic {
            self.mean_dev
        } else {
            Some(self.noise_dev)
        }
    }

    /// Without a fit the `fit_y` and `deviation` columns read `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RABI_CSV_HEADER);
        out.push('\n');
        for (&t, &y) in self.taus.iter().zip(&self.ys) {
            let f = self.fit.map_or(f64::NAN, |fit| fit.eval(t));
            let _ = writeln!(out, "{t},{y},{f},{}", y - f);
        }
        out
    }
}

pub fn simulate_rabi(
    cfg: &RabiConfig,
    scheme: &RabiScheme,
    skeleton: &SequenceConfig,
    params: &RateParams,
) -> Result<RabiCurve> {
    let taus = cfg.validate()?;
    if scheme.pulses.readout.is_dark() {
        return Err(Error::UndefinedMetric(format!(
            "{} readout is dark",
            scheme.kind.label()
        )));
    }
    let seq = SequenceConfig {
        repetitions: cfg.repetitions,
        ..scheme.pulses.sequence(skeleton)
    };
    seq.validate()?;
    let mut sim = PumpSimulator::new(params)?;
    let prepared = sim.prepare(&seq)?;
    let width = seq.detection_width();
    let stream = sub_seed(cfg.seed, scheme.kind.stream());

    let mut expected = Vec::with_capacity(taus.len());
    let mut counts = Vec::with_capacity(taus.len());
    for (i, &tau) in taus.iter().enumerate() {
        let p = prepared.rotate_ground(cfg.omega * tau);
        let trace = sim.run(&p, &seq.readout, seq.bin_width_ns)?;
        let l = window_counts(&trace, seq.detection_offset_ns, width, seq.repetitions)?;
        expected.push(l.0);
        counts.push(if cfg.stochastic {
            sample_counts(l, sub_seed(stream, i as u64))?.0
        } else {
            l.0
        });
    }

    let l_ref = counts.iter().cloned().fold(0.0, f64::max);
    if !(l_ref > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "{} readout collects no photons",
            scheme.kind.label()
        )));
    }
    let ys: Vec<f64> = counts.iter().map(|c| c / l_ref).collect();
    let (fit, fit_error) = match fit_sinusoid(&taus, &ys) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let contrast = fit.map(|f| (f.max() - f.min()) / f.max());
    let mean_dev = fit.map(|f| mean_deviation(&ys, &f, &taus)).transpose()?;
    let half_normal = (2.0 / std::f64::consts::PI).sqrt();
    let noise_dev = expected
        .iter()
        .map(|l| half_normal * l.sqrt() / l_ref)
        .sum::<f64>()
        / taus.len() as f64;
    let photons_per_rep =
        expected.iter().sum::<f64>() / (taus.len() as f64 * seq.repetitions as f64);
    Ok(RabiCurve {
        kind: scheme.kind,
        taus,
        counts,
        ys,
        fit,
        fit_error,
        contrast,
        mean_dev,
        noise_dev,
        photons_per_rep,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiComparison {
    pub stochastic: bool,
    pub curves: Vec<RabiCurve>,
}

impl RabiComparison {
    pub fn curve(&self, kind: SchemeKind) -> Option<&RabiCurve> {
        self.curves.iter().find(|c| c.kind == kind)
    }

    /// Contrast of the optimized readout over the SNR-best square pulse.
    pub fn olo_beats_constant_snr_contrast(&self) -> Option<bool> {
        Some(
            self.curve(SchemeKind::Olo)?.contrast?
                > self.curve(SchemeKind::ConstantSnr)?.contrast?,
        )
    }

    /// Deviation of the optimized readout below the contrast-best square
    /// pulse.
    pub fn olo_beats_constant_contrast_deviation(&self) -> Option<bool> {
        let olo = self.curve(SchemeKind::Olo)?.deviation(self.stochastic)?;
        let cc = self
            .curve(SchemeKind::ConstantContrast)?
            .deviation(self.stochastic)?;
        Some(olo < cc)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scheme,contrast,mean_dev,noise_dev,photons_per_rep\n");
        for c in &self.curves {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.kind.label(),
                c.contrast.unwrap_or(f64::NAN),
                c.mean_dev.unwrap_or(f64::NAN),
                c.noise_dev,
                c.photons_per_rep
            );
        }
        out
    }
}

pub fn compare_schemes(
    cfg: &RabiConfig,
    schemes: &[RabiScheme],
    skeleton: &SequenceConfig,
    params: &RateParams,
) -> Result<RabiComparison> {
    let curves = schemes
        .iter()
        .map(|s| simulate_rabi(cfg, s, skeleton, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(RabiComparison {
        stochastic: cfg.stochastic,
        curves,
    })
}
