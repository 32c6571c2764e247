//! Readout figures of merit and Rabi-curve fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pump::WindowCounts;

/// `(L0 - L1) / sqrt(L0 + L1)`: signal photons over shot noise.
pub fn snr(l0: WindowCounts, l1: WindowCounts) -> Result<f64> {
    let total = l0.0 + l1.0;
    if !(total > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "SNR needs photons, got L0 = {}, L1 = {}",
            l0.0, l1.0
        )));
    }
    Ok((l0.0 - l1.0) / total.sqrt())
}

/// `(L0 - L1) / L0`.
pub fn contrast(l0: WindowCounts, l1: WindowCounts) -> Result<f64> {
    if !(l0.0 > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "contrast needs L0 > 0, got {}",
            l0.0
        )));
    }
    Ok((l0.0 - l1.0) / l0.0)
}

/// `offset + amplitude * cos(omega * t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amplitude: f64,
    /// rad/ns
    pub omega: f64,
    /// rad, in [-π, π)
    pub phase: f64,
    /// Euclidean norm of the residuals.
    pub residual_norm: f64,
}

impl SinusoidFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.omega * t + self.phase).cos()
    }

    pub fn max(&self) -> f64 {
        self.offset + self.amplitude
    }

    pub fn min(&self) -> f64 {
        self.offset - self.amplitude
    }
}

struct LinearFit {
    coef: [f64; 3],
    sse: f64,
}

/// Least squares on the basis {1, cos Ωt, sin Ωt} for a fixed Ω.
fn fit_at(ts: &[f64], ys: &[f64], omega: f64) -> Option<LinearFit> {
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&t, &y) in ts.iter().zip(ys) {
        let row = [1.0, (omega * t).cos(), (omega * t).sin()];
        for i in 0..3 {
            aty[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    // Reject near-singular designs (e.g. Ω so small that cos ≈ 1).
    let scale = ts.len() as f64;
    let det = ata[0][0] * (ata[1][1] * ata[2][2] - ata[1][2] * ata[2][1])
        - ata[0][1] * (ata[1][0] * ata[2][2] - ata[1][2] * ata[2][0])
        + ata[0][2] * (ata[1][0] * ata[2][1] - ata[1][1] * ata[2][0]);
    if !(det.abs() > 1e-10 * scale.powi(3)) {
        return None;
    }
    let coef = linalg::solve(&ata, &aty)?;
    let sse = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let r = y - (coef[0] + coef[1] * (omega * t).cos() + coef[2] * (omega * t).sin());
            r * r
        })
        .sum();
    Some(LinearFit { coef, sse })
}

fn time_span(ts: &[f64]) -> Result<f64> {
    let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::Fit("sample times are all equal".into()));
    }
    Ok(span)
}

/// Default search band: from half a period over the sampled span up to
/// the Nyquist frequency of the median sample spacing.
pub fn default_omega_range(ts: &[f64]) -> Result<(f64, f64)> {
    let span = time_span(ts)?;
    let mut sorted = ts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    Ok((std::f64::consts::PI / span, std::f64::consts::PI / median))
}

/// Fits `A + B cos(Ωt + φ)` by least squares with Ω from the default band.
pub fn fit_sinusoid(ts: &[f64], ys: &[f64]) -> Result<SinusoidFit> {
    let range = default_omega_range(ts)?;
    fit_sinusoid_in(ts, ys, range)
}

/// Fits `A + B cos(Ωt + φ)` with Ω restricted to `omega_range`.
///
/// Ω is located by a dense grid (sixteen points per 2π/span) and refined by
/// golden-section search on the bracketing cell; the linear parameters are
/// exact least squares at every trial Ω.
pub fn fit_sinusoid_in(ts: &[f64], ys: &[f64], omega_range: (f64, f64)) -> Result<SinusoidFit> {
    if ts.len() != ys.len() {
        return Err(Error::Fit(format!(
            "{} times but {} values",
            ts.len(),
            ys.len()
        )));
    }
    if ts.len() < 3 {
        return Err(Error::Fit("need at least 3 samples".into()));
    }
    if ts.iter().chain(ys).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite sample in sinusoid fit".into()));
    }
    let (w_lo, w_hi) = omega_range;
    if !(w_lo > 0.0 && w_hi > w_lo) {
        return Err(Error::Fit(format!("bad omega range [{w_lo}, {w_hi}]")));
    }
    let span = time_span(ts)?;
    let step = std::f64::consts::TAU / span / 16.0;
    let npts = (((w_hi - w_lo) / step).ceil() as usize).max(2) + 1;
    let grid: Vec<f64> = (0..npts)
        .map(|k| w_lo + (w_hi - w_lo) * k as f64 / (npts - 1) as f64)
        .collect();

    let sse_at = |w: f64| fit_at(ts, ys, w).map_or(f64::INFINITY, |f| f.sse);
    let scores: Vec<f64> = grid.iter().map(|&w| sse_at(w)).collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    if !scores[best].is_finite() {
        return Err(Error::Fit(
            "design matrix is singular for every trial frequency".into(),
        ));
    }

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(npts - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse_at(c), sse_at(d));
    while (b - a) > 1e-13 * b.abs().max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse_at(d);
        }
    }
    let mut omega = 0.5 * (a + b);
    if sse_at(omega) > scores[best] {
        omega = grid[best];
    }
    let fit =
        fit_at(ts, ys, omega).ok_or_else(|| Error::Fit("singular design at optimum".into()))?;
    let [offset, c_cos, c_sin] = fit.coef;
    let amplitude = c_cos.hypot(c_sin);
    let mut phase = (-c_sin).atan2(c_cos);
    if phase >= std::f64::consts::PI {
        phase -= std::f64::consts::TAU;
    }
    Ok(SinusoidFit {
        offset,
        amplitude,
        omega,
        phase,
        residual_norm: fit.sse.sqrt(),
    })
}

/// Mean absolute residual of `ys` about the fitted curve.
pub fn mean_deviation(ys: &[f64], fit: &SinusoidFit, ts: &[f64]) -> Result<f64> {
    if ys.len() != ts.len() {
        return Err(Error::Domain(format!(
            "{} values but {} times",
            ys.len(),
            ts.len()
        )));
    }
    if ys.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ys
        .iter()
        .zip(ts)
        .map(|(&y, &t)| (y - fit.eval(t)).abs())
        .sum();
    Ok(total / ys.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn wc(x: f64) -> WindowCounts {
        WindowCounts(x)
    }

    #[test]
    fn snr_examples() {
        assert!((snr(wc(200.0), wc(100.0)).unwrap() - 100.0 / 300f64.sqrt()).abs() < 1e-12);
        assert_eq!(snr(wc(50.0), wc(50.0)).unwrap(), 0.0);
        let base = snr(wc(200.0), wc(100.0)).unwrap();
        let scaled = snr(wc(20000.0), wc(10000.0)).unwrap();
        assert!((scaled / base - 10.0).abs() < 1e-12);
        assert!(matches!(
            snr(wc(0.0), wc(0.0)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn contrast_examples() {
        assert!((contrast(wc(100.0), wc(80.0)).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(contrast(wc(100.0), wc(0.0)).unwrap(), 1.0);
        assert!(contrast(wc(0.0), wc(3.0)).is_err());
    }

    fn rabi_samples(n: usize) -> (Vec<f64>, Vec<f64>) {
        let omega = TAU * 0.005;
        let ts: Vec<f64> = (0..n).map(|k| 400.0 * k as f64 / (n - 1) as f64).collect();
        let ys = ts.iter().map(|&t| 0.9 + 0.1 * (omega * t).cos()).collect();
        (ts, ys)
    }

    #[test]
    fn recovers_noiseless_sinusoid() {
        let (ts, ys) = rabi_samples(64);
        let fit = fit_sinusoid(&ts, &ys).unwrap();
        let omega = TAU * 0.005;
        assert!((fit.offset - 0.9).abs() < 1e-6 * 0.9);
        assert!((fit.amplitude - 0.1).abs() < 1e-6 * 0.1);
        assert!((fit.omega - omega).abs() < 1e-6 * omega);
        assert!(fit.phase.abs() < 1e-5);
        assert!(mean_deviation(&ys, &fit, &ts).unwrap() < 1e-9);
    }

    #[test]
    fn constant_data_has_no_amplitude() {
        let ts: Vec<f64> = (0..32).map(|k| k as f64 * 10.0).collect();
        let ys = vec![0.7; 32];
        let fit = fit_sinusoid(&ts, &ys).unwrap();
        assert!(fit.amplitude < 1e-9);
        assert!(mean_deviation(&ys, &fit, &ts).unwrap() < 1e-9);
    }

    #[test]
    fn equal_times_are_degenerate() {
        assert!(matches!(
            fit_sinusoid(&[5.0; 10], &[1.0; 10]),
            Err(Error::Fit(_))
        ));
        assert!(fit_sinusoid(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn mean_deviation_of_constant_shift() {
        let (ts, ys) = rabi_samples(40);
        let fit = fit_sinusoid(&ts, &ys).unwrap();
        let shifted: Vec<f64> = ts.iter().map(|&t| fit.eval(t) + 0.01).collect();
        assert!((mean_deviation(&shifted, &fit, &ts).unwrap() - 0.01).abs() < 1e-12);
        assert!(mean_deviation(&shifted, &fit, &ts[1..]).is_err());
    }

    #[test]
    fn fit_is_no_worse_than_generating_parameters() {
        // Noisy data: the fitted residual can never exceed the residual of
        // the true curve, which is one candidate on the search path.
        let (ts, clean) = rabi_samples(50);
        let ys: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(k, y)| y + 0.004 * ((k as f64 * 12.9898).sin() * 43758.5453).fract())
            .collect();
        let fit = fit_sinusoid(&ts, &ys).unwrap();
        let truth: f64 = ys
            .iter()
            .zip(&clean)
            .map(|(y, c)| (y - c).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(fit.residual_norm <= truth * (1.0 + 1e-9));
    }

    proptest! {
        #[test]
        fn snr_is_antisymmetric_and_scales_with_sqrt(
            l0 in 1.0f64..1e9, l1 in 1.0f64..1e9, k in 1.0f64..1e4,
        ) {
            let s = snr(wc(l0), wc(l1)).unwrap();
            prop_assert!((snr(wc(l1), wc(l0)).unwrap() + s).abs() <= 1e-12 * s.abs().max(1.0));
            let scaled = snr(wc(k * l0), wc(k * l1)).unwrap();
            prop_assert!((scaled - k.sqrt() * s).abs() <= 1e-9 * scaled.abs().max(1.0));
        }

        #[test]
        fn contrast_is_scale_invariant(l0 in 1.0f64..1e9, l1 in 0.0f64..1e9, k in 1e-3f64..1e4) {
            let c = contrast(wc(l0), wc(l1)).unwrap();
            let ck = contrast(wc(k * l0), wc(k * l1)).unwrap();
            prop_assert!((c - ck).abs() <= 1e-12 * c.abs().max(1.0));
            prop_assert!(c <= 1.0);
        }
    }
}
