//! Five-level rate-equation model of the negatively charged NV center.
//!
//! Population vectors are indexed by [`Level`]: ground mₛ=0, ground mₛ=±1,
//! excited mₛ=0, excited mₛ=±1 and the metastable singlet. The ±1
//! projections are merged into one level. All rates are in 1/ns and all
//! times in ns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const NUM_LEVELS: usize = 5;

/// Tolerance on individual population entries.
pub const POPULATION_EPS: f64 = 1e-12;
/// Tolerance on the population sum.
pub const NORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    /// Ground triplet, mₛ = 0.
    G0 = 0,
    /// Ground triplet, mₛ = ±1.
    G1 = 1,
    /// Excited triplet, mₛ = 0.
    E0 = 2,
    /// Excited triplet, mₛ = ±1.
    E1 = 3,
    /// Metastable singlet.
    S = 4,
}

impl Level {
    pub const ALL: [Level; NUM_LEVELS] = [Level::G0, Level::G1, Level::E0, Level::E1, Level::S];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Response curve of the amplitude → pumping-rate conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapShape {
    Linear,
    /// `beta(u) = beta_max * u (1 + k) / (1 + k u)` with `k` chosen so that
    /// `beta(sat_amp) = beta_max / 2`.
    Saturating {
        sat_amp: f64,
    },
}

/// Converts a normalized drive amplitude in `[0, 1]` to a pumping rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeMap {
    /// Pumping rate at amplitude 1.0 (1/ns).
    pub beta_max: f64,
    #[serde(default = "default_shape")]
    pub shape: MapShape,
}

fn default_shape() -> MapShape {
    MapShape::Linear
}

impl Default for AmplitudeMap {
    fn default() -> Self {
        Self {
            beta_max: 0.5,
            shape: MapShape::Linear,
        }
    }
}

impl AmplitudeMap {
    pub fn linear(beta_max: f64) -> Self {
        Self {
            beta_max,
            shape: MapShape::Linear,
        }
    }

    pub fn saturating(beta_max: f64, sat_amp: f64) -> Self {
        Self {
            beta_max,
            shape: MapShape::Saturating { sat_amp },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_max.is_finite() && self.beta_max >= 0.0) {
            return Err(Error::ParamDomain {
                name: "beta_max",
                reason: format!("must be finite and >= 0, got {}", self.beta_max),
            });
        }
        if let MapShape::Saturating { sat_amp } = self.shape {
            // sat_amp above 0.5 would make the curve convex.
            if !(sat_amp > 0.0 && sat_amp <= 0.5) {
                return Err(Error::ParamDomain {
                    name: "sat_amp",
                    reason: format!("must lie in (0, 0.5], got {sat_amp}"),
                });
            }
        }
        Ok(())
    }

    /// Pumping rate (1/ns) for amplitude `u`.
    pub fn rate(&self, u: f64) -> f64 {
        match self.shape {
            MapShape::Linear => self.beta_max * u,
            MapShape::Saturating { sat_amp } => {
                let k = (1.0 - 2.0 * sat_amp) / sat_amp;
                self.beta_max * u * (1.0 + k) / (1.0 + k * u)
            }
        }
    }
}

/// Transition rates and detection parameters of the five-level model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateParams {
    /// Radiative decay E → G, spin conserving (1/ns).
    pub k_rad: f64,
    /// Intersystem crossing E0 → S (1/ns).
    pub k_isc0: f64,
    /// Intersystem crossing E1 → S (1/ns).
    pub k_isc1: f64,
    /// Singlet decay S → G0 (1/ns).
    pub k_s0: f64,
    /// Singlet decay S → G1 (1/ns).
    pub k_s1: f64,
    /// Detected photons per radiative decay.
    pub eta: f64,
    /// Detected laser-scatter counts per ns per unit pumping rate. Scatter
    /// grows with illumination but carries no spin information.
    pub scatter: f64,
    pub amp_map: AmplitudeMap,
}

impl Default for RateParams {
    fn default() -> Self {
        let singlet = 1.0 / 250.0;
        Self {
            k_rad: 0.065,
            k_isc0: 0.011,
            k_isc1: 0.080,
            k_s0: 0.8 * singlet,
            k_s1: 0.2 * singlet,
            eta: 0.004,
            scatter: 3e-4,
            amp_map: AmplitudeMap::default(),
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("k_rad", self.k_rad),
            ("k_isc0", self.k_isc0),
            ("k_isc1", self.k_isc1),
            ("k_s0", self.k_s0),
            ("k_s1", self.k_s1),
            ("scatter", self.scatter),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ParamDomain {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::ParamDomain {
                name: "eta",
                reason: format!("must lie in (0, 1], got {}", self.eta),
            });
        }
        if self.k_isc1 <= self.k_isc0 {
            return Err(Error::ParamDomain {
                name: "k_isc1",
                reason: format!(
                    "mₛ=±1 must cross over faster than mₛ=0 ({} <= {})",
                    self.k_isc1, self.k_isc0
                ),
            });
        }
        if self.k_s0 <= self.k_s1 {
            return Err(Error::ParamDomain {
                name: "k_s0",
                reason: format!(
                    "singlet must return preferentially to mₛ=0 ({} <= {})",
                    self.k_s0, self.k_s1
                ),
            });
        }
        self.amp_map.validate()
    }

    /// Mean dwell time in the singlet (ns).
    pub fn singlet_lifetime(&self) -> f64 {
        1.0 / (self.k_s0 + self.k_s1)
    }
}

/// Occupation probabilities of the five levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations([f64; NUM_LEVELS]);

impl Populations {
    pub fn new(p: [f64; NUM_LEVELS]) -> Result<Self> {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite population {p:?}")));
        }
        if p.iter()
            .any(|&x| !(-POPULATION_EPS..=1.0 + POPULATION_EPS).contains(&x))
        {
            return Err(Error::Domain(format!(
                "population entry outside [0, 1]: {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > NORM_EPS {
            return Err(Error::Domain(format!("populations sum to {sum}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn pure(level: Level) -> Self {
        let mut p = [0.0; NUM_LEVELS];
        p[level.index()] = 1.0;
        Self(p)
    }

    /// Unpolarized ground state, half in each spin projection.
    pub fn thermal() -> Self {
        Self([0.5, 0.5, 0.0, 0.0, 0.0])
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_LEVELS] {
        &self.0
    }

    pub fn excited(&self) -> f64 {
        self.get(Level::E0) + self.get(Level::E1)
    }

    /// Exchanges the ground mₛ=0 and mₛ=±1 populations (ideal π pulse).
    pub fn swap_ground(&self) -> Self {
        let mut p = self.0;
        p.swap(Level::G0.index(), Level::G1.index());
        Self(p)
    }

    /// Population-level resonant drive: ground populations are mixed with
    /// weights cos²(θ/2) and sin²(θ/2). Excited and singlet are untouched.
    pub fn rotate_ground(&self, angle: f64) -> Self {
        let c = (0.5 * angle).cos().powi(2);
        let s = (0.5 * angle).sin().powi(2);
        let (g0, g1) = (self.get(Level::G0), self.get(Level::G1));
        let mut p = self.0;
        p[Level::G0.index()] = g0 * c + g1 * s;
        p[Level::G1.index()] = g0 * s + g1 * c;
        Self(p)
    }

    pub(crate) fn from_raw(p: [f64; NUM_LEVELS]) -> Result<Self> {
        Self::new(p)
    }
}

/// Generator of the rate equations, `dp/dt = M p`, with `M[to][from]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMatrix(Mat<NUM_LEVELS>);

impl RateMatrix {
    pub fn get(&self, to: Level, from: Level) -> f64 {
        self.0[to.index()][from.index()]
    }

    pub fn as_array(&self) -> &Mat<NUM_LEVELS> {
        &self.0
    }

    pub fn column_sums(&self) -> [f64; NUM_LEVELS] {
        let mut sums = [0.0; NUM_LEVELS];
        for row in &self.0 {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    /// Applies `M` to a population vector.
    pub fn apply(&self, p: &Populations) -> [f64; NUM_LEVELS] {
        linalg::mat_vec(&self.0, &p.0)
    }

    /// True when every level can reach every other level.
    pub fn is_irreducible(&self) -> bool {
        (0..NUM_LEVELS).all(|start| {
            let mut seen = [false; NUM_LEVELS];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(from) = stack.pop() {
                for to in 0..NUM_LEVELS {
                    if to != from && self.0[to][from] > 0.0 && !seen[to] {
                        seen[to] = true;
                        stack.push(to);
                    }
                }
            }
            seen.iter().all(|&s| s)
        })
    }
}

/// Builds the generator for pumping rate `beta` (1/ns).
pub fn build_rate_matrix(params: &RateParams, beta: f64) -> Result<RateMatrix> {
    params.validate()?;
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::ParamDomain {
            name: "beta",
            reason: format!("pumping rate must be finite and >= 0, got {beta}"),
        });
    }
    use Level::*;
    let mut m = [[0.0; NUM_LEVELS]; NUM_LEVELS];
    let mut add = |from: Level, to: Level, rate: f64| {
        m[to.index()][from.index()] += rate;
        m[from.index()][from.index()] -= rate;
    };
    add(G0, E0, beta);
    add(G1, E1, beta);
    add(E0, G0, params.k_rad);
    add(E1, G1, params.k_rad);
    add(E0, S, params.k_isc0);
    add(E1, S, params.k_isc1);
    add(S, G0, params.k_s0);
    add(S, G1, params.k_s1);
    Ok(RateMatrix(m))
}

/// Evolves `p0` for `dt` ns under the constant generator `m`.
pub fn propagate(m: &RateMatrix, p0: &Populations, dt: f64) -> Result<Populations> {
    if !dt.is_finite() {
        return Err(Error::Numeric(format!("non-finite time step {dt}")));
    }
    if dt < 0.0 {
        return Err(Error::Domain(format!("negative time step {dt}")));
    }
    if m.0.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite rate matrix".into()));
    }
    if dt == 0.0 {
        return Ok(*p0);
    }
    let mut a = m.0;
    for x in a.iter_mut().flatten() {
        *x *= dt;
    }
    let u = linalg::expm(&a);
    Populations::from_raw(linalg::mat_vec(&u, &p0.0))
}

/// Stationary distribution of an irreducible generator.
pub fn steady_state(m: &RateMatrix) -> Result<Populations> {
    if !m.is_irreducible() {
        return Err(Error::DegenerateModel(
            "rate matrix is reducible (laser off?); stationary state is not unique".into(),
        ));
    }
    // Replace the last balance equation by the normalization constraint.
    let mut a = m.0;
    a[NUM_LEVELS - 1] = [1.0; NUM_LEVELS];
    let mut rhs = [0.0; NUM_LEVELS];
    rhs[NUM_LEVELS - 1] = 1.0;
    let mut p = linalg::solve(&a, &rhs)
        .ok_or_else(|| Error::DegenerateModel("singular balance equations".into()))?;
    for x in p.iter_mut() {
        *x = x.max(0.0);
    }
    let sum: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x /= sum;
    }
    Populations::new(p)
}

/// Detected fluorescence rate (photons/ns) for populations `p`.
pub fn emission_rate(p: &Populations, params: &RateParams) -> f64 {
    params.eta * params.k_rad * p.excited()
}
