//! Bounded Hooke-Jeeves direct search (maximization).
//!
//! One cycle is an exploratory sweep over the coordinates followed by a
//! single pattern-move query. Every trial point is clipped into the box
//! before it is evaluated and every evaluation counts against the budget,
//! including trials that clipping collapses onto the incumbent. Moves are
//! accepted only on strict improvement; a cycle without improvement
//! shrinks the shared step by `rho`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pump::sub_seed;
use crate::waveform::AmplitudeBounds;

/// How the optimizer seeds a stochastic objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// No seed is passed; the objective is deterministic.
    #[default]
    DeterministicObjective,
    /// A new seed for every query, derived from the base seed and the
    /// query index.
    FreshSeedPerQuery,
    /// One seed per cycle, shared by all queries in the cycle.
    FixedSeedPerCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Box applied to every coordinate.
    pub bounds: AmplitudeBounds,
    pub alpha0: f64,
    pub rho: f64,
    pub alpha_min: f64,
    pub max_queries: usize,
    pub seed_policy: SeedPolicy,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            bounds: AmplitudeBounds::default(),
            alpha0: 0.2,
            rho: 0.5,
            alpha_min: 1e-3,
            max_queries: 5000,
            seed_policy: SeedPolicy::DeterministicObjective,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.alpha_min > 0.0 && self.alpha_min < self.alpha0 && self.alpha0.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < alpha_min < alpha0, got alpha_min = {}, alpha0 = {}",
                self.alpha_min, self.alpha0
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (0, 1), got {}",
                self.rho
            )));
        }
        if self.max_queries == 0 {
            return Err(Error::Config("max_queries must be >= 1".into()));
        }
        Ok(())
    }
}

/// Information handed to the objective with every query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryContext {
    pub index: usize,
    pub cycle: usize,
    pub seed: Option<u64>,
}

/// One line of the optimization log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_index: usize,
    pub cycle: usize,
    pub u: Vec<f64>,
    pub value: f64,
    pub alpha: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    StepBelowMinimum,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub current: Vec<f64>,
    pub current_value: f64,
    pub best: Vec<f64>,
    pub best_value: f64,
    pub alpha: f64,
    pub queries: usize,
    /// Cycles started so far.
    pub iterations: usize,
    pub history: Vec<QueryRecord>,
    /// Queries spent in each cycle; the first evaluation of `u0` belongs
    /// to no cycle. The last entry may be a partial cycle.
    pub cycle_queries: Vec<usize>,
    pub budget_exhausted: bool,
    pub stop: Option<StopReason>,
}

impl OptimizerState {
    /// Running maximum of accepted values, one entry per query.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|r| {
                if r.accepted {
                    best = best.max(r.value);
                }
                best
            })
            .collect()
    }

    /// The log as JSON lines, one record per query.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.history {
            out.push_str(&serde_json::to_string(rec).expect("query record serializes"));
            out.push('\n');
        }
        out
    }

    fn seed_for(&self, cfg: &OptimizerConfig) -> Option<u64> {
        match cfg.seed_policy {
            SeedPolicy::DeterministicObjective => None,
            SeedPolicy::FreshSeedPerQuery => Some(sub_seed(cfg.seed, self.queries as u64)),
            SeedPolicy::FixedSeedPerCycle => {
                Some(sub_seed(cfg.seed, 1 << 40 | self.iterations as u64))
            }
        }
    }

    /// Evaluates `u`, or returns `None` once the budget is spent.
    fn query<F>(
        &mut self,
        cfg: &OptimizerConfig,
        objective: &mut F,
        u: &[f64],
    ) -> Result<Option<f64>>
    where
        F: FnMut(&[f64], QueryContext) -> f64,
    {
        if self.queries >= cfg.max_queries {
            self.budget_exhausted = true;
            self.stop = Some(StopReason::BudgetExhausted);
            return Ok(None);
        }
        let ctx = QueryContext {
            index: self.queries,
            cycle: self.iterations,
            seed: self.seed_for(cfg),
        };
        let value = objective(u, ctx);
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective {
                u: u.to_vec(),
                value,
            });
        }
        self.queries += 1;
        if let Some(c) = self
            .cycle_queries
            .last_mut()
            .filter(|_| self.iterations > 0)
        {
            *c += 1;
        }
        self.history.push(QueryRecord {
            query_index: ctx.index,
            cycle: ctx.cycle,
            u: u.to_vec(),
            value,
            alpha: self.alpha,
            accepted: false,
        });
        Ok(Some(value))
    }

    fn accept(&mut self, u: Vec<f64>, value: f64) {
        if let Some(last) = self.history.last_mut() {
            last.accepted = true;
        }
        self.current = u.clone();
        self.current_value = value;
        self.best = u;
        self.best_value = value;
    }
}

/// Evaluates `u0` and returns the starting state.
pub fn initial_state<F>(
    objective: &mut F,
    u0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimizerState>
where
    F: FnMut(&[f64], QueryContext) -> f64,
{
    cfg.validate()?;
    if u0.is_empty() {
        return Err(Error::Domain("empty starting point".into()));
    }
    if let Some(x) = u0.iter().find(|&&x| !cfg.bounds.contains(x)) {
        return Err(Error::Domain(format!(
            "starting coordinate {x} outside [{}, {}]",
            cfg.bounds.lo, cfg.bounds.hi
        )));
    }
    let mut state = OptimizerState {
        current: u0.to_vec(),
        current_value: f64::NEG_INFINITY,
        best: u0.to_vec(),
        best_value: f64::NEG_INFINITY,
        alpha: cfg.alpha0,
        queries: 0,
        iterations: 0,
        history: Vec::new(),
        cycle_queries: Vec::new(),
        budget_exhausted: false,
        stop: None,
    };
    if let Some(v) = state.query(cfg, objective, u0)? {
        state.accept(u0.to_vec(), v);
    }
    Ok(state)
}

/// Per-coordinate probing at ±alpha. Returns `false` if the budget ran out
/// during the sweep.
pub fn exploratory_move<F>(
    state: &mut OptimizerState,
    objective: &mut F,
    cfg: &OptimizerConfig,
) -> Result<bool>
where
    F: FnMut(&[f64], QueryContext) -> f64,
{
    for i in 0..state.current.len() {
        for sign in [1.0, -1.0] {
            let mut trial = state.current.clone();
            trial[i] = cfg.bounds.clip(trial[i] + sign * state.alpha);
            let Some(v) = state.query(cfg, objective, &trial)? else {
                return Ok(false);
            };
            if v > state.current_value {
                state.accept(trial, v);
                break;
            }
        }
    }
    Ok(true)
}

/// Extrapolates from the cycle's `base` through the current point.
/// Returns `false` if the budget ran out.
pub fn pattern_move<F>(
    state: &mut OptimizerState,
    base: &[f64],
    objective: &mut F,
    cfg: &OptimizerConfig,
) -> Result<bool>
where
    F: FnMut(&[f64], QueryContext) -> f64,
{
    let trial: Vec<f64> = state
        .current
        .iter()
        .zip(base)
        .map(|(&c, &b)| cfg.bounds.clip(2.0 * c - b))
        .collect();
    let Some(v) = state.query(cfg, objective, &trial)? else {
        return Ok(false);
    };
    if v > state.current_value {
        state.accept(trial, v);
    }
    Ok(true)
}

/// Maximizes `objective` over the box from `u0`.
///
/// Stops when the step falls below `alpha_min` or the query budget is
/// spent; running out of budget is reported in the state, not as an error.
pub fn hj_optimize<F>(mut objective: F, u0: &[f64], cfg: &OptimizerConfig) -> Result<OptimizerState>
where
    F: FnMut(&[f64], QueryContext) -> f64,
{
    let mut state = initial_state(&mut objective, u0, cfg)?;
    while state.stop.is_none() {
        if state.alpha < cfg.alpha_min {
            state.stop = Some(StopReason::StepBelowMinimum);
            break;
        }
        state.iterations += 1;
        state.cycle_queries.push(0);
        let base = state.current.clone();
        let base_value = state.current_value;
        if !exploratory_move(&mut state, &mut objective, cfg)? {
            break;
        }
        if !pattern_move(&mut state, &base, &mut objective, cfg)? {
            break;
        }
        if state.current_value <= base_value {
            state.alpha *= cfg.rho;
        }
    }
    // A cycle that never got to query leaves an empty entry.
    if state.cycle_queries.last() == Some(&0) {
        state.cycle_queries.pop();
    }
    Ok(state)
}
