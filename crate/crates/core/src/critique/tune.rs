use serde::{Deserialize, Serialize};

use super::session::{Mode, SessionConfig, Strategy};
use super::simulate::{simulate, SimulationPlan};
use super::Engine;
use crate::metrics::aggregate;
use crate::{Error, Result, Triple};

/// What a precision grid search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean NARC at step 1.
    Narc,
    /// hit@10 averaged over steps `1..=max_steps`.
    HitCurve,
}

impl Objective {
    /// NARC for single-step runs, the hit curve otherwise.
    pub fn for_steps(max_steps: usize) -> Self {
        if max_steps <= 1 {
            Self::Narc
        } else {
            Self::HitCurve
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionGrid {
    pub j0: Vec<f64>,
    pub j_m: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for PrecisionGrid {
    fn default() -> Self {
        let decades = vec![0.1, 0.3, 1.0, 3.0, 10.0, 30.0];
        Self {
            j0: decades.clone(),
            j_m: vec![0.1, 1.0, 10.0],
            alpha: vec![0.1, 1.0, 10.0],
        }
    }
}

impl PrecisionGrid {
    /// Grid points in a fixed order. `j_m` does not enter the direct
    /// update, so that strategy only varies `j0` and `alpha`.
    pub fn points(&self, strategy: Strategy) -> Vec<(f64, f64, f64)> {
        let j_ms: &[f64] = match strategy {
            Strategy::Direct => &self.j_m[..self.j_m.len().min(1)],
            _ => &self.j_m,
        };
        let mut out = Vec::new();
        for &j0 in &self.j0 {
            for &j_m in j_ms {
                for &alpha in &self.alpha {
                    out.push((j0, j_m, alpha));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub config: SessionConfig,
    pub score: f64,
    /// `(j0, j_m, alpha, score)` for every grid point, in grid order.
    pub evaluated: Vec<(f64, f64, f64, f64)>,
}

/// Picks `(j0, j_m, alpha)` for one strategy by simulating sessions on
/// `sessions` (normally the validation likes). Ties keep the earliest grid
/// point.
pub fn tune_precisions(
    engine: &Engine,
    sessions: &[Triple],
    strategy: Strategy,
    mode: Mode,
    base: &SessionConfig,
    grid: &PrecisionGrid,
    objective: Objective,
    seed: u64,
) -> Result<TuneResult> {
    if sessions.is_empty() {
        return Err(Error::Config("no sessions to tune on".to_string()));
    }
    let points = grid.points(strategy);
    if points.is_empty() || points.iter().any(|&(a, b, c)| !(a > 0.0 && b > 0.0 && c > 0.0)) {
        return Err(Error::Config("precision grid must be non-empty and positive".to_string()));
    }
    let mut best: Option<(f64, SessionConfig)> = None;
    let mut evaluated = Vec::new();
    for (j0, j_m, alpha) in points {
        let config = SessionConfig {
            j0,
            j_m,
            alpha,
            ..base.clone()
        };
        let plan = SimulationPlan {
            strategies: vec![strategy],
            mode,
            runs: 1,
            seed,
            config: config.clone(),
        };
        let traces = simulate(engine, sessions, &plan)?;
        let report = aggregate(&traces, config.max_steps)?;
        let block = &report.blocks[0];
        let score = match objective {
            Objective::Narc => block.steps.get(1).and_then(|s| s.narc_mean).unwrap_or(f64::NEG_INFINITY),
            Objective::HitCurve => {
                let tail = &block.steps[1..];
                if tail.is_empty() {
                    block.steps[0].hit10_mean
                } else {
                    tail.iter().map(|s| s.hit10_mean).sum::<f64>() / tail.len() as f64
                }
            }
        };
        tracing::debug!(%strategy, j0, j_m, alpha, score, "grid point");
        evaluated.push((j0, j_m, alpha, score));
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, config));
        }
    }
    let (score, config) = best.expect("grid has at least one point");
    Ok(TuneResult {
        config,
        score,
        evaluated,
    })
}
