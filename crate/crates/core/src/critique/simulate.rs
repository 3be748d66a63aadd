use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fact::{select_critique_diff, select_critique_random};
use super::session::{Conversation, Engine, Mode, Outcome, SessionConfig, StepRecord, Strategy, UserRef};
use crate::{EntityId, Error, Result, Triple};

/// A finished simulated (or served) session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub session: usize,
    pub run: usize,
    /// `None` for cold-start sessions.
    pub user: Option<EntityId>,
    /// `None` when no target was declared.
    pub gt_item: Option<EntityId>,
    pub strategy: Strategy,
    pub mode: Mode,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
}

/// One JSON-lines row: a step record tagged with its session. The last row
/// of a session carries its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub session: usize,
    pub run: usize,
    pub user: Option<EntityId>,
    pub gt_item: Option<EntityId>,
    pub strategy: Strategy,
    pub mode: Mode,
    #[serde(flatten)]
    pub record: StepRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

impl SessionTrace {
    /// The rows of this trace; `outcome` is set on the last one only when
    /// `finished`.
    pub fn lines(&self, finished: bool) -> Vec<TraceLine> {
        let last = self.records.len().saturating_sub(1);
        self.records
            .iter()
            .enumerate()
            .map(|(i, record)| TraceLine {
                session: self.session,
                run: self.run,
                user: self.user,
                gt_item: self.gt_item,
                strategy: self.strategy,
                mode: self.mode,
                record: record.clone(),
                outcome: (finished && i == last).then_some(self.outcome),
            })
            .collect()
    }
}

/// Runs one critiquing session toward `gt_item`: the step-0 ranking, then up
/// to `max_steps` critiques chosen by `mode`.
pub fn run_session<R: Rng>(
    engine: &Engine,
    user: EntityId,
    gt_item: EntityId,
    strategy: Strategy,
    mode: Mode,
    cfg: &SessionConfig,
    rng: &mut R,
) -> Result<(Vec<StepRecord>, Outcome)> {
    if !engine.kg().is_item(gt_item) {
        return Err(Error::Config(format!("ground truth {gt_item} is not an item")));
    }
    if engine.train_likes(user).contains(&gt_item) {
        return Err(Error::Config(format!(
            "ground truth {gt_item} is a training like of user {user}"
        )));
    }
    let mut conv = Conversation::start(engine, UserRef::Known(user), Some(gt_item), strategy, cfg.clone())?;
    let mut outcome = Outcome::Completed;
    while conv.can_critique() {
        if cfg.stop_at_top1 && conv.target_rank() == Some(1) {
            outcome = Outcome::ReachedTop1;
            break;
        }
        let state = conv.state();
        let pick = match mode {
            Mode::Diff => select_critique_diff(engine.kg(), gt_item, &state.top_k(), &state.critiqued),
            Mode::Random => select_critique_random(engine.kg(), gt_item, &state.critiqued, rng),
            Mode::Human => return Err(Error::Config("the simulator cannot play human mode".to_string())),
        };
        let fact = match pick {
            Ok(f) => f,
            Err(Error::ExhaustedCritiques) => {
                outcome = Outcome::Exhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        conv.critique(engine, &fact)?;
    }
    Ok((conv.into_records(), outcome))
}

/// Seed of the critique-selection stream for one session.
pub fn session_seed(seed: u64, run: usize, session: usize) -> u64 {
    let mut z = seed
        .wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((session as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub strategies: Vec<Strategy>,
    pub mode: Mode,
    pub runs: usize,
    pub seed: u64,
    pub config: SessionConfig,
}

/// One session per `(user, likes, item)` test triple, per strategy, per run.
/// Sessions run in parallel on the current rayon pool; output order is
/// `(run, strategy, triple)` regardless of scheduling.
pub fn simulate(engine: &Engine, test: &[Triple], plan: &SimulationPlan) -> Result<Vec<SessionTrace>> {
    plan.config.validate()?;
    let mut out = Vec::with_capacity(plan.runs * plan.strategies.len() * test.len());
    for run in 0..plan.runs {
        for &strategy in &plan.strategies {
            let traces: Result<Vec<SessionTrace>> = test
                .par_iter()
                .enumerate()
                .map(|(session, t)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(session_seed(plan.seed, run, session));
                    let (records, outcome) =
                        run_session(engine, t.head, t.tail, strategy, plan.mode, &plan.config, &mut rng)?;
                    Ok(SessionTrace {
                        session,
                        run,
                        user: Some(t.head),
                        gt_item: Some(t.tail),
                        strategy,
                        mode: plan.mode,
                        records,
                        outcome,
                    })
                })
                .collect();
            out.extend(traces?);
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(traces: &[SessionTrace], mut w: W) -> Result<()> {
    for t in traces {
        for line in t.lines(true) {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Inverse of [`write_jsonl`].
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<SessionTrace>> {
    let mut out: Vec<SessionTrace> = Vec::new();
    let mut open = false;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: TraceLine = serde_json::from_str(&line)?;
        if !open {
            out.push(SessionTrace {
                session: l.session,
                run: l.run,
                user: l.user,
                gt_item: l.gt_item,
                strategy: l.strategy,
                mode: l.mode,
                records: Vec::new(),
                outcome: Outcome::Completed,
            });
            open = true;
        }
        let cur = out.last_mut().expect("trace opened above");
        cur.records.push(l.record);
        if let Some(o) = l.outcome {
            cur.outcome = o;
            open = false;
        }
    }
    if open {
        return Err(Error::Config("trace file ends mid-session".to_string()));
    }
    Ok(out)
}
