//! The critiquing loop: fact sets, simulated critique selection, the three
//! belief-update strategies, and session traces.

mod fact;
mod session;
mod simulate;
mod tune;

pub use fact::{
    facts_for_items, item_facts, items_satisfying, select_critique_diff, select_critique_random, CritiqueFact,
    FactKey, ItemSide,
};
pub use session::{
    apply_critique_bcie, apply_critique_direct, apply_critique_mapped_items, mapped_items, narc_between,
    Conversation, Engine, Mode, NarcInputs, Outcome, SessionConfig, SessionState, StepRecord, Strategy, UserRef,
};
pub use simulate::{read_jsonl, run_session, session_seed, simulate, write_jsonl, SessionTrace, SimulationPlan, TraceLine};
pub use tune::{tune_precisions, Objective, PrecisionGrid, TuneResult};
