use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fact::{items_satisfying, CritiqueFact, FactKey};
use crate::belief::{
    centroid, evidence_from_critique, init_user_belief, item_posterior, item_prior,
    marginal_user_update, mean_item_norm, posterior_mean, relation_diagonal, user_space_layout, CouplingSign,
    GaussianBelief,
};
use crate::embed::{rank_items_from_mean, EmbeddingTable, Scored};
use crate::kg::DatasetSplit;
use crate::metrics::{average_rank, hit_rate_at_k, narc};
use crate::{EntityId, Error, KnowledgeGraph, RelationId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bcie,
    MappedItems,
    Direct,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Bcie, Strategy::MappedItems, Strategy::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bcie => "bcie",
            Strategy::MappedItems => "mapped_items",
            Strategy::Direct => "direct",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bcie" => Ok(Strategy::Bcie),
            "mapped_items" => Ok(Strategy::MappedItems),
            "direct" => Ok(Strategy::Direct),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// How the simulated user picks a critique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Diff,
    Random,
    /// Critiques chosen interactively.
    Human,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Diff => "diff",
            Mode::Random => "random",
            Mode::Human => "human",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diff" => Ok(Mode::Diff),
            "random" => Ok(Mode::Random),
            "human" => Ok(Mode::Human),
            other => Err(Error::Config(format!("unknown critique mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Length of the presented recommendation list.
    pub k: usize,
    pub max_steps: usize,
    /// Evidence precision.
    pub alpha: f64,
    /// Item-prior precision.
    pub j_m: f64,
    /// Initial user precision.
    pub j0: f64,
    pub eps: f64,
    pub sign: CouplingSign,
    pub mapped_max_items: usize,
    /// Evidence magnitude; `None` uses the mean item-layout norm.
    pub rho: Option<f64>,
    /// End the session once the target reaches rank 1.
    pub stop_at_top1: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_steps: 5,
            alpha: 10.0,
            j_m: 1.0,
            j0: 1.0,
            eps: 1e-6,
            sign: CouplingSign::Compat,
            mapped_max_items: 10,
            rho: None,
            stop_at_top1: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("j_m", self.j_m), ("j0", self.j0), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k == 0 || self.mapped_max_items == 0 {
            return Err(Error::Config("k and mapped_max_items must be positive".to_string()));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(())
    }
}

/// Who the session is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserRef {
    Known(EntityId),
    /// Belief starts at the centroid of all user layouts; nothing excluded.
    ColdStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub user: Option<EntityId>,
    pub belief: GaussianBelief,
    pub step: usize,
    pub critiqued: BTreeSet<FactKey>,
    /// Full ranking over candidate items.
    pub last_ranking: Vec<Scored>,
    pub strategy: Strategy,
    pub config: SessionConfig,
    pub exclude: BTreeSet<EntityId>,
}

impl SessionState {
    pub fn top_k(&self) -> Vec<EntityId> {
        self.last_ranking.iter().take(self.config.k).map(|s| s.item).collect()
    }

    pub fn ranking_ids(&self) -> Vec<EntityId> {
        self.last_ranking.iter().map(|s| s.item).collect()
    }
}

/// A trained model bound to its graph: everything a session reads.
#[derive(Debug, Clone)]
pub struct Engine {
    kg: KnowledgeGraph,
    emb: EmbeddingTable,
    train_likes: BTreeMap<EntityId, BTreeSet<EntityId>>,
    items: Vec<EntityId>,
    default_rho: f64,
}

impl Engine {
    pub fn new(kg: KnowledgeGraph, emb: EmbeddingTable, split: &DatasetSplit) -> Result<Self> {
        let train_likes = split.train_likes(kg.likes_relation());
        Self::with_train_likes(kg, emb, train_likes)
    }

    pub fn with_train_likes(
        kg: KnowledgeGraph,
        emb: EmbeddingTable,
        train_likes: BTreeMap<EntityId, BTreeSet<EntityId>>,
    ) -> Result<Self> {
        if emb.entity_count() != kg.entity_count() || emb.relation_count() != kg.relation_count() {
            return Err(Error::Config(format!(
                "model has {} entities / {} relations but the graph has {} / {}",
                emb.entity_count(),
                emb.relation_count(),
                kg.entity_count(),
                kg.relation_count()
            )));
        }
        let items: Vec<EntityId> = kg.item_ids().iter().copied().collect();
        let default_rho = mean_item_norm(&emb, items.iter().copied());
        Ok(Self {
            kg,
            emb,
            train_likes,
            items,
            default_rho,
        })
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        &self.kg
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.emb
    }

    pub fn items(&self) -> &[EntityId] {
        &self.items
    }

    pub fn likes(&self) -> RelationId {
        self.kg.likes_relation()
    }

    pub fn train_likes(&self, user: EntityId) -> BTreeSet<EntityId> {
        self.train_likes.get(&user).cloned().unwrap_or_default()
    }

    pub fn rho(&self, cfg: &SessionConfig) -> f64 {
        cfg.rho.unwrap_or(self.default_rho)
    }

    pub fn rank(&self, mean: &[f64], exclude: &BTreeSet<EntityId>) -> Result<Vec<Scored>> {
        rank_items_from_mean(&self.emb, mean, self.likes(), &self.items, exclude)
    }

    /// Mean user layout, the cold-start belief centre.
    pub fn user_centroid(&self) -> Vec<f64> {
        let mut acc = vec![0.0; 2 * self.emb.dim()];
        let users = self.kg.user_ids();
        for &u in users {
            for (a, x) in acc.iter_mut().zip(user_space_layout(&self.emb, u)) {
                *a += x;
            }
        }
        let n = users.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Step-0 state: belief centred on the trained user embedding.
    pub fn start(&self, user: UserRef, strategy: Strategy, config: SessionConfig) -> Result<SessionState> {
        config.validate()?;
        let (user, belief, exclude) = match user {
            UserRef::Known(u) => {
                if !self.kg.is_user(u) {
                    return Err(Error::Config(format!("entity {u} is not a user")));
                }
                (Some(u), init_user_belief(&self.emb, u, config.j0)?, self.train_likes(u))
            }
            UserRef::ColdStart => (None, GaussianBelief::isotropic(&self.user_centroid(), config.j0)?, BTreeSet::new()),
        };
        let last_ranking = self.rank(&posterior_mean(&belief), &exclude)?;
        Ok(SessionState {
            user,
            belief,
            step: 0,
            critiqued: BTreeSet::new(),
            last_ranking,
            strategy,
            config,
            exclude,
        })
    }

    pub fn apply_critique(&self, state: &SessionState, fact: &CritiqueFact) -> Result<SessionState> {
        match state.strategy {
            Strategy::Bcie => apply_critique_bcie(self, state, fact),
            Strategy::MappedItems => apply_critique_mapped_items(self, state, fact),
            Strategy::Direct => apply_critique_direct(self, state, fact),
        }
    }
}

fn check_critique(state: &SessionState, fact: &CritiqueFact) -> Result<()> {
    if state.step >= state.config.max_steps {
        return Err(Error::Config(format!(
            "session already used its {} critiquing steps",
            state.config.max_steps
        )));
    }
    if state.critiqued.contains(&fact.key()) {
        return Err(Error::RepeatedCritique);
    }
    Ok(())
}

/// Records the fact and advances the step, re-ranking only if the belief
/// changed.
fn advance(engine: &Engine, state: &SessionState, fact: &CritiqueFact, belief: Option<GaussianBelief>) -> Result<SessionState> {
    let mut next = state.clone();
    next.step += 1;
    next.critiqued.insert(fact.key());
    if let Some(b) = belief {
        next.last_ranking = engine.rank(&posterior_mean(&b), &next.exclude)?;
        next.belief = b;
    }
    Ok(next)
}

fn evidence_or_skip(engine: &Engine, state: &SessionState, fact: &CritiqueFact) -> Result<Option<GaussianBelief>> {
    let cfg = &state.config;
    match evidence_from_critique(&engine.emb, fact, cfg.alpha, engine.rho(cfg)) {
        Ok(e) => Ok(Some(e)),
        Err(Error::ZeroEvidence) => {
            tracing::debug!(fact = %fact.key(), "critique has zero evidence; skipping update");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Evidence → item posterior over the current top-K → marginal user update.
pub fn apply_critique_bcie(engine: &Engine, state: &SessionState, fact: &CritiqueFact) -> Result<SessionState> {
    check_critique(state, fact)?;
    let Some(evidence) = evidence_or_skip(engine, state, fact)? else {
        return advance(engine, state, fact, None);
    };
    let cfg = &state.config;
    let prior = item_prior(&engine.emb, &state.top_k(), cfg.j_m)?;
    let post = item_posterior(&prior, &evidence)?;
    let dr = relation_diagonal(&engine.emb, engine.likes(), cfg.sign);
    let belief = marginal_user_update(&state.belief, &post, &dr, cfg.eps)?;
    advance(engine, state, fact, Some(belief))
}

/// Up to `mapped_max_items` satisfying items (lowest ids) stand in for the
/// item posterior, with precision `j_m + alpha`.
pub fn apply_critique_mapped_items(engine: &Engine, state: &SessionState, fact: &CritiqueFact) -> Result<SessionState> {
    check_critique(state, fact)?;
    let cfg = &state.config;
    let mapped: Vec<EntityId> = items_satisfying(&engine.kg, fact)
        .into_iter()
        .take(cfg.mapped_max_items)
        .collect();
    if mapped.is_empty() {
        return advance(engine, state, fact, None);
    }
    let post = GaussianBelief::isotropic(&centroid(&engine.emb, &mapped), cfg.j_m + cfg.alpha)?;
    let dr = relation_diagonal(&engine.emb, engine.likes(), cfg.sign);
    let belief = marginal_user_update(&state.belief, &post, &dr, cfg.eps)?;
    advance(engine, state, fact, Some(belief))
}

/// Items the mapped-items strategy would use for `fact`.
pub fn mapped_items(engine: &Engine, fact: &CritiqueFact, max_items: usize) -> Vec<EntityId> {
    items_satisfying(&engine.kg, fact).into_iter().take(max_items).collect()
}

/// Adds the critique evidence straight into the user belief.
pub fn apply_critique_direct(engine: &Engine, state: &SessionState, fact: &CritiqueFact) -> Result<SessionState> {
    check_critique(state, fact)?;
    let Some(evidence) = evidence_or_skip(engine, state, fact)? else {
        return advance(engine, state, fact, None);
    };
    let b = &state.belief;
    let belief = GaussianBelief::new(
        b.h().iter().zip(evidence.h()).map(|(a, e)| a + e).collect(),
        b.j().iter().zip(evidence.j()).map(|(a, e)| a + e).collect(),
    )?;
    advance(engine, state, fact, Some(belief))
}

/// Average ranks of the critiqued fact's satisfying items before and after
/// an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarcInputs {
    pub ar_pre: f64,
    pub ar_post: f64,
    /// Satisfying items present in the ranking.
    pub satisfying: usize,
    pub narc: f64,
}

/// One line of a session trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "ranking_topK")]
    pub ranking_top_k: Vec<EntityId>,
    pub fact: Option<FactKey>,
    pub gt_rank: Option<usize>,
    pub hit5: Option<u8>,
    pub hit10: Option<u8>,
    pub narc_inputs: Option<NarcInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Exhausted,
    ReachedTop1,
    Accepted,
    Abandoned,
}

/// A session in progress together with its per-step records.
#[derive(Debug, Clone)]
pub struct Conversation {
    state: SessionState,
    target: Option<EntityId>,
    records: Vec<StepRecord>,
}

impl Conversation {
    pub fn start(
        engine: &Engine,
        user: UserRef,
        target: Option<EntityId>,
        strategy: Strategy,
        config: SessionConfig,
    ) -> Result<Self> {
        let state = engine.start(user, strategy, config)?;
        if let Some(t) = target {
            if !state.last_ranking.iter().any(|s| s.item == t) {
                return Err(Error::Config(format!("target item {t} is not a candidate for this user")));
            }
        }
        let mut conv = Self {
            state,
            target,
            records: Vec::new(),
        };
        let first = conv.record(None, None);
        conv.records.push(first);
        Ok(conv)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn target(&self) -> Option<EntityId> {
        self.target
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<StepRecord> {
        self.records
    }

    pub fn can_critique(&self) -> bool {
        self.state.step < self.state.config.max_steps
    }

    pub fn target_rank(&self) -> Option<usize> {
        let t = self.target?;
        self.state.last_ranking.iter().position(|s| s.item == t).map(|p| p + 1)
    }

    pub fn critique(&mut self, engine: &Engine, fact: &CritiqueFact) -> Result<&StepRecord> {
        let before = self.state.ranking_ids();
        self.state = engine.apply_critique(&self.state, fact)?;
        let satisfying = items_satisfying(&engine.kg, fact);
        let narc = narc_between(&before, &self.state.ranking_ids(), &satisfying);
        let rec = self.record(Some(fact), narc);
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    fn record(&self, fact: Option<&CritiqueFact>, narc_inputs: Option<NarcInputs>) -> StepRecord {
        let ranking = self.state.ranking_ids();
        let hit = |k| self.target.map(|t| hit_rate_at_k(&ranking, t, k).unwrap_or(0));
        StepRecord {
            step: self.state.step,
            ranking_top_k: self.state.top_k(),
            fact: fact.map(CritiqueFact::key),
            gt_rank: self.target_rank(),
            hit5: hit(5),
            hit10: hit(10),
            narc_inputs,
        }
    }
}

/// NARC of the satisfying items that appear in the rankings (candidates).
pub fn narc_between(before: &[EntityId], after: &[EntityId], satisfying: &BTreeSet<EntityId>) -> Option<NarcInputs> {
    let present: BTreeSet<EntityId> = satisfying
        .iter()
        .copied()
        .filter(|i| before.contains(i))
        .collect();
    if present.is_empty() {
        return None;
    }
    let ar_pre = average_rank(before, &present).ok()?;
    let ar_post = average_rank(after, &present).ok()?;
    Some(NarcInputs {
        ar_pre,
        ar_post,
        satisfying: present.len(),
        narc: narc(ar_pre, ar_post).ok()?,
    })
}
