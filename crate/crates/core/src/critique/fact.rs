use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{EntityId, Error, KnowledgeGraph, RelationId, Result, Triple};

/// Which slot of the fact template the item fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSide {
    /// `(item, relation, anchor)`
    Head,
    /// `(anchor, relation, item)`
    Tail,
}

impl ItemSide {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemSide::Head => "head",
            ItemSide::Tail => "tail",
        }
    }
}

/// Identity of a critique: what the user says, independent of which
/// recommended item it was shown on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactKey {
    pub relation: RelationId,
    pub anchor: EntityId,
    pub side: ItemSide,
}

impl fmt::Display for FactKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            ItemSide::Head => 'h',
            ItemSide::Tail => 't',
        };
        write!(f, "{}:{}:{}", self.relation, self.anchor, side)
    }
}

impl std::str::FromStr for FactKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed fact id `{s}`"));
        let mut parts = s.split(':');
        let relation = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let anchor = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let side = match parts.next() {
            Some("h") => ItemSide::Head,
            Some("t") => ItemSide::Tail,
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(FactKey {
            relation,
            anchor,
            side,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueFact {
    pub relation: RelationId,
    pub anchor: EntityId,
    pub item_side: ItemSide,
    pub source_item: Option<EntityId>,
}

impl CritiqueFact {
    pub fn key(&self) -> FactKey {
        FactKey {
            relation: self.relation,
            anchor: self.anchor,
            side: self.item_side,
        }
    }

    pub fn from_key(key: FactKey, source_item: Option<EntityId>) -> Self {
        Self {
            relation: key.relation,
            anchor: key.anchor,
            item_side: key.side,
            source_item,
        }
    }

    /// The triple this fact asserts about `item`.
    pub fn instantiate(&self, item: EntityId) -> Triple {
        match self.item_side {
            ItemSide::Head => Triple::new(item, self.relation, self.anchor),
            ItemSide::Tail => Triple::new(self.anchor, self.relation, item),
        }
    }
}

/// Side facts incident to one item, deduplicated, in key order.
pub fn item_facts(kg: &KnowledgeGraph, item: EntityId) -> Vec<CritiqueFact> {
    let likes = kg.likes_relation();
    let mut keys = BTreeSet::new();
    for t in kg.outgoing(item).filter(|t| t.relation != likes) {
        keys.insert(FactKey {
            relation: t.relation,
            anchor: t.tail,
            side: ItemSide::Head,
        });
    }
    for t in kg.incoming(item).filter(|t| t.relation != likes) {
        keys.insert(FactKey {
            relation: t.relation,
            anchor: t.head,
            side: ItemSide::Tail,
        });
    }
    keys.into_iter()
        .map(|k| CritiqueFact::from_key(k, Some(item)))
        .collect()
}

/// The fact set of a recommendation list: every non-likes fact incident to
/// one of `items`, deduplicated by key. Each fact keeps the first item (in
/// list order) it was found on as its source.
pub fn facts_for_items(kg: &KnowledgeGraph, items: &[EntityId]) -> Vec<CritiqueFact> {
    let mut out: BTreeMap<FactKey, CritiqueFact> = BTreeMap::new();
    for &item in items {
        for f in item_facts(kg, item) {
            out.entry(f.key()).or_insert(f);
        }
    }
    out.into_values().collect()
}

/// Items for which the fact's instantiated triple exists.
pub fn items_satisfying(kg: &KnowledgeGraph, fact: &CritiqueFact) -> BTreeSet<EntityId> {
    if fact.anchor as usize >= kg.entity_count() {
        return BTreeSet::new();
    }
    match fact.item_side {
        ItemSide::Head => kg
            .incoming(fact.anchor)
            .filter(|t| t.relation == fact.relation && kg.is_item(t.head))
            .map(|t| t.head)
            .collect(),
        ItemSide::Tail => kg
            .outgoing(fact.anchor)
            .filter(|t| t.relation == fact.relation && kg.is_item(t.tail))
            .map(|t| t.tail)
            .collect(),
    }
}

/// The ground-truth fact shared by the fewest of the `ranking_top_k` items;
/// ties go to the smallest key.
pub fn select_critique_diff(
    kg: &KnowledgeGraph,
    gt_item: EntityId,
    ranking_top_k: &[EntityId],
    critiqued: &BTreeSet<FactKey>,
) -> Result<CritiqueFact> {
    let top_sets: Vec<BTreeSet<FactKey>> = ranking_top_k
        .iter()
        .map(|&i| item_facts(kg, i).iter().map(CritiqueFact::key).collect())
        .collect();
    item_facts(kg, gt_item)
        .into_iter()
        .filter(|f| !critiqued.contains(&f.key()))
        .map(|f| {
            let count = top_sets.iter().filter(|s| s.contains(&f.key())).count();
            (count, f.key(), f)
        })
        .min_by_key(|(count, key, _)| (*count, *key))
        .map(|(_, _, f)| f)
        .ok_or(Error::ExhaustedCritiques)
}

/// A uniformly random ground-truth fact not yet critiqued.
pub fn select_critique_random<R: Rng>(
    kg: &KnowledgeGraph,
    gt_item: EntityId,
    critiqued: &BTreeSet<FactKey>,
    rng: &mut R,
) -> Result<CritiqueFact> {
    let remaining: Vec<CritiqueFact> = item_facts(kg, gt_item)
        .into_iter()
        .filter(|f| !critiqued.contains(&f.key()))
        .collect();
    if remaining.is_empty() {
        return Err(Error::ExhaustedCritiques);
    }
    Ok(remaining[rng.gen_range(0..remaining.len())])
}
