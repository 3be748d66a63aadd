//! Item ranking for `(user, likes, item)` link prediction.
//!
//! Rankings sort by score descending and break ties by ascending item id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::table::{dot3, EmbeddingTable};
use crate::{EntityId, Error, RelationId, Result, Triple};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub item: EntityId,
    pub score: f64,
}

fn by_score_then_id(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.item.cmp(&b.item))
}

/// Sorts `scored` in ranking order.
pub fn sort_ranking(scored: &mut [Scored]) {
    scored.sort_by(by_score_then_id);
}

fn filtered(candidates: &[EntityId], exclude: &BTreeSet<EntityId>) -> Result<Vec<EntityId>> {
    let mut seen = BTreeSet::new();
    let keep: Vec<EntityId> = candidates
        .iter()
        .copied()
        .filter(|i| !exclude.contains(i) && seen.insert(*i))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyRanking);
    }
    Ok(keep)
}

/// Ranks `candidates \ exclude` by `score(user, likes, item)`.
pub fn rank_items(
    emb: &EmbeddingTable,
    user: EntityId,
    likes: RelationId,
    candidates: &[EntityId],
    exclude: &BTreeSet<EntityId>,
) -> Result<Vec<Scored>> {
    let keep = filtered(candidates, exclude)?;
    let mut scored = Vec::with_capacity(keep.len());
    for item in keep {
        scored.push(Scored {
            item,
            score: emb.score(user, likes, item)?,
        });
    }
    sort_ranking(&mut scored);
    Ok(scored)
}

/// Like [`rank_items`], scoring with a user vector laid out as
/// `[head part ; tail part]` (length `2d`) instead of the stored user rows.
pub fn rank_items_from_mean(
    emb: &EmbeddingTable,
    user_mean: &[f64],
    likes: RelationId,
    candidates: &[EntityId],
    exclude: &BTreeSet<EntityId>,
) -> Result<Vec<Scored>> {
    let d = emb.dim();
    if user_mean.len() != 2 * d {
        return Err(Error::Dimension {
            expected: 2 * d,
            got: user_mean.len(),
        });
    }
    if likes as usize >= emb.relation_count() {
        return Err(Error::IdOutOfRange {
            kind: "relation",
            id: likes,
            count: emb.relation_count(),
        });
    }
    let keep = filtered(candidates, exclude)?;
    let (uh, ut) = user_mean.split_at(d);
    let mut scored = Vec::with_capacity(keep.len());
    for item in keep {
        if item as usize >= emb.entity_count() {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id: item,
                count: emb.entity_count(),
            });
        }
        let score = 0.5 * (dot3(uh, emb.fwd(likes), emb.tail(item)) + dot3(emb.head(item), emb.inv(likes), ut));
        scored.push(Scored { item, score });
    }
    sort_ranking(&mut scored);
    Ok(scored)
}

/// 1-based rank of `target` among `items \ exclude` under the ranking order,
/// computed without sorting.
fn rank_of(scores: &[(EntityId, f64)], target: EntityId, exclude: &BTreeSet<EntityId>) -> Option<usize> {
    let target_score = scores.iter().find(|(i, _)| *i == target)?.1;
    let ahead = scores
        .iter()
        .filter(|(i, s)| !exclude.contains(i) && *i != target && (*s > target_score || (*s == target_score && *i < target)))
        .count();
    Some(ahead + 1)
}

/// Fraction of `(user, likes, item)` triples whose item ranks within the
/// top `k` of all `items` minus the user's entry in `exclude`.
pub fn hit_rate(
    emb: &EmbeddingTable,
    likes: RelationId,
    items: &[EntityId],
    triples: &[Triple],
    exclude: &BTreeMap<EntityId, BTreeSet<EntityId>>,
    k: usize,
) -> f64 {
    hit_rates(emb, likes, items, triples, exclude, &[k])[0]
}

/// [`hit_rate`] for several cutoffs at once.
pub fn hit_rates(
    emb: &EmbeddingTable,
    likes: RelationId,
    items: &[EntityId],
    triples: &[Triple],
    exclude: &BTreeMap<EntityId, BTreeSet<EntityId>>,
    ks: &[usize],
) -> Vec<f64> {
    let ranks = per_user_ranks(triples, exclude, |user| {
        items
            .iter()
            .map(|&i| (i, emb.score_unchecked(user, likes, i)))
            .collect()
    });
    rates_from_ranks(&ranks, ks)
}

/// Popularity baseline: items ordered by training like count.
#[derive(Debug, Clone)]
pub struct Popularity {
    counts: BTreeMap<EntityId, usize>,
}

impl Popularity {
    pub fn fit(train: &[Triple], likes: RelationId, items: &[EntityId]) -> Self {
        let mut counts: BTreeMap<EntityId, usize> = items.iter().map(|&i| (i, 0)).collect();
        for t in train.iter().filter(|t| t.relation == likes) {
            if let Some(c) = counts.get_mut(&t.tail) {
                *c += 1;
            }
        }
        Self { counts }
    }

    pub fn score(&self, item: EntityId) -> f64 {
        self.counts.get(&item).copied().unwrap_or(0) as f64
    }

    pub fn hit_rates(
        &self,
        triples: &[Triple],
        exclude: &BTreeMap<EntityId, BTreeSet<EntityId>>,
        ks: &[usize],
    ) -> Vec<f64> {
        let scores: Vec<(EntityId, f64)> = self.counts.iter().map(|(&i, &c)| (i, c as f64)).collect();
        let ranks = per_user_ranks(triples, exclude, |_| scores.clone());
        rates_from_ranks(&ranks, ks)
    }
}

fn per_user_ranks(
    triples: &[Triple],
    exclude: &BTreeMap<EntityId, BTreeSet<EntityId>>,
    mut scores_for: impl FnMut(EntityId) -> Vec<(EntityId, f64)>,
) -> Vec<Option<usize>> {
    let empty = BTreeSet::new();
    let mut by_user: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
    for (idx, t) in triples.iter().enumerate() {
        by_user.entry(t.head).or_default().push(idx);
    }
    let mut ranks = vec![None; triples.len()];
    for (user, idxs) in by_user {
        let scores = scores_for(user);
        let ex = exclude.get(&user).unwrap_or(&empty);
        for idx in idxs {
            ranks[idx] = rank_of(&scores, triples[idx].tail, ex);
        }
    }
    ranks
}

fn rates_from_ranks(ranks: &[Option<usize>], ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            if ranks.is_empty() {
                return 0.0;
            }
            let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
            hits as f64 / ranks.len() as f64
        })
        .collect()
}
