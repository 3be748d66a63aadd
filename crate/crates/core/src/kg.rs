//! User-item knowledge graph: loading, filtering, indexing and splitting.
//!
//! Entity ids are dense `u32`s laid out in three contiguous ranges assigned
//! in load order: users first, then rated items, then entities that only
//! appear in side-information facts. Relation 0 is always `likes`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

pub const LIKES_RELATION: RelationId = 0;
pub const LIKES_NAME: &str = "likes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    User,
    Item,
    Entity,
}

impl Namespace {
    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::User => "user",
            Namespace::Item => "item",
            Namespace::Entity => "entity",
        }
    }
}

impl std::str::FromStr for Namespace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Namespace::User),
            "item" => Ok(Namespace::Item),
            "entity" => Ok(Namespace::Entity),
            other => Err(Error::Config(format!("unknown namespace `{other}`"))),
        }
    }
}

/// Name tables for entities and relations, plus the external-id lookups
/// used while loading.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    names: Vec<String>,
    kinds: Vec<Namespace>,
    lookup: HashMap<(Namespace, String), EntityId>,
    relations: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
}

impl IdMap {
    /// An empty map with the `likes` relation pre-registered as id 0.
    pub fn new() -> Self {
        Self {
            relations: vec![LIKES_NAME.to_string()],
            ..Self::default()
        }
    }

    /// Interns `name` in `kind`. Returns the existing id if already present.
    pub fn intern(&mut self, kind: Namespace, name: &str) -> EntityId {
        if let Some(&id) = self.lookup.get(&(kind, name.to_string())) {
            return id;
        }
        let id = self.names.len() as EntityId;
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.lookup.insert((kind, name.to_string()), id);
        id
    }

    /// Interns a side-information relation. `likes` is never returned here,
    /// even for a relation that happens to share its name.
    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_lookup.get(name) {
            return id;
        }
        let id = self.relations.len() as RelationId;
        self.relations.push(name.to_string());
        self.relation_lookup.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, kind: Namespace, name: &str) -> Option<EntityId> {
        self.lookup.get(&(kind, name.to_string())).copied()
    }

    pub fn entity_count(&self) -> usize {
        self.names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.names[id as usize]
    }

    pub fn kind(&self, id: EntityId) -> Namespace {
        self.kinds[id as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id as usize]
    }

    pub fn ids_of(&self, kind: Namespace) -> impl Iterator<Item = EntityId> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, k)| **k == kind)
            .map(|(i, _)| i as EntityId)
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, Namespace, &str)> {
        self.names
            .iter()
            .zip(&self.kinds)
            .enumerate()
            .map(|(i, (n, k))| (i as EntityId, *k, n.as_str()))
    }

    pub fn relations(&self) -> impl Iterator<Item = (RelationId, &str)> {
        self.relations
            .iter()
            .enumerate()
            .map(|(i, n)| (i as RelationId, n.as_str()))
    }

    /// Rebuilds a map from stored tables (ids are positions).
    pub fn from_tables(entities: Vec<(Namespace, String)>, relations: Vec<String>) -> Result<Self> {
        if relations.first().map(String::as_str) != Some(LIKES_NAME) {
            return Err(Error::Construction(
                "relation 0 must be `likes`".to_string(),
            ));
        }
        let mut map = IdMap::new();
        for (kind, name) in entities {
            let id = map.names.len() as EntityId;
            if map.lookup.insert((kind, name.clone()), id).is_some() {
                return Err(Error::Construction(format!(
                    "duplicate {} name `{name}`",
                    kind.as_str()
                )));
            }
            map.names.push(name);
            map.kinds.push(kind);
        }
        for name in relations.into_iter().skip(1) {
            map.intern_relation(&name);
        }
        Ok(map)
    }
}

/// Liked (user, item) pairs read from a ratings file.
#[derive(Debug, Clone)]
pub struct Ratings {
    pub likes: Vec<Triple>,
    pub ids: IdMap,
}

/// Reads `user \t item \t rating \t timestamp` rows and keeps those rated
/// strictly above `threshold` as `(user, likes, item)` triples.
pub fn load_ratings(path: &Path, threshold: f64) -> Result<Ratings> {
    let text = std::fs::read_to_string(path)?;
    parse_ratings(&text, path, threshold)
}

pub fn parse_ratings(text: &str, origin: &Path, threshold: f64) -> Result<Ratings> {
    if !(threshold > 0.0 && threshold <= 5.0) {
        return Err(Error::Config(format!(
            "rating threshold {threshold} outside (0, 5]"
        )));
    }
    let mut liked: Vec<(&str, &str)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                origin,
                idx + 1,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let rating: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, idx + 1, format!("bad rating `{}`", cols[2])))?;
        if !rating.is_finite() {
            return Err(Error::parse(origin, idx + 1, "non-finite rating"));
        }
        if rating > threshold {
            liked.push((cols[0].trim(), cols[1].trim()));
        }
    }
    if liked.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no ratings above {threshold} in {}",
            origin.display()
        )));
    }

    let mut ids = IdMap::new();
    for (user, _) in &liked {
        ids.intern(Namespace::User, user);
    }
    for (_, item) in &liked {
        ids.intern(Namespace::Item, item);
    }
    let mut seen = HashSet::new();
    let mut likes = Vec::with_capacity(liked.len());
    for (user, item) in liked {
        let t = Triple::new(
            ids.intern(Namespace::User, user),
            LIKES_RELATION,
            ids.intern(Namespace::Item, item),
        );
        if seen.insert(t) {
            likes.push(t);
        }
    }
    Ok(Ratings { likes, ids })
}

/// Reads side-information triples (`head \t relation \t tail`, string names)
/// and an item map (`item_id \t entity_name`) into the id space of `ids`.
///
/// Names listed in the item map resolve to the rated item; every other name
/// becomes a knowledge-graph entity. Item-map rows for items absent from the
/// ratings are skipped with a warning. Duplicate triples are dropped.
pub fn load_kg_triples(path: &Path, item_map_path: &Path, ids: &mut IdMap) -> Result<Vec<Triple>> {
    let triples = std::fs::read_to_string(path)?;
    let item_map = std::fs::read_to_string(item_map_path)?;
    parse_kg_triples(&triples, path, &item_map, item_map_path, ids)
}

pub fn parse_kg_triples(
    triples: &str,
    triples_origin: &Path,
    item_map: &str,
    item_map_origin: &Path,
    ids: &mut IdMap,
) -> Result<Vec<Triple>> {
    let mut entity_to_item: HashMap<String, EntityId> = HashMap::new();
    for (idx, line) in item_map.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (item, entity) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(item_map_origin, idx + 1, "expected `item_id<TAB>entity_name`"))?;
        match ids.get(Namespace::Item, item.trim()) {
            Some(id) => {
                entity_to_item.insert(entity.trim().to_string(), id);
            }
            None => tracing::warn!(
                line = idx + 1,
                item = item.trim(),
                "item map references an unknown item; skipping"
            ),
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in triples.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                triples_origin,
                idx + 1,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let mut resolve = |name: &str| match entity_to_item.get(name) {
            Some(&id) => id,
            None => ids.intern(Namespace::Entity, name),
        };
        let head = resolve(cols[0].trim());
        let tail = resolve(cols[2].trim());
        let relation = ids.intern_relation(cols[1].trim());
        let t = Triple::new(head, relation, tail);
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// An indexed, immutable user-item knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    triples: Vec<Triple>,
    by_head: Vec<Vec<u32>>,
    by_tail: Vec<Vec<u32>>,
    user_ids: BTreeSet<EntityId>,
    item_ids: BTreeSet<EntityId>,
    likes_relation: RelationId,
}

impl KnowledgeGraph {
    /// Validates the namespace invariants and builds adjacency indices.
    pub fn new(
        entity_count: usize,
        relation_count: usize,
        triples: Vec<Triple>,
        user_ids: BTreeSet<EntityId>,
        item_ids: BTreeSet<EntityId>,
        likes_relation: RelationId,
    ) -> Result<Self> {
        if let Some(id) = user_ids.intersection(&item_ids).next() {
            return Err(Error::Construction(format!(
                "entity {id} is both a user and an item"
            )));
        }
        if let Some(&id) = user_ids.iter().chain(&item_ids).find(|&&id| id as usize >= entity_count) {
            return Err(Error::IdOutOfRange {
                kind: "entity",
                id,
                count: entity_count,
            });
        }
        if likes_relation as usize >= relation_count {
            return Err(Error::IdOutOfRange {
                kind: "relation",
                id: likes_relation,
                count: relation_count,
            });
        }
        for t in &triples {
            for id in [t.head, t.tail] {
                if id as usize >= entity_count {
                    return Err(Error::IdOutOfRange {
                        kind: "entity",
                        id,
                        count: entity_count,
                    });
                }
            }
            if t.relation as usize >= relation_count {
                return Err(Error::IdOutOfRange {
                    kind: "relation",
                    id: t.relation,
                    count: relation_count,
                });
            }
            if t.relation == likes_relation {
                if !user_ids.contains(&t.head) || !item_ids.contains(&t.tail) {
                    return Err(Error::Construction(format!(
                        "likes triple {t} must link a user to an item"
                    )));
                }
            } else if user_ids.contains(&t.head) || user_ids.contains(&t.tail) {
                return Err(Error::Construction(format!(
                    "side fact {t} references a user entity"
                )));
            }
        }
        let (by_head, by_tail) = build_indices(entity_count, &triples);
        Ok(Self {
            entity_count,
            relation_count,
            triples,
            by_head,
            by_tail,
            user_ids,
            item_ids,
            likes_relation,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn user_ids(&self) -> &BTreeSet<EntityId> {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &BTreeSet<EntityId> {
        &self.item_ids
    }

    pub fn likes_relation(&self) -> RelationId {
        self.likes_relation
    }

    pub fn is_item(&self, id: EntityId) -> bool {
        self.item_ids.contains(&id)
    }

    pub fn is_user(&self, id: EntityId) -> bool {
        self.user_ids.contains(&id)
    }

    pub fn namespace(&self, id: EntityId) -> Namespace {
        if self.user_ids.contains(&id) {
            Namespace::User
        } else if self.item_ids.contains(&id) {
            Namespace::Item
        } else {
            Namespace::Entity
        }
    }

    /// Entities that are neither users nor items.
    pub fn kg_entity_ids(&self) -> Vec<EntityId> {
        (0..self.entity_count as EntityId)
            .filter(|id| !self.user_ids.contains(id) && !self.item_ids.contains(id))
            .collect()
    }

    /// Triples with `id` as head.
    pub fn outgoing(&self, id: EntityId) -> impl Iterator<Item = &Triple> {
        self.by_head[id as usize]
            .iter()
            .map(|&i| &self.triples[i as usize])
    }

    /// Triples with `id` as tail.
    pub fn incoming(&self, id: EntityId) -> impl Iterator<Item = &Triple> {
        self.by_tail[id as usize]
            .iter()
            .map(|&i| &self.triples[i as usize])
    }

    pub fn likes(&self) -> impl Iterator<Item = &Triple> {
        self.triples
            .iter()
            .filter(|t| t.relation == self.likes_relation)
    }

    pub fn side_facts(&self) -> impl Iterator<Item = &Triple> {
        self.triples
            .iter()
            .filter(|t| t.relation != self.likes_relation)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.outgoing(t.head).any(|x| x == t)
    }

    /// Number of non-likes facts incident to `item` (as head or tail).
    pub fn side_fact_count(&self, item: EntityId) -> usize {
        let out = self
            .outgoing(item)
            .filter(|t| t.relation != self.likes_relation)
            .count();
        let inc = self
            .incoming(item)
            .filter(|t| t.relation != self.likes_relation && t.head != item)
            .count();
        out + inc
    }

    /// True when the stored adjacency lists equal a fresh rebuild.
    pub fn indices_consistent(&self) -> bool {
        let (h, t) = build_indices(self.entity_count, &self.triples);
        h == self.by_head && t == self.by_tail
    }
}

fn build_indices(entity_count: usize, triples: &[Triple]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut by_head = vec![Vec::new(); entity_count];
    let mut by_tail = vec![Vec::new(); entity_count];
    for (i, t) in triples.iter().enumerate() {
        by_head[t.head as usize].push(i as u32);
        by_tail[t.tail as usize].push(i as u32);
    }
    (by_head, by_tail)
}

/// Merges likes triples and side facts into one graph. Namespaces come from
/// `ids`; a side fact touching a user is a construction error.
pub fn build_user_item_kg(likes: &[Triple], side_info: &[Triple], ids: &IdMap) -> Result<KnowledgeGraph> {
    let user_ids: BTreeSet<EntityId> = ids.ids_of(Namespace::User).collect();
    let item_ids: BTreeSet<EntityId> = ids.ids_of(Namespace::Item).collect();
    if let Some(t) = likes.iter().find(|t| t.relation != LIKES_RELATION) {
        return Err(Error::Construction(format!(
            "likes list contains non-likes triple {t}"
        )));
    }
    if let Some(t) = side_info.iter().find(|t| t.relation == LIKES_RELATION) {
        return Err(Error::Construction(format!(
            "side information contains likes triple {t}"
        )));
    }
    let mut seen = HashSet::new();
    let triples: Vec<Triple> = likes
        .iter()
        .chain(side_info)
        .copied()
        .filter(|t| seen.insert(*t))
        .collect();
    KnowledgeGraph::new(
        ids.entity_count(),
        ids.relation_count(),
        triples,
        user_ids,
        item_ids,
        LIKES_RELATION,
    )
}

/// Drops items with fewer than `min_facts` side facts, together with every
/// triple that touches them. Counts are taken on the input graph in a single
/// pass.
pub fn filter_min_facts(kg: &KnowledgeGraph, min_facts: usize) -> Result<KnowledgeGraph> {
    if min_facts == 0 {
        return Err(Error::Config("min_facts must be at least 1".to_string()));
    }
    let removed: HashSet<EntityId> = kg
        .item_ids
        .iter()
        .copied()
        .filter(|&i| kg.side_fact_count(i) < min_facts)
        .collect();
    if removed.len() == kg.item_ids.len() {
        return Err(Error::EmptyDataset(format!(
            "no item has at least {min_facts} side facts"
        )));
    }
    let triples: Vec<Triple> = kg
        .triples
        .iter()
        .copied()
        .filter(|t| !removed.contains(&t.head) && !removed.contains(&t.tail))
        .collect();
    let item_ids = kg
        .item_ids
        .iter()
        .copied()
        .filter(|i| !removed.contains(i))
        .collect();
    KnowledgeGraph::new(
        kg.entity_count,
        kg.relation_count,
        triples,
        kg.user_ids.clone(),
        item_ids,
        kg.likes_relation,
    )
}

/// Train/validation/test partition. Validation and test hold likes triples
/// only; train holds the remaining likes plus every side fact.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<Triple>,
    pub validation: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl DatasetSplit {
    /// Items each user likes in the training split.
    pub fn train_likes(&self, likes_relation: RelationId) -> BTreeMap<EntityId, BTreeSet<EntityId>> {
        let mut out: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
        for t in self.train.iter().filter(|t| t.relation == likes_relation) {
            out.entry(t.head).or_default().insert(t.tail);
        }
        out
    }
}

/// Per-user holdout of likes triples. For a user with `n` likes,
/// `floor(n * valid_frac)` go to validation and `floor(n * test_frac)` to
/// test after a seeded shuffle; the rest stay in train.
pub fn split_likes(kg: &KnowledgeGraph, valid_frac: f64, test_frac: f64, seed: u64) -> Result<DatasetSplit> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(valid_frac) || !ok(test_frac) || valid_frac + test_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions {valid_frac}/{test_frac} must lie in (0,1) and sum below 1"
        )));
    }
    let mut per_user: BTreeMap<EntityId, Vec<Triple>> = BTreeMap::new();
    for t in kg.likes() {
        per_user.entry(t.head).or_default().push(*t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: kg.side_facts().copied().collect(),
        ..DatasetSplit::default()
    };
    for (_, mut likes) in per_user {
        likes.sort();
        likes.shuffle(&mut rng);
        let n = likes.len();
        let n_valid = (n as f64 * valid_frac).floor() as usize;
        let n_test = (n as f64 * test_frac).floor() as usize;
        // floor(n*v) + floor(n*t) <= floor(n*(v+t)) < n, so train keeps at least one.
        let mut rest = likes.into_iter();
        split.validation.extend(rest.by_ref().take(n_valid));
        split.test.extend(rest.by_ref().take(n_test));
        split.train.extend(rest);
    }
    Ok(split)
}
