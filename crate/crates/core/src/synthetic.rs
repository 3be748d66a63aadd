//! Planted-cluster user-item knowledge graphs.
//!
//! Users, items and attribute entities are each assigned to one of
//! `clusters` taste clusters (round-robin by index). Each item receives
//! `facts_per_item` distinct `(item, rel_k, attr)` facts whose attribute is
//! drawn from the item's own cluster, except with probability `attr_noise`
//! where it is drawn from all attributes. A user likes an item of its own
//! cluster with probability `p_in` and any other item with `p_out`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::kg::{build_user_item_kg, IdMap, Namespace, Triple, LIKES_RELATION};
use crate::{EntityId, Error, KnowledgeGraph, Result};

pub const MIN_FACTS_PER_ITEM: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub attributes: usize,
    pub relations: usize,
    pub facts_per_item: usize,
    pub clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attr_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 300,
            items: 240,
            attributes: 80,
            relations: 3,
            facts_per_item: 6,
            clusters: 4,
            p_in: 0.3,
            p_out: 0.01,
            attr_noise: 0.05,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    /// Reads a `key = value` spec; unspecified keys keep their defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        const KNOWN: [&str; 10] = [
            "users",
            "items",
            "attributes",
            "relations",
            "facts_per_item",
            "clusters",
            "p_in",
            "p_out",
            "attr_noise",
            "seed",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(k)) {
            return Err(Error::Config(format!("unknown synthetic spec key `{k}`")));
        }
        let d = Self::default();
        let spec = Self {
            users: kv.get("users")?.unwrap_or(d.users),
            items: kv.get("items")?.unwrap_or(d.items),
            attributes: kv.get("attributes")?.unwrap_or(d.attributes),
            relations: kv.get("relations")?.unwrap_or(d.relations),
            facts_per_item: kv.get("facts_per_item")?.unwrap_or(d.facts_per_item),
            clusters: kv.get("clusters")?.unwrap_or(d.clusters),
            p_in: kv.get("p_in")?.unwrap_or(d.p_in),
            p_out: kv.get("p_out")?.unwrap_or(d.p_out),
            attr_noise: kv.get("attr_noise")?.unwrap_or(d.attr_noise),
            seed: kv.get("seed")?.unwrap_or(d.seed),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.facts_per_item < MIN_FACTS_PER_ITEM {
            return Err(Error::Config(format!(
                "facts_per_item must be at least {MIN_FACTS_PER_ITEM}, got {}",
                self.facts_per_item
            )));
        }
        if self.users == 0 || self.items == 0 || self.relations == 0 || self.clusters == 0 {
            return Err(Error::Config(
                "users, items, relations and clusters must be positive".to_string(),
            ));
        }
        if self.attributes < self.clusters {
            return Err(Error::Config(
                "need at least one attribute per cluster".to_string(),
            ));
        }
        let smallest_pool = self.attributes / self.clusters;
        if smallest_pool * self.relations < self.facts_per_item {
            return Err(Error::Config(format!(
                "{} relations x {} attributes per cluster cannot give {} distinct facts per item",
                self.relations, smallest_pool, self.facts_per_item
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out), ("attr_noise", self.attr_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Ground truth of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPreferences {
    pub user_cluster: BTreeMap<EntityId, usize>,
    pub item_cluster: BTreeMap<EntityId, usize>,
    pub attribute_cluster: BTreeMap<EntityId, usize>,
}

impl PlantedPreferences {
    /// False when `p_in == p_out`: likes carry no cluster signal.
    pub fn has_structure(spec: &SyntheticSpec) -> bool {
        spec.p_in != spec.p_out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub kg: KnowledgeGraph,
    pub ids: IdMap,
    pub planted: PlantedPreferences,
}

pub fn generate_synthetic_kg(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = IdMap::new();
    let users: Vec<EntityId> = (0..spec.users)
        .map(|k| ids.intern(Namespace::User, &format!("user_{k}")))
        .collect();
    let items: Vec<EntityId> = (0..spec.items)
        .map(|k| ids.intern(Namespace::Item, &format!("item_{k}")))
        .collect();
    let attrs: Vec<EntityId> = (0..spec.attributes)
        .map(|k| ids.intern(Namespace::Entity, &format!("attr_{k}")))
        .collect();
    let relations: Vec<u32> = (0..spec.relations)
        .map(|k| ids.intern_relation(&format!("rel_{k}")))
        .collect();

    let cluster_of = |k: usize| k % spec.clusters;
    let pools: Vec<Vec<EntityId>> = (0..spec.clusters)
        .map(|c| {
            attrs
                .iter()
                .enumerate()
                .filter(|(k, _)| cluster_of(*k) == c)
                .map(|(_, &a)| a)
                .collect()
        })
        .collect();

    let mut side = Vec::with_capacity(spec.items * spec.facts_per_item);
    for (k, &item) in items.iter().enumerate() {
        let pool = &pools[cluster_of(k)];
        let mut facts: HashSet<(u32, EntityId)> = HashSet::new();
        let mut j = 0usize;
        while facts.len() < spec.facts_per_item {
            let rel = relations[j % relations.len()];
            j += 1;
            let attr = if rng.gen_bool(spec.attr_noise) {
                attrs[rng.gen_range(0..attrs.len())]
            } else {
                pool[rng.gen_range(0..pool.len())]
            };
            if facts.insert((rel, attr)) {
                side.push(Triple::new(item, rel, attr));
            }
        }
    }

    let mut likes = Vec::new();
    for (ku, &user) in users.iter().enumerate() {
        for (ki, &item) in items.iter().enumerate() {
            let p = if cluster_of(ku) == cluster_of(ki) {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.gen_bool(p) {
                likes.push(Triple::new(user, LIKES_RELATION, item));
            }
        }
    }
    if likes.is_empty() {
        return Err(Error::EmptyDataset(
            "synthetic spec produced no likes".to_string(),
        ));
    }

    let kg = build_user_item_kg(&likes, &side, &ids)?;
    let planted = PlantedPreferences {
        user_cluster: users.iter().enumerate().map(|(k, &u)| (u, cluster_of(k))).collect(),
        item_cluster: items.iter().enumerate().map(|(k, &i)| (i, cluster_of(k))).collect(),
        attribute_cluster: attrs.iter().enumerate().map(|(k, &a)| (a, cluster_of(k))).collect(),
    };
    Ok(SyntheticDataset { kg, ids, planted })
}

/// Fraction of (user, item) pairs in the same cluster that are liked.
pub fn within_cluster_like_rate(ds: &SyntheticDataset) -> f64 {
    let liked: BTreeSet<(EntityId, EntityId)> = ds.kg.likes().map(|t| (t.head, t.tail)).collect();
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for (&u, &cu) in &ds.planted.user_cluster {
        for (&i, &ci) in &ds.planted.item_cluster {
            if cu == ci {
                pairs += 1;
                hits += liked.contains(&(u, i)) as usize;
            }
        }
    }
    hits as f64 / pairs.max(1) as f64
}
