//! Mini-batch SGD for SimplE under a logistic or a Gaussian likelihood.
//!
//! Per batch of positives and their corrupted negatives the objective is
//!
//! ```text
//! logistic:  Σ log(1 + exp(-y Φ)) + λ‖θ‖²
//! gaussian:  Σ ½ (y - Φ)²         + λ‖θ‖²      y ∈ {+1, -1}
//! ```
//!
//! The data term takes an explicit gradient step on the rows it touches; the
//! L2 term is applied as its proximal step `θ ← θ / (1 + 2·lr·λ)` over all
//! parameters, which is stable for any `λ`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rank::hit_rate;
use super::table::EmbeddingTable;
use crate::kg::{DatasetSplit, Namespace};
use crate::{EntityId, Error, KnowledgeGraph, Result, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Logistic,
    Gaussian,
}

impl FromStr for Likelihood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Likelihood::Logistic),
            "gaussian" => Ok(Likelihood::Gaussian),
            other => Err(Error::Config(format!("unknown likelihood `{other}`"))),
        }
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Likelihood::Logistic => "logistic",
            Likelihood::Gaussian => "gaussian",
        })
    }
}

impl Likelihood {
    /// Per-sample negative log-likelihood of label `y` given score `phi`.
    pub fn loss(self, phi: f64, y: f64) -> f64 {
        match self {
            Likelihood::Logistic => softplus(-y * phi),
            Likelihood::Gaussian => 0.5 * (y - phi) * (y - phi),
        }
    }

    /// d loss / d phi.
    pub fn dloss(self, phi: f64, y: f64) -> f64 {
        match self {
            Likelihood::Logistic => -y * sigmoid(-y * phi),
            Likelihood::Gaussian => phi - y,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub lambda: f64,
    pub neg_ratio: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub likelihood: Likelihood,
    pub seed: u64,
    pub init_scale: f64,
    /// Validation cutoff used for best-epoch selection.
    pub select_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            lr: 0.02,
            lambda: 1e-4,
            neg_ratio: 4,
            batch_size: 128,
            epochs: 100,
            likelihood: Likelihood::Gaussian,
            seed: 0,
            init_scale: 0.1,
            select_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.neg_ratio < 1 {
            return Err(Error::Config("neg_ratio must be at least 1".to_string()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// A training example: a triple and its label in {+1, -1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeled {
    pub triple: Triple,
    pub label: f64,
}

/// Uniform corruption within entity namespaces.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    users: Vec<EntityId>,
    items: Vec<EntityId>,
    entities: Vec<EntityId>,
    namespace: Vec<Namespace>,
}

impl NegativeSampler {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let namespace: Vec<Namespace> = (0..kg.entity_count() as EntityId).map(|e| kg.namespace(e)).collect();
        Self {
            users: kg.user_ids().iter().copied().collect(),
            items: kg.item_ids().iter().copied().collect(),
            entities: kg.kg_entity_ids(),
            namespace,
        }
    }

    fn pool(&self, e: EntityId) -> &[EntityId] {
        match self.namespace[e as usize] {
            Namespace::User => &self.users,
            Namespace::Item => &self.items,
            Namespace::Entity => &self.entities,
        }
    }

    /// `k` corrupted copies of `triple`, each replacing the head or the tail
    /// (fair coin) with a different entity of the same namespace.
    pub fn sample<R: Rng>(&self, triple: Triple, k: usize, rng: &mut R) -> Result<Vec<Triple>> {
        if k == 0 {
            return Err(Error::Config("negative sample count must be at least 1".to_string()));
        }
        let head_ok = self.pool(triple.head).len() > 1;
        let tail_ok = self.pool(triple.tail).len() > 1;
        if !head_ok && !tail_ok {
            return Err(Error::Config(format!(
                "cannot corrupt {triple}: both namespaces have a single entity"
            )));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut corrupt_head = rng.gen_bool(0.5);
            if corrupt_head && !head_ok {
                corrupt_head = false;
            } else if !corrupt_head && !tail_ok {
                corrupt_head = true;
            }
            let original = if corrupt_head { triple.head } else { triple.tail };
            let pool = self.pool(original);
            // Draw from the pool minus the original.
            let pos = pool.binary_search(&original).expect("entity belongs to its pool");
            let mut pick = rng.gen_range(0..pool.len() - 1);
            if pick >= pos {
                pick += 1;
            }
            let mut t = triple;
            if corrupt_head {
                t.head = pool[pick];
            } else {
                t.tail = pool[pick];
            }
            out.push(t);
        }
        Ok(out)
    }
}

pub fn negative_sample<R: Rng>(kg: &KnowledgeGraph, triple: Triple, k: usize, rng: &mut R) -> Result<Vec<Triple>> {
    NegativeSampler::new(kg).sample(triple, k, rng)
}

/// `Σ loss + λ‖θ‖²` over `batch`.
pub fn batch_loss(table: &EmbeddingTable, batch: &[Labeled], likelihood: Likelihood, lambda: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|s| {
            let t = s.triple;
            likelihood.loss(table.score_unchecked(t.head, t.relation, t.tail), s.label)
        })
        .sum();
    data + lambda * table.squared_norm()
}

/// Adds `scale · ∂Φ(t)/∂θ` into `grad`.
fn accumulate_score_gradient(table: &EmbeddingTable, t: Triple, scale: f64, grad: &mut EmbeddingTable) {
    let d = table.dim();
    let c = 0.5 * scale;
    let (h, r, e) = (t.head, t.relation, t.tail);
    for k in 0..d {
        let hh = table.head(h)[k];
        let ht = table.tail(h)[k];
        let eh = table.head(e)[k];
        let et = table.tail(e)[k];
        let vf = table.fwd(r)[k];
        let vi = table.inv(r)[k];
        grad.head_mut(h)[k] += c * vf * et;
        grad.tail_mut(e)[k] += c * hh * vf;
        grad.fwd_mut(r)[k] += c * hh * et;
        grad.head_mut(e)[k] += c * vi * ht;
        grad.tail_mut(h)[k] += c * eh * vi;
        grad.inv_mut(r)[k] += c * eh * ht;
    }
}

/// Analytic gradient of [`batch_loss`].
pub fn batch_gradient(table: &EmbeddingTable, batch: &[Labeled], likelihood: Likelihood, lambda: f64) -> EmbeddingTable {
    let mut grad = EmbeddingTable::zeros(table.dim(), table.entity_count(), table.relation_count());
    for s in batch {
        let t = s.triple;
        let phi = table.score_unchecked(t.head, t.relation, t.tail);
        accumulate_score_gradient(table, t, likelihood.dloss(phi, s.label), &mut grad);
    }
    for (g, p) in grad.matrices_mut().into_iter().zip(table.matrices()) {
        for (gx, px) in g.iter_mut().zip(p) {
            *gx += 2.0 * lambda * px;
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub validation_hit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    /// Epoch of the returned snapshot; 0 is the initialization.
    pub best_epoch: usize,
    pub best_validation_hit: Option<f64>,
    pub history: Vec<EpochStats>,
}

/// Trains on `split.train`, returning the snapshot with the best validation
/// hit rate (the first one reaching it).
pub fn train(kg: &KnowledgeGraph, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(kg, split, cfg, |_| {})
}

pub fn train_with_callback(
    kg: &KnowledgeGraph,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = EmbeddingTable::random_uniform(
        cfg.dim,
        kg.entity_count(),
        kg.relation_count(),
        cfg.init_scale,
        &mut rng,
    );
    let sampler = NegativeSampler::new(kg);
    let exclude: BTreeMap<EntityId, _> = split.train_likes(kg.likes_relation());
    let items: Vec<EntityId> = kg.item_ids().iter().copied().collect();
    let validate = |t: &EmbeddingTable| -> Option<f64> {
        (!split.validation.is_empty()).then(|| hit_rate(t, kg.likes_relation(), &items, &split.validation, &exclude, cfg.select_k))
    };

    let mut best = table.clone();
    let mut best_epoch = 0;
    let mut best_hit = validate(&table);
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut grad = EmbeddingTable::zeros(cfg.dim, kg.entity_count(), kg.relation_count());
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let decay = 1.0 / (1.0 + 2.0 * cfg.lr * cfg.lambda);
    let mut samples: Vec<Labeled> = Vec::with_capacity(cfg.batch_size * (1 + cfg.neg_ratio));

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            samples.clear();
            for &i in chunk {
                let pos = split.train[i];
                samples.push(Labeled { triple: pos, label: 1.0 });
                for neg in sampler.sample(pos, cfg.neg_ratio, &mut rng)? {
                    samples.push(Labeled { triple: neg, label: -1.0 });
                }
            }
            for s in &samples {
                let t = s.triple;
                let phi = table.score_unchecked(t.head, t.relation, t.tail);
                epoch_loss += cfg.likelihood.loss(phi, s.label);
                accumulate_score_gradient(&table, t, cfg.likelihood.dloss(phi, s.label), &mut grad);
            }
            // Step and clear only the touched rows.
            for s in &samples {
                let t = s.triple;
                for e in [t.head, t.tail] {
                    step_row(table.head_mut(e), grad.head_mut(e), cfg.lr);
                    step_row(table.tail_mut(e), grad.tail_mut(e), cfg.lr);
                }
                step_row(table.fwd_mut(t.relation), grad.fwd_mut(t.relation), cfg.lr);
                step_row(table.inv_mut(t.relation), grad.inv_mut(t.relation), cfg.lr);
            }
            if cfg.lambda > 0.0 {
                for m in table.matrices_mut() {
                    m.iter_mut().for_each(|x| *x *= decay);
                }
            }
        }
        epoch_loss += cfg.lambda * table.squared_norm();
        if !epoch_loss.is_finite() || !table.all_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch} (loss {epoch_loss}); lower the learning rate (lr = {})",
                cfg.lr
            )));
        }
        let hit = validate(&table);
        let stats = EpochStats {
            epoch,
            loss: epoch_loss,
            validation_hit: hit,
        };
        on_epoch(&stats);
        history.push(stats);
        let improved = match (hit, best_hit) {
            (Some(h), Some(b)) => h > b,
            (None, _) => true,
            (Some(_), None) => true,
        };
        if improved {
            best = table.clone();
            best_epoch = epoch;
            best_hit = hit;
        }
    }
    Ok(TrainOutcome {
        table: best,
        best_epoch,
        best_validation_hit: best_hit,
        history,
    })
}

#[inline]
fn step_row(param: &mut [f64], grad: &mut [f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad.iter_mut()) {
        *p -= lr * *g;
        *g = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_user_item_kg, IdMap};

    fn tiny_kg() -> KnowledgeGraph {
        let mut ids = IdMap::new();
        let u1 = ids.intern(Namespace::User, "u1");
        let u2 = ids.intern(Namespace::User, "u2");
        let i1 = ids.intern(Namespace::Item, "i1");
        let i2 = ids.intern(Namespace::Item, "i2");
        let i3 = ids.intern(Namespace::Item, "i3");
        let g = ids.intern_relation("genre");
        let war = ids.intern(Namespace::Entity, "war");
        let likes = vec![Triple::new(u1, 0, i1), Triple::new(u2, 0, i2)];
        let side = vec![Triple::new(i1, g, war), Triple::new(i3, g, war)];
        build_user_item_kg(&likes, &side, &ids).unwrap()
    }

    #[test]
    fn negatives_differ_in_exactly_one_slot_and_respect_namespaces() {
        let kg = tiny_kg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Triple::new(0, 0, 2);
        for neg in negative_sample(&kg, t, 200, &mut rng).unwrap() {
            let head_changed = neg.head != t.head;
            let tail_changed = neg.tail != t.tail;
            assert!(head_changed ^ tail_changed, "{neg}");
            if tail_changed {
                assert!(kg.is_item(neg.tail));
            } else {
                assert!(kg.is_user(neg.head));
            }
        }
        assert_eq!(negative_sample(&kg, t, 2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn single_entity_namespace_falls_back_to_other_slot() {
        let kg = tiny_kg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // The entity namespace holds only `war`, so the item head is corrupted.
        let t = Triple::new(2, 1, 5);
        for neg in negative_sample(&kg, t, 50, &mut rng).unwrap() {
            assert_eq!(neg.tail, 5);
            assert!(kg.is_item(neg.head) && neg.head != 2);
        }
    }

    #[test]
    fn negative_sampling_is_reproducible() {
        let kg = tiny_kg();
        let t = Triple::new(0, 0, 2);
        let a = negative_sample(&kg, t, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = negative_sample(&kg, t, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(negative_sample(&kg, t, 0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn losses_and_derivatives() {
        assert!((Likelihood::Logistic.loss(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Likelihood::Gaussian.loss(0.5, 1.0), 0.125);
        assert_eq!(Likelihood::Gaussian.dloss(0.5, -1.0), 1.5);
        assert!((Likelihood::Logistic.dloss(0.0, 1.0) + 0.5).abs() < 1e-15);
        // Large margins stay finite.
        assert!(Likelihood::Logistic.loss(-800.0, 1.0).is_finite());
        assert!(Likelihood::Logistic.loss(800.0, 1.0) >= 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
            TrainConfig { neg_ratio: 0, ..TrainConfig::default() },
            TrainConfig { dim: 1, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let kg = tiny_kg();
        let split = DatasetSplit {
            train: kg.triples().to_vec(),
            ..DatasetSplit::default()
        };
        let cfg = TrainConfig { epochs: 0, dim: 4, ..TrainConfig::default() };
        let out = train(&kg, &split, &cfg).unwrap();
        let init = EmbeddingTable::random_uniform(4, kg.entity_count(), kg.relation_count(), 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.table, init);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn divergence_is_reported() {
        let kg = tiny_kg();
        let split = DatasetSplit {
            train: kg.triples().to_vec(),
            ..DatasetSplit::default()
        };
        let cfg = TrainConfig {
            lr: 1e6,
            init_scale: 1.0,
            epochs: 50,
            dim: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&kg, &split, &cfg), Err(Error::Numerical(_))));
    }
}
