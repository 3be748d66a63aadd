//! Information-form Gaussians over the `2d`-dimensional user and item spaces.
//!
//! Coordinates:
//!
//! * user space `z_u = [head(u) ; tail(u)]`
//! * item space `z_m = [tail(i) ; head(i)]`
//! * coupling `D = ½ [v_likes ; v_likes⁻¹]`
//!
//! so that `z_uᵀ diag(D) z_m = Φ(u, likes, i)` exactly. All precisions are
//! diagonal, which keeps every update elementwise.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::critique::{CritiqueFact, ItemSide};
use crate::embed::EmbeddingTable;
use crate::{EntityId, Error, RelationId, Result};

/// `N⁻¹(h, J)` with diagonal `J > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    h: Vec<f64>,
    j: Vec<f64>,
}

impl GaussianBelief {
    pub fn new(h: Vec<f64>, j: Vec<f64>) -> Result<Self> {
        if h.len() != j.len() {
            return Err(Error::Dimension {
                expected: h.len(),
                got: j.len(),
            });
        }
        if let Some(k) = j.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Numerical(format!(
                "precision must be positive and finite, dimension {k} is {}",
                j[k]
            )));
        }
        if let Some(k) = h.iter().zip(&j).position(|(h, j)| !(h / j).is_finite()) {
            return Err(Error::Numerical(format!("non-finite mean at dimension {k}")));
        }
        Ok(Self { h, j })
    }

    /// `h = precision ⊙ mean`.
    pub fn from_mean(mean: &[f64], precision: &[f64]) -> Result<Self> {
        if mean.len() != precision.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: precision.len(),
            });
        }
        Self::new(mean.iter().zip(precision).map(|(m, j)| m * j).collect(), precision.to_vec())
    }

    pub fn isotropic(mean: &[f64], precision: f64) -> Result<Self> {
        Self::from_mean(mean, &vec![precision; mean.len()])
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn j(&self) -> &[f64] {
        &self.j
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        posterior_mean(self)
    }

    /// Two lines, `h ...` and `J ...`, with 17 significant digits.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for (tag, v) in [("h", &self.h), ("J", &self.j)] {
            out.push_str(tag);
            for x in v {
                let _ = write!(out, " {x:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut h = None;
        let mut j = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let values = parts
                .map(|p| p.parse::<f64>().map_err(|_| Error::Config(format!("bad float `{p}` in snapshot"))))
                .collect::<Result<Vec<_>>>()?;
            match tag {
                "h" => h = Some(values),
                "J" => j = Some(values),
                other => return Err(Error::Config(format!("unknown snapshot line `{other}`"))),
            }
        }
        match (h, j) {
            (Some(h), Some(j)) => Self::new(h, j),
            _ => Err(Error::Config("snapshot needs both `h` and `J` lines".to_string())),
        }
    }
}

pub fn posterior_mean(b: &GaussianBelief) -> Vec<f64> {
    b.h.iter().zip(&b.j).map(|(h, j)| h / j).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingSign {
    /// Cross-precision `+D`, the literal form of the joint's cross term.
    Literal,
    /// Cross-precision `-D`: the coupling factor rewards high scores.
    #[default]
    Compat,
}

impl FromStr for CouplingSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(CouplingSign::Literal),
            "compat" => Ok(CouplingSign::Compat),
            other => Err(Error::Config(format!("unknown coupling sign `{other}`"))),
        }
    }
}

/// Diagonal user-item cross precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDiagonal {
    diag: Vec<f64>,
}

impl RelationDiagonal {
    pub fn from_vec(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

/// `[head(u) ; tail(u)]`.
pub fn user_space_layout(emb: &EmbeddingTable, user: EntityId) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * emb.dim());
    v.extend_from_slice(emb.head(user));
    v.extend_from_slice(emb.tail(user));
    v
}

/// `[tail(i) ; head(i)]`.
pub fn item_space_layout(emb: &EmbeddingTable, item: EntityId) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * emb.dim());
    v.extend_from_slice(emb.tail(item));
    v.extend_from_slice(emb.head(item));
    v
}

pub fn init_user_belief(emb: &EmbeddingTable, user: EntityId, j0: f64) -> Result<GaussianBelief> {
    if !(j0 > 0.0 && j0.is_finite()) {
        return Err(Error::Config(format!("j0 must be positive, got {j0}")));
    }
    GaussianBelief::isotropic(&user_space_layout(emb, user), j0)
}

/// `s · ½[v_fwd ; v_inv]` with `s = +1` for [`CouplingSign::Literal`] and
/// `s = -1` for [`CouplingSign::Compat`].
pub fn relation_diagonal(emb: &EmbeddingTable, likes: RelationId, sign: CouplingSign) -> RelationDiagonal {
    let s = match sign {
        CouplingSign::Literal => 0.5,
        CouplingSign::Compat => -0.5,
    };
    let diag = emb.fwd(likes).iter().chain(emb.inv(likes)).map(|x| s * x).collect();
    RelationDiagonal { diag }
}

/// Gradient of the fact's score with respect to the item's layout
/// `[tail(i) ; head(i)]`. The score is linear in that layout, so
/// `Φ(fact with item i) = g · z_i`.
pub fn critique_direction(emb: &EmbeddingTable, fact: &CritiqueFact) -> Vec<f64> {
    let (r, a) = (fact.relation, fact.anchor);
    let (tail_part, head_part): (Vec<f64>, Vec<f64>) = match fact.item_side {
        // (i, r, a): ½(⟨h_i, v, t_a⟩ + ⟨h_a, v⁻¹, t_i⟩)
        ItemSide::Head => (
            emb.inv(r).iter().zip(emb.head(a)).map(|(v, x)| 0.5 * v * x).collect(),
            emb.fwd(r).iter().zip(emb.tail(a)).map(|(v, x)| 0.5 * v * x).collect(),
        ),
        // (a, r, i): ½(⟨h_a, v, t_i⟩ + ⟨h_i, v⁻¹, t_a⟩)
        ItemSide::Tail => (
            emb.fwd(r).iter().zip(emb.head(a)).map(|(v, x)| 0.5 * v * x).collect(),
            emb.inv(r).iter().zip(emb.tail(a)).map(|(v, x)| 0.5 * v * x).collect(),
        ),
    };
    tail_part.into_iter().chain(head_part).collect()
}

/// Mean Euclidean norm of the item layouts.
pub fn mean_item_norm(emb: &EmbeddingTable, items: impl IntoIterator<Item = EntityId>) -> f64 {
    let (sum, n) = items.into_iter().fold((0.0, 0usize), |(s, n), i| {
        let norm = item_space_layout(emb, i).iter().map(|x| x * x).sum::<f64>().sqrt();
        (s + norm, n + 1)
    });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Evidence in item space: mean along the critique's score gradient,
/// rescaled to length `rho`, with isotropic precision `alpha`.
pub fn evidence_from_critique(emb: &EmbeddingTable, fact: &CritiqueFact, alpha: f64, rho: f64) -> Result<GaussianBelief> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if fact.relation as usize >= emb.relation_count() || fact.anchor as usize >= emb.entity_count() {
        return Err(Error::IdOutOfRange {
            kind: "fact",
            id: fact.anchor,
            count: emb.entity_count(),
        });
    }
    let g = critique_direction(emb, fact);
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroEvidence);
    }
    let mean: Vec<f64> = g.iter().map(|x| x / norm * rho).collect();
    GaussianBelief::isotropic(&mean, alpha)
}

/// Centroid of the item layouts with isotropic precision `j_m`.
pub fn item_prior(emb: &EmbeddingTable, top_items: &[EntityId], j_m: f64) -> Result<GaussianBelief> {
    if top_items.is_empty() {
        return Err(Error::Config("item prior needs at least one item".to_string()));
    }
    if !(j_m > 0.0 && j_m.is_finite()) {
        return Err(Error::Config(format!("j_m must be positive, got {j_m}")));
    }
    GaussianBelief::isotropic(&centroid(emb, top_items), j_m)
}

/// Mean of item layouts, summed in ascending id order so the result does
/// not depend on the order of `items`.
pub fn centroid(emb: &EmbeddingTable, items: &[EntityId]) -> Vec<f64> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut acc = vec![0.0; 2 * emb.dim()];
    for &i in &sorted {
        for (a, x) in acc.iter_mut().zip(item_space_layout(emb, i)) {
            *a += x;
        }
    }
    let n = sorted.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `N⁻¹(h_m + h_d, J_m + J_d)`.
pub fn item_posterior(prior_m: &GaussianBelief, evidence: &GaussianBelief) -> Result<GaussianBelief> {
    if prior_m.dim() != evidence.dim() {
        return Err(Error::Dimension {
            expected: prior_m.dim(),
            got: evidence.dim(),
        });
    }
    GaussianBelief::new(
        prior_m.h.iter().zip(&evidence.h).map(|(a, b)| a + b).collect(),
        prior_m.j.iter().zip(&evidence.j).map(|(a, b)| a + b).collect(),
    )
}

/// Marginalizes the item variable out of the joint with cross precision
/// `dr`:
///
/// ```text
/// ĥ_u = h_u − dr ⊙ h_z / J_z
/// Ĵ_u = max(J_u − dr² / J_z, eps)
/// ```
pub fn marginal_user_update(
    belief_u: &GaussianBelief,
    item_post: &GaussianBelief,
    dr: &RelationDiagonal,
    eps: f64,
) -> Result<GaussianBelief> {
    let n = belief_u.dim();
    for got in [item_post.dim(), dr.diag.len()] {
        if got != n {
            return Err(Error::Dimension { expected: n, got });
        }
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut h = Vec::with_capacity(n);
    let mut j = Vec::with_capacity(n);
    for k in 0..n {
        let (hz, jz, d) = (item_post.h[k], item_post.j[k], dr.diag[k]);
        let hk = belief_u.h[k] - d * (hz / jz);
        let jk = (belief_u.j[k] - d * d / jz).max(eps);
        if !hk.is_finite() || !jk.is_finite() || !(hk / jk).is_finite() {
            return Err(Error::Numerical(format!(
                "user update produced a non-finite value at dimension {k}"
            )));
        }
        h.push(hk);
        j.push(jk);
    }
    Ok(GaussianBelief { h, j })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fact(side: ItemSide) -> CritiqueFact {
        CritiqueFact {
            relation: 1,
            anchor: 1,
            item_side: side,
            source_item: None,
        }
    }

    /// d = 1: entity 0 user, entity 1 anchor, entity 2 item.
    fn scalar_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::zeros(1, 3, 2);
        t.head_mut(0)[0] = 2.0;
        t.tail_mut(0)[0] = 3.0;
        t.fwd_mut(0)[0] = 1.0;
        t.inv_mut(0)[0] = 1.0;
        t.tail_mut(2)[0] = 5.0;
        t.head_mut(2)[0] = 7.0;
        t.fwd_mut(1)[0] = 1.0;
        t.inv_mut(1)[0] = 1.0;
        t.head_mut(1)[0] = 2.0;
        t.tail_mut(1)[0] = 3.0;
        t
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn bilinear_rewrite_by_hand() {
        let t = scalar_table();
        let zu = user_space_layout(&t, 0);
        let zm = item_space_layout(&t, 2);
        let d = relation_diagonal(&t, 0, CouplingSign::Literal);
        let lhs: f64 = (0..2).map(|k| zu[k] * d.diag()[k] * zm[k]).sum();
        assert_eq!(lhs, 15.5);
        assert_eq!(t.score(0, 0, 2).unwrap(), 15.5);
    }

    #[test]
    fn relation_diagonal_signs() {
        let mut t = EmbeddingTable::zeros(1, 1, 1);
        t.fwd_mut(0)[0] = 2.0;
        t.inv_mut(0)[0] = 4.0;
        assert_eq!(relation_diagonal(&t, 0, CouplingSign::Literal).diag(), &[1.0, 2.0]);
        assert_eq!(relation_diagonal(&t, 0, CouplingSign::Compat).diag(), &[-1.0, -2.0]);
    }

    #[test]
    fn init_belief_information_identity() {
        let mut t = EmbeddingTable::zeros(1, 1, 1);
        t.head_mut(0)[0] = 1.0;
        t.tail_mut(0)[0] = 2.0;
        let b = init_user_belief(&t, 0, 1.0).unwrap();
        assert_eq!((b.h(), b.j()), (&[1.0, 2.0][..], &[1.0, 1.0][..]));
        let b4 = init_user_belief(&t, 0, 4.0).unwrap();
        assert_eq!(b4.h(), &[4.0, 8.0]);
        assert_eq!(b4.mean(), vec![1.0, 2.0]);
        assert_eq!(b4.mean(), user_space_layout(&t, 0));
        assert!(matches!(init_user_belief(&t, 0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn evidence_by_hand() {
        let t = scalar_table();
        // item-as-head: g = ½[v_inv·h_a ; v_fwd·t_a] = ½[2 ; 3]
        let f = fact(ItemSide::Head);
        let g = critique_direction(&t, &f);
        assert_eq!(g, vec![1.0, 1.5]);
        let rho = (1.0f64 + 2.25).sqrt();
        let alpha = 3.0;
        let e = evidence_from_critique(&t, &f, alpha, rho).unwrap();
        let mean = e.mean();
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] - 1.5).abs() < 1e-12);
        assert!((e.h()[0] - 3.0).abs() < 1e-12 && (e.h()[1] - 4.5).abs() < 1e-12);
        assert_eq!(e.j(), &[3.0, 3.0]);
        // item-as-tail: g = ½[v_fwd·h_a ; v_inv·t_a]
        assert_eq!(critique_direction(&t, &fact(ItemSide::Tail)), vec![1.0, 1.5]);
    }

    #[test]
    fn direction_is_the_linear_coefficient_of_the_fact_score() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let t = EmbeddingTable::random_uniform(4, 5, 3, 1.0, &mut rng);
        for side in [ItemSide::Head, ItemSide::Tail] {
            let f = CritiqueFact {
                relation: 2,
                anchor: 3,
                item_side: side,
                source_item: None,
            };
            let g = critique_direction(&t, &f);
            for item in [0, 1, 4] {
                let score = match side {
                    ItemSide::Head => t.score(item, 2, 3).unwrap(),
                    ItemSide::Tail => t.score(3, 2, item).unwrap(),
                };
                assert!((dot(&g, &item_space_layout(&t, item)) - score).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_evidence_is_an_error() {
        let t = EmbeddingTable::zeros(2, 3, 2);
        assert!(matches!(
            evidence_from_critique(&t, &fact(ItemSide::Head), 1.0, 1.0),
            Err(Error::ZeroEvidence)
        ));
        assert!(evidence_from_critique(&scalar_table(), &fact(ItemSide::Head), 0.0, 1.0).is_err());
    }

    #[test]
    fn item_prior_centroid() {
        let mut t = EmbeddingTable::zeros(1, 3, 1);
        t.tail_mut(1)[0] = 2.0;
        t.head_mut(1)[0] = 2.0;
        let p = item_prior(&t, &[0, 1], 2.0).unwrap();
        assert_eq!(p.mean(), vec![1.0, 1.0]);
        assert_eq!(item_prior(&t, &[1], 2.0).unwrap().mean(), item_space_layout(&t, 1));
        assert!(item_prior(&t, &[], 1.0).is_err());
    }

    #[test]
    fn item_prior_is_permutation_invariant_bitwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = EmbeddingTable::random_uniform(6, 12, 1, 1.0, &mut rng);
        let a = item_prior(&t, &[3, 9, 1, 11, 4], 0.7).unwrap();
        let b = item_prior(&t, &[11, 4, 9, 3, 1], 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn item_posterior_adds() {
        let m = GaussianBelief::new(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap();
        let d = GaussianBelief::new(vec![0.5, -0.5], vec![1.0, 1.0]).unwrap();
        let p = item_posterior(&m, &d).unwrap();
        assert_eq!(p.h(), &[1.5, 0.5]);
        assert_eq!(p.j(), &[3.0, 3.0]);
        assert_eq!(item_posterior(&d, &m).unwrap(), p);
        let bad = GaussianBelief::new(vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(item_posterior(&m, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn marginal_update_scalar_cases() {
        let u = GaussianBelief::new(vec![2.0], vec![4.0]).unwrap();
        let z = GaussianBelief::new(vec![1.0], vec![2.0]).unwrap();
        let out = marginal_user_update(&u, &z, &RelationDiagonal::from_vec(vec![1.0]), 1e-6).unwrap();
        assert_eq!((out.h()[0], out.j()[0]), (1.5, 3.5));

        let same = marginal_user_update(&u, &z, &RelationDiagonal::from_vec(vec![0.0]), 1e-6).unwrap();
        assert_eq!(same, u);

        let u1 = GaussianBelief::new(vec![2.0], vec![1.0]).unwrap();
        let z1 = GaussianBelief::new(vec![1.0], vec![1.0]).unwrap();
        let clamped = marginal_user_update(&u1, &z1, &RelationDiagonal::from_vec(vec![2.0]), 1e-6).unwrap();
        assert_eq!(clamped.j()[0], 1e-6);
        assert_eq!(clamped.h()[0], 0.0);
    }

    #[test]
    fn posterior_mean_cases() {
        let b = GaussianBelief::new(vec![3.0], vec![3.0]).unwrap();
        assert_eq!(posterior_mean(&b), vec![1.0]);
        let z = GaussianBelief::new(vec![0.0, 0.0], vec![2.0, 5.0]).unwrap();
        assert_eq!(posterior_mean(&z), vec![0.0, 0.0]);
        let t = scalar_table();
        assert_eq!(
            init_user_belief(&t, 0, 0.3).unwrap().mean(),
            init_user_belief(&t, 0, 7.0).unwrap().mean()
        );
    }

    #[test]
    fn belief_validation() {
        assert!(GaussianBelief::new(vec![1.0], vec![0.0]).is_err());
        assert!(GaussianBelief::new(vec![1.0], vec![-1.0]).is_err());
        assert!(GaussianBelief::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(GaussianBelief::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let b = GaussianBelief::new(vec![0.1, -2.0 / 3.0], vec![1e-6, 3.25]).unwrap();
        let text = b.to_snapshot();
        assert!(text.starts_with("h "));
        assert!(text.contains("\nJ "));
        let back = GaussianBelief::from_snapshot(&text).unwrap();
        for (a, b) in back.h().iter().zip(b.h()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert!(GaussianBelief::from_snapshot("h 1\n").is_err());
    }
}
