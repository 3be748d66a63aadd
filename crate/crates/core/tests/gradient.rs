//! Finite-difference check of the analytic training gradient against a
//! loss written out independently here.

use bcie_core::embed::{batch_gradient, EmbeddingTable, Labeled, Likelihood};
use bcie_core::Triple;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phi(t: &EmbeddingTable, tr: Triple) -> f64 {
    let d = t.dim();
    let mut s = 0.0;
    for k in 0..d {
        s += t.head(tr.head)[k] * t.fwd(tr.relation)[k] * t.tail(tr.tail)[k];
        s += t.head(tr.tail)[k] * t.inv(tr.relation)[k] * t.tail(tr.head)[k];
    }
    s / 2.0
}

fn reference_loss(t: &EmbeddingTable, batch: &[Labeled], gaussian: bool, lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let p = phi(t, s.triple);
        total += if gaussian {
            (s.label - p).powi(2) / 2.0
        } else {
            (1.0 + (-s.label * p).exp()).ln()
        };
    }
    let norm: f64 = t.matrices().iter().flat_map(|m| m.iter()).map(|x| x * x).sum();
    total + lambda * norm
}

fn check(likelihood: Likelihood, seed: u64) {
    let gaussian = likelihood == Likelihood::Gaussian;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.gen_range(1..=4);
    let entities = rng.gen_range(2..=6);
    let relations = 2;
    let table = EmbeddingTable::random_uniform(dim, entities, relations, 1.0, &mut rng);
    let batch: Vec<Labeled> = (0..5)
        .map(|_| Labeled {
            triple: Triple::new(
                rng.gen_range(0..entities as u32),
                rng.gen_range(0..relations as u32),
                rng.gen_range(0..entities as u32),
            ),
            label: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    let lambda = 0.1;
    let grad = batch_gradient(&table, &batch, likelihood, lambda);
    let h = 1e-6;
    for m in 0..4 {
        for idx in 0..table.matrices()[m].len() {
            let mut plus = table.clone();
            plus.matrices_mut()[m][idx] += h;
            let mut minus = table.clone();
            minus.matrices_mut()[m][idx] -= h;
            let fd = (reference_loss(&plus, &batch, gaussian, lambda) - reference_loss(&minus, &batch, gaussian, lambda))
                / (2.0 * h);
            let an = grad.matrices()[m][idx];
            let err = (fd - an).abs();
            assert!(
                err <= 1e-4 * fd.abs().max(an.abs()) + 1e-7,
                "{likelihood:?} seed {seed} matrix {m} index {idx}: analytic {an} vs numeric {fd}"
            );
        }
    }
}

#[test]
fn gaussian_gradient_matches_finite_differences() {
    for seed in 0..20 {
        check(Likelihood::Gaussian, seed);
    }
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    for seed in 0..20 {
        check(Likelihood::Logistic, seed);
    }
}

#[test]
fn batch_loss_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let table = EmbeddingTable::random_uniform(3, 5, 2, 1.0, &mut rng);
    let batch = [
        Labeled { triple: Triple::new(0, 1, 2), label: 1.0 },
        Labeled { triple: Triple::new(3, 0, 4), label: -1.0 },
    ];
    for (lk, g) in [(Likelihood::Gaussian, true), (Likelihood::Logistic, false)] {
        let a = bcie_core::embed::batch_loss(&table, &batch, lk, 0.01);
        let b = reference_loss(&table, &batch, g, 0.01);
        assert!((a - b).abs() < 1e-12, "{lk:?}: {a} vs {b}");
    }
}
