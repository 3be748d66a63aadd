//! SimplE embeddings: parameters, training and ranking.

mod rank;
mod table;
mod train;

pub use rank::{hit_rate, hit_rates, rank_items, rank_items_from_mean, sort_ranking, Popularity, Scored};
pub use table::{triple_product, EmbeddingTable};
pub use train::{
    batch_gradient, batch_loss, negative_sample, train, train_with_callback, EpochStats, Labeled, Likelihood,
    NegativeSampler, TrainConfig, TrainOutcome,
};
