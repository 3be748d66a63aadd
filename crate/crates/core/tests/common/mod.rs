#![allow(dead_code)]

use std::sync::OnceLock;

use bcie_core::critique::Engine;
use bcie_core::embed::{train, TrainConfig};
use bcie_core::kg::{split_likes, DatasetSplit};
use bcie_core::synthetic::{generate_synthetic_kg, SyntheticDataset, SyntheticSpec};

pub struct Fixture {
    pub data: SyntheticDataset,
    pub split: DatasetSplit,
    pub engine: Engine,
}

/// The default planted graph with a model trained under default settings.
pub fn trained() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = generate_synthetic_kg(&SyntheticSpec::default(), 1).unwrap();
        let split = split_likes(&data.kg, 0.1, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&data.kg, &split, &cfg).unwrap();
        let engine = Engine::new(data.kg.clone(), out.table, &split).unwrap();
        Fixture { data, split, engine }
    })
}
