//! Trains one fold, then scores the test part with every single modality, every
//! leave-one-out input, and reports CLS attention to each modality token per class.
//!
//! `cargo run --release --example ablation -- [fold]`

use unicorn::data::{generate_synthetic, make_splits, Part, SyntheticSpec};
use unicorn::eval::ablate;
use unicorn::model::{AnyModel, ModelConfig};
use unicorn::train::{train, TrainConfig};

fn main() -> unicorn::Result<()> {
    let fold: usize = std::env::args().nth(1).map_or(0, |a| a.parse().expect("fold"));
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let plans = make_splits(&data.records, 0)?;
    let model_cfg = ModelConfig {
        feat_dim: 64,
        model_dim: 32,
        blocks_per_expert: 1,
        blocks_aggregator: 1,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        lr: 5e-4,
        accum_steps: 4,
        ..TrainConfig::default()
    };
    let out = train(&data.records, &plans[fold], &model_cfg, &train_cfg)?;
    let test = plans[fold].select(&data.records, Part::Test)?;
    let report = ablate(&AnyModel::Unicorn(out.best), &test)?;
    print!("{}", report.render());
    Ok(())
}
