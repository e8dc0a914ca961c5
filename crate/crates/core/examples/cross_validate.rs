//! Five-fold grouped cross-validation of the two-stage model on the synthetic task.
//!
//! `cargo run --release --example cross_validate -- [model_dim] [lr] [accum_steps] [blocks]`

use std::time::Instant;

use unicorn::data::{generate_synthetic, SyntheticSpec};
use unicorn::eval::run_cv;
use unicorn::model::ModelConfig;
use unicorn::train::TrainConfig;

fn main() -> unicorn::Result<()> {
    let mut args = std::env::args().skip(1);
    let model_dim = args.next().map_or(32, |a| a.parse().expect("model_dim"));
    let lr = args.next().map_or(5e-4, |a| a.parse().expect("lr"));
    let accum_steps = args.next().map_or(4, |a| a.parse().expect("accum_steps"));
    let blocks = args.next().map_or(1, |a| a.parse().expect("blocks"));

    let data = generate_synthetic(&SyntheticSpec::default())?;
    let model_cfg = ModelConfig {
        feat_dim: 64,
        model_dim,
        blocks_per_expert: blocks,
        blocks_aggregator: blocks,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        lr,
        accum_steps,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = run_cv(&data.records, &model_cfg, &train_cfg)?;
    print!("{}", report.render());
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
