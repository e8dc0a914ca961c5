//! Trains the two-stage model on one fold of the synthetic task and reports test metrics.
//!
//! `cargo run --release --example train_fold -- [epochs] [model_dim] [lr] [accum_steps] [domain_dropout] [blocks] [fold]`

use std::time::Instant;

use unicorn::data::{generate_synthetic, make_splits, Part, SyntheticSpec};
use unicorn::model::ModelConfig;
use unicorn::train::{evaluate, render_history, train, TrainConfig};

fn main() -> unicorn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(30, |a| a.parse().expect("epochs"));
    let model_dim = args.next().map_or(32, |a| a.parse().expect("model_dim"));
    let lr = args.next().map_or(5e-4, |a| a.parse().expect("lr"));
    let accum_steps = args.next().map_or(4, |a| a.parse().expect("accum_steps"));
    let domain_dropout_p = args.next().map_or(0.7, |a| a.parse().expect("domain_dropout"));
    let blocks = args.next().map_or(1, |a| a.parse().expect("blocks"));
    let fold: usize = args.next().map_or(0, |a| a.parse().expect("fold"));

    let data = generate_synthetic(&SyntheticSpec::default())?;
    let plans = make_splits(&data.records, 0)?;
    let model_cfg = ModelConfig {
        feat_dim: 64,
        model_dim,
        blocks_per_expert: blocks,
        blocks_aggregator: blocks,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        lr,
        accum_steps,
        domain_dropout_p,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&data.records, &plans[fold], &model_cfg, &train_cfg)?;
    print!("{}", render_history(&out.history));
    let test = plans[fold].select(&data.records, Part::Test)?;
    let (metrics, _) = evaluate(&out.best, &test)?;
    println!("best epoch {:?}, {:.1}s", out.best_epoch, start.elapsed().as_secs_f64());
    print!("{}", metrics.render());
    Ok(())
}
