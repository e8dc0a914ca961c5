//! Exports the layer-normed CLS features of a trained model (full input plus
//! each single modality) as TSV for embedding tools.
//!
//! `cargo run --release --example export_features -- [out.tsv]`

use unicorn::data::{generate_synthetic, make_splits, SyntheticSpec};
use unicorn::eval::{export_features, render_features};
use unicorn::model::ModelConfig;
use unicorn::train::{train, TrainConfig};

fn main() -> unicorn::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("unicorn-features.tsv"), Into::into);
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
        epochs: 10,
        lr: 5e-4,
        accum_steps: 4,
        ..TrainConfig::default()
    };
    let model = train(&data.records, &plans[0], &model_cfg, &train_cfg)?.best;
    let rows = export_features(&model, &data.records, &[0, 1, 2, 3])?;
    std::fs::write(&out, render_features(&rows)).expect("write features");
    let agree = rows.iter().filter(|r| r.predicted == r.label).count();
    println!(
        "{} rows of width {} -> {} ({agree} rows predicted correctly)",
        rows.len(),
        rows[0].features.len(),
        out.display()
    );
    Ok(())
}
