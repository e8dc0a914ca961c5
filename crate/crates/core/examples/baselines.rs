//! Cross-validated comparison of the two-stage model with the attention-MIL and
//! single-stream transformer baselines, all trained by the same recipe.
//!
//! `cargo run --release --example baselines -- [planted|xor] [domain_dropout] [model_dim]`

use std::time::Instant;

use unicorn::data::{generate_synthetic, make_splits, SyntheticSpec};
use unicorn::eval::run_cv_with;
use unicorn::model::{ModelConfig, ModelKind};
use unicorn::train::TrainConfig;

fn main() -> unicorn::Result<()> {
    let mut args = std::env::args().skip(1);
    // Domain dropout would change xor labels, so it is off by default there.
    let (spec, default_dropout) = match args.next().as_deref() {
        None | Some("xor") => (SyntheticSpec::xor(), 0.0),
        Some("planted") => (SyntheticSpec::default(), 0.7),
        Some(other) => panic!("unknown task {other}"),
    };
    let domain_dropout_p = args.next().map_or(default_dropout, |a| a.parse().expect("domain_dropout"));
    let model_dim = args.next().map_or(32, |a| a.parse().expect("model_dim"));

    let data = generate_synthetic(&spec)?;
    let plans = make_splits(&data.records, 0)?;
    let model_cfg = ModelConfig {
        n_classes: spec.n_classes,
        feat_dim: spec.feat_dim,
        model_dim,
        blocks_per_expert: 1,
        blocks_aggregator: 1,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        lr: 5e-4,
        accum_steps: 4,
        domain_dropout_p,
        ..TrainConfig::default()
    };
    for kind in [ModelKind::Unicorn, ModelKind::AttentionMil, ModelKind::SingleStream] {
        let start = Instant::now();
        let report = run_cv_with(kind, &data.records, &plans, &model_cfg, &train_cfg, false)?;
        let s = &report.summary;
        println!(
            "{:<14} accuracy {:.3}±{:.3}  macro-F1 {:.3}±{:.3}  ({:.0}s)",
            s.model,
            s.mean_accuracy,
            s.sd_accuracy,
            s.mean_macro_f1,
            s.sd_macro_f1,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
