//! Writes a checkpoint for each architecture, reads it back, and confirms the
//! restored model predicts bit-identically.
//!
//! `cargo run --release --example checkpoint`

use unicorn::data::{generate_synthetic, SyntheticSpec};
use unicorn::model::checkpoint::{read_checkpoint, write_checkpoint};
use unicorn::model::{infer, AnyModel, Classifier, ModelConfig, ModelKind};

fn main() -> unicorn::Result<()> {
    let spec = SyntheticSpec {
        n_individuals: 5,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    let cfg = ModelConfig {
        feat_dim: spec.feat_dim,
        model_dim: 32,
        ..ModelConfig::default()
    };
    let dir = std::env::temp_dir();
    for kind in [ModelKind::Unicorn, ModelKind::AttentionMil, ModelKind::SingleStream] {
        let model = AnyModel::init(kind, &cfg, 3)?;
        let path = dir.join(format!("unicorn-{}.unickpt", kind.as_str()));
        write_checkpoint(&path, &model)?;
        let back = read_checkpoint(&path)?;
        let same = data.records.iter().all(|r| {
            let a = infer(&model, r, r.present()).expect("infer");
            let b = infer(&back, r, r.present()).expect("infer");
            a.logits.iter().zip(&b.logits).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
        println!(
            "{:<18} {:>7} parameters, {bytes:>8} bytes, identical predictions: {same}",
            kind.as_str(),
            back.store().num_scalars()
        );
    }
    Ok(())
}
