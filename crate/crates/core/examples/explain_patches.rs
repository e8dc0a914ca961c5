//! Patch-level explanations: trains one fold, explains an advanced-class test
//! sample, checks how many top-ranked vK patches are planted signal patches,
//! then averages three overlapping sub-bags into one slide map and writes it.
//!
//! `cargo run --release --example explain_patches -- [out_dir]`

use unicorn::data::sample::class_name;
use unicorn::data::{generate_synthetic, make_splits, Part, SyntheticSpec};
use unicorn::explain::{explain_overlap_set, explain_sample, write_score_map, OverlapBagSet, RolloutMode};
use unicorn::model::ModelConfig;
use unicorn::train::{train, TrainConfig};

const VK: usize = 2;

fn main() -> unicorn::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("unicorn-explain"), Into::into);
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
    let params = train(&data.records, &plans[0], &model_cfg, &train_cfg)?.best;
    let test = plans[0].select(&data.records, Part::Test)?;
    let sample = *test.iter().find(|r| r.label == 3).expect("an LFA test sample");

    let map = explain_sample(&params, sample, sample.present(), RolloutMode::TwoStage)?;
    println!("{}: true {}, predicted {}", sample.sample_id, class_name(sample.label), class_name(map.predicted));
    let planted = &data.signal_patches[&(sample.sample_id.clone(), VK)];
    let mut vk: Vec<_> = map.entries.iter().filter(|e| e.modality == VK).collect();
    vk.sort_by(|a, b| b.class_attention.total_cmp(&a.class_attention));
    let hits = vk[..planted.len()].iter().filter(|e| planted.contains(&e.patch)).count();
    println!("top {} vK patches by class attention: {hits} planted", planted.len());

    // Three windows over the vK bag, laid out as a strip, overlapping by two thirds.
    let bag = &sample.bags[&VK];
    let n = bag.n_patches();
    let w = n - 2;
    let (mut bags, mut coords) = (Vec::new(), Vec::new());
    for offset in 0..3 {
        let rows: Vec<usize> = (offset..offset + w).collect();
        let mut sub = bag.select(&rows)?;
        sub.slide_id = format!("{}_shift{offset}", sample.sample_id);
        bags.push(sub);
        coords.push(rows.iter().map(|j| (*j as i64, 0)).collect());
    }
    let set = OverlapBagSet::new(sample.sample_id.clone(), bags, coords, None)?;
    let slide = explain_overlap_set(&params, &set, RolloutMode::TwoStage)?;
    for p in write_score_map(&out, &slide)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
