//! Generates the reference synthetic task, writes it as bag files plus a
//! manifest, and reads it back.
//!
//! `cargo run --release --example synth_dataset -- [out_dir]`

use std::collections::BTreeMap;

use unicorn::data::sample::{class_name, modality_name};
use unicorn::data::{generate_synthetic, load_dataset, make_splits, Part, SyntheticSpec};
use unicorn::data::synth::write_synthetic;

fn main() -> unicorn::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("unicorn-synth"), Into::into);
    let spec = SyntheticSpec::default();
    let ds = generate_synthetic(&spec)?;
    let manifest = write_synthetic(&ds, &out)?;
    let records = load_dataset(&manifest, Some(spec.feat_dim))?;
    assert_eq!(records, ds.records, "bag files reproduce the in-memory samples");
    println!("{} samples from {} individuals -> {}", records.len(), spec.n_individuals, manifest.display());

    let mut per_class = BTreeMap::new();
    for r in &records {
        *per_class.entry(r.label).or_insert(0) += 1;
    }
    for (c, n) in per_class {
        let carriers: Vec<String> = ds.informative_modalities(c).into_iter().map(modality_name).collect();
        println!("{:>4}: {n:3} samples, signal in {}", class_name(c), carriers.join("+"));
    }
    for plan in make_splits(&records, 0)? {
        println!(
            "fold {}: train {} / val {} / test {}",
            plan.fold_id,
            plan.part(Part::Train).len(),
            plan.part(Part::Val).len(),
            plan.part(Part::Test).len()
        );
    }
    Ok(())
}
