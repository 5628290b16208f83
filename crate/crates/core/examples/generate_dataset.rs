//! Generates a small synthetic multi-annotator dataset and prints how noisy
//! the annotations are compared with the hidden clean labels.
//!
//! `cargo run --example generate_dataset`

use ordinal_noise::data::{generate_benchmark, write_csv, GeneratorConfig};

fn main() -> ordinal_noise::Result<()> {
    let cfg = GeneratorConfig {
        n_samples: 500,
        seed: 42,
        ..GeneratorConfig::default()
    };
    let (train, test) = generate_benchmark(&cfg, 100)?;
    println!("{} training images, {} annotations", train.len(), train.total_annotations());
    println!("single-annotation agreement with clean label: {:.3}", train.annotation_agreement().unwrap());

    let mut per_class = vec![0usize; cfg.classes];
    for s in &train.samples {
        per_class[s.clean.unwrap()] += 1;
    }
    println!("clean class counts (grades 1-5): {per_class:?}");

    let first = &train.samples[0];
    println!("image {}: annotations {:?}, clean {:?}", first.id, first.annotations, first.clean);

    let dir = std::env::temp_dir().join("ordinal-noise-example");
    write_csv(&train, &dir.join("train.csv"))?;
    write_csv(&test, &dir.join("test.csv"))?;
    println!("wrote CSVs to {}", dir.display());
    Ok(())
}
