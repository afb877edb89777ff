//! Fabricate a synthetic labeled image tree plus ground-truth masks, ready
//! for the `seagrid` command-line pipeline.
//!
//!     cargo run --example make_synthetic_dataset -- /tmp/seagrid-demo [multi|binary|outlier]
//!
//! The tree lands in `<out>/data` (one directory per class, `classes.txt`
//! manifest) and per-image truth masks in `<out>/truth`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seagrid::dataset::GridSpec;
use seagrid::synthetic::{write_dataset_tree, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "/tmp/seagrid-demo".into()));
    let flavor = args.next().unwrap_or_else(|| "multi".into());

    let class_names: Vec<String> = match flavor.as_str() {
        "multi" => ["Background", "Ferny", "Rounded", "Strappy"],
        "binary" => ["Background", "Seagrass", "Seagrass2", "Seagrass3"],
        "outlier" => ["Background", "Seagrass", "Fish", "Unused"],
        other => return Err(format!("unknown flavor '{other}'").into()),
    }
    .iter()
    .take(if flavor == "outlier" { 3 } else { 4 })
    .map(|s| s.to_string())
    .collect();

    let mut spec = SyntheticSpec::new(class_names.len(), 12, GridSpec::new(3, 4)?);
    if flavor == "outlier" {
        // Class 2 becomes the gray-blue outlier color.
        spec.class_colors[2] = [0.55, 0.55, 0.65];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    write_dataset_tree(&out.join("data"), &out.join("truth"), &spec, &class_names, &mut rng)?;

    println!("classes: {}", class_names.join(", "));
    println!(
        "wrote {} images ({} patches each) under {}",
        class_names.len() * spec.images_per_class,
        spec.grid.cells(),
        out.join("data").display()
    );
    println!("ground-truth masks under {}", out.join("truth").display());
    Ok(())
}
