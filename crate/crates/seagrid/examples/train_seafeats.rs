//! The feature-similarity engine end to end: build per-class template
//! vectors from image-level labels, pseudo-label every patch by cosine
//! similarity against the background template, train, refresh templates
//! each epoch, and evaluate on held-out data with known patch truth.
//!
//!     cargo run --example train_seafeats

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seagrid::dataset::{tile_image, GridSpec, Patch};
use seagrid::losses::ClassWeights;
use seagrid::metrics::{ConfusionMatrix, MetricReport};
use seagrid::model::{BackboneConfig, InitScheme, Model, ModelConfig};
use seagrid::seafeats::{train_seafeats, SeafeatsConfig};
use seagrid::synthetic::SyntheticSpec;

fn tiled(images: &[seagrid::dataset::LabeledImage], grid: GridSpec) -> Vec<Patch> {
    images
        .iter()
        .flat_map(|img| tile_image(img, grid).expect("tiling"))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::new(3, 4)?;
    let names = ["Background", "Ferny", "Rounded", "Strappy"];
    let spec = SyntheticSpec::new(4, 16, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (train_images, _) = spec.make_dataset(&mut rng);
    let (test_images, test_truth) = spec.make_dataset(&mut rng);
    let train_patches = tiled(&train_images, grid);

    let mut model = Model::init(
        &ModelConfig {
            backbone: BackboneConfig {
                input_side: 8,
                hidden: vec![64, 32],
                feature_dim: 16,
            },
            head_hidden: 32,
            dropout_p: 0.15,
            num_classes: 4,
        },
        42,
        InitScheme::FanInUniform,
    )?;

    let cfg = SeafeatsConfig {
        epochs: 25,
        batch_images: 3,
        lr: 1e-3,
        weights: ClassWeights::seagrass_default(),
        template_cap: None,
        aug: None,
    };
    println!("training on image-level labels only ({} patches)...", train_patches.len());
    let outcome = train_seafeats(&mut model, &train_patches, &cfg, &mut rng)?;
    for s in outcome.stats.iter().step_by(5) {
        println!(
            "epoch {:>2}  loss {:.4}  pseudo-label flips {:>3}  bank drift {:.4}",
            s.epoch, s.mean_loss, s.flips, s.bank_drift
        );
    }

    // Held-out evaluation against the planted per-patch truth.
    let mut cm = ConfusionMatrix::new(4);
    for image in &test_images {
        let truth = &test_truth[&image.source_id];
        for (patch, &t) in tile_image(image, grid)?.iter().zip(truth) {
            let logits = model.logits_eval(patch)?;
            cm.accumulate(t, seagrid::dataset::argmax_lowest(&logits))?;
        }
    }
    let report = MetricReport::from_confusion(&cm, &names.map(String::from))?;
    println!("\nheld-out patch-level results:\n{}", report.to_text_table());
    Ok(())
}
