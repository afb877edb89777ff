//! Few-shot adaptation to a new platform: take a trained model, fine-tune
//! on 10 background + 10 seagrass images for 10 epochs with the full
//! augmentation recipe (color channels, contrast, blur, brightness, hue,
//! saturation, flips), and compare held-out accuracy before and after.
//!
//!     cargo run --example few_shot_finetune

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seagrid::augment::AugConfig;
use seagrid::dataset::{tile_image, GridSpec};
use seagrid::losses::ClassWeights;
use seagrid::model::{BackboneConfig, InitScheme, Model, ModelConfig};
use seagrid::seafeats::{train_seafeats, SeafeatsConfig};
use seagrid::synthetic::SyntheticSpec;

fn accuracy(
    model: &Model,
    images: &[seagrid::dataset::LabeledImage],
    truth: &std::collections::BTreeMap<String, Vec<usize>>,
    grid: GridSpec,
) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for image in images {
        let t = &truth[&image.source_id];
        for (patch, &label) in tile_image(image, grid).unwrap().iter().zip(t) {
            let logits = model.logits_eval(patch).unwrap();
            if seagrid::dataset::argmax_lowest(&logits) == label {
                hit += 1;
            }
            total += 1;
        }
    }
    hit as f64 / total as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::new(3, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    // "Home" platform data the model was originally trained on.
    let home = SyntheticSpec::new(2, 16, grid);
    let (home_images, _) = home.make_dataset(&mut rng);
    let home_patches: Vec<_> = home_images
        .iter()
        .flat_map(|i| tile_image(i, grid).unwrap())
        .collect();

    // The new platform shifts colors hard (different camera, depth and
    // lighting): background turns greenish water, seagrass turns olive.
    let mut away = SyntheticSpec::new(2, 10, grid);
    away.class_colors[0] = [0.20, 0.45, 0.42];
    away.class_colors[1] = [0.50, 0.55, 0.22];
    let (away_images, away_truth) = away.make_dataset(&mut rng);
    let few_shot: Vec<_> = away_images
        .iter()
        .filter(|i| {
            // 10 background + 10 seagrass images for fine-tuning.
            let idx: usize = i.source_id[4..7].parse().unwrap();
            idx < 5
        })
        .cloned()
        .collect();
    let held_out: Vec<_> = away_images
        .iter()
        .filter(|i| !few_shot.iter().any(|f| f.source_id == i.source_id))
        .cloned()
        .collect();

    let mut model = Model::init(
        &ModelConfig {
            backbone: BackboneConfig {
                input_side: 8,
                hidden: vec![64, 32],
                feature_dim: 16,
            },
            head_hidden: 32,
            dropout_p: 0.15,
            num_classes: 2,
        },
        42,
        InitScheme::FanInUniform,
    )?;
    let mut cfg = SeafeatsConfig {
        epochs: 20,
        batch_images: 3,
        lr: 1e-3,
        weights: ClassWeights::uniform(2),
        template_cap: None,
        aug: None,
    };
    train_seafeats(&mut model, &home_patches, &cfg, &mut rng)?;
    println!(
        "before fine-tuning: {:.1}% held-out patch accuracy on the new platform",
        100.0 * accuracy(&model, &held_out, &away_truth, grid)
    );

    let few_patches: Vec<_> = few_shot
        .iter()
        .flat_map(|i| tile_image(i, grid).unwrap())
        .collect();
    cfg.epochs = 10;
    cfg.aug = Some(AugConfig::finetune(None));
    train_seafeats(&mut model, &few_patches, &cfg, &mut rng)?;
    println!(
        "after 10 epochs on {} few-shot images: {:.1}% held-out patch accuracy",
        few_shot.len(),
        100.0 * accuracy(&model, &held_out, &away_truth, grid)
    );
    Ok(())
}
