//! Fusing two classifiers at inference: each member's logits are L2
//! normalized so the members weigh equally, averaged, and passed through
//! softmax. Scale differences between members are irrelevant by
//! construction.
//!
//!     cargo run --example ensemble_inference

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seagrid::dataset::GridSpec;
use seagrid::ensemble::{ensemble_predict, predict_mask, EnsembleConfig};
use seagrid::losses::ClassWeights;
use seagrid::model::{BackboneConfig, InitScheme, Model, ModelConfig};
use seagrid::seaclip::{builtin_prompt_groups, generate_pseudolabels, MockScorer, Scenario};
use seagrid::seafeats::{train_seafeats, SeafeatsConfig};
use seagrid::seaclip::{train_seaclip, SeaclipConfig};
use seagrid::synthetic::SyntheticSpec;

fn model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            input_side: 8,
            hidden: vec![64, 32],
            feature_dim: 16,
        },
        head_hidden: 32,
        dropout_p: 0.15,
        num_classes: 2,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Logit-space behavior first: one member five times the other's scale.
    let cfg = EnsembleConfig::default();
    let a = vec![2.0, -1.0];
    let b: Vec<f64> = a.iter().map(|x| 5.0 * x).collect();
    let fused = ensemble_predict(&a, &b, &cfg)?;
    let same = ensemble_predict(&a, &a, &cfg)?;
    println!("member scale is normalized away: {fused:?} == {same:?}");

    // Now two actually trained members fused over an image.
    let grid = GridSpec::new(3, 4)?;
    let spec = SyntheticSpec::new(2, 10, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (images, truth) = spec.make_dataset(&mut rng);
    let mut patches = Vec::new();
    for image in &images {
        patches.extend(seagrid::dataset::tile_image(image, grid)?);
    }

    let mut seafeats = Model::init(&model_config(), 1, InitScheme::FanInUniform)?;
    let sf_cfg = SeafeatsConfig {
        epochs: 15,
        batch_images: 3,
        lr: 1e-3,
        weights: ClassWeights::uniform(2),
        template_cap: None,
        aug: None,
    };
    train_seafeats(&mut seafeats, &patches, &sf_cfg, &mut rng)?;

    let mut seaclip = Model::init(&model_config(), 2, InitScheme::FanInUniform)?;
    let groups = builtin_prompt_groups(Scenario::DeepSeagrass);
    let labels = generate_pseudolabels(&patches, &MockScorer::new(0), &groups, None)?;
    let sc_cfg = SeaclipConfig {
        epochs: 15,
        batch_patches: 16,
        lr: 1e-3,
        weights: ClassWeights::uniform(2),
    };
    train_seaclip(&mut seaclip, &patches, &labels, &sc_cfg, &mut rng)?;

    let query = &images[images.len() - 1];
    let mask = predict_mask(query, grid, &seafeats, Some(&seaclip), &cfg)?;
    println!("\nensemble mask for {} (truth right):", query.source_id);
    let t = &truth[&query.source_id];
    for (r, row) in mask.labels.iter().enumerate() {
        let pred: String = row.iter().map(|&l| if l == 0 { '.' } else { '#' }).collect();
        let tru: String = t[r * grid.cols..(r + 1) * grid.cols]
            .iter()
            .map(|&l| if l == 0 { '.' } else { '#' })
            .collect();
        println!("  {pred}    {tru}");
    }
    println!("(. = background, # = seagrass)");
    Ok(())
}
