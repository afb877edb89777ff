//! The vision-language engine end to end: zero-shot group verdicts from
//! the (mock) scorer become patch pseudo-labels - background stays class 0,
//! seagrass verdicts inherit the image-level species - and a classifier is
//! trained on them.
//!
//!     cargo run --example train_seaclip

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seagrid::dataset::{tile_image, GridSpec};
use seagrid::losses::ClassWeights;
use seagrid::metrics::{ConfusionMatrix, MetricReport};
use seagrid::model::{BackboneConfig, InitScheme, Model, ModelConfig};
use seagrid::seaclip::{
    builtin_prompt_groups, generate_pseudolabels, train_seaclip, MockScorer, Scenario,
    SeaclipConfig,
};
use seagrid::synthetic::SyntheticSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::new(3, 4)?;
    let names = ["Background", "Ferny", "Rounded", "Strappy"];
    let spec = SyntheticSpec::new(4, 12, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (train_images, train_truth) = spec.make_dataset(&mut rng);
    let (test_images, test_truth) = spec.make_dataset(&mut rng);

    let mut patches = Vec::new();
    let mut truth = Vec::new();
    for image in &train_images {
        let t = &train_truth[&image.source_id];
        patches.extend(tile_image(image, grid)?);
        truth.extend_from_slice(t);
    }

    let groups = builtin_prompt_groups(Scenario::DeepSeagrass);
    let scorer = MockScorer::new(0);
    let labels = generate_pseudolabels(&patches, &scorer, &groups, None)?;
    let agree = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
    println!(
        "zero-shot pseudo-labels agree with planted truth on {}/{} patches ({:.1}%)",
        agree,
        labels.len(),
        100.0 * agree as f64 / labels.len() as f64
    );

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
    let cfg = SeaclipConfig {
        epochs: 25,
        batch_patches: 32,
        lr: 1e-3,
        weights: ClassWeights::seagrass_default(),
    };
    let outcome = train_seaclip(&mut model, &patches, &labels, &cfg, &mut rng)?;
    println!(
        "trained {} epochs on fixed pseudo-labels, loss {:.4} -> {:.4}",
        outcome.curve.len(),
        outcome.curve.first().unwrap(),
        outcome.curve.last().unwrap()
    );

    let mut cm = ConfusionMatrix::new(4);
    for image in &test_images {
        let t = &test_truth[&image.source_id];
        for (patch, &label) in tile_image(image, grid)?.iter().zip(t) {
            let logits = model.logits_eval(patch)?;
            cm.accumulate(label, seagrid::dataset::argmax_lowest(&logits))?;
        }
    }
    let report = MetricReport::from_confusion(&cm, &names.map(String::from))?;
    println!("\nheld-out patch-level results:\n{}", report.to_text_table());
    Ok(())
}
