//! Patch-grid geometry: tile an image into uniform patches and reassemble
//! per-patch probabilities into a coarse mask.
//!
//!     cargo run --example tile_and_reassemble

use seagrid::dataset::{reassemble_mask, tile_image, GridSpec, LabeledImage, Pixels};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // The published survey geometry: 2600x4624 imagery on a 5x8 grid.
    let image = LabeledImage {
        pixels: Pixels::new(2600, 4624),
        label: 1,
        source_id: "survey_frame".into(),
    };
    let grid = GridSpec::new(5, 8)?;
    let patches = tile_image(&image, grid)?;
    println!(
        "{} -> {} patches of {}x{} pixels",
        image.source_id,
        patches.len(),
        patches[0].pixels.height(),
        patches[0].pixels.width()
    );

    // A toy classifier: left half of the grid is background, right half
    // seagrass, with confidence growing along the row.
    let probs: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| {
            let lean = p.col as f64 / (grid.cols - 1) as f64;
            vec![1.0 - lean * 0.8 - 0.1, lean * 0.8 + 0.1]
        })
        .collect();
    let mask = reassemble_mask(&probs, grid)?;
    println!("reassembled mask ({} rows x {} cols):", mask.rows(), mask.cols());
    for row in &mask.labels {
        let line: String = row
            .iter()
            .map(|&l| if l == 0 { '.' } else { '#' })
            .collect();
        println!("  {line}");
    }
    println!("(. = background, # = seagrass)");
    Ok(())
}
