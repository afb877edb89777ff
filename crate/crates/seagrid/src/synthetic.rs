//! Synthetic color-cluster datasets for the examples, the test suites and
//! CLI walkthroughs: no real imagery is bundled, so demonstrations and
//! end-to-end checks fabricate small labeled image trees whose per-patch
//! ground truth is known exactly.
//!
//! Class 0 renders as smooth sand; other classes are green-dominant striped
//! textures that the mock vision-language scorer recognizes as seagrass.
//! Images of a non-background class can carry a fraction of planted
//! background patches, mimicking sand and water regions inside real
//! seagrass photos.

use crate::dataset::{GridSpec, LabeledImage, Pixels};
use crate::error::Result;
use crate::mask::{save_mask_json, ClassMask, MaskFile};
use rand::Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Base color per class; index 0 is the background.
    pub class_colors: Vec<[f32; 3]>,
    pub images_per_class: usize,
    pub grid: GridSpec,
    pub patch_size: (usize, usize),
    /// Fraction of patches inside non-background images drawn from the
    /// background distribution.
    pub planted_bg_fraction: f64,
    /// Uniform per-pixel color noise amplitude.
    pub noise: f32,
}

/// Sand background, three green-dominant seagrass morphotypes, and a
/// gray-blue outlier color for a fifth class.
pub fn default_colors(classes: usize) -> Vec<[f32; 3]> {
    let palette: [[f32; 3]; 5] = [
        [0.76, 0.70, 0.50],
        [0.10, 0.65, 0.20],
        [0.45, 0.80, 0.25],
        [0.05, 0.55, 0.45],
        [0.55, 0.55, 0.65],
    ];
    (0..classes).map(|c| palette[c % palette.len()]).collect()
}

impl SyntheticSpec {
    pub fn new(classes: usize, images_per_class: usize, grid: GridSpec) -> Self {
        SyntheticSpec {
            class_colors: default_colors(classes),
            images_per_class,
            grid,
            patch_size: (10, 12),
            planted_bg_fraction: 0.25,
            noise: 0.05,
        }
    }

    pub fn classes(&self) -> usize {
        self.class_colors.len()
    }

    fn render_cell(&self, pixels: &mut Pixels, cell_r: usize, cell_c: usize, label: usize, rng: &mut impl Rng) {
        let (ph, pw) = self.patch_size;
        let base = self.class_colors[label];
        for r in 0..ph {
            for c in 0..pw {
                // Background is smooth; other classes carry vertical
                // stripes with a class-specific period.
                let stripe = if label == 0 {
                    1.0
                } else if (c / (label + 1)) % 2 == 0 {
                    1.12
                } else {
                    0.88
                };
                let mut rgb = [0.0f32; 3];
                for ch in 0..3 {
                    let n: f32 = rng.random_range(-self.noise..=self.noise);
                    rgb[ch] = (base[ch] * stripe + n).clamp(0.0, 1.0);
                }
                pixels.set(cell_r * ph + r, cell_c * pw + c, rgb);
            }
        }
    }

    /// One image of the given class with per-patch truth labels in
    /// row-major order. Non-background images plant background patches at
    /// the configured fraction (at least one when the fraction is positive).
    pub fn make_image(&self, class: usize, index: usize, rng: &mut impl Rng) -> (LabeledImage, Vec<usize>) {
        let (ph, pw) = self.patch_size;
        let mut pixels = Pixels::new(self.grid.rows * ph, self.grid.cols * pw);
        let cells = self.grid.cells();
        let mut truth = vec![class; cells];
        if class != 0 && self.planted_bg_fraction > 0.0 {
            let planted = ((cells as f64 * self.planted_bg_fraction).round() as usize)
                .clamp(1, cells - 1);
            // Deterministic spread: every k-th cell, offset by the image
            // index so planted positions vary across images.
            let stride = cells / planted;
            for i in 0..planted {
                truth[(index + i * stride) % cells] = 0;
            }
        }
        for (cell, &label) in truth.iter().enumerate() {
            self.render_cell(&mut pixels, cell / self.grid.cols, cell % self.grid.cols, label, rng);
        }
        let image = LabeledImage {
            pixels,
            label: class,
            source_id: format!("c{class}_i{index:03}"),
        };
        (image, truth)
    }

    /// A full dataset: `images_per_class` images per class, plus the
    /// per-patch truth keyed by source id.
    pub fn make_dataset(&self, rng: &mut impl Rng) -> (Vec<LabeledImage>, BTreeMap<String, Vec<usize>>) {
        let mut images = Vec::new();
        let mut truth = BTreeMap::new();
        for class in 0..self.classes() {
            for index in 0..self.images_per_class {
                let (image, labels) = self.make_image(class, index, rng);
                truth.insert(image.source_id.clone(), labels);
                images.push(image);
            }
        }
        (images, truth)
    }
}

fn pixels_to_png(pixels: &Pixels, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(pixels.width() as u32, pixels.height() as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let rgb = pixels.get(y as usize, x as usize);
        px.0 = [
            (rgb[0] * 255.0).round() as u8,
            (rgb[1] * 255.0).round() as u8,
            (rgb[2] * 255.0).round() as u8,
        ];
    }
    img.save(path)
        .map_err(|e| crate::error::Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Write a dataset as an image tree `root/<ClassName>/imgNNN.png` with a
/// `classes.txt` manifest, plus per-image ground-truth masks under
/// `truth_dir` named by the ids the dataset loader will assign.
pub fn write_dataset_tree(
    root: &Path,
    truth_dir: &Path,
    spec: &SyntheticSpec,
    class_names: &[String],
    rng: &mut impl Rng,
) -> Result<()> {
    assert_eq!(class_names.len(), spec.classes());
    std::fs::create_dir_all(root).map_err(|e| crate::error::Error::io(root, e))?;
    std::fs::create_dir_all(truth_dir).map_err(|e| crate::error::Error::io(truth_dir, e))?;
    let manifest = root.join("classes.txt");
    std::fs::write(&manifest, class_names.join("\n"))
        .map_err(|e| crate::error::Error::io(&manifest, e))?;
    for (class, name) in class_names.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| crate::error::Error::io(&dir, e))?;
        for index in 0..spec.images_per_class {
            let (image, truth) = spec.make_image(class, index, rng);
            let file = dir.join(format!("img{index:03}.png"));
            pixels_to_png(&image.pixels, &file)?;
            // Mask ids must match what load_dataset derives from the tree.
            let source_id = format!("{name}__img{index:03}");
            let labels: Vec<Vec<usize>> = truth
                .chunks(spec.grid.cols)
                .map(|row| row.to_vec())
                .collect();
            let mask = ClassMask {
                labels,
                probs: vec![],
            };
            save_mask_json(
                &truth_dir.join(format!("{source_id}.json")),
                &MaskFile::new(source_id.clone(), &mask),
            )?;
        }
    }
    Ok(())
}
