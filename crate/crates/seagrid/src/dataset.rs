//! Dataset ingestion and patch-grid geometry.
//!
//! Images carry a single image-level class label. Tiling splits an image
//! into a uniform grid of patches, each inheriting that label; the inverse
//! operation reassembles per-patch class probabilities into a coarse mask.

use crate::error::{Error, Result};
use crate::mask::ClassMask;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const BACKGROUND_CLASS: usize = 0;

/// Interleaved RGB pixel block with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pixels {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Pixels {
    pub fn new(height: usize, width: usize) -> Self {
        Pixels {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut px = Pixels::new(height, width);
        for r in 0..height {
            for c in 0..width {
                px.set(r, c, f(r, c));
            }
        }
        px
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Per-channel means as (r, g, b).
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0f64; 3];
        for chunk in self.data.chunks_exact(3) {
            sums[0] += chunk[0] as f64;
            sums[1] += chunk[1] as f64;
            sums[2] += chunk[2] as f64;
        }
        let n = (self.height * self.width) as f64;
        [sums[0] / n, sums[1] / n, sums[2] / n]
    }

    /// Bilinear resample to the given size (pixel-center convention).
    pub fn resize(&self, height: usize, width: usize) -> Pixels {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Pixels::from_fn(height, width, |r, c| {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let dy = (fy - y0 as f64) as f32;
            let dx = (fx - x0 as f64) as f32;
            let mut out = [0.0f32; 3];
            let (p00, p01) = (self.get(y0, x0), self.get(y0, x1));
            let (p10, p11) = (self.get(y1, x0), self.get(y1, x1));
            for ch in 0..3 {
                let top = p00[ch] * (1.0 - dx) + p01[ch] * dx;
                let bot = p10[ch] * (1.0 - dx) + p11[ch] * dx;
                out[ch] = top * (1.0 - dy) + bot * dy;
            }
            out
        })
    }
}

/// An image plus the single class label it was filed under.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub pixels: Pixels,
    pub label: usize,
    pub source_id: String,
}

/// Patch-grid geometry: `rows * cols` cells per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::data("grid must have at least one row and column"));
        }
        Ok(GridSpec { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// Parses `RxC`, e.g. `5x8` for 5 rows by 8 columns.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::data(format!("grid '{s}' is not of the form RxC")))?;
        let rows = r
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::data(format!("bad grid rows in '{s}'")))?;
        let cols = c
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::data(format!("bad grid cols in '{s}'")))?;
        GridSpec::new(rows, cols)
    }
}

/// One grid cell of a parent image, inheriting its image-level label.
#[derive(Debug, Clone)]
pub struct Patch {
    pub pixels: Pixels,
    pub row: usize,
    pub col: usize,
    pub parent_id: String,
    pub inherited_label: usize,
}

/// Split an image into `rows * cols` uniform patches in row-major order.
///
/// Patch size is `(H / rows, W / cols)` rounded down; when the image does
/// not divide evenly the covered region is the largest grid-divisible block
/// centered in the image (leftover border pixels are cropped away).
pub fn tile_image(image: &LabeledImage, grid: GridSpec) -> Result<Vec<Patch>> {
    let (h, w) = (image.pixels.height(), image.pixels.width());
    if h < grid.rows || w < grid.cols {
        return Err(Error::data(format!(
            "image {} is {h}x{w}, smaller than the {} grid",
            image.source_id, grid
        )));
    }
    let ph = h / grid.rows;
    let pw = w / grid.cols;
    let top = (h - ph * grid.rows) / 2;
    let left = (w - pw * grid.cols) / 2;
    let mut patches = Vec::with_capacity(grid.cells());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let pixels = Pixels::from_fn(ph, pw, |pr, pc| {
                image.pixels.get(top + r * ph + pr, left + c * pw + pc)
            });
            patches.push(Patch {
                pixels,
                row: r,
                col: c,
                parent_id: image.source_id.clone(),
                inherited_label: image.label,
            });
        }
    }
    Ok(patches)
}

/// Inverse of tiling: place row-major per-patch probability vectors into a
/// mask. Each cell's label is the argmax of its probabilities, ties going
/// to the lowest class id.
pub fn reassemble_mask(patch_probs: &[Vec<f64>], grid: GridSpec) -> Result<ClassMask> {
    if patch_probs.len() != grid.cells() {
        return Err(Error::data(format!(
            "expected {} probability vectors for grid {}, got {}",
            grid.cells(),
            grid,
            patch_probs.len()
        )));
    }
    let classes = patch_probs[0].len();
    for (i, p) in patch_probs.iter().enumerate() {
        if p.len() != classes {
            return Err(Error::data("probability vectors differ in length"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!(
                "probability vector {i} sums to {sum}, not 1"
            )));
        }
    }
    let mut labels = vec![vec![0usize; grid.cols]; grid.rows];
    let mut probs = vec![vec![vec![0.0f64; classes]; grid.cols]; grid.rows];
    for (i, p) in patch_probs.iter().enumerate() {
        let (r, c) = (i / grid.cols, i % grid.cols);
        labels[r][c] = argmax_lowest(p);
        probs[r][c] = p.clone();
    }
    Ok(ClassMask { labels, probs })
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gray-world automatic color correction: scale each channel so its mean
/// matches the mean over all channels, then clamp to `[0, 1]`. An all-black
/// image (and any all-zero channel) is left untouched.
pub fn color_correct(image: &LabeledImage) -> LabeledImage {
    let means = image.pixels.channel_means();
    let overall = (means[0] + means[1] + means[2]) / 3.0;
    if overall <= 0.0 {
        return image.clone();
    }
    let scale: Vec<f32> = means
        .iter()
        .map(|&m| if m > 0.0 { (overall / m) as f32 } else { 1.0 })
        .collect();
    let mut out = image.clone();
    for chunk in out.pixels.data_mut().chunks_exact_mut(3) {
        for ch in 0..3 {
            chunk[ch] = (chunk[ch] * scale[ch]).clamp(0.0, 1.0);
        }
    }
    out
}

/// Read a class manifest: one class name per line, line 0 = Background.
pub fn read_class_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::parse(path, 0, "class manifest is empty"));
    }
    Ok(names)
}

/// Load a class-per-subdirectory image tree.
///
/// `root/<ClassName>/<file>` with the class order given by `class_names`.
/// Unknown subdirectories are skipped with a warning; an undecodable file
/// or an empty class directory is an error. The returned list is ordered
/// by (class id, file name), so two loads of the same tree are identical.
pub fn load_dataset(root: &Path, class_names: &[String]) -> Result<Vec<LabeledImage>> {
    if class_names.is_empty() {
        return Err(Error::data(format!(
            "no class directories: empty class list for {}",
            root.display()
        )));
    }
    if !root.is_dir() {
        return Err(Error::data(format!("{} is not a directory", root.display())));
    }
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().to_string();
            if !class_names.iter().any(|c| *c == name) {
                log::warn!("skipping unknown class directory {}", path.display());
            }
        }
    }
    let mut images = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let dir = root.join(class);
        if !dir.is_dir() {
            return Err(Error::data(format!(
                "class '{class}' has no directory under {}",
                root.display()
            )));
        }
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && !p
                        .file_name()
                        .map(|n| n.to_string_lossy().starts_with('.'))
                        .unwrap_or(true)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::data(format!("class '{class}' contains no images")));
        }
        for file in files {
            images.push(load_image(&file, label, class)?);
        }
    }
    Ok(images)
}

/// Decode one raster file into `[0, 1]` RGB pixels.
pub fn decode_pixels(path: &Path) -> Result<Pixels> {
    let decoded = image::open(path)
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let mut pixels = Pixels::new(h as usize, w as usize);
    for (i, px) in decoded.pixels().enumerate() {
        let base = i * 3;
        pixels.data_mut()[base] = px.0[0] as f32 / 255.0;
        pixels.data_mut()[base + 1] = px.0[1] as f32 / 255.0;
        pixels.data_mut()[base + 2] = px.0[2] as f32 / 255.0;
    }
    Ok(pixels)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "image".to_string())
}

/// Decode one raster file under a class directory.
pub fn load_image(path: &Path, label: usize, class: &str) -> Result<LabeledImage> {
    Ok(LabeledImage {
        pixels: decode_pixels(path)?,
        label,
        // Class prefix keeps ids unique when stems repeat across classes.
        source_id: format!("{class}__{}", file_stem(path)),
    })
}
