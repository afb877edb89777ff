//! The differentiable patch classifier: a pluggable feature extractor
//! (small MLP over a bilinearly downsampled patch, or a precomputed-feature
//! lookup) followed by a classification head of one hidden layer with ReLU,
//! inverted dropout, and a final linear layer with one node per class.
//!
//! All gradients are computed analytically; the test suites check every
//! parameter against central finite differences.

use crate::dataset::Patch;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, zero biases.
    FanInUniform,
    /// All-zero parameters, for analytic tests.
    Zeros,
}

/// Anything that can map a patch to a feature vector in eval mode.
pub trait FeatureSource {
    fn feature_dim(&self) -> usize;
    fn features(&self, patch: &Patch) -> Result<FeatureVector>;
}

/// One fully connected layer, weights stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize, scheme: InitScheme) -> Self {
        let weights = match scheme {
            InitScheme::Zeros => vec![0.0; in_dim * out_dim],
            InitScheme::FanInUniform => {
                let bound = (6.0 / in_dim as f64).sqrt();
                (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect()
            }
        };
        DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.bias.clone();
        for (o, row) in self.weights.chunks_exact(self.in_dim).enumerate() {
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out[o] += acc;
        }
        out
    }

    /// Given upstream `d_out`, produce parameter gradients and `d_in`.
    pub fn backward(&self, input: &[f64], d_out: &[f64]) -> (LayerGrads, Vec<f64>) {
        let mut d_weights = vec![0.0; self.weights.len()];
        let mut d_in = vec![0.0; self.in_dim];
        for (o, row) in self.weights.chunks_exact(self.in_dim).enumerate() {
            let g = d_out[o];
            let dw = &mut d_weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                dw[i] = g * input[i];
                d_in[i] += g * row[i];
            }
        }
        (
            LayerGrads {
                d_weights,
                d_bias: d_out.to_vec(),
            },
            d_in,
        )
    }

    pub fn param_len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            d_weights: vec![0.0; layer.weights.len()],
            d_bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.d_weights.iter_mut() {
            *a *= factor;
        }
        for a in self.d_bias.iter_mut() {
            *a *= factor;
        }
    }
}

/// Geometry of the reference backbone: a patch is bilinearly resampled to
/// `input_side`^2 RGB pixels, flattened, then passed through ReLU hidden
/// layers onto `feature_dim` linear outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_side: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_side: 16,
            hidden: vec![256, 128],
            feature_dim: 64,
        }
    }
}

impl BackboneConfig {
    pub fn input_dim(&self) -> usize {
        self.input_side * self.input_side * 3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpBackbone {
    pub cfg: BackboneConfig,
    pub layers: Vec<DenseLayer>,
}

/// Stored activations from one training-mode backbone pass.
#[derive(Debug, Clone)]
pub struct BackboneCache {
    pub input: Vec<f64>,
    /// Pre-activations of every layer, in order.
    pub pre: Vec<Vec<f64>>,
}

impl MlpBackbone {
    pub fn init<R: Rng>(rng: &mut R, cfg: BackboneConfig, scheme: InitScheme) -> Self {
        let mut dims = vec![cfg.input_dim()];
        dims.extend(&cfg.hidden);
        dims.push(cfg.feature_dim);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(rng, w[0], w[1], scheme))
            .collect();
        MlpBackbone { cfg, layers }
    }

    /// Downsample, flatten and center a patch into the backbone input.
    pub fn patch_input(&self, patch: &Patch) -> Vec<f64> {
        let side = self.cfg.input_side;
        let resized = patch.pixels.resize(side, side);
        resized.data().iter().map(|&v| v as f64 - 0.5).collect()
    }

    /// Forward pass from a raw input vector. Training mode returns the
    /// cache needed for [`MlpBackbone::backward`].
    pub fn forward(&self, input: &[f64], mode: Mode) -> Result<(FeatureVector, Option<BackboneCache>)> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&act);
            act = if i + 1 < self.layers.len() {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        if act.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite activation in feature extractor"));
        }
        let cache = match mode {
            Mode::Train => Some(BackboneCache {
                input: input.to_vec(),
                pre,
            }),
            Mode::Eval => None,
        };
        Ok((act, cache))
    }

    pub fn extract(&self, patch: &Patch, mode: Mode) -> Result<(FeatureVector, Option<BackboneCache>)> {
        self.forward(&self.patch_input(patch), mode)
    }

    /// Exact gradients of all layers given `d_feature` at the output.
    pub fn backward(&self, cache: &BackboneCache, d_feature: &[f64]) -> Vec<LayerGrads> {
        let mut grads: Vec<LayerGrads> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        let mut d = d_feature.to_vec();
        for i in (0..self.layers.len()).rev() {
            // Activation fed into layer i.
            let input: Vec<f64> = if i == 0 {
                cache.input.clone()
            } else {
                cache.pre[i - 1].iter().map(|&v| v.max(0.0)).collect()
            };
            let (lg, mut d_in) = self.layers[i].backward(&input, &d);
            grads[i] = lg;
            if i > 0 {
                for (dv, z) in d_in.iter_mut().zip(&cache.pre[i - 1]) {
                    if *z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            d = d_in;
        }
        grads
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_len).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for layer in self.layers.iter_mut() {
            let wlen = layer.weights.len();
            layer.weights.copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        off
    }
}

impl FeatureSource for MlpBackbone {
    fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    fn features(&self, patch: &Patch) -> Result<FeatureVector> {
        Ok(self.extract(patch, Mode::Eval)?.0)
    }
}

/// Classification head: `feature -> hidden (ReLU) -> dropout -> classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub dropout_p: f64,
}

pub const DEFAULT_HEAD_HIDDEN: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.15;

/// Stored activations and dropout mask from one training-mode head pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    /// Hidden activation after ReLU and (scaled) dropout.
    pub a1: Vec<f64>,
    /// Inverted-dropout mask: 0 or 1/(1-p) per hidden unit.
    pub mask: Vec<f64>,
}

impl HeadParams {
    pub fn init<R: Rng>(
        rng: &mut R,
        feature_dim: usize,
        hidden: usize,
        num_classes: usize,
        dropout_p: f64,
        scheme: InitScheme,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::data(format!("dropout must lie in [0,1), got {dropout_p}")));
        }
        Ok(HeadParams {
            fc1: DenseLayer::init(rng, feature_dim, hidden, scheme),
            fc2: DenseLayer::init(rng, hidden, num_classes, scheme),
            dropout_p,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.fc2.out_dim
    }

    /// Forward pass. Training mode applies inverted dropout (mask scaled by
    /// `1/(1-p)`, so eval mode needs no rescaling) and returns the cache.
    pub fn forward<R: Rng>(
        &self,
        feature: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> (Vec<f64>, Option<HeadCache>) {
        let z1 = self.fc1.forward(feature);
        let relu: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        match mode {
            Mode::Eval => (self.fc2.forward(&relu), None),
            Mode::Train => {
                let mask: Vec<f64> = if self.dropout_p > 0.0 {
                    let keep = 1.0 - self.dropout_p;
                    relu.iter()
                        .map(|_| {
                            if rng.random::<f64>() < self.dropout_p {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        })
                        .collect()
                } else {
                    vec![1.0; relu.len()]
                };
                let a1: Vec<f64> = relu.iter().zip(&mask).map(|(v, m)| v * m).collect();
                let logits = self.fc2.forward(&a1);
                (
                    logits,
                    Some(HeadCache {
                        input: feature.to_vec(),
                        z1,
                        a1,
                        mask,
                    }),
                )
            }
        }
    }

    /// Gradients of both layers plus the gradient at the input feature.
    pub fn backward(&self, cache: &HeadCache, d_logits: &[f64]) -> (LayerGrads, LayerGrads, Vec<f64>) {
        let (g2, d_a1) = self.fc2.backward(&cache.a1, d_logits);
        let mut d_z1: Vec<f64> = d_a1
            .iter()
            .zip(&cache.mask)
            .map(|(d, m)| d * m)
            .collect();
        for (d, z) in d_z1.iter_mut().zip(&cache.z1) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        let (g1, d_feature) = self.fc1.backward(&cache.input, &d_z1);
        (g1, g2, d_feature)
    }

    pub fn param_len(&self) -> usize {
        self.fc1.param_len() + self.fc2.param_len()
    }
}

/// Backbone plus head, trained end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub backbone: MlpBackbone,
    pub head: HeadParams,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    pub backbone: BackboneCache,
    pub head: HeadCache,
}

/// Gradients for every parameter tensor of a [`Model`], plus the gradient
/// at the feature for feature-space losses.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub backbone: Vec<LayerGrads>,
    pub head_fc1: LayerGrads,
    pub head_fc2: LayerGrads,
    pub d_feature: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        ModelGrads {
            backbone: model.backbone.layers.iter().map(LayerGrads::zeros_like).collect(),
            head_fc1: LayerGrads::zeros_like(&model.head.fc1),
            head_fc2: LayerGrads::zeros_like(&model.head.fc2),
            d_feature: vec![0.0; model.backbone.cfg.feature_dim],
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            a.add_assign(b);
        }
        self.head_fc1.add_assign(&other.head_fc1);
        self.head_fc2.add_assign(&other.head_fc2);
        for (a, b) in self.d_feature.iter_mut().zip(&other.d_feature) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.backbone.iter_mut() {
            g.scale(factor);
        }
        self.head_fc1.scale(factor);
        self.head_fc2.scale(factor);
        for a in self.d_feature.iter_mut() {
            *a *= factor;
        }
    }

    /// Flatten in the same order as [`Model::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.backbone {
            out.extend_from_slice(&g.d_weights);
            out.extend_from_slice(&g.d_bias);
        }
        out.extend_from_slice(&self.head_fc1.d_weights);
        out.extend_from_slice(&self.head_fc1.d_bias);
        out.extend_from_slice(&self.head_fc2.d_weights);
        out.extend_from_slice(&self.head_fc2.d_bias);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head_hidden: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head_hidden: DEFAULT_HEAD_HIDDEN,
            dropout_p: DEFAULT_DROPOUT,
            num_classes,
        }
    }
}

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64, scheme: InitScheme) -> Result<Model> {
        use rand::SeedableRng;
        if cfg.num_classes == 0 || cfg.backbone.feature_dim == 0 {
            return Err(Error::data("model needs at least one class and feature"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let backbone = MlpBackbone::init(&mut rng, cfg.backbone.clone(), scheme);
        let head = HeadParams::init(
            &mut rng,
            cfg.backbone.feature_dim,
            cfg.head_hidden,
            cfg.num_classes,
            cfg.dropout_p,
            scheme,
        )?;
        Ok(Model { backbone, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.cfg.feature_dim
    }

    pub fn forward<R: Rng>(
        &self,
        patch: &Patch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<ModelCache>)> {
        let (feature, bcache) = self.backbone.extract(patch, mode)?;
        let (logits, hcache) = self.head.forward(&feature, mode, rng);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite logits"));
        }
        let cache = match (bcache, hcache) {
            (Some(b), Some(h)) => Some(ModelCache { backbone: b, head: h }),
            _ => None,
        };
        Ok((logits, cache))
    }

    /// Deterministic eval-mode logits (no dropout, no cache).
    pub fn logits_eval(&self, patch: &Patch) -> Result<Vec<f64>> {
        let mut rng = NoRng;
        Ok(self.forward(patch, Mode::Eval, &mut rng)?.0)
    }

    pub fn backward(&self, cache: &ModelCache, d_logits: &[f64]) -> ModelGrads {
        let (g1, g2, d_feature) = self.head.backward(&cache.head, d_logits);
        let backbone = self.backbone.backward(&cache.backbone, &d_feature);
        ModelGrads {
            backbone,
            head_fc1: g1,
            head_fc2: g2,
            d_feature,
        }
    }

    pub fn param_len(&self) -> usize {
        self.backbone.param_len() + self.head.param_len()
    }

    /// All parameters as one flat vector: backbone layers in order, then
    /// head fc1, then fc2 (weights before bias within each layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.backbone.flatten_into(&mut out);
        out.extend_from_slice(&self.head.fc1.weights);
        out.extend_from_slice(&self.head.fc1.bias);
        out.extend_from_slice(&self.head.fc2.weights);
        out.extend_from_slice(&self.head.fc2.bias);
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.param_len());
        let mut off = self.backbone.unflatten_from(flat);
        for layer in [&mut self.head.fc1, &mut self.head.fc2] {
            let wlen = layer.weights.len();
            layer.weights.copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
    }
}

/// Rng that panics if used; eval-mode forwards never draw randomness.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode must not consume randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode must not consume randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("eval mode must not consume randomness")
    }
}

/// Convenience constructor matching the documented desk-scale defaults.
pub fn init_params(seed: u64, feature_dim: usize, num_classes: usize, scheme: InitScheme) -> Result<Model> {
    let mut cfg = ModelConfig::new(num_classes);
    cfg.backbone.feature_dim = feature_dim;
    Model::init(&cfg, seed, scheme)
}

/// Feature vectors precomputed offline (e.g. by a real encoder), keyed by
/// `(source_id, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedFeatures {
    dim: usize,
    map: BTreeMap<(String, usize, usize), FeatureVector>,
}

impl PrecomputedFeatures {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, source_id: &str, row: usize, col: usize) -> Option<&FeatureVector> {
        self.map.get(&(source_id.to_string(), row, col))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, usize, usize), &FeatureVector)> {
        self.map.iter()
    }

    /// Error listing every patch that has no stored feature vector.
    pub fn require(&self, patches: &[Patch]) -> Result<()> {
        let missing: Vec<String> = patches
            .iter()
            .filter(|p| self.get(&p.parent_id, p.row, p.col).is_none())
            .map(|p| format!("{}:{}:{}", p.parent_id, p.row, p.col))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::data(format!(
                "features missing for {} patches: {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }
}

impl FeatureSource for PrecomputedFeatures {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, patch: &Patch) -> Result<FeatureVector> {
        self.get(&patch.parent_id, patch.row, patch.col)
            .cloned()
            .ok_or_else(|| {
                Error::data(format!(
                    "no precomputed feature for {}:{}:{}",
                    patch.parent_id, patch.row, patch.col
                ))
            })
    }
}

/// Write features as CSV with header `source_id,row,col,f0,...,f{D-1}`.
/// Floats use the shortest representation that parses back exactly.
pub fn save_features<'a, I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, usize, usize, &'a [f64])>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header_written = false;
    for (source_id, row, col, values) in rows {
        if !header_written {
            let cols: Vec<String> = (0..values.len()).map(|i| format!("f{i}")).collect();
            writeln!(out, "source_id,row,col,{}", cols.join(","))
                .map_err(|e| Error::io(path, e))?;
            header_written = true;
        }
        let vals: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{source_id},{row},{col},{}", vals.join(","))
            .map_err(|e| Error::io(path, e))?;
    }
    if !header_written {
        return Err(Error::data("no feature rows to write"));
    }
    Ok(())
}

/// Parse a feature CSV. Every row must share one dimension; duplicate
/// `(source_id,row,col)` keys and malformed fields are errors carrying the
/// offending line number.
pub fn load_precomputed_features(path: &Path) -> Result<PrecomputedFeatures> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::parse(path, 1, "empty feature file")),
    };
    let head_fields: Vec<&str> = header.trim().split(',').collect();
    if head_fields.len() < 4 || head_fields[..3] != ["source_id", "row", "col"] {
        return Err(Error::parse(path, 1, "expected header source_id,row,col,f0,..."));
    }
    let dim = head_fields.len() - 3;
    let mut map = BTreeMap::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} columns, found {}", dim + 3, fields.len()),
            ));
        }
        let row: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad row '{}'", fields[1])))?;
        let col: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad col '{}'", fields[2])))?;
        let mut values = Vec::with_capacity(dim);
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad float '{f}'")))?;
            values.push(v);
        }
        let key = (fields[0].to_string(), row, col);
        if map.insert(key, values).is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate patch key {}:{}:{}", fields[0], row, col),
            ));
        }
    }
    if map.is_empty() {
        return Err(Error::parse(path, 1, "feature file has no data rows"));
    }
    Ok(PrecomputedFeatures { dim, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pixels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn small_patch(seed: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Patch {
            pixels: Pixels::from_fn(6, 6, |_, _| {
                [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
            }),
            row: 0,
            col: 0,
            parent_id: "p".into(),
            inherited_label: 1,
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                input_side: 4,
                hidden: vec![8, 6],
                feature_dim: 5,
            },
            head_hidden: 7,
            dropout_p: 0.15,
            num_classes: 3,
        }
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = tiny_config();
        let a = Model::init(&cfg, 42, InitScheme::FanInUniform).unwrap();
        let b = Model::init(&cfg, 42, InitScheme::FanInUniform).unwrap();
        assert_eq!(a, b);
        let c = Model::init(&cfg, 43, InitScheme::FanInUniform).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zeros_scheme_gives_zero_params() {
        let model = Model::init(&tiny_config(), 0, InitScheme::Zeros).unwrap();
        assert!(model.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fan_in_bound_holds_over_a_million_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = DenseLayer::init(&mut rng, 100, 10_000, InitScheme::FanInUniform);
        let bound = (6.0_f64 / 100.0).sqrt();
        assert_eq!(layer.weights.len(), 1_000_000);
        let max = layer.weights.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
        assert!(max <= bound, "max |w| = {max} exceeds {bound}");
        assert!(max > 0.9 * bound, "draws should fill the range");
    }

    #[test]
    fn zero_backbone_maps_any_patch_to_zero_feature() {
        let model = Model::init(&tiny_config(), 0, InitScheme::Zeros).unwrap();
        let (f, _) = model.backbone.extract(&small_patch(1), Mode::Eval).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_patches_give_identical_features() {
        let model = Model::init(&tiny_config(), 3, InitScheme::FanInUniform).unwrap();
        let p = small_patch(2);
        let (a, _) = model.backbone.extract(&p, Mode::Eval).unwrap();
        let (b, _) = model.backbone.extract(&p.clone(), Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_linear_layer_matches_hand_matmul() {
        let cfg = BackboneConfig {
            input_side: 2,
            hidden: vec![],
            feature_dim: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let backbone = MlpBackbone::init(&mut rng, cfg, InitScheme::FanInUniform);
        let patch = small_patch(9);
        let input = backbone.patch_input(&patch);
        let (f, _) = backbone.forward(&input, Mode::Eval).unwrap();
        let layer = &backbone.layers[0];
        for o in 0..3 {
            let mut expect = layer.bias[o];
            for i in 0..input.len() {
                expect += layer.weights[o * input.len() + i] * input[i];
            }
            assert!((f[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn head_eval_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = HeadParams::init(&mut rng, 4, 6, 3, 0.15, InitScheme::FanInUniform).unwrap();
        let f: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.5).collect();
        let (logits, cache) = head.forward(&f, Mode::Eval, &mut rng);
        assert!(cache.is_none());
        let z1 = head.fc1.forward(&f);
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let expect = head.fc2.forward(&a1);
        for (l, e) in logits.iter().zip(&expect) {
            assert!((l - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_zero_makes_train_equal_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let head = HeadParams::init(&mut rng, 4, 6, 3, 0.0, InitScheme::FanInUniform).unwrap();
        let f = vec![0.1, -0.2, 0.3, 0.4];
        let (train_logits, cache) = head.forward(&f, Mode::Train, &mut rng);
        let (eval_logits, _) = head.forward(&f, Mode::Eval, &mut rng);
        assert!(cache.is_some());
        assert_eq!(train_logits, eval_logits);
    }

    #[test]
    fn zero_head_weights_give_bias_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut head = HeadParams::init(&mut rng, 4, 6, 3, 0.15, InitScheme::Zeros).unwrap();
        head.fc2.bias = vec![0.5, -1.0, 2.0];
        let (logits, _) = head.forward(&[1.0, 2.0, 3.0, 4.0], Mode::Eval, &mut rng);
        assert_eq!(logits, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_d_logits_give_zero_gradients() {
        let model = Model::init(&tiny_config(), 19, InitScheme::FanInUniform).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, cache) = model.forward(&small_patch(3), Mode::Train, &mut rng).unwrap();
        let grads = model.backward(&cache.unwrap(), &[0.0, 0.0, 0.0]);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_reproducible_with_fixed_seed() {
        let model = Model::init(&tiny_config(), 23, InitScheme::FanInUniform).unwrap();
        let patch = small_patch(4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let (logits, cache) = model.forward(&patch, Mode::Train, &mut rng).unwrap();
            let (_, d_logits) = crate::losses::weighted_ce(
                &logits,
                1,
                &crate::losses::ClassWeights::uniform(3),
            )
            .unwrap();
            model.backward(&cache.unwrap(), &d_logits).flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut model = Model::init(&cfg, 29, InitScheme::FanInUniform).unwrap();
        let patch = small_patch(5);
        let weights = crate::losses::ClassWeights(vec![1.0, 1.5, 1.2]);
        let target = 2;
        let seed = 7u64;

        let loss_fn = |m: &Model| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (logits, _) = m.forward(&patch, Mode::Train, &mut rng).unwrap();
            crate::losses::weighted_ce(&logits, target, &weights).unwrap().0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (logits, cache) = model.forward(&patch, Mode::Train, &mut rng).unwrap();
        let (_, d_logits) = crate::losses::weighted_ce(&logits, target, &weights).unwrap();
        let analytic = model.backward(&cache.unwrap(), &d_logits).flatten();

        let flat = model.flatten();
        let eps = 1e-5;
        for i in (0..flat.len()).step_by(17) {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += eps;
            minus[i] -= eps;
            model.unflatten(&plus);
            let lp = loss_fn(&model);
            model.unflatten(&minus);
            let lm = loss_fn(&model);
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8);
            assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", analytic[i]);
        }
        model.unflatten(&flat);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let head = HeadParams::init(&mut rng, 3, 4, 2, 0.15, InitScheme::FanInUniform).unwrap();
        let f = vec![0.9, -0.4, 0.7];
        let (_, cache0) = head.forward(&f, Mode::Train, &mut rng);
        let hidden = cache0.unwrap().z1.iter().map(|&z| z.max(0.0)).collect::<Vec<_>>();
        let mut mean = vec![0.0; hidden.len()];
        let draws = 100_000;
        for _ in 0..draws {
            let (_, cache) = head.forward(&f, Mode::Train, &mut rng);
            for (m, a) in mean.iter_mut().zip(&cache.unwrap().a1) {
                *m += a / draws as f64;
            }
        }
        for (m, h) in mean.iter().zip(&hidden) {
            if *h > 1e-6 {
                assert!(
                    (m - h).abs() / h < 0.01,
                    "dropout mean {m} drifted from {h}"
                );
            }
        }
    }

    #[test]
    fn flatten_round_trips() {
        let mut a = Model::init(&tiny_config(), 37, InitScheme::FanInUniform).unwrap();
        let flat = a.flatten();
        let mut b = Model::init(&tiny_config(), 0, InitScheme::Zeros).unwrap();
        b.unflatten(&flat);
        assert_eq!(a.flatten(), b.flatten());
        a.unflatten(&b.flatten());
        assert_eq!(a, b);
    }

    #[test]
    fn feature_csv_single_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        save_features(&path, [("img", 0usize, 1usize, [0.1, 0.2, 0.3, 0.4].as_slice())])
            .unwrap();
        let feats = load_precomputed_features(&path).unwrap();
        assert_eq!(feats.feature_dim(), 4);
        assert_eq!(feats.get("img", 0, 1).unwrap(), &vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn feature_csv_dimension_mismatch_names_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "source_id,row,col,f0,f1,f2,f3\na,0,0,1,2,3,4\nb,0,0,1,2,3,4,5\n")
            .unwrap();
        match load_precomputed_features(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn feature_csv_duplicate_key_is_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "source_id,row,col,f0\na,0,0,1\na,0,0,2\n").unwrap();
        assert!(load_precomputed_features(&path).is_err());
    }

    #[test]
    fn feature_csv_round_trips_random_vectors_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let vectors: Vec<(String, usize, usize, Vec<f64>)> = (0..100)
            .map(|i| {
                let vals: Vec<f64> = (0..6).map(|_| rng.random_range(-10.0..10.0)).collect();
                (format!("img{}", i / 10), i / 3, i % 3, vals)
            })
            .collect();
        save_features(
            &path,
            vectors
                .iter()
                .map(|(s, r, c, v)| (s.as_str(), *r, *c, v.as_slice())),
        )
        .unwrap();
        let feats = load_precomputed_features(&path).unwrap();
        for (s, r, c, v) in &vectors {
            assert_eq!(feats.get(s, *r, *c).unwrap(), v, "exact round trip");
        }
    }

    #[test]
    fn missing_patches_are_listed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "source_id,row,col,f0\nother,0,0,1\n").unwrap();
        let feats = load_precomputed_features(&path).unwrap();
        let patch = small_patch(1);
        let err = feats.require(&[patch]).unwrap_err();
        assert!(err.to_string().contains("p:0:0"), "{err}");
    }
}
