//! The feature-similarity engine: per-class template vectors built by
//! averaging L2-normalized patch features, cosine pseudo-labeling against
//! the background template, and end-to-end training with the template bank
//! refreshed after every epoch.

use crate::augment::{augment, AugConfig};
use crate::dataset::{Patch, BACKGROUND_CLASS};
use crate::error::{Error, Result};
use crate::losses::{weighted_ce, ClassWeights};
use crate::model::{FeatureVector, Mode, Model, ModelGrads};
use crate::optim::AdamState;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One template vector per class: the mean of up to `N_c` L2-normalized
/// patch features of that class, keyed by image-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub templates: BTreeMap<usize, FeatureVector>,
    pub counts: BTreeMap<usize, usize>,
    pub epoch: u32,
}

impl TemplateBank {
    pub fn template(&self, class: usize) -> Result<&FeatureVector> {
        self.templates
            .get(&class)
            .ok_or_else(|| Error::data(format!("template bank has no class {class}")))
    }

    /// Classes whose normalized features cancelled out to a zero template.
    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.templates
            .iter()
            .filter(|(_, t)| t.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Total movement `sum_c ||v_c - other.v_c||` over shared classes.
    pub fn drift(&self, other: &TemplateBank) -> f64 {
        self.templates
            .iter()
            .filter_map(|(c, t)| {
                other.templates.get(c).map(|u| {
                    t.iter()
                        .zip(u)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
            })
            .sum()
    }
}

/// Average the L2-normalized feature vectors of each class into its
/// template. A `cap` limits each class to its first `cap` vectors
/// (deterministic prefix). The background class must be present.
pub fn compute_templates(
    features: &BTreeMap<usize, Vec<FeatureVector>>,
    cap: Option<usize>,
) -> Result<TemplateBank> {
    match features.get(&BACKGROUND_CLASS) {
        Some(list) if !list.is_empty() => {}
        _ => return Err(Error::data("template bank needs background features (class 0)")),
    }
    let mut templates = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (&class, list) in features {
        if list.is_empty() {
            continue;
        }
        let take = cap.unwrap_or(list.len()).min(list.len());
        let dim = list[0].len();
        let mut acc = vec![0.0f64; dim];
        for (i, f) in list.iter().take(take).enumerate() {
            if f.len() != dim {
                return Err(Error::data(format!(
                    "class {class} feature {i} has dimension {} (expected {dim})",
                    f.len()
                )));
            }
            let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 0.0 || !norm.is_finite() {
                return Err(Error::numeric(format!(
                    "zero-norm feature for class {class} at index {i}"
                )));
            }
            for (a, x) in acc.iter_mut().zip(f) {
                *a += x / norm;
            }
        }
        for a in acc.iter_mut() {
            *a /= take as f64;
        }
        templates.insert(class, acc);
        counts.insert(class, take);
    }
    let bank = TemplateBank {
        templates,
        counts,
        epoch: 0,
    };
    for c in bank.degenerate_classes() {
        log::warn!("template for class {c} is degenerate (normalized features cancelled)");
    }
    Ok(bank)
}

/// Cosine similarity in `[-1, 1]`; zero-norm inputs are an error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::data("cosine_sim dimension mismatch"));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na <= 0.0 || nb <= 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::numeric("cosine similarity of zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// A patch's pseudo-label plus the two similarities that decided it.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub label: usize,
    pub sim_bg: f64,
    pub sim_cls: f64,
}

/// Pseudo-label one feature vector: background wins only when its template
/// is strictly more similar than the image-label template, so an exact tie
/// keeps the image-level label.
pub fn assign_pseudolabel(
    feature: &[f64],
    bank: &TemplateBank,
    image_label: usize,
) -> Result<PseudoLabel> {
    let bg = bank.template(BACKGROUND_CLASS)?;
    let cls = bank.template(image_label)?;
    let sim_bg = cosine_sim(feature, bg)
        .map_err(|e| Error::numeric(format!("background template: {e}")))?;
    let sim_cls = cosine_sim(feature, cls)
        .map_err(|e| Error::numeric(format!("class {image_label} template: {e}")))?;
    let label = if sim_bg > sim_cls {
        BACKGROUND_CLASS
    } else {
        image_label
    };
    Ok(PseudoLabel {
        label,
        sim_bg,
        sim_cls,
    })
}

#[derive(Debug, Clone)]
pub struct SeafeatsConfig {
    pub epochs: usize,
    /// Images per optimizer step; every patch of those images enters the batch.
    pub batch_images: usize,
    pub lr: f64,
    pub weights: ClassWeights,
    pub template_cap: Option<usize>,
    /// Training-time augmentation (used by few-shot fine-tuning).
    pub aug: Option<AugConfig>,
}

impl SeafeatsConfig {
    pub fn new(epochs: usize, weights: ClassWeights) -> Self {
        SeafeatsConfig {
            epochs,
            batch_images: 3,
            lr: crate::optim::DEFAULT_LR,
            weights,
            template_cap: None,
            aug: None,
        }
    }
}

/// Per-epoch training diagnostics, appended to a JSON-lines log by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    /// Patches whose pseudo-label changed since the previous epoch
    /// (epoch 1 counts changes from the inherited image labels).
    pub flips: usize,
    /// Template movement `sum_c ||delta v_c||` produced by the refresh.
    pub bank_drift: f64,
}

fn eval_features(model: &Model, patches: &[Patch]) -> Result<Vec<FeatureVector>> {
    patches
        .iter()
        .map(|p| model.backbone.extract(p, Mode::Eval).map(|(f, _)| f))
        .collect()
}

fn group_by_label(
    patches: &[Patch],
    features: &[FeatureVector],
) -> BTreeMap<usize, Vec<FeatureVector>> {
    let mut by_class: BTreeMap<usize, Vec<FeatureVector>> = BTreeMap::new();
    for (p, f) in patches.iter().zip(features) {
        by_class.entry(p.inherited_label).or_default().push(f.clone());
    }
    by_class
}

/// Everything a SeaFeats training run produces besides the mutated model.
#[derive(Debug, Clone)]
pub struct SeafeatsOutcome {
    pub stats: Vec<EpochStats>,
    pub bank: TemplateBank,
    pub adam: AdamState,
}

/// Train the classifier on pseudo-labels from the template bank.
///
/// Before epoch 1 the bank is built from the initial encoder. Each epoch
/// then (1) pseudo-labels every patch with the current bank, (2) minimizes
/// the weighted cross entropy with Adam, batching all patches of
/// `batch_images` images per step, and (3) recomputes the bank from the
/// updated encoder. Returns per-epoch stats and the final bank.
pub fn train_seafeats<R: Rng>(
    model: &mut Model,
    patches: &[Patch],
    cfg: &SeafeatsConfig,
    rng: &mut R,
) -> Result<SeafeatsOutcome> {
    if patches.is_empty() {
        return Err(Error::data("no patches to train on"));
    }
    if !patches.iter().any(|p| p.inherited_label == BACKGROUND_CLASS) {
        return Err(Error::data(
            "training data has no background-labeled images (class 0)",
        ));
    }
    let classes = model.num_classes();
    if let Some(bad) = patches.iter().find(|p| p.inherited_label >= classes) {
        return Err(Error::data(format!(
            "patch {}:{}:{} has label {} but the model has {classes} classes",
            bad.parent_id, bad.row, bad.col, bad.inherited_label
        )));
    }
    cfg.weights.validate(classes)?;

    // Image groups in first-appearance order: index ranges into `patches`.
    let mut image_spans: Vec<(usize, usize)> = Vec::new();
    for (i, p) in patches.iter().enumerate() {
        match image_spans.last_mut() {
            Some((start, end)) if patches[*start].parent_id == p.parent_id => *end = i + 1,
            _ => image_spans.push((i, i + 1)),
        }
    }

    let mut features = eval_features(model, patches)?;
    let mut bank = compute_templates(&group_by_label(patches, &features), cfg.template_cap)?;
    let mut prev_labels: Vec<usize> = patches.iter().map(|p| p.inherited_label).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    let mut flat = model.flatten();
    let mut adam = AdamState::new(flat.len(), cfg.lr);

    for epoch in 1..=cfg.epochs as u32 {
        // (1) pseudo-label every patch with the current bank.
        let mut labels = Vec::with_capacity(patches.len());
        for (p, f) in patches.iter().zip(&features) {
            labels.push(assign_pseudolabel(f, &bank, p.inherited_label)?.label);
        }
        let flips = labels
            .iter()
            .zip(&prev_labels)
            .filter(|(a, b)| a != b)
            .count();
        prev_labels.clone_from(&labels);

        // (2) weighted CE over shuffled image batches.
        let mut order: Vec<usize> = (0..image_spans.len()).collect();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_images.max(1)) {
            let mut grads = ModelGrads::zeros_like(model);
            let mut batch_loss = 0.0;
            let mut count = 0usize;
            for &img in chunk {
                let (start, end) = image_spans[img];
                for idx in start..end {
                    let patch = match &cfg.aug {
                        Some(aug_cfg) => augment(&patches[idx], aug_cfg, rng)?,
                        None => patches[idx].clone(),
                    };
                    let (logits, cache) = model.forward(&patch, Mode::Train, rng)?;
                    let (loss, d_logits) = weighted_ce(&logits, labels[idx], &cfg.weights)?;
                    grads.add_assign(&model.backward(&cache.expect("train cache"), &d_logits));
                    batch_loss += loss;
                    count += 1;
                }
            }
            grads.scale(1.0 / count as f64);
            batch_loss /= count as f64;
            if !batch_loss.is_finite() {
                return Err(Error::numeric(format!(
                    "loss diverged at epoch {epoch}, step {steps}"
                )));
            }
            flat.clear();
            flat.extend(model.flatten());
            adam.step(&mut flat, &grads.flatten())?;
            model.unflatten(&flat);
            loss_sum += batch_loss;
            steps += 1;
        }

        // (3) refresh the bank from the fine-tuned encoder.
        features = eval_features(model, patches)?;
        let mut refreshed =
            compute_templates(&group_by_label(patches, &features), cfg.template_cap)?;
        refreshed.epoch = epoch;
        let drift = bank.drift(&refreshed);
        bank = refreshed;

        stats.push(EpochStats {
            epoch,
            mean_loss: loss_sum / steps.max(1) as f64,
            flips,
            bank_drift: drift,
        });
    }
    Ok(SeafeatsOutcome { stats, bank, adam })
}

/// Append per-epoch stats to a JSON-lines log.
pub fn append_stats(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for s in stats {
        let line = serde_json::to_string(s).map_err(|e| Error::data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Serialize a bank in the feature CSV format, class id standing in for
/// the source id (row and col are zero).
pub fn save_template_bank(path: &Path, bank: &TemplateBank) -> Result<()> {
    let ids: Vec<String> = bank.templates.keys().map(|c| c.to_string()).collect();
    crate::model::save_features(
        path,
        ids.iter()
            .zip(bank.templates.values())
            .map(|(id, t)| (id.as_str(), 0usize, 0usize, t.as_slice())),
    )
}

pub fn load_template_bank(path: &Path) -> Result<TemplateBank> {
    let feats = crate::model::load_precomputed_features(path)?;
    let mut templates = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for ((id, _, _), values) in feats.iter() {
        let class: usize = id
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("'{id}' is not a class id")))?;
        templates.insert(class, values.clone());
        counts.insert(class, 0);
    }
    if templates.is_empty() {
        return Err(Error::parse(path, 1, "no template rows found"));
    }
    Ok(TemplateBank {
        templates,
        counts,
        epoch: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pixels;
    use crate::model::{BackboneConfig, InitScheme, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn features(map: &[(usize, &[&[f64]])]) -> BTreeMap<usize, Vec<FeatureVector>> {
        map.iter()
            .map(|(c, rows)| (*c, rows.iter().map(|r| r.to_vec()).collect()))
            .collect()
    }

    #[test]
    fn single_feature_template_is_normalized() {
        let bank = compute_templates(&features(&[(0, &[&[3.0, 4.0]])]), None).unwrap();
        let t = bank.template(0).unwrap();
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
        assert_eq!(bank.counts[&0], 1);
    }

    #[test]
    fn antipodal_features_flag_degenerate_template() {
        let bank = compute_templates(
            &features(&[(0, &[&[1.0, 0.0]]), (1, &[&[2.0, 0.0], &[-5.0, 0.0]])]),
            None,
        )
        .unwrap();
        assert_eq!(bank.degenerate_classes(), vec![1]);
    }

    #[test]
    fn templates_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut map = BTreeMap::new();
        map.insert(0usize, rows.clone());
        let bank = compute_templates(&map, None).unwrap();
        let mut expect = vec![0.0; 3];
        for r in &rows {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (e, x) in expect.iter_mut().zip(r) {
                *e += x / n / rows.len() as f64;
            }
        }
        for (a, b) in bank.template(0).unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_background_class_is_error() {
        assert!(compute_templates(&features(&[(1, &[&[1.0, 0.0]])]), None).is_err());
    }

    #[test]
    fn zero_norm_feature_is_identified() {
        let err =
            compute_templates(&features(&[(0, &[&[1.0, 0.0], &[0.0, 0.0]])]), None).unwrap_err();
        assert!(err.to_string().contains("class 0 at index 1"), "{err}");
    }

    #[test]
    fn template_cap_takes_deterministic_prefix() {
        let bank = compute_templates(
            &features(&[(0, &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]])]),
            Some(2),
        )
        .unwrap();
        assert_eq!(bank.counts[&0], 2);
        let t = bank.template(0).unwrap();
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_sim(&[0.3, -0.7, 2.0], &[0.3, -0.7, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 5.0]).unwrap().abs() < 1e-15);
        let s = cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((s - 0.974631846).abs() < 1e-9);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn axis_bank() -> TemplateBank {
        let mut templates = BTreeMap::new();
        templates.insert(0, vec![1.0, 0.0]);
        templates.insert(2, vec![0.0, 1.0]);
        TemplateBank {
            templates,
            counts: BTreeMap::new(),
            epoch: 0,
        }
    }

    #[test]
    fn background_images_always_get_background() {
        let bank = axis_bank();
        let p = assign_pseudolabel(&[0.2, 0.9], &bank, 0).unwrap();
        assert_eq!(p.label, 0);
    }

    #[test]
    fn background_flip_matches_hand_computation() {
        let bank = axis_bank();
        let p = assign_pseudolabel(&[0.9, 0.1], &bank, 2).unwrap();
        assert_eq!(p.label, 0);
        assert!((p.sim_bg - 0.9 / (0.81f64 + 0.01).sqrt()).abs() < 1e-9);
        assert!((p.sim_cls - 0.1 / (0.81f64 + 0.01).sqrt()).abs() < 1e-9);
        assert!(p.sim_bg > 0.99 && p.sim_cls < 0.12);
    }

    #[test]
    fn exact_tie_keeps_image_label() {
        let bank = axis_bank();
        let p = assign_pseudolabel(&[1.0, 1.0], &bank, 2).unwrap();
        assert_eq!(p.label, 2);
        assert_eq!(p.sim_bg, p.sim_cls);
    }

    #[test]
    fn pseudolabel_is_scale_invariant() {
        let bank = axis_bank();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let f: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            if f.iter().all(|&x| x.abs() < 1e-6) {
                continue;
            }
            let base = assign_pseudolabel(&f, &bank, 2).unwrap().label;
            let scaled: Vec<f64> = f.iter().map(|x| x * 37.5).collect();
            assert_eq!(base, assign_pseudolabel(&scaled, &bank, 2).unwrap().label);
        }
    }

    #[test]
    fn degenerate_template_is_error() {
        let mut bank = axis_bank();
        bank.templates.insert(2, vec![0.0, 0.0]);
        assert!(assign_pseudolabel(&[1.0, 1.0], &bank, 2).is_err());
    }

    fn colored_patch(label: usize, rgb: [f32; 3], id: &str, cell: usize, rng: &mut ChaCha8Rng) -> Patch {
        let pixels = Pixels::from_fn(6, 6, |_, _| {
            [
                (rgb[0] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
                (rgb[1] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
                (rgb[2] + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
            ]
        });
        Patch {
            pixels,
            row: cell / 2,
            col: cell % 2,
            parent_id: id.to_string(),
            inherited_label: label,
        }
    }

    fn two_class_patches(rng: &mut ChaCha8Rng) -> Vec<Patch> {
        let mut patches = Vec::new();
        for img in 0..6 {
            let label = img % 2;
            let rgb = if label == 0 {
                [0.75, 0.7, 0.5]
            } else {
                [0.1, 0.7, 0.2]
            };
            let id = format!("img{img}");
            for cell in 0..4 {
                patches.push(colored_patch(label, rgb, &id, cell, rng));
            }
        }
        patches
    }

    fn tiny_model(seed: u64) -> Model {
        Model::init(
            &ModelConfig {
                backbone: BackboneConfig {
                    input_side: 4,
                    hidden: vec![16],
                    feature_dim: 8,
                },
                head_hidden: 16,
                dropout_p: 0.1,
                num_classes: 2,
            },
            seed,
            InitScheme::FanInUniform,
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patches = two_class_patches(&mut rng);
        let mut model = tiny_model(7);
        let before = model.flatten();
        let cfg = SeafeatsConfig::new(0, ClassWeights::uniform(2));
        let SeafeatsOutcome { stats, bank, .. } = train_seafeats(&mut model, &patches, &cfg, &mut rng).unwrap();
        assert!(stats.is_empty());
        assert_eq!(bank.epoch, 0);
        assert_eq!(model.flatten(), before);
    }

    #[test]
    fn separable_classes_stop_flipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patches = two_class_patches(&mut rng);
        let mut model = tiny_model(8);
        let mut cfg = SeafeatsConfig::new(20, ClassWeights::uniform(2));
        cfg.lr = 1e-3;
        cfg.batch_images = 2;
        let SeafeatsOutcome { stats, bank, .. } = train_seafeats(&mut model, &patches, &cfg, &mut rng).unwrap();
        assert_eq!(bank.epoch, 20);
        assert!(
            stats.iter().any(|s| s.flips == 0),
            "pseudo-labels never settled: {:?}",
            stats.iter().map(|s| s.flips).collect::<Vec<_>>()
        );
        // Epoch counter advances by one per epoch.
        for (i, s) in stats.iter().enumerate() {
            assert_eq!(s.epoch, i as u32 + 1);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let patches = two_class_patches(&mut rng);
            let mut model = tiny_model(9);
            let mut cfg = SeafeatsConfig::new(3, ClassWeights::uniform(2));
            cfg.lr = 1e-3;
            train_seafeats(&mut model, &patches, &cfg, &mut rng).unwrap();
            model.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn template_bank_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bank.csv");
        let bank = compute_templates(
            &features(&[(0, &[&[3.0, 4.0]]), (2, &[&[1.0, 0.0], &[1.0, 1.0]])]),
            None,
        )
        .unwrap();
        save_template_bank(&path, &bank).unwrap();
        let back = load_template_bank(&path).unwrap();
        assert_eq!(back.templates[&0], bank.templates[&0]);
        assert_eq!(back.templates[&2], bank.templates[&2]);
    }

    #[test]
    fn stats_jsonl_appends() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stats.jsonl");
        let s = EpochStats {
            epoch: 1,
            mean_loss: 0.5,
            flips: 3,
            bank_drift: 0.01,
        };
        append_stats(&path, &[s.clone()]).unwrap();
        append_stats(&path, &[EpochStats { epoch: 2, ..s }]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"epoch\":1"));
    }
}
