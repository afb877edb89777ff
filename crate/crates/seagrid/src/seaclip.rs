//! The vision-language engine: zero-shot pseudo-labels from prompt groups
//! scored by a pluggable scorer, combined with the image-level species
//! label, then ordinary weighted-CE training of the patch classifier.
//!
//! The scorer abstraction keeps the artifact self-testing: a deterministic
//! mock stands in during development and tests, and a score-matrix CSV
//! adapter feeds in similarities dumped offline by a real encoder.

use crate::dataset::{Patch, BACKGROUND_CLASS};
use crate::error::{Error, Result};
use crate::losses::{softmax, weighted_ce, ClassWeights};
use crate::model::{Mode, Model, ModelGrads};
use crate::optim::AdamState;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

pub const GROUP_BACKGROUND: usize = 0;
pub const GROUP_SEAGRASS: usize = 1;
pub const GROUP_FISH: usize = 2;

/// A named set of query phrases mapped to one semantic group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptGroup {
    pub group_id: usize,
    pub name: String,
    pub prompts: Vec<String>,
}

/// Built-in prompt sets for the two evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    DeepSeagrass,
    GlobalWetlands,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepseagrass" => Ok(Scenario::DeepSeagrass),
            "global_wetlands" | "globalwetlands" => Ok(Scenario::GlobalWetlands),
            other => Err(Error::data(format!("unknown scenario '{other}'"))),
        }
    }
}

fn group(id: usize, name: &str, prompts: &[&str]) -> PromptGroup {
    PromptGroup {
        group_id: id,
        name: name.to_string(),
        prompts: prompts.iter().map(|p| p.to_string()).collect(),
    }
}

const SEAGRASS_PROMPTS: [&str; 6] = [
    "a blurry photo of seagrass",
    "a photo containing some seagrass",
    "a photo of underwater plants",
    "a photo of underwater grass",
    "a photo of green, grass-like leaves underwater",
    "a photo of seagrass",
];

pub fn builtin_prompt_groups(scenario: Scenario) -> Vec<PromptGroup> {
    match scenario {
        Scenario::DeepSeagrass => vec![
            group(
                GROUP_BACKGROUND,
                "background",
                &[
                    "a photo of sand",
                    "a photo of water",
                    "a photo of sand or water",
                    "a blurry photo of water",
                    "a blurry photo of sand",
                ],
            ),
            group(GROUP_SEAGRASS, "seagrass", &SEAGRASS_PROMPTS),
        ],
        Scenario::GlobalWetlands => vec![
            group(
                GROUP_BACKGROUND,
                "background",
                &[
                    "a photo of sand",
                    "a photo of blue water",
                    "a photo of murky, green water",
                    "a photo of sand or water",
                    "a blurry photo of water",
                    "a blurry photo of sand",
                ],
            ),
            group(GROUP_SEAGRASS, "seagrass", &SEAGRASS_PROMPTS),
            group(
                GROUP_FISH,
                "fish",
                &[
                    "a photo of fish",
                    "a close-up photo of fish",
                    "a blurry photo of fish",
                    "a photo containing part of a fish",
                    "a photo of fish scales",
                ],
            ),
        ],
    }
}

/// Groups must be non-empty and prompt strings unique across all groups.
pub fn validate_groups(groups: &[PromptGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::data("no prompt groups"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for g in groups {
        if g.prompts.is_empty() {
            return Err(Error::data(format!("prompt group '{}' is empty", g.name)));
        }
        for p in &g.prompts {
            if !seen.insert(p.as_str()) {
                return Err(Error::data(format!("duplicate prompt '{p}'")));
            }
        }
    }
    Ok(())
}

/// All prompts in concatenated group order; scorers are queried with
/// exactly this list.
pub fn all_prompts(groups: &[PromptGroup]) -> Vec<String> {
    groups.iter().flat_map(|g| g.prompts.clone()).collect()
}

/// Load prompt groups from a JSON file mirroring [`PromptGroup`].
pub fn load_prompt_groups(path: &Path) -> Result<Vec<PromptGroup>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let groups: Vec<PromptGroup> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    validate_groups(&groups)?;
    Ok(groups)
}

/// The group whose prompt has the highest raw similarity. Softmax over
/// prompt scores is monotone, so the argmax over similarities equals the
/// argmax over zero-shot probabilities; ties go to the lowest prompt index.
pub fn zero_shot_group(similarities: &[f64], groups: &[PromptGroup]) -> Result<usize> {
    let total: usize = groups.iter().map(|g| g.prompts.len()).sum();
    if similarities.len() != total {
        return Err(Error::data(format!(
            "{} similarities for {total} prompts",
            similarities.len()
        )));
    }
    let best = crate::dataset::argmax_lowest(similarities);
    let mut offset = 0;
    for g in groups {
        if best < offset + g.prompts.len() {
            return Ok(g.group_id);
        }
        offset += g.prompts.len();
    }
    unreachable!("argmax index within prompt count")
}

/// Zero-shot probabilities for reporting: softmax over `scale * similarity`.
/// The scale follows the common vision-language convention and never
/// changes the argmax.
pub fn zero_shot_probs(similarities: &[f64], scale: f64) -> Vec<f64> {
    let scaled: Vec<f64> = similarities.iter().map(|s| s * scale).collect();
    softmax(&scaled)
}

pub const DEFAULT_PROB_SCALE: f64 = 100.0;

/// Anything that can score a patch against a list of prompts. Scores must
/// be deterministic per (patch, prompts).
pub trait VlmScorer {
    fn score(&self, patch: &Patch, prompts: &[String]) -> Result<Vec<f64>>;
}

/// Map scorer verdicts to training labels: background verdicts become
/// class 0, seagrass verdicts inherit the patch's image-level label, and
/// fish verdicts (outlier mode) take the dedicated fish class id. Returned
/// labels are in patch order.
pub fn generate_pseudolabels(
    patches: &[Patch],
    scorer: &dyn VlmScorer,
    groups: &[PromptGroup],
    fish_class: Option<usize>,
) -> Result<Vec<usize>> {
    validate_groups(groups)?;
    let prompts = all_prompts(groups);
    let mut labels = Vec::with_capacity(patches.len());
    for patch in patches {
        let sims = scorer.score(patch, &prompts).map_err(|e| {
            Error::data(format!(
                "scorer failed on patch {}:{}:{}: {e}",
                patch.parent_id, patch.row, patch.col
            ))
        })?;
        let verdict = zero_shot_group(&sims, groups)?;
        let label = match verdict {
            GROUP_BACKGROUND => BACKGROUND_CLASS,
            GROUP_SEAGRASS => patch.inherited_label,
            GROUP_FISH => fish_class.ok_or_else(|| {
                Error::data("fish verdict but no fish class configured (outlier mode off)")
            })?,
            other => {
                return Err(Error::data(format!(
                    "prompt group id {other} has no label mapping"
                )))
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Deterministic stand-in for a vision-language scorer.
///
/// A patch embeds as mean-RGB statistics (green dominance, sand/water
/// likeness, low-colorfulness brightness); a prompt embeds as the semantic
/// axis named by its keywords plus a small hash jitter keyed on (prompt,
/// seed). The dot product makes green-dominant patches score highest on
/// seagrass prompts and sand- or water-colored patches on background
/// prompts by construction.
#[derive(Debug, Clone, Copy)]
pub struct MockScorer {
    seed: u64,
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        MockScorer { seed }
    }

    fn patch_embedding(patch: &Patch) -> [f64; 4] {
        let [r, g, b] = patch.pixels.channel_means();
        let greenness = g - r.max(b);
        let bgness = (r.min(g) - b).max(b - g);
        let fishness = (r + g + b) / 3.0 - 2.0 * (r.max(g).max(b) - r.min(g).min(b));
        [greenness, bgness, fishness, 1.0]
    }

    fn prompt_embedding(&self, prompt: &str) -> [f64; 4] {
        let text = prompt.to_lowercase();
        let mut dir = if text.contains("fish") {
            [0.0, 0.0, 1.0, 0.0]
        } else if ["seagrass", "grass", "plant", "leaves", "kelp"]
            .iter()
            .any(|k| text.contains(k))
        {
            [1.0, 0.0, 0.0, 0.0]
        } else if text.contains("sand") || text.contains("water") {
            [0.0, 1.0, 0.0, 0.0]
        } else {
            [0.0, 0.0, 0.0, 0.0]
        };
        let mut state = fnv1a(prompt.as_bytes()) ^ self.seed;
        for d in dir.iter_mut() {
            state = splitmix64(state);
            // Uniform jitter in [-0.02, 0.02] keeps prompts distinct
            // without overturning the keyword axis.
            *d += 0.04 * (state as f64 / u64::MAX as f64) - 0.02;
        }
        dir
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl VlmScorer for MockScorer {
    fn score(&self, patch: &Patch, prompts: &[String]) -> Result<Vec<f64>> {
        let e = Self::patch_embedding(patch);
        Ok(prompts
            .iter()
            .map(|p| {
                let d = self.prompt_embedding(p);
                e.iter().zip(&d).map(|(a, b)| a * b).sum()
            })
            .collect())
    }
}

/// Patch-by-prompt similarity scores dumped offline, keyed by
/// `(source_id, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub prompts: Vec<String>,
    rows: BTreeMap<(String, usize, usize), Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(prompts: Vec<String>) -> Self {
        ScoreMatrix {
            prompts,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, source_id: &str, row: usize, col: usize, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.prompts.len() {
            return Err(Error::data(format!(
                "{} scores for {} prompts",
                scores.len(),
                self.prompts.len()
            )));
        }
        if self
            .rows
            .insert((source_id.to_string(), row, col), scores)
            .is_some()
        {
            return Err(Error::data(format!(
                "duplicate score row {source_id}:{row}:{col}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, source_id: &str, row: usize, col: usize) -> Option<&Vec<f64>> {
        self.rows.get(&(source_id.to_string(), row, col))
    }
}

impl VlmScorer for ScoreMatrix {
    fn score(&self, patch: &Patch, prompts: &[String]) -> Result<Vec<f64>> {
        if prompts != self.prompts.as_slice() {
            return Err(Error::data(
                "score matrix prompts do not match the configured groups",
            ));
        }
        self.get(&patch.parent_id, patch.row, patch.col)
            .cloned()
            .ok_or_else(|| {
                Error::data(format!(
                    "no scores for patch {}:{}:{}",
                    patch.parent_id, patch.row, patch.col
                ))
            })
    }
}

/// Write a score matrix CSV: a `# prompts:` comment line with the verbatim
/// tab-separated prompts, then `source_id,row,col,s0,...,s{Q-1}` rows.
pub fn save_score_matrix(path: &Path, matrix: &ScoreMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "# prompts: {}", matrix.prompts.join("\t")).map_err(|e| Error::io(path, e))?;
    let cols: Vec<String> = (0..matrix.prompts.len()).map(|i| format!("s{i}")).collect();
    writeln!(out, "source_id,row,col,{}", cols.join(",")).map_err(|e| Error::io(path, e))?;
    for ((id, row, col), scores) in &matrix.rows {
        let vals: Vec<String> = scores.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{id},{row},{col},{}", vals.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parse a score matrix CSV and check its prompt line against `groups`
/// verbatim.
pub fn load_score_matrix(path: &Path, groups: &[PromptGroup]) -> Result<ScoreMatrix> {
    validate_groups(groups)?;
    let expected = all_prompts(groups);
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let comment = match lines.next() {
        Some((_, Ok(l))) => l,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::parse(path, 1, "empty score file")),
    };
    let prompts: Vec<String> = comment
        .strip_prefix("# prompts: ")
        .ok_or_else(|| Error::parse(path, 1, "first line must be '# prompts: <tab-separated>'"))?
        .split('\t')
        .map(String::from)
        .collect();
    if prompts != expected {
        return Err(Error::parse(
            path,
            1,
            "score file prompts do not match the configured groups",
        ));
    }
    let q = prompts.len();

    match lines.next() {
        Some((_, Ok(h))) => {
            let fields: Vec<&str> = h.trim().split(',').collect();
            if fields.len() != q + 3 || fields[..3] != ["source_id", "row", "col"] {
                return Err(Error::parse(path, 2, "expected header source_id,row,col,s0,..."));
            }
        }
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::parse(path, 2, "missing header line")),
    }

    let mut matrix = ScoreMatrix::new(prompts);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != q + 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {} columns, found {}", q + 3, fields.len()),
            ));
        }
        let row: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad row '{}'", fields[1])))?;
        let col: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad col '{}'", fields[2])))?;
        let mut scores = Vec::with_capacity(q);
        for f in &fields[3..] {
            scores.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float '{f}'")))?,
            );
        }
        matrix
            .insert(fields[0], row, col, scores)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    if matrix.is_empty() {
        return Err(Error::parse(path, 3, "score file has no data rows"));
    }
    Ok(matrix)
}

#[derive(Debug, Clone)]
pub struct SeaclipConfig {
    pub epochs: usize,
    /// Patches per optimizer step.
    pub batch_patches: usize,
    pub lr: f64,
    pub weights: ClassWeights,
}

impl SeaclipConfig {
    pub fn new(epochs: usize, weights: ClassWeights) -> Self {
        SeaclipConfig {
            epochs,
            batch_patches: 32,
            lr: crate::optim::DEFAULT_LR,
            weights,
        }
    }
}

/// Loss curve and final optimizer state from a SeaCLIP training run.
#[derive(Debug, Clone)]
pub struct SeaclipOutcome {
    pub curve: Vec<f64>,
    pub adam: AdamState,
}

/// Train on fixed pseudo-labels (no per-epoch refresh): Adam over the
/// weighted cross entropy, shuffled patch batches. Returns the per-epoch
/// mean loss curve.
pub fn train_seaclip<R: Rng>(
    model: &mut Model,
    patches: &[Patch],
    labels: &[usize],
    cfg: &SeaclipConfig,
    rng: &mut R,
) -> Result<SeaclipOutcome> {
    if patches.len() != labels.len() {
        return Err(Error::data(format!(
            "{} patches but {} pseudo-labels",
            patches.len(),
            labels.len()
        )));
    }
    if patches.is_empty() {
        return Err(Error::data("no patches to train on"));
    }
    let classes = model.num_classes();
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::data(format!(
            "pseudo-label {bad} at patch {i} exceeds {classes} classes"
        )));
    }
    cfg.weights.validate(classes)?;

    let mut flat = model.flatten();
    let mut adam = AdamState::new(flat.len(), cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_patches.max(1)) {
            let mut grads = ModelGrads::zeros_like(model);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (logits, cache) = model.forward(&patches[idx], Mode::Train, rng)?;
                let (loss, d_logits) = weighted_ce(&logits, labels[idx], &cfg.weights)?;
                grads.add_assign(&model.backward(&cache.expect("train cache"), &d_logits));
                batch_loss += loss;
            }
            grads.scale(1.0 / chunk.len() as f64);
            batch_loss /= chunk.len() as f64;
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
        curve.push(loss_sum / steps.max(1) as f64);
    }
    Ok(SeaclipOutcome { curve, adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pixels;
    use crate::model::{BackboneConfig, InitScheme, Model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn colored_patch(rgb: [f32; 3], label: usize) -> Patch {
        Patch {
            pixels: Pixels::from_fn(4, 4, |_, _| rgb),
            row: 0,
            col: 0,
            parent_id: "p".into(),
            inherited_label: label,
        }
    }

    #[test]
    fn builtin_groups_match_published_prompt_lists() {
        let ds = builtin_prompt_groups(Scenario::DeepSeagrass);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].prompts.len(), 5);
        assert_eq!(ds[1].prompts.len(), 6);
        assert_eq!(all_prompts(&ds).len(), 11);
        assert!(ds[1]
            .prompts
            .contains(&"a photo of green, grass-like leaves underwater".to_string()));
        validate_groups(&ds).unwrap();

        let gw = builtin_prompt_groups(Scenario::GlobalWetlands);
        assert_eq!(gw.len(), 3);
        assert_eq!(gw[0].prompts.len(), 6);
        assert_eq!(gw[1].prompts.len(), 6);
        assert_eq!(gw[2].prompts.len(), 5);
        assert!(gw[2].prompts.contains(&"a photo of fish scales".to_string()));
        validate_groups(&gw).unwrap();
    }

    fn two_groups() -> Vec<PromptGroup> {
        vec![
            PromptGroup {
                group_id: GROUP_BACKGROUND,
                name: "background".into(),
                prompts: vec!["bg a".into(), "bg b".into()],
            },
            PromptGroup {
                group_id: GROUP_SEAGRASS,
                name: "seagrass".into(),
                prompts: vec!["sg a".into()],
            },
        ]
    }

    #[test]
    fn zero_shot_group_argmax_membership() {
        let groups = two_groups();
        assert_eq!(zero_shot_group(&[0.2, 0.1, 0.3], &groups).unwrap(), GROUP_SEAGRASS);
        assert_eq!(zero_shot_group(&[0.5, 0.5, 0.5], &groups).unwrap(), GROUP_BACKGROUND);
        assert!(zero_shot_group(&[0.1], &groups).is_err());
    }

    #[test]
    fn zero_shot_group_matches_softmax_oracle() {
        let groups = builtin_prompt_groups(Scenario::GlobalWetlands);
        let q = all_prompts(&groups).len();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let sims: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direct = zero_shot_group(&sims, &groups).unwrap();
            let probs = zero_shot_probs(&sims, DEFAULT_PROB_SCALE);
            let via_softmax = zero_shot_group(&probs, &groups).unwrap();
            assert_eq!(direct, via_softmax);
        }
    }

    #[test]
    fn zero_shot_group_affine_invariant() {
        let groups = two_groups();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let sims: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let alpha = rng.random_range(0.01..5.0);
            let beta = rng.random_range(-3.0..3.0);
            let mapped: Vec<f64> = sims.iter().map(|s| alpha * s + beta).collect();
            assert_eq!(
                zero_shot_group(&sims, &groups).unwrap(),
                zero_shot_group(&mapped, &groups).unwrap()
            );
        }
    }

    #[test]
    fn duplicate_prompts_rejected() {
        let mut groups = two_groups();
        groups[1].prompts.push("bg a".into());
        assert!(validate_groups(&groups).is_err());
    }

    #[test]
    fn mock_scorer_semantic_construction() {
        let scorer = MockScorer::new(0);
        let groups = builtin_prompt_groups(Scenario::DeepSeagrass);
        let prompts = all_prompts(&groups);

        let green = colored_patch([0.0, 1.0, 0.0], 1);
        let sims = scorer.score(&green, &prompts).unwrap();
        assert_eq!(zero_shot_group(&sims, &groups).unwrap(), GROUP_SEAGRASS);

        let sand = colored_patch([0.8, 0.7, 0.5], 1);
        let sims = scorer.score(&sand, &prompts).unwrap();
        assert_eq!(zero_shot_group(&sims, &groups).unwrap(), GROUP_BACKGROUND);

        let again = scorer.score(&sand, &prompts).unwrap();
        assert_eq!(sims, again);
    }

    #[test]
    fn mock_scorer_detects_fish_in_outlier_mode() {
        let scorer = MockScorer::new(3);
        let groups = builtin_prompt_groups(Scenario::GlobalWetlands);
        let prompts = all_prompts(&groups);
        let fishy = colored_patch([0.55, 0.55, 0.65], 1);
        let sims = scorer.score(&fishy, &prompts).unwrap();
        assert_eq!(zero_shot_group(&sims, &groups).unwrap(), GROUP_FISH);
    }

    #[test]
    fn pseudolabels_follow_stated_rules() {
        let scorer = MockScorer::new(1);
        let groups = builtin_prompt_groups(Scenario::DeepSeagrass);
        // Hand-walked six-patch set: three colors times two image labels.
        let ferny = 1usize;
        let strappy = 3usize;
        let patches = vec![
            colored_patch([0.1, 0.8, 0.2], ferny),   // green on Ferny image
            colored_patch([0.8, 0.7, 0.5], ferny),   // sand on Ferny image
            colored_patch([0.1, 0.8, 0.2], strappy), // green on Strappy image
            colored_patch([0.8, 0.7, 0.5], strappy), // sand on Strappy image
            colored_patch([0.1, 0.8, 0.2], 0),       // green on Background image
            colored_patch([0.2, 0.3, 0.7], 0),       // water on Background image
        ];
        let labels = generate_pseudolabels(&patches, &scorer, &groups, None).unwrap();
        // Seagrass verdicts inherit the image label (0 stays 0 on a
        // background image); background verdicts become class 0.
        assert_eq!(labels, vec![ferny, 0, strappy, 0, 0, 0]);
    }

    #[test]
    fn fish_without_fish_class_is_error() {
        let scorer = MockScorer::new(3);
        let groups = builtin_prompt_groups(Scenario::GlobalWetlands);
        let fishy = colored_patch([0.55, 0.55, 0.65], 1);
        assert!(generate_pseudolabels(&[fishy.clone()], &scorer, &groups, None).is_err());
        let labels = generate_pseudolabels(&[fishy], &scorer, &groups, Some(2)).unwrap();
        assert_eq!(labels, vec![2]);
    }

    #[test]
    fn score_matrix_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let groups = two_groups();
        let mut matrix = ScoreMatrix::new(all_prompts(&groups));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..20 {
            let scores: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            matrix.insert("img", i / 4, i % 4, scores).unwrap();
        }
        save_score_matrix(&path, &matrix).unwrap();
        let back = load_score_matrix(&path, &groups).unwrap();
        assert_eq!(back, matrix);
    }

    #[test]
    fn score_matrix_rejects_wrong_prompts_and_columns() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(
            &path,
            "# prompts: bg a\tbg b\tsg a\nsource_id,row,col,s0,s1,s2\nimg,0,0,1,2\n",
        )
        .unwrap();
        let groups = two_groups();
        match load_score_matrix(&path, &groups) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut other_groups = two_groups();
        other_groups[0].prompts[0] = "different".into();
        assert!(load_score_matrix(&path, &other_groups).is_err());
    }

    #[test]
    fn score_matrix_single_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let groups = two_groups();
        let mut matrix = ScoreMatrix::new(all_prompts(&groups));
        matrix.insert("only", 0, 0, vec![0.1, 0.2, 0.3]).unwrap();
        save_score_matrix(&path, &matrix).unwrap();
        let back = load_score_matrix(&path, &groups).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("only", 0, 0).unwrap(), &vec![0.1, 0.2, 0.3]);
    }

    fn tiny_model(seed: u64, classes: usize) -> Model {
        Model::init(
            &ModelConfig {
                backbone: BackboneConfig {
                    input_side: 4,
                    hidden: vec![16],
                    feature_dim: 8,
                },
                head_hidden: 16,
                dropout_p: 0.1,
                num_classes: classes,
            },
            seed,
            InitScheme::FanInUniform,
        )
        .unwrap()
    }

    fn labeled_color_patches(rng: &mut ChaCha8Rng) -> (Vec<Patch>, Vec<usize>) {
        let mut patches = Vec::new();
        let mut labels = Vec::new();
        for i in 0..24 {
            let label = i % 2;
            let rgb = if label == 0 {
                [0.75, 0.7, 0.5]
            } else {
                [0.1, 0.7, 0.2]
            };
            let mut p = colored_patch(rgb, label);
            for v in p.pixels.data_mut() {
                *v = (*v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            }
            p.parent_id = format!("img{i}");
            patches.push(p);
            labels.push(label);
        }
        (patches, labels)
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (patches, labels) = labeled_color_patches(&mut rng);
        let mut model = tiny_model(1, 2);
        let before = model.flatten();
        let cfg = SeaclipConfig::new(0, ClassWeights::uniform(2));
        let SeaclipOutcome { curve, .. } = train_seaclip(&mut model, &patches, &labels, &cfg, &mut rng).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model.flatten(), before);
    }

    #[test]
    fn separable_data_loss_trends_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (patches, labels) = labeled_color_patches(&mut rng);
        let mut model = tiny_model(2, 2);
        let mut cfg = SeaclipConfig::new(10, ClassWeights::uniform(2));
        cfg.lr = 1e-3;
        cfg.batch_patches = 8;
        let SeaclipOutcome { curve, .. } = train_seaclip(&mut model, &patches, &labels, &cfg, &mut rng).unwrap();
        assert_eq!(curve.len(), 10);
        assert!(
            curve.last().unwrap() < curve.first().unwrap(),
            "loss did not fall: {curve:?}"
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(35);
            let (patches, labels) = labeled_color_patches(&mut rng);
            let mut model = tiny_model(3, 2);
            let mut cfg = SeaclipConfig::new(3, ClassWeights::uniform(2));
            cfg.lr = 1e-3;
            train_seaclip(&mut model, &patches, &labels, &cfg, &mut rng).unwrap();
            model.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prompt_groups_json_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("groups.json");
        let groups = builtin_prompt_groups(Scenario::DeepSeagrass);
        std::fs::write(&path, serde_json::to_string_pretty(&groups).unwrap()).unwrap();
        let back = load_prompt_groups(&path).unwrap();
        assert_eq!(back, groups);
    }
}
