//! Command-line pipeline: pretrain, pseudolabel, train, infer, eval,
//! finetune. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numeric failure. Every subcommand accepts `--seed` and is
//! deterministic given it; log verbosity comes from `SEAGRID_LOG`
//! (error, info or debug; warnings by default).

use crate::augment::AugConfig;
use crate::checkpoint::Checkpoint;
use crate::config::PipelineConfig;
use crate::dataset::{
    color_correct, decode_pixels, file_stem, load_dataset, read_class_manifest, tile_image,
    GridSpec, LabeledImage, Patch,
};
use crate::ensemble::predict_mask;
use crate::error::{Error, Result};
use crate::mask::{load_mask_json, save_mask_json, save_mask_png, MaskFile};
use crate::metrics::{collapse_binary, ConfusionMatrix, MetricReport};
use crate::model::{FeatureSource, InitScheme, Model};
use crate::pseudolabel::{labels_for_patches, read_pseudolabels, records_for, write_pseudolabels};
use crate::seaclip::{
    builtin_prompt_groups, generate_pseudolabels, load_prompt_groups, load_score_matrix,
    train_seaclip, MockScorer, PromptGroup, Scenario, VlmScorer, GROUP_FISH,
};
use crate::seafeats::{
    append_stats, assign_pseudolabel, compute_templates, train_seafeats, save_template_bank,
};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "seagrid", version, about = "Coarse seagrass segmentation from image-level labels")]
struct Cli {
    /// RNG seed; overrides the config file's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining of the feature extractor (no labels used)
    Pretrain {
        /// Dataset root: one subdirectory per class plus classes.txt
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output checkpoint (encoder only)
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-patch pseudo-labels as inspectable JSON lines
    Pseudolabel {
        #[command(subcommand)]
        engine: PseudolabelCmd,
    },
    /// Train a patch classifier
    Train {
        #[command(subcommand)]
        engine: TrainCmd,
    },
    /// Predict coarse masks for an image or a directory of images
    Infer(InferArgs),
    /// Score predicted masks against ground-truth masks
    Eval(EvalArgs),
    /// Few-shot fine-tuning of a trained checkpoint with augmentation
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PseudolabelCmd {
    /// Template-similarity labels from an encoder checkpoint
    Seafeats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output JSONL
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also dump the template bank as a feature CSV
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Vision-language labels from a score file (or the built-in mock scorer)
    Seaclip {
        #[arg(long)]
        data: PathBuf,
        /// Patch-by-prompt similarity CSV dumped offline; defaults to the
        /// deterministic mock scorer when absent
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prompt-group JSON overriding the built-in scenario
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Built-in prompt scenario: deepseagrass or global_wetlands
        #[arg(long, default_value = "deepseagrass")]
        scenario: String,
        /// Grid override (RxC); defaults to the config grid
        #[arg(long)]
        grid: Option<String>,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Template pseudo-labels refreshed every epoch
    Seafeats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encoder checkpoint to start from (e.g. a pretraining run)
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Fixed vision-language pseudo-labels
    Seaclip {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Pseudo-label JSONL (from `pseudolabel seaclip`); generated
        /// in-process when absent
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long, default_value = "deepseagrass")]
        scenario: String,
    },
}

#[derive(Args)]
struct InferArgs {
    /// Single image file
    #[arg(long, conflicts_with = "dir")]
    image: Option<PathBuf>,
    /// Directory of images (flat, or one subdirectory per class)
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Grid as RxC, e.g. 5x8
    #[arg(long)]
    grid: String,
    /// First (or only) ensemble member
    #[arg(long)]
    ckpt_a: PathBuf,
    /// Second ensemble member
    #[arg(long)]
    ckpt_b: Option<PathBuf>,
    /// Output directory for mask JSON files
    #[arg(long)]
    out: PathBuf,
    /// Also render a color PNG heatmap per mask
    #[arg(long)]
    png: bool,
    /// Parallel workers for per-image inference
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Gray-world color correction before tiling
    #[arg(long)]
    color_correct: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted mask JSON files
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth mask JSON files
    #[arg(long)]
    truth: PathBuf,
    /// Collapse all seagrass classes into one before scoring
    #[arg(long)]
    binary: bool,
    /// Treat the last class as an outlier (fish) class
    #[arg(long)]
    outlier: bool,
    /// Report JSON output path
    #[arg(long)]
    report: PathBuf,
    /// Class manifest for report names
    #[arg(long)]
    classes: Option<PathBuf>,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SEAGRID_LOG", "warn"),
    )
    .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { data, config, out } => cmd_pretrain(&data, &config, &out, cli.seed),
        Command::Pseudolabel { engine } => match engine {
            PseudolabelCmd::Seafeats {
                data,
                ckpt,
                out,
                config,
                bank,
            } => cmd_pseudolabel_seafeats(&data, &ckpt, &out, config.as_deref(), bank.as_deref()),
            PseudolabelCmd::Seaclip {
                data,
                scores,
                out,
                config,
                prompts,
                scenario,
                grid,
            } => cmd_pseudolabel_seaclip(
                &data,
                scores.as_deref(),
                &out,
                config.as_deref(),
                prompts.as_deref(),
                &scenario,
                grid.as_deref(),
                cli.seed,
            ),
        },
        Command::Train { engine } => match engine {
            TrainCmd::Seafeats {
                data,
                config,
                out,
                init,
            } => cmd_train_seafeats(&data, &config, &out, init.as_deref(), cli.seed),
            TrainCmd::Seaclip {
                data,
                config,
                out,
                init,
                labels,
                scores,
                prompts,
                scenario,
            } => cmd_train_seaclip(
                &data,
                &config,
                &out,
                init.as_deref(),
                labels.as_deref(),
                scores.as_deref(),
                prompts.as_deref(),
                &scenario,
                cli.seed,
            ),
        },
        Command::Infer(args) => cmd_infer(args, cli.seed),
        Command::Eval(args) => cmd_eval(args),
        Command::Finetune {
            ckpt,
            data,
            epochs,
            out,
            config,
        } => cmd_finetune(&ckpt, &data, epochs, &out, config.as_deref(), cli.seed),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn resolve_seed(cli_seed: Option<u64>, cfg: &PipelineConfig) -> u64 {
    cli_seed.unwrap_or(cfg.seed)
}

/// Load the class tree and tile every image with the given grid.
fn load_and_tile(data: &Path, grid: GridSpec) -> Result<(Vec<String>, Vec<LabeledImage>, Vec<Patch>)> {
    let classes = read_class_manifest(&data.join("classes.txt"))?;
    let images = load_dataset(data, &classes)?;
    let mut patches = Vec::new();
    for image in &images {
        patches.extend(tile_image(image, grid)?);
    }
    Ok((classes, images, patches))
}

fn cmd_pretrain(data: &Path, config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = PipelineConfig::from_file(config)?;
    let seed = resolve_seed(seed, &cfg);
    let (classes, _, patches) = load_and_tile(data, cfg.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backbone = crate::model::MlpBackbone::init(
        &mut rng,
        cfg.model_config(classes.len()).backbone,
        InitScheme::FanInUniform,
    );
    let curve = crate::pretext::pretrain(&mut backbone, &patches, &cfg.pretext_config(), &mut rng)?;
    Checkpoint::encoder_only(classes, cfg.grid, backbone).save(out)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!(
            "pretrained {} epochs on {} patches, loss {first:.4} -> {last:.4}",
            curve.len(),
            patches.len()
        );
    }
    Ok(())
}

fn cmd_pseudolabel_seafeats(
    data: &Path,
    ckpt: &Path,
    out: &Path,
    config: Option<&Path>,
    bank_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let ckpt = Checkpoint::load(ckpt)?;
    let (_, _, patches) = load_and_tile(data, ckpt.grid)?;
    let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut features = Vec::with_capacity(patches.len());
    for patch in &patches {
        let f = ckpt.backbone.features(patch)?;
        by_class.entry(patch.inherited_label).or_default().push(f.clone());
        features.push(f);
    }
    let bank = compute_templates(&by_class, cfg.template_cap)?;
    let mut labels = Vec::with_capacity(patches.len());
    for (patch, f) in patches.iter().zip(&features) {
        labels.push(assign_pseudolabel(f, &bank, patch.inherited_label)?.label);
    }
    write_pseudolabels(out, &records_for(&patches, &labels, "seafeats"))?;
    if let Some(bank_path) = bank_out {
        save_template_bank(bank_path, &bank)?;
    }
    let flipped = patches
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| l != p.inherited_label)
        .count();
    println!(
        "labeled {} patches ({flipped} flipped to background)",
        labels.len()
    );
    Ok(())
}

/// Built-in or file-based prompt groups.
fn resolve_groups(prompts: Option<&Path>, scenario: &str) -> Result<Vec<PromptGroup>> {
    match prompts {
        Some(path) => load_prompt_groups(path),
        None => Ok(builtin_prompt_groups(scenario.parse::<Scenario>()?)),
    }
}

/// The class id a fish verdict maps to: a manifest entry named "fish" when
/// present, otherwise a fresh id appended after the listed classes.
fn resolve_fish_class(groups: &[PromptGroup], classes: &[String]) -> Option<usize> {
    groups.iter().any(|g| g.group_id == GROUP_FISH).then(|| {
        classes
            .iter()
            .position(|n| n.eq_ignore_ascii_case("fish"))
            .unwrap_or(classes.len())
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_pseudolabel_seaclip(
    data: &Path,
    scores: Option<&Path>,
    out: &Path,
    config: Option<&Path>,
    prompts: Option<&Path>,
    scenario: &str,
    grid: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = resolve_seed(seed, &cfg);
    let grid = match grid {
        Some(g) => g.parse()?,
        None => cfg.grid,
    };
    let groups = resolve_groups(prompts, scenario)?;
    let (classes, _, patches) = load_and_tile(data, grid)?;
    let fish_class = resolve_fish_class(&groups, &classes);
    let scorer: Box<dyn VlmScorer> = match scores {
        Some(path) => Box::new(load_score_matrix(path, &groups)?),
        None => Box::new(MockScorer::new(seed)),
    };
    let labels = generate_pseudolabels(&patches, scorer.as_ref(), &groups, fish_class)?;
    write_pseudolabels(out, &records_for(&patches, &labels, "seaclip"))?;
    println!("labeled {} patches across {} prompt groups", labels.len(), groups.len());
    Ok(())
}

/// Model from an optional encoder checkpoint plus a fresh head, or fully
/// fresh when no checkpoint is given.
fn init_model(
    cfg: &PipelineConfig,
    num_classes: usize,
    init: Option<&Path>,
    seed: u64,
) -> Result<Model> {
    let model_cfg = cfg.model_config(num_classes);
    let mut model = Model::init(&model_cfg, seed, InitScheme::FanInUniform)?;
    if let Some(path) = init {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.backbone.cfg.feature_dim != model_cfg.backbone.feature_dim {
            return Err(Error::data(format!(
                "init checkpoint feature dim {} differs from configured {}",
                ckpt.backbone.cfg.feature_dim, model_cfg.backbone.feature_dim
            )));
        }
        model.backbone = ckpt.backbone;
        if let Some(head) = ckpt.head {
            if head.num_classes() == num_classes {
                model.head = head;
            } else {
                log::info!("init checkpoint head has different class count; reinitializing head");
            }
        }
    }
    Ok(model)
}

fn cmd_train_seafeats(
    data: &Path,
    config: &Path,
    out: &Path,
    init: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = PipelineConfig::from_file(config)?;
    let seed = resolve_seed(seed, &cfg);
    let (classes, _, patches) = load_and_tile(data, cfg.grid)?;
    let mut model = init_model(&cfg, classes.len(), init, seed)?;
    let train_cfg = cfg.seafeats_config(classes.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let outcome = train_seafeats(&mut model, &patches, &train_cfg, &mut rng)?;
    let stats_path = out.with_extension("stats.jsonl");
    if stats_path.exists() {
        std::fs::remove_file(&stats_path).map_err(|e| Error::io(&stats_path, e))?;
    }
    append_stats(&stats_path, &outcome.stats)?;
    Checkpoint::trained(classes, cfg.grid, model, Some(outcome.adam)).save(out)?;
    if let Some(last) = outcome.stats.last() {
        println!(
            "trained {} epochs, final loss {:.4}, {} flips, bank drift {:.4}",
            outcome.stats.len(),
            last.mean_loss,
            last.flips,
            last.bank_drift
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_seaclip(
    data: &Path,
    config: &Path,
    out: &Path,
    init: Option<&Path>,
    labels_path: Option<&Path>,
    scores: Option<&Path>,
    prompts: Option<&Path>,
    scenario: &str,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = PipelineConfig::from_file(config)?;
    let seed = resolve_seed(seed, &cfg);
    let (classes, _, patches) = load_and_tile(data, cfg.grid)?;
    let groups = resolve_groups(prompts, scenario)?;
    let labels = match labels_path {
        Some(path) => labels_for_patches(&read_pseudolabels(path)?, &patches)?,
        None => {
            let fish_class = resolve_fish_class(&groups, &classes);
            let scorer: Box<dyn VlmScorer> = match scores {
                Some(path) => Box::new(load_score_matrix(path, &groups)?),
                None => Box::new(MockScorer::new(seed)),
            };
            generate_pseudolabels(&patches, scorer.as_ref(), &groups, fish_class)?
        }
    };
    // A fish verdict may introduce one class beyond the manifest.
    let num_classes = classes
        .len()
        .max(labels.iter().max().map(|m| m + 1).unwrap_or(0));
    let mut classes = classes;
    while classes.len() < num_classes {
        classes.push("Fish".to_string());
    }
    let mut model = init_model(&cfg, num_classes, init, seed)?;
    let train_cfg = cfg.seaclip_config(num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let outcome = train_seaclip(&mut model, &patches, &labels, &train_cfg, &mut rng)?;
    Checkpoint::trained(classes, cfg.grid, model, Some(outcome.adam)).save(out)?;
    if let (Some(first), Some(last)) = (outcome.curve.first(), outcome.curve.last()) {
        println!(
            "trained {} epochs, loss {first:.4} -> {last:.4}",
            outcome.curve.len()
        );
    }
    Ok(())
}

/// Collect (source_id, image) pairs for inference: a single file, a flat
/// directory, or a one-level class tree whose ids match the dataset loader.
fn collect_inference_images(args: &InferArgs) -> Result<Vec<(String, PathBuf)>> {
    let mut jobs = Vec::new();
    if let Some(image) = &args.image {
        jobs.push((file_stem(image), image.clone()));
        return Ok(jobs);
    }
    let dir = args
        .dir
        .as_ref()
        .ok_or_else(|| Error::data("infer needs --image or --dir"))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    for entry in entries {
        let name = entry
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        if name.starts_with('.') || name == "classes.txt" {
            continue;
        }
        if entry.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&entry)
                .map_err(|e| Error::io(&entry, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for file in files {
                if file_stem(&file).starts_with('.') {
                    continue;
                }
                jobs.push((format!("{name}__{}", file_stem(&file)), file));
            }
        } else if entry.is_file() {
            jobs.push((file_stem(&entry), entry));
        }
    }
    if jobs.is_empty() {
        return Err(Error::data(format!("no images under {}", dir.display())));
    }
    Ok(jobs)
}

fn cmd_infer(args: InferArgs, _seed: Option<u64>) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let grid: GridSpec = args.grid.parse()?;
    let ckpt_a = Checkpoint::load(&args.ckpt_a)?;
    let model_a = ckpt_a.model()?;
    let model_b = match &args.ckpt_b {
        Some(path) => Some(Checkpoint::load(path)?.model()?),
        None => None,
    };
    let ensemble_cfg = cfg.ensemble_config();
    let jobs = collect_inference_images(&args)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let process = |(source_id, path): &(String, PathBuf)| -> Result<(String, MaskFile)> {
        let mut image = LabeledImage {
            pixels: decode_pixels(path)?,
            label: 0,
            source_id: source_id.clone(),
        };
        if let Some((h, w)) = cfg.resize {
            image.pixels = image.pixels.resize(h, w);
        }
        if args.color_correct {
            image = color_correct(&image);
        }
        let mask = predict_mask(&image, grid, &model_a, model_b.as_ref(), &ensemble_cfg)?;
        Ok((source_id.clone(), MaskFile::new(source_id.clone(), &mask)))
    };

    let results: Vec<Result<(String, MaskFile)>> = if args.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::data(format!("cannot build thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(process).collect())
    } else {
        jobs.iter().map(process).collect()
    };

    let mut written = 0usize;
    for result in results {
        let (source_id, mask_file) = result?;
        let json_path = args.out.join(format!("{source_id}.json"));
        save_mask_json(&json_path, &mask_file)?;
        if args.png {
            let mask = mask_file.clone().into_mask()?;
            save_mask_png(&args.out.join(format!("{source_id}.png")), &mask)?;
        }
        written += 1;
    }
    println!("wrote {written} masks to {}", args.out.display());
    Ok(())
}

fn mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(format!("no mask JSON files in {}", dir.display())));
    }
    Ok(files)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let truth_files = mask_files(&args.truth)?;
    let mut pairs = Vec::new();
    let mut max_label = 0usize;
    for truth_path in &truth_files {
        let stem = file_stem(truth_path);
        let pred_path = args.pred.join(format!("{stem}.json"));
        if !pred_path.is_file() {
            return Err(Error::data(format!(
                "no prediction for {stem} under {}",
                args.pred.display()
            )));
        }
        let truth = load_mask_json(truth_path)?;
        let pred = load_mask_json(&pred_path)?;
        if truth.rows != pred.rows || truth.cols != pred.cols {
            return Err(Error::data(format!(
                "mask shape mismatch for {stem}: truth {}x{}, pred {}x{}",
                truth.rows, truth.cols, pred.rows, pred.cols
            )));
        }
        for row in truth.labels.iter().chain(pred.labels.iter()) {
            for &l in row {
                max_label = max_label.max(l);
            }
        }
        pairs.push((truth, pred));
    }

    let classes = (max_label + 1).max(2);
    let mut cm = ConfusionMatrix::new(classes);
    for (truth, pred) in &pairs {
        for (trow, prow) in truth.labels.iter().zip(&pred.labels) {
            for (&t, &p) in trow.iter().zip(prow) {
                cm.accumulate(t, p)?;
            }
        }
    }

    let mut names: Vec<String> = match &args.classes {
        Some(path) => read_class_manifest(path)?,
        None => (0..classes)
            .map(|c| if c == 0 { "Background".to_string() } else { format!("Class{c}") })
            .collect(),
    };
    if args.outlier && args.classes.is_none() && classes >= 2 {
        names[classes - 1] = "Fish".to_string();
    }

    let report = if args.binary {
        let fish = args
            .outlier
            .then(|| {
                names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case("fish"))
                    .unwrap_or(classes - 1)
            });
        let seagrass_ids: Vec<usize> = (1..classes).filter(|c| Some(*c) != fish).collect();
        let binary = collapse_binary(&cm, &seagrass_ids)?;
        MetricReport::from_confusion(
            &binary,
            &["Background".to_string(), "Seagrass".to_string()],
        )?
    } else {
        MetricReport::from_confusion(&cm, &names)?
    };

    let file = std::fs::File::create(&args.report).map_err(|e| Error::io(&args.report, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)
        .map_err(|e| Error::data(format!("cannot write report: {e}")))?;
    print!("{}", report.to_text_table());
    Ok(())
}

fn cmd_finetune(
    ckpt_path: &Path,
    data: &Path,
    epochs: usize,
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = resolve_seed(seed, &cfg);
    let ckpt = Checkpoint::load(ckpt_path)?;
    let mut model = ckpt.model()?;
    let (classes, images, patches) = load_and_tile(data, ckpt.grid)?;
    if classes.len() > model.num_classes() {
        return Err(Error::data(format!(
            "fine-tuning data has {} classes but the checkpoint supports {}",
            classes.len(),
            model.num_classes()
        )));
    }
    let mut train_cfg = cfg.seafeats_config(model.num_classes())?;
    train_cfg.epochs = epochs;
    train_cfg.aug = Some(AugConfig::finetune(None));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let outcome = train_seafeats(&mut model, &patches, &train_cfg, &mut rng)?;
    Checkpoint::trained(ckpt.class_names, ckpt.grid, model, Some(outcome.adam)).save(out)?;
    println!(
        "fine-tuned on {} images ({} patches) for {epochs} epochs",
        images.len(),
        patches.len()
    );
    Ok(())
}
