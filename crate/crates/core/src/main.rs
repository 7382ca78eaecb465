use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fcpl::descriptor::{self, VideoDescriptorSet};
use fcpl::localization::{localize_all, matching_eval, read_matches, write_matches, LocalizeConfig};
use fcpl::net::load_checkpoint;
use fcpl::retrieval::{micro_ap, read_ranked, search_all, write_ranked, GroundTruthIndex};
use fcpl::trainer::{extract_gt_image_pairs, objective_grad_errors, run_pipeline, GtImagePair, TrainConfig};
use fcpl::transform::io::{export_dataset, export_videos, load_dataset, load_videos, read_gt, write_gt, GT_FILE};
use fcpl::transform::{build_dataset_with, build_video_benchmark, BenchmarkConfig, ChainSampler, DatasetConfig, TransformFamily};
use fcpl::{FcplError, Result};

const REFS_DIR: &str = "refs";
const QUERIES_DIR: &str = "queries";
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "fcpl", version, about = "Train compatible embedding ensembles and detect copied video segments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the image training set (originals plus edited copies).
    GenData(GenData),
    /// Generate reference videos, query videos with planted copies and gt.tsv.
    GenVideos(GenVideos),
    /// Train the base, compatible and (with --gt-pairs) fine-tuned models.
    Train(Train),
    /// Extract per-frame descriptors for every model matching a glob.
    Extract(Extract),
    /// Average per-model descriptors into one ensemble descriptor per video.
    Ensemble(Ensemble),
    /// Rank reference videos for every query video.
    Search(Search),
    /// Micro average precision of a ranked pair file.
    EvalDescriptor(EvalDescriptor),
    /// Localize copied segments between every query and reference.
    Localize(Localize),
    /// Segment recall and micro AP of localized segments.
    EvalMatching(EvalMatching),
    /// Finite-difference check of every training objective.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    copies: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Transform family left out of the copy edits; repeatable.
    #[arg(long)]
    exclude: Vec<TransformFamily>,
}

#[derive(Args)]
struct GenVideos {
    #[arg(long)]
    refs: usize,
    /// Number of queries containing a copied segment.
    #[arg(long)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    len_s: f64,
    #[arg(long, default_value_t = 1.0)]
    fps: f64,
    /// Families to draw copy edits from, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    families: Vec<TransformFamily>,
    /// Family removed from the edit menu; repeatable.
    #[arg(long)]
    exclude: Vec<TransformFamily>,
    #[arg(long, default_value_t = 2)]
    max_chain_len: usize,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// gt.tsv with sibling `queries/` and `refs/` video directories.
    #[arg(long)]
    gt_pairs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Extract {
    #[arg(long)]
    models: String,
    #[arg(long)]
    videos: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Ensemble {
    /// Directory of per-model descriptor directories.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Search {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalDescriptor {
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct Localize {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = LocalizeConfig::default().candidate_threshold)]
    threshold: f64,
    #[arg(long, default_value_t = LocalizeConfig::default().max_gap_s)]
    max_gap: f64,
    #[arg(long, default_value_t = LocalizeConfig::default().min_path_len)]
    min_path_len: usize,
    #[arg(long, default_value_t = LocalizeConfig::default().max_segments)]
    max_segments: usize,
}

#[derive(Args)]
struct EvalMatching {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::GenVideos(a) => gen_videos(a),
        Command::Train(a) => train(a),
        Command::Extract(a) => extract(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Search(a) => {
            let queries = descriptor::load_dir(&a.queries)?;
            let refs = descriptor::load_dir(&a.refs)?;
            write_ranked(&a.out, &search_all(&queries, &refs, a.top_k)?)
        }
        Command::EvalDescriptor(a) => {
            let ranked = read_ranked(&a.ranked)?;
            let gt = GroundTruthIndex::from_segments(&read_gt(&a.gt)?);
            println!("muAP\t{}", micro_ap(&ranked, &gt)?);
            Ok(())
        }
        Command::Localize(a) => {
            let config = LocalizeConfig {
                candidate_threshold: a.threshold,
                max_gap_s: a.max_gap,
                min_path_len: a.min_path_len,
                max_segments: a.max_segments,
            };
            config.validate()?;
            let queries = descriptor::load_dir(&a.queries)?;
            let refs = descriptor::load_dir(&a.refs)?;
            write_matches(&a.out, &localize_all(&queries, &refs, &config)?)
        }
        Command::EvalMatching(a) => {
            let m = matching_eval(&read_matches(&a.pred)?, &read_gt(&a.gt)?)?;
            println!("muAP\t{}", m.micro_ap);
            println!("recall@0.5\t{}", m.recall);
            Ok(())
        }
        Command::GradCheck(a) => {
            let errors = objective_grad_errors(a.seed, a.eps)?;
            let mut worst = 0.0f64;
            for (term, err) in &errors {
                println!("{term}\t{err:e}");
                worst = worst.max(*err);
            }
            println!("max_rel_error\t{worst:e}");
            if worst >= GRAD_TOLERANCE {
                eprintln!("error: relative gradient error {worst:e} exceeds {GRAD_TOLERANCE:e}");
                std::process::exit(2);
            }
            Ok(())
        }
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let mut sampler = ChainSampler::default();
    for f in a.exclude {
        sampler = sampler.excluding(f);
    }
    let config = DatasetConfig {
        sampler,
        ..DatasetConfig::new(a.classes, a.copies)
    };
    export_dataset(&a.out, &build_dataset_with(&config, a.seed)?)
}

fn gen_videos(a: GenVideos) -> Result<()> {
    let families = if a.families.is_empty() {
        TransformFamily::ALL.to_vec()
    } else {
        a.families
    };
    let mut sampler = ChainSampler::new((1, a.max_chain_len.max(1)), families)?;
    for f in a.exclude {
        sampler = sampler.excluding(f);
    }
    let config = BenchmarkConfig {
        num_refs: a.refs,
        num_positive: a.queries,
        num_distractors: a.distractors,
        video_len_s: a.len_s,
        fps: a.fps,
        sampler,
        ..BenchmarkConfig::default()
    };
    let bench = build_video_benchmark(&config, a.seed)?;
    export_videos(&a.out.join(REFS_DIR), &bench.refs)?;
    export_videos(&a.out.join(QUERIES_DIR), &bench.queries)?;
    write_gt(&a.out.join(GT_FILE), &bench.ground_truth)
}

fn train(a: Train) -> Result<()> {
    let config = TrainConfig::from_file(&a.config)?;
    let classes = load_dataset(&a.data)?;
    let pairs: Vec<GtImagePair> = match &a.gt_pairs {
        Some(gt_path) => {
            let root = gt_path.parent().unwrap_or(Path::new("."));
            let gt = read_gt(gt_path)?;
            let queries = load_videos(&root.join(QUERIES_DIR))?;
            let refs = load_videos(&root.join(REFS_DIR))?;
            extract_gt_image_pairs(&gt, &queries, &refs)?
        }
        None => {
            eprintln!("warning: no --gt-pairs given; skipping ground-truth fine-tuning");
            Vec::new()
        }
    };
    if a.gt_pairs.is_some() && pairs.is_empty() {
        return Err(FcplError::InvalidArgument("ground-truth file yields no image pairs".into()));
    }
    let out = run_pipeline(&classes, &pairs, &config, &a.out)?;
    for path in &out.checkpoints {
        println!("{}", path.display());
    }
    Ok(())
}

fn extract(a: Extract) -> Result<()> {
    let mut models: Vec<PathBuf> = glob::glob(&a.models)
        .map_err(|e| FcplError::InvalidArgument(format!("bad glob `{}`: {e}", a.models)))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| FcplError::InvalidArgument(format!("glob `{}`: {e}", a.models)))?;
    models.sort();
    if models.is_empty() {
        return Err(FcplError::InvalidArgument(format!("no model matches `{}`", a.models)));
    }
    let videos = load_videos(&a.videos)?;
    for model_path in models {
        let params = load_checkpoint(&model_path)?;
        let stem = model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        let sets = videos
            .iter()
            .map(|v| descriptor::extract_video(&params, v))
            .collect::<Result<Vec<_>>>()?;
        descriptor::save_dir(&sets, &a.out.join(stem))?;
    }
    Ok(())
}

/// Model directories are the subdirectories of `--in`; when it has none,
/// `--in` itself is treated as a single model.
fn ensemble(a: Ensemble) -> Result<()> {
    let mut model_dirs = Vec::new();
    for entry in std::fs::read_dir(&a.input).map_err(|e| FcplError::io(&a.input, e))? {
        let path = entry.map_err(|e| FcplError::io(&a.input, e))?.path();
        if path.is_dir() {
            model_dirs.push(path);
        }
    }
    if model_dirs.is_empty() {
        model_dirs.push(a.input.clone());
    }
    model_dirs.sort();

    let mut by_video: BTreeMap<String, Vec<(String, VideoDescriptorSet)>> = BTreeMap::new();
    for dir in &model_dirs {
        let model_id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for set in descriptor::load_dir(dir)? {
            by_video.entry(set.video_id.clone()).or_default().push((model_id.clone(), set));
        }
    }
    let mut out = Vec::with_capacity(by_video.len());
    for (video_id, members) in by_video {
        if members.len() != model_dirs.len() {
            return Err(FcplError::MismatchedSets(format!(
                "{video_id} has descriptors from {} of {} models",
                members.len(),
                model_dirs.len()
            )));
        }
        out.push(descriptor::ensemble_by_model(&members)?);
    }
    descriptor::save_dir(&out, &a.out)
}
