//! Command-line surface: corpus build/validate/stats, grouped matching,
//! region metrics, and an aggregation debugging dump.
//!
//! Exit codes: 0 success, 1 validation failures, 2 usage/IO errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use triref::aggregation::{aggregate, fuse, prompt_to_mask, FeatureGrid, GridLayout, PeConfig, VisualPrompt};
use triref::corpus::{self, Corpus, TaskKind, TemplateBank};
use triref::geometry::{rle_decode, Box, Rle};
use triref::matching::{build_cost_tensor, group_match_parallel, CostWeights, MaskProb, PredSet, TargetSet};
use triref::metrics::{self, EmbeddingProvider, HashedNgramEmbedder, Region, TableEmbedder};

#[derive(Parser)]
#[command(name = "triref", version, about = "Structured grounding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every sample in a corpus file
    Validate {
        corpus: PathBuf,
        /// Treat notices as failures
        #[arg(long)]
        strict: bool,
    },
    /// Build a corpus from raw annotations
    Build {
        annotations: PathBuf,
        #[arg(long)]
        task: TaskArg,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimal per-group assignment between predictions and targets
    Match {
        preds: PathBuf,
        targets: PathBuf,
        #[arg(long)]
        unit: UnitArg,
        #[arg(long, default_value_t = 5.0)]
        l1: f64,
        #[arg(long, default_value_t = 2.0)]
        giou: f64,
        #[arg(long, default_value_t = 20.0)]
        mask: f64,
        #[arg(long, default_value_t = 1.0)]
        dice: f64,
    },
    /// Region metrics over prediction/target files
    Eval {
        preds: PathBuf,
        targets: PathBuf,
        #[arg(long)]
        metric: MetricArg,
        /// Precomputed text-embedding table (defaults to hashed n-grams)
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Corpus statistics
    Stats { corpus: PathBuf },
    /// Dump aggregated and fused tensors for one sample
    AggregateDemo { features: PathBuf, prompt: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Box,
    Mask,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Iou50,
    Ciou,
    Miou,
    Ap50,
    Maps,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Det,
    Seg,
    Rec,
    Res,
    Reg,
    GcgBox,
    GcgMask,
    InteractiveMask,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Det => TaskKind::Det,
            TaskArg::Seg => TaskKind::Seg,
            TaskArg::Rec => TaskKind::Rec,
            TaskArg::Res => TaskKind::Res,
            TaskArg::Reg => TaskKind::Reg,
            TaskArg::GcgBox => TaskKind::GcgBox,
            TaskArg::GcgMask => TaskKind::GcgMask,
            TaskArg::InteractiveMask => TaskKind::InteractiveMask,
        }
    }
}

/// Usage/IO failures exit 2; validation failures exit 1.
enum Failure {
    Validation,
    Usage(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn read(path: &PathBuf) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { corpus, strict } => {
            let parsed = Corpus::from_json(&read(&corpus)?)?;
            let report = corpus::validate_corpus(&parsed);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.is_clean(strict) {
                Ok(())
            } else {
                Err(Failure::Validation)
            }
        }
        Command::Build { annotations, task, templates, seed, out } => {
            let anns: Vec<corpus::Annotation> = from_json(&annotations)?;
            let bank: TemplateBank = from_json(&templates)?;
            let built = corpus::build_corpus(&anns, task.into(), &bank, seed)?;
            std::fs::write(&out, built.to_json())
                .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", out.display())))?;
            println!("wrote {} samples to {}", built.samples.len(), out.display());
            Ok(())
        }
        Command::Match { preds, targets, unit, l1, giou, mask, dice } => {
            let weights = CostWeights {
                lambda_l1: l1,
                lambda_giou: giou,
                lambda_mask: mask,
                lambda_dice: dice,
            };
            let groups = load_match_groups(&preds, &targets, unit)?;
            let tensor = build_cost_tensor(&groups, &weights)?;
            let assignments = group_match_parallel(&tensor)?;
            let out: Vec<MatchOutput> = assignments
                .iter()
                .enumerate()
                .map(|(g, a)| MatchOutput {
                    group: g,
                    pairs: a.pairs.clone(),
                    pair_costs: a.pairs.iter().map(|&(n, m)| tensor.cost(g, n, m)).collect(),
                    total_cost: a.total_cost,
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Eval { preds, targets, metric, embeddings } => {
            let value = eval(&preds, &targets, metric, embeddings.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
        Command::Stats { corpus } => {
            let parsed = Corpus::from_json(&read(&corpus)?)?;
            println!("{}", serde_json::to_string_pretty(&corpus::stats(&parsed))?);
            Ok(())
        }
        Command::AggregateDemo { features, prompt } => {
            let x: FeatureGrid = from_json(&features)?;
            let spec: DemoPrompt = from_json(&prompt)?;
            let layout = spec.layout.unwrap_or_else(GridLayout::default_vpt);
            let cfg = PeConfig {
                alpha: spec.alpha.unwrap_or(1.0),
                ..PeConfig::default()
            };
            let m = prompt_to_mask(&spec.prompt, &layout, spec.queries.unwrap_or(1))?;
            let v = aggregate(&x, &m)?;
            let fused = fuse(&v, &cfg);
            let dump = serde_json::json!({
                "queries": v.queries,
                "patches": v.patches,
                "channels": v.channels,
                "v": v.data,
                "fused": fused.data,
            });
            println!("{}", serde_json::to_string_pretty(&dump)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MatchOutput {
    group: usize,
    pairs: Vec<(usize, usize)>,
    pair_costs: Vec<f64>,
    total_cost: f64,
}

#[derive(Deserialize)]
struct DemoPrompt {
    prompt: VisualPrompt,
    layout: Option<GridLayout>,
    queries: Option<usize>,
    alpha: Option<f64>,
}

fn load_match_groups(
    preds: &PathBuf,
    targets: &PathBuf,
    unit: UnitArg,
) -> Result<Vec<(PredSet, TargetSet)>, Failure> {
    match unit {
        UnitArg::Box => {
            let p: Vec<Vec<Box>> = from_json(preds)?;
            let t: Vec<Vec<Box>> = from_json(targets)?;
            if p.len() != t.len() {
                return Err(Failure::Usage(format!(
                    "{} prediction groups vs {} target groups",
                    p.len(),
                    t.len()
                )));
            }
            Ok(p.into_iter()
                .zip(t)
                .map(|(pg, tg)| (PredSet::Boxes(pg), TargetSet::Boxes(tg)))
                .collect())
        }
        UnitArg::Mask => {
            let p: Vec<Vec<MaskProb>> = from_json(preds)?;
            let t: Vec<Vec<Rle>> = from_json(targets)?;
            if p.len() != t.len() {
                return Err(Failure::Usage(format!(
                    "{} prediction groups vs {} target groups",
                    p.len(),
                    t.len()
                )));
            }
            let mut groups = Vec::with_capacity(p.len());
            for (pg, tg) in p.into_iter().zip(t) {
                let decoded = tg
                    .iter()
                    .map(rle_decode)
                    .collect::<Result<Vec<_>, _>>()?;
                groups.push((PredSet::Masks(pg), TargetSet::Masks(decoded)));
            }
            Ok(groups)
        }
    }
}

/// Geometry in eval files: exactly one of box/mask.
#[derive(Deserialize)]
struct EvalRegion {
    #[serde(rename = "box")]
    bbox: Option<Box>,
    mask: Option<Rle>,
}

impl EvalRegion {
    fn into_region(self) -> Result<Region, Failure> {
        match (self.bbox, self.mask) {
            (Some(b), None) => Ok(Region::Box(b)),
            (None, Some(r)) => Ok(Region::Mask(rle_decode(&r)?)),
            _ => Err(Failure::Usage("region needs exactly one of box/mask".into())),
        }
    }
}

#[derive(Deserialize)]
struct EvalPrediction {
    phrase: String,
    #[serde(flatten)]
    region: EvalRegion,
}

#[derive(Deserialize)]
struct EvalTargetClass {
    class: String,
    regions: Vec<EvalRegion>,
}

fn eval(
    preds: &PathBuf,
    targets: &PathBuf,
    metric: MetricArg,
    embeddings: Option<&PathBuf>,
) -> Result<serde_json::Value, Failure> {
    match metric {
        MetricArg::Iou50 => {
            let p: Vec<Box> = from_json(preds)?;
            let t: Vec<Box> = from_json(targets)?;
            let v = metrics::rec_accuracy(&p, &t)?;
            Ok(serde_json::json!({ "metric": "iou50", "value": v }))
        }
        MetricArg::Ciou | MetricArg::Miou => {
            let p: Vec<Rle> = from_json(preds)?;
            let t: Vec<Rle> = from_json(targets)?;
            if p.len() != t.len() {
                return Err(Failure::Usage(format!(
                    "{} predictions vs {} targets",
                    p.len(),
                    t.len()
                )));
            }
            let mut pairs = Vec::with_capacity(p.len());
            for (pr, tr) in p.iter().zip(&t) {
                pairs.push((rle_decode(pr)?, rle_decode(tr)?));
            }
            let (name, v) = match metric {
                MetricArg::Ciou => ("ciou", metrics::ciou(&pairs)?),
                _ => ("miou", metrics::miou(&pairs)?),
            };
            Ok(serde_json::json!({ "metric": name, "value": v }))
        }
        MetricArg::Ap50 | MetricArg::Maps => {
            let p: Vec<EvalPrediction> = from_json(preds)?;
            let t: Vec<EvalTargetClass> = from_json(targets)?;
            let mut phrases = Vec::with_capacity(p.len());
            for pred in p {
                phrases.push((pred.phrase, pred.region.into_region()?));
            }
            let mut classes = Vec::with_capacity(t.len());
            let mut gts = Vec::with_capacity(t.len());
            for target in t {
                classes.push(target.class);
                gts.push(
                    target
                        .regions
                        .into_iter()
                        .map(EvalRegion::into_region)
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            let table;
            let hashed;
            let provider: &dyn EmbeddingProvider = match embeddings {
                Some(path) => {
                    table = TableEmbedder::from_json(&read(path)?)
                        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                    &table
                }
                None => {
                    hashed = HashedNgramEmbedder::default();
                    &hashed
                }
            };
            let thresholds = match metric {
                MetricArg::Ap50 => vec![0.5],
                _ => metrics::default_thresholds(),
            };
            let report = metrics::map_s_report(&phrases, &classes, &gts, provider, &thresholds)?;
            let name = if matches!(metric, MetricArg::Ap50) { "ap50" } else { "maps" };
            Ok(serde_json::json!({
                "metric": name,
                "value": report.mean,
                "per_threshold": report.per_threshold,
            }))
        }
    }
}
