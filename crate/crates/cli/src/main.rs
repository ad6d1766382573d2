use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use depthforge_core::cues::{ablate_cues, apply_mask, extract_cues, CueName, CueVector};
use depthforge_core::eval::{
    ablation_suite, baselines, quality_curve, single_cue_variants, whdr, Prediction, RankedCorpus, RankedItem,
};
use depthforge_core::forge::{choose_threshold, run_pipeline, DatasetRecord, PipelineConfig, RetainRule};
use depthforge_core::geometry::{reconstruct_pair, FramePair, SfmConfig};
use depthforge_core::io::{
    format_match_file, parse_match_file, read_jsonl, read_text, write_jsonl, write_text, ManifestEntry, ReconRecord,
    ScoreRecord,
};
use depthforge_core::qanet::{train, QaModel, TrainConfig, TrainItem};
use depthforge_core::synth::{generate_corpus, CorpusRecipe, DEFAULT_ORDER_MARGIN};

#[derive(Parser)]
#[command(name = "depthforge", version, about = "Relative-depth training data from two-view reconstructions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every random choice; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file overriding the subcommand's default configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: match files, ground-truth sidecars and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: u64,
    },
    /// Reconstruct match files into JSON-lines reconstruction records.
    Reconstruct {
        /// Match files, or directories of `*.txt` match files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the rejected pairs and their reasons.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Extract cue vectors from reconstruction records.
    Cues {
        #[arg(long)]
        recons: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cue groups to drop, comma separated (2D, Sam, Ang, Focal, RepErr).
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
    },
    /// Train a quality network on cue vectors labelled through a manifest.
    TrainQanet {
        #[arg(long)]
        cues: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log, CSV `epoch,loss,val_acc`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score cue vectors with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cues: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality-ranking curve of scored items against manifest qualities.
    Curve {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON `{auc, n_items}`.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Also write `<prefix>upper.csv` and `<prefix>random.csv`.
        #[arg(long)]
        baselines: Option<PathBuf>,
    },
    /// Train one model per cue ablation and tabulate held-out AUCs.
    Ablate {
        #[arg(long)]
        train_cues: PathBuf,
        #[arg(long)]
        test_cues: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variants such as `Full` or `-2D`; defaults to Full and every single-cue drop.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Smallest score threshold reaching a target mean quality.
    ChooseThreshold {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: f64,
        /// Trade-off table CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Reconstruct, score, filter and emit dataset records.
    Forge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, conflicts_with = "top_fraction")]
        threshold: Option<f64>,
        #[arg(long)]
        top_fraction: Option<f64>,
    },
    /// Disagreement rate of depth-order predictions against dataset records.
    Whdr {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthConfig {
    seed: u64,
    recipe: CorpusRecipe,
    sfm: SfmConfig,
    order_margin: Option<f64>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read_text(p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn match_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "txt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no match files found");
    }
    Ok(out)
}

fn load_pairs(inputs: &[PathBuf]) -> Result<Vec<FramePair>> {
    match_files(inputs)?
        .iter()
        .map(|f| parse_match_file(&read_text(f)?).with_context(|| format!("reading {}", f.display())))
        .collect()
}

fn qualities(manifest: &Path) -> Result<HashMap<String, f64>> {
    let entries: Vec<ManifestEntry> = read_jsonl(manifest)?;
    Ok(entries.into_iter().filter_map(|e| e.gt_quality.map(|q| (e.pair_id, q))).collect())
}

fn labelled(cues: Vec<CueVector>, q: &HashMap<String, f64>) -> Vec<TrainItem> {
    cues.into_iter().filter_map(|c| q.get(&c.pair_id).map(|&quality| TrainItem { cues: c, quality })).collect()
}

fn ranked_items(scores: &Path, manifest: &Path) -> Result<Vec<RankedItem>> {
    let q = qualities(manifest)?;
    let scores: Vec<ScoreRecord> = read_jsonl(scores)?;
    let items: Vec<RankedItem> = scores
        .into_iter()
        .filter_map(|s| q.get(&s.pair_id).map(|&quality| RankedItem { id: s.pair_id, score: s.score, quality }))
        .collect();
    if items.is_empty() {
        bail!("no scored item has a quality in the manifest");
    }
    Ok(items)
}

fn parse_drop(names: &[String]) -> Result<BTreeSet<CueName>> {
    names
        .iter()
        .filter(|n| !n.trim().is_empty())
        .map(|n| CueName::parse(n).with_context(|| format!("unknown cue group {n:?}")))
        .collect()
}

fn parse_variant(v: &str) -> Result<BTreeSet<CueName>> {
    if v.trim().eq_ignore_ascii_case("full") {
        return Ok(BTreeSet::new());
    }
    parse_drop(&v.split_whitespace().map(str::to_string).collect::<Vec<_>>())
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth { out, count } => {
            let mut cfg: SynthConfig = load_config(config)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            cfg.sfm.seed = seed;
            let margin = cfg.order_margin.unwrap_or(DEFAULT_ORDER_MARGIN);
            let items = generate_corpus(&cfg.recipe, seed, 0..count, &cfg.sfm, margin);
            let mut manifest = Vec::with_capacity(items.len());
            for it in &items {
                let id = &it.pair.pair_id;
                write_text(&out.join("matches").join(format!("{id}.txt")), &format_match_file(&it.pair))?;
                write_text(&out.join("truth").join(format!("{id}.json")), &serde_json::to_string(&it.truth)?)?;
                manifest.push(ManifestEntry {
                    pair_id: id.clone(),
                    spec_hash: it.spec.spec_hash(),
                    gt_quality: it.quality,
                    rejected: it.recon.as_ref().err().map(|r| r.reason.as_str().to_string()),
                });
            }
            write_jsonl(&out.join("manifest.jsonl"), &manifest)?;
            let scored = manifest.iter().filter(|m| m.gt_quality.is_some()).count();
            eprintln!("{} scenes, {scored} with a defined quality", manifest.len());
        }
        Command::Reconstruct { inputs, out, rejects } => {
            let mut cfg: SfmConfig = load_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let pairs = load_pairs(&inputs)?;
            let mut records = Vec::new();
            let mut rejected = Vec::new();
            for pair in &pairs {
                match reconstruct_pair(pair, &cfg) {
                    Ok(r) => records.push(ReconRecord::from(&r)),
                    Err(e) => rejected.push(serde_json::json!({
                        "pair_id": e.pair_id,
                        "reason": e.reason.as_str(),
                        "detail": e.source.to_string(),
                    })),
                }
            }
            write_jsonl(&out, &records)?;
            if let Some(p) = rejects {
                write_jsonl(&p, &rejected)?;
            }
            eprintln!("{} reconstructed, {} rejected", records.len(), rejected.len());
        }
        Command::Cues { recons, out, drop } => {
            let drop = parse_drop(&drop)?;
            let records: Vec<ReconRecord> = read_jsonl(&recons)?;
            let mut cues = Vec::with_capacity(records.len());
            for rec in &records {
                let r = rec.to_reconstruction()?;
                match extract_cues(&r).and_then(|cv| ablate_cues(&cv, &drop)) {
                    Ok(cv) => cues.push(cv),
                    Err(e) => eprintln!("skipping {}: {e}", rec.pair_id),
                }
            }
            write_jsonl(&out, &cues)?;
        }
        Command::TrainQanet { cues, manifest, out, log } => {
            let mut cfg: TrainConfig = load_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let items = labelled(read_jsonl(&cues)?, &qualities(&manifest)?);
            let report = train(&items, &cfg)?;
            write_text(&out, &report.model.to_json())?;
            if let Some(p) = log {
                write_text(&p, &report.log_csv())?;
            }
            eprintln!("best epoch {} with validation accuracy {:.4}", report.best_epoch, report.best_val_acc);
        }
        Command::Score { model, cues, out } => {
            let model = QaModel::from_json(&read_text(&model)?)?;
            let cues: Vec<CueVector> = read_jsonl(&cues)?;
            let scores = cues
                .iter()
                .map(|cv| {
                    let cv = apply_mask(cv, model.arch.mask)?;
                    Ok(ScoreRecord { pair_id: cv.pair_id.clone(), score: model.score(&cv)? })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&out, &scores)?;
        }
        Command::Curve { scores, manifest, out, summary, baselines: base } => {
            let items = ranked_items(&scores, &manifest)?;
            let curve = quality_curve(&RankedCorpus::new(items.clone())?)?;
            write_text(&out, &curve.to_csv())?;
            if let Some(p) = summary {
                write_text(&p, &curve.summary_json())?;
            }
            if let Some(prefix) = base {
                let (upper, random) = baselines(&items, cli.seed.unwrap_or(0))?;
                let name = |s: &str| PathBuf::from(format!("{}{s}", prefix.display()));
                write_text(&name("upper.csv"), &upper.to_csv())?;
                write_text(&name("random.csv"), &random.to_csv())?;
            }
            println!("{}", curve.summary_json());
        }
        Command::Ablate { train_cues, test_cues, manifest, out, variants } => {
            let mut cfg: TrainConfig = load_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let q = qualities(&manifest)?;
            let tr = labelled(read_jsonl(&train_cues)?, &q);
            let te = labelled(read_jsonl(&test_cues)?, &q);
            let variants = if variants.is_empty() {
                single_cue_variants()
            } else {
                variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?
            };
            let table = ablation_suite(&tr, &te, &variants, &cfg, cfg.seed)?;
            write_text(&out, &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::ChooseThreshold { scores, manifest, target, table } => {
            let items = ranked_items(&scores, &manifest)?;
            let pairs: Vec<(f64, f64)> = items.iter().map(|i| (i.score, i.quality)).collect();
            let choice = choose_threshold(&pairs, target)?;
            if let Some(p) = table {
                write_text(&p, &choice.table_csv())?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "threshold": choice.threshold,
                    "retained": choice.retained,
                    "fraction": choice.retained as f64 / pairs.len() as f64,
                    "mean_quality": choice.mean_quality,
                })
            );
        }
        Command::Forge { inputs, model, out, report, threshold, top_fraction } => {
            let mut cfg: PipelineConfig = load_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = threshold {
                cfg.retain = RetainRule::Threshold(t);
            }
            if let Some(f) = top_fraction {
                cfg.retain = RetainRule::TopFraction(f);
            }
            let model = QaModel::from_json(&read_text(&model)?)?;
            let pairs = load_pairs(&inputs)?;
            let output = run_pipeline(&pairs, &model, &cfg)?;
            write_jsonl(&out, &output.records)?;
            write_text(&report, &(serde_json::to_string_pretty(&output.report)? + "\n"))?;
            let r = &output.report;
            eprintln!(
                "{} pairs, {} scored, {} retained, {} records, {} depth pairs",
                r.n_pairs, r.n_scored, r.n_retained, r.n_records, r.n_depth_pairs
            );
        }
        Command::Whdr { predictions, annotations } => {
            let preds: Vec<Prediction> = read_jsonl(&predictions)?;
            let ann: Vec<DatasetRecord> = read_jsonl(&annotations)?;
            let n: usize = ann.iter().map(|r| r.pairs.len()).sum();
            let rate = whdr(&preds, &ann)?;
            println!("{}", serde_json::json!({ "whdr": rate, "n_pairs": n }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
