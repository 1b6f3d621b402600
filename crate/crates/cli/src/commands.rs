use std::fs::{self, File};
use std::path::{Path, PathBuf};

use adaseg::data::{generate_synthetic, load_manifest, save_dataset, ShapeKind, SplitCounts};
use adaseg::metrics::{evaluate, CaseMetrics, EvalReport, Metric};
use adaseg::model::{load_checkpoint, save_checkpoint};
use adaseg::stats::{build_score_matrix, friedman, nemenyi};
use adaseg::training::{
    fit, fit_single, predict_split, random_search, train_incremental, train_semi, THRESHOLD,
};
use adaseg::{Dataset, LearningCurve, Model, Split, SynthConfig};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{read_json, Method, TrainFlags};
use crate::record::{self, manifest_hash, Recorder};
use crate::{svg, usage};

pub const CHECKPOINT: &str = "checkpoint";
pub const CURVE: &str = "curve.csv";
pub const SUMMARY: &str = "summary.csv";
pub const CASES: &str = "cases.csv";

#[derive(Debug, Parser)]
#[command(name = "adaseg", version, about = "Multi-structure segmentation with incomplete annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and print its annotation counts.
    Synth(SynthArgs),
    /// Train one model (single, adaptive, adaptive_voxel, adaptive_slice or semi).
    Train(TrainArgs),
    /// Extend a trained model with one new structure and resume training.
    Incremental(IncrementalArgs),
    /// Teacher-student baseline; same as `train --method semi`.
    Semi(SemiArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Random hyper-parameter search.
    Hpo(HpoArgs),
    /// Friedman test and Nemenyi comparison of evaluated methods.
    Stats(StatsArgs),
    /// Plot learning curves as SVG.
    Report(ReportArgs),
    /// Rerun the command recorded in a run.json.
    Replay(ReplayArgs),
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| usage!("bad {what} value {v:?}")))
        .collect()
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// JSON synthetic-dataset config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated shapes: disk, ellipse, ring, nested.
    #[arg(long)]
    pub structures: Option<String>,
    /// Patients per split as train,validation,test.
    #[arg(long)]
    pub patients: Option<String>,
    /// Per-structure probability that a patient is annotated.
    #[arg(long)]
    pub avail: Option<String>,
    /// Per-structure probability of dropping single annotated slices.
    #[arg(long)]
    pub slice_dropout: Option<String>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Structure name, for method single.
    #[arg(long)]
    pub structure: Option<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct IncrementalArgs {
    /// Dataset with the old structures plus exactly one new one.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint of the model trained on the old structures.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Learning curve of the earlier training, prepended to the new one.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SemiArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value_t = THRESHOLD)]
    pub threshold: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct HpoArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub budget: usize,
    /// JSON search space; defaults to the full space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Tune a single-structure model for this structure.
    #[arg(long)]
    pub structure: Option<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct StatsArgs {
    /// `method=cases.csv`, at least two.
    #[arg(long = "input", required = true, num_args = 1.., value_delimiter = ',')]
    pub inputs: Vec<String>,
    #[arg(long, default_value = "dsc")]
    pub metric: Metric,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Learning-curve CSV.
    #[arg(long)]
    pub curve: PathBuf,
    /// Structure to emphasize; defaults to the one added last in incremental runs.
    #[arg(long)]
    pub highlight: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
    /// Output SVG file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    pub record: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Incremental(a) => incremental(a),
        Command::Semi(a) => train(TrainArgs {
            data: a.data,
            method: Some(Method::Semi),
            structure: None,
            flags: a.flags,
            out: a.out,
        }),
        Command::Eval(a) => eval(a),
        Command::Hpo(a) => hpo(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::Replay(a) => replay(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = &a.structures {
        cfg.structures = parse_list::<ShapeKind>(s, "structure")?;
    }
    if let Some(s) = &a.patients {
        let p: Vec<usize> = parse_list(s, "patients")?;
        let [train, validation, test] = p[..] else {
            return Err(usage!("--patients takes train,validation,test"));
        };
        cfg.patients = SplitCounts { train, validation, test };
    }
    if let Some(s) = &a.avail {
        cfg.availability_rate = parse_list(s, "availability")?;
    }
    if let Some(s) = &a.slice_dropout {
        cfg.per_slice_dropout = parse_list(s, "slice dropout")?;
    }
    if let Some(v) = a.slices {
        cfg.slices_per_patient = v;
    }
    if let Some(v) = a.size {
        cfg.image_size = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_std = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.name {
        cfg.name = v;
    }
    cfg.validate()?;
    let mut rec = Recorder::new("synth", &a.out)?;
    let dataset = generate_synthetic(&cfg, &a.out)?;
    rec.artifact(adaseg::data::MANIFEST_FILE);
    rec.artifact(adaseg::data::RASTER_DIR);
    print!("{}", counts_table(&dataset));
    let hash = manifest_hash(&a.out)?;
    println!("manifest {hash}");
    rec.finish(serde_json::to_value(&cfg)?, Some(hash), vec![cfg.seed])?;
    Ok(())
}

/// "# Patients (# Slices)" per structure and split.
pub fn counts_table(dataset: &Dataset) -> String {
    let counts = dataset.availability_counts();
    let width = dataset.structures.iter().map(String::len).max().unwrap_or(0).max(9);
    let mut out = format!("{:width$}", "structure");
    for split in Split::ALL {
        out.push_str(&format!("  {:>14}", split.as_str()));
    }
    out.push('\n');
    for (k, name) in dataset.structures.iter().enumerate() {
        out.push_str(&format!("{name:width$}"));
        for split in Split::ALL {
            let (p, s) = counts[&split][k];
            out.push_str(&format!("  {:>14}", format!("{p} ({s})")));
        }
        out.push('\n');
    }
    out
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    load_manifest(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn save_model(rec: &mut Recorder, model: &Model, structures: &[String]) -> Result<()> {
    let dir = rec.artifact(CHECKPOINT);
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    save_checkpoint(model, Some(structures), &dir)?;
    Ok(())
}

fn save_report(rec: &mut Recorder, report: &EvalReport) -> Result<()> {
    let summary = rec.artifact(SUMMARY);
    let cases = rec.artifact(CASES);
    report.save(&summary, &cases)?;
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:12} {:>8} {:>8} {:>9} {:>8} {:>4}", "structure", "DSC", "HD95", "RAVD", "ASSD", "n");
    for s in &report.structures {
        let m = |metric: Metric| s.metrics.get(&metric).map_or(f64::NAN, |v| v.mean);
        println!(
            "{:12} {:>8.4} {:>8.3} {:>9.3} {:>8.3} {:>4}",
            s.structure,
            m(Metric::Dsc),
            m(Metric::Hd95),
            m(Metric::Ravd),
            m(Metric::Assd),
            s.n_included
        );
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.flags.resolve(a.method, a.structure.as_deref())?;
    let dataset = load_dataset(&a.data)?;
    let hash = manifest_hash(&a.data)?;
    let mut rec = Recorder::new("train", &a.out)?;
    let seeds = vec![cfg.train.seed];
    let (model, curve, structures) = match cfg.method {
        Method::Single => {
            let name = cfg.structure.as_deref().expect("checked in resolve");
            let k = dataset
                .structure_index(name)
                .ok_or_else(|| usage!("dataset has no structure {name:?}"))?;
            let (m, c) = fit_single(&cfg.model, &dataset, k, &cfg.train)?;
            (m, c, vec![name.to_string()])
        }
        Method::Semi => {
            let out = train_semi(&cfg.model, &cfg.train, &cfg.model, &cfg.train, &dataset)?;
            let labelled = rec.artifact("labelled");
            save_dataset(&out.labelled, &labelled)?;
            save_report(&mut rec, &out.report)?;
            print_report(&out.report);
            (out.student, out.curve, dataset.structures.clone())
        }
        _ => {
            let (m, c) = fit(&cfg.model, &dataset, &cfg.train)?;
            (m, c, dataset.structures.clone())
        }
    };
    save_model(&mut rec, &model, &structures)?;
    curve.save(&rec.artifact(CURVE))?;
    print_final(&curve);
    rec.finish(serde_json::to_value(&cfg)?, Some(hash), seeds)?;
    Ok(())
}

fn print_final(curve: &LearningCurve) {
    for (name, d) in curve.structures.iter().zip(curve.final_dsc()) {
        match d {
            Some(d) => println!("validation DSC {name}: {d:.4}"),
            None => println!("validation DSC {name}: n/a"),
        }
    }
}

fn incremental(a: IncrementalArgs) -> Result<()> {
    let cfg = a.flags.resolve(None, None)?;
    if cfg.method == Method::Semi || cfg.method == Method::Single {
        return Err(usage!("incremental training uses an adaptive method"));
    }
    let dataset = load_dataset(&a.data)?;
    let hash = manifest_hash(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let old = ckpt
        .structures
        .ok_or_else(|| usage!("checkpoint {} does not name its structures", a.checkpoint.display()))?;
    let prior = a.curve.as_deref().map(LearningCurve::load).transpose()?;
    let mut rec = Recorder::new("incremental", &a.out)?;
    let (model, curve) = train_incremental(ckpt.model, &old, &dataset, &cfg.train, prior)?;
    save_model(&mut rec, &model, &curve.structures)?;
    curve.save(&rec.artifact(CURVE))?;
    print_final(&curve);
    rec.finish(serde_json::to_value(&cfg)?, Some(hash), vec![cfg.train.seed])?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage!("threshold {} outside [0, 1]", a.threshold));
    }
    let dataset = load_dataset(&a.data)?;
    let hash = manifest_hash(&a.data)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let names = ckpt.structures.unwrap_or_else(|| dataset.structures.clone());
    let idx = names
        .iter()
        .map(|n| dataset.structure_index(n).ok_or_else(|| usage!("dataset has no structure {n:?}")))
        .collect::<Result<Vec<_>>>()?;
    let view = dataset.select_structures(&idx);
    let mut rec = Recorder::new("eval", &a.out)?;
    let preds = predict_split(&ckpt.model, &view, a.split)?;
    let report = evaluate(&view, a.split, &preds, a.threshold)?;
    save_report(&mut rec, &report)?;
    print_report(&report);
    let config = json!({
        "checkpoint": a.checkpoint,
        "split": a.split,
        "threshold": a.threshold,
    });
    rec.finish(config, Some(hash), Vec::new())?;
    Ok(())
}

fn hpo(a: HpoArgs) -> Result<()> {
    let mut cfg = a.flags.resolve(None, None)?;
    if let Some(p) = &a.space {
        cfg.hpo = read_json(p)?;
    }
    let dataset = load_dataset(&a.data)?;
    let hash = manifest_hash(&a.data)?;
    let data = match &a.structure {
        Some(name) => {
            let k = dataset
                .structure_index(name)
                .ok_or_else(|| usage!("dataset has no structure {name:?}"))?;
            dataset.single_structure(k)
        }
        None => dataset,
    };
    let mut rec = Recorder::new("hpo", &a.out)?;
    let seed = cfg.train.seed;
    let result = random_search(&cfg.hpo, a.budget, seed, |params, trial_seed| {
        params.validation_objective(&data, &cfg.model, &cfg.train, trial_seed)
    })?;
    let path = rec.artifact("hpo.csv");
    result.write_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    let best = rec.artifact("best.json");
    fs::write(&best, serde_json::to_string_pretty(result.best())? + "\n")?;
    let b = result.best();
    println!("best trial {} objective {:.4}: {:?}", b.trial, b.objective, b.params);
    let mut seeds = vec![seed];
    seeds.extend(result.trials.iter().map(|t| t.seed));
    rec.finish(
        json!({ "budget": a.budget, "structure": a.structure, "base": serde_json::to_value(&cfg)? }),
        Some(hash),
        seeds,
    )?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    if a.inputs.len() < 2 {
        return Err(usage!("stats needs at least two --input method=cases.csv"));
    }
    let mut methods: Vec<(String, Vec<CaseMetrics>)> = Vec::new();
    for input in &a.inputs {
        let (name, path) = input
            .split_once('=')
            .ok_or_else(|| usage!("--input expects method=path, got {input:?}"))?;
        if methods.iter().any(|(m, _)| m == name) {
            return Err(usage!("method {name:?} given twice"));
        }
        let cases = EvalReport::read_cases_csv(Path::new(path)).with_context(|| format!("reading {path}"))?;
        methods.push((name.to_string(), cases));
    }
    let scores = build_score_matrix(&methods, a.metric)?;
    let fr = friedman(&scores);
    let pairwise = nemenyi(&scores, a.alpha)?;
    println!(
        "Friedman chi2 = {:.4}, p = {:.4} ({} methods, {} cases, metric {})",
        fr.statistic,
        fr.p_value,
        scores.num_methods(),
        scores.num_cases(),
        a.metric.as_str()
    );
    for (m, r) in pairwise.methods.iter().zip(&pairwise.mean_ranks) {
        println!("  mean rank {m}: {r:.3}");
    }
    println!("Nemenyi CD = {:.4} at alpha {}", pairwise.critical_difference, a.alpha);
    print!("{pairwise}");
    if let Some(out) = &a.out {
        let mut rec = Recorder::new("stats", out)?;
        let path = rec.artifact("nemenyi.csv");
        pairwise.write_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
        let path = rec.artifact("friedman.json");
        fs::write(&path, serde_json::to_string_pretty(&fr)? + "\n")?;
        rec.finish(
            json!({ "inputs": a.inputs, "metric": a.metric.as_str(), "alpha": a.alpha }),
            None,
            Vec::new(),
        )?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let curve = LearningCurve::load(&a.curve)?;
    let highlight = match a.highlight {
        Some(h) => {
            if !curve.structures.contains(&h) {
                return Err(usage!("curve has no structure {h:?}"));
            }
            Some(h)
        }
        None => curve.epoch_added.and_then(|_| curve.structures.last().cloned()),
    };
    let title = a.title.unwrap_or_else(|| "Validation DSC".into());
    let text = svg::learning_curve(&curve, &title, highlight.as_deref());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let record = record::load(&a.record)?;
    let mut argv = record.argv.clone();
    if let Some(out) = &a.out {
        let pos = argv
            .iter()
            .position(|s| s == "--out")
            .ok_or_else(|| usage!("recorded command has no --out"))?;
        let slot = argv.get_mut(pos + 1).ok_or_else(|| usage!("recorded --out has no value"))?;
        *slot = out.to_string_lossy().into_owned();
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage!("recorded command does not parse: {e}"))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage!("refusing to replay a replay"));
    }
    run(cli)
}
