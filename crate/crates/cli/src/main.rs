use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use streamcost_core::baseline::{train_flat, FlatConfig, FlatModel};
use streamcost_core::dataset::{make_dataset, metric_samples, Dataset, Split};
use streamcost_core::evaluate::{evaluate_model, EvalReport, Ensemble};
use streamcost_core::generate::{GenConfig, HardwareRanges, QueryFamily, Workload};
use streamcost_core::gnn::{Featurization, ModelCheckpoint, Scheme};
use streamcost_core::optimize::{
    enumerate_candidates, predict_candidates, select_placement, CostPredictor, Direction, Ensembles,
};
use streamcost_core::suite::{
    ablation_suite, all_extrapolation_cases, extrapolation_case_name, extrapolation_suite, interpolation_suite,
    placement_study, AblationVariant, ModelSet, SuiteConfig,
};
use streamcost_core::train::{fine_tune, train_model, TrainConfig};
use streamcost_core::{HardwareNode, Metric, QueryGraph, SimConfig};

#[derive(Parser)]
#[command(name = "streamcost", version, about = "Learned cost models for stream operator placement")]
struct Cli {
    /// TOML file with optional [gen], [sim], [train], [flat] and [suite] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of placed queries, labeled unless --no-label.
    Generate(GenerateArgs),
    /// Label (or relabel) a corpus with the execution model.
    Simulate(SimulateArgs),
    /// Train one model per seed (or the flat baseline) for a metric.
    Train(TrainArgs),
    /// Score the models in a directory on a corpus split.
    Evaluate(EvaluateArgs),
    /// Choose a placement for one query on one inventory.
    Optimize(OptimizeArgs),
    /// Run an experiment suite.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// linear, two_way_join, three_way_join or mixed.
    #[arg(long, default_value = "mixed")]
    family: String,
    /// Generate S -> F^k -> [A] -> K chains instead of the query families.
    #[arg(long)]
    filter_chain: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Hardware range preset, e.g. `interpolation` or `stronger-ram-train`.
    #[arg(long = "override")]
    preset: Option<String>,
    #[arg(long)]
    no_label: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Gnn,
    Flat,
}

#[derive(Args)]
struct TrainArgs {
    /// T, L_p, L_e, R_O or S.
    #[arg(long)]
    metric: String,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated seeds; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "gnn")]
    model: ModelKind,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// novel or traditional.
    #[arg(long)]
    scheme: Option<String>,
    /// full, no-hardware or ops-only.
    #[arg(long)]
    featurization: Option<String>,
    /// Continue training this checkpoint instead of starting fresh.
    #[arg(long)]
    fine_tune_from: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// train, val or test; all examples when omitted with --all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Score every example regardless of split (for separately generated sets).
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    /// JSON query graph.
    #[arg(long)]
    query: PathBuf,
    /// JSON list of hardware nodes.
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long, default_value = "L_p")]
    target: String,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    models: PathBuf,
    /// min or max; defaults to max for T and min otherwise.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteKind {
    Interpolation,
    Extrapolation,
    Ablation,
    PlacementStudy,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(value_enum)]
    kind: SuiteKind,
    /// Training corpus (interpolation, ablation).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trained models (interpolation, placement-study; optional full models for ablation).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Comma-separated extrapolation cases such as stronger-cpu; all by default.
    #[arg(long)]
    cases: Option<String>,
    #[arg(long, default_value_t = 50)]
    per_family: usize,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Sizes used by the suites.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct SuiteSizes {
    corpus_size: usize,
    eval_size: usize,
    eval_seed: u64,
    balance_seed: u64,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        let d = SuiteConfig::default();
        SuiteSizes { corpus_size: d.corpus_size, eval_size: d.eval_size, eval_seed: d.eval_seed, balance_seed: d.balance_seed }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    gen: GenConfig,
    sim: SimConfig,
    train: TrainConfig,
    flat: FlatConfig,
    suite: SuiteSizes,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.gen.validate()?;
        cfg.sim.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            gen: self.gen.clone(),
            sim: self.sim.clone(),
            train: self.train.clone(),
            flat: self.flat.clone(),
            corpus_size: self.suite.corpus_size,
            eval_size: self.suite.eval_size,
            eval_seed: self.suite.eval_seed,
            metrics: Metric::ALL.to_vec(),
            balance_seed: self.suite.balance_seed,
        }
    }
}

fn parse_metric(s: &str) -> Result<Metric> {
    Metric::parse(s).with_context(|| format!("unknown metric {s:?} (expected T, L_p, L_e, R_O or S)"))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',').map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed {x:?}"))).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Models of one directory tree: `<metric tag>/seed_<n>.json` and `<metric tag>/flat.json`.
struct ModelDir {
    gnn: ModelSet,
    flat: BTreeMap<Metric, FlatModel>,
}

fn seed_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = name.strip_prefix("seed_").and_then(|r| r.strip_suffix(".json")) {
            if let Ok(seed) = seed.parse() {
                files.push((seed, path));
            }
        }
    }
    files.sort();
    Ok(files.into_iter().map(|f| f.1).collect())
}

fn load_models(root: &Path) -> Result<ModelDir> {
    let mut out = ModelDir { gnn: ModelSet::new(), flat: BTreeMap::new() };
    for metric in Metric::ALL {
        let dir = root.join(metric.tag());
        if !dir.is_dir() {
            continue;
        }
        let checkpoints = seed_files(&dir)?
            .iter()
            .map(|p| ModelCheckpoint::load(p).with_context(|| format!("loading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        if !checkpoints.is_empty() {
            out.gnn.insert(metric, checkpoints);
        }
        let flat = dir.join("flat.json");
        if flat.is_file() {
            out.flat.insert(metric, FlatModel::load(&flat)?);
        }
    }
    if out.gnn.is_empty() && out.flat.is_empty() {
        bail!("no models found under {}", root.display());
    }
    Ok(out)
}

fn gnn_ensembles(models: &ModelSet) -> Ensembles<'_> {
    models.iter().map(|(&m, v)| (m, v.iter().map(|c| c as &dyn CostPredictor).collect())).collect()
}

fn flat_ensembles(models: &BTreeMap<Metric, FlatModel>) -> Ensembles<'_> {
    models.iter().map(|(&m, f)| (m, vec![f as &dyn CostPredictor])).collect()
}

fn run_generate(cfg: &FileConfig, a: GenerateArgs) -> Result<()> {
    let mut gen = cfg.gen.clone();
    if let Some(seed) = a.seed {
        gen.seed = seed;
    }
    if let Some(name) = &a.preset {
        gen.hardware = HardwareRanges::preset(name).with_context(|| format!("unknown hardware preset {name:?}"))?;
    }
    let workload = match (a.filter_chain, a.family.as_str()) {
        (Some(filters), _) => Workload::FilterChain { filters },
        (None, "mixed") => Workload::Mixed,
        (None, f) => Workload::Family { family: QueryFamily::parse(f).with_context(|| format!("unknown family {f:?}"))? },
    };
    let sim = if a.no_label { None } else { Some(&cfg.sim) };
    let ds = make_dataset(&gen, sim, workload, a.count)?;
    ds.save(&a.out)?;
    eprintln!("wrote {} examples to {} (config {})", ds.examples.len(), a.out.display(), &ds.manifest.config_hash[..12]);
    Ok(())
}

fn run_simulate(cfg: &FileConfig, a: SimulateArgs) -> Result<()> {
    let mut ds = Dataset::load(&a.input)?;
    ds.relabel(&cfg.sim)?;
    ds.save(&a.output)?;
    eprintln!("labeled {} examples into {}", ds.examples.len(), a.output.display());
    Ok(())
}

fn run_train(cfg: &FileConfig, a: TrainArgs) -> Result<()> {
    let metric = parse_metric(&a.metric)?;
    let ds = Dataset::load(&a.data)?;
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    let train_samples = metric_samples(train.iter().copied(), metric);
    let val_samples = metric_samples(val.iter().copied(), metric);
    let dir = a.out.join(metric.tag());
    fs::create_dir_all(&dir)?;

    if let ModelKind::Flat = a.model {
        let model = train_flat(metric, &train_samples, &cfg.flat)?;
        model.save(&dir.join("flat.json"))?;
        eprintln!("trained flat baseline for {metric} on {} graphs", train_samples.len());
        return Ok(());
    }

    let mut tc = cfg.train.clone();
    if let Some(s) = &a.seeds {
        tc.seeds = parse_seeds(s)?;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(h) = a.hidden {
        tc.hidden_dim = h;
    }
    if let Some(s) = &a.scheme {
        tc.scheme = Scheme::parse(s).with_context(|| format!("unknown scheme {s:?}"))?;
    }
    if let Some(f) = &a.featurization {
        tc.featurization = Featurization::parse(f).with_context(|| format!("unknown featurization {f:?}"))?;
    }
    tc.validate()?;

    let outcomes = if let Some(base_path) = &a.fine_tune_from {
        let base = ModelCheckpoint::load(base_path)?;
        if base.metric != metric {
            bail!("{} is a {} model, not {metric}", base_path.display(), base.metric);
        }
        vec![(base.seed, fine_tune(&base, &tc, &train_samples, &val_samples)?)]
    } else {
        // seeds run one after another here; the library also offers a parallel ensemble trainer
        tc.seeds
            .iter()
            .map(|&seed| Ok((seed, train_model(&tc, metric, seed, &train_samples, &val_samples)?)))
            .collect::<Result<Vec<_>>>()?
    };
    for (seed, outcome) in outcomes {
        outcome.checkpoint.save(&dir.join(format!("seed_{seed}.json")))?;
        fs::write(dir.join(format!("seed_{seed}.log.csv")), outcome.log_csv())?;
        eprintln!(
            "{metric} seed {seed}: best epoch {} val loss {:.5}",
            outcome.best_epoch, outcome.best_val_loss
        );
    }
    Ok(())
}

fn run_evaluate(cfg: &FileConfig, a: EvaluateArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let examples: Vec<_> = if a.all {
        ds.examples.iter().collect()
    } else {
        let split = match a.split.as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            s => bail!("unknown split {s:?}"),
        };
        ds.split(split)
    };
    let models = load_models(&a.models)?;
    let mut report = EvalReport::new("evaluate", &ds.manifest.config_hash);
    for members in models.gnn.values() {
        let ens = Ensemble::new(members.iter().map(|m| m as &dyn CostPredictor).collect())?;
        report.cells.extend(evaluate_model("gnn", &ens, &examples, cfg.suite.balance_seed)?);
    }
    for model in models.flat.values() {
        report.cells.extend(evaluate_model("flat", model, &examples, cfg.suite.balance_seed)?);
    }
    for members in models.gnn.values() {
        let hashes: Vec<String> = members.iter().map(|m| m.content_hash()[..16].to_string()).collect();
        report.notes.push(format!("{} checkpoints {}", members[0].metric, hashes.join(",")));
    }
    report.save(&a.out, "report")?;
    for c in report.cells.iter().filter(|c| c.group == "all") {
        println!("{} {} n={} {:.4}", c.model, c.metric, c.n, c.headline());
    }
    Ok(())
}

fn run_optimize(cfg: &FileConfig, a: OptimizeArgs) -> Result<()> {
    let q: QueryGraph = read_json(&a.query)?;
    let hw: Vec<HardwareNode> = read_json(&a.inventory)?;
    let target = parse_metric(&a.target)?;
    let direction = match a.direction.as_deref() {
        None => Direction::for_metric(target),
        Some("min") => Direction::Min,
        Some("max") => Direction::Max,
        Some(d) => bail!("direction must be min or max, got {d:?}"),
    };
    let models = load_models(&a.models)?;
    let ensembles = gnn_ensembles(&models.gnn);
    if !ensembles.contains_key(&target) {
        bail!("no {target} models under {}", a.models.display());
    }
    let mut rng = streamcost_core::generate::item_rng(a.seed, 0);
    let cands = enumerate_candidates(&q, &hw, a.k, &cfg.gen.bins, &mut rng)?;
    let predicted = predict_candidates(&cands, &q, &hw, &ensembles)?;
    let report = select_placement(&predicted, target, direction);
    let chosen = &predicted[report.selection.index()];
    let out = serde_json::json!({
        "target": target,
        "direction": direction,
        "selection": report.selection,
        "placement": chosen.placement,
        "predictions": chosen.aggregated,
        "candidates": predicted,
        "decisions": report.decisions,
    });
    let text = serde_json::to_string_pretty(&out)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_suite(cfg: &FileConfig, a: SuiteArgs) -> Result<()> {
    let sc = cfg.suite();
    match a.kind {
        SuiteKind::Interpolation => {
            let ds = Dataset::load(a.data.as_deref().context("--data is required")?)?;
            let models = load_models(a.models.as_deref().context("--models is required")?)?;
            let report = interpolation_suite(&models.gnn, &ds, &sc)?;
            report.save(&a.out, "interpolation")?;
        }
        SuiteKind::Extrapolation => {
            let cases = match &a.cases {
                None => all_extrapolation_cases(),
                Some(list) => {
                    let wanted: Vec<&str> = list.split(',').map(str::trim).collect();
                    let all = all_extrapolation_cases();
                    let picked: Vec<_> =
                        all.into_iter().filter(|&(d, k)| wanted.contains(&extrapolation_case_name(d, k).as_str())).collect();
                    if picked.len() != wanted.len() {
                        bail!("unknown extrapolation case in {list:?}");
                    }
                    picked
                }
            };
            let report = extrapolation_suite(&sc, &cases)?;
            report.save(&a.out, "extrapolation")?;
        }
        SuiteKind::Ablation => {
            let ds = Dataset::load(a.data.as_deref().context("--data is required")?)?;
            let full = a.models.as_deref().map(load_models).transpose()?;
            let report = ablation_suite(&ds, &sc, &AblationVariant::ALL, full.as_ref().map(|m| &m.gnn))?;
            report.save(&a.out, "ablation")?;
        }
        SuiteKind::PlacementStudy => {
            let models = load_models(a.models.as_deref().context("--models is required")?)?;
            let gnn = gnn_ensembles(&models.gnn);
            let flat = flat_ensembles(&models.flat);
            let mut predictors: Vec<(&str, &Ensembles)> = Vec::new();
            if !gnn.is_empty() {
                predictors.push(("gnn", &gnn));
            }
            if !flat.is_empty() {
                predictors.push(("flat", &flat));
            }
            let report = placement_study(&predictors, &sc, a.per_family, a.k)?;
            report.save(&a.out, "placement-study")?;
            for s in &report.summary {
                println!("{} {} n={} median speed-up {:.3}", s.predictor, s.family, s.n, s.median_speedup);
            }
        }
    }
    eprintln!("wrote report to {}", a.out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => run_generate(&cfg, a),
        Command::Simulate(a) => run_simulate(&cfg, a),
        Command::Train(a) => run_train(&cfg, a),
        Command::Evaluate(a) => run_evaluate(&cfg, a),
        Command::Optimize(a) => run_optimize(&cfg, a),
        Command::Suite(a) => run_suite(&cfg, a),
    }
}
