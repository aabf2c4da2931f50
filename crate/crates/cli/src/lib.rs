//! Subcommands of the `dtnet` binary.

pub mod overrides;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dtnet_core::ablation::{ablate, AblationGrid};
use dtnet_core::checkpoint;
use dtnet_core::data::{
    prepare, write_dataset, DatasetManifest, Recipe, Sample, Split, DEFAULT_EDGE_WIDTH,
};
use dtnet_core::gradcheck::{self, Settings};
use dtnet_core::heatmap::export_heatmaps;
use dtnet_core::metrics::{format_table, AveragingMode, MetricReport};
use dtnet_core::train::{evaluate, train, DatasetConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "dtnet", version, about = "Dual-task road segmentation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic road dataset on disk.
    Synth(SynthArgs),
    /// Tile and resize source rasters following a dataset recipe.
    Prep(PrepArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train and evaluate every entry of an ablation grid.
    Ablate(AblateArgs),
    /// Export channel-mean heat maps of named layers.
    Heatmaps(HeatmapArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// One of munich, massachusetts, loveda.
    #[arg(long)]
    pub recipe: String,
    /// Manifest listing the source image/mask rasters.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of tiles to draw (defaults to the recipe total).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the derived edge labels.
    #[arg(long, default_value_t = DEFAULT_EDGE_WIDTH)]
    pub edge_width: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set optimizer.learning_rate=5e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest; defaults to the checkpoint's training data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub mode: Option<AveragingMode>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write `eval.txt` and `eval.toml` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// cgm, fbm, side or span.
    #[arg(long)]
    pub grid: String,
    /// One or more seeds, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub seed: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    /// Dataset manifest to take the sample from; defaults to the checkpoint's data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the available layer names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the end-to-end network probe.
    #[arg(long)]
    pub components_only: bool,
}

/// Loads the run configuration: file, then `--set` overrides, then flags.
pub fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<RunConfig> {
    let mut table = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    overrides::apply(&mut table, &args.overrides)?;
    // A dataset table without a source means the synthetic generator.
    if let Some(toml::Value::Table(d)) = table.get_mut("dataset") {
        d.entry("source").or_insert_with(|| toml::Value::String("synthetic".into()));
    }
    let mut cfg: RunConfig = table.try_into().context("invalid run configuration")?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(s.parse::<Split>()?)
}

/// Samples of `split` from a manifest or, failing that, the run's dataset.
fn split_samples(data: Option<&Path>, run: Option<&RunConfig>, split: Split) -> Result<Vec<Sample>> {
    let source = match (data, run) {
        (Some(p), _) => DatasetConfig::Manifest { path: p.to_path_buf() },
        (None, Some(r)) => r.dataset.clone(),
        (None, None) => bail!("no dataset given and the checkpoint records none; pass --data"),
    };
    let (train, test) = source.load()?;
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
    })
}

pub fn synth(a: &SynthArgs) -> Result<String> {
    let source = DatasetConfig::Synthetic {
        train: a.train,
        test: a.test,
        size: a.size,
        seed: a.seed,
    };
    let (tr, te) = source.load()?;
    let m = write_dataset(&a.out, &tr, &te)?;
    Ok(format!(
        "wrote {} train / {} test samples of {s}x{s} to {}\n",
        tr.len(),
        te.len(),
        m.root.display(),
        s = a.size
    ))
}

pub fn prep(a: &PrepArgs) -> Result<String> {
    let recipe = Recipe::by_name(&a.recipe)?;
    let input = DatasetManifest::load(&a.input)?;
    let sources = input
        .entries
        .iter()
        .map(|e| input.load_pair(e))
        .collect::<dtnet_core::Result<Vec<_>>>()?;
    let set = prepare(&recipe, &sources, a.count, a.seed)?;
    let to_samples = |tiles: Vec<dtnet_core::data::Tile>| {
        tiles
            .into_iter()
            .map(|t| Sample::with_derived_edge(t.image, t.mask, a.edge_width))
            .collect::<dtnet_core::Result<Vec<_>>>()
    };
    let (tr, te) = (to_samples(set.train)?, to_samples(set.test)?);
    write_dataset(&a.out, &tr, &te)?;
    Ok(format!(
        "{}: {} sources -> {} train / {} test tiles of {s}x{s} in {}\n",
        recipe.name,
        sources.len(),
        tr.len(),
        te.len(),
        a.out.display(),
        s = recipe.output_size()
    ))
}

fn report_files(dir: &Path, stem: &str, title: &str, label: &str, r: &MetricReport) -> Result<()> {
    write_file(&dir.join(format!("{stem}.txt")), &format_table(title, &[(label.to_string(), *r)]))?;
    write_file(&dir.join(format!("{stem}.toml")), &r.to_key_values(""))
}

pub fn train_cmd(a: &TrainArgs) -> Result<String> {
    let cfg = load_config(&a.cfg, Some(a.seed))?;
    let quiet = a.quiet;
    let out = train(&cfg, &mut |r| {
        if !quiet {
            let test = r.test.map(|m| format!("  test {m}")).unwrap_or_default();
            eprintln!("epoch {:>3}  steps {:>5}  loss {:.4}{test}", r.epoch, r.steps, r.train_loss);
        }
    })?;
    let dir = &cfg.out_dir;
    checkpoint::save(&dir.join("checkpoint"), &out.network, out.history.step_losses.len(), Some(&cfg))?;
    write_file(&dir.join("history.csv"), &out.history.to_csv())?;
    let mut summary = format!("checkpoint written to {}\n", dir.join("checkpoint").display());
    if let Some(r) = out.history.final_report() {
        report_files(dir, "metrics", "run", "final", &r)?;
        summary.push_str(&format_table("run", &[("final".into(), r)]));
    }
    Ok(summary)
}

pub fn eval_cmd(a: &EvalArgs) -> Result<String> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let split = parse_split(&a.split)?;
    let samples = split_samples(a.data.as_deref(), ck.run.as_ref(), split)?;
    let threshold = a.threshold.or(ck.run.as_ref().map(|r| r.threshold)).unwrap_or(0.5);
    let mode = a.mode.or(ck.run.as_ref().map(|r| r.metric_mode)).unwrap_or_default();
    let r = evaluate(&ck.network, &samples, threshold, mode)?;
    if let Some(dir) = &a.out {
        report_files(dir, "eval", "checkpoint", &a.split, &r)?;
    }
    Ok(format_table("checkpoint", &[(a.split.clone(), r)]))
}

pub fn ablate_cmd(a: &AblateArgs) -> Result<String> {
    let seed = a.seed.first().copied();
    let cfg = load_config(&a.cfg, seed)?;
    let grid = AblationGrid::by_name(&a.grid, &cfg.network)?;
    grid.validate()?;
    let (tr, te) = cfg.dataset.load()?;
    let report = ablate(&grid, &cfg, &a.seed, &tr, &te, &mut |name, seed, out| match out {
        Ok((m, _)) => eprintln!("{name} seed {seed}: {m}"),
        Err(e) => eprintln!("{name} seed {seed}: FAILED {e}"),
    })?;
    let dir = cfg.out_dir.join(format!("ablate-{}", grid.name));
    report.write(&dir)?;
    Ok(format!("{}reports written to {}\n", report.table(), dir.display()))
}

pub fn heatmaps_cmd(a: &HeatmapArgs) -> Result<String> {
    let ck = checkpoint::load(&a.checkpoint)?;
    if a.list {
        return Ok(ck.network.layer_names().join("\n") + "\n");
    }
    if a.layers.is_empty() {
        bail!("pass --layers (see --list)");
    }
    let samples = split_samples(a.data.as_deref(), ck.run.as_ref(), parse_split(&a.split)?)?;
    let sample = samples
        .get(a.index)
        .with_context(|| format!("split has {} samples, index {} requested", samples.len(), a.index))?;
    let dir = a.out.clone().unwrap_or_else(|| a.checkpoint.join("heatmaps"));
    let layers: Vec<&str> = a.layers.iter().map(String::as_str).collect();
    let paths = export_heatmaps(&ck.network, sample, &layers, &dir)?;
    Ok(paths.iter().map(|p| format!("{}\n", p.display())).collect())
}

/// Returns the report text and whether every check passed.
pub fn gradcheck_cmd(a: &GradcheckArgs) -> Result<(String, bool)> {
    let settings = Settings::default();
    let reports = if a.components_only {
        gradcheck::component_suite(&settings, a.seed)?
    } else {
        gradcheck::full_suite(&settings, a.seed)?
    };
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{:<4} {:<28} max_rel {:.3e}  max_abs {:.3e}  n {:>4}  tol {:.0e}\n",
            if r.passed() { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.max_abs_err,
            r.checked,
            r.tolerance
        ));
    }
    Ok((text, reports.iter().all(|r| r.passed())))
}

/// Runs a parsed command line; returns text for stdout and the exit code.
pub fn run(cli: Cli) -> Result<(String, i32)> {
    Ok(match &cli.command {
        Command::Synth(a) => (synth(a)?, 0),
        Command::Prep(a) => (prep(a)?, 0),
        Command::Train(a) => (train_cmd(a)?, 0),
        Command::Eval(a) => (eval_cmd(a)?, 0),
        Command::Ablate(a) => (ablate_cmd(a)?, 0),
        Command::Heatmaps(a) => (heatmaps_cmd(a)?, 0),
        Command::Gradcheck(a) => {
            let (text, ok) = gradcheck_cmd(a)?;
            (text, if ok { 0 } else { 1 })
        }
    })
}
