use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use clci_core::data::{
    crop_center, histogram_edges, lesion_size_histogram, load_dataset, make_split, proportional_counts, save_dataset,
    synth_dataset, Difficulty, Layout, SamplePair, Split, SplitManifest,
};
use clci_core::gradsuite::{parse_fault, parse_ops, run_suite};
use clci_core::kv;
use clci_core::metrics::{aggregate_report, MetricsReport, MetricsRow};
use clci_core::model::{load_checkpoint, Model, Toggles};
use clci_core::tensor::gradcheck::GradCheck;
use clci_core::train::{evaluate, init_model, resume, run_ablation_matrix, select, train, RunConfig};

const SPLIT_FILE: &str = "split.tsv";
const LOG_FILE: &str = "train_log.csv";

#[derive(Parser)]
#[command(name = "clci", version, about = "Lesion segmentation with cross-level fusion and ConvLSTM context inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image/mask dataset.
    SynthData(SynthArgs),
    /// Train one model configuration.
    Train(TrainArgs),
    /// Score a checkpoint (or the masks themselves) on a dataset.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients of every op.
    Gradcheck(GradcheckArgs),
    /// Train and test all eight aspp/clf/inference combinations.
    Ablate(AblateArgs),
    /// Lesion-size histogram per split.
    Histogram(HistogramArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// HxW; both sides must be multiples of 16.
    #[arg(long, default_value = "64x64", value_parser = parse_size16)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "easy")]
    difficulty: Difficulty,
    /// Also write split.tsv with subject counts in this train:val:test ratio.
    #[arg(long, value_parser = parse_ratio)]
    split_ratio: Option<(usize, usize, usize)>,
    #[arg(long, default_value = "png", value_parser = parse_layout)]
    format: Layout,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Toggle bits `aspp,clf,inference`, e.g. `0,0,0`.
    #[arg(long)]
    ablation: Option<Toggles>,
    /// Checkpoint and log directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue from `<out>/last`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory (`best/`, `last/` or any saved model).
    #[arg(long, required_unless_present = "mask_as_prediction")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Score each ground-truth mask against itself.
    #[arg(long, conflicts_with = "checkpoint")]
    mask_as_prediction: bool,
    /// Only subjects of this split from `<data>/split.tsv`.
    #[arg(long)]
    subset: Option<Split>,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or a comma-separated list of op names.
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Corrupt the backward rule of this op (negative control).
    #[arg(long, value_parser = parse_fault_arg)]
    inject_fault: Option<clci_core::tensor::OpKind>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistogramArgs {
    #[arg(long)]
    data: PathBuf,
    /// Split manifest; defaults to `<data>/split.tsv`.
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    out_csv: PathBuf,
}

/// Exit 2 for bad invocations, 1 for everything that fails while running.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn parse_size16(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = kv::size("size", s).map_err(|e| e.to_string())?;
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return Err(format!("{h}x{w} is not divisible by 16"));
    }
    Ok((h, w))
}

fn parse_ratio(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad ratio part `{p}`")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a + b + c > 0 => Ok((a, b, c)),
        _ => Err(format!("expected train:val:test, got `{s}`")),
    }
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    match s {
        "png" => Ok(Layout::Png),
        "raw" => Ok(Layout::Raw),
        _ => Err(format!("expected png or raw, got `{s}`")),
    }
}

fn parse_fault_arg(s: &str) -> Result<clci_core::tensor::OpKind, String> {
    parse_fault(s).map_err(|e| e.to_string())
}

fn print_config(command: &str, pairs: &[(&str, String)]) {
    println!("# {command}: resolved configuration");
    print!("{}", kv::render(pairs.iter().map(|(k, v)| (*k, v.as_str()))));
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn opt_str<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn require_dir(flag: &str, p: &Path) -> CmdResult {
    if p.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("--{flag} {}: no such directory", p.display())))
    }
}

fn load_samples(root: &Path) -> anyhow::Result<Vec<SamplePair>> {
    load_dataset(root, Layout::detect(root)).with_context(|| format!("loading {}", root.display()))
}

/// Config file plus overrides; `input_size` follows the data unless the file sets it.
fn load_run_config(path: Option<&Path>, toggles: Option<Toggles>, samples: &[SamplePair]) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    let mut sized = false;
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("--config {}: {e}", p.display())))?;
        for (k, v) in kv::parse(&text).map_err(usage)? {
            sized |= k == "input_size";
            cfg.apply(&k, &v).map_err(usage)?;
        }
    }
    if !sized {
        if let Some(s) = samples.first() {
            cfg.model.input_size = s.dims();
        }
    }
    if let Some(t) = toggles {
        cfg.model = cfg.model.with_toggles(t);
    }
    cfg.validate().map_err(usage)?;
    cfg.model.check_input(cfg.model.input_size.0, cfg.model.input_size.1).map_err(usage)?;
    Ok(cfg)
}

/// Center-crops samples larger than `size`; smaller ones are an error.
fn fit_to(samples: Vec<SamplePair>, size: (usize, usize)) -> anyhow::Result<Vec<SamplePair>> {
    samples
        .into_iter()
        .map(|s| {
            if s.dims() == size {
                Ok(s)
            } else {
                crop_center(&s, size).with_context(|| format!("sample {}", s.stem()))
            }
        })
        .collect()
}

fn read_split(path: &Path) -> anyhow::Result<SplitManifest> {
    SplitManifest::load(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    print_config(
        "synth-data",
        &[
            ("out", path_str(&a.out)),
            ("n", a.n.to_string()),
            ("size", format!("{}x{}", a.size.0, a.size.1)),
            ("seed", a.seed.to_string()),
            ("difficulty", a.difficulty.to_string()),
            ("split_ratio", opt_str(&a.split_ratio.map(|(t, v, s)| format!("{t}:{v}:{s}")))),
            ("format", a.format.extension().to_string()),
        ],
    );
    let samples = synth_dataset(a.n, a.size, a.seed, a.difficulty)?;
    save_dataset(&a.out, &samples, a.format)?;
    if let Some(ratio) = a.split_ratio {
        let ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
        let split = make_split(&ids, proportional_counts(ids.len(), ratio), a.seed)?;
        split.save(&a.out.join(SPLIT_FILE))?;
        println!("split: {} train, {} val, {} test", split.train.len(), split.val.len(), split.test.len());
    }
    let sizes: Vec<usize> = samples.iter().map(|s| s.mask.count()).filter(|&c| c > 0).collect();
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    if sizes.is_empty() {
        println!("lesion-bearing samples: 0");
    } else {
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        println!(
            "lesion-bearing samples: {}  lesion pixels min {} mean {:.1} max {}",
            sizes.len(),
            sizes.iter().min().unwrap(),
            mean,
            sizes.iter().max().unwrap()
        );
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    require_dir("data", &a.data)?;
    let samples = load_samples(&a.data)?;
    if samples.is_empty() {
        return Err(usage(format!("--data {}: no samples", a.data.display())));
    }
    let mut cfg = load_run_config(a.config.as_deref(), a.ablation, &samples)?;
    cfg.train.checkpoint_dir = Some(a.out.clone());
    let split_path = a.data.join(SPLIT_FILE);
    let split = split_path.is_file().then(|| read_split(&split_path)).transpose()?;
    print_config(
        "train",
        &[
            ("data", path_str(&a.data)),
            ("out", path_str(&a.out)),
            ("split", split.as_ref().map(|_| path_str(&split_path)).unwrap_or_else(|| "none (train = val = all)".into())),
            ("resume", a.resume.to_string()),
        ],
    );
    print!("{}", cfg.render());

    let samples = fit_to(samples, cfg.model.input_size)?;
    let (train_set, val_set) = match &split {
        Some(m) => (select(&samples, m, Split::Train), select(&samples, m, Split::Val)),
        None => (samples.clone(), samples),
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), cfg.render())?;

    let started = Instant::now();
    let (model, outcome) = if a.resume {
        resume(&train_set, &val_set, &cfg.train)?
    } else {
        let mut model = Model::<f32>::new(cfg.model.clone())?;
        println!("parameters: {}", model.parameter_count());
        init_model(&mut model, &cfg.train);
        let outcome = train(&mut model, &train_set, &val_set, &cfg.train)?;
        (model, outcome)
    };
    fs::write(a.out.join(LOG_FILE), outcome.log.to_csv())?;
    if a.resume {
        println!("parameters: {}", model.parameter_count());
    }
    println!(
        "steps {}  best val_dsc {:.4} at step {}{}  ({:.1}s)",
        outcome.steps,
        outcome.best_val_dsc,
        outcome.best_step,
        if outcome.stopped_early { "  stopped early" } else { "" },
        started.elapsed().as_secs_f64()
    );
    if let Some(last) = outcome.log.rows.last() {
        println!("final: epoch {} step {} loss {:.6} val_dsc {}", last.epoch, last.step, last.loss, opt_str(&last.val_dsc));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    require_dir("data", &a.data)?;
    if let Some(c) = &a.checkpoint {
        require_dir("checkpoint", c)?;
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!("--threshold {} outside [0, 1]", a.threshold)));
    }
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be at least 1"));
    }
    print_config(
        "eval",
        &[
            ("data", path_str(&a.data)),
            ("checkpoint", opt_str(&a.checkpoint.as_deref().map(path_str))),
            ("out_csv", path_str(&a.out_csv)),
            ("threshold", a.threshold.to_string()),
            ("mask_as_prediction", a.mask_as_prediction.to_string()),
            ("subset", opt_str(&a.subset)),
            ("batch_size", a.batch_size.to_string()),
        ],
    );
    let mut samples = load_samples(&a.data)?;
    if let Some(which) = a.subset {
        let split = read_split(&a.data.join(SPLIT_FILE))?;
        samples = select(&samples, &split, which);
    }
    if samples.is_empty() {
        return Err(anyhow!("no samples to evaluate").into());
    }
    let report = match &a.checkpoint {
        Some(dir) => {
            let (mut model, _) = load_checkpoint::<f32>(dir).with_context(|| format!("loading {}", dir.display()))?;
            let samples = fit_to(samples, model.config().input_size)?;
            evaluate(&mut model, &samples, a.threshold, a.batch_size)?
        }
        None => {
            let rows = samples
                .iter()
                .map(|s| MetricsRow::from_masks(&s.subject_id, s.slice_index, &s.mask, &s.mask))
                .collect::<clci_core::Result<Vec<_>>>()?;
            aggregate_report(rows)?
        }
    };
    write_report(&report, &a.out_csv)?;
    println!("samples: {}", report.rows.len());
    println!("{}", report.summary());
    Ok(())
}

fn write_report(report: &MetricsReport, path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write(path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let ops = parse_ops(&a.ops).map_err(usage)?;
    if !(a.tolerance > 0.0 && a.epsilon > 0.0) {
        return Err(usage("--tolerance and --epsilon must be positive"));
    }
    print_config(
        "gradcheck",
        &[
            ("ops", ops.join(",")),
            ("seed", a.seed.to_string()),
            ("tolerance", a.tolerance.to_string()),
            ("epsilon", a.epsilon.to_string()),
            ("inject_fault", opt_str(&a.inject_fault)),
        ],
    );
    let check = GradCheck {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        fault: a.inject_fault,
    };
    let started = Instant::now();
    let results = run_suite(&ops, a.seed, check)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.report.passed { "ok" } else { "FAIL" };
        failed += usize::from(!r.report.passed);
        println!(
            "{status:4} {:12} {:24} max_rel_error {:.3e}  ({} elements)",
            r.op, r.case, r.report.max_rel_error, r.report.checked
        );
    }
    println!(
        "{} of {} cases passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(anyhow!("{failed} gradient check(s) exceeded tolerance {}", a.tolerance).into());
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    require_dir("data", &a.data)?;
    let samples = load_samples(&a.data)?;
    if samples.is_empty() {
        return Err(usage(format!("--data {}: no samples", a.data.display())));
    }
    let cfg = load_run_config(a.config.as_deref(), None, &samples)?;
    print_config("ablate", &[("data", path_str(&a.data)), ("out", path_str(&a.out))]);
    print!("{}", cfg.render());
    let samples = fit_to(samples, cfg.model.input_size)?;
    fs::create_dir_all(&a.out)?;
    let started = Instant::now();
    let table = run_ablation_matrix(&cfg.model, &cfg.train, &samples, Some(&a.out), |row| {
        println!(
            "row {}  params {}  steps {}  best val_dsc {:.4}  test dsc {:.4}  ({:.0}s)",
            row.toggles,
            row.params,
            row.steps,
            row.best_val_dsc,
            row.test.dsc,
            started.elapsed().as_secs_f64()
        );
    })?;
    table.split.save(&a.out.join(SPLIT_FILE))?;
    let csv = a.out.join("ablation.csv");
    fs::write(&csv, table.to_csv())?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_histogram(a: HistogramArgs) -> CmdResult {
    require_dir("data", &a.data)?;
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let split_path = a.splits.clone().unwrap_or_else(|| a.data.join(SPLIT_FILE));
    if !split_path.is_file() {
        return Err(usage(format!("split manifest {} not found", split_path.display())));
    }
    print_config(
        "histogram",
        &[
            ("data", path_str(&a.data)),
            ("splits", path_str(&split_path)),
            ("bins", a.bins.to_string()),
            ("out_csv", path_str(&a.out_csv)),
        ],
    );
    let samples = load_samples(&a.data)?;
    let split = read_split(&split_path)?;
    let max = samples.iter().map(|s| s.mask.count()).max().unwrap_or(0);
    let hist = lesion_size_histogram(&samples, &split, &histogram_edges(max, a.bins))?;
    if let Some(parent) = a.out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out_csv, hist.to_csv())?;
    println!(
        "lesion-bearing samples: train {}  val {}  test {}  (largest lesion {} px)",
        hist.total(0),
        hist.total(1),
        hist.total(2),
        max
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Histogram(a) => cmd_histogram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
