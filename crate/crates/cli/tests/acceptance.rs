//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs as a plain binary (`harness = false`) so the
//! criteria share the synthetic datasets and training runs they build.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clci_core::data::{
    crop_center, crop_offsets, histogram_edges, lesion_size_histogram, load_dataset, make_split, proportional_counts,
    synth_dataset, Difficulty, Layout, SamplePair, Split,
};
use clci_core::gradsuite::OPS;
use clci_core::metrics::{confusion, dsc, precision, recall, rvd, voe, BinaryMask};
use clci_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, Toggles};
use clci_core::nn::{Mode, Session};
use clci_core::tensor::{Shape, Tensor};
use clci_core::train::{gaussian_init, make_batch, InitPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Ctx {
    root: tempfile::TempDir,
    overfit_data: Option<PathBuf>,
    full_run: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

fn clci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clci")).args(args).output().expect("clci runs")
}

fn run_ok(args: &[&str]) -> Result<String> {
    let out = clci(args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    ensure!(
        out.status.success(),
        "`clci {}` exited with {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(stdout)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

// ---------------------------------------------------------------------------

fn gradient_suite(_: &mut Ctx) -> Result<String> {
    let started = Instant::now();
    let text = run_ok(&["gradcheck", "--ops", "all"])?;
    let secs = started.elapsed().as_secs_f64();

    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut seen = HashSet::new();
    for line in text.lines().filter(|l| l.contains("max_rel_error")) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        ensure!(fields[0] == "ok", "failing case: {line}");
        seen.insert(fields[1].to_string());
        let pos = fields.iter().position(|f| *f == "max_rel_error").unwrap();
        worst = worst.max(fields[pos + 1].parse()?);
        cases += 1;
    }
    for op in OPS {
        ensure!(seen.contains(*op), "op {op} was not checked");
    }
    // every conv geometry the model instantiates
    for combo in ["k3 s1 p1", "k3 s2 p1", "k1 s1", "k1 s2", "k1 s4", "k1 s8", "k1 s16", "k3 d6 p6", "k3 d12 p12", "k3 d18 p18"] {
        ensure!(text.contains(combo), "conv2d case `{combo}` missing");
    }
    ensure!(worst < 1e-6, "max relative error {worst:e}");
    ensure!(secs < 120.0, "took {secs:.1}s");

    let faulty = clci(&["gradcheck", "--ops", "convlstm", "--inject-fault", "sigmoid"]);
    ensure!(faulty.status.code() == Some(1), "injected fault exited with {:?}", faulty.status.code());
    Ok(format!("{cases} cases, max rel error {worst:.2e}, {secs:.1}s; injected fault caught"))
}

// ---------------------------------------------------------------------------

struct RowProbe {
    toggles: Toggles,
    params: usize,
    output: Tensor<f32>,
    prefusion: Option<Shape>,
    branch: usize,
}

fn structural_probe() -> Result<Vec<RowProbe>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = Tensor::from_fn(Shape::new(1, 1, 224, 176), |_, _, _, _| rng.random::<f32>());
    Toggles::all()
        .into_iter()
        .map(|toggles| {
            let mut model = Model::<f32>::new(ModelConfig::default().with_toggles(toggles))?;
            gaussian_init(&mut model.store, InitPolicy::Scaled, 0);
            let branch = model.config().branch_channels();
            let params = model.parameter_count();
            let net = &model.net;
            let mut s = Session::new(&mut model.store, Mode::Eval);
            let x = s.input(image.clone());
            let y = net.forward(&mut s, x)?;
            Ok(RowProbe {
                toggles,
                params,
                output: s.value(y).clone(),
                prefusion: s.traced("aspp.prefusion"),
                branch,
            })
        })
        .collect()
}

fn structural(_: &mut Ctx) -> Result<String> {
    let started = Instant::now();
    let rows = structural_probe()?;
    let secs = started.elapsed().as_secs_f64();
    for r in &rows {
        ensure!(r.output.shape() == Shape::new(1, 1, 224, 176), "row {}: output {}", r.toggles, r.output.shape());
        ensure!(
            r.output.data().iter().all(|&v| v > 0.0 && v < 1.0),
            "row {}: output leaves (0, 1)",
            r.toggles
        );
        if r.toggles.aspp && r.toggles.clf {
            let pre = r.prefusion.ok_or_else(|| anyhow!("row {}: no pre-fusion trace", r.toggles))?;
            ensure!(pre.c == 9 * r.branch, "row {}: pre-fusion has {} channels, B = {}", r.toggles, pre.c, r.branch);
        }
    }
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate() {
            if i != j && i & j == i {
                ensure!(a.params < b.params, "params({}) = {} not below params({}) = {}", a.toggles, a.params, b.toggles, b.params);
            }
        }
    }
    ensure!(secs < 60.0, "took {secs:.1}s");
    let full = &rows[7];
    Ok(format!(
        "8 rows at 224x176, pre-fusion {} = 9x{}, params {}..{}, {secs:.1}s",
        full.prefusion.map(|s| s.c).unwrap_or(0),
        full.branch,
        rows[0].params,
        full.params
    ))
}

// ---------------------------------------------------------------------------

struct Oracle {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

fn oracle_counts(pred: &[[bool; 16]; 16], truth: &[[bool; 16]; 16]) -> Oracle {
    let mut o = Oracle { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for y in 0..16 {
        for x in 0..16 {
            match (pred[y][x], truth[y][x]) {
                (true, true) => o.tp += 1,
                (true, false) => o.fp += 1,
                (false, true) => o.fn_ += 1,
                (false, false) => o.tn += 1,
            }
        }
    }
    o
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn metric_oracle(_: &mut Ctx) -> Result<String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut empties = 0;
    for k in 0..1000 {
        let mut grid = |empty: bool| {
            let density: f64 = if empty { 0.0 } else { rng.random() };
            let mut g = [[false; 16]; 16];
            for row in g.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_bool(density);
                }
            }
            g
        };
        let pred = grid(k % 37 == 0);
        let truth = grid(k % 41 == 1 || k == 0);
        let o = oracle_counts(&pred, &truth);
        empties += usize::from(o.tp + o.fn_ == 0) + usize::from(o.tp + o.fp == 0);

        let pm = BinaryMask::from_fn(16, 16, |y, x| pred[y][x]);
        let tm = BinaryMask::from_fn(16, 16, |y, x| truth[y][x]);
        let c = confusion(&pm, &tm)?;
        ensure!(
            (c.tp, c.fp, c.fn_, c.tn) == (o.tp, o.fp, o.fn_, o.tn),
            "pair {k}: counts differ from the double loop"
        );

        let (pv, tv) = (o.tp + o.fp, o.tp + o.fn_);
        let want = [
            ("dsc", 2.0 * ratio(o.tp, 2 * o.tp + o.fp + o.fn_, 0.5), dsc(&c)),
            ("precision", ratio(o.tp, pv, if tv == 0 { 1.0 } else { 0.0 }), precision(&c)),
            ("recall", ratio(o.tp, tv, if pv == 0 { 1.0 } else { 0.0 }), recall(&c)),
            ("voe", 100.0 * (1.0 - ratio(o.tp, o.tp + o.fp + o.fn_, 1.0)), voe(&c)),
        ];
        for (name, expected, got) in want {
            ensure!((expected - got).abs() <= 1e-9, "pair {k}: {name} {got} vs oracle {expected}");
        }
        let r = rvd(&c);
        match (pv, tv) {
            (0, 0) => ensure!(r == 0.0, "pair {k}: rvd {r}"),
            (_, 0) => ensure!(r == f64::INFINITY, "pair {k}: rvd {r}"),
            _ => {
                let expected = 100.0 * (pv as f64 - tv as f64) / tv as f64;
                ensure!((r - expected).abs() <= 1e-9, "pair {k}: rvd {r} vs oracle {expected}");
            }
        }
        let d = dsc(&c);
        let identity = 100.0 * (1.0 - d / (2.0 - d));
        ensure!((voe(&c) - identity).abs() <= 1e-9, "pair {k}: Dice-Jaccard identity off by {}", voe(&c) - identity);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("1000 pairs ({empties} empty masks), {secs:.2}s"))
}

// ---------------------------------------------------------------------------

const OVERFIT_CONFIG: &str = "\
width_multiplier = 0.25
input_size = 64x64
epochs = 500
max_steps = 500
batch_size = 8
eval_every = 50
patience = 0
seed = 0
lr = 0.0001
";

fn overfit_data(ctx: &mut Ctx) -> Result<PathBuf> {
    if let Some(d) = &ctx.overfit_data {
        return Ok(d.clone());
    }
    let data = ctx.path("overfit_data");
    run_ok(&["synth-data", "--out", p(&data), "--n", "8", "--size", "64x64", "--seed", "0", "--difficulty", "easy"])?;
    fs::write(ctx.path("overfit.conf"), OVERFIT_CONFIG)?;
    ctx.overfit_data = Some(data.clone());
    Ok(data)
}

struct OverfitRun {
    final_dsc: f64,
    losses: Vec<f64>,
    steps: usize,
    params: usize,
    secs: f64,
}

fn overfit_run(ctx: &mut Ctx, out: &Path, ablation: Option<&str>) -> Result<OverfitRun> {
    let data = overfit_data(ctx)?;
    let conf = ctx.path("overfit.conf");
    let mut args = vec!["train", "--data", p(&data), "--config", p(&conf), "--out", p(out)];
    if let Some(a) = ablation {
        args.extend(["--ablation", a]);
    }
    let started = Instant::now();
    let stdout = run_ok(&args)?;
    let secs = started.elapsed().as_secs_f64();
    let params = stdout
        .lines()
        .find_map(|l| l.strip_prefix("parameters: "))
        .ok_or_else(|| anyhow!("no parameter count printed"))?
        .trim()
        .parse()?;
    let log = fs::read_to_string(out.join("train_log.csv"))?;
    let losses = log.lines().skip(1).map(|l| l.split(',').nth(2).unwrap_or("").parse()).collect::<Result<Vec<f64>, _>>()?;
    let last: Vec<&str> = log.lines().last().context("empty log")?.split(',').collect();
    Ok(OverfitRun {
        losses,
        final_dsc: last[3].parse().context("final row has no val_dsc")?,
        steps: last[1].parse()?,
        params,
        secs,
    })
}

/// First window position where the 20-step moving average of the loss rises.
fn smoothed_rise(losses: &[f64]) -> Option<usize> {
    (0..losses.len().saturating_sub(20)).find(|&t| losses[t + 20] > losses[t] + 1e-9)
}

fn overfit(ctx: &mut Ctx) -> Result<String> {
    let full_dir = ctx.path("overfit_full");
    let full = overfit_run(ctx, &full_dir, None)?;
    ctx.full_run = Some(full_dir);
    let base = overfit_run(ctx, &ctx.path("overfit_base"), Some("0,0,0"))?;
    let summary = format!(
        "full DSC {:.4} ({:.0}s), baseline DSC {:.4} ({:.0}s) after {} steps",
        full.final_dsc, full.secs, base.final_dsc, base.secs, full.steps
    );
    ensure!(full.steps == 500 && base.steps == 500, "{summary}");
    ensure!(full.final_dsc >= 0.95 && base.final_dsc >= 0.95, "{summary}");
    ensure!(base.params < full.params, "baseline {} params, full {}", base.params, full.params);
    for (name, run) in [("full", &full), ("baseline", &base)] {
        if let Some(t) = smoothed_rise(&run.losses) {
            bail!("{name}: 20-step mean loss rises after step {}", t + 1);
        }
    }
    ensure!(full.secs < 900.0 && base.secs < 900.0, "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------------------

fn dead_branches(_: &mut Ctx) -> Result<String> {
    let cfg = ModelConfig {
        input_size: (64, 64),
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new(cfg)?;
    gaussian_init(&mut model.store, InitPolicy::Scaled, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = Tensor::from_fn(Shape::new(2, 1, 64, 64), |_, _, _, _| rng.random::<f32>());
    let target = Tensor::from_fn(Shape::new(2, 1, 64, 64), |_, _, _, _| f32::from(u8::from(rng.random_bool(0.3))));
    {
        let net = &model.net;
        let mut s = Session::new(&mut model.store, Mode::Train);
        let x = s.input(image);
        let t = s.input(target);
        let y = net.forward(&mut s, x)?;
        let loss = s.tape.dice_loss(y, t, 1.0)?;
        s.backward(loss)?;
    }
    let mut dead = Vec::new();
    let mut checked = 0;
    for (_, param) in model.store.trainable() {
        checked += 1;
        let norm = param.tensor.grad().map_or(0.0, |g| g.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt());
        if !(norm > 0.0 && norm.is_finite()) {
            dead.push(param.name.clone());
        }
    }
    ensure!(dead.is_empty(), "{} of {checked} parameters have zero gradient: {}", dead.len(), dead.join(", "));
    Ok(format!("{checked} trainable tensors, all with nonzero gradient"))
}

// ---------------------------------------------------------------------------

/// Relative path -> SHA-256 for every file below `dir`.
fn tree_hashes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir)?.display().to_string();
                out.insert(rel, Sha256::digest(fs::read(&path)?).to_vec());
            }
        }
    }
    Ok(out)
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn eval_outputs(model: &mut Model<f32>, samples: &[SamplePair]) -> Result<Vec<u32>> {
    let refs: Vec<&SamplePair> = samples.iter().collect();
    let (images, _) = make_batch(&refs)?;
    Ok(bits(&model.predict(&images, Mode::Eval)?))
}

fn determinism(ctx: &mut Ctx) -> Result<String> {
    let a = structural_probe()?;
    let b = structural_probe()?;
    for (x, y) in a.iter().zip(&b) {
        ensure!(x.params == y.params && bits(&x.output) == bits(&y.output), "structural row {} differs", x.toggles);
    }

    let first = match ctx.full_run.clone() {
        Some(d) => d,
        None => {
            let d = ctx.path("overfit_full");
            overfit_run(ctx, &d, None)?;
            d
        }
    };
    let second = ctx.path("overfit_full_again");
    overfit_run(ctx, &second, None)?;
    ensure!(
        fs::read(first.join("train_log.csv"))? == fs::read(second.join("train_log.csv"))?,
        "training logs differ"
    );
    let mut files = 0;
    for sub in ["best", "last"] {
        let (ha, hb) = (tree_hashes(&first.join(sub))?, tree_hashes(&second.join(sub))?);
        ensure!(!ha.is_empty(), "{sub}/ is empty");
        if ha != hb {
            let diff: Vec<_> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).cloned().collect();
            bail!("{sub}/ differs in {}", diff.join(", "));
        }
        files += ha.len();
    }

    let samples = load_dataset(&overfit_data(ctx)?, Layout::Png)?;
    let (mut trained, _) = load_checkpoint::<f32>(&first.join("best"))?;
    let before = eval_outputs(&mut trained, &samples)?;
    let copy = ctx.path("roundtrip");
    save_checkpoint(&copy, &trained, &[])?;
    let (mut reloaded, _) = load_checkpoint::<f32>(&copy)?;
    ensure!(eval_outputs(&mut reloaded, &samples)? == before, "reloaded checkpoint predicts differently");
    let (mut other, _) = load_checkpoint::<f32>(&second.join("best"))?;
    ensure!(eval_outputs(&mut other, &samples)? == before, "second run predicts differently");
    Ok(format!("8 structural rows, train log and {files} checkpoint files identical; round trip bit-exact"))
}

// ---------------------------------------------------------------------------

fn pipeline(_: &mut Ctx) -> Result<String> {
    ensure!(crop_offsets((233, 197), (224, 176))? == (4, 10), "crop offsets");
    let image = Tensor::from_fn(Shape::new(1, 1, 233, 197), |_, _, y, x| (y * 197 + x) as f32);
    let mask = BinaryMask::from_fn(233, 197, |y, x| (y * 3 + x) % 5 == 0);
    let src = SamplePair::new(image, mask.clone(), "s", 0)?;
    let crop = crop_center(&src, (224, 176))?;
    ensure!(crop.dims() == (224, 176), "crop dims {:?}", crop.dims());
    for y in 0..224 {
        for x in 0..176 {
            ensure!(crop.image.get(0, 0, y, x) == ((y + 4) * 197 + x + 10) as f32, "image pixel ({y}, {x})");
            ensure!(crop.mask.get(y, x) == mask.get(y + 4, x + 10), "mask pixel ({y}, {x})");
        }
    }

    let ids: Vec<String> = (0..220).map(|i| format!("synth{i:04}")).collect();
    let counts = proportional_counts(220, (6, 2, 3));
    ensure!(counts == (120, 40, 60), "proportional counts {counts:?}");
    for seed in 0..100 {
        let m = make_split(&ids, counts, seed)?;
        ensure!((m.train.len(), m.val.len(), m.test.len()) == (120, 40, 60), "seed {seed}: sizes");
        ensure!(m.unused.is_empty(), "seed {seed}: unused subjects");
        let all: HashSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        ensure!(all.len() == 220, "seed {seed}: splits overlap");
    }

    let samples = synth_dataset(66, (32, 32), 5, Difficulty::Hard)?;
    let sample_ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    let split = make_split(&sample_ids, proportional_counts(66, (6, 2, 3)), 5)?;
    let max = samples.iter().map(|s| s.mask.count()).max().unwrap_or(0);
    let edges = histogram_edges(max, 8);
    let hist = lesion_size_histogram(&samples, &split, &edges)?;
    ensure!(*edges.last().unwrap() > max, "bins stop below the largest lesion");
    let mut direct_total = 0;
    for (row, which) in Split::USED.into_iter().enumerate() {
        let sizes: Vec<usize> = samples
            .iter()
            .filter(|s| split.split_of(&s.subject_id) == Some(which))
            .map(|s| s.mask.count())
            .filter(|&c| c > 0)
            .collect();
        ensure!(hist.total(row) == sizes.len(), "{which}: histogram total {} vs {}", hist.total(row), sizes.len());
        for b in 0..edges.len() - 1 {
            let direct = sizes.iter().filter(|&&c| edges[b] <= c && c < edges[b + 1]).count();
            ensure!(hist.counts[row][b] == direct, "{which} bin {b}");
        }
        direct_total += sizes.len();
    }
    Ok(format!("offsets (4, 10), 100 seeds of (120, 40, 60), histogram totals {direct_total} lesion-bearing"))
}

// ---------------------------------------------------------------------------

const ABLATION_CONFIG: &str = "\
width_multiplier = 0.25
input_size = 64x64
epochs = 4
batch_size = 4
patience = 0
seed = 0
";

fn ablation(ctx: &mut Ctx) -> Result<String> {
    let data = ctx.path("ablation_data");
    run_ok(&["synth-data", "--out", p(&data), "--n", "32", "--size", "64x64", "--seed", "1", "--difficulty", "hard"])?;
    let conf = ctx.path("ablation.conf");
    fs::write(&conf, ABLATION_CONFIG)?;

    let started = Instant::now();
    let mut tables = Vec::new();
    for run in ["ablation_a", "ablation_b"] {
        let out = ctx.path(run);
        run_ok(&["ablate", "--data", p(&data), "--config", p(&conf), "--out", p(&out)])?;
        for t in Toggles::all() {
            let row = out.join(format!("row_a{}c{}i{}", t.aspp as u8, t.clf as u8, t.inference as u8));
            for sub in ["best", "last", "evaluated"] {
                ensure!(row.join(sub).join("manifest.txt").is_file(), "{} has no {sub}/ checkpoint", row.display());
            }
        }
        tables.push(fs::read_to_string(out.join("ablation.csv"))?);
    }
    let secs = started.elapsed().as_secs_f64() / 2.0;
    ensure!(tables[0] == tables[1], "reruns differ");

    let lines: Vec<&str> = tables[0].lines().collect();
    ensure!(lines.len() == 9, "{} lines", lines.len());
    let header: Vec<&str> = lines[0].split(',').collect();
    ensure!(header[..8] == ["aspp", "clf", "inference", "dsc", "precision", "recall", "voe", "rvd"], "header {}", lines[0]);
    for (line, t) in lines[1..].iter().zip(Toggles::all()) {
        let cols: Vec<&str> = line.split(',').collect();
        ensure!(cols[..3].join(",") == t.to_string(), "row `{line}` out of order, expected {t}");
        for (name, v) in header[3..8].iter().zip(&cols[3..8]) {
            let v: f64 = v.parse().with_context(|| format!("row {t}: {name} = `{v}`"))?;
            ensure!(v.is_finite(), "row {t}: {name} is {v}");
        }
    }
    ensure!(secs < 3600.0, "took {secs:.0}s");
    Ok(format!("8 rows over {{0,1}}^3, identical on rerun, {secs:.0}s per run"))
}

// ---------------------------------------------------------------------------

type Criterion = fn(&mut Ctx) -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("gradient suite", gradient_suite),
        ("structural invariants", structural),
        ("metric oracle equivalence", metric_oracle),
        ("overfit check", overfit),
        ("dead-branch check", dead_branches),
        ("determinism", determinism),
        ("pipeline exactness", pipeline),
        ("ablation harness", ablation),
    ];
    let mut ctx = Ctx {
        root: tempfile::tempdir().expect("temp dir"),
        overfit_data: None,
        full_run: None,
    };
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| check(&mut ctx)))
            .unwrap_or_else(|e| Err(anyhow!("panicked: {:?}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({e:#}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
