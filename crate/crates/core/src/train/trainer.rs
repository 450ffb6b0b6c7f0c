use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, gaussian_init, OptimState, TrainConfig};
use crate::data::{normalize_intensity, SamplePair};
use crate::error::{Error, Result};
use crate::kv;
use crate::metrics::{aggregate_report, binarize, BinaryMask, MetricsReport, MetricsRow};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::nn::{Mode, ParameterStore};
use crate::tensor::{io, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub val_dsc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,step,loss,val_dsc";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        s.push_str(&self.rows_csv());
        s
    }

    /// Rows without the header, for appending to an existing log.
    pub fn rows_csv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let v = r.val_dsc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.step, r.loss, v);
        }
        s
    }

    pub fn last_val_dsc(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_dsc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub steps: usize,
    pub best_val_dsc: f64,
    pub best_step: usize,
    /// Weights at the best validation DSC.
    pub best: ParameterStore<f32>,
    pub stopped_early: bool,
}

/// Initial weights for a fresh run.
pub fn init_model(model: &mut Model<f32>, tc: &TrainConfig) {
    gaussian_init(&mut model.store, tc.init_std, tc.seed);
}

/// Stacks min-max normalized images and 0/1 masks.
pub fn make_batch(samples: &[&SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| normalize_intensity(&s.image)).collect();
    let masks: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask.to_tensor()).collect();
    Ok((
        Tensor::stack(&images.iter().collect::<Vec<_>>())?,
        Tensor::stack(&masks.iter().collect::<Vec<_>>())?,
    ))
}

/// Eval-mode probability maps binarized at `threshold`, in sample order.
pub fn predict_masks(
    model: &mut Model<f32>,
    samples: &[SamplePair],
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<BinaryMask>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, _) = make_batch(&refs)?;
        let p = model.predict(&x, Mode::Eval)?;
        out.extend((0..chunk.len()).map(|n| binarize(&p, n, threshold)));
    }
    Ok(out)
}

pub fn evaluate(model: &mut Model<f32>, samples: &[SamplePair], threshold: f64, batch_size: usize) -> Result<MetricsReport> {
    let preds = predict_masks(model, samples, threshold, batch_size)?;
    let rows = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| MetricsRow::from_masks(&s.subject_id, s.slice_index, p, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    aggregate_report(rows)
}

/// Position in the run; stored next to the `last/` checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Progress {
    step: usize,
    epoch: usize,
    /// Batches of `epoch` already consumed.
    position: usize,
    best_val_dsc: f64,
    best_step: usize,
    evals_since_best: usize,
}

impl Progress {
    fn pairs(&self, opt_t: u64) -> Vec<(String, String)> {
        [
            ("train.step", self.step.to_string()),
            ("train.epoch", self.epoch.to_string()),
            ("train.position", self.position.to_string()),
            ("train.best_val_dsc", self.best_val_dsc.to_string()),
            ("train.best_step", self.best_step.to_string()),
            ("train.evals_since_best", self.evals_since_best.to_string()),
            ("train.adam_t", opt_t.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<(Self, u64)> {
        let get = |k: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing `{k}`")))
        };
        Ok((
            Self {
                step: kv::value("train.step", get("train.step")?)?,
                epoch: kv::value("train.epoch", get("train.epoch")?)?,
                position: kv::value("train.position", get("train.position")?)?,
                best_val_dsc: kv::value("train.best_val_dsc", get("train.best_val_dsc")?)?,
                best_step: kv::value("train.best_step", get("train.best_step")?)?,
                evals_since_best: kv::value("train.evals_since_best", get("train.evals_since_best")?)?,
            },
            kv::value("train.adam_t", get("train.adam_t")?)?,
        ))
    }
}

fn save_state(dir: &Path, model: &Model<f32>, opt: &OptimState<f32>, progress: &Progress) -> Result<()> {
    save_checkpoint(dir, model, &progress.pairs(opt.t))?;
    let odir = dir.join("optim");
    std::fs::create_dir_all(&odir)?;
    for (id, p) in model.store.iter() {
        if !p.role.trainable() {
            continue;
        }
        let i = id.index();
        let shape = p.tensor.shape();
        io::save(&odir.join(format!("m.{i:04}.clct")), &Tensor::new(shape, opt.m[i].clone())?)?;
        io::save(&odir.join(format!("v.{i:04}.clct")), &Tensor::new(shape, opt.v[i].clone())?)?;
    }
    Ok(())
}

/// Restores model, optimizer and position from a `last/` checkpoint.
fn load_state(dir: &Path, tc: &TrainConfig) -> Result<(Model<f32>, OptimState<f32>, Progress)> {
    let (model, extra) = load_checkpoint::<f32>(dir)?;
    let (progress, t) = Progress::from_pairs(&extra)?;
    let mut opt = OptimState::new(&model.store, tc.adam);
    opt.t = t;
    for (id, p) in model.store.iter() {
        if !p.role.trainable() {
            continue;
        }
        let i = id.index();
        for (name, buf) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
            let t = io::load::<f32>(&dir.join("optim").join(format!("{name}.{i:04}.clct")))?;
            if t.shape() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!("optimizer moment {name} for `{}` has shape {}", p.name, t.shape())));
            }
            buf.copy_from_slice(t.data());
        }
    }
    Ok((model, opt, progress))
}

/// Sample order of `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mini-batch Adam on batch Dice loss with periodic validation.
///
/// The log has one row per step; rows where validation ran carry `val_dsc`,
/// and the last row always does. With `tc.checkpoint_dir` set, `best/` holds
/// the best-validation weights and `last/` the latest state, from which
/// [`resume`] continues.
pub fn train(model: &mut Model<f32>, train_set: &[SamplePair], val_set: &[SamplePair], tc: &TrainConfig) -> Result<TrainOutcome> {
    let opt = OptimState::new(&model.store, tc.adam);
    let progress = Progress {
        step: 0,
        epoch: 0,
        position: 0,
        best_val_dsc: f64::NEG_INFINITY,
        best_step: 0,
        evals_since_best: 0,
    };
    run(model, opt, progress, train_set, val_set, tc)
}

/// Continues the run saved in `<checkpoint_dir>/last`.
pub fn resume(train_set: &[SamplePair], val_set: &[SamplePair], tc: &TrainConfig) -> Result<(Model<f32>, TrainOutcome)> {
    let dir = tc
        .checkpoint_dir
        .as_ref()
        .ok_or_else(|| Error::Config("resume needs checkpoint_dir".into()))?;
    let (mut model, opt, progress) = load_state(&dir.join("last"), tc)?;
    let outcome = run(&mut model, opt, progress, train_set, val_set, tc)?;
    Ok((model, outcome))
}

fn run(
    model: &mut Model<f32>,
    mut opt: OptimState<f32>,
    mut p: Progress,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Invalid("validation set is empty".into()));
    }
    let n = train_set.len();
    let per_epoch = n.div_ceil(tc.batch_size);
    let mut log = TrainLog::default();
    let mut best = model.store.clone();
    let mut stopped_early = false;
    let budget_left = |step: usize| tc.max_steps.is_none_or(|m| step < m);

    'epochs: while p.epoch < tc.epochs && budget_left(p.step) {
        let order = epoch_order(n, tc.seed, p.epoch);
        while p.position < per_epoch {
            if !budget_left(p.step) {
                break 'epochs;
            }
            let idx = &order[p.position * tc.batch_size..((p.position + 1) * tc.batch_size).min(n)];
            let batch: Vec<&SamplePair> = idx.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = make_batch(&batch)?;

            let net = &model.net;
            let mut s = crate::nn::Session::new(&mut model.store, Mode::Train);
            let xv = s.input(x);
            let yv = s.input(y);
            let prob = net.forward(&mut s, xv)?;
            let loss = s.tape.dice_loss(prob, yv, tc.smooth)?;
            let loss_value = s.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: p.epoch,
                    step: p.step + 1,
                });
            }
            s.backward(loss)?;
            drop(s);
            adam_step(&mut model.store, &mut opt)?;
            p.step += 1;
            p.position += 1;

            let epoch_end = p.position == per_epoch;
            let due = if tc.eval_every == 0 { epoch_end } else { p.step.is_multiple_of(tc.eval_every) };
            let mut row = LogRow {
                epoch: p.epoch,
                step: p.step,
                loss: loss_value,
                val_dsc: None,
            };
            if due {
                let dsc = validate(model, val_set, tc, &mut p, &mut best)?;
                row.val_dsc = Some(dsc);
                log.rows.push(row);
                if let Some(dir) = &tc.checkpoint_dir {
                    let mut at = p;
                    if epoch_end {
                        at.epoch += 1;
                        at.position = 0;
                    }
                    save_state(&dir.join("last"), model, &opt, &at)?;
                }
                if tc.patience > 0 && p.evals_since_best >= tc.patience {
                    stopped_early = true;
                    if epoch_end {
                        p.epoch += 1;
                        p.position = 0;
                    }
                    break 'epochs;
                }
            } else {
                log.rows.push(row);
            }
        }
        p.epoch += 1;
        p.position = 0;
    }

    if log.rows.last().is_some_and(|r| r.val_dsc.is_none()) {
        let dsc = validate(model, val_set, tc, &mut p, &mut best)?;
        log.rows.last_mut().expect("non-empty").val_dsc = Some(dsc);
        if let Some(dir) = &tc.checkpoint_dir {
            save_state(&dir.join("last"), model, &opt, &p)?;
        }
    }
    Ok(TrainOutcome {
        log,
        steps: p.step,
        best_val_dsc: p.best_val_dsc,
        best_step: p.best_step,
        best,
        stopped_early,
    })
}

fn validate(
    model: &mut Model<f32>,
    val_set: &[SamplePair],
    tc: &TrainConfig,
    p: &mut Progress,
    best: &mut ParameterStore<f32>,
) -> Result<f64> {
    let dsc = evaluate(model, val_set, tc.threshold, tc.batch_size)?.aggregate.dsc;
    if dsc > p.best_val_dsc {
        p.best_val_dsc = dsc;
        p.best_step = p.step;
        p.evals_since_best = 0;
        *best = model.store.clone();
        if let Some(dir) = &tc.checkpoint_dir {
            save_checkpoint(&dir.join("best"), model, &[("train.step".into(), p.step.to_string())])?;
        }
    } else {
        p.evals_since_best += 1;
    }
    Ok(dsc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Difficulty};
    use crate::model::ModelConfig;

    fn setup() -> (Model<f32>, Vec<SamplePair>) {
        let cfg = ModelConfig {
            width_multiplier: 0.125,
            input_size: (32, 32),
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg).unwrap();
        init_model(&mut m, &TrainConfig::default());
        (m, synth_dataset(6, (32, 32), 1, Difficulty::Easy).unwrap())
    }

    fn tc() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            adam: super::super::AdamConfig {
                lr: 1e-3,
                ..Default::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_weights_untouched() {
        let (mut m, data) = setup();
        let before = m.store.clone();
        let cfg = TrainConfig {
            epochs: 1,
            adam: super::super::AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..tc()
        };
        train(&mut m, &data, &data, &cfg).unwrap();
        for ((_, a), (_, b)) in before.trainable().zip(m.store.trainable()) {
            assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        }
    }

    #[test]
    fn log_shape_and_final_eval() {
        let (mut m, data) = setup();
        let out = train(&mut m, &data, &data, &TrainConfig { eval_every: 3, ..tc() }).unwrap();
        // 6 samples, batch 4 → 2 steps per epoch
        assert_eq!(out.log.rows.len(), 4);
        assert_eq!(out.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(out.log.rows[2].val_dsc.is_some());
        assert!(out.log.rows[3].val_dsc.is_some());
        assert!(out.log.rows[0].val_dsc.is_none());
        let csv = out.log.to_csv();
        assert!(csv.starts_with("epoch,step,loss,val_dsc\n0,1,"));
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn runs_are_deterministic() {
        let (mut a, data) = setup();
        let (mut b, _) = setup();
        let la = train(&mut a, &data, &data, &tc()).unwrap().log;
        let lb = train(&mut b, &data, &data, &tc()).unwrap().log;
        assert_eq!(la.to_csv(), lb.to_csv());
        for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x.tensor.data(), y.tensor.data());
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (mut full, data) = setup();
        let whole = train(&mut full, &data, &data, &TrainConfig { epochs: 3, ..tc() }).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let first = TrainConfig {
            epochs: 3,
            max_steps: Some(3),
            eval_every: 3,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..tc()
        };
        let (mut part, _) = setup();
        let head = train(&mut part, &data, &data, &first).unwrap();
        assert_eq!(head.steps, 3);
        let rest = TrainConfig { max_steps: None, eval_every: 0, ..first };
        let (resumed, tail) = resume(&data, &data, &rest).unwrap();
        assert_eq!(tail.log.rows[0].step, 4);
        assert_eq!(tail.log.rows[0].loss, whole.log.rows[3].loss);
        let losses: Vec<f64> = head.log.rows.iter().chain(&tail.log.rows).map(|r| r.loss).collect();
        let want: Vec<f64> = whole.log.rows.iter().map(|r| r.loss).collect();
        assert_eq!(losses, want);
        for ((_, x), (_, y)) in resumed.store.iter().zip(full.store.iter()) {
            assert_eq!(x.tensor.data(), y.tensor.data(), "{}", x.name);
        }
        assert!(dir.path().join("best/manifest.txt").is_file());
    }

    #[test]
    fn nan_loss_aborts_naming_step() {
        let (mut m, mut data) = setup();
        data[0].image.data_mut()[5] = f32::NAN;
        let cfg = TrainConfig { batch_size: 6, ..tc() };
        match train(&mut m, &data, &data, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 0, step: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epoch_orders_are_permutations() {
        let a = epoch_order(10, 3, 0);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(10, 3, 0));
        assert_ne!(a, epoch_order(10, 3, 1));
    }
}
