use std::fmt::Write as _;
use std::path::Path;

use super::{evaluate, init_model, train, TrainConfig};
use crate::data::{make_split, proportional_counts, SamplePair, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::Aggregate;
use crate::model::{instantiate_ablation, save_checkpoint, ModelConfig, Toggles};

/// Subject ratio train : val : test used by the ablation runner (120 : 40 : 60 reduced).
pub const ABLATION_RATIO: (usize, usize, usize) = (6, 2, 3);

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub test: Aggregate,
    pub params: usize,
    pub best_val_dsc: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub split: SplitManifest,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: &'static str = "aspp,clf,inference,dsc,precision,recall,voe,rvd,rvd_abs,params";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let t = &r.test;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.toggles, t.dsc, t.precision, t.recall, t.voe, t.rvd, t.rvd_abs, r.params
            );
        }
        s
    }
}

/// Subject-level split for `samples` in [`ABLATION_RATIO`].
pub fn ablation_split(samples: &[SamplePair], seed: u64) -> Result<SplitManifest> {
    let mut ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    make_split(&ids, proportional_counts(ids.len(), ABLATION_RATIO), seed)
}

pub fn select(samples: &[SamplePair], split: &SplitManifest, which: Split) -> Vec<SamplePair> {
    samples
        .iter()
        .filter(|s| split.split_of(&s.subject_id) == Some(which))
        .cloned()
        .collect()
}

/// Trains all eight toggle rows with the same seed and budget and reports
/// metrics of the best-validation weights on the held-out subjects.
///
/// With `out_dir`, row `a,c,i` keeps its checkpoints in `row_a{a}c{c}i{i}/`.
pub fn run_ablation_matrix(
    base: &ModelConfig,
    tc: &TrainConfig,
    samples: &[SamplePair],
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    let split = ablation_split(samples, tc.seed)?;
    let (train_set, val_set, test_set) = (
        select(samples, &split, Split::Train),
        select(samples, &split, Split::Val),
        select(samples, &split, Split::Test),
    );
    if train_set.is_empty() || val_set.is_empty() || test_set.is_empty() {
        return Err(Error::Invalid(format!(
            "ablation needs subjects in every split, got {}/{}/{}",
            train_set.len(),
            val_set.len(),
            test_set.len()
        )));
    }
    let mut rows = Vec::with_capacity(8);
    for toggles in Toggles::all() {
        let mut model = instantiate_ablation::<f32>(base, toggles)?;
        init_model(&mut model, tc);
        let row_dir = out_dir.map(|d| d.join(format!("row_a{}c{}i{}", toggles.aspp as u8, toggles.clf as u8, toggles.inference as u8)));
        let row_tc = TrainConfig {
            checkpoint_dir: row_dir.clone(),
            ..tc.clone()
        };
        let outcome = train(&mut model, &train_set, &val_set, &row_tc)?;
        model.store = outcome.best;
        if let Some(dir) = &row_dir {
            std::fs::write(dir.join("train_log.csv"), outcome.log.to_csv())?;
            save_checkpoint(&dir.join("evaluated"), &model, &[])?;
        }
        let report = evaluate(&mut model, &test_set, tc.threshold, tc.batch_size)?;
        let row = AblationRow {
            toggles,
            test: report.aggregate,
            params: model.parameter_count(),
            best_val_dsc: outcome.best_val_dsc,
            steps: outcome.steps,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(AblationTable { split, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, Difficulty};

    #[test]
    fn eight_rows_cover_the_cube() {
        let data = synth_dataset(11, (32, 32), 3, Difficulty::Easy).unwrap();
        let base = ModelConfig {
            width_multiplier: 0.125,
            input_size: (32, 32),
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 6,
            ..TrainConfig::default()
        };
        let table = run_ablation_matrix(&base, &tc, &data, None, |_| {}).unwrap();
        assert_eq!(table.rows.len(), 8);
        let toggles: Vec<Toggles> = table.rows.iter().map(|r| r.toggles).collect();
        assert_eq!(toggles, Toggles::all().to_vec());
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,0,"));
        assert_eq!((table.split.train.len(), table.split.val.len(), table.split.test.len()), (6, 2, 3));
    }
}
