use std::fmt::Write as _;

use super::{SamplePair, Split, SplitManifest};
use crate::error::{Error, Result};

/// Counts of lesion-bearing samples per size bin `[lo, hi)` and split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LesionSizeHistogram {
    /// `edges[i]..edges[i + 1]` is bin `i`.
    pub edges: Vec<usize>,
    /// Indexed by train, val, test, then bin.
    pub counts: [Vec<usize>; 3],
}

/// Geometric bin edges from 1 up to past `max_size`; no bins when `max_size` is 0.
pub fn histogram_edges(max_size: usize, bins: usize) -> Vec<usize> {
    if max_size == 0 || bins == 0 {
        return Vec::new();
    }
    let top = (max_size + 1) as f64;
    let mut edges = vec![1usize];
    for i in 1..=bins {
        let e = top.powf(i as f64 / bins as f64).ceil() as usize;
        let e = e.max(edges[edges.len() - 1] + 1);
        edges.push(e);
    }
    let last = edges.len() - 1;
    edges[last] = edges[last].max(max_size + 1);
    edges
}

/// Histogram of per-sample lesion pixel counts; empty masks and subjects
/// outside train/val/test are skipped.
pub fn lesion_size_histogram(
    samples: &[SamplePair],
    splits: &SplitManifest,
    edges: &[usize],
) -> Result<LesionSizeHistogram> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("histogram edges must increase".into()));
    }
    let bins = edges.len().saturating_sub(1);
    let mut counts = [vec![0; bins], vec![0; bins], vec![0; bins]];
    for s in samples {
        let size = s.mask.count();
        if size == 0 {
            continue;
        }
        let row = match splits.split_of(&s.subject_id) {
            Some(Split::Train) => 0,
            Some(Split::Val) => 1,
            Some(Split::Test) => 2,
            _ => continue,
        };
        let bin = (0..bins)
            .find(|&b| edges[b] <= size && size < edges[b + 1])
            .ok_or_else(|| Error::Invalid(format!("lesion size {size} ({}) outside the bins", s.stem())))?;
        counts[row][bin] += 1;
    }
    Ok(LesionSizeHistogram {
        edges: edges.to_vec(),
        counts,
    })
}

impl LesionSizeHistogram {
    pub const HEADER: &'static str = "bin_lo,bin_hi,train,val,test";

    pub fn total(&self, split: usize) -> usize {
        self.counts[split].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for b in 0..self.edges.len().saturating_sub(1) {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.counts[0][b],
                self.counts[1][b],
                self.counts[2][b]
            );
        }
        s
    }
}
