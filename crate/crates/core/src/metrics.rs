//! Overlap metrics on binary masks and the per-sample report.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Row-major `h × w` mask with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Invalid(format!("mask {h}x{w} needs {} values, got {}", h * w, data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Invalid(format!("mask value {v} is not binary")));
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        Self { h, w, data }
    }

    /// Plane `(n, c)` of a tensor whose values are exactly 0 or 1.
    pub fn from_tensor_plane<T: Scalar>(t: &Tensor<T>, n: usize, c: usize) -> Result<Self> {
        let s = t.shape();
        let data = t
            .plane(n, c)
            .iter()
            .map(|&v| {
                if v == T::zero() {
                    Ok(0)
                } else if v == T::one() {
                    Ok(1)
                } else {
                    Err(Error::Invalid(format!("mask value {v} is not binary")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { h: s.h, w: s.w, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    /// Foreground pixel count.
    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// `(1, 1, h, w)` tensor of 0/1 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(Shape::new(1, 1, self.h, self.w), data).expect("dims match")
    }

    /// Sub-rectangle starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        Self::from_fn(h, w, |y, x| self.get(top + y, left + x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    pub fn actual(&self) -> usize {
        self.tp + self.fn_
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() {
        let (ph, pw) = pred.dims();
        let (th, tw) = truth.dims();
        return Err(Error::ShapeMismatch {
            op: "confusion",
            left: Shape::new(1, 1, ph, pw),
            right: Shape::new(1, 1, th, tw),
        });
    }
    // index = 2·pred + truth
    let mut bins = [0usize; 4];
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        bins[(2 * p + t) as usize] += 1;
    }
    Ok(ConfusionCounts {
        tn: bins[0],
        fn_: bins[1],
        fp: bins[2],
        tp: bins[3],
    })
}

/// `2·tp / (2·tp + fp + fn)`; 1 when both masks are empty.
pub fn dsc(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / den as f64
    }
}

/// `tp / (tp + fp)`; with nothing predicted, 1 if the truth is empty too, else 0.
pub fn precision(c: &ConfusionCounts) -> f64 {
    match c.predicted() {
        0 if c.actual() == 0 => 1.0,
        0 => 0.0,
        p => c.tp as f64 / p as f64,
    }
}

/// `tp / (tp + fn)`; with an empty truth, 1 if nothing is predicted either, else 0.
pub fn recall(c: &ConfusionCounts) -> f64 {
    match c.actual() {
        0 if c.predicted() == 0 => 1.0,
        0 => 0.0,
        a => c.tp as f64 / a as f64,
    }
}

/// Percent `100·(1 − |A∩B| / |A∪B|)`; 0 when both masks are empty.
pub fn voe(c: &ConfusionCounts) -> f64 {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        0.0
    } else {
        100.0 * (1.0 - c.tp as f64 / union as f64)
    }
}

/// Percent `100·(|pred| − |truth|) / |truth|`, signed. An empty truth gives
/// `+∞` for a non-empty prediction and 0 otherwise.
pub fn rvd(c: &ConfusionCounts) -> f64 {
    let (p, t) = (c.predicted(), c.actual());
    match (p, t) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        _ => 100.0 * (p as f64 - t as f64) / t as f64,
    }
}

/// 1 where `prob > threshold`.
pub fn binarize<T: Scalar>(prob: &Tensor<T>, n: usize, threshold: f64) -> BinaryMask {
    let s = prob.shape();
    let th = T::from_f64(threshold);
    BinaryMask {
        h: s.h,
        w: s.w,
        data: prob.plane(n, 0).iter().map(|&v| (v > th) as u8).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub subject: String,
    pub slice: usize,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub voe: f64,
    pub rvd: f64,
}

impl MetricsRow {
    pub fn from_masks(subject: &str, slice: usize, pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        let c = confusion(pred, truth)?;
        Ok(Self {
            subject: subject.to_string(),
            slice,
            dsc: dsc(&c),
            precision: precision(&c),
            recall: recall(&c),
            voe: voe(&c),
            rvd: rvd(&c),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub voe: f64,
    /// Mean of the finite signed values.
    pub rvd: f64,
    /// Mean of the finite absolute values.
    pub rvd_abs: f64,
    /// Rows whose RVD is undefined (empty truth, non-empty prediction).
    pub rvd_undefined: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregate: Aggregate,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Unweighted per-sample means, in row order.
pub fn aggregate_report(rows: Vec<MetricsRow>) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Invalid("aggregate_report needs at least one row".into()));
    }
    let finite = || rows.iter().map(|r| r.rvd).filter(|v| v.is_finite());
    let aggregate = Aggregate {
        dsc: mean(rows.iter().map(|r| r.dsc)),
        precision: mean(rows.iter().map(|r| r.precision)),
        recall: mean(rows.iter().map(|r| r.recall)),
        voe: mean(rows.iter().map(|r| r.voe)),
        rvd: mean(finite()),
        rvd_abs: mean(finite().map(f64::abs)),
        rvd_undefined: rows.iter().filter(|r| !r.rvd.is_finite()).count(),
    };
    Ok(MetricsReport { rows, aggregate })
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

impl MetricsReport {
    pub const HEADER: &'static str = "subject,slice,dsc,precision,recall,voe,rvd";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.subject,
                r.slice,
                num(r.dsc),
                num(r.precision),
                num(r.recall),
                num(r.voe),
                num(r.rvd)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "AGGREGATE,,{},{},{},{},{}",
            num(a.dsc),
            num(a.precision),
            num(a.recall),
            num(a.voe),
            num(a.rvd)
        );
        s
    }

    /// One DSC value per line, row order.
    pub fn dsc_column(&self) -> String {
        self.rows.iter().map(|r| format!("{}\n", num(r.dsc))).collect()
    }

    /// Writes `path` and a sibling `<stem>.dsc.txt` column file.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        std::fs::write(path.with_extension("dsc.txt"), self.dsc_column())?;
        Ok(())
    }

    /// `DSC Precision Recall VOE RVD` line.
    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        format!(
            "DSC {:.4}  Precision {:.4}  Recall {:.4}  VOE {:.2}  RVD {:.2} (|RVD| {:.2}, {} undefined)",
            a.dsc, a.precision, a.recall, a.voe, a.rvd, a.rvd_abs, a.rvd_undefined
        )
    }
}
