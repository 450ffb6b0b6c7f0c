use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Subjects left over when the requested counts do not cover every id.
    Unused,
}

impl Split {
    pub const USED: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unused => "unused",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unused" => Ok(Split::Unused),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Subject-level partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub unused: Vec<String>,
}

/// Sorts and deduplicates `subject_ids`, shuffles them with `seed`, then takes
/// `counts` in train, val, test order.
pub fn make_split(subject_ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<SplitManifest> {
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    let (a, b, c) = counts;
    if a + b + c > ids.len() {
        return Err(Error::Config(format!(
            "split counts {a}+{b}+{c} exceed {} distinct subjects",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = ids.into_iter();
    let mut take = |n| -> Vec<String> {
        let mut v: Vec<String> = rest.by_ref().take(n).collect();
        v.sort();
        v
    };
    let train = take(a);
    let val = take(b);
    let test = take(c);
    let mut unused: Vec<String> = rest.collect();
    unused.sort();
    Ok(SplitManifest {
        seed,
        train,
        val,
        test,
        unused,
    })
}

/// Counts in proportion to `ratio`, rounding down and giving the remainder to train.
pub fn proportional_counts(n: usize, ratio: (usize, usize, usize)) -> (usize, usize, usize) {
    let total = (ratio.0 + ratio.1 + ratio.2).max(1);
    let val = n * ratio.1 / total;
    let test = n * ratio.2 / total;
    (n - val - test, val, test)
}

impl SplitManifest {
    pub fn split_of(&self, subject: &str) -> Option<Split> {
        [
            (Split::Train, &self.train),
            (Split::Val, &self.val),
            (Split::Test, &self.test),
            (Split::Unused, &self.unused),
        ]
        .into_iter()
        .find(|(_, ids)| ids.binary_search_by(|s| s.as_str().cmp(subject)).is_ok())
        .map(|(s, _)| s)
    }

    pub fn subjects(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
            Split::Unused => &self.unused,
        }
    }

    /// `subject<TAB>split` lines after a `# seed` comment.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# seed\t{}\n", self.seed);
        for split in [Split::Train, Split::Val, Split::Test, Split::Unused] {
            for id in self.subjects(split) {
                s.push_str(&format!("{id}\t{split}\n"));
            }
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut m = SplitManifest {
            seed: 0,
            train: vec![],
            val: vec![],
            test: vec![],
            unused: vec![],
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(seed) = rest.trim().strip_prefix("seed") {
                    m.seed = seed.trim().parse().map_err(|_| Error::Config(format!("line {}: bad seed", i + 1)))?;
                }
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("line {}: expected `subject<TAB>split`", i + 1)))?;
            let split: Split = split.trim().parse()?;
            match split {
                Split::Train => m.train.push(id.to_string()),
                Split::Val => m.val.push(id.to_string()),
                Split::Test => m.test.push(id.to_string()),
                Split::Unused => m.unused.push(id.to_string()),
            }
        }
        for v in [&mut m.train, &mut m.val, &mut m.test, &mut m.unused] {
            v.sort();
        }
        let mut all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).chain(&m.unused).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(Error::Config("a subject appears in more than one split".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}
