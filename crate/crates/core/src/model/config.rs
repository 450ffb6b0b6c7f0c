use std::fmt;

use crate::error::{Error, Result};
use crate::kv;

/// How the ConvLSTM cell state is seeded at each decoder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellSeed {
    /// Same adapted decoder feature as the hidden state.
    Hidden,
    /// All zeros. The forget gate then multiplies zero and receives no gradient.
    Zeros,
}

impl fmt::Display for CellSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellSeed::Hidden => "hidden",
            CellSeed::Zeros => "zeros",
        })
    }
}

impl std::str::FromStr for CellSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(CellSeed::Hidden),
            "zeros" => Ok(CellSeed::Zeros),
            _ => Err(Error::Config(format!("cell_seed: expected hidden|zeros, got `{s}`"))),
        }
    }
}

/// The three component switches of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Toggles {
    pub aspp: bool,
    pub clf: bool,
    pub inference: bool,
}

impl Toggles {
    pub const FULL: Toggles = Toggles {
        aspp: true,
        clf: true,
        inference: true,
    };
    pub const BASELINE: Toggles = Toggles {
        aspp: false,
        clf: false,
        inference: false,
    };

    pub fn new(aspp: bool, clf: bool, inference: bool) -> Self {
        Self { aspp, clf, inference }
    }

    /// All eight rows, ordered as the binary number `aspp clf inference`.
    pub fn all() -> [Toggles; 8] {
        std::array::from_fn(|i| Toggles::new(i & 4 != 0, i & 2 != 0, i & 1 != 0))
    }

    /// Parses `a,c,i` with each entry 0 or 1.
    pub fn parse(s: &str) -> Result<Self> {
        let bits: Vec<bool> = s
            .split(',')
            .map(|b| kv::flag("ablation", b.trim()))
            .collect::<Result<_>>()?;
        match bits[..] {
            [a, c, i] => Ok(Toggles::new(a, c, i)),
            _ => Err(Error::Config(format!("ablation: expected three comma-separated bits, got `{s}`"))),
        }
    }
}

impl std::str::FromStr for Toggles {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Toggles::parse(s)
    }
}

impl fmt::Display for Toggles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.aspp as u8, self.clf as u8, self.inference as u8)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of stride-2 stages before the bottleneck's own downsample.
    pub levels: usize,
    pub base_width: usize,
    pub width_growth: usize,
    pub max_width: usize,
    /// Scales every channel count (level widths and `branch_width`).
    pub width_multiplier: f64,
    /// Dilation rates of the conv branches; rate 1 is the 1×1 branch.
    pub aspp_rates: Vec<usize>,
    pub aspp_image_pool: bool,
    /// Channels per pyramid branch before the multiplier.
    pub branch_width: usize,
    pub use_aspp: bool,
    pub use_clf: bool,
    pub use_inference: bool,
    pub cell_seed: CellSeed,
    pub input_size: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_width: 32,
            width_growth: 2,
            max_width: 256,
            width_multiplier: 1.0,
            aspp_rates: vec![1, 6, 12, 18],
            aspp_image_pool: true,
            branch_width: 64,
            use_aspp: true,
            use_clf: true,
            use_inference: true,
            cell_seed: CellSeed::Hidden,
            input_size: (224, 176),
        }
    }
}

fn scaled(channels: usize, multiplier: f64) -> usize {
    ((channels as f64 * multiplier).round() as usize).max(1)
}

impl ModelConfig {
    pub fn with_toggles(mut self, t: Toggles) -> Self {
        self.use_aspp = t.aspp;
        self.use_clf = t.clf;
        self.use_inference = t.inference;
        self
    }

    pub fn toggles(&self) -> Toggles {
        Toggles::new(self.use_aspp, self.use_clf, self.use_inference)
    }

    /// Channel count at encoder level `l`; `l == levels` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        let raw = self
            .width_growth
            .checked_pow(level as u32)
            .and_then(|g| g.checked_mul(self.base_width))
            .unwrap_or(usize::MAX)
            .min(self.max_width);
        scaled(raw, self.width_multiplier)
    }

    /// Channels per pyramid branch, also the pyramid's output width.
    pub fn branch_channels(&self) -> usize {
        scaled(self.branch_width, self.width_multiplier)
    }

    /// Branches feeding the pyramid fusion: conv rates, image pool, and one per
    /// encoder level when cross-level fusion is on.
    pub fn aspp_branch_count(&self) -> usize {
        self.aspp_rates.len() + self.aspp_image_pool as usize + if self.use_clf { self.levels } else { 0 }
    }

    /// Spatial size must survive `levels + 1` halvings exactly.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::IndivisibleInput { h, w, divisor: d });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_width == 0 || self.width_growth == 0 || self.max_width == 0 || self.branch_width == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!("width_multiplier must be positive, got {}", self.width_multiplier)));
        }
        if self.aspp_rates.contains(&0) {
            return Err(Error::Config("aspp_rates must be positive".into()));
        }
        if self.use_aspp && self.aspp_branch_count() == 0 {
            return Err(Error::Config("pyramid needs at least one branch".into()));
        }
        self.check_input(self.input_size.0, self.input_size.1)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let rates: Vec<String> = self.aspp_rates.iter().map(|r| r.to_string()).collect();
        [
            ("levels", self.levels.to_string()),
            ("base_width", self.base_width.to_string()),
            ("width_growth", self.width_growth.to_string()),
            ("max_width", self.max_width.to_string()),
            ("width_multiplier", self.width_multiplier.to_string()),
            ("aspp_rates", rates.join(",")),
            ("aspp_image_pool", self.aspp_image_pool.to_string()),
            ("branch_width", self.branch_width.to_string()),
            ("use_aspp", self.use_aspp.to_string()),
            ("use_clf", self.use_clf.to_string()),
            ("use_inference", self.use_inference.to_string()),
            ("cell_seed", self.cell_seed.to_string()),
            ("input_size", format!("{}x{}", self.input_size.0, self.input_size.1)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key = value` pair. Returns `false` for keys this type does not own.
    pub fn apply(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "levels" => self.levels = kv::value(key, v)?,
            "base_width" => self.base_width = kv::value(key, v)?,
            "width_growth" => self.width_growth = kv::value(key, v)?,
            "max_width" => self.max_width = kv::value(key, v)?,
            "width_multiplier" => self.width_multiplier = kv::value(key, v)?,
            "aspp_rates" => self.aspp_rates = kv::list(key, v)?,
            "aspp_image_pool" => self.aspp_image_pool = kv::flag(key, v)?,
            "branch_width" => self.branch_width = kv::value(key, v)?,
            "use_aspp" => self.use_aspp = kv::flag(key, v)?,
            "use_clf" => self.use_clf = kv::flag(key, v)?,
            "use_inference" => self.use_inference = kv::flag(key, v)?,
            "cell_seed" => self.cell_seed = v.parse()?,
            "input_size" => self.input_size = kv::size(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Builds a config from pairs, rejecting unknown keys.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.apply(k, v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
