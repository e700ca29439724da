use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubsampleError {
    #[error("cannot take {requested} examples from a dataset of {available}")]
    TooLarge { requested: usize, available: usize },
    #[error("percent {0} outside (0, 100]")]
    BadPercent(f64),
    #[error("subsample size must be positive")]
    Zero,
    #[error("cannot parse subsample spec `{0}` (expected a count like 500 or a percent like 1%)")]
    Parse(String),
}

/// Requested size: an absolute count or a percentage of the dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubsampleSpec {
    Count(usize),
    Percent(f64),
}

impl SubsampleSpec {
    /// `"500"` or `"1.5%"`.
    pub fn parse(text: &str) -> Result<Self, SubsampleError> {
        let t = text.trim();
        let bad = || SubsampleError::Parse(String::from(t));
        match t.strip_suffix('%') {
            Some(p) => p.trim().parse::<f64>().map(SubsampleSpec::Percent).map_err(|_| bad()),
            None => t.parse::<usize>().map(SubsampleSpec::Count).map_err(|_| bad()),
        }
    }

    /// Number of examples selected from a dataset of `n`; percentages round to
    /// the nearest count but never below one.
    pub fn resolve(self, n: usize) -> Result<usize, SubsampleError> {
        let count = match self {
            SubsampleSpec::Count(0) => return Err(SubsampleError::Zero),
            SubsampleSpec::Count(c) => c,
            SubsampleSpec::Percent(p) if !(p > 0.0 && p <= 100.0) => return Err(SubsampleError::BadPercent(p)),
            SubsampleSpec::Percent(p) => (libm::round(p * n as f64 / 100.0) as usize).max(1),
        };
        if count > n {
            return Err(SubsampleError::TooLarge { requested: count, available: n });
        }
        Ok(count)
    }
}

/// A reduced training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    /// Selected dataset indices in ascending order.
    pub indices: Vec<usize>,
    pub total: usize,
}

impl Subsample {
    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.indices.len() as f64 / self.total as f64
    }

    /// `"<samples> / <percent>%"`, e.g. `5k / 1%`.
    pub fn label(&self) -> String {
        format!("{} / {}%", format_count(self.count()), format_percent(self.percent()))
    }
}

/// Every example gets a random key drawn in index order from a generator seeded
/// with `seed`; the subset is the `count` smallest keys. Subsets drawn with the
/// same seed are therefore nested.
pub fn subsample_few_shot(n: usize, spec: SubsampleSpec, seed: u64) -> Result<Subsample, SubsampleError> {
    let count = spec.resolve(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (rng.next_u64(), i)).collect();
    keyed.sort_unstable();
    let mut indices: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    indices.sort_unstable();
    Ok(Subsample { indices, total: n })
}

fn trim_decimal(s: String) -> String {
    if s.contains('.') {
        String::from(s.trim_end_matches('0').trim_end_matches('.'))
    } else {
        s
    }
}

/// Sample counts: `500`, `1.8k`, `70k`.
pub fn format_count(count: usize) -> String {
    if count >= 1000 {
        format!("{}k", trim_decimal(format!("{:.1}", count as f64 / 1000.0)))
    } else {
        format!("{count}")
    }
}

/// Percentages: whole numbers from 10 up, one decimal from 1, two below.
pub fn format_percent(p: f64) -> String {
    let s = if p >= 10.0 {
        format!("{p:.0}")
    } else if p >= 1.0 {
        format!("{p:.1}")
    } else {
        format!("{p:.2}")
    };
    trim_decimal(s)
}
