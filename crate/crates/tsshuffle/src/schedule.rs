//! Implementation notes: cumulative ratios are exact `u64` products capped at 2^53 so
//! every M_n converts to `f64` without rounding; all block arithmetic stays in
//! integers until a caller explicitly asks for a period or a cell coordinate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest admissible cumulative ratio; above this, block indices stop being exactly
/// representable as `f64` and scale conversions would silently round.
pub const MAX_CUMULATIVE: u64 = 1 << 53;

/// Errors from constructing or querying a [`PeriodSchedule`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    /// The base period must be a finite, strictly positive number.
    #[error("base period must be finite and positive, got {p0}")]
    InvalidBasePeriod {
        /// Offending value.
        p0: f64,
    },
    /// Every refinement factor must be an integer at least 2.
    #[error("refinement factor m_{index} = {factor} is below 2")]
    FactorTooSmall {
        /// 1-based position of the factor in the schedule.
        index: usize,
        /// Offending factor.
        factor: u64,
    },
    /// The running product of factors exceeded 2^53.
    #[error("cumulative ratio through m_{index} exceeds 2^53")]
    Overflow {
        /// 1-based position of the factor that overflowed the product.
        index: usize,
    },
    /// A level index beyond the schedule depth was requested.
    #[error("level {level} out of range, schedule has {max} levels")]
    LevelOutOfRange {
        /// Requested level.
        level: usize,
        /// Deepest valid level.
        max: usize,
    },
    /// A block index at or above M_n was passed for level n.
    #[error("block index {block} out of range, level has {blocks} blocks")]
    BlockOutOfRange {
        /// Requested block index.
        block: u64,
        /// Number of blocks at the level.
        blocks: u64,
    },
    /// A digit string did not match the schedule's radices.
    #[error("digit list has {got} entries, level {level} expects {expected}")]
    DigitCount {
        /// Level the digits were offered for.
        level: usize,
        /// Expected digit count (= level).
        expected: usize,
        /// Provided digit count.
        got: usize,
    },
    /// A digit was at or above its radix.
    #[error("digit c_{index} = {digit} is out of range for radix {radix}")]
    DigitOutOfRange {
        /// 1-based digit position.
        index: usize,
        /// Offending digit.
        digit: u64,
        /// Radix at that position.
        radix: u64,
    },
}

/// A base period together with integer refinement factors.
///
/// Level n has period p_n = p_0 · M_n where M_n is the product of the first n
/// factors; M_0 = 1. All cumulative ratios are at most [`MAX_CUMULATIVE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct PeriodSchedule {
    p0: f64,
    factors: Vec<u64>,
    cumulative: Vec<u64>,
}

/// Wire format: the cumulative products are derived, so only p0 and the factors
/// travel, and deserialization revalidates them.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleRepr {
    p0: f64,
    factors: Vec<u64>,
}

impl TryFrom<ScheduleRepr> for PeriodSchedule {
    type Error = ScheduleError;

    fn try_from(repr: ScheduleRepr) -> Result<Self, Self::Error> {
        Self::new(repr.p0, &repr.factors)
    }
}

impl From<PeriodSchedule> for ScheduleRepr {
    fn from(s: PeriodSchedule) -> Self {
        Self {
            p0: s.p0,
            factors: s.factors,
        }
    }
}

impl PeriodSchedule {
    /// Builds a schedule from a base period and refinement factors.
    ///
    /// Factors must all be ≥ 2 and their running products must stay within 2^53.
    /// An empty factor list is allowed and describes the single period p_0.
    pub fn new(p0: f64, factors: &[u64]) -> Result<Self, ScheduleError> {
        if !p0.is_finite() || p0 <= 0.0 {
            return Err(ScheduleError::InvalidBasePeriod { p0 });
        }
        let mut cumulative = Vec::with_capacity(factors.len() + 1);
        cumulative.push(1u64);
        for (i, &m) in factors.iter().enumerate() {
            if m < 2 {
                return Err(ScheduleError::FactorTooSmall {
                    index: i + 1,
                    factor: m,
                });
            }
            let prev = *cumulative.last().expect("cumulative starts nonempty");
            let next = prev
                .checked_mul(m)
                .filter(|&v| v <= MAX_CUMULATIVE)
                .ok_or(ScheduleError::Overflow { index: i + 1 })?;
            cumulative.push(next);
        }
        Ok(Self {
            p0,
            factors: factors.to_vec(),
            cumulative,
        })
    }

    /// All-2 schedule with the given number of levels and base period 1.
    pub fn dyadic(levels: usize) -> Self {
        Self::new(1.0, &vec![2; levels]).expect("dyadic factors are always valid")
    }

    /// Base period p_0.
    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Number of refinement levels L.
    pub fn levels(&self) -> usize {
        self.factors.len()
    }

    /// The refinement factors m_1, ..., m_L.
    pub fn factors(&self) -> &[u64] {
        &self.factors
    }

    /// The factor m_n for 1 ≤ n ≤ L.
    pub fn factor(&self, n: usize) -> Result<u64, ScheduleError> {
        if n == 0 || n > self.factors.len() {
            return Err(ScheduleError::LevelOutOfRange {
                level: n,
                max: self.factors.len(),
            });
        }
        Ok(self.factors[n - 1])
    }

    /// Cumulative ratio M_n = p_n / p_0 for 0 ≤ n ≤ L; M_0 = 1.
    pub fn cumulative(&self, n: usize) -> u64 {
        self.cumulative[n]
    }

    /// Checked variant of [`cumulative`](Self::cumulative).
    pub fn try_cumulative(&self, n: usize) -> Result<u64, ScheduleError> {
        self.cumulative
            .get(n)
            .copied()
            .ok_or(ScheduleError::LevelOutOfRange {
                level: n,
                max: self.levels(),
            })
    }

    /// Period p_n = p_0 · M_n.
    pub fn period(&self, n: usize) -> f64 {
        self.p0 * self.cumulative[n] as f64
    }

    /// Ratio M_fine / M_coarse between two levels, coarse ≤ fine.
    pub fn refinement(&self, coarse: usize, fine: usize) -> u64 {
        debug_assert!(coarse <= fine, "refinement wants coarse <= fine");
        self.cumulative[fine] / self.cumulative[coarse]
    }

    /// Checked variant of [`refinement`](Self::refinement).
    pub fn try_refinement(&self, coarse: usize, fine: usize) -> Result<u64, ScheduleError> {
        let mf = self.try_cumulative(fine)?;
        let mc = self.try_cumulative(coarse)?;
        if coarse > fine {
            return Err(ScheduleError::LevelOutOfRange {
                level: coarse,
                max: fine,
            });
        }
        Ok(mf / mc)
    }

    /// Mixed-radix digits [c_1, ..., c_n] of a level-n block index, coarsest first:
    /// k = Σ_j c_j · (M_n / M_j) with 0 ≤ c_j < m_j.
    pub fn digits(&self, n: usize, k: u64) -> Result<Vec<u64>, ScheduleError> {
        let blocks = self.try_cumulative(n)?;
        if k >= blocks {
            return Err(ScheduleError::BlockOutOfRange { block: k, blocks });
        }
        let mut digits = Vec::with_capacity(n);
        let mut rest = k;
        for j in 1..=n {
            let stride = blocks / self.cumulative[j];
            digits.push(rest / stride);
            rest %= stride;
        }
        Ok(digits)
    }

    /// Inverse of [`digits`](Self::digits): reassembles k = Σ_j c_j · (M_n / M_j).
    pub fn from_digits(&self, n: usize, digits: &[u64]) -> Result<u64, ScheduleError> {
        let blocks = self.try_cumulative(n)?;
        if digits.len() != n {
            return Err(ScheduleError::DigitCount {
                level: n,
                expected: n,
                got: digits.len(),
            });
        }
        let mut k = 0u64;
        for (j, &c) in digits.iter().enumerate() {
            let radix = self.factors[j];
            if c >= radix {
                return Err(ScheduleError::DigitOutOfRange {
                    index: j + 1,
                    digit: c,
                    radix,
                });
            }
            k += c * (blocks / self.cumulative[j + 1]);
        }
        Ok(k)
    }
}
