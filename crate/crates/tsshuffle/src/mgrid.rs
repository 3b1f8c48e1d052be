//! Implementation notes: values are dense, block-major, immutable after
//! construction; every reduction uses one fixed pairwise summation tree (split at
//! the midpoint, ascending indices) so results are identical across runs and
//! platforms regardless of chunking.

use crate::schedule::{PeriodSchedule, ScheduleError};
use crate::shuffle::{ShuffleError, ShuffleMap};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cap on stored samples per cell function; beyond this the dense representation
/// stops being a desk-scale object.
pub const MAX_VALUES: u64 = 1 << 26;

/// Errors from cell-function construction and block operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MgridError {
    /// Underlying schedule query failed.
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    /// Underlying shuffle construction failed.
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    /// Only d = 1 and d = 2 are supported.
    #[error("dimension {dim} unsupported, expected 1 or 2")]
    UnsupportedDim {
        /// Offending dimension.
        dim: usize,
    },
    /// Payload must hold at least one value per block.
    #[error("payload size must be at least 1")]
    EmptyPayload,
    /// Value storage does not match blocks^dim * payload.
    #[error("value array has {got} entries, layout wants {expected}")]
    LengthMismatch {
        /// Required length.
        expected: u64,
        /// Provided length.
        got: u64,
    },
    /// A value was NaN or infinite.
    #[error("value at flat index {index} is not finite")]
    NonFinite {
        /// Flat index of the offending value.
        index: usize,
    },
    /// The dense layout would exceed [`MAX_VALUES`].
    #[error("layout of {needed} samples exceeds the {cap} cap")]
    TooLarge {
        /// Samples the layout would need.
        needed: u64,
        /// The cap.
        cap: u64,
    },
    /// Two operands live on different schedules.
    #[error("operands use different period schedules")]
    ScheduleMismatch,
    /// Two operands have different dimensions.
    #[error("operands have dimensions {left} and {right}")]
    DimMismatch {
        /// Left operand dimension.
        left: usize,
        /// Right operand dimension.
        right: usize,
    },
    /// Two operands have different payload sizes.
    #[error("operands have payload sizes {left} and {right}")]
    PayloadMismatch {
        /// Left payload.
        left: usize,
        /// Right payload.
        right: usize,
    },
    /// An operation expected a specific level.
    #[error("expected level {expected}, got {got}")]
    LevelMismatch {
        /// Level required by the operation.
        expected: usize,
        /// Level found.
        got: usize,
    },
    /// A level move went the wrong way (for example coarse-graining upwards).
    #[error("cannot move from level {from} to level {to} with this operation")]
    LevelOrder {
        /// Source level.
        from: usize,
        /// Requested target level.
        to: usize,
    },
    /// A block multi-index had the wrong arity or an out-of-range entry.
    #[error("block index {index:?} invalid for dimension {dim} with {blocks} blocks")]
    BadBlockIndex {
        /// Offending multi-index.
        index: Vec<u64>,
        /// Function dimension.
        dim: usize,
        /// Blocks per axis.
        blocks: u64,
    },
    /// A payload slot index was out of range.
    #[error("payload slot {slot} out of range for payload size {payload}")]
    BadSlot {
        /// Requested slot.
        slot: usize,
        /// Payload size.
        payload: usize,
    },
    /// A sequence operation needs at least one term.
    #[error("sequence must contain at least one cell function")]
    EmptySequence,
    /// Sequence levels must strictly increase.
    #[error("sequence levels must strictly increase, got {prev} then {next}")]
    LevelsNotIncreasing {
        /// Earlier level.
        prev: usize,
        /// Later level.
        next: usize,
    },
    /// CSV parse failure.
    #[error("csv parse error at line {line}: {reason}")]
    Csv {
        /// 1-based line number.
        line: usize,
        /// What went wrong.
        reason: String,
    },
}

/// Fixed-tree pairwise sum over ascending indices; the crate's only reduction.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Formats a float with 17 significant digits, enough for exact f64 round-trips.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A function constant on the level-n blocks of the unit cell [0,1)^d, with a
/// fixed-size payload of sample values per block.
///
/// Storage is block-major: the payload of block (β_1, ..., β_d) starts at flat
/// index (β_1·M_n^{d-1} + ... + β_d)·payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    schedule: PeriodSchedule,
    level: usize,
    dim: usize,
    payload: usize,
    values: Vec<f64>,
}

impl CellFunction {
    /// Wraps a dense value array as a level-n cell function.
    pub fn new(
        schedule: &PeriodSchedule,
        level: usize,
        dim: usize,
        payload: usize,
        values: Vec<f64>,
    ) -> Result<Self, MgridError> {
        let expected = Self::storage_len(schedule, level, dim, payload)?;
        if values.len() as u64 != expected {
            return Err(MgridError::LengthMismatch {
                expected,
                got: values.len() as u64,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(MgridError::NonFinite { index });
        }
        Ok(Self {
            schedule: schedule.clone(),
            level,
            dim,
            payload,
            values,
        })
    }

    /// Builds a cell function by evaluating a closure on every (block, slot) pair.
    pub fn from_fn(
        schedule: &PeriodSchedule,
        level: usize,
        dim: usize,
        payload: usize,
        mut f: impl FnMut(&[u64], usize) -> f64,
    ) -> Result<Self, MgridError> {
        let len = Self::storage_len(schedule, level, dim, payload)? as usize;
        let blocks = schedule.cumulative(level);
        let mut values = Vec::with_capacity(len);
        let mut index = [0u64; 2];
        for flat in 0..(len / payload) as u64 {
            match dim {
                1 => index[0] = flat,
                _ => {
                    index[0] = flat / blocks;
                    index[1] = flat % blocks;
                }
            }
            for q in 0..payload {
                values.push(f(&index[..dim], q));
            }
        }
        Self::new(schedule, level, dim, payload, values)
    }

    /// Constant cell function.
    pub fn constant(
        schedule: &PeriodSchedule,
        level: usize,
        dim: usize,
        payload: usize,
        c: f64,
    ) -> Result<Self, MgridError> {
        Self::from_fn(schedule, level, dim, payload, |_, _| c)
    }

    fn storage_len(
        schedule: &PeriodSchedule,
        level: usize,
        dim: usize,
        payload: usize,
    ) -> Result<u64, MgridError> {
        if dim == 0 || dim > 2 {
            return Err(MgridError::UnsupportedDim { dim });
        }
        if payload == 0 {
            return Err(MgridError::EmptyPayload);
        }
        let blocks = schedule.try_cumulative(level)?;
        let needed = (0..dim)
            .try_fold(payload as u64, |acc, _| acc.checked_mul(blocks))
            .unwrap_or(u64::MAX);
        if needed > MAX_VALUES {
            return Err(MgridError::TooLarge {
                needed,
                cap: MAX_VALUES,
            });
        }
        Ok(needed)
    }

    /// The schedule this function lives on.
    pub fn schedule(&self) -> &PeriodSchedule {
        &self.schedule
    }

    /// Refinement level n.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Spatial dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Samples stored per block.
    pub fn payload(&self) -> usize {
        self.payload
    }

    /// Blocks per axis, M_n.
    pub fn blocks(&self) -> u64 {
        self.schedule.cumulative(self.level)
    }

    /// Dense value storage, block-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn flat_block(&self, block: &[u64]) -> Result<usize, MgridError> {
        let blocks = self.blocks();
        if block.len() != self.dim || block.iter().any(|&b| b >= blocks) {
            return Err(MgridError::BadBlockIndex {
                index: block.to_vec(),
                dim: self.dim,
                blocks,
            });
        }
        let flat = block.iter().fold(0u64, |acc, &b| acc * blocks + b);
        Ok(flat as usize)
    }

    /// One payload value of one block.
    pub fn value(&self, block: &[u64], slot: usize) -> Result<f64, MgridError> {
        if slot >= self.payload {
            return Err(MgridError::BadSlot {
                slot,
                payload: self.payload,
            });
        }
        let flat = self.flat_block(block)?;
        Ok(self.values[flat * self.payload + slot])
    }

    /// Mean of all samples, i.e. the integral over the unit cell (each block has
    /// equal measure and each payload slot equal weight).
    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// L² norm with the uniform probability measure on the cell.
    pub fn l2_norm(&self) -> f64 {
        let squares: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        (pairwise_sum(&squares) / squares.len() as f64).sqrt()
    }

    /// Serializes to CSV: a `level,dim,payload_size` header pair, then one row per
    /// block holding the block multi-index and its payload, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,dim,payload_size\n");
        out.push_str(&format!("{},{},{}\n", self.level, self.dim, self.payload));
        let blocks = self.blocks();
        let total = if self.dim == 2 { blocks * blocks } else { blocks };
        for flat in 0..total {
            let mut row = Vec::new();
            if self.dim == 2 {
                row.push((flat / blocks).to_string());
                row.push((flat % blocks).to_string());
            } else {
                row.push(flat.to_string());
            }
            let start = flat as usize * self.payload;
            for q in 0..self.payload {
                row.push(format_f64(self.values[start + q]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the [`to_csv`](Self::to_csv) format; rows must appear in canonical
    /// ascending block order.
    pub fn from_csv(text: &str, schedule: &PeriodSchedule) -> Result<Self, MgridError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MgridError::Csv {
            line: 1,
            reason: "empty input".into(),
        })?;
        if header.trim() != "level,dim,payload_size" {
            return Err(MgridError::Csv {
                line: 1,
                reason: format!("unexpected header {header:?}"),
            });
        }
        let (_, shape) = lines.next().ok_or(MgridError::Csv {
            line: 2,
            reason: "missing shape row".into(),
        })?;
        let parts: Vec<&str> = shape.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(MgridError::Csv {
                line: 2,
                reason: "shape row wants 3 fields".into(),
            });
        }
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>().map_err(|e| MgridError::Csv {
                line,
                reason: format!("bad integer {s:?}: {e}"),
            })
        };
        let level = parse_usize(parts[0], 2)?;
        let dim = parse_usize(parts[1], 2)?;
        let payload = parse_usize(parts[2], 2)?;
        let expected = Self::storage_len(schedule, level, dim, payload)?;
        let blocks = schedule.cumulative(level);
        let total_blocks = expected / payload as u64;
        let mut values = Vec::with_capacity(expected as usize);
        for (flat, (line_idx, line)) in lines.enumerate() {
            let line_no = line_idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if flat as u64 >= total_blocks {
                return Err(MgridError::Csv {
                    line: line_no,
                    reason: "more rows than blocks".into(),
                });
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + payload {
                return Err(MgridError::Csv {
                    line: line_no,
                    reason: format!("row wants {} fields, got {}", dim + payload, fields.len()),
                });
            }
            let mut expect_index = [0u64; 2];
            if dim == 2 {
                expect_index[0] = flat as u64 / blocks;
                expect_index[1] = flat as u64 % blocks;
            } else {
                expect_index[0] = flat as u64;
            }
            for (axis, field) in fields[..dim].iter().enumerate() {
                let got: u64 = field.parse().map_err(|e| MgridError::Csv {
                    line: line_no,
                    reason: format!("bad block index {field:?}: {e}"),
                })?;
                if got != expect_index[axis] {
                    return Err(MgridError::Csv {
                        line: line_no,
                        reason: format!(
                            "rows out of canonical order: axis {axis} has {got}, wanted {}",
                            expect_index[axis]
                        ),
                    });
                }
            }
            for field in &fields[dim..] {
                let v: f64 = field.parse().map_err(|e| MgridError::Csv {
                    line: line_no,
                    reason: format!("bad value {field:?}: {e}"),
                })?;
                values.push(v);
            }
        }
        if values.len() as u64 != expected {
            return Err(MgridError::Csv {
                line: text.lines().count(),
                reason: format!("expected {expected} values, got {}", values.len()),
            });
        }
        Self::new(schedule, level, dim, payload, values)
    }
}

fn check_same_shape(f: &CellFunction, g: &CellFunction) -> Result<(), MgridError> {
    if f.schedule != g.schedule {
        return Err(MgridError::ScheduleMismatch);
    }
    if f.dim != g.dim {
        return Err(MgridError::DimMismatch {
            left: f.dim,
            right: g.dim,
        });
    }
    if f.payload != g.payload {
        return Err(MgridError::PayloadMismatch {
            left: f.payload,
            right: g.payload,
        });
    }
    Ok(())
}

/// Conditional expectation onto the level-k block σ-algebra: each level-k block
/// takes the arithmetic mean of its consecutive sub-blocks.
pub fn coarse_grain(f: &CellFunction, k: usize) -> Result<CellFunction, MgridError> {
    if k > f.level {
        return Err(MgridError::LevelOrder {
            from: f.level,
            to: k,
        });
    }
    let ratio = f.schedule.try_refinement(k, f.level)?;
    if ratio == 1 {
        return Ok(f.clone());
    }
    let fine_blocks = f.blocks();
    let payload = f.payload;
    let mut scratch = Vec::with_capacity((ratio * ratio) as usize);
    CellFunction::from_fn(&f.schedule, k, f.dim, payload, |block, q| {
        scratch.clear();
        match f.dim {
            1 => {
                let base = block[0] * ratio;
                for u in 0..ratio {
                    scratch.push(f.values[((base + u) as usize) * payload + q]);
                }
            }
            _ => {
                let (b1, b2) = (block[0] * ratio, block[1] * ratio);
                for u in 0..ratio {
                    for v in 0..ratio {
                        let flat = (b1 + u) * fine_blocks + (b2 + v);
                        scratch.push(f.values[flat as usize * payload + q]);
                    }
                }
            }
        }
        pairwise_sum(&scratch) / scratch.len() as f64
    })
}

/// Replicates a coarse function onto a finer level: every fine block inherits the
/// value of the coarse block containing it. Right inverse of [`coarse_grain`].
pub fn refine(f: &CellFunction, target: usize) -> Result<CellFunction, MgridError> {
    if target < f.level {
        return Err(MgridError::LevelOrder {
            from: f.level,
            to: target,
        });
    }
    let ratio = f.schedule.try_refinement(f.level, target)?;
    if ratio == 1 {
        return Ok(f.clone());
    }
    let coarse_blocks = f.blocks();
    let payload = f.payload;
    CellFunction::from_fn(&f.schedule, target, f.dim, payload, |block, q| {
        let flat = match f.dim {
            1 => block[0] / ratio,
            _ => (block[0] / ratio) * coarse_blocks + block[1] / ratio,
        };
        f.values[flat as usize * payload + q]
    })
}

/// The aggregation identity between nested two-scale limits: the level-k limit is
/// the mean of the finer limit over its stride-M_k translates,
/// v_k[α] = (M_k/M_n)^d Σ v_n[α + t·M_k].
pub fn aggregate_two_scale(f: &CellFunction, k: usize) -> Result<CellFunction, MgridError> {
    if k > f.level {
        return Err(MgridError::LevelOrder {
            from: f.level,
            to: k,
        });
    }
    let ratio = f.schedule.try_refinement(k, f.level)?;
    if ratio == 1 {
        return Ok(f.clone());
    }
    let coarse_blocks = f.schedule.cumulative(k);
    let fine_blocks = f.blocks();
    let payload = f.payload;
    let mut scratch = Vec::with_capacity((ratio * ratio) as usize);
    CellFunction::from_fn(&f.schedule, k, f.dim, payload, |block, q| {
        scratch.clear();
        match f.dim {
            1 => {
                for t in 0..ratio {
                    let flat = block[0] + t * coarse_blocks;
                    scratch.push(f.values[flat as usize * payload + q]);
                }
            }
            _ => {
                for t1 in 0..ratio {
                    for t2 in 0..ratio {
                        let flat =
                            (block[0] + t1 * coarse_blocks) * fine_blocks + block[1] + t2 * coarse_blocks;
                        scratch.push(f.values[flat as usize * payload + q]);
                    }
                }
            }
        }
        pairwise_sum(&scratch) / scratch.len() as f64
    })
}

/// Periodic extension onto a finer level: the fine block α takes the value of the
/// coarse block α mod M_k. Right inverse of [`aggregate_two_scale`], the way
/// [`refine`] is of [`coarse_grain`].
pub fn extend_periodic(f: &CellFunction, target: usize) -> Result<CellFunction, MgridError> {
    if target < f.level {
        return Err(MgridError::LevelOrder {
            from: f.level,
            to: target,
        });
    }
    let coarse_blocks = f.blocks();
    let payload = f.payload;
    CellFunction::from_fn(&f.schedule, target, f.dim, payload, |block, q| {
        let flat = match f.dim {
            1 => block[0] % coarse_blocks,
            _ => (block[0] % coarse_blocks) * coarse_blocks + block[1] % coarse_blocks,
        };
        f.values[flat as usize * payload + q]
    })
}

/// Re-reads a one-period sampling of a two-scale limit as a unit-cell block
/// function: block β of the period cell becomes the (α = β)-indexed block of the
/// unit cell. Values do not move; the function exists so pipelines state the
/// re-indexing explicitly.
pub fn rearrange_v(u: &CellFunction, s: &PeriodSchedule) -> Result<CellFunction, MgridError> {
    if u.schedule() != s {
        return Err(MgridError::ScheduleMismatch);
    }
    Ok(u.clone())
}

/// Applies a shuffle to block indices, per axis: output block β takes the value of
/// input block H(β).
pub fn to_shuffled(w: &CellFunction, h: &ShuffleMap) -> Result<CellFunction, MgridError> {
    apply_block_permutation(w, h, h.forward())
}

/// Undoes [`to_shuffled`]: output block β takes the value of input block H⁻¹(β).
/// On all-2 schedules the shuffle is an involution, so the two agree there.
pub fn from_shuffled(w: &CellFunction, h: &ShuffleMap) -> Result<CellFunction, MgridError> {
    apply_block_permutation(w, h, h.inverse())
}

fn apply_block_permutation(
    w: &CellFunction,
    h: &ShuffleMap,
    table: &[u64],
) -> Result<CellFunction, MgridError> {
    if h.level() != w.level {
        return Err(MgridError::LevelMismatch {
            expected: w.level,
            got: h.level(),
        });
    }
    if h.blocks() != w.blocks() {
        return Err(MgridError::ScheduleMismatch);
    }
    let blocks = w.blocks();
    let payload = w.payload;
    CellFunction::from_fn(&w.schedule, w.level, w.dim, payload, |block, q| {
        let flat = match w.dim {
            1 => table[block[0] as usize],
            _ => table[block[0] as usize] * blocks + table[block[1] as usize],
        };
        w.values[flat as usize * payload + q]
    })
}

/// Recovers the level-n physical limit from a shuffled fine-level function:
/// conditional expectation down to level n, then unshuffling through the supplied
/// level-n map.
pub fn recover_two_scale(
    w_fine: &CellFunction,
    n: usize,
    h_n: &ShuffleMap,
) -> Result<CellFunction, MgridError> {
    let coarse = coarse_grain(w_fine, n)?;
    from_shuffled(&coarse, h_n)
}

/// L² distance over the unit cell; the coarser operand is replicated onto the
/// finer level first.
pub fn l2_distance(f: &CellFunction, g: &CellFunction) -> Result<f64, MgridError> {
    check_same_shape(f, g)?;
    let level = f.level.max(g.level);
    let fr = refine(f, level)?;
    let gr = refine(g, level)?;
    let squares: Vec<f64> = fr
        .values
        .iter()
        .zip(&gr.values)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok((pairwise_sum(&squares) / squares.len() as f64).sqrt())
}

/// A tower of cell functions at strictly increasing levels on one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleSequence {
    terms: Vec<CellFunction>,
}

impl MartingaleSequence {
    /// Validates levels strictly increasing with identical schedule and shape.
    pub fn new(terms: Vec<CellFunction>) -> Result<Self, MgridError> {
        if terms.is_empty() {
            return Err(MgridError::EmptySequence);
        }
        for pair in terms.windows(2) {
            check_same_shape(&pair[0], &pair[1])?;
            if pair[1].level <= pair[0].level {
                return Err(MgridError::LevelsNotIncreasing {
                    prev: pair[0].level,
                    next: pair[1].level,
                });
            }
        }
        Ok(Self { terms })
    }

    /// The tower, coarsest first.
    pub fn terms(&self) -> &[CellFunction] {
        &self.terms
    }
}

/// Martingale check report: max-norm residuals of consecutive coarse-graining
/// identities.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// Residual ‖coarse_grain(f_{i+1}) − f_i‖_∞ per consecutive pair.
    pub residuals: Vec<f64>,
    /// Largest entry of `residuals` (0 for a single-term sequence).
    pub max_residual: f64,
    /// Whether every residual is within the tolerance.
    pub pass: bool,
}

/// Checks the martingale property: for every consecutive pair,
/// coarse_grain(f_{i+1}, n_i) must equal f_i within `tol` in the max norm.
pub fn is_martingale(seq: &MartingaleSequence, tol: f64) -> Result<MartingaleReport, MgridError> {
    let mut residuals = Vec::new();
    for pair in seq.terms.windows(2) {
        let projected = coarse_grain(&pair[1], pair[0].level)?;
        let residual = projected
            .values
            .iter()
            .zip(&pair[0].values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        residuals.push(residual);
    }
    let max_residual = residuals.iter().copied().fold(0.0f64, f64::max);
    Ok(MartingaleReport {
        residuals,
        max_residual,
        pass: max_residual <= tol,
    })
}
