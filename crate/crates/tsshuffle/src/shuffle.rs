//! Implementation notes: forward tables are computed by folding the one-step
//! reversals down the schedule (the definitional path), inverse tables by the
//! mixed-radix digit-reversal closed form; tests hold the two against each other.
//! Neighbor tables come from the piecewise-translation closed forms, with the
//! conjugation definition kept as a test oracle.

use crate::schedule::{PeriodSchedule, ScheduleError};
use thiserror::Error;

/// Largest table the crate will materialize; one step up costs a gigabyte.
pub const MAX_TABLE_BLOCKS: u64 = 1 << 24;

/// Errors from shuffle construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShuffleError {
    /// Underlying schedule query failed.
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    /// A materialized permutation table would exceed [`MAX_TABLE_BLOCKS`].
    #[error("level has {blocks} blocks, tables are capped at {cap}")]
    TableTooLarge {
        /// Blocks at the requested level.
        blocks: u64,
        /// The cap.
        cap: u64,
    },
    /// A scalar argument left the unit cell.
    #[error("coordinate {y} is outside [0, 1)")]
    OutOfUnit {
        /// Offending coordinate.
        y: f64,
    },
    /// A scalar argument hit a discontinuity of a neighbor map.
    #[error("coordinate {y} is a branch endpoint; evaluate a nudged point instead")]
    Breakpoint {
        /// Offending coordinate.
        y: f64,
    },
}

/// Layer reversal R on [0, outer·inner): writes i = q·inner + r and returns
/// r·outer + q, the transpose of an outer × inner row-major table.
///
/// Panics if `i >= outer * inner` or a side is zero; block indices handed to this
/// function are produced by schedule arithmetic that already guarantees the range.
pub fn layer_reversal(outer: u64, inner: u64, i: u64) -> u64 {
    assert!(outer > 0 && inner > 0, "layer reversal needs positive sides");
    assert!(
        i < outer * inner,
        "block index {i} out of range for {outer} x {inner} reversal"
    );
    (i % inner) * outer + i / inner
}

/// A composed shuffle at one level: the forward block permutation and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleMap {
    level: usize,
    forward: Vec<u64>,
    inverse: Vec<u64>,
}

impl ShuffleMap {
    /// Level this map permutes.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of blocks M_n.
    pub fn blocks(&self) -> u64 {
        self.forward.len() as u64
    }

    /// Forward table: block k of the unshuffled cell lands on `forward()[k]`.
    pub fn forward(&self) -> &[u64] {
        &self.forward
    }

    /// Inverse table, from the digit-reversal closed form.
    pub fn inverse(&self) -> &[u64] {
        &self.inverse
    }
}

/// Image of one block under the level-n shuffle, by folding the one-step reversals
/// coarsest first; no table is materialized.
pub fn shuffle_block(s: &PeriodSchedule, n: usize, k: u64) -> Result<u64, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if k >= blocks {
        return Err(ScheduleError::BlockOutOfRange { block: k, blocks }.into());
    }
    let mut x = k;
    for j in 1..=n {
        // The level-j step permutes the leading j digits through R_{M_{j-1}, m_j}
        // and fixes the trailing stride.
        let stride = blocks / s.cumulative(j);
        let lead = x / stride;
        let rest = x % stride;
        let m = s.factor(j).expect("level within range");
        x = layer_reversal(s.cumulative(j - 1), m, lead) * stride + rest;
    }
    Ok(x)
}

/// Preimage of one block under the level-n shuffle, by the closed form: peel the
/// expansion i = Σ_j b_j · M_{j-1} from the top digit down and reassemble
/// Σ_j b_j · (M_n / M_j).
pub fn inverse_shuffle_block(s: &PeriodSchedule, n: usize, i: u64) -> Result<u64, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if i >= blocks {
        return Err(ScheduleError::BlockOutOfRange { block: i, blocks }.into());
    }
    let mut rest = i;
    let mut k = 0u64;
    for j in (1..=n).rev() {
        let digit = rest / s.cumulative(j - 1);
        rest %= s.cumulative(j - 1);
        k += digit * (blocks / s.cumulative(j));
    }
    Ok(k)
}

/// Builds the full forward and inverse tables for the level-n shuffle.
///
/// Level 0 yields the identity on a single block. Levels whose block count exceeds
/// [`MAX_TABLE_BLOCKS`] are refused; use the scalar or single-block evaluators there.
pub fn compose_shuffle(s: &PeriodSchedule, n: usize) -> Result<ShuffleMap, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if blocks > MAX_TABLE_BLOCKS {
        return Err(ShuffleError::TableTooLarge {
            blocks,
            cap: MAX_TABLE_BLOCKS,
        });
    }
    let mut forward = Vec::with_capacity(blocks as usize);
    let mut inverse = Vec::with_capacity(blocks as usize);
    for k in 0..blocks {
        forward.push(shuffle_block(s, n, k)?);
        inverse.push(inverse_shuffle_block(s, n, k)?);
    }
    debug_assert!((0..blocks).all(|k| inverse[forward[k as usize] as usize] == k));
    Ok(ShuffleMap {
        level: n,
        forward,
        inverse,
    })
}

fn unit_block(s: &PeriodSchedule, n: usize, y: f64) -> Result<(u64, f64, f64), ShuffleError> {
    if !(0.0..1.0).contains(&y) || !y.is_finite() {
        return Err(ShuffleError::OutOfUnit { y });
    }
    let m = s.try_cumulative(n)? as f64;
    // A y just below 1 can round up to the block count; clamp back inside.
    let b = (y * m).floor().min(m - 1.0);
    Ok((b as u64, b / m, m))
}

/// Scalar level-n shuffle: moves the block of y and keeps the offset inside it.
pub fn shuffle_scalar(s: &PeriodSchedule, n: usize, y: f64) -> Result<f64, ShuffleError> {
    let (b, left, m) = unit_block(s, n, y)?;
    let image = shuffle_block(s, n, b)?;
    Ok(image as f64 / m + (y - left))
}

/// Scalar inverse shuffle; composes with [`shuffle_scalar`] to the identity up to
/// one unit in the last place.
pub fn inverse_shuffle_scalar(s: &PeriodSchedule, n: usize, y: f64) -> Result<f64, ShuffleError> {
    let (b, left, m) = unit_block(s, n, y)?;
    let image = inverse_shuffle_block(s, n, b)?;
    Ok(image as f64 / m + (y - left))
}

/// Up and down neighbor permutations on the blocks of one level.
///
/// `up` is the conjugation of the cyclic shift k ↦ k+1 (mod M_n) through the
/// level-n shuffle, `down` its inverse; both are built from the piecewise
/// translation closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMaps {
    /// Image of each block under the up map.
    pub up: Vec<u64>,
    /// Image of each block under the down map.
    pub down: Vec<u64>,
}

/// Closed-form up neighbor of one block at level n.
///
/// Branch j (with M_0 = 1) covers M_n − M_n/M_j ≤ b < M_n − M_n/M_{j+1} and
/// translates by M_n/M_j + M_n/M_{j+1} − M_n; the top block wraps to 0.
pub fn neighbor_up_block(s: &PeriodSchedule, n: usize, b: u64) -> Result<u64, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if b >= blocks {
        return Err(ScheduleError::BlockOutOfRange { block: b, blocks }.into());
    }
    if b == blocks - 1 {
        return Ok(0);
    }
    for j in 0..n {
        let lo = blocks - blocks / s.cumulative(j);
        let hi = blocks - blocks / s.cumulative(j + 1);
        if (lo..hi).contains(&b) {
            return Ok(b + blocks / s.cumulative(j) + blocks / s.cumulative(j + 1) - blocks);
        }
    }
    unreachable!("branches and the wrap block cover every index below M_n");
}

/// Closed-form down neighbor of one block at level n; inverse of
/// [`neighbor_up_block`].
pub fn neighbor_down_block(s: &PeriodSchedule, n: usize, b: u64) -> Result<u64, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if b >= blocks {
        return Err(ScheduleError::BlockOutOfRange { block: b, blocks }.into());
    }
    if b == 0 {
        return Ok(blocks - 1);
    }
    for j in 0..n {
        let lo = blocks / s.cumulative(j + 1);
        let hi = blocks / s.cumulative(j);
        if (lo..hi).contains(&b) {
            return Ok(b + blocks - blocks / s.cumulative(j) - blocks / s.cumulative(j + 1));
        }
    }
    unreachable!("branches and the wrap block cover every index above 0");
}

/// Both neighbor tables for level n.
pub fn neighbor_maps_finite(s: &PeriodSchedule, n: usize) -> Result<NeighborMaps, ShuffleError> {
    let blocks = s.try_cumulative(n)?;
    if blocks > MAX_TABLE_BLOCKS {
        return Err(ShuffleError::TableTooLarge {
            blocks,
            cap: MAX_TABLE_BLOCKS,
        });
    }
    let mut up = Vec::with_capacity(blocks as usize);
    let mut down = Vec::with_capacity(blocks as usize);
    for b in 0..blocks {
        up.push(neighbor_up_block(s, n, b)?);
        down.push(neighbor_down_block(s, n, b)?);
    }
    Ok(NeighborMaps { up, down })
}

fn check_unit_interior(s: &PeriodSchedule, y: f64) -> Result<(), ShuffleError> {
    if !y.is_finite() || y <= 0.0 || y >= 1.0 {
        return Err(ShuffleError::OutOfUnit { y });
    }
    for j in 1..=s.levels() {
        let inv = 1.0 / s.cumulative(j) as f64;
        if y == inv || y == 1.0 - inv {
            return Err(ShuffleError::Breakpoint { y });
        }
    }
    Ok(())
}

/// Pointwise up neighbor map on the unit cell.
///
/// Translates by 1/M_j + 1/M_{j+1} − 1 on the branch 1 − 1/M_j ≤ y < 1 − 1/M_{j+1}
/// (j below the schedule depth, M_0 = 1) and by 1/M_L − 1 on the deepest wrap zone,
/// matching the level-L block table on block left endpoints. Branch endpoints are
/// rejected as [`ShuffleError::Breakpoint`].
pub fn neighbor_up(s: &PeriodSchedule, y: f64) -> Result<f64, ShuffleError> {
    check_unit_interior(s, y)?;
    let depth = s.levels();
    for j in 0..depth {
        let hi = 1.0 - 1.0 / s.cumulative(j + 1) as f64;
        if y < hi {
            let shift = 1.0 / s.cumulative(j) as f64 + 1.0 / s.cumulative(j + 1) as f64 - 1.0;
            return Ok(y + shift);
        }
    }
    Ok(y + 1.0 / s.cumulative(depth) as f64 - 1.0)
}

/// Pointwise down neighbor map on the unit cell; inverse of [`neighbor_up`] away
/// from the deepest wrap zones.
pub fn neighbor_down(s: &PeriodSchedule, y: f64) -> Result<f64, ShuffleError> {
    check_unit_interior(s, y)?;
    let depth = s.levels();
    for j in 0..depth {
        let lo = 1.0 / s.cumulative(j + 1) as f64;
        if y >= lo {
            let shift = 1.0 - 1.0 / s.cumulative(j) as f64 - 1.0 / s.cumulative(j + 1) as f64;
            return Ok(y + shift);
        }
    }
    Ok(y + 1.0 - 1.0 / s.cumulative(depth) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reversal_tables() {
        let t: Vec<u64> = (0..6).map(|i| layer_reversal(2, 3, i)).collect();
        assert_eq!(t, vec![0, 2, 4, 1, 3, 5]);
        let u: Vec<u64> = (0..12).map(|i| layer_reversal(6, 2, i)).collect();
        assert_eq!(u, vec![0, 6, 1, 7, 2, 8, 3, 9, 4, 10, 5, 11]);
    }

    #[test]
    fn composed_tables_and_inverses() {
        let s = PeriodSchedule::new(1.0, &[2, 3, 2]).unwrap();
        let h2 = compose_shuffle(&s, 2).unwrap();
        assert_eq!(h2.forward(), &[0, 2, 4, 1, 3, 5]);
        let h3 = compose_shuffle(&s, 3).unwrap();
        assert_eq!(h3.forward(), &[0, 6, 2, 8, 4, 10, 1, 7, 3, 9, 5, 11]);
        for k in 0..12u64 {
            assert_eq!(h3.inverse()[h3.forward()[k as usize] as usize], k);
        }
        // Level 0 is the identity on one block.
        let h0 = compose_shuffle(&s, 0).unwrap();
        assert_eq!(h0.forward(), &[0]);
    }

    #[test]
    fn dyadic_shuffle_is_bit_reversal() {
        let d = PeriodSchedule::dyadic(3);
        let h3 = compose_shuffle(&d, 3).unwrap();
        assert_eq!(h3.forward(), &[0, 4, 2, 6, 1, 5, 3, 7]);
        assert_eq!(h3.forward(), h3.inverse(), "dyadic shuffle is an involution");
    }

    #[test]
    fn scalar_round_trip_within_one_ulp() {
        let s = PeriodSchedule::new(1.0, &[3, 2, 5]).unwrap();
        for i in 0..1000 {
            let y = i as f64 / 1000.0;
            let image = shuffle_scalar(&s, 3, y).unwrap();
            let back = inverse_shuffle_scalar(&s, 3, image).unwrap();
            assert_abs_diff_eq!(back, y, epsilon = 1e-15);
        }
        assert!(matches!(
            shuffle_scalar(&s, 3, 1.0),
            Err(ShuffleError::OutOfUnit { .. })
        ));
    }

    #[test]
    fn neighbor_tables_match_conjugation() {
        // Oracle: conjugate the cyclic shift through the composed tables.
        for factors in [vec![2, 2, 2], vec![2, 3, 2], vec![3, 4], vec![5, 2, 3]] {
            let s = PeriodSchedule::new(1.0, &factors).unwrap();
            let n = factors.len();
            let h = compose_shuffle(&s, n).unwrap();
            let m = h.blocks();
            let maps = neighbor_maps_finite(&s, n).unwrap();
            for b in 0..m {
                let shifted = (h.forward()[b as usize] + 1) % m;
                let expect = h.inverse()[shifted as usize];
                assert_eq!(maps.up[b as usize], expect, "up mismatch at block {b}");
                let shifted_down = (h.forward()[b as usize] + m - 1) % m;
                let expect_down = h.inverse()[shifted_down as usize];
                assert_eq!(maps.down[b as usize], expect_down, "down mismatch at {b}");
            }
        }
    }

    #[test]
    fn block_neighbor_examples() {
        // Level-2 dyadic blocks: y = 0.25 is block 1 and goes up to block 3
        // (y = 0.75, first branch); y = 0.5 is block 2 and goes to block 1
        // (y = 0.25, second branch).
        let d = PeriodSchedule::dyadic(4);
        assert_eq!(neighbor_up_block(&d, 2, 1).unwrap(), 3);
        assert_eq!(neighbor_up_block(&d, 2, 2).unwrap(), 1);
    }

    #[test]
    fn pointwise_neighbor_values() {
        let d = PeriodSchedule::dyadic(4);
        assert_abs_diff_eq!(neighbor_up(&d, 0.6).unwrap(), 0.35, epsilon = 1e-15);
        let y = neighbor_up(&d, 0.3).unwrap();
        assert_abs_diff_eq!(neighbor_down(&d, y).unwrap(), 0.3, epsilon = 1e-15);

        // Branch j=1 of the [2,3,2] ladder translates [1/2, 5/6) by -1/3.
        let s = PeriodSchedule::new(1.0, &[2, 3, 2]).unwrap();
        assert_abs_diff_eq!(neighbor_up(&s, 0.55).unwrap(), 0.55 - 1.0 / 3.0, epsilon = 1e-15);

        assert!(matches!(
            neighbor_up(&d, 0.25),
            Err(ShuffleError::Breakpoint { .. })
        ));
        assert!(matches!(
            neighbor_up(&d, 1.0),
            Err(ShuffleError::OutOfUnit { .. })
        ));
    }
}
