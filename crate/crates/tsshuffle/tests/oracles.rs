//! Cross-checks against independently coded reference implementations.
//!
//! Each test here recomputes a quantity through a construction that shares no
//! code with the library path it checks: digit reversal instead of composed
//! one-step maps, a dense symmetric eigensolve instead of the circulant DFT,
//! explicit copy loops instead of the resampling operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use tsshuffle::heatml::{solve_two_scale_system, HeatParams, LayerState, Method};
use tsshuffle::mgrid::{extend_periodic, to_shuffled, CellFunction};
use tsshuffle::schedule::PeriodSchedule;
use tsshuffle::shuffle::{
    compose_shuffle, layer_reversal, neighbor_down, neighbor_maps_finite, neighbor_up,
};

fn schedule(factors: &[u64]) -> PeriodSchedule {
    PeriodSchedule::new(1.0, factors).unwrap()
}

/// Reference for the composed map: write the block index in mixed-radix
/// digits, reverse the digit string, and read it back with the radices
/// reversed as well.
fn digit_reversal(factors: &[u64], n: usize, i: u64) -> u64 {
    let s = schedule(factors);
    let rev_factors: Vec<u64> = factors[..n].iter().rev().copied().collect();
    let s_rev = schedule(&rev_factors);
    let mut digits = s.digits(n, i).unwrap();
    digits.reverse();
    s_rev.from_digits(n, &digits).unwrap()
}

#[test]
fn composed_map_matches_digit_reversal() {
    for factors in [
        vec![2, 3, 2],
        vec![3, 2, 5],
        vec![2, 2, 2, 2],
        vec![5, 4],
        vec![2, 3, 4],
        vec![7],
    ] {
        let s = schedule(&factors);
        for n in 1..=factors.len() {
            let map = compose_shuffle(&s, n).unwrap();
            let blocks = s.cumulative(n);
            for i in 0..blocks {
                assert_eq!(
                    map.forward()[i as usize],
                    digit_reversal(&factors, n, i),
                    "factors {factors:?}, level {n}, block {i}"
                );
            }
        }
    }
}

/// Reference for the recursion: build the level-n map from the level-(n-1)
/// map using only the one-step layer reversal. The new layer acts first,
/// then the old map is lifted to each stride class.
fn recursive_compose(factors: &[u64], n: usize) -> Vec<u64> {
    let mut map: Vec<u64> = vec![0];
    let mut blocks: u64 = 1;
    for &m in &factors[..n] {
        let next_blocks = blocks * m;
        let lifted: Vec<u64> = (0..next_blocks)
            .map(|i| {
                let r = layer_reversal(blocks, m, i);
                let t = r / blocks;
                let b = r % blocks;
                t * blocks + map[b as usize]
            })
            .collect();
        map = lifted;
        blocks = next_blocks;
    }
    map
}

#[test]
fn composed_map_matches_recursion() {
    for factors in [vec![2, 3, 2], vec![4, 5], vec![2, 2, 3, 3], vec![6, 2, 2]] {
        let s = schedule(&factors);
        for n in 1..=factors.len() {
            let map = compose_shuffle(&s, n).unwrap();
            assert_eq!(
                map.forward(),
                &recursive_compose(&factors, n)[..],
                "factors {factors:?}, level {n}"
            );
        }
    }
}

/// Shuffling commutes with periodic extension: the fine shuffled vector
/// repeats every coarse shuffled entry once per refinement copy, in place,
/// with no arithmetic at all.
#[test]
fn shuffled_extension_is_exact_replication() {
    let factors = [2u64, 3, 2, 2];
    let s = schedule(&factors);
    let coarse_level = 2;
    let blocks = s.cumulative(coarse_level);
    let w = CellFunction::from_fn(&s, coarse_level, 1, 1, |idx, _| {
        (0.37 * idx[0] as f64).sin() + 0.11 * idx[0] as f64
    })
    .unwrap();
    let h_coarse = compose_shuffle(&s, coarse_level).unwrap();
    let base = to_shuffled(&w, &h_coarse).unwrap();
    for fine_level in coarse_level + 1..=factors.len() {
        let reps = s.refinement(coarse_level, fine_level);
        let extended = extend_periodic(&w, fine_level).unwrap();
        let h_fine = compose_shuffle(&s, fine_level).unwrap();
        let shuffled = to_shuffled(&extended, &h_fine).unwrap();
        let mut expected = Vec::with_capacity((blocks * reps) as usize);
        for &v in base.values() {
            expected.extend(std::iter::repeat(v).take(reps as usize));
        }
        assert_eq!(shuffled.values(), &expected[..], "fine level {fine_level}");
    }
}

/// Reference for the exact layer solver: assemble the dense symmetric
/// generator and exponentiate it through its eigendecomposition.
fn dense_eigen_solution(params: &HeatParams, u0: &[f64], t: f64) -> Vec<f64> {
    let m = u0.len();
    let c = params.coupling_scale();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        a[(i, i)] += (2.0 * params.escape + 2.0 * params.exchange) / c;
        a[(i, (i + 1) % m)] += -params.exchange / c;
        a[(i, (i + m - 1) % m)] += -params.exchange / c;
    }
    let eig = SymmetricEigen::new(a);
    let v0 = DVector::from_column_slice(u0);
    let coeffs = eig.eigenvectors.transpose() * v0;
    let mut out = DVector::<f64>::zeros(m);
    for k in 0..m {
        out += eig.eigenvectors.column(k) * (coeffs[k] * (-eig.eigenvalues[k] * t).exp());
    }
    out.iter().copied().collect()
}

#[test]
fn exact_layer_solver_matches_dense_eigensolve() {
    let params = HeatParams {
        diffusivity: 1.0,
        escape: 0.7,
        exchange: 1.3,
        delta: 0.2,
    };
    for m in [1usize, 2, 3, 4, 6, 12] {
        let u0: Vec<f64> = (0..m).map(|i| (1.7 * i as f64).cos() + 0.2).collect();
        let state = LayerState::new(u0.clone()).unwrap();
        for &t in &[0.05, 0.3, 1.5] {
            let traj = solve_two_scale_system(&params, &state, t, 2, Method::Exact).unwrap();
            let reference = dense_eigen_solution(&params, &u0, t);
            for (got, want) in traj.final_state().iter().zip(&reference) {
                assert!(
                    (got - want).abs() <= 1e-9,
                    "m {m}, t {t}: {got} vs {want}"
                );
            }
        }
    }
}

/// The pointwise neighbor maps restricted to a deepest-level block are pure
/// translations, so they must carry interior offsets exactly as the block
/// tables carry indices.
#[test]
fn pointwise_neighbor_maps_agree_with_block_tables() {
    for factors in [vec![2u64, 2], vec![2, 3, 2], vec![3, 3], vec![2, 2, 2, 2]] {
        let s = schedule(&factors);
        let n = factors.len();
        let maps = neighbor_maps_finite(&s, n).unwrap();
        let blocks = s.cumulative(n);
        let width = 1.0 / blocks as f64;
        for b in 0..blocks {
            for theta in [0.1f64, 0.37] {
                let y = (b as f64 + theta) * width;
                let up = neighbor_up(&s, y).unwrap();
                let expect_up = (maps.up[b as usize] as f64 + theta) * width;
                assert!(
                    (up - expect_up).abs() <= 1e-12,
                    "factors {factors:?}, block {b}, theta {theta}: up {up} vs {expect_up}"
                );
                let down = neighbor_down(&s, y).unwrap();
                let expect_down = (maps.down[b as usize] as f64 + theta) * width;
                assert!(
                    (down - expect_down).abs() <= 1e-12,
                    "factors {factors:?}, block {b}, theta {theta}: down {down} vs {expect_down}"
                );
            }
        }
    }
}

#[test]
fn pointwise_neighbor_frozen_values() {
    let d = PeriodSchedule::dyadic(2);
    let maps = neighbor_maps_finite(&d, 2).unwrap();
    assert_eq!(maps.up, vec![2, 3, 1, 0]);
    assert_eq!(maps.down, vec![3, 2, 0, 1]);
    let up = neighbor_up(&d, 0.6).unwrap();
    assert!((up - 0.35).abs() <= 1e-15);
    let back = neighbor_down(&d, up).unwrap();
    assert!((back - 0.6).abs() <= 1e-15);
}
