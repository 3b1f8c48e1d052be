//! Structural invariants checked over randomly drawn schedules and data.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsshuffle::heatml::{solve_two_scale_system, HeatParams, LayerState, Method};
use tsshuffle::mgrid::{
    coarse_grain, extend_periodic, from_shuffled, refine, to_shuffled, CellFunction,
};
use tsshuffle::schedule::PeriodSchedule;
use tsshuffle::shuffle::{
    compose_shuffle, inverse_shuffle_block, layer_reversal, neighbor_maps_finite, shuffle_block,
};
use tsshuffle::twoscale::{pairing_eps, test_basis, OscillatoryFunction, SlowPart, Term, Wave};

fn factor_vecs() -> impl Strategy<Value = Vec<u64>> {
    proptest::collection::vec(2u64..=5, 1..=5)
        .prop_filter("table stays small", |f| f.iter().product::<u64>() <= 512)
}

fn random_values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn digits_round_trip(factors in factor_vecs(), raw in any::<u64>()) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        for n in 0..=factors.len() {
            let blocks = s.cumulative(n);
            let k = raw % blocks;
            let digits = s.digits(n, k).unwrap();
            prop_assert_eq!(digits.len(), n);
            prop_assert_eq!(s.from_digits(n, &digits).unwrap(), k);
        }
    }

    #[test]
    fn composed_shuffle_is_bijective(factors in factor_vecs()) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        for n in 1..=factors.len() {
            let map = compose_shuffle(&s, n).unwrap();
            let blocks = s.cumulative(n);
            let mut seen = vec![false; blocks as usize];
            for k in 0..blocks {
                let image = map.forward()[k as usize];
                prop_assert!(image < blocks);
                prop_assert!(!seen[image as usize], "duplicate image {}", image);
                seen[image as usize] = true;
                prop_assert_eq!(map.inverse()[image as usize], k);
                prop_assert_eq!(shuffle_block(&s, n, k).unwrap(), image);
                prop_assert_eq!(inverse_shuffle_block(&s, n, image).unwrap(), k);
            }
        }
    }

    #[test]
    fn layer_reversal_pairs_invert(outer in 1u64..=12, inner in 1u64..=12) {
        for i in 0..outer * inner {
            let j = layer_reversal(outer, inner, i);
            prop_assert!(j < outer * inner);
            prop_assert_eq!(layer_reversal(inner, outer, j), i);
        }
    }

    #[test]
    fn neighbor_tables_conjugate_the_rotation(factors in factor_vecs()) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        for n in 1..=factors.len() {
            let map = compose_shuffle(&s, n).unwrap();
            let nb = neighbor_maps_finite(&s, n).unwrap();
            let blocks = s.cumulative(n);
            for b in 0..blocks {
                let fwd = map.forward()[b as usize];
                let up = map.inverse()[((fwd + 1) % blocks) as usize];
                let down = map.inverse()[((fwd + blocks - 1) % blocks) as usize];
                prop_assert_eq!(nb.up[b as usize], up);
                prop_assert_eq!(nb.down[b as usize], down);
            }
        }
    }

    #[test]
    fn resampling_preserves_means(factors in factor_vecs(), seed in any::<u64>()) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        let n = factors.len();
        let blocks = s.cumulative(n) as usize;
        let w = CellFunction::new(&s, n, 1, 1, random_values(blocks, seed)).unwrap();
        let mean = w.mean();
        let h = compose_shuffle(&s, n).unwrap();
        let shuffled = to_shuffled(&w, &h).unwrap();
        prop_assert!((shuffled.mean() - mean).abs() <= 1e-12);
        for k in 0..n {
            prop_assert!((coarse_grain(&shuffled, k).unwrap().mean() - mean).abs() <= 1e-12);
        }
        let coarse = CellFunction::new(&s, 0, 1, 1, vec![mean]).unwrap();
        prop_assert!((refine(&coarse, n).unwrap().mean() - mean).abs() <= 1e-12);
        prop_assert!((extend_periodic(&coarse, n).unwrap().mean() - mean).abs() <= 1e-12);
    }

    #[test]
    fn shuffling_is_an_isometry_with_exact_inverse(factors in factor_vecs(), seed in any::<u64>()) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        let n = factors.len();
        let blocks = s.cumulative(n) as usize;
        let w = CellFunction::new(&s, n, 1, 1, random_values(blocks, seed)).unwrap();
        let h = compose_shuffle(&s, n).unwrap();
        let shuffled = to_shuffled(&w, &h).unwrap();
        prop_assert!((shuffled.l2_norm() - w.l2_norm()).abs() <= 1e-12 * (1.0 + w.l2_norm()));
        let back = from_shuffled(&shuffled, &h).unwrap();
        prop_assert_eq!(back.values(), w.values());
    }

    #[test]
    fn coarse_graining_contracts_and_composes(
        factors in factor_vecs(),
        seed in any::<u64>(),
        lo_raw in any::<u64>(),
        mid_raw in any::<u64>(),
    ) {
        let s = PeriodSchedule::new(1.0, &factors).unwrap();
        let n = factors.len();
        let blocks = s.cumulative(n) as usize;
        let w = CellFunction::new(&s, n, 1, 1, random_values(blocks, seed)).unwrap();
        let lo = (lo_raw % (n as u64 + 1)) as usize;
        let mid = lo + (mid_raw % (n as u64 - lo as u64 + 1)) as usize;
        let via_mid = coarse_grain(&coarse_grain(&w, mid).unwrap(), lo).unwrap();
        let direct = coarse_grain(&w, lo).unwrap();
        for (a, b) in via_mid.values().iter().zip(direct.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!(direct.l2_norm() <= w.l2_norm() + 1e-12);
    }

    #[test]
    fn layer_heat_conserves_mass_without_escape(
        m in 1usize..=10,
        seed in any::<u64>(),
        exchange in 0.1f64..3.0,
    ) {
        let params = HeatParams {
            diffusivity: 1.0,
            escape: 0.0,
            exchange,
            delta: 0.25,
        };
        let u0 = LayerState::new(random_values(m, seed)).unwrap();
        let traj = solve_two_scale_system(&params, &u0, 0.8, 3, Method::Exact).unwrap();
        let mf = m as f64;
        for state in traj.states() {
            let mean = state.iter().sum::<f64>() / mf;
            prop_assert!((mean - u0.mean()).abs() <= 1e-12);
        }
    }

    #[test]
    fn pairing_is_linear_in_the_oscillatory_argument(
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw_terms = |count: usize| -> Vec<(f64, SlowPart, Wave, u32)> {
            (0..count)
                .map(|_| {
                    let coeff = rng.gen_range(-2.0..2.0);
                    let slow = if rng.gen::<bool>() { SlowPart::One } else { SlowPart::Coordinate };
                    let wave = if rng.gen::<bool>() { Wave::Sin } else { Wave::Cos };
                    (coeff, slow, wave, rng.gen_range(0u32..4))
                })
                .collect()
        };
        let terms_u = draw_terms(2);
        let terms_v = draw_terms(2);
        let build = |scale: f64, specs: &[(f64, SlowPart, Wave, u32)]| {
            let terms = specs
                .iter()
                .map(|&(c, s, w, k)| Term::new(scale * c, s, w, k))
                .collect();
            OscillatoryFunction::new(2.0, terms).unwrap()
        };
        let u = build(1.0, &terms_u);
        let v = build(1.0, &terms_v);
        let scaled: Vec<Term> = terms_u
            .iter()
            .map(|&(c, s, w, k)| Term::new(alpha * c, s, w, k))
            .chain(terms_v.iter().map(|&(c, s, w, k)| Term::new(beta * c, s, w, k)))
            .collect();
        let combined = OscillatoryFunction::new(2.0, scaled).unwrap();
        let eps = 0.125;
        let npp = 32;
        for psi in &test_basis(2.0) {
            let lhs = pairing_eps(&combined, psi, eps, npp).unwrap();
            let rhs = alpha * pairing_eps(&u, psi, eps, npp).unwrap()
                + beta * pairing_eps(&v, psi, eps, npp).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10, "lhs {} rhs {}", lhs, rhs);
        }
    }
}
