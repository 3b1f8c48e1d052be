//! Agreement checks between code paths that must describe the same object:
//! limit profiles aggregated from different finest levels, quadratures at
//! different resolutions, and the shuffled tower built from sampled limits.

use tsshuffle::mgrid::{is_martingale, to_shuffled, MartingaleSequence};
use tsshuffle::schedule::PeriodSchedule;
use tsshuffle::shuffle::compose_shuffle;
use tsshuffle::twoscale::{
    pairing_eps, sample_limits, test_basis, OscillatoryFunction, SlowPart, Term, Wave,
};

/// Fast profile with one component per divisor class of the level periods:
/// cycles 1 and 2 only resolve once the cell period reaches the full fast
/// period, cycle 3 resolves one level earlier, cycle 6 immediately.
fn staircase_family() -> OscillatoryFunction {
    OscillatoryFunction::new(
        6.0,
        vec![
            Term::new(1.0, SlowPart::One, Wave::Sin, 1),
            Term::new(0.7, SlowPart::One, Wave::Cos, 2),
            Term::new(-0.4, SlowPart::One, Wave::Sin, 3),
            Term::new(0.25, SlowPart::One, Wave::Cos, 6),
        ],
    )
    .unwrap()
}

#[test]
fn limits_agree_across_finest_sampling_levels() {
    let s = PeriodSchedule::new(1.0, &[2, 3, 2]).unwrap();
    let u = staircase_family();
    let y_res = 8;
    let short = sample_limits(&u, &s, &[0, 1, 2], y_res).unwrap();
    let long = sample_limits(&u, &s, &[0, 1, 2, 3], y_res).unwrap();
    for (n, (a, b)) in short.iter().zip(&long).enumerate() {
        assert_eq!(a.level(), b.level());
        let max_diff = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_diff <= 1e-12,
            "level {n}: profiles from finest 2 and finest 3 differ by {max_diff}"
        );
    }
}

#[test]
fn sampled_limits_shuffle_into_a_martingale_tower() {
    let s = PeriodSchedule::new(1.0, &[2, 3, 2]).unwrap();
    let u = staircase_family();
    let levels = [0usize, 1, 2, 3];
    let limits = sample_limits(&u, &s, &levels, 6).unwrap();
    let shuffled: Vec<_> = levels
        .iter()
        .zip(&limits)
        .map(|(&n, w)| {
            let h = compose_shuffle(&s, n).unwrap();
            to_shuffled(w, &h).unwrap()
        })
        .collect();
    let seq = MartingaleSequence::new(shuffled).unwrap();
    let report = is_martingale(&seq, 1e-12).unwrap();
    assert!(
        report.pass,
        "max residual {} exceeds 1e-12",
        report.max_residual
    );
}

/// With only trigonometric factors on an aligned grid the midpoint rule is
/// exact, so doubling the node count can only move the result at rounding
/// level.
#[test]
fn aligned_trigonometric_pairings_are_quadrature_exact() {
    let u = OscillatoryFunction::new(
        2.0,
        vec![
            Term::new(1.0, SlowPart::One, Wave::Sin, 2),
            Term::new(-0.3, SlowPart::One, Wave::Cos, 3),
        ],
    )
    .unwrap();
    let eps = 0.125;
    for psi in test_basis(2.0).iter().filter(|p| p.slow == SlowPart::One) {
        let base = pairing_eps(&u, psi, eps, 32).unwrap();
        let doubled = pairing_eps(&u, psi, eps, 64).unwrap();
        assert!(
            (base - doubled).abs() <= 1e-12,
            "32 vs 64 nodes: {base} vs {doubled}"
        );
    }
}

/// A coordinate slow factor makes the integrand polynomial-times-wave, where
/// the midpoint rule converges at second order: each node doubling must cut
/// the change by at least half.
#[test]
fn coordinate_pairings_converge_under_quadrature_doubling() {
    let u = OscillatoryFunction::new(
        2.0,
        vec![
            Term::new(1.0, SlowPart::One, Wave::Sin, 2),
            Term::new(0.5, SlowPart::Coordinate, Wave::Cos, 1),
            Term::new(-0.3, SlowPart::One, Wave::Cos, 3),
        ],
    )
    .unwrap();
    let eps = 0.125;
    for psi in &test_basis(2.0) {
        let base = pairing_eps(&u, psi, eps, 32).unwrap();
        let doubled = pairing_eps(&u, psi, eps, 64).unwrap();
        let quadrupled = pairing_eps(&u, psi, eps, 128).unwrap();
        let d1 = (base - doubled).abs();
        let d2 = (doubled - quadrupled).abs();
        assert!(
            d2 <= 0.5 * d1 + 1e-12,
            "changes {d1} then {d2} do not shrink"
        );
    }
}
