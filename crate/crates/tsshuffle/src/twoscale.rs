//! Implementation notes: all functions here are finite trigonometric sums, so the
//! limit-side pairings and norms have closed forms by orthogonality; only the
//! ε-level integrals need quadrature. The midpoint rule keeps its nodes aligned to
//! the fast period, which makes full-period trigonometric sums exact up to
//! rounding and leaves the slow modulation as the only real discretization error.

use crate::mgrid::{aggregate_two_scale, CellFunction, MgridError};
use crate::schedule::{PeriodSchedule, ScheduleError};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Cap on midpoint nodes per integral; reached only for ε far below anything the
/// shipped experiments use.
pub const MAX_QUAD_NODES: u64 = 1 << 27;

/// Required midpoint nodes per shortest fast wavelength.
pub const MIN_NODES_PER_WAVELENGTH: f64 = 8.0;

/// Absolute slack applied when checking that residual sequences do not increase;
/// covers sequences sitting at the rounding floor.
pub(crate) const NONINCREASING_SLACK: f64 = 1e-12;

/// Errors from pairing evaluation and limit sampling.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwoScaleError {
    /// Underlying schedule query failed.
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    /// Underlying cell-function operation failed.
    #[error(transparent)]
    Mgrid(#[from] MgridError),
    /// Period must be finite and positive.
    #[error("period {period} must be finite and positive")]
    BadPeriod {
        /// Offending period.
        period: f64,
    },
    /// A term coefficient was NaN or infinite.
    #[error("coefficient of term {index} is not finite")]
    BadCoefficient {
        /// Term index.
        index: usize,
    },
    /// ε must be finite and positive.
    #[error("epsilon {eps} must be finite and positive")]
    BadEps {
        /// Offending value.
        eps: f64,
    },
    /// Quadrature resolution cannot resolve the fast oscillation.
    #[error(
        "quadrature under-resolved: {nodes} nodes over [0,1) give {per_wavelength:.2} nodes per \
         shortest fast wavelength {wavelength:.3e}, need at least {required}"
    )]
    UnderResolved {
        /// Nodes the grid would use.
        nodes: u64,
        /// Nodes falling inside one shortest wavelength.
        per_wavelength: f64,
        /// The shortest fast wavelength present.
        wavelength: f64,
        /// Minimum acceptable nodes per wavelength.
        required: u64,
    },
    /// The aligned grid would exceed [`MAX_QUAD_NODES`].
    #[error("quadrature grid of {needed} nodes exceeds the {cap} cap")]
    TooManyNodes {
        /// Nodes the grid would need.
        needed: u64,
        /// The cap.
        cap: u64,
    },
    /// Candidate and test function live on different fast periods.
    #[error("candidate period {candidate} does not match test-function period {test}")]
    PeriodMismatch {
        /// Candidate period.
        candidate: f64,
        /// Test-function period.
        test: f64,
    },
    /// ε sequences must be nonempty.
    #[error("epsilon sequence is empty")]
    EmptyEps,
    /// ε sequences must strictly decrease.
    #[error("epsilon sequence must strictly decrease at index {index}")]
    EpsNotDecreasing {
        /// First offending position.
        index: usize,
    },
    /// Test basis must be nonempty.
    #[error("test basis is empty")]
    EmptyBasis,
    /// Level lists must be nonempty.
    #[error("level list is empty")]
    NoLevels,
    /// Level lists must strictly increase.
    #[error("levels must strictly increase, got {prev} then {next}")]
    LevelsNotIncreasing {
        /// Earlier entry.
        prev: usize,
        /// Later entry.
        next: usize,
    },
    /// Payload resolution must be at least 1.
    #[error("y-resolution must be at least 1")]
    BadResolution,
    /// Block sampling needs x-independent profiles.
    #[error("x-dependent slow part not supported by block sampling; evaluate pairings instead")]
    XDependent,
    /// The fast period carries information outside the schedule.
    #[error("fast period {period} does not divide the level cell period {cell_period}")]
    FastPeriodIncompatible {
        /// Fast period of the function.
        period: f64,
        /// Period of the finest requested level.
        cell_period: f64,
    },
}

/// Slow (macroscopic) factor of a term: 1 or the coordinate x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowPart {
    /// Constant 1.
    One,
    /// The coordinate x itself.
    Coordinate,
}

impl SlowPart {
    fn eval(self, x: f64) -> f64 {
        match self {
            SlowPart::One => 1.0,
            SlowPart::Coordinate => x,
        }
    }

    /// ∫₀¹ s(x) s'(x) dx.
    fn inner(self, other: SlowPart) -> f64 {
        match (self, other) {
            (SlowPart::One, SlowPart::One) => 1.0,
            (SlowPart::Coordinate, SlowPart::Coordinate) => 1.0 / 3.0,
            _ => 0.5,
        }
    }
}

/// Waveform of the fast factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    /// sin(2π k y / p).
    Sin,
    /// cos(2π k y / p); k = 0 gives the constant 1.
    Cos,
}

impl Wave {
    fn eval(self, theta: f64) -> f64 {
        match self {
            Wave::Sin => theta.sin(),
            Wave::Cos => theta.cos(),
        }
    }
}

/// Mean of w(2πk y/p) w'(2πk' y/p) over one period.
fn wave_inner(w1: Wave, k1: u32, w2: Wave, k2: u32) -> f64 {
    match (w1, w2) {
        (Wave::Sin, Wave::Sin) if k1 == k2 && k1 > 0 => 0.5,
        (Wave::Cos, Wave::Cos) if k1 == k2 => {
            if k1 == 0 {
                1.0
            } else {
                0.5
            }
        }
        _ => 0.0,
    }
}

/// One additive term c · s(x) · w(2π k y / p) of an oscillatory sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    /// Scalar coefficient c.
    pub coeff: f64,
    /// Slow factor s.
    pub slow: SlowPart,
    /// Waveform w.
    pub wave: Wave,
    /// Cycles k completed per fast period p.
    pub cycles: u32,
}

impl Term {
    /// Convenience constructor.
    pub fn new(coeff: f64, slow: SlowPart, wave: Wave, cycles: u32) -> Self {
        Self {
            coeff,
            slow,
            wave,
            cycles,
        }
    }
}

fn check_terms(period: f64, terms: &[Term]) -> Result<(), TwoScaleError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(TwoScaleError::BadPeriod { period });
    }
    if let Some(index) = terms.iter().position(|t| !t.coeff.is_finite()) {
        return Err(TwoScaleError::BadCoefficient { index });
    }
    Ok(())
}

/// Shortest wavelength (in x, at scale ε) among oscillatory terms, or None if the
/// sum has no genuinely fast content.
fn shortest_wavelength(period: f64, cycles: impl Iterator<Item = u32>, eps: f64) -> Option<f64> {
    cycles
        .filter(|&k| k > 0)
        .map(|k| eps * period / k as f64)
        .min_by(|a, b| a.partial_cmp(b).expect("wavelengths are finite"))
}

/// An ε-indexed oscillatory family u_ε(x) = Σ c · s(x) · w(2π k (x/ε) / p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryFunction {
    period: f64,
    terms: Vec<Term>,
}

impl OscillatoryFunction {
    /// Builds the family from its fast period and term list.
    pub fn new(period: f64, terms: Vec<Term>) -> Result<Self, TwoScaleError> {
        check_terms(period, &terms)?;
        Ok(Self { period, terms })
    }

    /// Fast period p.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// The term list.
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Evaluates u_ε(x).
    pub fn eval_eps(&self, x: f64, eps: f64) -> f64 {
        let y = x / eps;
        self.terms
            .iter()
            .map(|t| t.coeff * t.slow.eval(x) * t.wave.eval(TAU * t.cycles as f64 * y / self.period))
            .sum()
    }

    /// Fast profile U(y); callers must have checked the sum is x-independent.
    fn fast_value(&self, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.wave.eval(TAU * t.cycles as f64 * y / self.period))
            .sum()
    }

    /// The family's own limit at its own period: the profile read as U(x, y) with
    /// the slow factor intact. Limits at other periods are averages of this one.
    pub fn exact_limit(&self) -> TwoScaleCandidate {
        TwoScaleCandidate {
            period: self.period,
            terms: self.terms.clone(),
        }
    }
}

/// u_ε(x) = sin(2π·cycles·(x/ε)/period), the basic oscillation family.
pub fn sine_family(period: f64, cycles: u32) -> OscillatoryFunction {
    OscillatoryFunction::new(period, vec![Term::new(1.0, SlowPart::One, Wave::Sin, cycles)])
        .expect("sine family parameters are valid")
}

/// A proposed two-scale limit profile u₀(x, y), p-periodic in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleCandidate {
    period: f64,
    terms: Vec<Term>,
}

impl TwoScaleCandidate {
    /// Builds a candidate from its period and term list; an empty list is the zero
    /// candidate.
    pub fn new(period: f64, terms: Vec<Term>) -> Result<Self, TwoScaleError> {
        check_terms(period, &terms)?;
        Ok(Self { period, terms })
    }

    /// Fast period p.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// The term list.
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Evaluates u₀(x, y).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.slow.eval(x) * t.wave.eval(TAU * t.cycles as f64 * y / self.period))
            .sum()
    }

    /// The candidate with every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coeff: t.coeff * factor, ..*t })
            .collect();
        Self {
            period: self.period,
            terms,
        }
    }

    /// ‖u₀‖ over Ω × [0,p) with the 1/p^{d/2} normalization, by orthogonality.
    pub fn normalized_l2(&self) -> f64 {
        let mut sum = 0.0;
        for a in &self.terms {
            for b in &self.terms {
                sum += a.coeff
                    * b.coeff
                    * a.slow.inner(b.slow)
                    * wave_inner(a.wave, a.cycles, b.wave, b.cycles);
            }
        }
        sum.max(0.0).sqrt()
    }
}

/// One pairing partner ψ(x, y) = s(x) · w(2π k y / p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    period: f64,
    /// Slow factor s.
    pub slow: SlowPart,
    /// Waveform w.
    pub wave: Wave,
    /// Cycles k per period.
    pub cycles: u32,
}

impl TestFunction {
    /// Builds a test function; `cycles` = 0 with [`Wave::Cos`] gives ψ = s(x).
    pub fn new(period: f64, slow: SlowPart, wave: Wave, cycles: u32) -> Result<Self, TwoScaleError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(TwoScaleError::BadPeriod { period });
        }
        Ok(Self {
            period,
            slow,
            wave,
            cycles,
        })
    }

    /// Fast period p.
    pub fn period(&self) -> f64 {
        self.period
    }

    /// Evaluates ψ(x, y).
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.slow.eval(x) * self.wave.eval(TAU * self.cycles as f64 * y / self.period)
    }
}

/// The standard six-element basis {1, x} × {sin(2πy/p), cos(2πy/p), sin(4πy/p)}.
/// Indices into the returned list are the `test_fn_id` used in experiment CSVs.
pub fn test_basis(period: f64) -> Vec<TestFunction> {
    assert!(
        period.is_finite() && period > 0.0,
        "test basis period must be finite and positive, got {period}"
    );
    let mut basis = Vec::with_capacity(6);
    for slow in [SlowPart::One, SlowPart::Coordinate] {
        for (wave, cycles) in [(Wave::Sin, 1), (Wave::Cos, 1), (Wave::Sin, 2)] {
            basis.push(TestFunction {
                period,
                slow,
                wave,
                cycles,
            });
        }
    }
    basis
}

/// Midpoint grid on [0,1) whose spacing subdivides the fast period ε·p of ψ, with
/// the fast-wavelength resolution check.
fn quad_grid(
    u: &OscillatoryFunction,
    psi_period: f64,
    psi_cycles: u32,
    eps: f64,
    nodes_per_period: usize,
) -> Result<u64, TwoScaleError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(TwoScaleError::BadEps { eps });
    }
    let npp = nodes_per_period.max(1) as f64;
    let raw = (npp / (eps * psi_period)).ceil();
    if !(raw.is_finite() && raw <= MAX_QUAD_NODES as f64) {
        return Err(TwoScaleError::TooManyNodes {
            needed: if raw.is_finite() { raw as u64 } else { u64::MAX },
            cap: MAX_QUAD_NODES,
        });
    }
    let nodes = (raw as u64).max(nodes_per_period.max(1) as u64);
    let u_shortest = shortest_wavelength(u.period, u.terms.iter().map(|t| t.cycles), eps);
    let psi_shortest = shortest_wavelength(psi_period, std::iter::once(psi_cycles), eps);
    let shortest = match (u_shortest, psi_shortest) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if let Some(wavelength) = shortest {
        let per_wavelength = nodes as f64 * wavelength;
        if per_wavelength < MIN_NODES_PER_WAVELENGTH {
            return Err(TwoScaleError::UnderResolved {
                nodes,
                per_wavelength,
                wavelength,
                required: MIN_NODES_PER_WAVELENGTH as u64,
            });
        }
    }
    Ok(nodes)
}

/// The ε-level pairing ∫₀¹ u_ε(x) ψ(x, x/ε) dx by the aligned composite midpoint
/// rule with `nodes_per_period` nodes per fast period of ψ.
pub fn pairing_eps(
    u: &OscillatoryFunction,
    psi: &TestFunction,
    eps: f64,
    nodes_per_period: usize,
) -> Result<f64, TwoScaleError> {
    let nodes = quad_grid(u, psi.period, psi.cycles, eps, nodes_per_period)?;
    let h = 1.0 / nodes as f64;
    let mut products = Vec::with_capacity(nodes as usize);
    for i in 0..nodes {
        let x = (i as f64 + 0.5) * h;
        products.push(u.eval_eps(x, eps) * psi.eval(x, x / eps));
    }
    Ok(crate::mgrid::pairwise_sum(&products) * h)
}

/// The limit pairing (1/p) ∫₀¹ ∫₀ᵖ u₀(x, y) ψ(x, y) dy dx, evaluated exactly by
/// trigonometric orthogonality.
pub fn pairing_limit(cand: &TwoScaleCandidate, psi: &TestFunction) -> Result<f64, TwoScaleError> {
    if cand.period != psi.period {
        return Err(TwoScaleError::PeriodMismatch {
            candidate: cand.period,
            test: psi.period,
        });
    }
    Ok(cand
        .terms
        .iter()
        .map(|t| {
            t.coeff
                * t.slow.inner(psi.slow)
                * wave_inner(t.wave, t.cycles, psi.wave, psi.cycles)
        })
        .sum())
}

fn check_eps_seq(eps_seq: &[f64]) -> Result<(), TwoScaleError> {
    if eps_seq.is_empty() {
        return Err(TwoScaleError::EmptyEps);
    }
    for (i, e) in eps_seq.iter().enumerate() {
        if !(e.is_finite() && *e > 0.0) {
            return Err(TwoScaleError::BadEps { eps: *e });
        }
        if i > 0 && *e >= eps_seq[i - 1] {
            return Err(TwoScaleError::EpsNotDecreasing { index: i });
        }
    }
    Ok(())
}

/// Whether the last three entries are non-increasing, with a small absolute slack
/// for sequences at the rounding floor. Shorter sequences pass vacuously.
pub(crate) fn tail_nonincreasing(xs: &[f64]) -> bool {
    let tail = &xs[xs.len().saturating_sub(3)..];
    tail.windows(2).all(|w| w[1] <= w[0] + NONINCREASING_SLACK)
}

/// Result of a convergence sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// The ε values swept, strictly decreasing.
    pub eps: Vec<f64>,
    /// Worst residual over the basis at each ε.
    pub residuals: Vec<f64>,
    /// Tolerance the final residual was held to.
    pub tol: f64,
    /// Final residual ≤ tol and residuals non-increasing over the last three ε.
    pub pass: bool,
}

/// Sweeps ε over `eps_seq`, comparing ε-level pairings against the candidate's
/// limit pairings over the whole basis.
pub fn verify_two_scale(
    u: &OscillatoryFunction,
    cand: &TwoScaleCandidate,
    basis: &[TestFunction],
    eps_seq: &[f64],
    nodes_per_period: usize,
    tol: f64,
) -> Result<VerifyReport, TwoScaleError> {
    if basis.is_empty() {
        return Err(TwoScaleError::EmptyBasis);
    }
    check_eps_seq(eps_seq)?;
    let mut residuals = Vec::with_capacity(eps_seq.len());
    for &eps in eps_seq {
        let mut worst = 0.0f64;
        for psi in basis {
            let approx = pairing_eps(u, psi, eps, nodes_per_period)?;
            let exact = pairing_limit(cand, psi)?;
            worst = worst.max((approx - exact).abs());
        }
        residuals.push(worst);
    }
    let pass = *residuals.last().expect("eps_seq is nonempty") <= tol
        && tail_nonincreasing(&residuals);
    Ok(VerifyReport {
        eps: eps_seq.to_vec(),
        residuals,
        tol,
        pass,
    })
}

/// Result of the L² lower-bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct L2BoundReport {
    /// (1/p^{1/2})·‖u₀‖ over Ω × [0,p), exact by orthogonality.
    pub candidate_norm: f64,
    /// Quadrature values of ‖u_ε‖ over Ω, one per ε.
    pub eps_norms: Vec<f64>,
    /// Minimum of `eps_norms` over the last three ε, the liminf proxy.
    pub tail_min: f64,
    /// candidate_norm ≤ tail_min within quadrature tolerance.
    pub pass: bool,
}

/// Checks the two-scale energy lower bound: the normalized candidate norm can
/// never exceed the liminf of the ε-level norms.
pub fn l2_bound_check(
    u: &OscillatoryFunction,
    cand: &TwoScaleCandidate,
    eps_seq: &[f64],
    nodes_per_period: usize,
) -> Result<L2BoundReport, TwoScaleError> {
    check_eps_seq(eps_seq)?;
    let candidate_norm = cand.normalized_l2();
    let mut eps_norms = Vec::with_capacity(eps_seq.len());
    for &eps in eps_seq {
        let nodes = quad_grid(u, u.period, 0, eps, nodes_per_period)?;
        let h = 1.0 / nodes as f64;
        let mut squares = Vec::with_capacity(nodes as usize);
        for i in 0..nodes {
            let x = (i as f64 + 0.5) * h;
            let v = u.eval_eps(x, eps);
            squares.push(v * v);
        }
        eps_norms.push((crate::mgrid::pairwise_sum(&squares) * h).sqrt());
    }
    let tail_min = eps_norms[eps_norms.len().saturating_sub(3)..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let pass = candidate_norm <= tail_min + 1e-9;
    Ok(L2BoundReport {
        candidate_norm,
        eps_norms,
        tail_min,
        pass,
    })
}

/// Samples the limit profiles of an x-independent oscillatory family on every
/// requested level of a schedule: the finest level is sampled directly at
/// `y_res` midpoints per block, lower levels are its stride averages.
pub fn sample_limits(
    u: &OscillatoryFunction,
    s: &PeriodSchedule,
    levels: &[usize],
    y_res: usize,
) -> Result<Vec<CellFunction>, TwoScaleError> {
    if levels.is_empty() {
        return Err(TwoScaleError::NoLevels);
    }
    for pair in levels.windows(2) {
        if pair[1] <= pair[0] {
            return Err(TwoScaleError::LevelsNotIncreasing {
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    if y_res == 0 {
        return Err(TwoScaleError::BadResolution);
    }
    if u.terms.iter().any(|t| t.slow != SlowPart::One) {
        return Err(TwoScaleError::XDependent);
    }
    let finest = *levels.last().expect("levels is nonempty");
    s.try_cumulative(finest)?;
    let cell_period = s.period(finest);
    let ratio = cell_period / u.period;
    if !(ratio >= 0.5 && (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0)) {
        return Err(TwoScaleError::FastPeriodIncompatible {
            period: u.period,
            cell_period,
        });
    }
    let p0 = s.p0();
    let fine = CellFunction::from_fn(s, finest, 1, y_res, |block, q| {
        let y = (block[0] as f64 + (q as f64 + 0.5) / y_res as f64) * p0;
        u.fast_value(y)
    })?;
    levels
        .iter()
        .map(|&n| aggregate_two_scale(&fine, n).map_err(TwoScaleError::from))
        .collect()
}
