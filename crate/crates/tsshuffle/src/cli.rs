//! Implementation notes: `run` is a pure function from configuration to file
//! contents; the binary owns argument parsing, disk writes, and exit codes. Every
//! experiment uses the exact solver paths and fixed-order summation, so repeated
//! runs are byte-identical by construction rather than by tolerance.

use crate::heatml::{
    cross_validate, energy_balance_check, layer_means, solve_epsilon_1d, solve_two_scale_system,
    HeatError, HeatGeometry, HeatParams, LayerState, Method,
};
use crate::mgrid::{
    format_f64, is_martingale, l2_distance, to_shuffled, CellFunction, MartingaleSequence,
    MgridError,
};
use crate::schedule::{PeriodSchedule, ScheduleError};
use crate::shuffle::{compose_shuffle, layer_reversal, neighbor_maps_finite, ShuffleError};
use crate::twoscale::{
    l2_bound_check, pairing_eps, pairing_limit, sample_limits, test_basis, verify_two_scale,
    OscillatoryFunction, SlowPart, Term, TwoScaleCandidate, TwoScaleError, Wave,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Slack for trend comparisons at rounding scale.
const TREND_SLACK: f64 = 1e-12;

/// Errors surfaced to the process boundary.
#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration (or an input it implies) is invalid.
    #[error("configuration error: {0}")]
    Validation(String),
    /// An experiment ran but missed its numerical tolerance.
    #[error("tolerance failure: {0}")]
    Tolerance(String),
    /// Output deviates from a committed golden table.
    #[error("golden table mismatch: {0}")]
    Golden(String),
    /// Reading or writing a file failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 0 is success, 1 a validation or io error, 2 a numerical
    /// failure (tolerance or golden mismatch).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Tolerance(_) | CliError::Golden(_) => 2,
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ShuffleError> for CliError {
    fn from(e: ShuffleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MgridError> for CliError {
    fn from(e: MgridError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TwoScaleError> for CliError {
    fn from(e: TwoScaleError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<HeatError> for CliError {
    fn from(e: HeatError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// The available experiment drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Permutation tables (one-step, composed, inverse, neighbors) per level.
    ShuffleTable,
    /// ε-sweep of pairing residuals plus the L² lower-bound checks.
    TwoScaleDemo,
    /// Martingale residuals and distances along the tower of shuffled limits.
    MartingaleDemo,
    /// Two-scale system against the coarse-grained shuffled system.
    HeatCrossValidate,
    /// Resolved layered runs against the homogenized prediction.
    HeatEpsilonConverge,
}

/// One in-memory output artifact of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    /// File name the binary writes under the output directory.
    pub name: String,
    /// Full file contents.
    pub contents: String,
}

/// Complete configuration of one experiment run. All fields are echoed in every
/// output header; fields a command does not use keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which experiment to run.
    pub command: Command,
    /// Period schedule driving schedules, shuffles, and block grids.
    pub schedule: PeriodSchedule,
    /// Seed for randomized initial data.
    pub seed: u64,
    /// Physical parameters for the heat experiments.
    pub params: HeatParams,
    /// Coarse level n of two-level comparisons.
    pub coarse_level: usize,
    /// Fine level N of two-level comparisons and tower builds.
    pub fine_level: usize,
    /// Comparison times for the cross-validation.
    pub times: Vec<f64>,
    /// Tolerance of the command's pass/fail verdict.
    pub tol: f64,
    /// Exponents k of the scales ε = 2⁻ᵏ, ascending.
    pub eps_exponents: Vec<u32>,
    /// Quadrature nodes per fast period of the test function.
    pub nodes_per_period: usize,
    /// Fast-variable samples per block when sampling limits.
    pub y_resolution: usize,
    /// Final time of the heat runs.
    pub t_final: f64,
    /// Layer counts N of the resolved convergence sweep.
    pub layer_counts: Vec<usize>,
    /// Grid nodes per layer of the resolved runs.
    pub nodes_per_layer: usize,
}

impl ExperimentConfig {
    /// The default configuration of one command; config files overlay these
    /// field by field.
    pub fn for_command(command: Command) -> Self {
        let mut cfg = Self {
            command,
            schedule: PeriodSchedule::new(1.0, &[2, 3, 2]).expect("default schedule is valid"),
            seed: 0,
            params: HeatParams {
                diffusivity: 1.0,
                escape: 1.0,
                exchange: 1.0,
                delta: 0.25,
            },
            coarse_level: 0,
            fine_level: 0,
            times: Vec::new(),
            tol: 0.0,
            eps_exponents: Vec::new(),
            nodes_per_period: 64,
            y_resolution: 8,
            t_final: 0.5,
            layer_counts: Vec::new(),
            nodes_per_layer: 9,
        };
        match command {
            Command::ShuffleTable => {}
            Command::TwoScaleDemo => {
                cfg.eps_exponents = (4..=12).collect();
                cfg.tol = 1e-2;
            }
            Command::MartingaleDemo => {
                cfg.schedule = PeriodSchedule::dyadic(6);
                cfg.fine_level = 6;
                cfg.tol = 1e-10;
            }
            Command::HeatCrossValidate => {
                cfg.schedule = PeriodSchedule::dyadic(5);
                cfg.coarse_level = 2;
                cfg.fine_level = 5;
                cfg.seed = 42;
                cfg.times = vec![0.1, 1.0, 10.0];
                cfg.tol = 1e-6;
            }
            Command::HeatEpsilonConverge => {
                cfg.layer_counts = vec![8, 16, 32];
                cfg.tol = 1e-6;
            }
        }
        cfg
    }
}

fn config_header(config: &ExperimentConfig) -> Result<String, CliError> {
    let json = serde_json::to_string(config)
        .map_err(|e| CliError::Validation(format!("config serialization: {e}")))?;
    Ok(format!("# config {json}\n"))
}

/// Runs one experiment, returning its output files. Identical configurations
/// produce byte-identical contents.
pub fn run(config: &ExperimentConfig) -> Result<Vec<OutputFile>, CliError> {
    let header = config_header(config)?;
    match config.command {
        Command::ShuffleTable => shuffle_table(config, &header),
        Command::TwoScaleDemo => two_scale_demo(config, &header),
        Command::MartingaleDemo => martingale_demo(config, &header),
        Command::HeatCrossValidate => heat_cross_validate(config, &header),
        Command::HeatEpsilonConverge => heat_epsilon_converge(config, &header),
    }
}

fn shuffle_table(cfg: &ExperimentConfig, header: &str) -> Result<Vec<OutputFile>, CliError> {
    let s = &cfg.schedule;
    let mut out = String::from(header);
    out.push_str("level,block,one_step,shuffled,inverse,up,down\n");
    for level in 1..=s.levels() {
        let outer = s.try_cumulative(level - 1)?;
        let inner = s.factor(level)?;
        let h = compose_shuffle(s, level)?;
        let maps = neighbor_maps_finite(s, level)?;
        for b in 0..h.blocks() {
            let i = b as usize;
            let _ = writeln!(
                out,
                "{level},{b},{},{},{},{},{}",
                layer_reversal(outer, inner, b),
                h.forward()[i],
                h.inverse()[i],
                maps.up[i],
                maps.down[i],
            );
        }
    }
    Ok(vec![OutputFile {
        name: "shuffle_table.csv".into(),
        contents: out,
    }])
}

fn two_scale_demo(cfg: &ExperimentConfig, header: &str) -> Result<Vec<OutputFile>, CliError> {
    let u = OscillatoryFunction::new(
        2.0,
        vec![
            Term::new(1.0, SlowPart::One, Wave::Sin, 2),
            Term::new(1.0, SlowPart::One, Wave::Sin, 1),
        ],
    )?;
    let candidates = vec![
        (
            "p=1",
            TwoScaleCandidate::new(1.0, vec![Term::new(1.0, SlowPart::One, Wave::Sin, 1)])?,
        ),
        (
            "p=2",
            TwoScaleCandidate::new(
                2.0,
                vec![
                    Term::new(1.0, SlowPart::One, Wave::Sin, 2),
                    Term::new(1.0, SlowPart::One, Wave::Sin, 1),
                ],
            )?,
        ),
        ("p=1/2", TwoScaleCandidate::new(0.5, vec![])?),
    ];
    let eps_seq: Vec<f64> = cfg
        .eps_exponents
        .iter()
        .map(|k| 0.5f64.powi(*k as i32))
        .collect();
    let mut rows = String::from(header);
    rows.push_str("candidate,epsilon,test_fn_id,pairing_eps,pairing_limit,residual\n");
    let mut summary = String::from(header);
    summary
        .push_str("candidate,final_residual,residuals_pass,candidate_norm,eps_norm_tail_min,l2_pass\n");
    let mut failures = Vec::new();
    for (label, cand) in &candidates {
        let basis = test_basis(cand.period());
        for (k, &eps) in cfg.eps_exponents.iter().zip(&eps_seq) {
            for (id, psi) in basis.iter().enumerate() {
                let pe = pairing_eps(&u, psi, eps, cfg.nodes_per_period)?;
                let pl = pairing_limit(cand, psi)?;
                let _ = writeln!(
                    rows,
                    "{label},2^-{k},{id},{},{},{}",
                    format_f64(pe),
                    format_f64(pl),
                    format_f64((pe - pl).abs()),
                );
            }
        }
        let verify = verify_two_scale(&u, cand, &basis, &eps_seq, cfg.nodes_per_period, cfg.tol)?;
        let l2 = l2_bound_check(&u, cand, &eps_seq, cfg.nodes_per_period)?;
        let final_residual = *verify.residuals.last().expect("eps list is nonempty");
        let _ = writeln!(
            summary,
            "{label},{},{},{},{},{}",
            format_f64(final_residual),
            verify.pass,
            format_f64(l2.candidate_norm),
            format_f64(l2.tail_min),
            l2.pass,
        );
        if !verify.pass {
            failures.push(format!("candidate {label}: residual sweep failed"));
        }
        if !l2.pass {
            failures.push(format!("candidate {label}: L2 lower bound failed"));
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Tolerance(failures.join("; ")));
    }
    Ok(vec![
        OutputFile {
            name: "two_scale_demo.csv".into(),
            contents: rows,
        },
        OutputFile {
            name: "two_scale_summary.csv".into(),
            contents: summary,
        },
    ])
}

fn martingale_demo(cfg: &ExperimentConfig, header: &str) -> Result<Vec<OutputFile>, CliError> {
    let s = &cfg.schedule;
    let u = OscillatoryFunction::new(
        8.0,
        vec![
            Term::new(1.0, SlowPart::One, Wave::Sin, 8),
            Term::new(1.0, SlowPart::One, Wave::Sin, 4),
            Term::new(1.0, SlowPart::One, Wave::Cos, 2),
            Term::new(0.5, SlowPart::One, Wave::Sin, 1),
        ],
    )?;
    let levels: Vec<usize> = (0..=cfg.fine_level).collect();
    let limits = sample_limits(&u, s, &levels, cfg.y_resolution)?;
    let mut shuffled = Vec::with_capacity(limits.len());
    for (lvl, f) in levels.iter().zip(&limits) {
        let h = compose_shuffle(s, *lvl)?;
        shuffled.push(to_shuffled(f, &h)?);
    }
    let finest = shuffled.last().expect("levels are nonempty").clone();
    let mut distances = Vec::with_capacity(shuffled.len());
    for w in &shuffled {
        distances.push(l2_distance(w, &finest)?);
    }
    let report = is_martingale(&MartingaleSequence::new(shuffled.clone())?, cfg.tol)?;
    // First level whose cell period is an integer multiple of the profile period:
    // from there on the sampled limit carries every mode.
    let resolved_from = levels.iter().position(|&l| {
        let ratio = s.period(l) / u.period();
        ratio >= 1.0 - 1e-9 && (ratio - ratio.round()).abs() < 1e-9
    });
    let mut out = String::from(header);
    out.push_str("level,blocks,residual_next,distance_to_finest\n");
    for (i, &lvl) in levels.iter().enumerate() {
        let residual = report.residuals.get(i).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{lvl},{},{},{}",
            shuffled[i].blocks(),
            format_f64(residual),
            format_f64(distances[i]),
        );
    }
    if !report.pass {
        return Err(CliError::Tolerance(format!(
            "martingale residual {} above {}",
            report.max_residual, cfg.tol
        )));
    }
    for pair in distances.windows(2) {
        if pair[1] > pair[0] + TREND_SLACK {
            return Err(CliError::Tolerance(format!(
                "distance to finest grew: {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(from) = resolved_from {
        for (i, d) in distances.iter().enumerate().skip(from) {
            if *d > 1e-12 {
                return Err(CliError::Tolerance(format!(
                    "level {} resolves every mode but sits {d} from the finest limit",
                    levels[i]
                )));
            }
        }
    }
    Ok(vec![OutputFile {
        name: "martingale_demo.csv".into(),
        contents: out,
    }])
}

fn heat_cross_validate(cfg: &ExperimentConfig, header: &str) -> Result<Vec<OutputFile>, CliError> {
    let s = &cfg.schedule;
    let blocks = s.try_cumulative(cfg.coarse_level)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let values: Vec<f64> = (0..blocks).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w0 = CellFunction::new(s, cfg.coarse_level, 1, 1, values)?;
    let report = cross_validate(
        s,
        cfg.coarse_level,
        cfg.fine_level,
        &cfg.params,
        &w0,
        &cfg.times,
        cfg.tol,
    )?;
    let mut out = String::from(header);
    out.push_str("t,max_deviation,pass\n");
    for (t, dev) in report.times.iter().zip(&report.deviations) {
        let _ = writeln!(out, "{},{},{}", format_f64(*t), format_f64(*dev), *dev <= cfg.tol);
    }
    if !report.pass {
        return Err(CliError::Tolerance(format!(
            "cross-validation deviations {:?} exceed {}",
            report.deviations, cfg.tol
        )));
    }
    Ok(vec![OutputFile {
        name: "heat_cross_validate.csv".into(),
        contents: out,
    }])
}

/// Initial layer profile of the resolved convergence sweep.
fn converge_profile(x: f64) -> f64 {
    (std::f64::consts::TAU * x).sin() + 0.3 * (2.0 * std::f64::consts::TAU * x).cos()
}

fn heat_epsilon_converge(cfg: &ExperimentConfig, header: &str) -> Result<Vec<OutputFile>, CliError> {
    if cfg.layer_counts.is_empty() {
        return Err(CliError::Validation("layer_counts is empty".into()));
    }
    let mut out = String::from(header);
    out.push_str(
        "layers,nodes_per_layer,max_mean_deviation,energy_initial,energy_final,dissipated,balance_residual\n",
    );
    let mut deviations = Vec::with_capacity(cfg.layer_counts.len());
    let mut residuals = Vec::with_capacity(cfg.layer_counts.len());
    for &layers in &cfg.layer_counts {
        let geom = HeatGeometry::new(layers, cfg.nodes_per_layer)?;
        let layer_values: Vec<f64> = (0..layers)
            .map(|j| converge_profile(j as f64 / layers as f64))
            .collect();
        let mut grid = Vec::with_capacity(geom.nodes());
        for v in &layer_values {
            grid.extend(std::iter::repeat(*v).take(cfg.nodes_per_layer));
        }
        let system = solve_two_scale_system(
            &cfg.params,
            &LayerState::new(layer_values)?,
            cfg.t_final,
            2,
            Method::Exact,
        )?;
        let resolved = solve_epsilon_1d(&geom, &cfg.params, &grid, cfg.t_final, None, 2)?;
        let means = layer_means(&geom, resolved.final_state());
        let dev = means
            .iter()
            .zip(system.final_state())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let balance = energy_balance_check(&resolved, &geom, &cfg.params, cfg.tol)?;
        residuals.push(balance.residual);
        let _ = writeln!(
            out,
            "{layers},{},{},{},{},{},{}",
            cfg.nodes_per_layer,
            format_f64(dev),
            format_f64(balance.initial),
            format_f64(balance.final_energy),
            format_f64(balance.dissipated),
            format_f64(balance.residual),
        );
        deviations.push(dev);
    }
    // The time-integration error of the dissipation integral shrinks with the step,
    // so the tolerance binds at the finest grid; coarser residuals are reported.
    let finest_residual = *residuals.last().expect("layer_counts is nonempty");
    if finest_residual > cfg.tol {
        return Err(CliError::Tolerance(format!(
            "energy balance residual {finest_residual} above {} at the finest grid",
            cfg.tol
        )));
    }
    for pair in deviations.windows(2) {
        if pair[1] >= pair[0] {
            return Err(CliError::Tolerance(format!(
                "layer-mean deviation did not decrease: {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(vec![OutputFile {
        name: "heat_epsilon_converge.csv".into(),
        contents: out,
    }])
}
