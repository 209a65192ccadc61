//! Self-normalized statistic, subsampling calibration and the resulting
//! confidence region.
//!
//! The statistic `T = √n · φ(θ̄_n − θ) / √tr(Σ_n)` has a limit law free of
//! the tail index and slowly varying scalings. Its quantile is estimated from
//! `B_n = ⌊n / t_n⌋` independent short SGD runs of length `t_n = ⌊n^r⌋`,
//! each restarted at `θ_0` and centered at the full-run average.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::models::GradientOracle;
use crate::rng::RngStream;
use crate::sgd::{run_trajectory_observed, RunningStats, StepSchedule, TrajectoryConfig, TrajectoryObserver};

/// Degree-1 positively homogeneous test function `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    Coordinate { index: usize },
    Linear { direction: Vec<f64> },
    LinfNorm,
    LpNorm { p: f64 },
}

impl Functional {
    pub fn coordinate(index: usize) -> Self {
        Functional::Coordinate { index }
    }

    /// Projection on `u / ‖u‖`.
    pub fn linear(u: &[f64]) -> Result<Self> {
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid(
                "direction",
                "projection direction must be a nonzero finite vector",
            ));
        }
        Ok(Functional::Linear {
            direction: u.iter().map(|x| x / norm).collect(),
        })
    }

    pub fn lp(p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(Error::invalid("p", format!("Lp norm needs p >= 1, got {p}")));
        }
        Ok(Functional::LpNorm { p })
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Functional::Coordinate { index } if *index >= dim => Err(Error::DimensionMismatch {
                expected: dim,
                got: index + 1,
            }),
            Functional::Linear { direction } => check_dim(dim, direction.len()),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        match self {
            Functional::Coordinate { index } => x[*index],
            Functional::Linear { direction } => direction.iter().zip(x).map(|(u, v)| u * v).sum(),
            Functional::LinfNorm => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            Functional::LpNorm { p } => x.iter().map(|v| v.abs().powf(*p)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// `φ(a − b)`.
    pub fn apply_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.apply(&diff)
    }
}

/// Signed statistic `√n · φ(θ̄ − θ) / √tr(Σ)`.
pub fn self_norm_stat(theta_bar: &[f64], theta: &[f64], trace_sigma: f64, n: u64, phi: &Functional) -> Result<f64> {
    check_dim(theta_bar.len(), theta.len())?;
    phi.check_dim(theta.len())?;
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be at least 1"));
    }
    if !(trace_sigma > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok((n as f64).sqrt() * phi.apply_diff(theta_bar, theta) / trace_sigma.sqrt())
}

/// Smallest `x` with empirical CDF at least `1 − δ`: the `⌈(1−δ)B⌉`-th order
/// statistic.
pub fn quantile(values: &[f64], delta: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(
            "delta",
            format!("miscoverage must lie in (0, 1), got {delta}"),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(sorted.len(), delta)])
}

/// Zero-based index of the `⌈(1−δ)B⌉`-th order statistic.
pub(crate) fn order_index(b: usize, delta: f64) -> usize {
    let rank = ((1.0 - delta) * b as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, b) - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    /// Block length exponent, `t_n = ⌊n^r⌋`.
    pub r: f64,
    /// Evaluate block gradients on the main trajectory's data draws
    /// instead of fresh independent draws.
    pub shared_randomness: bool,
}

impl SubsampleConfig {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(
                "r",
                format!("subsample exponent must lie in (0, 1), got {r}"),
            ));
        }
        Ok(Self {
            r,
            shared_randomness: false,
        })
    }

    pub fn with_shared_randomness(mut self, shared: bool) -> Self {
        self.shared_randomness = shared;
        self
    }

    /// `t_n = ⌊n^r⌋`, at least 1.
    pub fn block_len(&self, n: u64) -> u64 {
        let t = ((n as f64).powf(self.r) + 1e-9).floor() as u64;
        t.clamp(1, n.max(1))
    }

    /// `B_n = ⌊n / t_n⌋`.
    pub fn num_blocks(&self, n: u64) -> u64 {
        n / self.block_len(n)
    }
}

/// What a finished block contributes to calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub theta_bar: Vec<f64>,
    pub trace_sigma: f64,
}

impl From<&RunningStats> for BlockSummary {
    fn from(s: &RunningStats) -> Self {
        Self {
            theta_bar: s.theta_bar.clone(),
            trace_sigma: s.trace_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// `|T^(b)|` for every retained block.
    pub block_stats: Vec<f64>,
    pub q_hat: f64,
    pub delta: f64,
    /// Blocks discarded for a zero normalizer.
    pub dropped: usize,
}

/// The main trajectory plus the block summaries of one subsampling run.
/// Calibrations for any number of functionals can be assembled from it.
#[derive(Debug, Clone)]
pub struct SubsampleRun {
    pub main: RunningStats,
    pub n: u64,
    pub block_len: u64,
    pub blocks: Vec<BlockSummary>,
}

impl SubsampleRun {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `T^(b) = √t_n |φ(θ̄^(b) − θ̄_n)| / √tr(Σ^(b))` for each block, then the
    /// `(1−δ)` empirical quantile.
    pub fn calibrate(&self, phi: &Functional, delta: f64) -> Result<Calibration> {
        phi.check_dim(self.main.dim())?;
        let scale = (self.block_len as f64).sqrt();
        let mut dropped = 0;
        let mut stats = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            if !(b.trace_sigma > 0.0) {
                dropped += 1;
                continue;
            }
            let t = scale * phi.apply_diff(&b.theta_bar, &self.main.theta_bar).abs() / b.trace_sigma.sqrt();
            stats.push(t);
        }
        if dropped > 0 {
            log::warn!(
                "{dropped} of {} subsampling blocks had a zero normalizer",
                self.blocks.len()
            );
        }
        if stats.is_empty() {
            return Err(Error::CalibrationFailed { dropped });
        }
        let q_hat = quantile(&stats, delta)?;
        Ok(Calibration {
            block_stats: stats,
            q_hat,
            delta,
            dropped,
        })
    }

    /// `{θ : |φ(θ̄_n − θ)| ≤ q̂ √(tr Σ_n / n)}`.
    pub fn region(&self, phi: &Functional, calibration: &Calibration) -> ConfidenceRegion {
        let half_width = calibration.q_hat * (self.main.trace_sigma / self.n as f64).sqrt();
        ConfidenceRegion {
            center: self.main.theta_bar.clone(),
            half_width,
            functional: phi.clone(),
            delta: calibration.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRegion {
    pub center: Vec<f64>,
    /// Radius on the `φ` scale.
    pub half_width: f64,
    pub functional: Functional,
    pub delta: f64,
}

impl ConfidenceRegion {
    /// Closed region: `|φ(center − θ)| ≤ half_width`.
    pub fn contains(&self, theta: &[f64]) -> bool {
        self.functional.apply_diff(&self.center, theta).abs() <= self.half_width
    }
}

pub fn region_contains(region: &ConfidenceRegion, theta: &[f64]) -> bool {
    region.contains(theta)
}

/// Main trajectory of length `n` plus `B_n` block trajectories of length
/// `t_n`. The main trajectory draws from `stream.substream(0)`; with
/// independent randomness block `b` draws from `stream.substream(1 + b)`.
pub fn run_subsampling<O: GradientOracle>(
    oracle: &O,
    n: u64,
    cfg: &SubsampleConfig,
    schedule: &StepSchedule,
    theta0: &[f64],
    stream: RngStream,
    exec: Execution,
) -> Result<SubsampleRun> {
    run_subsampling_observed(oracle, n, cfg, schedule, theta0, stream, exec, &mut ())
}

/// As [`run_subsampling`], with an observer on the main trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_subsampling_observed<O, Obs>(
    oracle: &O,
    n: u64,
    cfg: &SubsampleConfig,
    schedule: &StepSchedule,
    theta0: &[f64],
    stream: RngStream,
    exec: Execution,
    observer: &mut Obs,
) -> Result<SubsampleRun>
where
    O: GradientOracle,
    Obs: TrajectoryObserver<O::Draw>,
{
    check_dim(oracle.dim(), theta0.len())?;
    let main_cfg = TrajectoryConfig::new(n, theta0.to_vec(), *schedule)?;
    let t = cfg.block_len(n);
    let b = cfg.num_blocks(n);
    if cfg.shared_randomness {
        return run_shared(oracle, &main_cfg, t, b, stream, observer);
    }
    let main = run_trajectory_observed(oracle, &main_cfg, &mut stream.substream(0).rng(), observer)?;
    let blocks = run_blocks(oracle, n, cfg, schedule, theta0, stream, exec)?;
    Ok(SubsampleRun {
        main,
        n,
        block_len: t,
        blocks,
    })
}

/// The `B_n` independent block trajectories alone; block `b` draws from
/// `stream.substream(1 + b)`. Lets several exponents share one main run.
pub fn run_blocks<O: GradientOracle>(
    oracle: &O,
    n: u64,
    cfg: &SubsampleConfig,
    schedule: &StepSchedule,
    theta0: &[f64],
    stream: RngStream,
    exec: Execution,
) -> Result<Vec<BlockSummary>> {
    check_dim(oracle.dim(), theta0.len())?;
    let block_cfg = TrajectoryConfig::new(cfg.block_len(n), theta0.to_vec(), *schedule)?;
    exec.map(cfg.num_blocks(n) as usize, |i| {
        let mut rng = stream.substream(1 + i as u64).rng();
        run_trajectory_observed(oracle, &block_cfg, &mut rng, &mut ()).map(|s| BlockSummary::from(&s))
    })
    .into_iter()
    .collect()
}

fn run_shared<O, Obs>(
    oracle: &O,
    main_cfg: &TrajectoryConfig,
    t: u64,
    b: u64,
    stream: RngStream,
    observer: &mut Obs,
) -> Result<SubsampleRun>
where
    O: GradientOracle,
    Obs: TrajectoryObserver<O::Draw>,
{
    let mut rng = stream.substream(0).rng();
    let d = oracle.dim();
    let mut main = RunningStats::new(&main_cfg.theta0, main_cfg.keep_full_sigma);
    let mut block = RunningStats::new(&main_cfg.theta0, false);
    let mut blocks = Vec::with_capacity(b as usize);
    let mut draw = oracle.new_draw();
    let (mut g_main, mut g_block) = (vec![0.0; d], vec![0.0; d]);
    let mut prev = main_cfg.theta0.clone();
    for _ in 0..main_cfg.n {
        oracle.draw_into(&mut rng, &mut draw);
        oracle.gradient_at(&main.theta, &draw, &mut g_main);
        prev.copy_from_slice(&main.theta);
        main.step(&g_main, &main_cfg.schedule)?;
        observer.observe(&prev, &draw, &main)?;
        if (blocks.len() as u64) < b {
            oracle.gradient_at(&block.theta, &draw, &mut g_block);
            block.step(&g_block, &main_cfg.schedule)?;
            if block.k == t {
                blocks.push(BlockSummary::from(&block));
                block = RunningStats::new(&main_cfg.theta0, false);
            }
        }
    }
    Ok(SubsampleRun {
        main,
        n: main_cfg.n,
        block_len: t,
        blocks,
    })
}

/// Run the procedure end to end for a single functional.
#[allow(clippy::too_many_arguments)]
pub fn run_calibration<O: GradientOracle>(
    oracle: &O,
    n: u64,
    cfg: &SubsampleConfig,
    schedule: &StepSchedule,
    theta0: &[f64],
    phi: &Functional,
    delta: f64,
    stream: RngStream,
) -> Result<(RunningStats, Calibration)> {
    let run = run_subsampling(oracle, n, cfg, schedule, theta0, stream, Execution::default())?;
    let cal = run.calibrate(phi, delta)?;
    Ok((run.main, cal))
}
