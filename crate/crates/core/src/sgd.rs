//! SGD with streaming Polyak–Ruppert averaging and a streaming empirical
//! second moment of the gradients.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::GradientOracle;

/// `η_k = c · k^(-ρ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c: f64,
    pub rho: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { c: 0.5, rho: 0.6 }
    }
}

impl StepSchedule {
    pub fn new(c: f64, rho: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", format!("step constant must be positive, got {c}")));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::invalid(
                "rho",
                format!("step exponent must lie in (0, 1], got {rho}"),
            ));
        }
        Ok(Self { c, rho })
    }

    /// Schedules usable for averaged inference need `ρ ∈ (1/2, 1)`.
    pub fn for_inference(c: f64, rho: f64) -> Result<Self> {
        if !(rho > 0.5 && rho < 1.0) {
            return Err(Error::invalid(
                "rho",
                format!("inference requires rho in (1/2, 1), got {rho}"),
            ));
        }
        Self::new(c, rho)
    }

    #[inline]
    pub fn eta(&self, k: u64) -> f64 {
        self.c * (k as f64).powf(-self.rho)
    }
}

/// Streaming state after `k` updates.
///
/// `theta_bar` averages `θ_0, …, θ_k` (the starting point carries weight
/// `1/(k+1)`), and `trace_sigma` is the trace of `Σ_k = (1/k) Σ g gᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub k: u64,
    pub theta: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub trace_sigma: f64,
    pub sigma: Option<DMatrix<f64>>,
}

impl RunningStats {
    pub fn new(theta0: &[f64], keep_full_sigma: bool) -> Self {
        let d = theta0.len();
        Self {
            k: 0,
            theta: theta0.to_vec(),
            theta_bar: theta0.to_vec(),
            trace_sigma: 0.0,
            sigma: keep_full_sigma.then(|| DMatrix::zeros(d, d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// One SGD update with gradient `grad = g(θ_{k-1}, ξ_k)`.
    pub fn step(&mut self, grad: &[f64], schedule: &StepSchedule) -> Result<()> {
        check_dim(self.dim(), grad.len())?;
        let k = self.k + 1;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let eta = schedule.eta(k);
        let w = 1.0 / (k as f64 + 1.0);
        let mut sq = 0.0;
        for ((t, tb), g) in self.theta.iter_mut().zip(self.theta_bar.iter_mut()).zip(grad) {
            *t -= eta * g;
            *tb += (*t - *tb) * w;
            sq += g * g;
        }
        if !sq.is_finite() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite { iteration: k });
        }
        let inv_k = 1.0 / k as f64;
        self.trace_sigma += (sq - self.trace_sigma) * inv_k;
        if let Some(sigma) = self.sigma.as_mut() {
            let d = grad.len();
            for i in 0..d {
                for j in 0..d {
                    let s = &mut sigma[(i, j)];
                    *s += (grad[i] * grad[j] - *s) * inv_k;
                }
            }
        }
        self.k = k;
        Ok(())
    }
}

pub fn sgd_step(stats: &mut RunningStats, grad: &[f64], schedule: &StepSchedule) -> Result<()> {
    stats.step(grad, schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub n: u64,
    pub theta0: Vec<f64>,
    pub schedule: StepSchedule,
    pub keep_full_sigma: bool,
}

impl TrajectoryConfig {
    pub fn new(n: u64, theta0: Vec<f64>, schedule: StepSchedule) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "iteration budget must be at least 1"));
        }
        Ok(Self {
            n,
            theta0,
            schedule,
            keep_full_sigma: false,
        })
    }

    pub fn with_full_sigma(mut self, keep: bool) -> Self {
        self.keep_full_sigma = keep;
        self
    }
}

/// Sees every step of a trajectory: the iterate the gradient was evaluated
/// at, the data draw, and the statistics after the update.
pub trait TrajectoryObserver<D> {
    fn observe(&mut self, theta_prev: &[f64], draw: &D, stats: &RunningStats) -> Result<()>;
}

impl<D> TrajectoryObserver<D> for () {
    fn observe(&mut self, _: &[f64], _: &D, _: &RunningStats) -> Result<()> {
        Ok(())
    }
}

impl<D, F> TrajectoryObserver<D> for F
where
    F: FnMut(&[f64], &D, &RunningStats) -> Result<()>,
{
    fn observe(&mut self, theta_prev: &[f64], draw: &D, stats: &RunningStats) -> Result<()> {
        self(theta_prev, draw, stats)
    }
}

/// Runs two observers on the same trajectory.
pub struct ObserverPair<A, B>(pub A, pub B);

impl<D, A, B> TrajectoryObserver<D> for ObserverPair<A, B>
where
    A: TrajectoryObserver<D>,
    B: TrajectoryObserver<D>,
{
    fn observe(&mut self, theta_prev: &[f64], draw: &D, stats: &RunningStats) -> Result<()> {
        self.0.observe(theta_prev, draw, stats)?;
        self.1.observe(theta_prev, draw, stats)
    }
}

impl<D, A: TrajectoryObserver<D>> TrajectoryObserver<D> for Option<A> {
    fn observe(&mut self, theta_prev: &[f64], draw: &D, stats: &RunningStats) -> Result<()> {
        match self {
            Some(o) => o.observe(theta_prev, draw, stats),
            None => Ok(()),
        }
    }
}

pub fn run_trajectory<O, R>(oracle: &O, cfg: &TrajectoryConfig, rng: &mut R) -> Result<RunningStats>
where
    O: GradientOracle,
    R: Rng + ?Sized,
{
    run_trajectory_observed(oracle, cfg, rng, &mut ())
}

pub fn run_trajectory_observed<O, R, Obs>(
    oracle: &O,
    cfg: &TrajectoryConfig,
    rng: &mut R,
    observer: &mut Obs,
) -> Result<RunningStats>
where
    O: GradientOracle,
    R: Rng + ?Sized,
    Obs: TrajectoryObserver<O::Draw>,
{
    check_dim(oracle.dim(), cfg.theta0.len())?;
    if cfg.n == 0 {
        return Err(Error::invalid("n", "iteration budget must be at least 1"));
    }
    let mut stats = RunningStats::new(&cfg.theta0, cfg.keep_full_sigma);
    let mut draw = oracle.new_draw();
    let mut grad = vec![0.0; oracle.dim()];
    let mut prev = cfg.theta0.clone();
    for _ in 0..cfg.n {
        oracle.draw_into(rng, &mut draw);
        oracle.gradient_at(&stats.theta, &draw, &mut grad);
        prev.copy_from_slice(&stats.theta);
        stats.step(&grad, &cfg.schedule)?;
        observer.observe(&prev, &draw, &stats)?;
    }
    Ok(stats)
}

/// Writes `k, theta_bar…, trace_sigma` CSV rows every `every` steps.
pub struct CsvCheckpoints<W: Write> {
    out: W,
    every: u64,
    header_written: bool,
}

impl<W: Write> CsvCheckpoints<W> {
    pub fn new(out: W, every: u64) -> Self {
        Self {
            out,
            every: every.max(1),
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write_row(&mut self, stats: &RunningStats) -> std::io::Result<()> {
        if !self.header_written {
            write!(self.out, "k")?;
            for j in 0..stats.dim() {
                write!(self.out, ",theta_bar_{j}")?;
            }
            writeln!(self.out, ",trace_sigma")?;
            self.header_written = true;
        }
        write!(self.out, "{}", stats.k)?;
        for v in &stats.theta_bar {
            write!(self.out, ",{v:e}")?;
        }
        writeln!(self.out, ",{:e}", stats.trace_sigma)
    }
}

impl<W: Write, D> TrajectoryObserver<D> for CsvCheckpoints<W> {
    fn observe(&mut self, _: &[f64], _: &D, stats: &RunningStats) -> Result<()> {
        if stats.k.is_multiple_of(self.every) {
            self.write_row(stats).map_err(|e| Error::io("<checkpoint stream>", e))?;
        }
        Ok(())
    }
}
