//! Monte Carlo coverage experiments: configuration, replication, metrics and
//! CSV reporting.
//!
//! Replication `i` draws everything from `RngStream::new(seed, i)`, so a
//! report depends only on the config and seed, never on scheduling.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{random_scaling_interval, RandomScalingState, RS_CRITICAL_VALUE};
use crate::diagnostics::{gradient_norm_summary, GradientNormSummary};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::inference::{run_blocks, run_subsampling, Functional, SubsampleConfig, SubsampleRun};
use crate::models::{
    gaussian_theta_star, GradientOracle, Injected, LinearRegressionModel, LogisticRegressionModel, Model,
    QuadraticModel,
};
use crate::noise::{toeplitz_covariance, NoiseSpec, ParetoSpec};
use crate::oracle_aware::{
    oracle_quantiles, oracle_region, HessianAccumulator, LimitLaw, OracleQuantile, OracleQuantileConfig,
};
use crate::rng::RngStream;
use crate::sgd::{run_trajectory_observed, ObserverPair, RunningStats, StepSchedule, TrajectoryConfig};

/// Substream of a replication reserved for drawing `θ*` and model settings.
const SETUP_SUBSTREAM: u64 = u64::MAX;
/// Stream id for oracle-aware Monte Carlo draws (shared by all replications).
const ORACLE_STREAM: u64 = u64::MAX;

pub const PAPER_SCALE_N: u64 = 1_000_000;
pub const PAPER_SCALE_REPLICATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    Toeplitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Pareto,
    Gaussian,
    VaryingIndex,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTails {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    /// `[[1, 1], [1, 2]]⁻¹`, two dimensions only.
    Coupled,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalMode {
    /// One interval per coordinate.
    Coordinates,
    /// A single ℓ∞ region.
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Subsampling,
    OracleAware,
    RandomScaling,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Subsampling => "subsampling",
            Method::OracleAware => "oracle_aware",
            Method::RandomScaling => "random_scaling",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subsampling" => Ok(Method::Subsampling),
            "oracle_aware" => Ok(Method::OracleAware),
            "random_scaling" => Ok(Method::RandomScaling),
            other => Err(Error::Report(format!("unknown method `{other}`"))),
        }
    }
}

/// Flat experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dim: usize,
    /// Covariate covariance for linear regression.
    pub covariance: CovarianceKind,
    pub toeplitz_q: f64,
    /// Hessian of the quadratic model.
    pub hessian: HessianKind,
    /// Response noise (linear), covariate law (logistic) or additive
    /// gradient noise (quadratic).
    pub noise: NoiseKind,
    pub noise_alpha: f64,
    pub noise_lambda: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// Varying-index noise: separate index per coordinate.
    pub per_coordinate: bool,
    pub covariate_tails: CovariateTails,
    /// Adds i.i.d. symmetric Pareto noise of this index to every gradient
    /// coordinate.
    pub injected_alpha: Option<f64>,
    pub injected_lambda: f64,
    pub n: u64,
    pub step_c: f64,
    pub step_rho: f64,
    pub subsample_r: Vec<f64>,
    pub functional: FunctionalMode,
    pub delta: f64,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub output: Option<PathBuf>,
    /// 0 uses every available core.
    pub workers: usize,
    pub shared_randomness: bool,
    pub mc_samples: usize,
    pub limit_law: LimitLaw,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            dim: 5,
            covariance: CovarianceKind::Identity,
            toeplitz_q: 0.3,
            hessian: HessianKind::Coupled,
            noise: NoiseKind::Pareto,
            noise_alpha: 1.5,
            noise_lambda: 1.0,
            alpha_lo: 1.5,
            alpha_hi: 1.8,
            per_coordinate: false,
            covariate_tails: CovariateTails::Homogeneous,
            injected_alpha: None,
            injected_lambda: 1.0,
            n: 100_000,
            step_c: 0.5,
            step_rho: 0.6,
            subsample_r: vec![0.7],
            functional: FunctionalMode::Coordinates,
            delta: 0.05,
            replications: 200,
            seed: 0,
            methods: vec![Method::Subsampling],
            output: None,
            workers: 0,
            shared_randomness: false,
            mc_samples: 1_000_000,
            limit_law: LimitLaw::IndependentCoordinates,
        }
    }
}

/// A model instance for one replication.
enum Built {
    Plain(Model),
    Injected(Injected<Model>),
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `n = 10⁶`, `R = 500`.
    pub fn paper_scale(mut self) -> Self {
        self.n = PAPER_SCALE_N;
        self.replications = PAPER_SCALE_REPLICATIONS;
        self
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::new(self.step_c, self.step_rho)
    }

    /// Law of the gradient noise that the oracle-aware method assumes.
    pub fn oracle_noise(&self) -> Option<ParetoSpec> {
        match (self.injected_alpha, self.model, self.noise) {
            (Some(a), _, _) => Some(ParetoSpec {
                alpha: a,
                lambda: self.injected_lambda,
            }),
            (None, ModelKind::Quadratic, NoiseKind::Pareto) => Some(ParetoSpec {
                alpha: self.noise_alpha,
                lambda: self.noise_lambda,
            }),
            _ => None,
        }
    }

    /// Every method this config supports.
    pub fn with_all_methods(mut self) -> Self {
        self.methods = vec![Method::Subsampling];
        if self.functional == FunctionalMode::Coordinates && self.delta == 0.05 {
            self.methods.push(Method::RandomScaling);
        }
        if self.oracle_noise().is_some() {
            self.methods.push(Method::OracleAware);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n == 0 || self.dim == 0 {
            return bad("n and dim must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        self.schedule()?;
        if self.step_rho <= 0.5 || self.step_rho >= 1.0 {
            log::warn!(
                "step exponent {} is outside (1/2, 1); averaging theory does not apply",
                self.step_rho
            );
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.methods.contains(&Method::Subsampling) {
            if self.subsample_r.is_empty() {
                return bad("subsampling needs at least one exponent in subsample_r".into());
            }
            for &r in &self.subsample_r {
                SubsampleConfig::new(r)?;
                if SubsampleConfig::new(r)?.num_blocks(self.n) < 2 {
                    return bad(format!("r = {r} leaves fewer than two blocks at n = {}", self.n));
                }
            }
        }
        if self.methods.contains(&Method::RandomScaling) {
            if self.functional != FunctionalMode::Coordinates {
                return bad("random scaling only produces coordinatewise intervals".into());
            }
            if self.delta != 0.05 {
                return bad(format!(
                    "random scaling uses the fixed critical value {RS_CRITICAL_VALUE}, valid only for delta = 0.05"
                ));
            }
        }
        if self.methods.contains(&Method::OracleAware) {
            match self.oracle_noise() {
                None => {
                    return bad("oracle_aware needs injected_alpha, or a quadratic model with pareto noise".into());
                }
                Some(p) => {
                    if !(p.alpha > 1.0 && p.alpha < 2.0) {
                        return bad(format!("oracle_aware needs a noise index in (1, 2), got {}", p.alpha));
                    }
                    if let Err(e) = p.stable_limit_scale() {
                        return bad(e.to_string());
                    }
                }
            }
            if self.mc_samples == 0 {
                return bad("mc_samples must be positive".into());
            }
        }
        if self.model == ModelKind::Quadratic && self.hessian == HessianKind::Coupled && self.dim != 2 {
            return bad("the coupled quadratic is two-dimensional; set dim = 2".into());
        }
        // trial build catches invalid noise parameters up front
        self.build(&mut RngStream::new(0, 0).rng())
            .map(|_| ())
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn noise_spec(&self, dim: usize) -> NoiseSpec {
        match self.noise {
            NoiseKind::Pareto => NoiseSpec::pareto(self.noise_alpha, self.noise_lambda),
            NoiseKind::Gaussian => NoiseSpec::standard_gaussian(dim),
            NoiseKind::VaryingIndex => NoiseSpec::VaryingIndex {
                lo: self.alpha_lo,
                hi: self.alpha_hi,
                lambda: self.noise_lambda,
                per_coordinate: self.per_coordinate,
            },
            NoiseKind::Zero => NoiseSpec::Zero,
        }
    }

    fn build<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Built> {
        let d = self.dim;
        let model = match self.model {
            ModelKind::Linear => {
                let cov = match self.covariance {
                    CovarianceKind::Identity => DMatrix::identity(d, d),
                    CovarianceKind::Toeplitz => toeplitz_covariance(d, self.toeplitz_q),
                };
                Model::Linear(LinearRegressionModel::new(
                    gaussian_theta_star(d, rng),
                    &cov,
                    &self.noise_spec(1),
                )?)
            }
            ModelKind::Logistic => {
                let theta_star = gaussian_theta_star(d, rng);
                let m = match (self.covariate_tails, self.noise) {
                    (CovariateTails::Heterogeneous, NoiseKind::Pareto) => {
                        LogisticRegressionModel::heterogeneous(theta_star, self.noise_alpha, self.noise_lambda, rng)?
                    }
                    (CovariateTails::Heterogeneous, _) => {
                        return Err(Error::Config("heterogeneous covariates need pareto noise".into()));
                    }
                    (CovariateTails::Homogeneous, _) => LogisticRegressionModel::new(theta_star, &self.noise_spec(d))?,
                };
                Model::Logistic(m)
            }
            ModelKind::Quadratic => {
                let h = match self.hessian {
                    HessianKind::Coupled => crate::models::coupled_2d_hessian(),
                    HessianKind::Identity => DMatrix::identity(d, d),
                };
                Model::Quadratic(QuadraticModel::new(h, &self.noise_spec(d))?)
            }
        };
        Ok(match self.injected_alpha {
            Some(a) => Built::Injected(Injected::new(model, ParetoSpec::new(a, self.injected_lambda)?)?),
            None => Built::Plain(model),
        })
    }

    /// Report rows in output order: subsampling expands over `subsample_r`.
    pub fn row_keys(&self) -> Vec<RowKey> {
        let mut keys = Vec::new();
        for &method in &self.methods {
            match method {
                Method::Subsampling => keys.extend(self.subsample_r.iter().map(|&r| RowKey { method, r: Some(r) })),
                _ => keys.push(RowKey { method, r: None }),
            }
        }
        keys
    }

    fn functionals(&self) -> Vec<Functional> {
        match self.functional {
            FunctionalMode::Coordinates => (0..self.dim).map(Functional::coordinate).collect(),
            FunctionalMode::Linf => vec![Functional::LinfNorm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowKey {
    pub method: Method,
    pub r: Option<f64>,
}

/// One method's result in one replication, per functional.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub center: Vec<f64>,
    pub covered: Vec<bool>,
    pub half_width: Vec<f64>,
    /// `q̂` (subsampling), `q†` (oracle-aware) or the fixed critical value.
    pub quantile: Vec<f64>,
    pub blocks: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub index: u64,
    pub theta_star: Vec<f64>,
    /// Aligned with [`ExperimentConfig::row_keys`]; `Err` holds the failure
    /// message.
    pub rows: Vec<std::result::Result<MethodOutcome, String>>,
}

type OracleCache = Mutex<HashMap<Vec<u64>, Vec<OracleQuantile>>>;

/// One replication. Failures of the main trajectory are returned as `Err`;
/// failures of a single method land in its row.
pub fn run_replication(cfg: &ExperimentConfig, index: u64) -> Result<ReplicationOutcome> {
    run_replication_cached(cfg, index, &Mutex::new(HashMap::new()))
}

fn run_replication_cached(cfg: &ExperimentConfig, index: u64, cache: &OracleCache) -> Result<ReplicationOutcome> {
    let stream = RngStream::new(cfg.seed, index);
    let built = cfg.build(&mut stream.substream(SETUP_SUBSTREAM).rng())?;
    match &built {
        Built::Plain(m) => replicate(m, cfg, index, stream, cache),
        Built::Injected(m) => replicate(m, cfg, index, stream, cache),
    }
}

fn replicate<O: GradientOracle>(
    oracle: &O,
    cfg: &ExperimentConfig,
    index: u64,
    stream: RngStream,
    cache: &OracleCache,
) -> Result<ReplicationOutcome> {
    let d = oracle.dim();
    let theta0 = vec![0.0; d];
    let theta_star = oracle.theta_star().to_vec();
    let schedule = cfg.schedule()?;
    let phis = cfg.functionals();
    let rs = cfg
        .methods
        .contains(&Method::RandomScaling)
        .then(|| RandomScalingState::new(d));
    let hess = cfg
        .methods
        .contains(&Method::OracleAware)
        .then(|| HessianAccumulator::new(oracle));
    let mut observers = ObserverPair(rs, hess);
    let main_cfg = TrajectoryConfig::new(cfg.n, theta0.clone(), schedule)?;
    let main = run_trajectory_observed(oracle, &main_cfg, &mut stream.substream(0).rng(), &mut observers)?;
    let ObserverPair(rs, hess) = observers;

    let evaluate = |center: &[f64], half_width: Vec<f64>, quantile: Vec<f64>, blocks, dropped| {
        let covered = phis
            .iter()
            .zip(&half_width)
            .map(|(phi, hw)| phi.apply_diff(center, &theta_star).abs() <= *hw)
            .collect();
        MethodOutcome {
            center: center.to_vec(),
            covered,
            half_width,
            quantile,
            blocks,
            dropped,
        }
    };

    let mut rows = Vec::new();
    for key in cfg.row_keys() {
        let row: Result<MethodOutcome> = match key.method {
            Method::Subsampling => {
                let sub = SubsampleConfig::new(key.r.expect("subsampling rows carry r"))?
                    .with_shared_randomness(cfg.shared_randomness);
                subsampling_row(oracle, cfg, &main, &sub, &schedule, &theta0, stream, &phis)
                    .map(|(hw, q, b, dr)| evaluate(&main.theta_bar, hw, q, b, dr))
            }
            Method::RandomScaling => {
                let state = rs.as_ref().expect("random scaling state");
                state.v_diag(&main.theta_bar).and_then(|v| {
                    let hw = (0..d)
                        .map(|j| random_scaling_interval(&main.theta_bar, &v, cfg.n, j).map(|iv| iv.half_width))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(evaluate(&main.theta_bar, hw, vec![RS_CRITICAL_VALUE; d], 0, 0))
                })
            }
            Method::OracleAware => {
                let acc = hess.as_ref().expect("hessian accumulator");
                oracle_row(cfg, acc, &main, &phis, cache).map(|(hw, q)| evaluate(&main.theta_bar, hw, q, 0, 0))
            }
        };
        if let Err(e) = &row {
            log::warn!("replication {index}: {} failed: {e}", key.method);
        }
        rows.push(row.map_err(|e| e.to_string()));
    }
    Ok(ReplicationOutcome {
        index,
        theta_star,
        rows,
    })
}

type RowValues = (Vec<f64>, Vec<f64>, usize, usize);

#[allow(clippy::too_many_arguments)]
fn subsampling_row<O: GradientOracle>(
    oracle: &O,
    cfg: &ExperimentConfig,
    main: &RunningStats,
    sub: &SubsampleConfig,
    schedule: &StepSchedule,
    theta0: &[f64],
    stream: RngStream,
    phis: &[Functional],
) -> Result<RowValues> {
    let run = if sub.shared_randomness {
        run_subsampling(oracle, cfg.n, sub, schedule, theta0, stream, Execution::Sequential)?
    } else {
        SubsampleRun {
            main: main.clone(),
            n: cfg.n,
            block_len: sub.block_len(cfg.n),
            blocks: run_blocks(oracle, cfg.n, sub, schedule, theta0, stream, Execution::Sequential)?,
        }
    };
    let (mut hw, mut q, mut dropped) = (Vec::new(), Vec::new(), 0);
    for phi in phis {
        let cal = run.calibrate(phi, cfg.delta)?;
        hw.push(run.region(phi, &cal).half_width);
        q.push(cal.q_hat);
        dropped = dropped.max(cal.dropped);
    }
    Ok((hw, q, run.num_blocks(), dropped))
}

fn oracle_row<O: GradientOracle>(
    cfg: &ExperimentConfig,
    acc: &HessianAccumulator<'_, O>,
    main: &RunningStats,
    phis: &[Functional],
    cache: &OracleCache,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let noise = cfg.oracle_noise().expect("validated");
    let h = acc.estimate()?;
    let key: Vec<u64> = h.h_hat.iter().map(|v| v.to_bits()).collect();
    // Sequential draws: the lock is held while sampling.
    let qs = {
        let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
        match guard.get(&key) {
            Some(q) => q.clone(),
            None => {
                let qcfg = OracleQuantileConfig::new(noise.alpha, noise.stable_limit_scale()?, cfg.delta)
                    .with_law(cfg.limit_law)
                    .with_mc_samples(cfg.mc_samples);
                let q = oracle_quantiles(
                    &h,
                    &qcfg,
                    phis,
                    RngStream::new(cfg.seed, ORACLE_STREAM),
                    Execution::Sequential,
                )?;
                guard.insert(key, q.clone());
                q
            }
        }
    };
    let mut hw = Vec::with_capacity(phis.len());
    for (phi, q) in phis.iter().zip(&qs) {
        hw.push(oracle_region(&main.theta_bar, cfg.n, noise.alpha, q, phi)?.half_width);
    }
    Ok((hw, qs.iter().map(|q| q.q_dagger).collect()))
}

/// Gradient-norm diagnostics at `θ*` for the model of replication 0.
pub fn diagnose(cfg: &ExperimentConfig, n_draws: usize) -> Result<GradientNormSummary> {
    cfg.validate()?;
    let stream = RngStream::new(cfg.seed, 0);
    let built = cfg.build(&mut stream.substream(SETUP_SUBSTREAM).rng())?;
    match &built {
        Built::Plain(m) => gradient_norm_summary(m, m.theta_star(), n_draws, stream.substream(0)),
        Built::Injected(m) => gradient_norm_summary(m, m.theta_star(), n_draws, stream.substream(0)),
    }
}

/// Mean coverage, MSE of the per-functional coverage rates against
/// `nominal`, and the fraction of those rates inside
/// `nominal ± 1.96 √(nominal (1 − nominal) / R)`.
pub fn coverage_metrics(hits: &[Vec<bool>], nominal: f64) -> Result<(f64, f64, f64)> {
    let r = hits.len();
    if r == 0 || hits[0].is_empty() {
        return Err(Error::EmptySample);
    }
    let p = hits[0].len();
    if hits.iter().any(|h| h.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: hits.iter().map(Vec::len).find(|l| *l != p).unwrap_or(p),
        });
    }
    let rates = coordinate_rates(hits);
    let mean = rates.iter().sum::<f64>() / p as f64;
    let mse = rates.iter().map(|c| (c - nominal).powi(2)).sum::<f64>() / p as f64;
    let band = 1.96 * (nominal * (1.0 - nominal) / r as f64).sqrt();
    let inside = rates.iter().filter(|c| (*c - nominal).abs() <= band).count();
    Ok((mean, mse, inside as f64 / p as f64))
}

fn coordinate_rates(hits: &[Vec<bool>]) -> Vec<f64> {
    let r = hits.len() as f64;
    (0..hits[0].len())
        .map(|j| hits.iter().filter(|h| h[j]).count() as f64 / r)
        .collect()
}

fn mean_and_se(values: &[f64], groups: usize) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt() / (groups as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub method: Method,
    pub r: Option<f64>,
    pub coverage: f64,
    /// Mean half-width `q̂ √(tr Σ_n / n)` (or the method's analogue).
    pub avg_length: f64,
    pub se_coverage: f64,
    pub se_length: f64,
    pub mse: f64,
    pub band_fraction: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<CoverageRow>,
    /// Per-functional coverage rates, aligned with `rows`.
    pub coordinate_coverage: Vec<Vec<f64>>,
    pub replications: Vec<ReplicationOutcome>,
}

impl CoverageReport {
    pub fn row(&self, method: Method, r: Option<f64>) -> Option<&CoverageRow> {
        self.rows.iter().find(|row| row.method == method && row.r == r)
    }
}

/// Run every replication and aggregate. Fails when more than 1% of
/// replications fail for any row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    run_experiment_with(cfg, Execution::with_workers(cfg.workers))
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<CoverageReport> {
    cfg.validate()?;
    let keys = cfg.row_keys();
    log::info!(
        "running {} replications of {:?} (d = {}, n = {}) with {:?}",
        cfg.replications,
        cfg.model,
        cfg.dim,
        cfg.n,
        exec
    );
    let cache: OracleCache = Mutex::new(HashMap::new());
    let outcomes = exec.map(cfg.replications, |i| run_replication_cached(cfg, i as u64, &cache));

    let total = cfg.replications;
    let cap = total / 100;
    let mut replications = Vec::with_capacity(total);
    let mut failed_whole = 0;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) => replications.push(rep),
            Err(e) => {
                log::warn!("replication {i} failed: {e}");
                failed_whole += 1;
            }
        }
    }
    let mut rows = Vec::with_capacity(keys.len());
    let mut coordinate_coverage = Vec::with_capacity(keys.len());
    for (k, key) in keys.iter().enumerate() {
        let ok: Vec<&MethodOutcome> = replications
            .iter()
            .filter_map(|rep| rep.rows[k].as_ref().ok())
            .collect();
        let failures = total - ok.len();
        if failures > cap || ok.is_empty() {
            return Err(Error::ExperimentFailed {
                failed: failures.max(failed_whole),
                total,
                cap,
            });
        }
        let hits: Vec<Vec<bool>> = ok.iter().map(|o| o.covered.clone()).collect();
        let nominal = 1.0 - cfg.delta;
        let (coverage, mse, band_fraction) = coverage_metrics(&hits, nominal)?;
        let pooled_hits: Vec<f64> = hits.iter().flatten().map(|h| if *h { 1.0 } else { 0.0 }).collect();
        let pooled_len: Vec<f64> = ok.iter().flat_map(|o| o.half_width.iter().copied()).collect();
        let (_, se_coverage) = mean_and_se(&pooled_hits, ok.len());
        let (avg_length, se_length) = mean_and_se(&pooled_len, ok.len());
        coordinate_coverage.push(coordinate_rates(&hits));
        rows.push(CoverageRow {
            method: key.method,
            r: key.r,
            coverage,
            avg_length,
            se_coverage,
            se_length,
            mse,
            band_fraction,
            failures,
        });
    }
    log::info!("experiment finished; {failed_whole} replication(s) failed outright");
    Ok(CoverageReport {
        seed: cfg.seed,
        config: cfg.clone(),
        rows,
        coordinate_coverage,
        replications,
    })
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "method",
    "r",
    "coverage",
    "avg_length",
    "se_coverage",
    "se_length",
    "mse",
    "band_fraction",
    "failures",
];

fn fmt_r(r: Option<f64>) -> String {
    r.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Report(format!("{}: {other:?}", path.display())),
    }
}

/// `report.csv` → `report.<suffix>.csv`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{suffix}.{ext}"))
}

/// Write the summary CSV (metadata block of `#` lines, then one row per
/// method and exponent) plus `<stem>.coords.csv` and `<stem>.runs.csv`.
pub fn emit_report(report: &CoverageReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut body = Vec::new();
    write_summary(report, &mut body).map_err(|e| Error::io(path, e))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    write_coordinates(report, &sibling_path(path, "coords"))?;
    write_runs(report, &sibling_path(path, "runs"))
}

/// The summary file exactly as [`emit_report`] writes it.
pub fn write_summary<W: Write>(report: &CoverageReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# sgd-selfnorm coverage report")?;
    writeln!(out, "# version: {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# seed: {}", report.seed)?;
    // execution settings do not affect results and are left out
    let mut echo = toml::Table::try_from(&report.config).map_err(std::io::Error::other)?;
    echo.remove("workers");
    echo.remove("output");
    for line in echo.to_string().lines() {
        writeln!(out, "# config: {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for row in &report.rows {
        w.write_record([
            row.method.to_string(),
            fmt_r(row.r),
            row.coverage.to_string(),
            row.avg_length.to_string(),
            row.se_coverage.to_string(),
            row.se_length.to_string(),
            row.mse.to_string(),
            row.band_fraction.to_string(),
            row.failures.to_string(),
        ])?;
    }
    w.flush()
}

fn write_coordinates(report: &CoverageReport, path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["method", "r", "functional", "coverage"])
        .map_err(&err)?;
    for (row, rates) in report.rows.iter().zip(&report.coordinate_coverage) {
        for (j, c) in rates.iter().enumerate() {
            w.write_record([
                row.method.to_string(),
                fmt_r(row.r),
                functional_label(&report.config, j),
                c.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn functional_label(cfg: &ExperimentConfig, j: usize) -> String {
    match cfg.functional {
        FunctionalMode::Coordinates => format!("coord{j}"),
        FunctionalMode::Linf => "linf".into(),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn write_runs(report: &CoverageReport, path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "replication",
        "method",
        "r",
        "functional",
        "theta_star",
        "center",
        "half_width",
        "quantile",
        "covered",
        "blocks",
        "dropped",
        "error",
    ])
    .map_err(&err)?;
    let keys = report.config.row_keys();
    let coords = report.config.functional == FunctionalMode::Coordinates;
    for rep in &report.replications {
        for (key, row) in keys.iter().zip(&rep.rows) {
            let (method, r) = (key.method.to_string(), fmt_r(key.r));
            match row {
                Ok(o) => {
                    for j in 0..o.covered.len() {
                        let (ts, c) = if coords {
                            (rep.theta_star[j].to_string(), o.center[j].to_string())
                        } else {
                            (join(&rep.theta_star), join(&o.center))
                        };
                        w.write_record([
                            rep.index.to_string(),
                            method.clone(),
                            r.clone(),
                            functional_label(&report.config, j),
                            ts,
                            c,
                            o.half_width[j].to_string(),
                            o.quantile[j].to_string(),
                            o.covered[j].to_string(),
                            o.blocks.to_string(),
                            o.dropped.to_string(),
                            String::new(),
                        ])
                        .map_err(&err)?;
                    }
                }
                Err(msg) => {
                    let mut rec = vec![rep.index.to_string(), method.clone(), r.clone()];
                    rec.extend(std::iter::repeat_n(String::new(), 8));
                    rec.push(msg.clone());
                    w.write_record(rec).map_err(&err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub seed: u64,
    pub rows: Vec<CoverageRow>,
}

/// Read a summary CSV back.
pub fn parse_report(path: &Path) -> Result<ParsedReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seed = None;
    let mut table = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(meta) = line.strip_prefix('#') {
            if let Some(s) = meta.trim().strip_prefix("seed:") {
                seed = Some(
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Report(format!("bad seed line `{line}`")))?,
                );
            }
        } else {
            table.push_str(&line);
            table.push('\n');
        }
    }
    let seed = seed.ok_or_else(|| Error::Report(format!("{}: no seed in header", path.display())))?;
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != REPORT_COLUMNS {
        return Err(Error::Report(format!(
            "{}: unexpected columns {headers:?}",
            path.display()
        )));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Report(format!("bad number `{s}`"))) };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(CoverageRow {
            method: rec[0].parse()?,
            r: if rec[1].is_empty() { None } else { Some(num(&rec[1])?) },
            coverage: num(&rec[2])?,
            avg_length: num(&rec[3])?,
            se_coverage: num(&rec[4])?,
            se_length: num(&rec[5])?,
            mse: num(&rec[6])?,
            band_fraction: num(&rec[7])?,
            failures: rec[8]
                .parse()
                .map_err(|_| Error::Report(format!("bad count `{}`", &rec[8])))?,
        });
    }
    Ok(ParsedReport { seed, rows })
}
