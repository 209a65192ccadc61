//! Confidence regions that use the known law of artificially injected Pareto
//! noise: Hessian estimation along the trajectory, Monte Carlo quantiles of
//! `|φ(Ĥ⁻¹L)|` for the stable limit `L`, and the `n^{1−1/α}` scaling.
//!
//! Also hosts the scale comparison between the final-iterate and averaged
//! limit laws in the commuting diagonal case.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::inference::{quantile, ConfidenceRegion, Functional};
use crate::models::GradientOracle;
use crate::noise::IsotropicStable;
use crate::quadrature::integrate_half_line;
use crate::rng::RngStream;
use crate::sgd::{run_trajectory_observed, RunningStats, TrajectoryConfig, TrajectoryObserver};

/// Condition numbers above this are rejected before inversion.
pub const DEFAULT_MAX_CONDITION: f64 = 1e10;

const SHARD: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub h_hat: DMatrix<f64>,
    pub n: u64,
}

impl HessianEstimate {
    /// Ratio of largest to smallest absolute eigenvalue of the symmetric part.
    pub fn condition_number(&self) -> f64 {
        let sym = (&self.h_hat + self.h_hat.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn checked_inverse(&self, max_condition: f64) -> Result<DMatrix<f64>> {
        let condition = self.condition_number();
        if !(condition <= max_condition) {
            return Err(Error::IllConditioned { condition });
        }
        self.h_hat.clone().try_inverse().ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })
    }
}

/// Streaming mean of per-sample Hessians `∇g(θ_{k−1}, ξ_k)`.
pub struct HessianAccumulator<'a, O: GradientOracle> {
    oracle: &'a O,
    sum: DMatrix<f64>,
    scratch: DMatrix<f64>,
    n: u64,
}

impl<'a, O: GradientOracle> HessianAccumulator<'a, O> {
    pub fn new(oracle: &'a O) -> Self {
        let d = oracle.dim();
        Self {
            oracle,
            sum: DMatrix::zeros(d, d),
            scratch: DMatrix::zeros(d, d),
            n: 0,
        }
    }

    pub fn estimate(&self) -> Result<HessianEstimate> {
        if self.n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(HessianEstimate {
            h_hat: &self.sum / self.n as f64,
            n: self.n,
        })
    }
}

impl<O: GradientOracle> TrajectoryObserver<O::Draw> for HessianAccumulator<'_, O> {
    fn observe(&mut self, theta_prev: &[f64], draw: &O::Draw, _: &RunningStats) -> Result<()> {
        self.oracle.hessian_at(theta_prev, draw, &mut self.scratch);
        self.sum += &self.scratch;
        self.n += 1;
        Ok(())
    }
}

/// Run a trajectory and average the per-sample Hessians along it.
pub fn estimate_hessian<O, R>(
    oracle: &O,
    cfg: &TrajectoryConfig,
    rng: &mut R,
) -> Result<(RunningStats, HessianEstimate)>
where
    O: GradientOracle,
    R: Rng + ?Sized,
{
    let mut acc = HessianAccumulator::new(oracle);
    let stats = run_trajectory_observed(oracle, cfg, rng, &mut acc)?;
    Ok((stats, acc.estimate()?))
}

/// Law of the limit vector `L` of `n^{−1/α} Σ ξ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitLaw {
    /// Independent symmetric stable coordinates, each with characteristic
    /// function `exp(−σ|v|^α)`. This is the limit under coordinatewise i.i.d.
    /// injection.
    #[default]
    IndependentCoordinates,
    /// Rotation-invariant law with characteristic function `exp(−σ‖u‖^α)`.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleQuantile {
    pub q_dagger: f64,
    pub delta: f64,
    pub mc_samples: usize,
    /// Spread of per-shard quantiles divided by √shards.
    pub mc_std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleQuantileConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub law: LimitLaw,
    pub delta: f64,
    pub mc_samples: usize,
    pub max_condition: f64,
}

impl OracleQuantileConfig {
    pub fn new(alpha: f64, sigma: f64, delta: f64) -> Self {
        Self {
            alpha,
            sigma,
            law: LimitLaw::default(),
            delta,
            mc_samples: 1_000_000,
            max_condition: DEFAULT_MAX_CONDITION,
        }
    }

    pub fn with_law(mut self, law: LimitLaw) -> Self {
        self.law = law;
        self
    }

    pub fn with_mc_samples(mut self, mc_samples: usize) -> Self {
        self.mc_samples = mc_samples;
        self
    }
}

/// Draws of `|φ(Ĥ⁻¹L)|` for each functional, shard by shard in index order:
/// `out[shard][functional][draw]`.
fn draw_abs_phi(
    h_inv: &DMatrix<f64>,
    cfg: &OracleQuantileConfig,
    phis: &[Functional],
    stream: RngStream,
    exec: Execution,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = h_inv.nrows();
    let law = match cfg.law {
        LimitLaw::Isotropic => IsotropicStable::new(cfg.alpha, cfg.sigma, d)?,
        LimitLaw::IndependentCoordinates => IsotropicStable::new(cfg.alpha, cfg.sigma, 1)?,
    };
    let shards = cfg.mc_samples.div_ceil(SHARD);
    Ok(exec.map(shards, |s| {
        let count = SHARD.min(cfg.mc_samples - s * SHARD);
        let mut rng = stream.substream(s as u64).rng();
        let mut l = DVector::zeros(d);
        let mut y = DVector::zeros(d);
        let mut out = vec![Vec::with_capacity(count); phis.len()];
        for _ in 0..count {
            match cfg.law {
                LimitLaw::Isotropic => law.sample_into(&mut rng, l.as_mut_slice()),
                LimitLaw::IndependentCoordinates => {
                    for v in l.iter_mut() {
                        law.sample_into(&mut rng, std::slice::from_mut(v));
                    }
                }
            }
            h_inv.mul_to(&l, &mut y);
            for (o, phi) in out.iter_mut().zip(phis) {
                o.push(phi.apply(y.as_slice()).abs());
            }
        }
        out
    }))
}

/// `q†`: empirical `(1−δ)` quantile of `|φ(Ĥ⁻¹L)|`.
pub fn oracle_quantile(
    h: &HessianEstimate,
    cfg: &OracleQuantileConfig,
    phi: &Functional,
    stream: RngStream,
    exec: Execution,
) -> Result<OracleQuantile> {
    let mut q = oracle_quantiles(h, cfg, std::slice::from_ref(phi), stream, exec)?;
    Ok(q.remove(0))
}

/// [`oracle_quantile`] for several functionals on one shared set of draws.
pub fn oracle_quantiles(
    h: &HessianEstimate,
    cfg: &OracleQuantileConfig,
    phis: &[Functional],
    stream: RngStream,
    exec: Execution,
) -> Result<Vec<OracleQuantile>> {
    if !(cfg.alpha > 1.0 && cfg.alpha < 2.0) {
        return Err(Error::invalid(
            "alpha",
            format!("injected index must lie in (1, 2), got {}", cfg.alpha),
        ));
    }
    if cfg.mc_samples == 0 {
        return Err(Error::invalid("mc_samples", "need at least one Monte Carlo draw"));
    }
    for phi in phis {
        phi.check_dim(h.h_hat.nrows())?;
    }
    let h_inv = h.checked_inverse(cfg.max_condition)?;
    let shards = draw_abs_phi(&h_inv, cfg, phis, stream, exec)?;
    (0..phis.len())
        .map(|f| {
            let per_shard: Vec<f64> = shards
                .iter()
                .filter(|s| s[f].len() == SHARD)
                .map(|s| quantile(&s[f], cfg.delta))
                .collect::<Result<_>>()?;
            let mc_std_error = if per_shard.len() >= 2 {
                let m = per_shard.len() as f64;
                let mean = per_shard.iter().sum::<f64>() / m;
                let var = per_shard.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            } else {
                f64::NAN
            };
            let all: Vec<f64> = shards.iter().flat_map(|s| s[f].iter().copied()).collect();
            Ok(OracleQuantile {
                q_dagger: quantile(&all, cfg.delta)?,
                delta: cfg.delta,
                mc_samples: cfg.mc_samples,
                mc_std_error,
            })
        })
        .collect()
}

/// `{θ : n^{1−1/α} |φ(θ̄_n − θ)| ≤ q†}`.
pub fn oracle_region(
    theta_bar: &[f64],
    n: u64,
    alpha: f64,
    q: &OracleQuantile,
    phi: &Functional,
) -> Result<ConfidenceRegion> {
    phi.check_dim(theta_bar.len())?;
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be at least 1"));
    }
    Ok(ConfidenceRegion {
        center: theta_bar.to_vec(),
        half_width: q.q_dagger * (n as f64).powf(1.0 / alpha - 1.0),
        functional: phi.clone(),
        delta: q.delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleComparison {
    pub final_scale: f64,
    pub polyak_scale: f64,
}

/// Scales of the final-iterate and averaged limit laws along `u`, for
/// diagonal `H = diag(h)` and `Σ = diag(s)` and step constant `c`.
///
/// Final: `c^{α−1} ∫₀^∞ (Σ_i u_i² s_i e^{−2 h̃_i t})^{α/2} dt` with
/// `h̃ = h − (1 − 1/α)/c`. Averaged: `(Σ_i u_i² s_i / h_i²)^{α/2}`.
pub fn scale_comparison(h: &[f64], sigma: &[f64], alpha: f64, c: f64, u: &[f64]) -> Result<ScaleComparison> {
    check_dim(h.len(), sigma.len())?;
    check_dim(h.len(), u.len())?;
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::invalid(
            "alpha",
            format!("index must lie in (1, 2), got {alpha}"),
        ));
    }
    if h.iter().chain(sigma).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("h, sigma", "diagonal entries must be positive"));
    }
    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(unorm > 0.0) {
        return Err(Error::invalid("u", "direction must be nonzero"));
    }
    let shift = (1.0 - 1.0 / alpha) / c;
    let h_min = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = (1.0 - 1.0 / alpha) / h_min;
    if !(c > threshold) {
        return Err(Error::InvalidSchedule { c, threshold });
    }
    let weights: Vec<f64> = u.iter().zip(sigma).map(|(ui, si)| (ui / unorm).powi(2) * si).collect();
    let decay: Vec<f64> = h.iter().map(|hi| 2.0 * (hi - shift)).collect();
    let integrand = |t: f64| {
        let q: f64 = weights.iter().zip(&decay).map(|(w, r)| w * (-r * t).exp()).sum();
        q.powf(alpha / 2.0)
    };
    let integral = integrate_half_line(integrand, 1e-13)?;
    let polyak = weights.iter().zip(h).map(|(w, hi)| w / (hi * hi)).sum::<f64>();
    Ok(ScaleComparison {
        final_scale: c.powf(alpha - 1.0) * integral,
        polyak_scale: polyak.powf(alpha / 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Injected, LinearRegressionModel, QuadraticModel};
    use crate::noise::{NoiseSpec, ParetoSpec};
    use crate::sgd::StepSchedule;
    use approx::assert_relative_eq;

    fn est(h: DMatrix<f64>) -> HessianEstimate {
        HessianEstimate { h_hat: h, n: 1 }
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let m = QuadraticModel::coupled_2d(&NoiseSpec::pareto(1.5, 1.0)).unwrap();
        let cfg = TrajectoryConfig::new(500, vec![0.0; 2], StepSchedule::default()).unwrap();
        let (_, h) = estimate_hessian(&m, &cfg, &mut RngStream::new(1, 0).rng()).unwrap();
        assert_eq!(h.n, 500);
        assert_relative_eq!(h.h_hat, m.hessian().clone(), max_relative = 1e-14);
    }

    #[test]
    fn injected_quadratic_keeps_hessian() {
        let q = QuadraticModel::new(DMatrix::identity(3, 3) * 2.0, &NoiseSpec::Zero).unwrap();
        let m = Injected::new(q, ParetoSpec::new(1.5, 1.0).unwrap()).unwrap();
        let cfg = TrajectoryConfig::new(100, vec![0.0; 3], StepSchedule::default()).unwrap();
        let (_, h) = estimate_hessian(&m, &cfg, &mut RngStream::new(2, 0).rng()).unwrap();
        assert_eq!(h.h_hat, DMatrix::identity(3, 3) * 2.0);
    }

    #[test]
    fn linear_regression_hessian_concentrates() {
        let m =
            LinearRegressionModel::new(vec![0.0; 3], &DMatrix::identity(3, 3), &NoiseSpec::pareto(1.5, 1.0)).unwrap();
        let cfg = TrajectoryConfig::new(100_000, vec![0.0; 3], StepSchedule::default()).unwrap();
        let (_, h) = estimate_hessian(&m, &cfg, &mut RngStream::new(3, 0).rng()).unwrap();
        let dev = (&h.h_hat - DMatrix::<f64>::identity(3, 3)).amax();
        assert!(dev <= 0.05, "max deviation {dev}");
        assert_eq!(h.h_hat, h.h_hat.transpose());
    }

    #[test]
    fn singular_hessian_rejected() {
        let h = est(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let cfg = OracleQuantileConfig::new(1.5, 1.0, 0.05).with_mc_samples(100);
        let r = oracle_quantile(
            &h,
            &cfg,
            &Functional::coordinate(0),
            RngStream::new(0, 0),
            Execution::Sequential,
        );
        assert!(matches!(r, Err(Error::IllConditioned { .. })));
        let bad = OracleQuantileConfig::new(2.0, 1.0, 0.05).with_mc_samples(100);
        assert!(oracle_quantile(
            &est(DMatrix::identity(1, 1)),
            &bad,
            &Functional::coordinate(0),
            RngStream::new(0, 0),
            Execution::Sequential
        )
        .is_err());
    }

    #[test]
    fn identity_and_doubled_hessian_on_shared_draws() {
        let phi = Functional::coordinate(0);
        for law in [LimitLaw::IndependentCoordinates, LimitLaw::Isotropic] {
            let cfg = OracleQuantileConfig::new(1.5, 1.0, 0.05)
                .with_law(law)
                .with_mc_samples(40_000);
            let q1 = oracle_quantile(
                &est(DMatrix::identity(2, 2)),
                &cfg,
                &phi,
                RngStream::new(4, 0),
                Execution::default(),
            )
            .unwrap();
            let q2 = oracle_quantile(
                &est(DMatrix::identity(2, 2) * 2.0),
                &cfg,
                &phi,
                RngStream::new(4, 0),
                Execution::default(),
            )
            .unwrap();
            assert_relative_eq!(q2.q_dagger, q1.q_dagger / 2.0, max_relative = 1e-14);
            // identity map: quantile of |L_1| drawn directly from the same streams
            let l = IsotropicStable::new(1.5, 1.0, if law == LimitLaw::Isotropic { 2 } else { 1 }).unwrap();
            let mut direct = Vec::new();
            for s in 0..4u64 {
                let mut rng = RngStream::new(4, 0).substream(s).rng();
                for _ in 0..SHARD {
                    let first = l.sample(&mut rng)[0];
                    if law == LimitLaw::IndependentCoordinates {
                        l.sample(&mut rng);
                    }
                    direct.push(first.abs());
                }
            }
            assert_eq!(quantile(&direct, 0.05).unwrap(), q1.q_dagger);
        }
    }

    #[test]
    fn sigma_homogeneity_on_shared_draws() {
        let h = est(DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]));
        let phi = Functional::LinfNorm;
        let lam: f64 = 3.0;
        let base = OracleQuantileConfig::new(1.5, 0.7, 0.1).with_mc_samples(20_000);
        let scaled = OracleQuantileConfig {
            sigma: 0.7 * lam.powf(1.5),
            ..base
        };
        let q1 = oracle_quantile(&h, &base, &phi, RngStream::new(5, 0), Execution::Sequential).unwrap();
        let q2 = oracle_quantile(&h, &scaled, &phi, RngStream::new(5, 0), Execution::Sequential).unwrap();
        assert_relative_eq!(q2.q_dagger, lam * q1.q_dagger, max_relative = 1e-12);
    }

    #[test]
    fn one_dimensional_quantile_matches_closed_form_law() {
        // 1-d symmetric stable, α = 1.5, σ = 1: the 0.95 two-sided quantile
        // solves P(|L| ≤ q) = 0.95 under exp(-|u|^1.5); q = 4.48137 by
        // Fourier inversion.
        let cfg = OracleQuantileConfig::new(1.5, 1.0, 0.05).with_mc_samples(200_000);
        let q = oracle_quantile(
            &est(DMatrix::identity(1, 1)),
            &cfg,
            &Functional::coordinate(0),
            RngStream::new(6, 0),
            Execution::default(),
        )
        .unwrap();
        assert!((q.q_dagger - 4.48137).abs() < 0.08, "{}", q.q_dagger);
        assert!(q.mc_std_error > 0.0 && q.mc_std_error < 0.05);
    }

    #[test]
    fn region_width_scaling() {
        let q = OracleQuantile {
            q_dagger: 2.0,
            delta: 0.05,
            mc_samples: 1,
            mc_std_error: 0.0,
        };
        let phi = Functional::coordinate(0);
        let r1 = oracle_region(&[0.0], 1000, 1.5, &q, &phi).unwrap();
        let r8 = oracle_region(&[0.0], 8000, 1.5, &q, &phi).unwrap();
        assert_relative_eq!(r1.half_width, 2.0 * 1000f64.powf(-1.0 / 3.0), max_relative = 1e-14);
        assert_relative_eq!(r1.half_width / r8.half_width, 2.0, max_relative = 1e-12);
        assert!(r1.contains(&[0.0]));
    }

    #[test]
    fn scale_comparison_closed_forms() {
        let eq = scale_comparison(&[1.0], &[1.0], 1.5, 1.0, &[1.0]).unwrap();
        assert_relative_eq!(eq.final_scale, 1.0, max_relative = 1e-10);
        assert_relative_eq!(eq.polyak_scale, 1.0, max_relative = 1e-15);
        let c2 = scale_comparison(&[1.0], &[1.0], 1.5, 2.0, &[1.0]).unwrap();
        assert_relative_eq!(c2.final_scale, 2f64.sqrt() / 1.25, max_relative = 1e-10);
        // general 1-d closed form c^{α−1} s^{α/2} / (α h̃)
        for &(h, s, a, c) in &[(0.7, 2.0, 1.3, 3.0), (4.0, 0.5, 1.8, 0.5), (1.0, 1.0, 1.1, 0.2)] {
            let got = scale_comparison(&[h], &[s], a, c, &[1.0]).unwrap();
            let ht = h - (1.0 - 1.0 / a) / c;
            let want = c.powf(a - 1.0) * s.powf(a / 2.0) / (a * ht);
            assert_relative_eq!(got.final_scale, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn scale_comparison_threshold() {
        // threshold (1 − 1/1.5)/1 = 1/3
        let r = scale_comparison(&[1.0], &[1.0], 1.5, 1.0 / 3.0, &[1.0]);
        assert!(matches!(r, Err(Error::InvalidSchedule { .. })));
        assert!(scale_comparison(&[1.0], &[1.0], 1.5, 0.34, &[1.0]).is_ok());
    }

    #[test]
    fn final_scale_dominates_on_random_diagonal_instances() {
        let mut rng = RngStream::new(7, 0).rng();
        for _ in 0..100 {
            let d = rng.random_range(1..=5);
            let h: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..5.0)).collect();
            let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = rng.random_range(1.05..1.95);
            let h_min = h.iter().cloned().fold(f64::INFINITY, f64::min);
            let c = (1.0 - 1.0 / a) / h_min * rng.random_range(1.05..10.0);
            let r = scale_comparison(&h, &s, a, c, &u).unwrap();
            assert!(r.final_scale >= r.polyak_scale - 1e-8, "{r:?}");
        }
    }
}
