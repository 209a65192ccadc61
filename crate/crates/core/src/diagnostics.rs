//! Tail diagnostics for stochastic gradients and the singular-normalizer
//! demonstration.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{GradientOracle, QuadraticModel};
use crate::noise::{NoiseSpec, ParetoSpec};
use crate::rng::RngStream;
use crate::sgd::{run_trajectory_observed, RunningStats, StepSchedule, TrajectoryConfig};

/// Hill estimate from samples already sorted in descending order.
fn hill_sorted(desc: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= desc.len() {
        return Err(Error::invalid("k", format!("need 1 <= k < {}, got {k}", desc.len())));
    }
    let anchor = desc[k].ln();
    let mean = desc[..k].iter().map(|x| x.ln() - anchor).sum::<f64>() / k as f64;
    if !(mean > 0.0) {
        return Err(Error::Diagnostic(format!(
            "top {} order statistics are tied; Hill estimate undefined",
            k + 1
        )));
    }
    Ok(1.0 / mean)
}

fn sorted_desc(samples: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::invalid(
            "samples",
            format!("Hill estimator needs positive finite samples, got {bad}"),
        ));
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// `α̂(k) = [k⁻¹ Σ_{i≤k} log(X_(i) / X_(k+1))]⁻¹` over descending order
/// statistics.
pub fn hill_estimate(samples: &[f64], k: usize) -> Result<f64> {
    hill_sorted(&sorted_desc(samples)?, k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HillCurve {
    pub k: Vec<usize>,
    pub alpha_hat: Vec<f64>,
}

impl HillCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "alpha_hat"]).map_err(report)?;
        for (k, a) in self.k.iter().zip(&self.alpha_hat) {
            w.write_record([k.to_string(), a.to_string()]).map_err(report)?;
        }
        w.flush().map_err(|e| Error::Report(e.to_string()))
    }
}

fn report(e: csv::Error) -> Error {
    Error::Report(e.to_string())
}

pub fn hill_curve(samples: &[f64], ks: &[usize]) -> Result<HillCurve> {
    let desc = sorted_desc(samples)?;
    let alpha_hat = ks.iter().map(|&k| hill_sorted(&desc, k)).collect::<Result<_>>()?;
    Ok(HillCurve {
        k: ks.to_vec(),
        alpha_hat,
    })
}

/// Roughly `points` log-spaced integers in `[10, n/10]`.
pub fn default_k_grid(n: usize, points: usize) -> Vec<usize> {
    let hi = n / 10;
    if hi < 10 {
        return Vec::new();
    }
    let (lo, hi) = (10f64.ln(), (hi as f64).ln());
    let points = points.max(2);
    let mut ks: Vec<usize> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    ks.dedup();
    ks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientNormSummary {
    pub norms: Vec<f64>,
    /// Log-spaced bins from the smallest positive norm to the largest; the
    /// first bin starts at 0 and also holds exact zeros.
    pub histogram: Vec<HistogramBin>,
    pub hill: HillCurve,
}

impl GradientNormSummary {
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count"]).map_err(report)?;
        for b in &self.histogram {
            w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])
                .map_err(report)?;
        }
        w.flush().map_err(|e| Error::Report(e.to_string()))
    }
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 40;

fn log_histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let min_pos = values
        .iter()
        .cloned()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(0.0, f64::max);
    let (lo, hi) = (min_pos.ln(), max.ln());
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut edges: Vec<f64> = (0..=bins).map(|i| (lo + width * i as f64).exp()).collect();
    edges[0] = 0.0;
    edges[bins] = max;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = if v <= min_pos {
            0
        } else {
            (((v.ln() - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    (0..bins)
        .map(|i| HistogramBin {
            left: edges[i],
            right: edges[i + 1],
            count: counts[i],
        })
        .collect()
}

/// `‖g(θ_ref, ξ)‖` over `n_draws` fresh draws, with a histogram and a Hill
/// curve on the default k-grid.
pub fn gradient_norm_summary<O: GradientOracle>(
    oracle: &O,
    theta_ref: &[f64],
    n_draws: usize,
    stream: RngStream,
) -> Result<GradientNormSummary> {
    crate::error::check_dim(oracle.dim(), theta_ref.len())?;
    if n_draws < 100 {
        return Err(Error::invalid("n_draws", "need at least 100 draws for a Hill curve"));
    }
    let mut rng = stream.rng();
    let mut draw = oracle.new_draw();
    let mut g = vec![0.0; oracle.dim()];
    let norms: Vec<f64> = (0..n_draws)
        .map(|_| {
            oracle.draw_into(&mut rng, &mut draw);
            oracle.gradient_at(theta_ref, &draw, &mut g);
            g.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .collect();
    let positive: Vec<f64> = norms.iter().cloned().filter(|v| *v > 0.0).collect();
    if positive.len() < 100 {
        return Err(Error::Diagnostic(format!(
            "only {} of {n_draws} gradient norms are nonzero; tail index undefined",
            positive.len()
        )));
    }
    let hill = hill_curve(&positive, &default_k_grid(positive.len(), 30))?;
    Ok(GradientNormSummary {
        histogram: log_histogram(&norms, DEFAULT_HISTOGRAM_BINS),
        norms,
        hill,
    })
}

/// `λ_min / λ_max` of a symmetric PSD matrix; closed form for 2×2.
pub fn eigenvalue_ratio(sigma: &DMatrix<f64>) -> Result<f64> {
    let (lmin, lmax) = if sigma.nrows() == 2 {
        let (a, b, c) = (sigma[(0, 0)], 0.5 * (sigma[(0, 1)] + sigma[(1, 0)]), sigma[(1, 1)]);
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
        let lmax = mean + rad;
        // det / λ_max avoids cancellation in mean − rad
        (if lmax > 0.0 { (a * c - b * b) / lmax } else { 0.0 }, lmax)
    } else {
        let eig = sigma.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    };
    if !(lmax > 0.0) {
        return Err(Error::Diagnostic("second-moment matrix is zero".into()));
    }
    Ok((lmin / lmax).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionPoint {
    pub n: u64,
    pub ratio: f64,
}

pub fn write_condition_csv<W: Write>(series: &[ConditionPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "ratio"]).map_err(report)?;
    for p in series {
        w.write_record([p.n.to_string(), p.ratio.to_string()]).map_err(report)?;
    }
    w.flush().map_err(|e| Error::Report(e.to_string()))
}

/// Identity-Hessian quadratic with independent Pareto noise of indices
/// `α₁` and `α₂` on the two coordinates.
pub fn two_index_model(alpha1: f64, alpha2: f64) -> Result<QuadraticModel> {
    let coords = vec![ParetoSpec::new(alpha1, 1.0)?, ParetoSpec::new(alpha2, 1.0)?];
    QuadraticModel::new(DMatrix::identity(2, 2), &NoiseSpec::SymmetricPareto { coords })
}

/// Decade checkpoints `10³, 10⁴, …` up to and including `n`.
pub fn decade_checkpoints(n: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1_000u64), |c| c.checked_mul(10))
        .take_while(|c| *c <= n)
        .collect();
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

/// Track `λ_min(Σ_k) / λ_max(Σ_k)` at the given checkpoints of one SGD run
/// started at `θ*`.
pub fn singular_normalizer_demo<O: GradientOracle>(
    oracle: &O,
    checkpoints: &[u64],
    schedule: &StepSchedule,
    stream: RngStream,
) -> Result<Vec<ConditionPoint>> {
    let n = *checkpoints
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("checkpoints", "need at least one checkpoint"))?;
    let cfg = TrajectoryConfig::new(n, oracle.theta_star().to_vec(), *schedule)?.with_full_sigma(true);
    let mut series = Vec::with_capacity(checkpoints.len());
    let mut observer = |_: &[f64], _: &O::Draw, stats: &RunningStats| -> Result<()> {
        if checkpoints.contains(&stats.k) {
            let sigma = stats.sigma.as_ref().expect("full second moment requested");
            series.push(ConditionPoint {
                n: stats.k,
                ratio: eigenvalue_ratio(sigma)?,
            });
        }
        Ok(())
    };
    run_trajectory_observed(oracle, &cfg, &mut stream.rng(), &mut observer)?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearRegressionModel;
    use approx::assert_relative_eq;

    #[test]
    fn hill_geometric_ladder() {
        let e = std::f64::consts::E;
        let xs = [e.powi(3), e.powi(2), e, 1.0];
        assert_relative_eq!(hill_estimate(&xs, 3).unwrap(), 0.5, max_relative = 1e-14);
        let scaled: Vec<f64> = xs.iter().map(|x| 10.0 * x).collect();
        assert_relative_eq!(hill_estimate(&scaled, 3).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn hill_rejects_bad_input() {
        assert!(hill_estimate(&[1.0, 2.0, 0.0], 1).is_err());
        assert!(hill_estimate(&[1.0, 2.0, 3.0], 3).is_err());
        assert!(hill_estimate(&[1.0, 2.0, 3.0], 0).is_err());
        assert!(matches!(hill_estimate(&[2.0, 2.0, 2.0], 2), Err(Error::Diagnostic(_))));
    }

    #[test]
    fn hill_on_exact_pareto() {
        let p = ParetoSpec::new(1.5, 1.0).unwrap();
        let mut rng = RngStream::new(21, 0).rng();
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| p.sample(&mut rng).abs())
            .filter(|x| *x > 0.0)
            .collect();
        let a = hill_estimate(&xs, 1000).unwrap();
        assert!((1.425..=1.575).contains(&a), "alpha_hat {a}");
    }

    #[test]
    fn k_grid_spans_range() {
        let g = default_k_grid(100_000, 30);
        assert_eq!(g[0], 10);
        assert_eq!(*g.last().unwrap(), 10_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(default_k_grid(50, 30).is_empty());
    }

    #[test]
    fn summary_histogram_and_tails() {
        let m =
            LinearRegressionModel::new(vec![0.0; 2], &DMatrix::identity(2, 2), &NoiseSpec::pareto(1.5, 1.0)).unwrap();
        let s = gradient_norm_summary(&m, &[0.0; 2], 100_000, RngStream::new(22, 0)).unwrap();
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), 100_000);
        assert_eq!(s.norms.len(), 100_000);
        assert!(s.hill.alpha_hat.iter().all(|a| *a > 0.0));
        let mut buf = Vec::new();
        s.write_histogram_csv(&mut buf).unwrap();
        s.hill.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_left,bin_right,count\n"));
        assert!(text.contains("k,alpha_hat\n"));
    }

    #[test]
    fn zero_noise_quadratic_is_degenerate() {
        let m = QuadraticModel::coupled_2d(&NoiseSpec::Zero).unwrap();
        let r = gradient_norm_summary(&m, &[0.0; 2], 1000, RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Diagnostic(_))));
    }

    #[test]
    fn eigenvalue_ratio_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(eigenvalue_ratio(&m).unwrap(), 1.0 / 3.0, max_relative = 1e-14);
        assert_eq!(eigenvalue_ratio(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        let m3 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 2.0]));
        assert_relative_eq!(eigenvalue_ratio(&m3).unwrap(), 0.25, max_relative = 1e-12);
        assert!(eigenvalue_ratio(&DMatrix::zeros(2, 2)).is_err());
    }

    /// Alternates the gradients e₁, e₂ regardless of θ.
    struct Alternating;

    impl GradientOracle for Alternating {
        type Draw = u64;
        fn dim(&self) -> usize {
            2
        }
        fn theta_star(&self) -> &[f64] {
            &[0.0, 0.0]
        }
        fn new_draw(&self) -> u64 {
            0
        }
        fn draw_into<R: rand::Rng + ?Sized>(&self, _: &mut R, draw: &mut u64) {
            *draw += 1;
        }
        fn gradient_at(&self, _: &[f64], draw: &u64, out: &mut [f64]) {
            out[0] = (draw % 2) as f64;
            out[1] = 1.0 - out[0];
        }
        fn hessian_at(&self, _: &[f64], _: &u64, out: &mut DMatrix<f64>) {
            out.fill(0.0);
        }
    }

    #[test]
    fn orthonormal_gradients_give_unit_ratio() {
        let s = singular_normalizer_demo(
            &Alternating,
            &[2, 100, 1000],
            &StepSchedule::default(),
            RngStream::new(0, 0),
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|p| (p.ratio - 1.0).abs() < 1e-12), "{s:?}");
    }

    #[test]
    fn demo_series_in_unit_interval() {
        let m = two_index_model(1.3, 1.9).unwrap();
        let s = singular_normalizer_demo(
            &m,
            &decade_checkpoints(100_000),
            &StepSchedule::default(),
            RngStream::new(3, 0),
        )
        .unwrap();
        assert_eq!(s.iter().map(|p| p.n).collect::<Vec<_>>(), vec![1_000, 10_000, 100_000]);
        assert!(s.iter().all(|p| p.ratio > 0.0 && p.ratio <= 1.0));
        let mut buf = Vec::new();
        write_condition_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn decade_checkpoints_include_endpoint() {
        assert_eq!(decade_checkpoints(1_000_000), vec![1_000, 10_000, 100_000, 1_000_000]);
        assert_eq!(decade_checkpoints(5_000), vec![1_000, 5_000]);
    }
}
