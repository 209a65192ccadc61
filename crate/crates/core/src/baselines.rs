//! Random-scaling baseline: coordinatewise intervals from
//! `V̂ = n⁻² Σ_s s² (θ̄_s − θ̄_n)(θ̄_s − θ̄_n)ᵀ` with the fixed critical value
//! 6.747 (two-sided 95%).

use crate::error::{check_dim, Error, Result};
use crate::inference::{ConfidenceRegion, Functional};
use crate::sgd::{RunningStats, TrajectoryObserver};

/// Two-sided 95% critical value of the random-scaling limit law.
pub const RS_CRITICAL_VALUE: f64 = 6.747;

/// Streaming diagonal of `V̂`.
///
/// Keeps a weighted Welford accumulator (weights `s²`) of the partial-average
/// path, so the final centring at `θ̄_n` does not cancel large sums:
/// `Σ w (x − c)² = C + W (m − c)²` with `m` the weighted mean and `C` the
/// weighted sum of squared deviations from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomScalingState {
    s: u64,
    weight: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RandomScalingState {
    pub fn new(dim: usize) -> Self {
        Self {
            s: 0,
            weight: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn steps(&self) -> u64 {
        self.s
    }

    /// Fold in `θ̄_s`; `s` must advance by one per call.
    pub fn update(&mut self, s: u64, theta_bar_s: &[f64]) -> Result<()> {
        check_dim(self.mean.len(), theta_bar_s.len())?;
        if s != self.s + 1 {
            return Err(Error::invalid("s", format!("expected step {}, got {s}", self.s + 1)));
        }
        self.s = s;
        let w = (s as f64) * (s as f64);
        let prev = self.weight;
        self.weight += w;
        let ratio = w / self.weight;
        for ((m, c), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(theta_bar_s) {
            let delta = x - *m;
            let r = delta * ratio;
            *m += r;
            *c += prev * delta * r;
        }
        Ok(())
    }

    /// Diagonal of `V̂`, centred at `θ̄_n` (the last path point).
    pub fn v_diag(&self, theta_bar_n: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), theta_bar_n.len())?;
        if self.s == 0 {
            return Err(Error::EmptySample);
        }
        let n2 = (self.s as f64).powi(2);
        Ok(self
            .mean
            .iter()
            .zip(&self.m2)
            .zip(theta_bar_n)
            .map(|((m, c), x)| ((c + self.weight * (m - x).powi(2)) / n2).max(0.0))
            .collect())
    }
}

pub fn random_scaling_update(state: &mut RandomScalingState, s: u64, theta_bar_s: &[f64]) -> Result<()> {
    state.update(s, theta_bar_s)
}

impl<D> TrajectoryObserver<D> for RandomScalingState {
    fn observe(&mut self, _: &[f64], _: &D, stats: &RunningStats) -> Result<()> {
        self.update(stats.k, &stats.theta_bar)
    }
}

/// `θ̄_{n,j} ± 6.747 √(V̂_jj / n)` as a region on coordinate `j`.
pub fn random_scaling_interval(theta_bar_n: &[f64], v_diag: &[f64], n: u64, j: usize) -> Result<ConfidenceRegion> {
    check_dim(theta_bar_n.len(), v_diag.len())?;
    if j >= theta_bar_n.len() {
        return Err(Error::DimensionMismatch {
            expected: theta_bar_n.len(),
            got: j + 1,
        });
    }
    if !(v_diag[j] >= 0.0) || n == 0 {
        return Err(Error::invalid(
            "v_hat",
            "variance entry must be nonnegative and n positive",
        ));
    }
    Ok(ConfidenceRegion {
        center: theta_bar_n.to_vec(),
        half_width: RS_CRITICAL_VALUE * (v_diag[j] / n as f64).sqrt(),
        functional: Functional::coordinate(j),
        delta: 0.05,
    })
}
