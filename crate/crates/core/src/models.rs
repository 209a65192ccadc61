//! Stochastic gradient oracles for the synthetic test problems.
//!
//! Each oracle separates drawing the data `ξ` from evaluating `g(θ, ξ)`, so
//! one draw can be evaluated at several points (shared-randomness
//! subsampling) or differentiated again (Hessian estimation).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::noise::{GaussianSampler, Noise, NoiseSpec, ParetoSpec};

pub trait GradientOracle: Send + Sync {
    /// Reusable storage for one data draw.
    type Draw: Clone + Send;

    fn dim(&self) -> usize;

    /// The population minimizer.
    fn theta_star(&self) -> &[f64];

    fn new_draw(&self) -> Self::Draw;

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut Self::Draw);

    /// `g(θ, ξ)` for a fixed draw. `theta` and `out` have length `dim()`.
    fn gradient_at(&self, theta: &[f64], draw: &Self::Draw, out: &mut [f64]);

    /// Per-sample Hessian `∇g(θ, ξ)`, written into a `dim × dim` matrix.
    fn hessian_at(&self, theta: &[f64], draw: &Self::Draw, out: &mut DMatrix<f64>);

    /// Draw fresh data and evaluate the gradient at `theta`.
    fn gradient<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let mut draw = self.new_draw();
        self.draw_into(rng, &mut draw);
        let mut out = vec![0.0; self.dim()];
        self.gradient_at(theta, &draw, &mut out);
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn outer_into(x: &[f64], scale: f64, out: &mut DMatrix<f64>) {
    let d = x.len();
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] = scale * x[i] * x[j];
        }
    }
}

/// `1 / (1 + e^(-z))` without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `θ*` with i.i.d. standard normal entries.
pub fn gaussian_theta_star<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `y = xᵀθ* + ε` with `x ~ N(0, Σ)`; gradient `x (xᵀθ - y)`.
#[derive(Debug, Clone)]
pub struct LinearRegressionModel {
    theta_star: Vec<f64>,
    covariates: GaussianSampler,
    noise: Noise,
}

#[derive(Debug, Clone)]
pub struct LinearDraw {
    pub x: Vec<f64>,
    pub eps: f64,
}

impl LinearRegressionModel {
    pub fn new(theta_star: Vec<f64>, covariance: &DMatrix<f64>, noise: &NoiseSpec) -> Result<Self> {
        check_dim(theta_star.len(), covariance.nrows())?;
        if covariance.clone().cholesky().is_none() {
            return Err(Error::invalid(
                "covariance",
                "covariate covariance must be positive definite",
            ));
        }
        Ok(Self {
            covariates: GaussianSampler::new(covariance)?,
            noise: Noise::new(noise, 1)?,
            theta_star,
        })
    }
}

impl GradientOracle for LinearRegressionModel {
    type Draw = LinearDraw;

    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn new_draw(&self) -> LinearDraw {
        LinearDraw {
            x: vec![0.0; self.dim()],
            eps: 0.0,
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut LinearDraw) {
        self.covariates.sample_into(rng, &mut draw.x);
        let mut e = [0.0];
        self.noise.sample_into(rng, &mut e);
        draw.eps = e[0];
    }

    fn gradient_at(&self, theta: &[f64], draw: &LinearDraw, out: &mut [f64]) {
        let y = dot(&draw.x, &self.theta_star) + draw.eps;
        let resid = dot(&draw.x, theta) - y;
        for (o, x) in out.iter_mut().zip(&draw.x) {
            *o = x * resid;
        }
    }

    fn hessian_at(&self, _theta: &[f64], draw: &LinearDraw, out: &mut DMatrix<f64>) {
        outer_into(&draw.x, 1.0, out);
    }
}

/// Logistic regression with labels in `{-1, +1}` and independent
/// (possibly heavy-tailed) covariate coordinates.
#[derive(Debug, Clone)]
pub struct LogisticRegressionModel {
    theta_star: Vec<f64>,
    covariates: Noise,
}

#[derive(Debug, Clone)]
pub struct LogisticDraw {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LogisticRegressionModel {
    pub fn new(theta_star: Vec<f64>, covariates: &NoiseSpec) -> Result<Self> {
        let covariates = Noise::new(covariates, theta_star.len())?;
        Ok(Self { theta_star, covariates })
    }

    /// Homogeneous covariates: every coordinate symmetric Pareto(α, λ).
    pub fn homogeneous(theta_star: Vec<f64>, alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(theta_star, &NoiseSpec::pareto(alpha, lambda))
    }

    /// Heterogeneous covariates: `α_1 = α`, `α_d = 2.5`, middle indices
    /// uniform on `(α, 2)`.
    pub fn heterogeneous<R: Rng + ?Sized>(theta_star: Vec<f64>, alpha: f64, lambda: f64, rng: &mut R) -> Result<Self> {
        let indices = heterogeneous_indices(theta_star.len(), alpha, rng)?;
        let coords = indices
            .into_iter()
            .map(|a| ParetoSpec::new(a, lambda))
            .collect::<Result<Vec<_>>>()?;
        Self::new(theta_star, &NoiseSpec::SymmetricPareto { coords })
    }
}

pub fn heterogeneous_indices<R: Rng + ?Sized>(dim: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(Error::invalid(
            "dim",
            "heterogeneous covariates need at least 2 coordinates",
        ));
    }
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::invalid("alpha", "heterogeneous covariates need alpha in (1, 2)"));
    }
    let mut out = Vec::with_capacity(dim);
    out.push(alpha);
    for _ in 1..dim - 1 {
        let u: f64 = rng.random();
        out.push(alpha + (2.0 - alpha) * u);
    }
    out.push(2.5);
    Ok(out)
}

impl GradientOracle for LogisticRegressionModel {
    type Draw = LogisticDraw;

    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn new_draw(&self) -> LogisticDraw {
        LogisticDraw {
            x: vec![0.0; self.dim()],
            y: 1.0,
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut LogisticDraw) {
        self.covariates.sample_into(rng, &mut draw.x);
        let p = sigmoid(dot(&draw.x, &self.theta_star));
        let u: f64 = rng.random();
        draw.y = if u < p { 1.0 } else { -1.0 };
    }

    fn gradient_at(&self, theta: &[f64], draw: &LogisticDraw, out: &mut [f64]) {
        // e^(-z)/(1+e^(-z)) = sigmoid(-z), z = y xᵀθ
        let z = draw.y * dot(&draw.x, theta);
        let w = -draw.y * sigmoid(-z);
        for (o, x) in out.iter_mut().zip(&draw.x) {
            *o = w * x;
        }
    }

    fn hessian_at(&self, theta: &[f64], draw: &LogisticDraw, out: &mut DMatrix<f64>) {
        let s = sigmoid(dot(&draw.x, theta));
        outer_into(&draw.x, s * (1.0 - s), out);
    }
}

/// `g(θ, ξ) = Hθ + ξ`, minimizer `θ* = 0`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    h: DMatrix<f64>,
    noise: Noise,
    theta_star: Vec<f64>,
}

impl QuadraticModel {
    pub fn new(h: DMatrix<f64>, noise: &NoiseSpec) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::invalid("H", "matrix must be square"));
        }
        if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::invalid("H", "matrix must be symmetric"));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::invalid("H", "matrix must be positive definite"));
        }
        let d = h.nrows();
        Ok(Self {
            noise: Noise::new(noise, d)?,
            theta_star: vec![0.0; d],
            h,
        })
    }

    /// The two-dimensional example `H = [[1, 1], [1, 2]]⁻¹`.
    pub fn coupled_2d(noise: &NoiseSpec) -> Result<Self> {
        Self::new(coupled_2d_hessian(), noise)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }
}

pub fn coupled_2d_hessian() -> DMatrix<f64> {
    // inverse of [[1, 1], [1, 2]]
    DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0])
}

impl GradientOracle for QuadraticModel {
    type Draw = Vec<f64>;

    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    fn new_draw(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut Vec<f64>) {
        self.noise.sample_into(rng, draw);
    }

    fn gradient_at(&self, theta: &[f64], draw: &Vec<f64>, out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = (0..d).map(|j| self.h[(i, j)] * theta[j]).sum::<f64>() + draw[i];
        }
    }

    fn hessian_at(&self, _theta: &[f64], _draw: &Vec<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.h);
    }
}

/// Adds artificially injected i.i.d. symmetric Pareto noise to every
/// coordinate of an inner oracle's gradient.
#[derive(Debug, Clone)]
pub struct Injected<O> {
    inner: O,
    pareto: ParetoSpec,
}

#[derive(Debug, Clone)]
pub struct InjectedDraw<D> {
    pub inner: D,
    pub injected: Vec<f64>,
}

impl<O: GradientOracle> Injected<O> {
    pub fn new(inner: O, pareto: ParetoSpec) -> Result<Self> {
        let p = ParetoSpec::new(pareto.alpha, pareto.lambda)?;
        if p.alpha >= 2.0 {
            return Err(Error::invalid("alpha", "injected noise index must lie in (1, 2)"));
        }
        Ok(Self { inner, pareto: p })
    }

    pub fn pareto(&self) -> ParetoSpec {
        self.pareto
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: GradientOracle> GradientOracle for Injected<O> {
    type Draw = InjectedDraw<O::Draw>;

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn theta_star(&self) -> &[f64] {
        self.inner.theta_star()
    }

    fn new_draw(&self) -> Self::Draw {
        InjectedDraw {
            inner: self.inner.new_draw(),
            injected: vec![0.0; self.dim()],
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut Self::Draw) {
        self.inner.draw_into(rng, &mut draw.inner);
        for v in draw.injected.iter_mut() {
            *v = self.pareto.sample(rng);
        }
    }

    fn gradient_at(&self, theta: &[f64], draw: &Self::Draw, out: &mut [f64]) {
        self.inner.gradient_at(theta, &draw.inner, out);
        for (o, v) in out.iter_mut().zip(&draw.injected) {
            *o += v;
        }
    }

    fn hessian_at(&self, theta: &[f64], draw: &Self::Draw, out: &mut DMatrix<f64>) {
        self.inner.hessian_at(theta, &draw.inner, out);
    }
}

/// Closed set of models, for configuration-driven dispatch.
#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearRegressionModel),
    Logistic(LogisticRegressionModel),
    Quadratic(QuadraticModel),
}

#[derive(Debug, Clone)]
pub enum ModelDraw {
    Linear(LinearDraw),
    Logistic(LogisticDraw),
    Quadratic(Vec<f64>),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            Model::Linear($m) => $body,
            Model::Logistic($m) => $body,
            Model::Quadratic($m) => $body,
        }
    };
}

impl GradientOracle for Model {
    type Draw = ModelDraw;

    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }

    fn theta_star(&self) -> &[f64] {
        dispatch!(self, m => m.theta_star())
    }

    fn new_draw(&self) -> ModelDraw {
        match self {
            Model::Linear(m) => ModelDraw::Linear(m.new_draw()),
            Model::Logistic(m) => ModelDraw::Logistic(m.new_draw()),
            Model::Quadratic(m) => ModelDraw::Quadratic(m.new_draw()),
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, draw: &mut ModelDraw) {
        match (self, draw) {
            (Model::Linear(m), ModelDraw::Linear(d)) => m.draw_into(rng, d),
            (Model::Logistic(m), ModelDraw::Logistic(d)) => m.draw_into(rng, d),
            (Model::Quadratic(m), ModelDraw::Quadratic(d)) => m.draw_into(rng, d),
            _ => panic!("draw buffer does not belong to this model"),
        }
    }

    fn gradient_at(&self, theta: &[f64], draw: &ModelDraw, out: &mut [f64]) {
        match (self, draw) {
            (Model::Linear(m), ModelDraw::Linear(d)) => m.gradient_at(theta, d, out),
            (Model::Logistic(m), ModelDraw::Logistic(d)) => m.gradient_at(theta, d, out),
            (Model::Quadratic(m), ModelDraw::Quadratic(d)) => m.gradient_at(theta, d, out),
            _ => panic!("draw buffer does not belong to this model"),
        }
    }

    fn hessian_at(&self, theta: &[f64], draw: &ModelDraw, out: &mut DMatrix<f64>) {
        match (self, draw) {
            (Model::Linear(m), ModelDraw::Linear(d)) => m.hessian_at(theta, d, out),
            (Model::Logistic(m), ModelDraw::Logistic(d)) => m.hessian_at(theta, d, out),
            (Model::Quadratic(m), ModelDraw::Quadratic(d)) => m.hessian_at(theta, d, out),
            _ => panic!("draw buffer does not belong to this model"),
        }
    }
}

pub fn linreg_gradient<R: Rng + ?Sized>(model: &LinearRegressionModel, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    model.gradient(theta, rng)
}

pub fn logreg_gradient<R: Rng + ?Sized>(
    model: &LogisticRegressionModel,
    theta: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    model.gradient(theta, rng)
}

pub fn quadratic_gradient<R: Rng + ?Sized>(model: &QuadraticModel, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    model.gradient(theta, rng)
}
