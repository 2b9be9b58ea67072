//! Pointwise (Nemytskii) nonlinearities `F(u)(x) = f(u(x))` evaluated
//! pseudo-spectrally on the sine collocation grid, together with the diagonal
//! trace-class noise covariance `Q`.
//!
//! Products are formed pointwise on the `n`-point grid and transformed back
//! without dealiasing.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{invalid, LabError, Result};
use crate::spectral::{AssumptionParams, SineTransform, SpectralField, SpectralOperator};

/// Scalar nonlinearity presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `f = 0`; the scheme integrates the linear equation exactly.
    Zero,
    /// `f(x) = c x`. Unbounded, but `f'` and `f''` are bounded and `F` has
    /// linear growth, which is all the convergence theory uses.
    Linear(f64),
    /// `f(x) = a sin x`.
    Sine(f64),
}

impl Nonlinearity {
    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear(c) => c * x,
            Nonlinearity::Sine(a) => a * x.sin(),
        }
    }

    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear(c) => c,
            Nonlinearity::Sine(a) => a * x.cos(),
        }
    }

    #[inline]
    pub fn d2f(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Zero | Nonlinearity::Linear(_) => 0.0,
            Nonlinearity::Sine(a) => -a * x.sin(),
        }
    }

    /// `sup |f'|`, the global Lipschitz constant of `F` on `H`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear(c) => c.abs(),
            Nonlinearity::Sine(a) => a.abs(),
        }
    }

    /// Constant multiple of the identity when `DF` does not depend on the base
    /// point and `D^2 F = 0`.
    pub fn affine_slope(&self) -> Option<f64> {
        match *self {
            Nonlinearity::Zero => Some(0.0),
            Nonlinearity::Linear(c) => Some(c),
            Nonlinearity::Sine(_) => None,
        }
    }
}

/// Eigenvalues `q_i` of the noise covariance, aligned with the eigenbasis of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    q: Vec<f64>,
    trace: f64,
}

impl NoiseSpec {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return invalid("noise needs at least one mode");
        }
        if q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return invalid("noise eigenvalues must be finite and nonnegative");
        }
        let trace = q.iter().sum();
        Ok(NoiseSpec { q, trace })
    }

    /// `q_i = lambda_i^{-rho}`.
    pub fn power_law(op: &SpectralOperator, rho: f64) -> Result<Self> {
        NoiseSpec::new(op.eigenvalues().iter().map(|l| l.powf(-rho)).collect())
    }

    pub fn zero(n: usize) -> Self {
        NoiseSpec { q: vec![0.0; n], trace: 0.0 }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn sqrt_q(&self) -> Vec<f64> {
        self.q.iter().map(|x| x.sqrt()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// `kappa_Q(x_j) = sum_k q_k e_k(x_j)^2` on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QTraceKernel {
    values: Vec<f64>,
}

impl QTraceKernel {
    pub fn new(noise: &NoiseSpec, n: usize) -> Result<Self> {
        if noise.len() != n {
            return invalid(format!("noise has {} modes, grid has {n}", noise.len()));
        }
        let denom = (n + 1) as f64;
        let values = (1..=n)
            .map(|j| {
                let x = j as f64 / denom;
                noise
                    .q()
                    .iter()
                    .enumerate()
                    .map(|(k, q)| {
                        let s = (PI * (k + 1) as f64 * x).sin();
                        2.0 * q * s * s
                    })
                    .sum()
            })
            .collect();
        Ok(QTraceKernel { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::NumericOverflow(format!("non-finite value in {what}")))
    }
}

/// A nonlinearity bound to a collocation grid of size `n`.
#[derive(Debug, Clone)]
pub struct NemytskiiOperator {
    nl: Nonlinearity,
    transform: Arc<SineTransform>,
}

impl NemytskiiOperator {
    pub fn new(nl: Nonlinearity, n: usize) -> Result<Self> {
        Ok(NemytskiiOperator {
            nl,
            transform: Arc::new(SineTransform::new(n)?),
        })
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nl
    }

    pub fn transform(&self) -> &SineTransform {
        &self.transform
    }

    pub fn len(&self) -> usize {
        self.transform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transform.is_empty()
    }

    fn physical(&self, v: &SpectralField) -> Result<Vec<f64>> {
        let values = self.transform.to_physical(v)?;
        check_finite(&values, "physical field")?;
        Ok(values)
    }

    fn spectral(&self, values: &[f64]) -> Result<SpectralField> {
        check_finite(values, "pointwise product")?;
        self.transform.to_spectral(values)
    }

    fn check_len(&self, v: &SpectralField) -> Result<()> {
        if v.len() != self.len() {
            return invalid(format!(
                "field has {} modes, operator has {}",
                v.len(),
                self.len()
            ));
        }
        Ok(())
    }

    /// `F(v)`.
    pub fn apply(&self, v: &SpectralField) -> Result<SpectralField> {
        self.check_len(v)?;
        match self.nl {
            Nonlinearity::Zero => Ok(SpectralField::zeros(v.len())),
            Nonlinearity::Linear(c) => Ok(v.scaled(c)),
            nl => {
                let mut values = self.physical(v)?;
                values.iter_mut().for_each(|x| *x = nl.f(*x));
                self.spectral(&values)
            }
        }
    }

    /// `DF(base) dir = f'(base) dir` pointwise.
    pub fn jacobian_apply(&self, base: &SpectralField, dir: &SpectralField) -> Result<SpectralField> {
        self.check_len(base)?;
        self.check_len(dir)?;
        match self.nl {
            Nonlinearity::Zero => Ok(SpectralField::zeros(dir.len())),
            Nonlinearity::Linear(c) => Ok(dir.scaled(c)),
            nl => {
                let b = self.physical(base)?;
                let mut d = self.physical(dir)?;
                d.iter_mut().zip(&b).for_each(|(d, b)| *d *= nl.df(*b));
                self.spectral(&d)
            }
        }
    }

    /// `D^2F(base)(u, w) = f''(base) u w` pointwise.
    pub fn hessian_apply(
        &self,
        base: &SpectralField,
        u: &SpectralField,
        w: &SpectralField,
    ) -> Result<SpectralField> {
        self.check_len(base)?;
        self.check_len(u)?;
        self.check_len(w)?;
        if self.nl.affine_slope().is_some() {
            return Ok(SpectralField::zeros(base.len()));
        }
        let b = self.physical(base)?;
        let up = self.physical(u)?;
        let wp = self.physical(w)?;
        let prod: Vec<f64> = b
            .iter()
            .zip(up.iter().zip(&wp))
            .map(|(b, (u, w))| self.nl.d2f(*b) * u * w)
            .collect();
        self.spectral(&prod)
    }

    /// `sum_k D^2F(base)(Q^{1/2} e_k, Q^{1/2} e_k)` using a precomputed kernel.
    pub fn q_trace_term_with(&self, base: &SpectralField, kernel: &QTraceKernel) -> Result<SpectralField> {
        self.check_len(base)?;
        if kernel.values().len() != self.len() {
            return invalid("trace kernel size does not match the grid");
        }
        if self.nl.affine_slope().is_some() {
            return Ok(SpectralField::zeros(base.len()));
        }
        let b = self.physical(base)?;
        let prod: Vec<f64> = b
            .iter()
            .zip(kernel.values())
            .map(|(b, k)| self.nl.d2f(*b) * k)
            .collect();
        self.spectral(&prod)
    }

    pub fn q_trace_term(&self, base: &SpectralField, noise: &NoiseSpec) -> Result<SpectralField> {
        let kernel = QTraceKernel::new(noise, self.len())?;
        self.q_trace_term_with(base, &kernel)
    }
}

/// Outcome of checking the trace-class regularity condition on `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub beta_in_range: bool,
    /// `beta < rho + 1 - 1/alpha` (for `alpha = 2`: `beta < rho + 1/2`).
    pub decay_ok: bool,
    /// `sum_{i <= n} lambda_i^{beta - 1} q_i`.
    pub hs_sum: f64,
    /// Integral estimate of the omitted tail `sum_{i > n}`, assuming
    /// `lambda_i ~ lambda_n (i/n)^alpha` and `q_i ~ q_n (lambda_i/lambda_n)^{-rho}`.
    /// Infinite when the series diverges.
    pub tail_estimate: f64,
    pub messages: Vec<String>,
}

impl RegimeReport {
    pub fn passed(&self) -> bool {
        self.beta_in_range && self.decay_ok
    }
}

/// Reports (without aborting) whether `||(-A)^{(beta-1)/2} Q^{1/2}||_{HS}` is
/// finite for the configured power-law noise.
pub fn validate_regime(params: &AssumptionParams, noise: &NoiseSpec, op: &SpectralOperator) -> RegimeReport {
    let mut messages = Vec::new();
    let beta_in_range = params.beta > 1.0 && params.beta <= 2.0;
    if !beta_in_range {
        messages.push(format!("beta = {} outside (1, 2]", params.beta));
    }
    // sum_i i^{alpha (beta - 1 - rho)} converges iff the exponent is < -1
    let exponent = params.alpha * (params.beta - 1.0 - params.rho_decay);
    let decay_ok = exponent < -1.0;
    if !decay_ok {
        messages.push(format!(
            "beta = {} not below rho + 1 - 1/alpha = {}",
            params.beta,
            params.rho_decay + 1.0 - 1.0 / params.alpha
        ));
    }
    let n = op.len().min(noise.len());
    let hs_sum: f64 = op.eigenvalues()[..n]
        .iter()
        .zip(&noise.q()[..n])
        .map(|(l, q)| l.powf(params.beta - 1.0) * q)
        .sum();
    let tail_estimate = if decay_ok {
        let last = op.eigenvalues()[n - 1].powf(params.beta - 1.0 - params.rho_decay);
        let nf = n as f64;
        // int_{n + 1/2}^inf last (x/n)^e dx
        last * nf.powf(-exponent) * (nf + 0.5).powf(exponent + 1.0) / (-(exponent + 1.0))
    } else {
        f64::INFINITY
    };
    RegimeReport {
        beta_in_range,
        decay_ok,
        hs_sum,
        tail_estimate,
        messages,
    }
}
