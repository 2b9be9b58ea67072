//! Diagonal spectral representation of the Dirichlet Laplacian on (0, 1).
//!
//! Fields are stored as coefficient vectors in the eigenbasis
//! `e_i(x) = sqrt(2) sin(i pi x)`, where `-A e_i = lambda_i e_i`. Every linear
//! operator used by the solvers (semigroup, phi-function, fractional powers,
//! Galerkin projection) is therefore a per-coefficient multiplication.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Result};

/// Eigenbasis of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// `e_i(x) = sqrt(2) sin(i pi x)` on (0, 1) with homogeneous Dirichlet data.
    DirichletSine,
}

/// Coefficient vector of an `H`-valued field in the eigenbasis of `-A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField(Vec<f64>);

impl SpectralField {
    pub fn new(coefficients: Vec<f64>) -> Self {
        SpectralField(coefficients)
    }

    pub fn zeros(n: usize) -> Self {
        SpectralField(vec![0.0; n])
    }

    /// The `index`-th basis vector (zero based, so `basis(n, 0)` is `e_1`).
    pub fn basis(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        SpectralField(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SpectralField(self.0.iter().map(|c| factor * c).collect())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SpectralField) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        SpectralField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Euclidean norm of the coefficients, i.e. the `H` norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Galerkin projection `P_k`: keeps the first `k` coefficients and zeroes
    /// the rest. The length is unchanged.
    pub fn project(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return invalid(format!(
                "projection onto {k} modes of a field with {} modes",
                self.len()
            ));
        }
        let mut out = self.clone();
        out.0[k..].iter_mut().for_each(|c| *c = 0.0);
        Ok(out)
    }
}

impl From<Vec<f64>> for SpectralField {
    fn from(v: Vec<f64>) -> Self {
        SpectralField(v)
    }
}

/// `(1 - e^{-x}) / x`, continuous at `x = 0`.
pub fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// The diagonal operator `A` with eigenvalues `-lambda_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    basis: BasisKind,
}

impl SpectralOperator {
    /// Dirichlet Laplacian truncated to `n` modes: `lambda_i = pi^2 i^2`.
    pub fn dirichlet_laplacian(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("mode count must be at least 1");
        }
        let eigenvalues = (1..=n).map(|i| PI * PI * (i * i) as f64).collect();
        Ok(SpectralOperator {
            eigenvalues,
            basis: BasisKind::DirichletSine,
        })
    }

    /// Operator with explicitly given eigenvalues of `-A` (strictly positive,
    /// non-decreasing). Used for synthetic spectra and for eigen-coordinates of
    /// finite-dimensional drift matrices.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return invalid("mode count must be at least 1");
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return invalid("eigenvalues must be finite and strictly positive");
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return invalid("eigenvalues must be non-decreasing");
        }
        Ok(SpectralOperator {
            eigenvalues,
            basis: BasisKind::DirichletSine,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis_kind(&self) -> BasisKind {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    fn check_paired(&self, v: &SpectralField) -> Result<()> {
        if v.len() != self.len() {
            return invalid(format!(
                "field has {} modes, operator has {}",
                v.len(),
                self.len()
            ));
        }
        Ok(())
    }

    /// `E(t) v = e^{tA} v`.
    pub fn semigroup_apply(&self, t: f64, v: &SpectralField) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return invalid(format!("semigroup time must be nonnegative, got {t}"));
        }
        self.check_paired(v)?;
        Ok(SpectralField(
            self.eigenvalues
                .iter()
                .zip(v.coeffs())
                .map(|(l, c)| (-l * t).exp() * c)
                .collect(),
        ))
    }

    /// `A^{-1}(E(tau) - I) v`, coefficient-wise `tau * phi1(lambda_i tau) v_i`.
    pub fn phi1_apply(&self, tau: f64, v: &SpectralField) -> Result<SpectralField> {
        if !(tau > 0.0) {
            return invalid(format!("step size must be positive, got {tau}"));
        }
        self.check_paired(v)?;
        Ok(SpectralField(
            self.eigenvalues
                .iter()
                .zip(v.coeffs())
                .map(|(l, c)| tau * phi1(l * tau) * c)
                .collect(),
        ))
    }

    /// `||v||_r = ||(-A)^{r/2} v||`.
    pub fn fractional_norm(&self, v: &SpectralField, r: f64) -> Result<f64> {
        self.check_paired(v)?;
        Ok(self
            .eigenvalues
            .iter()
            .zip(v.coeffs())
            .map(|(l, c)| l.powf(r) * c * c)
            .sum::<f64>()
            .sqrt())
    }

    /// `A v`, coefficient-wise `-lambda_i v_i`.
    pub fn apply(&self, v: &SpectralField) -> Result<SpectralField> {
        self.check_paired(v)?;
        Ok(SpectralField(
            self.eigenvalues
                .iter()
                .zip(v.coeffs())
                .map(|(l, c)| -l * c)
                .collect(),
        ))
    }
}

/// Dense discrete sine transform between spectral coefficients and values at
/// the collocation points `x_j = j / (n + 1)`, `j = 1..n`.
///
/// The forward map is `values_j = sum_i v_i sqrt(2) sin(i pi x_j)`. The matrix
/// `S_ij = sqrt(2) sin(i j pi / (n + 1))` is symmetric with `S S = (n + 1) I`,
/// so the inverse is `v = S values / (n + 1)` and
/// `sum_j values_j^2 / (n + 1) = sum_i v_i^2`.
#[derive(Debug, Clone)]
pub struct SineTransform {
    n: usize,
    // row-major, symmetric
    table: Vec<f64>,
}

impl SineTransform {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("transform size must be at least 1");
        }
        let denom = (n + 1) as f64;
        let mut table = vec![0.0; n * n];
        for i in 1..=n {
            for j in 1..=n {
                // reduce i*j modulo 2(n+1) so the sine argument stays small
                let k = (i * j) % (2 * (n + 1));
                table[(i - 1) * n + (j - 1)] = SQRT_2 * (PI * k as f64 / denom).sin();
            }
        }
        Ok(SineTransform { n, table })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Collocation points `x_j = j / (n + 1)`.
    pub fn grid(&self) -> Vec<f64> {
        let denom = (self.n + 1) as f64;
        (1..=self.n).map(|j| j as f64 / denom).collect()
    }

    // out = S * x, written as a sum of rows so the inner loop is a plain axpy.
    fn apply_table(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &xi) in self.table.chunks_exact(n).zip(x) {
            if xi == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(row) {
                *o += xi * s;
            }
        }
    }

    pub fn to_physical_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_table(v, out);
    }

    pub fn to_spectral_into(&self, values: &[f64], out: &mut [f64]) {
        self.apply_table(values, out);
        let scale = 1.0 / (self.n + 1) as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    pub fn to_physical(&self, v: &SpectralField) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return invalid(format!(
                "field has {} modes, transform has {}",
                v.len(),
                self.n
            ));
        }
        let mut out = vec![0.0; self.n];
        self.to_physical_into(v.coeffs(), &mut out);
        Ok(out)
    }

    pub fn to_spectral(&self, values: &[f64]) -> Result<SpectralField> {
        if values.len() != self.n {
            return invalid(format!(
                "{} values for a transform of size {}",
                values.len(),
                self.n
            ));
        }
        let mut out = vec![0.0; self.n];
        self.to_spectral_into(values, &mut out);
        Ok(SpectralField(out))
    }
}

/// Evaluates `sum_i v_i e_i(x_j)` on the collocation grid of size `v.len()`.
pub fn sine_transform_to_physical(v: &SpectralField) -> Result<Vec<f64>> {
    SineTransform::new(v.len())?.to_physical(v)
}

/// Inverse of [`sine_transform_to_physical`].
pub fn sine_transform_to_spectral(values: &[f64]) -> Result<SpectralField> {
    SineTransform::new(values.len())?.to_spectral(values)
}

/// Regime parameters carried for validation and reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionParams {
    pub beta: f64,
    pub rho_decay: f64,
    pub lipschitz: f64,
    pub eta: f64,
    pub delta: f64,
    pub sigma: f64,
    /// Eigenvalue growth exponent, `lambda_n ~ n^alpha`.
    pub alpha: f64,
}

impl Default for AssumptionParams {
    fn default() -> Self {
        AssumptionParams {
            beta: 2.0,
            rho_decay: 2.0,
            lipschitz: 1.0,
            eta: 1.0,
            delta: 1.0,
            sigma: 1.0,
            alpha: 2.0,
        }
    }
}

impl AssumptionParams {
    /// Checks the interval constraints on each parameter.
    pub fn validate(&self) -> Result<()> {
        let p = self;
        if !(p.beta > 1.0 && p.beta <= 2.0) {
            return invalid(format!("beta = {} outside (1, 2]", p.beta));
        }
        if !(p.rho_decay > 0.0) {
            return invalid(format!("rho_decay = {} must be positive", p.rho_decay));
        }
        if !(p.lipschitz > 0.0) {
            return invalid(format!("L = {} must be positive", p.lipschitz));
        }
        if !(1.0..2.0).contains(&p.eta) {
            return invalid(format!("eta = {} outside [1, 2)", p.eta));
        }
        if !(1.0..2.0).contains(&p.delta) {
            return invalid(format!("delta = {} outside [1, 2)", p.delta));
        }
        if !(p.sigma >= 0.0 && p.sigma < p.beta) {
            return invalid(format!("sigma = {} outside [0, beta)", p.sigma));
        }
        if !(p.alpha > 0.0) {
            return invalid(format!("alpha = {} must be positive", p.alpha));
        }
        Ok(())
    }
}
