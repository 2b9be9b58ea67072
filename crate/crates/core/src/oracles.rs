//! Gaussian ground truth for linear drift.
//!
//! With `F(u) = c u` every mode pair `(X_i, U_i)` solves a 2-D linear SDE, and
//! with `b(y) = B y` the stacked `(Y, M)` does too. Their laws are Gaussian
//! with mean `mu' = G mu` and covariance `P' = G P + P G^T + B B^T`, integrated
//! here by classical RK4. Nothing in this module touches the noise tables or
//! the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::integrators::{Model, SodeDrift, SodeModel, INDEPENDENT_NOISE_WEIGHT};
use crate::nemytskii::Nonlinearity;

/// Default number of RK4 steps over `[0, t]`.
pub const ORACLE_STEPS: usize = 2000;

/// Largest `|G| h` allowed before the step count is raised above
/// [`ORACLE_STEPS`]; RK4 is unstable for `|G| h > 2.78`, and stiff high modes
/// would otherwise blow up.
const MAX_STIFFNESS_PER_STEP: f64 = 0.1;

/// Mean and covariance of a Gaussian vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// `dZ = G Z dt + B dW` with `W` standard Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSystem {
    drift: DMatrix<f64>,
    diffusion: DMatrix<f64>,
    source: DMatrix<f64>,
}

impl LyapunovSystem {
    pub fn new(drift: DMatrix<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        if !drift.is_square() || diffusion.nrows() != drift.nrows() {
            return invalid(format!(
                "drift {:?} and diffusion {:?} shapes are incompatible",
                drift.shape(),
                diffusion.shape()
            ));
        }
        if drift.iter().chain(diffusion.iter()).any(|v| !v.is_finite()) {
            return invalid("Lyapunov coefficients must be finite");
        }
        let source = &diffusion * diffusion.transpose();
        Ok(LyapunovSystem {
            drift,
            diffusion,
            source,
        })
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    /// [`ORACLE_STEPS`], or more when the drift is too stiff for that many.
    pub fn default_steps(&self, t: f64) -> usize {
        let stiffness = self.drift.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let needed = (t * stiffness / MAX_STIFFNESS_PER_STEP).ceil() as usize;
        ORACLE_STEPS.max(needed)
    }

    /// Moments at time `t` starting from the deterministic state `z0`.
    pub fn moments(&self, z0: &DVector<f64>, t: f64) -> Result<GaussianMoments> {
        self.moments_with_steps(z0, t, self.default_steps(t))
    }

    pub fn moments_with_steps(&self, z0: &DVector<f64>, t: f64, steps: usize) -> Result<GaussianMoments> {
        if z0.len() != self.drift.nrows() {
            return invalid("initial state has the wrong dimension");
        }
        if !(t >= 0.0 && t.is_finite()) || steps == 0 {
            return invalid(format!("need t >= 0 and at least one step, got t = {t}, steps = {steps}"));
        }
        let g = &self.drift;
        let dim = g.nrows();
        let h = t / steps as f64;
        let mut mu = z0.clone();
        let mut p = DMatrix::zeros(dim, dim);
        let cov_rate = |p: &DMatrix<f64>| {
            let gp = g * p;
            &gp + gp.transpose() + &self.source
        };
        for _ in 0..steps {
            let k1 = g * &mu;
            let k2 = g * (&mu + &k1 * (0.5 * h));
            let k3 = g * (&mu + &k2 * (0.5 * h));
            let k4 = g * (&mu + &k3 * h);
            mu += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

            let l1 = cov_rate(&p);
            let l2 = cov_rate(&(&p + &l1 * (0.5 * h)));
            let l3 = cov_rate(&(&p + &l2 * (0.5 * h)));
            let l4 = cov_rate(&(&p + &l3 * h));
            p += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        }
        let cov = (&p + p.transpose()) * 0.5;
        Ok(GaussianMoments { mean: mu, cov })
    }
}

/// Per-mode law of `(X_i(t), U_i(t))` under `F(u) = c u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLimitOracle {
    pub t: f64,
    pub modes: Vec<GaussianMoments>,
}

impl LinearLimitOracle {
    pub fn mean_x(&self, i: usize) -> f64 {
        self.modes[i].mean[0]
    }

    pub fn mean_u(&self, i: usize) -> f64 {
        self.modes[i].mean[1]
    }

    pub fn var_x(&self, i: usize) -> f64 {
        self.modes[i].cov[(0, 0)]
    }

    pub fn var_u(&self, i: usize) -> f64 {
        self.modes[i].cov[(1, 1)]
    }

    pub fn cov_xu(&self, i: usize) -> f64 {
        self.modes[i].cov[(0, 1)]
    }

    /// Means of `U_1 .. U_k`.
    pub fn u_means(&self, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.mean_u(i)).collect()
    }

    /// Covariance of `(U_1 .. U_k)`; modes are independent, so it is diagonal.
    pub fn u_covariance(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(k, (0..k).map(|i| self.var_u(i))))
    }
}

/// The 2-D system of mode `i` for `F(u) = c u` on horizon `t_end`.
pub fn linear_mode_system(lambda: f64, q: f64, c: f64, t_end: f64) -> Result<LyapunovSystem> {
    let a = -lambda + c;
    let drift = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.5 * t_end * c * (lambda - c), a]);
    let sq = q.sqrt();
    let diffusion = DMatrix::from_row_slice(
        2,
        2,
        &[sq, 0.0, -0.5 * t_end * c * sq, -INDEPENDENT_NOISE_WEIGHT * t_end * c * sq],
    );
    LyapunovSystem::new(drift, diffusion)
}

fn linear_slope(model: &Model) -> Result<f64> {
    match model.spec().nl {
        Nonlinearity::Linear(c) => Ok(c),
        Nonlinearity::Zero => Ok(0.0),
        other => invalid(format!("Gaussian oracle needs linear drift, got {other:?}")),
    }
}

fn check_time(t: f64, t_end: f64) -> Result<()> {
    if !(0.0..=t_end * (1.0 + 1e-12)).contains(&t) {
        return invalid(format!("oracle time {t} outside [0, {t_end}]"));
    }
    Ok(())
}

/// Law of every mode pair `(X_i(t), U_i(t))` for `nl = Linear(c)`.
pub fn linear_limit_covariance(model: &Model, t: f64) -> Result<LinearLimitOracle> {
    linear_limit_covariance_impl(model, t, None)
}

/// As [`linear_limit_covariance`] with an explicit RK4 step count.
pub fn linear_limit_covariance_with_steps(model: &Model, t: f64, steps: usize) -> Result<LinearLimitOracle> {
    linear_limit_covariance_impl(model, t, Some(steps))
}

fn linear_limit_covariance_impl(model: &Model, t: f64, steps: Option<usize>) -> Result<LinearLimitOracle> {
    let c = linear_slope(model)?;
    let spec = model.spec();
    check_time(t, spec.t_end)?;
    let modes = spec
        .op
        .eigenvalues()
        .iter()
        .zip(spec.noise.q())
        .zip(spec.x0.coeffs())
        .map(|((&lambda, &q), &x0)| {
            let sys = linear_mode_system(lambda, q, c, spec.t_end)?;
            let z0 = DVector::from_column_slice(&[x0, 0.0]);
            sys.moments_with_steps(&z0, t, steps.unwrap_or_else(|| sys.default_steps(t)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearLimitOracle { t, modes })
}

/// Closed-form Ornstein–Uhlenbeck moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OuMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// `E X_i(t) = e^{-lambda_i t} X0_i`, `Var X_i(t) = q_i (1 - e^{-2 lambda_i t}) / (2 lambda_i)`.
pub fn ou_exact_moments(model: &Model, t: f64) -> Result<OuMoments> {
    if model.spec().nl != Nonlinearity::Zero {
        return invalid("Ornstein-Uhlenbeck moments need nl = Zero");
    }
    if !(t >= 0.0 && t.is_finite()) {
        return invalid(format!("time must be nonnegative, got {t}"));
    }
    let spec = model.spec();
    let lambdas = spec.op.eigenvalues();
    let mean = lambdas.iter().zip(spec.x0.coeffs()).map(|(l, x)| (-l * t).exp() * x).collect();
    let var = lambdas
        .iter()
        .zip(spec.noise.q())
        .map(|(&l, &q)| ou_variance(l, q, t))
        .collect();
    Ok(OuMoments { mean, var })
}

/// `q (1 - e^{-2 lambda t}) / (2 lambda)`.
pub fn ou_variance(lambda: f64, q: f64, t: f64) -> f64 {
    -q * (-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
}

/// The stacked `(Y, M)` system for `b(y) = B y`:
/// `dY = (C + B) Y dt + dW`,
/// `dM = ((C + B) M - (T/2) B (C + B) Y) dt - (T/2) B dW - (sqrt(3) T / 6) B dW~`.
pub fn sode_limit_system(model: &SodeModel) -> Result<LyapunovSystem> {
    let b = match model.drift() {
        SodeDrift::Linear(b) => b.clone(),
        SodeDrift::Zero => DMatrix::zeros(model.dim(), model.dim()),
        other => return invalid(format!("Gaussian oracle needs linear drift, got {other:?}")),
    };
    let d = model.dim();
    let t_end = model.t_end();
    let cb = model.c() + &b;
    let mut drift = DMatrix::zeros(2 * d, 2 * d);
    drift.view_mut((0, 0), (d, d)).copy_from(&cb);
    drift.view_mut((d, d), (d, d)).copy_from(&cb);
    drift.view_mut((d, 0), (d, d)).copy_from(&(&b * &cb * (-0.5 * t_end)));
    let mut diffusion = DMatrix::zeros(2 * d, 2 * d);
    diffusion.view_mut((0, 0), (d, d)).fill_with_identity();
    diffusion.view_mut((d, 0), (d, d)).copy_from(&(&b * (-0.5 * t_end)));
    diffusion.view_mut((d, d), (d, d)).copy_from(&(&b * (-INDEPENDENT_NOISE_WEIGHT * t_end)));
    LyapunovSystem::new(drift, diffusion)
}

/// Law of `(Y(t), M(t))` (first `d` coordinates `Y`) for `b(y) = B y`.
pub fn sode_linear_limit_covariance(model: &SodeModel, t: f64) -> Result<GaussianMoments> {
    check_time(t, model.t_end())?;
    let sys = sode_limit_system(model)?;
    let d = model.dim();
    let mut z0 = DVector::zeros(2 * d);
    z0.rows_mut(0, d).copy_from(model.y0());
    sys.moments(&z0, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use approx::assert_relative_eq;

    use crate::integrators::ModelSpec;
    use crate::nemytskii::NoiseSpec;
    use crate::spectral::{AssumptionParams, SpectralField, SpectralOperator};

    fn model(n: usize, nl: Nonlinearity) -> Model {
        let op = SpectralOperator::dirichlet_laplacian(n).unwrap();
        Model::new(ModelSpec {
            noise: NoiseSpec::power_law(&op, 2.0).unwrap(),
            op,
            nl,
            params: AssumptionParams::default(),
            t_end: 1.0,
            x0: SpectralField::basis(n, 0),
        })
        .unwrap()
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigenvalues().min()
    }

    #[test]
    fn ou_scalar_value() {
        // (1 - e^{-0.2 pi^2}) / (2 pi^2)
        let v = ou_variance(PI * PI, 1.0, 0.1);
        assert_relative_eq!(v, 0.043_623_271_605_605_44, max_relative = 1e-13);
        assert_eq!(ou_variance(3.0, 1.0, 0.0), 0.0);
        let stationary = ou_variance(5.0, 2.0, 10.0);
        assert_relative_eq!(stationary, 0.2, max_relative = 1e-20);
    }

    #[test]
    fn ou_moments_at_time_zero() {
        let m = model(4, Nonlinearity::Zero);
        let mo = ou_exact_moments(&m, 0.0).unwrap();
        assert_eq!(mo.var, vec![0.0; 4]);
        assert_eq!(mo.mean, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(ou_exact_moments(&model(4, Nonlinearity::Linear(1.0)), 0.5).is_err());
    }

    #[test]
    fn zero_slope_gives_degenerate_u() {
        let m = model(6, Nonlinearity::Linear(0.0));
        let o = linear_limit_covariance(&m, 1.0).unwrap();
        let ou = ou_exact_moments(&model(6, Nonlinearity::Zero), 1.0).unwrap();
        for i in 0..6 {
            assert_eq!(o.var_u(i), 0.0);
            assert_eq!(o.mean_u(i), 0.0);
            assert_eq!(o.cov_xu(i), 0.0);
            assert_relative_eq!(o.var_x(i), ou.var[i], max_relative = 1e-10);
            assert_relative_eq!(o.mean_x(i), ou.mean[i], epsilon = 1e-14, max_relative = 1e-8);
        }
    }

    #[test]
    fn time_zero_is_deterministic() {
        let o = linear_limit_covariance(&model(3, Nonlinearity::Linear(0.5)), 0.0).unwrap();
        for g in &o.modes {
            assert!(g.cov.iter().all(|&v| v == 0.0));
        }
        assert!(linear_limit_covariance(&model(3, Nonlinearity::Linear(0.5)), 1.5).is_err());
        assert!(linear_limit_covariance(&model(3, Nonlinearity::Sine(1.0)), 1.0).is_err());
    }

    #[test]
    fn step_halving_is_self_consistent() {
        let m = model(5, Nonlinearity::Linear(0.5));
        let a = linear_limit_covariance_with_steps(&m, 1.0, ORACLE_STEPS).unwrap();
        let b = linear_limit_covariance_with_steps(&m, 1.0, 2 * ORACLE_STEPS).unwrap();
        for (x, y) in a.modes.iter().zip(&b.modes) {
            for (u, v) in x.cov.iter().zip(y.cov.iter()) {
                assert!((u - v).abs() <= 1e-8 * v.abs().max(1e-300), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn stiff_modes_stay_stable_and_psd() {
        let m = model(64, Nonlinearity::Linear(0.5));
        let o = linear_limit_covariance(&m, 1.0).unwrap();
        for (i, g) in o.modes.iter().enumerate() {
            assert!(g.cov.iter().all(|v| v.is_finite()));
            assert!(min_eigenvalue(&g.cov) >= -1e-12, "mode {i}");
        }
        // high modes are stationary: Var X -> q / (2 (lambda - c))
        let lam = m.spec().op.eigenvalues()[63];
        let q = m.spec().noise.q()[63];
        assert_relative_eq!(o.var_x(63), q / (2.0 * (lam - 0.5)), max_relative = 1e-10);
    }

    #[test]
    fn limit_variance_has_the_t_squared_over_three_weight() {
        // first-order in c: Var U ~ c^2 (T^2/3) * (stationary-ish integral); check
        // the ratio of the two noise contributions directly on the diffusion
        let sys = linear_mode_system(PI * PI, 1.0, 0.7, 2.0).unwrap();
        let bbt = sys.diffusion() * sys.diffusion().transpose();
        assert_relative_eq!(bbt[(1, 1)], 0.7 * 0.7 * 4.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn sode_oracle_matches_spde_oracle_in_one_dimension() {
        let c = 0.6;
        let spde = {
            let op = SpectralOperator::dirichlet_laplacian(1).unwrap();
            Model::new(ModelSpec {
                op,
                nl: Nonlinearity::Linear(c),
                noise: NoiseSpec::new(vec![1.0]).unwrap(),
                params: AssumptionParams::default(),
                t_end: 1.0,
                x0: SpectralField::new(vec![0.8]),
            })
            .unwrap()
        };
        let sode = SodeModel::new(
            DMatrix::from_element(1, 1, -PI * PI),
            SodeDrift::Linear(DMatrix::from_element(1, 1, c)),
            1.0,
            DVector::from_element(1, 0.8),
        )
        .unwrap();
        for t in [0.3, 1.0] {
            let a = linear_limit_covariance(&spde, t).unwrap();
            let b = sode_linear_limit_covariance(&sode, t).unwrap();
            assert_relative_eq!(a.modes[0].cov, b.cov, max_relative = 1e-12);
            assert_relative_eq!(a.modes[0].mean, b.mean, max_relative = 1e-12);
        }
    }

    #[test]
    fn sode_oracle_degenerate_cases() {
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let y0 = DVector::from_column_slice(&[1.0, 1.0]);
        let zero = SodeModel::new(c.clone(), SodeDrift::Linear(DMatrix::zeros(2, 2)), 1.0, y0.clone()).unwrap();
        let g = sode_linear_limit_covariance(&zero, 1.0).unwrap();
        assert!(g.cov.view((2, 2), (2, 2)).iter().all(|&v| v == 0.0));
        assert_relative_eq!(g.cov[(1, 1)], ou_variance(2.0, 1.0, 1.0), max_relative = 1e-10);

        let b = DMatrix::from_row_slice(2, 2, &[0.4, 0.3, -0.3, 0.4]);
        let lin = SodeModel::new(c.clone(), SodeDrift::Linear(b), 1.0, y0.clone()).unwrap();
        let g0 = sode_linear_limit_covariance(&lin, 0.0).unwrap();
        assert!(g0.cov.iter().all(|&v| v == 0.0));
        let g1 = sode_linear_limit_covariance(&lin, 1.0).unwrap();
        assert!(min_eigenvalue(&g1.cov) >= -1e-12);

        let sine = SodeModel::new(c, SodeDrift::Sine(1.0), 1.0, y0).unwrap();
        assert!(sode_linear_limit_covariance(&sine, 1.0).is_err());
    }
}
