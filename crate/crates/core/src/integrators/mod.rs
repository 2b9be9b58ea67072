//! Time steppers driven by a shared [`NoiseTable`].
//!
//! - [`aee_solve`]: the accelerated exponential Euler scheme
//!   `X_{k+1} = E(tau) X_k + A^{-1}(E(tau) - I) F(X_k) + int E(t_{k+1} - s) dW^Q(s)`
//!   on any grid whose nodes are table nodes;
//! - [`reference_solve`]: the same scheme on the finest grid, standing in for
//!   the exact mild solution;
//! - [`limit_u_solve`]: exponential left-point stepping of the linear equation
//!   satisfied by the limit of the normalized error `m (X^m - X)`;
//! - [`sode`]: the finite-dimensional analogue with a symmetric negative
//!   definite drift matrix.

pub mod sode;

use crate::error::{invalid, Result};
use crate::nemytskii::{NemytskiiOperator, Nonlinearity, NoiseSpec, QTraceKernel};
use crate::noise::NoiseTable;
use crate::spectral::{phi1, AssumptionParams, SpectralField, SpectralOperator};

pub use sode::{
    expm_symmetric, sode_aee_solve, sode_limit_noise_forcing, sode_limit_solve, sode_reference_solve,
    SodeDrift, SodeModel, SodePath,
};

/// `sqrt(3) / 6`, the weight of the independent noise in the limit equation.
pub const INDEPENDENT_NOISE_WEIGHT: f64 = 0.288_675_134_594_812_88;

/// The semilinear SPDE `dX = (AX + F(X)) dt + dW^Q`, `X(0) = X0`, on `[0, T]`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub op: SpectralOperator,
    pub nl: Nonlinearity,
    pub noise: NoiseSpec,
    pub params: AssumptionParams,
    pub t_end: f64,
    pub x0: SpectralField,
}

/// A validated [`ModelSpec`] with its collocation machinery prepared.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    nem: NemytskiiOperator,
    kernel: QTraceKernel,
    sqrt_q: Vec<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let n = spec.op.len();
        if spec.noise.len() != n || spec.x0.len() != n {
            return invalid(format!(
                "mode counts differ: operator {n}, noise {}, initial data {}",
                spec.noise.len(),
                spec.x0.len()
            ));
        }
        if !(spec.t_end > 0.0 && spec.t_end.is_finite()) {
            return invalid(format!("horizon must be positive, got {}", spec.t_end));
        }
        if !spec.x0.is_finite() {
            return invalid("initial data must be finite");
        }
        let nem = NemytskiiOperator::new(spec.nl, n)?;
        let kernel = QTraceKernel::new(&spec.noise, n)?;
        let sqrt_q = spec.noise.sqrt_q();
        Ok(Model {
            spec,
            nem,
            kernel,
            sqrt_q,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn modes(&self) -> usize {
        self.spec.op.len()
    }

    pub fn nemytskii(&self) -> &NemytskiiOperator {
        &self.nem
    }

    pub fn trace_kernel(&self) -> &QTraceKernel {
        &self.kernel
    }

    fn check_table(&self, table: &NoiseTable) -> Result<()> {
        if table.modes() != self.modes() {
            return invalid(format!(
                "noise table has {} modes, model has {}",
                table.modes(),
                self.modes()
            ));
        }
        let t = table.grid().t_end;
        if (t - self.spec.t_end).abs() > 1e-12 * self.spec.t_end {
            return invalid(format!("noise table horizon {t} differs from model horizon {}", self.spec.t_end));
        }
        if table.lambdas() != self.spec.op.eigenvalues() {
            return invalid("noise table was sampled for a different operator");
        }
        Ok(())
    }
}

/// States sampled at increasing times starting from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
}

impl Trajectory {
    pub fn terminal(&self) -> &SpectralField {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn node_times(t_end: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect()
}

/// Runs the AEE recursion on `coarse_m` steps, keeping only the first `modes`
/// coefficients (spectral Galerkin truncation `P_n`). `observe` sees every
/// node including the initial one.
fn aee_run(
    model: &Model,
    table: &NoiseTable,
    coarse_m: usize,
    modes: usize,
    mut observe: impl FnMut(&SpectralField),
) -> Result<()> {
    model.check_table(table)?;
    let n = model.modes();
    if modes == 0 || modes > n {
        return invalid(format!("Galerkin truncation to {modes} of {n} modes"));
    }
    let (_, conv) = table.coarse_increments(coarse_m)?;
    let tau = model.spec.t_end / coarse_m as f64;
    let lambdas = model.spec.op.eigenvalues();
    let decay: Vec<f64> = lambdas.iter().map(|l| (-l * tau).exp()).collect();
    let weight: Vec<f64> = lambdas.iter().map(|l| tau * phi1(l * tau)).collect();

    let mut x = model.spec.x0.project(modes)?;
    observe(&x);
    for k in 0..coarse_m {
        let fx = model.nem.apply(&x)?;
        let conv_k = &conv[k * n..(k + 1) * n];
        let c = x.coeffs_mut();
        for i in 0..modes {
            c[i] = decay[i] * c[i] + weight[i] * fx.coeffs()[i] + model.sqrt_q[i] * conv_k[i];
        }
        observe(&x);
    }
    Ok(())
}

/// AEE states at the `coarse_m + 1` nodes `t_k = k T / coarse_m`.
pub fn aee_solve(model: &Model, table: &NoiseTable, coarse_m: usize) -> Result<Trajectory> {
    aee_solve_galerkin(model, table, coarse_m, model.modes())
}

/// Fully discrete AEE: Galerkin truncation to the first `modes` modes.
pub fn aee_solve_galerkin(model: &Model, table: &NoiseTable, coarse_m: usize, modes: usize) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(coarse_m + 1);
    aee_run(model, table, coarse_m, modes, |x| states.push(x.clone()))?;
    Ok(Trajectory {
        times: node_times(model.spec.t_end, coarse_m),
        states,
    })
}

/// Terminal AEE state only.
pub fn aee_terminal(model: &Model, table: &NoiseTable, coarse_m: usize, modes: usize) -> Result<SpectralField> {
    let mut last = None;
    aee_run(model, table, coarse_m, modes, |x| last = Some(x.clone()))?;
    Ok(last.expect("at least the initial state is observed"))
}

/// AEE on every fine step of the table. Its distance to the exact mild
/// solution is `O(1 / (m R))`.
pub fn reference_solve(model: &Model, table: &NoiseTable) -> Result<Trajectory> {
    aee_solve(model, table, table.grid().fine_steps())
}

/// Limit error process `U` on the fine grid of the tables, started at zero.
pub fn limit_u_solve(
    model: &Model,
    table_w: &NoiseTable,
    table_wt: &NoiseTable,
    x_ref: &Trajectory,
) -> Result<Trajectory> {
    limit_u_solve_from(model, table_w, table_wt, x_ref, &SpectralField::zeros(model.modes()))
}

/// Limit error process started at `u0`; the equation is affine in `U`.
///
/// One step of length `h` from `t_j`, with `X = X_ref(t_j)` and `T` the horizon:
///
/// ```text
/// U_{j+1} = E(h) [ U_j + h DF(X) U_j - (T/2) h DF(X) A X - (T/2) h DF(X) F(X)
///                  - (T/4) h sum_k D^2F(X)(Q^{1/2} e_k, Q^{1/2} e_k)
///                  - (T/2) DF(X) dW^Q_j - (sqrt(3) T / 6) DF(X) dW~^Q_j ]
/// ```
pub fn limit_u_solve_from(
    model: &Model,
    table_w: &NoiseTable,
    table_wt: &NoiseTable,
    x_ref: &Trajectory,
    u0: &SpectralField,
) -> Result<Trajectory> {
    model.check_table(table_w)?;
    model.check_table(table_wt)?;
    if table_w.grid() != table_wt.grid() {
        return invalid("W and W~ tables are sampled on different grids");
    }
    let steps = table_w.grid().fine_steps();
    if x_ref.len() != steps + 1 {
        return invalid(format!(
            "reference path has {} nodes, fine grid has {}",
            x_ref.len(),
            steps + 1
        ));
    }
    let n = model.modes();
    if u0.len() != n {
        return invalid("initial error field has the wrong mode count");
    }
    let h = table_w.grid().fine_step();
    let t_end = model.spec.t_end;
    let lambdas = model.spec.op.eigenvalues();
    let decay: Vec<f64> = lambdas.iter().map(|l| (-l * h).exp()).collect();
    let half_t = 0.5 * t_end;
    let indep = INDEPENDENT_NOISE_WEIGHT * t_end;

    let mut u = u0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(u.clone());

    match model.spec.nl.affine_slope() {
        Some(c) => {
            // DF = c I, D^2F = 0, F(X) = c X: every mode decouples
            for j in 0..steps {
                let x = x_ref.states[j].coeffs();
                let (dw, dwt) = (table_w.db_step(j), table_wt.db_step(j));
                let uc = u.coeffs_mut();
                for i in 0..n {
                    let forcing = h * (c * uc[i] + half_t * c * lambdas[i] * x[i] - half_t * c * c * x[i])
                        - half_t * c * model.sqrt_q[i] * dw[i]
                        - indep * c * model.sqrt_q[i] * dwt[i];
                    uc[i] = decay[i] * (uc[i] + forcing);
                }
                states.push(u.clone());
            }
        }
        None => {
            let nl = model.spec.nl;
            let transform = model.nem.transform();
            let kappa = model.kernel.values();
            let mut xp = vec![0.0; n];
            let mut dir = vec![0.0; n];
            let mut dirp = vec![0.0; n];
            let mut incr = vec![0.0; n];
            for j in 0..steps {
                let x = x_ref.states[j].coeffs();
                let (dw, dwt) = (table_w.db_step(j), table_wt.db_step(j));
                transform.to_physical_into(x, &mut xp);
                // spectral part of the direction DF(X) acts on
                let uc = u.coeffs();
                for i in 0..n {
                    dir[i] = h * uc[i] + half_t * h * lambdas[i] * x[i]
                        - half_t * model.sqrt_q[i] * dw[i]
                        - indep * model.sqrt_q[i] * dwt[i];
                }
                transform.to_physical_into(&dir, &mut dirp);
                // F(X) is f(X) on the grid, so DF(X) F(X) is f'(X) f(X) pointwise
                for ((d, &xv), &kv) in dirp.iter_mut().zip(&xp).zip(kappa) {
                    *d = nl.df(xv) * (*d - half_t * h * nl.f(xv)) - 0.5 * half_t * h * nl.d2f(xv) * kv;
                }
                if dirp.iter().any(|v| !v.is_finite()) {
                    return Err(crate::error::LabError::NumericOverflow(format!(
                        "limit equation diverged at step {j}"
                    )));
                }
                transform.to_spectral_into(&dirp, &mut incr);
                let uc = u.coeffs_mut();
                for i in 0..n {
                    uc[i] = decay[i] * (uc[i] + incr[i]);
                }
                states.push(u.clone());
            }
        }
    }
    Ok(Trajectory {
        times: node_times(t_end, steps),
        states,
    })
}

/// Same recursion as [`limit_u_solve_from`] but assembled from the generic
/// operator calls (`jacobian_apply`, `apply`, `q_trace_term`). Slower; kept to
/// cross-check the fused kernels.
pub fn limit_u_solve_reference_form(
    model: &Model,
    table_w: &NoiseTable,
    table_wt: &NoiseTable,
    x_ref: &Trajectory,
) -> Result<Trajectory> {
    model.check_table(table_w)?;
    model.check_table(table_wt)?;
    let steps = table_w.grid().fine_steps();
    if x_ref.len() != steps + 1 {
        return invalid("reference path does not match the fine grid");
    }
    let n = model.modes();
    let h = table_w.grid().fine_step();
    let t_end = model.spec.t_end;
    let op = &model.spec.op;
    let mut u = SpectralField::zeros(n);
    let mut states = vec![u.clone()];
    for j in 0..steps {
        let x = &x_ref.states[j];
        let ax = op.apply(x)?;
        let fx = model.nem.apply(x)?;
        let dw = SpectralField::new((0..n).map(|i| model.sqrt_q[i] * table_w.db(i, j)).collect());
        let dwt = SpectralField::new((0..n).map(|i| model.sqrt_q[i] * table_wt.db(i, j)).collect());
        let mut next = u.clone();
        next.axpy(h, &model.nem.jacobian_apply(x, &u)?);
        next.axpy(-0.5 * t_end * h, &model.nem.jacobian_apply(x, &ax)?);
        next.axpy(-0.5 * t_end * h, &model.nem.jacobian_apply(x, &fx)?);
        next.axpy(-0.25 * t_end * h, &model.nem.q_trace_term_with(x, &model.kernel)?);
        next.axpy(-0.5 * t_end, &model.nem.jacobian_apply(x, &dw)?);
        next.axpy(-INDEPENDENT_NOISE_WEIGHT * t_end, &model.nem.jacobian_apply(x, &dwt)?);
        u = op.semigroup_apply(h, &next)?;
        states.push(u.clone());
    }
    Ok(Trajectory {
        times: node_times(t_end, steps),
        states,
    })
}
