//! AEE for `dY = (C Y + b(Y)) dt + dW` in `R^d` with `C` symmetric negative
//! definite, and the limit equation of its normalized error.
//!
//! `C` is diagonalized once, `C = V diag(-lambda) V^T`. In eigen-coordinates
//! `V^T W` is again a standard Brownian motion, so the stochastic convolution
//! is sampled per eigen-direction with the same [`NoiseTable`] machinery as
//! the SPDE, and mapped back with `V`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, LabError, Result};
use crate::nemytskii::NoiseSpec;
use crate::noise::{build_independent_copy, build_noise_table, GridSpec, NoiseTable};
use crate::spectral::{phi1, SpectralOperator};

use super::INDEPENDENT_NOISE_WEIGHT;

fn asymmetry(c: &DMatrix<f64>) -> f64 {
    (c - c.transpose()).norm()
}

/// `e^{tC}` for symmetric `C`, via `C = V diag(mu) V^T`.
pub fn expm_symmetric(c: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return invalid("matrix exponential of a non-square matrix");
    }
    let scale = c.norm();
    if asymmetry(c) > 1e-12 * scale {
        return invalid("matrix is not symmetric");
    }
    let eig = SymmetricEigen::new(c.clone());
    let residual = (c * &eig.eigenvectors - &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues)).norm();
    if residual > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(LabError::NumericOverflow(format!(
            "eigendecomposition residual {residual:e} too large"
        )));
    }
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|mu| (t * mu).exp()));
    let out = v * d * v.transpose();
    // symmetrize away rounding
    Ok((&out + out.transpose()) * 0.5)
}

/// Drift presets with analytic Jacobian and Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub enum SodeDrift {
    Zero,
    /// `b(y) = B y`.
    Linear(DMatrix<f64>),
    /// `b_i(y) = a sin(y_i)`.
    Sine(f64),
}

impl SodeDrift {
    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            SodeDrift::Zero => DVector::zeros(y.len()),
            SodeDrift::Linear(b) => b * y,
            SodeDrift::Sine(a) => y.map(|v| a * v.sin()),
        }
    }

    pub fn jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        match self {
            SodeDrift::Zero => DMatrix::zeros(y.len(), y.len()),
            SodeDrift::Linear(b) => b.clone(),
            SodeDrift::Sine(a) => DMatrix::from_diagonal(&y.map(|v| a * v.cos())),
        }
    }

    /// `sum_j d^2 b / d y_j^2`.
    pub fn laplacian(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            SodeDrift::Zero | SodeDrift::Linear(_) => DVector::zeros(y.len()),
            SodeDrift::Sine(a) => y.map(|v| -a * v.sin()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SodeDrift::Zero => true,
            SodeDrift::Linear(b) => b.iter().all(|&v| v == 0.0),
            SodeDrift::Sine(a) => *a == 0.0,
        }
    }
}

/// `dY = (C Y + b(Y)) dt + dW`, `Y(0) = Y0`, on `[0, T]`.
#[derive(Debug, Clone)]
pub struct SodeModel {
    c: DMatrix<f64>,
    drift: SodeDrift,
    t_end: f64,
    y0: DVector<f64>,
    /// eigenvalues of `-C`, ascending
    rates: Vec<f64>,
    /// matching orthonormal eigenvectors as columns
    basis: DMatrix<f64>,
}

impl SodeModel {
    pub fn new(c: DMatrix<f64>, drift: SodeDrift, t_end: f64, y0: DVector<f64>) -> Result<Self> {
        let d = c.nrows();
        if !c.is_square() || d == 0 {
            return invalid("drift matrix must be square and nonempty");
        }
        if y0.len() != d {
            return invalid(format!("initial value has dimension {}, matrix {d}", y0.len()));
        }
        if let SodeDrift::Linear(b) = &drift {
            if b.shape() != (d, d) {
                return invalid("linear drift matrix has the wrong shape");
            }
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return invalid(format!("horizon must be positive, got {t_end}"));
        }
        if asymmetry(&c) > 1e-12 * c.norm() {
            return invalid("C must be symmetric");
        }
        let eig = SymmetricEigen::new(c.clone());
        if eig.eigenvalues.iter().any(|&mu| !(mu < 0.0)) {
            return invalid(format!(
                "C must be negative definite, eigenvalues {:?}",
                eig.eigenvalues.as_slice()
            ));
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let rates = order.iter().map(|&k| -eig.eigenvalues[k]).collect();
        let mut basis = DMatrix::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).clone_owned();
            // fix the sign: largest-magnitude entry positive
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.neg_mut();
            }
            basis.set_column(col, &v);
        }
        Ok(SodeModel {
            c,
            drift,
            t_end,
            y0,
            rates,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn drift(&self) -> &SodeDrift {
        &self.drift
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn y0(&self) -> &DVector<f64> {
        &self.y0
    }

    /// Eigenvalues of `-C` in ascending order.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Orthonormal eigenvectors of `C`, columns ordered like [`Self::rates`].
    pub fn eigenbasis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The diagonal operator of `C` in eigen-coordinates.
    pub fn spectral_operator(&self) -> SpectralOperator {
        SpectralOperator::from_eigenvalues(self.rates.clone()).expect("rates are positive and sorted")
    }

    /// Identity covariance: `W` is a standard `d`-dimensional Brownian motion.
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec::new(vec![1.0; self.dim()]).expect("unit weights are valid")
    }

    /// Driving-noise table in eigen-coordinates.
    pub fn noise_table(&self, grid: GridSpec, seed: u64, stream_id: u64) -> Result<NoiseTable> {
        self.check_grid(&grid)?;
        build_noise_table(grid, &self.noise_spec(), &self.spectral_operator(), seed, stream_id)
    }

    /// Independent-copy table in eigen-coordinates.
    pub fn independent_table(&self, grid: GridSpec, seed: u64, stream_id: u64) -> Result<NoiseTable> {
        self.check_grid(&grid)?;
        build_independent_copy(grid, &self.noise_spec(), &self.spectral_operator(), seed, stream_id)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if (grid.t_end - self.t_end).abs() > 1e-12 * self.t_end {
            return invalid("grid horizon differs from the model horizon");
        }
        Ok(())
    }

    fn check_table(&self, table: &NoiseTable) -> Result<()> {
        self.check_grid(table.grid())?;
        if table.lambdas() != self.rates.as_slice() {
            return invalid("noise table was sampled for a different drift matrix");
        }
        Ok(())
    }

    fn to_original(&self, eig_coords: &[f64]) -> DVector<f64> {
        &self.basis * DVector::from_column_slice(eig_coords)
    }
}

/// Path of a finite-dimensional process at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SodePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl SodePath {
    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("path is never empty")
    }
}

/// `Y_{k+1} = e^{tau C} Y_k + C^{-1}(e^{tau C} - I) b(Y_k) + int e^{(t_{k+1}-s) C} dW(s)`.
pub fn sode_aee_solve(model: &SodeModel, table: &NoiseTable, coarse_m: usize) -> Result<SodePath> {
    model.check_table(table)?;
    let (_, conv) = table.coarse_increments(coarse_m)?;
    let d = model.dim();
    let tau = model.t_end / coarse_m as f64;
    let propagator = expm_symmetric(&model.c, tau)?;
    let v = &model.basis;
    let phi = v * DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        model.rates.iter().map(|l| tau * phi1(l * tau)),
    )) * v.transpose();

    let mut y = model.y0.clone();
    let mut states = Vec::with_capacity(coarse_m + 1);
    states.push(y.clone());
    for k in 0..coarse_m {
        let b = model.drift.eval(&y);
        y = &propagator * &y + &phi * b + model.to_original(&conv[k * d..(k + 1) * d]);
        if y.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NumericOverflow(format!("SODE state diverged at step {k}")));
        }
        states.push(y.clone());
    }
    Ok(SodePath {
        times: (0..=coarse_m).map(|k| model.t_end * k as f64 / coarse_m as f64).collect(),
        states,
    })
}

/// AEE on every fine step of the table.
pub fn sode_reference_solve(model: &SodeModel, table: &NoiseTable) -> Result<SodePath> {
    sode_aee_solve(model, table, table.grid().fine_steps())
}

/// Noise forcing of the limit equation over one step:
/// `-(T/2) J dW - (sqrt(3) T / 6) J dW~` with `J = b'(Y)`.
pub fn sode_limit_noise_forcing(
    jacobian: &DMatrix<f64>,
    dw: &DVector<f64>,
    dw_indep: &DVector<f64>,
    t_end: f64,
) -> DVector<f64> {
    jacobian * (dw * (-0.5 * t_end) - dw_indep * (INDEPENDENT_NOISE_WEIGHT * t_end))
}

/// Limit process `M` of `m (Y^m - Y)` by exponential left-point stepping on
/// the fine grid of the tables.
pub fn sode_limit_solve(
    model: &SodeModel,
    y_ref: &SodePath,
    table_w: &NoiseTable,
    table_wt: &NoiseTable,
) -> Result<SodePath> {
    model.check_table(table_w)?;
    model.check_table(table_wt)?;
    if table_w.grid() != table_wt.grid() {
        return invalid("W and W~ tables are sampled on different grids");
    }
    let steps = table_w.grid().fine_steps();
    if y_ref.states.len() != steps + 1 {
        return invalid("reference path does not match the fine grid");
    }
    let h = table_w.grid().fine_step();
    let t = model.t_end;
    let prop = expm_symmetric(&model.c, h)?;
    let d = model.dim();
    let mut mstate = DVector::zeros(d);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(mstate.clone());
    for j in 0..steps {
        let y = &y_ref.states[j];
        let jac = model.drift.jacobian(y);
        let drift = &jac * &mstate
            - &jac * (&model.c * y) * (0.5 * t)
            - &jac * model.drift.eval(y) * (0.5 * t)
            - model.drift.laplacian(y) * (0.25 * t);
        let dw = model.to_original(table_w.db_step(j));
        let dwt = model.to_original(table_wt.db_step(j));
        mstate = &prop * (&mstate + drift * h + sode_limit_noise_forcing(&jac, &dw, &dwt, t));
        states.push(mstate.clone());
    }
    Ok(SodePath {
        times: (0..=steps).map(|k| t * k as f64 / steps as f64).collect(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    use crate::integrators::{aee_solve, limit_u_solve, reference_solve, Model, ModelSpec};
    use crate::nemytskii::Nonlinearity;
    use crate::spectral::{AssumptionParams, SpectralField};

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn expm_examples() {
        let c = diag(&[-1.0, -2.0]);
        assert_eq!(expm_symmetric(&c, 0.0).unwrap(), DMatrix::identity(2, 2));
        let e = expm_symmetric(&c, 1.0).unwrap();
        assert!((e[(0, 0)] - 0.36787944117144233).abs() < 1e-15);
        assert!((e[(1, 1)] - 0.1353352832366127).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
        let e = expm_symmetric(&c, 0.5).unwrap();
        assert!((e[(0, 0)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((e[(1, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -1.0]);
        assert!(expm_symmetric(&bad, 1.0).is_err());
    }

    #[test]
    fn expm_semigroup_and_commutation() {
        let c = DMatrix::from_row_slice(3, 3, &[-2.0, 0.3, 0.1, 0.3, -1.0, -0.4, 0.1, -0.4, -3.0]);
        let a = expm_symmetric(&c, 0.3).unwrap();
        let b = expm_symmetric(&c, 0.45).unwrap();
        let ab = expm_symmetric(&c, 0.75).unwrap();
        assert!((&a * &b - ab).norm() < 1e-10);
        assert!((&a * &c - &c * &a).norm() < 1e-10 * c.norm());
        assert!((&a - a.transpose()).norm() == 0.0);
    }

    #[test]
    fn model_validation() {
        let y0 = DVector::zeros(2);
        assert!(SodeModel::new(diag(&[1.0, -1.0]), SodeDrift::Zero, 1.0, y0.clone()).is_err());
        let nonsym = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -1.0]);
        assert!(SodeModel::new(nonsym, SodeDrift::Zero, 1.0, y0.clone()).is_err());
        let m = SodeModel::new(diag(&[-2.0, -1.0]), SodeDrift::Zero, 1.0, y0).unwrap();
        assert_eq!(m.rates(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_drift_without_noise_is_the_propagator() {
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.2, -2.0]);
        let y0 = DVector::from_column_slice(&[1.0, -1.0]);
        let m = SodeModel::new(c.clone(), SodeDrift::Zero, 1.0, y0.clone()).unwrap();
        let grid = GridSpec::new(1.0, 4, 1).unwrap();
        // a table of zeros stands in for W = 0
        let op = m.spectral_operator();
        let zero_noise = build_noise_table(grid, &NoiseSpec::zero(2), &op, 0, 0).unwrap();
        let mut buf = Vec::new();
        zero_noise.write_to(&mut buf).unwrap();
        let header = 8 + 8 + 6 * 8 + 8 + 2 * 8;
        buf[header..].iter_mut().for_each(|b| *b = 0);
        let silent = NoiseTable::read_from(buf.as_slice()).unwrap();
        let path = sode_aee_solve(&m, &silent, 4).unwrap();
        for (k, y) in path.states.iter().enumerate() {
            let exact = expm_symmetric(&c, 0.25 * k as f64).unwrap() * &y0;
            assert!((y - exact).norm() < 1e-14);
        }
    }

    #[test]
    fn scalar_sode_matches_single_mode_spde() {
        let lam = PI * PI;
        let c = 0.6;
        let t_end = 1.0;
        let sode = SodeModel::new(
            diag(&[-lam]),
            SodeDrift::Linear(diag(&[c])),
            t_end,
            DVector::from_column_slice(&[1.0]),
        )
        .unwrap();
        let op = SpectralOperator::dirichlet_laplacian(1).unwrap();
        assert_eq!(sode.rates(), op.eigenvalues());
        let spde = Model::new(ModelSpec {
            op: op.clone(),
            nl: Nonlinearity::Linear(c),
            noise: NoiseSpec::new(vec![1.0]).unwrap(),
            params: AssumptionParams::default(),
            t_end,
            x0: SpectralField::new(vec![1.0]),
        })
        .unwrap();
        let grid = GridSpec::new(t_end, 16, 4).unwrap();
        let w = sode.noise_table(grid, 5, 1).unwrap();
        let wt = sode.independent_table(grid, 5, 1).unwrap();
        assert_eq!(w, build_noise_table(grid, &spde.spec().noise, &op, 5, 1).unwrap());

        let ys = sode_aee_solve(&sode, &w, 16).unwrap();
        let xs = aee_solve(&spde, &w, 16).unwrap();
        for (y, x) in ys.states.iter().zip(&xs.states) {
            assert!((y[0] - x.coeffs()[0]).abs() <= 1e-12 * x.coeffs()[0].abs().max(1e-3));
        }
        let yr = sode_reference_solve(&sode, &w).unwrap();
        let xr = reference_solve(&spde, &w).unwrap();
        let ms = sode_limit_solve(&sode, &yr, &w, &wt).unwrap();
        let us = limit_u_solve(&spde, &w, &wt, &xr).unwrap();
        for (mv, u) in ms.states.iter().zip(&us.states) {
            assert!((mv[0] - u.coeffs()[0]).abs() <= 1e-12 * u.coeffs()[0].abs().max(1e-6));
        }
    }

    #[test]
    fn zero_drift_limit_vanishes() {
        let m = SodeModel::new(diag(&[-1.0, -2.0]), SodeDrift::Zero, 1.0, DVector::from_column_slice(&[0.5, 0.5]))
            .unwrap();
        let grid = GridSpec::new(1.0, 8, 4).unwrap();
        let w = m.noise_table(grid, 1, 0).unwrap();
        let wt = m.independent_table(grid, 1, 0).unwrap();
        let y = sode_reference_solve(&m, &w).unwrap();
        let mm = sode_limit_solve(&m, &y, &w, &wt).unwrap();
        assert!(mm.states.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn drift_derivatives_match_finite_differences() {
        let y = DVector::from_column_slice(&[0.3, -1.2]);
        let drifts = [
            SodeDrift::Sine(0.8),
            SodeDrift::Linear(DMatrix::from_row_slice(2, 2, &[0.4, 0.3, -0.3, 0.4])),
        ];
        for drift in drifts {
            let jac = drift.jacobian(&y);
            let eps = 1e-6;
            for j in 0..2 {
                let mut yp = y.clone();
                yp[j] += eps;
                let mut ym = y.clone();
                ym[j] -= eps;
                let col = (drift.eval(&yp) - drift.eval(&ym)) / (2.0 * eps);
                assert!((col - jac.column(j)).norm() < 1e-8);
            }
            let eps = 1e-4;
            let mut lap = DVector::zeros(2);
            for j in 0..2 {
                let mut yp = y.clone();
                yp[j] += eps;
                let mut ym = y.clone();
                ym[j] -= eps;
                lap += (drift.eval(&yp) - drift.eval(&y) * 2.0 + drift.eval(&ym)) / (eps * eps);
            }
            assert!((lap - drift.laplacian(&y)).norm() < 1e-6);
        }
    }
}
