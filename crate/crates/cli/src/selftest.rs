//! Deterministic invariant suite behind `aee-lab selftest`.

use std::f64::consts::PI;
use std::path::Path;

use aee_core::integrators::{aee_solve, expm_symmetric, Model, ModelSpec};
use aee_core::lab::{convergence_order_fit, kolmogorov_survival, two_sample_ks};
use aee_core::nemytskii::{NemytskiiOperator, Nonlinearity, NoiseSpec};
use aee_core::noise::{build_noise_table, conv_pair_covariance, GridSpec, NoiseTable};
use aee_core::oracles::ou_variance;
use aee_core::spectral::{phi1, AssumptionParams, SineTransform, SpectralField, SpectralOperator};
use nalgebra::DMatrix;

/// The table stored in the golden file is rebuilt from these parameters.
pub const GOLDEN_MODES: usize = 4;
pub const GOLDEN_M: usize = 4;
pub const GOLDEN_REFINE: usize = 2;
pub const GOLDEN_SEED: u64 = 20_240_611;
pub const GOLDEN_STREAM: u64 = 3;

/// Golden noise table shipped with the binary.
pub const EMBEDDED_GOLDEN: &[u8] = include_bytes!("../golden/noise_table.bin");

pub fn golden_table() -> aee_core::Result<NoiseTable> {
    let op = SpectralOperator::dirichlet_laplacian(GOLDEN_MODES)?;
    let noise = NoiseSpec::power_law(&op, 2.0)?;
    let grid = GridSpec::new(1.0, GOLDEN_M, GOLDEN_REFINE)?;
    build_noise_table(grid, &noise, &op, GOLDEN_SEED, GOLDEN_STREAM)
}

type Check = Result<(), String>;

fn close(name: &str, got: f64, want: f64, rel: f64) -> Check {
    if (got - want).abs() <= rel * want.abs().max(f64::MIN_POSITIVE) {
        Ok(())
    } else {
        Err(format!("{name}: got {got:e}, expected {want:e} (rel tol {rel:e})"))
    }
}

fn lab(e: aee_core::LabError) -> String {
    e.to_string()
}

fn sine_transform_round_trip() -> Check {
    let n = 64;
    let tr = SineTransform::new(n).map_err(lab)?;
    let v = SpectralField::new((0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / (1.0 + i as f64)).collect());
    let back = tr.to_spectral(&tr.to_physical(&v).map_err(lab)?).map_err(lab)?;
    let err = back.sub(&v).norm() / v.norm();
    if err <= 1e-13 {
        Ok(())
    } else {
        Err(format!("round trip relative error {err:e}"))
    }
}

fn semigroup_law() -> Check {
    let op = SpectralOperator::dirichlet_laplacian(64).map_err(lab)?;
    let v = SpectralField::new((0..64).map(|i| 1.0 / (1.0 + i as f64)).collect());
    let a = op.semigroup_apply(0.013, &op.semigroup_apply(0.021, &v).map_err(lab)?).map_err(lab)?;
    let b = op.semigroup_apply(0.034, &v).map_err(lab)?;
    let err = a.sub(&b).norm() / b.norm();
    if err <= 1e-14 {
        Ok(())
    } else {
        Err(format!("E(s)E(t) - E(s+t) relative error {err:e}"))
    }
}

fn matrix_exponential_law() -> Check {
    let c = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, -2.0]);
    let a = expm_symmetric(&c, 0.4).map_err(lab)? * expm_symmetric(&c, 0.6).map_err(lab)?;
    let b = expm_symmetric(&c, 1.0).map_err(lab)?;
    let err = (a - &b).norm() / b.norm();
    if err <= 1e-13 {
        Ok(())
    } else {
        Err(format!("e^(sC) e^(tC) - e^((s+t)C) relative error {err:e}"))
    }
}

fn covariance_formulas() -> Check {
    let c = conv_pair_covariance(1.0, 1.0).map_err(lab)?;
    close("Var db", c[0][0], 1.0, 1e-15)?;
    close("Cov(db, conv)", c[0][1], 1.0 - (-1.0f64).exp(), 1e-15)?;
    close("Var conv", c[1][1], (1.0 - (-2.0f64).exp()) / 2.0, 1e-15)?;
    close("OU variance", ou_variance(PI * PI, 1.0, 0.1), 0.043_623_271_605_605_44, 1e-12)?;
    close("phi1 continuity", phi1(1e-9), phi1(0.0) - 0.5e-9, 1e-12)?;
    // nesting: R fine-step variances transported to the coarse node add up
    for &(lambda, tau, r) in &[(1.0, 0.1, 4usize), (PI * PI * 100.0, 0.01, 64), (1e-3, 1.0, 7)] {
        let h = tau / r as f64;
        let v = conv_pair_covariance(lambda, h).map_err(lab)?[1][1];
        let sum: f64 = (0..r).map(|j| (-2.0 * lambda * (tau - (j + 1) as f64 * h)).exp() * v).sum();
        close("nesting identity", sum, conv_pair_covariance(lambda, tau).map_err(lab)?[1][1], 1e-12)?;
    }
    Ok(())
}

fn nemytskii_derivative() -> Check {
    let n = 32;
    let nem = NemytskiiOperator::new(Nonlinearity::Sine(1.0), n).map_err(lab)?;
    let base = SpectralField::new((0..n).map(|i| 0.5 / (1.0 + i as f64)).collect());
    let dir = SpectralField::new((0..n).map(|i| if i % 3 == 0 { 0.2 } else { -0.1 }).collect());
    let eps = 1e-6;
    let plus = nem.apply(&base.add(&dir.scaled(eps))).map_err(lab)?;
    let minus = nem.apply(&base.add(&dir.scaled(-eps))).map_err(lab)?;
    let fd = plus.sub(&minus).scaled(0.5 / eps);
    let jac = nem.jacobian_apply(&base, &dir).map_err(lab)?;
    let err = fd.sub(&jac).norm() / jac.norm();
    if err <= 1e-8 {
        Ok(())
    } else {
        Err(format!("Jacobian vs central difference relative error {err:e}"))
    }
}

fn exact_scheme() -> Check {
    let n = 16;
    let op = SpectralOperator::dirichlet_laplacian(n).map_err(lab)?;
    let model = Model::new(ModelSpec {
        noise: NoiseSpec::zero(n),
        op: op.clone(),
        nl: Nonlinearity::Zero,
        params: AssumptionParams::default(),
        t_end: 0.2,
        x0: SpectralField::basis(n, 0),
    })
    .map_err(lab)?;
    let grid = GridSpec::new(0.2, 8, 1).map_err(lab)?;
    let table = build_noise_table(grid, &model.spec().noise, &op, 1, 0).map_err(lab)?;
    let got = aee_solve(&model, &table, 8).map_err(lab)?;
    close("heat flow mode 1", got.terminal().coeffs()[0], (-0.2 * PI * PI).exp(), 1e-13)
}

fn statistics() -> Check {
    close("Kolmogorov 5% point", kolmogorov_survival(1.358_099), 0.05, 1e-4)?;
    let ks = two_sample_ks(&[1.0, 2.0], &[1.5, 2.5]).map_err(lab)?;
    close("KS example", ks.statistic, 0.5, 0.0)?;
    let pairs: Vec<(usize, f64)> = [8usize, 16, 32, 64].iter().map(|&m| (m, 0.7 / m as f64)).collect();
    let fit = convergence_order_fit(&pairs).map_err(lab)?;
    close("planted order", fit.order, 1.0, 1e-12)
}

fn golden_noise(path: Option<&Path>) -> Check {
    let bytes = match path {
        Some(p) => std::fs::read(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => EMBEDDED_GOLDEN.to_vec(),
    };
    let stored = NoiseTable::read_from(bytes.as_slice()).map_err(|e| format!("unreadable golden file: {e}"))?;
    let fresh = golden_table().map_err(lab)?;
    if stored == fresh {
        Ok(())
    } else {
        let first = (0..GOLDEN_M * GOLDEN_REFINE)
            .flat_map(|s| (0..GOLDEN_MODES).map(move |i| (s, i)))
            .find(|&(s, i)| stored.db(i, s) != fresh.db(i, s) || stored.conv(i, s) != fresh.conv(i, s));
        Err(match first {
            Some((s, i)) => format!("golden noise differs first at step {s}, mode {}", i + 1),
            None => "golden noise header differs".to_string(),
        })
    }
}

/// Runs every check, printing one line each; true when all pass.
pub fn run(golden: Option<&Path>) -> bool {
    let checks: Vec<(&str, Check)> = vec![
        ("sine transform round trip", sine_transform_round_trip()),
        ("semigroup law", semigroup_law()),
        ("matrix exponential law", matrix_exponential_law()),
        ("covariance formulas", covariance_formulas()),
        ("nemytskii derivative", nemytskii_derivative()),
        ("exact linear scheme", exact_scheme()),
        ("statistics helpers", statistics()),
        ("golden noise values", golden_noise(golden)),
    ];
    let mut all = true;
    for (name, res) in checks {
        match res {
            Ok(()) => println!("ok    {name}"),
            Err(msg) => {
                all = false;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    all
}
