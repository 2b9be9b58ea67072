//! Monte Carlo orchestration: ensembles of normalized errors and of the limit
//! process, their moments, two-sample tests and order fits.
//!
//! Replicas run on the rayon pool. Each replica draws its noise from its own
//! stream, and results are always reduced in replica order, so an ensemble is
//! a pure function of its inputs whatever the thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, LabError, Result};
use crate::integrators::{
    aee_terminal, limit_u_solve, reference_solve, sode_aee_solve, sode_limit_solve, sode_reference_solve, Model,
    SodeModel,
};
use crate::noise::{build_independent_copy, build_noise_table, GridSpec, NoiseTable};
use crate::spectral::SpectralField;

/// Added to the replica index to get the stream of limit-process replicas,
/// which keeps them independent of error-process replicas under one seed.
pub const LIMIT_STREAM_OFFSET: u64 = 1 << 48;

/// Ensembles whose samples agree to this absolute level are treated as a
/// point mass: rounding noise of an exact scheme, not a distribution.
pub const DEGENERATE_TOLERANCE: f64 = 1e-10;

/// Standard deviation of the Kolmogorov distribution, the asymptotic law of
/// `sqrt(n_eff) D` under the null.
pub const KOLMOGOROV_STD: f64 = 0.260_332;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// FNV-1a, used for configuration fingerprints (stable across platforms and
/// toolchains, unlike `DefaultHasher`).
pub fn fingerprint_bytes(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fingerprint of everything an ensemble depends on.
pub fn config_fingerprint(description: &str, grid: &GridSpec, master_seed: u64) -> u64 {
    fingerprint_bytes(format!("{description}|{grid:?}|seed={master_seed}").as_bytes())
}

fn model_description(model: &Model) -> String {
    format!("{:?}", model.spec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    /// `U^m = m (X^m - X)` at the terminal time.
    ErrorProcess { m: usize },
    /// The limit process `U` at the terminal time.
    Limit,
    /// Any other collection of samples.
    Other,
}

/// Terminal-time samples projected onto the leading modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    samples: Vec<Vec<f64>>,
    kind: EnsembleKind,
    fingerprint: u64,
}

impl Ensemble {
    pub fn new(samples: Vec<Vec<f64>>, kind: EnsembleKind, fingerprint: u64) -> Result<Self> {
        if samples.len() < 2 {
            return invalid(format!("an ensemble needs at least 2 replicas, got {}", samples.len()));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return invalid("ensemble samples must share one nonzero dimension");
        }
        Ok(Ensemble {
            samples,
            kind,
            fingerprint,
        })
    }

    pub fn replicas(&self) -> usize {
        self.samples.len()
    }

    pub fn proj_dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// The same samples tagged with another fingerprint.
    pub fn with_fingerprint(mut self, fingerprint: u64) -> Self {
        self.fingerprint = fingerprint;
        self
    }

    pub fn label(&self) -> String {
        match self.kind {
            EnsembleKind::ErrorProcess { m } => format!("U^{m}"),
            EnsembleKind::Limit => "U".to_string(),
            EnsembleKind::Other => "samples".to_string(),
        }
    }

    /// All replicas of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i]).collect()
    }

    /// Replicas `[0, n)`.
    pub fn truncated(&self, n: usize) -> Result<Ensemble> {
        if n > self.replicas() {
            return invalid(format!("cannot take {n} of {} replicas", self.replicas()));
        }
        Ensemble::new(self.samples[..n].to_vec(), self.kind, self.fingerprint)
    }

    /// Coordinates `[0, k)`.
    pub fn projected(&self, k: usize) -> Result<Ensemble> {
        if k == 0 || k > self.proj_dim() {
            return invalid(format!("cannot keep {k} of {} coordinates", self.proj_dim()));
        }
        Ensemble::new(self.samples.iter().map(|s| s[..k].to_vec()).collect(), self.kind, self.fingerprint)
    }

    /// Largest distance of any sample coordinate from the first sample.
    pub fn spread(&self) -> f64 {
        let first = &self.samples[0];
        self.samples
            .iter()
            .flat_map(|s| s.iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    /// True when all samples agree up to [`DEGENERATE_TOLERANCE`].
    pub fn is_degenerate(&self) -> bool {
        self.spread() <= DEGENERATE_TOLERANCE
    }

    /// `replica,coord_1,..,coord_k` with a fingerprint comment line on top.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {} fingerprint={:016x}", self.label(), self.fingerprint)?;
        let header: Vec<String> = (1..=self.proj_dim()).map(|i| format!("coord_{i}")).collect();
        writeln!(w, "replica,{}", header.join(","))?;
        for (r, s) in self.samples.iter().enumerate() {
            let row: Vec<String> = s.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{r},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `m (X^m - X)`.
pub fn normalized_error(m: usize, xm: &SpectralField, xref: &SpectralField) -> Result<SpectralField> {
    if xm.len() != xref.len() {
        return invalid(format!("mode counts differ: {} vs {}", xm.len(), xref.len()));
    }
    Ok(SpectralField::new(
        xm.coeffs().iter().zip(xref.coeffs()).map(|(a, b)| m as f64 * (a - b)).collect(),
    ))
}

/// Runs `f` for replicas `0..n` on the rayon pool and returns results in
/// replica order. The error of the lowest failing replica is reported.
pub fn replicate<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..n as u64).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(r, res)| {
            res.map_err(|e| LabError::Replica {
                stream_id: r as u64,
                source: Box::new(e),
            })
        })
        .collect()
}

/// One coarse discretization in an error sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorRun {
    /// Time steps.
    pub m: usize,
    /// Galerkin truncation `n`; the model's full mode count for the
    /// semi-discrete scheme.
    pub modes: usize,
}

/// Galerkin size `floor(m^iota)` of the fully discrete scheme, at least 1 and
/// at most `cap`. Exact powers such as `256^0.75 = 64` are not lost to rounding.
pub fn galerkin_modes(m: usize, iota: f64, cap: usize) -> usize {
    let v = (m as f64).powf(iota);
    let r = v.round();
    let n = if (v - r).abs() <= 1e-9 * r.max(1.0) { r } else { v.floor() };
    (n as usize).clamp(1, cap.max(1))
}

/// Ensembles of `U^m` for several `m` sharing their reference solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSweep {
    pub runs: Vec<ErrorRun>,
    pub ensembles: Vec<Ensemble>,
    /// `sqrt(E ||X^m(T) - X(T)||^2)` over all modes, per run.
    pub rms: Vec<f64>,
}

/// Per replica: one table, one reference solve, one AEE solve per run.
pub fn run_error_sweep_with<S>(
    model: &Model,
    runs: &[ErrorRun],
    replicas: usize,
    proj_dim: usize,
    fingerprint: u64,
    table_for: S,
) -> Result<ErrorSweep>
where
    S: Fn(u64) -> Result<NoiseTable> + Sync,
{
    if runs.is_empty() {
        return invalid("an error sweep needs at least one step count");
    }
    if proj_dim == 0 || proj_dim > model.modes() {
        return invalid(format!("projection dimension {proj_dim} outside 1..={}", model.modes()));
    }
    let per_replica = replicate(replicas, |r| {
        let table = table_for(r)?;
        let xref = reference_solve(model, &table)?;
        let xref = xref.terminal();
        runs.iter()
            .map(|run| {
                let xm = aee_terminal(model, &table, run.m, run.modes)?;
                let diff = xm.sub(xref);
                let sq = diff.coeffs().iter().map(|v| v * v).sum::<f64>();
                let u = normalized_error(run.m, &xm, xref)?;
                Ok((u.coeffs()[..proj_dim].to_vec(), sq))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ensembles = Vec::with_capacity(runs.len());
    let mut rms = Vec::with_capacity(runs.len());
    for (j, run) in runs.iter().enumerate() {
        let samples = per_replica.iter().map(|rep| rep[j].0.clone()).collect();
        ensembles.push(Ensemble::new(samples, EnsembleKind::ErrorProcess { m: run.m }, fingerprint)?);
        let mean_sq = compensated_sum(per_replica.iter().map(|rep| rep[j].1)) / replicas as f64;
        rms.push(mean_sq.sqrt());
    }
    Ok(ErrorSweep {
        runs: runs.to_vec(),
        ensembles,
        rms,
    })
}

/// [`run_error_sweep_with`] on freshly sampled tables, replica `r` on stream `r`.
pub fn run_error_sweep(
    model: &Model,
    grid: GridSpec,
    runs: &[ErrorRun],
    replicas: usize,
    proj_dim: usize,
    master_seed: u64,
) -> Result<ErrorSweep> {
    let op = &model.spec().op;
    let noise = &model.spec().noise;
    let fp = config_fingerprint(&model_description(model), &grid, master_seed);
    run_error_sweep_with(model, runs, replicas, proj_dim, fp, |r| {
        build_noise_table(grid, noise, op, master_seed, r)
    })
}

/// Ensemble of `U^m(T)` projections for the semi-discrete scheme.
pub fn run_error_ensemble(
    model: &Model,
    grid: GridSpec,
    m: usize,
    replicas: usize,
    proj_dim: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    let runs = [ErrorRun { m, modes: model.modes() }];
    let mut sweep = run_error_sweep(model, grid, &runs, replicas, proj_dim, master_seed)?;
    Ok(sweep.ensembles.remove(0))
}

/// Per replica: reference solve on `W`, then the limit equation driven by
/// `W` and the independent `W~`.
pub fn run_limit_ensemble_with<S>(
    model: &Model,
    replicas: usize,
    proj_dim: usize,
    fingerprint: u64,
    tables_for: S,
) -> Result<Ensemble>
where
    S: Fn(u64) -> Result<(NoiseTable, NoiseTable)> + Sync,
{
    if proj_dim == 0 || proj_dim > model.modes() {
        return invalid(format!("projection dimension {proj_dim} outside 1..={}", model.modes()));
    }
    let samples = replicate(replicas, |r| {
        let (w, wt) = tables_for(r)?;
        let xref = reference_solve(model, &w)?;
        let u = limit_u_solve(model, &w, &wt, &xref)?;
        Ok(u.terminal().coeffs()[..proj_dim].to_vec())
    })?;
    Ensemble::new(samples, EnsembleKind::Limit, fingerprint)
}

/// Tables `(W, W~)` of limit replica `r`.
pub fn limit_tables(model: &Model, grid: GridSpec, master_seed: u64, r: u64) -> Result<(NoiseTable, NoiseTable)> {
    let (op, noise) = (&model.spec().op, &model.spec().noise);
    let stream = r + LIMIT_STREAM_OFFSET;
    Ok((
        build_noise_table(grid, noise, op, master_seed, stream)?,
        build_independent_copy(grid, noise, op, master_seed, stream)?,
    ))
}

/// Ensemble of `U(T)` projections; replica `r` uses stream
/// `r + LIMIT_STREAM_OFFSET` for both `W` and `W~`.
pub fn run_limit_ensemble(
    model: &Model,
    grid: GridSpec,
    replicas: usize,
    proj_dim: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    let fp = config_fingerprint(&format!("limit|{}", model_description(model)), &grid, master_seed);
    run_limit_ensemble_with(model, replicas, proj_dim, fp, |r| limit_tables(model, grid, master_seed, r))
}

fn sode_description(model: &SodeModel) -> String {
    format!("{:?}|{:?}|{}|{:?}", model.c(), model.drift(), model.t_end(), model.y0())
}

/// SODE error sweep: ensembles of `m (Y^m(T) - Y(T))` and RMS errors.
pub fn run_sode_error_sweep(
    model: &SodeModel,
    grid: GridSpec,
    ms: &[usize],
    replicas: usize,
    master_seed: u64,
) -> Result<ErrorSweep> {
    if ms.is_empty() {
        return invalid("an error sweep needs at least one step count");
    }
    let fp = config_fingerprint(&sode_description(model), &grid, master_seed);
    let per_replica = replicate(replicas, |r| {
        let table = model.noise_table(grid, master_seed, r)?;
        let yref = sode_reference_solve(model, &table)?;
        let yref = yref.terminal();
        ms.iter()
            .map(|&m| {
                let ym = sode_aee_solve(model, &table, m)?;
                let diff = ym.terminal() - yref;
                Ok(((&diff * m as f64).as_slice().to_vec(), diff.norm_squared()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ensembles = Vec::new();
    let mut rms = Vec::new();
    for (j, &m) in ms.iter().enumerate() {
        let samples = per_replica.iter().map(|rep| rep[j].0.clone()).collect();
        ensembles.push(Ensemble::new(samples, EnsembleKind::ErrorProcess { m }, fp)?);
        rms.push((compensated_sum(per_replica.iter().map(|rep| rep[j].1)) / replicas as f64).sqrt());
    }
    Ok(ErrorSweep {
        runs: ms.iter().map(|&m| ErrorRun { m, modes: model.dim() }).collect(),
        ensembles,
        rms,
    })
}

/// Ensemble of the stacked `(Y(T), M(T))`, dimension `2d`.
pub fn run_sode_limit_ensemble(model: &SodeModel, grid: GridSpec, replicas: usize, master_seed: u64) -> Result<Ensemble> {
    let fp = config_fingerprint(&format!("limit|{}", sode_description(model)), &grid, master_seed);
    let samples = replicate(replicas, |r| {
        let stream = r + LIMIT_STREAM_OFFSET;
        let w = model.noise_table(grid, master_seed, stream)?;
        let wt = model.independent_table(grid, master_seed, stream)?;
        let y = sode_reference_solve(model, &w)?;
        let m = sode_limit_solve(model, &y, &w, &wt)?;
        let mut s = y.terminal().as_slice().to_vec();
        s.extend_from_slice(m.terminal().as_slice());
        Ok(s)
    })?;
    Ensemble::new(samples, EnsembleKind::Limit, fp)
}

/// Sample moments with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub replicas: usize,
    pub mean: Vec<f64>,
    /// `s / sqrt(N)` per coordinate.
    pub mean_se: Vec<f64>,
    /// Unbiased sample covariance.
    pub cov: DMatrix<f64>,
    /// Standard error of each covariance entry, from the sample variance of
    /// the centred products (no Gaussian assumption).
    pub cov_se: DMatrix<f64>,
}

impl Moments {
    pub fn var(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }
}

/// Mean, covariance and their standard errors, summed in replica order.
pub fn empirical_moments(e: &Ensemble) -> Result<Moments> {
    let n = e.replicas();
    if n < 2 {
        return invalid("moments need at least 2 replicas");
    }
    let d = e.proj_dim();
    let nf = n as f64;
    let mean: Vec<f64> = (0..d).map(|i| compensated_sum(e.samples.iter().map(|s| s[i])) / nf).collect();
    let mut cov = DMatrix::zeros(d, d);
    let mut cov_se = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let products: Vec<f64> = e.samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).collect();
            let c = compensated_sum(products.iter().copied()) / (nf - 1.0);
            let pm = compensated_sum(products.iter().copied()) / nf;
            let spread = compensated_sum(products.iter().map(|p| (p - pm) * (p - pm))) / (nf - 1.0);
            let se = (spread / nf).sqrt();
            cov[(a, b)] = c;
            cov[(b, a)] = c;
            cov_se[(a, b)] = se;
            cov_se[(b, a)] = se;
        }
    }
    let mean_se = (0..d).map(|i| (cov[(i, i)] / nf).sqrt()).collect();
    Ok(Moments {
        replicas: n,
        mean,
        mean_se,
        cov,
        cov_se,
    })
}

/// Result of a two-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// `n_a n_b / (n_a + n_b)`.
    pub effective_size: f64,
}

impl KsResult {
    /// Null-hypothesis standard deviation of the statistic.
    pub fn null_se(&self) -> f64 {
        KOLMOGOROV_STD / self.effective_size.sqrt()
    }
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi theta form, converges fast for small x
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// `D = sup |F_a - F_b|` evaluated at every pooled point, with the asymptotic
/// p-value `Q(sqrt(n_eff) D)`.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return invalid("two-sample KS needs two nonempty samples");
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return invalid("two-sample KS input contains NaN");
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n_eff.sqrt() * d),
        effective_size: n_eff,
    })
}

/// Least-squares fit of `log rms = intercept + slope log m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// `-slope`.
    pub order: f64,
    /// Residuals in log space, one per input pair.
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    /// 95% confidence band of the order.
    pub band: (f64, f64),
}

fn student_t_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
        2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        1..=30 => TABLE[dof - 1],
        _ => 1.96,
    }
}

/// Errors at or below this level are rounding noise of an exact scheme.
pub const EXACT_SCHEME_FLOOR: f64 = 1e-12;

/// Order of convergence from `(m, rms)` pairs.
///
/// Errors all at or below [`EXACT_SCHEME_FLOOR`] (an exact scheme) give
/// [`LabError::DegenerateErrors`]; other nonpositive errors are invalid input.
pub fn convergence_order_fit(pairs: &[(usize, f64)]) -> Result<OrderFit> {
    if pairs.len() < 3 {
        return invalid(format!("order fit needs at least 3 pairs, got {}", pairs.len()));
    }
    if pairs.iter().all(|&(_, e)| (0.0..=EXACT_SCHEME_FLOOR).contains(&e)) {
        return Err(LabError::DegenerateErrors(
            "every error is exactly zero; the scheme is exact for this problem".into(),
        ));
    }
    if let Some(&(m, e)) = pairs.iter().find(|&&(m, e)| m == 0 || !(e > 0.0) || !e.is_finite()) {
        return invalid(format!("order fit needs positive m and errors, got ({m}, {e})"));
    }
    let xs: Vec<f64> = pairs.iter().map(|&(m, _)| (m as f64).ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return invalid("order fit needs at least two distinct step counts");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let max_abs_residual = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let dof = pairs.len() - 2;
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64;
    let half = student_t_975(dof) * (s2 / sxx).sqrt();
    Ok(OrderFit {
        slope,
        intercept,
        order: -slope,
        residuals,
        max_abs_residual,
        band: (-slope - half, -slope + half),
    })
}

/// Bands used by [`distribution_report`] and [`oracle_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Family-wise KS level, split over coordinates (Bonferroni).
    pub ks_level: f64,
    /// Allowed deviation of means, in standard errors.
    pub mean_se: f64,
    /// Allowed deviation of covariance entries, in standard errors.
    pub cov_se: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ks_level: 0.01,
            mean_se: 3.0,
            cov_se: 3.0,
        }
    }
}

/// One line of a report: `|value| <= tolerance` (or `value >= tolerance` for
/// p-values) decides `pass`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub coordinate: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub rows: Vec<ReportRow>,
    /// Per-coordinate KS results (empty for oracle reports).
    pub ks: Vec<KsResult>,
    pub moments: Vec<Moments>,
    /// Per-test KS level after the Bonferroni split.
    pub bonferroni_level: f64,
    /// Both ensembles are constant and equal; nothing to test.
    pub degenerate: bool,
    pub fingerprint: u64,
}

impl StatReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    /// Long format: `metric,coordinate,value,tolerance,pass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# fingerprint={:016x} bonferroni_level={:e} degenerate={}",
            self.fingerprint, self.bonferroni_level, self.degenerate
        )?;
        writeln!(w, "metric,coordinate,value,tolerance,pass")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:e},{:e},{}", r.metric, r.coordinate, r.value, r.tolerance, r.pass)?;
        }
        Ok(())
    }
}

fn row(metric: &str, coordinate: String, value: f64, tolerance: f64, pass: bool) -> ReportRow {
    ReportRow {
        metric: metric.to_string(),
        coordinate,
        value,
        tolerance,
        pass,
    }
}

/// Compares two independent ensembles coordinate by coordinate: KS tests at
/// the Bonferroni level, and means and covariances within SE bands.
pub fn distribution_report(e_um: &Ensemble, e_u: &Ensemble, tol: &Tolerances) -> Result<StatReport> {
    if e_um.proj_dim() != e_u.proj_dim() {
        return invalid(format!(
            "projection dimensions differ: {} vs {}",
            e_um.proj_dim(),
            e_u.proj_dim()
        ));
    }
    let d = e_um.proj_dim();
    let level = tol.ks_level / d as f64;
    let fingerprint = e_um.fingerprint ^ e_u.fingerprint.rotate_left(1);
    let degenerate = e_um.is_degenerate()
        && e_u.is_degenerate()
        && e_um.samples[0].iter().zip(&e_u.samples[0]).all(|(a, b)| (a - b).abs() <= DEGENERATE_TOLERANCE);
    let moments = vec![empirical_moments(e_um)?, empirical_moments(e_u)?];
    if degenerate {
        return Ok(StatReport {
            rows: vec![row("degenerate", "all".into(), 0.0, 0.0, true)],
            ks: Vec::new(),
            moments,
            bonferroni_level: level,
            degenerate,
            fingerprint,
        });
    }
    let mut rows = Vec::new();
    let mut ks = Vec::with_capacity(d);
    for i in 0..d {
        let res = two_sample_ks(&e_um.coordinate(i), &e_u.coordinate(i))?;
        rows.push(row("ks_p_value", format!("{}", i + 1), res.p_value, level, res.p_value > level));
        ks.push(res);
    }
    let (a, b) = (&moments[0], &moments[1]);
    for i in 0..d {
        let se = a.mean_se[i].hypot(b.mean_se[i]);
        let dev = (a.mean[i] - b.mean[i]).abs();
        rows.push(row("mean_diff", format!("{}", i + 1), dev, tol.mean_se * se, dev <= tol.mean_se * se));
    }
    for i in 0..d {
        for j in i..d {
            let se = a.cov_se[(i, j)].hypot(b.cov_se[(i, j)]);
            let dev = (a.cov[(i, j)] - b.cov[(i, j)]).abs();
            rows.push(row(
                "cov_diff",
                format!("{}:{}", i + 1, j + 1),
                dev,
                tol.cov_se * se,
                dev <= tol.cov_se * se,
            ));
        }
    }
    Ok(StatReport {
        rows,
        ks,
        moments,
        bonferroni_level: level,
        degenerate,
        fingerprint,
    })
}

/// Compares an ensemble with known Gaussian moments.
pub fn oracle_report(e: &Ensemble, mean: &DVector<f64>, cov: &DMatrix<f64>, tol: &Tolerances) -> Result<StatReport> {
    let d = e.proj_dim();
    if mean.len() != d || cov.shape() != (d, d) {
        return invalid("oracle moments have the wrong dimension");
    }
    let mo = empirical_moments(e)?;
    let mut rows = Vec::new();
    for i in 0..d {
        let dev = (mo.mean[i] - mean[i]).abs();
        let band = tol.mean_se * mo.mean_se[i];
        rows.push(row("mean_vs_oracle", format!("{}", i + 1), dev, band, dev <= band));
    }
    for i in 0..d {
        for j in i..d {
            let dev = (mo.cov[(i, j)] - cov[(i, j)]).abs();
            let band = tol.cov_se * mo.cov_se[(i, j)];
            rows.push(row("cov_vs_oracle", format!("{}:{}", i + 1, j + 1), dev, band, dev <= band));
        }
    }
    Ok(StatReport {
        rows,
        ks: Vec::new(),
        moments: vec![mo],
        bonferroni_level: tol.ks_level / d as f64,
        degenerate: false,
        fingerprint: e.fingerprint,
    })
}
