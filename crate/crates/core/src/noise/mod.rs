//! Exact sampling of the Q-Wiener process and its stochastic convolution on a
//! nested fine/coarse time grid.
//!
//! For each mode `i` and fine step `[s_j, s_{j+1}]` the table stores the pair
//!
//! ```text
//! db[i][j]   = beta_i(s_{j+1}) - beta_i(s_j)
//! conv[i][j] = int_{s_j}^{s_{j+1}} e^{-lambda_i (s_{j+1} - u)} d beta_i(u)
//! ```
//!
//! drawn jointly from their exact Gaussian law. Entries are for unit noise
//! strength; the factor `sqrt(q_i)` is applied by the solvers. Coarser steps
//! are recovered exactly by weighting the fine convolution entries with the
//! semigroup, so every coarse solver sees the same Brownian path as the
//! fine reference.

pub mod counter;

use std::io::{Read, Write};

pub use counter::{mix64, CounterKey, ModeKey};

use crate::error::{invalid, LabError, Result};
use crate::nemytskii::NoiseSpec;
use crate::spectral::{phi1, SpectralOperator};

/// Time horizon split into `m` coarse steps, each refined `refine` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub t_end: f64,
    pub m: usize,
    pub refine: usize,
}

impl GridSpec {
    pub fn new(t_end: f64, m: usize, refine: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return invalid(format!("horizon must be positive, got {t_end}"));
        }
        if m == 0 || refine == 0 {
            return invalid("step counts must be at least 1");
        }
        Ok(GridSpec { t_end, m, refine })
    }

    pub fn fine_steps(&self) -> usize {
        self.m * self.refine
    }

    /// Fine step `h = T / (m R)`.
    pub fn fine_step(&self) -> f64 {
        self.t_end / self.fine_steps() as f64
    }

    /// Coarse step `tau = T / m`.
    pub fn coarse_step(&self) -> f64 {
        self.t_end / self.m as f64
    }

    /// Number of fine steps per step of a solver running `coarse_m` steps.
    pub fn fine_per_coarse(&self, coarse_m: usize) -> Result<usize> {
        let total = self.fine_steps();
        if coarse_m == 0 || !total.is_multiple_of(coarse_m) {
            return invalid(format!(
                "{coarse_m} steps do not divide the fine grid of {total} steps"
            ));
        }
        Ok(total / coarse_m)
    }
}

/// `(1 - e^{-2x}) / (2x) - ((1 - e^{-x}) / x)^2`, the conditional variance of
/// the convolution given the Brownian increment, in units of `h` with `x = lambda h`.
fn residual_variance_ratio(x: f64) -> f64 {
    if x < 0.05 {
        // Taylor series; the closed form cancels catastrophically here
        let c = [
            1.0 / 12.0,
            -1.0 / 12.0,
            17.0 / 360.0,
            -7.0 / 360.0,
            43.0 / 6720.0,
            -107.0 / 60480.0,
            769.0 / 1_814_400.0,
        ];
        let poly = c.iter().rev().fold(0.0, |acc, ci| acc * x + ci);
        x * x * poly
    } else {
        let p = phi1(x);
        (phi1(2.0 * x) - p * p).max(0.0)
    }
}

/// Covariance of `(db, conv)` over one step of length `h` for eigenvalue `lambda`:
/// `[[h, (1 - e^{-lambda h})/lambda], [(1 - e^{-lambda h})/lambda, (1 - e^{-2 lambda h})/(2 lambda)]]`.
pub fn conv_pair_covariance(lambda: f64, h: f64) -> Result<[[f64; 2]; 2]> {
    if !(lambda > 0.0 && h > 0.0) {
        return invalid(format!("need lambda > 0 and h > 0, got ({lambda}, {h})"));
    }
    let x = lambda * h;
    let c12 = h * phi1(x);
    let c22 = h * phi1(2.0 * x);
    Ok([[h, c12], [c12, c22]])
}

/// Cholesky-style factors for drawing `(db, conv)` from two standard normals:
/// `db = sqrt_h z1`, `conv = slope db + resid_sd z2`.
#[derive(Debug, Clone, Copy)]
struct PairFactor {
    sqrt_h: f64,
    slope: f64,
    resid_sd: f64,
}

impl PairFactor {
    fn new(lambda: f64, h: f64) -> Self {
        let x = lambda * h;
        PairFactor {
            sqrt_h: h.sqrt(),
            slope: phi1(x),
            resid_sd: (h * residual_variance_ratio(x)).sqrt(),
        }
    }
}

/// Which Brownian family a table samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDomain {
    /// The driving noise `W^Q`.
    Primary,
    /// The independent copy `W~^Q` entering the limit equation.
    Independent,
}

impl NoiseDomain {
    pub fn tag(self) -> u64 {
        match self {
            NoiseDomain::Primary => 0x57,
            NoiseDomain::Independent => 0x5754_494C_4445,
        }
    }

    fn from_tag(tag: u64) -> Result<Self> {
        match tag {
            0x57 => Ok(NoiseDomain::Primary),
            0x5754_494C_4445 => Ok(NoiseDomain::Independent),
            _ => invalid(format!("unknown noise domain tag {tag:#x}")),
        }
    }
}

/// Immutable table of per-mode, per-fine-step `(db, conv)` pairs.
///
/// Storage is step-major: the entries of all modes for one step are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    grid: GridSpec,
    lambdas: Vec<f64>,
    db: Vec<f64>,
    conv: Vec<f64>,
    seed: u64,
    stream_id: u64,
    domain: NoiseDomain,
}

impl NoiseTable {
    fn build(
        grid: GridSpec,
        noise: &NoiseSpec,
        op: &SpectralOperator,
        seed: u64,
        stream_id: u64,
        domain: NoiseDomain,
    ) -> Result<Self> {
        if noise.len() != op.len() {
            return invalid(format!(
                "noise has {} modes, operator has {}",
                noise.len(),
                op.len()
            ));
        }
        let n = op.len();
        let steps = grid.fine_steps();
        let h = grid.fine_step();
        let key = CounterKey::new(seed, stream_id, domain.tag());
        let modes: Vec<(ModeKey, PairFactor)> = op
            .eigenvalues()
            .iter()
            .enumerate()
            .map(|(i, &l)| (key.mode(i), PairFactor::new(l, h)))
            .collect();
        let mut db = vec![0.0; n * steps];
        let mut conv = vec![0.0; n * steps];
        for step in 0..steps {
            let row = step * n..(step + 1) * n;
            for ((d, c), (mk, f)) in db[row.clone()].iter_mut().zip(&mut conv[row]).zip(&modes) {
                let (z1, z2) = mk.normal_pair(step);
                *d = f.sqrt_h * z1;
                *c = f.slope * *d + f.resid_sd * z2;
            }
        }
        Ok(NoiseTable {
            grid,
            lambdas: op.eigenvalues().to_vec(),
            db,
            conv,
            seed,
            stream_id,
            domain,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn domain(&self) -> NoiseDomain {
        self.domain
    }

    pub fn db(&self, mode: usize, step: usize) -> f64 {
        self.db[step * self.modes() + mode]
    }

    pub fn conv(&self, mode: usize, step: usize) -> f64 {
        self.conv[step * self.modes() + mode]
    }

    /// Brownian increments of all modes over fine step `step`.
    pub fn db_step(&self, step: usize) -> &[f64] {
        let n = self.modes();
        &self.db[step * n..(step + 1) * n]
    }

    /// Convolution increments of all modes over fine step `step`.
    pub fn conv_step(&self, step: usize) -> &[f64] {
        let n = self.modes();
        &self.conv[step * n..(step + 1) * n]
    }

    fn check_mode_step(&self, mode: usize, coarse_m: usize, coarse_step: usize) -> Result<usize> {
        let r = self.grid.fine_per_coarse(coarse_m)?;
        if mode >= self.modes() {
            return invalid(format!("mode {mode} out of range ({} modes)", self.modes()));
        }
        if coarse_step >= coarse_m {
            return invalid(format!("coarse step {coarse_step} out of range ({coarse_m} steps)"));
        }
        Ok(r)
    }

    /// Stochastic convolution of `mode` over coarse step `k` of a `coarse_m`-step
    /// solver: `sum_j e^{-lambda (t_{k+1} - s_{j+1})} conv[mode][j]`.
    pub fn aggregate_convolution(&self, mode: usize, coarse_m: usize, k: usize) -> Result<f64> {
        let r = self.check_mode_step(mode, coarse_m, k)?;
        let decay = (-self.lambdas[mode] * self.grid.fine_step()).exp();
        // Horner form of sum_l decay^{r-1-l} conv_l
        Ok((k * r..(k + 1) * r).fold(0.0, |acc, j| acc * decay + self.conv(mode, j)))
    }

    /// Brownian increment of `mode` over coarse step `k`.
    pub fn aggregate_increment(&self, mode: usize, coarse_m: usize, k: usize) -> Result<f64> {
        let r = self.check_mode_step(mode, coarse_m, k)?;
        Ok((k * r..(k + 1) * r).map(|j| self.db(mode, j)).sum())
    }

    /// Per-step `(db, conv)` for every mode on a grid of `coarse_m` steps,
    /// step-major like the table itself.
    pub fn coarse_increments(&self, coarse_m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.grid.fine_per_coarse(coarse_m)?;
        let n = self.modes();
        if r == 1 {
            return Ok((self.db.clone(), self.conv.clone()));
        }
        let h = self.grid.fine_step();
        let decay: Vec<f64> = self.lambdas.iter().map(|l| (-l * h).exp()).collect();
        let mut db = vec![0.0; n * coarse_m];
        let mut conv = vec![0.0; n * coarse_m];
        for k in 0..coarse_m {
            let (db_k, conv_k) = (&mut db[k * n..(k + 1) * n], &mut conv[k * n..(k + 1) * n]);
            for j in k * r..(k + 1) * r {
                let (dj, cj) = (self.db_step(j), self.conv_step(j));
                for i in 0..n {
                    db_k[i] += dj[i];
                    conv_k[i] = conv_k[i] * decay[i] + cj[i];
                }
            }
        }
        Ok((db, conv))
    }

    /// The same Brownian path on a grid whose refinement is divided by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseTable> {
        if factor == 0 || !self.grid.refine.is_multiple_of(factor) {
            return invalid(format!(
                "coarsening factor {factor} does not divide refinement {}",
                self.grid.refine
            ));
        }
        let grid = GridSpec::new(self.grid.t_end, self.grid.m, self.grid.refine / factor)?;
        let (db, conv) = self.coarse_increments(grid.fine_steps())?;
        Ok(NoiseTable {
            grid,
            lambdas: self.lambdas.clone(),
            db,
            conv,
            seed: self.seed,
            stream_id: self.stream_id,
            domain: self.domain,
        })
    }

    const MAGIC: &'static [u8; 8] = b"AEENOISE";
    const VERSION: u32 = 1;

    /// Binary dump: all integers and floats little-endian.
    ///
    /// ```text
    /// magic "AEENOISE" | version u32 | reserved u32 | domain tag u64 | seed u64
    /// | stream u64 | modes u64 | m u64 | refine u64 | T f64
    /// | lambdas[modes] f64 | db[steps * modes] f64 | conv[steps * modes] f64
    /// ```
    ///
    /// `db` and `conv` are step-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for v in [
            self.domain.tag(),
            self.seed,
            self.stream_id,
            self.modes() as u64,
            self.grid.m as u64,
            self.grid.refine as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.grid.t_end.to_le_bytes())?;
        for v in self.lambdas.iter().chain(&self.db).chain(&self.conv) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(LabError::Io("bad noise table magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != Self::VERSION {
            return Err(LabError::Io("unsupported noise table version".into()));
        }
        r.read_exact(&mut b4)?;
        let mut u = [0u64; 6];
        let mut b8 = [0u8; 8];
        for v in u.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = u64::from_le_bytes(b8);
        }
        let [tag, seed, stream_id, modes, m, refine] = u;
        r.read_exact(&mut b8)?;
        let t_end = f64::from_le_bytes(b8);
        let grid = GridSpec::new(t_end, m as usize, refine as usize)?;
        let modes = modes as usize;
        let entries = modes
            .checked_mul(grid.fine_steps())
            .ok_or_else(|| LabError::Io("noise table dimensions overflow".into()))?;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let lambdas = read_vec(modes)?;
        let db = read_vec(entries)?;
        let conv = read_vec(entries)?;
        Ok(NoiseTable {
            grid,
            lambdas,
            db,
            conv,
            seed,
            stream_id,
            domain: NoiseDomain::from_tag(tag)?,
        })
    }
}

/// Table of the driving noise `W^Q` for replica `stream_id`.
pub fn build_noise_table(
    grid: GridSpec,
    noise: &NoiseSpec,
    op: &SpectralOperator,
    master_seed: u64,
    stream_id: u64,
) -> Result<NoiseTable> {
    NoiseTable::build(grid, noise, op, master_seed, stream_id, NoiseDomain::Primary)
}

/// Table of the independent copy `W~^Q`; drawn from a separate key domain, so
/// it never shares variates with [`build_noise_table`] for any seed or stream.
pub fn build_independent_copy(
    grid: GridSpec,
    noise: &NoiseSpec,
    op: &SpectralOperator,
    master_seed: u64,
    stream_id: u64,
) -> Result<NoiseTable> {
    NoiseTable::build(grid, noise, op, master_seed, stream_id, NoiseDomain::Independent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(n: usize) -> (SpectralOperator, NoiseSpec) {
        let op = SpectralOperator::dirichlet_laplacian(n).unwrap();
        let noise = NoiseSpec::power_law(&op, 2.0).unwrap();
        (op, noise)
    }

    #[test]
    fn pair_covariance_examples() {
        let c = conv_pair_covariance(1.0, 1.0).unwrap();
        assert_eq!(c[0][0], 1.0);
        assert_relative_eq!(c[0][1], 1.0 - (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(c[1][0], 0.632121, max_relative = 1e-6);
        assert_relative_eq!(c[1][1], (1.0 - (-2.0f64).exp()) / 2.0, max_relative = 1e-15);
        assert_relative_eq!(c[1][1], 0.432332, max_relative = 1e-6);

        let h = 1e-8;
        let c = conv_pair_covariance(1.0, h).unwrap();
        for row in c {
            for v in row {
                assert_relative_eq!(v, h, max_relative = 1e-6);
            }
        }
        assert!(conv_pair_covariance(0.0, 1.0).is_err());
        assert!(conv_pair_covariance(1.0, -1.0).is_err());
    }

    #[test]
    fn residual_variance_branches_agree() {
        // the series and the closed form meet at the switch point
        let below = residual_variance_ratio(0.05 - 1e-12);
        let p = phi1(0.05);
        let closed = phi1(0.1) - p * p;
        assert_relative_eq!(below, closed, max_relative = 1e-9);
        assert_relative_eq!(residual_variance_ratio(1e-3), 8.325004720278418e-8, max_relative = 1e-12);
        assert_relative_eq!(residual_variance_ratio(1e-2), 8.250470284158938e-6, max_relative = 1e-12);
    }

    #[test]
    fn determinant_nonnegative() {
        let mut s = 12345u64;
        for _ in 0..100 {
            s = mix64(s);
            let lambda = 10f64.powf((s >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0);
            s = mix64(s);
            let h = 10f64.powf((s >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 5.0);
            let c = conv_pair_covariance(lambda, h).unwrap();
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            assert!(det >= -1e-15 * c[0][0] * c[1][1], "det {det} at ({lambda}, {h})");
            assert!(residual_variance_ratio(lambda * h) >= 0.0);
        }
    }

    #[test]
    fn tables_are_deterministic_and_stream_separated() {
        let (op, noise) = setup(8);
        let grid = GridSpec::new(1.0, 4, 4).unwrap();
        let a = build_noise_table(grid, &noise, &op, 99, 3).unwrap();
        let b = build_noise_table(grid, &noise, &op, 99, 3).unwrap();
        assert_eq!(a, b);
        let c = build_noise_table(grid, &noise, &op, 99, 4).unwrap();
        assert!(a.db.iter().zip(&c.db).take(100).any(|(x, y)| x != y));
        let w = build_independent_copy(grid, &noise, &op, 99, 3).unwrap();
        assert!(a.db.iter().zip(&w.db).all(|(x, y)| x != y));
        assert_eq!(w, build_independent_copy(grid, &noise, &op, 99, 3).unwrap());
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let (op, _) = setup(8);
        let grid = GridSpec::new(1.0, 4, 1).unwrap();
        assert!(build_noise_table(grid, &NoiseSpec::zero(7), &op, 0, 0).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let (op, noise) = setup(4);
        let grid = GridSpec::new(1.0, 8, 1).unwrap();
        let t = build_noise_table(grid, &noise, &op, 5, 0).unwrap();
        for k in 0..8 {
            assert_eq!(t.aggregate_convolution(2, 8, k).unwrap(), t.conv(2, k));
        }
        assert!(t.aggregate_convolution(0, 8, 8).is_err());
        assert!(t.aggregate_convolution(4, 8, 0).is_err());
        assert!(t.aggregate_convolution(0, 3, 0).is_err());

        // brute-force re-summation at R = 4
        let grid = GridSpec::new(1.0, 8, 4).unwrap();
        let t = build_noise_table(grid, &noise, &op, 5, 0).unwrap();
        let h = grid.fine_step();
        for mode in 0..4 {
            let lambda = op.eigenvalues()[mode];
            for k in 0..8 {
                let t_next = (k + 1) as f64 * grid.coarse_step();
                let mut brute = 0.0;
                for j in 4 * k..4 * k + 4 {
                    brute += (-lambda * (t_next - (j + 1) as f64 * h)).exp() * t.conv(mode, j);
                }
                let agg = t.aggregate_convolution(mode, 8, k).unwrap();
                assert!((agg - brute).abs() <= 1e-13 * brute.abs().max(1e-3));
            }
        }

        // lambda -> 0: the convolution is the Brownian increment
        let tiny = SpectralOperator::from_eigenvalues(vec![1e-12]).unwrap();
        let t = build_noise_table(grid, &NoiseSpec::new(vec![1.0]).unwrap(), &tiny, 1, 2).unwrap();
        for k in 0..8 {
            let agg = t.aggregate_convolution(0, 8, k).unwrap();
            let inc = t.aggregate_increment(0, 8, k).unwrap();
            assert_relative_eq!(agg, inc, max_relative = 1e-6);
        }
    }

    #[test]
    fn coarse_increments_match_scalar_aggregation() {
        let (op, noise) = setup(5);
        let grid = GridSpec::new(0.5, 6, 4).unwrap();
        let t = build_noise_table(grid, &noise, &op, 17, 1).unwrap();
        for coarse_m in [6usize, 12, 24, 3] {
            let (db, conv) = t.coarse_increments(coarse_m).unwrap();
            for k in 0..coarse_m {
                for i in 0..5 {
                    let a = t.aggregate_convolution(i, coarse_m, k).unwrap();
                    let b = t.aggregate_increment(i, coarse_m, k).unwrap();
                    assert!((conv[k * 5 + i] - a).abs() < 1e-14);
                    assert!((db[k * 5 + i] - b).abs() < 1e-14);
                }
            }
        }
        let half = t.coarsen(2).unwrap();
        assert_eq!(half.grid().refine, 2);
        assert_eq!(half.grid().fine_steps(), 12);
        assert!(t.coarsen(3).is_err());
        let (db, conv) = t.coarse_increments(12).unwrap();
        assert_eq!(half.db, db);
        assert_eq!(half.conv, conv);
    }

    #[test]
    fn sample_variance_of_increments() {
        let (op, noise) = setup(10);
        let grid = GridSpec::new(1.0, 100, 100).unwrap();
        let t = build_noise_table(grid, &noise, &op, 2024, 0).unwrap();
        let h = grid.fine_step();
        // 10 modes x 10^4 steps = 10^5 entries
        let n = t.db.len() as f64;
        let var = t.db.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var / h - 1.0).abs() < 0.03, "var/h = {}", var / h);
    }

    #[test]
    fn independent_copy_is_uncorrelated() {
        let (op, noise) = setup(10);
        let grid = GridSpec::new(1.0, 100, 100).unwrap();
        let a = build_noise_table(grid, &noise, &op, 8, 0).unwrap();
        let b = build_independent_copy(grid, &noise, &op, 8, 0).unwrap();
        let corr = pearson(&a.db, &b.db);
        assert!(corr.abs() < 0.02, "corr = {corr}");
        let c = build_noise_table(grid, &noise, &op, 8, 1).unwrap();
        assert!(pearson(&a.db, &c.db).abs() < 0.02);
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn binary_round_trip() {
        let (op, noise) = setup(3);
        let grid = GridSpec::new(1.0, 2, 3).unwrap();
        let t = build_independent_copy(grid, &noise, &op, 1, 2).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 + 6 * 8 + 8 + 8 * (3 + 2 * 3 * 6));
        let back = NoiseTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        buf[0] = b'X';
        assert!(NoiseTable::read_from(buf.as_slice()).is_err());
    }
}
