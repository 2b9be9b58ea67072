//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! preset = sine          # sine | linear | zero: fills in every default
//! n = 64
//! nl = sine:1.0          # zero | linear:<c> | sine:<a>
//! m = 8,16,32,64,128
//! sode.c = -1,0;0,-2     # rows separated by ';'
//! ```
//!
//! Keys are grouped by prefix: unprefixed keys describe the SPDE experiment,
//! `sode.` keys the finite-dimensional one, `check.` keys the pass/fail bands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use aee_core::integrators::{Model, ModelSpec, SodeDrift, SodeModel};
use aee_core::lab::{fingerprint_bytes, Tolerances};
use aee_core::nemytskii::{Nonlinearity, NoiseSpec};
use aee_core::noise::GridSpec;
use aee_core::spectral::{AssumptionParams, SpectralField, SpectralOperator};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

const KNOWN_KEYS: &[&str] = &[
    "preset",
    "n",
    "rho_decay",
    "beta",
    "alpha",
    "t_end",
    "x0",
    "nl",
    "m",
    "refine",
    "replicas",
    "proj_dim",
    "seed",
    "iota",
    "out",
    "check.order_min",
    "check.order_max",
    "check.max_residual",
    "check.ks_level",
    "check.se_band",
    "sode.c",
    "sode.b",
    "sode.y0",
];

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub n: usize,
    pub rho_decay: f64,
    pub beta: f64,
    pub alpha: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub nl: Nonlinearity,
    pub ms: Vec<usize>,
    pub refine: usize,
    pub replicas: usize,
    pub proj_dim: usize,
    pub seed: u64,
    pub iota: f64,
    pub out: PathBuf,
    pub order_band: (f64, f64),
    pub max_residual: f64,
    pub ks_level: f64,
    pub se_band: f64,
    pub sode_c: DMatrix<f64>,
    pub sode_b: SodeDrift,
    pub sode_y0: Vec<f64>,
    /// Canonical `key=value` lines the configuration was resolved from.
    canonical: Vec<(String, String)>,
}

fn preset_defaults(name: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let nl = match name {
        "sine" => "sine:1",
        "linear" => "linear:0.5",
        "zero" => "zero",
        other => return err(format!("unknown preset '{other}' (expected sine, linear or zero)")),
    };
    let pairs = [
        ("preset", name),
        ("n", "64"),
        ("rho_decay", "2"),
        ("beta", "2"),
        ("alpha", "2"),
        ("t_end", "1"),
        ("x0", "e1"),
        ("nl", nl),
        ("m", "8,16,32,64,128"),
        ("refine", "64"),
        ("replicas", "2000"),
        ("proj_dim", "5"),
        ("seed", "2024"),
        ("iota", "0.75"),
        ("out", "aee-out"),
        ("check.order_min", "0.85"),
        ("check.order_max", "1.15"),
        ("check.max_residual", "0.15"),
        ("check.ks_level", "0.01"),
        ("check.se_band", "3"),
        ("sode.c", "-1,0;0,-2"),
        ("sode.b", "linear:0.4,0.3;-0.3,0.4"),
        ("sode.y0", "1,0.5"),
    ];
    Ok(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

/// Splits config text into `(key, value)` pairs, rejecting malformed lines.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return err(format!("line {}: empty key or value", lineno + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().or_else(|_| err(format!("{key}: cannot parse '{v}'")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn matrix(key: &str, v: &str) -> Result<DMatrix<f64>, ConfigError> {
    let rows: Vec<Vec<f64>> = v.split(';').map(|r| list(key, r)).collect::<Result<_, _>>()?;
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return err(format!("{key}: rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn nonlinearity(v: &str) -> Result<Nonlinearity, ConfigError> {
    let (kind, arg) = v.split_once(':').unwrap_or((v, ""));
    match (kind.trim(), arg.trim()) {
        ("zero", "") => Ok(Nonlinearity::Zero),
        ("linear", a) if !a.is_empty() => Ok(Nonlinearity::Linear(num("nl", a)?)),
        ("sine", a) if !a.is_empty() => Ok(Nonlinearity::Sine(num("nl", a)?)),
        _ => err(format!("nl: expected zero, linear:<c> or sine:<a>, got '{v}'")),
    }
}

fn sode_drift(v: &str) -> Result<SodeDrift, ConfigError> {
    let (kind, arg) = v.split_once(':').unwrap_or((v, ""));
    match (kind.trim(), arg.trim()) {
        ("zero", "") => Ok(SodeDrift::Zero),
        ("linear", a) if !a.is_empty() => Ok(SodeDrift::Linear(matrix("sode.b", a)?)),
        ("sine", a) if !a.is_empty() => Ok(SodeDrift::Sine(num("sode.b", a)?)),
        _ => err(format!("sode.b: expected zero, linear:<matrix> or sine:<a>, got '{v}'")),
    }
}

fn initial_data(v: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
    if let Some(k) = v.strip_prefix('e') {
        let k: usize = num("x0", k)?;
        if k == 0 || k > n {
            return err(format!("x0: basis index {k} outside 1..={n}"));
        }
        let mut x = vec![0.0; n];
        x[k - 1] = 1.0;
        return Ok(x);
    }
    let mut x: Vec<f64> = list("x0", v)?;
    if x.len() > n {
        return err(format!("x0: {} coefficients for {n} modes", x.len()));
    }
    x.resize(n, 0.0);
    Ok(x)
}

impl ExperimentConfig {
    /// Builds a configuration from `key = value` text plus later overrides.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs = parse_pairs(text)?;
        pairs.extend_from_slice(overrides);
        Self::resolve(&pairs)
    }

    /// Later pairs win; `preset` selects the defaults the others override.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        for (k, _) in pairs {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return err(format!("unknown key '{k}'"));
            }
        }
        let preset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.as_str())
            .unwrap_or("sine");
        let mut map = preset_defaults(preset)?;
        for (k, v) in pairs {
            map.insert(k.clone(), v.clone());
        }
        let get = |k: &str| map[k].as_str();

        let n: usize = num("n", get("n"))?;
        if n == 0 {
            return err("n must be at least 1");
        }
        let ms: Vec<usize> = list("m", get("m"))?;
        if ms.is_empty() || ms.contains(&0) {
            return err("m: step counts must be positive");
        }
        if ms.windows(2).any(|w| w[0] >= w[1]) {
            return err("m: step counts must be strictly increasing");
        }
        let m_max = *ms.last().expect("nonempty");
        if let Some(m) = ms.iter().find(|&&m| !m_max.is_multiple_of(m)) {
            return err(format!("m: {m} does not divide the largest step count {m_max}"));
        }
        let cfg = ExperimentConfig {
            preset: preset.to_string(),
            n,
            rho_decay: num("rho_decay", get("rho_decay"))?,
            beta: num("beta", get("beta"))?,
            alpha: num("alpha", get("alpha"))?,
            t_end: num("t_end", get("t_end"))?,
            x0: initial_data(get("x0"), n)?,
            nl: nonlinearity(get("nl"))?,
            ms,
            refine: num("refine", get("refine"))?,
            replicas: num("replicas", get("replicas"))?,
            proj_dim: num("proj_dim", get("proj_dim"))?,
            seed: num("seed", get("seed"))?,
            iota: num("iota", get("iota"))?,
            out: PathBuf::from(get("out")),
            order_band: (num("check.order_min", get("check.order_min"))?, num("check.order_max", get("check.order_max"))?),
            max_residual: num("check.max_residual", get("check.max_residual"))?,
            ks_level: num("check.ks_level", get("check.ks_level"))?,
            se_band: num("check.se_band", get("check.se_band"))?,
            sode_c: matrix("sode.c", get("sode.c"))?,
            sode_b: sode_drift(get("sode.b"))?,
            sode_y0: list("sode.y0", get("sode.y0"))?,
            canonical: map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        if cfg.replicas < 2 {
            return err("replicas must be at least 2");
        }
        if cfg.refine == 0 {
            return err("refine must be at least 1");
        }
        if cfg.proj_dim == 0 || cfg.proj_dim > cfg.n {
            return err(format!("proj_dim must lie in 1..={}", cfg.n));
        }
        if !(cfg.t_end > 0.0) {
            return err("t_end must be positive");
        }
        if !(cfg.ks_level > 0.0 && cfg.ks_level < 1.0) || !(cfg.se_band > 0.0) {
            return err("check.ks_level must lie in (0, 1) and check.se_band be positive");
        }
        Ok(cfg)
    }

    /// Stable hash of the canonical configuration. The output directory is
    /// left out: where results go does not change what they are.
    pub fn fingerprint(&self) -> u64 {
        let text: Vec<String> = self
            .canonical
            .iter()
            .filter(|(k, _)| k != "out")
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        fingerprint_bytes(text.join("\n").as_bytes())
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn canonical_text(&self) -> String {
        self.canonical.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn m_max(&self) -> usize {
        *self.ms.last().expect("validated nonempty")
    }

    /// Fine grid shared by every step count: `m_max * refine` steps.
    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.t_end, self.m_max(), self.refine).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn params(&self) -> AssumptionParams {
        AssumptionParams {
            beta: self.beta,
            rho_decay: self.rho_decay,
            alpha: self.alpha,
            ..AssumptionParams::default()
        }
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let wrap = |e: aee_core::LabError| ConfigError(e.to_string());
        let op = SpectralOperator::dirichlet_laplacian(self.n).map_err(wrap)?;
        let params = self.params();
        params.validate().map_err(wrap)?;
        Model::new(ModelSpec {
            noise: NoiseSpec::power_law(&op, self.rho_decay).map_err(wrap)?,
            op,
            nl: self.nl,
            params,
            t_end: self.t_end,
            x0: SpectralField::new(self.x0.clone()),
        })
        .map_err(wrap)
    }

    pub fn sode_model(&self) -> Result<SodeModel, ConfigError> {
        SodeModel::new(
            self.sode_c.clone(),
            self.sode_b.clone(),
            self.t_end,
            DVector::from_vec(self.sode_y0.clone()),
        )
        .map_err(|e| ConfigError(e.to_string()))
    }

    /// The lower bound `2 / (alpha beta)` that `iota` must exceed.
    pub fn iota_bound(&self) -> f64 {
        2.0 / (self.alpha * self.beta)
    }

    pub fn check_iota(&self) -> Result<(), ConfigError> {
        let bound = self.iota_bound();
        if self.iota > bound {
            Ok(())
        } else {
            err(format!(
                "iota must exceed 2/(alpha*beta): need {} > 2/({}*{}) = {bound}",
                self.iota, self.alpha, self.beta
            ))
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            ks_level: self.ks_level,
            mean_se: self.se_band,
            cov_se: self.se_band,
        }
    }
}

/// Parses a `KEY=VALUE` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    impl ExperimentConfig {
        fn preset(name: &str) -> Result<Self, ConfigError> {
            Self::resolve(&[("preset".into(), name.into())])
        }
    }

    #[test]
    fn presets_resolve() {
        let c = ExperimentConfig::preset("sine").unwrap();
        assert_eq!(c.n, 64);
        assert_eq!(c.ms, vec![8, 16, 32, 64, 128]);
        assert_eq!(c.nl, Nonlinearity::Sine(1.0));
        assert_eq!(c.x0[0], 1.0);
        assert_eq!(c.iota_bound(), 0.5);
        assert!(c.check_iota().is_ok());
        assert_eq!(ExperimentConfig::preset("linear").unwrap().nl, Nonlinearity::Linear(0.5));
        assert!(ExperimentConfig::preset("cubic").is_err());
    }

    #[test]
    fn text_and_overrides() {
        let text = "preset = zero\n# comment\nn = 8  # trailing\nm = 4,8\nproj_dim = 3\n";
        let c = ExperimentConfig::from_text(text, &[("n".into(), "16".into())]).unwrap();
        assert_eq!(c.nl, Nonlinearity::Zero);
        assert_eq!(c.n, 16);
        assert_eq!(c.ms, vec![4, 8]);
        assert_eq!(c.x0.len(), 16);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(ExperimentConfig::from_text("n 64", &[]).is_err());
        assert!(ExperimentConfig::from_text("bogus = 1", &[]).is_err());
        assert!(ExperimentConfig::from_text("n = sixty", &[]).is_err());
        assert!(ExperimentConfig::from_text("m = 8,12,16", &[]).is_err());
        assert!(ExperimentConfig::from_text("m = 16,8", &[]).is_err());
        assert!(ExperimentConfig::from_text("nl = cubic:1", &[]).is_err());
        assert!(ExperimentConfig::from_text("sode.c = 1,2;3", &[]).is_err());
    }

    #[test]
    fn iota_bound_is_strict() {
        let c = ExperimentConfig::from_text("iota = 0.5", &[]).unwrap();
        assert!(c.check_iota().is_err());
        let c = ExperimentConfig::from_text("iota = 0.4\nbeta = 1.5", &[]).unwrap();
        assert!(c.check_iota().unwrap_err().0.contains("2/(alpha*beta)"));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::from_text("n = 8\nproj_dim = 2", &[]).unwrap();
        let b = ExperimentConfig::from_text("proj_dim = 2\nn = 8", &[]).unwrap();
        let c = ExperimentConfig::from_text("n = 9\nproj_dim = 2", &[]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        let d = ExperimentConfig::from_text("n = 8\nproj_dim = 2\nout = elsewhere", &[]).unwrap();
        assert_eq!(a.fingerprint(), d.fingerprint());
    }

    #[test]
    fn sode_keys() {
        let c = ExperimentConfig::from_text("sode.c = 1,0;0,-1\nsode.b = zero", &[]).unwrap();
        assert!(c.sode_model().is_err());
        let c = ExperimentConfig::preset("sine").unwrap();
        let m = c.sode_model().unwrap();
        assert_eq!(m.dim(), 2);
    }
}
