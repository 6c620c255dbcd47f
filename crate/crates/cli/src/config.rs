//! Run configuration: `key=value` files overlaid with command-line flags.

use std::path::{Path, PathBuf};

use microbranch::algebra::WellCase;
use microbranch::bounds::PhaseGridSpec;
use microbranch::energy::QuadratureSpec;
use microbranch::sweep::SweepConstruction;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}; known keys: {keys}", keys = KEYS.join(", "))]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
}

pub const KEYS: &[&str] = &[
    "case",
    "alpha",
    "epsilon",
    "L",
    "H",
    "epsilons",
    "construction",
    "theta",
    "base_order",
    "max_refinement_depth",
    "rel_tol",
    "line_points",
    "mesh",
    "max_iter",
    "seed",
    "out",
    "phase_log_l",
    "phase_log_h",
    "phase_grid",
    "ratio_c",
    "threads",
    "corrupt_well",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub case: WellCase,
    pub alpha: f64,
    pub epsilon: f64,
    pub length: f64,
    pub height: f64,
    pub epsilons: Vec<f64>,
    pub construction: SweepConstruction,
    pub theta: Option<f64>,
    pub quadrature: QuadratureSpec,
    pub mesh: (usize, usize),
    pub max_iter: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub phase: PhaseGridSpec,
    /// Regression constant of the energy sandwich.
    pub ratio_c: f64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Negative-control hook for `validate`.
    pub corrupt_well: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: WellCase::K2,
            alpha: 0.1,
            epsilon: 1e-4,
            length: 1.0,
            height: 1.0,
            epsilons: vec![1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5, 1e-4],
            construction: SweepConstruction::Best,
            theta: None,
            quadrature: QuadratureSpec::default(),
            mesh: (48, 48),
            max_iter: 5000,
            seed: 1,
            out: PathBuf::from("."),
            phase: PhaseGridSpec::default(),
            ratio_c: 50.0,
            threads: 0,
            corrupt_well: 0.0,
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), reason: reason.into() }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| bad(key, v, "not a number"))?;
    if !x.is_finite() {
        return Err(bad(key, v, "not finite"));
    }
    Ok(x)
}

fn parse_positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = parse_f64(key, v)?;
    if x <= 0.0 {
        return Err(bad(key, v, "must be positive"));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| bad(key, v, "not a non-negative integer"))
}

fn parse_pair<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T, ConfigError>) -> Result<(T, T), ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(bad(key, v, "expected two comma-separated values"));
    }
    Ok((item(key, parts[0])?, item(key, parts[1])?))
}

pub fn parse_case(key: &str, v: &str) -> Result<WellCase, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "k1" => Ok(WellCase::K1),
        "k2" => Ok(WellCase::K2),
        _ => Err(bad(key, v, "expected k1 or k2")),
    }
}

pub fn parse_mesh(key: &str, v: &str) -> Result<(usize, usize), ConfigError> {
    let (nx, ny) = parse_pair(key, v, parse_usize)?;
    if nx < 2 || ny < 2 {
        return Err(bad(key, v, "need at least 2 cells per axis"));
    }
    Ok((nx, ny))
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let v = v.trim();
        match key {
            "case" => self.case = parse_case(key, v)?,
            "alpha" => {
                let a = parse_f64(key, v)?;
                if !(a > 0.0 && a < 1.0) {
                    return Err(bad(key, v, "must lie in (0, 1)"));
                }
                self.alpha = a;
            }
            "epsilon" => self.epsilon = parse_positive(key, v)?,
            "L" => self.length = parse_positive(key, v)?,
            "H" => self.height = parse_positive(key, v)?,
            "epsilons" => {
                let list: Result<Vec<f64>, _> = v.split(',').map(|s| parse_positive(key, s.trim())).collect();
                let list = list?;
                if list.is_empty() {
                    return Err(bad(key, v, "empty list"));
                }
                self.epsilons = list;
            }
            "construction" => {
                self.construction = SweepConstruction::parse(v).ok_or_else(|| bad(key, v, "expected best, horizontal or vertical"))?
            }
            "theta" => {
                let t = parse_f64(key, v)?;
                if !(t > 0.25 && t < 0.5) {
                    return Err(bad(key, v, "must lie in (1/4, 1/2)"));
                }
                self.theta = Some(t);
            }
            "base_order" => self.quadrature.base_order = parse_usize(key, v)?,
            "max_refinement_depth" => self.quadrature.max_refinement_depth = parse_usize(key, v)?,
            "rel_tol" => self.quadrature.rel_tol = parse_positive(key, v)?,
            "line_points" => self.quadrature.line_points = parse_usize(key, v)?,
            "mesh" => self.mesh = parse_mesh(key, v)?,
            "max_iter" => self.max_iter = parse_usize(key, v)?,
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v, "not a non-negative integer"))?,
            "out" => self.out = PathBuf::from(v),
            "phase_log_l" => self.phase.log_l = parse_pair(key, v, parse_f64)?,
            "phase_log_h" => self.phase.log_h = parse_pair(key, v, parse_f64)?,
            "phase_grid" => (self.phase.nx, self.phase.ny) = parse_mesh(key, v)?,
            "ratio_c" => self.ratio_c = parse_positive(key, v)?,
            "threads" => self.threads = parse_usize(key, v)?,
            "corrupt_well" => self.corrupt_well = parse_f64(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        if let Err(reason) = self.quadrature.validate() {
            return Err(bad(key, v, reason));
        }
        if self.phase.log_l.0 >= self.phase.log_l.1 || self.phase.log_h.0 >= self.phase.log_h.1 {
            return Err(bad(key, v, "phase ranges need min < max"));
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# header\ncase = k1\nalpha=0.2 # trailing\n\nmesh=32,16\nepsilons=1e-5, 1e-4\n").unwrap();
        assert_eq!(c.case, WellCase::K1);
        assert_eq!(c.alpha, 0.2);
        assert_eq!(c.mesh, (32, 16));
        assert_eq!(c.epsilons, vec![1e-5, 1e-4]);
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("gamma=1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.apply_text("alpha=1.5"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("theta=0.2"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("mesh=1,4"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("rel_tol=0"), Err(ConfigError::Value { .. })));
        assert!(matches!(c.apply_text("just words"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "case" => "k1",
            "epsilons" => "1e-5,1e-4",
            "construction" => "horizontal",
            "theta" => "0.3",
            "mesh" | "phase_grid" => "8,8",
            "phase_log_l" | "phase_log_h" => "0,4",
            "out" => "results",
            "alpha" => "0.3",
            _ => "2",
        };
        for k in KEYS {
            let mut c = RunConfig::default();
            c.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
