//! Run configuration: one strict JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{check_box_covers, SemiclassicalConfig};
use crate::error::{Error, Result};
use crate::model::{default_potential, Domain, Grid, PotentialKind, PotentialSpec, ProblemParams};
use crate::solvers::SolverConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemParams,
    pub grid: Grid,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub potential: Option<PotentialConfig>,
    #[serde(default)]
    pub semiclassical: Option<SweepConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `V(x) = 2 - exp(-|x|²)` on the ball of radius 3/2.
    Default,
    GaussianWell {
        base: f64,
        depth: f64,
        #[serde(default)]
        center: [f64; 3],
        domain: Domain,
        m: f64,
        minimizers: Vec<[f64; 3]>,
    },
    /// `V ≡ value` on the whole space with one designated point.
    Constant {
        value: f64,
        #[serde(default)]
        designated: [f64; 3],
    },
}

impl PotentialConfig {
    pub fn build(&self) -> Result<PotentialSpec> {
        let spec = match self {
            PotentialConfig::Default => default_potential(),
            PotentialConfig::GaussianWell { base, depth, center, domain, m, minimizers } => PotentialSpec {
                kind: PotentialKind::GaussianWell { base: *base, depth: *depth, center: *center },
                domain: *domain,
                m: *m,
                minimizers: minimizers.clone(),
            },
            PotentialConfig::Constant { value, designated } => PotentialSpec::constant(*value, *designated),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The ε sweep: shared penalty settings, the box for every ε, and the grid
/// on which the reference limit profile is first computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default)]
    pub cutoff_beta: Option<f64>,
    #[serde(default)]
    pub tube_radius: Option<f64>,
    #[serde(default)]
    pub ignore_penalty: bool,
    pub grid: Grid,
    pub reference_grid: Grid,
}

fn one() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn at(&self, eps: f64) -> SemiclassicalConfig {
        SemiclassicalConfig {
            eps,
            nu: self.nu,
            kappa: self.kappa,
            cap: self.cap,
            cutoff_beta: self.cutoff_beta,
            tube_radius: self.tube_radius,
            ignore_penalty: self.ignore_penalty,
        }
    }
}

/// A configuration problem located in the source text.
#[derive(Debug)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

/// First line holding `"key":`.
fn locate_key(src: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| {
        l.find(&needle).is_some_and(|p| l[p + needle.len()..].trim_start().starts_with(':'))
    }).map(|i| i + 1)
}

/// Key named at the start of a validation message such as `q = 3 violates ...`.
fn message_key(msg: &str) -> Option<String> {
    let body = msg.split_once(": ").map_or(msg, |(_, b)| b);
    let (head, _) = body.split_once(" = ")?;
    let key = head.rsplit(' ').next()?;
    let key = match key {
        "N" => "dimension",
        k => k,
    };
    Some(key.to_string())
}

impl RunConfig {
    pub fn parse(src: &str) -> std::result::Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(src).map_err(|e| ConfigError {
            path: None,
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| {
            let message = e.to_string();
            let line = message_key(&message).and_then(|k| locate_key(src, &k));
            ConfigError { path: None, line, message }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(&src).map_err(|e| ConfigError { path: Some(path.to_path_buf()), ..e })
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.grid.validate()?;
        self.solver.validate()?;
        if let Some(p) = &self.potential {
            p.build()?;
        }
        if let Some(s) = &self.semiclassical {
            if s.eps.is_empty() {
                return Err(Error::Config("semiclassical eps list is empty".into()));
            }
            for &e in &s.eps {
                s.at(e).validate()?;
            }
            s.grid.validate()?;
            s.reference_grid.validate()?;
            let Grid::Box(bg) = s.grid else {
                return Err(Error::Config("semiclassical grid must use the box backend".into()));
            };
            let pot = self.potential_spec()?;
            for &e in &s.eps {
                check_box_covers(&bg, &pot, e)?;
            }
        }
        Ok(())
    }

    /// Potential of the run (the default potential when none is given).
    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        match &self.potential {
            Some(p) => p.build(),
            None => Ok(default_potential()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "problem": {
    "dimension": 3,
    "alpha": 2.0,
    "mu": 1.0,
    "q": 4.0,
    "a": 1.0
  },
  "grid": { "backend": "radial", "r_max": 30.0, "n": 4096 }
}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(BASE).unwrap();
        assert_eq!(c.problem, ProblemParams::default());
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn violated_inequality_is_named_with_its_line() {
        let src = BASE.replace("\"q\": 4.0", "\"q\": 3.0");
        let e = RunConfig::parse(&src).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("q > max"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let src = BASE.replace("\"a\": 1.0", "\"a\": 1.0,\n    \"beta\": 2.0");
        let e = RunConfig::parse(&src).unwrap_err();
        assert!(e.message.contains("beta") && e.line == Some(8), "{e}");
        let src = BASE.replace("\"n\": 4096", "\"n\": 4096, \"extra\": 1");
        assert!(RunConfig::parse(&src).is_err());
    }

    #[test]
    fn bad_grid_is_rejected() {
        let src = BASE.replace("\"n\": 4096", "\"n\": 8");
        assert!(RunConfig::parse(&src).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig::parse(BASE).unwrap();
        let back = RunConfig::parse(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
