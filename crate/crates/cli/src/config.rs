//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use aoii_core::ctmc::{make_binary, make_spread, make_symmetric, ternary_example, ChannelSpec, GeneratorMatrix};
use aoii_core::optimizer::{Family, Policy, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::policy_io::PolicySpec;

pub const SCHEMA: &str = "aoii-run/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "$schema")]
    pub schema: String,
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub family: Option<Family>,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    /// An earlier `optimize` output whose `policy` field is used.
    #[serde(default)]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSpec {
    Matrix { rows: Vec<Vec<f64>> },
    Symmetric { n: usize, sigma: f64 },
    Binary { sigma1: f64, sigma2: f64 },
    Spread { n: usize, sigma_min: f64, sigma_max: f64, p_min: f64, p_max: f64 },
    /// The three-state source of the numerical examples.
    Ternary,
}

impl SourceSpec {
    pub fn build(&self) -> Result<GeneratorMatrix, CliError> {
        let g = match self {
            SourceSpec::Matrix { rows } => GeneratorMatrix::from_rows(rows),
            SourceSpec::Symmetric { n, sigma } => make_symmetric(*n, *sigma),
            SourceSpec::Binary { sigma1, sigma2 } => make_binary(*sigma1, *sigma2),
            SourceSpec::Spread { n, sigma_min, sigma_max, p_min, p_max } => {
                make_spread(*n, *sigma_min, *sigma_max, *p_min, *p_max)
            }
            SourceSpec::Ternary => Ok(ternary_example()),
        };
        g.map_err(|e| CliError::Config(format!("source: {e}")))
    }

    /// Same source family with `n` states, for sweeps over the state count.
    pub fn with_n(&self, n: usize) -> Result<SourceSpec, CliError> {
        match self {
            SourceSpec::Symmetric { sigma, .. } => Ok(SourceSpec::Symmetric { n, sigma: *sigma }),
            SourceSpec::Spread { sigma_min, sigma_max, p_min, p_max, .. } => Ok(SourceSpec::Spread {
                n,
                sigma_min: *sigma_min,
                sigma_max: *sigma_max,
                p_min: *p_min,
                p_max: *p_max,
            }),
            _ => Err(CliError::Config("sweep.axis: \"n\" needs a symmetric or spread source".into())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub cycles: u64,
    pub seed: u64,
    /// Write one CSV row per simulated cycle.
    pub trace: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec { cycles: 100_000, seed: 1, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Tau,
    Budget,
    N,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub range: Option<Range>,
    #[serde(default)]
    pub families: Option<Vec<Family>>,
    /// Also simulate every grid point.
    #[serde(default)]
    pub simulate: bool,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let pts = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if !(r.step > 0.0 && r.step.is_finite() && r.start.is_finite() && r.stop.is_finite()) {
                    return Err(CliError::Config("sweep.range: need finite start/stop and step > 0".into()));
                }
                let count = ((r.stop - r.start) / r.step + 1e-9).floor();
                if count < 0.0 || count > 1e6 {
                    return Err(CliError::Config(format!("sweep.range: {count} points is out of bounds")));
                }
                (0..=count as usize).map(|k| r.start + k as f64 * r.step).collect()
            }
            (Some(_), Some(_)) => return Err(CliError::Config("sweep: give either values or range, not both".into())),
            (None, None) => return Err(CliError::Config("sweep: empty range (give values or range)".into())),
        };
        if pts.is_empty() {
            return Err(CliError::Config("sweep: empty range".into()));
        }
        for (k, &x) in pts.iter().enumerate() {
            let ok = match self.axis {
                Axis::Tau => x >= 0.0,
                Axis::Budget => x > 0.0 && x.is_finite(),
                Axis::N => x >= 2.0 && x.fract() == 0.0 && x <= 1e4,
            };
            if !ok {
                return Err(CliError::Config(format!("sweep.values[{k}]: {x} is not valid on the {:?} axis", self.axis)));
            }
        }
        Ok(pts)
    }

    pub fn families(&self) -> Result<Vec<Family>, CliError> {
        match (&self.families, self.axis) {
            (Some(f), _) if f.is_empty() => Err(CliError::Config("sweep.families: empty".into())),
            (Some(f), Axis::Tau) if f.contains(&Family::Ps) => {
                Err(CliError::Config("sweep.families: ps has no threshold to sweep on the tau axis".into()))
            }
            (Some(f), _) => Ok(f.clone()),
            (None, Axis::Tau) => Ok(vec![Family::St]),
            (None, _) => Ok(Family::ALL.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: PathBuf::from("."), format: Format::Both }
    }
}

impl RunConfig {
    /// Reads and checks a config file. Relative `policy_file` paths resolve
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Some(p) = &cfg.policy_file {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.policy_file = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: serde_json::Value =
            serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("{}", e.into_inner())))?;
        // Tagged enums lose the element path, so check matrix rows on their own first.
        if raw.pointer("/source/kind").and_then(|k| k.as_str()) == Some("matrix") {
            if let Some(rows) = raw.pointer("/source/rows") {
                serde_path_to_error::deserialize::<_, Vec<Vec<f64>>>(rows)
                    .map_err(|e| {
                        let path = e.path().to_string();
                        CliError::Config(format!("source.rows{path}: {}", e.into_inner()))
                    })?;
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(raw).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        if cfg.schema != SCHEMA {
            return Err(CliError::Config(format!("$schema: expected \"{SCHEMA}\", got \"{}\"", cfg.schema)));
        }
        ChannelSpec::new(cfg.channel.mu).map_err(|e| CliError::Config(format!("channel.mu: {e}")))?;
        cfg.solver.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        if let Some(b) = cfg.budget {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::Config(format!("budget: must be finite and positive, got {b}")));
            }
        }
        if cfg.simulation.cycles == 0 {
            return Err(CliError::Config("simulation.cycles: must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn generator(&self) -> Result<GeneratorMatrix, CliError> {
        self.source.build()
    }

    pub fn budget(&self) -> Result<f64, CliError> {
        self.budget.ok_or_else(|| CliError::Config("budget: required for this command".into()))
    }

    pub fn family(&self) -> Result<Family, CliError> {
        self.family.ok_or_else(|| CliError::Config("family: required for this command".into()))
    }

    /// The explicit policy, from `policy` or from `policy_file`.
    pub fn policy(&self, n: usize) -> Result<Policy, CliError> {
        let spec = match (&self.policy, &self.policy_file) {
            (Some(p), None) => p.clone(),
            (None, Some(path)) => PolicySpec::from_artifact(path)?,
            (Some(_), Some(_)) => {
                return Err(CliError::Config("policy: give either policy or policy_file, not both".into()))
            }
            (None, None) => return Err(CliError::Config("policy: required (inline or via policy_file)".into())),
        };
        let pol = spec.to_policy();
        pol.validate(n).map_err(|e| CliError::Config(format!("policy: {e}")))?;
        Ok(pol)
    }
}
