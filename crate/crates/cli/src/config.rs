//! Run configuration: a TOML document with the sections `grid`,
//! `coefficients`, `evolve`, `modulation`, `experiment` and `output`.
//! Every section and every key is optional; missing values take the
//! defaults below. Unknown keys are rejected.

use std::path::Path;

use blowup_core::coeffs::{builtin, builtin_coefficients, CoefficientSpec, Profile};
use blowup_core::evolve::EvolveConfig;
use blowup_core::experiment::{geometric_schedule, ExperimentConfig, GridConfig, Scheme};
use blowup_core::linops::estimate_mu;
use blowup_core::modulation::{BootstrapParams, DecomposeOptions, EnergyParams};
use blowup_core::profiles::build_bundle;
use blowup_core::SpatialGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} constraint violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub coefficients: CoefficientsSection,
    pub evolve: EvolveSection,
    pub modulation: ModulationSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

/// A built-in entry by name, optionally with `V` scaled and either profile replaced.
/// `name = "custom"` requires both `potential` and `nonlinearity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsSection {
    pub name: String,
    pub potential_scale: f64,
    pub potential: Option<Profile>,
    pub nonlinearity: Option<Profile>,
}

impl Default for CoefficientsSection {
    fn default() -> Self {
        Self {
            name: "free".into(),
            potential_scale: 1.0,
            potential: None,
            nonlinearity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// the explicit blow-up solution at the start of `t_span`
    #[default]
    ExactS,
    GroundState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    pub initial: InitialData,
    pub dt0: f64,
    pub adapt: bool,
    pub t_span: [f64; 2],
    pub dealias: bool,
    pub blowup_gradient_cap: f64,
    pub dt_min: f64,
}

impl Default for EvolveSection {
    fn default() -> Self {
        let d = EvolveConfig::default();
        Self {
            initial: InitialData::ExactS,
            dt0: d.dt0,
            adapt: d.adapt,
            t_span: [d.t_span.0, d.t_span.1],
            dealias: d.dealias,
            blowup_gradient_cap: d.blowup_gradient_cap,
            dt_min: d.dt_min,
        }
    }
}

/// `k` is `K`, `m_exp` is `M` (default: midpoint of `(1, 2(L-1))`).
/// `m`, `eps1`, `eps2` override the modified-energy defaults individually;
/// `mu` overrides the coercivity constant used to check them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationSection {
    pub k: u32,
    pub m_exp: Option<f64>,
    pub delta: f64,
    pub ortho_tol: f64,
    pub max_iter: usize,
    pub m: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub mu: Option<f64>,
}

impl Default for ModulationSection {
    fn default() -> Self {
        let d = DecomposeOptions::default();
        Self {
            k: 8,
            m_exp: None,
            delta: d.delta,
            ortho_tol: d.ortho_tol,
            max_iter: d.max_iter,
            m: None,
            eps1: None,
            eps2: None,
            mu: None,
        }
    }
}

impl ModulationSection {
    fn energy_overridden(&self) -> bool {
        self.m.is_some() || self.eps1.is_some() || self.eps2.is_some()
    }

    /// Defaults for `μ` with the explicit overrides applied.
    pub fn energy_params(&self, mu: f64) -> EnergyParams {
        let mut p = EnergyParams::defaults(mu, self.k.max(1));
        if let Some(eps1) = self.eps1 {
            p.eps1 = eps1;
            if self.m.is_none() {
                p.m = (1.0 + eps1) + p.big_l;
            }
        }
        if let Some(m) = self.m {
            p.m = m;
        }
        p.eps2 = self.eps2.unwrap_or(p.m * mu * p.eps1 / 32.0);
        p
    }
}

/// Limit-sequence anchors: an explicit list or `{ first, ratio, count }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    List(Vec<f64>),
    Geometric { first: f64, ratio: f64, count: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::List(Vec::new())
    }
}

impl Schedule {
    /// Anchors ordered toward 0.
    pub fn anchors(&self) -> Vec<f64> {
        let mut v = match self {
            Schedule::List(v) => v.clone(),
            Schedule::Geometric { first, ratio, count } => geometric_schedule(*first, *ratio, *count),
        };
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub t1: f64,
    pub t0: f64,
    pub t_n: Schedule,
    pub frame_step: f64,
    pub scheme: Scheme,
    pub dealias: bool,
    pub stop_on_exit: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            t1: d.t1,
            t0: d.t0,
            t_n: Schedule::default(),
            frame_step: d.frame_step,
            scheme: d.scheme,
            dealias: d.dealias,
            stop_on_exit: d.stop_on_exit,
        }
    }
}

/// `cadence` is the number of steps between recorded snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub cadence: usize,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            cadence: 20,
            plots: false,
        }
    }
}

/// Byte offset to 1-based line and column (columns count characters).
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl RunConfig {
    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Parses and validates; all violations are reported together.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::from_toml(text)?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn coefficient_spec(&self) -> Result<CoefficientSpec, String> {
        let c = &self.coefficients;
        let base = if c.name == "custom" {
            match (&c.potential, &c.nonlinearity) {
                (Some(p), Some(g)) => CoefficientSpec::new("custom", p.clone(), g.clone()),
                _ => return Err("coefficients: name = \"custom\" needs both potential and nonlinearity".into()),
            }
        } else {
            let mut spec = builtin(&c.name).ok_or_else(|| {
                let names: Vec<String> = builtin_coefficients().into_iter().map(|s| s.name).collect();
                format!("coefficients: unknown name {:?} (known: {}, custom)", c.name, names.join(", "))
            })?;
            if c.potential.is_some() || c.nonlinearity.is_some() {
                let p = c.potential.clone().unwrap_or(spec.potential.clone());
                let g = c.nonlinearity.clone().unwrap_or(spec.nonlinearity.clone());
                spec = CoefficientSpec::new(&c.name, p, g);
            }
            spec
        };
        if !c.potential_scale.is_finite() {
            return Err("coefficients: potential_scale must be finite".into());
        }
        Ok(if c.potential_scale == 1.0 {
            base
        } else {
            base.with_potential_scaled(c.potential_scale)
        })
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        let e = &self.evolve;
        EvolveConfig {
            dt0: e.dt0,
            adapt: e.adapt,
            t_span: (e.t_span[0], e.t_span[1]),
            dealias: e.dealias,
            blowup_gradient_cap: e.blowup_gradient_cap,
            snapshot_every: self.output.cadence,
            dt_min: e.dt_min,
        }
    }

    /// Experiment settings; the energy parameters are left to the caller's `μ`
    /// unless overridden here.
    pub fn experiment_config(&self, spec: CoefficientSpec) -> ExperimentConfig {
        let m = &self.modulation;
        let mut bootstrap = BootstrapParams::new(m.k.max(1));
        if let Some(mx) = m.m_exp {
            bootstrap.m_exp = mx;
        }
        let e = &self.experiment;
        ExperimentConfig {
            spec,
            grid: self.grid.clone(),
            t1: e.t1,
            t0: e.t0,
            frame_step: e.frame_step,
            scheme: e.scheme,
            dealias: e.dealias,
            snapshot_every: self.output.cadence,
            bootstrap,
            decompose: DecomposeOptions {
                delta: m.delta,
                ortho_tol: m.ortho_tol,
                max_iter: m.max_iter,
            },
            energy: None,
            stop_on_exit: e.stop_on_exit,
            keep_fields: false,
            schedule: e.t_n.anchors(),
        }
    }

    /// `μ` for the constraint checks: the configured value, or an estimate on
    /// a coarse grid of the configured dimension.
    pub fn mu_for_validation(&self) -> Result<f64, String> {
        if let Some(mu) = self.modulation.mu {
            return Ok(mu);
        }
        let grid = SpatialGrid::<f64>::new(self.grid.dim, 20.0, 256).map_err(|e| e.to_string())?;
        let bundle = build_bundle(&grid).map_err(|e| e.to_string())?;
        estimate_mu(&bundle).map(|m| m.mu).map_err(|e| e.to_string())
    }

    /// Every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let spec = match self.coefficient_spec() {
            Ok(s) => s,
            Err(e) => {
                v.push(e);
                CoefficientSpec::free()
            }
        };
        if let Err(e) = self.evolve_config().validate() {
            let msg = e.to_string();
            let body = msg.strip_prefix("invalid argument: ").unwrap_or(&msg);
            v.extend(body.split("; ").map(|s| format!("evolve: {s}")));
        }
        if self.modulation.k < 4 {
            v.push(format!("modulation: K >= 4 fails: K = {}", self.modulation.k));
        }
        let exp = self.experiment_config(spec);
        v.extend(exp.violations().into_iter().filter(|s| !s.starts_with("K >= 4")));
        if let Schedule::Geometric { ratio, count, .. } = self.experiment.t_n {
            if !(ratio > 0.0 && ratio < 1.0) {
                v.push(format!("experiment: t_n ratio must lie in (0, 1), got {ratio}"));
            }
            if count == 0 {
                v.push("experiment: t_n count must be positive".into());
            }
        }
        if let Some(mu) = self.modulation.mu {
            if !(mu > 0.0) {
                v.push(format!("modulation: mu must be positive, got {mu}"));
            }
        }
        if self.modulation.energy_overridden() && self.modulation.k >= 1 {
            match self.mu_for_validation() {
                Ok(mu) if mu > 0.0 => v.extend(self.modulation.energy_params(mu).violations(mu)),
                Ok(_) => {}
                Err(e) => v.push(format!("modulation: cannot estimate mu: {e}")),
            }
        }
        if self.output.directory.is_empty() {
            v.push("output: directory must not be empty".into());
        }
        v
    }
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RunConfig::parse(&text)
}
