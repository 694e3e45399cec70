//! Plain `key = value` experiment configuration.
//!
//! ```text
//! # 2D transport, 16 x 16 quads
//! experiment = transport2d-discont
//! cells = 16
//! p = 3
//! flux = npc
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiments::{self, Experiment, ExperimentId};
use crate::flux::FluxScheme;
use crate::mesh::Mesh;
use crate::model::Model;
use crate::solver::{SolverConfig, StopCriterion};
use crate::time::{Injection, TimeLoopConfig, TimeScheme};
use crate::trace::ProcessingOrder;

/// How the time step is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    Fixed(f64),
    /// `h / ((p+1)(p+2))`
    HOverPp,
    /// `h / (Phi (p+1)(p+2))`
    HOverPhiPp,
}

impl DtRule {
    pub fn resolve(&self, h: f64, p: usize, phi: f64) -> f64 {
        let pp = ((p + 1) * (p + 2)) as f64;
        match *self {
            DtRule::Fixed(dt) => dt,
            DtRule::HOverPp => h / pp,
            DtRule::HOverPhiPp => h / (phi * pp),
        }
    }
}

impl fmt::Display for DtRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DtRule::Fixed(dt) => write!(f, "{dt}"),
            DtRule::HOverPp => f.write_str("h/pp"),
            DtRule::HOverPhiPp => f.write_str("h/phi-pp"),
        }
    }
}

impl FromStr for DtRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h/pp" => Ok(DtRule::HOverPp),
            "h/phi-pp" => Ok(DtRule::HOverPhiPp),
            _ => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Config(format!("bad time step '{s}' (number, h/pp or h/phi-pp)")))?;
                if v > 0.0 && v.is_finite() {
                    Ok(DtRule::Fixed(v))
                } else {
                    Err(Error::Config(format!("time step must be positive, got {v}")))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    /// Cells per axis.
    pub cells: Vec<usize>,
    pub p: usize,
    pub flux: FluxScheme,
    pub kappa: f64,
    pub nu: f64,
    pub dt: DtRule,
    /// Time steps; zero for steady experiments.
    pub steps: usize,
    pub scheme: TimeScheme,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub divergence_factor: f64,
    pub criterion: StopCriterion,
    pub order: ProcessingOrder,
    pub warm_start: bool,
    pub inject_period: f64,
    pub literal_exponent: bool,
    pub output: PathBuf,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "experiment",
    "cells",
    "p",
    "flux",
    "gamma",
    "kappa",
    "nu",
    "dt",
    "steps",
    "scheme",
    "tolerance",
    "max_iterations",
    "divergence_factor",
    "criterion",
    "order",
    "warm_start",
    "inject_period",
    "literal_exponent",
    "output",
    "seed",
];

impl ExperimentConfig {
    /// Defaults of the named experiment.
    pub fn new(experiment: ExperimentId) -> Self {
        let dim = experiments::by_id(experiment).dim();
        let mut c = Self {
            experiment,
            cells: vec![4; dim],
            p: 2,
            flux: FluxScheme::Upwind,
            kappa: 0.0,
            nu: 0.0,
            dt: DtRule::HOverPp,
            steps: 0,
            scheme: TimeScheme::CrankNicolson,
            tolerance: 1e-10,
            max_iterations: 10_000,
            divergence_factor: 1e6,
            criterion: StopCriterion::SuccessiveChange,
            order: ProcessingOrder::Natural,
            warm_start: true,
            inject_period: 1.0,
            literal_exponent: false,
            output: PathBuf::from("."),
            seed: 0,
        };
        match experiment {
            ExperimentId::ShallowStandingWave => c.steps = 20,
            ExperimentId::Convdiff3d => {
                c.kappa = 1e-3;
                c.nu = 1.0;
            }
            ExperimentId::Elliptic3d => {
                c.kappa = 1.0;
                c.nu = 1.0;
                c.flux = FluxScheme::elliptic();
                c.max_iterations = 2000;
            }
            ExperimentId::Contaminant => {
                c.kappa = 0.01;
                c.dt = DtRule::Fixed(0.025);
                c.steps = 40;
                c.tolerance = 1e-6;
            }
            _ => {}
        }
        c
    }

    /// Parses a configuration file body. Errors carry the line and column of
    /// the offending key or value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                let col = line.len() - line.trim_start().len() + 1;
                return Err(at(ln + 1, col, "expected 'key = value'"));
            };
            let key = line[..eq].trim();
            let key_col = line.len() - line.trim_start().len() + 1;
            let rest = &line[eq + 1..];
            let value = rest.trim();
            let value_col = eq + 2 + (rest.len() - rest.trim_start().len());
            if !KEYS.contains(&key) {
                return Err(at(ln + 1, key_col, &format!("unknown key '{key}'")));
            }
            if entries.iter().any(|(k, _, _, _)| *k == key) {
                return Err(at(ln + 1, key_col, &format!("duplicate key '{key}'")));
            }
            entries.push((key, value, ln + 1, value_col));
        }
        let Some(&(_, id, ln, col)) = entries.iter().find(|e| e.0 == "experiment") else {
            return Err(Error::Config("missing key 'experiment'".into()));
        };
        let id: ExperimentId = id.parse().map_err(|e| wrap(ln, col, e))?;
        let mut cfg = Self::new(id);
        for &(key, value, ln, col) in &entries {
            cfg.set(key, value).map_err(|e| wrap(ln, col, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                let id: ExperimentId = value.parse()?;
                if id != self.experiment {
                    *self = Self::new(id);
                }
            }
            "cells" => self.cells = parse_cells(value, self.cells.len())?,
            "p" => self.p = num(key, value)?,
            "flux" => {
                let gamma = match self.flux {
                    FluxScheme::EllipticTau { gamma } => Some(gamma),
                    _ => None,
                };
                self.flux = value.parse()?;
                if let (FluxScheme::EllipticTau { gamma: g }, Some(old)) = (&mut self.flux, gamma) {
                    *g = old;
                }
            }
            "gamma" => {
                let g: f64 = num(key, value)?;
                match &mut self.flux {
                    FluxScheme::EllipticTau { gamma } => *gamma = g,
                    _ => self.flux = FluxScheme::EllipticTau { gamma: g },
                }
            }
            "kappa" => self.kappa = num(key, value)?,
            "nu" => self.nu = num(key, value)?,
            "dt" => self.dt = value.parse()?,
            "steps" => self.steps = num(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "tolerance" => self.tolerance = num(key, value)?,
            "max_iterations" => self.max_iterations = num(key, value)?,
            "divergence_factor" => self.divergence_factor = num(key, value)?,
            "criterion" => {
                self.criterion = match value {
                    "successive" => StopCriterion::SuccessiveChange,
                    "stagnation" => StopCriterion::ErrorStagnation,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown criterion '{value}' (successive or stagnation)"
                        )))
                    }
                }
            }
            "order" => {
                self.order = match value {
                    "natural" => ProcessingOrder::Natural,
                    "reversed" => ProcessingOrder::Reversed,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown order '{value}' (natural or reversed)"
                        )))
                    }
                }
            }
            "warm_start" => self.warm_start = boolean(key, value)?,
            "inject_period" => self.inject_period = num(key, value)?,
            "literal_exponent" => self.literal_exponent = boolean(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ex = self.build_experiment();
        let dim = ex.dim();
        if self.cells.len() != dim || self.cells.contains(&0) {
            return Err(Error::Config(format!(
                "cells must give {dim} positive counts, got {:?}",
                self.cells
            )));
        }
        if !(1..=16).contains(&self.p) {
            return Err(Error::InvalidOrder(self.p));
        }
        self.flux.check_supported(&ex.model, dim)?;
        ex.model.validate(dim)?;
        if self.is_time_dependent() && self.steps == 0 {
            return Err(Error::Config("time-dependent experiment needs steps > 0".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        if !(self.inject_period > 0.0) {
            return Err(Error::Config("inject_period must be positive".into()));
        }
        self.solver().validate()
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(
            self.experiment,
            ExperimentId::ShallowStandingWave | ExperimentId::Contaminant
        )
    }

    /// The experiment with this configuration's physical parameters.
    pub fn build_experiment(&self) -> Experiment {
        match self.experiment {
            ExperimentId::Convdiff3d => experiments::convdiff3d(self.kappa, self.nu),
            ExperimentId::Elliptic3d => experiments::elliptic3d(self.nu),
            ExperimentId::Contaminant => {
                let mut ex = experiments::contaminant(self.literal_exponent);
                if let Model::ConvectionDiffusion(cd) = &mut ex.model {
                    cd.kappa = self.kappa;
                    cd.nu = self.nu;
                }
                ex
            }
            id => experiments::by_id(id),
        }
    }

    pub fn build_mesh(&self, ex: &Experiment) -> Result<Mesh> {
        Mesh::build_box(&ex.lower, &ex.upper, &self.cells)
    }

    pub fn n_elements(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            criterion: self.criterion,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            divergence_factor: self.divergence_factor,
            order: self.order,
        }
    }

    /// Mean depth `Phi` of the shallow-water model, 1 otherwise.
    pub fn phi(&self, ex: &Experiment) -> f64 {
        match &ex.model {
            Model::ShallowWater(sw) => sw.phi_mean,
            _ => 1.0,
        }
    }

    pub fn time_loop(&self, ex: &Experiment, h: f64) -> TimeLoopConfig {
        let injection = match self.experiment {
            ExperimentId::Contaminant => ex.initial.clone().map(|profile| Injection {
                period: self.inject_period,
                profile,
            }),
            _ => None,
        };
        TimeLoopConfig {
            scheme: self.scheme,
            dt: self.dt.resolve(h, self.p, self.phi(ex)),
            n_steps: self.steps,
            warm_start: self.warm_start,
            solver: self.solver(),
            injection,
        }
    }
}

fn at(line: usize, col: usize, msg: &str) -> Error {
    Error::Config(format!("line {line}, column {col}: {msg}"))
}

fn wrap(line: usize, col: usize, e: Error) -> Error {
    match e {
        Error::Config(m) => at(line, col, &m),
        other => at(line, col, &other.to_string()),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("malformed value '{value}' for '{key}'")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("malformed value '{value}' for '{key}' (true or false)"))),
    }
}

/// `8`, `8x8x8` or `8,8,8`. A single count is repeated `dim` times.
pub fn parse_cells(value: &str, dim: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = value.split(['x', ',']).map(str::trim).collect();
    let counts = parts
        .iter()
        .map(|s| num::<usize>("cells", s))
        .collect::<Result<Vec<_>>>()?;
    if counts.len() == 1 {
        Ok(vec![counts[0]; dim])
    } else {
        Ok(counts)
    }
}
