//! Implicit time stepping on top of the iteration driver.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiments::StateFn;
use crate::flux::FluxScheme;
use crate::local::Discretization;
use crate::mesh::Mesh;
use crate::model::Model;
use crate::solver::{iterate, ErrorProbe, IterationReport, Outcome, SolveInput, SolverConfig, StopCriterion};
use crate::trace::update_traces;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    BackwardEuler,
    CrankNicolson,
}

impl TimeScheme {
    /// Coefficient of the mass term in the implicit operator. Crank-Nicolson
    /// is solved in the doubled form `(2/dt) M + L`.
    pub fn time_coefficient(&self, dt: f64) -> f64 {
        match self {
            TimeScheme::BackwardEuler => 1.0 / dt,
            TimeScheme::CrankNicolson => 2.0 / dt,
        }
    }
}

impl fmt::Display for TimeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeScheme::BackwardEuler => "backward-euler",
            TimeScheme::CrankNicolson => "crank-nicolson",
        })
    }
}

impl FromStr for TimeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backward-euler" | "be" => Ok(TimeScheme::BackwardEuler),
            "crank-nicolson" | "cn" => Ok(TimeScheme::CrankNicolson),
            _ => Err(Error::Config(format!("unknown time scheme '{s}'"))),
        }
    }
}

/// A state added to the time-dependent components at every positive
/// multiple of `period`.
#[derive(Clone)]
pub struct Injection {
    pub period: f64,
    pub profile: StateFn,
}

#[derive(Clone)]
pub struct TimeLoopConfig {
    pub scheme: TimeScheme,
    pub dt: f64,
    pub n_steps: usize,
    pub warm_start: bool,
    pub solver: SolverConfig,
    pub injection: Option<Injection>,
}

impl TimeLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(inj) = &self.injection {
            if !(inj.period > 0.0) {
                return Err(Error::Config("injection period must be positive".into()));
            }
        }
        self.solver.validate()
    }
}

#[derive(Clone, Debug)]
pub struct TimeRun {
    pub fields: Vec<f64>,
    /// Time reached by the last completed step.
    pub time: f64,
    pub step_iterations: Vec<usize>,
    /// First-sweep change of every step.
    pub first_residuals: Vec<f64>,
    /// Primary-component nodal error after every step, when an exact
    /// solution is known.
    pub errors: Vec<f64>,
    /// Report of the last step attempted.
    pub last_report: Option<IterationReport>,
    /// False when a step failed to converge and the loop stopped early.
    pub completed: bool,
}

/// Builds the implicit-operator discretization used by `advance`.
pub fn discretize(
    model: Model,
    mesh: Mesh,
    p: usize,
    flux: FluxScheme,
    cfg: &TimeLoopConfig,
) -> Result<Discretization> {
    cfg.validate()?;
    Discretization::new(model, mesh, p, flux, cfg.scheme.time_coefficient(cfg.dt))
}

fn is_injection_time(t: f64, dt: f64, period: f64) -> bool {
    let k = (t / period).round();
    k >= 1.0 && (t - k * period).abs() < 0.5 * dt.min(period)
}

/// Runs `cfg.n_steps` steps from `initial` at time `t0`. `disc` must have
/// been built with the scheme's time coefficient (see `discretize`).
pub fn advance(
    disc: &Discretization,
    cfg: &TimeLoopConfig,
    initial: &[f64],
    t0: f64,
    exact: Option<&StateFn>,
) -> Result<TimeRun> {
    cfg.validate()?;
    let c = cfg.scheme.time_coefficient(cfg.dt);
    if (disc.time_coefficient() - c).abs() > 1e-12 * c {
        return Err(Error::Config(format!(
            "discretization has time coefficient {}, the scheme needs {c}",
            disc.time_coefficient()
        )));
    }
    if initial.len() != disc.field_len() {
        return Err(Error::DimensionMismatch {
            expected: disc.field_len(),
            got: initial.len(),
        });
    }
    if cfg.solver.criterion == StopCriterion::ErrorStagnation && exact.is_none() {
        return Err(Error::Config("error-stagnation criterion needs an exact solution".into()));
    }
    let dim = disc.dim();
    let m = disc.n_components();
    let nv = disc.reference().n_volume();
    let bs = disc.block_size();
    let primary = disc.model().primary_component(dim);
    let dynamic: Vec<bool> = (0..m)
        .map(|k| disc.model().is_time_dependent_component(dim, k))
        .collect();

    let mut u = initial.to_vec();
    let mut t = t0;
    let mut run = TimeRun {
        fields: Vec::new(),
        time: t0,
        step_iterations: Vec::new(),
        first_residuals: Vec::new(),
        errors: Vec::new(),
        last_report: None,
        completed: true,
    };
    let mut traces = vec![0.0; disc.trace_len()];

    for _ in 0..cfg.n_steps {
        if let Some(inj) = &cfg.injection {
            if is_injection_time(t, cfg.dt, inj.period) {
                let add = disc.interpolate(&|x| (inj.profile)(x, t));
                for e in 0..disc.mesh().n_elements() {
                    for k in (0..m).filter(|&k| dynamic[k]) {
                        let r = e * bs + k * nv..e * bs + (k + 1) * nv;
                        for i in r {
                            u[i] += add[i];
                        }
                    }
                }
            }
        }
        let t1 = t + cfg.dt;
        let mut rhs = disc.weighted_forcing(t1);
        disc.add_weighted_mass(&u, c, &mut rhs);
        if cfg.scheme == TimeScheme::CrankNicolson {
            let f0 = disc.weighted_forcing(t);
            update_traces(disc, &u, t, cfg.solver.order, &mut traces)?;
            for e in 0..disc.mesh().n_elements() {
                let r = disc.spatial_residual(e, &u[e * bs..(e + 1) * bs], &traces);
                for k in (0..m).filter(|&k| dynamic[k]) {
                    for i in 0..nv {
                        let idx = e * bs + k * nv + i;
                        rhs[idx] += f0[idx] - r[k * nv + i];
                    }
                }
            }
        }
        let probe = exact.map(|f| ErrorProbe::new(disc, f, t1, primary));
        let sol = iterate(
            disc,
            SolveInput {
                volume_rhs: Some(&rhs),
                time: t1,
                initial: cfg.warm_start.then_some(&u[..]),
                exact: probe.as_ref(),
            },
            &cfg.solver,
        )?;
        let report = sol.report;
        run.step_iterations.push(report.iterations);
        run.first_residuals.push(report.residuals.first().copied().unwrap_or(0.0));
        let ok = report.outcome == Outcome::Converged;
        run.last_report = Some(report);
        if !ok {
            run.completed = false;
            break;
        }
        u = sol.fields;
        t = t1;
        if let Some(x) = &probe {
            run.errors.push(x.error(disc, &u));
        }
    }
    run.fields = u;
    run.time = t;
    Ok(run)
}
