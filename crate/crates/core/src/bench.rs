//! Experiment runner behind the `ihdg` command: single runs, parameter
//! sweeps, theory predictions and the small-instance oracle check, with CSV
//! output.

use std::path::Path;
use std::time::Duration;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::{Experiment, ExperimentId};
use crate::flux::FluxScheme;
use crate::local::Discretization;
use crate::mesh::Mesh;
use crate::model::Model;
use crate::oracle;
use crate::solver::{iterate, l2_error, ErrorProbe, Outcome, SolveInput};
use crate::theory::{self, Verdict};
use crate::time::{advance, discretize};

/// Theory verdict for a configuration, with a one-line explanation.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub verdict: Verdict,
    pub summary: String,
}

/// Everything a run reports.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub n_elements: usize,
    pub h: f64,
    /// Time step used, for time-dependent experiments.
    pub dt: Option<f64>,
    /// Iterations of the steady solve, or the mean per time step.
    pub iterations: f64,
    /// Iterations of every time step (empty for steady runs).
    pub step_iterations: Vec<usize>,
    pub outcome: Outcome,
    pub prediction: Prediction,
    /// Residual history of the steady solve or of the last time step.
    pub residuals: Vec<f64>,
    /// L2 error history matching `residuals`, when an exact solution is
    /// known.
    pub errors: Vec<f64>,
    /// L2 error of the primary unknown at the end of the run.
    pub l2_error: Option<f64>,
    pub wall_time: Duration,
}

fn discretization(cfg: &ExperimentConfig, ex: &Experiment, mesh: Mesh) -> Result<Discretization> {
    if cfg.is_time_dependent() {
        let h = mesh.max_width();
        discretize(ex.model.clone(), mesh, cfg.p, cfg.flux, &cfg.time_loop(ex, h))
    } else {
        Discretization::new(ex.model.clone(), mesh, cfg.p, cfg.flux, 0.0)
    }
}

/// Theory verdict without running the solver.
pub fn predict(cfg: &ExperimentConfig) -> Result<Prediction> {
    cfg.validate()?;
    let ex = cfg.build_experiment();
    let mesh = cfg.build_mesh(&ex)?;
    let h = mesh.max_width();
    let dt = cfg.is_time_dependent().then(|| cfg.dt.resolve(h, cfg.p, cfg.phi(&ex)));
    match &ex.model {
        Model::Transport(t) => {
            let rf = crate::reference::ReferenceElement::new(cfg.p, ex.dim())?;
            Ok(match theory::layer_count(&mesh, &t.beta, &rf) {
                Ok(j) => Prediction {
                    verdict: Verdict::Convergent,
                    summary: format!("inflow layers J = {j}"),
                },
                Err(e) => Prediction {
                    verdict: Verdict::NonConvergent,
                    summary: e.to_string(),
                },
            })
        }
        Model::ShallowWater(sw) => {
            let dt = dt.unwrap_or(f64::INFINITY);
            let r = theory::shallow_water_verdict(sw.phi_mean, sw.gamma, h, dt, cfg.p, 1.0);
            Ok(Prediction {
                verdict: r.verdict,
                summary: format!(
                    "A = {:.4}, B = {:.4}, C = {:.4}, dt scale = {:.4e}",
                    r.a, r.b, r.contraction, r.dt_scale
                ),
            })
        }
        Model::ConvectionDiffusion(cd) => {
            let disc = discretization(cfg, &ex, mesh)?;
            if let FluxScheme::EllipticTau { gamma } = cfg.flux {
                let lambda = ex.model.coercivity_estimate(disc.mesh(), disc.reference()).unwrap_or(0.0)
                    + dt.map_or(0.0, |dt| 1.0 / dt);
                let b = theory::elliptic_bounds(gamma, lambda, h, cfg.p, ex.dim());
                let tau = crate::flux::elliptic_tau(gamma, h, cfg.p);
                let ok = tau > b.tau_min && (h > b.h_min_reaction || h > b.h_min_stabilization);
                return Ok(Prediction {
                    verdict: Verdict::from_flag(ok && cd.kappa > 0.0),
                    summary: format!(
                        "tau = {tau:.4} (needs > {:.4}), h = {h:.4} (needs > {:.4} or > {:.4})",
                        b.tau_min, b.h_min_reaction, b.h_min_stabilization
                    ),
                });
            }
            let x = theory::convdiff_inputs(&disc, dt)?;
            let r = theory::convdiff_verdict(&x);
            Ok(Prediction {
                verdict: r.verdict,
                summary: format!(
                    "A = {:.4e}, B = {:.4e}, D = {:.4e}; first term of B positive for h > {:.4}",
                    r.a, r.b, r.d, r.min_h_sigma
                ),
            })
        }
    }
}

/// Runs one configuration without writing files.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let prediction = predict(cfg)?;
    let ex = cfg.build_experiment();
    let mesh = cfg.build_mesh(&ex)?;
    let h = mesh.max_width();
    let disc = discretization(cfg, &ex, mesh)?;
    let primary = ex.model.primary_component(ex.dim());
    let start = std::time::Instant::now();

    if cfg.is_time_dependent() {
        let tl = cfg.time_loop(&ex, h);
        let init = match &ex.initial {
            Some(f) if ex.id != ExperimentId::Contaminant => disc.interpolate(&|x| f(x, 0.0)),
            // the contaminant is injected at t = 0 and then periodically
            Some(f) => {
                let mut u = disc.interpolate(&|x| f(x, 0.0));
                zero_static_components(&disc, &mut u);
                u
            }
            None => vec![0.0; disc.field_len()],
        };
        let run = advance(&disc, &tl, &init, 0.0, ex.exact.as_ref())?;
        let report = run.last_report.clone();
        let outcome = if run.completed {
            Outcome::Converged
        } else {
            report.as_ref().map_or(Outcome::MaxIterations, |r| r.outcome)
        };
        let n = run.step_iterations.len().max(1) as f64;
        let l2 = ex.exact.as_ref().filter(|_| run.completed).map(|f| l2_error(&disc, &run.fields, f, run.time, primary));
        return Ok(RunRecord {
            config: cfg.clone(),
            n_elements: cfg.n_elements(),
            h,
            dt: Some(tl.dt),
            iterations: run.step_iterations.iter().sum::<usize>() as f64 / n,
            step_iterations: run.step_iterations,
            outcome,
            prediction,
            residuals: report.as_ref().map(|r| r.residuals.clone()).unwrap_or_default(),
            errors: report.map(|r| r.errors).unwrap_or_default(),
            l2_error: l2,
            wall_time: start.elapsed(),
        });
    }

    let rhs = disc.weighted_forcing(0.0);
    let probe = ex.exact.as_ref().map(|f| ErrorProbe::new(&disc, f, 0.0, primary));
    let sol = iterate(
        &disc,
        SolveInput {
            volume_rhs: Some(&rhs),
            time: 0.0,
            initial: None,
            exact: probe.as_ref(),
        },
        &cfg.solver(),
    )?;
    let l2 = probe
        .as_ref()
        .filter(|_| sol.report.converged())
        .map(|x| x.error(&disc, &sol.fields));
    Ok(RunRecord {
        config: cfg.clone(),
        n_elements: cfg.n_elements(),
        h,
        dt: None,
        iterations: sol.report.iterations as f64,
        step_iterations: Vec::new(),
        outcome: sol.report.outcome,
        prediction,
        residuals: sol.report.residuals,
        errors: sol.report.errors,
        l2_error: l2,
        wall_time: start.elapsed(),
    })
}

fn zero_static_components(disc: &Discretization, u: &mut [f64]) {
    let bs = disc.block_size();
    let nv = disc.reference().n_volume();
    for e in 0..disc.mesh().n_elements() {
        for k in 0..disc.n_components() {
            if !disc.model().is_time_dependent_component(disc.dim(), k) {
                u[e * bs + k * nv..e * bs + (k + 1) * nv].fill(0.0);
            }
        }
    }
}

/// Runs one configuration and writes `iterations.csv`, `residuals.csv` and
/// `convergence.csv` into its output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let rec = execute(cfg)?;
    write_all(&cfg.output, std::slice::from_ref(&rec))?;
    Ok(rec)
}

/// Axes a sweep can vary.
pub const SWEEP_AXES: &[&str] = &["cells", "p", "kappa", "nu", "dt", "flux"];

/// One run per value of `axis`, in the given order, with combined CSVs.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String]) -> Result<Vec<RunRecord>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::Config(format!(
            "cannot sweep '{axis}' (expected one of {})",
            SWEEP_AXES.join(", ")
        )));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            c.set(axis, v.trim())?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let records = configs.iter().map(execute).collect::<Result<Vec<_>>>()?;
    write_all(&base.output, &records)?;
    Ok(records)
}

/// Result of comparing the iteration with the direct solve.
#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub unknowns: usize,
    pub iterations: usize,
    pub outcome: Outcome,
    /// Largest nodal difference between the two solutions.
    pub max_difference: f64,
    /// Largest residuals of the element and trace rows at the direct solution.
    pub residuals: (f64, f64),
}

/// Steady problems: the model's own data. Time-dependent problems: the
/// first backward-Euler step from the initial state.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<OracleCheck> {
    cfg.validate()?;
    let ex = cfg.build_experiment();
    let mesh = cfg.build_mesh(&ex)?;
    let h = mesh.max_width();
    let disc = discretization(cfg, &ex, mesh)?;
    let (rhs, t) = if cfg.is_time_dependent() {
        let tl = cfg.time_loop(&ex, h);
        if tl.scheme == crate::time::TimeScheme::CrankNicolson {
            return Err(Error::Config("the oracle check supports backward-euler steps only".into()));
        }
        let init = match &ex.initial {
            Some(f) => disc.interpolate(&|x| f(x, 0.0)),
            None => vec![0.0; disc.field_len()],
        };
        let mut rhs = disc.weighted_forcing(tl.dt);
        disc.add_weighted_mass(&init, disc.time_coefficient(), &mut rhs);
        (rhs, tl.dt)
    } else {
        (disc.weighted_forcing(0.0), 0.0)
    };
    let sys = oracle::GlobalSystem::assemble(&disc, &rhs, t)?;
    let (u, l) = sys.solve()?;
    let residuals = sys.residuals(&u, &l);
    let sol = iterate(
        &disc,
        SolveInput {
            volume_rhs: Some(&rhs),
            time: t,
            initial: None,
            exact: None,
        },
        &cfg.solver(),
    )?;
    let max_difference = sol
        .fields
        .iter()
        .zip(&u)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(OracleCheck {
        unknowns: sys.n_fields + sys.n_traces,
        iterations: sol.report.iterations,
        outcome: sol.report.outcome,
        max_difference,
        residuals,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes the three CSV files for `records` into `dir`.
pub fn write_all(dir: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_iterations(&dir.join("iterations.csv"), records)?;
    write_residuals(&dir.join("residuals.csv"), records)?;
    write_convergence(&dir.join("convergence.csv"), records)
}

fn physical(rec: &RunRecord) -> (Option<f64>, Option<f64>, Option<f64>) {
    let c = &rec.config;
    match c.experiment {
        ExperimentId::Convdiff3d | ExperimentId::Contaminant => (Some(c.kappa), Some(c.nu), None),
        ExperimentId::Elliptic3d => (None, Some(c.nu), None),
        ExperimentId::ShallowStandingWave => (None, None, Some(c.phi(&c.build_experiment()))),
        _ => (None, None, None),
    }
}

pub fn write_iterations(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "experiment", "nel", "p", "flux", "kappa", "nu", "phi", "dt", "iterations", "verdict",
        "predicted",
    ])
    .map_err(csv_err)?;
    for r in records {
        let (kappa, nu, phi) = physical(r);
        let iterations = if r.dt.is_some() {
            format!("{:.2}", r.iterations)
        } else {
            format!("{}", r.iterations)
        };
        w.write_record([
            r.config.experiment.to_string(),
            r.n_elements.to_string(),
            r.config.p.to_string(),
            r.config.flux.to_string(),
            opt(kappa),
            opt(nu),
            opt(phi),
            r.dt.map(sci).unwrap_or_default(),
            iterations,
            r.outcome.as_str().to_string(),
            r.prediction.verdict.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["run", "iteration", "residual", "error"]).map_err(csv_err)?;
    for (k, r) in records.iter().enumerate() {
        for (i, res) in r.residuals.iter().enumerate() {
            let err = r.errors.get(i).map(|&e| sci(e)).unwrap_or_default();
            w.write_record([k.to_string(), (i + 1).to_string(), sci(*res), err])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Observed rates between consecutive runs with known errors.
pub fn observed_rates(records: &[RunRecord]) -> Vec<Option<f64>> {
    let mut out = vec![None; records.len()];
    for i in 1..records.len() {
        if let (Some(e0), Some(e1)) = (records[i - 1].l2_error, records[i].l2_error) {
            let (h0, h1) = (records[i - 1].h, records[i].h);
            if h0 != h1 && e0 > 0.0 && e1 > 0.0 {
                out[i] = Some((e0 / e1).ln() / (h0 / h1).ln());
            }
        }
    }
    out
}

pub fn write_convergence(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["h", "p", "l2_error", "rate"]).map_err(csv_err)?;
    for (r, rate) in records.iter().zip(observed_rates(records)) {
        w.write_record([
            format!("{}", r.h),
            r.config.p.to_string(),
            r.l2_error.map(sci).unwrap_or_default(),
            rate.map(|x| format!("{x:.4}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn fitted_rate(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn steady_run_reports_prediction_and_history() {
        let r = execute(&cfg("experiment = transport2d-discont\ncells = 2\np = 1\nflux = npc")).unwrap();
        assert_eq!(r.outcome, Outcome::Converged);
        assert_eq!(r.prediction.verdict, Verdict::Convergent);
        assert_eq!(r.residuals.len() as f64, r.iterations);
        assert!(r.l2_error.is_none());
    }

    #[test]
    fn csv_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg("experiment = transport3d-smooth\ncells = 2\np = 1");
        c.output = dir.path().to_path_buf();
        let values: Vec<String> = vec!["1".into(), "2".into()];
        sweep(&c, "cells", &values).unwrap();
        let first = std::fs::read(dir.path().join("iterations.csv")).unwrap();
        let conv1 = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        sweep(&c, "cells", &values).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("iterations.csv")).unwrap());
        assert_eq!(conv1, std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap());
        assert!(conv1.starts_with("h,p,l2_error,rate\n"));
        assert_eq!(conv1.lines().count(), 3);
    }

    #[test]
    fn sweep_rejects_unknown_axes() {
        let c = cfg("experiment = transport2d-discont");
        assert!(sweep(&c, "colour", &["1".into()]).is_err());
    }

    #[test]
    fn oracle_check_on_a_small_mesh() {
        let r = oracle_check(&cfg("experiment = convdiff3d\ncells = 1\np = 1\ntolerance = 1e-13")).unwrap();
        assert!(r.max_difference < 1e-8, "{r:?}");
    }

    #[test]
    fn fitted_rate_of_a_power_law() {
        let h = [0.5, 0.25, 0.125];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(4)).collect();
        assert!((fitted_rate(&h, &e) - 4.0).abs() < 1e-12);
    }
}
