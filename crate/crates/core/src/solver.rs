//! The iteration driver: alternate element-local solves and face trace
//! updates until the field stops changing.

use std::sync::Once;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiments::StateFn;
use crate::local::Discretization;
use crate::reference::lagrange_basis;
use crate::trace::{pairwise_sum, residual_norm, update_traces, ProcessingOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StopCriterion {
    /// `||u^k - u^{k-1}|| < tol` over all components.
    #[default]
    SuccessiveChange,
    /// `| ||u^k - u_e|| - ||u^{k-1} - u_e|| | < tol` on the primary component.
    ErrorStagnation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Diverged,
    MaxIterations,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Diverged => "diverged",
            Outcome::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub criterion: StopCriterion,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub divergence_factor: f64,
    pub order: ProcessingOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            criterion: StopCriterion::SuccessiveChange,
            tolerance: 1e-10,
            max_iterations: 10_000,
            divergence_factor: 1e6,
            order: ProcessingOrder::Natural,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::Config("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IterationReport {
    pub iterations: usize,
    pub outcome: Outcome,
    pub residuals: Vec<f64>,
    /// Primary-component error against the exact solution after each sweep;
    /// empty when no exact solution was given.
    pub errors: Vec<f64>,
    pub wall_time: Duration,
}

impl IterationReport {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub fields: Vec<f64>,
    pub traces: Vec<f64>,
    pub report: IterationReport,
}

/// Inputs of one fixed-point solve.
#[derive(Clone, Copy, Default)]
pub struct SolveInput<'a> {
    /// Weighted volume right-hand side (forcing plus any time terms).
    pub volume_rhs: Option<&'a [f64]>,
    /// Time at which boundary data are evaluated.
    pub time: f64,
    /// Starting field; zero when absent.
    pub initial: Option<&'a [f64]>,
    /// Error measure against the exact solution, for error tracking.
    pub exact: Option<&'a ErrorProbe>,
}

static THREADS: Once = Once::new();

/// Sizes the global worker pool from `IHDG_THREADS` the first time it is
/// called. Later calls and an already-built pool are ignored.
pub fn init_threads() {
    THREADS.call_once(|| {
        if let Some(n) = std::env::var("IHDG_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    });
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// One round of local solves: every element block of `out` is recomputed
/// from `traces`.
pub fn local_solves(
    disc: &Discretization,
    traces: &[f64],
    volume_rhs: &[f64],
    order: ProcessingOrder,
    out: &mut [f64],
) -> Result<()> {
    let bs = disc.block_size();
    let work = |(e, blk): (usize, &mut [f64])| {
        disc.local_solve(e, traces, &volume_rhs[e * bs..(e + 1) * bs], blk)
    };
    match order {
        ProcessingOrder::Natural => out.par_chunks_mut(bs).enumerate().try_for_each(work),
        ProcessingOrder::Reversed => out.par_chunks_mut(bs).enumerate().rev().try_for_each(work),
    }
}

/// One full sweep `u -> local_solve(trace(u))`.
pub fn sweep(
    disc: &Discretization,
    fields: &[f64],
    volume_rhs: &[f64],
    t: f64,
    order: ProcessingOrder,
) -> Result<Vec<f64>> {
    let mut traces = vec![0.0; disc.trace_len()];
    update_traces(disc, fields, t, order, &mut traces)?;
    let mut out = vec![0.0; disc.field_len()];
    local_solves(disc, &traces, volume_rhs, order, &mut out)?;
    Ok(out)
}

/// Runs the iteration from `input.initial` until the stopping criterion,
/// divergence or the iteration cap.
pub fn iterate(disc: &Discretization, input: SolveInput<'_>, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    init_threads();
    let start = Instant::now();
    let n = disc.field_len();
    let zeros;
    let volume_rhs = match input.volume_rhs {
        Some(r) => {
            check_len(n, r.len())?;
            r
        }
        None => {
            zeros = vec![0.0; n];
            &zeros
        }
    };
    let mut fields = match input.initial {
        Some(u) => {
            check_len(n, u.len())?;
            u.to_vec()
        }
        None => vec![0.0; n],
    };
    if cfg.criterion == StopCriterion::ErrorStagnation && input.exact.is_none() {
        return Err(Error::Config("error-stagnation criterion needs an exact solution".into()));
    }

    let mut traces = vec![0.0; disc.trace_len()];
    update_traces(disc, &fields, input.time, cfg.order, &mut traces)?;
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut errors = Vec::new();
    let mut previous_error = input.exact.map(|x| x.error(disc, &fields));
    let mut outcome = Outcome::MaxIterations;

    for _ in 0..cfg.max_iterations {
        local_solves(disc, &traces, volume_rhs, cfg.order, &mut next)?;
        let res = residual_norm(disc, &next, &fields);
        std::mem::swap(&mut fields, &mut next);
        residuals.push(res);
        let mut stagnated = false;
        if let Some(x) = input.exact {
            let err = x.error(disc, &fields);
            if let Some(prev) = previous_error {
                stagnated = (err - prev).abs() < cfg.tolerance;
            }
            previous_error = Some(err);
            errors.push(err);
        }
        update_traces(disc, &fields, input.time, cfg.order, &mut traces)?;

        if !res.is_finite() || res >= cfg.divergence_factor * residuals[0].max(f64::MIN_POSITIVE) {
            outcome = Outcome::Diverged;
            break;
        }
        let done = match cfg.criterion {
            StopCriterion::SuccessiveChange => res < cfg.tolerance,
            StopCriterion::ErrorStagnation => stagnated,
        };
        if done {
            outcome = Outcome::Converged;
            break;
        }
    }

    Ok(Solution {
        fields,
        traces,
        report: IterationReport {
            iterations: residuals.len(),
            outcome,
            residuals,
            errors,
            wall_time: start.elapsed(),
        },
    })
}

/// Steady solve of the discretized model with its own forcing, starting
/// from zero. When `exact` is given its nodal interpolant is tracked.
pub fn solve(disc: &Discretization, exact: Option<&StateFn>, cfg: &SolverConfig) -> Result<Solution> {
    let rhs = disc.weighted_forcing(0.0);
    let c = disc.model().primary_component(disc.dim());
    let probe = exact.map(|f| ErrorProbe::new(disc, f, 0.0, c));
    iterate(
        disc,
        SolveInput {
            volume_rhs: Some(&rhs),
            time: 0.0,
            initial: None,
            exact: probe.as_ref(),
        },
        cfg,
    )
}

#[derive(Clone, Debug)]
pub struct SpectralEstimate {
    /// Norm ratio `||S x_k|| / ||x_k||` at the last step.
    pub radius: f64,
    /// Whether the ratio settled to within `1e-6` before the step budget ran out.
    pub confident: bool,
    pub steps: usize,
    /// Ratio history, one entry per step.
    pub history: Vec<f64>,
}

/// Power iteration on the homogeneous sweep, from a seeded random start.
/// An exactly vanishing iterate reports radius 0.
pub fn power_iterate(disc: &Discretization, n_steps: usize, seed: u64) -> Result<SpectralEstimate> {
    init_threads();
    let hom = disc.homogeneous();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..hom.field_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let zeros = vec![0.0; hom.field_len()];
    let norm = |v: &[f64]| residual_norm(&hom, v, &zeros);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut history = Vec::new();
    let mut confident = false;
    for _ in 0..n_steps {
        let y = sweep(&hom, &x, &zeros, 0.0, ProcessingOrder::Natural)?;
        let ny = norm(&y);
        history.push(ny);
        if ny == 0.0 {
            confident = true;
            break;
        }
        if !ny.is_finite() {
            break;
        }
        x = y.into_iter().map(|v| v / ny).collect();
        let k = history.len();
        if k >= 10 && (history[k - 1] - history[k - 2]).abs() < 1e-6 * history[k - 1] {
            confident = true;
            break;
        }
    }
    Ok(SpectralEstimate {
        radius: history.last().copied().unwrap_or(0.0),
        confident,
        steps: history.len(),
        history,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut r = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = crate::reference::legendre(n, r);
            let dr = p / dp;
            r -= dr;
            if dr.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = crate::reference::legendre(n, r);
        x[i] = r;
        w[i] = 2.0 / ((1.0 - r * r) * dp * dp);
    }
    (x, w)
}

/// L2 error of one component against a known solution, by Gauss quadrature
/// with `p + 3` points per direction so that it measures the polynomial
/// rather than its nodal values. The exact values are sampled once.
pub struct ErrorProbe {
    component: usize,
    /// Basis values at the quadrature points, `npts x nv`, row-major.
    basis: Vec<f64>,
    weights: Vec<f64>,
    /// Exact values, `npts` per element.
    exact: Vec<f64>,
}

impl ErrorProbe {
    pub fn new(disc: &Discretization, exact: &StateFn, t: f64, component: usize) -> Self {
        let rf = disc.reference();
        let mesh = disc.mesh();
        let d = disc.dim();
        let n1 = rf.n_1d();
        let nv = rf.n_volume();
        let (gx, gw) = gauss_legendre(rf.order() + 3);
        let nq = gx.len();
        let b1: Vec<Vec<f64>> = gx.iter().map(|&x| lagrange_basis(rf.nodes_1d(), x)).collect();
        let npts = nq.pow(d as u32);
        let index = |q: usize| {
            let mut qi = [0usize; 3];
            let mut rest = q;
            for slot in qi.iter_mut().take(d) {
                *slot = rest % nq;
                rest /= nq;
            }
            qi
        };
        let mut basis = vec![0.0; npts * nv];
        let mut weights = vec![0.0; npts];
        for q in 0..npts {
            let qi = index(q);
            weights[q] = qi.iter().take(d).map(|&a| gw[a]).product();
            for i in 0..nv {
                let mut phi = 1.0;
                let mut rest = i;
                for &qa in qi.iter().take(d) {
                    phi *= b1[qa][rest % n1];
                    rest /= n1;
                }
                basis[q * nv + i] = phi;
            }
        }
        let exact: Vec<f64> = (0..mesh.n_elements())
            .into_par_iter()
            .flat_map_iter(|e| {
                let el = mesh.element(e);
                let gx = &gx;
                (0..npts).map(move |q| {
                    let qi = index(q);
                    let mut x = [0.0; 3];
                    for a in 0..d {
                        x[a] = el.lower[a] + 0.5 * (gx[qi[a]] + 1.0) * el.width[a];
                    }
                    exact(&x, t)[component]
                })
            })
            .collect();
        Self { component, basis, weights, exact }
    }

    pub fn error(&self, disc: &Discretization, fields: &[f64]) -> f64 {
        let nv = disc.reference().n_volume();
        let bs = disc.block_size();
        let npts = self.weights.len();
        let c = self.component;
        let per_element: Vec<f64> = (0..disc.mesh().n_elements())
            .into_par_iter()
            .map(|e| {
                let u = &fields[e * bs + c * nv..e * bs + (c + 1) * nv];
                let ex = &self.exact[e * npts..(e + 1) * npts];
                let mut acc = 0.0;
                for q in 0..npts {
                    let row = &self.basis[q * nv..(q + 1) * nv];
                    let uh: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
                    let diff = uh - ex[q];
                    acc += self.weights[q] * diff * diff;
                }
                acc * disc.mesh().element(e).jacobian
            })
            .collect();
        pairwise_sum(&per_element).sqrt()
    }
}

/// L2 error of component `c` of the nodal field against `exact` at time `t`.
pub fn l2_error(disc: &Discretization, fields: &[f64], exact: &StateFn, t: f64, c: usize) -> f64 {
    ErrorProbe::new(disc, exact, t, c).error(disc, fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use crate::flux::FluxScheme;
    use crate::mesh::Mesh;
    use crate::model::{zero, Model, Transport};
    use std::sync::Arc;

    fn transport_disc(cells: usize, p: usize, flux: FluxScheme) -> Discretization {
        let ex = experiments::transport2d_discont();
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[cells, cells]).unwrap();
        Discretization::new(ex.model, mesh, p, flux, 0.0).unwrap()
    }

    #[test]
    fn zero_data_converges_in_one_sweep() {
        let model = Model::Transport(Transport {
            beta: Arc::new(|_| [1.0, 0.5, 0.0]),
            div_beta: Arc::new(|_| 0.0),
            forcing: zero(),
            inflow: zero(),
        });
        let disc = Discretization::new(model, Mesh::unit(2, 3).unwrap(), 2, FluxScheme::Upwind, 0.0)
            .unwrap();
        let sol = iterate(&disc, SolveInput::default(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.report.converged());
        assert!(sol.fields.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gauss_rule_integrates_high_degree() {
        let (x, w) = gauss_legendre(4);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((i - 2.0 / 7.0).abs() < 1e-14);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn l2_error_of_exact_polynomial_is_zero() {
        let disc = transport_disc(2, 2, FluxScheme::Upwind);
        let f: StateFn = Arc::new(|x, _| vec![x[0] * x[0] - 2.0 * x[0] * x[1]]);
        let u = disc.interpolate(&|x| f(x, 0.0));
        assert!(l2_error(&disc, &u, &f, 0.0, 0) < 1e-13);
    }

    #[test]
    fn error_stagnation_needs_exact() {
        let disc = transport_disc(2, 1, FluxScheme::Upwind);
        let cfg = SolverConfig {
            criterion: StopCriterion::ErrorStagnation,
            ..Default::default()
        };
        assert!(matches!(iterate(&disc, SolveInput::default(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn residual_history_matches_count() {
        let disc = transport_disc(4, 2, FluxScheme::Upwind);
        let sol = solve(&disc, None, &SolverConfig::default()).unwrap();
        assert!(sol.report.converged());
        assert_eq!(sol.report.residuals.len(), sol.report.iterations);
        assert!(*sol.report.residuals.last().unwrap() < 1e-10);
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let disc = transport_disc(4, 2, FluxScheme::Npc);
        let sol = solve(&disc, None, &SolverConfig::default()).unwrap();
        let rhs = disc.weighted_forcing(0.0);
        let again = sweep(&disc, &sol.fields, &rhs, 0.0, ProcessingOrder::Natural).unwrap();
        assert!(residual_norm(&disc, &again, &sol.fields) < 1e-10);
    }

    #[test]
    fn upwind_transport_radius_is_one_half() {
        let disc = transport_disc(4, 1, FluxScheme::Upwind);
        let est = power_iterate(&disc, 500, 7).unwrap();
        assert!((est.radius - 0.5).abs() < 0.05, "{est:?}");
    }

    #[test]
    fn max_iterations_is_reported() {
        let disc = transport_disc(4, 2, FluxScheme::Upwind);
        let cfg = SolverConfig {
            max_iterations: 3,
            ..Default::default()
        };
        let sol = solve(&disc, None, &cfg).unwrap();
        assert_eq!(sol.report.outcome, Outcome::MaxIterations);
        assert_eq!(sol.report.iterations, 3);
    }
}
