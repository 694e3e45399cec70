//! Dense ground truth for small instances: the coupled volume and trace
//! system solved directly, and the explicit iteration matrix.
//!
//! The trace rows are written as flux-conservation residuals and do not
//! go through `trace::update_traces`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flux::FluxScheme;
use crate::local::Discretization;
use crate::model::BoundaryKind;
use crate::model::Model;
use crate::solver::sweep;
use crate::trace::ProcessingOrder;

/// Largest number of unknowns `GlobalSystem` will assemble.
pub const GLOBAL_CAP: usize = 5000;
/// Largest number of volume unknowns `iteration_matrix` will build.
pub const ITERATION_CAP: usize = 2000;

/// `[L  -B; -T  D] [u; lambda] = [f; g]`: element equations for every block,
/// then one conservation row per trace entry.
pub struct GlobalSystem {
    pub n_fields: usize,
    pub n_traces: usize,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Sparse row of a trace equation: `diag * lambda - sum(coef * u) = value`.
struct TraceRow {
    diag: f64,
    terms: Vec<(usize, f64)>,
    value: f64,
}

impl TraceRow {
    fn new(diag: f64) -> Self {
        Self { diag, terms: Vec::new(), value: 0.0 }
    }
}

fn trace_rows(disc: &Discretization, f: usize, t: f64) -> Result<Vec<TraceRow>> {
    let rf = disc.reference();
    let mesh = disc.mesh();
    let nv = rf.n_volume();
    let nf = rf.n_face();
    let bs = disc.block_size();
    let face = mesh.face(f);
    let fd = disc.face(f);
    let n = face.normal;
    let base_m = face.minus * bs;
    let map_m = rf.face_map(face.minus_local);
    let plus = face
        .plus_element()
        .map(|(pe, plf)| (pe * bs, rf.face_map(plf)));
    let mut rows = Vec::new();

    match disc.model() {
        Model::Transport(tr) => {
            for s in 0..nf {
                let b = fd.bn[s];
                let im = base_m + map_m[s];
                let ip = plus.map(|(bp, mp)| bp + mp[s]);
                let g = if ip.is_none() { (tr.inflow)(&fd.x[s], t) } else { 0.0 };
                // u+ as (index, data)
                let mut row;
                if ip.is_none() && b == 0.0 {
                    row = TraceRow::new(1.0);
                    row.value = g;
                    rows.push(row);
                    continue;
                }
                match disc.flux() {
                    FluxScheme::Npc => {
                        // b u- + tm (u- - l) - b u+ + tp (u+ - l) = 0
                        let (tm, tp) = (fd.tau_minus[s], fd.tau_plus[s]);
                        if tm + tp > 0.0 {
                            row = TraceRow::new(tm + tp);
                            row.terms.push((im, tm + b));
                            match ip {
                                Some(i) => row.terms.push((i, tp - b)),
                                None => row.value = (tp - b) * g,
                            }
                        } else {
                            row = TraceRow::new(2.0);
                            row.terms.push((im, 1.0));
                            match ip {
                                Some(i) => row.terms.push((i, 1.0)),
                                None => row.value = g,
                            }
                        }
                    }
                    _ => {
                        // stored trace is |b| times the upwind value
                        row = TraceRow::new(1.0);
                        if b > 0.0 {
                            row.terms.push((im, b));
                        } else if b < 0.0 {
                            match ip {
                                Some(i) => row.terms.push((i, -b)),
                                None => row.value = -b * g,
                            }
                        }
                    }
                }
                rows.push(row);
            }
        }
        Model::ShallowWater(sw) => {
            let a = sw.normal_jacobian(&n);
            let abs_a = sw.abs_normal_jacobian(&n);
            let mut ap = [[0.0; 3]; 3];
            let mut am = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    ap[r][c] = 0.5 * (abs_a[r][c] + a[r][c]);
                    am[r][c] = 0.5 * (a[r][c] - abs_a[r][c]);
                }
            }
            // wall ghost state R u- with the normal momentum flipped
            let mut refl = [[0.0; 3]; 3];
            refl[0][0] = 1.0;
            for i in 0..2 {
                for j in 0..2 {
                    refl[1 + i][1 + j] = if i == j { 1.0 } else { 0.0 } - 2.0 * n[i] * n[j];
                }
            }
            for r in 0..3 {
                for s in 0..nf {
                    // l = A+ u- - A- u+
                    let mut row = TraceRow::new(1.0);
                    for c in 0..3 {
                        let im = base_m + c * nv + map_m[s];
                        match plus {
                            Some((bp, mp)) => {
                                row.terms.push((im, ap[r][c]));
                                row.terms.push((bp + c * nv + mp[s], -am[r][c]));
                            }
                            None => {
                                let mut coef = ap[r][c];
                                for k in 0..3 {
                                    coef -= am[r][k] * refl[k][c];
                                }
                                row.terms.push((im, coef));
                            }
                        }
                    }
                    rows.push(row);
                }
            }
        }
        Model::ConvectionDiffusion(cd) => {
            let d = disc.dim();
            let k = face.axis;
            let nk = n[k];
            for s in 0..nf {
                let iu = base_m + d * nv + map_m[s];
                let is = base_m + k * nv + map_m[s];
                let (tm, tp) = (fd.tau_minus[s], fd.tau_plus[s]);
                let row = match (plus, fd.boundary) {
                    (Some((bp, mp)), _) => {
                        // sigma-.n + b u- + tm (u- - l) - sigma+.n - b u+ + tp (u+ - l) = 0
                        if !(tm + tp > 0.0) {
                            return Err(Error::DegenerateFace { face: f });
                        }
                        let b = fd.bn[s];
                        let mut row = TraceRow::new(tm + tp);
                        row.terms.push((is, nk));
                        row.terms.push((iu, b + tm));
                        row.terms.push((bp + k * nv + mp[s], -nk));
                        row.terms.push((bp + d * nv + mp[s], tp - b));
                        row
                    }
                    (None, Some(BoundaryKind::Neumann)) => {
                        // sigma-.n + tm (u- - l) = g_N
                        let mut row = TraceRow::new(tm);
                        row.terms.push((is, nk));
                        row.terms.push((iu, tm));
                        row.value = -(cd.neumann)(&fd.x[s], t);
                        row
                    }
                    (None, _) => {
                        let mut row = TraceRow::new(1.0);
                        row.value = (cd.dirichlet)(&fd.x[s], t);
                        row
                    }
                };
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

impl GlobalSystem {
    /// Assembles the system for the weighted volume right-hand side
    /// `volume_rhs` with boundary data at time `t`.
    pub fn assemble(disc: &Discretization, volume_rhs: &[f64], t: f64) -> Result<Self> {
        let nu = disc.field_len();
        let nt = disc.trace_len();
        if nu + nt > GLOBAL_CAP {
            return Err(Error::TooLarge { unknowns: nu + nt, cap: GLOBAL_CAP });
        }
        if volume_rhs.len() != nu {
            return Err(Error::DimensionMismatch { expected: nu, got: volume_rhs.len() });
        }
        let bs = disc.block_size();
        let fb = disc.face_block_size();
        let mesh = disc.mesh();
        let mut a = DMatrix::zeros(nu + nt, nu + nt);
        let mut rhs = DVector::zeros(nu + nt);
        for e in 0..mesh.n_elements() {
            let l = disc.local_matrix(e);
            let b = disc.trace_coupling(e);
            a.view_mut((e * bs, e * bs), (bs, bs)).copy_from(&l);
            let faces = &mesh.element(e).faces;
            for (lf, &fid) in faces.iter().enumerate() {
                for j in 0..fb {
                    for r in 0..bs {
                        a[(e * bs + r, nu + fid * fb + j)] -= b[(r, lf * fb + j)];
                    }
                }
            }
            for r in 0..bs {
                rhs[e * bs + r] = volume_rhs[e * bs + r];
            }
        }
        for f in 0..mesh.n_faces() {
            for (j, row) in trace_rows(disc, f, t)?.into_iter().enumerate() {
                let r = nu + f * fb + j;
                a[(r, r)] += row.diag;
                for (i, c) in row.terms {
                    a[(r, i)] -= c;
                }
                rhs[r] = row.value;
            }
        }
        Ok(Self { n_fields: nu, n_traces: nt, matrix: a, rhs })
    }

    /// Direct LU solve, split into fields and traces.
    pub fn solve(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let lu = self.matrix.clone().lu();
        let x = lu.solve(&self.rhs).ok_or(Error::SingularSystem)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        let v = x.as_slice();
        Ok((v[..self.n_fields].to_vec(), v[self.n_fields..].to_vec()))
    }

    /// Largest absolute residual of the element rows and of the trace rows.
    pub fn residuals(&self, fields: &[f64], traces: &[f64]) -> (f64, f64) {
        let x = DVector::from_iterator(
            self.n_fields + self.n_traces,
            fields.iter().chain(traces).copied(),
        );
        let r = &self.matrix * x - &self.rhs;
        let max = |s: &[f64]| s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (max(&r.as_slice()[..self.n_fields]), max(&r.as_slice()[self.n_fields..]))
    }

    /// Traces from the condensed system obtained by eliminating the volume
    /// unknowns.
    pub fn schur_traces(&self) -> Result<Vec<f64>> {
        let (nu, nt) = (self.n_fields, self.n_traces);
        let a = self.matrix.view((0, 0), (nu, nu)).into_owned();
        let b = self.matrix.view((0, nu), (nu, nt)).into_owned();
        let c = self.matrix.view((nu, 0), (nt, nu)).into_owned();
        let d = self.matrix.view((nu, nu), (nt, nt)).into_owned();
        let f = self.rhs.rows(0, nu).into_owned();
        let g = self.rhs.rows(nu, nt).into_owned();
        let lu = a.lu();
        let ainv_b = lu.solve(&b).ok_or(Error::SingularSystem)?;
        let ainv_f = lu.solve(&f).ok_or(Error::SingularSystem)?;
        let s = d - &c * ainv_b;
        let rhs = g - &c * ainv_f;
        let lam = s.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
        Ok(lam.as_slice().to_vec())
    }
}

/// Steady discrete solution with the model's forcing at `t = 0`.
pub fn direct_solve(disc: &Discretization) -> Result<(Vec<f64>, Vec<f64>)> {
    let rhs = disc.weighted_forcing(0.0);
    GlobalSystem::assemble(disc, &rhs, 0.0)?.solve()
}

/// Matrix of one sweep of the homogeneous problem: column `j` is the sweep
/// of the unit vector `e_j`.
pub fn iteration_matrix(disc: &Discretization) -> Result<DMatrix<f64>> {
    let n = disc.field_len();
    if n > ITERATION_CAP {
        return Err(Error::TooLarge { unknowns: n, cap: ITERATION_CAP });
    }
    let hom = disc.homogeneous();
    let zeros = vec![0.0; n];
    let mut m = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = sweep(&hom, &unit, &zeros, 0.0, ProcessingOrder::Natural)?;
        m.column_mut(j).copy_from_slice(&col);
        unit[j] = 0.0;
    }
    Ok(m)
}

/// Largest eigenvalue modulus from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |r, z| r.max(z.norm()))
}

/// Largest spectral radius of the diagonal `bs x bs` blocks. Equals the
/// spectral radius of `m` when `m` is block triangular up to a permutation
/// of the blocks, as for upwind transport without recirculation, and avoids
/// the ill-conditioning of the full eigenproblem for such matrices.
pub fn block_radius(m: &DMatrix<f64>, bs: usize) -> f64 {
    (0..m.nrows() / bs)
        .map(|e| spectral_radius(&m.view((e * bs, e * bs), (bs, bs)).into_owned()))
        .fold(0.0, f64::max)
}

/// Power iteration on `m` from a fixed start. Two-step ratios are used so
/// that a dominant complex pair does not make the estimate oscillate.
/// Returns the estimate and whether it settled to `tol`.
pub fn power_radius(m: &DMatrix<f64>, tol: f64, max_steps: usize) -> (f64, bool) {
    let n = m.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618).fract());
    x /= x.norm();
    let mut last = f64::NAN;
    for _ in 0..max_steps {
        let y = m * &x;
        let z = m * &y;
        let nz = z.norm();
        if nz == 0.0 {
            return (0.0, true);
        }
        let est = nz.sqrt();
        if !est.is_finite() {
            return (f64::INFINITY, false);
        }
        if (est - last).abs() < tol * est {
            return (est, true);
        }
        last = est;
        x = z / nz;
    }
    (last, false)
}

/// Frobenius norm of `m^k`.
pub fn power_norm(m: &DMatrix<f64>, k: usize) -> f64 {
    let mut p = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        p = m * p;
    }
    p.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use crate::mesh::Mesh;
    use crate::model::Transport;
    use crate::solver::{iterate, SolveInput, SolverConfig};
    use crate::theory::layer_count;
    use crate::trace::update_traces;
    use std::sync::Arc;

    fn transport2d(n: usize, p: usize, flux: FluxScheme) -> Discretization {
        let ex = experiments::transport2d_discont();
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[n, n]).unwrap();
        Discretization::new(ex.model, mesh, p, flux, 0.0).unwrap()
    }

    #[test]
    fn direct_solution_satisfies_both_row_sets() {
        for flux in [FluxScheme::Upwind, FluxScheme::Npc] {
            let d = transport2d(4, 2, flux);
            let sys = GlobalSystem::assemble(&d, &d.weighted_forcing(0.0), 0.0).unwrap();
            let (u, l) = sys.solve().unwrap();
            let (r1, r2) = sys.residuals(&u, &l);
            assert!(r1 < 1e-10 && r2 < 1e-10, "{r1} {r2}");
        }
    }

    #[test]
    fn fixed_point_of_the_trace_update() {
        let d = transport2d(2, 2, FluxScheme::Upwind);
        let (u, l) = direct_solve(&d).unwrap();
        let mut t = vec![0.0; d.trace_len()];
        update_traces(&d, &u, 0.0, ProcessingOrder::Natural, &mut t).unwrap();
        let diff = t.iter().zip(&l).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-10, "{diff}");
        let mut again = vec![0.0; d.field_len()];
        let bs = d.block_size();
        let zero = d.weighted_forcing(0.0);
        for e in 0..d.mesh().n_elements() {
            d.local_solve(e, &l, &zero[e * bs..(e + 1) * bs], &mut again[e * bs..(e + 1) * bs])
                .unwrap();
        }
        let diff = again.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn schur_traces_match() {
        let ex = experiments::convdiff3d(1e-3, 1.0);
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[2, 2, 2]).unwrap();
        let d = Discretization::new(ex.model, mesh, 1, FluxScheme::Upwind, 0.0).unwrap();
        let sys = GlobalSystem::assemble(&d, &d.weighted_forcing(0.0), 0.0).unwrap();
        let (_, l) = sys.solve().unwrap();
        let s = sys.schur_traces().unwrap();
        let diff = s.iter().zip(&l).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let d = transport2d(2, 1, FluxScheme::Upwind).homogeneous();
        let (u, l) = direct_solve(&d).unwrap();
        assert!(u.iter().chain(&l).all(|&v| v == 0.0));
    }

    #[test]
    fn iterative_and_direct_agree() {
        let d = transport2d(4, 2, FluxScheme::Upwind);
        let (u, _) = direct_solve(&d).unwrap();
        let rhs = d.weighted_forcing(0.0);
        let cfg = SolverConfig { tolerance: 1e-13, ..SolverConfig::default() };
        let sol = iterate(&d, SolveInput { volume_rhs: Some(&rhs), ..Default::default() }, &cfg).unwrap();
        let diff = sol.fields.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-8, "{diff}");
    }

    fn constant_transport(p: usize) -> Discretization {
        let model = Model::Transport(Transport {
            beta: Arc::new(|_| [1.0, 2.0, 0.0]),
            div_beta: Arc::new(|_| 0.0),
            forcing: crate::model::zero(),
            inflow: crate::model::zero(),
        });
        let mesh = Mesh::build_box(&[0.0, 0.0], &[2.0, 2.0], &[4, 4]).unwrap();
        Discretization::new(model, mesh, p, FluxScheme::Upwind, 0.0).unwrap()
    }

    #[test]
    fn upwind_radius_is_one_half() {
        let d = constant_transport(1);
        let m = iteration_matrix(&d).unwrap();
        let r = block_radius(&m, d.block_size());
        assert!((r - 0.5).abs() < 0.02, "{r}");
        // the full eigenproblem sees a perturbed defective eigenvalue
        let full = spectral_radius(&m);
        assert!(full >= r - 1e-9 && full < 0.6, "{full}");
    }

    #[test]
    fn upwind_matrix_is_block_triangular_in_layer_order() {
        let d = transport2d(4, 2, FluxScheme::Upwind);
        let m = iteration_matrix(&d).unwrap();
        let bs = d.block_size();
        // (i0, i1) depends only on itself and on (i0-1, i1), (i0, i1-1)
        for e in 0..16 {
            for f in 0..16 {
                let upstream = f == e || (e % 4 > 0 && f == e - 1) || (e >= 4 && f == e - 4);
                if !upstream {
                    assert_eq!(m.view((e * bs, f * bs), (bs, bs)).norm(), 0.0, "{e} {f}");
                }
            }
        }
    }

    #[test]
    fn npc_matrix_is_nilpotent_within_layer_count() {
        let d = transport2d(4, 1, FluxScheme::Npc);
        let beta = match d.model() {
            Model::Transport(t) => t.beta.clone(),
            _ => unreachable!(),
        };
        let j = layer_count(d.mesh(), &beta, d.reference()).unwrap();
        let m = iteration_matrix(&d).unwrap();
        assert!(power_norm(&m, j) < 1e-10);
        assert!(power_norm(&m, j - 1) > 1e-6);
    }

    #[test]
    fn elliptic_upwind_diverges() {
        let ex = experiments::elliptic3d(1.0);
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[2, 2, 2]).unwrap();
        let d = Discretization::new(ex.model, mesh, 1, FluxScheme::Upwind, 0.0).unwrap();
        let m = iteration_matrix(&d).unwrap();
        let r = spectral_radius(&m);
        assert!(r > 1.0, "{r}");
        let (pr, _) = power_radius(&m, 1e-6, 5000);
        assert!(pr > 1.0, "{pr}");
    }

    #[test]
    fn sweep_is_linear() {
        let d = transport2d(2, 2, FluxScheme::Upwind).homogeneous();
        let n = d.field_len();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let z = vec![0.0; n];
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let s = |v: &[f64]| sweep(&d, v, &z, 0.0, ProcessingOrder::Natural).unwrap();
        let (sx, sy, sc) = (s(&x), s(&y), s(&combo));
        for i in 0..n {
            assert!((sc[i] - (2.0 * sx[i] - 3.0 * sy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn caps_are_enforced() {
        let model = Model::Transport(Transport {
            beta: Arc::new(|_| [1.0, 0.0, 0.0]),
            div_beta: Arc::new(|_| 0.0),
            forcing: crate::model::zero(),
            inflow: crate::model::zero(),
        });
        let d = Discretization::new(model, Mesh::unit(2, 16).unwrap(), 4, FluxScheme::Upwind, 0.0)
            .unwrap();
        assert!(matches!(iteration_matrix(&d), Err(Error::TooLarge { .. })));
        assert!(matches!(direct_solve(&d), Err(Error::TooLarge { .. })));
    }
}
