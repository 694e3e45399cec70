//! Element-local HDG operators.
//!
//! For every element the local problem reads `L u = F + B trace`, where `L`
//! collects the volume and face terms that involve the element's own
//! unknowns, `B` injects the weighted trace of each face and `F` is the
//! quadrature-weighted forcing. Everything uses GLL collocation, so mass
//! matrices are diagonal.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::{DMatrix, DVectorViewMut, Dyn, LU};

use crate::error::{Error, Result};
use crate::flux::{self, FluxScheme};
use crate::mesh::{Mesh, Neighbor};
use crate::model::{BoundaryKind, Model, Point};
use crate::reference::ReferenceElement;

/// Per-face data that does not change between iterations.
#[derive(Debug, Clone)]
pub struct FaceData {
    pub x: Vec<Point>,
    /// `beta . n` seen from the minus side (zero for shallow water).
    pub bn: Vec<f64>,
    /// Scalar stabilization on the minus and plus sides (unused by shallow
    /// water, which carries `|A|` instead).
    pub tau_minus: Vec<f64>,
    pub tau_plus: Vec<f64>,
    pub boundary: Option<BoundaryKind>,
}

/// Geometry-only blocks of the condensed convection-diffusion operator.
#[derive(Debug, Clone)]
struct ConvDiffGeometry {
    /// `sigma_k` rows, `u` columns.
    g: Vec<DMatrix<f64>>,
    /// `u` rows, `sigma_k` columns.
    hk: Vec<DMatrix<f64>>,
    /// Inverse of the diagonal `sigma` mass block.
    dinv: Vec<f64>,
    /// `-sum_k H_k D^{-1} G_k`.
    schur_shift: DMatrix<f64>,
}

enum Factor {
    Full(LU<f64, Dyn, Dyn>),
    Condensed { schur: LU<f64, Dyn, Dyn>, geometry: usize },
}

/// Factorized local operator, possibly shared by several elements.
pub struct LocalOperator {
    factor: Factor,
}

pub struct Discretization {
    model: Model,
    mesh: Mesh,
    rf: ReferenceElement,
    flux: FluxScheme,
    /// Coefficient `c` of the `c (u, v)` term on time-dependent components.
    time_coefficient: f64,
    dim: usize,
    m: usize,
    mt: usize,
    faces: Arc<Vec<FaceData>>,
    geometries: Arc<Vec<ConvDiffGeometry>>,
    operators: Arc<Vec<LocalOperator>>,
    element_operator: Arc<Vec<usize>>,
}

fn width_key(w: &[f64; 3]) -> [u64; 3] {
    [w[0].to_bits(), w[1].to_bits(), w[2].to_bits()]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Discretization {
    pub fn new(
        model: Model,
        mesh: Mesh,
        p: usize,
        flux: FluxScheme,
        time_coefficient: f64,
    ) -> Result<Self> {
        let dim = mesh.dim();
        model.validate(dim)?;
        flux.check_supported(&model, dim)?;
        if !(time_coefficient >= 0.0) || !time_coefficient.is_finite() {
            return Err(Error::InvalidModel(format!(
                "time coefficient must be finite and non-negative, got {time_coefficient}"
            )));
        }
        let rf = ReferenceElement::new(p, dim)?;
        let m = model.n_components(dim);
        let mt = model.n_trace_components();
        let mut disc = Self {
            model,
            mesh,
            rf,
            flux,
            time_coefficient,
            dim,
            m,
            mt,
            faces: Arc::new(Vec::new()),
            geometries: Arc::new(Vec::new()),
            operators: Arc::new(Vec::new()),
            element_operator: Arc::new(Vec::new()),
        };
        disc.faces = Arc::new((0..disc.mesh.n_faces()).map(|f| disc.face_data(f)).collect());
        disc.build_operators()?;
        Ok(disc)
    }

    /// Same operators with the forcing and boundary data removed, so that
    /// the iteration map becomes linear.
    pub fn homogeneous(&self) -> Self {
        Self {
            model: self.model.homogeneous(),
            mesh: self.mesh.clone(),
            rf: self.rf.clone(),
            flux: self.flux,
            time_coefficient: self.time_coefficient,
            dim: self.dim,
            m: self.m,
            mt: self.mt,
            faces: self.faces.clone(),
            geometries: self.geometries.clone(),
            operators: self.operators.clone(),
            element_operator: self.element_operator.clone(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.rf
    }

    pub fn flux(&self) -> FluxScheme {
        self.flux
    }

    pub fn order(&self) -> usize {
        self.rf.order()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time_coefficient(&self) -> f64 {
        self.time_coefficient
    }

    /// Number of solution components per node.
    pub fn n_components(&self) -> usize {
        self.m
    }

    /// Number of trace components per face node.
    pub fn n_trace_components(&self) -> usize {
        self.mt
    }

    /// Unknowns per element.
    pub fn block_size(&self) -> usize {
        self.m * self.rf.n_volume()
    }

    /// Trace values per face.
    pub fn face_block_size(&self) -> usize {
        self.mt * self.rf.n_face()
    }

    pub fn field_len(&self) -> usize {
        self.block_size() * self.mesh.n_elements()
    }

    pub fn trace_len(&self) -> usize {
        self.face_block_size() * self.mesh.n_faces()
    }

    pub fn face(&self, f: usize) -> &FaceData {
        &self.faces[f]
    }

    /// Number of distinct factorizations held.
    pub fn n_factorizations(&self) -> usize {
        self.operators.len()
    }

    /// Characteristic length used by mesh-dependent stabilization.
    pub fn h(&self) -> f64 {
        self.mesh.max_width()
    }

    fn face_data(&self, f: usize) -> FaceData {
        let face = self.mesh.face(f);
        let x = self.mesh.face_node_coords(&self.rf, f);
        let n = face.normal;
        let boundary = match (&self.model, face.plus) {
            (_, Neighbor::Element { .. }) => None,
            (Model::ConvectionDiffusion(cd), Neighbor::Boundary { axis, upper }) => {
                Some(cd.sides[2 * axis + upper as usize])
            }
            (_, Neighbor::Boundary { .. }) => Some(BoundaryKind::Dirichlet),
        };
        let bn: Vec<f64> = x
            .iter()
            .map(|xs| self.model.beta(xs).map_or(0.0, |b| dot(&b, &n)))
            .collect();
        let h = self.h();
        let p = self.rf.order();
        let (tau_minus, tau_plus) = match &self.model {
            Model::Transport(_) => {
                let side = |b: f64| match self.flux {
                    FluxScheme::Npc => flux::npc_transport_tau(b),
                    _ => b.abs(),
                };
                // Where beta is tangent to the physical boundary no node of
                // the element sees the data; under collocation the row of a
                // stagnation corner would vanish. Such nodes take the
                // boundary value with unit weight.
                let pin = |b: f64| boundary.is_some() && b == 0.0;
                (
                    bn.iter().map(|&b| if pin(b) { 1.0 } else { side(b) }).collect(),
                    bn.iter().map(|&b| if pin(b) { 1.0 } else { side(-b) }).collect(),
                )
            }
            Model::ConvectionDiffusion(cd) => (
                bn.iter()
                    .map(|&b| flux::convdiff_tau(self.flux, b, cd.kappa, h, p))
                    .collect(),
                bn.iter()
                    .map(|&b| flux::convdiff_tau(self.flux, -b, cd.kappa, h, p))
                    .collect(),
            ),
            Model::ShallowWater(_) => (vec![0.0; x.len()], vec![0.0; x.len()]),
        };
        FaceData {
            x,
            bn,
            tau_minus,
            tau_plus,
            boundary,
        }
    }

    /// `beta . n` and scalar `tau` at the nodes of local face `lf` of `e`,
    /// oriented outward from `e`.
    fn side_coefficients(&self, e: usize, lf: usize) -> (Vec<f64>, &[f64]) {
        let el = self.mesh.element(e);
        let fd = &self.faces[el.faces[lf]];
        if el.is_minus[lf] {
            (fd.bn.clone(), &fd.tau_minus)
        } else {
            (fd.bn.iter().map(|b| -b).collect(), &fd.tau_plus)
        }
    }

    // ----------------------------------------------------------------- assembly

    /// Dense local operator of a transport or shallow-water element.
    fn hyperbolic_matrix(&self, e: usize) -> DMatrix<f64> {
        let rf = &self.rf;
        let nv = rf.n_volume();
        let m = self.m;
        let el = self.mesh.element(e);
        let jac = el.jacobian;
        let w = rf.volume_weights();
        let mut mat = DMatrix::zeros(m * nv, m * nv);
        let xs: Vec<Point> = (0..nv).map(|q| self.mesh.node_coords(rf, e, q)).collect();

        match &self.model {
            Model::Transport(t) => {
                for q in 0..nv {
                    let b = (t.beta)(&xs[q]);
                    for k in 0..self.dim {
                        let s = w[q] * jac * 2.0 / el.width[k] * b[k];
                        for (i, dv) in rf.derivative_row(k, q) {
                            mat[(i, q)] -= s * dv;
                        }
                    }
                    mat[(q, q)] -= w[q] * jac * (t.div_beta)(&xs[q]);
                }
            }
            Model::ShallowWater(sw) => {
                let phi = sw.phi_mean;
                for q in 0..nv {
                    for k in 0..2 {
                        let s = w[q] * jac * 2.0 / el.width[k];
                        for (i, dv) in rf.derivative_row(k, q) {
                            // phi row couples to m_k, m_k row couples to phi
                            mat[(i, (1 + k) * nv + q)] -= s * dv;
                            mat[((1 + k) * nv + i, q)] -= s * phi * dv;
                        }
                    }
                    let c = sw.reaction(&xs[q]);
                    for a in 0..3 {
                        for b in 0..3 {
                            mat[(a * nv + q, b * nv + q)] += w[q] * jac * c[a][b];
                        }
                    }
                }
            }
            Model::ConvectionDiffusion(_) => unreachable!(),
        }

        for lf in 0..rf.n_faces() {
            let n = Mesh::outward_normal(lf);
            let fid = el.faces[lf];
            let jf = self.mesh.face(fid).jacobian;
            let (bn, tau) = self.side_coefficients(e, lf);
            for (s, &i) in rf.face_map(lf).iter().enumerate() {
                let wf = rf.face_weights()[s] * jf;
                match &self.model {
                    Model::Transport(_) => {
                        mat[(i, i)] += wf * (bn[s] + tau[s]);
                    }
                    Model::ShallowWater(sw) => {
                        // mass flux m.n + sqrt(Phi) (phi - phi_hat); the
                        // momentum flux Phi phi_hat n is all trace
                        mat[(i, i)] += wf * sw.phi_mean.sqrt();
                        for k in 0..2 {
                            mat[(i, (1 + k) * nv + i)] += wf * n[k];
                        }
                    }
                    Model::ConvectionDiffusion(_) => unreachable!(),
                }
            }
        }
        self.add_time_term(e, &mut mat);
        mat
    }

    fn add_time_term(&self, e: usize, mat: &mut DMatrix<f64>) {
        if self.time_coefficient == 0.0 {
            return;
        }
        let nv = self.rf.n_volume();
        let jac = self.mesh.element(e).jacobian;
        for c in 0..self.m {
            if self.model.is_time_dependent_component(self.dim, c) {
                for q in 0..nv {
                    mat[(c * nv + q, c * nv + q)] +=
                        self.time_coefficient * self.rf.volume_weights()[q] * jac;
                }
            }
        }
    }

    fn convdiff_geometry(&self, e: usize) -> ConvDiffGeometry {
        let Model::ConvectionDiffusion(cd) = &self.model else { unreachable!() };
        let rf = &self.rf;
        let nv = rf.n_volume();
        let el = self.mesh.element(e);
        let jac = el.jacobian;
        let w = rf.volume_weights();
        let mut g = Vec::with_capacity(self.dim);
        let mut hk = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let mut gk = DMatrix::zeros(nv, nv);
            for q in 0..nv {
                let s = w[q] * jac * 2.0 / el.width[k];
                for (j, dv) in rf.derivative_row(k, q) {
                    gk[(j, q)] -= s * dv;
                }
            }
            let mut h = gk.clone();
            for lf in [2 * k, 2 * k + 1] {
                let nk = Mesh::outward_normal(lf)[k];
                let jf = self.mesh.face(el.faces[lf]).jacobian;
                for (s, &i) in rf.face_map(lf).iter().enumerate() {
                    h[(i, i)] += rf.face_weights()[s] * jf * nk;
                }
            }
            g.push(gk);
            hk.push(h);
        }
        let dinv: Vec<f64> = (0..nv).map(|q| cd.kappa / (w[q] * jac)).collect();
        let mut schur_shift = DMatrix::zeros(nv, nv);
        for k in 0..self.dim {
            let mut dg = g[k].clone();
            for (r, mut row) in dg.row_iter_mut().enumerate() {
                row *= dinv[r];
            }
            schur_shift -= &hk[k] * dg;
        }
        ConvDiffGeometry {
            g,
            hk,
            dinv,
            schur_shift,
        }
    }

    /// `u`-`u` block of a convection-diffusion element, including the time
    /// term.
    fn convdiff_uu(&self, e: usize) -> DMatrix<f64> {
        let Model::ConvectionDiffusion(cd) = &self.model else { unreachable!() };
        let rf = &self.rf;
        let nv = rf.n_volume();
        let el = self.mesh.element(e);
        let jac = el.jacobian;
        let w = rf.volume_weights();
        let mut mat = DMatrix::zeros(nv, nv);
        for q in 0..nv {
            let x = self.mesh.node_coords(rf, e, q);
            let b = (cd.beta)(&x);
            for k in 0..self.dim {
                if b[k] == 0.0 {
                    continue;
                }
                let s = w[q] * jac * 2.0 / el.width[k] * b[k];
                for (j, dv) in rf.derivative_row(k, q) {
                    mat[(j, q)] -= s * dv;
                }
            }
            mat[(q, q)] +=
                w[q] * jac * (cd.nu - (cd.div_beta)(&x) + self.time_coefficient);
        }
        for lf in 0..rf.n_faces() {
            let jf = self.mesh.face(el.faces[lf]).jacobian;
            let (bn, tau) = self.side_coefficients(e, lf);
            for (s, &i) in rf.face_map(lf).iter().enumerate() {
                mat[(i, i)] += rf.face_weights()[s] * jf * (bn[s] + tau[s]);
            }
        }
        mat
    }

    /// Full dense local operator `L` of element `e` (all components).
    pub fn local_matrix(&self, e: usize) -> DMatrix<f64> {
        match &self.model {
            Model::ConvectionDiffusion(_) => {
                let nv = self.rf.n_volume();
                let d = self.dim;
                let geo = self.convdiff_geometry(e);
                let mut mat = DMatrix::zeros((d + 1) * nv, (d + 1) * nv);
                for k in 0..d {
                    for q in 0..nv {
                        mat[(k * nv + q, k * nv + q)] = 1.0 / geo.dinv[q];
                    }
                    mat.view_mut((k * nv, d * nv), (nv, nv)).copy_from(&geo.g[k]);
                    mat.view_mut((d * nv, k * nv), (nv, nv)).copy_from(&geo.hk[k]);
                }
                mat.view_mut((d * nv, d * nv), (nv, nv))
                    .copy_from(&self.convdiff_uu(e));
                mat
            }
            _ => self.hyperbolic_matrix(e),
        }
    }

    /// Dense map `B` from the traces of the element's faces to its right-hand
    /// side. Column `lf * mt * nf + c * nf + s` is trace component `c` at node
    /// `s` of local face `lf`.
    pub fn trace_coupling(&self, e: usize) -> DMatrix<f64> {
        let nf = self.rf.n_face();
        let mut b = DMatrix::zeros(self.block_size(), self.rf.n_faces() * self.face_block_size());
        for lf in 0..self.rf.n_faces() {
            for c in 0..self.mt {
                for s in 0..nf {
                    let mut unit = vec![0.0; self.face_block_size()];
                    unit[c * nf + s] = 1.0;
                    let mut col = vec![0.0; self.block_size()];
                    self.add_face_rhs(e, lf, &unit, &mut col);
                    for (r, v) in col.into_iter().enumerate() {
                        b[(r, lf * self.mt * nf + c * nf + s)] = v;
                    }
                }
            }
        }
        b
    }

    /// Adds the contribution of one face's trace values to an element
    /// right-hand side.
    fn add_face_rhs(&self, e: usize, lf: usize, trace: &[f64], rhs: &mut [f64]) {
        let rf = &self.rf;
        let nv = rf.n_volume();
        let nf = rf.n_face();
        let el = self.mesh.element(e);
        let fid = el.faces[lf];
        let jf = self.mesh.face(fid).jacobian;
        let fd = &self.faces[fid];
        let tau = if el.is_minus[lf] { &fd.tau_minus } else { &fd.tau_plus };
        let fw = rf.face_weights();
        let map = rf.face_map(lf);
        match &self.model {
            Model::Transport(_) => {
                if self.flux == FluxScheme::Npc {
                    for s in 0..nf {
                        rhs[map[s]] += fw[s] * jf * tau[s] * trace[s];
                    }
                } else {
                    for s in 0..nf {
                        rhs[map[s]] += fw[s] * jf * trace[s];
                    }
                }
            }
            Model::ShallowWater(sw) => {
                // only the first component, sqrt(Phi) phi_hat, is consumed
                let n = Mesh::outward_normal(lf);
                let c = sw.phi_mean.sqrt();
                for s in 0..nf {
                    let wt = fw[s] * jf * trace[s];
                    rhs[map[s]] += wt;
                    for k in 0..2 {
                        rhs[(1 + k) * nv + map[s]] -= wt * c * n[k];
                    }
                }
            }
            Model::ConvectionDiffusion(_) => {
                let k = lf / 2;
                let nk = if lf % 2 == 1 { 1.0 } else { -1.0 };
                let d = self.dim;
                for s in 0..nf {
                    let wt = fw[s] * jf * trace[s];
                    rhs[k * nv + map[s]] -= wt * nk;
                    rhs[d * nv + map[s]] += wt * tau[s];
                }
            }
        }
    }

    /// Element right-hand side from the current traces plus a weighted
    /// volume contribution.
    pub fn element_rhs(&self, e: usize, traces: &[f64], volume_rhs: &[f64], rhs: &mut [f64]) {
        rhs.copy_from_slice(volume_rhs);
        let fb = self.face_block_size();
        let el = self.mesh.element(e);
        for lf in 0..self.rf.n_faces() {
            let fid = el.faces[lf];
            self.add_face_rhs(e, lf, &traces[fid * fb..(fid + 1) * fb], rhs);
        }
    }

    // ------------------------------------------------------------ factorization

    fn build_operators(&mut self) -> Result<()> {
        let n_el = self.mesh.n_elements();
        let mut geometry_of: HashMap<[u64; 3], usize> = HashMap::new();
        let mut geometries = Vec::new();
        let mut operators = Vec::new();
        let mut elem_geometry = vec![0usize; n_el];
        if matches!(self.model, Model::ConvectionDiffusion(_)) {
            for e in 0..n_el {
                let key = width_key(&self.mesh.element(e).width);
                let next = geometry_of.len();
                let g = *geometry_of.entry(key).or_insert(next);
                if g == geometries.len() {
                    geometries.push(self.convdiff_geometry(e));
                }
                elem_geometry[e] = g;
            }
        }

        // identical matrices share a factorization; the hash only selects
        // candidates, equality is checked bitwise
        let mut by_hash: HashMap<u64, Vec<(usize, DMatrix<f64>)>> = HashMap::new();
        let mut element_operator = Vec::with_capacity(n_el);
        for e in 0..n_el {
            let mat = match &self.model {
                Model::ConvectionDiffusion(_) => {
                    self.convdiff_uu(e) + &geometries[elem_geometry[e]].schur_shift
                }
                _ => self.hyperbolic_matrix(e),
            };
            let mut hasher = std::collections::hash_map::DefaultHasher::new();
            elem_geometry[e].hash(&mut hasher);
            for v in mat.iter() {
                v.to_bits().hash(&mut hasher);
            }
            let key = hasher.finish();
            let bucket = by_hash.entry(key).or_default();
            let found = bucket.iter().find(|(_, other)| {
                other.iter().zip(mat.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
            });
            if let Some((op, _)) = found {
                element_operator.push(*op);
                continue;
            }
            let lu = mat.clone().lu();
            if !lu.is_invertible() || !lu.u().diagonal().iter().all(|v| v.is_finite()) {
                return Err(Error::SingularLocalOperator { element: e });
            }
            let factor = match &self.model {
                Model::ConvectionDiffusion(_) => Factor::Condensed {
                    schur: lu,
                    geometry: elem_geometry[e],
                },
                _ => Factor::Full(lu),
            };
            let op = operators.len();
            operators.push(LocalOperator { factor });
            bucket.push((op, mat));
            element_operator.push(op);
        }
        self.geometries = Arc::new(geometries);
        self.operators = Arc::new(operators);
        self.element_operator = Arc::new(element_operator);
        Ok(())
    }

    /// Solves `L u = rhs` in place for element `e`.
    pub fn apply_inverse(&self, e: usize, rhs: &mut [f64]) -> Result<()> {
        if rhs.len() != self.block_size() {
            return Err(Error::DimensionMismatch {
                expected: self.block_size(),
                got: rhs.len(),
            });
        }
        let op = &self.operators[self.element_operator[e]];
        match &op.factor {
            Factor::Full(lu) => {
                let n = rhs.len();
                lu.solve_mut(&mut DVectorViewMut::from_slice(rhs, n));
            }
            Factor::Condensed { schur, geometry } => {
                let geo = &self.geometries[*geometry];
                let nv = self.rf.n_volume();
                let d = self.dim;
                let (sig, u) = rhs.split_at_mut(d * nv);
                for k in 0..d {
                    let rk = &mut sig[k * nv..(k + 1) * nv];
                    for (v, di) in rk.iter_mut().zip(&geo.dinv) {
                        *v *= di;
                    }
                    // u <- r_u - H_k D^{-1} r_k
                    let hk = &geo.hk[k];
                    for (c, &y) in rk.iter().enumerate() {
                        if y != 0.0 {
                            for (r, uv) in u.iter_mut().enumerate() {
                                *uv -= hk[(r, c)] * y;
                            }
                        }
                    }
                }
                schur.solve_mut(&mut DVectorViewMut::from_slice(u, nv));
                for k in 0..d {
                    // sigma_k = D^{-1} r_k - D^{-1} G_k u
                    let gk = &geo.g[k];
                    let rk = &mut sig[k * nv..(k + 1) * nv];
                    for (c, &uc) in u.iter().enumerate() {
                        if uc != 0.0 {
                            for (r, v) in rk.iter_mut().enumerate() {
                                *v -= geo.dinv[r] * gk[(r, c)] * uc;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Local solve: element unknowns from the current traces and a weighted
    /// volume right-hand side.
    pub fn local_solve(
        &self,
        e: usize,
        traces: &[f64],
        volume_rhs: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        if traces.len() != self.trace_len() {
            return Err(Error::DimensionMismatch {
                expected: self.trace_len(),
                got: traces.len(),
            });
        }
        if volume_rhs.len() != self.block_size() || out.len() != self.block_size() {
            return Err(Error::DimensionMismatch {
                expected: self.block_size(),
                got: volume_rhs.len().min(out.len()),
            });
        }
        self.element_rhs(e, traces, volume_rhs, out);
        self.apply_inverse(e, out)
    }

    // ------------------------------------------------------------- volume data

    /// Quadrature-weighted forcing `(f(t), v)` for every element.
    pub fn weighted_forcing(&self, t: f64) -> Vec<f64> {
        let nv = self.rf.n_volume();
        let bs = self.block_size();
        let mut out = vec![0.0; self.field_len()];
        for e in 0..self.mesh.n_elements() {
            let jac = self.mesh.element(e).jacobian;
            let blk = &mut out[e * bs..(e + 1) * bs];
            for q in 0..nv {
                let wq = self.rf.volume_weights()[q] * jac;
                let x = self.mesh.node_coords(&self.rf, e, q);
                match &self.model {
                    Model::Transport(tr) => blk[q] = wq * (tr.forcing)(&x, t),
                    Model::ShallowWater(sw) => {
                        let f = sw.forcing();
                        for c in 0..3 {
                            blk[c * nv + q] = wq * f[c];
                        }
                    }
                    Model::ConvectionDiffusion(cd) => {
                        blk[self.dim * nv + q] = wq * (cd.forcing)(&x, t)
                    }
                }
            }
        }
        out
    }

    /// Adds `scale * (u, v)` on the time-dependent components.
    pub fn add_weighted_mass(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let nv = self.rf.n_volume();
        let bs = self.block_size();
        for e in 0..self.mesh.n_elements() {
            let jac = self.mesh.element(e).jacobian;
            for c in 0..self.m {
                if !self.model.is_time_dependent_component(self.dim, c) {
                    continue;
                }
                for q in 0..nv {
                    let idx = e * bs + c * nv + q;
                    out[idx] += scale * self.rf.volume_weights()[q] * jac * u[idx];
                }
            }
        }
    }

    /// Nodal interpolation of a state function.
    pub fn interpolate(&self, f: &dyn Fn(&Point) -> Vec<f64>) -> Vec<f64> {
        let nv = self.rf.n_volume();
        let bs = self.block_size();
        let mut out = vec![0.0; self.field_len()];
        for e in 0..self.mesh.n_elements() {
            for q in 0..nv {
                let v = f(&self.mesh.node_coords(&self.rf, e, q));
                for c in 0..self.m {
                    out[e * bs + c * nv + q] = v[c];
                }
            }
        }
        out
    }

    /// Galerkin residual `L_spatial u - B trace` of element `e`, evaluated
    /// term by term without the assembled matrices (time term excluded).
    /// `u` is the block of element `e` only.
    pub fn spatial_residual(&self, e: usize, u: &[f64], traces: &[f64]) -> Vec<f64> {
        let rf = &self.rf;
        let nv = rf.n_volume();
        let el = self.mesh.element(e);
        let jac = el.jacobian;
        let w = rf.volume_weights();
        let fw = rf.face_weights();
        let m = self.m;
        let fb = self.face_block_size();
        let mut r = vec![0.0; m * nv];
        let xs: Vec<Point> = (0..nv).map(|q| self.mesh.node_coords(rf, e, q)).collect();

        // volume flux term -(F(u), grad v) and zeroth-order terms
        let mut flux_q = vec![[0.0f64; 3]; m * nv];
        for q in 0..nv {
            match &self.model {
                Model::Transport(t) => {
                    let b = (t.beta)(&xs[q]);
                    flux_q[q] = [b[0] * u[q], b[1] * u[q], b[2] * u[q]];
                    r[q] -= w[q] * jac * (t.div_beta)(&xs[q]) * u[q];
                }
                Model::ShallowWater(sw) => {
                    let (phi, m1, m2) = (u[q], u[nv + q], u[2 * nv + q]);
                    flux_q[q] = [m1, m2, 0.0];
                    flux_q[nv + q] = [sw.phi_mean * phi, 0.0, 0.0];
                    flux_q[2 * nv + q] = [0.0, sw.phi_mean * phi, 0.0];
                    let c = sw.reaction(&xs[q]);
                    for a in 0..3 {
                        for b in 0..3 {
                            r[a * nv + q] += w[q] * jac * c[a][b] * u[b * nv + q];
                        }
                    }
                }
                Model::ConvectionDiffusion(cd) => {
                    let d = self.dim;
                    let uq = u[d * nv + q];
                    let b = (cd.beta)(&xs[q]);
                    for k in 0..d {
                        flux_q[k * nv + q][k] = uq;
                        flux_q[d * nv + q][k] = u[k * nv + q] + b[k] * uq;
                        r[k * nv + q] += w[q] * jac * u[k * nv + q] / cd.kappa;
                    }
                    r[d * nv + q] += w[q] * jac * (cd.nu - (cd.div_beta)(&xs[q])) * uq;
                }
            }
        }
        for c in 0..m {
            for q in 0..nv {
                for k in 0..self.dim {
                    let fk = flux_q[c * nv + q][k];
                    if fk == 0.0 {
                        continue;
                    }
                    for (i, dv) in rf.derivative_row(k, q) {
                        r[c * nv + i] -= w[q] * jac * fk * 2.0 / el.width[k] * dv;
                    }
                }
            }
        }
        for lf in 0..rf.n_faces() {
            let n = Mesh::outward_normal(lf);
            let fid = el.faces[lf];
            let jf = self.mesh.face(fid).jacobian;
            let fd = &self.faces[fid];
            let is_minus = el.is_minus[lf];
            let tau = if is_minus { &fd.tau_minus } else { &fd.tau_plus };
            let tr = &traces[fid * fb..(fid + 1) * fb];
            for (s, &i) in rf.face_map(lf).iter().enumerate() {
                let wf = fw[s] * jf;
                let bn = if is_minus { fd.bn[s] } else { -fd.bn[s] };
                match &self.model {
                    Model::Transport(_) => {
                        let num = match self.flux {
                            FluxScheme::Npc => bn * u[i] + tau[s] * (u[i] - tr[s]),
                            _ => bn * u[i] + tau[s] * u[i] - tr[s],
                        };
                        r[i] += wf * num;
                    }
                    Model::ShallowWater(sw) => {
                        let c = sw.phi_mean.sqrt();
                        let mn = u[nv + i] * n[0] + u[2 * nv + i] * n[1];
                        r[i] += wf * (mn + c * u[i] - tr[s]);
                        for k in 0..2 {
                            r[(1 + k) * nv + i] += wf * c * n[k] * tr[s];
                        }
                    }
                    Model::ConvectionDiffusion(_) => {
                        let d = self.dim;
                        let k = lf / 2;
                        let uh = tr[s];
                        r[k * nv + i] += wf * uh * n[k];
                        let sn = u[k * nv + i] * n[k];
                        r[d * nv + i] += wf * (sn + bn * u[d * nv + i] + tau[s] * (u[d * nv + i] - uh));
                    }
                }
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use crate::model::{ShallowWater, Transport};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn constant_transport(b: Point) -> Model {
        Model::Transport(Transport {
            beta: Arc::new(move |_| b),
            div_beta: Arc::new(|_| 0.0),
            forcing: crate::model::zero(),
            inflow: crate::model::constant(1.0),
        })
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn cases() -> Vec<Discretization> {
        let mut out = Vec::new();
        for flux in [FluxScheme::Upwind, FluxScheme::Npc] {
            let e = experiments::transport2d_discont();
            let mesh = Mesh::build_box(&e.lower, &e.upper, &[2, 3]).unwrap();
            out.push(Discretization::new(e.model, mesh, 2, flux, 0.0).unwrap());
            let e = experiments::convdiff3d(1e-2, 1.0);
            let mesh = Mesh::unit(3, 2).unwrap();
            out.push(Discretization::new(e.model, mesh, 2, flux, 3.0).unwrap());
        }
        let e = experiments::elliptic3d(10.0);
        out.push(
            Discretization::new(e.model, Mesh::unit(3, 2).unwrap(), 1, FluxScheme::elliptic(), 0.0)
                .unwrap(),
        );
        let sw = ShallowWater {
            f0: 0.3,
            beta_cor: 0.5,
            y_m: 0.5,
            gamma: 0.2,
            ..ShallowWater::standing_wave()
        };
        out.push(
            Discretization::new(Model::ShallowWater(sw), Mesh::unit(2, 2).unwrap(), 3, FluxScheme::Upwind, 10.0)
                .unwrap(),
        );
        out
    }

    #[test]
    fn zero_trace_and_forcing_give_zero() {
        let d = Discretization::new(
            constant_transport([1.0, 0.0, 0.0]),
            Mesh::unit(2, 1).unwrap(),
            1,
            FluxScheme::Upwind,
            0.0,
        )
        .unwrap();
        let traces = vec![0.0; d.trace_len()];
        let mut out = vec![1.0; d.block_size()];
        d.local_solve(0, &traces, &vec![0.0; d.block_size()], &mut out).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_inflow_state_is_reproduced() {
        let d = Discretization::new(
            constant_transport([1.0, 0.0, 0.0]),
            Mesh::unit(2, 1).unwrap(),
            3,
            FluxScheme::Upwind,
            0.0,
        )
        .unwrap();
        // weighted trace |b| g = 1 on the inflow face, b u^- = 1 on the
        // outflow face, and g = 1 on the tangential faces
        let traces = vec![1.0; d.trace_len()];
        let mut out = vec![0.0; d.block_size()];
        d.local_solve(0, &traces, &vec![0.0; d.block_size()], &mut out).unwrap();
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-12), "{out:?}");
        // residual substitution: L * 1 - B trace = 0
        let r = d.spatial_residual(0, &vec![1.0; d.block_size()], &traces);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn elliptic_with_unit_tau_is_locally_solvable() {
        let e = experiments::elliptic3d(1.0);
        // the upwind tau reduces to 1 for beta = 0
        let d = Discretization::new(e.model, Mesh::unit(3, 2).unwrap(), 2, FluxScheme::Upwind, 0.0)
            .unwrap();
        assert_eq!(d.face(0).tau_minus[0], 1.0);
        assert_eq!(d.n_factorizations(), 1);
    }

    #[test]
    fn shallow_water_small_step_is_mass_dominated() {
        let dt = 1e-6;
        let d = Discretization::new(
            Model::ShallowWater(ShallowWater::standing_wave()),
            Mesh::unit(2, 4).unwrap(),
            2,
            FluxScheme::Upwind,
            1.0 / dt,
        )
        .unwrap();
        let mat = d.local_matrix(0);
        let mut mass = DMatrix::zeros(mat.nrows(), mat.ncols());
        mass.set_diagonal(&mat.diagonal());
        let nv = d.reference().n_volume();
        let jac = d.mesh().element(0).jacobian;
        for c in 0..3 {
            for q in 0..nv {
                let i = c * nv + q;
                mass[(i, i)] = d.reference().volume_weights()[q] * jac / dt;
            }
        }
        let off = &mat - &mass;
        assert!(off.norm() / mass.norm() < 1e-4);
    }

    #[test]
    fn residual_identity_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in cases() {
            for e in [0, d.mesh().n_elements() - 1] {
                let u = random(&mut rng, d.block_size());
                let traces = random(&mut rng, d.trace_len());
                let mut lu = d.local_matrix(e) * nalgebra::DVector::from_vec(u.clone());
                // remove the time term, which the residual excludes
                let mut mass = vec![0.0; d.field_len()];
                let mut padded = vec![0.0; d.field_len()];
                padded[e * d.block_size()..(e + 1) * d.block_size()].copy_from_slice(&u);
                d.add_weighted_mass(&padded, d.time_coefficient(), &mut mass);
                for (i, v) in lu.iter_mut().enumerate() {
                    *v -= mass[e * d.block_size() + i];
                }
                let mut bt = vec![0.0; d.block_size()];
                d.element_rhs(e, &traces, &vec![0.0; d.block_size()], &mut bt);
                let r = d.spatial_residual(e, &u, &traces);
                let scale = lu.amax().max(1.0);
                for i in 0..d.block_size() {
                    assert!(
                        (lu[i] - bt[i] - r[i]).abs() < 1e-12 * scale,
                        "{:?} e={e} i={i}: {} vs {}",
                        d.model().kind(),
                        lu[i] - bt[i],
                        r[i]
                    );
                }
            }
        }
    }

    #[test]
    fn trace_coupling_matches_rhs_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in cases() {
            let e = d.mesh().n_elements() / 2;
            let traces = random(&mut rng, d.trace_len());
            let mut rhs = vec![0.0; d.block_size()];
            d.element_rhs(e, &traces, &vec![0.0; d.block_size()], &mut rhs);
            let fb = d.face_block_size();
            let mut local = Vec::new();
            for &f in &d.mesh().element(e).faces {
                local.extend_from_slice(&traces[f * fb..(f + 1) * fb]);
            }
            let b = d.trace_coupling(e) * nalgebra::DVector::from_vec(local);
            for i in 0..d.block_size() {
                assert!((b[i] - rhs[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn factor_solve_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in cases() {
            for e in 0..d.mesh().n_elements() {
                let b = random(&mut rng, d.block_size());
                let mut x = b.clone();
                d.apply_inverse(e, &mut x).unwrap();
                let ax = d.local_matrix(e) * nalgebra::DVector::from_vec(x);
                let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let err = ax
                    .iter()
                    .zip(&b)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(err < 1e-10 * bn, "{:?}: {err}", d.model().kind());
            }
        }
    }

    #[test]
    fn dt_scaling_changes_only_the_mass_term() {
        let e = experiments::convdiff3d(1e-3, 1.0);
        let mesh = Mesh::unit(3, 2).unwrap();
        let dt = 0.1;
        let a = Discretization::new(e.model.clone(), mesh.clone(), 2, FluxScheme::Upwind, 1.0 / dt).unwrap();
        let b = Discretization::new(e.model, mesh, 2, FluxScheme::Upwind, 2.0 / dt).unwrap();
        let diff = b.local_matrix(1) - a.local_matrix(1);
        let nv = a.reference().n_volume();
        let jac = a.mesh().element(1).jacobian;
        for i in 0..diff.nrows() {
            for j in 0..diff.ncols() {
                let expect = if i == j && i >= 3 * nv {
                    a.reference().volume_weights()[i - 3 * nv] * jac / dt
                } else {
                    0.0
                };
                assert!((diff[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn npc_rejected_for_shallow_water() {
        let r = Discretization::new(
            Model::ShallowWater(ShallowWater::standing_wave()),
            Mesh::unit(2, 2).unwrap(),
            1,
            FluxScheme::Npc,
            1.0,
        );
        assert!(matches!(r, Err(Error::UnsupportedFlux { .. })));
    }

    #[test]
    fn uniform_coefficients_share_one_factorization() {
        let d = Discretization::new(
            Model::ShallowWater(ShallowWater::standing_wave()),
            Mesh::unit(2, 4).unwrap(),
            2,
            FluxScheme::Upwind,
            24.0,
        )
        .unwrap();
        assert_eq!(d.n_factorizations(), 1);
        let e = experiments::transport2d_discont();
        let d = Discretization::new(
            e.model,
            Mesh::build_box(&e.lower, &e.upper, &[4, 4]).unwrap(),
            2,
            FluxScheme::Upwind,
            0.0,
        )
        .unwrap();
        assert!(d.n_factorizations() > 1);
    }
}
