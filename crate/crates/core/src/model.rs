//! PDE systems in first-order form.
//!
//! Unknown layouts per model:
//! - transport: `[u]`
//! - shallow water: `[phi, Phi*u, Phi*v]` (2D only)
//! - convection-diffusion: `[sigma_1, .., sigma_d, u]` with `sigma = -kappa grad u`

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::reference::ReferenceElement;

pub type Point = [f64; 3];
pub type ScalarFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
pub type SpatialFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

pub fn constant(v: f64) -> ScalarFn {
    Arc::new(move |_, _| v)
}

pub fn zero() -> ScalarFn {
    constant(0.0)
}

#[derive(Clone)]
pub struct Transport {
    pub beta: VectorFn,
    pub div_beta: SpatialFn,
    pub forcing: ScalarFn,
    /// Inflow boundary data `g`.
    pub inflow: ScalarFn,
}

#[derive(Clone, Debug)]
pub struct ShallowWater {
    /// Mean geopotential height.
    pub phi_mean: f64,
    pub f0: f64,
    pub beta_cor: f64,
    pub y_m: f64,
    /// Bottom friction.
    pub gamma: f64,
    pub tau_wind: [f64; 2],
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone)]
pub struct ConvectionDiffusion {
    pub kappa: f64,
    pub beta: VectorFn,
    pub div_beta: SpatialFn,
    pub nu: f64,
    pub forcing: ScalarFn,
    pub dirichlet: ScalarFn,
    /// Prescribed outward `sigma . n` on Neumann faces.
    pub neumann: ScalarFn,
    /// Boundary type of each box side, indexed `2 * axis + upper`.
    pub sides: [BoundaryKind; 6],
}

#[derive(Clone)]
pub enum Model {
    Transport(Transport),
    ShallowWater(ShallowWater),
    ConvectionDiffusion(ConvectionDiffusion),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Transport,
    ShallowWater,
    ConvectionDiffusion,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Transport => "transport",
            ModelKind::ShallowWater => "shallow-water",
            ModelKind::ConvectionDiffusion => "convection-diffusion",
        })
    }
}

/// Closed-form eigendecomposition `A = R S R^{-1}` of the normal flux
/// Jacobian, with `abs_a = R |S| R^{-1}`.
#[derive(Debug, Clone)]
pub struct FluxJacobian {
    pub a: DMatrix<f64>,
    pub abs_a: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl ShallowWater {
    pub fn standing_wave() -> Self {
        Self {
            phi_mean: 1.0,
            f0: 0.0,
            beta_cor: 0.0,
            y_m: 0.0,
            gamma: 0.0,
            tau_wind: [0.0, 0.0],
            rho: 1.0,
        }
    }

    pub fn coriolis(&self, x: &Point) -> f64 {
        self.f0 + self.beta_cor * (x[1] - self.y_m)
    }

    /// Zeroth-order coupling matrix `C` with the sources moved to the left.
    pub fn reaction(&self, x: &Point) -> [[f64; 3]; 3] {
        let f = self.coriolis(x);
        [
            [0.0, 0.0, 0.0],
            [0.0, self.gamma, -f],
            [0.0, f, self.gamma],
        ]
    }

    pub fn forcing(&self) -> [f64; 3] {
        [0.0, self.tau_wind[0] / self.rho, self.tau_wind[1] / self.rho]
    }

    pub fn normal_jacobian(&self, n: &Point) -> [[f64; 3]; 3] {
        let phi = self.phi_mean;
        [
            [0.0, n[0], n[1]],
            [phi * n[0], 0.0, 0.0],
            [phi * n[1], 0.0, 0.0],
        ]
    }

    pub fn abs_normal_jacobian(&self, n: &Point) -> [[f64; 3]; 3] {
        let c = self.phi_mean.sqrt();
        [
            [c, 0.0, 0.0],
            [0.0, c * n[0] * n[0], c * n[0] * n[1]],
            [0.0, c * n[0] * n[1], c * n[1] * n[1]],
        ]
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Transport(_) => ModelKind::Transport,
            Model::ShallowWater(_) => ModelKind::ShallowWater,
            Model::ConvectionDiffusion(_) => ModelKind::ConvectionDiffusion,
        }
    }

    pub fn n_components(&self, dim: usize) -> usize {
        match self {
            Model::Transport(_) => 1,
            Model::ShallowWater(_) => 3,
            Model::ConvectionDiffusion(_) => dim + 1,
        }
    }

    /// Index of the primary scalar unknown (u or phi).
    pub fn primary_component(&self, dim: usize) -> usize {
        match self {
            Model::ConvectionDiffusion(_) => dim,
            _ => 0,
        }
    }

    /// Number of trace components stored per face node.
    pub fn n_trace_components(&self) -> usize {
        match self {
            Model::ShallowWater(_) => 3,
            _ => 1,
        }
    }

    /// Components that carry a time derivative.
    pub fn is_time_dependent_component(&self, dim: usize, c: usize) -> bool {
        match self {
            Model::ConvectionDiffusion(_) => c == dim,
            _ => true,
        }
    }

    pub fn beta(&self, x: &Point) -> Option<Point> {
        match self {
            Model::Transport(t) => Some((t.beta)(x)),
            Model::ConvectionDiffusion(c) => Some((c.beta)(x)),
            Model::ShallowWater(_) => None,
        }
    }

    /// Copy with zero forcing and zero boundary data.
    pub fn homogeneous(&self) -> Model {
        match self {
            Model::Transport(t) => Model::Transport(Transport {
                forcing: zero(),
                inflow: zero(),
                ..t.clone()
            }),
            Model::ShallowWater(sw) => Model::ShallowWater(ShallowWater {
                tau_wind: [0.0, 0.0],
                ..sw.clone()
            }),
            Model::ConvectionDiffusion(cd) => Model::ConvectionDiffusion(ConvectionDiffusion {
                forcing: zero(),
                dirichlet: zero(),
                neumann: zero(),
                ..cd.clone()
            }),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Model::ShallowWater(sw) => {
                if dim != 2 {
                    return Err(Error::InvalidModel(format!(
                        "shallow water is two-dimensional, got d = {dim}"
                    )));
                }
                if !(sw.phi_mean > 0.0) {
                    return Err(Error::InvalidModel("mean geopotential must be positive".into()));
                }
                if !(sw.gamma >= 0.0) {
                    return Err(Error::InvalidModel("bottom friction must be non-negative".into()));
                }
                if !(sw.rho > 0.0) {
                    return Err(Error::InvalidModel("density must be positive".into()));
                }
            }
            Model::ConvectionDiffusion(cd) => {
                if !(cd.kappa > 0.0) {
                    return Err(Error::InvalidModel("diffusion coefficient must be positive".into()));
                }
                if !(cd.nu >= 0.0) {
                    return Err(Error::InvalidModel("reaction coefficient must be non-negative".into()));
                }
            }
            Model::Transport(_) => {}
        }
        Ok(())
    }

    /// Normal flux Jacobian `A(n) = sum_k A_k n_k` at `x` with its upwind
    /// decomposition.
    pub fn flux_jacobian(&self, dim: usize, x: &Point, n: &Point) -> Result<FluxJacobian> {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitNormal(norm));
        }
        match self {
            Model::Transport(t) => {
                let b = (t.beta)(x);
                let s = b[0] * n[0] + b[1] * n[1] + b[2] * n[2];
                Ok(FluxJacobian {
                    a: DMatrix::from_element(1, 1, s),
                    abs_a: DMatrix::from_element(1, 1, s.abs()),
                    r: DMatrix::from_element(1, 1, 1.0),
                    eigenvalues: vec![s],
                })
            }
            Model::ShallowWater(sw) => {
                let c = sw.phi_mean.sqrt();
                let a = sw.normal_jacobian(n);
                let abs_a = sw.abs_normal_jacobian(n);
                let r = DMatrix::from_row_slice(
                    3,
                    3,
                    &[1.0, 0.0, 1.0, -c * n[0], -n[1], c * n[0], -c * n[1], n[0], c * n[1]],
                );
                Ok(FluxJacobian {
                    a: DMatrix::from_fn(3, 3, |i, j| a[i][j]),
                    abs_a: DMatrix::from_fn(3, 3, |i, j| abs_a[i][j]),
                    r,
                    eigenvalues: vec![-c, 0.0, c],
                })
            }
            Model::ConvectionDiffusion(cd) => {
                let b3 = (cd.beta)(x);
                let b = b3[0] * n[0] + b3[1] * n[1] + b3[2] * n[2];
                let m = dim + 1;
                let mut a = DMatrix::zeros(m, m);
                for k in 0..dim {
                    a[(k, dim)] = n[k];
                    a[(dim, k)] = n[k];
                }
                a[(dim, dim)] = b;
                // On span{(n, 0), (0, 1)} A acts as [[0, 1], [1, b]]; the
                // tangential sigma directions are in the kernel.
                let root = (b * b + 4.0).sqrt();
                let lp = 0.5 * (b + root);
                let lm = 0.5 * (b - root);
                let mut r = DMatrix::zeros(m, m);
                let mut eigenvalues = vec![lm];
                for k in 0..dim {
                    r[(k, 0)] = n[k] / lm;
                }
                r[(dim, 0)] = 1.0;
                let tangents = tangent_basis(dim, n);
                for (j, t) in tangents.iter().enumerate() {
                    for k in 0..dim {
                        r[(k, 1 + j)] = t[k];
                    }
                    eigenvalues.push(0.0);
                }
                for k in 0..dim {
                    r[(k, m - 1)] = n[k] / lp;
                }
                r[(dim, m - 1)] = 1.0;
                eigenvalues.push(lp);
                let mut abs_a = DMatrix::zeros(m, m);
                // |A| = (b A + 2 I) / sqrt(b^2 + 4) on the normal subspace
                for i in 0..dim {
                    for j in 0..dim {
                        abs_a[(i, j)] = 2.0 * n[i] * n[j] / root;
                    }
                    abs_a[(i, dim)] = b * n[i] / root;
                    abs_a[(dim, i)] = b * n[i] / root;
                }
                abs_a[(dim, dim)] = (b * b + 2.0) / root;
                Ok(FluxJacobian { a, abs_a, r, eigenvalues })
            }
        }
    }

    /// Lower-bound estimate of `min(-div beta)` (transport) or
    /// `min(nu - div beta / 2)` (convection-diffusion), sampled at all volume
    /// nodes and element corners.
    pub fn coercivity_estimate(&self, mesh: &Mesh, rf: &ReferenceElement) -> Option<f64> {
        let (div, nu, half) = match self {
            Model::Transport(t) => (&t.div_beta, 0.0, 1.0),
            Model::ConvectionDiffusion(c) => (&c.div_beta, c.nu, 0.5),
            Model::ShallowWater(_) => return None,
        };
        let d = mesh.dim();
        let mut lo = f64::INFINITY;
        for e in 0..mesh.n_elements() {
            for i in 0..rf.n_volume() {
                let x = mesh.node_coords(rf, e, i);
                lo = lo.min(nu - half * div(&x));
            }
            let el = mesh.element(e);
            for corner in 0..(1usize << d) {
                let mut x = [0.0; 3];
                for a in 0..d {
                    x[a] = el.lower[a] + if corner >> a & 1 == 1 { el.width[a] } else { 0.0 };
                }
                lo = lo.min(nu - half * div(&x));
            }
        }
        Some(lo)
    }
}

/// Orthonormal basis of the plane orthogonal to an axis-aligned or general
/// unit vector `n` in `dim` dimensions.
fn tangent_basis(dim: usize, n: &Point) -> Vec<Point> {
    match dim {
        1 => vec![],
        2 => vec![[-n[1], n[0], 0.0]],
        _ => {
            let seed = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let dot = seed[0] * n[0] + seed[1] * n[1] + seed[2] * n[2];
            let mut t1 = [seed[0] - dot * n[0], seed[1] - dot * n[1], seed[2] - dot * n[2]];
            let l = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
            for v in t1.iter_mut() {
                *v /= l;
            }
            let t2 = [
                n[1] * t1[2] - n[2] * t1[1],
                n[2] * t1[0] - n[0] * t1[2],
                n[0] * t1[1] - n[1] * t1[0],
            ];
            vec![t1, t2]
        }
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Transport(_) => f.write_str("Transport"),
            Model::ShallowWater(sw) => write!(f, "ShallowWater({sw:?})"),
            Model::ConvectionDiffusion(cd) => write!(
                f,
                "ConvectionDiffusion {{ kappa: {}, nu: {}, sides: {:?} }}",
                cd.kappa, cd.nu, cd.sides
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use proptest::prelude::*;

    fn reconstruct(j: &FluxJacobian) -> (DMatrix<f64>, DMatrix<f64>) {
        let rinv = j.r.clone().try_inverse().unwrap();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(j.eigenvalues.clone()));
        let abs_s = s.map(f64::abs);
        (&j.r * s * &rinv, &j.r * abs_s * rinv)
    }

    fn unit(v: [f64; 3], dim: usize) -> Point {
        let l = v[..dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut n = [0.0; 3];
        for k in 0..dim {
            n[k] = v[k] / l;
        }
        n
    }

    #[test]
    fn transport_jacobian_is_scalar() {
        let m = experiments::transport3d_smooth().model;
        let x = [0.3, 0.2, 0.7];
        let j = m.flux_jacobian(3, &x, &[0.0, 0.0, -1.0]).unwrap();
        assert_eq!(j.a[(0, 0)], -0.2);
        assert_eq!(j.abs_a[(0, 0)], 0.2);
    }

    #[test]
    fn shallow_water_eigenvalues() {
        let m = Model::ShallowWater(ShallowWater { phi_mean: 4.0, ..ShallowWater::standing_wave() });
        let j = m.flux_jacobian(2, &[0.0; 3], &unit([0.6, 0.8, 0.0], 2)).unwrap();
        assert_eq!(j.eigenvalues, vec![-2.0, 0.0, 2.0]);
    }

    #[test]
    fn rejects_non_unit_normal() {
        let m = Model::ShallowWater(ShallowWater::standing_wave());
        assert!(matches!(
            m.flux_jacobian(2, &[0.0; 3], &[1.0, 1.0, 0.0]),
            Err(Error::NonUnitNormal(_))
        ));
    }

    #[test]
    fn validation() {
        let mut sw = ShallowWater::standing_wave();
        assert!(Model::ShallowWater(sw.clone()).validate(2).is_ok());
        assert!(Model::ShallowWater(sw.clone()).validate(3).is_err());
        sw.phi_mean = 0.0;
        assert!(Model::ShallowWater(sw).validate(2).is_err());
    }

    #[test]
    fn coercivity_of_convdiff_preset() {
        let m = experiments::convdiff3d(1e-3, 1.0).model;
        let mesh = Mesh::unit(3, 2).unwrap();
        let rf = ReferenceElement::new(1, 3).unwrap();
        // div beta = 0 for (1+z, 1+x, 1+y)
        assert_eq!(m.coercivity_estimate(&mesh, &rf), Some(1.0));
    }

    proptest! {
        #[test]
        fn eigendecomposition_reconstructs(
            v in proptest::array::uniform3(-1.0f64..1.0),
            x in proptest::array::uniform3(0.0f64..1.0),
            dim in 2usize..=3,
        ) {
            let l = v[..dim].iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assume!(l > 1e-3);
            let n = unit(v, dim);
            let mut models = vec![
                (experiments::transport3d_smooth().model, 3usize),
                (experiments::convdiff3d(1e-2, 1.0).model, 3usize),
            ];
            if dim == 2 {
                models.push((Model::ShallowWater(ShallowWater { phi_mean: 2.5, ..ShallowWater::standing_wave() }), 2));
            }
            for (m, md) in models {
                let nn = if md == 3 && dim == 2 { unit([v[0], v[1], 0.0], 3) } else { n };
                let j = m.flux_jacobian(md, &x, &nn).unwrap();
                let (a, abs_a) = reconstruct(&j);
                prop_assert!((a - &j.a).amax() < 1e-12);
                prop_assert!((&abs_a - &j.abs_a).amax() < 1e-12);
                prop_assert!((abs_a.transpose() - &j.abs_a).amax() < 1e-12);
                let eig = j.abs_a.clone().symmetric_eigenvalues();
                prop_assert!(eig.iter().all(|&e| e > -1e-12));
            }
        }

        #[test]
        fn transport_upwind_picks_the_upwind_value(s in -3.0f64..3.0, um in -2.0f64..2.0, up in -2.0f64..2.0) {
            // weighted trace from the minus side: {s u} + |s| {u}, with the
            // plus-side normal flux -s
            let w = 0.5 * (s * um - s * up) + s.abs() * 0.5 * (um + up);
            let upwind = if s >= 0.0 { um } else { up };
            prop_assert!((w - s.abs() * upwind).abs() < 1e-12);
        }
    }
}
