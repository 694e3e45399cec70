//! Closed-form convergence constants and the inflow layer count.

use crate::error::{Error, Result};
use crate::flux::FluxScheme;
use crate::local::Discretization;
use crate::mesh::{classify_face, Mesh, Neighbor};
use crate::model::{Model, VectorFn};
use crate::reference::ReferenceElement;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Convergent,
    NonConvergent,
}

impl Verdict {
    pub fn from_flag(ok: bool) -> Self {
        if ok {
            Verdict::Convergent
        } else {
            Verdict::NonConvergent
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Convergent => "convergent",
            Verdict::NonConvergent => "non-convergent",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShallowWaterReport {
    pub a: f64,
    pub b: f64,
    pub contraction: f64,
    pub verdict: Verdict,
    /// `h / (Phi (p+1)(p+2))`, the time-step scale of the convergence
    /// condition.
    pub dt_scale: f64,
}

/// Contraction constant of the shallow-water iteration with backward Euler.
pub fn shallow_water_verdict(
    phi: f64,
    gamma: f64,
    h: f64,
    dt: f64,
    p: usize,
    c: f64,
) -> ShallowWaterReport {
    let s = phi.sqrt();
    let pp = ((p + 1) * (p + 2)) as f64;
    let a = f64::max((phi + s) / 2.0, (1.0 + s) / 2.0);
    let b = f64::min(
        c * h / (dt * pp) + (s - phi) / 2.0,
        (gamma + 1.0 / dt) * c * h / pp - (1.0 + s) / 2.0,
    );
    let contraction = a / b;
    ShallowWaterReport {
        a,
        b,
        contraction,
        verdict: Verdict::from_flag(b > 0.0 && contraction < 1.0),
        dt_scale: h / (phi * pp),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvDiffInputs {
    pub kappa: f64,
    /// `||beta . n||_inf` over the skeleton.
    pub bn_max: f64,
    pub lambda: f64,
    pub tau_bar: f64,
    pub tau_star: f64,
    pub h: f64,
    pub p: usize,
    pub d: usize,
    pub c: f64,
    pub epsilon: f64,
}

impl ConvDiffInputs {
    /// Inputs with the defaults `c = 1` and `epsilon = 1 / tau_bar`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kappa: f64,
        bn_max: f64,
        lambda: f64,
        tau_bar: f64,
        tau_star: f64,
        h: f64,
        p: usize,
        d: usize,
    ) -> Self {
        Self {
            kappa,
            bn_max,
            lambda,
            tau_bar,
            tau_star,
            h,
            p,
            d,
            c: 1.0,
            epsilon: 1.0 / tau_bar,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvDiffReport {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub verdict: Verdict,
    /// Smallest `h` with a positive first term of `B`.
    pub min_h_sigma: f64,
}

pub fn convdiff_verdict(x: &ConvDiffInputs) -> ConvDiffReport {
    let tb = x.tau_bar;
    let eps = x.epsilon;
    let bn = x.bn_max;
    let c1 = 3.0 * (bn * bn + tb * tb) * (tb * eps + 1.0) / (2.0 * eps);
    let c2 = 3.0 * (tb * eps + 1.0) / (2.0 * eps);
    let c3 = (tb + bn) / 2.0;
    let c4 = eps / 2.0;
    let a = c1.max(c2);
    let scale = 2.0 * x.c * x.h / (x.d as f64 * ((x.p + 1) * (x.p + 2)) as f64);
    let b = f64::min(scale / x.kappa - c4, scale * x.lambda + x.tau_star - c3);
    let low = (1.0 / x.kappa).min(x.lambda);
    let d = a / b;
    ConvDiffReport {
        c1,
        c2,
        c3,
        c4,
        a,
        b,
        d,
        e: c3.max(c4) / low,
        f: a / low,
        verdict: Verdict::from_flag(b > 0.0 && d < 1.0),
        min_h_sigma: min_mesh_size(x.d, x.p, x.kappa, tb, x.c),
    }
}

/// `h > d (p+1)(p+2) kappa / (4 c tau_bar)`: positivity of the first term
/// of `B` with `epsilon = 1 / tau_bar`.
pub fn min_mesh_size(d: usize, p: usize, kappa: f64, tau_bar: f64, c: f64) -> f64 {
    d as f64 * ((p + 1) * (p + 2)) as f64 * kappa / (4.0 * c * tau_bar)
}

/// `tau_bar` values behind the published minimum-mesh-size table for
/// `beta = (1+z, 1+x, 1+y)`: `(sqrt(8) + 2) / 2` rounded to 2.4 for upwind,
/// and the convective part `max |beta . n| = 2` for NPC.
pub fn table_tau_bar(flux: FluxScheme) -> f64 {
    match flux {
        FluxScheme::Npc => 2.0,
        _ => 2.4,
    }
}

/// Factor between the theoretical minimum mesh size and the observed
/// divergence onset.
pub fn calibration_factor(flux: FluxScheme) -> f64 {
    match flux {
        FluxScheme::Npc => 4.0,
        _ => 2.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticBounds {
    /// `tau > d (p+1)(p+2) / (4h)`.
    pub tau_min: f64,
    /// `h > sqrt(23 gamma d) (p+1)(p+2) / (2 sqrt(lambda))`.
    pub h_min_reaction: f64,
    /// `h > sqrt(24 d) (p+1)(p+2) gamma / sqrt(4 gamma - d)`.
    pub h_min_stabilization: f64,
}

pub fn elliptic_bounds(gamma: f64, lambda: f64, h: f64, p: usize, d: usize) -> EllipticBounds {
    let pp = ((p + 1) * (p + 2)) as f64;
    let df = d as f64;
    EllipticBounds {
        tau_min: df * pp / (4.0 * h),
        h_min_reaction: (23.0 * gamma * df).sqrt() * pp / (2.0 * lambda.sqrt()),
        h_min_stabilization: (24.0 * df).sqrt() * pp * gamma / (4.0 * gamma - df).sqrt(),
    }
}

/// Theory inputs read off a convection-diffusion discretization: extreme
/// `tau` and `|beta . n|` over all face nodes and the sampled coercivity
/// constant, increased by `1/dt` for time-dependent runs.
pub fn convdiff_inputs(disc: &Discretization, dt: Option<f64>) -> Result<ConvDiffInputs> {
    let Model::ConvectionDiffusion(cd) = disc.model() else {
        return Err(Error::InvalidModel("convection-diffusion model expected".into()));
    };
    let mut bn_max = 0.0f64;
    let mut tau_bar = 0.0f64;
    let mut tau_star = f64::INFINITY;
    for f in 0..disc.mesh().n_faces() {
        let fd = disc.face(f);
        for s in 0..fd.bn.len() {
            bn_max = bn_max.max(fd.bn[s].abs());
            tau_bar = tau_bar.max(fd.tau_minus[s]).max(fd.tau_plus[s]);
            tau_star = tau_star.min(fd.tau_minus[s]).min(fd.tau_plus[s]);
        }
    }
    let lambda = disc
        .model()
        .coercivity_estimate(disc.mesh(), disc.reference())
        .unwrap_or(0.0)
        + dt.map_or(0.0, |dt| 1.0 / dt);
    Ok(ConvDiffInputs::new(
        cd.kappa,
        bn_max,
        lambda,
        tau_bar,
        tau_star,
        disc.h(),
        disc.order(),
        disc.dim(),
    ))
}

/// Number of levels in the peeling of elements from the physical inflow
/// boundary. A face is an inflow face of an element when `beta . n` is
/// negative at any of its sample nodes (faces where the sign changes count
/// as inflow from both sides).
pub fn layer_count(mesh: &Mesh, beta: &VectorFn, rf: &ReferenceElement) -> Result<usize> {
    let n_el = mesh.n_elements();
    // upstream[e] = neighbors that must be settled before e
    let mut upstream: Vec<Vec<usize>> = vec![Vec::new(); n_el];
    for (f, face) in mesh.faces().iter().enumerate() {
        let Neighbor::Element { element: plus, .. } = face.plus else {
            continue;
        };
        let xs = mesh.face_node_coords(rf, f);
        let b: Vec<[f64; 3]> = xs.iter().map(|x| beta(x)).collect();
        let class = classify_face(face.normal, &b);
        let minus_has_inflow = class.signs.iter().any(|&s| s < 0);
        let plus_has_inflow = class.signs.iter().any(|&s| s > 0);
        if minus_has_inflow {
            upstream[face.minus].push(plus);
        }
        if plus_has_inflow {
            upstream[plus].push(face.minus);
        }
    }
    let mut level = vec![usize::MAX; n_el];
    let mut done = 0;
    let mut j = 0;
    while done < n_el {
        let ready: Vec<usize> = (0..n_el)
            .filter(|&e| level[e] == usize::MAX && upstream[e].iter().all(|&u| level[u] < j + 1))
            .collect();
        if ready.is_empty() {
            return Err(Error::PeelingStalled {
                remaining: n_el - done,
            });
        }
        j += 1;
        for &e in &ready {
            level[e] = j;
        }
        done += ready.len();
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use std::sync::Arc;

    #[test]
    fn shallow_water_unit_phi() {
        let r = shallow_water_verdict(1.0, 0.0, 0.25, 1.0 / 24.0, 1, 1.0);
        assert_eq!(r.a, 1.0);
        assert!((r.b - 0.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::NonConvergent);
        let small = shallow_water_verdict(1.0, 0.0, 0.25, 1e-8, 1, 1.0);
        assert_eq!(small.verdict, Verdict::Convergent);
        assert!(small.contraction < 1e-5);
    }

    #[test]
    fn table_thresholds() {
        let expect = [
            (FluxScheme::Upwind, [0.019, 0.0375, 0.0625, 0.094]),
            (FluxScheme::Npc, [0.0225, 0.045, 0.075, 0.1125]),
        ];
        for (flux, row) in expect {
            for (i, &want) in row.iter().enumerate() {
                let got = min_mesh_size(3, i + 1, 0.01, table_tau_bar(flux), 1.0);
                let rel = (got - want).abs() / want;
                assert!(rel < 0.02, "{flux} p={} got {got} want {want}", i + 1);
            }
        }
    }

    #[test]
    fn upwind_elliptic_violates_positivity() {
        for h in [0.01, 0.1, 0.5, 1.0, 10.0] {
            let x = ConvDiffInputs::new(1.0, 0.0, 1.0, 1.0, 1.0, h, 1, 3);
            let r = convdiff_verdict(&x);
            if h < 1.0 {
                assert!(r.b <= 0.0);
            }
            assert_eq!(r.verdict, Verdict::NonConvergent, "h = {h}");
        }
    }

    #[test]
    fn layer_count_examples() {
        let rf = ReferenceElement::new(1, 1).unwrap();
        let beta: VectorFn = Arc::new(|_| [1.0, 0.0, 0.0]);
        assert_eq!(layer_count(&Mesh::unit(1, 5).unwrap(), &beta, &rf).unwrap(), 5);
        assert_eq!(layer_count(&Mesh::unit(1, 1).unwrap(), &beta, &rf).unwrap(), 1);

        let ex = experiments::transport2d_discont();
        let rf = ReferenceElement::new(3, 2).unwrap();
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[4, 4]).unwrap();
        let b = match &ex.model {
            Model::Transport(t) => t.beta.clone(),
            _ => unreachable!(),
        };
        assert_eq!(layer_count(&mesh, &b, &rf).unwrap(), 7);
    }

    #[test]
    fn recirculation_stalls() {
        let rf = ReferenceElement::new(1, 2).unwrap();
        let beta: VectorFn = Arc::new(|x| [-(x[1] - 0.5), x[0] - 0.5, 0.0]);
        let r = layer_count(&Mesh::unit(2, 4).unwrap(), &beta, &rf);
        assert!(matches!(r, Err(Error::PeelingStalled { .. })));
    }
}
