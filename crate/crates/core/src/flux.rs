//! Stabilization choices shared by the local solver and the trace update.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Model, Point};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FluxScheme {
    /// `|A|` from the flux Jacobian (transport, shallow water) or
    /// `tau = (sqrt(b^2 + 4) - b) / 2` (convection-diffusion).
    Upwind,
    /// Characteristic-following stabilization.
    Npc,
    /// Mesh-dependent `tau = gamma (p+1)(p+2) / h` for diffusion.
    EllipticTau { gamma: f64 },
}

/// Length scale in the diffusive part of the NPC stabilization.
pub const NPC_LENGTH: f64 = 1.0;

impl FluxScheme {
    pub fn elliptic() -> Self {
        FluxScheme::EllipticTau { gamma: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FluxScheme::Upwind => "upwind",
            FluxScheme::Npc => "npc",
            FluxScheme::EllipticTau { .. } => "elliptic-tau",
        }
    }

    /// Rejects model/scheme pairs that have no definition.
    pub fn check_supported(&self, model: &Model, dim: usize) -> Result<()> {
        let unsupported = || Error::UnsupportedFlux {
            flux: self.name().to_string(),
            model: model.kind().to_string(),
        };
        match (self, model) {
            (FluxScheme::Npc, Model::ShallowWater(_)) => Err(unsupported()),
            (FluxScheme::EllipticTau { gamma }, Model::ConvectionDiffusion(_)) => {
                if *gamma > dim as f64 / 4.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidModel(format!(
                        "elliptic stabilization needs gamma > d/4 = {}, got {gamma}",
                        dim as f64 / 4.0
                    )))
                }
            }
            (FluxScheme::EllipticTau { .. }, _) => Err(unsupported()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FluxScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FluxScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(FluxScheme::Upwind),
            "npc" => Ok(FluxScheme::Npc),
            "elliptic-tau" => Ok(FluxScheme::elliptic()),
            _ => Err(Error::Config(format!(
                "unknown flux '{s}' (expected upwind, npc or elliptic-tau)"
            ))),
        }
    }
}

/// Transport NPC stabilization `|b| (1 + sgn b) / 2 - b` seen from the side
/// whose outward normal velocity is `b`, with `sgn 0 = 0`.
pub fn npc_transport_tau(b: f64) -> f64 {
    let sgn = if b > 0.0 {
        1.0
    } else if b < 0.0 {
        -1.0
    } else {
        0.0
    };
    b.abs() * (1.0 + sgn) / 2.0 - b
}

/// Upwind convection-diffusion stabilization `(sqrt(b^2 + 4) - b) / 2`.
pub fn upwind_convdiff_tau(b: f64) -> f64 {
    0.5 * ((b * b + 4.0).sqrt() - b)
}

/// Scalar stabilization of the convection-diffusion flux, seen from the side
/// with outward normal velocity `b`.
pub fn convdiff_tau(scheme: FluxScheme, b: f64, kappa: f64, h: f64, p: usize) -> f64 {
    match scheme {
        FluxScheme::Upwind => upwind_convdiff_tau(b),
        FluxScheme::Npc => kappa / NPC_LENGTH + npc_transport_tau(b),
        FluxScheme::EllipticTau { gamma } => elliptic_tau(gamma, h, p),
    }
}

pub fn elliptic_tau(gamma: f64, h: f64, p: usize) -> f64 {
    gamma * ((p + 1) * (p + 2)) as f64 / h
}

/// Stabilization at one face node for the side with outward normal `n`:
/// `|A(n)|` for upwind hyperbolic systems, a 1x1 `tau` otherwise.
pub fn stabilization(
    scheme: FluxScheme,
    model: &Model,
    dim: usize,
    x: &Point,
    n: &Point,
    h: f64,
    p: usize,
) -> Result<DMatrix<f64>> {
    scheme.check_supported(model, dim)?;
    let bn = |b: Point| b[0] * n[0] + b[1] * n[1] + b[2] * n[2];
    match (model, scheme) {
        (Model::Transport(_) | Model::ShallowWater(_), FluxScheme::Upwind) => {
            Ok(model.flux_jacobian(dim, x, n)?.abs_a)
        }
        (Model::Transport(t), FluxScheme::Npc) => {
            Ok(DMatrix::from_element(1, 1, npc_transport_tau(bn((t.beta)(x)))))
        }
        (Model::ConvectionDiffusion(cd), _) => Ok(DMatrix::from_element(
            1,
            1,
            convdiff_tau(scheme, bn((cd.beta)(x)), cd.kappa, h, p),
        )),
        _ => unreachable!("rejected by check_supported"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments;
    use crate::model::ShallowWater;
    use proptest::prelude::*;

    #[test]
    fn npc_sum_on_an_outflow_face() {
        let s = 1.7;
        assert_eq!(npc_transport_tau(s), 0.0);
        assert_eq!(npc_transport_tau(-s), s);
        assert_eq!(npc_transport_tau(s) + npc_transport_tau(-s), s);
        assert_eq!(npc_transport_tau(0.0), 0.0);
    }

    #[test]
    fn upwind_convdiff_on_tangential_flow() {
        assert_eq!(upwind_convdiff_tau(0.0), 1.0);
    }

    #[test]
    fn elliptic_tau_value() {
        assert_eq!(elliptic_tau(1.0, 0.125, 1), 48.0);
    }

    #[test]
    fn support_matrix() {
        let sw = Model::ShallowWater(ShallowWater::standing_wave());
        assert!(matches!(
            FluxScheme::Npc.check_supported(&sw, 2),
            Err(Error::UnsupportedFlux { .. })
        ));
        assert!(FluxScheme::Upwind.check_supported(&sw, 2).is_ok());
        let tr = experiments::transport2d_discont().model;
        assert!(FluxScheme::elliptic().check_supported(&tr, 2).is_err());
        let cd = experiments::elliptic3d(1.0).model;
        assert!(FluxScheme::elliptic().check_supported(&cd, 3).is_ok());
        assert!(FluxScheme::EllipticTau { gamma: 0.7 }.check_supported(&cd, 3).is_err());
    }

    #[test]
    fn parse_names() {
        for s in ["upwind", "npc", "elliptic-tau"] {
            assert_eq!(s.parse::<FluxScheme>().unwrap().name(), s);
        }
        assert!("lax-friedrichs".parse::<FluxScheme>().is_err());
    }

    proptest! {
        #[test]
        fn stabilization_sums_are_positive(b in -5.0f64..5.0, kappa in 1e-6f64..1.0) {
            prop_assume!(b != 0.0);
            let t = npc_transport_tau(b) + npc_transport_tau(-b);
            prop_assert!((t - b.abs()).abs() < 1e-14);
            let u = upwind_convdiff_tau(b) + upwind_convdiff_tau(-b);
            prop_assert!((u - (b * b + 4.0).sqrt()).abs() < 1e-12);
            let n = convdiff_tau(FluxScheme::Npc, b, kappa, 1.0, 1) + convdiff_tau(FluxScheme::Npc, -b, kappa, 1.0, 1);
            prop_assert!(n > 0.0);
        }

        #[test]
        fn upwind_transport_is_abs_normal_velocity(x in proptest::array::uniform3(0.0f64..1.0), axis in 0usize..3, sign in proptest::bool::ANY) {
            let m = experiments::transport3d_smooth().model;
            let mut n = [0.0; 3];
            n[axis] = if sign { 1.0 } else { -1.0 };
            let s = stabilization(FluxScheme::Upwind, &m, 3, &x, &n, 0.1, 2).unwrap();
            let b = m.beta(&x).unwrap();
            prop_assert_eq!(s[(0, 0)], (b[axis] * n[axis]).abs());
        }
    }
}
