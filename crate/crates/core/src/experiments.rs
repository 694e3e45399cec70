//! Built-in benchmark problems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    constant, zero, BoundaryKind, ConvectionDiffusion, Model, Point, ShallowWater, Transport,
};

/// Exact (or initial) state, one value per model component.
pub type StateFn = Arc<dyn Fn(&Point, f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    Transport2dDiscont,
    Transport3dSmooth,
    ShallowStandingWave,
    Convdiff3d,
    Elliptic3d,
    Contaminant,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Transport2dDiscont,
        ExperimentId::Transport3dSmooth,
        ExperimentId::ShallowStandingWave,
        ExperimentId::Convdiff3d,
        ExperimentId::Elliptic3d,
        ExperimentId::Contaminant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::Transport2dDiscont => "transport2d-discont",
            ExperimentId::Transport3dSmooth => "transport3d-smooth",
            ExperimentId::ShallowStandingWave => "shallow-standing-wave",
            ExperimentId::Convdiff3d => "convdiff3d",
            ExperimentId::Elliptic3d => "elliptic3d",
            ExperimentId::Contaminant => "contaminant",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone)]
pub struct Experiment {
    pub id: ExperimentId,
    pub model: Model,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub exact: Option<StateFn>,
    pub initial: Option<StateFn>,
}

impl Experiment {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

fn discont_inflow(x: &Point) -> f64 {
    if x[0] == 0.0 {
        1.0
    } else if x[1] == 0.0 && x[0] > 0.0 && x[0] <= 1.0 {
        (PI * x[0]).sin().powi(6)
    } else {
        0.0
    }
}

/// 2D transport on `[0,2]^2` with a discontinuous inflow profile and no
/// closed-form interior solution.
pub fn transport2d_discont() -> Experiment {
    let model = Model::Transport(Transport {
        beta: Arc::new(|x| [1.0 + (PI * x[1] / 2.0).sin(), 2.0, 0.0]),
        div_beta: Arc::new(|_| 0.0),
        forcing: zero(),
        inflow: Arc::new(|x, _| discont_inflow(x)),
    });
    Experiment {
        id: ExperimentId::Transport2dDiscont,
        model,
        lower: vec![0.0, 0.0],
        upper: vec![2.0, 2.0],
        exact: None,
        initial: None,
    }
}

fn smooth_u(x: &Point) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).cos() * (PI * x[2]).sin() / PI
}

fn smooth_grad(x: &Point) -> Point {
    let (sx, cx) = (PI * x[0]).sin_cos();
    let (sy, cy) = (PI * x[1]).sin_cos();
    let (sz, cz) = (PI * x[2]).sin_cos();
    [cx * cy * sz, -sx * sy * sz, sx * cy * cz]
}

/// 3D transport with `beta = (z, x, y)` and a smooth manufactured solution.
pub fn transport3d_smooth() -> Experiment {
    let beta = |x: &Point| [x[2], x[0], x[1]];
    let model = Model::Transport(Transport {
        beta: Arc::new(beta),
        div_beta: Arc::new(|_| 0.0),
        forcing: Arc::new(move |x, _| {
            let b = beta(x);
            let g = smooth_grad(x);
            b[0] * g[0] + b[1] * g[1] + b[2] * g[2]
        }),
        inflow: Arc::new(|x, _| smooth_u(x)),
    });
    Experiment {
        id: ExperimentId::Transport3dSmooth,
        model,
        lower: vec![0.0; 3],
        upper: vec![1.0; 3],
        exact: Some(Arc::new(|x, _| vec![smooth_u(x)])),
        initial: None,
    }
}

/// Linear standing wave in the unit square with reflecting walls.
pub fn shallow_standing_wave() -> Experiment {
    let sw = ShallowWater::standing_wave();
    let phi = sw.phi_mean;
    let exact: StateFn = Arc::new(move |x, t| {
        let w = 2f64.sqrt() * PI * t;
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        vec![
            cx * cy * w.cos(),
            phi * sx * cy * w.sin() / 2f64.sqrt(),
            phi * cx * sy * w.sin() / 2f64.sqrt(),
        ]
    });
    Experiment {
        id: ExperimentId::ShallowStandingWave,
        model: Model::ShallowWater(sw),
        lower: vec![0.0; 2],
        upper: vec![1.0; 2],
        initial: Some(exact.clone()),
        exact: Some(exact),
    }
}

fn convdiff_smooth(beta: fn(&Point) -> Point, kappa: f64, nu: f64) -> (Model, StateFn) {
    let model = Model::ConvectionDiffusion(ConvectionDiffusion {
        kappa,
        beta: Arc::new(beta),
        div_beta: Arc::new(|_| 0.0),
        nu,
        forcing: Arc::new(move |x, _| {
            let b = beta(x);
            let g = smooth_grad(x);
            let u = smooth_u(x);
            3.0 * kappa * PI * PI * u + b[0] * g[0] + b[1] * g[1] + b[2] * g[2] + nu * u
        }),
        dirichlet: Arc::new(|x, _| smooth_u(x)),
        neumann: zero(),
        sides: [BoundaryKind::Dirichlet; 6],
    });
    let exact: StateFn = Arc::new(move |x, _| {
        let g = smooth_grad(x);
        vec![-kappa * g[0], -kappa * g[1], -kappa * g[2], smooth_u(x)]
    });
    (model, exact)
}

/// Steady convection-diffusion-reaction with `beta = (1+z, 1+x, 1+y)`.
pub fn convdiff3d(kappa: f64, nu: f64) -> Experiment {
    let (model, exact) = convdiff_smooth(|x| [1.0 + x[2], 1.0 + x[0], 1.0 + x[1]], kappa, nu);
    Experiment {
        id: ExperimentId::Convdiff3d,
        model,
        lower: vec![0.0; 3],
        upper: vec![1.0; 3],
        exact: Some(exact),
        initial: None,
    }
}

/// Reaction-diffusion (`beta = 0`, `kappa = 1`).
pub fn elliptic3d(nu: f64) -> Experiment {
    let (model, exact) = convdiff_smooth(|_| [0.0; 3], 1.0, nu);
    Experiment {
        id: ExperimentId::Elliptic3d,
        model,
        lower: vec![0.0; 3],
        upper: vec![1.0; 3],
        exact: Some(exact),
        initial: None,
    }
}

pub const KOVASZNAY_RE: f64 = 100.0;

pub fn kovasznay_gamma(re: f64) -> f64 {
    re / 2.0 - (re * re / 4.0 + 4.0 * PI * PI).sqrt()
}

/// Injected contaminant profile: three bumps of radius 0.5 around
/// `(1, 0, 0)` and `(1, ±0.5, 0)`. With `literal_exponent` the exponents
/// keep a positive sign (growing bumps) instead of the Gaussian form.
pub fn contaminant_profile(x: &Point, literal_exponent: bool) -> f64 {
    let sign = if literal_exponent { 1.0 } else { -1.0 };
    [0.0, 0.5, -0.5]
        .iter()
        .map(|&yc| {
            let r2 = (x[0] - 1.0).powi(2) + (x[1] - yc).powi(2) + x[2] * x[2];
            (sign * r2 / 0.25).exp()
        })
        .sum()
}

/// Time-dependent contaminant transport in a Kovasznay-type flow.
pub fn contaminant(literal_exponent: bool) -> Experiment {
    let g = kovasznay_gamma(KOVASZNAY_RE);
    let mut sides = [BoundaryKind::Neumann; 6];
    sides[0] = BoundaryKind::Dirichlet;
    let model = Model::ConvectionDiffusion(ConvectionDiffusion {
        kappa: 0.01,
        beta: Arc::new(move |x| {
            let e = (g * x[0]).exp();
            let (s, c) = (2.0 * PI * x[1]).sin_cos();
            [1.0 - e * c, g / (2.0 * PI) * e * s, 0.0]
        }),
        // Kovasznay velocity is solenoidal
        div_beta: Arc::new(|_| 0.0),
        nu: 0.0,
        forcing: zero(),
        dirichlet: constant(0.0),
        neumann: zero(),
        sides,
    });
    let initial: StateFn = Arc::new(move |x, _| {
        vec![0.0, 0.0, 0.0, contaminant_profile(x, literal_exponent)]
    });
    Experiment {
        id: ExperimentId::Contaminant,
        model,
        lower: vec![0.0, -1.25, -1.25],
        upper: vec![5.0, 1.25, 1.25],
        exact: None,
        initial: Some(initial),
    }
}

/// Experiment with default physical parameters.
pub fn by_id(id: ExperimentId) -> Experiment {
    match id {
        ExperimentId::Transport2dDiscont => transport2d_discont(),
        ExperimentId::Transport3dSmooth => transport3d_smooth(),
        ExperimentId::ShallowStandingWave => shallow_standing_wave(),
        ExperimentId::Convdiff3d => convdiff3d(1e-3, 1.0),
        ExperimentId::Elliptic3d => elliptic3d(1.0),
        ExperimentId::Contaminant => contaminant(false),
    }
}

fn on_boundary(e: &Experiment, x: &Point) -> bool {
    (0..e.dim()).any(|a| x[a] == e.lower[a] || x[a] == e.upper[a])
}

/// Exact solution values at `(x, t)`. The discontinuous transport case has no
/// closed-form interior solution and only answers on the boundary; the
/// contaminant case returns the injected profile.
pub fn evaluate_exact(e: &Experiment, x: &Point, t: f64) -> Result<Vec<f64>> {
    match e.id {
        ExperimentId::Transport2dDiscont => {
            if on_boundary(e, x) {
                Ok(vec![discont_inflow(x)])
            } else {
                Err(Error::NoInteriorSolution(e.id.to_string()))
            }
        }
        ExperimentId::Contaminant => Ok((e.initial.as_ref().unwrap())(x, t)),
        _ => Ok((e.exact.as_ref().unwrap())(x, t)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("transport".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn smooth_transport_value() {
        let e = transport3d_smooth();
        let v = evaluate_exact(&e, &[0.5, 0.0, 0.5], 0.0).unwrap();
        assert!((v[0] - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn standing_wave_at_rest() {
        let e = shallow_standing_wave();
        let x = [0.3, 0.7, 0.0];
        let v = evaluate_exact(&e, &x, 0.0).unwrap();
        assert_eq!(v[0], (PI * 0.3).cos() * (PI * 0.7).cos());
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn contaminant_profile_signs() {
        let x = [1.0, 0.0, 0.0];
        let e1 = std::f64::consts::E;
        assert!((contaminant_profile(&x, true) - (1.0 + 2.0 * e1)).abs() < 1e-14);
        assert!((contaminant_profile(&x, false) - (1.0 + 2.0 / e1)).abs() < 1e-14);
    }

    #[test]
    fn discontinuous_case_has_no_interior_solution() {
        let e = transport2d_discont();
        assert!(matches!(
            evaluate_exact(&e, &[1.0, 1.0, 0.0], 0.0),
            Err(Error::NoInteriorSolution(_))
        ));
        assert_eq!(evaluate_exact(&e, &[0.0, 1.3, 0.0], 0.0).unwrap(), vec![1.0]);
        assert_eq!(evaluate_exact(&e, &[0.5, 0.0, 0.0], 0.0).unwrap(), vec![1.0]);
        assert_eq!(evaluate_exact(&e, &[1.5, 0.0, 0.0], 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn kovasznay_flow_is_divergence_free() {
        let e = contaminant(false);
        let Model::ConvectionDiffusion(cd) = &e.model else { unreachable!() };
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [rng.random_range(0.0..5.0), rng.random_range(-1.25..1.25), 0.0];
            let mut div = 0.0;
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                div += ((cd.beta)(&xp)[a] - (cd.beta)(&xm)[a]) / (2.0 * h);
            }
            assert!(div.abs() < 1e-6);
            assert_eq!((cd.div_beta)(&x), 0.0);
        }
    }

    fn fd_grad(f: &dyn Fn(&Point) -> f64, x: &Point, dim: usize) -> Point {
        let h = 1e-5;
        let mut g = [0.0; 3];
        for a in 0..dim {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += h;
            xm[a] -= h;
            g[a] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn fd_time(f: &dyn Fn(f64) -> f64, t: f64) -> f64 {
        let h = 1e-5;
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn transport_forcing_matches_strong_form(x in proptest::array::uniform3(0.0f64..1.0)) {
            let e = transport3d_smooth();
            let Model::Transport(t) = &e.model else { unreachable!() };
            let ex = e.exact.clone().unwrap();
            let g = fd_grad(&|y| ex(y, 0.0)[0], &x, 3);
            let b = (t.beta)(&x);
            let r = b[0] * g[0] + b[1] * g[1] + b[2] * g[2] - (t.forcing)(&x, 0.0);
            prop_assert!(r.abs() < 1e-8);
        }

        #[test]
        fn convdiff_forcing_matches_strong_form(x in proptest::array::uniform3(0.0f64..1.0), nu in 0.0f64..100.0) {
            for e in [convdiff3d(1e-2, nu), elliptic3d(nu)] {
                let Model::ConvectionDiffusion(cd) = &e.model else { unreachable!() };
                let ex = e.exact.clone().unwrap();
                let u = ex(&x, 0.0)[3];
                let gu = fd_grad(&|y| ex(y, 0.0)[3], &x, 3);
                let mut div_sigma = 0.0;
                for a in 0..3 {
                    // kappa^-1 sigma + grad u = 0
                    prop_assert!((ex(&x, 0.0)[a] / cd.kappa + gu[a]).abs() < 1e-8);
                    div_sigma += fd_grad(&|y| ex(y, 0.0)[a], &x, 3)[a];
                }
                let b = (cd.beta)(&x);
                let r = div_sigma + b[0] * gu[0] + b[1] * gu[1] + b[2] * gu[2] + cd.nu * u - (cd.forcing)(&x, 0.0);
                prop_assert!(r.abs() < 1e-8 * (1.0 + nu));
            }
        }

        #[test]
        fn standing_wave_satisfies_the_equations(x in proptest::array::uniform3(0.0f64..1.0), t in 0.0f64..2.0) {
            let e = shallow_standing_wave();
            let Model::ShallowWater(sw) = &e.model else { unreachable!() };
            let ex = e.exact.clone().unwrap();
            let phi = sw.phi_mean;
            let dt: Vec<f64> = (0..3).map(|c| fd_time(&|s| ex(&x, s)[c], t)).collect();
            let g: Vec<Point> = (0..3).map(|c| fd_grad(&|y| ex(y, t)[c], &x, 2)).collect();
            let r0 = dt[0] + g[1][0] + g[2][1];
            let r1 = dt[1] + phi * g[0][0];
            let r2 = dt[2] + phi * g[0][1];
            prop_assert!(r0.abs() < 1e-8 && r1.abs() < 1e-8 && r2.abs() < 1e-8);
        }
    }
}
