use proptest::prelude::*;

use ihdg::config::ExperimentConfig;
use ihdg::experiments::{self, Experiment};
use ihdg::solver::{self, StopCriterion};
use ihdg::theory;
use ihdg::trace::{residual_norm, ProcessingOrder};
use ihdg::{Discretization, FluxScheme, Mesh, Model, ReferenceElement};

fn disc(ex: &Experiment, cells: &[usize], p: usize, flux: FluxScheme, c: f64) -> Discretization {
    let mesh = Mesh::build_box(&ex.lower, &ex.upper, cells).unwrap();
    Discretization::new(ex.model.clone(), mesh, p, flux, c).unwrap()
}

fn pick(which: usize) -> (Experiment, FluxScheme, f64) {
    match which {
        0 => (experiments::transport2d_discont(), FluxScheme::Upwind, 0.0),
        1 => (experiments::transport2d_discont(), FluxScheme::Npc, 0.0),
        2 => (experiments::shallow_standing_wave(), FluxScheme::Upwind, 50.0),
        3 => (experiments::convdiff3d(1e-2, 1.0), FluxScheme::Npc, 0.0),
        _ => (experiments::elliptic3d(1.0), FluxScheme::elliptic(), 0.0),
    }
}

fn cells_for(ex: &Experiment, a: usize, b: usize) -> Vec<usize> {
    if ex.dim() == 2 {
        vec![a, b]
    } else {
        vec![a.min(2), b.min(2), 1]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reversed_order_is_bit_identical(
        which in 0usize..5,
        p in 1usize..=3,
        a in 1usize..=3,
        b in 1usize..=3,
        init in proptest::collection::vec(-1.0f64..1.0, 1..64),
    ) {
        let (ex, flux, c) = pick(which);
        let d = disc(&ex, &cells_for(&ex, a, b), p, flux, c);
        let rhs = d.weighted_forcing(0.0);
        let u: Vec<f64> = (0..d.field_len()).map(|i| init[i % init.len()]).collect();
        let x = solver::sweep(&d, &u, &rhs, 0.0, ProcessingOrder::Natural).unwrap();
        let y = solver::sweep(&d, &u, &rhs, 0.0, ProcessingOrder::Reversed).unwrap();
        prop_assert!(x.iter().zip(&y).all(|(s, t)| s.to_bits() == t.to_bits()));
    }

    #[test]
    fn homogeneous_sweep_is_linear(
        which in 0usize..5,
        p in 1usize..=2,
        a in 1usize..=3,
        alpha in -2.0f64..2.0,
        seed_u in proptest::collection::vec(-1.0f64..1.0, 1..32),
        seed_v in proptest::collection::vec(-1.0f64..1.0, 1..32),
    ) {
        let (ex, flux, c) = pick(which);
        let d = disc(&ex, &cells_for(&ex, a, 2), p, flux, c).homogeneous();
        let n = d.field_len();
        let zeros = vec![0.0; n];
        let u: Vec<f64> = (0..n).map(|i| seed_u[i % seed_u.len()]).collect();
        let v: Vec<f64> = (0..n).map(|i| seed_v[(i * 7) % seed_v.len()]).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(s, t)| s + alpha * t).collect();
        let su = solver::sweep(&d, &u, &zeros, 0.0, ProcessingOrder::Natural).unwrap();
        let sv = solver::sweep(&d, &v, &zeros, 0.0, ProcessingOrder::Natural).unwrap();
        let sw = solver::sweep(&d, &w, &zeros, 0.0, ProcessingOrder::Natural).unwrap();
        let comb: Vec<f64> = su.iter().zip(&sv).map(|(s, t)| s + alpha * t).collect();
        let scale = residual_norm(&d, &sw, &zeros).max(1.0);
        prop_assert!(residual_norm(&d, &sw, &comb) <= 1e-11 * scale);
    }

    #[test]
    fn npc_sweeps_vanish_within_layer_count(
        a in 1usize..=5,
        b in 1usize..=5,
        p in 1usize..=3,
        init in proptest::collection::vec(-1.0f64..1.0, 1..64),
    ) {
        let ex = experiments::transport2d_discont();
        let Model::Transport(tr) = &ex.model else { unreachable!() };
        let mesh = Mesh::build_box(&ex.lower, &ex.upper, &[a, b]).unwrap();
        let j = theory::layer_count(&mesh, &tr.beta, &ReferenceElement::new(p, 2).unwrap()).unwrap();
        let d = Discretization::new(ex.model.clone(), mesh, p, FluxScheme::Npc, 0.0)
            .unwrap()
            .homogeneous();
        let zeros = vec![0.0; d.field_len()];
        let mut u: Vec<f64> = (0..d.field_len()).map(|i| init[i % init.len()]).collect();
        for _ in 0..j {
            u = solver::sweep(&d, &u, &zeros, 0.0, ProcessingOrder::Natural).unwrap();
        }
        prop_assert!(residual_norm(&d, &u, &zeros) < 1e-13);
    }

    #[test]
    fn config_text_round_trips(
        cells in proptest::collection::vec(1usize..40, 3),
        p in 1usize..=8,
        npc in any::<bool>(),
        kappa_exp in -8i32..0,
        tol_exp in -14i32..-3,
        max_iterations in 1usize..100_000,
        stagnation in any::<bool>(),
        reversed in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let kappa = 10f64.powi(kappa_exp);
        let tolerance = 10f64.powi(tol_exp);
        let text = format!(
            "# generated\nexperiment = convdiff3d\ncells = {}x{}x{}\np = {p}\nflux = {}\n\
             kappa = {kappa}\ntolerance = {tolerance}\nmax_iterations = {max_iterations}\n\
             criterion = {}\norder = {}\nseed = {seed}\n",
            cells[0], cells[1], cells[2],
            if npc { "npc" } else { "upwind" },
            if stagnation { "stagnation" } else { "successive" },
            if reversed { "reversed" } else { "natural" },
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&c.cells, &cells);
        prop_assert_eq!(c.p, p);
        prop_assert_eq!(c.flux, if npc { FluxScheme::Npc } else { FluxScheme::Upwind });
        prop_assert_eq!(c.kappa, kappa);
        prop_assert_eq!(c.tolerance, tolerance);
        prop_assert_eq!(c.max_iterations, max_iterations);
        prop_assert_eq!(c.criterion, if stagnation { StopCriterion::ErrorStagnation } else { StopCriterion::SuccessiveChange });
        prop_assert_eq!(c.order, if reversed { ProcessingOrder::Reversed } else { ProcessingOrder::Natural });
        prop_assert_eq!(c.seed, seed);
        prop_assert_eq!(c.n_elements(), cells.iter().product::<usize>());

        // a set followed by the same value again is a no-op
        let mut again = c.clone();
        again.set("flux", &c.flux.to_string()).unwrap();
        again.set("p", &c.p.to_string()).unwrap();
        prop_assert_eq!(again, c);
    }
}
