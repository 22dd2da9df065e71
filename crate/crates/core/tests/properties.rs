//! Randomized invariant checks over the public API.

use entrobound::expr;
use entrobound::measures::{
    induced_norm, matrix_exponential, matrix_measure, mixed_norm, vector_norm, Matrix,
};
use entrobound::ode::{integrate, time_grid, variational};
use entrobound::system::{BoxSet, Norm, Partition, System};
use proptest::prelude::*;

const NORMS: [Norm; 3] = [Norm::One, Norm::Two, Norm::Inf];

fn norm_strategy() -> impl Strategy<Value = Norm> {
    prop::sample::select(NORMS.to_vec())
}

fn matrix_strategy(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |vals| {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = vals[i * n + j];
            }
        }
        m
    })
}

fn vector_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // |Av| <= ||A|| |v| for every implemented induced norm.
    #[test]
    fn induced_norm_dominates_action(
        n in 1usize..5,
        p in norm_strategy(),
        seed_mat in matrix_strategy(4),
        seed_vec in vector_strategy(4),
    ) {
        let a = seed_mat.block(0..n, 0..n);
        let v = &seed_vec[..n];
        let av = a.matvec(v);
        let lhs = vector_norm(&av, p);
        let rhs = induced_norm(&a, p) * vector_norm(v, p);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }

    // Mixed norms agree with the induced norm when both sides carry the
    // same selector.
    #[test]
    fn mixed_norm_matches_induced_on_diagonal(
        n in 1usize..5,
        p in norm_strategy(),
        seed_mat in matrix_strategy(4),
    ) {
        let a = seed_mat.block(0..n, 0..n);
        let mixed = mixed_norm(&a, p, p);
        let plain = induced_norm(&a, p);
        prop_assert!((mixed - plain).abs() <= 1e-9 * (1.0 + plain));
    }

    // Two-sided measure sandwich: -mu(-A) <= mu(A) <= ||A||, and the measure
    // obeys subadditivity mu(A + B) <= mu(A) + mu(B).
    #[test]
    fn measure_subadditive_and_bounded(
        p in norm_strategy(),
        a in matrix_strategy(4),
        b in matrix_strategy(4),
    ) {
        let mu_a = matrix_measure(&a, p);
        prop_assert!(-matrix_measure(&a.scale(-1.0), p) <= mu_a + 1e-12);
        prop_assert!(mu_a <= induced_norm(&a, p) + 1e-12);
        let sum = a.add(&b);
        prop_assert!(
            matrix_measure(&sum, p) <= mu_a + matrix_measure(&b, p) + 1e-9
        );
    }

    // ||e^A|| <= e^{mu(A)}: the differential inequality behind every upper
    // bound in the crate, at t = 1.
    #[test]
    fn exponential_growth_bounded_by_measure(
        p in norm_strategy(),
        a in matrix_strategy(3),
    ) {
        let lhs = induced_norm(&matrix_exponential(&a), p);
        let rhs = matrix_measure(&a, p).exp();
        prop_assert!(lhs <= rhs * (1.0 + 1e-9));
    }

    // Symbolic derivatives match central finite differences away from kinks.
    #[test]
    fn derivative_matches_finite_difference(
        c in prop::collection::vec(-2.0f64..2.0, 3),
        x in -1.5f64..1.5,
        t in -1.0f64..1.0,
    ) {
        let text = format!(
            "{:.6}*x1^3 + {:.6}*sin(x1*t) + {:.6}*exp(0.3*x1)",
            c[0], c[1], c[2]
        );
        let e = expr::parse(&text, 1).unwrap();
        let d = e.differentiate(1).simplify();
        let h = 1e-5;
        let fd = (e.eval(t, &[x + h]).unwrap() - e.eval(t, &[x - h]).unwrap()) / (2.0 * h);
        let sym = d.eval(t, &[x]).unwrap();
        prop_assert!((fd - sym).abs() <= 1e-6 * (1.0 + sym.abs()), "{text}: {fd} vs {sym}");
    }

    // Printing and re-parsing an expression preserves its value.
    #[test]
    fn print_parse_round_trip(
        c in prop::collection::vec(-2.0f64..2.0, 4),
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
        t in -1.0f64..1.0,
    ) {
        let text = format!(
            "pw(x1 < {:.4}, {:.4}*x2 - x1, abs(x2)^2/( {:.4}*x1 + 3) ) + max(t, {:.4})",
            c[0], c[1], c[2], c[3]
        );
        let e = expr::parse(&text, 2).unwrap().simplify();
        let reparsed = expr::parse(&e.to_string(), 2).unwrap();
        let v1 = e.eval(t, &[x, y]).unwrap();
        let v2 = reparsed.eval(t, &[x, y]).unwrap();
        prop_assert!(
            (v1 - v2).abs() <= 1e-12 * (1.0 + v1.abs()),
            "{} -> {}",
            text,
            e
        );
    }

    // The integration grid contains every interior breakpoint exactly, is
    // strictly increasing, and never steps farther than dt.
    #[test]
    fn time_grid_includes_breakpoints(
        t_end in 0.5f64..3.0,
        dt in 0.01f64..0.3,
        brk in prop::collection::vec(0.1f64..2.9, 0..4),
    ) {
        let grid = time_grid(0.0, t_end, dt, &brk).unwrap();
        prop_assert_eq!(grid[0], 0.0);
        prop_assert_eq!(*grid.last().unwrap(), t_end);
        for w in grid.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!(w[1] - w[0] <= dt * (1.0 + 1e-9));
        }
        for b in brk.iter().filter(|b| **b < t_end) {
            prop_assert!(grid.iter().any(|g| g == b), "missing breakpoint {b}");
        }
    }

    // Linear scalar growth: the RK4 flow matches e^{a t} and the transition
    // matrix of the variational equation matches the flow derivative.
    #[test]
    fn scalar_linear_flow_is_exponential(
        a in -1.0f64..1.0,
        x0 in 0.1f64..1.0,
    ) {
        let sys = System::build(
            &[&format!("{a:.6}*x1")],
            &[],
            None,
            BoxSet::new(vec![-2.0], vec![2.0]).unwrap(),
            0.0,
        )
        .unwrap();
        let a_parsed: f64 = format!("{a:.6}").parse().unwrap();
        let traj = integrate(&sys, &[x0], 2.0, 1e-3).unwrap();
        let exact = x0 * (a_parsed * 2.0).exp();
        let got = traj.states.last().unwrap()[0];
        prop_assert!((got - exact).abs() <= 1e-9 * (1.0 + exact.abs()));

        let var = variational(&sys, &[x0], 2.0, 1e-3).unwrap();
        let phi = var.transitions.last().unwrap()[(0, 0)];
        prop_assert!((phi - (a_parsed * 2.0).exp()).abs() <= 1e-9 * (1.0 + phi.abs()));
        let l = *var.log_det.last().unwrap();
        prop_assert!((l - a_parsed * 2.0).abs() <= 1e-9);
    }

    // Points generated from in-range fractions always land inside the box,
    // and the center sits at fraction 1/2 on every axis.
    #[test]
    fn box_fraction_points_stay_inside(
        n in 1usize..5,
        seed_lo in prop::collection::vec(-3.0f64..0.0, 4),
        seed_w in prop::collection::vec(0.1f64..2.0, 4),
        seed_fr in prop::collection::vec(0.0f64..=1.0, 4),
    ) {
        let lo = seed_lo[..n].to_vec();
        let hi: Vec<f64> = lo.iter().zip(&seed_w).map(|(l, w)| l + w).collect();
        let k = BoxSet::new(lo, hi).unwrap();
        let p = k.at_fractions(&seed_fr[..n]);
        prop_assert!(k.contains(&p, 0.0));
        let c = k.at_fractions(&vec![0.5; n]);
        for (a, b) in c.iter().zip(k.center()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    // Composite-partition measure of a block-diagonal matrix never exceeds
    // the max of the block measures (equality for inf/inf).
    #[test]
    fn block_diagonal_network_measure_is_max(
        a in matrix_strategy(2),
        b in matrix_strategy(2),
    ) {
        let mut m = Matrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] = a[(i, j)];
                m[(i + 2, j + 2)] = b[(i, j)];
            }
        }
        let part = Partition::new(vec![2, 2], vec![Norm::Inf; 2], Norm::Inf).unwrap();
        let an = entrobound::measures::interconnection_from_jacobian(&m, &part);
        let mu_net = matrix_measure(&an, Norm::Inf);
        let expect = matrix_measure(&a, Norm::Inf).max(matrix_measure(&b, Norm::Inf));
        prop_assert!((mu_net - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }
}
