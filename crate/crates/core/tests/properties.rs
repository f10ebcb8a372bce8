use posterior_mac::decoder::{decode, kernel_from_step, AffineMap, ComposedMap, TerminalInterval};
use posterior_mac::encoder::{
    init_symbol, symmetric_lambda_step, two_user_rho_step, update_symbol, MessagePoint, Schedule, Scheme,
};
use posterior_mac::hadamard;
use posterior_mac::numerics::{q_tail, q_tail_inv, std_normal_cdf, std_normal_inv_cdf, Probability};
use proptest::prelude::*;

proptest! {
    #[test]
    fn cdf_is_monotone(a in -38.0f64..38.0, d in 1e-6f64..5.0) {
        let lo = std_normal_cdf(a).unwrap().get();
        let hi = std_normal_cdf(a + d).unwrap().get();
        prop_assert!(lo <= hi);
    }

    #[test]
    fn tail_respects_chernoff(x in 0.0f64..37.0) {
        let q = q_tail(x).unwrap().get();
        prop_assert!(q <= 0.5 * (-x * x / 2.0).exp() * (1.0 + 1e-12));
        let c = std_normal_cdf(-x).unwrap().get();
        prop_assert!((q - c).abs() <= 1e-15 * q.max(1e-300));
    }

    #[test]
    fn inverse_round_trips(p in 1e-300f64..0.999_999) {
        let x = std_normal_inv_cdf(Probability::new(p).unwrap()).unwrap();
        let back = std_normal_cdf(x).unwrap().get();
        prop_assert!((back - p).abs() <= 1e-13 * p.min(1.0 - p).max(1e-300) + 1e-300);
        let t = q_tail_inv(Probability::new(p).unwrap()).unwrap();
        prop_assert!((t + x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn composition_is_associative(
        maps in proptest::collection::vec((1e-3f64..2.0, -3.0f64..3.0), 1..12),
        s in -5.0f64..5.0,
    ) {
        let mut t = ComposedMap::identity();
        let mut direct = s;
        for &(a, b) in maps.iter().rev() {
            direct = a * direct + b;
        }
        for &(a, b) in &maps {
            t = t.compose(&AffineMap::new(a, b).unwrap());
        }
        prop_assert!((t.apply(s) - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        let ls: f64 = maps.iter().map(|(a, _)| a.ln()).sum();
        prop_assert!((t.log_slope() - ls).abs() <= 1e-12 * ls.abs().max(1.0));
    }

    #[test]
    fn kernels_invert_updates(theta in 1e-6f64..0.999_999, ys in proptest::collection::vec(-4.0f64..4.0, 1..25)) {
        // The composed kernels map the final symbol back to X₁ for any outputs.
        let schedule = Schedule::build(&Scheme::PointToPoint { power: 1.5 }, ys.len(), 1.0).unwrap();
        let mut x = init_symbol(MessagePoint::new(theta).unwrap(), 1.5, 0);
        let x1 = x.x;
        let mut t = ComposedMap::identity();
        for (plan, &y) in schedule.steps().iter().zip(&ys) {
            let c = plan.coefficients[0];
            x = update_symbol(x, y, &c, plan.next_powers[0]);
            t = t.compose(&kernel_from_step(&c, y, plan.next_powers[0]));
        }
        let scale = 1e-9 * (ys.len() as f64).exp2().max(1.0) * x1.abs().max(1.0);
        prop_assert!((t.apply(x.x) - x1).abs() <= scale);
    }

    #[test]
    fn decode_contains_theta_iff_terminal_hit(theta in 1e-4f64..0.9999, ys in proptest::collection::vec(-3.0f64..3.0, 1..15), hw in 0.1f64..3.0) {
        let schedule = Schedule::build(&Scheme::PointToPoint { power: 1.0 }, ys.len(), 1.0).unwrap();
        let theta = MessagePoint::new(theta).unwrap();
        let mut x = init_symbol(theta, 1.0, 0);
        let mut t = ComposedMap::identity();
        for (plan, &y) in schedule.steps().iter().zip(&ys) {
            let c = plan.coefficients[0];
            x = update_symbol(x, y, &c, 1.0);
            t = t.compose(&kernel_from_step(&c, y, 1.0));
        }
        let j = TerminalInterval::new(hw).unwrap();
        let d = decode(&t, &j, 1.0);
        // skip draws that land within rounding distance of an endpoint
        prop_assume!((x.x.abs() - hw).abs() > 1e-9);
        prop_assert_eq!(d.lo.get() < theta.get() && theta.get() < d.hi.get(), j.contains(x.x));
    }

    #[test]
    fn rho_step_stays_in_range(rho in -1.0f64..1.0, p1 in 1e-3f64..100.0, p2 in 1e-3f64..100.0, n in 1e-3f64..10.0) {
        let r = two_user_rho_step(rho, p1, p2, n);
        prop_assert!(r.abs() <= 1.0);
    }

    #[test]
    fn lambda_step_preserves_trace(k in 0u32..4, p in 1e-2f64..20.0, steps in 1usize..200) {
        let m = 1usize << k;
        let mut l = vec![1.0; m];
        for _ in 0..steps {
            l = symmetric_lambda_step(&l, p, 1.0);
        }
        let sum: f64 = l.iter().sum();
        prop_assert!((sum - m as f64).abs() < 1e-9);
        prop_assert!(l.iter().all(|x| *x > 0.0 && *x <= m as f64));
    }

    #[test]
    fn sylvester_columns_are_orthogonal(k in 0u32..7, n in 1usize..200) {
        let h = hadamard::sylvester(k).unwrap();
        let m = h.order();
        let a = hadamard::column_schedule(&h, n);
        for j in 1..m {
            let b = hadamard::column_schedule(&h, n + j);
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            prop_assert_eq!(dot, 0.0);
        }
    }
}
