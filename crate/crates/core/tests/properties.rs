use proptest::prelude::*;

use robustcert_core::fixtures::fixture;
use robustcert_core::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn psi_bounds_every_uncertainty_sample(z1 in -5.0f64..5.0, z2 in -5.0f64..5.0, u in -1.0f64..1.0) {
        let p = fixture("ex3_2");
        let o = RobustOptions::default();
        for i in 0..p.n {
            let g = eval(&p.constraints[i], &Point::with_uncertainty(&[z1, z2], &[u])).unwrap();
            prop_assert!(psi(&p, i, &[z1, z2], &o).unwrap() >= g - 1e-12);
        }
    }

    #[test]
    fn psi_monotone_in_nested_grids(z1 in -5.0f64..5.0, z2 in -5.0f64..5.0, g in 3usize..60) {
        let p = fixture("ex3_2");
        let coarse = RobustOptions { refine_count: 0, ..RobustOptions::with_ugrid(g) };
        let fine = RobustOptions { refine_count: 0, ..RobustOptions::with_ugrid(2 * g - 1) };
        for i in 0..p.n {
            prop_assert!(psi(&p, i, &[z1, z2], &fine).unwrap() >= psi(&p, i, &[z1, z2], &coarse).unwrap());
        }
    }

    #[test]
    fn refinement_never_lowers_psi(z1 in -5.0f64..5.0, z2 in -5.0f64..5.0) {
        let p = fixture("ex3_3");
        let raw = RobustOptions { refine_count: 0, ..RobustOptions::with_ugrid(101) };
        let refined = RobustOptions::with_ugrid(101);
        for i in 0..p.n {
            prop_assert!(psi(&p, i, &[z1, z2], &refined).unwrap() >= psi(&p, i, &[z1, z2], &raw).unwrap());
        }
    }

    #[test]
    fn dual_feasibility_invariant_under_rescaling(lambda in 0.01f64..100.0) {
        let p = fixture("ex3_2");
        let r2 = 2f64.sqrt();
        let base = DualTriple::new(&[0.0, 1.0], &[r2 / 4.0, 0.0, r2 / 4.0], &[0.5, 0.0]);
        let scaled = DualTriple::new(
            &[0.0, 1.0],
            &base.y_star.iter().map(|v| v * lambda).collect::<Vec<_>>(),
            &base.mu.iter().map(|v| v * lambda).collect::<Vec<_>>(),
        );
        let o = DualOptions::default();
        prop_assert_eq!(
            is_dual_feasible(&p, &base, &o).unwrap().feasible,
            is_dual_feasible(&p, &scaled, &o).unwrap().feasible
        );
    }

    #[test]
    fn sampler_runs_are_prefixes(n in 1usize..400, extra in 1usize..400, seed in 0u64..1000) {
        let p = fixture("ex2_2");
        let short = Sampler::new(n, seed).points(&p);
        let long = Sampler::new(n + extra, seed).points(&p);
        prop_assert_eq!(&long[..n], &short[..]);
    }

    #[test]
    fn refutation_persists_with_more_samples(n in 100usize..600) {
        let p = fixture("ex2_2");
        let short = check_strictly_pseudo_convex(&p, &[0.0, -2.0], &Sampler::new(n, 42)).unwrap();
        let long = check_strictly_pseudo_convex(&p, &[0.0, -2.0], &Sampler::new(n + 200, 42)).unwrap();
        if short.status == Status::Refuted {
            prop_assert_eq!(long.status, Status::Refuted);
            prop_assert_eq!(long.witness, short.witness);
        }
    }

    #[test]
    fn hierarchy_on_random_points(z1 in -5.0f64..5.0, z2 in -5.0f64..5.0) {
        let p = fixture("ex3_3");
        let o = RobustOptions::default();
        prop_assume!(is_robust_feasible(&p, &[z1, z2], 1e-9, &o).unwrap());
        let grid = FeasibleGrid::build(&p, 21, &o).unwrap();
        let w = certify_weak(&p, &[z1, z2], &grid).unwrap().holds();
        let e = certify_efficient(&p, &[z1, z2], &grid).unwrap().holds();
        let pr = certify_proper(&p, &[z1, z2], &grid, 1e-3).unwrap().holds();
        prop_assert!(!pr || e);
        prop_assert!(!e || w);
    }

    #[test]
    fn outer_scalarization_contains_exact(y1 in 0.0f64..1.0, y2 in 0.0f64..1.0, y3 in 0.0f64..1.0, z1 in -2.0f64..2.0, z2 in -2.0f64..2.0) {
        let p = fixture("ex3_2");
        let s = scalarized_subdiff(&[y1, y2, y3], &p.objectives, &Point::decision(&[z1, z2])).unwrap();
        if let Some(ex) = &s.exact {
            for v in ex.vertices() {
                prop_assert!(s.outer.contains(v, 1e-9));
            }
        }
    }
}
