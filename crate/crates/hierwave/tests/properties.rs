//! Property tests for the algebraic invariants that should hold for any
//! admissible inputs, not just the seeded samples.

use hierwave::geometry::{build_partition, MovingDomain, PartitionMode, Segment};
use hierwave::spaces::{build_metric, GridSpec, Space};
use hierwave::wavesolver::{solve_forward_boundary, Field};
use proptest::prelude::*;

proptest! {
    #[test]
    fn norms_are_homogeneous(c in -10.0f64..10.0, mode in 1u32..4) {
        let grid = GridSpec::with_cfl(24, 1.0, 0.8).unwrap();
        let metric = build_metric(&grid).unwrap();
        let f: Vec<f64> = (1..grid.ny)
            .map(|j| (mode as f64 * std::f64::consts::PI * grid.y(j)).sin())
            .collect();
        let scaled: Vec<f64> = f.iter().map(|v| c * v).collect();
        for space in [Space::L2, Space::H10, Space::Hm1] {
            let a = metric.norm(space, &scaled).unwrap();
            let b = c.abs() * metric.norm(space, &f).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn duality_pairing_bounded_by_norms(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let grid = GridSpec::with_cfl(20, 1.0, 0.8).unwrap();
        let metric = build_metric(&grid).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = metric.interior_len();
        let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pair = metric.duality_pairing(&f, &g).abs();
        let bound = metric.norm(Space::Hm1, &f).unwrap() * metric.norm(Space::H10, &g).unwrap();
        prop_assert!(pair <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn split_partition_is_disjoint_cover(split in 0.05f64..0.95, nt in 20usize..60) {
        let grid = GridSpec::new(10, nt.max(20), 1.0).unwrap();
        let p = build_partition(PartitionMode::Split, &grid, Some(split)).unwrap();
        let s1 = p.mask(Segment::Sigma1);
        let s2 = p.mask(Segment::Sigma2);
        for n in 0..=grid.nt {
            prop_assert!(s1[n] ^ s2[n], "masks must partition the boundary at node {n}");
        }
        // The step containing the split time goes to the leader segment.
        let first_sigma2 = s2.iter().position(|&b| b).unwrap();
        prop_assert!(grid.t(first_sigma2) >= split - 1e-12);
        prop_assert!(grid.t(first_sigma2 - 1) < split + grid.dt + 1e-12);
    }

    #[test]
    fn coefficients_stay_in_admissible_range(k in 0.0f64..0.99, y in 0.0f64..1.0, t in 0.0f64..3.0) {
        let domain = MovingDomain::new(k, 3.0).unwrap();
        let (beta, gamma) = domain.coefficients(y, t).unwrap();
        prop_assert!(beta > 0.0);
        prop_assert!(domain.wave_coeff(y, t) <= 1.0 + 1e-15);
        prop_assert!(gamma.abs() <= 2.0 * k + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_solve_is_linear(seed in 0u64..1000, k in 0.0f64..0.4) {
        use rand::{Rng, SeedableRng};
        let grid = GridSpec::with_cfl(20, 1.0, 0.8).unwrap();
        let domain = MovingDomain::new(k, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b1: Vec<f64> = (0..grid.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..grid.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: f64 = rng.gen_range(-2.0..2.0);
        let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + c * b).collect();
        let va = solve_forward_boundary(&grid, &domain, &b1, None, None).unwrap();
        let vb = solve_forward_boundary(&grid, &domain, &b2, None, None).unwrap();
        let vs = solve_forward_boundary(&grid, &domain, &sum, None, None).unwrap();
        let mut comb = va.clone();
        comb.scaled_add(c, &vb);
        let scale = vs.max_abs().max(1.0);
        let gap = comb
            .values()
            .iter()
            .zip(vs.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        prop_assert!(gap <= 1e-12 * scale, "linearity gap {gap}");
        // Zero input stays exactly zero.
        let zero = solve_forward_boundary(&grid, &domain, &vec![0.0; grid.n_rows()], None, None)
            .unwrap();
        prop_assert_eq!(zero.max_abs(), 0.0);
        let _ = Field::zeros(grid);
    }
}
