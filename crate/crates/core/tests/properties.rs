use glasdi::config::RunConfig;
use glasdi::dynamics_id::{di_residual_zdot, latent_rhs, BasisLibrary, LatentTrajectory};
use glasdi::greedy::{max_relative_error, select_next};
use glasdi::interpolation::{interpolate_coeffs, shepard_weights};
use glasdi::parameter_space::{build_grid, knn_indices, random_subset, ParamPoint, SampleSet};
use glasdi::rom::integrate_rk4;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, data: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), data[..rows * cols].to_vec()).unwrap()
}

/// A permutation of `0..n` for `n` in `range`.
fn permutation(range: std::ops::Range<usize>) -> impl Strategy<Value = Vec<usize>> {
    range.prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle())
}

prop_compose! {
    /// A grid with at least `k_min` sampled points and a query inside it.
    fn grid_case(k_min: usize)(
        n0 in 2usize..7,
        n1 in 2usize..7,
        seed in any::<u64>(),
        frac in 0.2f64..1.0,
        q0 in 0.0f64..1.0,
        q1 in 0.0f64..1.0,
    ) -> (glasdi::parameter_space::DiscreteParamSpace, SampleSet, ParamPoint) {
        let g = build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[n0, n1]).unwrap();
        let m = ((g.len() as f64 * frac) as usize).clamp(k_min, g.len());
        let idx = random_subset(&g, &SampleSet::new(), m, seed).unwrap();
        let s = SampleSet::from_indices(idx, g.len()).unwrap();
        let q = ParamPoint::new(vec![0.7 + 0.2 * q0, 0.9 + 0.2 * q1]);
        (g, s, q)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn knn_returns_the_k_closest((g, s, q) in grid_case(1), k_raw in 1usize..8) {
        let k = k_raw.min(s.len());
        let nn = knn_indices(&g, &q, &s, k).unwrap();
        prop_assert_eq!(nn.len(), k);
        for w in nn.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        let kth = nn[k - 1].1;
        for &i in s.indices() {
            if nn.iter().any(|&(j, _)| j == i) {
                continue;
            }
            let d = g.point(i).distance_sq(&q).sqrt();
            prop_assert!(d >= kth - 1e-15);
            if (d - kth).abs() <= 1e-15 {
                prop_assert!(i > nn[k - 1].0);
            }
        }
    }

    #[test]
    fn shepard_is_a_partition_of_unity((g, s, q) in grid_case(1), k_raw in 1usize..6) {
        let k = k_raw.min(s.len());
        let nn = knn_indices(&g, &q, &s, k).unwrap();
        let pts: Vec<ParamPoint> = nn.iter().map(|&(i, _)| g.point(i).clone()).collect();
        let w = shepard_weights(&q, &pts).unwrap();
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolated_coefficients_stay_in_the_neighbor_hull(
        (g, s, q) in grid_case(1),
        k_raw in 1usize..6,
        vals in prop::collection::vec(-5.0f64..5.0, 36 * 6),
    ) {
        let k = k_raw.min(s.len());
        let coeffs: Vec<Array2<f64>> = (0..s.len()).map(|j| matrix(3, 2, &vals[6 * j..])).collect();
        let (xi, w) = interpolate_coeffs(&g, &q, &s, &coeffs, k).unwrap();
        for ((r, c), v) in xi.indexed_iter() {
            let entries: Vec<f64> = w
                .neighbors
                .iter()
                .map(|&i| coeffs[s.position(i).unwrap()][[r, c]])
                .collect();
            let lo = entries.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = entries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_sampled_points(
        (g, s, _q) in grid_case(1),
        pick in any::<prop::sample::Index>(),
        k_raw in 1usize..6,
        vals in prop::collection::vec(-5.0f64..5.0, 36 * 6),
    ) {
        let k = k_raw.min(s.len());
        let coeffs: Vec<Array2<f64>> = (0..s.len()).map(|j| matrix(3, 2, &vals[6 * j..])).collect();
        let j = pick.index(s.len());
        let (xi, _) = interpolate_coeffs(&g, g.point(s.indices()[j]), &s, &coeffs, k).unwrap();
        prop_assert_eq!(xi, coeffs[j].clone());
    }

    #[test]
    fn latent_rhs_is_linear_in_the_coefficients(
        nz in 1usize..4,
        order in 1usize..3,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        vals in prop::collection::vec(-2.0f64..2.0, 2 * 30 + 4),
    ) {
        let lib = BasisLibrary::new(nz, order).unwrap();
        let nl = lib.n_terms();
        let x = matrix(nl, nz, &vals);
        let y = matrix(nl, nz, &vals[30..]);
        let z = Array1::from(vals[60..60 + nz].to_vec());
        let lhs = latent_rhs(&lib, (&x * a + &y * b).view(), z.view()).unwrap();
        let rhs = latent_rhs(&lib, x.view(), z.view()).unwrap() * a + latent_rhs(&lib, y.view(), z.view()).unwrap() * b;
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn zdot_residual_ignores_column_order(
        nz in 1usize..4,
        perm in permutation(1..10),
        vals in prop::collection::vec(-2.0f64..2.0, 4 * 10 * 2 + 12),
    ) {
        let lib = BasisLibrary::new(nz, 1).unwrap();
        let xi = matrix(lib.n_terms(), nz, &vals[80..]);
        let cols = perm.len();
        let z = matrix(nz, cols, &vals);
        let zd = matrix(nz, cols, &vals[40..]);
        let base = di_residual_zdot(&lib, xi.view(), &LatentTrajectory::new(z.clone(), zd.clone()).unwrap()).unwrap();
        let zp = z.select(ndarray::Axis(1), &perm);
        let zdp = zd.select(ndarray::Axis(1), &perm);
        let shuffled = di_residual_zdot(&lib, xi.view(), &LatentTrajectory::new(zp, zdp).unwrap()).unwrap();
        prop_assert!((base - shuffled).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn rk4_is_fourth_order_on_scalar_decay(lambda in -2.0f64..1.0, z0 in 0.5f64..2.0) {
        prop_assume!(lambda.abs() > 0.5);
        let lib = BasisLibrary::with_constant(1, 1, false).unwrap();
        let xi = Array2::from_elem((1, 1), lambda);
        let err = |n: usize| {
            let z = integrate_rk4(&lib, xi.view(), &[z0], 1.0 / n as f64, n).unwrap();
            (z[[0, n]] - z0 * lambda.exp()).abs()
        };
        let ratio = err(10) / err(20);
        prop_assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn selection_ignores_candidate_order(
        (vals, perm) in prop::collection::vec(0u8..6, 1..20)
            .prop_flat_map(|v| { let n = v.len(); (Just(v), Just((0..n).collect::<Vec<_>>()).prop_shuffle()) }),
    ) {
        // small integer indicators force ties
        let candidates: Vec<usize> = (0..vals.len()).map(|i| 3 * i + 1).collect();
        let ind: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let chosen = candidates[select_next(&candidates, &ind).unwrap()];
        let pc: Vec<usize> = perm.iter().map(|&i| candidates[i]).collect();
        let pi: Vec<f64> = perm.iter().map(|&i| ind[i]).collect();
        prop_assert_eq!(pc[select_next(&pc, &pi).unwrap()], chosen);
        let max = ind.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = candidates.iter().zip(&ind).filter(|(_, &v)| v == max).map(|(&c, _)| c).min().unwrap();
        prop_assert_eq!(chosen, first);
    }

    #[test]
    fn relative_error_is_scale_invariant(
        vals in prop::collection::vec(0.1f64..2.0, 2 * 12),
        scale in 0.01f64..100.0,
    ) {
        let u = matrix(4, 3, &vals);
        let v = matrix(4, 3, &vals[12..]);
        let e = max_relative_error(u.view(), v.view()).unwrap();
        let es = max_relative_error((&u * scale).view(), (&v * scale).view()).unwrap();
        prop_assert!((e - es).abs() <= 1e-12 * (1.0 + e));
        prop_assert_eq!(max_relative_error(u.view(), u.view()).unwrap(), 0.0);
    }

    #[test]
    fn config_json_round_trip_keeps_hash(
        seed in any::<u64>(),
        lr in 1e-6f64..1e-1,
        beta in 0.0f64..1.0,
        tol in prop::option::of(1e-6f64..1.0),
    ) {
        let mut c = RunConfig::desk();
        c.training.seed = seed;
        c.training.lr = lr;
        c.training.beta1 = beta;
        c.training.tol = tol;
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }
}
