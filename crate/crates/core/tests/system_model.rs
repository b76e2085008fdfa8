use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsmpc_core::linalg::{lambda_min, sym_eigenvalues};
use rsmpc_core::{sample_branch, CostWeights, Ellipsoid, Mat, Pmf, SystemModel, Vector};

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

/// Symmetric positive definite matrix `MᵀM + δI` from raw entries.
fn spd(n: usize, raw: &[f64], shift: f64) -> Mat {
    let m = Mat::from_column_slice(n, n, raw);
    m.transpose() * &m + Mat::identity(n, n) * shift
}

proptest! {
    #[test]
    fn step_is_linear(
        (nx, nu, l) in (1usize..4, 1usize..3, 1usize..4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_mat = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
        let a: Vec<Mat> = (0..l).map(|_| rand_mat(nx, nx)).collect();
        let b: Vec<Mat> = (0..l).map(|_| rand_mat(nx, nu)).collect();
        let model = SystemModel::new(a, b, Pmf::uniform(l).unwrap()).unwrap();
        let x1 = Vector::from_column_slice(rand_mat(nx, 1).as_slice());
        let x2 = Vector::from_column_slice(rand_mat(nx, 1).as_slice());
        let u1 = Vector::from_column_slice(rand_mat(nu, 1).as_slice());
        let u2 = Vector::from_column_slice(rand_mat(nu, 1).as_slice());
        for j in 0..l {
            let lhs = model.step(&(&x1 + &x2), &(&u1 + &u2), j).unwrap();
            let rhs = model.step(&x1, &u1, j).unwrap() + model.step(&x2, &u2, j).unwrap();
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn stage_cost_bounds_state_energy(
        (q_raw, r_raw, x, u) in (vec_of(9), vec_of(4), vec_of(3), vec_of(2))
    ) {
        let q = spd(3, &q_raw, 0.1);
        let w = CostWeights::new(q.clone(), spd(2, &r_raw, 0.1)).unwrap();
        let x = Vector::from_vec(x);
        let c = w.stage_cost(&x, &Vector::from_vec(u)).unwrap();
        prop_assert!(c >= lambda_min(&q) * x.norm_squared() - 1e-9 * (1.0 + c));
    }

    #[test]
    fn ellipsoid_membership_matches_schur_block(
        (w_raw, x) in (vec_of(4), vec_of(2))
    ) {
        let w = spd(2, &w_raw, 0.05);
        let e = Ellipsoid::new(w.clone()).unwrap();
        let x = Vector::from_vec(x);
        let quad = x.dot(&(w.clone().try_inverse().unwrap() * &x));
        prop_assume!((quad - 1.0).abs() > 1e-6);
        // [1, xᵀ; x, W] ⪰ 0 exactly when xᵀW⁻¹x ≤ 1.
        let mut block = Mat::zeros(3, 3);
        block[(0, 0)] = 1.0;
        for i in 0..2 {
            block[(0, i + 1)] = x[i];
            block[(i + 1, 0)] = x[i];
        }
        block.view_mut((1, 1), (2, 2)).copy_from(&w);
        let schur_inside = sym_eigenvalues(&block)[0] >= 0.0;
        let m = e.in_ellipsoid(&x).unwrap();
        prop_assert_eq!(m.inside, schur_inside);
        prop_assert!((m.margin - (quad.sqrt() - 1.0)).abs() <= 1e-9 * (1.0 + quad.sqrt()));
    }
}

#[test]
fn branch_histogram_within_three_sigma() {
    let n = 1_000_000usize;
    for p in [vec![0.5, 0.3, 0.2], vec![0.05, 0.15, 0.6, 0.2], vec![1.0]] {
        let pmf = Pmf::nominal(p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = vec![0usize; p.len()];
        for _ in 0..n {
            counts[sample_branch(&pmf, rng.random::<f64>())] += 1;
        }
        for (j, pj) in p.iter().enumerate() {
            let sigma = (n as f64 * pj * (1.0 - pj)).sqrt();
            let dev = (counts[j] as f64 - n as f64 * pj).abs();
            assert!(dev <= 3.0 * sigma.max(1e-12), "branch {j}: {} draws, expected {}", counts[j], n as f64 * pj);
        }
    }
}
