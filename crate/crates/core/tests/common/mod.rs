#![allow(dead_code)]

use rsmpc_core::{cvar_envelope, solve_pe, ConstraintSet, CostWeights, Mat, Plant, Pmf, SystemModel, TerminalDesign};

pub fn scalar_plant(a: &[f64], b: f64, p: &[f64], x_max: f64, u_max: f64) -> Plant {
    let l = a.len();
    let model = SystemModel::new(
        a.iter().map(|v| Mat::from_element(1, 1, *v)).collect(),
        vec![Mat::from_element(1, 1, b); l],
        Pmf::nominal(p.to_vec()).unwrap(),
    )
    .unwrap();
    let weights = CostWeights::new(Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
    let cons = ConstraintSet::new(Mat::identity(1, 1), x_max, Mat::identity(1, 1), u_max).unwrap();
    Plant::new(model, weights, cons).unwrap()
}

/// Vertices and a synthesized design for CVaR at level `alpha`.
pub fn cvar_design(plant: &Plant, alpha: f64) -> (Vec<Pmf>, TerminalDesign) {
    let env = cvar_envelope(plant.model.pmf(), alpha).unwrap().with_vertices().unwrap();
    let design = solve_pe(plant, env.vertices()).unwrap();
    (env.vertices().to_vec(), design)
}

/// CVaR of a discrete distribution from the primal formula, minimizing over
/// the support points.
pub fn cvar_direct(p: &[f64], z: &[f64], alpha: f64) -> f64 {
    z.iter()
        .map(|&y| y + p.iter().zip(z).map(|(pj, zj)| pj * (zj - y).max(0.0)).sum::<f64>() / alpha)
        .fold(f64::INFINITY, f64::min)
}

/// Samples `count` points on the boundary of ℰ(W), applies `u = Fx` under
/// every branch and returns the number of (point, branch) pairs whose
/// control, successor state or successor ellipsoid membership is off by
/// more than `tol`, together with the worst margin seen.
pub fn invariance_violations(plant: &Plant, design: &TerminalDesign, count: usize, seed: u64, tol: f64) -> (usize, f64) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use rsmpc_core::linalg::psd_sqrt;
    use rsmpc_core::Vector;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w_half = psd_sqrt(design.ellipsoid.shape()).unwrap();
    let cons = &plant.constraints;
    let (mut bad, mut worst) = (0, f64::NEG_INFINITY);
    for _ in 0..count {
        let d = Vector::from_fn(plant.nx(), |_, _| StandardNormal.sample(&mut rng));
        let x = &w_half * d.normalize();
        let u = &design.f * &x;
        let mut margins = vec![cons.in_control_set(&u).unwrap().margin];
        for j in 0..plant.branches() {
            let next = plant.model.step(&x, &u, j).unwrap();
            margins.push(cons.in_state_set(&next).unwrap().margin);
            margins.push(design.ellipsoid.in_ellipsoid(&next).unwrap().margin);
        }
        let m = margins.into_iter().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(m);
        if m > tol {
            bad += 1;
        }
    }
    (bad, worst)
}

/// Brute-force minimum of the composed CVaR cost for a scalar two-branch
/// plant (`B = 1`, `Q = R = 1`) over horizon 2, searching the three
/// history-dependent controls on a 21³ grid refined six times around the
/// incumbent.
pub fn grid_minimum(a: &[f64; 2], p: &[f64; 2], alpha: f64, design: &TerminalDesign, x0: f64, x_max: f64, u_max: f64) -> f64 {
    let pterm = design.p[(0, 0)];
    let w = design.w()[(0, 0)];
    let eval = |u0: f64, u1: [f64; 2]| -> f64 {
        let mut inner = [0.0; 2];
        for j in 0..2 {
            let x1 = a[j] * x0 + u0;
            if x1.abs() > x_max || u1[j].abs() > u_max {
                return f64::INFINITY;
            }
            let leaves: Vec<f64> = a.iter().map(|ai| ai * x1 + u1[j]).collect();
            if leaves.iter().any(|x2| x2 * x2 > w || x2.abs() > x_max) {
                return f64::INFINITY;
            }
            let leaf_costs: Vec<f64> = leaves.iter().map(|x2| pterm * x2 * x2).collect();
            inner[j] = x1 * x1 + u1[j] * u1[j] + cvar_direct(p, &leaf_costs, alpha);
        }
        x0 * x0 + u0 * u0 + cvar_direct(p, &inner, alpha)
    };
    let mut best = (f64::INFINITY, [0.0; 3]);
    let (mut center, mut half) = ([0.0; 3], u_max);
    for _ in 0..6 {
        let k = 20;
        for i0 in 0..=k {
            for i1 in 0..=k {
                for i2 in 0..=k {
                    let g = |c: f64, i: usize| (c - half + 2.0 * half * i as f64 / k as f64).clamp(-u_max, u_max);
                    let u = [g(center[0], i0), g(center[1], i1), g(center[2], i2)];
                    let val = eval(u[0], [u[1], u[2]]);
                    if val < best.0 {
                        best = (val, u);
                    }
                }
            }
        }
        center = best.1;
        half *= 0.3;
    }
    best.0
}
