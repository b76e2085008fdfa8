//! Offline synthesis of the terminal ingredients `(W, P, F)`.
//!
//! The terminal conditions are bilinear in `(P, F)` and `(W, F)`:
//!
//! ```text
//! Σⱼ q_l(j) (Aⱼ+BⱼF)ᵀ P (Aⱼ+BⱼF) − P + FᵀRF + Q ≺ 0      for every vertex q_l
//! Fᵀ TᵤᵀTᵤ F / u_max² − W⁻¹ ⪯ 0
//! (Aⱼ+BⱼF)ᵀ TₓᵀTₓ (Aⱼ+BⱼF) / x_max² − W⁻¹ ⪯ 0           for every branch j
//! (Aⱼ+BⱼF)ᵀ W⁻¹ (Aⱼ+BⱼF) − W⁻¹ ⪯ 0                      for every branch j
//! ```
//!
//! With a slack matrix `G`, `Y = FG` and `Q̄ = P⁻¹` they become LMIs that share
//! the block `G + Gᵀ − Q̄` (resp. `G + Gᵀ − W`). The LMI system is solved with
//! a det-root objective on `W`, then `F = YG⁻¹`, `P = Q̄⁻¹` are recovered and
//! the original conditions are re-checked directly by [`verify_terminal`].

use serde::{Deserialize, Serialize};

use crate::conic::{AffExpr, AffMat, ConicProgram, ConicSolver, MatVar, SolveStatus, SymMatVar, STRICT_EPS};
use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, lambda_max, to_rows, Mat, Vector};
use crate::risk_envelope::{EnvelopeSpec, Pmf};
use crate::system_model::{Ellipsoid, Plant};

/// Eigenvalue margin a verified condition must clear.
pub const VERIFY_EPS: f64 = 1e-9;

/// Raw LMI variables as returned by the solver.
#[derive(Debug, Clone)]
pub struct LmiVariables {
    pub y: Mat,
    pub g: Mat,
    pub q_bar: Mat,
}

#[derive(Debug, Clone)]
pub struct TerminalDesign {
    pub ellipsoid: Ellipsoid,
    /// Terminal cost `P = Q̄⁻¹`.
    pub p: Mat,
    /// Terminal gain `F = YG⁻¹`.
    pub f: Mat,
    pub raw: LmiVariables,
}

impl TerminalDesign {
    /// Design from explicit matrices, for fixtures and replays.
    pub fn from_matrices(w: Mat, p: Mat, f: Mat) -> Result<Self> {
        let n = w.nrows();
        let q_bar = linalg::pd_inverse(&p)?;
        Ok(Self {
            ellipsoid: Ellipsoid::new(w)?,
            raw: LmiVariables { y: &f * Mat::identity(n, n), g: Mat::identity(n, n), q_bar },
            p: linalg::symmetrize(&p),
            f,
        })
    }

    pub fn w(&self) -> &Mat {
        self.ellipsoid.shape()
    }

    /// `det(W)^{1/n}`.
    pub fn detroot(&self) -> f64 {
        let n = self.w().nrows() as f64;
        self.w().determinant().max(0.0).powf(1.0 / n)
    }
}

/// Worst eigenvalue margins of the terminal conditions (negative is good).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    /// One per envelope vertex.
    pub stability: Vec<f64>,
    pub control: f64,
    /// One per branch.
    pub state: Vec<f64>,
    /// One per branch.
    pub invariance: Vec<f64>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn stability_ok(&self) -> bool {
        self.stability.iter().all(|m| *m < -VERIFY_EPS)
    }

    pub fn worst(&self) -> f64 {
        self.stability
            .iter()
            .chain(&self.state)
            .chain(&self.invariance)
            .copied()
            .fold(self.control, f64::max)
    }
}

/// The LMI program with handles to its matrix variables.
#[derive(Debug, Clone)]
pub struct PeProgram {
    pub program: ConicProgram,
    pub w: SymMatVar,
    pub q_bar: SymMatVar,
    pub g: MatVar,
    pub y: MatVar,
    /// Number of stability LMIs (one per vertex).
    pub stability_lmis: usize,
    /// Number of control, state and invariance LMIs.
    pub constraint_lmis: usize,
}

/// Builds the LMI system with a det-root objective on `W`.
pub fn build_pe_program(plant: &Plant, vertices: &[Pmf]) -> Result<PeProgram> {
    let mut pe = build_lmis(plant, vertices)?;
    let t = pe.program.maximize_detroot("detroot(W)", &pe.w.expr())?;
    pe.program.minimize(-AffExpr::var(t))?;
    Ok(pe)
}

fn build_lmis(plant: &Plant, vertices: &[Pmf]) -> Result<PeProgram> {
    let l = plant.branches();
    let (nx, nu) = (plant.nx(), plant.nu());
    if vertices.is_empty() {
        return Err(Error::Parameter("empty vertex list".into()));
    }
    if let Some(q) = vertices.iter().find(|q| q.len() != l) {
        return Err(Error::Dimension(format!("vertex has {} entries, model has {l} branches", q.len())));
    }

    let mut program = ConicProgram::new();
    let w = program.add_sym_var(nx, "W");
    let q_bar = program.add_sym_var(nx, "Qbar");
    let g = program.add_mat_var(nx, nx, "G");
    let y = program.add_mat_var(nu, nx, "Y");
    let (we, qe, ge, ye) = (w.expr(), q_bar.expr(), g.expr(), y.expr());

    // Aⱼ G + Bⱼ Y for every branch.
    let acl: Vec<AffMat> = (0..l)
        .map(|j| ge.left_mul(plant.model.a(j))?.add(&ye.left_mul(plant.model.b(j))?))
        .collect::<Result<_>>()?;
    let sym_g = ge.add(&ge.transpose())?;
    let s_p = sym_g.sub(&qe)?;
    let s_w = sym_g.sub(&we)?;

    let r_inv = AffMat::constant(&linalg::pd_inverse(plant.weights.r())?);
    let q_half = linalg::psd_sqrt(plant.weights.q())?;
    let q_half_g = ge.left_mul(&q_half)?.scaled(-1.0);
    let neg_y = ye.scaled(-1.0);

    program.add_psd_strict("W ≻ 0", &we, STRICT_EPS)?;
    program.add_psd_strict("Qbar ≻ 0", &qe, STRICT_EPS)?;

    for (k, q) in vertices.iter().enumerate() {
        let last = l + 2;
        let mut blocks: Vec<Vec<Option<AffMat>>> = vec![vec![None; l + 3]; l + 3];
        for j in 0..l {
            blocks[j][j] = Some(qe.clone());
            let off = acl[j].scaled(-q.get(j).sqrt());
            blocks[last][j] = Some(off.transpose());
            blocks[j][last] = Some(off);
        }
        blocks[l][l] = Some(r_inv.clone());
        blocks[l][last] = Some(neg_y.clone());
        blocks[last][l] = Some(neg_y.transpose());
        blocks[l + 1][l + 1] = Some(AffMat::identity(nx));
        blocks[l + 1][last] = Some(q_half_g.clone());
        blocks[last][l + 1] = Some(q_half_g.transpose());
        blocks[last][last] = Some(s_p.clone());
        program.add_psd_strict(&format!("stability[{k}]"), &AffMat::block(&blocks)?, STRICT_EPS)?;
    }

    let cons = &plant.constraints;
    let two_by_two = |corner: AffMat, off: AffMat, s: &AffMat| {
        AffMat::block(&[vec![Some(corner), Some(off.clone())], vec![Some(off.transpose()), Some(s.clone())]])
    };
    let u2 = cons.u_max() * cons.u_max();
    let ctrl = two_by_two(
        AffMat::identity(cons.tu().nrows()).scaled(u2),
        ye.left_mul(cons.tu())?.scaled(-1.0),
        &s_w,
    )?;
    program.add_psd_strict("control", &ctrl, STRICT_EPS)?;
    let x2 = cons.x_max() * cons.x_max();
    for (j, acl_j) in acl.iter().enumerate() {
        let state = two_by_two(
            AffMat::identity(cons.tx().nrows()).scaled(x2),
            acl_j.left_mul(cons.tx())?.scaled(-1.0),
            &s_w,
        )?;
        program.add_psd_strict(&format!("state[{j}]"), &state, STRICT_EPS)?;
        let inv = two_by_two(we.clone(), acl_j.scaled(-1.0), &s_w)?;
        program.add_psd_strict(&format!("invariance[{j}]"), &inv, STRICT_EPS)?;
    }

    Ok(PeProgram {
        program,
        w,
        q_bar,
        g,
        y,
        stability_lmis: vertices.len(),
        constraint_lmis: 1 + 2 * l,
    })
}

fn recover(pe: &PeProgram, x: &[f64]) -> Result<TerminalDesign> {
    let w = linalg::symmetrize(&pe.w.value(x));
    let q_bar = linalg::symmetrize(&pe.q_bar.value(x));
    let g = pe.g.value(x);
    let y = pe.y.value(x);
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Solver("slack matrix G is singular".into()))?;
    let f = &y * g_inv;
    let p = linalg::pd_inverse(&q_bar)?;
    Ok(TerminalDesign { ellipsoid: Ellipsoid::new(w)?, p, f, raw: LmiVariables { y, g, q_bar } })
}

fn solve_program(pe: &PeProgram, solver: &dyn ConicSolver) -> Result<Vec<f64>> {
    let sol = solver.solve(&pe.program);
    match sol.status {
        SolveStatus::Optimal => Ok(sol.x),
        SolveStatus::Infeasible => Err(Error::SynthesisInfeasible("terminal LMIs have no solution".into())),
        status => Err(Error::Solver(format!(
            "terminal synthesis ended with {status:?} (residual {:e})",
            sol.max_residual
        ))),
    }
}

/// Solves the terminal synthesis with the default backend.
pub fn solve_pe(plant: &Plant, vertices: &[Pmf]) -> Result<TerminalDesign> {
    solve_pe_with(plant, vertices, &crate::conic::ClarabelSolver::default())
}

pub fn solve_pe_with(plant: &Plant, vertices: &[Pmf], solver: &dyn ConicSolver) -> Result<TerminalDesign> {
    let pe = build_pe_program(plant, vertices)?;
    let x = solve_program(&pe, solver)?;
    recover(&pe, &x)
}

/// Evaluates the bilinear terminal conditions directly at `(W, P, F)`.
/// Never fails on a bad design; it reports margins.
pub fn verify_terminal(plant: &Plant, vertices: &[Pmf], design: &TerminalDesign) -> Result<VerificationReport> {
    let (nx, nu) = (plant.nx(), plant.nu());
    let l = plant.branches();
    if design.f.shape() != (nu, nx) || design.p.shape() != (nx, nx) || design.ellipsoid.dim() != nx {
        return Err(Error::Dimension("design does not match the model dimensions".into()));
    }
    if let Some(q) = vertices.iter().find(|q| q.len() != l) {
        return Err(Error::Dimension(format!("vertex has {} entries, model has {l} branches", q.len())));
    }
    let f = &design.f;
    let p = &design.p;
    let w_inv = design.ellipsoid.shape_inv();
    let acl: Vec<Mat> = (0..l).map(|j| plant.model.closed_loop(j, f)).collect();
    let decrement = f.transpose() * plant.weights.r() * f + plant.weights.q();

    let stability: Vec<f64> = vertices
        .iter()
        .map(|q| {
            let mut m = decrement.clone() - p;
            for (j, a) in acl.iter().enumerate() {
                m += a.transpose() * p * a * q.get(j);
            }
            lambda_max(&m)
        })
        .collect();

    let cons = &plant.constraints;
    let tu = cons.tu();
    let control = lambda_max(&((f.transpose() * tu.transpose() * tu * f) / cons.u_max().powi(2) - w_inv));
    let txtx = cons.tx().transpose() * cons.tx() / cons.x_max().powi(2);
    let state: Vec<f64> = acl.iter().map(|a| lambda_max(&(a.transpose() * &txtx * a - w_inv))).collect();
    let invariance: Vec<f64> = acl.iter().map(|a| lambda_max(&(a.transpose() * w_inv * a - w_inv))).collect();

    let pass = stability.iter().chain(&state).chain(&invariance).chain([&control]).all(|m| *m < -VERIFY_EPS);
    Ok(VerificationReport { stability, control, state, invariance, pass })
}

/// Offline controller without lookahead: the terminal LMIs plus
/// `x₀ ∈ ℰ(W)` and `γ ≥ x₀ᵀPx₀`, minimizing `γ`.
#[derive(Debug, Clone)]
pub struct Mpc0Design {
    pub design: TerminalDesign,
    pub gamma: f64,
}

impl Mpc0Design {
    /// The static policy `u = F x`.
    pub fn control(&self, x: &Vector) -> Vector {
        &self.design.f * x
    }
}

pub fn mpc0_design(plant: &Plant, vertices: &[Pmf], x0: &Vector) -> Result<Mpc0Design> {
    mpc0_design_with(plant, vertices, x0, &crate::conic::ClarabelSolver::default())
}

pub fn mpc0_design_with(plant: &Plant, vertices: &[Pmf], x0: &Vector, solver: &dyn ConicSolver) -> Result<Mpc0Design> {
    if x0.len() != plant.nx() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("initial state must be finite with the model dimension".into()));
    }
    let mut pe = build_lmis(plant, vertices)?;
    let gamma = pe.program.add_var("gamma");
    let x0c = AffMat::constant(&Mat::from_column_slice(x0.len(), 1, x0.as_slice()));
    let cover = AffMat::block(&[
        vec![Some(AffMat::identity(1)), Some(x0c.transpose())],
        vec![Some(x0c.clone()), Some(pe.w.expr())],
    ])?;
    pe.program.add_psd_block("x0 ∈ E(W)", &cover)?;
    let bound = AffMat::block(&[
        vec![Some(AffMat::column(vec![AffExpr::var(gamma)])), Some(x0c.transpose())],
        vec![Some(x0c), Some(pe.q_bar.expr())],
    ])?;
    pe.program.add_psd_block("gamma ≥ x0ᵀPx0", &bound)?;
    pe.program.minimize(AffExpr::var(gamma))?;
    let x = solve_program(&pe, solver)?;
    Ok(Mpc0Design { gamma: x[gamma.0], design: recover(&pe, &x)? })
}

/// On-disk terminal design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub envelope: EnvelopeSpec,
    pub vertices: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "Qbar")]
    pub q_bar: Vec<Vec<f64>>,
    pub detroot_w: f64,
    pub margins: VerificationReport,
}

impl DesignFile {
    pub fn new(envelope: EnvelopeSpec, vertices: &[Pmf], design: &TerminalDesign, margins: VerificationReport) -> Self {
        Self {
            envelope,
            vertices: vertices.iter().map(|q| q.as_slice().to_vec()).collect(),
            w: to_rows(design.w()),
            p: to_rows(&design.p),
            f: to_rows(&design.f),
            y: to_rows(&design.raw.y),
            g: to_rows(&design.raw.g),
            q_bar: to_rows(&design.raw.q_bar),
            detroot_w: design.detroot(),
            margins,
        }
    }

    pub fn design(&self) -> Result<TerminalDesign> {
        Ok(TerminalDesign {
            ellipsoid: Ellipsoid::new(from_rows(&self.w)?)?,
            p: from_rows(&self.p)?,
            f: from_rows(&self.f)?,
            raw: LmiVariables { y: from_rows(&self.y)?, g: from_rows(&self.g)?, q_bar: from_rows(&self.q_bar)? },
        })
    }

    pub fn vertex_list(&self) -> Result<Vec<Pmf>> {
        self.vertices.iter().map(|q| Pmf::new(q.clone())).collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
