//! Online scenario-tree MPC.
//!
//! Nodes of the disturbance tree are stored in heap order: the root is node
//! 0 and the `j`-th child of node `n` is `n·L + 1 + j`. Nodes at depth
//! `h < N` carry a control `U_h` and an epigraph variable `τ_h`; the `L^N`
//! leaves only carry the terminal state. States are affine in the controls
//! and never appear as variables.

use std::ops::Range;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conic::{AffExpr, AffMat, ClarabelSolver, ConicProgram, ConicSolver, SolveStatus, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, lambda_min, Mat, Vector};
use crate::risk_envelope::{compose_risk_with, CostSequenceTree, Pmf};
use crate::system_model::{sample_branch, Plant, VIOLATION_TOL};
use crate::terminal_design::{verify_terminal, TerminalDesign};

/// Default bound on the number of tree nodes.
pub const DEFAULT_NODE_CAP: usize = 1_000_000;

/// Relative gap tolerated between `J*` and the recomposed cost tree.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// Slack allowed on the per-step Lyapunov decrease.
pub const LYAPUNOV_TOL: f64 = 1e-5;
/// Smallest unit the online program is solved in; see [`MpcController::build_program_scaled`].
pub const MIN_PROGRAM_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioTree {
    branching: usize,
    horizon: usize,
    controls: usize,
    nodes: usize,
}

/// Complete tree with the default node cap.
pub fn build_tree(branching: usize, horizon: usize) -> Result<ScenarioTree> {
    ScenarioTree::with_cap(branching, horizon, DEFAULT_NODE_CAP)
}

impl ScenarioTree {
    pub fn with_cap(branching: usize, horizon: usize, cap: usize) -> Result<Self> {
        if branching == 0 || horizon == 0 {
            return Err(Error::Parameter("tree needs L ≥ 1 and N ≥ 1".into()));
        }
        let mut level: u128 = 1;
        let mut controls: u128 = 0;
        for _ in 0..horizon {
            controls += level;
            level = level.saturating_mul(branching as u128);
            if level > cap as u128 {
                return Err(Error::TreeTooLarge { nodes: controls.saturating_add(level), cap });
            }
        }
        let nodes = controls + level;
        if nodes > cap as u128 {
            return Err(Error::TreeTooLarge { nodes, cap });
        }
        Ok(Self { branching, horizon, controls: controls as usize, nodes: nodes as usize })
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Nodes at depth `< N`, each owning a control and an epigraph variable.
    pub fn control_count(&self) -> usize {
        self.controls
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes - self.controls
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn is_control(&self, node: usize) -> bool {
        node < self.controls
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        (node > 0).then(|| (node - 1) / self.branching)
    }

    /// Branch index taken to reach `node` from its parent.
    pub fn branch(&self, node: usize) -> Option<usize> {
        (node > 0).then(|| (node - 1) % self.branching)
    }

    pub fn children(&self, node: usize) -> Range<usize> {
        let first = node * self.branching + 1;
        first..first + self.branching
    }

    /// Nodes at depth `h`, for `h ≤ N`.
    pub fn level(&self, h: usize) -> Range<usize> {
        let start: usize = (0..h).map(|d| self.branching.pow(d as u32)).sum();
        start..start + self.branching.pow(h as u32)
    }

    pub fn depth(&self, node: usize) -> usize {
        self.history(node).len()
    }

    /// Branch indices from the root down to `node`.
    pub fn history(&self, mut node: usize) -> Vec<usize> {
        let mut h = Vec::new();
        while node > 0 {
            h.push((node - 1) % self.branching);
            node = (node - 1) / self.branching;
        }
        h.reverse();
        h
    }

    pub fn node_of(&self, history: &[usize]) -> Result<usize> {
        if history.len() > self.horizon || history.iter().any(|j| *j >= self.branching) {
            return Err(Error::Parameter(format!("history {history:?} is not in the tree")));
        }
        Ok(history.iter().fold(0, |n, j| n * self.branching + 1 + j))
    }
}

/// Sizes of an assembled online program.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct ProgramStats {
    pub variables: usize,
    pub control_nodes: usize,
    pub epigraph_vars: usize,
    pub vertex_inequalities: usize,
    pub quadratic_constraints: usize,
    pub soc_constraints: usize,
}

/// The online program with handles into its variables.
#[derive(Debug, Clone)]
pub struct CmpcProgram {
    pub program: ConicProgram,
    pub tree: ScenarioTree,
    /// Control variables per control node.
    pub controls: Vec<Vec<Var>>,
    /// Epigraph variable per control node.
    pub tau: Vec<Var>,
    /// Cost epigraph per node (stage cost at control nodes, terminal at leaves).
    pub cost: Vec<Var>,
    /// Affine state expression per node.
    pub states: Vec<AffMat>,
    /// Unit of the program's states and controls: the physical values are
    /// `scale` times the program values and costs are `scale²` times larger.
    pub scale: f64,
    pub stats: ProgramStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct MpcStepResult {
    pub status: SolveStatus,
    pub u0: Vec<f64>,
    /// Optimal objective `J*`.
    pub objective: f64,
    /// Composed risk of the realized cost tree at the optimizer.
    pub composed: f64,
    pub stats: ProgramStats,
    pub iterations: u32,
    #[serde(serialize_with = "ser_ms")]
    pub build_time: Duration,
    #[serde(serialize_with = "ser_ms")]
    pub solve_time: Duration,
}

fn ser_ms<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

/// Online controller for a fixed plant, terminal design, envelope and horizon.
#[derive(Debug, Clone)]
pub struct MpcController {
    plant: Plant,
    design: TerminalDesign,
    vertices: Vec<Pmf>,
    tree: ScenarioTree,
    q_sqrt: Mat,
    r_sqrt: Mat,
    p_sqrt: Mat,
    /// Constant added to every leaf cost.
    pub terminal_offset: f64,
    pub solver: ClarabelSolver,
}

impl MpcController {
    /// Fails unless the design passes [`verify_terminal`] for `vertices`.
    pub fn new(plant: Plant, design: TerminalDesign, vertices: Vec<Pmf>, horizon: usize) -> Result<Self> {
        let report = verify_terminal(&plant, &vertices, &design)?;
        if !report.pass {
            return Err(Error::Parameter(format!(
                "terminal design does not verify (worst margin {:e})",
                report.worst()
            )));
        }
        Self::new_unchecked(plant, design, vertices, horizon)
    }

    /// Same as [`MpcController::new`] without re-verifying the design.
    pub fn new_unchecked(plant: Plant, design: TerminalDesign, vertices: Vec<Pmf>, horizon: usize) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Parameter("empty vertex list".into()));
        }
        if vertices.iter().any(|q| q.len() != plant.branches()) {
            return Err(Error::Dimension("vertex length differs from the branch count".into()));
        }
        if design.f.shape() != (plant.nu(), plant.nx()) || design.ellipsoid.dim() != plant.nx() {
            return Err(Error::Dimension("design does not match the model dimensions".into()));
        }
        let tree = build_tree(plant.branches(), horizon)?;
        Ok(Self {
            q_sqrt: linalg::psd_sqrt(plant.weights.q())?,
            r_sqrt: linalg::psd_sqrt(plant.weights.r())?,
            p_sqrt: linalg::psd_sqrt(&design.p)?,
            plant,
            design,
            vertices,
            tree,
            terminal_offset: 0.0,
            solver: ClarabelSolver::default(),
        })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn design(&self) -> &TerminalDesign {
        &self.design
    }

    pub fn vertices(&self) -> &[Pmf] {
        &self.vertices
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn build_program(&self, x: &Vector) -> Result<CmpcProgram> {
        self.build_program_scaled(x, 1.0)
    }

    /// Same program in units of `scale`. Near the origin the costs are tiny
    /// next to the constant terms of the cone encodings, and solving for
    /// `x / scale` keeps the interior-point iterates well conditioned.
    pub fn build_program_scaled(&self, x: &Vector, scale: f64) -> Result<CmpcProgram> {
        let (nx, nu) = (self.plant.nx(), self.plant.nu());
        if x.len() != nx || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("state must be finite with the model dimension".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Parameter(format!("program scale must be positive, got {scale}")));
        }
        let x = &(x / scale);
        let tree = self.tree;
        let model = &self.plant.model;
        let cons = &self.plant.constraints;
        let mut program = ConicProgram::new();
        let controls: Vec<Vec<Var>> = (0..tree.control_count()).map(|n| program.add_vars(nu, &format!("U{n}"))).collect();
        let tau: Vec<Var> = (0..tree.control_count()).map(|n| program.add_var(format!("tau{n}"))).collect();
        let cost: Vec<Var> = (0..tree.node_count()).map(|n| program.add_var(format!("c{n}"))).collect();
        let u_expr: Vec<AffMat> =
            controls.iter().map(|u| AffMat::column(u.iter().map(|v| AffExpr::var(*v)).collect())).collect();

        let mut states = Vec::with_capacity(tree.node_count());
        states.push(AffMat::constant(&Mat::from_column_slice(nx, 1, x.as_slice())));
        for n in 1..tree.node_count() {
            let parent = (n - 1) / tree.branching;
            let j = (n - 1) % tree.branching;
            let next = states[parent].left_mul(model.a(j))?.add(&u_expr[parent].left_mul(model.b(j))?);
            states.push(next?);
        }

        let mut stats = ProgramStats { control_nodes: tree.control_count(), ..Default::default() };
        let tu_soc = |u: &AffMat| -> Result<Vec<AffExpr>> { Ok(u.left_mul(cons.tu())?.into_entries()) };
        for n in 0..tree.node_count() {
            let xn = &states[n];
            if n > 0 {
                program.add_soc(
                    &format!("state{n}"),
                    AffExpr::constant(cons.x_max() / scale),
                    xn.left_mul(cons.tx())?.into_entries(),
                )?;
                stats.soc_constraints += 1;
            }
            let c = AffExpr::var(cost[n]);
            if tree.is_control(n) {
                program.add_soc(&format!("control{n}"), AffExpr::constant(cons.u_max() / scale), tu_soc(&u_expr[n])?)?;
                let mut v = xn.left_mul(&self.q_sqrt)?.into_entries();
                v.extend(u_expr[n].left_mul(&self.r_sqrt)?.into_entries());
                program.quadratic_leq(&format!("stage{n}"), v, AffExpr::zero(), c)?;
                stats.soc_constraints += 1;
            } else {
                program.add_soc(
                    &format!("terminal{n}"),
                    AffExpr::constant(1.0 / scale),
                    xn.left_mul(self.design.ellipsoid.shape_inv_sqrt())?.into_entries(),
                )?;
                let v = xn.left_mul(&self.p_sqrt)?.into_entries();
                program.quadratic_leq(&format!("leaf{n}"), v, AffExpr::constant(self.terminal_offset / (scale * scale)), c)?;
                stats.soc_constraints += 1;
            }
            stats.quadratic_constraints += 1;
            stats.soc_constraints += 1;
        }

        for h in 0..tree.control_count() {
            let children = tree.children(h);
            let rows: Vec<AffExpr> = self
                .vertices
                .iter()
                .map(|q| {
                    let mut terms: Vec<(f64, AffExpr)> = vec![(1.0, AffExpr::var(tau[h]))];
                    for (j, child) in children.clone().enumerate() {
                        let w = q.get(j);
                        if w == 0.0 {
                            continue;
                        }
                        terms.push((-w, AffExpr::var(cost[child])));
                        if tree.is_control(child) {
                            terms.push((-w, AffExpr::var(tau[child])));
                        }
                    }
                    AffExpr::linear_combination(terms.iter().map(|(w, e)| (*w, e)))
                })
                .collect();
            stats.vertex_inequalities += rows.len();
            program.add_linear(&format!("risk{h}"), rows)?;
        }
        stats.epigraph_vars = tau.len();
        program.minimize(&AffExpr::var(cost[0]) + &AffExpr::var(tau[0]))?;
        stats.variables = program.n_vars();
        Ok(CmpcProgram { program, tree, controls, tau, cost, states, scale, stats })
    }

    /// Exact stage and terminal costs of a control assignment, in node order.
    pub fn cost_tree(&self, x: &Vector, controls: &[Vector]) -> Result<CostSequenceTree> {
        let tree = self.tree;
        if controls.len() != tree.control_count() {
            return Err(Error::Dimension("one control per control node is required".into()));
        }
        let model = &self.plant.model;
        let mut states = Vec::with_capacity(tree.node_count());
        states.push(x.clone());
        for n in 1..tree.node_count() {
            let parent = (n - 1) / tree.branching;
            states.push(model.step(&states[parent], &controls[parent], (n - 1) % tree.branching)?);
        }
        let costs = states
            .iter()
            .enumerate()
            .map(|(n, xn)| {
                if tree.is_control(n) {
                    self.plant.weights.stage_cost(xn, &controls[n])
                } else {
                    Ok(xn.dot(&(&self.design.p * xn)) + self.terminal_offset)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        CostSequenceTree::new(tree.horizon, tree.branching, costs)
    }

    /// Composed risk of the cost tree generated by `controls`.
    pub fn evaluate_policy(&self, x: &Vector, controls: &[Vector]) -> Result<f64> {
        compose_risk_with(&self.cost_tree(x, controls)?, &self.vertices)
    }

    /// Controls from rolling the terminal gain `u = Fx` through the tree.
    pub fn terminal_rollout(&self, x: &Vector) -> Result<Vec<Vector>> {
        let tree = self.tree;
        let mut states = vec![x.clone()];
        let mut controls = Vec::with_capacity(tree.control_count());
        for n in 0..tree.control_count() {
            let u = &self.design.f * &states[n];
            for j in 0..tree.branching {
                states.push(self.plant.model.step(&states[n], &u, j)?);
            }
            controls.push(u);
        }
        Ok(controls)
    }

    /// Solves the online program at `x` and returns the first control.
    pub fn solve_step(&self, x: &Vector) -> Result<MpcStepResult> {
        Ok(self.solve_step_full(x)?.0)
    }

    /// Like [`MpcController::solve_step`], also returning every node control.
    pub fn solve_step_full(&self, x: &Vector) -> Result<(MpcStepResult, Vec<Vector>)> {
        let start = Instant::now();
        let membership = self.plant.constraints.in_state_set(x)?;
        if !membership.inside {
            return Err(Error::MpcInfeasible {
                state: x.iter().copied().collect(),
                reason: format!("state lies outside the state constraint set (margin {:e})", membership.margin),
            });
        }
        let scale = x.norm().clamp(MIN_PROGRAM_SCALE, 1.0);
        let cmpc = self.build_program_scaled(x, scale)?;
        let build_time = start.elapsed();
        let sol = self.solver.solve(&cmpc.program);
        let objective = sol.objective * scale * scale;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                return Err(Error::MpcInfeasible {
                    state: x.iter().copied().collect(),
                    reason: format!(
                        "no control tree over {} nodes reaches the terminal set",
                        cmpc.tree.control_count()
                    ),
                })
            }
            status => {
                return Err(Error::Solver(format!(
                    "online program ended with {status:?} (residual {:e})",
                    sol.max_residual
                )))
            }
        }
        let controls: Vec<Vector> = cmpc
            .controls
            .iter()
            .map(|u| Vector::from_iterator(u.len(), u.iter().map(|v| sol.x[v.0] * scale)))
            .collect();
        let composed = self.evaluate_policy(x, &controls)?;
        if (composed - objective).abs() > CONSISTENCY_TOL * (1.0 + objective.abs()) {
            return Err(Error::Solver(format!("objective {objective} disagrees with the composed cost tree {composed}")));
        }
        let result = MpcStepResult {
            status: sol.status,
            u0: controls[0].iter().copied().collect(),
            objective,
            composed,
            stats: cmpc.stats,
            iterations: sol.iterations,
            build_time,
            solve_time: sol.solve_time,
        };
        Ok((result, controls))
    }

    /// Simulates `steps` closed-loop steps with branches drawn from a
    /// ChaCha8 stream seeded by `seed`.
    pub fn closed_loop(&self, x0: &Vector, steps: usize, seed: u64) -> Result<Trajectory> {
        self.closed_loop_with_rng(x0, steps, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn closed_loop_with_rng(&self, x0: &Vector, steps: usize, rng: &mut impl Rng) -> Result<Trajectory> {
        let first = self.solve_step(x0)?;
        let lambda_q = lambda_min(self.plant.weights.q());
        let cons = &self.plant.constraints;
        let mut traj = Trajectory::default();
        let mut x = x0.clone();
        let mut cum = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        let mut pending = Some(first);
        for k in 0..steps {
            let step = match pending.take() {
                Some(r) => Ok(r),
                None => self.solve_step(&x),
            };
            let mut note = None;
            let (u, objective, solve_ms, fallback) = match step {
                Ok(r) => (Vector::from_vec(r.u0), Some(r.objective), r.solve_time.as_secs_f64() * 1e3, false),
                Err(e @ (Error::MpcInfeasible { .. } | Error::Solver(_))) => {
                    traj.infeasible_steps += 1;
                    if !self.design.ellipsoid.in_ellipsoid(&x)?.inside {
                        traj.aborted = Some(format!("step {k}: {e}"));
                        break;
                    }
                    note = Some(e.to_string());
                    (&self.design.f * &x, None, 0.0, true)
                }
                Err(e) => return Err(e),
            };
            if let (Some(j), Some((j_prev, bound))) = (objective, prev) {
                let gap = j - j_prev + bound;
                traj.max_lyapunov_gap = Some(traj.max_lyapunov_gap.map_or(gap, |g: f64| g.max(gap)));
                if gap > LYAPUNOV_TOL {
                    traj.lyapunov_violations += 1;
                }
            }
            let state_margin = cons.in_state_set(&x)?.margin;
            let control_margin = cons.in_control_set(&u)?.margin;
            if state_margin > VIOLATION_TOL || control_margin > VIOLATION_TOL {
                traj.violations += 1;
            }
            let stage = self.plant.weights.stage_cost(&x, &u)?;
            cum += stage;
            let branch = sample_branch(self.plant.model.pmf(), rng.random::<f64>());
            let next = self.plant.model.step(&x, &u, branch)?;
            prev = objective.map(|j| (j, lambda_q * x.norm_squared()));
            traj.steps.push(StepRecord {
                k,
                x: x.iter().copied().collect(),
                u: u.iter().copied().collect(),
                stage_cost: stage,
                cum_cost: cum,
                objective,
                feasible: !fallback,
                fallback,
                branch,
                state_margin,
                control_margin,
                solve_ms,
                note,
            });
            x = next;
        }
        traj.final_state = x.iter().copied().collect();
        Ok(traj)
    }
}

/// Free-function form of [`MpcController::build_program`].
pub fn build_cmpc_program(
    x: &Vector,
    plant: &Plant,
    design: &TerminalDesign,
    vertices: &[Pmf],
    horizon: usize,
) -> Result<CmpcProgram> {
    MpcController::new(plant.clone(), design.clone(), vertices.to_vec(), horizon)?.build_program(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub stage_cost: f64,
    pub cum_cost: f64,
    /// `J*` of the online program, absent when the fallback gain was used.
    pub objective: Option<f64>,
    pub feasible: bool,
    pub fallback: bool,
    pub branch: usize,
    pub state_margin: f64,
    pub control_margin: f64,
    pub solve_ms: f64,
    /// Solver diagnostic when the fallback gain was used.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    /// Steps whose state or control leaves its set by more than the tolerance.
    pub violations: usize,
    pub infeasible_steps: usize,
    /// Steps with `J*_{k+1} > J*_k − λ_min(Q)‖x_k‖² + LYAPUNOV_TOL`.
    pub lyapunov_violations: usize,
    /// Largest `J*_{k+1} − J*_k + λ_min(Q)‖x_k‖²` over consecutive solved steps.
    pub max_lyapunov_gap: Option<f64>,
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn cumulative_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cum_cost)
    }

    pub fn all_feasible(&self) -> bool {
        self.infeasible_steps == 0 && self.aborted.is_none()
    }
}
