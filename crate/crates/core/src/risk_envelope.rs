//! Polytopic risk envelopes and the coherent risk measures they induce.
//!
//! A polytopic risk measure evaluates a random cost `Z` over `L` outcomes as
//! `ρ(Z) = max { Σ q(j) Z(j) : q ∈ U }`, where `U` is a polytope inside the
//! probability simplex:
//!
//! ```text
//! U = { q ∈ Δᴸ : Sᴵ q ≤ Tᴵ,  Sᴱ q = Tᴱ }
//! ```
//!
//! The maximum of a linear function over a polytope is attained at a vertex,
//! so every evaluation here runs over the enumerated vertex list. Nested
//! (time-consistent) evaluation over a tree of outcomes is done by
//! [`compose_risk`].

use itertools::Itertools;
use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, Mat, Vector};

/// Tolerance on `Σ p = 1` for user-supplied mass functions.
pub const PMF_SUM_TOL: f64 = 1e-12;
/// Constraint tolerance used for vertex feasibility and membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Default cap on the envelope dimension accepted by vertex enumeration.
pub const DEFAULT_DIM_CAP: usize = 12;

/// A probability mass function over `L` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf(Vec<f64>);

impl Pmf {
    /// Nonnegative entries summing to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("no outcomes".into()));
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidPmf(format!("entry {v} is negative or not finite")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// A nominal disturbance pmf: every outcome must have positive mass.
    pub fn nominal(probs: Vec<f64>) -> Result<Self> {
        let pmf = Self::new(probs)?;
        if pmf.0.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidPmf("nominal pmf must be strictly positive".into()));
        }
        Ok(pmf)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPmf("no outcomes".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// `E_p[z]`.
    pub fn expectation(&self, z: &[f64]) -> f64 {
        self.0.iter().zip(z).map(|(p, v)| p * v).sum()
    }

    fn from_raw(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Pmf::new(v)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Self {
        p.0
    }
}

/// How an envelope was specified. Carried for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvelopeSpec {
    Expectation,
    Cvar {
        alpha: f64,
    },
    /// Raw halfspace data, matrices as lists of rows.
    Halfspace {
        #[serde(default)]
        s_ineq: Vec<Vec<f64>>,
        #[serde(default)]
        t_ineq: Vec<f64>,
        #[serde(default)]
        s_eq: Vec<Vec<f64>>,
        #[serde(default)]
        t_eq: Vec<f64>,
    },
}

impl EnvelopeSpec {
    /// Builds the envelope around the nominal pmf `p` and enumerates its vertices.
    pub fn build(&self, p: &Pmf) -> Result<RiskEnvelope> {
        let env = match self {
            EnvelopeSpec::Expectation => expectation_envelope(p),
            EnvelopeSpec::Cvar { alpha } => cvar_envelope(p, *alpha)?,
            EnvelopeSpec::Halfspace { s_ineq, t_ineq, s_eq, t_eq } => RiskEnvelope::halfspace(
                p,
                rows_or_empty(s_ineq, p.len())?,
                Vector::from_column_slice(t_ineq),
                rows_or_empty(s_eq, p.len())?,
                Vector::from_column_slice(t_eq),
            )?,
        };
        env.with_vertices()
    }

    /// Short label used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            EnvelopeSpec::Expectation => "expectation".into(),
            EnvelopeSpec::Cvar { alpha } => format!("cvar{alpha}"),
            EnvelopeSpec::Halfspace { .. } => "halfspace".into(),
        }
    }
}

impl std::str::FromStr for EnvelopeSpec {
    type Err = Error;

    /// Parses `expectation` or `cvar:<alpha>`. Halfspace envelopes are only
    /// accepted through configuration files.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("expectation") {
            return Ok(EnvelopeSpec::Expectation);
        }
        if let Some(rest) = s.strip_prefix("cvar:") {
            let alpha = rest
                .parse::<f64>()
                .map_err(|e| Error::Parameter(format!("bad CVaR level {rest:?}: {e}")))?;
            return Ok(EnvelopeSpec::Cvar { alpha });
        }
        Err(Error::Parameter(format!(
            "unknown envelope {s:?} (expected `expectation` or `cvar:<alpha>`)"
        )))
    }
}

fn rows_or_empty(rows: &[Vec<f64>], ncols: usize) -> Result<Mat> {
    if rows.is_empty() {
        Ok(Mat::zeros(0, ncols))
    } else {
        from_rows(rows)
    }
}

/// A polytope of pmfs `{ q ∈ Δᴸ : Sᴵ q ≤ Tᴵ, Sᴱ q = Tᴱ }` containing the
/// nominal pmf, with an optional cached vertex list.
#[derive(Debug, Clone)]
pub struct RiskEnvelope {
    nominal: Pmf,
    s_ineq: Mat,
    t_ineq: Vector,
    s_eq: Mat,
    t_eq: Vector,
    vertices: Vec<Pmf>,
}

impl RiskEnvelope {
    /// General polytopic envelope. The nominal pmf must satisfy every
    /// constraint within [`MEMBERSHIP_TOL`].
    pub fn halfspace(p: &Pmf, s_ineq: Mat, t_ineq: Vector, s_eq: Mat, t_eq: Vector) -> Result<Self> {
        let l = p.len();
        if s_ineq.ncols() != l || s_eq.ncols() != l {
            return Err(Error::Dimension(format!(
                "envelope matrices must have {l} columns (got {} and {})",
                s_ineq.ncols(),
                s_eq.ncols()
            )));
        }
        if s_ineq.nrows() != t_ineq.len() || s_eq.nrows() != t_eq.len() {
            return Err(Error::Dimension("envelope matrix/vector row counts differ".into()));
        }
        let env = Self { nominal: p.clone(), s_ineq, t_ineq, s_eq, t_eq, vertices: Vec::new() };
        if !env.contains(p.as_slice()) {
            return Err(Error::Parameter("nominal pmf is not a member of the envelope".into()));
        }
        Ok(env)
    }

    pub fn dim(&self) -> usize {
        self.nominal.len()
    }

    pub fn nominal(&self) -> &Pmf {
        &self.nominal
    }

    pub fn ineq(&self) -> (&Mat, &Vector) {
        (&self.s_ineq, &self.t_ineq)
    }

    pub fn eq(&self) -> (&Mat, &Vector) {
        (&self.s_eq, &self.t_eq)
    }

    /// Cached vertices; empty until [`RiskEnvelope::with_vertices`] runs.
    pub fn vertices(&self) -> &[Pmf] {
        &self.vertices
    }

    /// Enumerates and caches the vertex list with default options.
    pub fn with_vertices(self) -> Result<Self> {
        self.with_vertices_opts(&VertexOptions::default())
    }

    pub fn with_vertices_opts(mut self, opts: &VertexOptions) -> Result<Self> {
        self.vertices = enumerate_vertices_opts(&self, opts)?;
        Ok(self)
    }

    /// Membership test for the simplex and every halfspace, at [`MEMBERSHIP_TOL`].
    pub fn contains(&self, q: &[f64]) -> bool {
        if q.len() != self.dim() {
            return false;
        }
        let tol = MEMBERSHIP_TOL;
        if q.iter().any(|v| *v < -tol) || (q.iter().sum::<f64>() - 1.0).abs() > tol {
            return false;
        }
        let qv = Vector::from_column_slice(q);
        let ineq_ok = (&self.s_ineq * &qv - &self.t_ineq).iter().all(|r| *r <= tol);
        let eq_ok = (&self.s_eq * &qv - &self.t_eq).iter().all(|r| r.abs() <= tol);
        ineq_ok && eq_ok
    }
}

/// `CVaR_α` envelope: `{ q ∈ Δᴸ : 0 ≤ q(j) ≤ p(j)/α }`.
pub fn cvar_envelope(p: &Pmf, alpha: f64) -> Result<RiskEnvelope> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("CVaR level must lie in (0, 1], got {alpha}")));
    }
    let l = p.len();
    let caps = Vector::from_iterator(l, p.as_slice().iter().map(|v| v / alpha));
    RiskEnvelope::halfspace(p, Mat::identity(l, l), caps, Mat::zeros(0, l), Vector::zeros(0))
}

/// The singleton envelope `{p}`; the induced risk measure is the expectation.
pub fn expectation_envelope(p: &Pmf) -> RiskEnvelope {
    let l = p.len();
    RiskEnvelope {
        nominal: p.clone(),
        s_ineq: Mat::zeros(0, l),
        t_ineq: Vector::zeros(0),
        s_eq: Mat::identity(l, l),
        t_eq: Vector::from_column_slice(p.as_slice()),
        vertices: vec![p.clone()],
    }
}

/// Options for [`enumerate_vertices_opts`].
#[derive(Debug, Clone)]
pub struct VertexOptions {
    /// Largest accepted envelope dimension.
    pub dim_cap: usize,
    /// Two vertices closer than this in the ∞-norm are merged.
    pub dedup_tol: f64,
}

impl Default for VertexOptions {
    fn default() -> Self {
        Self { dim_cap: DEFAULT_DIM_CAP, dedup_tol: MEMBERSHIP_TOL }
    }
}

pub fn enumerate_vertices(env: &RiskEnvelope) -> Result<Vec<Pmf>> {
    enumerate_vertices_opts(env, &VertexOptions::default())
}

/// Exact vertex enumeration by active sets.
///
/// Every vertex is the unique solution of the equality constraints together
/// with `L - rank(E)` linearly independent active inequalities. All such
/// subsets are tried; feasible unique solutions are kept and deduplicated.
pub fn enumerate_vertices_opts(env: &RiskEnvelope, opts: &VertexOptions) -> Result<Vec<Pmf>> {
    let l = env.dim();
    if l > opts.dim_cap {
        return Err(Error::EnvelopeTooLarge { dim: l, cap: opts.dim_cap });
    }

    // Equalities: the simplex row plus Sᴱ.
    let n_eq = 1 + env.s_eq.nrows();
    let mut eq = Mat::zeros(n_eq, l);
    let mut eq_rhs = Vector::zeros(n_eq);
    eq.row_mut(0).fill(1.0);
    eq_rhs[0] = 1.0;
    eq.view_mut((1, 0), (n_eq - 1, l)).copy_from(&env.s_eq);
    eq_rhs.rows_mut(1, n_eq - 1).copy_from(&env.t_eq);

    // Inequalities: -q ≤ 0 followed by Sᴵ q ≤ Tᴵ.
    let n_in = l + env.s_ineq.nrows();
    let mut ineq = Mat::zeros(n_in, l);
    let mut ineq_rhs = Vector::zeros(n_in);
    ineq.view_mut((0, 0), (l, l)).copy_from(&(-Mat::identity(l, l)));
    ineq.view_mut((l, 0), (env.s_ineq.nrows(), l)).copy_from(&env.s_ineq);
    ineq_rhs.rows_mut(l, env.s_ineq.nrows()).copy_from(&env.t_ineq);

    let eq_rank = SVD::new(eq.clone(), false, false).rank(rank_tol(&eq));
    let n_active = l.saturating_sub(eq_rank);

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    for active in (0..n_in).combinations(n_active) {
        let rows = n_eq + active.len();
        let mut sys = Mat::zeros(rows, l);
        let mut rhs = Vector::zeros(rows);
        sys.rows_mut(0, n_eq).copy_from(&eq);
        rhs.rows_mut(0, n_eq).copy_from(&eq_rhs);
        for (k, &i) in active.iter().enumerate() {
            sys.row_mut(n_eq + k).copy_from(&ineq.row(i));
            rhs[n_eq + k] = ineq_rhs[i];
        }
        let svd = SVD::new(sys.clone(), true, true);
        if svd.rank(rank_tol(&sys)) < l {
            continue;
        }
        let Ok(q) = svd.solve(&rhs, 1e-14) else { continue };
        let tol = MEMBERSHIP_TOL;
        if (&eq * &q - &eq_rhs).amax() > tol {
            continue;
        }
        if (&ineq * &q - &ineq_rhs).iter().any(|r| *r > tol) {
            continue;
        }
        let q: Vec<f64> = q.iter().map(|v| if v.abs() <= tol { 0.0 } else { *v }).collect();
        let dup = vertices
            .iter()
            .any(|v| v.iter().zip(&q).all(|(a, b)| (a - b).abs() <= opts.dedup_tol));
        if !dup {
            vertices.push(q);
        }
    }

    if vertices.is_empty() {
        return Err(Error::InfeasibleEnvelope);
    }
    Ok(vertices.into_iter().map(Pmf::from_raw).collect())
}

fn rank_tol(m: &Mat) -> f64 {
    1e-10 * (1.0 + m.amax()) * m.nrows().max(m.ncols()) as f64
}

/// One-step risk `max_l ⟨q_l, z⟩` over an enumerated vertex list.
pub fn evaluate_risk(vertices: &[Pmf], z: &[f64]) -> Result<f64> {
    let first = vertices.first().ok_or_else(|| Error::Parameter("empty vertex list".into()))?;
    if vertices.iter().any(|q| q.len() != z.len()) {
        return Err(Error::Dimension(format!(
            "random cost has {} outcomes, envelope has {}",
            z.len(),
            first.len()
        )));
    }
    Ok(vertices.iter().map(|q| q.expectation(z)).fold(f64::NEG_INFINITY, f64::max))
}

/// `CVaR_α(Z) = inf_y [ y + E_p[(Z - y)⁺] / α ]`, evaluated exactly.
///
/// The objective is convex and piecewise linear in `y` with breakpoints at
/// the outcomes of `Z`, so the infimum is attained at one of them.
pub fn cvar_primal(p: &Pmf, alpha: f64, z: &[f64]) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("CVaR level must lie in (0, 1], got {alpha}")));
    }
    if z.len() != p.len() {
        return Err(Error::Dimension(format!("pmf has {} outcomes, cost has {}", p.len(), z.len())));
    }
    let objective = |y: f64| {
        y + p.as_slice().iter().zip(z).map(|(pj, zj)| pj * (zj - y).max(0.0)).sum::<f64>() / alpha
    };
    Ok(z.iter().map(|&y| objective(y)).fold(f64::INFINITY, f64::min))
}

/// Stage costs on a complete `L`-ary tree of outcome histories.
///
/// Nodes are stored level by level; the children of node `n` are
/// `n·L + 1 + j` for `j ∈ 0..L`. Depth `N` means histories of length
/// `0..=N`, so leaves sit at depth `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSequenceTree {
    depth: usize,
    branching: usize,
    costs: Vec<f64>,
}

impl CostSequenceTree {
    pub fn new(depth: usize, branching: usize, costs: Vec<f64>) -> Result<Self> {
        let expected = tree_size(depth, branching)?;
        if costs.len() != expected {
            return Err(Error::Dimension(format!(
                "tree of depth {depth} and branching {branching} has {expected} nodes, got {} costs",
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("tree costs must be finite".into()));
        }
        Ok(Self { depth, branching, costs })
    }

    /// Builds the tree by evaluating `cost(history)` at every node, where
    /// `history` holds the 0-based branch indices from the root.
    pub fn from_fn(depth: usize, branching: usize, mut cost: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = tree_size(depth, branching)?;
        let mut costs = Vec::with_capacity(n);
        let mut histories: Vec<Vec<usize>> = vec![Vec::new()];
        costs.push(cost(&[]));
        for _ in 0..depth {
            let mut next = Vec::with_capacity(histories.len() * branching);
            for h in &histories {
                for j in 0..branching {
                    let mut child = h.clone();
                    child.push(j);
                    costs.push(cost(&child));
                    next.push(child);
                }
            }
            histories = next;
        }
        Self::new(depth, branching, costs)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Number of nodes with children.
    pub fn interior_count(&self) -> usize {
        self.costs.len() - self.branching.pow(self.depth as u32)
    }
}

fn tree_size(depth: usize, branching: usize) -> Result<usize> {
    if branching == 0 {
        return Err(Error::Parameter("branching must be at least 1".into()));
    }
    let mut total: usize = 0;
    let mut level: usize = 1;
    for h in 0..=depth {
        total = total
            .checked_add(level)
            .ok_or_else(|| Error::Parameter("cost tree is too large".into()))?;
        if h < depth {
            level = level
                .checked_mul(branching)
                .ok_or_else(|| Error::Parameter("cost tree is too large".into()))?;
        }
    }
    Ok(total)
}

/// Nested risk `Z₀ + ρ(Z₁ + ρ(Z₂ + … ρ(Z_N)))` by backward recursion.
pub fn compose_risk(tree: &CostSequenceTree, env: &RiskEnvelope) -> Result<f64> {
    if tree.branching != env.dim() {
        return Err(Error::Dimension(format!(
            "tree branching {} does not match envelope dimension {}",
            tree.branching,
            env.dim()
        )));
    }
    let computed;
    let vertices = if env.vertices().is_empty() {
        computed = enumerate_vertices(env)?;
        &computed[..]
    } else {
        env.vertices()
    };
    compose_risk_with(tree, vertices)
}

/// [`compose_risk`] over an explicit vertex list.
pub fn compose_risk_with(tree: &CostSequenceTree, vertices: &[Pmf]) -> Result<f64> {
    let l = tree.branching;
    let mut values = tree.costs.clone();
    for n in (0..tree.interior_count()).rev() {
        let first = n * l + 1;
        let risk = evaluate_risk(vertices, &values[first..first + l])?;
        values[n] += risk;
    }
    Ok(values[0])
}
