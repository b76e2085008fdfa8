use serde::Serialize;

use super::expr::{AffExpr, AffMat, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Cone membership required of a constraint's affine rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "cone", content = "dim", rename_all = "lowercase")]
pub enum Cone {
    /// All rows equal zero.
    Zero(usize),
    /// All rows nonnegative.
    Nonneg(usize),
    /// `‖rows[1..]‖₂ ≤ rows[0]`.
    Soc(usize),
    /// Symmetric `n × n` matrix, stored as its upper triangle column by column:
    /// `(0,0), (0,1), (1,1), (0,2), …`.
    Psd(usize),
}

impl Cone {
    /// Number of affine rows the cone consumes.
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Constraint {
    pub label: String,
    pub cone: Cone,
    pub rows: Vec<AffExpr>,
}

/// Handle returned by the constraint builders; indexes `ConicProgram::constraints`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConstraintId(pub usize);

/// Symmetric matrix variable with `n(n+1)/2` scalar unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymMatVar {
    pub n: usize,
    first: usize,
}

impl SymMatVar {
    pub fn var(&self, i: usize, j: usize) -> Var {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        Var(self.first + j * (j + 1) / 2 + i)
    }

    pub fn expr(&self) -> AffMat {
        AffMat::from_fn(self.n, self.n, |i, j| AffExpr::var(self.var(i, j)))
    }

    pub fn value(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.n, self.n, |i, j| x[self.var(i, j).0])
    }
}

/// General `rows × cols` matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    pub rows: usize,
    pub cols: usize,
    first: usize,
}

impl MatVar {
    pub fn var(&self, i: usize, j: usize) -> Var {
        Var(self.first + i * self.cols + j)
    }

    pub fn expr(&self) -> AffMat {
        AffMat::from_fn(self.rows, self.cols, |i, j| AffExpr::var(self.var(i, j)))
    }

    pub fn value(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| x[self.var(i, j).0])
    }
}

/// Linear objective over products of zero, nonnegative, second-order and
/// PSD cones. Always a minimization.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConicProgram {
    var_names: Vec<String>,
    objective: AffExpr,
    constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.var_names[v.0]
    }

    pub fn objective(&self) -> &AffExpr {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.var_names.push(name.into());
        Var(self.var_names.len() - 1)
    }

    pub fn add_vars(&mut self, n: usize, name: &str) -> Vec<Var> {
        (0..n).map(|i| self.add_var(format!("{name}[{i}]"))).collect()
    }

    pub fn add_sym_var(&mut self, n: usize, name: &str) -> SymMatVar {
        let first = self.n_vars();
        for j in 0..n {
            for i in 0..=j {
                self.add_var(format!("{name}[{i},{j}]"));
            }
        }
        SymMatVar { n, first }
    }

    pub fn add_mat_var(&mut self, rows: usize, cols: usize, name: &str) -> MatVar {
        let first = self.n_vars();
        for i in 0..rows {
            for j in 0..cols {
                self.add_var(format!("{name}[{i},{j}]"));
            }
        }
        MatVar { rows, cols, first }
    }

    /// Sets the expression to minimize.
    pub fn minimize(&mut self, objective: AffExpr) -> Result<()> {
        self.check_expr(&objective)?;
        self.objective = objective;
        Ok(())
    }

    fn check_expr(&self, e: &AffExpr) -> Result<()> {
        match e.max_var() {
            Some(v) if v >= self.n_vars() => {
                Err(Error::Dimension(format!("variable {v} not declared ({} variables)", self.n_vars())))
            }
            _ => Ok(()),
        }
    }

    fn push(&mut self, label: &str, cone: Cone, rows: Vec<AffExpr>) -> Result<ConstraintId> {
        if rows.len() != cone.rows() {
            return Err(Error::Dimension(format!(
                "{label}: cone {cone:?} needs {} rows, got {}",
                cone.rows(),
                rows.len()
            )));
        }
        for r in &rows {
            self.check_expr(r)?;
        }
        self.constraints.push(Constraint { label: label.to_string(), cone, rows });
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    /// Every expression equals zero.
    pub fn add_zero(&mut self, label: &str, rows: Vec<AffExpr>) -> Result<ConstraintId> {
        let n = rows.len();
        self.push(label, Cone::Zero(n), rows)
    }

    /// Every expression is nonnegative.
    pub fn add_linear(&mut self, label: &str, rows: Vec<AffExpr>) -> Result<ConstraintId> {
        let n = rows.len();
        self.push(label, Cone::Nonneg(n), rows)
    }

    /// `‖tail‖₂ ≤ head`.
    pub fn add_soc(&mut self, label: &str, head: AffExpr, tail: Vec<AffExpr>) -> Result<ConstraintId> {
        let mut rows = Vec::with_capacity(tail.len() + 1);
        rows.push(head);
        rows.extend(tail);
        if rows.len() < 2 {
            return Err(Error::Dimension(format!("{label}: second-order cone needs dimension ≥ 2")));
        }
        let n = rows.len();
        self.push(label, Cone::Soc(n), rows)
    }

    /// `u·v ≥ ‖w‖²` with `u, v ≥ 0`, as the cone `‖(2w, u − v)‖ ≤ u + v`.
    pub fn add_rotated_soc(&mut self, label: &str, u: AffExpr, v: AffExpr, w: Vec<AffExpr>) -> Result<ConstraintId> {
        let mut tail: Vec<AffExpr> = w.iter().map(|e| e.scaled(2.0)).collect();
        tail.push(&u - &v);
        self.add_soc(label, &u + &v, tail)
    }

    /// `m ⪰ 0` for a square affine matrix. Only the upper triangle is read;
    /// the lower triangle must mirror it.
    pub fn add_psd_block(&mut self, label: &str, m: &AffMat) -> Result<ConstraintId> {
        let (r, c) = m.shape();
        if r != c || r == 0 {
            return Err(Error::Dimension(format!("{label}: PSD block must be square, got {r}×{c}")));
        }
        let mut rows = Vec::with_capacity(r * (r + 1) / 2);
        for j in 0..r {
            for i in 0..=j {
                if m.get(i, j) != m.get(j, i) {
                    let diff = m.get(i, j) - m.get(j, i);
                    if !diff.terms().iter().all(|t| t.1.abs() < 1e-12) || diff.constant_part().abs() > 1e-12 {
                        return Err(Error::Dimension(format!("{label}: block is not symmetric at ({i}, {j})")));
                    }
                }
                rows.push(m.get(i, j).clone());
            }
        }
        self.push(label, Cone::Psd(r), rows)
    }

    /// `m ⪰ ε·I`, the realization used for strict matrix inequalities.
    pub fn add_psd_strict(&mut self, label: &str, m: &AffMat, eps: f64) -> Result<ConstraintId> {
        let shift = AffMat::identity(m.nrows()).scaled(eps);
        self.add_psd_block(label, &m.sub(&shift)?)
    }

    /// `‖v‖² + linear ≤ t`, encoded as one second-order cone:
    /// with `s = t − linear`, `‖(v, (s − 1)/2)‖ ≤ (s + 1)/2`.
    pub fn quadratic_leq(&mut self, label: &str, v: Vec<AffExpr>, linear: AffExpr, t: AffExpr) -> Result<ConstraintId> {
        let s = &t - &linear;
        let head = AffExpr::linear_combination([(0.5, &s), (0.5, &AffExpr::constant(1.0))]);
        let last = AffExpr::linear_combination([(0.5, &s), (-0.5, &AffExpr::constant(1.0))]);
        let mut tail = v;
        tail.push(last);
        self.add_soc(label, head, tail)
    }

    /// `zᵀHz + linear ≤ t` for a positive semidefinite `H`, via `H = MᵀM`.
    pub fn psd_quadratic_leq(
        &mut self,
        label: &str,
        z: &[AffExpr],
        h: &Mat,
        linear: AffExpr,
        t: AffExpr,
    ) -> Result<ConstraintId> {
        if h.shape() != (z.len(), z.len()) {
            return Err(Error::Dimension(format!("{label}: Hessian shape {:?} for {} terms", h.shape(), z.len())));
        }
        let m = linalg::psd_sqrt(h)?;
        let v = AffMat::column(z.to_vec()).left_mul(&m)?.into_entries();
        self.quadratic_leq(label, v, linear, t)
    }

    /// Adds a scalar `t` with `t ≤ det(W)^{1/n}` and returns it; maximize `t`
    /// to maximize the determinant. Uses a lower-triangular `Z` with
    /// `[W Z; Zᵀ Diag(Z)] ⪰ 0` and `t ≤ (Π Zᵢᵢ)^{1/n}` through a tower of
    /// rotated cones. The block also forces `W ⪰ 0`.
    pub fn maximize_detroot(&mut self, label: &str, w: &AffMat) -> Result<Var> {
        let n = w.nrows();
        if w.ncols() != n || n == 0 {
            return Err(Error::Dimension(format!("{label}: det-root argument must be square")));
        }
        let t = self.add_var(format!("{label}.t"));
        let mut z_vars = vec![vec![None; n]; n];
        for (i, row) in z_vars.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate().take(i + 1) {
                *slot = Some(self.add_var(format!("{label}.Z[{i},{j}]")));
            }
        }
        let z = AffMat::from_fn(n, n, |i, j| z_vars[i][j].map_or_else(AffExpr::zero, AffExpr::var));
        let diag = AffMat::from_fn(n, n, |i, j| if i == j { z.get(i, i).clone() } else { AffExpr::zero() });
        let block = AffMat::block(&[vec![Some(w.clone()), Some(z.clone())], vec![Some(z.transpose()), Some(diag)]])?;
        self.add_psd_block(&format!("{label}.hypograph"), &block)?;

        let mut level: Vec<AffExpr> = (0..n).map(|i| z.get(i, i).clone()).collect();
        let width = n.next_power_of_two();
        level.resize(width, AffExpr::var(t));
        let mut depth = 0;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2);
            for (k, pair) in level.chunks(2).enumerate() {
                let g = self.add_var(format!("{label}.g{depth}_{k}"));
                self.add_rotated_soc(
                    &format!("{label}.geomean{depth}_{k}"),
                    pair[0].clone(),
                    pair[1].clone(),
                    vec![AffExpr::var(g)],
                )?;
                next.push(AffExpr::var(g));
            }
            level = next;
            depth += 1;
        }
        self.add_linear(&format!("{label}.top"), vec![&level[0] - &AffExpr::var(t)])?;
        Ok(t)
    }

    /// Writes a self-describing JSON dump (variables, objective, constraints
    /// with cone tags and affine rows).
    pub fn dump(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Totals by cone kind: `(zero rows, nonneg rows, soc cones, psd blocks)`.
    pub fn cone_counts(&self) -> (usize, usize, usize, usize) {
        let mut out = (0, 0, 0, 0);
        for c in &self.constraints {
            match c.cone {
                Cone::Zero(n) => out.0 += n,
                Cone::Nonneg(n) => out.1 += n,
                Cone::Soc(_) => out.2 += 1,
                Cone::Psd(_) => out.3 += 1,
            }
        }
        out
    }
}
