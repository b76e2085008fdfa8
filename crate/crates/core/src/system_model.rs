//! Uncertain linear dynamics `x⁺ = A_j x + B_j u`, `j ~ p`, together with the
//! quadratic stage cost, norm-ball constraint sets and ellipsoids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, from_rows, lambda_min, to_rows, Mat, Vector};
use crate::risk_envelope::Pmf;

/// Absolute tolerance on signed constraint margins in closed-loop accounting.
pub const VIOLATION_TOL: f64 = 1e-6;

/// Branch matrices `{A_j, B_j}` with the disturbance pmf.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: Vec<Mat>,
    b: Vec<Mat>,
    p: Pmf,
}

impl SystemModel {
    pub fn new(a: Vec<Mat>, b: Vec<Mat>, p: Pmf) -> Result<Self> {
        let l = p.len();
        if a.len() != l || b.len() != l {
            return Err(Error::Dimension(format!(
                "pmf has {l} outcomes but {} A and {} B matrices were given",
                a.len(),
                b.len()
            )));
        }
        let nx = a[0].nrows();
        let nu = b[0].ncols();
        if nx == 0 || nu == 0 {
            return Err(Error::Dimension("state and input dimensions must be positive".into()));
        }
        for (j, (aj, bj)) in a.iter().zip(&b).enumerate() {
            if aj.shape() != (nx, nx) || bj.shape() != (nx, nu) {
                return Err(Error::Dimension(format!(
                    "branch {j}: A is {:?}, B is {:?}, expected ({nx}, {nx}) and ({nx}, {nu})",
                    aj.shape(),
                    bj.shape()
                )));
            }
            if !linalg::is_finite(aj) || !linalg::is_finite(bj) {
                return Err(Error::Parameter(format!("branch {j} has non-finite entries")));
            }
        }
        Ok(Self { a, b, p })
    }

    pub fn nx(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn nu(&self) -> usize {
        self.b[0].ncols()
    }

    /// Number of disturbance outcomes `L`.
    pub fn branches(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, j: usize) -> &Mat {
        &self.a[j]
    }

    pub fn b(&self, j: usize) -> &Mat {
        &self.b[j]
    }

    pub fn pmf(&self) -> &Pmf {
        &self.p
    }

    /// `A_j + B_j F`.
    pub fn closed_loop(&self, j: usize, f: &Mat) -> Mat {
        &self.a[j] + &self.b[j] * f
    }

    /// `A_j x + B_j u` for the 0-based branch `j`.
    pub fn step(&self, x: &Vector, u: &Vector, j: usize) -> Result<Vector> {
        if j >= self.branches() {
            return Err(Error::Parameter(format!("branch {j} out of range 0..{}", self.branches())));
        }
        if x.len() != self.nx() || u.len() != self.nu() {
            return Err(Error::Dimension(format!(
                "step expects x ∈ R^{} and u ∈ R^{}, got {} and {}",
                self.nx(),
                self.nu(),
                x.len(),
                u.len()
            )));
        }
        Ok(&self.a[j] * x + &self.b[j] * u)
    }
}

/// Stage cost weights `Q ≻ 0`, `R ≻ 0`.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: Mat,
    r: Mat,
}

impl CostWeights {
    pub fn new(q: Mat, r: Mat) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() || m.nrows() == 0 {
                return Err(Error::Dimension(format!("{name} must be square and nonempty")));
            }
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::Parameter(format!("{name} must be symmetric")));
            }
            if lambda_min(m) <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be positive definite")));
            }
        }
        Ok(Self { q: linalg::symmetrize(&q), r: linalg::symmetrize(&r) })
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    /// `C(x, u) = xᵀQx + uᵀRu`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> Result<f64> {
        if x.len() != self.q.nrows() || u.len() != self.r.nrows() {
            return Err(Error::Dimension("stage cost argument dimensions".into()));
        }
        Ok(x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }
}

/// Membership flag plus signed margin (constraint value minus bound).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub inside: bool,
    pub margin: f64,
}

impl Membership {
    fn from_margin(margin: f64) -> Self {
        Self { inside: margin <= VIOLATION_TOL, margin }
    }
}

/// `𝕏 = {x : ‖T_x x‖ ≤ x_max}` and `𝕌 = {u : ‖T_u u‖ ≤ u_max}`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    tx: Mat,
    x_max: f64,
    tu: Mat,
    u_max: f64,
}

impl ConstraintSet {
    pub fn new(tx: Mat, x_max: f64, tu: Mat, u_max: f64) -> Result<Self> {
        if !(x_max > 0.0 && u_max > 0.0) || !x_max.is_finite() || !u_max.is_finite() {
            return Err(Error::Parameter("x_max and u_max must be positive and finite".into()));
        }
        if tx.nrows() == 0 || tu.nrows() == 0 {
            return Err(Error::Dimension("constraint matrices must be nonempty".into()));
        }
        Ok(Self { tx, x_max, tu, u_max })
    }

    pub fn tx(&self) -> &Mat {
        &self.tx
    }

    pub fn tu(&self) -> &Mat {
        &self.tu
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn in_state_set(&self, x: &Vector) -> Result<Membership> {
        if x.len() != self.tx.ncols() {
            return Err(Error::Dimension("state dimension".into()));
        }
        Ok(Membership::from_margin((&self.tx * x).norm() - self.x_max))
    }

    pub fn in_control_set(&self, u: &Vector) -> Result<Membership> {
        if u.len() != self.tu.ncols() {
            return Err(Error::Dimension("control dimension".into()));
        }
        Ok(Membership::from_margin((&self.tu * u).norm() - self.u_max))
    }
}

/// `ℰ(W) = {x : xᵀW⁻¹x ≤ 1}`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    w: Mat,
    w_inv: Mat,
    w_inv_sqrt: Mat,
}

impl Ellipsoid {
    pub fn new(w: Mat) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension("ellipsoid shape must be square".into()));
        }
        let w = linalg::symmetrize(&w);
        if lambda_min(&w) <= 0.0 {
            return Err(Error::Parameter("ellipsoid shape must be positive definite".into()));
        }
        let w_inv = linalg::pd_inverse(&w)?;
        let w_inv_sqrt = linalg::pd_inv_sqrt(&w)?;
        Ok(Self { w, w_inv, w_inv_sqrt })
    }

    pub fn shape(&self) -> &Mat {
        &self.w
    }

    pub fn shape_inv(&self) -> &Mat {
        &self.w_inv
    }

    /// Symmetric `W^{-1/2}`; `x ∈ ℰ ⇔ ‖W^{-1/2}x‖ ≤ 1`.
    pub fn shape_inv_sqrt(&self) -> &Mat {
        &self.w_inv_sqrt
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Margin is `‖W^{-1/2}x‖ − 1`.
    pub fn in_ellipsoid(&self, x: &Vector) -> Result<Membership> {
        if x.len() != self.dim() {
            return Err(Error::Dimension("state dimension".into()));
        }
        Ok(Membership::from_margin((&self.w_inv_sqrt * x).norm() - 1.0))
    }
}

/// Inverse-CDF sampling of a 0-based branch index from a uniform draw in `[0, 1)`.
pub fn sample_branch(p: &Pmf, uniform: f64) -> usize {
    let mut acc = 0.0;
    for (j, pj) in p.as_slice().iter().enumerate() {
        acc += pj;
        if uniform < acc {
            return j;
        }
    }
    p.len() - 1
}

/// Dynamics, weights and constraints of one control problem.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: SystemModel,
    pub weights: CostWeights,
    pub constraints: ConstraintSet,
}

impl Plant {
    pub fn new(model: SystemModel, weights: CostWeights, constraints: ConstraintSet) -> Result<Self> {
        let (nx, nu) = (model.nx(), model.nu());
        if weights.q().nrows() != nx || weights.r().nrows() != nu {
            return Err(Error::Dimension("cost weights do not match the model dimensions".into()));
        }
        if constraints.tx().ncols() != nx || constraints.tu().ncols() != nu {
            return Err(Error::Dimension("constraint matrices do not match the model dimensions".into()));
        }
        Ok(Self { model, weights, constraints })
    }

    pub fn nx(&self) -> usize {
        self.model.nx()
    }

    pub fn nu(&self) -> usize {
        self.model.nu()
    }

    pub fn branches(&self) -> usize {
        self.model.branches()
    }

    /// The second-order benchmark with branch-dependent pole
    /// `w̄ ∈ {0.8, 1.2, −0.4}`, `p = (0.5, 0.3, 0.2)`.
    pub fn second_order_benchmark() -> Self {
        ModelFile::second_order_benchmark().into_plant().expect("benchmark data is valid")
    }
}

/// On-disk model schema. Matrices are lists of rows.
///
/// ```toml
/// nx = 2
/// nu = 1
/// L = 1
/// A = [[[0.5, 0.0], [0.0, 0.5]]]
/// B = [[[1.0], [0.0]]]
/// p = [1.0]
/// Q = [[1.0, 0.0], [0.0, 1.0]]
/// R = [[1.0]]
/// Tx = [[1.0, 0.0], [0.0, 1.0]]
/// x_max = 1.0
/// Tu = [[1.0]]
/// u_max = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub nx: usize,
    pub nu: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    pub p: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Tx")]
    pub tx: Vec<Vec<f64>>,
    pub x_max: f64,
    #[serde(rename = "Tu")]
    pub tu: Vec<Vec<f64>>,
    pub u_max: f64,
}

impl ModelFile {
    pub fn into_plant(&self) -> Result<Plant> {
        if self.a.len() != self.l || self.b.len() != self.l || self.p.len() != self.l {
            return Err(Error::Config(format!(
                "L = {} but A, B, p have {}, {}, {} entries",
                self.l,
                self.a.len(),
                self.b.len(),
                self.p.len()
            )));
        }
        let a = self.a.iter().map(|m| from_rows(m)).collect::<Result<Vec<_>>>()?;
        let b = self.b.iter().map(|m| from_rows(m)).collect::<Result<Vec<_>>>()?;
        if a.iter().any(|m| m.shape() != (self.nx, self.nx)) || b.iter().any(|m| m.shape() != (self.nx, self.nu)) {
            return Err(Error::Config(format!("A must be {0}×{0} and B {0}×{1}", self.nx, self.nu)));
        }
        let model = SystemModel::new(a, b, Pmf::nominal(self.p.clone())?)?;
        let weights = CostWeights::new(from_rows(&self.q)?, from_rows(&self.r)?)?;
        let constraints = ConstraintSet::new(from_rows(&self.tx)?, self.x_max, from_rows(&self.tu)?, self.u_max)?;
        Plant::new(model, weights, constraints)
    }

    pub fn from_plant(plant: &Plant) -> Self {
        let m = &plant.model;
        Self {
            nx: m.nx(),
            nu: m.nu(),
            l: m.branches(),
            a: (0..m.branches()).map(|j| to_rows(m.a(j))).collect(),
            b: (0..m.branches()).map(|j| to_rows(m.b(j))).collect(),
            p: m.pmf().as_slice().to_vec(),
            q: to_rows(plant.weights.q()),
            r: to_rows(plant.weights.r()),
            tx: to_rows(plant.constraints.tx()),
            x_max: plant.constraints.x_max(),
            tu: to_rows(plant.constraints.tu()),
            u_max: plant.constraints.u_max(),
        }
    }

    /// Reads a `.toml` or `.json` model file.
    pub fn load(path: &Path) -> Result<Self> {
        load_structured(path)
    }

    pub fn second_order_benchmark() -> Self {
        let a = |w: f64| vec![vec![-0.8, 1.0], vec![0.0, w]];
        Self {
            nx: 2,
            nu: 1,
            l: 3,
            a: vec![a(0.8), a(1.2), a(-0.4)],
            b: vec![vec![vec![0.0], vec![1.0]]; 3],
            p: vec![0.5, 0.3, 0.2],
            q: vec![vec![1.0, 0.0], vec![0.0, 5.0]],
            r: vec![vec![1.0]],
            tx: vec![vec![0.1, 0.0], vec![0.0, 0.5]],
            x_max: 1.0,
            tu: vec![vec![1.0]],
            u_max: 1.0,
        }
    }
}

/// Deserializes TOML or JSON depending on the file extension.
pub(crate) fn load_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn step_examples() {
        let plant = Plant::second_order_benchmark();
        let m = &plant.model;
        let x1 = m.step(&v(&[6.0, 1.0]), &v(&[0.0]), 0).unwrap();
        assert!((x1 - v(&[-3.8, 0.8])).amax() < 1e-15);
        for j in 0..3 {
            assert_eq!(m.step(&v(&[0.0, 0.0]), &v(&[0.0]), j).unwrap(), v(&[0.0, 0.0]));
        }
        assert!(matches!(m.step(&v(&[0.0, 0.0]), &v(&[0.0]), 3), Err(Error::Parameter(_))));
        assert!(matches!(m.step(&v(&[0.0]), &v(&[0.0]), 0), Err(Error::Dimension(_))));

        let ident = SystemModel::new(vec![Mat::identity(2, 2)], vec![Mat::zeros(2, 1)], Pmf::uniform(1).unwrap())
            .unwrap();
        assert_eq!(ident.step(&v(&[1.5, -2.0]), &v(&[3.0]), 0).unwrap(), v(&[1.5, -2.0]));
    }

    #[test]
    fn stage_cost_examples() {
        let plant = Plant::second_order_benchmark();
        let w = &plant.weights;
        assert_eq!(w.stage_cost(&v(&[6.0, 1.0]), &v(&[0.0])).unwrap(), 41.0);
        assert_eq!(w.stage_cost(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), 0.0);
        let id = CostWeights::new(Mat::identity(2, 2), Mat::identity(2, 2)).unwrap();
        assert_eq!(id.stage_cost(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 2.0);
        assert!(w.stage_cost(&v(&[1.0]), &v(&[0.0])).is_err());
    }

    #[test]
    fn weights_must_be_pd() {
        let bad = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(CostWeights::new(bad, Mat::identity(1, 1)).is_err());
        let asym = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(asym, Mat::identity(1, 1)).is_err());
    }

    #[test]
    fn sampling_examples() {
        let p = Pmf::nominal(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(sample_branch(&p, 0.0), 0);
        assert_eq!(sample_branch(&p, 0.79), 1);
        assert_eq!(sample_branch(&p, 0.8), 2);
        assert_eq!(sample_branch(&p, 0.999_999_999), 2);
        let one = Pmf::uniform(1).unwrap();
        assert_eq!(sample_branch(&one, 0.4), 0);
    }

    #[test]
    fn membership_examples() {
        let c = Plant::second_order_benchmark().constraints;
        let m = c.in_state_set(&v(&[6.0, 1.0])).unwrap();
        assert!(m.inside);
        assert!((m.margin - (0.61f64.sqrt() - 1.0)).abs() < 1e-12);
        let m = c.in_state_set(&v(&[20.0, 0.0])).unwrap();
        assert!(!m.inside);
        assert!((m.margin - 1.0).abs() < 1e-12);
        assert!(c.in_state_set(&v(&[0.0, 0.0])).unwrap().inside);
        assert!(c.in_control_set(&v(&[1.0])).unwrap().inside);
        assert!(!c.in_control_set(&v(&[1.1])).unwrap().inside);

        let e = Ellipsoid::new(Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(e.in_ellipsoid(&v(&[0.0, 0.0])).unwrap().inside);
        assert!(e.in_ellipsoid(&v(&[2.0, 0.0])).unwrap().margin.abs() < 1e-12);
        assert!(!e.in_ellipsoid(&v(&[0.0, 1.5])).unwrap().inside);
        assert!(Ellipsoid::new(Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let f = ModelFile::second_order_benchmark();
        let text = toml::to_string(&f).unwrap();
        let back: ModelFile = toml::from_str(&text).unwrap();
        assert_eq!(back, f);
        let plant = back.into_plant().unwrap();
        assert_eq!((plant.nx(), plant.nu(), plant.branches()), (2, 1, 3));
        assert_eq!(ModelFile::from_plant(&plant), f);
    }

    #[test]
    fn model_file_rejects_inconsistent_data() {
        let mut f = ModelFile::second_order_benchmark();
        f.l = 2;
        assert!(f.into_plant().is_err());
        let mut f = ModelFile::second_order_benchmark();
        f.p = vec![0.5, 0.5, 0.0];
        assert!(f.into_plant().is_err());
        let mut f = ModelFile::second_order_benchmark();
        f.tx = vec![vec![1.0]];
        assert!(f.into_plant().is_err());
    }
}
