use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Index of a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Var(pub usize);

/// `Σ cᵢ·x[vᵢ] + constant`, with sorted, merged terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AffExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl AffExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        Self { terms: vec![(v.0, 1.0)], constant: 0.0 }
    }

    pub fn term(v: Var, coef: f64) -> Self {
        Self { terms: vec![(v.0, coef)], constant: 0.0 }.compacted()
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|t| t.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::constant(0.0);
        }
        Self {
            terms: self.terms.iter().map(|(i, c)| (*i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// `Σ wₖ eₖ`, merged in one pass.
    pub fn linear_combination<'a>(parts: impl IntoIterator<Item = (f64, &'a AffExpr)>) -> Self {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for (w, e) in parts {
            if w == 0.0 {
                continue;
            }
            constant += w * e.constant;
            terms.extend(e.terms.iter().map(|(i, c)| (*i, w * c)));
        }
        Self { terms, constant }.compacted()
    }

    fn compacted(mut self) -> Self {
        self.terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }
}

impl From<Var> for AffExpr {
    fn from(v: Var) -> Self {
        AffExpr::var(v)
    }
}

impl From<f64> for AffExpr {
    fn from(c: f64) -> Self {
        AffExpr::constant(c)
    }
}

impl Add for &AffExpr {
    type Output = AffExpr;
    fn add(self, rhs: &AffExpr) -> AffExpr {
        AffExpr::linear_combination([(1.0, self), (1.0, rhs)])
    }
}

impl Add for AffExpr {
    type Output = AffExpr;
    fn add(self, rhs: AffExpr) -> AffExpr {
        &self + &rhs
    }
}

impl AddAssign<&AffExpr> for AffExpr {
    fn add_assign(&mut self, rhs: &AffExpr) {
        *self = &*self + rhs;
    }
}

impl Sub for &AffExpr {
    type Output = AffExpr;
    fn sub(self, rhs: &AffExpr) -> AffExpr {
        AffExpr::linear_combination([(1.0, self), (-1.0, rhs)])
    }
}

impl Sub for AffExpr {
    type Output = AffExpr;
    fn sub(self, rhs: AffExpr) -> AffExpr {
        &self - &rhs
    }
}

impl Neg for &AffExpr {
    type Output = AffExpr;
    fn neg(self) -> AffExpr {
        self.scaled(-1.0)
    }
}

impl Neg for AffExpr {
    type Output = AffExpr;
    fn neg(self) -> AffExpr {
        self.scaled(-1.0)
    }
}

impl Mul<&AffExpr> for f64 {
    type Output = AffExpr;
    fn mul(self, rhs: &AffExpr) -> AffExpr {
        rhs.scaled(self)
    }
}

/// Dense matrix of affine expressions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    rows: usize,
    cols: usize,
    data: Vec<AffExpr>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![AffExpr::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> AffExpr) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn constant(m: &Mat) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| AffExpr::constant(m[(i, j)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| AffExpr::constant(if i == j { 1.0 } else { 0.0 }))
    }

    /// Column vector.
    pub fn column(entries: Vec<AffExpr>) -> Self {
        Self { rows: entries.len(), cols: 1, data: entries }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &AffExpr {
        &self.data[i * self.cols + j]
    }

    /// Entries in row-major order; for a column vector, its entries.
    pub fn entries(&self) -> &[AffExpr] {
        &self.data
    }

    pub fn into_entries(self) -> Vec<AffExpr> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|e| e.scaled(s)).collect() }
    }

    /// `m · self`.
    pub fn left_mul(&self, m: &Mat) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by affine {:?}",
                m.shape(),
                self.shape()
            )));
        }
        Ok(Self::from_fn(m.nrows(), self.cols, |i, j| {
            AffExpr::linear_combination((0..self.rows).map(|k| (m[(i, k)], self.get(k, j))))
        }))
    }

    /// `self · m`.
    pub fn right_mul(&self, m: &Mat) -> Result<Self> {
        if self.cols != m.nrows() {
            return Err(Error::Dimension(format!(
                "cannot multiply affine {:?} by {:?}",
                self.shape(),
                m.shape()
            )));
        }
        Ok(Self::from_fn(self.rows, m.ncols(), |i, j| {
            AffExpr::linear_combination((0..self.cols).map(|k| (m[(k, j)], self.get(i, k))))
        }))
    }

    pub fn add(&self, other: &AffMat) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &AffMat) -> Result<Self> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &AffMat, sign: f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "affine shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| AffExpr::linear_combination([(1.0, a), (sign, b)]))
                .collect(),
        })
    }

    /// Assembles a block matrix. `None` stands for a zero block whose size is
    /// inferred from its row and column neighbours.
    pub fn block(blocks: &[Vec<Option<AffMat>>]) -> Result<Self> {
        let nbr = blocks.len();
        let nbc = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|r| r.len() != nbc) {
            return Err(Error::Dimension("ragged block layout".into()));
        }
        let mut heights = vec![None; nbr];
        let mut widths = vec![None; nbc];
        for (bi, row) in blocks.iter().enumerate() {
            for (bj, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, size) in [(&mut heights[bi], b.rows), (&mut widths[bj], b.cols)] {
                        match slot {
                            Some(s) if *s != size => {
                                return Err(Error::Dimension(format!("block ({bi}, {bj}) does not line up")))
                            }
                            _ => *slot = Some(size),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights
            .into_iter()
            .map(|h| h.ok_or_else(|| Error::Dimension("block row of zeros has unknown height".into())))
            .collect::<Result<_>>()?;
        let widths: Vec<usize> = widths
            .into_iter()
            .map(|w| w.ok_or_else(|| Error::Dimension("block column of zeros has unknown width".into())))
            .collect::<Result<_>>()?;
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = AffMat::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (bj, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for i in 0..b.rows {
                        for j in 0..b.cols {
                            out.data[(r0 + i) * cols + c0 + j] = b.get(i, j).clone();
                        }
                    }
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        Ok(out)
    }

    /// Evaluates at a primal point.
    pub fn eval(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }
}
