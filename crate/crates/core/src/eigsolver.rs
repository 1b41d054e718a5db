//! Regularized generalized eigenproblem `A B = D B Gamma` with
//! `A = beta F + (1 - beta) P` and `D = gamma G + alpha Q + K + eps I`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MdaError, Result};
use crate::kernel::GramMatrix;
use crate::scatter::{trace_form, ScatterSet};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// How many leading components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRule {
    Fixed(usize),
    /// Smallest `q` whose leading eigenvalues reach this fraction of the sum
    /// of all positive eigenvalues.
    Energy(f64),
}

impl ComponentRule {
    pub fn validate(self) -> Result<()> {
        match self {
            ComponentRule::Fixed(0) => Err(MdaError::InvalidParameter(
                "component count must be at least 1".into(),
            )),
            ComponentRule::Energy(f) if !(f > 0.0 && f <= 1.0) => Err(MdaError::InvalidParameter(
                format!("energy fraction must lie in (0, 1], got {f}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub rule: ComponentRule,
}

impl Default for HyperParams {
    /// Every measure on an equal footing, with the stabilizing ridge.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 1.0,
            epsilon: DEFAULT_EPSILON,
            rule: ComponentRule::Energy(0.96),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(MdaError::InvalidParameter(format!("{what} out of range: {v}")))
        };
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", self.beta);
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma);
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", self.epsilon);
        }
        self.rule.validate()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Numerator and denominator matrices, each symmetrized after assembly.
pub fn assemble(
    scatter: &ScatterSet,
    k_centered: &GramMatrix,
    hp: &HyperParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    hp.validate()?;
    let n = scatter.n();
    if k_centered.n() != n {
        return Err(MdaError::ShapeMismatch(format!(
            "measures are {n}x{n}, gram is {}x{}",
            k_centered.n(),
            k_centered.n()
        )));
    }
    let a = &scatter.f * hp.beta + &scatter.p * (1.0 - hp.beta);
    let mut d = &scatter.g * hp.gamma + &scatter.q * hp.alpha + k_centered.values();
    for i in 0..n {
        d[(i, i)] += hp.epsilon;
    }
    Ok((symmetrize(a), symmetrize(d)))
}

/// Generalized eigenvectors (columns of `b`, `b^T D b = I`) and their
/// eigenvalues in descending order, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub b: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl Projection {
    pub fn q(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    /// Number of leading components the rule keeps out of those available.
    pub fn count_for(&self, rule: ComponentRule) -> usize {
        let avail = self.q();
        match rule {
            ComponentRule::Fixed(q) => q.min(avail),
            ComponentRule::Energy(fraction) => {
                let total: f64 = self.eigenvalues.iter().sum();
                let target = fraction * total * (1.0 - 1e-12);
                let mut acc = 0.0;
                for (i, &l) in self.eigenvalues.iter().enumerate() {
                    acc += l;
                    if acc >= target {
                        return i + 1;
                    }
                }
                avail
            }
        }
    }

    /// Keeps the leading components selected by `rule`.
    pub fn select(&self, rule: ComponentRule) -> Result<Projection> {
        rule.validate()?;
        let q = self.count_for(rule);
        Ok(Projection {
            b: self.b.columns(0, q).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, q).into_owned(),
        })
    }

    /// `b * Gamma^{-1/2}`.
    pub fn scaled_b(&self) -> DMatrix<f64> {
        let mut out = self.b.clone();
        for (mut col, &l) in out.column_iter_mut().zip(self.eigenvalues.iter()) {
            col /= l.sqrt();
        }
        out
    }
}

/// Pivots of an unpivoted Cholesky pass, stopping at the first failure.
fn min_pivot(d: &DMatrix<f64>) -> f64 {
    let n = d.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut worst = f64::INFINITY;
    for j in 0..n {
        let mut piv = d[(j, j)];
        for k in 0..j {
            piv -= l[(j, k)] * l[(j, k)];
        }
        worst = worst.min(piv);
        if !(piv > 0.0) {
            return piv;
        }
        let ljj = piv.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = d[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    worst
}

/// Solves for every component with eigenvalue above `rel_cutoff * lambda_max`.
///
/// `D = L L^T`, then the symmetric matrix `L^{-1} A L^{-T}` is diagonalized
/// and the eigenvectors mapped back with `B = L^{-T} V`. Each column's entry
/// of largest magnitude is made positive.
pub fn solve_all(a: &DMatrix<f64>, d: &DMatrix<f64>, rel_cutoff: f64) -> Result<Projection> {
    let n = a.nrows();
    if !a.is_square() || d.shape() != a.shape() {
        return Err(MdaError::ShapeMismatch(format!(
            "numerator {:?} and denominator {:?} must be equal square shapes",
            a.shape(),
            d.shape()
        )));
    }
    if n == 0 {
        return Err(MdaError::NoPositiveEigenvalue);
    }
    let chol = d.clone().cholesky().ok_or_else(|| MdaError::Factorization {
        min_pivot: min_pivot(d),
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or(MdaError::Factorization { min_pivot: 0.0 })?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(MdaError::Factorization { min_pivot: 0.0 })?;
    let eig = SymmetricEigen::new(symmetrize(c));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let lmax = eig.eigenvalues[order[0]];
    if !(lmax > 0.0) {
        return Err(MdaError::NoPositiveEigenvalue);
    }
    let keep: Vec<usize> = order
        .into_iter()
        .take_while(|&i| eig.eigenvalues[i] > rel_cutoff * lmax)
        .collect();

    let v = DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
    let mut b = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or(MdaError::Factorization { min_pivot: 0.0 })?;
    for mut col in b.column_iter_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.eigenvalues[i]));
    Ok(Projection { b, eigenvalues })
}

/// Solves and keeps the leading components chosen by `rule`. Components with
/// eigenvalue at or below `DEFAULT_EPSILON * lambda_max` are discarded first.
pub fn solve(a: &DMatrix<f64>, d: &DMatrix<f64>, rule: ComponentRule) -> Result<Projection> {
    rule.validate()?;
    solve_all(a, d, DEFAULT_EPSILON)?.select(rule)
}

/// Trace ratio `tr(B^T A B) / tr(B^T D B)`.
pub fn objective_value(a: &DMatrix<f64>, d: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if b.nrows() != a.nrows() {
        return Err(MdaError::ShapeMismatch(format!(
            "projection has {} rows, matrices are {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    let den = trace_form(d, b);
    if den <= 0.0 {
        return Err(MdaError::ZeroDenominator);
    }
    Ok(trace_form(a, b) / den)
}

/// `|A B - D B Gamma|_F`.
pub fn residual(a: &DMatrix<f64>, d: &DMatrix<f64>, proj: &Projection) -> f64 {
    let mut db = d * &proj.b;
    for (mut col, &l) in db.column_iter_mut().zip(proj.eigenvalues.iter()) {
        col *= l;
    }
    (a * &proj.b - db).norm()
}
