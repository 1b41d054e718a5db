//! Gaussian kernel, median-heuristic bandwidth, Gram matrices and the two
//! centering maps applied to training and target Grams.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MultiDomainDataset;
use crate::error::{MdaError, Result};

/// Kernel width in units of squared feature distance:
/// `k(x, y) = exp(-|x - y|^2 / (2 sigma))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self(sigma))
        } else {
            Err(MdaError::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {sigma}"
            )))
        }
    }

    pub fn sigma(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = MdaError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Bandwidth> for f64 {
    fn from(b: Bandwidth) -> f64 {
        b.0
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn rbf_unchecked(x: &[f64], y: &[f64], bw: Bandwidth) -> f64 {
    (-sq_dist(x, y) / (2.0 * bw.0)).exp()
}

pub fn rbf(x: &[f64], y: &[f64], bw: Bandwidth) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MdaError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(rbf_unchecked(x, y, bw))
}

/// Median of the squared Euclidean distances over unordered pairs `i < j`.
/// For an even number of pairs the lower median is returned, so the result
/// is always a realized distance.
pub fn median_heuristic(data: &MultiDomainDataset) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(MdaError::TooFew {
            what: "instances for the median heuristic",
            required: 2,
            found: n,
        });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(data.features(i), data.features(j)));
        }
    }
    let k = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*median)
}

/// Square kernel matrix over one instance set, raw or centered.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    centered: bool,
}

impl GramMatrix {
    /// Wraps an existing symmetric matrix as a raw Gram.
    pub fn from_raw(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(MdaError::ShapeMismatch(format!(
                "gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self {
            values,
            centered: false,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Kernel evaluations between target rows and training columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGram {
    values: DMatrix<f64>,
    centered: bool,
}

impl CrossGram {
    pub fn from_raw(values: DMatrix<f64>) -> Self {
        Self {
            values,
            centered: false,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }
}

/// Raw Gram matrix in dataset order. Only the upper triangle is evaluated;
/// the lower one is mirrored so the result is exactly symmetric.
pub fn gram(data: &MultiDomainDataset, bw: Bandwidth) -> GramMatrix {
    let n = data.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let v = rbf_unchecked(data.features(i), data.features(j), bw);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    GramMatrix {
        values: k,
        centered: false,
    }
}

pub fn cross_gram(
    target: &MultiDomainDataset,
    train: &MultiDomainDataset,
    bw: Bandwidth,
) -> Result<CrossGram> {
    if target.dim() != train.dim() {
        return Err(MdaError::DimensionMismatch {
            expected: train.dim(),
            got: target.dim(),
        });
    }
    let values = DMatrix::from_fn(target.len(), train.len(), |r, c| {
        rbf_unchecked(target.features(r), train.features(c), bw)
    });
    Ok(CrossGram::from_raw(values))
}

/// `K - 1_n K - K 1_n + 1_n K 1_n`, where `1_n` is the `n x n` matrix with
/// every entry `1/n`.
pub fn center_train(k: &GramMatrix) -> Result<GramMatrix> {
    if k.centered {
        return Err(MdaError::AlreadyCentered);
    }
    Ok(GramMatrix {
        values: double_center(&k.values),
        centered: true,
    })
}

/// `Kt - 1_{nt} Kt - Kt 1_n + 1_{nt} Kt 1_n`. The column means are taken
/// over the target rows, the row means over the training columns.
pub fn center_test(kt: &CrossGram, k_raw: &GramMatrix) -> Result<CrossGram> {
    if kt.centered {
        return Err(MdaError::AlreadyCentered);
    }
    if k_raw.centered {
        return Err(MdaError::InvalidParameter(
            "test centering expects the raw training gram".into(),
        ));
    }
    if kt.values.ncols() != k_raw.n() {
        return Err(MdaError::ShapeMismatch(format!(
            "cross gram has {} columns, training gram is {}x{}",
            kt.values.ncols(),
            k_raw.n(),
            k_raw.n()
        )));
    }
    Ok(CrossGram {
        values: double_center(&kt.values),
        centered: true,
    })
}

fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = k.shape();
    if rows == 0 || cols == 0 {
        return k.clone();
    }
    let col_means: Vec<f64> = (0..cols).map(|c| k.column(c).sum() / rows as f64).collect();
    let row_means: Vec<f64> = (0..rows).map(|r| k.row(r).sum() / cols as f64).collect();
    let grand = col_means.iter().sum::<f64>() / cols as f64;
    DMatrix::from_fn(rows, cols, |r, c| k[(r, c)] - col_means[c] - row_means[r] + grand)
}
