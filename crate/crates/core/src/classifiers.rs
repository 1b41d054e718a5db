//! 1-nearest-neighbor classification in projected space and the KPCA / KFD
//! baselines, which reuse the kernel basis and eigensolver.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::MultiDomainDataset;
use crate::eigsolver::{solve_all, ComponentRule, HyperParams, Projection, DEFAULT_EPSILON};
use crate::error::{MdaError, Result};
use crate::kernel::Bandwidth;
use crate::pipeline::{KernelBasis, PreparedFit};

#[derive(Debug, Clone)]
pub struct NnModel {
    refs: DMatrix<f64>,
    labels: Vec<usize>,
}

impl NnModel {
    pub fn new(refs: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if refs.nrows() != labels.len() {
            return Err(MdaError::ShapeMismatch(format!(
                "{} reference rows but {} labels",
                refs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { refs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Label of the Euclidean-nearest reference for each query row. Ties go to
/// the lowest reference index.
pub fn nn1_predict(model: &NnModel, queries: &DMatrix<f64>) -> Result<Vec<usize>> {
    if model.is_empty() {
        return Err(MdaError::TooFew {
            what: "reference points",
            required: 1,
            found: 0,
        });
    }
    if queries.ncols() != model.refs.ncols() {
        return Err(MdaError::DimensionMismatch {
            expected: model.refs.ncols(),
            got: queries.ncols(),
        });
    }
    let q = queries.ncols();
    let n = model.refs.nrows();
    // column-major storage: copy references row-wise for a tight inner loop
    let refs: Vec<f64> = (0..n)
        .flat_map(|r| (0..q).map(move |c| (r, c)))
        .map(|(r, c)| model.refs[(r, c)])
        .collect();
    let mut out = Vec::with_capacity(queries.nrows());
    let mut query = vec![0.0; q];
    for row in queries.row_iter() {
        for (dst, v) in query.iter_mut().zip(row.iter()) {
            *dst = *v;
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, r) in refs.chunks_exact(q.max(1)).enumerate().take(n) {
            let d: f64 = if q == 0 {
                0.0
            } else {
                r.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        out.push(model.labels[best]);
    }
    Ok(out)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(MdaError::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(MdaError::EmptyDataset);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Kpca,
    Kfd,
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    basis: Arc<KernelBasis>,
    projection: Projection,
}

impl BaselineModel {
    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn transform_train(&self) -> DMatrix<f64> {
        self.basis.project_train(&self.projection, true)
    }

    pub fn transform(&self, data: &MultiDomainDataset) -> Result<DMatrix<f64>> {
        self.basis.project(data, &self.projection)
    }

    /// 1NN accuracy of `target` against the projected training set.
    pub fn accuracy(&self, target: &MultiDomainDataset) -> Result<f64> {
        if !target.is_labeled() {
            return Err(MdaError::Unlabeled);
        }
        let nn = NnModel::new(self.transform_train(), self.basis.train().labels())?;
        let pred = nn1_predict(&nn, &self.transform(target)?)?;
        accuracy(&pred, &target.labels())
    }
}

/// Kernel PCA: leading eigenvectors `V` of the centered Gram, with training
/// features `K_c V Lambda^{-1/2}`.
pub fn kpca_fit(data: &MultiDomainDataset, bw: Bandwidth, rule: ComponentRule) -> Result<BaselineModel> {
    rule.validate()?;
    if data.len() < 2 {
        return Err(MdaError::TooFew {
            what: "instances for KPCA",
            required: 2,
            found: data.len(),
        });
    }
    let basis = KernelBasis::new(data.clone(), bw)?;
    let kc = basis.k_centered().values();
    let n = kc.nrows();
    let projection = solve_all(kc, &DMatrix::identity(n, n), DEFAULT_EPSILON)?.select(rule)?;
    Ok(BaselineModel {
        kind: BaselineKind::Kpca,
        basis: Arc::new(basis),
        projection,
    })
}

pub fn kpca_transform(model: &BaselineModel, data: &MultiDomainDataset) -> Result<DMatrix<f64>> {
    model.transform(data)
}

/// Kernel Fisher discriminant as pooled MDA: one pseudo-domain, numerator
/// `P`, denominator `Q + K + eps I`.
pub fn kfd_fit(data: &MultiDomainDataset, bw: Bandwidth, rule: ComponentRule) -> Result<BaselineModel> {
    if data.num_classes() < 2 {
        return Err(MdaError::TooFew {
            what: "classes for KFD",
            required: 2,
            found: data.num_classes(),
        });
    }
    let prep = PreparedFit::new_pooled(data, bw)?;
    let projection = prep.solve_all(&kfd_hyperparams(rule))?.select(rule)?;
    Ok(BaselineModel {
        kind: BaselineKind::Kfd,
        basis: Arc::clone(prep.basis()),
        projection,
    })
}

pub fn kfd_hyperparams(rule: ComponentRule) -> HyperParams {
    HyperParams {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        epsilon: DEFAULT_EPSILON,
        rule,
    }
}

pub fn kfd_transform(model: &BaselineModel, data: &MultiDomainDataset) -> Result<DMatrix<f64>> {
    model.transform(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[(f64, usize)]) -> MultiDomainDataset {
        let c = xs.iter().map(|x| x.1).max().unwrap_or(0) + 1;
        MultiDomainDataset::new(
            xs.iter()
                .map(|&(x, label)| Instance {
                    features: vec![x],
                    label,
                    domain: 0,
                })
                .collect(),
            1,
            vec!["d".into()],
            (0..c).map(|j| j.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn nn_basic_cases() {
        let refs = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 5.0, 5.0]);
        let nn = NnModel::new(refs.clone(), vec![7, 8, 9]).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 4.0, 4.5]);
        assert_eq!(nn1_predict(&nn, &q).unwrap(), vec![8, 9]);
        // equidistant: lowest index wins
        let tie = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert_eq!(nn1_predict(&nn, &tie).unwrap(), vec![7]);
        let single = NnModel::new(DMatrix::from_row_slice(1, 2, &[3.0, 3.0]), vec![4]).unwrap();
        assert_eq!(nn1_predict(&single, &q).unwrap(), vec![4, 4]);
        let empty = NnModel::new(DMatrix::zeros(0, 2), vec![]).unwrap();
        assert!(nn1_predict(&empty, &q).is_err());
        assert!(NnModel::new(refs, vec![1]).is_err());
    }

    #[test]
    fn nn_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let refs = DMatrix::from_fn(50, 3, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let queries = DMatrix::from_fn(50, 3, |_, _| rng.random_range(-1.0..1.0));
        let pred = nn1_predict(&NnModel::new(refs.clone(), labels.clone()).unwrap(), &queries).unwrap();
        for (qi, p) in pred.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for r in 0..50 {
                let d = (queries.row(qi) - refs.row(r)).norm_squared();
                if d < best.0 {
                    best = (d, r);
                }
            }
            assert_eq!(*p, labels[best.1]);
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1], &[2, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn kpca_collinear_energy() {
        let data = line(&[(0.0, 0), (0.1, 0), (0.2, 0), (0.3, 0), (0.4, 0)]);
        // bandwidth far beyond the squared diameter: the kernel is nearly linear
        let model = kpca_fit(&data, Bandwidth::new(100.0).unwrap(), ComponentRule::Energy(1.0)).unwrap();
        let eig = &model.projection().eigenvalues;
        assert!(eig[0] / eig.sum() >= 0.99);
    }

    #[test]
    fn kpca_drops_rank_deficiency_and_is_centered() {
        let data = line(&[(0.0, 0), (0.0, 0), (1.0, 0), (1.0, 0), (2.5, 0)]);
        let model = kpca_fit(&data, Bandwidth::new(1.0).unwrap(), ComponentRule::Energy(1.0)).unwrap();
        assert!(model.projection().q() < 5);
        let z = model.transform_train();
        for col in z.column_iter() {
            assert!(col.mean().abs() <= 1e-8);
        }
    }

    #[test]
    fn kfd_separates_two_classes() {
        let data = line(&[(0.0, 0), (0.2, 0), (0.1, 0), (5.0, 1), (5.3, 1), (5.1, 1)]);
        let model = kfd_fit(&data, Bandwidth::new(2.0).unwrap(), ComponentRule::Fixed(1)).unwrap();
        let target = line(&[(0.05, 0), (5.2, 1), (-0.1, 0), (5.4, 1)]);
        assert_eq!(model.accuracy(&target).unwrap(), 1.0);
        let one = line(&[(0.0, 0), (1.0, 0)]);
        assert!(kfd_fit(&one, Bandwidth::new(1.0).unwrap(), ComponentRule::Fixed(1)).is_err());
    }
}
