//! Empirical kernel mean embeddings and the four measure matrices.
//!
//! Each embedding is a coefficient vector over the training instances, so a
//! feature-space difference `mu - nu` becomes `K (a - b)` in coefficient
//! space and every measure matrix is a weighted sum of `K v v^T K` terms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::MultiDomainDataset;
use crate::error::{MdaError, Result};
use crate::kernel::GramMatrix;

#[derive(Debug, Clone)]
pub struct EmbeddingCoefficients {
    /// `cell[s][j]`: `1/n^s_j` on class-`j` instances of domain `s`; `None`
    /// for empty cells.
    pub cell: Vec<Vec<Option<DVector<f64>>>>,
    /// Class mean representations `u_j`.
    pub class_mean: Vec<DVector<f64>>,
    /// Overall mean representation, weighted by pooled class frequency.
    pub overall_mean: DVector<f64>,
    /// `P(S = s | Y = j)` as an `m x c` table.
    pub domain_given_class: DMatrix<f64>,
    /// `n_j` per class.
    pub class_sizes: Vec<usize>,
    labels: Vec<usize>,
}

impl EmbeddingCoefficients {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_domains(&self) -> usize {
        self.cell.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_mean.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Builds the coefficient vectors for cell embeddings, class means (with
/// `P(S=s|Y=j) = (n^s_j / n^s) / sum_s' (n^s'_j / n^s')`, i.e. equal domain
/// sampling probabilities) and the overall mean.
pub fn build_coefficients(data: &MultiDomainDataset) -> Result<EmbeddingCoefficients> {
    let n = data.len();
    let m = data.num_domains();
    let c = data.num_classes();
    if n == 0 {
        return Err(MdaError::EmptyDataset);
    }
    let counts = data.counts();
    let domain_sizes = data.domain_sizes();
    let class_sizes = data.class_sizes();
    if let Some(j) = class_sizes.iter().position(|&nj| nj == 0) {
        return Err(MdaError::InvalidDataset(format!(
            "class {:?} is absent from every domain",
            data.label_names()[j]
        )));
    }

    let mut cell: Vec<Vec<Option<DVector<f64>>>> = vec![vec![None; c]; m];
    for (s, row) in counts.iter().enumerate() {
        for (j, &nsj) in row.iter().enumerate() {
            if nsj > 0 {
                cell[s][j] = Some(DVector::zeros(n));
            }
        }
    }
    for (i, inst) in data.instances().iter().enumerate() {
        let nsj = counts[inst.domain][inst.label] as f64;
        if let Some(v) = cell[inst.domain][inst.label].as_mut() {
            v[i] = 1.0 / nsj;
        }
    }

    let mut domain_given_class = DMatrix::zeros(m, c);
    for j in 0..c {
        let ratios: Vec<f64> = (0..m)
            .map(|s| {
                if domain_sizes[s] == 0 {
                    0.0
                } else {
                    counts[s][j] as f64 / domain_sizes[s] as f64
                }
            })
            .collect();
        let total: f64 = ratios.iter().sum();
        for s in 0..m {
            domain_given_class[(s, j)] = ratios[s] / total;
        }
    }

    let class_mean: Vec<DVector<f64>> = (0..c)
        .map(|j| {
            let mut w = DVector::zeros(n);
            for s in 0..m {
                if let Some(a) = &cell[s][j] {
                    w.axpy(domain_given_class[(s, j)], a, 1.0);
                }
            }
            w
        })
        .collect();

    let mut overall_mean = DVector::zeros(n);
    for (j, w) in class_mean.iter().enumerate() {
        overall_mean.axpy(class_sizes[j] as f64 / n as f64, w, 1.0);
    }

    Ok(EmbeddingCoefficients {
        cell,
        class_mean,
        overall_mean,
        domain_given_class,
        class_sizes,
        labels: data.labels(),
    })
}

/// `sum_r K c_r c_r^T K` for the columns `c_r` of `cols`, symmetrized.
fn sandwich(k: &DMatrix<f64>, cols: &DMatrix<f64>) -> DMatrix<f64> {
    let x = k * cols;
    let m = &x * x.transpose();
    (&m + m.transpose()) * 0.5
}

fn check_gram(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<()> {
    if k.n() != coeff.n() {
        return Err(MdaError::ShapeMismatch(format!(
            "gram is {}x{}, coefficients have {} instances",
            k.n(),
            k.n(),
            coeff.n()
        )));
    }
    Ok(())
}

/// Average domain discrepancy matrix: mean over classes and domain pairs of
/// `K (a_sj - a_s'j)(a_sj - a_s'j)^T K`. Pairs involving an empty cell are
/// skipped and not counted in the divisor.
pub fn build_g(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<DMatrix<f64>> {
    check_gram(k, coeff)?;
    let m = coeff.num_domains();
    if m < 2 {
        return Err(MdaError::TooFew {
            what: "domains for the domain discrepancy",
            required: 2,
            found: m,
        });
    }
    let mut diffs = Vec::new();
    for j in 0..coeff.num_classes() {
        for s in 0..m {
            for t in (s + 1)..m {
                if let (Some(a), Some(b)) = (&coeff.cell[s][j], &coeff.cell[t][j]) {
                    diffs.push(a - b);
                }
            }
        }
    }
    let n = coeff.n();
    if diffs.is_empty() {
        return Ok(DMatrix::zeros(n, n));
    }
    let scale = 1.0 / diffs.len() as f64;
    Ok(sandwich(k.values(), &DMatrix::from_columns(&diffs)) * scale)
}

/// Average class discrepancy matrix over class pairs `j < j'`.
pub fn build_f(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<DMatrix<f64>> {
    check_gram(k, coeff)?;
    let c = coeff.num_classes();
    if c < 2 {
        return Err(MdaError::TooFew {
            what: "classes for the class discrepancy",
            required: 2,
            found: c,
        });
    }
    let mut diffs = Vec::with_capacity(c * (c - 1) / 2);
    for j in 0..c {
        for l in (j + 1)..c {
            diffs.push(&coeff.class_mean[j] - &coeff.class_mean[l]);
        }
    }
    let scale = 1.0 / diffs.len() as f64;
    Ok(sandwich(k.values(), &DMatrix::from_columns(&diffs)) * scale)
}

/// Multidomain between-class scatter `(1/n) sum_j n_j K (u_j - u)(u_j - u)^T K`.
pub fn build_p(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<DMatrix<f64>> {
    check_gram(k, coeff)?;
    let n = coeff.n() as f64;
    let cols: Vec<DVector<f64>> = coeff
        .class_mean
        .iter()
        .zip(&coeff.class_sizes)
        .map(|(w, &nj)| (w - &coeff.overall_mean) * (nj as f64 / n).sqrt())
        .collect();
    Ok(sandwich(k.values(), &DMatrix::from_columns(&cols)))
}

/// Multidomain within-class scatter `(1/n) sum_i K (e_i - u_j(i))(e_i - u_j(i))^T K`.
pub fn build_q(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<DMatrix<f64>> {
    check_gram(k, coeff)?;
    let n = coeff.n();
    let scale = 1.0 / (n as f64).sqrt();
    let mut cols = DMatrix::zeros(n, n);
    for (i, &j) in coeff.labels.iter().enumerate() {
        let mut col = cols.column_mut(i);
        col.axpy(-scale, &coeff.class_mean[j], 0.0);
        col[i] += scale;
    }
    Ok(sandwich(k.values(), &cols))
}

/// The four measure matrices.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub g: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl ScatterSet {
    pub fn build(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<Self> {
        Ok(Self {
            g: build_g(k, coeff)?,
            f: build_f(k, coeff)?,
            p: build_p(k, coeff)?,
            q: build_q(k, coeff)?,
        })
    }

    /// Single-domain variant: the domain discrepancy term is the zero matrix.
    pub fn build_pooled(k: &GramMatrix, coeff: &EmbeddingCoefficients) -> Result<Self> {
        let n = coeff.n();
        Ok(Self {
            g: DMatrix::zeros(n, n),
            f: build_f(k, coeff)?,
            p: build_p(k, coeff)?,
            q: build_q(k, coeff)?,
        })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

/// Trace forms `tr(B^T M B)` of the four measures for a projection `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasureReport {
    pub domain_discrepancy: f64,
    pub class_discrepancy: f64,
    pub between_scatter: f64,
    pub within_scatter: f64,
}

pub(crate) fn trace_form(m: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(B^T M B) = sum over columns of b . (M b)
    let mb = m * b;
    b.iter().zip(mb.iter()).map(|(x, y)| x * y).sum()
}

fn clamp_trace(v: f64) -> f64 {
    if v < 0.0 && v >= -1e-8 {
        0.0
    } else {
        v
    }
}

pub fn measure_report(scatter: &ScatterSet, b: &DMatrix<f64>) -> Result<MeasureReport> {
    if b.nrows() != scatter.n() {
        return Err(MdaError::ShapeMismatch(format!(
            "projection has {} rows, measures are {}x{}",
            b.nrows(),
            scatter.n(),
            scatter.n()
        )));
    }
    Ok(MeasureReport {
        domain_discrepancy: clamp_trace(trace_form(&scatter.g, b)),
        class_discrepancy: clamp_trace(trace_form(&scatter.f, b)),
        between_scatter: clamp_trace(trace_form(&scatter.p, b)),
        within_scatter: clamp_trace(trace_form(&scatter.q, b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::kernel::{gram, Bandwidth};

    fn dataset(rows: &[(f64, usize, usize)], m: usize, c: usize) -> MultiDomainDataset {
        let instances = rows
            .iter()
            .map(|&(x, label, domain)| Instance {
                features: vec![x],
                label,
                domain,
            })
            .collect();
        MultiDomainDataset::new(
            instances,
            1,
            (0..m).map(|s| format!("d{s}")).collect(),
            (0..c).map(|j| format!("c{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn equal_proportions_give_uniform_domain_posterior() {
        let data = dataset(
            &[(0.0, 0, 0), (1.0, 1, 0), (2.0, 0, 1), (3.0, 1, 1)],
            2,
            2,
        );
        let co = build_coefficients(&data).unwrap();
        assert!(co.domain_given_class.iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn domain_posterior_hand_value() {
        // domain A: 10 of class 0 out of 10; domain B: 10 of class 0 out of 20
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((i as f64, 0, 0));
        }
        for i in 0..10 {
            rows.push((i as f64, 0, 1));
            rows.push((i as f64 + 0.5, 1, 1));
        }
        let co = build_coefficients(&dataset(&rows, 2, 2)).unwrap();
        assert!((co.domain_given_class[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((co.domain_given_class[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
        // class 1 only in domain B; the empty cell gets zero weight
        assert_eq!(co.domain_given_class[(0, 1)], 0.0);
        assert!(co.cell[0][1].is_none());
        for j in 0..2 {
            let col: f64 = co.domain_given_class.column(j).sum();
            assert!((col - 1.0).abs() <= 1e-12);
            assert!((co.class_mean[j].sum() - 1.0).abs() <= 1e-12);
        }
        assert!((co.overall_mean.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn absent_class_rejected() {
        let data = dataset(&[(0.0, 0, 0), (1.0, 0, 1)], 2, 2);
        assert!(build_coefficients(&data).is_err());
    }

    #[test]
    fn identical_domains_give_zero_g() {
        let data = dataset(
            &[(0.0, 0, 0), (1.0, 1, 0), (0.3, 0, 0), (0.0, 0, 1), (1.0, 1, 1), (0.3, 0, 1)],
            2,
            2,
        );
        let k = gram(&data, Bandwidth::new(0.5).unwrap());
        let co = build_coefficients(&data).unwrap();
        let g = build_g(&k, &co).unwrap();
        assert!(g.trace().abs() <= 1e-10);
        assert!(g.abs().max() <= 1e-12);
    }

    #[test]
    fn single_domain_has_no_g() {
        let data = dataset(&[(0.0, 0, 0), (1.0, 1, 0)], 1, 2);
        let k = gram(&data, Bandwidth::new(1.0).unwrap());
        let co = build_coefficients(&data).unwrap();
        assert!(matches!(build_g(&k, &co), Err(MdaError::TooFew { .. })));
    }

    #[test]
    fn identical_classes_give_zero_f() {
        let data = dataset(&[(0.0, 0, 0), (0.0, 1, 0), (1.0, 0, 1), (1.0, 1, 1)], 2, 2);
        let k = gram(&data, Bandwidth::new(1.0).unwrap());
        let co = build_coefficients(&data).unwrap();
        assert!(build_f(&k, &co).unwrap().abs().max() <= 1e-12);
    }

    #[test]
    fn one_class_degenerate_cases() {
        let data = dataset(&[(0.0, 0, 0), (2.0, 0, 1)], 2, 1);
        let k = gram(&data, Bandwidth::new(1.0).unwrap());
        let co = build_coefficients(&data).unwrap();
        assert_eq!(co.class_mean[0], co.overall_mean);
        assert!(build_p(&k, &co).unwrap().abs().max() == 0.0);
        assert!(build_f(&k, &co).is_err());
    }

    #[test]
    fn two_classes_single_pair() {
        let data = dataset(&[(0.0, 0, 0), (1.0, 1, 0), (0.5, 0, 1), (1.5, 1, 1)], 2, 2);
        let k = gram(&data, Bandwidth::new(1.0).unwrap());
        let co = build_coefficients(&data).unwrap();
        let f = build_f(&k, &co).unwrap();
        let d = &co.class_mean[0] - &co.class_mean[1];
        let kd = k.values() * d;
        let direct = &kd * kd.transpose();
        assert!((f - direct).abs().max() < 1e-14);
    }

    #[test]
    fn points_at_class_means_give_zero_q() {
        let data = dataset(
            &[(0.0, 0, 0), (0.0, 0, 0), (3.0, 1, 0), (0.0, 0, 1), (3.0, 1, 1), (3.0, 1, 1)],
            2,
            2,
        );
        let k = gram(&data, Bandwidth::new(1.0).unwrap());
        let co = build_coefficients(&data).unwrap();
        assert!(build_q(&k, &co).unwrap().abs().max() <= 1e-12);
    }

    #[test]
    fn measure_report_scaling() {
        let data = dataset(
            &[(0.0, 0, 0), (1.0, 1, 0), (0.2, 0, 1), (1.4, 1, 1), (0.1, 1, 1)],
            2,
            2,
        );
        let k = gram(&data, Bandwidth::new(0.7).unwrap());
        let co = build_coefficients(&data).unwrap();
        let set = ScatterSet::build(&k, &co).unwrap();
        let zero = measure_report(&set, &DMatrix::zeros(5, 2)).unwrap();
        assert_eq!(
            zero,
            MeasureReport {
                domain_discrepancy: 0.0,
                class_discrepancy: 0.0,
                between_scatter: 0.0,
                within_scatter: 0.0
            }
        );
        let b = DMatrix::from_fn(5, 2, |r, c| (r as f64 - 1.5) * (c as f64 + 0.5));
        let one = measure_report(&set, &b).unwrap();
        let three = measure_report(&set, &(&b * 3.0)).unwrap();
        for (x, y) in [
            (one.domain_discrepancy, three.domain_discrepancy),
            (one.class_discrepancy, three.class_discrepancy),
            (one.between_scatter, three.between_scatter),
            (one.within_scatter, three.within_scatter),
        ] {
            assert!((9.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        assert!(measure_report(&set, &DMatrix::zeros(4, 2)).is_err());
    }
}
