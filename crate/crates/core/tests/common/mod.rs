//! Random instances and brute-force reference implementations shared by the
//! integration tests. Nothing here calls into the scatter builders.

#![allow(dead_code)]

use mda_core::bounds::BoundConstants;
use mda_core::data::{Instance, MultiDomainDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

/// Random dataset with every `(domain, class)` cell occupied.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_max: usize, d_max: usize, m_max: usize, c_max: usize) -> MultiDomainDataset {
    let m = rng.random_range(2..=m_max);
    let c = rng.random_range(2..=c_max);
    let d = rng.random_range(1..=d_max);
    let n = rng.random_range(m * c..=n_max.max(m * c));
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let (domain, label) = if i < m * c {
            (i / c, i % c)
        } else {
            (rng.random_range(0..m), rng.random_range(0..c))
        };
        let features = (0..d)
            .map(|k| rng.random_range(-1.5..1.5) + 0.4 * label as f64 + 0.2 * (domain * k) as f64)
            .collect();
        instances.push(Instance { features, label, domain });
    }
    MultiDomainDataset::new(instances, d, names("d", m), names("c", c)).unwrap()
}

/// Every domain gets the same count table, so class proportions and domain
/// sizes agree across domains.
pub fn balanced_dataset(rng: &mut ChaCha8Rng, counts: &[usize], m: usize, d: usize) -> MultiDomainDataset {
    let mut instances = Vec::new();
    for s in 0..m {
        for (j, &cnt) in counts.iter().enumerate() {
            for _ in 0..cnt {
                let features = (0..d)
                    .map(|_| rng.random_range(-1.0..1.0) + j as f64 + 0.3 * s as f64)
                    .collect();
                instances.push(Instance { features, label: j, domain: s });
            }
        }
    }
    // interleave so that instance order is not grouped by cell
    let n = instances.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let k = rng.random_range(0..=i);
        order.swap(i, k);
    }
    let instances = order.into_iter().map(|i| instances[i].clone()).collect();
    MultiDomainDataset::new(instances, d, names("d", m), names("c", counts.len())).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let x = random_matrix(rng, n, n);
    &x * x.transpose() + DMatrix::identity(n, n) * shift
}

fn mean_rows(z: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(z.ncols());
    for &r in rows {
        acc += z.row(r).transpose();
    }
    acc / rows.len() as f64
}

/// The four trace forms evaluated directly on projected points `z = K B`.
#[derive(Debug, Clone, Copy)]
pub struct TraceOracle {
    pub g: f64,
    pub f: f64,
    pub p: f64,
    pub q: f64,
}

pub fn trace_oracle(data: &MultiDomainDataset, k: &DMatrix<f64>, b: &DMatrix<f64>) -> TraceOracle {
    let z = k * b;
    let (m, c, n) = (data.num_domains(), data.num_classes(), data.len());
    let mut members = vec![vec![Vec::new(); c]; m];
    for (i, inst) in data.instances().iter().enumerate() {
        members[inst.domain][inst.label].push(i);
    }
    let cell_mean: Vec<Vec<Option<DVector<f64>>>> = members
        .iter()
        .map(|row| row.iter().map(|idx| (!idx.is_empty()).then(|| mean_rows(&z, idx))).collect())
        .collect();

    let mut g = 0.0;
    let mut pairs = 0usize;
    for j in 0..c {
        for s in 0..m {
            for t in s + 1..m {
                if let (Some(a), Some(bm)) = (&cell_mean[s][j], &cell_mean[t][j]) {
                    g += (a - bm).norm_squared();
                    pairs += 1;
                }
            }
        }
    }
    let g = if pairs > 0 { g / pairs as f64 } else { 0.0 };

    let dom_size: Vec<f64> = (0..m).map(|s| members[s].iter().map(Vec::len).sum::<usize>() as f64).collect();
    let class_mean: Vec<DVector<f64>> = (0..c)
        .map(|j| {
            let ratio: Vec<f64> = (0..m).map(|s| members[s][j].len() as f64 / dom_size[s]).collect();
            let total: f64 = ratio.iter().sum();
            let mut acc = DVector::zeros(z.ncols());
            for s in 0..m {
                if let Some(mu) = &cell_mean[s][j] {
                    acc += mu * (ratio[s] / total);
                }
            }
            acc
        })
        .collect();
    let class_size: Vec<f64> = (0..c).map(|j| (0..m).map(|s| members[s][j].len()).sum::<usize>() as f64).collect();
    let mut overall = DVector::zeros(z.ncols());
    for j in 0..c {
        overall += &class_mean[j] * (class_size[j] / n as f64);
    }

    let mut f = 0.0;
    for j in 0..c {
        for l in j + 1..c {
            f += (&class_mean[j] - &class_mean[l]).norm_squared();
        }
    }
    let f = f / (c * (c - 1) / 2) as f64;
    let p = (0..c)
        .map(|j| class_size[j] * (&class_mean[j] - &overall).norm_squared())
        .sum::<f64>()
        / n as f64;
    let q = data
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| (z.row(i).transpose() - &class_mean[inst.label]).norm_squared())
        .sum::<f64>()
        / n as f64;
    TraceOracle { g, f, p, q }
}

/// Classical between/within scatter of pooled kernel columns, by explicit
/// loops: `(1/n) sum_j n_j (m_j - m)(m_j - m)^T` and
/// `(1/n) sum_i (k_i - m_{y_i})(k_i - m_{y_i})^T`.
pub fn pooled_scatter(data: &MultiDomainDataset, k: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = data.len();
    let c = data.num_classes();
    let labels = data.labels();
    let mut class_sum = vec![vec![0.0; n]; c];
    let mut class_n = vec![0usize; c];
    let mut grand = vec![0.0; n];
    for i in 0..n {
        class_n[labels[i]] += 1;
        for r in 0..n {
            class_sum[labels[i]][r] += k[(r, i)];
            grand[r] += k[(r, i)];
        }
    }
    let class_mean: Vec<Vec<f64>> = (0..c)
        .map(|j| class_sum[j].iter().map(|v| v / class_n[j] as f64).collect())
        .collect();
    let grand: Vec<f64> = grand.iter().map(|v| v / n as f64).collect();
    let mut between = DMatrix::zeros(n, n);
    let mut within = DMatrix::zeros(n, n);
    for j in 0..c {
        for r in 0..n {
            for s in 0..n {
                between[(r, s)] += class_n[j] as f64 * (class_mean[j][r] - grand[r]) * (class_mean[j][s] - grand[s]);
            }
        }
    }
    for i in 0..n {
        let mu = &class_mean[labels[i]];
        for r in 0..n {
            for s in 0..n {
                within[(r, s)] += (k[(r, i)] - mu[r]) * (k[(s, i)] - mu[s]);
            }
        }
    }
    (between / n as f64, within / n as f64)
}

/// Eigenvalues of `D^{-1} A` from a real Schur decomposition, descending.
pub fn dense_eigenvalues(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Vec<f64> {
    let m = d.clone().try_inverse().expect("invertible D") * a;
    let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub struct OracleRow {
    pub kind: String,
    pub tr: f64,
    pub n_or_m: usize,
    pub n_bar: Option<f64>,
    pub delta: f64,
    pub value: f64,
}

/// High-precision bound values, see `data/bound_oracle.py`.
pub fn oracle_rows() -> Vec<OracleRow> {
    let text = include_str!("../data/bound_oracle.csv");
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            OracleRow {
                kind: f[0].to_string(),
                tr: f[1].parse().unwrap(),
                n_or_m: f[2].parse().unwrap(),
                n_bar: (!f[3].is_empty()).then(|| f[3].parse().unwrap()),
                delta: f[4].parse().unwrap(),
                value: f[5].parse().unwrap(),
            }
        })
        .collect()
}

pub fn oracle_constants(delta: f64) -> BoundConstants {
    BoundConstants {
        lipschitz_loss: 0.7,
        loss_bound: 1.3,
        kernel_bound_x: 1.1,
        kernel_bound_x_prime: 0.9,
        kernel_bound_gamma: 1.2,
        lipschitz_feature_map: 0.8,
        delta,
    }
}
