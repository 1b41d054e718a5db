//! Multi-domain datasets: representation, CSV ingestion and the synthetic
//! Gaussian generator.
//!
//! Every matrix built downstream indexes rows and columns by the instance
//! order stored here, so constructors never reorder instances.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MdaError, Result};

/// One labeled observation from one source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

/// Labeled instances partitioned by domain and class.
///
/// Domain and class indices are dense (`0..m`, `0..c`); the original names
/// are kept alongside so that files can be written back out.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    instances: Vec<Instance>,
    dim: usize,
    domain_names: Vec<String>,
    label_names: Vec<String>,
    labeled: bool,
    /// `counts[s][j]` = number of instances of class `j` in domain `s`.
    counts: Vec<Vec<usize>>,
}

impl MultiDomainDataset {
    pub fn new(
        instances: Vec<Instance>,
        dim: usize,
        domain_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        Self::build(instances, dim, domain_names, label_names, true)
    }

    /// A dataset whose labels are unknown. Every instance carries label 0 and
    /// accuracy cannot be computed against it.
    pub fn unlabeled(instances: Vec<Instance>, dim: usize, domain_names: Vec<String>) -> Result<Self> {
        let instances = instances
            .into_iter()
            .map(|mut inst| {
                inst.label = 0;
                inst
            })
            .collect();
        Self::build(instances, dim, domain_names, vec!["?".to_string()], false)
    }

    fn build(
        instances: Vec<Instance>,
        dim: usize,
        domain_names: Vec<String>,
        label_names: Vec<String>,
        labeled: bool,
    ) -> Result<Self> {
        let m = domain_names.len();
        let c = label_names.len();
        let mut counts = vec![vec![0usize; c]; m];
        for (i, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(MdaError::InvalidDataset(format!(
                    "instance {i} has {} features, expected {dim}",
                    inst.features.len()
                )));
            }
            if let Some(k) = inst.features.iter().position(|v| !v.is_finite()) {
                return Err(MdaError::InvalidDataset(format!(
                    "instance {i} feature {k} is not finite"
                )));
            }
            if inst.domain >= m {
                return Err(MdaError::InvalidDataset(format!(
                    "instance {i} domain index {} out of range 0..{m}",
                    inst.domain
                )));
            }
            if inst.label >= c {
                return Err(MdaError::InvalidDataset(format!(
                    "instance {i} label index {} out of range 0..{c}",
                    inst.label
                )));
            }
            counts[inst.domain][inst.label] += 1;
        }
        Ok(Self {
            instances,
            dim,
            domain_names,
            label_names,
            labeled,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.instances[i].features
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|inst| inst.label).collect()
    }

    pub fn domains(&self) -> Vec<usize> {
        self.instances.iter().map(|inst| inst.domain).collect()
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// `counts()[s][j]` = instances of class `j` in domain `s`.
    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    /// Instances per domain, `n^s`.
    pub fn domain_sizes(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Instances per class pooled over domains, `n_j`.
    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.num_classes())
            .map(|j| self.counts.iter().map(|row| row[j]).sum())
            .collect()
    }

    /// `(domain, class)` cells holding no instance.
    pub fn empty_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (s, row) in self.counts.iter().enumerate() {
            for (j, &cnt) in row.iter().enumerate() {
                if cnt == 0 {
                    out.push((s, j));
                }
            }
        }
        out
    }

    /// Keeps the given instances (in the given order) with the same name tables.
    pub fn select(&self, indices: &[usize]) -> Self {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        Self::build(
            instances,
            self.dim,
            self.domain_names.clone(),
            self.label_names.clone(),
            self.labeled,
        )
        .expect("subset of a valid dataset is valid")
    }

    /// Keeps only the listed domains, renumbered densely in the listed order.
    /// Class indices are unchanged.
    pub fn select_domains(&self, domains: &[usize]) -> Result<Self> {
        let mut remap = vec![None; self.num_domains()];
        for (new, &old) in domains.iter().enumerate() {
            if old >= self.num_domains() {
                return Err(MdaError::InvalidParameter(format!(
                    "domain index {old} out of range 0..{}",
                    self.num_domains()
                )));
            }
            remap[old] = Some(new);
        }
        let instances = self
            .instances
            .iter()
            .filter_map(|inst| {
                remap[inst.domain].map(|d| Instance {
                    domain: d,
                    ..inst.clone()
                })
            })
            .collect();
        let names = domains.iter().map(|&d| self.domain_names[d].clone()).collect();
        Self::build(instances, self.dim, names, self.label_names.clone(), self.labeled)
    }

    /// All instances placed in a single pseudo-domain.
    pub fn pooled(&self) -> Self {
        let instances = self
            .instances
            .iter()
            .map(|inst| Instance {
                domain: 0,
                ..inst.clone()
            })
            .collect();
        Self::build(
            instances,
            self.dim,
            vec!["pooled".to_string()],
            self.label_names.clone(),
            self.labeled,
        )
        .expect("pooling a valid dataset is valid")
    }

    /// Re-expresses labels against another label vocabulary (for example the
    /// training set's), so that label indices agree across files.
    pub fn relabel_to(&self, label_names: &[String]) -> Result<Self> {
        if !self.labeled {
            return Ok(self.clone());
        }
        let lookup: HashMap<&str, usize> = label_names
            .iter()
            .enumerate()
            .map(|(j, name)| (name.as_str(), j))
            .collect();
        let mut instances = Vec::with_capacity(self.len());
        for inst in &self.instances {
            let name = &self.label_names[inst.label];
            let label = *lookup.get(name.as_str()).ok_or_else(|| {
                MdaError::InvalidDataset(format!("unknown label value {name:?}"))
            })?;
            instances.push(Instance {
                label,
                ..inst.clone()
            });
        }
        Self::build(
            instances,
            self.dim,
            self.domain_names.clone(),
            label_names.to_vec(),
            true,
        )
    }

    /// Concatenates datasets sharing a label vocabulary; domains are
    /// merged by name in first-appearance order.
    pub fn concat(parts: &[MultiDomainDataset]) -> Result<Self> {
        let first = parts.first().ok_or(MdaError::EmptyDataset)?;
        let label_names = first.label_names.clone();
        let mut domain_names: Vec<String> = Vec::new();
        let mut instances = Vec::new();
        for part in parts {
            if part.dim != first.dim {
                return Err(MdaError::DimensionMismatch {
                    expected: first.dim,
                    got: part.dim,
                });
            }
            let part = part.relabel_to(&label_names)?;
            for inst in part.instances {
                let name = &part.domain_names[inst.domain];
                let domain = match domain_names.iter().position(|d| d == name) {
                    Some(d) => d,
                    None => {
                        domain_names.push(name.clone());
                        domain_names.len() - 1
                    }
                };
                instances.push(Instance { domain, ..inst });
            }
        }
        Self::build(
            instances,
            first.dim,
            domain_names,
            label_names,
            parts.iter().all(|p| p.labeled),
        )
    }

    /// SHA-256 over dimension, features (little-endian), labels and domains.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update((self.len() as u64).to_le_bytes());
        for inst in &self.instances {
            for v in &inst.features {
                hasher.update(v.to_le_bytes());
            }
            hasher.update((inst.label as u64).to_le_bytes());
            hasher.update((inst.domain as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    /// Each domain's features shifted to zero mean and scaled to unit
    /// (population) standard deviation, using that domain's own statistics.
    /// Constant features are only centered.
    pub fn standardize_domains(&self) -> Self {
        let m = self.num_domains();
        let d = self.dim;
        let mut mean = vec![vec![0.0; d]; m];
        let mut sq = vec![vec![0.0; d]; m];
        let sizes = self.domain_sizes();
        for inst in &self.instances {
            for (k, v) in inst.features.iter().enumerate() {
                mean[inst.domain][k] += v;
            }
        }
        for (s, row) in mean.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= sizes[s].max(1) as f64;
            }
        }
        for inst in &self.instances {
            for (k, v) in inst.features.iter().enumerate() {
                let c = v - mean[inst.domain][k];
                sq[inst.domain][k] += c * c;
            }
        }
        let scale: Vec<Vec<f64>> = sq
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .map(|&ss| {
                        let sd = (ss / sizes[s].max(1) as f64).sqrt();
                        if sd > 0.0 {
                            sd
                        } else {
                            1.0
                        }
                    })
                    .collect()
            })
            .collect();
        let instances = self
            .instances
            .iter()
            .map(|inst| Instance {
                features: inst
                    .features
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - mean[inst.domain][k]) / scale[inst.domain][k])
                    .collect(),
                ..inst.clone()
            })
            .collect();
        Self {
            instances,
            ..self.clone()
        }
    }
}

/// Feature preprocessing applied before any kernel is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Features are used as given.
    #[default]
    None,
    /// Per-domain z-scoring, see [`MultiDomainDataset::standardize_domains`].
    DomainZscore,
}

impl Preprocess {
    pub fn apply(self, data: &MultiDomainDataset) -> MultiDomainDataset {
        match self {
            Preprocess::None => data.clone(),
            Preprocess::DomainZscore => data.standardize_domains(),
        }
    }
}

impl std::str::FromStr for Preprocess {
    type Err = MdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocess::None),
            "domain_zscore" | "domain-zscore" => Ok(Preprocess::DomainZscore),
            other => Err(MdaError::InvalidParameter(format!(
                "unknown preprocessing {other:?} (expected none or domain_zscore)"
            ))),
        }
    }
}

/// Which CSV columns carry the domain, label and features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub domain_column: String,
    /// `None` reads the file as unlabeled.
    pub label_column: Option<String>,
    /// `None` takes every remaining column, in file order.
    pub feature_columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            domain_column: "domain".to_string(),
            label_column: Some("label".to_string()),
            feature_columns: None,
        }
    }
}

fn intern(names: &mut Vec<String>, value: &str) -> usize {
    match names.iter().position(|n| n == value) {
        Some(i) => i,
        None => {
            names.push(value.to_string());
            names.len() - 1
        }
    }
}

/// Reads a dataset. Domain and label strings are mapped to dense indices in
/// first-appearance order. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<MultiDomainDataset> {
    let file = std::fs::File::open(path).map_err(|source| MdaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<MultiDomainDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| MdaError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MdaError::Csv(format!("missing column {name:?}")))
    };
    let domain_col = find(&schema.domain_column)?;
    let label_col = schema.label_column.as_deref().map(find).transpose()?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != domain_col && Some(i) != label_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(MdaError::Csv("no feature columns".to_string()));
    }

    let mut domain_names = Vec::new();
    let mut label_names = Vec::new();
    let mut instances = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| MdaError::Csv(format!("row {row}: {e}")))?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for &col in &feature_cols {
            let cell = &record[col];
            let value: f64 = cell.parse().map_err(|_| MdaError::Cell {
                row,
                column: headers[col].clone(),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(MdaError::Cell {
                    row,
                    column: headers[col].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            features.push(value);
        }
        let domain = intern(&mut domain_names, &record[domain_col]);
        let label = label_col.map_or(0, |c| intern(&mut label_names, &record[c]));
        instances.push(Instance {
            features,
            label,
            domain,
        });
    }
    if instances.is_empty() {
        return Err(MdaError::EmptyDataset);
    }
    let dim = feature_cols.len();
    if label_col.is_some() {
        MultiDomainDataset::new(instances, dim, domain_names, label_names)
    } else {
        MultiDomainDataset::unlabeled(instances, dim, domain_names)
    }
}

/// Writes `domain,label,f0..f{d-1}`. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv(data: &MultiDomainDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| MdaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(data, file)
}

pub fn write_csv_to<W: std::io::Write>(data: &MultiDomainDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..data.dim()).map(|k| format!("f{k}")));
    wtr.write_record(&header)
        .map_err(|e| MdaError::Csv(e.to_string()))?;
    for inst in data.instances() {
        let mut row = vec![
            data.domain_names()[inst.domain].clone(),
            data.label_names()[inst.label].clone(),
        ];
        row.extend(inst.features.iter().map(|v| v.to_string()));
        wtr.write_record(&row)
            .map_err(|e| MdaError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| MdaError::Csv(e.to_string()))?;
    Ok(())
}

/// Mean and standard deviation of one feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    /// One entry per feature dimension.
    pub dims: Vec<Gaussian>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// One entry per class, in the order of [`SyntheticSpec::class_names`].
    pub classes: Vec<ClassSpec>,
}

/// Generating distributions for every domain, plus the generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_names: Vec<String>,
    pub domains: Vec<DomainSpec>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        if self.domains.is_empty() || c == 0 {
            return Err(MdaError::EmptyDataset);
        }
        let dim = self.domains[0]
            .classes
            .first()
            .map(|cl| cl.dims.len())
            .unwrap_or(0);
        if dim == 0 {
            return Err(MdaError::InvalidParameter("zero feature dimensions".into()));
        }
        let mut total = 0;
        for dom in &self.domains {
            if dom.classes.len() != c {
                return Err(MdaError::InvalidParameter(format!(
                    "domain {} lists {} classes, expected {c}",
                    dom.name,
                    dom.classes.len()
                )));
            }
            for (j, cl) in dom.classes.iter().enumerate() {
                if cl.dims.len() != dim {
                    return Err(MdaError::DimensionMismatch {
                        expected: dim,
                        got: cl.dims.len(),
                    });
                }
                for g in &cl.dims {
                    if !(g.std > 0.0) || !g.std.is_finite() || !g.mean.is_finite() {
                        return Err(MdaError::InvalidParameter(format!(
                            "domain {} class {j}: need finite mean and std > 0, got ({}, {})",
                            dom.name, g.mean, g.std
                        )));
                    }
                }
                total += cl.count;
            }
        }
        if total == 0 {
            return Err(MdaError::EmptyDataset);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domains
            .first()
            .and_then(|d| d.classes.first())
            .map_or(0, |c| c.dims.len())
    }

    /// Draws every domain from PRNG stream 0.
    pub fn generate(&self) -> Result<MultiDomainDataset> {
        let all: Vec<usize> = (0..self.domains.len()).collect();
        self.generate_domains(&all, 0)
    }

    /// Draws the listed domains (renumbered densely in the listed order).
    ///
    /// The generator is ChaCha8 seeded with `seed` via `seed_from_u64`, on the
    /// given stream; independent draws of the same domain use different
    /// streams. Samples come out domain by domain, class by class, instance
    /// by instance, dimension by dimension, each from `Normal(mean, std)`.
    pub fn generate_domains(&self, domains: &[usize], stream: u64) -> Result<MultiDomainDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let dim = self.dim();
        let mut instances = Vec::new();
        let mut names = Vec::with_capacity(domains.len());
        for (new_idx, &s) in domains.iter().enumerate() {
            let dom = self.domains.get(s).ok_or_else(|| {
                MdaError::InvalidParameter(format!("domain index {s} out of range"))
            })?;
            names.push(dom.name.clone());
            for (j, cl) in dom.classes.iter().enumerate() {
                let normals: Vec<Normal<f64>> = cl
                    .dims
                    .iter()
                    .map(|g| Normal::new(g.mean, g.std).expect("validated std"))
                    .collect();
                for _ in 0..cl.count {
                    let features = normals.iter().map(|nd| nd.sample(&mut rng)).collect();
                    instances.push(Instance {
                        features,
                        label: j,
                        domain: new_idx,
                    });
                }
            }
        }
        if instances.is_empty() {
            return Err(MdaError::EmptyDataset);
        }
        MultiDomainDataset::new(instances, dim, names, self.class_names.clone())
    }
}

/// The three-domain, three-class, two-dimensional benchmark: 50 instances
/// per cell, every standard deviation 0.3.
pub fn table2_preset() -> SyntheticSpec {
    const STD: f64 = 0.3;
    // [domain][class] = (mean X1, mean X2)
    const MEANS: [[(f64, f64); 3]; 3] = [
        [(1.0, 2.0), (2.0, 1.0), (3.0, 2.0)],
        [(3.5, 2.5), (4.5, 1.5), (5.5, 2.5)],
        [(8.0, 2.5), (9.5, 1.5), (10.0, 2.5)],
    ];
    let domains = MEANS
        .iter()
        .enumerate()
        .map(|(s, classes)| DomainSpec {
            name: format!("{}", s + 1),
            classes: classes
                .iter()
                .map(|&(x1, x2)| ClassSpec {
                    dims: vec![
                        Gaussian { mean: x1, std: STD },
                        Gaussian { mean: x2, std: STD },
                    ],
                    count: 50,
                })
                .collect(),
        })
        .collect();
    SyntheticSpec {
        class_names: vec!["1".into(), "2".into(), "3".into()],
        domains,
        seed: 0,
    }
}

/// Replaces a domain's per-class counts by `prior * total`, rounded with the
/// largest-remainder method so the counts sum to `total` exactly.
pub fn apply_prior(domain: &DomainSpec, prior: &[f64], total: usize) -> Result<DomainSpec> {
    let c = domain.classes.len();
    if prior.len() != c {
        return Err(MdaError::DimensionMismatch {
            expected: c,
            got: prior.len(),
        });
    }
    if prior.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(MdaError::InvalidParameter("prior entries must be >= 0".into()));
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MdaError::InvalidParameter(format!(
            "prior sums to {sum}, expected 1"
        )));
    }
    if total < c {
        return Err(MdaError::InvalidParameter(format!(
            "total {total} smaller than class count {c}"
        )));
    }
    let exact: Vec<f64> = prior.iter().map(|&p| p * total as f64).collect();
    // 1e-9 slack absorbs products like 0.3 * 150 landing just under 45.
    let mut counts: Vec<usize> = exact.iter().map(|&x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    if let Some(j) = counts.iter().position(|&n| n == 0) {
        return Err(MdaError::InvalidParameter(format!(
            "prior leaves class {j} with no instances"
        )));
    }
    let mut out = domain.clone();
    for (cl, n) in out.classes.iter_mut().zip(counts) {
        cl.count = n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recount(data: &MultiDomainDataset) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0; data.num_classes()]; data.num_domains()];
        for inst in data.instances() {
            counts[inst.domain][inst.label] += 1;
        }
        counts
    }

    #[test]
    fn loads_small_file() {
        let text = "domain,label,f0,f1\na,x,1.0,2.0\nb,y,3,4\na,y,-1e-3,0\n";
        let data = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.num_domains(), 2);
        assert_eq!(data.num_classes(), 2);
        assert_eq!(data.counts(), &[vec![1, 1], vec![0, 1]]);
        assert_eq!(data.empty_cells(), vec![(1, 0)]);
        assert_eq!(data.features(2), &[-1e-3, 0.0]);
        assert_eq!(recount(&data), data.counts());
    }

    #[test]
    fn header_only_is_empty() {
        let err = read_csv("domain,label,f0\n".as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, MdaError::EmptyDataset));
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let text = "domain,label,f0,f1\na,x,1,2\na,x,3,NaN\n";
        match read_csv(text.as_bytes(), &CsvSchema::default()).unwrap_err() {
            MdaError::Cell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_ragged_rows_fail() {
        let text = "domain,label,f0\na,x,abc\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default()),
            Err(MdaError::Cell { row: 1, .. })
        ));
        let text = "domain,label,f0\na,x,1,2\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &CsvSchema::default()),
            Err(MdaError::Csv(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, MdaError::Io { .. }));
    }

    #[test]
    fn relabel_rejects_unknown_label() {
        let text = "domain,label,f0\na,z,1\n";
        let data = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        let err = data.relabel_to(&["x".to_string()]).unwrap_err();
        assert!(err.to_string().contains("unknown label"));
    }

    #[test]
    fn table2_preset_values() {
        let spec = table2_preset();
        assert_eq!(spec.domains[1].classes[2].dims[0].mean, 5.5);
        assert_eq!(spec.domains[2].classes[1].dims[0].mean, 9.5);
        let x1: Vec<f64> = spec.domains[2].classes.iter().map(|c| c.dims[0].mean).collect();
        let x2: Vec<f64> = spec.domains[2].classes.iter().map(|c| c.dims[1].mean).collect();
        assert_eq!(x1, vec![8.0, 9.5, 10.0]);
        assert_eq!(x2, vec![2.5, 1.5, 2.5]);
        let total: usize = spec
            .domains
            .iter()
            .flat_map(|d| d.classes.iter().map(|c| c.count))
            .sum();
        assert_eq!(total, 450);
        assert!(spec
            .domains
            .iter()
            .flat_map(|d| d.classes.iter().flat_map(|c| c.dims.iter()))
            .all(|g| g.std == 0.3));
    }

    #[test]
    fn generate_matches_counts_and_is_deterministic() {
        let spec = table2_preset();
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 450);
        assert_eq!(a.counts(), &[vec![50; 3], vec![50; 3], vec![50; 3]]);
        assert_eq!(recount(&a), a.counts());
        let first_cell: Vec<&Instance> = a
            .instances()
            .iter()
            .filter(|i| i.domain == 0 && i.label == 0)
            .collect();
        assert_eq!(first_cell.len(), 50);
        let other = spec.generate_domains(&[0, 1, 2], 1).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn zero_std_rejected() {
        let mut spec = table2_preset();
        spec.domains[0].classes[0].dims[0].std = 0.0;
        assert!(spec.generate().is_err());
    }

    #[test]
    fn zero_total_rejected() {
        let mut spec = table2_preset();
        for d in &mut spec.domains {
            for c in &mut d.classes {
                c.count = 0;
            }
        }
        assert!(matches!(spec.generate(), Err(MdaError::EmptyDataset)));
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        // 3 standard errors: 0.3 * 3 / sqrt(50) ~ 0.127
        let bound = 0.3 * 3.0 / 50f64.sqrt();
        let mut within = 0;
        for seed in 0..100u64 {
            let mut spec = table2_preset();
            spec.seed = seed;
            let data = spec.generate().unwrap();
            let xs: Vec<f64> = data
                .instances()
                .iter()
                .filter(|i| i.domain == 0 && i.label == 0)
                .map(|i| i.features[0])
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            if (mean - 1.0).abs() <= bound {
                within += 1;
            }
        }
        assert!(within >= 99, "only {within}/100 seeds within bound");
    }

    #[test]
    fn prior_rounding() {
        let base = table2_preset().domains[0].clone();
        let third = 1.0 / 3.0;
        let counts = |d: DomainSpec| d.classes.iter().map(|c| c.count).collect::<Vec<_>>();
        assert_eq!(counts(apply_prior(&base, &[third, third, third], 150).unwrap()), vec![50, 50, 50]);
        assert_eq!(counts(apply_prior(&base, &[0.5, 0.3, 0.2], 150).unwrap()), vec![75, 45, 30]);
        assert_eq!(counts(apply_prior(&base, &[0.6, 0.3, 0.1], 150).unwrap()), vec![90, 45, 15]);
        assert_eq!(counts(apply_prior(&base, &[third, third, third], 100).unwrap()), vec![34, 33, 33]);
        assert!(apply_prior(&base, &[0.5, 0.5, 0.0], 150).is_err());
        assert!(apply_prior(&base, &[0.5, 0.4, 0.0], 150).is_err());
    }

    #[test]
    fn select_domains_renumbers() {
        let data = table2_preset().generate().unwrap();
        let sub = data.select_domains(&[2, 0]).unwrap();
        assert_eq!(sub.len(), 300);
        assert_eq!(sub.domain_names(), &["3".to_string(), "1".to_string()]);
        assert_eq!(sub.counts(), &[vec![50; 3], vec![50; 3]]);
        assert_eq!(sub.pooled().counts(), &[vec![100; 3]]);
    }

    #[test]
    fn domain_standardization() {
        let data = table2_preset().generate().unwrap();
        let z = data.standardize_domains();
        assert_eq!(z.labels(), data.labels());
        assert_eq!(z.domains(), data.domains());
        for s in 0..3 {
            for k in 0..2 {
                let vals: Vec<f64> = z
                    .instances()
                    .iter()
                    .filter(|i| i.domain == s)
                    .map(|i| i.features[k])
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-12);
            }
        }
        let flat = MultiDomainDataset::new(
            vec![
                Instance { features: vec![2.0, 1.0], label: 0, domain: 0 },
                Instance { features: vec![2.0, 3.0], label: 0, domain: 0 },
            ],
            2,
            vec!["a".into()],
            vec!["x".into()],
        )
        .unwrap();
        let zf = flat.standardize_domains();
        assert_eq!(zf.features(0), &[0.0, -1.0]);
        assert_eq!(zf.features(1), &[0.0, 1.0]);
        assert_eq!(Preprocess::None.apply(&flat), flat);
        assert_eq!("domain_zscore".parse::<Preprocess>().unwrap(), Preprocess::DomainZscore);
        assert!("zscore".parse::<Preprocess>().is_err());
    }
}
