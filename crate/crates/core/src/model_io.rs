//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MDA1"                      4 bytes magic
//! header_len                  u64
//! header                      header_len bytes of UTF-8 JSON
//! B                           n*q f64, row-major
//! eigenvalues                 q f64
//! training features           n*d f64, row-major
//! ```
//!
//! The header carries `n`, `q`, `d`, `sigma`, hyperparameters, fit options,
//! the training dataset hash, name tables and per-instance label/domain
//! indices. The training set is stored because target projection needs it.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Instance, MultiDomainDataset};
use crate::eigsolver::{HyperParams, Projection};
use crate::error::{MdaError, Result};
use crate::kernel::Bandwidth;
use crate::pipeline::{restore, FitOptions, MdaModel};

pub const MAGIC: &[u8; 4] = b"MDA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub n: usize,
    pub q: usize,
    pub d: usize,
    pub sigma: f64,
    pub hyperparams: HyperParams,
    pub options: FitOptions,
    pub dataset_hash: String,
    pub labeled: bool,
    pub domain_names: Vec<String>,
    pub label_names: Vec<String>,
    pub labels: Vec<usize>,
    pub domains: Vec<usize>,
}

pub fn header_of(model: &MdaModel) -> ModelHeader {
    let train = model.train();
    ModelHeader {
        format_version: FORMAT_VERSION,
        n: train.len(),
        q: model.q(),
        d: train.dim(),
        sigma: model.bandwidth().sigma(),
        hyperparams: *model.hyperparams(),
        options: model.options(),
        dataset_hash: train.content_hash(),
        labeled: train.is_labeled(),
        domain_names: train.domain_names().to_vec(),
        label_names: train.label_names().to_vec(),
        labels: train.labels(),
        domains: train.domains(),
    }
}

pub fn write_model_to<W: Write>(model: &MdaModel, mut out: W) -> std::io::Result<()> {
    let header = serde_json::to_vec(&header_of(model))?;
    out.write_all(MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let proj = model.projection();
    for r in 0..proj.b.nrows() {
        for c in 0..proj.b.ncols() {
            out.write_all(&proj.b[(r, c)].to_le_bytes())?;
        }
    }
    for v in proj.eigenvalues.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for inst in model.train().instances() {
        for v in &inst.features {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_model(model: &MdaModel, path: &Path) -> Result<()> {
    let io_err = |source| MdaError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    write_model_to(model, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| MdaError::ModelFormat(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Parses a container and rebuilds the model; the training-set hash must
/// match the stored one.
pub fn read_model_from<R: Read>(mut input: R) -> Result<MdaModel> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| MdaError::ModelFormat("file too short".into()))?;
    if &magic != MAGIC {
        return Err(MdaError::ModelFormat("bad magic, expected MDA1".into()));
    }
    let mut len = [0u8; 8];
    input
        .read_exact(&mut len)
        .map_err(|_| MdaError::ModelFormat("missing header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(MdaError::ModelFormat(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    input
        .read_exact(&mut header)
        .map_err(|_| MdaError::ModelFormat("truncated header".into()))?;
    let header: ModelHeader = serde_json::from_slice(&header)
        .map_err(|e| MdaError::ModelFormat(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(MdaError::ModelFormat(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let (n, q, d) = (header.n, header.q, header.d);
    if header.labels.len() != n || header.domains.len() != n {
        return Err(MdaError::ModelFormat("label/domain arrays do not match n".into()));
    }
    let b = DMatrix::from_row_slice(n, q, &read_f64s(&mut input, n * q)?);
    let eigenvalues = DVector::from_vec(read_f64s(&mut input, q)?);
    let features = read_f64s(&mut input, n * d)?;
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| MdaError::ModelFormat(e.to_string()))?;
    if !rest.is_empty() {
        return Err(MdaError::ModelFormat(format!("{} trailing bytes", rest.len())));
    }

    let instances: Vec<Instance> = (0..n)
        .map(|i| Instance {
            features: features[i * d..(i + 1) * d].to_vec(),
            label: header.labels[i],
            domain: header.domains[i],
        })
        .collect();
    let train = if header.labeled {
        MultiDomainDataset::new(instances, d, header.domain_names.clone(), header.label_names.clone())?
    } else {
        MultiDomainDataset::unlabeled(instances, d, header.domain_names.clone())?
    };
    if train.content_hash() != header.dataset_hash {
        return Err(MdaError::ModelFormat("training data hash mismatch".into()));
    }
    restore(
        &train,
        Bandwidth::new(header.sigma)?,
        header.hyperparams,
        header.options,
        Projection { b, eigenvalues },
    )
}

pub fn read_model(path: &Path) -> Result<MdaModel> {
    let file = std::fs::File::open(path).map_err(|source| MdaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_model_from(std::io::BufReader::new(file))
}
