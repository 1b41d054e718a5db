//! Experiment protocols and hyperparameter sweeps.
//!
//! Grid points are enumerated lexicographically over
//! `(sigma, beta, gamma, alpha, energy)`; that order is also the tie-break
//! order for model selection. Sweeps may run in parallel but results are
//! always collected in enumeration order, so serial and parallel runs
//! produce identical records.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, trace_bkb, BoundConstants, BoundReport, TraceGram};
use crate::classifiers::{accuracy, nn1_predict, NnModel};
use crate::data::{MultiDomainDataset, Preprocess, SyntheticSpec};
use crate::eigsolver::{ComponentRule, HyperParams, DEFAULT_EPSILON};
use crate::error::{MdaError, Result};
use crate::kernel::{median_heuristic, Bandwidth};
use crate::pipeline::{transform_target, transform_train, FitOptions, MdaModel, PreparedFit};

/// Candidate values for every tuned quantity. Bandwidths are multiples of
/// the median squared pairwise distance of the training sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sigma_multipliers: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub energies: Vec<f64>,
}

fn powers_of_ten(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

impl Grid {
    /// 6 x 5 x 10 x 10 x 8 = 24000 points.
    pub fn full() -> Self {
        Self {
            sigma_multipliers: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            betas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            gammas: powers_of_ten(-3, 6),
            alphas: powers_of_ten(0, 9),
            energies: vec![0.2, 0.4, 0.6, 0.8, 0.92, 0.94, 0.96, 0.98],
        }
    }

    /// 3 x 3 x 3 x 3 x 2 = 162 points, for desk-scale runs.
    pub fn reduced() -> Self {
        Self {
            sigma_multipliers: vec![0.5, 1.0, 2.0],
            betas: vec![0.3, 0.5, 0.7],
            gammas: vec![1e-2, 1.0, 1e2],
            alphas: vec![1.0, 1e2, 1e4],
            energies: vec![0.8, 0.96],
        }
    }

    pub fn single(sigma_multiplier: f64, hp: &HyperParams) -> Self {
        let energy = match hp.rule {
            ComponentRule::Energy(f) => f,
            ComponentRule::Fixed(_) => 1.0,
        };
        Self {
            sigma_multipliers: vec![sigma_multiplier],
            betas: vec![hp.beta],
            gammas: vec![hp.gamma],
            alphas: vec![hp.alpha],
            energies: vec![energy],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("sigma_multipliers", &self.sigma_multipliers),
            ("betas", &self.betas),
            ("gammas", &self.gammas),
            ("alphas", &self.alphas),
            ("energies", &self.energies),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(MdaError::InvalidParameter(format!("empty grid list {name}")));
            }
        }
        for p in self.points() {
            Bandwidth::new(p.sigma_multiplier)?;
            p.hyperparams().validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sigma_multipliers.len()
            * self.betas.len()
            * self.gammas.len()
            * self.alphas.len()
            * self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point in enumeration order.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &sigma_multiplier in &self.sigma_multipliers {
            for &beta in &self.betas {
                for &gamma in &self.gammas {
                    for &alpha in &self.alphas {
                        for &energy in &self.energies {
                            out.push(GridPoint {
                                index: out.len(),
                                sigma_multiplier,
                                beta,
                                gamma,
                                alpha,
                                energy,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub sigma_multiplier: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub energy: f64,
}

impl GridPoint {
    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            epsilon: DEFAULT_EPSILON,
            rule: ComponentRule::Energy(self.energy),
        }
    }
}

/// One evaluated grid point. Wall time is kept in memory only so that the
/// serialized records are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    #[serde(flatten)]
    pub point: GridPoint,
    pub sigma: f64,
    pub q: Option<usize>,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub tr_bkb: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    SyntheticValidateTest,
    SourceKfold,
    LeaveDomainsOut,
}

pub const SELECTION_RULE: &str =
    "max validation accuracy; ties broken by lowest grid enumeration index";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub median_sq_distance: f64,
    pub records: Vec<SweepRecord>,
    /// Position of the selected record in `records`.
    pub best: usize,
    pub selection_rule: &'static str,
    /// 1NN on raw pooled source features, for reference.
    pub raw_nn_accuracy: Option<f64>,
}

impl SweepResult {
    pub fn best_record(&self) -> &SweepRecord {
        &self.records[self.best]
    }

    /// Records as JSON lines, one per grid point, in enumeration order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Summary without per-record data; includes total wall time.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "protocol": self.protocol,
            "seed": self.seed,
            "median_sq_distance": self.median_sq_distance,
            "n_configs": self.records.len(),
            "best": self.best_record(),
            "selection_rule": self.selection_rule,
            "raw_nn_accuracy": self.raw_nn_accuracy,
            "wall_time_ms": self.records.iter().map(|r| r.wall_time_ms).sum::<f64>(),
        })
    }
}

/// First record with the maximal validation accuracy.
pub fn select_best(records: &[SweepRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, rec) in records.iter().enumerate() {
        if let Some(v) = rec.validation_accuracy {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Protocol runs standardize every domain sample set by its own statistics
/// unless told otherwise; the fit-level default is to use features as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub parallel: bool,
    pub fit: FitOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            parallel: false,
            fit: FitOptions {
                preprocess: Preprocess::DomainZscore,
                ..FitOptions::default()
            },
        }
    }
}

fn run_tasks<T: Send, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// 1NN accuracy of `target` against the projected training set.
fn nn_accuracy(model: &MdaModel, train_rows: &DMatrix<f64>, target: &MultiDomainDataset) -> Result<f64> {
    let nn = NnModel::new(train_rows.clone(), model.train().labels())?;
    let proj = transform_target(model, target)?;
    let pred = nn1_predict(&nn, &proj.rows)?;
    accuracy(&pred, &target.labels())
}

/// 1NN on untransformed features.
pub fn raw_nn_accuracy(train: &MultiDomainDataset, target: &MultiDomainDataset) -> Result<f64> {
    let refs = DMatrix::from_fn(train.len(), train.dim(), |r, c| train.features(r)[c]);
    let queries = DMatrix::from_fn(target.len(), target.dim(), |r, c| target.features(r)[c]);
    let pred = nn1_predict(&NnModel::new(refs, train.labels())?, &queries)?;
    accuracy(&pred, &target.labels())
}

fn error_record(point: GridPoint, sigma: f64, err: &MdaError, started: Instant) -> SweepRecord {
    SweepRecord {
        point,
        sigma,
        q: None,
        validation_accuracy: None,
        test_accuracy: None,
        tr_bkb: None,
        error: Some(err.to_string()),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

/// Fits every `(beta, gamma, alpha)` combination once per bandwidth and
/// derives the energy variants by truncation.
fn sweep_validate_test(
    grid: &Grid,
    sources: &MultiDomainDataset,
    validation: &MultiDomainDataset,
    test: Option<&MultiDomainDataset>,
    median: f64,
    opts: SweepOptions,
) -> Result<Vec<SweepRecord>> {
    let prepared: Vec<std::result::Result<PreparedFit, String>> =
        run_tasks(grid.sigma_multipliers.len(), opts.parallel, |i| {
            Bandwidth::new(grid.sigma_multipliers[i] * median)
                .and_then(|bw| PreparedFit::new(sources, bw, opts.fit))
                .map_err(|e| e.to_string())
        });
    let points = grid.points();
    let per_solve = grid.energies.len();
    let solves = points.len() / per_solve;
    let groups: Vec<Vec<SweepRecord>> = run_tasks(solves, opts.parallel, |t| {
        let started = Instant::now();
        let chunk = &points[t * per_solve..(t + 1) * per_solve];
        let first = chunk[0];
        let s_idx = grid
            .sigma_multipliers
            .iter()
            .position(|&s| s == first.sigma_multiplier)
            .expect("grid point sigma");
        let sigma = first.sigma_multiplier * median;
        let prep = match &prepared[s_idx] {
            Ok(p) => p,
            Err(msg) => {
                let err = MdaError::InvalidParameter(msg.clone());
                return chunk.iter().map(|&p| error_record(p, sigma, &err, started)).collect();
            }
        };
        let all = match prep.solve_all(&first.hyperparams()) {
            Ok(all) => all,
            Err(e) => return chunk.iter().map(|&p| error_record(p, sigma, &e, started)).collect(),
        };
        chunk
            .iter()
            .map(|&point| {
                let started = Instant::now();
                let hp = point.hyperparams();
                let eval = || -> Result<SweepRecord> {
                    let model = prep.attach(hp, all.select(hp.rule)?)?;
                    let train_rows = transform_train(&model).rows;
                    let val = nn_accuracy(&model, &train_rows, validation)?;
                    let test_acc = test
                        .map(|t| nn_accuracy(&model, &train_rows, t))
                        .transpose()?;
                    Ok(SweepRecord {
                        point,
                        sigma,
                        q: Some(model.q()),
                        validation_accuracy: Some(val),
                        test_accuracy: test_acc,
                        tr_bkb: Some(trace_bkb(&model, TraceGram::Centered)),
                        error: None,
                        wall_time_ms: 0.0,
                    })
                };
                let mut rec = eval().unwrap_or_else(|e| error_record(point, sigma, &e, started));
                rec.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
                rec
            })
            .collect()
    });
    Ok(groups.into_iter().flatten().collect())
}

fn finish(
    protocol: ProtocolKind,
    seed: u64,
    median: f64,
    records: Vec<SweepRecord>,
    raw_nn_accuracy: Option<f64>,
) -> Result<SweepResult> {
    let best = select_best(&records).ok_or_else(|| {
        let first = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "no records".into());
        MdaError::InvalidParameter(format!("every grid point failed; first error: {first}"))
    })?;
    Ok(SweepResult {
        protocol,
        seed,
        median_sq_distance: median,
        records,
        best,
        selection_rule: SELECTION_RULE,
        raw_nn_accuracy,
    })
}

/// Source domains are every domain except `target_domain`. Sources are drawn
/// from PRNG stream 0, the validation target from stream 1 and the test
/// target from stream 2, all with `seed`.
pub fn synthetic_split(
    spec: &SyntheticSpec,
    target_domain: usize,
    seed: u64,
) -> Result<(MultiDomainDataset, MultiDomainDataset, MultiDomainDataset)> {
    let m = spec.domains.len();
    if target_domain >= m {
        return Err(MdaError::InvalidParameter(format!(
            "target domain {target_domain} out of range 0..{m}"
        )));
    }
    let sources: Vec<usize> = (0..m).filter(|&s| s != target_domain).collect();
    if sources.len() < 2 {
        return Err(MdaError::TooFew {
            what: "source domains",
            required: 2,
            found: sources.len(),
        });
    }
    let spec = SyntheticSpec {
        seed,
        ..spec.clone()
    };
    Ok((
        spec.generate_domains(&sources, 0)?,
        spec.generate_domains(&[target_domain], 1)?,
        spec.generate_domains(&[target_domain], 2)?,
    ))
}

/// Trains on the source domains, selects on one target draw and reports
/// accuracy on an independent second draw.
pub fn run_synthetic(
    grid: &Grid,
    spec: &SyntheticSpec,
    target_domain: usize,
    seed: u64,
    opts: SweepOptions,
) -> Result<SweepResult> {
    grid.validate()?;
    let (sources, validation, test) = synthetic_split(spec, target_domain, seed)?;
    let median = median_heuristic(&opts.fit.preprocess.apply(&sources))?;
    let records = sweep_validate_test(grid, &sources, &validation, Some(&test), median, opts)?;
    let raw = raw_nn_accuracy(&sources, &test)?;
    finish(ProtocolKind::SyntheticValidateTest, seed, median, records, Some(raw))
}

/// Fold index per instance. Instances are grouped by `(domain, class)` cell,
/// shuffled within each cell, and dealt round-robin with a counter that
/// carries over between cells.
pub fn stratified_folds(data: &MultiDomainDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(MdaError::InvalidParameter(format!("need k >= 2 folds, got {k}")));
    }
    if k > data.len() {
        return Err(MdaError::InvalidParameter(format!(
            "cannot form {k} folds from {} instances",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; data.len()];
    let mut counter = 0;
    for s in 0..data.num_domains() {
        for j in 0..data.num_classes() {
            let mut cell: Vec<usize> = data
                .instances()
                .iter()
                .enumerate()
                .filter(|(_, inst)| inst.domain == s && inst.label == j)
                .map(|(i, _)| i)
                .collect();
            if cell.is_empty() {
                continue;
            }
            if cell.len() < k {
                log::warn!(
                    "cell (domain {}, class {}) has {} < {k} instances and is not stratified",
                    data.domain_names()[s],
                    data.label_names()[j],
                    cell.len()
                );
            }
            cell.shuffle(&mut rng);
            for i in cell {
                folds[i] = counter % k;
                counter += 1;
            }
        }
    }
    Ok(folds)
}

/// Selected configuration and the model refit on every source instance.
#[derive(Debug, Clone)]
pub struct KfoldOutcome {
    pub sweep: SweepResult,
    pub folds: Vec<usize>,
    pub model: MdaModel,
}

/// k-fold cross-validation on labeled sources only. Validation accuracy of a
/// grid point is the unweighted mean over folds.
pub fn run_source_kfold(
    data: &MultiDomainDataset,
    grid: &Grid,
    k: usize,
    seed: u64,
    opts: SweepOptions,
) -> Result<KfoldOutcome> {
    grid.validate()?;
    let folds = stratified_folds(data, k, seed)?;
    let median = median_heuristic(&opts.fit.preprocess.apply(data))?;
    let splits: Vec<(MultiDomainDataset, MultiDomainDataset)> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            (data.select(&train), data.select(&held))
        })
        .collect();

    // records[fold][point]
    let per_fold: Vec<Vec<SweepRecord>> = splits
        .iter()
        .map(|(train, held)| sweep_validate_test(grid, train, held, None, median, opts))
        .collect::<Result<_>>()?;

    let records: Vec<SweepRecord> = (0..grid.len())
        .map(|p| {
            let recs: Vec<&SweepRecord> = per_fold.iter().map(|f| &f[p]).collect();
            let first = recs[0];
            let accs: Option<Vec<f64>> = recs.iter().map(|r| r.validation_accuracy).collect();
            let error = recs.iter().find_map(|r| r.error.clone());
            SweepRecord {
                point: first.point,
                sigma: first.sigma,
                q: first.q,
                validation_accuracy: accs.map(|a| a.iter().sum::<f64>() / a.len() as f64),
                test_accuracy: None,
                tr_bkb: None,
                error,
                wall_time_ms: recs.iter().map(|r| r.wall_time_ms).sum(),
            }
        })
        .collect();
    let sweep = finish(ProtocolKind::SourceKfold, seed, median, records, None)?;
    let best = sweep.best_record().point;
    let bw = Bandwidth::new(best.sigma_multiplier * median)?;
    let model = PreparedFit::new(data, bw, opts.fit)?.solve(&best.hyperparams())?;
    Ok(KfoldOutcome { sweep, folds, model })
}

/// Every way of holding out `held_out` domains while keeping at least two
/// sources, in lexicographic order.
pub fn leave_domains_out_splits(m: usize, held_out: usize) -> Result<Vec<Vec<usize>>> {
    if held_out == 0 || held_out + 2 > m {
        return Err(MdaError::InvalidParameter(format!(
            "cannot hold out {held_out} of {m} domains and keep two sources"
        )));
    }
    fn rec(start: usize, m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for s in start..m {
            cur.push(s);
            rec(s + 1, m, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, held_out, &mut Vec::new(), &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeaveOutResult {
    pub targets: Vec<String>,
    pub selected: GridPoint,
    pub cv_accuracy: f64,
    pub target: EvalRecord,
}

/// For each held-out domain set: select by source k-fold, refit, evaluate.
pub fn run_leave_domains_out(
    data: &MultiDomainDataset,
    grid: &Grid,
    held_out: usize,
    k: usize,
    seed: u64,
    opts: SweepOptions,
    constants: &BoundConstants,
) -> Result<Vec<LeaveOutResult>> {
    let mut out = Vec::new();
    for targets in leave_domains_out_splits(data.num_domains(), held_out)? {
        let sources: Vec<usize> = (0..data.num_domains()).filter(|s| !targets.contains(s)).collect();
        let train = data.select_domains(&sources)?;
        let target = data.select_domains(&targets)?;
        let outcome = run_source_kfold(&train, grid, k, seed, opts)?;
        let best = outcome.sweep.best_record();
        out.push(LeaveOutResult {
            targets: targets.iter().map(|&t| data.domain_names()[t].clone()).collect(),
            selected: best.point,
            cv_accuracy: best.validation_accuracy.unwrap_or(f64::NAN),
            target: evaluate_model(&outcome.model, &target, true, constants)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub accuracy: f64,
    pub n_target: usize,
    pub q: usize,
    pub bounds: Option<BoundReport>,
}

/// Projects the target, classifies it by 1NN against the projected training
/// set, and optionally attaches the bound diagnostics.
pub fn evaluate_model(
    model: &MdaModel,
    target: &MultiDomainDataset,
    with_bounds: bool,
    constants: &BoundConstants,
) -> Result<EvalRecord> {
    if !target.is_labeled() {
        return Err(MdaError::Unlabeled);
    }
    let train_rows = transform_train(model).rows;
    let acc = nn_accuracy(model, &train_rows, target)?;
    let bounds = if with_bounds {
        Some(bound_report(model, constants, TraceGram::Centered)?)
    } else {
        None
    };
    Ok(EvalRecord {
        accuracy: acc,
        n_target: target.len(),
        q: model.q(),
        bounds,
    })
}

/// Writes `domain,label,z0..z{q-1}` for the projected instances.
pub fn emit_projection_csv(model: &MdaModel, data: &MultiDomainDataset, path: &Path) -> Result<()> {
    let io_err = |source| MdaError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    write_projection(model, data, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn write_projection<W: Write>(model: &MdaModel, data: &MultiDomainDataset, out: &mut W) -> std::io::Result<()> {
    let q = model.q();
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..q).map(|k| format!("z{k}")));
    writeln!(out, "{}", header.join(","))?;
    if data.is_empty() {
        return Ok(());
    }
    let proj = transform_target(model, data).map_err(std::io::Error::other)?;
    for (i, inst) in data.instances().iter().enumerate() {
        write!(
            out,
            "{},{}",
            data.domain_names()[inst.domain],
            data.label_names()[inst.label]
        )?;
        for v in proj.rows.row(i).iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::table2_preset;

    fn small_spec() -> SyntheticSpec {
        let mut spec = table2_preset();
        for d in &mut spec.domains {
            for c in &mut d.classes {
                c.count = 10;
            }
        }
        spec
    }

    fn tiny_grid() -> Grid {
        Grid {
            sigma_multipliers: vec![1.0, 2.0],
            betas: vec![0.5],
            gammas: vec![1.0],
            alphas: vec![1.0, 100.0],
            energies: vec![0.8, 0.96],
        }
    }

    #[test]
    fn grid_sizes_and_order() {
        assert_eq!(Grid::full().len(), 24000);
        assert_eq!(Grid::reduced().len(), 162);
        let pts = tiny_grid().points();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[1].energy, 0.96);
        assert_eq!(pts[2].alpha, 100.0);
        assert_eq!(pts[4].sigma_multiplier, 2.0);
        assert!(pts.iter().enumerate().all(|(i, p)| p.index == i));
        let mut empty = tiny_grid();
        empty.betas.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn selection_takes_first_maximum() {
        let base = run_synthetic(&tiny_grid(), &small_spec(), 2, 1, SweepOptions::default()).unwrap();
        let mut recs = base.records.clone();
        for r in &mut recs {
            r.validation_accuracy = Some(0.5);
        }
        recs[3].validation_accuracy = Some(0.9);
        recs[5].validation_accuracy = Some(0.9);
        recs[0].validation_accuracy = None;
        assert_eq!(select_best(&recs), Some(3));
        let best = base.best_record().validation_accuracy.unwrap();
        let max = base
            .records
            .iter()
            .filter_map(|r| r.validation_accuracy)
            .fold(f64::MIN, f64::max);
        assert_eq!(best, max);
    }

    #[test]
    fn singleton_grid() {
        let grid = Grid::single(1.0, &HyperParams::default());
        let res = run_synthetic(&grid, &small_spec(), 2, 4, SweepOptions::default()).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.best, 0);
    }

    #[test]
    fn synthetic_replay_is_identical() {
        let a = run_synthetic(&tiny_grid(), &small_spec(), 2, 9, SweepOptions::default()).unwrap();
        let b = run_synthetic(
            &tiny_grid(),
            &small_spec(),
            2,
            9,
            SweepOptions {
                parallel: true,
                ..SweepOptions::default()
            },
        )
        .unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn leave_one_out_folds() {
        let data = small_spec().generate_domains(&[0, 1], 0).unwrap().select(&[0, 1, 10, 11, 20, 30, 31, 40, 50, 55]);
        let folds = stratified_folds(&data, 10, 3).unwrap();
        let mut sorted = folds.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert!(stratified_folds(&data, 11, 3).is_err());
        assert!(stratified_folds(&data, 1, 3).is_err());
    }

    #[test]
    fn folds_replay_and_stratify() {
        let data = small_spec().generate_domains(&[0, 1], 0).unwrap();
        let a = stratified_folds(&data, 5, 17).unwrap();
        assert_eq!(a, stratified_folds(&data, 5, 17).unwrap());
        // every (domain, class) cell of 10 gets exactly 2 per fold
        for s in 0..2 {
            for j in 0..3 {
                let mut per = [0; 5];
                for (i, inst) in data.instances().iter().enumerate() {
                    if inst.domain == s && inst.label == j {
                        per[a[i]] += 1;
                    }
                }
                assert_eq!(per, [2; 5]);
            }
        }
    }

    #[test]
    fn duplicated_halves_give_equal_fold_accuracy() {
        let half = small_spec().generate_domains(&[0, 1], 0).unwrap();
        let data = MultiDomainDataset::concat(&[half.clone(), half.clone()]).unwrap();
        let n = half.len();
        // fold 0 = first copy, fold 1 = second copy
        let train = data.select(&(n..2 * n).collect::<Vec<_>>());
        let held = data.select(&(0..n).collect::<Vec<_>>());
        let bw = Bandwidth::new(median_heuristic(&data).unwrap()).unwrap();
        let hp = HyperParams::default();
        let m1 = PreparedFit::new(&train, bw, FitOptions::default()).unwrap().solve(&hp).unwrap();
        let m2 = PreparedFit::new(&held, bw, FitOptions::default()).unwrap().solve(&hp).unwrap();
        let r1 = transform_train(&m1).rows;
        let r2 = transform_train(&m2).rows;
        assert_eq!(nn_accuracy(&m1, &r1, &held).unwrap(), nn_accuracy(&m2, &r2, &train).unwrap());
    }

    #[test]
    fn kfold_selects_and_refits() {
        let data = small_spec().generate_domains(&[0, 1], 0).unwrap();
        let out = run_source_kfold(&data, &tiny_grid(), 5, 2, SweepOptions::default()).unwrap();
        assert_eq!(out.sweep.records.len(), 8);
        assert_eq!(out.model.train().len(), data.len());
        assert_eq!(out.folds, stratified_folds(&data, 5, 2).unwrap());
    }

    #[test]
    fn leave_out_splits() {
        assert_eq!(leave_domains_out_splits(3, 1).unwrap(), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(leave_domains_out_splits(4, 2).unwrap().len(), 6);
        assert!(leave_domains_out_splits(3, 2).is_err());
        let data = small_spec().generate().unwrap();
        let res = run_leave_domains_out(
            &data,
            &Grid::single(1.0, &HyperParams::default()),
            1,
            2,
            0,
            SweepOptions::default(),
            &BoundConstants::default(),
        )
        .unwrap();
        assert_eq!(res.len(), 3);
        assert!(res.iter().all(|r| r.target.bounds.is_some()));
    }

    #[test]
    fn evaluate_on_training_data_is_perfect() {
        let data = small_spec().generate_domains(&[0, 1], 0).unwrap();
        let bw = Bandwidth::new(median_heuristic(&data).unwrap()).unwrap();
        let model = crate::pipeline::fit(&data, bw, &HyperParams::default()).unwrap();
        let rec = evaluate_model(&model, &data, true, &BoundConstants::default()).unwrap();
        assert_eq!(rec.accuracy, 1.0);
        let b = rec.bounds.unwrap();
        assert!(b.tr_bkb >= 0.0 && b.excess_risk_bound > 0.0 && b.generalization_bound > 0.0);
        let no_bounds = evaluate_model(&model, &data, false, &BoundConstants::default()).unwrap();
        assert!(no_bounds.bounds.is_none());
        let unlabeled = MultiDomainDataset::unlabeled(data.instances().to_vec(), 2, data.domain_names().to_vec()).unwrap();
        assert!(matches!(
            evaluate_model(&model, &unlabeled, false, &BoundConstants::default()),
            Err(MdaError::Unlabeled)
        ));
    }

    #[test]
    fn projection_csv_shapes() {
        let data = small_spec().generate_domains(&[0, 1], 0).unwrap();
        let bw = Bandwidth::new(median_heuristic(&data).unwrap()).unwrap();
        let model = crate::pipeline::fit(&data, bw, &HyperParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proj.csv");
        emit_projection_csv(&model, &data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), data.len() + 1);
        assert_eq!(lines[1].split(',').count(), 2 + model.q());
        let proj = transform_target(&model, &data).unwrap().rows;
        for (i, line) in lines[1..].iter().enumerate() {
            for (k, cell) in line.split(',').skip(2).enumerate() {
                let v: f64 = cell.parse().unwrap();
                assert!((v - proj[(i, k)]).abs() <= 1e-10 * proj[(i, k)].abs());
            }
        }
        let empty = data.select(&[]);
        emit_projection_csv(&model, &empty, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
