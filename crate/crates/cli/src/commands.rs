use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use mda_core::bounds::{bound_report, excess_risk_bound, generalization_bound, TraceGram};
use mda_core::data::{apply_prior, load_csv, table2_preset, write_csv, CsvSchema, MultiDomainDataset, SyntheticSpec};
use mda_core::eigsolver::{ComponentRule, HyperParams};
use mda_core::harness::{
    emit_projection_csv, evaluate_model, run_leave_domains_out, run_source_kfold, run_synthetic, Grid, SweepOptions,
};
use mda_core::kernel::{median_heuristic, Bandwidth};
use mda_core::model_io::{read_model, write_model};
use mda_core::pipeline::{fit_with, transform_train, FitOptions, MdaModel};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::settings::{constants, Command, GridSpec, Protocol, Settings, Sigma};

/// What a command produced besides its summary.
pub struct Outcome {
    pub result: Value,
    pub artifacts: Vec<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| usage(format!("missing {flag}")))
}

fn input(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn output(path: &Path) -> Result<&Path, CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(usage(format!("output directory does not exist: {}", dir.display())))
        }
        _ => Ok(path),
    }
}

fn schema(s: &Settings, labeled: bool) -> CsvSchema {
    CsvSchema {
        domain_column: s.domain_column.clone().unwrap_or_else(|| "domain".into()),
        label_column: labeled.then(|| s.label_column.clone().unwrap_or_else(|| "label".into())),
        feature_columns: None,
    }
}

/// Loads and concatenates CSV files. The label vocabulary is the union over
/// files in first-appearance order.
fn load_files(paths: &[PathBuf], schema: &CsvSchema) -> Result<MultiDomainDataset, CliError> {
    if paths.is_empty() {
        return Err(usage("no input files"));
    }
    let mut parts = Vec::with_capacity(paths.len());
    for p in paths {
        info!("reading {}", p.display());
        parts.push(load_csv(input(p)?, schema)?);
    }
    let mut labels: Vec<String> = Vec::new();
    for part in &parts {
        for name in part.label_names() {
            if !labels.contains(name) {
                labels.push(name.clone());
            }
        }
    }
    let parts = parts
        .iter()
        .map(|p| p.relabel_to(&labels))
        .collect::<mda_core::Result<Vec<_>>>()?;
    Ok(MultiDomainDataset::concat(&parts)?)
}

fn load_model(s: &Settings) -> Result<MdaModel, CliError> {
    let path = input(required(&s.model, "--model")?)?;
    info!("reading model {}", path.display());
    Ok(read_model(path)?)
}

fn synthetic_spec(s: &Settings) -> Result<SyntheticSpec, CliError> {
    let mut spec = match (&s.preset, &s.spec) {
        (Some(name), None) if name == "table2" => table2_preset(),
        (Some(name), None) => return Err(usage(format!("unknown preset {name:?} (available: table2)"))),
        (None, Some(path)) => {
            let text = fs::read_to_string(input(path)?)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("invalid spec file {}: {e}", path.display())))?
        }
        _ => return Err(usage("need exactly one of --preset and --spec")),
    };
    if let Some(shift) = &s.prior {
        let idx = spec
            .domains
            .iter()
            .position(|d| d.name == shift.domain)
            .ok_or_else(|| usage(format!("--prior names unknown domain {:?}", shift.domain)))?;
        let total = match shift.total {
            0 => spec.domains[idx].classes.iter().map(|c| c.count).sum(),
            t => t,
        };
        spec.domains[idx] = apply_prior(&spec.domains[idx], &shift.prior, total)?;
    }
    spec.seed = s.seed.unwrap_or(0);
    spec.validate()?;
    Ok(spec)
}

fn fit_options(s: &Settings) -> FitOptions {
    let d = FitOptions::default();
    FitOptions {
        center_before_scatter: s.center_before_scatter.unwrap_or(d.center_before_scatter),
        scale_train: s.scale_train.unwrap_or(d.scale_train),
        preprocess: s.preprocess.unwrap_or(d.preprocess),
    }
}

pub fn run(command: Command, s: &mut Settings) -> Result<Outcome, CliError> {
    match command {
        Command::Gen => gen(s),
        Command::Fit => fit(s),
        Command::Transform => transform(s),
        Command::Eval => eval(s),
        Command::Sweep => sweep(s),
        Command::Bounds => bounds(s),
        Command::Project => project(s),
    }
}

fn gen(s: &Settings) -> Result<Outcome, CliError> {
    let dir = required(&s.out, "--out")?;
    let spec = synthetic_spec(s)?;
    let data = spec.generate()?;
    fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    for (d, name) in data.domain_names().iter().enumerate() {
        let path = dir.join(format!("domain_{name}.csv"));
        write_csv(&data.select_domains(&[d])?, &path)?;
        info!("wrote {}", path.display());
        artifacts.push(path);
    }
    Ok(Outcome {
        result: json!({
            "n": data.len(),
            "dim": data.dim(),
            "domains": data.domain_names(),
            "classes": data.label_names(),
            "counts": data.counts(),
            "dataset_hash": data.content_hash(),
            "spec": spec,
        }),
        artifacts,
    })
}

fn fit(s: &Settings) -> Result<Outcome, CliError> {
    let out = output(required(&s.out, "--out")?)?;
    let data = load_files(required(&s.train, "--train")?, &schema(s, true))?;
    let options = fit_options(s);
    let (sigma, median) = match required(&s.sigma, "--sigma")? {
        Sigma::Value(v) => (*v, None),
        Sigma::Keyword(k) if k == "median" => {
            let d_m = median_heuristic(&options.preprocess.apply(&data))?;
            (s.sigma_multiplier.unwrap_or(1.0) * d_m, Some(d_m))
        }
        Sigma::Keyword(k) => return Err(usage(format!("--sigma: expected \"median\" or a number, got {k:?}"))),
    };
    let rule = match (s.components, s.energy) {
        (Some(q), _) => ComponentRule::Fixed(q),
        (None, Some(f)) => ComponentRule::Energy(f),
        (None, None) => return Err(usage("missing --components or --energy")),
    };
    let hp = HyperParams {
        alpha: *required(&s.alpha, "--alpha")?,
        beta: *required(&s.beta, "--beta")?,
        gamma: *required(&s.gamma, "--gamma")?,
        epsilon: *required(&s.epsilon, "--epsilon")?,
        rule,
    };
    hp.validate()?;
    let bw = Bandwidth::new(sigma)?;
    info!("fitting on {} instances from {} domains, sigma {sigma}", data.len(), data.num_domains());
    let model = fit_with(&data, bw, &hp, options)?;
    write_model(&model, out)?;
    info!("wrote {}", out.display());
    Ok(Outcome {
        result: json!({
            "n": data.len(),
            "domains": data.domain_names(),
            "classes": data.label_names(),
            "dim": data.dim(),
            "q": model.q(),
            "sigma": sigma,
            "median_sq_distance": median,
            "hyperparams": hp,
            "eigenvalues": model.projection().eigenvalues.as_slice(),
            "measures": model.measures(),
            "dataset_hash": data.content_hash(),
        }),
        artifacts: vec![out.to_path_buf()],
    })
}

fn transform(s: &Settings) -> Result<Outcome, CliError> {
    let out = output(required(&s.out, "--out")?)?;
    let model = load_model(s)?;
    let labeled = !s.no_labels.unwrap_or(false);
    let data = load_files(required(&s.data, "--data")?, &schema(s, labeled))?;
    emit_projection_csv(&model, &data, out)?;
    info!("wrote {}", out.display());
    Ok(Outcome {
        result: json!({ "n": data.len(), "q": model.q() }),
        artifacts: vec![out.to_path_buf()],
    })
}

fn project(s: &Settings) -> Result<Outcome, CliError> {
    let out = output(required(&s.out, "--out")?)?;
    let model = load_model(s)?;
    let proj = transform_train(&model);
    let train = model.train();
    let mut w = BufWriter::new(fs::File::create(out)?);
    let mut header = vec!["domain".to_string(), "label".to_string()];
    header.extend((0..proj.q()).map(|k| format!("z{k}")));
    writeln!(w, "{}", header.join(","))?;
    for (i, inst) in train.instances().iter().enumerate() {
        write!(w, "{},{}", train.domain_names()[inst.domain], train.label_names()[inst.label])?;
        for v in proj.rows.row(i).iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    info!("wrote {}", out.display());
    Ok(Outcome {
        result: json!({ "n": train.len(), "q": proj.q() }),
        artifacts: vec![out.to_path_buf()],
    })
}

fn eval(s: &Settings) -> Result<Outcome, CliError> {
    let model = load_model(s)?;
    let data = load_files(required(&s.data, "--data")?, &schema(s, true))?;
    let data = data.relabel_to(model.train().label_names())?;
    let k = constants(s);
    let record = evaluate_model(&model, &data, s.with_bounds.unwrap_or(false), &k)?;
    info!("accuracy {:.4} on {} instances", record.accuracy, record.n_target);
    Ok(Outcome {
        result: serde_json::to_value(&record).expect("record serializes"),
        artifacts: Vec::new(),
    })
}

fn bounds(s: &Settings) -> Result<Outcome, CliError> {
    let k = constants(s);
    k.validate()?;
    if s.model.is_some() {
        let model = load_model(s)?;
        let report = bound_report(&model, &k, s.trace_gram.unwrap_or(TraceGram::Centered))?;
        return Ok(Outcome {
            result: serde_json::to_value(&report).expect("report serializes"),
            artifacts: Vec::new(),
        });
    }
    let tr = *required(&s.tr_bkb, "--model or --tr-bkb")?;
    let excess = s.n.map(|n| excess_risk_bound(tr, n, &k)).transpose()?;
    let generalization = match (s.m, s.n_bar) {
        (Some(m), Some(n_bar)) => Some(generalization_bound(tr, m, n_bar, &k)?),
        (None, None) => None,
        _ => return Err(usage("--m and --n-bar go together")),
    };
    if excess.is_none() && generalization.is_none() {
        return Err(usage("need --n, or --m with --n-bar"));
    }
    Ok(Outcome {
        result: json!({
            "tr_bkb": tr,
            "excess_risk_bound": excess,
            "generalization_bound": generalization,
            "constants": k,
        }),
        artifacts: Vec::new(),
    })
}

fn resolve_grid(spec: &GridSpec) -> Result<Grid, CliError> {
    let grid = match spec {
        GridSpec::Inline(g) => g.clone(),
        GridSpec::Named(name) if name == "reduced" => Grid::reduced(),
        GridSpec::Named(name) if name == "full" => Grid::full(),
        GridSpec::Named(path) => {
            let path = Path::new(path);
            let text = fs::read_to_string(input(path)?)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Runtime(format!("invalid grid file {}: {e}", path.display())))?
        }
    };
    grid.validate()?;
    Ok(grid)
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn sweep(s: &mut Settings) -> Result<Outcome, CliError> {
    let out = output(required(&s.out, "--out")?)?.to_path_buf();
    if let Some(p) = &s.model_out {
        output(p)?;
    }
    // a grid file is inlined so that the summary replays without it
    let grid = resolve_grid(required(&s.grid, "--grid")?)?;
    if matches!(&s.grid, Some(GridSpec::Named(n)) if n != "reduced" && n != "full") {
        s.grid = Some(GridSpec::Inline(grid.clone()));
    }
    let generated = s.train.is_none();
    let protocol = *s
        .protocol
        .get_or_insert(if generated { Protocol::Synthetic } else { Protocol::Kfold });
    let seed = s.seed.unwrap_or(0);
    let opts = SweepOptions {
        parallel: s.threads.unwrap_or(1) > 1,
        fit: fit_options(s),
    };
    let k = constants(s);
    let folds = *required(&s.folds, "--folds")?;
    info!("sweeping {} grid points, protocol {protocol:?}", grid.len());

    let mut artifacts = vec![out.clone()];
    let result = match protocol {
        Protocol::Synthetic => {
            if !generated {
                return Err(usage("the synthetic protocol needs --preset or --spec"));
            }
            let spec = synthetic_spec(s)?;
            let target = s
                .target_domain
                .get_or_insert_with(|| spec.domains.last().map(|d| d.name.clone()).unwrap_or_default())
                .clone();
            let t = spec
                .domains
                .iter()
                .position(|d| d.name == target)
                .ok_or_else(|| usage(format!("--target-domain names unknown domain {target:?}")))?;
            let result = run_synthetic(&grid, &spec, t, seed, opts)?;
            let mut f = BufWriter::new(fs::File::create(&out)?);
            result.write_jsonl(&mut f)?;
            f.flush()?;
            result.summary()
        }
        Protocol::Kfold => {
            let data = sweep_data(s)?;
            let outcome = run_source_kfold(&data, &grid, folds, seed, opts)?;
            let mut f = BufWriter::new(fs::File::create(&out)?);
            outcome.sweep.write_jsonl(&mut f)?;
            f.flush()?;
            if let Some(p) = &s.model_out {
                write_model(&outcome.model, p)?;
                artifacts.push(p.clone());
            }
            let mut summary = outcome.sweep.summary();
            summary["folds"] = json!(folds);
            summary
        }
        Protocol::LeaveOut => {
            let data = sweep_data(s)?;
            let held_out = *required(&s.held_out, "--held-out")?;
            let results = run_leave_domains_out(&data, &grid, held_out, folds, seed, opts, &k)?;
            write_lines(&out, &results)?;
            let mean = results.iter().map(|r| r.target.accuracy).sum::<f64>() / results.len() as f64;
            json!({
                "protocol": "leave_domains_out",
                "seed": seed,
                "splits": results.len(),
                "mean_target_accuracy": mean,
                "results": results,
            })
        }
    };
    Ok(Outcome { result, artifacts })
}

fn sweep_data(s: &Settings) -> Result<MultiDomainDataset, CliError> {
    match &s.train {
        Some(paths) => load_files(paths, &schema(s, true)),
        None => Ok(synthetic_spec(s)?.generate()?),
    }
}
