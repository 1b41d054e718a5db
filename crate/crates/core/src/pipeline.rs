//! Fitting on labeled source domains and projecting training and target
//! instances into the learned subspace.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MultiDomainDataset, Preprocess};
use crate::eigsolver::{assemble, solve_all, HyperParams, Projection, DEFAULT_EPSILON};
use crate::error::{MdaError, Result};
use crate::kernel::{center_test, center_train, cross_gram, gram, Bandwidth, GramMatrix};
use crate::scatter::{build_coefficients, measure_report, EmbeddingCoefficients, MeasureReport, ScatterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Build the measure matrices from the centered Gram instead of the raw one.
    pub center_before_scatter: bool,
    /// Apply `Gamma^{-1/2}` to training projections as well as target ones.
    pub scale_train: bool,
    /// Applied to the training set at fit time and to every target set
    /// before projection.
    #[serde(default)]
    pub preprocess: Preprocess,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            center_before_scatter: false,
            scale_train: true,
            preprocess: Preprocess::None,
        }
    }
}

/// Training instances (after preprocessing) with their raw and centered
/// Grams.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    train: MultiDomainDataset,
    bandwidth: Bandwidth,
    preprocess: Preprocess,
    k_raw: GramMatrix,
    k_centered: GramMatrix,
}

impl KernelBasis {
    pub fn new(train: MultiDomainDataset, bandwidth: Bandwidth) -> Result<Self> {
        Self::prepared(train, bandwidth, Preprocess::None)
    }

    /// `train` must already have `preprocess` applied; targets get it at
    /// projection time.
    pub fn prepared(train: MultiDomainDataset, bandwidth: Bandwidth, preprocess: Preprocess) -> Result<Self> {
        if train.is_empty() {
            return Err(MdaError::EmptyDataset);
        }
        let k_raw = gram(&train, bandwidth);
        let k_centered = center_train(&k_raw)?;
        Ok(Self {
            train,
            bandwidth,
            preprocess,
            k_raw,
            k_centered,
        })
    }

    pub fn train(&self) -> &MultiDomainDataset {
        &self.train
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn preprocess(&self) -> Preprocess {
        self.preprocess
    }

    pub fn k_raw(&self) -> &GramMatrix {
        &self.k_raw
    }

    pub fn k_centered(&self) -> &GramMatrix {
        &self.k_centered
    }

    fn weights(proj: &Projection, scale: bool) -> DMatrix<f64> {
        if scale {
            proj.scaled_b()
        } else {
            proj.b.clone()
        }
    }

    /// `K_c B` (optionally times `Gamma^{-1/2}`) for the training set.
    pub fn project_train(&self, proj: &Projection, scale: bool) -> DMatrix<f64> {
        self.k_centered.values() * Self::weights(proj, scale)
    }

    /// Cross Gram of the preprocessed target against the training set,
    /// test-centered, times `B Gamma^{-1/2}`.
    pub fn project(&self, target: &MultiDomainDataset, proj: &Projection) -> Result<DMatrix<f64>> {
        let target = self.preprocess.apply(target);
        let kt = cross_gram(&target, &self.train, self.bandwidth)?;
        let kt = center_test(&kt, &self.k_raw)?;
        Ok(kt.values() * proj.scaled_b())
    }
}

/// Everything that does not depend on the trade-off parameters: Grams,
/// embedding coefficients and measure matrices.
#[derive(Debug, Clone)]
pub struct PreparedFit {
    basis: Arc<KernelBasis>,
    coefficients: EmbeddingCoefficients,
    scatter: ScatterSet,
    options: FitOptions,
}

impl PreparedFit {
    pub fn new(data: &MultiDomainDataset, bw: Bandwidth, options: FitOptions) -> Result<Self> {
        Self::from_prepared(&options.preprocess.apply(data), bw, options)
    }

    fn from_prepared(data: &MultiDomainDataset, bw: Bandwidth, options: FitOptions) -> Result<Self> {
        let basis = KernelBasis::prepared(data.clone(), bw, options.preprocess)
            .map_err(MdaError::at("kernel"))?;
        let coefficients = build_coefficients(data).map_err(MdaError::at("scatter"))?;
        let k_for_scatter = if options.center_before_scatter {
            &basis.k_centered
        } else {
            &basis.k_raw
        };
        let scatter =
            ScatterSet::build(k_for_scatter, &coefficients).map_err(MdaError::at("scatter"))?;
        Ok(Self {
            basis: Arc::new(basis),
            coefficients,
            scatter,
            options,
        })
    }

    /// Same machinery with every instance in one pseudo-domain and the
    /// domain discrepancy fixed to zero.
    pub(crate) fn new_pooled(data: &MultiDomainDataset, bw: Bandwidth) -> Result<Self> {
        let pooled = data.pooled();
        let basis = KernelBasis::new(pooled.clone(), bw).map_err(MdaError::at("kernel"))?;
        let coefficients = build_coefficients(&pooled).map_err(MdaError::at("scatter"))?;
        let scatter = ScatterSet::build_pooled(&basis.k_raw, &coefficients)
            .map_err(MdaError::at("scatter"))?;
        Ok(Self {
            basis: Arc::new(basis),
            coefficients,
            scatter,
            options: FitOptions::default(),
        })
    }

    pub fn basis(&self) -> &Arc<KernelBasis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &EmbeddingCoefficients {
        &self.coefficients
    }

    pub fn scatter(&self) -> &ScatterSet {
        &self.scatter
    }

    pub fn options(&self) -> FitOptions {
        self.options
    }

    pub fn assemble(&self, hp: &HyperParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        assemble(&self.scatter, &self.basis.k_centered, hp)
    }

    /// All components above the cutoff, before the component rule is applied.
    pub fn solve_all(&self, hp: &HyperParams) -> Result<Projection> {
        let (a, d) = self.assemble(hp).map_err(MdaError::at("assemble"))?;
        solve_all(&a, &d, DEFAULT_EPSILON).map_err(MdaError::at("solver"))
    }

    pub fn solve(&self, hp: &HyperParams) -> Result<MdaModel> {
        let all = self.solve_all(hp)?;
        let projection = all.select(hp.rule).map_err(MdaError::at("solver"))?;
        self.attach(*hp, projection)
    }

    /// Wraps an already computed projection as a model.
    pub fn attach(&self, hp: HyperParams, projection: Projection) -> Result<MdaModel> {
        let measures = measure_report(&self.scatter, &projection.b)?;
        Ok(MdaModel {
            basis: Arc::clone(&self.basis),
            hyperparams: hp,
            options: self.options,
            projection,
            measures,
        })
    }
}

/// A fitted model: training data and Grams, hyperparameters, projection and
/// the measure traces at fit time.
#[derive(Debug, Clone)]
pub struct MdaModel {
    basis: Arc<KernelBasis>,
    hyperparams: HyperParams,
    options: FitOptions,
    projection: Projection,
    measures: MeasureReport,
}

impl MdaModel {
    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn train(&self) -> &MultiDomainDataset {
        &self.basis.train
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.basis.bandwidth
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hyperparams
    }

    pub fn options(&self) -> FitOptions {
        self.options
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn measures(&self) -> &MeasureReport {
        &self.measures
    }

    pub fn q(&self) -> usize {
        self.projection.q()
    }
}

pub fn fit(data: &MultiDomainDataset, bw: Bandwidth, hp: &HyperParams) -> Result<MdaModel> {
    fit_with(data, bw, hp, FitOptions::default())
}

pub fn fit_with(
    data: &MultiDomainDataset,
    bw: Bandwidth,
    hp: &HyperParams,
    options: FitOptions,
) -> Result<MdaModel> {
    hp.validate()?;
    PreparedFit::new(data, bw, options)?.solve(hp)
}

/// Rebuilds a model around a stored projection (for example one read from
/// disk). `train` is taken as already preprocessed; Grams and measures are
/// recomputed from it.
pub fn restore(
    train: &MultiDomainDataset,
    bw: Bandwidth,
    hp: HyperParams,
    options: FitOptions,
    projection: Projection,
) -> Result<MdaModel> {
    if projection.n() != train.len() {
        return Err(MdaError::ShapeMismatch(format!(
            "projection has {} rows, training set has {} instances",
            projection.n(),
            train.len()
        )));
    }
    if projection.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(MdaError::InvalidParameter("stored eigenvalues must be positive".into()));
    }
    PreparedFit::from_prepared(train, bw, options)?.attach(hp, projection)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSource {
    Train,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedData {
    pub rows: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub domains: Vec<usize>,
    pub source: ProjectionSource,
}

impl ProjectedData {
    pub fn q(&self) -> usize {
        self.rows.ncols()
    }
}

pub fn transform_train(model: &MdaModel) -> ProjectedData {
    let train = model.train();
    ProjectedData {
        rows: model
            .basis
            .project_train(&model.projection, model.options.scale_train),
        labels: train.is_labeled().then(|| train.labels()),
        domains: train.domains(),
        source: ProjectionSource::Train,
    }
}

pub fn transform_target(model: &MdaModel, target: &MultiDomainDataset) -> Result<ProjectedData> {
    Ok(ProjectedData {
        rows: model.basis.project(target, &model.projection)?,
        labels: target.is_labeled().then(|| target.labels()),
        domains: target.domains(),
        source: ProjectionSource::Target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::table2_preset;
    use crate::eigsolver::ComponentRule;
    use crate::kernel::median_heuristic;

    fn sources() -> MultiDomainDataset {
        let mut spec = table2_preset();
        spec.seed = 3;
        for d in &mut spec.domains {
            for c in &mut d.classes {
                c.count = 12;
            }
        }
        spec.generate_domains(&[0, 1], 0).unwrap()
    }

    fn bw(data: &MultiDomainDataset) -> Bandwidth {
        Bandwidth::new(median_heuristic(data).unwrap()).unwrap()
    }

    #[test]
    fn fit_balanced_defaults() {
        let data = sources();
        let model = fit(&data, bw(&data), &HyperParams::default()).unwrap();
        assert!(model.q() >= 1);
        assert!(model.projection().eigenvalues.iter().all(|&l| l > 0.0));
        let (a, d) = PreparedFit::new(&data, bw(&data), FitOptions::default())
            .unwrap()
            .assemble(model.hyperparams())
            .unwrap();
        let obj = crate::eigsolver::objective_value(&a, &d, &model.projection().b).unwrap();
        assert!(obj > 0.0);
    }

    #[test]
    fn single_domain_fails_at_scatter() {
        let data = sources().select_domains(&[0]).unwrap();
        let err = fit(&data, bw(&data), &HyperParams::default()).unwrap_err();
        match err {
            MdaError::Stage { stage, .. } => assert_eq!(stage, "scatter"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicated_domain_has_zero_domain_discrepancy() {
        let one = sources().select_domains(&[0]).unwrap();
        let mut twin = one.instances().to_vec();
        twin.extend(one.instances().iter().map(|i| crate::data::Instance {
            domain: 1,
            ..i.clone()
        }));
        let data = MultiDomainDataset::new(
            twin,
            2,
            vec!["a".into(), "b".into()],
            one.label_names().to_vec(),
        )
        .unwrap();
        let prep = PreparedFit::new(&data, bw(&data), FitOptions::default()).unwrap();
        assert!(prep.scatter().g.trace().abs() <= 1e-10);
    }

    #[test]
    fn train_and_target_transforms_agree() {
        let data = sources();
        let model = fit(&data, bw(&data), &HyperParams::default()).unwrap();
        let a = transform_train(&model);
        let b = transform_target(&model, &data).unwrap();
        assert_eq!(a.rows.shape(), (data.len(), model.q()));
        assert!((&a.rows - &b.rows).abs().max() <= 1e-10);
        for col in a.rows.column_iter() {
            let norm = col.norm();
            assert!(norm.is_finite() && norm > 0.0);
        }
    }

    #[test]
    fn single_target_and_permutation() {
        let data = sources();
        let model = fit(&data, bw(&data), &HyperParams::default()).unwrap();
        let mut spec = table2_preset();
        spec.seed = 9;
        let target = spec.generate_domains(&[2], 5).unwrap();
        let one = transform_target(&model, &target.select(&[4])).unwrap();
        assert_eq!(one.rows.shape(), (1, model.q()));
        assert!(one.rows.iter().all(|v| v.is_finite()));

        let perm: Vec<usize> = (0..target.len()).rev().collect();
        let base = transform_target(&model, &target).unwrap();
        let permuted = transform_target(&model, &target.select(&perm)).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            let diff = (base.rows.row(old) - permuted.rows.row(new)).abs().max();
            assert!(diff <= 1e-12);
        }
        assert!(transform_target(&model, &MultiDomainDataset::new(
            vec![crate::data::Instance { features: vec![1.0], label: 0, domain: 0 }],
            1,
            vec!["x".into()],
            vec!["1".into()],
        ).unwrap()).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let data = sources();
        let hp = HyperParams {
            rule: ComponentRule::Fixed(2),
            ..HyperParams::default()
        };
        let a = fit(&data, bw(&data), &hp).unwrap();
        let b = fit(&data, bw(&data), &hp).unwrap();
        assert_eq!(a.projection(), b.projection());
    }

    #[test]
    fn centered_scatter_switch_fits() {
        let data = sources();
        let opts = FitOptions {
            center_before_scatter: true,
            scale_train: false,
            ..FitOptions::default()
        };
        let model = fit_with(&data, bw(&data), &HyperParams::default(), opts).unwrap();
        let tr = transform_train(&model);
        let expected = model.basis().k_centered().values() * &model.projection().b;
        assert!((tr.rows - expected).abs().max() == 0.0);
    }

    #[test]
    fn restore_round_trip() {
        let data = sources();
        let model = fit(&data, bw(&data), &HyperParams::default()).unwrap();
        let back = restore(
            &data,
            model.bandwidth(),
            *model.hyperparams(),
            model.options(),
            model.projection().clone(),
        )
        .unwrap();
        assert_eq!(transform_train(&back), transform_train(&model));
        assert_eq!(back.measures(), model.measures());
    }

    #[test]
    fn standardized_fit_projects_consistently() {
        let data = sources();
        let opts = FitOptions {
            preprocess: Preprocess::DomainZscore,
            ..FitOptions::default()
        };
        let prepared = data.standardize_domains();
        let model = fit_with(&data, bw(&prepared), &HyperParams::default(), opts).unwrap();
        assert_eq!(model.train(), &prepared);
        let a = transform_train(&model);
        let b = transform_target(&model, &data).unwrap();
        assert!((&a.rows - &b.rows).abs().max() <= 1e-10);
        // a rigidly shifted and rescaled copy of the target projects identically
        let moved = MultiDomainDataset::new(
            data.instances()
                .iter()
                .map(|i| crate::data::Instance {
                    features: i.features.iter().map(|v| 3.0 * v + 40.0).collect(),
                    ..i.clone()
                })
                .collect(),
            2,
            data.domain_names().to_vec(),
            data.label_names().to_vec(),
        )
        .unwrap();
        let c = transform_target(&model, &moved).unwrap();
        assert!((&b.rows - &c.rows).abs().max() <= 1e-8);
    }
}
