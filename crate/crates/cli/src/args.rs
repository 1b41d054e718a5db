use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mda_core::bounds::TraceGram;
use mda_core::data::Preprocess;

use crate::settings::{GridSpec, PriorShift, Protocol, Settings, Sigma};

/// Multidomain discriminant analysis: learn a domain-invariant kernel
/// feature transformation from labeled source domains.
///
/// Option values are taken from the command line first, then from the
/// `--config` file, then from the built-in defaults shown below. The seed
/// falls back to the MDA_SEED environment variable after the config file.
#[derive(Debug, Parser)]
#[command(name = "mda", version)]
pub struct Cli {
    /// JSON config file, or a summary of an earlier run to replay [default: none]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads [default: available cores]
    #[arg(long, global = true, help_heading = "Global options", value_name = "N")]
    pub threads: Option<usize>,

    /// Write the JSON summary here instead of standard output [default: stdout]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    pub summary: Option<PathBuf>,

    /// More log output on standard error; repeat for more [default: 0]
    #[arg(short, long, global = true, help_heading = "Global options", action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate a synthetic multidomain dataset, one CSV per domain
    Gen(GenArgs),
    /// Fit a model on labeled source domains
    Fit(FitArgs),
    /// Project new instances with a fitted model
    Transform(TransformArgs),
    /// Classify a labeled target set by 1NN in the learned subspace
    Eval(EvalArgs),
    /// Hyperparameter sweep under a validation protocol
    Sweep(SweepArgs),
    /// Excess-risk and generalization bounds
    Bounds(BoundsArgs),
    /// Project the training set of a fitted model
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to MDA_SEED [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Built-in generator preset (table2) [default: table2]
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,

    /// JSON file describing the generating distributions [default: none]
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub spec: Option<PathBuf>,

    /// Class proportions for one domain, DOMAIN:P1,P2,..[@TOTAL] [default: none]
    #[arg(long, value_name = "SHIFT")]
    pub prior: Option<PriorShift>,
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Name of the domain column [default: domain]
    #[arg(long, value_name = "NAME")]
    pub domain_column: Option<String>,

    /// Name of the label column [default: label]
    #[arg(long, value_name = "NAME")]
    pub label_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitOptionArgs {
    /// Feature preprocessing: none or domain_zscore [default: domain_zscore]
    #[arg(long, value_name = "KIND")]
    pub preprocess: Option<Preprocess>,

    /// Build the measure matrices from the centered Gram [default: false]
    #[arg(long, value_name = "BOOL")]
    pub center_before_scatter: Option<bool>,

    /// Rescale training projections by the eigenvalues [default: true]
    #[arg(long, value_name = "BOOL")]
    pub scale_train: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ConstantArgs {
    /// Lipschitz constant of the loss [default: 1]
    #[arg(long, value_name = "X")]
    pub lipschitz_loss: Option<f64>,

    /// Upper bound of the loss [default: 1]
    #[arg(long, value_name = "X")]
    pub loss_bound: Option<f64>,

    /// Bound of the kernel on the input space [default: 1]
    #[arg(long, value_name = "X")]
    pub kernel_bound_x: Option<f64>,

    /// Bound of the kernel on the feature space [default: 1]
    #[arg(long, value_name = "X")]
    pub kernel_bound_x_prime: Option<f64>,

    /// Bound of the kernel on distributions [default: 1]
    #[arg(long, value_name = "X")]
    pub kernel_bound_gamma: Option<f64>,

    /// Lipschitz constant of the distribution kernel feature map [default: 1]
    #[arg(long, value_name = "X")]
    pub lipschitz_feature_map: Option<f64>,

    /// Confidence parameter, bounds hold with probability 1 - delta [default: 0.05]
    #[arg(long, value_name = "X")]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub source: SourceArgs,

    /// Output directory, created if missing [default: none, required]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV files, comma separated or repeated [default: none, required]
    #[arg(long, value_name = "FILES", value_delimiter = ',')]
    pub train: Vec<PathBuf>,

    #[command(flatten)]
    pub schema: SchemaArgs,

    /// Kernel bandwidth: "median" or a number [default: median]
    #[arg(long, value_name = "SIGMA")]
    pub sigma: Option<Sigma>,

    /// Multiplier applied to the median heuristic [default: 1]
    #[arg(long, value_name = "X")]
    pub sigma_multiplier: Option<f64>,

    /// Weight of class discrepancy against multidomain between-class scatter [default: 0.5]
    #[arg(long, value_name = "X")]
    pub beta: Option<f64>,

    /// Weight of multidomain within-class scatter [default: 1]
    #[arg(long, value_name = "X")]
    pub alpha: Option<f64>,

    /// Weight of domain discrepancy [default: 1]
    #[arg(long, value_name = "X")]
    pub gamma: Option<f64>,

    /// Ridge added to the denominator [default: 1e-5]
    #[arg(long, value_name = "X")]
    pub epsilon: Option<f64>,

    /// Keep exactly this many components [default: none]
    #[arg(long, value_name = "Q", conflicts_with = "energy")]
    pub components: Option<usize>,

    /// Keep components up to this eigenvalue energy fraction [default: 0.96]
    #[arg(long, value_name = "X")]
    pub energy: Option<f64>,

    #[command(flatten)]
    pub fit: FitOptionArgs,

    /// Model file to write [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Model file [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Input CSV files, comma separated or repeated [default: none, required]
    #[arg(long, value_name = "FILES", value_delimiter = ',')]
    pub data: Vec<PathBuf>,

    #[command(flatten)]
    pub schema: SchemaArgs,

    /// Inputs have no label column [default: false]
    #[arg(long)]
    pub no_labels: bool,

    /// Projection CSV to write [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Labeled target CSV files, comma separated or repeated [default: none, required]
    #[arg(long, value_name = "FILES", value_delimiter = ',')]
    pub data: Vec<PathBuf>,

    #[command(flatten)]
    pub schema: SchemaArgs,

    /// Attach bound diagnostics to the report [default: false]
    #[arg(long)]
    pub with_bounds: bool,

    #[command(flatten)]
    pub constants: ConstantArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub seed: SeedArg,

    #[command(flatten)]
    pub source: SourceArgs,

    /// Labeled CSV files instead of a generator, comma separated or repeated [default: none]
    #[arg(long, value_name = "FILES", value_delimiter = ',', conflicts_with_all = ["preset", "spec"])]
    pub train: Vec<PathBuf>,

    #[command(flatten)]
    pub schema: SchemaArgs,

    /// Grid: reduced, full, or a JSON grid file [default: reduced]
    #[arg(long, value_name = "GRID")]
    pub grid: Option<String>,

    /// Validation protocol [default: synthetic for generated data, else kfold]
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,

    /// Target domain name for the synthetic protocol [default: last domain]
    #[arg(long, value_name = "NAME")]
    pub target_domain: Option<String>,

    /// Number of source folds [default: 5]
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,

    /// Domains held out per leave-out split [default: 1]
    #[arg(long, value_name = "N")]
    pub held_out: Option<usize>,

    #[command(flatten)]
    pub fit: FitOptionArgs,

    #[command(flatten)]
    pub constants: ConstantArgs,

    /// JSON-lines output, one record per grid point [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Write the refit model of the kfold protocol here [default: none]
    #[arg(long, value_name = "FILE")]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Model file to take tr(B^T K B), n, m and n_bar from [default: none]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// tr(B^T K B) given directly [default: none]
    #[arg(long, value_name = "X", conflicts_with = "model")]
    pub tr_bkb: Option<f64>,

    /// Total training instances, for the excess-risk bound [default: none]
    #[arg(long, value_name = "N", conflicts_with = "model")]
    pub n: Option<usize>,

    /// Number of source domains, for the generalization bound [default: none]
    #[arg(long, value_name = "M", conflicts_with = "model")]
    pub m: Option<usize>,

    /// Mean instances per domain, for the generalization bound [default: none]
    #[arg(long, value_name = "X", conflicts_with = "model")]
    pub n_bar: Option<f64>,

    /// Gram used in the trace with --model: centered or raw [default: centered]
    #[arg(long, value_name = "KIND", value_parser = parse_trace_gram)]
    pub trace_gram: Option<TraceGram>,

    #[command(flatten)]
    pub constants: ConstantArgs,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Model file [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Projection CSV to write [default: none, required]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_trace_gram(s: &str) -> Result<TraceGram, String> {
    match s {
        "centered" => Ok(TraceGram::Centered),
        "raw" => Ok(TraceGram::Raw),
        other => Err(format!("expected centered or raw, got {other:?}")),
    }
}

fn non_empty(v: &[PathBuf]) -> Option<Vec<PathBuf>> {
    (!v.is_empty()).then(|| v.to_vec())
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl SourceArgs {
    fn fill(&self, s: &mut Settings) {
        s.preset = self.preset.clone();
        s.spec = self.spec.clone();
        s.prior = self.prior.clone();
    }
}

impl SchemaArgs {
    fn fill(&self, s: &mut Settings) {
        s.domain_column = self.domain_column.clone();
        s.label_column = self.label_column.clone();
    }
}

impl FitOptionArgs {
    fn fill(&self, s: &mut Settings) {
        s.preprocess = self.preprocess;
        s.center_before_scatter = self.center_before_scatter;
        s.scale_train = self.scale_train;
    }
}

impl ConstantArgs {
    fn fill(&self, s: &mut Settings) {
        s.lipschitz_loss = self.lipschitz_loss;
        s.loss_bound = self.loss_bound;
        s.kernel_bound_x = self.kernel_bound_x;
        s.kernel_bound_x_prime = self.kernel_bound_x_prime;
        s.kernel_bound_gamma = self.kernel_bound_gamma;
        s.lipschitz_feature_map = self.lipschitz_feature_map;
        s.delta = self.delta;
    }
}

impl Cli {
    /// Values given explicitly on the command line.
    pub fn settings(&self) -> Settings {
        let mut s = Settings {
            threads: self.threads,
            summary: self.summary.clone(),
            verbose: (self.verbose > 0).then_some(self.verbose),
            ..Settings::default()
        };
        match &self.command {
            CliCommand::Gen(a) => {
                s.seed = a.seed.seed;
                a.source.fill(&mut s);
                s.out = a.out.clone();
            }
            CliCommand::Fit(a) => {
                s.train = non_empty(&a.train);
                a.schema.fill(&mut s);
                s.sigma = a.sigma.clone();
                s.sigma_multiplier = a.sigma_multiplier;
                s.beta = a.beta;
                s.alpha = a.alpha;
                s.gamma = a.gamma;
                s.epsilon = a.epsilon;
                s.components = a.components;
                s.energy = a.energy;
                a.fit.fill(&mut s);
                s.out = a.out.clone();
            }
            CliCommand::Transform(a) => {
                s.model = a.model.clone();
                s.data = non_empty(&a.data);
                a.schema.fill(&mut s);
                s.no_labels = flag(a.no_labels);
                s.out = a.out.clone();
            }
            CliCommand::Eval(a) => {
                s.model = a.model.clone();
                s.data = non_empty(&a.data);
                a.schema.fill(&mut s);
                s.with_bounds = flag(a.with_bounds);
                a.constants.fill(&mut s);
            }
            CliCommand::Sweep(a) => {
                s.seed = a.seed.seed;
                a.source.fill(&mut s);
                s.train = non_empty(&a.train);
                a.schema.fill(&mut s);
                s.grid = a.grid.clone().map(GridSpec::Named);
                s.protocol = a.protocol;
                s.target_domain = a.target_domain.clone();
                s.folds = a.folds;
                s.held_out = a.held_out;
                a.fit.fill(&mut s);
                a.constants.fill(&mut s);
                s.out = a.out.clone();
                s.model_out = a.model_out.clone();
            }
            CliCommand::Bounds(a) => {
                s.model = a.model.clone();
                s.tr_bkb = a.tr_bkb;
                s.n = a.n;
                s.m = a.m;
                s.n_bar = a.n_bar;
                s.trace_gram = a.trace_gram;
                a.constants.fill(&mut s);
            }
            CliCommand::Project(a) => {
                s.model = a.model.clone();
                s.out = a.out.clone();
            }
        }
        s
    }

    pub fn command(&self) -> crate::settings::Command {
        use crate::settings::Command;
        match self.command {
            CliCommand::Gen(_) => Command::Gen,
            CliCommand::Fit(_) => Command::Fit,
            CliCommand::Transform(_) => Command::Transform,
            CliCommand::Eval(_) => Command::Eval,
            CliCommand::Sweep(_) => Command::Sweep,
            CliCommand::Bounds(_) => Command::Bounds,
            CliCommand::Project(_) => Command::Project,
        }
    }
}
