use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparge_core::{Descent, GraphMode, Hyperparams, SvtRule};

#[derive(Parser, Debug)]
#[command(name = "sparge", version, about = "Sparse-coded graph embedding for patient similarity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled union-of-subspaces data set with missing cells.
    Synth(SynthArgs),
    /// Fit a model and write it with its per-iteration report.
    Fit(FitArgs),
    /// Embed every sample of a CSV with a fitted model.
    Embed(EmbedArgs),
    /// Nearest training patients for one sample.
    Query(QueryArgs),
    /// Classification metrics on a labelled CSV.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Cross-validated search over λ1, λ2, r1, r2.
    Gridsearch(GridArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Supervised,
    Unsupervised,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvtRuleArg {
    Constant,
    Proximal,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentArg {
    Quotient,
    Composite,
}

#[derive(Args, Debug, Clone)]
pub struct HpArgs {
    /// Weight of the observed-entry fidelity term
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    /// Weight of the dictionary nuclear norm
    #[arg(long, default_value_t = 0.1)]
    pub lambda2: f64,
    /// ℓ1 weight of the code penalty
    #[arg(long, default_value_t = 0.05)]
    pub r1: f64,
    /// Squared-ℓ2 weight of the code penalty
    #[arg(long, default_value_t = 0.01)]
    pub r2: f64,
    /// Gradient step size
    #[arg(long, default_value_t = 1e-3)]
    pub gamma: f64,
    /// Singular-value threshold of the dictionary step
    #[arg(long, default_value_t = 0.1)]
    pub zeta: f64,
    /// Number of dictionary atoms k
    #[arg(long, default_value_t = 32)]
    pub dict_size: usize,
    /// Embedding dimension l
    #[arg(long, default_value_t = 10)]
    pub embed_dim: usize,
    /// Neighbour graph construction
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    pub mode: ModeArg,
    /// Same-class neighbours (supervised)
    #[arg(long, default_value_t = 5)]
    pub k1: usize,
    /// Other-class neighbours (supervised)
    #[arg(long, default_value_t = 5)]
    pub k2: usize,
    /// Heat-kernel width (unsupervised)
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Graph neighbours (unsupervised)
    #[arg(long, default_value_t = 5)]
    pub kg: usize,
    /// Maximum descent iterations
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    /// Samples used to initialise the projection
    #[arg(long, default_value_t = 500)]
    pub init_subset: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Backtrack so every accepted step lowers the objective
    #[arg(long)]
    pub backtrack: bool,
    /// Dictionary singular-value threshold rule
    #[arg(long, value_enum, default_value_t = SvtRuleArg::Constant)]
    pub svt_rule: SvtRuleArg,
    /// Objective followed by the descent direction
    #[arg(long, value_enum, default_value_t = DescentArg::Quotient)]
    pub descent: DescentArg,
    /// Learn the initial dictionary class by class
    #[arg(long)]
    pub class_dictionaries: bool,
    /// K-SVD iterations of the initial dictionary
    #[arg(long, default_value_t = 30)]
    pub ksvd_iterations: usize,
    /// Iterations of the initial low-rank completion
    #[arg(long, default_value_t = 500)]
    pub completion_max_iter: usize,
    /// Tolerance of the sparse coder
    #[arg(long, default_value_t = 1e-12)]
    pub coding_tol: f64,
    /// Sweep limit of the sparse coder
    #[arg(long, default_value_t = 10_000)]
    pub coding_max_iter: usize,
}

impl HpArgs {
    pub fn to_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            r1: self.r1,
            r2: self.r2,
            gamma: self.gamma,
            zeta: self.zeta,
            k: self.dict_size,
            l: self.embed_dim,
            mode: match self.mode {
                ModeArg::Supervised => GraphMode::Supervised { k1: self.k1, k2: self.k2 },
                ModeArg::Unsupervised => GraphMode::Unsupervised { t: self.t, kg: self.kg },
            },
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            init_subset: self.init_subset,
            seed: self.seed,
            backtracking: self.backtrack,
            svt_rule: match self.svt_rule {
                SvtRuleArg::Constant => SvtRule::Constant,
                SvtRuleArg::Proximal => SvtRule::ProximalStep,
            },
            descent: match self.descent {
                DescentArg::Quotient => Descent::QuotientOnly,
                DescentArg::Composite => Descent::Composite,
            },
            class_dictionaries: self.class_dictionaries,
            ksvd_iterations: self.ksvd_iterations,
            completion_max_iter: self.completion_max_iter,
            coding_tol: self.coding_tol,
            coding_max_iter: self.coding_max_iter,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeArg {
    None,
    Normal,
    Nearby,
    Mean,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsArg {
    InverseRank,
    Uniform,
}

/// How a CSV becomes a masked matrix.
#[derive(Args, Debug, Clone)]
pub struct PrepArgs {
    /// Header name of the class label column
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Header name of the patient id column
    #[arg(long, default_value = "id")]
    pub id_column: String,
    /// Apply the built-in questionnaire integer codings
    #[arg(long)]
    pub questionnaire: bool,
    /// Fill missing cells before use
    #[arg(long, value_enum, default_value_t = ImputeArg::None)]
    pub impute: ImputeArg,
    /// Observations averaged by nearby imputation
    #[arg(long, default_value_t = 10)]
    pub impute_window: usize,
    /// Weights of nearby imputation
    #[arg(long, value_enum, default_value_t = WeightsArg::InverseRank)]
    pub impute_weights: WeightsArg,
    /// Scale every sample to unit norm
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of classes (one subspace each)
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Ambient dimension m
    #[arg(long, default_value_t = 60)]
    pub ambient_dim: usize,
    /// Subspace dimension d
    #[arg(long, default_value_t = 4)]
    pub subspace_dim: usize,
    /// Samples per class
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Probability that a cell is missing
    #[arg(long, default_value_t = 0.2)]
    pub missing: f64,
    /// Noise-free data path [default: <output stem>.truth.csv]
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV
    #[arg(short, long, default_value = "synthetic.csv")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Training CSV
    pub input: PathBuf,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// Per-iteration report CSV [default: <output>.report.csv]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Add wall-clock columns to the report (not reproducible)
    #[arg(long)]
    pub timing: bool,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file
    #[arg(short, long, default_value = "model.sparge")]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    /// CSV of samples to embed
    pub input: PathBuf,
    /// Fitted model
    #[arg(long, default_value = "model.sparge")]
    pub model: PathBuf,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embeddings CSV [default: stdout]
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    /// CSV holding the query sample
    pub sample: PathBuf,
    /// Row of the query sample (0-based)
    #[arg(long, default_value_t = 0)]
    pub row: usize,
    /// Fitted model
    #[arg(long, default_value = "model.sparge")]
    pub model: PathBuf,
    /// Patients to search [default: the model's training samples]
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Number of neighbours
    #[arg(long, default_value_t = 5)]
    pub neighbors: usize,
    /// List the sample's dictionary atoms by weight instead
    #[arg(long)]
    pub by_weight: bool,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Result file [default: stdout]
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// k-NN on the embedded codes
    Sparge,
    /// k-NN on the sparse codes without projection
    Knn,
    /// Logistic regression on the embedded codes (two classes)
    Lr,
    /// k-NN on the raw features of --train
    RawKnn,
    /// Logistic regression on the raw features of --train (two classes)
    RawLr,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Labelled test CSV
    pub input: PathBuf,
    /// Fitted model
    #[arg(long, default_value = "model.sparge")]
    pub model: PathBuf,
    /// Classifier to score
    #[arg(long, value_enum, default_value_t = Baseline::Sparge)]
    pub baseline: Baseline,
    /// Raw training CSV for the raw-space baselines
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Number of neighbours
    #[arg(long, default_value_t = 5)]
    pub neighbors: usize,
    /// Ridge of the logistic regression
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    /// Add mean prediction time (not reproducible)
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics CSV [default: stdout]
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Labelled CSV [default: a seeded synthetic toy set]
    pub input: Option<PathBuf>,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report file [default: stdout]
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Labelled training CSV
    pub input: PathBuf,
    /// Cross-validation folds
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// λ1 values to try [default: --lambda1]
    #[arg(long, value_delimiter = ',')]
    pub grid_lambda1: Vec<f64>,
    /// λ2 values to try [default: --lambda2]
    #[arg(long, value_delimiter = ',')]
    pub grid_lambda2: Vec<f64>,
    /// r1 values to try [default: --r1]
    #[arg(long, value_delimiter = ',')]
    pub grid_r1: Vec<f64>,
    /// r2 values to try [default: --r2]
    #[arg(long, value_delimiter = ',')]
    pub grid_r2: Vec<f64>,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// key=value file of defaults for these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scores CSV [default: stdout]
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
