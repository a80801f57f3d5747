//! Command-line definitions.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use topohaz::{Boundary, Direction, LatticeOptions, ModelKind, Neighborhood, RiskConvention};

#[derive(Debug, Parser)]
#[command(name = "topohaz", version, about = "Hazard estimates for topological events in random fields and trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a field from model M1, M2 or M3 and write it as a CSV grid.
    SimulateField(SimulateField),
    /// Nelson–Aalen estimate and barcode of component births in one field.
    NaField(NaField),
    /// Limiting cumulative hazard for a Matérn or independent field.
    Limit(Limit),
    /// Confidence band from replicate fields.
    BandReplicates(BandReplicates),
    /// Parametric bootstrap band from a single field.
    BandBootstrap(BandBootstrap),
    /// Coverage of bands and intervals against the limiting curve.
    Coverage(Coverage),
    /// Edge event table of embedded trees.
    TreeEvents(TreeEvents),
    /// Cox proportional hazards fit on an edge event table.
    CoxFit(CoxFit),
    /// Render curve and band CSV files as SVG.
    Plot(Plot),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateField(_) => "simulate-field",
            Command::NaField(_) => "na-field",
            Command::Limit(_) => "limit",
            Command::BandReplicates(_) => "band-replicates",
            Command::BandBootstrap(_) => "band-bootstrap",
            Command::Coverage(_) => "coverage",
            Command::TreeEvents(_) => "tree-events",
            Command::CoxFit(_) => "cox-fit",
            Command::Plot(_) => "plot",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::SimulateField(a) => &a.common,
            Command::NaField(a) => &a.common,
            Command::Limit(a) => &a.common,
            Command::BandReplicates(a) => &a.common,
            Command::BandBootstrap(a) => &a.common,
            Command::Coverage(a) => &a.common,
            Command::TreeEvents(a) => &a.common,
            Command::CoxFit(a) => &a.common,
            Command::Plot(a) => &a.common,
        }
    }

    pub fn params(&self) -> serde_json::Value {
        let v = match self {
            Command::SimulateField(a) => serde_json::to_value(a),
            Command::NaField(a) => serde_json::to_value(a),
            Command::Limit(a) => serde_json::to_value(a),
            Command::BandReplicates(a) => serde_json::to_value(a),
            Command::BandBootstrap(a) => serde_json::to_value(a),
            Command::Coverage(a) => serde_json::to_value(a),
            Command::TreeEvents(a) => serde_json::to_value(a),
            Command::CoxFit(a) => serde_json::to_value(a),
            Command::Plot(a) => serde_json::to_value(a),
        };
        v.expect("arguments serialize")
    }

    /// Whether the subcommand draws random numbers.
    pub fn stochastic(&self) -> bool {
        matches!(
            self,
            Command::SimulateField(_) | Command::Limit(_) | Command::BandReplicates(_) | Command::BandBootstrap(_) | Command::Coverage(_)
        )
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Master seed; drawn at random and recorded in the manifest when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON object supplying any flag by name; command-line flags win.
    /// A run manifest works too.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    M1,
    M2,
    M3,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::M1 => ModelKind::M1,
            ModelArg::M2 => ModelKind::M2,
            ModelArg::M3 => ModelKind::M3,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryArg {
    Open,
    Torus,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum NeighborhoodArg {
    #[value(name = "4")]
    #[serde(rename = "4")]
    Four,
    #[value(name = "8")]
    #[serde(rename = "8")]
    Eight,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionArg {
    Sublevel,
    Superlevel,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Sublevel => Direction::Sublevel,
            DirectionArg::Superlevel => Direction::Superlevel,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConventionArg {
    Left,
    Strict,
}

impl From<ConventionArg> for RiskConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Left => RiskConvention::Left,
            ConventionArg::Strict => RiskConvention::Strict,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LatticeArgs {
    #[arg(long, value_enum, default_value = "open")]
    pub boundary: BoundaryArg,
    /// Edge (4) or vertex (8) adjacency.
    #[arg(long, value_enum, default_value = "4")]
    pub neighborhood: NeighborhoodArg,
}

impl LatticeArgs {
    pub fn options(&self) -> LatticeOptions {
        LatticeOptions {
            boundary: match self.boundary {
                BoundaryArg::Open => Boundary::Open,
                BoundaryArg::Torus => Boundary::Torus,
            },
            neighborhood: match self.neighborhood {
                NeighborhoodArg::Four => Neighborhood::Edge4,
                NeighborhoodArg::Eight => Neighborhood::Vertex8,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FiltrationArgs {
    #[arg(long, value_enum, default_value = "sublevel")]
    pub direction: DirectionArg,
    /// At-risk count at an event level: left limit or the strict reading.
    #[arg(long, value_enum, default_value = "left")]
    pub risk_convention: ConventionArg,
    /// Report the level column as exp(t).
    #[arg(long)]
    pub exp_levels: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateField {
    #[arg(long, value_enum, default_value = "m1")]
    pub model: ModelArg,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Matérn range. For M2/M3 this is the target correlation of the final
    /// field unless --inner is given.
    #[arg(long)]
    pub eta: f64,
    /// Matérn smoothness.
    #[arg(long)]
    pub nu: f64,
    /// Use --eta/--nu directly as the inner Gaussian-field parameters.
    #[arg(long)]
    pub inner: bool,
    /// Replicate pairs per lag when matching correlations.
    #[arg(long, default_value_t = 1000)]
    pub match_pairs: usize,
    /// Number of fields; with more than one, outputs are <stem>_<i>.<ext>.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NaField {
    /// Field as a CSV grid, or raw little-endian f64 with a <path>.json sidecar.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// CSV with columns level, A_hat, var_naive.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional barcode CSV with columns birth, death, row, col.
    #[arg(long)]
    pub barcode: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub filtration: FiltrationArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Limit {
    #[arg(long, required_unless_present = "iid")]
    pub eta: Option<f64>,
    #[arg(long, required_unless_present = "iid")]
    pub nu: Option<f64>,
    /// Independent field instead of Matérn.
    #[arg(long)]
    pub iid: bool,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// First output level.
    #[arg(long, default_value_t = -2.5, allow_negative_numbers = true)]
    pub from: f64,
    /// Last output level.
    #[arg(long, default_value_t = 2.5, allow_negative_numbers = true)]
    pub to: f64,
    /// Output levels.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Quasi-Monte Carlo points per orthant probability.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 400)]
    pub integration_points: usize,
    /// Curve for fields with the lattice mean subtracted.
    #[arg(long)]
    pub mean_corrected: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub lattice: LatticeArgs,
    /// CSV with columns level, A, mc_se.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandReplicates {
    /// Replicate fields (at least two).
    #[arg(long = "in", num_args = 1.., required = true)]
    #[serde(rename = "in")]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte Carlo draws for the simultaneous threshold.
    #[arg(long, default_value_t = topohaz::inference::DEFAULT_MC_DRAWS)]
    pub mc_draws: usize,
    /// Grid levels, equally spaced in at-risk fraction.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Pointwise intervals instead of a simultaneous band.
    #[arg(long)]
    pub pointwise: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub filtration: FiltrationArgs,
    /// CSV with columns level, center, lower, upper.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandBootstrap {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub lattice: LatticeArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub filtration: FiltrationArgs,
    /// CSV with columns level, center, lower, upper.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Replicate,
    Bootstrap,
    Naive,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Coverage {
    /// Matérn range of the Gaussian field.
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub nu: f64,
    #[arg(long, default_value_t = 60)]
    pub rows: usize,
    #[arg(long, default_value_t = 60)]
    pub cols: usize,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub trials: usize,
    /// Replicate fields per trial (replicate method).
    #[arg(long, default_value_t = 40)]
    pub replicates: usize,
    /// Bootstrap fields per trial (bootstrap method).
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = topohaz::inference::DEFAULT_MC_DRAWS)]
    pub mc_draws: usize,
    /// Fields used to place the grid and the percentile levels.
    #[arg(long, default_value_t = 50)]
    pub pilot_fields: usize,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// At-risk fractions at which pointwise coverage is reported.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.7, 0.5, 0.3, 0.1])]
    pub percentiles: Vec<f64>,
    /// Quasi-Monte Carlo points per orthant probability of the true curve.
    #[arg(long, default_value_t = 20_000)]
    pub limit_samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub lattice: LatticeArgs,
    /// CSV with columns percentile, level, coverage.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TreeEvents {
    /// JSON tree or array of trees.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = topohaz::trees::DEFAULT_PROXIMITY_RADIUS)]
    pub proximity_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventArg {
    Leaf,
    Branch,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TiesArg {
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoxFit {
    /// Event table CSV from tree-events.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub event: EventArg,
    /// Single-column terms, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Multi-column term tested jointly, as name:col1,col2,...
    #[arg(long)]
    pub term: Vec<String>,
    /// Fixed-effect factor (tree_id).
    #[arg(long)]
    pub factor: Option<String>,
    #[arg(long, value_enum, default_value = "breslow")]
    pub ties: TiesArg,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// JSON with coefficients, standard errors, chi-squares and hazard ratios.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Plot {
    /// Curve or band CSV files.
    #[arg(long = "in", num_args = 1.., required = true)]
    #[serde(rename = "in")]
    pub inputs: Vec<PathBuf>,
    /// Value column for curves (default: second column).
    #[arg(long)]
    pub column: Option<String>,
    /// Reference curve drawn dashed, e.g. the output of `limit`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Value column of the reference (default: A if present).
    #[arg(long)]
    pub reference_column: Option<String>,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long, default_value = "t")]
    pub xlabel: String,
    #[arg(long, default_value = "A(t)")]
    pub ylabel: String,
    #[arg(long, default_value_t = 640.0)]
    pub width: f64,
    #[arg(long, default_value_t = 420.0)]
    pub height: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}
