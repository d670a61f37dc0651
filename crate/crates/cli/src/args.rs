//! Command-line grammar and the small value languages it accepts.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sfsparse::experiment::SweepGrid;
use sfsparse::model::{Loss, RidgeForm, SparsityBudget};

#[derive(Debug, Parser)]
#[command(
    name = "sfsparse",
    version,
    about = "Certified sparse regression on low-rank data",
    long_about = "Solves the convex relaxation of l0-constrained or l0-penalized \
                  regression, recovers a sparse point by linear-programming \
                  primalization and reports certified bounds on the optimal value.\n\n\
                  Exit status: 0 on success, 2 when a certificate has a violated \
                  bound, 1 on any error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify a single budget point.
    Solve(SolveArgs),
    /// Certify every point of a k, lambda or rank grid, or a named preset.
    Sweep(SweepArgs),
    /// Solve small instances exactly by support enumeration.
    Oracle(OracleArgs),
    /// Write a synthetic dataset as CSV files.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Quadratic,
    Logistic,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Quadratic => Loss::Quadratic,
            LossArg::Logistic => Loss::Logistic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Design matrix CSV, one sample per row.
    #[arg(long, value_name = "PATH", requires = "y", conflicts_with = "gen")]
    pub x: Option<PathBuf>,
    /// Response CSV, a single column or row.
    #[arg(long, value_name = "PATH", requires = "x")]
    pub y: Option<PathBuf>,
    /// Synthetic data, e.g. `n=1000,m=100,rank=10,sparsity=10,std=5,noise=1,spectrum=gaussian`.
    /// Omitted keys take those values.
    #[arg(long, value_name = "SPEC")]
    pub gen: Option<String>,
    /// Loss function [default: quadratic].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Seed for data generation and primalization objectives.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random LP objectives tried during primalization.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Relative duality-gap target of the relaxation solver.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000, value_name = "N")]
    pub max_sweeps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `penalty:G` adds (G/2)|w|^2, `ball:G` imposes |w|^2 <= G.
    #[arg(long, value_parser = clap::value_parser!(RidgeForm))]
    pub ridge: RidgeForm,
    /// `k:K` limits the support size, `lambda:L` charges L per nonzero.
    #[arg(long, value_parser = clap::value_parser!(SparsityBudget))]
    pub budget: SparsityBudget,
    /// Work with the best rank-R approximation of X.
    #[arg(long, value_name = "R")]
    pub rank_approx: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report path [default: standard output].
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// exp1-regression, exp1-logistic, exp2 or exp3.
    #[arg(long, value_name = "NAME", conflicts_with_all = ["ridge", "grid", "gen", "loss"])]
    pub preset: Option<String>,
    /// `penalty:G` or `ball:G`, as for solve.
    #[arg(long, value_parser = clap::value_parser!(RidgeForm))]
    pub ridge: Option<RidgeForm>,
    /// Base budget; required for rank grids.
    #[arg(long, value_parser = clap::value_parser!(SparsityBudget))]
    pub budget: Option<SparsityBudget>,
    /// `k:1,2,5`, `lambda:1e-3,1e-2` or `rank:1-20,40`.
    #[arg(long, value_parser = clap::value_parser!(SweepGrid))]
    pub grid: Option<SweepGrid>,
    /// Truncation rank for k and lambda grids.
    #[arg(long, value_name = "R")]
    pub rank_approx: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Concurrent grid points; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Report path [default: standard output].
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Flat table path [default: the report path with a .csv extension].
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `penalty:G` or `ball:G`, as for solve.
    #[arg(long, value_parser = clap::value_parser!(RidgeForm))]
    pub ridge: RidgeForm,
    /// `k:K` or `lambda:L`, as for solve.
    #[arg(long, value_parser = clap::value_parser!(SparsityBudget))]
    pub budget: SparsityBudget,
    /// Largest number of supports to enumerate.
    #[arg(long, default_value_t = sfsparse::oracle::DEFAULT_CAP)]
    pub cap: u128,
    /// Also certify each instance and check the bounds against the exact value.
    #[arg(long)]
    pub cross_check: bool,
    /// With --gen, repeat on N instances seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_name = "N", requires = "gen")]
    pub repeat: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report path; without it only the summary is printed.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Generator fields, as for --gen elsewhere.
    #[arg(long, value_name = "SPEC", default_value = "")]
    pub gen: String,
    /// Logistic responses are ±1 labels.
    #[arg(long, value_enum, default_value = "quadratic")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving x.csv, y.csv and beta.csv.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "sfsparse",
            "solve",
            "--gen",
            "n=20,m=5,rank=2",
            "--ridge",
            "penalty:0.1",
            "--budget",
            "k:2",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Solve(_)));
        let both = Cli::try_parse_from([
            "sfsparse", "solve", "--x", "a", "--y", "b", "--gen", "n=3", "--ridge", "ball:1",
            "--budget", "k:1",
        ]);
        assert!(both.is_err());
    }
}
