use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qswitch", version, about = "Switching-system analysis of tabular Q-learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for Q*, V* and the optimal action sets.
    Solve(SolveArgs),
    /// Spectral radii, JSR brackets and both Lyapunov certificates.
    Certify(CertifyArgs),
    /// Simulate the error recursion and every comparison system.
    Simulate(SimulateArgs),
    /// Run the invariant suite on a file, the worked examples or a random ensemble.
    Verify(VerifyArgs),
    /// Reproduce the two worked examples against their closed forms.
    Examples(ExamplesArgs),
    /// Write a seeded random MDP.
    RandomMdp(RandomMdpArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// MDP file (JSON).
    pub mdp: PathBuf,
    /// Target accuracy of Q* in the max norm.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Also write the solution as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    pub mdp: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    /// Margin added to both rates; defaults to a tenth of each spectral gap.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Product depth of the JSR brackets (shortened to fit the budget).
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Inf)]
    pub norm: NormArg,
    /// Relative tail target of the product certificate.
    #[arg(long, default_value_t = 1e-3)]
    pub product_tol: f64,
    /// Machine-readable twin; defaults to `<mdp>.certificate.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Inf,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Det,
    Stoch,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub mdp: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Det)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial iterate, comma separated in (a, s) block order; zero when absent.
    #[arg(long, conflicts_with = "e0", allow_hyphen_values = true)]
    pub q0: Option<String>,
    /// Initial error `Q_0 - Q*`, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub e0: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Trace table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Full per-step vectors as JSON.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// MDP file to verify.
    #[arg(required_unless_present_any = ["examples", "random"])]
    pub mdp: Option<PathBuf>,
    /// Verify both worked examples.
    #[arg(long)]
    pub examples: bool,
    /// Verify N seeded random MDPs.
    #[arg(long, value_name = "N")]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Step sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.2])]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    pub horizon: usize,
    /// Sampled trajectories per step size.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Mean-bound table of every instance (CSV), concatenated.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExamplesArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub alpha2: f64,
    #[arg(long, default_value_t = 500)]
    pub horizon: usize,
    /// Directory for the example MDP files and trajectory tables.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RandomMdpArgs {
    #[arg(long)]
    pub states: usize,
    #[arg(long)]
    pub actions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub reward_scale: f64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Draw a random sampling distribution instead of the uniform one.
    #[arg(long)]
    pub random_sampling: bool,
    /// Destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
