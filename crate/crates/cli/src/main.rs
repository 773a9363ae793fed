use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

mod commands;
mod output;

use output::Format;

#[derive(Parser, Debug)]
#[command(name = "nlgqkd", version, about = "Key rates, game values and protocol simulation for non-local game DIQKD")]
struct Cli {
    /// Read the subcommand and all its options from a JSON file tagged by "command".
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Classical and honest quantum winning probabilities.
    GameValue(GameValueArgs),
    /// Finite and asymptotic key rates over block sizes.
    Keyrate(KeyrateArgs),
    /// Asymptotic positivity over a grid of (omega2, omega3).
    Region(RegionArgs),
    /// Simulate the protocol once or as a Monte Carlo batch.
    Simulate(SimulateArgs),
    /// Sample a bound curve built from a point table.
    Bounds(BoundsArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for OutputArgs {
    fn default() -> Self {
        Self { format: Format::Csv, out: None }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GameValueArgs {
    /// msg, chsh, or custom:<path to game JSON>
    #[arg(long, default_value = "msg")]
    pub game: String,
    /// Depolarizing noise values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub q: Vec<f64>,
    /// Apply noise to the whole state rather than to each pair.
    #[arg(long)]
    pub global_noise: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyrateArgs {
    #[arg(long, default_value = "msg")]
    pub game: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub q: Vec<f64>,
    /// Block sizes; scientific notation is accepted.
    #[arg(long, value_delimiter = ',', default_value = "1e6,1e7,1e8,1e9,1e10,1e11,1e12,1e13,1e14")]
    pub n: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_sec: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_corr: f64,
    /// Completeness budget, used for both estimation and error correction.
    #[arg(long, default_value_t = 1e-2)]
    pub eps_com: f64,
    #[arg(long, default_value_t = 1.1)]
    pub xi: f64,
    /// affine, or table:<path> for a tripartite or von Neumann point table.
    #[arg(long, default_value = "affine")]
    pub bound: String,
    /// Tripartite value for the affine bound; defaults to 8.00077/9 for msg.
    #[arg(long)]
    pub omega3: Option<f64>,
    /// Upper end of the beta range; defaults to the honest noiseless value.
    #[arg(long)]
    pub omega2: Option<f64>,
    /// Fixed testing probability instead of the completeness-derived one.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta_tol: Option<f64>,
    /// Also optimize the smoothing split.
    #[arg(long)]
    pub exhaustive: bool,
    /// Subtract two further bits.
    #[arg(long)]
    pub conservative: bool,
    #[arg(long, default_value_t = 60)]
    pub eps_points: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionArgs {
    #[arg(long, default_value_t = 0.5)]
    pub omega2_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega2_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub omega3_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega3_max: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    pub steps: usize,
    /// Extra cells as omega2:omega3.
    #[arg(long, value_delimiter = ',')]
    pub cell: Vec<String>,
    #[arg(long, default_value_t = 1.1)]
    pub xi: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    #[arg(long, default_value = "msg")]
    pub game: String,
    #[arg(long, default_value_t = 0.0)]
    pub q: f64,
    #[arg(long, default_value_t = 2000)]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_sec: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_corr: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub eps_com: f64,
    #[arg(long, default_value_t = 1.1)]
    pub xi: f64,
    /// parametric, or code for a random linear code with a real decoder.
    #[arg(long, default_value = "parametric")]
    pub ec: String,
    /// Code block length.
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    /// Privacy amplification output length; defaults to the secure bound.
    #[arg(long)]
    pub key_len: Option<usize>,
    /// Run this many seeded trials instead of a single transcript.
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    /// Measure the hash-pass rate with Bob's string forced to differ.
    #[arg(long)]
    pub force_mismatch: bool,
    /// Write the single-run transcript here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsArgs {
    /// Point table with a `# kind=` line and an omega_ab,value header.
    #[arg(long)]
    pub table: PathBuf,
    /// Also emit the tangent at this winning probability.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

/// Defaults for config files come from the flag defaults.
macro_rules! defaults_from_flags {
    ($($ty:ident => $name:literal),*) => {$(
        impl Default for $ty {
            fn default() -> Self {
                #[derive(Parser)]
                struct Wrap {
                    #[command(flatten)]
                    inner: $ty,
                }
                Wrap::parse_from([$name]).inner
            }
        }
    )*};
}

defaults_from_flags!(
    GameValueArgs => "game-value",
    KeyrateArgs => "keyrate",
    RegionArgs => "region",
    SimulateArgs => "simulate"
);

impl Default for BoundsArgs {
    fn default() -> Self {
        Self { table: PathBuf::new(), beta: None, samples: 201, output: OutputArgs::default() }
    }
}

/// How a successful command ended.
pub enum Outcome {
    Done,
    /// Output was written but no parameter point gave a positive key.
    Infeasible(String),
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NLGQKD_THREADS") {
        let n: usize = v.parse().with_context(|| format!("NLGQKD_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    configure_threads()?;
    let command = match (cli.config, cli.command) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("bad config {}", path.display()))?
        }
        (None, Some(c)) => c,
        (Some(_), Some(_)) => bail!("give either --config or a subcommand, not both"),
        (None, None) => bail!("no subcommand given; see --help"),
    };
    commands::dispatch(&command)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
