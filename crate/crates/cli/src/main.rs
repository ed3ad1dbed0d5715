mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use pidlens::Error;

use config::{Overrides, RunConfig};

const EXIT_STATUS: &str = "\
EXIT STATUS
    0  success
    1  input/output failure
    2  malformed input, bad flag, inconsistent manifests or failed precondition
    3  numeric failure: non-finite values, failed identities, no convergence,
       degenerate or infeasible data
    4  input beyond what the chosen algorithm supports
";

const ENVIRONMENT: &str = "\
ENVIRONMENT
    PIDLENS_OUT_DIR  default output directory when --out-dir is not given
";

const CONFIG_FILE: &str = "\
CONFIG FILE
    --config takes a TOML file. Top-level keys: seed, threads, tau,
    gap_tolerance, out_dir. Tables: [solver] (max_iters, tol, step_rule,
    step), [batch] (learning_rate, epochs, batch_size, test_batch_size,
    hidden, embed_dim, sinkhorn_iters, logit_clamp, targets), [split]
    (train_parts, test_parts) and [bootstrap] (resamples, confidence). Flags
    override the file; seed and tau apply to every component. A solve that
    reaches max_iters is kept when its certified gap is at most gap_tolerance
    bits (default 1e-3). The resolved configuration is written to
    provenance.json in the output directory.
";

/// Partial information decomposition toolkit for vision-language probe data.
#[derive(Debug, Parser)]
#[command(name = "pidlens", version, about, long_about = None)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for output files.
    #[arg(long, global = true, env = "PIDLENS_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Seed for splits, training, bootstrap and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Confidence threshold on the summed candidate scores.
    #[arg(long, global = true)]
    tau: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose a gate, a joint table or a records file into R, U1, U2, S.
    Decompose(DecomposeArgs),
    /// Build one profile report per records file and layer/checkpoint group.
    Profile(ProfileArgs),
    /// Correlate accuracy with the spectrum across profile reports.
    Correlate(CorrelateArgs),
    /// Order profile reports by layer or training checkpoint.
    Trace(TraceArgs),
    /// Generate synthetic gate joints or continuous records.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Per-dimension feature statistics of one modality.
    Stats(StatsArgs),
    /// Lint a records file against its manifest.
    Validate(ValidateArgs),
    /// Print the manual.
    Man,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Estimator {
    /// Mirror-descent solver on a discrete joint; records are median-split first.
    Discrete,
    /// Neural estimator trained on continuous features.
    Batch,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
struct DecomposeSource {
    /// Named two-bit gate (xor, and, or, copy, unq1, unq2).
    #[arg(long)]
    gate: Option<String>,
    /// JSON joint table: {"dims": {"n1", "n2", "k"}, "table": [...]}.
    #[arg(long)]
    joint: Option<PathBuf>,
    /// Records file (JSON lines) with a manifest alongside.
    #[arg(long = "in")]
    records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    source: DecomposeSource,
    /// Probability of flipping Y for --gate.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Manifest path when it does not sit next to the records.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Defaults to discrete for gates and tables, batch for records.
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Records files; each needs a manifest alongside.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Estimator::Batch)]
    estimator: Estimator,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// Profile files written by `profile`.
    #[arg(long = "profiles", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Exact permutation p-values (at most 10 reports).
    #[arg(long)]
    exact: bool,
    /// Percentile bootstrap intervals on the per-regime shares.
    #[arg(long)]
    bootstrap: bool,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Profile files written by `profile`.
    #[arg(long = "profiles", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Exact (or sampled) joint table of a noisy gate.
    Gate {
        #[arg(long)]
        gate: String,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Draw this many samples instead of writing the exact joint.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Records with Gaussian-cluster features and planted structure.
    Continuous {
        /// synergy, redundancy, unique1, unique2 or independent.
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModalityArg {
    Vision,
    Text,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 1,
        Error::Format(_) | Error::Domain(_) => 2,
        Error::Numeric(_)
        | Error::Consistency { .. }
        | Error::Convergence(_)
        | Error::Degenerate(_)
        | Error::Infeasible(_) => 3,
        Error::Capability(_) => 4,
    }
}

/// Long help of the root command and every subcommand, in order.
fn manual() -> String {
    fn walk(cmd: &mut clap::Command, prefix: &str, out: &mut String) {
        let name = if prefix.is_empty() { cmd.get_name().to_string() } else { format!("{prefix} {}", cmd.get_name()) };
        out.push_str(&format!("{}\n{}\n\n", name.to_uppercase(), "=".repeat(name.len())));
        out.push_str(&cmd.render_long_help().to_string());
        out.push('\n');
        let mut subs: Vec<clap::Command> = cmd.get_subcommands().filter(|s| s.get_name() != "help").cloned().collect();
        for s in &mut subs {
            walk(s, &name, out);
        }
    }
    let mut cmd = Cli::command();
    cmd.build();
    let mut out = String::new();
    walk(&mut cmd, "", &mut out);
    out.push_str(CONFIG_FILE);
    out.push('\n');
    out.push_str(ENVIRONMENT);
    out.push('\n');
    out.push_str(EXIT_STATUS);
    out
}

fn run(cli: Cli) -> pidlens::Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(&Overrides {
        seed: cli.seed,
        threads: cli.threads,
        tau: cli.tau,
        out_dir: cli.out_dir.clone(),
    });
    if cfg.threads > 0 {
        // Only fails if a global pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match cli.command {
        Command::Decompose(a) => {
            let source = match (a.source.gate, a.source.joint, a.source.records) {
                (Some(g), _, _) => commands::Source::Gate(g.parse()?, a.noise),
                (_, Some(j), _) => commands::Source::Joint(j),
                (_, _, Some(r)) => commands::Source::Records(r, a.manifest),
                _ => unreachable!("clap enforces one source"),
            };
            let batch = a.estimator.map(|e| e == Estimator::Batch);
            commands::decompose(&cfg, source, batch)
        }
        Command::Profile(a) => commands::profile(&cfg, &a.inputs, a.estimator == Estimator::Batch),
        Command::Correlate(a) => commands::correlate(&cfg, &a.inputs, a.exact, a.bootstrap),
        Command::Trace(a) => commands::trace(&cfg, &a.inputs),
        Command::Synth(SynthCommand::Gate { gate, noise, samples, out }) => {
            commands::synth_gate(&cfg, gate.parse()?, noise, samples, out)
        }
        Command::Synth(SynthCommand::Continuous { structure, n, dim, separation, out }) => {
            commands::synth_continuous(&cfg, structure.parse()?, n, dim, separation, out)
        }
        Command::Stats(a) => {
            let modality = match a.modality {
                ModalityArg::Vision => pidlens::ingest::Modality::Vision,
                ModalityArg::Text => pidlens::ingest::Modality::Text,
            };
            commands::stats(&cfg, &a.input, a.manifest.as_deref(), modality, a.out)
        }
        Command::Validate(a) => commands::validate(&a.input, a.manifest.as_deref()),
        Command::Man => {
            print!("{}", manual());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pidlens: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn manual_covers_every_subcommand() {
        let m = manual();
        for c in ["DECOMPOSE", "PROFILE", "CORRELATE", "TRACE", "SYNTH GATE", "SYNTH CONTINUOUS", "STATS", "VALIDATE"] {
            assert!(m.contains(&format!("PIDLENS {c}\n")), "{c}");
        }
        assert!(m.contains("PIDLENS_OUT_DIR") && m.contains("EXIT STATUS"));
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
        assert_eq!(exit_code(&Error::Capability("x".into())), 4);
    }
}
