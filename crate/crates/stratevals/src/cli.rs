//! The `stratevals` command line.
//!
//! Three subcommands: `test` streams blocks through the global-null
//! e-process, `confseq` computes confidence sequences, `simulate` runs a
//! replicated experiment from a TOML config. Every flag can also be set
//! through a `STRATEVALS_`-prefixed environment variable; explicit flags win.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stratevals_core::confseq::{
    check_nonempty, cs_max_two_sided, cs_mean_effect, cs_min_two_sided, cs_per_stratum,
    CsInterval, DeltaGrid, LevelSplit, StratumWeights,
};
use stratevals_core::eprocess::{test_global_null, TestConfig};
use stratevals_core::ingest::{assemble_blocks, Block};
use stratevals_core::learners::BetaPrior;
use stratevals_core::model::BlockDesign;

use crate::config::{
    build_combiner_parts, validate_weights, CombinerKind, CrossTalkKind, SimConfig, TargetKind,
};
use crate::events::parse_events;
use crate::report::render_csv;
use crate::sim::run_simulation;

#[derive(Parser)]
#[command(
    name = "stratevals",
    version,
    about = "Anytime-valid sequential tests and confidence sequences for stratified 2x2 count data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Test the global null (no group effect in any stratum) on an event stream.
    Test(TestArgs),
    /// Compute anytime-valid confidence sequences from an event stream.
    Confseq(ConfseqArgs),
    /// Run a replicated Monte-Carlo experiment from a TOML config.
    Simulate(SimulateArgs),
}

fn parse_alpha(raw: &str) -> Result<f64, String> {
    let value: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err("alpha must lie strictly between 0 and 1".to_string())
    }
}

fn parse_grid_step(raw: &str) -> Result<f64, String> {
    let value: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
    if value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err("grid step must lie in (0, 1]".to_string())
    }
}

/// `uniform:LO:HI`
fn parse_switch_prior(raw: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 || parts[0] != "uniform" {
        return Err("expected `uniform:LO:HI`".to_string());
    }
    let lo: usize = parts[1].parse().map_err(|_| "LO must be an integer".to_string())?;
    let hi: usize = parts[2].parse().map_err(|_| "HI must be an integer".to_string())?;
    if lo < 1 || lo > hi {
        return Err("need 1 <= LO <= HI".to_string());
    }
    Ok((lo, hi))
}

#[derive(Args)]
pub struct StreamArgs {
    /// Event stream file (`-` reads standard input).
    #[arg(long, default_value = "-", env = "STRATEVALS_INPUT")]
    pub input: String,
    /// Group-a outcomes per block.
    #[arg(long = "n-a", default_value_t = 1, env = "STRATEVALS_N_A")]
    pub n_a: u32,
    /// Group-b outcomes per block.
    #[arg(long = "n-b", default_value_t = 1, env = "STRATEVALS_N_B")]
    pub n_b: u32,
    /// Number of strata (default: the largest label in the stream).
    #[arg(long, env = "STRATEVALS_STRATA")]
    pub strata: Option<usize>,
    /// Beta-prior pseudo-count for successes.
    #[arg(long, default_value_t = 0.18, env = "STRATEVALS_PRIOR_ALPHA")]
    pub prior_alpha: f64,
    /// Beta-prior pseudo-count for failures.
    #[arg(long, default_value_t = 0.18, env = "STRATEVALS_PRIOR_BETA")]
    pub prior_beta: f64,
}

#[derive(Args)]
pub struct SharedArgs {
    #[arg(long, default_value = "0.05", env = "STRATEVALS_ALPHA", value_parser = parse_alpha)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t, env = "STRATEVALS_COMBINER")]
    pub combiner: CombinerKind,
    /// Learning rate for the pseudo-bayes combiner (default 1).
    #[arg(long, env = "STRATEVALS_ETA")]
    pub eta: Option<f64>,
    /// Fixed switch time for the switch combiner.
    #[arg(long, env = "STRATEVALS_SWITCH_AT")]
    pub switch_at: Option<usize>,
    /// Prior on switch times for the switch combiner, e.g. `uniform:5:115`.
    #[arg(long, env = "STRATEVALS_SWITCH_PRIOR", value_parser = parse_switch_prior)]
    pub switch_prior: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t, env = "STRATEVALS_CROSSTALK")]
    pub crosstalk: CrossTalkKind,
    #[arg(long, default_value = "0.01", env = "STRATEVALS_GRID_STEP", value_parser = parse_grid_step)]
    pub grid_step: f64,
    /// Write output here instead of standard output.
    #[arg(long, env = "STRATEVALS_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub shared: SharedArgs,
}

#[derive(Args)]
pub struct ConfseqArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub shared: SharedArgs,
    /// Which effect the sequence tracks.
    #[arg(long, value_enum, env = "STRATEVALS_TARGET")]
    pub target: TargetKind,
    /// Population proportions per stratum (mean target only), e.g. `0.5,0.5`.
    #[arg(long, value_delimiter = ',', env = "STRATEVALS_WEIGHTS")]
    pub weights: Option<Vec<f64>>,
    /// Run each one-sided bound at alpha/2 instead of alpha.
    #[arg(long, env = "STRATEVALS_SPLIT_ALPHA")]
    pub split_alpha: bool,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Experiment description (TOML).
    #[arg(long, env = "STRATEVALS_CONFIG")]
    pub config: PathBuf,
    /// Override the config's base seed.
    #[arg(long, env = "STRATEVALS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "STRATEVALS_WORKERS")]
    pub workers: Option<usize>,
    /// Write output here instead of standard output.
    #[arg(long, env = "STRATEVALS_OUT")]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Confseq(args) => cmd_confseq(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

struct LoadedStream {
    blocks: Vec<Block>,
    n_strata: usize,
    prior: BetaPrior,
}

fn load_stream(args: &StreamArgs) -> Result<LoadedStream> {
    let stream = if args.input == "-" {
        parse_events(std::io::stdin().lock())?
    } else {
        let file = File::open(&args.input)
            .with_context(|| format!("cannot open `{}`", args.input))?;
        parse_events(BufReader::new(file))?
    };
    let n_strata = match args.strata {
        Some(k) => {
            if k < stream.n_strata {
                bail!(
                    "--strata {k} is smaller than the largest stratum label {} in the stream",
                    stream.n_strata
                );
            }
            k
        }
        None => stream.n_strata.max(1),
    };
    if args.prior_alpha <= 0.0 || args.prior_beta <= 0.0 {
        bail!("prior pseudo-counts must be positive");
    }
    let design = BlockDesign::new(args.n_a.max(1), args.n_b.max(1));
    let blocks = assemble_blocks(&stream.events, design, n_strata)?;
    Ok(LoadedStream {
        blocks,
        n_strata,
        prior: BetaPrior::new(args.prior_alpha, args.prior_beta),
    })
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut file =
                File::create(path).with_context(|| format!("cannot write `{}`", path.display()))?;
            file.write_all(content.as_bytes())?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let stream = load_stream(&args.stream)?;
    let combiner = build_combiner_parts(
        args.shared.combiner,
        args.shared.eta,
        args.shared.switch_at,
        args.shared.switch_prior,
        stream.n_strata,
        None,
    )
    .map_err(anyhow::Error::msg)?;
    let config = TestConfig {
        n_strata: stream.n_strata,
        combiner,
        crosstalk: args.shared.crosstalk.into(),
        alpha: args.shared.alpha,
        prior: stream.prior,
    };
    let trace = test_global_null(&stream.blocks, &config)?;

    let mut text = String::from("m,log10_e\n");
    for (m, log_e) in trace.log_e.iter().enumerate().skip(1) {
        text.push_str(&format!("{m},{:.6}\n", log_e * std::f64::consts::LOG10_E));
    }
    match trace.rejected_at {
        Some(m) => text.push_str(&format!("REJECT at block {m}\n")),
        None => text.push_str(&format!("NO REJECTION after {} blocks\n", trace.blocks())),
    }
    write_output(&args.shared.out, &text)
}

fn interval_fields(interval: &CsInterval) -> (String, String) {
    if interval.empty {
        (String::new(), String::new())
    } else {
        (format!("{:.6}", interval.lower), format!("{:.6}", interval.upper))
    }
}

fn cmd_confseq(args: ConfseqArgs) -> Result<()> {
    let stream = load_stream(&args.stream)?;
    let grid = DeltaGrid::with_step(args.shared.grid_step);
    let split = if args.split_alpha {
        LevelSplit::HalfAlphaEachSide
    } else {
        LevelSplit::FullAlphaEachSide
    };
    let alpha = args.shared.alpha;

    if args.target != TargetKind::Mean && args.weights.is_some() {
        bail!("--weights only applies to --target mean");
    }

    let mut labeled: Vec<(String, Vec<CsInterval>)> = Vec::new();
    match args.target {
        TargetKind::PerStratum => {
            for k in 0..stream.n_strata {
                let series = cs_per_stratum(
                    &stream.blocks,
                    stream.n_strata,
                    k,
                    args.shared.crosstalk.into(),
                    stream.prior,
                    alpha,
                    &grid,
                );
                labeled.push((format!("stratum-{}", k + 1), series));
            }
        }
        TargetKind::Min | TargetKind::Max => {
            let combiner = build_combiner_parts(
                args.shared.combiner,
                args.shared.eta,
                args.shared.switch_at,
                args.shared.switch_prior,
                stream.n_strata,
                Some(stream.blocks.len()),
            )
            .map_err(anyhow::Error::msg)?;
            let series = if args.target == TargetKind::Min {
                cs_min_two_sided(
                    &stream.blocks,
                    stream.n_strata,
                    &combiner,
                    stream.prior,
                    alpha,
                    &grid,
                    split,
                )
            } else {
                cs_max_two_sided(
                    &stream.blocks,
                    stream.n_strata,
                    &combiner,
                    stream.prior,
                    alpha,
                    &grid,
                    split,
                )
            };
            let label = if args.target == TargetKind::Min { "min" } else { "max" };
            labeled.push((label.to_string(), series));
        }
        TargetKind::Mean => {
            let weights = args
                .weights
                .clone()
                .ok_or_else(|| anyhow::anyhow!("--target mean requires --weights"))?;
            validate_weights(&weights, stream.n_strata)?;
            let series = cs_mean_effect(
                &stream.blocks,
                stream.n_strata,
                &StratumWeights::new(weights),
                stream.prior,
                alpha,
                &grid,
            );
            labeled.push(("mean".to_string(), series));
        }
    }

    for (label, series) in &labeled {
        if let Err(err) = check_nonempty(series) {
            eprintln!("warning: {label}: {err}");
        }
    }

    let horizon = stream.blocks.len();
    let mut text = String::from("m,target,lower,upper\n");
    for m in 0..=horizon {
        for (label, series) in &labeled {
            let (lower, upper) = interval_fields(&series[m]);
            text.push_str(&format!("{m},{label},{lower},{upper}\n"));
        }
    }
    write_output(&args.shared.out, &text)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read `{}`", args.config.display()))?;
    let mut config = SimConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let output = run_simulation(&config, workers)?;
    write_output(&args.out, &render_csv(&output))
}
