use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htnav::harness::{parse_config, run_command, schema, Command};

/// Tiered UAV navigation: world generation, teacher corpus, two-stage
/// training, benchmarking and ablation sweeps.
#[derive(Parser)]
#[command(name = "htnav", version)]
struct Cli {
    /// Line-oriented `key = value` configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override; wins over the file. Repeatable.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output root; shorthand for `--set run.out=DIR`.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Replace the artifacts of an earlier run of the same command.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the seen and unseen worlds.
    GenWorlds,
    /// Build the teacher demonstration corpus on the seen worlds.
    BuildCorpus,
    /// Stage 1: supervised pre-training on the corpus.
    TrainIl,
    /// Stage 2: PPO fine-tuning blended with imitation, from the stage-1 model.
    TrainRl,
    /// Benchmark the model chosen by `eval.model` on both splits.
    Eval,
    /// Train and compare the ablation variants.
    Sweep,
    /// Re-render a trajectory log step by step with waypoint events marked.
    Replay {
        /// Trajectory log (CSV).
        #[arg(long)]
        log: PathBuf,
        /// Goal cell `x,y` for logs without labels.
        #[arg(long, value_parser = parse_goal)]
        goal: Option<(f64, f64)>,
    },
    /// Print every configuration key with its default and range.
    Defaults,
}

fn parse_goal(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    Ok((x.trim().parse().map_err(|_| "bad x")?, y.trim().parse().map_err(|_| "bad y")?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::GenWorlds => Command::GenWorlds,
        Cmd::BuildCorpus => Command::BuildCorpus,
        Cmd::TrainIl => Command::TrainIl,
        Cmd::TrainRl => Command::TrainRl,
        Cmd::Eval => Command::Eval,
        Cmd::Sweep => Command::Sweep,
        Cmd::Replay { log, goal } => Command::Replay { log, goal },
        Cmd::Defaults => {
            for k in schema() {
                println!("{} = {}    # {}", k.key, k.default, k.help);
            }
            return ExitCode::SUCCESS;
        }
    };
    let mut overrides = cli.overrides;
    if let Some(out) = cli.out {
        overrides.push(format!("run.out={out}"));
    }
    let result = parse_config(cli.config.as_deref(), &overrides).and_then(|cfg| run_command(&command, &cfg, cli.force).map(|m| (cfg, m)));
    match result {
        Ok((cfg, m)) => {
            println!("{} finished; {} files in {}", m.command, m.files.len(), command.dir(cfg.out_dir()).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
