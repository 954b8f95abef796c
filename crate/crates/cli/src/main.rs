use std::path::PathBuf;
use std::process::ExitCode;

use bridgekit_cli::commands::{
    cmd_eval, cmd_gradcheck, cmd_make_data, cmd_sweep, cmd_train, sweep_table, SweepAxis, CHECKPOINT_FILE, LOG_FILE,
};
use bridgekit_cli::gradcheck::DEFAULT_SEEDS;
use bridgekit_cli::{CliError, CliResult, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bridgekit", version, about = "Train and evaluate speech-to-LLM connectors on a toy task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a connector against the frozen toy decoder.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Extra `section.key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy-decode a manifest with a trained checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Pack utterances of each chapter up to this many seconds first.
        #[arg(long)]
        longform: Option<f64>,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate one model per axis value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `kind=fc,ca,qf,segqf`, `n_q=4,8,16,32` or `L=50,150,300`.
        #[arg(long)]
        axis: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run points concurrently instead of one after another.
        #[arg(long)]
        parallel: bool,
    },
    /// Check every connector and the loss head against finite differences.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
    },
    /// Write train/val/test manifests for the synthetic task.
    MakeData {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn load_config(path: &PathBuf, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set {kv}: expected KEY=VALUE")))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("BRIDGEKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("BRIDGEKIT_THREADS={raw}: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let out = config.paths.out_dir.clone().unwrap_or_default();
            let run = cmd_train(config)?;
            for e in run.log.iter().filter(|e| e.val_accuracy.is_some()) {
                let loss = e.loss.map_or("-".to_string(), |l| format!("{l:.4}"));
                println!(
                    "step {:>6}  loss {loss:>8}  val acc {:.4}",
                    e.step,
                    e.val_accuracy.unwrap_or_default()
                );
            }
            println!(
                "best step {} (val acc {:.4}) -> {}",
                run.best.meta.step,
                run.best.meta.val_accuracy,
                out.join(CHECKPOINT_FILE).display()
            );
            println!("log -> {}", out.join(LOG_FILE).display());
        }
        Command::Eval {
            ckpt,
            manifest,
            longform,
            out,
        } => {
            let result = cmd_eval(&ckpt, &manifest, longform, out.as_deref())?;
            print!("{}", result.report.to_text());
            println!("report -> {}", result.json_path.display());
        }
        Command::Sweep {
            config,
            axis,
            overrides,
            parallel,
        } => {
            let config = load_config(&config, &overrides)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = cmd_sweep(config, &axis, parallel)?;
            print!("{}", sweep_table(&rows));
        }
        Command::Gradcheck { seeds } => {
            let summary = cmd_gradcheck(&seeds)?;
            print!("{}", summary.to_text());
        }
        Command::MakeData { spec } => {
            for path in cmd_make_data(ExperimentConfig::load(&spec)?)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
