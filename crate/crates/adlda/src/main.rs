use std::path::PathBuf;
use std::process::ExitCode;

use adlda::commands::{self, ConfigFile};
use adlda::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adlda", version, about = "Adversarial domain-label augmentation: training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed; writes metrics.csv, checkpoint.bin and manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated replicate seeds; overrides the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and mean loss of a checkpoint's class path on the config's test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grad-CAM overlays for test images across checkpoints trained at different DArates.
    Cam {
        #[arg(long)]
        config: PathBuf,
        /// One per DArate; repeat the flag.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// DArates that must each have a checkpoint.
        #[arg(long, value_delimiter = ',')]
        darates: Option<Vec<f64>>,
        /// Test-split indices.
        #[arg(long, value_delimiter = ',', required = true)]
        images: Vec<usize>,
        /// Target class per image; defaults to the true label.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op plus the single-step update oracle.
    Gradcheck {
        /// Corrupt one op's backward rule (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Clean vs augmented vs adversarially augmented training on synthetic data.
    SynthDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seeds, out } => {
            let file = ConfigFile::read(&config)?;
            let summary = commands::cmd_train(&file, seeds.as_deref(), out.as_deref())?;
            for r in &summary.runs {
                eprintln!("wrote {}", r.dir.display());
            }
            if let Some(p) = &summary.summary_path {
                eprintln!("wrote {}", p.display());
            }
            print!("{}", summary.text);
        }
        Command::Eval { config, checkpoint } => {
            let file = ConfigFile::read(&config)?;
            let e = commands::cmd_eval(&file, &checkpoint)?;
            println!("accuracy={} mean_loss={}", e.accuracy, e.mean_loss);
        }
        Command::Cam { config, checkpoints, darates, images, classes, out } => {
            let file = ConfigFile::read(&config)?;
            let o = commands::cmd_cam(&file, &checkpoints, darates.as_deref(), &images, classes.as_deref(), out.as_deref())?;
            eprintln!("wrote {} files to {}", o.files.len(), o.dir.display());
            print!("{}", o.table);
        }
        Command::Gradcheck { inject_fault } => {
            let o = commands::cmd_gradcheck(inject_fault.as_deref())?;
            print!("{}", o.text);
            if !o.passed() {
                return Err(CliError::Verification(o.failures().join(", ")));
            }
        }
        Command::SynthDemo { config, seeds, out } => {
            let file = ConfigFile::read(&config)?;
            let o = commands::cmd_synth_demo(&file, seeds.as_deref(), out.as_deref())?;
            eprintln!("wrote {}", o.dir.join(commands::DEMO_FILE).display());
            print!("{}", o.csv);
            eprint!("{}", o.report());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
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
