use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiref::cli::{self, ExperimentConfig, Overrides, TrainMode};
use multiref::models::PriorFamily;

#[derive(Parser)]
#[command(name = "multiref", version, about = "Multi-referenced training for dialogue response generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize, deduplicate and split the raw corpus; build the vocabulary
    Preprocess,
    /// Sample teacher hypotheses for every training pair
    GenHyps {
        #[arg(long)]
        teacher: Option<String>,
        #[arg(long = "n-refs")]
        n_refs: Option<usize>,
        #[arg(long = "include-gt")]
        include_gt: bool,
        #[arg(long = "top-p")]
        top_p: Option<f64>,
    },
    /// Train HRED or VHRED on ground truth, hypotheses or teacher distributions
    Train {
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long = "n-refs")]
        n_refs: Option<usize>,
        #[arg(long)]
        prior: Option<PriorFamily>,
        #[arg(long = "K")]
        k: Option<usize>,
        /// Training schedule (TOML), replacing the config's [schedule]
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Teacher for token-kd mode
        #[arg(long)]
        teacher: Option<String>,
        #[arg(long)]
        resume: bool,
    },
    /// Perplexity and generation metrics on the test split
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "per-variable")]
        per_variable: bool,
    },
    /// Per-component selection probabilities and scores of a latent-variable model
    AnalyzeLatents {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(args: Cli) -> multiref::Result<()> {
    let mut cfg = match &args.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut o = Overrides { seed: args.common.seed, out: args.common.out.clone(), ..Default::default() };
    match &args.command {
        Command::GenHyps { teacher, n_refs, include_gt, top_p } => {
            o.teacher = teacher.clone();
            o.n_refs = *n_refs;
            o.include_gt = include_gt.then_some(true);
            o.top_p = *top_p;
        }
        Command::Train { mode, n_refs, prior, k, schedule, teacher, .. } => {
            o.mode = *mode;
            o.n_refs = *n_refs;
            o.prior = *prior;
            o.k = *k;
            o.schedule = schedule.clone();
            o.teacher = teacher.clone();
        }
        _ => {}
    }
    cfg.apply(&o)?;

    match args.command {
        Command::Preprocess => {
            let s = cli::cmd_preprocess(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::GenHyps { .. } => {
            let s = cli::cmd_generate_hypotheses(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Train { resume, .. } => {
            let s = cli::cmd_train(&cfg, resume)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Evaluate { checkpoint, per_variable } => {
            print!("{}", cli::cmd_evaluate(&cfg, checkpoint.as_deref(), per_variable)?.to_table());
        }
        Command::AnalyzeLatents { checkpoint } => {
            print!("{}", cli::cmd_analyze_latents(&cfg, checkpoint.as_deref())?.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Cli::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
