use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use text2action::training::Profile;
use text2action_cli::config::parse_override;
use text2action_cli::{
    cmd_evaluate, cmd_export_trajectory, cmd_generate, cmd_pretrain, cmd_synth, cmd_train_embeddings, cmd_train_gan,
    Result, RunConfig,
};

/// Generate upper-body motion from sentences.
///
/// Settings resolve from the profile defaults, then the --config file, then
/// flags; the resolved config is written to OUT/run_config.json.
#[derive(Parser)]
#[command(name = "text2action", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat JSON config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    profile: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set gan_epochs=20`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, Value)>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic labeled dataset.
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train skip-gram word embeddings on the dataset sentences.
    TrainEmbeddings,
    /// Pretrain the text-action autoencoder.
    Pretrain,
    /// Train the generator and discriminator from the pretrained autoencoder.
    TrainGan,
    /// Sample motions for a sentence.
    Generate {
        #[arg(long)]
        sentence: String,
        #[arg(short = 'k', long)]
        samples: Option<usize>,
        /// Also write speed-limited joint trajectories.
        #[arg(long)]
        skeleton: bool,
    },
    /// Report accuracy, diversity and proximity of generations.
    Evaluate {
        /// Generations per sentence.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Turn one dataset-format record into a robot joint trajectory.
    ExportTrajectory {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        record: Option<usize>,
    },
}

fn overrides(cli: &Cli) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    put("seed", cli.common.seed.map(|v| json!(v)));
    put("out", cli.common.out.as_ref().map(|v| json!(v)));
    match &cli.command {
        Command::Synth {
            classes,
            per_class,
            noise,
        } => {
            put("classes", classes.map(|v| json!(v)));
            put("per_class", per_class.map(|v| json!(v)));
            put("noise", noise.map(|v| json!(v)));
        }
        Command::Generate {
            sentence,
            samples,
            skeleton,
        } => {
            put("sentence", Some(json!(sentence)));
            put("samples", samples.map(|v| json!(v)));
            put("skeleton", skeleton.then(|| json!(true)));
        }
        Command::Evaluate { samples } => put("eval_samples", samples.map(|v| json!(v))),
        Command::ExportTrajectory { input, record } => {
            put("input", input.as_ref().map(|v| json!(v)));
            put("record", record.map(|v| json!(v)));
        }
        Command::TrainEmbeddings | Command::Pretrain | Command::TrainGan => {}
    }
    out.extend(cli.common.set.iter().cloned());
    out
}

fn run(cli: &Cli) -> Result<String> {
    let profile = cli
        .common
        .profile
        .as_deref()
        .map(|p| p.parse::<Profile>().expect("checked by clap"));
    let cfg = RunConfig::resolve(profile, cli.common.config.as_deref(), &overrides(cli))?;
    Ok(match cli.command {
        Command::Synth { .. } => cmd_synth(&cfg)?.to_string(),
        Command::TrainEmbeddings => cmd_train_embeddings(&cfg)?.to_string(),
        Command::Pretrain => cmd_pretrain(&cfg)?.to_string(),
        Command::TrainGan => cmd_train_gan(&cfg)?.to_string(),
        Command::Generate { .. } => cmd_generate(&cfg)?.to_string(),
        Command::Evaluate { .. } => cmd_evaluate(&cfg)?.to_string(),
        Command::ExportTrajectory { .. } => cmd_export_trajectory(&cfg)?.to_string(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors are input errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
