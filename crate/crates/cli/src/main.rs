use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clvae_cli::config::{Overrides, RunConfig};
use clvae_cli::model_io::TrainedModel;
use clvae_cli::pipeline::{
    cluster_stage, detect_stage, emmv_curves_csv, emmv_json, emmv_stage, latent_csv, load_data, read_latent_csv, run_pipeline,
    run_with_model, scores_csv, sweep_csv,
};
use clvae_cli::CliError;
use clvae_core::anomaly::misclassification_detector;

const MODEL_FILE: &str = "model.clv";
const LATENT_FILE: &str = "latent.csv";

#[derive(Parser)]
#[command(name = "clvae", version, about = "Latent-space clustering and anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random stream in the run.
    #[arg(long)]
    seed: u64,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Monte Carlo sample count for EM/MV.
    #[arg(long)]
    n_mc: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model and write model.clv.
    Train(Common),
    /// Encode the test split with a trained model into latent.csv.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// V-score sweep and final clustering of a latent CSV.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Anomaly scores from both detectors plus misclassification flags.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// EM/MV evaluation of both detectors.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Full report from an already trained model.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train and run every stage.
    All(Common),
}

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let overrides = Overrides {
        seed: Some(c.seed),
        output_dir: c.out.clone(),
        epochs: c.epochs,
        n_mc: c.n_mc,
    };
    let config = RunConfig::from_file(&c.config, &overrides)?;
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir).map_err(|source| CliError::Output {
        stage: "setup",
        path: config.output_dir.clone(),
        source,
    })?;
    Ok(config)
}

fn write(stage: &'static str, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Output {
        stage,
        path: path.to_path_buf(),
        source,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn or_default(given: &Option<PathBuf>, config: &RunConfig, name: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| config.output_dir.join(name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let config = load_config(&c)?;
            let data = load_data(&config)?;
            let (model, history) = TrainedModel::train(&config.model, config.seed, &data.train)?;
            if let Some(last) = history.last() {
                log::info!("final epoch loss {last:.6}");
            }
            let path = config.output_dir.join(MODEL_FILE);
            model.save(&path)?;
            println!("{}", path.display());
        }
        Command::Project { common, model } => {
            let config = load_config(&common)?;
            let model = TrainedModel::load(&or_default(&model, &config, MODEL_FILE))?;
            let data = load_data(&config)?;
            let latent = model.project(&data.test)?;
            write("project", &config.output_dir.join(LATENT_FILE), &latent_csv(&latent)?)?;
        }
        Command::Cluster { common, latent } => {
            let config = load_config(&common)?;
            let latent = read_latent_csv(&or_default(&latent, &config, LATENT_FILE))?;
            let (summary, _) = cluster_stage(&config, &latent)?;
            write("cluster", &config.output_dir.join("vscore_sweep.csv"), &sweep_csv(&summary.sweep)?)?;
            println!("best k {} (V-score {:.4})", summary.best_k, summary.best_v_score);
        }
        Command::Detect { common, latent } => {
            let config = load_config(&common)?;
            let latent = read_latent_csv(&or_default(&latent, &config, LATENT_FILE))?;
            let (_, assignment) = cluster_stage(&config, &latent)?;
            let detectors = detect_stage(&config, &latent)?;
            let mis = misclassification_detector(&assignment, &latent.labels).map_err(CliError::stage("detect"))?;
            let bytes = scores_csv(&latent.labels, &detectors, &mis.flagged)?;
            write("detect", &config.output_dir.join("anomaly_scores.csv"), &bytes)?;
        }
        Command::Evaluate { common, latent } => {
            let config = load_config(&common)?;
            let latent = read_latent_csv(&or_default(&latent, &config, LATENT_FILE))?;
            let results = emmv_stage(&config, &latent)?;
            write("evaluate", &config.output_dir.join("emmv.json"), &emmv_json(&results)?)?;
            write("evaluate", &config.output_dir.join("emmv_curves.csv"), &emmv_curves_csv(&results)?)?;
            for (name, r) in &results {
                println!("{name}: EM {:.6e}  MV {:.6e}", r.em_area, r.mv_area);
            }
        }
        Command::Report { common, model } => {
            let config = load_config(&common)?;
            let model = TrainedModel::load(&or_default(&model, &config, MODEL_FILE))?;
            let report = run_with_model(&config, Some(model))?;
            print_summary(&report);
        }
        Command::All(c) => {
            let config = load_config(&c)?;
            let report = run_pipeline(&config)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn print_summary(report: &clvae_cli::Report) {
    let c = &report.clustering;
    println!(
        "{}: best k {} V-score {:.4}; final k {}",
        report.model.id, c.best_k, c.best_v_score, c.final_k
    );
    for d in &report.detectors {
        println!("{}: flagged {} RMSE {:.4}", d.detector, d.flagged, d.rmse);
    }
    println!("{} files in {}", report.manifest.len(), report.config.output_dir.display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
