use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ensemble_judge::eval::render_text;
use ensemble_judge::ingest::write_corpus;
use ensemble_judge::pipeline;
use ensemble_judge::synth::{generate_corpus, write_latents};
use ensemble_judge::{Error, RunConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ensemble-judge", version, about = "Multi-agent disclosure judgments with a logistic aggregator")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "ensemble-judge.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a corpus and write the records and chronological split.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Query the agents for every uncached (disclosure, agent) pair.
    RunAgents {
        /// Split file to cover, defaulting to the work directory's.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Write the feature matrix of each partition.
    BuildFeatures,
    /// Tune and fit the meta-classifier on train and dev.
    Train,
    /// Score every method on the test split and write the report.
    Evaluate {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Generate a synthetic corpus with its latents sidecar.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output directory for corpus.jsonl and latents.jsonl.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write a stub-backend run config for the corpus here.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
    /// Print the last evaluation report.
    Report {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn synth(n: usize, seed: u64, out: &Path, write_config: Option<&Path>) -> Result<(), Error> {
    let corpus = generate_corpus(n, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let corpus_path = out.join("corpus.jsonl");
    let latents_path = out.join("latents.jsonl");
    write_corpus(&corpus_path, &corpus.lines)?;
    write_latents(&latents_path, &corpus.latents)?;
    println!("wrote {n} disclosures to {}", corpus_path.display());
    println!("wrote latents to {}", latents_path.display());
    if let Some(cfg_path) = write_config {
        let base = cfg_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| Error::Io {
            path: base.to_path_buf(),
            source: e,
        })?;
        let latents = std::path::absolute(&latents_path).map_err(|e| Error::Io {
            path: latents_path.clone(),
            source: e,
        })?;
        let rel = latents.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(latents);
        let cfg = RunConfig::synthetic("work".into(), rel, seed);
        cfg.write(cfg_path)?;
        println!("wrote stub config to {}", cfg_path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Synth {
        n,
        seed,
        out,
        write_config,
    } = &cli.command
    {
        return synth(*n, *seed, out, write_config.as_deref());
    }
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest { corpus } => {
            let s = pipeline::ingest(&cfg, &corpus)?;
            println!(
                "ingested {} disclosures: train {}, dev {}, test {}",
                s.records, s.train, s.dev, s.test
            );
        }
        Command::RunAgents { split } => {
            let s = pipeline::run_agents(&cfg, split.as_deref())?;
            println!(
                "coverage {}/{} pairs ({} already cached, {} generated, {} fallbacks, {} missing)",
                s.pairs - s.missing,
                s.pairs,
                s.cached_before,
                s.generated,
                s.fallbacks,
                s.missing
            );
        }
        Command::BuildFeatures => {
            let s = pipeline::build_features(&cfg)?;
            println!("feature rows: train {}, dev {}, test {}", s.train, s.dev, s.test);
        }
        Command::Train => {
            let s = pipeline::train(&cfg)?;
            println!("chosen C = {}", s.inverse_reg_strength);
            println!(
                "optimizer: {} iterations, final gradient norm {:.3e}",
                s.optimizer_report.iterations, s.optimizer_report.final_gradient_norm
            );
            for g in &s.dev_scores {
                println!("  C = {:<8} dev balanced accuracy {:.4}", g.c, g.dev_balanced_accuracy);
            }
        }
        Command::Evaluate { format } => {
            let report = pipeline::evaluate(&cfg)?;
            match format {
                Format::Text => print!("{}", render_text(&report)),
                Format::Json => println!("{}", to_json(&report)),
            }
        }
        Command::Report { format } => {
            let report = pipeline::read_report(&cfg)?;
            match format {
                Format::Text => print!("{}", render_text(&report)),
                Format::Json => println!("{}", to_json(&report)),
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

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
            if let Error::Coverage { missing } = &e {
                for key in missing.iter().take(20) {
                    eprintln!("  missing {key}");
                }
                if missing.len() > 20 {
                    eprintln!("  ... and {} more", missing.len() - 20);
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
