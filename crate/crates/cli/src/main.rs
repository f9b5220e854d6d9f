use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roadrisk::cache::{CacheOutcome, Json};
use roadrisk::pipeline::{Pipeline, PipelineError, RunConfig, Upstream};
use roadrisk::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "roadrisk", version, about = "Hourly road-segment collision risk pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.num_trees=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and a matching run config.
    Synth {
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Synthetic scenario settings (JSON); defaults when absent.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse inputs, match collisions to segments, print network statistics.
    Ingest(RunArgs),
    /// Draw negative examples.
    Sample(RunArgs),
    /// Build train and test feature matrices and export them.
    Featurize(RunArgs),
    /// Fit the configured model.
    Train(RunArgs),
    /// Score the test window.
    Evaluate(RunArgs),
    /// Feature importance table.
    Importance(RunArgs),
    /// Write report.json, curves, importance and model artifacts.
    Report(RunArgs),
    /// Every stage in order, then the report.
    Run(RunArgs),
}

fn outcome(o: CacheOutcome) -> &'static str {
    match o {
        CacheOutcome::Hit => "cache hit",
        CacheOutcome::Computed => "computed",
        CacheOutcome::Recomputed => "recomputed (stale entry replaced)",
    }
}

fn synth(out: PathBuf, synth_config: Option<PathBuf>, seed: Option<u64>) -> Result<(), PipelineError> {
    let mut cfg = match synth_config {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scenario = generate(&cfg).map_err(|e| PipelineError::Config(e.to_string()))?;
    let io = |e: std::io::Error| PipelineError::Internal(format!("{}: {e}", out.display()));
    scenario.write_to(&out).map_err(io)?;
    let run = serde_json::to_string_pretty(&RunConfig::for_synth(&cfg)).expect("config serializes");
    fs::write(out.join("config.json"), run + "\n").map_err(io)?;
    println!(
        "wrote {} segments, {} collisions ({} hotspots) to {}",
        cfg.n_segments,
        scenario.manifest.n_collisions,
        scenario.manifest.hotspots.len(),
        out.display()
    );
    println!("run config: {}", out.join("config.json").display());
    Ok(())
}

fn run_stage(cmd: Command) -> Result<(), PipelineError> {
    let args = match cmd {
        Command::Synth { out, synth_config, seed } => return synth(out, synth_config, seed),
        Command::Ingest(ref a)
        | Command::Sample(ref a)
        | Command::Featurize(ref a)
        | Command::Train(ref a)
        | Command::Evaluate(ref a)
        | Command::Importance(ref a)
        | Command::Report(ref a)
        | Command::Run(ref a) => a,
    };
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let pool = cfg.thread_pool()?;
    let pipe = Pipeline::new(cfg)?;
    pool.install(|| -> Result<(), PipelineError> {
        match cmd {
            Command::Synth { .. } => unreachable!(),
            Command::Ingest(_) => {
                let (Json(ingest), o) = pipe.ingest()?;
                let (n, m) = (&ingest.network, &ingest.matching);
                println!("ingest: {}", outcome(o));
                println!("segments: {}", n.segments);
                println!("mean segment length: {:.1} m", n.mean_length_m);
                println!("segments under 200 m: {:.1}%", 100.0 * n.fraction_under_200m);
                println!("weather stations: {}", ingest.weather_stations);
                println!(
                    "collisions: {} ({} incomplete, {} matched)",
                    ingest.collisions_total, ingest.collisions_incomplete, m.matched
                );
                println!("positive examples: {}", ingest.positives.len());
                Ok(())
            }
            Command::Sample(_) => {
                let (set, o) = pipe.sample(Upstream::Cached)?;
                let pos = set.count_positive();
                println!("sample: {}", outcome(o));
                println!("examples: {} ({} positive, {} negative)", set.examples.len(), pos, set.examples.len() - pos);
                Ok(())
            }
            Command::Featurize(_) => {
                let (Json(f), o) = pipe.featurize(Upstream::Cached)?;
                println!("featurize: {}", outcome(o));
                println!("columns: {}", f.spec.column_names().join(", "));
                println!("train rows: {}, test rows: {}", f.train.n_rows(), f.test.n_rows());
                for p in pipe.export_features(&f)? {
                    println!("wrote {}", p.display());
                }
                Ok(())
            }
            Command::Train(_) => {
                let (Json(t), o) = pipe.train(Upstream::Cached)?;
                println!("train: {}", outcome(o));
                for p in pipe.export_model(&t)? {
                    println!("wrote {}", p.display());
                }
                Ok(())
            }
            Command::Evaluate(_) => {
                let (Json(e), o) = pipe.evaluate(Upstream::Cached)?;
                let r = &e.primary;
                println!("evaluate: {}", outcome(o));
                println!("test examples: {} ({} positive)", r.n_examples, r.n_positive);
                println!("ROC AUC: {:.4}", r.auc_roc);
                if let Some(b) = &e.baseline {
                    println!("baseline ROC AUC: {:.4}", b.auc_roc);
                }
                let op = &r.operating_point;
                println!(
                    "at recall {:.3}: threshold {:.4}, precision {:.4}, FPR {:.4}",
                    op.recall, op.threshold, op.precision, op.fpr
                );
                println!("deployment prevalence: {:.3e}", r.prevalence);
                println!("extrapolated precision: {:.3e} (risk ratio {:.2})", r.extrapolated_precision, r.risk_ratio);
                Ok(())
            }
            Command::Importance(_) => {
                let (Json(imp), o) = pipe.importance(Upstream::Cached)?;
                println!("importance: {}", outcome(o));
                println!("{:<24} {:>10} {:>16}", "feature", "share", "w/o accidents");
                for r in &imp.rows {
                    let excl =
                        r.importance_excluding_accident_count.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                    println!("{:<24} {:>10.4} {:>16}", r.feature, r.importance, excl);
                }
                Ok(())
            }
            Command::Report(_) | Command::Run(_) => {
                let policy = if matches!(cmd, Command::Run(_)) { Upstream::Compute } else { Upstream::Cached };
                let (report, written) = pipe.report(policy)?;
                for p in &written {
                    println!("wrote {}", p.display());
                }
                println!("ROC AUC: {:.4}", report.auc_roc);
                if let Some(b) = report.baseline_auc_roc {
                    println!("baseline ROC AUC: {b:.4}");
                }
                println!("extrapolated precision: {:.3e}", report.evaluation.extrapolated_precision);
                Ok(())
            }
        }
    })?;
    let s = pipe.cache().stats();
    log::info!(
        "cache: {} hits, {} computed, {} recomputed",
        s.hits.load(std::sync::atomic::Ordering::Relaxed),
        s.computed.load(std::sync::atomic::Ordering::Relaxed),
        s.recomputed.load(std::sync::atomic::Ordering::Relaxed)
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_stage(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
