use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use referee::pipeline::{self, EvalInputs};
use referee::PipelineConfig;

/// Radar place recognition and loop-closing SLAM on polar scan sessions.
#[derive(Parser, Debug)]
#[command(name = "referee", version)]
struct Cli {
    /// JSON configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic session directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Noise seed, overriding `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute descriptors for every scan of a session.
    Describe {
        session: PathBuf,
        /// Descriptor file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 retrieval; searches the query file against itself unless `--db` is given.
    Retrieve {
        query: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Matches CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// PR curve, Recall@1 and, when given loops or a trajectory, RE and APE.
    Eval {
        matches: PathBuf,
        /// poses.csv of the query session.
        #[arg(long)]
        poses: PathBuf,
        /// poses.csv of the database session for cross-session matches.
        #[arg(long)]
        db_poses: Option<PathBuf>,
        /// loops.csv written by `slam`.
        #[arg(long)]
        loops: Option<PathBuf>,
        /// trajectory.csv written by `slam`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Online loop closing and pose-graph optimization.
    Slam {
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> referee::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> referee::Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { out, seed } => {
            let s = pipeline::cmd_synth(&cfg, seed, &out)?;
            println!("wrote {} scans to {}", s.scans.len(), out.display());
        }
        Command::Describe { session, out } => {
            let recs = pipeline::cmd_describe(&session, &cfg, &out)?;
            println!("wrote {} descriptors to {}", recs.len(), out.display());
        }
        Command::Retrieve { query, db, out } => {
            let rows = pipeline::cmd_retrieve(&query, db.as_deref(), &cfg, &out)?;
            let accepted = rows.iter().filter(|r| r.accepted).count();
            println!("{} queries, {accepted} accepted", rows.len());
        }
        Command::Eval {
            matches,
            poses,
            db_poses,
            loops,
            trajectory,
            out,
        } => {
            let extra = EvalInputs {
                db_poses: db_poses.as_deref(),
                loops: loops.as_deref(),
                trajectory: trajectory.as_deref(),
            };
            let s = pipeline::cmd_eval(&matches, &poses, extra, &cfg, &out)?;
            println!(
                "auc {:.4}  f1_max {:.4}  recall@1 {:.4}  mean_re {:.3} deg  ape_rmse {:.3} m  ape_literal {:.3} m",
                s.auc, s.f1_max, s.recall_at_1, s.mean_re_deg, s.ape_rmse_m, s.ape_literal_m
            );
        }
        Command::Slam { session, out } => {
            let r = pipeline::cmd_slam(&session, &cfg, &out)?;
            let accepted = r.loops.iter().filter(|l| l.accepted).count();
            println!("{} candidates, {accepted} loops accepted", r.loops.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
