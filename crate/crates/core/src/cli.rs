//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors (bad
//! input files, mismatched lengths, invalid configuration).

use crate::bench::{
    ablate, ablation_csv, gen_synthetic, otb_metrics, vot_run, Sequence, SynthConfig, VotProtocol,
};
use crate::config::KeyValues;
use crate::estimator::EstimationMode;
use crate::geometry::{format_boxes, read_ground_truth};
use crate::tracker::{run, TrackerConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "treetrack", version, about = "Tree-structured appearance-model tracker and evaluation bench")]
pub struct Cli {
    /// Seed for the tracker (and for generated sequences)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key=value configuration file; `synth.*` and `suite.*` keys configure
    /// sequence generation and the ablation suite
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Estimation mode: TCNN, Tree_max, Tree_mean, Linear_mean, Linear_single
    #[arg(long, global = true)]
    pub mode: Option<EstimationMode>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Easy,
    Multimodal,
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    /// Sequence directory (NNNNNN.pgm|ppm frames + groundtruth.txt); a
    /// synthetic sequence is generated when omitted
    #[arg(long)]
    pub seq: Option<PathBuf>,
    /// Ground truth uses 1-based pixel coordinates
    #[arg(long)]
    pub one_based: bool,
    #[arg(long, value_enum, default_value = "easy")]
    pub preset: Preset,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence
    Synth {
        #[arg(long, value_enum, default_value = "easy")]
        preset: Preset,
    },
    /// Track a sequence and write its trajectory
    Track {
        #[command(flatten)]
        input: SequenceArgs,
        /// Also write the model tree snapshot (snapshot.json)
        #[arg(long)]
        snapshot: bool,
        /// Also write the model tree as Graphviz (tree.dot)
        #[arg(long)]
        dot: bool,
    },
    /// Score a trajectory against ground truth
    Eval {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        groundtruth: PathBuf,
        #[arg(long)]
        one_based: bool,
    },
    /// Compare all estimation modes on synthetic sequences
    Ablate {
        #[arg(long, value_enum, default_value = "multimodal")]
        preset: Preset,
        /// Number of generated sequences
        #[arg(long)]
        sequences: Option<usize>,
        /// Comma-separated tracker seeds
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate under the re-initialization protocol
    Vot {
        #[command(flatten)]
        input: SequenceArgs,
    },
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: e.to_string(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct Settings {
    tracker: TrackerConfig,
    synth: KeyValues,
    suite: KeyValues,
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut kv = match &cli.config {
        Some(p) => KeyValues::load(p).map_err(data_err)?,
        None => KeyValues::default(),
    };
    let synth = kv.split_prefix("synth");
    let suite = kv.split_prefix("suite");
    let mut tracker = TrackerConfig::default();
    tracker.apply(&mut kv).map_err(data_err)?;
    kv.finish().map_err(data_err)?;
    if let Some(s) = cli.seed {
        tracker.seed = s;
    }
    if let Some(m) = cli.mode {
        tracker.mode = m;
    }
    tracker.validate().map_err(data_err)?;
    Ok(Settings { tracker, synth, suite })
}

fn synth_config(preset: Preset, seed: Option<u64>, keys: &KeyValues) -> Result<SynthConfig, CliError> {
    let mut cfg = match preset {
        Preset::Easy => SynthConfig::easy(0),
        Preset::Multimodal => SynthConfig::multimodal(0),
    };
    let mut keys = keys.clone();
    cfg.apply(&mut keys).map_err(data_err)?;
    keys.finish().map_err(data_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(data_err)?;
    Ok(cfg)
}

fn load_sequence(cli: &Cli, input: &SequenceArgs, s: &Settings) -> Result<Sequence, CliError> {
    match &input.seq {
        Some(dir) => Sequence::load_dir(dir, input.one_based).map_err(data_err),
        None => gen_synthetic(&synth_config(input.preset, cli.seed, &s.synth)?).map_err(data_err),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(data_err)?;
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| data_err(format!("{}: {e}", p.display())))?;
    Ok(p)
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let s = settings(cli)?;
    match &cli.command {
        Command::Synth { preset } => {
            let cfg = synth_config(*preset, cli.seed, &s.synth)?;
            let seq = gen_synthetic(&cfg).map_err(data_err)?;
            seq.save_dir(&cli.out).map_err(data_err)?;
            Ok(format!("wrote {} frames to {}", seq.len(), cli.out.display()))
        }
        Command::Track { input, snapshot, dot } => {
            let seq = load_sequence(cli, input, &s)?;
            let (traj, session) = run(&seq.frames, seq.ground_truth[0], s.tracker).map_err(data_err)?;
            let p = write(&cli.out, "trajectory.txt", &format_boxes(&traj))?;
            if *snapshot {
                write(&cli.out, "snapshot.json", &session.snapshot_json())?;
            }
            if *dot {
                write(&cli.out, "tree.dot", &session.tree().export_dot())?;
            }
            let report = otb_metrics(&traj, &seq.ground_truth).map_err(data_err)?;
            Ok(format!(
                "{}: {} frames, {} nodes, precision@20 {:.3}, AUC {:.3}",
                p.display(),
                traj.len(),
                session.tree().len(),
                report.precision_at_20,
                report.auc
            ))
        }
        Command::Eval {
            trajectory,
            groundtruth,
            one_based,
        } => {
            let traj = read_ground_truth(trajectory, false).map_err(data_err)?;
            let gt = read_ground_truth(groundtruth, *one_based).map_err(data_err)?;
            let report = otb_metrics(&traj, &gt).map_err(data_err)?;
            write(&cli.out, "report.json", &report.to_json())?;
            write(&cli.out, "curves.csv", &report.curves_csv())?;
            Ok(format!(
                "precision@20 {:.4}  AUC {:.4}  mean IoU {:.4}",
                report.precision_at_20, report.auc, report.mean_iou
            ))
        }
        Command::Ablate {
            preset,
            sequences,
            seeds,
        } => {
            let mut suite = s.suite.clone();
            let n = match sequences {
                Some(n) => *n,
                None => suite.take("sequences").map_err(data_err)?.unwrap_or(20),
            };
            let seeds = match seeds {
                Some(v) => v.clone(),
                None => match suite.take::<String>("seeds").map_err(data_err)? {
                    Some(list) => list
                        .split(',')
                        .map(|t| t.trim().parse::<u64>().map_err(data_err))
                        .collect::<Result<_, _>>()?,
                    None => vec![s.tracker.seed],
                },
            };
            suite.finish().map_err(data_err)?;
            if n == 0 || seeds.is_empty() {
                return Err(data_err("need at least one sequence and one seed"));
            }
            let base = synth_config(*preset, cli.seed, &s.synth)?;
            let seqs = (0..n)
                .map(|i| {
                    gen_synthetic(&SynthConfig {
                        seed: base.seed.wrapping_add(i as u64),
                        ..base.clone()
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(data_err)?;
            let rows = ablate(&seqs, &s.tracker, &seeds).map_err(data_err)?;
            let csv = ablation_csv(&rows);
            write(&cli.out, "ablation.csv", &csv)?;
            Ok(csv.trim_end().to_string())
        }
        Command::Vot { input } => {
            let seq = load_sequence(cli, input, &s)?;
            let report = vot_run(&s.tracker, &seq, VotProtocol::default()).map_err(data_err)?;
            write(&cli.out, "vot.json", &report.to_json())?;
            let v = report.vot.as_ref().expect("vot summary");
            Ok(format!(
                "accuracy {}  failures {}",
                v.accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
                v.failures
            ))
        }
    }
}
