//! Command-line front end: config files, XYZ point files, CSV reports and
//! the `pointdrop` subcommands.
//!
//! Output files default to the directory named by `POINTDROP_OUT_DIR` (or
//! the working directory); explicit `--out`/`--out-dir` flags win.

pub mod config;
pub mod table;
pub mod xyz;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::{config_to_string, parse_config, parse_config_str};
pub use table::{emit_csv, format_sig6, Cell, ResultTable};
pub use xyz::{format_xyz, load_xyz, parse_xyz, save_xyz};

use crate::error::{Error, Result};
use crate::geometry::{build_knn_index, PointCloud};
use crate::masks::{cluster_mask_from_centroids, dropcluster_mask, droppoint_mask, DropKind, PointMask};
use crate::rng::{child_seed, INPUT_LAYER};
use crate::train::{
    ablation_sweep, build_dataset, earliest_slots, latest_slots, run_experiment, sample_mask_seed, ExperimentConfig,
    RunResult, SweepAxis, SweepRow, SweepValue,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "POINTDROP_OUT_DIR";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "pointdrop", version, about = "Structured dropout for point-cloud networks at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once and write per-epoch metrics as CSV.
    Train {
        config: PathBuf,
        /// CSV path [default: <out dir>/train.csv]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one drop setting over several seeds.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; positions take `0+1`, `early` or `late`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds [default: the config seed]
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// CSV path [default: <out dir>/ablate_<axis>.csv]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one realized drop mask as XYZ with a trailing 0/1 keep column.
    Maskgen {
        config: PathBuf,
        /// XYZ path [default: <out dir>/mask.xyz]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mask this XYZ cloud instead of a generated training cloud.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Training cloud to mask (ignored with --input).
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Pin DropCluster centroids instead of sampling them.
        #[arg(long, value_delimiter = ',')]
        centroids: Vec<usize>,
    },
    /// Write the generated train and test clouds as XYZ files.
    Gendata {
        config: PathBuf,
        /// Target directory [default: <out dir>]
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Runs the CLI with the process environment and standard streams, returning
/// the exit code.
pub fn main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let out_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    run(args, out_dir, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`main`] with an explicit default output directory and streams.
///
/// Usage errors exit with 2, every other failure with 1 after a single
/// `error: ...` line on `stderr`.
pub fn run<I, S>(args: I, out_dir: Option<PathBuf>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let msg = e.kind().as_str().unwrap_or("invalid usage");
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error: usage: {}", if first.is_empty() { msg } else { first });
            return 2;
        }
    };
    let dir = out_dir.unwrap_or_else(|| PathBuf::from("."));
    match dispatch(cli.command, &dir, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error: {line}");
            1
        }
    }
}

fn dispatch(command: Command, dir: &Path, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train { config, out } => {
            let cfg = parse_config(&config)?;
            let result = run_experiment::<f64>(&cfg)?;
            let path = out.unwrap_or_else(|| dir.join("train.csv"));
            emit_csv(&train_table(&result), &path)?;
            print_run(stdout, &result, &path)
        }
        Command::Ablate {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = parse_config(&config)?;
            let values = values
                .iter()
                .map(|v| parse_sweep_value(axis, v, &cfg))
                .collect::<Result<Vec<_>>>()?;
            for v in &values {
                v.apply(&cfg).validate()?;
            }
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let rows = ablation_sweep::<f64>(&cfg, &values, &seeds)?;
            let path = out.unwrap_or_else(|| dir.join(format!("ablate_{}.csv", axis.name())));
            emit_csv(&sweep_table(&cfg, axis, &seeds, &rows)?, &path)?;
            for r in &rows {
                writeln!(
                    stdout,
                    "{} = {}: test acc {} ± {}",
                    axis.name(),
                    r.value,
                    format_sig6(r.mean_test_acc),
                    format_sig6(r.sd_test_acc)
                )?;
            }
            writeln!(stdout, "wrote {}", path.display())?;
            Ok(())
        }
        Command::Maskgen {
            config,
            out,
            input,
            sample,
            centroids,
        } => {
            let cfg = parse_config(&config)?;
            let cloud = match &input {
                Some(p) => load_xyz::<f64>(p)?,
                None => {
                    let (train, _) = build_dataset::<f64>(&cfg)?;
                    let n = train.len();
                    train
                        .into_iter()
                        .nth(sample)
                        .ok_or_else(|| Error::invalid(format!("sample {sample} out of range for {n} training clouds")))?
                }
            };
            let mask = realize_mask(&cfg, &cloud, sample, &centroids)?;
            let path = out.unwrap_or_else(|| dir.join("mask.xyz"));
            let keep: Vec<Vec<f64>> = mask.keep().iter().map(|&k| vec![f64::from(u8::from(k))]).collect();
            let comments = vec![
                format!(
                    "kind {} theta {} gamma {} seed {}",
                    cfg.drop.kind, cfg.drop.theta, cfg.drop.gamma, cfg.seed
                ),
                "last column: 1 = kept, 0 = dropped".to_string(),
            ];
            fs::write(&path, format_xyz(&cloud, &comments, Some(&keep)))?;
            writeln!(
                stdout,
                "dropped {} of {} points; wrote {}",
                mask.len() - mask.kept_count(),
                mask.len(),
                path.display()
            )?;
            Ok(())
        }
        Command::Gendata { config, out_dir } => {
            let cfg = parse_config(&config)?;
            let target = out_dir.unwrap_or_else(|| dir.to_path_buf());
            fs::create_dir_all(&target)?;
            let (train, test) = build_dataset::<f64>(&cfg)?;
            for (split, clouds) in [("train", &train), ("test", &test)] {
                for (i, c) in clouds.iter().enumerate() {
                    let kind = cfg.dataset.kinds[c.label];
                    let comments = vec![format!("label {} {}", c.label, kind.name())];
                    save_xyz(c, target.join(format!("{split}_{i:04}.xyz")), &comments)?;
                }
            }
            writeln!(
                stdout,
                "wrote {} train and {} test clouds to {}",
                train.len(),
                test.len(),
                target.display()
            )?;
            Ok(())
        }
    }
}

/// The mask training would apply to training cloud `sample` at its first
/// drop position in epoch 0, or the mask pinned by `centroids`.
fn realize_mask(cfg: &ExperimentConfig, cloud: &PointCloud<f64>, sample: usize, centroids: &[usize]) -> Result<PointMask> {
    let drop = &cfg.drop;
    let base = sample_mask_seed(cfg.seed, 0, sample);
    let layer = match drop.kind {
        DropKind::InputDrop => INPUT_LAYER,
        _ => drop.positions.iter().next().map_or(1, |&p| p as u64 + 1),
    };
    let seed = child_seed(base, &[layer]);
    if !centroids.is_empty() {
        if drop.kind != DropKind::DropCluster {
            return Err(Error::invalid("--centroids needs drop kind drop_cluster"));
        }
        return cluster_mask_from_centroids(&build_knn_index(&cloud.coords)?, centroids, drop.gamma);
    }
    match drop.kind {
        DropKind::DropCluster => dropcluster_mask(&build_knn_index(&cloud.coords)?, drop.theta, drop.gamma, seed),
        DropKind::DropPoint | DropKind::InputDrop => droppoint_mask(cloud.n(), drop.theta, seed),
        other => Err(Error::invalid(format!(
            "maskgen needs a point-level drop kind (drop_cluster, drop_point or input_drop), got {other}"
        ))),
    }
}

fn parse_sweep_value(axis: SweepAxis, text: &str, cfg: &ExperimentConfig) -> Result<SweepValue> {
    let text = text.trim();
    let bad = |what: &str| Error::invalid(format!("invalid {what} value `{text}`"));
    match axis {
        SweepAxis::Theta => text.parse().map(SweepValue::Theta).map_err(|_| bad("theta")),
        SweepAxis::Gamma => text.parse().map(SweepValue::Gamma).map_err(|_| bad("gamma")),
        SweepAxis::Positions => {
            let set: BTreeSet<usize> = match text {
                "early" => earliest_slots(&cfg.model, 2),
                "late" => latest_slots(&cfg.model, 2),
                "none" => BTreeSet::new(),
                _ => text
                    .split('+')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("positions"))?,
            };
            Ok(SweepValue::Positions(set))
        }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config text.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config_to_string(cfg).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn add_common_metadata(table: &mut ResultTable, cfg: &ExperimentConfig, seeds: &[u64]) {
    table.add_metadata("version", VERSION);
    table.add_metadata("config_hash", config_hash(cfg));
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    table.add_metadata("seeds", seeds.join(","));
    for line in config_to_string(cfg).lines().filter(|l| !l.is_empty()) {
        table.add_metadata("config", line);
    }
}

/// Per-epoch metrics of one run, with the run's config echoed as metadata.
pub fn train_table(result: &RunResult) -> ResultTable {
    let mut t = ResultTable::new(["epoch", "train_loss", "train_acc", "test_acc"]).expect("distinct columns");
    add_common_metadata(&mut t, &result.config, &[result.seed]);
    t.add_metadata("final_train_acc", format_sig6(result.final_train_acc));
    t.add_metadata("final_test_acc", format_sig6(result.final_test_acc));
    t.add_metadata("gap", format_sig6(result.gap));
    for e in &result.epochs {
        t.push_row(vec![
            Cell::Int(e.epoch as i64),
            Cell::Num(e.train_loss),
            Cell::Num(e.train_acc),
            Cell::Num(e.test_acc),
        ])
        .expect("four cells");
    }
    t
}

/// One row per `(value, seed)` followed by `mean` and `sd` rows per value.
pub fn sweep_table(cfg: &ExperimentConfig, axis: SweepAxis, seeds: &[u64], rows: &[SweepRow]) -> Result<ResultTable> {
    let mut t = ResultTable::new([axis.name(), "seed", "test_acc"])?;
    add_common_metadata(&mut t, cfg, seeds);
    for r in rows {
        let value = Cell::Text(r.value.to_string());
        for run in &r.runs {
            t.push_row(vec![value.clone(), Cell::Int(run.seed as i64), Cell::Num(run.test_acc)])?;
        }
        t.push_row(vec![value.clone(), Cell::Text("mean".into()), Cell::Num(r.mean_test_acc)])?;
        t.push_row(vec![value, Cell::Text("sd".into()), Cell::Num(r.sd_test_acc)])?;
    }
    Ok(t)
}

fn print_run(stdout: &mut dyn Write, r: &RunResult, path: &Path) -> Result<()> {
    for e in &r.epochs {
        writeln!(
            stdout,
            "epoch {:>3}  loss {:<9}  train acc {:<8}  test acc {}",
            e.epoch,
            format_sig6(e.train_loss),
            format_sig6(e.train_acc),
            format_sig6(e.test_acc)
        )?;
    }
    writeln!(
        stdout,
        "final: train acc {}  test acc {}  gap {}  ({:.1} s)",
        format_sig6(r.final_train_acc),
        format_sig6(r.final_test_acc),
        format_sig6(r.gap),
        r.wall_clock.as_secs_f64()
    )?;
    writeln!(stdout, "wrote {}", path.display())?;
    Ok(())
}
