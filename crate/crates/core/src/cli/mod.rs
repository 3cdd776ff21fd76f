//! Command-line surface. Hyperparameters come only from the JSON config;
//! flags name files. Every output carries the config hash.

mod ablate;

pub use ablate::{cartesian, run_ablation, AblationReport, AblationRow, Grid};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bsd::mc_verify;
use crate::config::RunConfig;
use crate::data::{generate_dataset, load_dataset, save_dataset, Dataset, VideoSample};
use crate::detect::{evaluate, fit, load_checkpoint, save_checkpoint, DfAlign, LabelSet};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dfalign", version, about = "Open-vocabulary temporal action detection on synthetic features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory from `data.*`.
    GenData {
        /// JSON run config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the seen split with the first seed of `train.seeds`; prints
    /// one JSON loss line per epoch and writes a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the unseen split and write metrics JSON.
    Eval {
        /// Must match the checkpoint's config when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Metrics JSON path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of the diffusion marginals for `diffusion.*`.
    VerifyDiffusion {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report JSON path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Draws per check.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Write per-step and final segment similarities of one video as CSV.
    ExportHeatmap {
        /// Must match the checkpoint's config when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Video id from either split.
        #[arg(long)]
        video_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every cell of a grid over every seed; prints a
    /// table and writes the full report as JSON.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON object mapping dotted config keys to lists of values.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Single-line JSON error record for standard error.
pub fn error_line(kind: &str, message: impl std::fmt::Display) -> String {
    let message = message.to_string().replace('\n', " ");
    serde_json::to_string(&ErrorLine { error: kind, message }).expect("error line serialises")
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let _ = writeln!(stderr, "{}", error_line("usage", e.render()));
            return EXIT_CONFIG;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_line(e.kind(), &e));
            exit_code(&e)
        }
    }
}

/// Loads a config; an unreadable file counts as a config error.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        }),
    }
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e)),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serialises")
}

/// Loads a dataset and checks it was generated from `cfg.data`.
pub fn load_matching_dataset(dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let (data, manifest) = load_dataset(dir)?;
    if manifest.config != cfg.data {
        return Err(Error::Config(format!(
            "{} was generated with a different data config than the run config",
            dir.display()
        )));
    }
    Ok(data)
}

/// Loads a checkpoint; an explicit config must hash to the stored one.
fn load_model(ckpt: &Path, config: Option<&Path>) -> Result<(DfAlign, u64)> {
    let (model, manifest) = load_checkpoint(ckpt)?;
    if let Some(p) = config {
        let cfg = load_config(Some(p))?;
        if cfg.hash() != manifest.config_hash {
            return Err(Error::Config(format!(
                "config hash {} differs from checkpoint config hash {}",
                cfg.hash(),
                manifest.config_hash
            )));
        }
    }
    Ok((model, manifest.seed))
}

#[derive(Serialize)]
struct GenDataSummary<'a> {
    out: String,
    train: usize,
    test: usize,
    seen: &'a [usize],
    unseen: &'a [usize],
    config_hash: String,
}

#[derive(Serialize)]
struct EpochLine<'a> {
    epoch: usize,
    #[serde(flatten)]
    losses: &'a crate::fpa::LossReport,
    config_hash: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct VerifyOutput {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: crate::bsd::McReport,
}

pub fn run(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let ds = generate_dataset(&cfg.data)?;
            save_dataset(&out, &ds, &cfg.data, &cfg.hash())?;
            let summary = GenDataSummary {
                out: out.display().to_string(),
                train: ds.train.len(),
                test: ds.test.len(),
                seen: &ds.split.seen,
                unseen: &ds.split.unseen,
                config_hash: cfg.hash(),
            };
            writeln!(stdout, "{}", serde_json::to_string(&summary).expect("summary serialises"))
                .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let ds = load_matching_dataset(&data, &cfg)?;
            let seed = cfg.train.seeds[0];
            let hash = cfg.hash();
            let mut io_err = None;
            let model = fit(&cfg, &ds, seed, |epoch, r| {
                let line = EpochLine {
                    epoch,
                    losses: r,
                    config_hash: &hash,
                    seed,
                };
                if let Err(e) = writeln!(stdout, "{}", serde_json::to_string(&line).expect("line serialises")) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(Error::io("<stdout>", e));
            }
            save_checkpoint(&out, &model, seed)
        }
        Command::Eval { config, data, ckpt, out } => {
            let (model, seed) = load_model(&ckpt, config.as_deref())?;
            let ds = load_matching_dataset(&data, &model.cfg)?;
            let report = evaluate(&model, &ds, seed)?;
            write_out(out.as_deref(), &to_json(&report), stdout)
        }
        Command::VerifyDiffusion { config, out, samples } => {
            let cfg = load_config(config.as_deref())?;
            let seed = cfg.train.seeds[0];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = cfg.model.dim;
            let h_v = DenseArray::randn(&[1, d], 1.0, &mut rng);
            let h_f = DenseArray::randn(&[1, d], 1.0, &mut rng);
            let report = mc_verify(&cfg.diffusion.schedule()?, &h_v, &h_f, samples, seed)?;
            let passed = report.all_pass;
            let text = to_json(&VerifyOutput {
                config_hash: cfg.hash(),
                seed,
                report,
            });
            write_out(out.as_deref(), &text, stdout)?;
            if passed {
                Ok(())
            } else {
                Err(Error::Validation("mc_verify reported a failing check".into()))
            }
        }
        Command::ExportHeatmap {
            config,
            data,
            ckpt,
            video_id,
            out,
        } => {
            let (model, seed) = load_model(&ckpt, config.as_deref())?;
            let ds = load_matching_dataset(&data, &model.cfg)?;
            let csv = heatmap_csv(&model, &ds, &video_id, seed)?;
            fs::write(&out, csv).map_err(|e| Error::io(&out, e))
        }
        Command::Ablate { config, grid, out } => {
            let cfg = load_config(config.as_deref())?;
            let text = fs::read_to_string(&grid).map_err(|e| Error::Config(format!("cannot read {}: {e}", grid.display())))?;
            let grid: Grid = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", grid.display())))?;
            let report = run_ablation(&cfg, &grid)?;
            fs::write(&out, to_json(&report)).map_err(|e| Error::io(&out, e))?;
            write!(stdout, "{}", report.table()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Long-format CSV `matrix,step,segment,label,value`.
///
/// `step_similarity` rows hold the cosine between every segment and each
/// reverse-chain state (`step` = T … 0); `text_similarity` rows hold the
/// final segment-by-label logits (`step` empty). Test videos are scored
/// against the unseen labels, train videos against the seen ones.
pub fn heatmap_csv(model: &DfAlign, ds: &Dataset, video_id: &str, seed: u64) -> Result<String> {
    let find = |vs: &[VideoSample]| vs.iter().position(|v| v.id == video_id);
    let (video, ids, index) = match (find(&ds.test), find(&ds.train)) {
        (Some(i), _) => (&ds.test[i], &ds.split.unseen, i),
        (None, Some(i)) => (&ds.train[i], &ds.split.seen, i),
        (None, None) => return Err(Error::Validation(format!("no video with id {video_id}"))),
    };
    let labels = LabelSet::new(&ds.split, ids, &model.cfg)?;
    let conds = model.conditions(&labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let p = model.predict(&video.features, &labels, &conds, &mut rng)?;

    let mut out = format!("# config_hash={}\nmatrix,step,segment,label,value\n", model.cfg.hash());
    if let Some(states) = &p.trajectory {
        let steps = states.len() - 1;
        for (k, h) in states.iter().enumerate() {
            for s in 0..p.f_v.rows() {
                let v = cosine(p.f_v.row(s), h.data());
                out.push_str(&format!("step_similarity,{},{s},,{v}\n", steps - k));
            }
        }
    }
    for s in 0..p.logits.rows() {
        for (c, name) in labels.names.iter().enumerate() {
            out.push_str(&format!("text_similarity,,{s},{name},{}\n", p.logits.get(s, c)));
        }
    }
    Ok(out)
}
