//! Command-line front end: synthetic data, training, evaluation,
//! prediction, marker triangulation and plot-data export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector2;

use crate::config::ExperimentConfig;
use crate::data::{load_any, make_split, save_dataset, save_sequences, CoupleSequence};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, normalization_transform, parse_cameras, triangulate_two_rays, Camera, Skeleton};
use crate::io_util::{create_dir_all, read_to_string, write_atomic};
use crate::metrics::{parse_report_csv, plot_tables, HORIZONS_MS};
use crate::model::{make_variant, CollabModel};
use crate::motion::MotionSequence;
use crate::synth::{full_layout, synthesize_dataset, Scenario, SynthParams};
use crate::train::{evaluate, loss_curve_csv, normalize_couple, rollout, train};

#[derive(Debug, Parser)]
#[command(name = "collab-motion", version, about = "Two-person 3D motion prediction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic couple dataset.
    Synth(SynthArgs),
    /// Train a model variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Forecast the continuation of recorded sequences.
    Predict(PredictArgs),
    /// Recover 3D points from pairs of pixel observations.
    Triangulate(TriangulateArgs),
    /// Collect metrics reports into per-metric plot tables.
    #[command(alias = "plotdata")]
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lagged-mirror")]
    pub scenario: Scenario,
    /// Number of sequences, taken in order from the 115-take layout.
    #[arg(long, default_value_t = 115)]
    pub count: usize,
    /// Frames per sequence at the generation rate.
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Keep the generation rate instead of downsampling by 2.
    #[arg(long)]
    pub raw_fps: bool,
    #[arg(long, default_value_t = SynthParams::default().lag)]
    pub lag: usize,
    #[arg(long, default_value_t = SynthParams::default().offset_mm)]
    pub offset_mm: f64,
    #[arg(long, default_value_t = SynthParams::default().root_motion)]
    pub root_motion: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by the commands that read an experiment config.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// SA:<aerial>, CA or EA.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any other config key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
        set("data", self.data.as_ref().map(|p| p.display().to_string()))?;
        set("split", self.split.clone())?;
        set("variant", self.variant.clone())?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        set("seed", self.seed.map(|s| s.to_string()))?;
        set("epochs", self.epochs.map(|e| e.to_string()))?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write per-joint rows.
    #[arg(long)]
    pub per_joint: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence CSV file or dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Observed frames used as history (the most recent ones).
    #[arg(long, default_value_t = 50)]
    pub in_len: usize,
    /// Frames to forecast.
    #[arg(long, default_value_t = 25)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    #[arg(long)]
    pub cameras: PathBuf,
    /// CSV `id,cam_a,u_a,v_a,cam_b,u_b,v_b`.
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=metrics.csv`; one column per report, in order.
    #[arg(long = "report", value_name = "NAME=PATH", required = true)]
    pub reports: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a.cfg.resolve()?).map(|_| ()),
        Command::Eval(a) => {
            let cfg = a.cfg.resolve()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.out.join("model.ckpt"));
            let table = cmd_eval(&cfg, &ckpt, a.per_joint)?;
            print!("{table}");
            Ok(())
        }
        Command::Predict(a) => cmd_predict(&a),
        Command::Triangulate(a) => cmd_triangulate(&a.cameras, &a.observations, &a.out),
        Command::Report(a) => cmd_report(&a.reports, &a.out),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let layout = full_layout();
    if a.count > layout.len() {
        return Err(Error::Config(format!("count {} exceeds the {}-take layout", a.count, layout.len())));
    }
    let params = SynthParams {
        lag: a.lag,
        offset_mm: a.offset_mm,
        root_motion: a.root_motion,
        ..SynthParams::default()
    };
    let mut seqs = synthesize_dataset(a.seed, a.scenario, &layout[..a.count], a.frames, &params)?;
    if !a.raw_fps {
        seqs = seqs.iter().map(|s| s.downsample(2)).collect::<Result<_>>()?;
    }
    save_dataset(&a.out, &seqs)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "data path not found")))
    }
}

fn load_split(cfg: &ExperimentConfig) -> Result<crate::data::Split> {
    require_dir(&cfg.data)?;
    let data = load_any(&cfg.data)?;
    make_split(&data, cfg.split)
}

fn checkpoint_meta(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    ["split", "seed", "in_len", "epochs", "lr", "batch_size"]
        .into_iter()
        .map(|k| (k.to_string(), cfg.get(k).expect("known key")))
        .collect()
}

/// Trains and writes `model.ckpt`, `loss.csv` and `config.txt` to `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<CollabModel> {
    let split = load_split(cfg)?;
    if split.train.is_empty() {
        return Err(Error::Config(format!("split {} selects no training sequences", cfg.split)));
    }
    let joints = split.train[0].joints();
    if joints != cfg.model.joints {
        return Err(Error::Config(format!("data has {joints} joints, config has {}", cfg.model.joints)));
    }
    let mut model = make_variant(cfg.variant, &cfg.model, cfg.seed)?;
    let curve = train(&mut model, &split.train, &cfg.train)?;
    create_dir_all(&cfg.out)?;
    model.save(&cfg.out.join("model.ckpt"), &checkpoint_meta(cfg))?;
    write_atomic(&cfg.out.join("loss.csv"), loss_curve_csv(&curve).as_bytes())?;
    write_atomic(&cfg.out.join("config.txt"), cfg.to_text().as_bytes())?;
    Ok(model)
}

/// Evaluates on the test split and writes `metrics.csv` and `table.txt`.
/// Returns the table.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, per_joint: bool) -> Result<String> {
    let (model, _) = CollabModel::load(checkpoint)?;
    if model.config() != &cfg.model {
        return Err(Error::Compatibility(format!(
            "{} was trained with {:?}, config asks for {:?}",
            checkpoint.display(),
            model.config(),
            cfg.model
        )));
    }
    let split = load_split(cfg)?;
    if split.test.is_empty() {
        return Err(Error::Config(format!("split {} selects no test sequences", cfg.split)));
    }
    let report = evaluate(&model, &split.test, &cfg.eval)?;
    let table = report.to_table();
    create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("metrics.csv"), report.to_csv(per_joint).as_bytes())?;
    write_atomic(&cfg.out.join("table.txt"), table.as_bytes())?;
    Ok(table)
}

/// Forecasts `frames` frames after each input sequence. Predictions are
/// produced in the couple frame of the last observed leader pose and mapped
/// back to the input coordinates.
pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (model, _) = CollabModel::load(&a.checkpoint)?;
    let seqs = load_any(&a.input)?;
    let mut out = Vec::with_capacity(seqs.len());
    for s in &seqs {
        if s.frames() < a.in_len {
            return Err(Error::InsufficientHistory {
                have: s.frames(),
                need: a.in_len,
            });
        }
        let skeleton = Skeleton::for_joints(s.joints())?;
        let hist = normalize_couple(&s.window(s.frames() - a.in_len, a.in_len)?, &skeleton)?;
        let r = rollout(&model, &hist.leader, &hist.follower, a.frames)?;
        let back = normalization_transform(&s.leader.pose(s.frames() - 1), &skeleton)?.inverse();
        let restore = |m: &MotionSequence| m.map_poses(|_, p| Ok(apply_transform(&back, &p)));
        out.push(CoupleSequence::new(
            s.seq_id.clone(),
            s.aerial,
            s.couple,
            s.rep,
            restore(&r.leader)?,
            restore(&r.follower)?,
        )?);
    }
    save_sequences(&a.out, &out)
}

pub const TRIANGULATION_HEADER: &str = "id,x,y,z,residual_px,error";

/// Triangulates every observation pair; rows that fail keep their id and
/// carry the reason in the `error` column.
pub fn triangulate_rows(cameras: &[Camera], observations: &str, source: &str) -> Result<String> {
    let mut out = format!("{TRIANGULATION_HEADER}\n");
    let mut lines = observations.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,cam_a,u_a,v_a,cam_b,u_b,v_b" => {}
        None => return Ok(out),
        Some(_) => {
            return Err(Error::Parse {
                path: source.to_string(),
                line: 1,
                msg: "expected header id,cam_a,u_a,v_a,cam_b,u_b,v_b".into(),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("expected 7 fields, found {}", f.len()),
            });
        }
        let id = f[0];
        let solve = || -> std::result::Result<(nalgebra::Vector3<f64>, f64), String> {
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("not a number: {s}"));
            let cam = |s: &str| -> std::result::Result<&Camera, String> {
                let k: usize = s.parse().map_err(|_| format!("bad camera id {s}"))?;
                cameras.get(k).ok_or_else(|| format!("unknown camera {k}"))
            };
            let (ca, cb) = (cam(f[1])?, cam(f[4])?);
            let pa = Vector2::new(num(f[2])?, num(f[3])?);
            let pb = Vector2::new(num(f[5])?, num(f[6])?);
            let ra = ca.backproject(&pa).map_err(|e| e.to_string())?;
            let rb = cb.backproject(&pb).map_err(|e| e.to_string())?;
            let x = triangulate_two_rays(&ra, &rb).map_err(|e| e.to_string())?;
            let ea = (ca.project(&x).map_err(|e| e.to_string())? - pa).norm();
            let eb = (cb.project(&x).map_err(|e| e.to_string())? - pb).norm();
            Ok((x, 0.5 * (ea + eb)))
        };
        match solve() {
            Ok((x, res)) => {
                let _ = writeln!(out, "{id},{},{},{},{res},", x.x, x.y, x.z);
            }
            Err(msg) => {
                let _ = writeln!(out, "{id},,,,,{}", msg.replace(',', ";"));
            }
        }
    }
    Ok(out)
}

pub fn cmd_triangulate(cameras: &Path, observations: &Path, out: &Path) -> Result<()> {
    let cams = parse_cameras(&read_to_string(cameras)?, &cameras.display().to_string())?;
    let csv = triangulate_rows(&cams, &read_to_string(observations)?, &observations.display().to_string())?;
    write_atomic(out, csv.as_bytes())
}

/// Writes `<metric>_<role>.csv` for every pair into `out`.
pub fn cmd_report(reports: &[String], out: &Path) -> Result<()> {
    let mut parsed = Vec::with_capacity(reports.len());
    for spec in reports {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--report expects NAME=PATH, got {spec:?}")))?;
        let path = Path::new(path);
        let rows = parse_report_csv(&read_to_string(path)?, &path.display().to_string())?;
        if !HORIZONS_MS.iter().all(|&ms| rows.iter().any(|r| r.horizon_ms == ms)) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: "report does not cover every horizon".into(),
            });
        }
        parsed.push((name.to_string(), rows));
    }
    create_dir_all(out)?;
    for (metric, role, csv) in plot_tables(&parsed) {
        let file = format!("{}_{role}.csv", metric.as_str().to_lowercase());
        write_atomic(&out.join(file), csv.as_bytes())?;
    }
    Ok(())
}
