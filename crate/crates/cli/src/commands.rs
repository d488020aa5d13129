//! Subcommands. Every command writes its outputs under `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use metareg::data::{GrayImage, PairSample, Task, TaskSpec};
use metareg::eval::{evaluate_model, run_comparison, score_pair, write_curve_csv, EvalReport};
use metareg::io::{self, Preprocess};
use metareg::metatrain::{fine_tune, meta_train, pretrain, register_pair, write_log, LogRow};
use metareg::rng::{derive_seed, INIT_TAG};
use metareg::{Error, ParamVector, Real, RegistrationNet, Result};

use crate::checkpoint::Checkpoint;
use crate::config::{Precision, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "metareg", version, about = "Meta-learned unsupervised deformable registration")]
pub struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run seed (overrides `run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for meta-training (overrides `run.workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PrepArgs {
    /// Resize both images to HxW before registration.
    #[arg(long, value_name = "HxW", value_parser = parse_dims)]
    pub resize: Option<(usize, usize)>,
    /// Histogram-equalize the 8-bit images first.
    #[arg(long)]
    pub hist_eq: bool,
    /// Min-max rescale intensities to [0, 1] instead of dividing by 255.
    #[arg(long)]
    pub rescale: bool,
}

impl PrepArgs {
    fn preprocess(&self) -> Preprocess {
        Preprocess { hist_eq: self.hist_eq, resize: self.resize, rescale: self.rescale }
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?}"));
    Ok((dim(h)?, dim(w)?))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes the configured source and target tasks as PGM/MRF1/CSV files plus `manifest.csv`.
    Gentasks,
    /// Trains on the pooled source tasks from a fresh initialization.
    Pretrain {
        /// Task directory written by `gentasks`; synthetic tasks are generated when absent.
        #[arg(long, value_name = "DIR")]
        tasks: Option<PathBuf>,
    },
    /// Reptile meta-training starting from a pretrained checkpoint.
    Metatrain {
        #[arg(long, value_name = "CKPT", required_unless_present = "from_scratch")]
        init: Option<PathBuf>,
        /// Start from a fresh initialization instead of a checkpoint.
        #[arg(long, conflicts_with = "init")]
        from_scratch: bool,
        #[arg(long, value_name = "DIR")]
        tasks: Option<PathBuf>,
    },
    /// Fine-tunes a checkpoint on one task.
    Finetune {
        #[arg(long, value_name = "CKPT")]
        init: PathBuf,
        /// Directory of pairs; the configured target task is generated when absent.
        #[arg(long, value_name = "DIR")]
        task: Option<PathBuf>,
        /// Epochs (overrides `train.finetune_epochs`).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Registers one image pair with a checkpoint.
    Register {
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "PGM")]
        moving: PathBuf,
        #[arg(long, value_name = "PGM")]
        fixed: PathBuf,
        /// Defaults to `<out>/field.mrf1`.
        #[arg(long, value_name = "PATH")]
        field_out: Option<PathBuf>,
        /// Defaults to `<out>/warped.pgm`.
        #[arg(long, value_name = "PATH")]
        warped_out: Option<PathBuf>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Scores a checkpoint or a directory of fields on a task directory.
    Evaluate {
        #[arg(long, value_name = "CKPT", required_unless_present = "fields", conflicts_with = "fields")]
        ckpt: Option<PathBuf>,
        /// Directory holding `<pair>_field.mrf1` files.
        #[arg(long, value_name = "DIR")]
        fields: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        task: PathBuf,
        /// Defaults to `<out>/report.csv`.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Runs the arm comparison and writes `report.csv` and `curve.csv`.
    Compare,
}

/// Loads the configuration and applies file, `--set`, `--seed` and `--workers` in that order.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    macro_rules! at_precision {
        ($f:ident($($arg:expr),*)) => {
            match cfg.precision {
                Precision::F32 => $f::<f32>($($arg),*),
                Precision::F64 => $f::<f64>($($arg),*),
            }
        };
    }
    match &cli.command {
        Command::Gentasks => gentasks(&cfg, out),
        Command::Pretrain { tasks } => at_precision!(cmd_pretrain(&cfg, tasks.as_deref(), out)),
        Command::Metatrain { init, tasks, .. } => {
            at_precision!(cmd_metatrain(&cfg, init.as_deref(), tasks.as_deref(), out))
        }
        Command::Finetune { init, task, epochs } => {
            let epochs = epochs.unwrap_or(cfg.finetune_epochs);
            at_precision!(cmd_finetune(&cfg, init, task.as_deref(), epochs, out))
        }
        Command::Register { ckpt, moving, fixed, field_out, warped_out, prep } => {
            let field_out = field_out.clone().unwrap_or_else(|| out.join("field.mrf1"));
            let warped_out = warped_out.clone().unwrap_or_else(|| out.join("warped.pgm"));
            let files = RegisterFiles { ckpt, moving, fixed, field_out: &field_out, warped_out: &warped_out };
            at_precision!(cmd_register(&files, &prep.preprocess()))
        }
        Command::Evaluate { ckpt, fields, task, report, prep } => {
            let report = report.clone().unwrap_or_else(|| out.join("report.csv"));
            let scored = match (ckpt, fields) {
                (Some(c), _) => FieldSource::Checkpoint(c),
                (None, Some(f)) => FieldSource::Directory(f),
                (None, None) => return Err(Error::config("evaluate needs --ckpt or --fields")),
            };
            at_precision!(cmd_evaluate(&cfg, scored, task, &prep.preprocess(), &report))
        }
        Command::Compare => at_precision!(cmd_compare(&cfg, out)),
    }
}

/// Initial weights of a run; shared with the comparison driver.
pub fn initial_params<T: Real>(net: &RegistrationNet, seed: u64) -> ParamVector<T> {
    net.init_params(derive_seed(seed, &[INIT_TAG]))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = io::create_writer(path)?;
    write_log(&mut w, rows)?;
    io::flush(path, &mut w)
}

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 6] = ["task_id", "role", "kind", "pairs", "seed", "dir"];

pub fn gentasks(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let manifest = out.join(MANIFEST);
    let mut w = csv::Writer::from_writer(io::create_writer(&manifest)?);
    w.write_record(MANIFEST_HEADER)?;
    let roles = cfg
        .data
        .sources
        .iter()
        .map(|&k| ("source", k))
        .chain([("target", cfg.data.target)]);
    for (role, kind) in roles {
        let spec = cfg.data.task(kind);
        let task: Task<f32> = spec.materialize()?;
        let rel = format!("tasks/{}", spec.id);
        let dir = out.join(&rel);
        ensure_dir(&dir)?;
        for pair in &task.pairs {
            io::write_pair(&dir, pair)?;
        }
        w.write_record([
            spec.id.as_str(),
            role,
            kind.name(),
            &task.len().to_string(),
            &spec.seed.to_string(),
            &rel,
        ])?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(&manifest, e.into_error()))?;
    io::flush(&manifest, &mut inner)?;
    eprintln!("wrote {} tasks to {}", cfg.data.sources.len() + 1, out.display());
    Ok(())
}

/// Task specs with `role` listed in a `gentasks` manifest.
pub fn manifest_tasks(dir: &Path, role: &str) -> Result<Vec<TaskSpec>> {
    let path = dir.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(|e| Error::from(e).in_file(&path))?.clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::format(0, format!("{}: unexpected manifest header", path.display())));
    }
    let mut specs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::from(e).in_file(&path))?;
        if &rec[1] == role {
            specs.push(TaskSpec::directory(&rec[0], dir.join(&rec[5]), Preprocess::default()));
        }
    }
    if specs.is_empty() {
        return Err(Error::config(format!("{} lists no {role} tasks", path.display())));
    }
    Ok(specs)
}

fn source_tasks<T: Real>(cfg: &RunConfig, dir: Option<&Path>) -> Result<Vec<Task<T>>> {
    let specs = match dir {
        Some(d) => manifest_tasks(d, "source")?,
        None => cfg.data.source_tasks(),
    };
    specs.iter().map(TaskSpec::materialize).collect()
}

fn load_for<T: Real>(path: &Path, cfg: &RunConfig) -> Result<ParamVector<T>> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.ensure_arch(&cfg.arch)?;
    Ok(ckpt.params_as())
}

fn cmd_pretrain<T: Real>(cfg: &RunConfig, tasks: Option<&Path>, out: &Path) -> Result<()> {
    let net = RegistrationNet::new(cfg.arch.clone())?;
    let tasks = source_tasks::<T>(cfg, tasks)?;
    let train = cfg.train_config();
    let theta0 = initial_params(&net, cfg.seed);
    let trained = pretrain(&net, &tasks, &train, &theta0, train.pretrain_steps)?;
    finish_stage(cfg, out, "pretrain", &trained.params, &trained.log)
}

fn cmd_metatrain<T: Real>(cfg: &RunConfig, init: Option<&Path>, tasks: Option<&Path>, out: &Path) -> Result<()> {
    let net = RegistrationNet::new(cfg.arch.clone())?;
    let theta = match init {
        Some(path) => load_for(path, cfg)?,
        None => initial_params(&net, cfg.seed),
    };
    let tasks = source_tasks::<T>(cfg, tasks)?;
    let trained = meta_train(&net, &theta, &tasks, &cfg.train_config())?;
    finish_stage(cfg, out, "meta", &trained.params, &trained.log)
}

fn cmd_finetune<T: Real>(cfg: &RunConfig, init: &Path, task: Option<&Path>, epochs: usize, out: &Path) -> Result<()> {
    let net = RegistrationNet::new(cfg.arch.clone())?;
    let theta = load_for::<T>(init, cfg)?;
    let spec = match task {
        Some(dir) => TaskSpec::directory(dir_id(dir), dir, Preprocess::default()),
        None => cfg.data.target_task(),
    };
    let task: Task<T> = spec.materialize()?;
    let tuned = fine_tune(&net, &theta, &task, epochs, &cfg.train_config())?;
    finish_stage(cfg, out, "finetune", &tuned.params, &tuned.log)
}

fn dir_id(dir: &Path) -> String {
    dir.file_name().map_or_else(|| "task".into(), |n| n.to_string_lossy().into_owned())
}

fn finish_stage<T: Real>(cfg: &RunConfig, out: &Path, stage: &str, params: &ParamVector<T>, log: &[LogRow]) -> Result<()> {
    if !params.all_finite() {
        return Err(Error::Numeric(format!("{stage} produced non-finite parameters")));
    }
    let ckpt = out.join(format!("{stage}.mrck"));
    Checkpoint::new(&cfg.arch, params).save(&ckpt)?;
    save_log(&out.join(format!("{stage}_log.csv")), log)?;
    match log.last() {
        Some(r) => eprintln!("{stage}: {} rows, final loss {:.6}, checkpoint {}", log.len(), r.loss, ckpt.display()),
        None => eprintln!("{stage}: no updates, checkpoint {}", ckpt.display()),
    }
    Ok(())
}

pub struct RegisterFiles<'a> {
    pub ckpt: &'a Path,
    pub moving: &'a Path,
    pub fixed: &'a Path,
    pub field_out: &'a Path,
    pub warped_out: &'a Path,
}

fn read_image<T: Real>(path: &Path, prep: &Preprocess) -> Result<(GrayImage, metareg::ImageGrid<T>)> {
    let raw = io::read_pgm(path)?;
    let grid = prep.apply(&raw)?;
    Ok((raw, grid))
}

fn cmd_register<T: Real>(files: &RegisterFiles, prep: &Preprocess) -> Result<()> {
    let ckpt = Checkpoint::load(files.ckpt)?;
    let net = RegistrationNet::new(ckpt.arch.clone())?;
    let (_, moving) = read_image::<T>(files.moving, prep)?;
    let (_, fixed) = read_image::<T>(files.fixed, prep)?;
    if moving.dims() != fixed.dims() {
        return Err(Error::shape(format!(
            "moving is {:?} but fixed is {:?} after preprocessing",
            moving.dims(),
            fixed.dims()
        )));
    }
    let (phi, warped) = register_pair(&net, &ckpt.params_as::<T>(), &moving, &fixed)?;
    io::write_field(files.field_out, &phi)?;
    io::write_pgm(files.warped_out, &io::to_gray(&warped))?;
    Ok(())
}

pub enum FieldSource<'a> {
    Checkpoint(&'a Path),
    Directory(&'a Path),
}

fn cmd_evaluate<T: Real>(
    cfg: &RunConfig,
    source: FieldSource,
    task: &Path,
    prep: &Preprocess,
    report_path: &Path,
) -> Result<()> {
    let pairs: Vec<PairSample<T>> = io::read_pair_dir(task, prep)?;
    if pairs.is_empty() {
        return Err(Error::config(format!("{} holds no image pairs", task.display())));
    }
    let (arm, rows) = match source {
        FieldSource::Checkpoint(path) => {
            let ckpt = Checkpoint::load(path)?;
            let net = RegistrationNet::new(ckpt.arch.clone())?;
            let (rows, _) = evaluate_model(&net, &ckpt.params_as::<T>(), &pairs, &cfg.train)?;
            ("model", rows)
        }
        FieldSource::Directory(dir) => {
            let rows = pairs
                .iter()
                .map(|p| {
                    let path = io::PairFiles::new(dir, &p.id).field;
                    let phi = io::read_field::<T>(&path).map_err(|e| e.in_file(&path))?;
                    score_pair(p, &phi)
                })
                .collect::<Result<Vec<_>>>()?;
            ("fields", rows)
        }
    };
    let mut report = EvalReport::default();
    report.push(cfg.seed, arm, rows);
    let mut w = io::create_writer(report_path)?;
    report.write_csv(&mut w)?;
    io::flush(report_path, &mut w)?;
    if let Some(d) = report.mean_distance(arm) {
        eprintln!("{arm}: mean landmark distance {d:.4} px over {} pairs", pairs.len());
    }
    Ok(())
}

pub const REPORT: &str = "report.csv";
pub const CURVE: &str = "curve.csv";

fn cmd_compare<T: Real>(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let result = run_comparison::<T>(&cfg.arms(), &cfg.data.source_tasks(), &cfg.data.target_task(), &cfg.comparison())?;
    let report_path = out.join(REPORT);
    let mut w = io::create_writer(&report_path)?;
    result.report.write_csv(&mut w)?;
    io::flush(&report_path, &mut w)?;
    let curve_path = out.join(CURVE);
    let mut w = io::create_writer(&curve_path)?;
    write_curve_csv(&mut w, &result.curves)?;
    io::flush(&curve_path, &mut w)?;
    for arm in result.report.arms() {
        if let Some(d) = result.report.mean_distance(&arm) {
            eprintln!("{arm}: mean landmark distance {d:.4} px");
        }
    }
    Ok(())
}
