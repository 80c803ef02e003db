//! Command-line front end. Every path is resolved against `--workdir`, every
//! run writes its fully resolved configuration next to its outputs, and
//! failures map to stable exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::ablate::{run_study, AblationSettings, Study};
use crate::error::{Error, Result};
use crate::geometry::obj::write_obj;
use crate::gradcheck;
use crate::kv::{self, unknown_key, KeyValue};
use crate::recon::{aggregate, reconstruct, reconstruct_oracle, with_thread_limit, ReconConfig, Status};
use crate::synth::dataset::MANIFEST_FILE;
use crate::synth::{build_dataset, DatasetConfig, DatasetManifest, RenderedSample, SceneKind, Split};
use crate::train::{load_models, Models, Target, TrainConfig, Trainer, TrainingSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;
pub const EXIT_EMPTY: i32 = 6;
/// Errors with no dedicated code (geometry failures).
pub const EXIT_OTHER: i32 = 1;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "train.log";
/// Held-out scenes used for validation during training.
pub const VALIDATION_SCENES: usize = 2;

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Usage(_) | Error::Shape { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Divergence(_) | Error::NonFinite { .. } => EXIT_DIVERGENCE,
        Error::Geometry(_) => EXIT_OTHER,
    }
}

/// Every tunable of a run, serialized as `section.key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset directory, relative to the working directory.
    pub data_dir: PathBuf,
    pub data: DatasetConfig,
    pub train: TrainConfig,
    pub recon: ReconConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            data: DatasetConfig::default(),
            train: TrainConfig::default(),
            recon: ReconConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for `ablate`: shorter training than a full run.
    pub fn ablation_defaults() -> Self {
        let s = AblationSettings::default();
        Self {
            data: s.data,
            train: s.train,
            ..Self::default()
        }
    }

    pub fn to_text(&self) -> String {
        kv::to_text(&self.pairs())
    }

    /// Applies a config file (if any) and then `--set` overrides in order.
    pub fn resolve(mut self, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            kv::apply(&mut self, &kv::parse_lines(&text)?)?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(self)
    }
}

impl KeyValue for RunConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("data.dir".to_string(), self.data_dir.display().to_string())];
        out.extend(kv::prefixed("data", &self.data));
        out.extend(kv::prefixed("train", &self.train));
        out.extend(kv::prefixed("model", &self.train.model));
        out.extend(kv::prefixed("sampler", &self.train.sampler));
        out.extend(kv::prefixed("recon", &self.recon));
        out
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, rest) = key.split_once('.').ok_or_else(|| unknown_key(key))?;
        let prefixed = |e: Error| match e {
            Error::Config(m) => Error::Config(format!("{key}: {m}")),
            other => other,
        };
        match (section, rest) {
            ("data", "dir") => {
                self.data_dir = PathBuf::from(value);
                Ok(())
            }
            ("data", k) => self.data.set(k, value).map_err(prefixed),
            ("train", k) => self.train.set(k, value).map_err(prefixed),
            ("model", k) => self.train.model.set(k, value).map_err(prefixed),
            ("sampler", k) => self.train.sampler.set(k, value).map_err(prefixed),
            ("recon", k) => self.recon.set(k, value).map_err(prefixed),
            _ => Err(unknown_key(key)),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ircn", version, about = "Multi-level pixel-aligned implicit surface reconstruction")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.coarse_epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "train")]
        n_train: Option<usize>,
        #[arg(long = "test")]
        n_test: Option<usize>,
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        views: Option<usize>,
        /// Scene family: body or sphere.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on a dataset; writes checkpoints and a per-step log.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        max_epochs: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Reconstruct one sample to OBJ plus a metric report.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output OBJ path; the report and config are written beside it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a split and write per-sample and aggregate reports.
    Eval {
        #[arg(long, conflicts_with = "perfect", required_unless_present = "perfect")]
        checkpoint: Option<PathBuf>,
        /// Use the ground-truth occupancy grid as the field.
        #[arg(long)]
        perfect: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::SEEDS)]
        seeds: u64,
    },
    /// Directional ablation studies.
    Ablate {
        /// conditioning, normals, schedule or all.
        #[arg(long, default_value = "all")]
        study: String,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

struct Ctx {
    workdir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn config(&self, base: RunConfig, args: &ConfigArgs) -> Result<RunConfig> {
        base.resolve(args.config.as_deref().map(|p| self.path(p)).as_deref(), &args.sets)
    }

    fn data_dir(&self, config: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
        self.path(flag.as_ref().unwrap_or(&config.data_dir))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn load_split(dir: &Path, split: Split) -> Result<(DatasetManifest, Vec<RenderedSample>)> {
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let samples = manifest.load_split(dir, split)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("dataset {} has no {} samples", dir.display(), split.name())));
    }
    Ok((manifest, samples))
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let ctx = Ctx { workdir: cli.workdir };
    let command = cli.command;
    match with_thread_limit(|| dispatch(&ctx, command)).and_then(|r| r) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<i32> {
    match command {
        Command::GenData {
            out,
            n_train,
            n_test,
            res,
            seed,
            views,
            kind,
            config,
        } => {
            let mut cfg = ctx.config(RunConfig::default(), &config)?;
            let d = &mut cfg.data;
            d.n_train = n_train.unwrap_or(d.n_train);
            d.n_test = n_test.unwrap_or(d.n_test);
            d.resolution = res.unwrap_or(d.resolution);
            d.seed = seed.unwrap_or(d.seed);
            d.views_per_scene = views.unwrap_or(d.views_per_scene);
            if let Some(k) = kind {
                d.kind = SceneKind::parse(&k)?;
            }
            cmd_gen_data(ctx, &cfg, &out)
        }
        Command::Train {
            data,
            out,
            resume,
            max_epochs,
            config,
        } => {
            let cfg = ctx.config(RunConfig::default(), &config)?;
            cmd_train(&cfg, &ctx.data_dir(&cfg, &data), &ctx.path(&out), resume, max_epochs)
        }
        Command::Reconstruct {
            checkpoint,
            data,
            split,
            index,
            out,
            config,
        } => {
            let cfg = ctx.config(RunConfig::default(), &config)?;
            let split = parse_split(&split)?;
            cmd_reconstruct(&cfg, &ctx.path(&checkpoint), &ctx.data_dir(&cfg, &data), split, index, &ctx.path(&out))
        }
        Command::Eval {
            checkpoint,
            perfect,
            data,
            split,
            out,
            config,
        } => {
            let cfg = ctx.config(RunConfig::default(), &config)?;
            let models = match (&checkpoint, perfect) {
                (Some(c), false) => Some(load_models(&ctx.path(c))?),
                (None, true) => None,
                _ => return Err(Error::Usage("eval needs exactly one of --checkpoint and --perfect".into())),
            };
            let split = parse_split(&split)?;
            cmd_eval(&cfg, models.as_ref(), &ctx.data_dir(&cfg, &data), split, &ctx.path(&out))
        }
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
        Command::Ablate {
            study,
            seeds,
            out,
            config,
        } => {
            let cfg = ctx.config(RunConfig::ablation_defaults(), &config)?;
            let studies = if study == "all" {
                Study::ALL.to_vec()
            } else {
                vec![Study::parse(&study)?]
            };
            let seeds = seeds
                .split(',')
                .map(|s| kv::parse_value::<u64>("--seeds", s.trim()))
                .collect::<Result<Vec<_>>>()?;
            cmd_ablate(&cfg, &studies, seeds, &ctx.path(&out))
        }
    }
}

fn cmd_gen_data(ctx: &Ctx, cfg: &RunConfig, out: &Path) -> Result<i32> {
    let dir = ctx.path(out);
    let resolved = RunConfig {
        data_dir: out.to_path_buf(),
        ..cfg.clone()
    };
    cfg.data.validate()?;
    create_dir(&dir)?;
    let start = Instant::now();
    let manifest = build_dataset(&cfg.data, &dir)?;
    write(&dir.join(CONFIG_FILE), &resolved.to_text())?;
    println!(
        "wrote {} samples to {} in {:.1}s",
        manifest.entries.len(),
        dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

/// Drops log lines of epochs at or beyond `epochs_done`, so a resumed run
/// appends exactly what an uninterrupted one would have written.
fn truncate_log(path: &Path, epochs_done: usize) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let kept: String = text
        .lines()
        .filter(|l| {
            l.strip_prefix("epoch=")
                .and_then(|r| r.split_whitespace().next())
                .and_then(|n| n.parse::<usize>().ok())
                .is_some_and(|n| n < epochs_done)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    write(path, &kept)
}

fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path, resume: bool, max_epochs: Option<usize>) -> Result<i32> {
    let (manifest, train) = load_split(data_dir, Split::Train)?;
    cfg.train.validate(manifest.resolution)?;
    let validation: Vec<RenderedSample> = if cfg.train.validate_every > 0 {
        let v = manifest.load_split(data_dir, Split::Test)?;
        if v.is_empty() {
            return Err(Error::Config("validation needs a test split".into()));
        }
        v.into_iter().take(VALIDATION_SCENES).collect()
    } else {
        Vec::new()
    };
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOG_FILE);
    let mut trainer = if resume {
        let t = Trainer::resume(cfg.train.clone(), &ckpt)?;
        truncate_log(&log_path, t.epochs_done())?;
        t
    } else {
        write(&log_path, "")?;
        Trainer::new(cfg.train.clone())?
    };
    let data = TrainingSet::new(train, cfg.train.model.normals)?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let val = (!validation.is_empty()).then_some(validation.as_slice());
    let mut ran = 0;
    while !trainer.is_done() && max_epochs.is_none_or(|m| ran < m) {
        let report = trainer.run_epoch(&data, val)?;
        ran += 1;
        let lines: String = report.records.iter().map(|r| format!("{}\n", r.to_line())).collect();
        log.write_all(lines.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        let losses: Vec<String> = [Target::Coarse, Target::Fine, Target::Normal]
            .into_iter()
            .filter_map(|t| report.mean_loss(t).map(|l| format!("{}={l:.5}", t.name())))
            .collect();
        let validation = report
            .validation
            .map_or_else(String::new, |v| format!(" validation_chamfer={v:.5}"));
        println!(
            "epoch {} phase={} lr={} {}{validation}",
            report.epoch,
            report.phase.name(),
            report.lr,
            losses.join(" ")
        );
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.epochs_done() % every == 0 {
            trainer.save_checkpoint(&out.join(format!("epoch_{:04}.ckpt", trainer.epochs_done())))?;
        }
    }
    trainer.save_checkpoint(&ckpt)?;
    println!("checkpoint {} after {} epochs", ckpt.display(), trainer.epochs_done());
    Ok(EXIT_OK)
}

fn cmd_reconstruct(cfg: &RunConfig, checkpoint: &Path, data_dir: &Path, split: Split, index: usize, out: &Path) -> Result<i32> {
    cfg.recon.validate()?;
    let models = load_models(checkpoint)?;
    let manifest = DatasetManifest::load(&data_dir.join(MANIFEST_FILE))?;
    let entry = manifest
        .entries(split)
        .nth(index)
        .ok_or_else(|| Error::Config(format!("{} split has no sample {index}", split.name())))?;
    let sample = manifest.load_entry(data_dir, entry)?;
    let r = reconstruct(&models, &sample, &cfg.recon)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_obj(&r.mesh, out)?;
    write(&out.with_extension("report.txt"), &r.report.to_text())?;
    write(&out.with_extension("config.txt"), &cfg.to_text())?;
    println!("{}", r.report.to_line());
    Ok(if r.report.status == Status::Empty { EXIT_EMPTY } else { EXIT_OK })
}

fn cmd_eval(cfg: &RunConfig, models: Option<&Models>, data_dir: &Path, split: Split, out: &Path) -> Result<i32> {
    cfg.recon.validate()?;
    let (_, samples) = load_split(data_dir, split)?;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let mut reports = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let r = match models {
            Some(m) => reconstruct(m, s, &cfg.recon)?,
            None => reconstruct_oracle(s, &cfg.recon)?,
        };
        write(&out.join(format!("{}_{i:04}.txt", split.name())), &r.report.to_text())?;
        reports.push(r.report);
    }
    let total = aggregate(&reports)?;
    write(&out.join("eval.txt"), &total.to_text())?;
    print!("{}", total.to_text());
    // Discretization bound on Chamfer for an exact field: one cell diagonal.
    println!("cell_diagonal={}", 2.0 * 3f64.sqrt() / cfg.recon.resolution as f64);
    Ok(if total.status == Status::Empty { EXIT_EMPTY } else { EXIT_OK })
}

fn cmd_gradcheck(seeds: u64) -> Result<i32> {
    let start = Instant::now();
    let report = gradcheck::run_all(seeds)?;
    print!("{}", report.to_table());
    println!("runtime_s={:.2}", start.elapsed().as_secs_f64());
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_ACCEPTANCE })
}

fn cmd_ablate(cfg: &RunConfig, studies: &[Study], seeds: Vec<u64>, out: &Path) -> Result<i32> {
    let settings = AblationSettings {
        data: cfg.data.clone(),
        train: cfg.train.clone(),
        seeds,
        metric_resolution: cfg.recon.resolution,
    };
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let mut table = String::new();
    let mut all = true;
    for &study in studies {
        let r = run_study(study, &settings, &mut |s, seed, arm, c| {
            println!("{} seed={seed} arm={} chamfer={c:.5}", s.name(), s.arms()[arm]);
        })?;
        all &= r.holds();
        table.push_str(&r.to_table());
    }
    write(&out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(if all { EXIT_OK } else { EXIT_ACCEPTANCE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let mut c = RunConfig::default();
        c.set("train.coarse_epochs", "7").unwrap();
        c.set("model.conditioning", "absolute_depth").unwrap();
        c.set("data.dir", "d2").unwrap();
        c.set("recon.resolution", "64").unwrap();
        let mut back = RunConfig::default();
        kv::apply(&mut back, &kv::parse_lines(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        for key in ["train.epochz", "nosection", "video.fps", "data.dirr"] {
            assert!(matches!(c.set(key, "1"), Err(Error::Config(_))), "{key}");
        }
        assert!(c.clone().resolve(None, &["train.seed".into()]).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_ACCEPTANCE, EXIT_EMPTY];
        let set: std::collections::BTreeSet<_> = codes.iter().collect();
        assert_eq!(set.len(), codes.len());
        assert_eq!(exit_code(&Error::Divergence("x".into())), EXIT_DIVERGENCE);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), EXIT_IO);
    }

    #[test]
    fn log_truncation_keeps_earlier_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log");
        fs::write(&p, "epoch=0 step=0\nepoch=1 step=0\nepoch=2 step=0\n").unwrap();
        truncate_log(&p, 2).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "epoch=0 step=0\nepoch=1 step=0\n");
    }
}
