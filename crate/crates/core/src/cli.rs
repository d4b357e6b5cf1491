//! Command-line surface. Every subcommand is a thin wrapper over library
//! calls; exit code 0 is success, 1 a usage or validation error and 2 an I/O
//! failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datagen::{apply_exclusive_rules, generate, relabel_inclusive, GenConfig, LabelRules};
use crate::error::{Error, Result};
use crate::eval::{
    category_csv, confusion_metrics, flip_test, max_activation_attribution, per_category_report,
    permutation_test, volumetric_dsc, voxelize, Bounds,
};
use crate::geometry::{Label, Tractogram};
use crate::io;
use crate::models::{Architecture, ModelSpec};
use crate::par::available_workers;
use crate::training::{
    cross_validate, incremental_csv, incremental_train, make_folds, train_with_progress, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "fiberfilter", version, about = "Streamline plausibility classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled tractogram with bundles and corruptions.
    Generate(GenerateArgs),
    /// Label a tractogram with the geometric rules or an included class set.
    Label(LabelArgs),
    /// Train a classifier and write the best checkpoint.
    Train(TrainArgs),
    /// k-fold cross-validation.
    Cv(CvArgs),
    /// Retrain while growing the set of plausible classes.
    Incremental(IncrementalArgs),
    /// Predict plausibility for every streamline.
    Infer(InferArgs),
    /// Score predictions against labels.
    Eval(EvalArgs),
    /// Metrics on point-shuffled streamlines.
    Permtest(PermtestArgs),
    /// Largest logit change under streamline reversal.
    Fliptest(ModelInput),
    /// Per-point counts of global max-pooling winners.
    Attribute(AttributeArgs),
    /// Export global descriptors.
    Latent(LatentArgs),
    /// Volumetric Dice between two voxelized streamline sets.
    VoxelDsc(VoxelArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Total number of streamlines.
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 0.6)]
    plausible_fraction: f64,
    /// Rule labels sidecar; defaults to the output path with extension `labels`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Class-id sidecar; defaults to the output path with extension `classes`.
    #[arg(long)]
    class_ids: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Class ids for inclusive labeling; requires `--include`.
    #[arg(long, requires = "include")]
    class_ids: Option<PathBuf>,
    /// Comma-separated class ids treated as plausible.
    #[arg(long, requires = "class_ids")]
    include: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    #[arg(long, default_value = "vf")]
    arch: Architecture,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Adam first-moment decay.
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    /// Adam second-moment decay.
    #[arg(long, default_value_t = 0.99)]
    beta2: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    resample: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Wall-clock training limit in seconds; no epoch starts that would overrun it.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl ModelFlags {
    fn config(&self) -> Result<TrainConfig> {
        let mut spec = ModelSpec::new(self.arch).with_seed(self.seed);
        spec.k = self.k;
        let mut c = TrainConfig::new(spec);
        c.epochs = self.epochs;
        c.batch = self.batch;
        c.schedule.base = self.lr;
        c.adam.beta1 = self.beta1;
        c.adam.beta2 = self.beta2;
        c.resample = Some(self.resample);
        c.val_fraction = self.val_fraction;
        c.patience = self.patience;
        if let Some(secs) = self.time_budget {
            c.time_budget = Some(
                std::time::Duration::try_from_secs_f64(secs)
                    .map_err(|_| Error::arg(format!("invalid time budget {secs}")))?,
            );
        }
        c.workers = workers(self.workers)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to the input path with extension `labels`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct IncrementalArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to the input path with extension `classes`.
    #[arg(long)]
    class_ids: Option<PathBuf>,
    /// Included class ids of one stage, comma separated; repeat per stage.
    #[arg(long = "stage", required = true)]
    stages: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args, Debug)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 16)]
    resample: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    common: ModelInput,
    /// Prediction CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction CSV from `infer`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Tractogram for the length/curvature breakdown.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-category CSV; requires `--in`.
    #[arg(long, requires = "input")]
    category_report: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    resample: usize,
}

#[derive(Args, Debug)]
struct PermtestArgs {
    #[command(flatten)]
    common: ModelInput,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AttributeArgs {
    #[command(flatten)]
    common: ModelInput,
    /// Only this streamline.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LatentArgs {
    #[command(flatten)]
    common: ModelInput,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VoxelArgs {
    /// Reference streamlines.
    #[arg(long = "in")]
    input: PathBuf,
    /// Second tractogram on the same grid.
    #[arg(long, conflicts_with = "pred")]
    other: Option<PathBuf>,
    /// Prediction CSV; the second set is the predicted-plausible subset of `--in`.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    voxel_mm: f64,
    /// Half-width of the cubic grid around the origin.
    #[arg(long, default_value_t = 80.0)]
    bounds_mm: f64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    mask_a: Option<PathBuf>,
    #[arg(long)]
    mask_b: Option<PathBuf>,
}

fn workers(requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(0) => Err(Error::arg("--workers must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(available_workers()),
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn parse_ids(text: &str) -> Result<BTreeSet<u32>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::arg(format!("invalid class id `{t}`"))))
        .collect()
}

fn load_labeled(input: &Path, labels: Option<&PathBuf>) -> Result<Tractogram> {
    let t = io::load_fib(input)?;
    let lp = labels.cloned().unwrap_or_else(|| sidecar(input, "labels"));
    let labels = io::load_labels(&lp, Some(t.len()))?;
    t.with_labels(labels)
}

fn write_report(path: Option<&PathBuf>, csv: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => io::write_atomic(p, csv),
        None => {
            let _ = out.write_all(csv.as_bytes());
            Ok(())
        }
    }
}

fn run_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = a.model.config()?;
    let data = load_labeled(&a.input, a.labels.as_ref())?;
    let quiet = a.model.quiet;
    let outcome = train_with_progress(&config, &data, |r| {
        if !quiet {
            let _ = writeln!(
                err,
                "epoch {:>4}  lr {:.2e}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            );
        }
    })?;
    io::save_checkpoint(&a.out, &outcome.best)?;
    if let Some(p) = &a.report {
        io::write_atomic(p, &outcome.log.to_csv())?;
    }
    let best = &outcome.log.epochs[outcome.best_epoch];
    let _ = writeln!(
        out,
        "best epoch {} val acc {:.4}; checkpoint {}",
        best.epoch,
        best.val_acc,
        a.out.display()
    );
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Generate(a) => {
            let config = GenConfig::default_mix(a.count, a.plausible_fraction, a.seed)?;
            let g = generate(&config)?;
            let labels = apply_exclusive_rules(&g.tractogram, &config.rules);
            let ids = g.tractogram.class_ids.clone().unwrap_or_default();
            io::save_fib(&a.out, &g.tractogram)?;
            io::save_labels(&a.labels.unwrap_or_else(|| sidecar(&a.out, "labels")), &labels)?;
            io::save_class_ids(&a.class_ids.unwrap_or_else(|| sidecar(&a.out, "classes")), &ids)?;
            let p = labels.iter().filter(|l| l.is_plausible()).count();
            let _ = writeln!(out, "{} streamlines, {} plausible", labels.len(), p);
        }
        Command::Label(a) => {
            let t = io::load_fib(&a.input)?;
            let labels = match (&a.class_ids, &a.include) {
                (Some(c), Some(inc)) => relabel_inclusive(&io::load_class_ids(c, Some(t.len()))?, &parse_ids(inc)?),
                _ => apply_exclusive_rules(&t, &LabelRules::default()),
            };
            io::save_labels(&a.out, &labels)?;
        }
        Command::Train(a) => run_train(&a, out, err)?,
        Command::Cv(a) => {
            let config = a.model.config()?;
            let data = load_labeled(&a.input, a.labels.as_ref())?;
            let folds = make_folds(&data, a.folds, config.seed)?;
            let report = cross_validate(&config, &folds)?;
            write_report(a.report.as_ref(), &report.to_csv(), out)?;
        }
        Command::Incremental(a) => {
            let config = a.model.config()?;
            let t = io::load_fib(&a.input)?;
            let cp = a.class_ids.clone().unwrap_or_else(|| sidecar(&a.input, "classes"));
            let ids = io::load_class_ids(&cp, Some(t.len()))?;
            let t = t.with_class_ids(ids)?;
            let stages = a.stages.iter().map(|s| parse_ids(s)).collect::<Result<Vec<_>>>()?;
            let report = incremental_train(&config, &t, &stages, a.test_fraction)?;
            write_report(a.report.as_ref(), &incremental_csv(&report), out)?;
        }
        Command::Infer(a) => {
            let c = &a.common;
            let model = io::load_checkpoint(&c.model)?;
            let t = io::load_fib(&c.input)?;
            let preds = model.predict_batch(&t, Some(c.resample), workers(c.workers)?)?;
            io::write_atomic(&a.out, &io::predictions_to_csv(&preds))?;
        }
        Command::Eval(a) => {
            let preds = io::load_prediction_labels(&a.pred)?;
            let labels = io::load_labels(&a.labels, Some(preds.len()))?;
            let report = confusion_metrics(&preds, &labels)?;
            write_report(a.report.as_ref(), &report.to_csv(), out)?;
            if let (Some(input), Some(cat)) = (&a.input, &a.category_report) {
                let t = io::load_fib(input)?;
                if t.len() != preds.len() {
                    return Err(Error::arg(format!(
                        "{} has {} streamlines, predictions cover {}",
                        input.display(),
                        t.len(),
                        preds.len()
                    )));
                }
                let rs = t.streamlines.iter().map(|s| s.resample(a.resample)).collect::<Result<Vec<_>>>()?;
                io::write_atomic(cat, &category_csv(&per_category_report(&preds, &labels, &rs)?))?;
            }
        }
        Command::Permtest(a) => {
            let c = &a.common;
            let model = io::load_checkpoint(&c.model)?;
            let t = load_labeled(&c.input, a.labels.as_ref())?;
            let labels = t.labels.clone().unwrap_or_default();
            let report = permutation_test(&model, &t, &labels, a.seed, Some(c.resample), workers(c.workers)?)?;
            write_report(c.report.as_ref(), &report.to_csv(), out)?;
        }
        Command::Fliptest(c) => {
            let model = io::load_checkpoint(&c.model)?;
            let t = io::load_fib(&c.input)?;
            let dev = flip_test(&model, &t, Some(c.resample), workers(c.workers)?)?;
            write_report(c.report.as_ref(), &format!("max_deviation\n{dev:e}\n"), out)?;
        }
        Command::Attribute(a) => {
            let c = &a.common;
            let model = io::load_checkpoint(&c.model)?;
            let t = io::load_fib(&c.input)?;
            let indices: Vec<usize> = match a.index {
                Some(i) if i >= t.len() => {
                    return Err(Error::arg(format!("index {i} out of range for {} streamlines", t.len())))
                }
                Some(i) => vec![i],
                None => (0..t.len()).collect(),
            };
            let mut csv = String::from("streamline,point,x,y,z,count\n");
            for i in indices {
                let s = t.streamlines[i].resample(c.resample)?;
                let counts = max_activation_attribution(&model, &s)?;
                for (j, (p, n)) in s.points().iter().zip(counts).enumerate() {
                    csv.push_str(&format!("{i},{j},{},{},{},{n}\n", p.x, p.y, p.z));
                }
            }
            io::write_atomic(&a.out, &csv)?;
        }
        Command::Latent(a) => {
            let c = &a.common;
            let model = io::load_checkpoint(&c.model)?;
            let t = io::load_fib(&c.input)?;
            let z = model.export_latent(&t, Some(c.resample), workers(c.workers)?)?;
            let header: Vec<String> = (0..z.cols()).map(|j| format!("z{j}")).collect();
            let mut csv = format!("index,{}\n", header.join(","));
            for i in 0..z.rows() {
                let row: Vec<String> = z.row(i).iter().map(|v| v.to_string()).collect();
                csv.push_str(&format!("{i},{}\n", row.join(",")));
            }
            io::write_atomic(&a.out, &csv)?;
        }
        Command::VoxelDsc(a) => {
            let t = io::load_fib(&a.input)?;
            let second: Tractogram = match (&a.other, &a.pred) {
                (Some(o), _) => io::load_fib(o)?,
                (None, Some(p)) => {
                    let preds = io::load_prediction_labels(p)?;
                    if preds.len() != t.len() {
                        return Err(Error::arg(format!(
                            "{} predictions for {} streamlines",
                            preds.len(),
                            t.len()
                        )));
                    }
                    let keep: Vec<usize> = (0..t.len()).filter(|&i| preds[i] == Label::Plausible).collect();
                    t.select(&keep)
                }
                (None, None) => return Err(Error::arg("voxel-dsc needs --other or --pred")),
            };
            let bounds = Bounds::cube(a.bounds_mm)?;
            let ma = voxelize(&t.streamlines, a.voxel_mm, &bounds)?;
            let mb = voxelize(&second.streamlines, a.voxel_mm, &bounds)?;
            let dsc = volumetric_dsc(&ma, &mb)?;
            if let Some(p) = &a.mask_a {
                io::save_mask(p, &ma)?;
            }
            if let Some(p) = &a.mask_b {
                io::save_mask(p, &mb)?;
            }
            let csv = format!("voxel_mm,voxels_a,voxels_b,dsc\n{},{},{},{}\n", a.voxel_mm, ma.count(), mb.count(), dsc);
            write_report(a.report.as_ref(), &csv, out)?;
        }
    }
    Ok(())
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
                return 1;
            }
            let _ = out.write_all(text.as_bytes());
            return 0;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("fiberfilter").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = call(&["generate", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(call(&["nosuch"]).0, 1);
        assert_eq!(call(&["train", "--in", "a.fib", "--out", "m", "--arch", "cnn"]).0, 1);
        assert_eq!(call(&["--help"]).0, 0);
    }

    #[test]
    fn missing_file_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.fib");
        let (code, _, err) = call(&["label", "--in", missing.to_str().unwrap(), "--out", "x"]);
        assert_eq!(code, 2);
        assert!(err.contains("none.fib"), "{err}");
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.fib");
        let (code, _, _) = call(&["generate", "--out", out.to_str().unwrap(), "--count", "0"]);
        assert_eq!(code, 1);
        assert_eq!(call(&["generate", "--out", out.to_str().unwrap(), "--count", "20"]).0, 0);
        let model = dir.path().join("m.ckpt");
        for beta in ["--beta1=1", "--beta2=-0.1"] {
            let mut args = vec!["train", "--in", out.to_str().unwrap(), "--out", model.to_str().unwrap()];
            args.push(beta);
            let (code, _, err) = call(&args);
            assert_eq!(code, 1, "{err}");
            assert!(err.contains("betas"), "{err}");
        }
        let bad = dir.path().join("bad.fib");
        std::fs::write(&bad, "FIB 1\n1\n2\n0 0 0\n").unwrap();
        let (code, _, err) = call(&["label", "--in", bad.to_str().unwrap(), "--out", "x"]);
        assert_eq!(code, 1);
        assert!(err.contains("bad.fib:5"), "{err}");
    }

    #[test]
    fn stage_ids_parse() {
        assert_eq!(parse_ids("3, 1,2").unwrap(), BTreeSet::from([1, 2, 3]));
        assert!(parse_ids("1,x").is_err());
        assert!(parse_ids("").unwrap().is_empty());
    }
}
