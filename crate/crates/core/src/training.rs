//! Mini-batch training with Adam and step decay, k-fold cross-validation and
//! the incremental relabeling protocol.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use crate::datagen::relabel_inclusive;
use crate::error::{Error, Result};
use crate::eval::{confusion_metrics, MetricsReport, MetricsSummary};
use crate::geometry::{Label, Streamline, Tractogram};
use crate::models::{LossStats, Model, ModelSpec, INFERENCE_CHUNK};
use crate::par::map_chunks;
use crate::tensor::{Adam, AdamConfig, GradStore, Rng, StepDecay};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    /// Streamlines per optimizer step.
    pub batch: usize,
    pub schedule: StepDecay,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Share of the data held out for validation.
    pub val_fraction: f64,
    /// Points per streamline after resampling (`None` keeps the input).
    pub resample: Option<usize>,
    pub workers: usize,
    /// Streamlines per gradient work item. Fixed independently of `workers`
    /// so that results do not depend on the thread count.
    pub chunk: usize,
    /// Stop after this many epochs without a new best validation score.
    pub patience: Option<usize>,
    /// Wall-clock limit. An epoch is skipped when the previous one suggests
    /// it would finish past the limit. Makes the epoch count host-dependent.
    pub time_budget: Option<Duration>,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        TrainConfig {
            seed: model.seed,
            model,
            epochs: 200,
            batch: 256,
            schedule: StepDecay::default(),
            adam: AdamConfig::default(),
            val_fraction: 0.2,
            resample: Some(16),
            workers: 1,
            chunk: 32,
            patience: None,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch == 0 || self.chunk == 0 || self.workers == 0 {
            return Err(Error::arg("batch, chunk and workers must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::arg(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.schedule.base.is_finite() && self.schedule.base > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !(in_unit(self.adam.beta1) && in_unit(self.adam.beta2)) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        if matches!(self.resample, Some(m) if m < 2) {
            return Err(Error::arg("resampling needs at least 2 points"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// One row per completed epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        s
    }
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy (ties broken
    /// by lower validation loss).
    pub best: Model,
    pub best_epoch: usize,
    /// Parameters after the last completed epoch.
    pub last: Model,
    pub log: TrainLog,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn labels_of(t: &Tractogram) -> Result<&[Label]> {
    t.labels
        .as_deref()
        .ok_or_else(|| Error::arg("training data has no labels"))
}

fn prepare(t: &Tractogram, resample: Option<usize>) -> Result<Vec<Streamline>> {
    match resample {
        Some(m) => t.streamlines.iter().map(|s| s.resample(m)).collect(),
        None => Ok(t.streamlines.clone()),
    }
}

fn require_both_classes(labels: impl Iterator<Item = Label>, what: &str) -> Result<()> {
    let seen: BTreeSet<Label> = labels.collect();
    if seen.len() < 2 {
        return Err(Error::arg(format!("{what} contains a single class")));
    }
    Ok(())
}

/// Seeded partition into (train, validation) index sets.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 streamlines to split, got {n}")));
    }
    let mut order = Rng::new(seed).split(1).permutation(n);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let train = order.split_off(n_val);
    Ok((train, order))
}

/// Summed loss statistics over `indices`, evaluated in fixed chunks.
pub fn evaluate_indices(
    model: &Model,
    data: &[Streamline],
    labels: &[usize],
    indices: &[usize],
    workers: usize,
) -> Result<LossStats> {
    let parts = map_chunks(indices, INFERENCE_CHUNK, workers, |_, idx| {
        let s: Vec<&Streamline> = idx.iter().map(|&i| &data[i]).collect();
        let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        model.evaluate(&s, &l)
    })?;
    Ok(parts.into_iter().fold(LossStats::default(), LossStats::merge))
}

pub fn train(config: &TrainConfig, data: &Tractogram) -> Result<TrainOutcome> {
    train_with_progress(config, data, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    data: &Tractogram,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let labels: Vec<usize> = labels_of(data)?.iter().map(|l| l.class_index()).collect();
    require_both_classes(labels_of(data)?.iter().copied(), "training data")?;
    let (train_idx, val_idx) = split_indices(data.len(), config.val_fraction, config.seed)?;
    require_both_classes(
        train_idx.iter().map(|&i| Label::from_class_index(labels[i])),
        "training split",
    )?;
    let samples = prepare(data, config.resample)?;

    let mut model = Model::build(config.model.clone())?;
    let adam = Adam::new(config.adam);
    let mut shuffle_rng = Rng::new(config.seed).split(2);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut step = 0u64;
    let mut last_loss = None;

    let start = Instant::now();
    let mut epoch_time = Duration::ZERO;
    for epoch in 0..config.epochs {
        if let Some(budget) = config.time_budget {
            if epoch > 0 && start.elapsed() + epoch_time > budget {
                break;
            }
        }
        let epoch_start = Instant::now();
        let lr = config.schedule.lr(epoch);
        let mut order = train_idx.clone();
        shuffle_rng.shuffle(&mut order);
        let mut train_stats = LossStats::default();
        for (b, batch) in order.chunks(config.batch).enumerate() {
            let parts = map_chunks(batch, config.chunk, config.workers, |_, idx| {
                let s: Vec<&Streamline> = idx.iter().map(|&i| &samples[i]).collect();
                let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let mut grads = GradStore::zeros_like(model.params());
                let stats = model.accumulate_gradients(&s, &l, &mut grads)?;
                Ok((grads, stats))
            })?;
            let mut parts = parts.into_iter();
            let (mut grads, mut stats) = parts.next().expect("non-empty batch");
            for (g, s) in parts {
                grads.add_assign(&g);
                stats = stats.merge(s);
            }
            if !stats.loss_sum.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    lr,
                    last_loss,
                });
            }
            last_loss = Some(stats.mean_loss());
            train_stats = train_stats.merge(stats);
            model.params_mut().set_grads(&grads, 1.0 / batch.len() as f64)?;
            step += 1;
            adam.step(model.params_mut(), lr, step)?;
        }
        let val = evaluate_indices(&model, &samples, &labels, &val_idx, config.workers)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: train_stats.mean_loss(),
            train_acc: train_stats.accuracy(),
            val_loss: val.mean_loss(),
            val_acc: val.accuracy(),
        };
        log.epochs.push(record);
        on_epoch(&record);
        epoch_time = epoch_start.elapsed();
        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => {
                record.val_acc > *acc || (record.val_acc == *acc && record.val_loss < *loss)
            }
        };
        if improved {
            best = Some((record.val_acc, record.val_loss, epoch, model.clone()));
        }
        if let (Some(p), Some((_, _, best_epoch, _))) = (config.patience, &best) {
            if epoch - best_epoch >= p {
                break;
            }
        }
    }
    let (_, _, best_epoch, best_model) = best.ok_or_else(|| Error::arg("epochs must be at least 1"))?;
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Hard labels predicted for a tractogram.
pub fn predict_labels(model: &Model, t: &Tractogram, resample: Option<usize>, workers: usize) -> Result<Vec<Label>> {
    Ok(model
        .predict_batch(t, resample, workers)?
        .iter()
        .map(|p| p.label())
        .collect())
}

pub fn test_metrics(model: &Model, t: &Tractogram, resample: Option<usize>, workers: usize) -> Result<MetricsReport> {
    let preds = predict_labels(model, t, resample, workers)?;
    confusion_metrics(&preds, labels_of(t)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<MetricsReport>,
    pub summary: MetricsSummary,
}

impl CvReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("fold,{}\n", MetricsReport::CSV_HEADER);
        for (i, f) in self.folds.iter().enumerate() {
            s.push_str(&format!("{i},{}\n", f.csv_row()));
        }
        let fmt = |v: [f64; 4]| v.map(|x| x.to_string()).join(",");
        s.push_str(&format!("mean,,,,,{}\n", fmt(self.summary.mean)));
        s.push_str(&format!("std,,,,,{}\n", fmt(self.summary.std)));
        s
    }
}

/// Each fold is held out once; the model is trained on the union of the
/// others (with the configured validation split) and scored on the held-out
/// fold using the best checkpoint.
pub fn cross_validate(config: &TrainConfig, folds: &[Tractogram]) -> Result<CvReport> {
    if folds.len() < 2 {
        return Err(Error::arg(format!("need at least 2 folds, got {}", folds.len())));
    }
    if let Some(i) = folds.iter().position(|f| f.is_empty()) {
        return Err(Error::arg(format!("fold {i} is empty")));
    }
    let mut reports = Vec::with_capacity(folds.len());
    for held in 0..folds.len() {
        let rest: Vec<&Tractogram> = (0..folds.len()).filter(|&i| i != held).map(|i| &folds[i]).collect();
        let outcome = train(config, &Tractogram::concat(&rest))?;
        reports.push(test_metrics(&outcome.best, &folds[held], config.resample, config.workers)?);
    }
    let summary = MetricsSummary::of(&reports)?;
    Ok(CvReport {
        folds: reports,
        summary,
    })
}

/// Seeded split of a tractogram into `k` folds of near-equal size.
pub fn make_folds(t: &Tractogram, k: usize, seed: u64) -> Result<Vec<Tractogram>> {
    if k < 2 || k > t.len() {
        return Err(Error::arg(format!("cannot split {} streamlines into {k} folds", t.len())));
    }
    let order = Rng::new(seed).split(3).permutation(t.len());
    Ok((0..k)
        .map(|f| {
            let idx: Vec<usize> = order.iter().skip(f).step_by(k).copied().collect();
            t.select(&idx)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub included: BTreeSet<u32>,
    pub metrics: MetricsReport,
}

pub fn incremental_csv(stages: &[StageReport]) -> String {
    let mut s = format!("stage,included,{}\n", MetricsReport::CSV_HEADER);
    for r in stages {
        let inc: Vec<String> = r.included.iter().map(|c| c.to_string()).collect();
        s.push_str(&format!("{},{},{}\n", r.stage, inc.join(" "), r.metrics.csv_row()));
    }
    s
}

/// For every stage, relabels (class id in the included set ⇒ plausible),
/// retrains from scratch with the same configuration and scores the best
/// checkpoint on a held-out split shared by all stages.
pub fn incremental_train(
    config: &TrainConfig,
    data: &Tractogram,
    stages: &[BTreeSet<u32>],
    test_fraction: f64,
) -> Result<Vec<StageReport>> {
    let class_ids = data
        .class_ids
        .as_deref()
        .ok_or_else(|| Error::arg("incremental training needs class ids"))?;
    if stages.is_empty() {
        return Err(Error::arg("no stages given"));
    }
    if let Some(i) = (1..stages.len()).find(|&i| !stages[i - 1].is_subset(&stages[i])) {
        return Err(Error::arg(format!("stage {i} does not contain stage {}", i - 1)));
    }
    let (fit_idx, test_idx) = split_indices(data.len(), test_fraction, config.seed ^ 0x5157)?;
    let mut out = Vec::with_capacity(stages.len());
    for (stage, included) in stages.iter().enumerate() {
        let labels = relabel_inclusive(class_ids, included);
        require_both_classes(labels.iter().copied(), &format!("stage {stage}"))?;
        let relabeled = data.clone().with_labels(labels)?;
        let outcome = train(config, &relabeled.select(&fit_idx))?;
        let metrics = test_metrics(&outcome.best, &relabeled.select(&test_idx), config.resample, config.workers)?;
        out.push(StageReport {
            stage,
            included: included.clone(),
            metrics,
        });
    }
    Ok(out)
}
