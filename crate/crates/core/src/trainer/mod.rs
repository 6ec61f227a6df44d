//! Siamese training with online pair mining and a λ curriculum.
//!
//! Every epoch raises λ, cuts the training split into class-aware
//! mini-batches, adds augmented views, mines pairs against the current model
//! and consumes them in curriculum order, one optimizer step per window of
//! pairs.

mod augment;
mod preprocess;

pub use augment::{augment, AugmentConfig};
pub use preprocess::{preprocess, NormStats, STD_EPS};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::index::{build_index, query_top_n};
use crate::loss::{batch_loss, contrastive_loss_grad, Margin, PairLabel};
use crate::multiscale::{ModelTape, MultiScaleConfig, MultiScaleModel};
use crate::network::{
    load_checkpoint, save_checkpoint, sgd_step, Gradients, Mode, OptimizerConfig,
};
use crate::numerics::{Rng, Tensor};
use crate::pairs::{
    lambda_schedule, mine_batch, naive_random_pairs, Embedder, ImageRef, MiningState, MiningStats,
    Pair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningMode {
    Opms,
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub num_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub mining: MiningState,
    pub mode: MiningMode,
    pub augment: AugmentConfig,
    /// Augmented views injected per original image in a batch.
    pub views_per_anchor: usize,
    /// Pairs per optimizer step.
    pub window: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: final model only).
    pub checkpoint_every: usize,
    /// Size of the fixed validation pair list.
    pub validation_pairs: usize,
    /// Naive mode only: pairs to train per epoch. Without it each naive batch
    /// trains as many pairs as mining would have produced for that batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_budget: Option<Vec<usize>>,
    /// Mine the next batch on a second thread against the last completed
    /// model snapshot. Not reproducible.
    pub pipeline: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            num_epochs: 10,
            optimizer: OptimizerConfig::desk(),
            mining: MiningState {
                batch_size: 32,
                ..MiningState::default()
            },
            mode: MiningMode::Opms,
            augment: AugmentConfig::default(),
            views_per_anchor: 1,
            window: 32,
            seed: 0,
            checkpoint_every: 0,
            validation_pairs: 256,
            naive_budget: None,
            pipeline: false,
        }
    }

    /// Fine-tuning values: 100 epochs, batches of 2000, lr 1e-5.
    pub fn paper() -> Self {
        TrainConfig {
            num_epochs: 100,
            optimizer: OptimizerConfig::paper(),
            mining: MiningState {
                batch_size: 2000,
                ..MiningState::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_epochs == 0 {
            return Err(Error::Config("train.num_epochs must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("train.window must be >= 1".into()));
        }
        if let Some(b) = &self.naive_budget {
            if b.len() != self.num_epochs {
                return Err(Error::Config(format!(
                    "train.naive_budget has {} entries for {} epochs",
                    b.len(),
                    self.num_epochs
                )));
            }
        }
        self.optimizer.validate()?;
        self.mining.validate()?;
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lambda: f64,
    pub batches: usize,
    pub steps: u64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub negatives_generated: usize,
    pub negatives_surviving: usize,
    pub mean_train_loss: f64,
    pub validation_loss: Option<f64>,
    /// Kept out of the run log so logs stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EpochReport {
    pub fn pairs_trained(&self) -> usize {
        self.positive_pairs + self.negative_pairs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    /// Validation loss of the model before the first update.
    pub initial_validation_loss: Option<f64>,
}

/// Callbacks fired during training.
pub trait TrainObserver {
    /// Pairs of one batch in the order they will be trained; slots index
    /// `images`.
    fn batch_mined(&mut self, _epoch: usize, _batch: usize, _images: &[Tensor], _pairs: &[Pair]) {}
    /// Pairs of one optimizer step, right after the step.
    fn window_trained(&mut self, _epoch: usize, _batch: usize, _pairs: &[Pair]) {}
    fn epoch_done(&mut self, _report: &EpochReport, _model: &MultiScaleModel) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Id of the `v`-th augmented view of image `id` (ids must fit in 32 bits).
pub fn view_id(id: u64, v: usize) -> u64 {
    ((v as u64 + 1) << 32) | id
}

/// Splits `refs` into mini-batches of about `batch_size` originals. Classes
/// are cut into chunks of 2 (3 for an odd tail) and dealt round-robin, so
/// every class present in a batch has at least two images there and every
/// batch spans at least two classes. Classes with a single image are left out.
pub fn class_aware_batches(
    refs: &[ImageRef],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<ImageRef>>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch_size must be >= 2"));
    }
    let mut by_class: BTreeMap<usize, Vec<ImageRef>> = BTreeMap::new();
    for r in refs {
        by_class.entry(r.class_label).or_default().push(*r);
    }
    let mut queues: Vec<Vec<Vec<ImageRef>>> = by_class
        .into_values()
        .filter(|v| v.len() >= 2)
        .map(|mut members| {
            rng.shuffle(&mut members);
            let mut chunks: Vec<Vec<ImageRef>> =
                members.chunks(2).map(<[ImageRef]>::to_vec).collect();
            if chunks.last().is_some_and(|c| c.len() == 1) {
                let tail = chunks.pop().expect("non-empty");
                chunks
                    .last_mut()
                    .expect("class has >= 2 images")
                    .extend(tail);
            }
            chunks.reverse();
            chunks
        })
        .collect();
    if queues.len() < 2 {
        return Err(Error::invalid(
            "training needs at least two classes with two or more images",
        ));
    }
    rng.shuffle(&mut queues);
    let mut batches: Vec<Vec<ImageRef>> = Vec::new();
    let mut current: Vec<ImageRef> = Vec::new();
    while queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if let Some(chunk) = q.pop() {
                current.extend(chunk);
                if current.len() >= batch_size {
                    batches.push(std::mem::take(&mut current));
                }
            }
        }
    }
    let spans = |b: &[ImageRef]| {
        b.iter()
            .map(|r| r.class_label)
            .collect::<HashSet<_>>()
            .len()
            >= 2
    };
    if !current.is_empty() {
        if batches.is_empty() || (spans(&current) && current.len() * 2 >= batch_size) {
            batches.push(current);
        } else {
            batches.last_mut().expect("non-empty").extend(current);
        }
    }
    // Tail batches of a class that outlasted the others.
    let mut merged: Vec<Vec<ImageRef>> = Vec::with_capacity(batches.len());
    for b in batches {
        match merged.last_mut() {
            Some(prev) if !spans(&b) => prev.extend(b),
            _ => merged.push(b),
        }
    }
    Ok(merged)
}

/// Mean contrastive loss of `pairs` and its parameter gradient. Each image
/// slot is forwarded once; both sides of every pair share the parameters.
pub fn pair_loss_and_grad(
    model: &MultiScaleModel,
    images: &[Tensor],
    pairs: &[Pair],
    m: Margin,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs"));
    }
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut passes: Vec<(Tensor, ModelTape)> = Vec::new();
    for p in pairs {
        for r in [p.anchor, p.other] {
            if let std::collections::hash_map::Entry::Vacant(e) = slot_of.entry(r.slot) {
                let image = images
                    .get(r.slot)
                    .ok_or_else(|| Error::invalid(format!("image slot {} out of range", r.slot)))?;
                e.insert(passes.len());
                passes.push(model.forward(image, mode, rng)?);
            }
        }
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut grad_e: Vec<Tensor> = passes
        .iter()
        .map(|(e, _)| Tensor::zeros(e.shape()))
        .collect();
    let mut total = 0.0;
    for p in pairs {
        let (a, b) = (slot_of[&p.anchor.slot], slot_of[&p.other.slot]);
        let (loss, ga, gb) = contrastive_loss_grad(&passes[a].0, &passes[b].0, p.label, m)?;
        total += loss;
        grad_e[a].axpy(scale, &ga)?;
        grad_e[b].axpy(scale, &gb)?;
    }
    let mut grads = model.params.zero_grads();
    for ((_, tape), g) in passes.iter().zip(&grad_e) {
        model.backward_into(tape, g, &mut grads)?;
    }
    Ok((total * scale, grads))
}

/// A fixed, balanced list of validation pairs: half same-class, half
/// cross-class, drawn uniformly with replacement.
pub fn validation_pairs(refs: &[ImageRef], count: usize, rng: &mut Rng) -> Result<Vec<Pair>> {
    let mut by_class: BTreeMap<usize, Vec<ImageRef>> = BTreeMap::new();
    for r in refs {
        by_class.entry(r.class_label).or_default().push(*r);
    }
    let positive_classes: Vec<&Vec<ImageRef>> =
        by_class.values().filter(|v| v.len() >= 2).collect();
    if by_class.len() < 2 || positive_classes.is_empty() {
        return Err(Error::invalid(
            "validation pairs need two classes and a class with two images",
        ));
    }
    let eligible_pos: usize = positive_classes.iter().map(|v| v.len()).sum();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        if k % 2 == 0 {
            // Anchor uniform over images that have a same-class partner.
            let mut i = rng.below(eligible_pos);
            let class = positive_classes
                .iter()
                .find(|v| {
                    if i < v.len() {
                        true
                    } else {
                        i -= v.len();
                        false
                    }
                })
                .expect("index within total");
            let mut j = rng.below(class.len() - 1);
            if j >= i {
                j += 1;
            }
            out.push(Pair::new(class[i], class[j]));
        } else {
            loop {
                let a = refs[rng.below(refs.len())];
                let b = refs[rng.below(refs.len())];
                if a.class_label != b.class_label {
                    out.push(Pair::new(a, b));
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Mean eval-mode contrastive loss over a fixed pair list.
pub fn validation_loss<E: Embedder + ?Sized>(
    model: &E,
    images: &[Tensor],
    pairs: &[Pair],
    m: Margin,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty validation pair list"));
    }
    let mut cache: HashMap<usize, Tensor> = HashMap::new();
    for p in pairs {
        for r in [p.anchor, p.other] {
            if !cache.contains_key(&r.slot) {
                let image = images
                    .get(r.slot)
                    .ok_or_else(|| Error::invalid(format!("image slot {} out of range", r.slot)))?;
                cache.insert(r.slot, model.embed_eval(image)?);
            }
        }
    }
    let triples: Vec<(&Tensor, &Tensor, PairLabel)> = pairs
        .iter()
        .map(|p| (&cache[&p.anchor.slot], &cache[&p.other.slot], p.label))
        .collect();
    batch_loss(&triples, m).map(|(mean, _)| mean)
}

/// Fraction of queries whose nearest repository embedding (ties to the
/// smallest id) has the query's class.
pub fn evaluate_accuracy_at_1<E: Embedder + ?Sized>(
    model: &E,
    queries: &Dataset,
    repository: &Dataset,
) -> Result<f64> {
    if queries.is_empty() || repository.is_empty() {
        return Err(Error::invalid(
            "accuracy@1 needs non-empty query and repository sets",
        ));
    }
    let repo_ids: HashSet<u64> = repository.samples.iter().map(|s| s.id).collect();
    if let Some(s) = queries.samples.iter().find(|s| repo_ids.contains(&s.id)) {
        return Err(Error::invalid(format!(
            "query image {} is also in the repository",
            s.id
        )));
    }
    let index = build_index(model, repository)?;
    let mut hits = 0usize;
    for q in &queries.samples {
        let e = model.embed_eval(&q.image)?;
        if query_top_n(&index, &e, 1)?[0].label == q.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// One mini-batch: originals followed by their views, and the pairs to
/// train in order.
struct PreparedBatch {
    images: Vec<Tensor>,
    pairs: Vec<Pair>,
    stats: MiningStats,
}

struct EpochPlan<'a> {
    epoch: usize,
    data: &'a Dataset,
    batches: Vec<Vec<ImageRef>>,
    state: MiningState,
    rng: Rng,
    naive_budget: Option<usize>,
}

impl EpochPlan<'_> {
    fn batch_rng(&self, b: usize) -> Rng {
        self.rng.fork_index("batch", b as u64)
    }

    fn prepare(
        &self,
        b: usize,
        model: &MultiScaleModel,
        cfg: &TrainConfig,
    ) -> Result<PreparedBatch> {
        let rng = self.batch_rng(b);
        let originals = &self.batches[b];
        let mut images = Vec::with_capacity(originals.len() * (1 + cfg.views_per_anchor));
        let mut refs = Vec::with_capacity(images.capacity());
        for r in originals {
            refs.push(ImageRef {
                slot: images.len(),
                ..*r
            });
            images.push(self.data.samples[r.slot].image.clone());
        }
        for v in 0..cfg.views_per_anchor {
            for (k, r) in originals.iter().enumerate() {
                let mut view_rng = rng.fork_index("view", (v * originals.len() + k) as u64);
                refs.push(ImageRef {
                    id: view_id(r.id, v),
                    class_label: r.class_label,
                    slot: images.len(),
                    source: Some(r.id),
                });
                images.push(augment(
                    &self.data.samples[r.slot].image,
                    &mut view_rng,
                    &cfg.augment,
                ));
            }
        }
        let mined = match cfg.mode {
            MiningMode::Opms => mine_batch(&refs, &images, &self.state, model, &rng.fork("mine"))?,
            MiningMode::Naive => {
                let (count, stats) = match self.naive_budget {
                    Some(total) => {
                        let n = self.batches.len();
                        let count = total / n + usize::from(b < total % n);
                        (count, MiningStats::default())
                    }
                    None => {
                        let shadow =
                            mine_batch(&refs, &images, &self.state, model, &rng.fork("mine"))?;
                        (shadow.pairs.len(), shadow.stats)
                    }
                };
                let pairs = naive_random_pairs(&refs, &mut rng.fork("naive"), count)?;
                crate::pairs::MinedBatch { pairs, stats }
            }
        };
        Ok(PreparedBatch {
            images,
            pairs: mined.pairs,
            stats: mined.stats,
        })
    }
}

struct EpochTotals {
    positives: usize,
    negatives: usize,
    generated: usize,
    surviving: usize,
    loss_sum: f64,
    loss_pairs: usize,
}

struct Stepper<'a> {
    cfg: &'a TrainConfig,
    step: u64,
}

impl Stepper<'_> {
    fn train_batch(
        &mut self,
        model: &mut MultiScaleModel,
        plan: &EpochPlan,
        b: usize,
        batch: &PreparedBatch,
        totals: &mut EpochTotals,
        observer: &mut dyn TrainObserver,
    ) -> Result<()> {
        observer.batch_mined(plan.epoch, b, &batch.images, &batch.pairs);
        totals.generated += batch.stats.negatives_generated;
        totals.surviving += batch.stats.negatives_surviving;
        let rng = plan.batch_rng(b);
        for (w, window) in batch.pairs.chunks(self.cfg.window).enumerate() {
            let mut drop_rng = rng.fork_index("window", w as u64);
            let (loss, grads) = pair_loss_and_grad(
                model,
                &batch.images,
                window,
                plan.state.margin,
                Mode::Train,
                &mut drop_rng,
            )?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch: plan.epoch,
                    batch: b,
                    message: format!("non-finite loss {loss} in window {w}"),
                });
            }
            sgd_step(&mut model.params, &grads, &self.cfg.optimizer, self.step)?;
            self.step += 1;
            totals.loss_sum += loss * window.len() as f64;
            totals.loss_pairs += window.len();
            for p in window {
                match p.label {
                    PairLabel::Similar => totals.positives += 1,
                    PairLabel::Dissimilar => totals.negatives += 1,
                }
            }
            observer.window_trained(plan.epoch, b, window);
        }
        Ok(())
    }
}

/// Trains `model` in place on an already normalized training split.
pub fn train(
    model: &mut MultiScaleModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(s) = train_set.samples.iter().find(|s| s.id >= 1 << 32) {
        return Err(Error::invalid(format!(
            "image id {} does not fit in 32 bits",
            s.id
        )));
    }
    let root = Rng::new(cfg.seed);
    let refs = train_set.refs();
    let margin = cfg.mining.margin;
    let val = match val_set {
        Some(v) => {
            let pairs = validation_pairs(
                &v.refs(),
                cfg.validation_pairs,
                &mut root.fork("validation"),
            )?;
            let images: Vec<Tensor> = v.samples.iter().map(|s| s.image.clone()).collect();
            Some((pairs, images))
        }
        None => None,
    };
    let val_loss = |model: &MultiScaleModel| -> Result<Option<f64>> {
        match &val {
            Some((pairs, images)) if !pairs.is_empty() => {
                validation_loss(model, images, pairs, margin).map(Some)
            }
            _ => Ok(None),
        }
    };
    let initial_validation_loss = val_loss(model)?;
    let mut stepper = Stepper { cfg, step: 0 };
    let mut reports = Vec::with_capacity(cfg.num_epochs);
    for epoch in 1..=cfg.num_epochs {
        let started = Instant::now();
        let lambda = lambda_schedule(epoch, cfg.num_epochs)?;
        let rng = root.fork_index("epoch", epoch as u64);
        let plan = EpochPlan {
            epoch,
            data: train_set,
            batches: class_aware_batches(&refs, cfg.mining.batch_size, &mut rng.fork("batches"))?,
            state: MiningState {
                lambda,
                ..cfg.mining.clone()
            },
            rng,
            naive_budget: cfg.naive_budget.as_ref().map(|b| b[epoch - 1]),
        };
        let mut totals = EpochTotals {
            positives: 0,
            negatives: 0,
            generated: 0,
            surviving: 0,
            loss_sum: 0.0,
            loss_pairs: 0,
        };
        if cfg.pipeline {
            run_pipelined(model, &plan, cfg, &mut stepper, &mut totals, observer)?;
        } else {
            for b in 0..plan.batches.len() {
                let batch = plan.prepare(b, model, cfg)?;
                stepper.train_batch(model, &plan, b, &batch, &mut totals, observer)?;
            }
        }
        let report = EpochReport {
            epoch,
            lambda,
            batches: plan.batches.len(),
            steps: stepper.step,
            positive_pairs: totals.positives,
            negative_pairs: totals.negatives,
            negatives_generated: totals.generated,
            negatives_surviving: totals.surviving,
            mean_train_loss: if totals.loss_pairs > 0 {
                totals.loss_sum / totals.loss_pairs as f64
            } else {
                0.0
            },
            validation_loss: val_loss(model)?,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        observer.epoch_done(&report, model)?;
        reports.push(report);
    }
    Ok(TrainOutcome {
        reports,
        initial_validation_loss,
    })
}

/// Producer mines batch `b + 1` against the latest snapshot while the
/// consumer trains batch `b`; the hand-off queue holds two batches.
fn run_pipelined(
    model: &mut MultiScaleModel,
    plan: &EpochPlan,
    cfg: &TrainConfig,
    stepper: &mut Stepper,
    totals: &mut EpochTotals,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    let snapshot = Mutex::new(Arc::new(model.clone()));
    let (tx, rx) = mpsc::sync_channel::<Result<PreparedBatch>>(2);
    std::thread::scope(|scope| {
        let snapshot = &snapshot;
        scope.spawn(move || {
            for b in 0..plan.batches.len() {
                let current = Arc::clone(&snapshot.lock().expect("snapshot lock"));
                let prepared = plan.prepare(b, &current, cfg);
                let failed = prepared.is_err();
                if tx.send(prepared).is_err() || failed {
                    break;
                }
            }
        });
        for b in 0..plan.batches.len() {
            let batch = rx
                .recv()
                .map_err(|_| Error::invalid("pair producer stopped early"))??;
            stepper.train_batch(model, plan, b, &batch, totals, observer)?;
            *snapshot.lock().expect("snapshot lock") = Arc::new(model.clone());
        }
        Ok(())
    })
}

/// JSON header of a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format: String,
    pub model: MultiScaleConfig,
    pub normalization: Option<NormStats>,
}

pub const MODEL_FORMAT: &str = "siamese-model";

pub fn save_model(path: &Path, model: &MultiScaleModel, stats: Option<&NormStats>) -> Result<()> {
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        model: model.config().clone(),
        normalization: stats.cloned(),
    };
    save_checkpoint(&header, &model.params, path)
}

pub fn load_model(path: &Path) -> Result<(MultiScaleModel, Option<NormStats>)> {
    let (header, params): (ModelHeader, _) = load_checkpoint(path)?;
    if header.format != MODEL_FORMAT {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: format!("not a model checkpoint (format {:?})", header.format),
        });
    }
    Ok((
        MultiScaleModel::from_parts(header.model, params)?,
        header.normalization,
    ))
}

/// Writes one JSON line per epoch to `run_log.jsonl` and periodic
/// checkpoints `epoch-NNNN.simn` into a run directory.
pub struct RunArtifacts {
    dir: PathBuf,
    log: std::io::BufWriter<std::fs::File>,
    checkpoint_every: usize,
    stats: Option<NormStats>,
    pub echo: bool,
}

impl RunArtifacts {
    pub fn create(dir: &Path, checkpoint_every: usize, stats: Option<NormStats>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_log.jsonl");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunArtifacts {
            dir: dir.to_path_buf(),
            log: std::io::BufWriter::new(file),
            checkpoint_every,
            stats,
            echo: false,
        })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("run_log.jsonl")
    }
}

impl TrainObserver for RunArtifacts {
    fn epoch_done(&mut self, report: &EpochReport, model: &MultiScaleModel) -> Result<()> {
        let line = serde_json::to_string(report).expect("report serializes");
        let path = self.log_path();
        writeln!(self.log, "{line}")
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io(&path, e))?;
        if self.echo {
            println!(
                "epoch {:>3}  lambda {:.3}  pairs {:>6} (+{} / -{})  train {:.6}  val {}  {:.1}s",
                report.epoch,
                report.lambda,
                report.pairs_trained(),
                report.positive_pairs,
                report.negative_pairs,
                report.mean_train_loss,
                report
                    .validation_loss
                    .map_or("-".into(), |v| format!("{v:.6}")),
                report.wall_time_s
            );
        }
        if self.checkpoint_every > 0 && report.epoch % self.checkpoint_every == 0 {
            let path = self.dir.join(format!("epoch-{:04}.simn", report.epoch));
            save_model(&path, model, self.stats.as_ref())?;
        }
        Ok(())
    }
}

/// Reads a run log back.
pub fn read_run_log(path: &Path) -> Result<Vec<EpochReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// A trained model with the statistics its inputs must be normalized with.
pub struct Fitted {
    pub model: MultiScaleModel,
    pub stats: NormStats,
    pub outcome: TrainOutcome,
}

/// Normalizes with training-split statistics, builds the model from
/// `cfg.seed` and trains it.
pub fn fit(
    train_raw: &Dataset,
    val_raw: Option<&Dataset>,
    model_cfg: MultiScaleConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Fitted> {
    let (train_set, stats) = preprocess(train_raw)?;
    let val_set = val_raw.map(|v| stats.apply(v)).transpose()?;
    let mut model = MultiScaleModel::build(model_cfg, &mut Rng::new(cfg.seed).fork("init"))?;
    let outcome = train(&mut model, &train_set, val_set.as_ref(), cfg, observer)?;
    Ok(Fitted {
        model,
        stats,
        outcome,
    })
}
