//! Online pair mining.
//!
//! Per mini-batch: all in-batch positive pairs, random cross-class negatives,
//! embedding distances under the current model, pruning of negatives that do
//! not clear the hardest positive by the margin, λ-weighted hard-negative
//! sampling, and an easy-to-hard ordering by per-pair loss. Across epochs λ
//! rises linearly from `1/E` to 1.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{contrastive_loss_sq, Margin, PairLabel};
use crate::numerics::{squared_distance, Rng, Tensor};

/// Handle to one image of a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: u64,
    pub class_label: usize,
    /// Position of the image tensor in the batch's payload slice.
    pub slot: usize,
    /// For augmented views, the id of the image the view was derived from.
    pub source: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub anchor: ImageRef,
    pub other: ImageRef,
    pub label: PairLabel,
    /// Squared embedding distance under the model that mined the pair.
    pub sq_distance: Option<f64>,
}

impl Pair {
    pub fn new(anchor: ImageRef, other: ImageRef) -> Self {
        Pair {
            anchor,
            other,
            label: PairLabel::for_classes(anchor.class_label, other.class_label),
            sq_distance: None,
        }
    }

    fn sq(&self) -> Result<f64> {
        self.sq_distance.ok_or_else(|| {
            Error::invalid(format!(
                "pair ({}, {}) has no cached distance",
                self.anchor.id, self.other.id
            ))
        })
    }

    /// Contrastive loss at the cached distance: the curriculum difficulty.
    pub fn difficulty(&self, m: Margin) -> Result<f64> {
        contrastive_loss_sq(self.sq()?, self.label, m)
    }
}

/// Hyper-parameters driving one mining pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningState {
    pub lambda: f64,
    pub margin: Margin,
    /// Softmax temperature of the hardness weights.
    pub temperature: f64,
    /// Original images per mini-batch (views are added on top).
    pub batch_size: usize,
    /// Random other-class partners drawn per anchor.
    pub negatives_per_anchor: usize,
}

impl Default for MiningState {
    fn default() -> Self {
        MiningState {
            lambda: 0.0,
            margin: Margin::default(),
            temperature: 1.0,
            batch_size: 256,
            negatives_per_anchor: 4,
        }
    }
}

impl MiningState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "mining.lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "mining.temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "mining.batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::Config(
                "mining.negatives_per_anchor must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps an image to an embedding deterministically.
pub trait Embedder {
    fn embed_eval(&self, image: &Tensor) -> Result<Tensor>;
}

/// `λ = epoch / num_epochs` for 1-based `epoch`.
pub fn lambda_schedule(epoch: usize, num_epochs: usize) -> Result<f64> {
    if num_epochs == 0 || epoch == 0 || epoch > num_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 1..={num_epochs}"
        )));
    }
    Ok(epoch as f64 / num_epochs as f64)
}

/// Pair universe sizes for `categories` classes of `per_class` images out of
/// `total`: `(M·n(n−1)/2, M·(I−n)·n)`.
///
/// The negative count sums `(I − n)·n` over classes, which counts every
/// unordered cross-class pair twice.
pub fn count_pairs(categories: u64, per_class: u64, total: u64) -> Result<(u64, u64)> {
    if categories == 0 || per_class == 0 || total < categories || total < per_class {
        return Err(Error::invalid(format!(
            "count_pairs needs M >= 1, n >= 1, I >= max(M, n); got M={categories}, n={per_class}, I={total}"
        )));
    }
    let overflow = || Error::invalid("pair count overflows u64");
    let pos = per_class
        .checked_mul(per_class - 1)
        .map(|v| v / 2)
        .and_then(|v| v.checked_mul(categories))
        .ok_or_else(overflow)?;
    let neg = (total - per_class)
        .checked_mul(per_class)
        .and_then(|v| v.checked_mul(categories))
        .ok_or_else(overflow)?;
    Ok((pos, neg))
}

fn class_count(batch: &[ImageRef]) -> usize {
    batch
        .iter()
        .map(|r| r.class_label)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Every unordered same-class pair `(i < j)` in batch order.
pub fn generate_positive_pairs(batch: &[ImageRef]) -> Vec<Pair> {
    let mut out = Vec::new();
    for (i, a) in batch.iter().enumerate() {
        for b in &batch[i + 1..] {
            if a.class_label == b.class_label {
                out.push(Pair::new(*a, *b));
            }
        }
    }
    out
}

/// For each anchor, up to `per_anchor` distinct other-class partners drawn
/// uniformly without replacement (partial Fisher–Yates over the eligible
/// partners in batch order).
pub fn generate_random_negative_pairs(
    batch: &[ImageRef],
    rng: &mut Rng,
    per_anchor: usize,
) -> Result<Vec<Pair>> {
    if per_anchor == 0 {
        return Err(Error::invalid("per_anchor must be >= 1"));
    }
    if class_count(batch) < 2 {
        return Err(Error::invalid(
            "negative pairs need a batch with at least two classes",
        ));
    }
    let mut out = Vec::with_capacity(batch.len() * per_anchor);
    let mut eligible: Vec<&ImageRef> = Vec::with_capacity(batch.len());
    for a in batch {
        eligible.clear();
        eligible.extend(batch.iter().filter(|b| b.class_label != a.class_label));
        let k = per_anchor.min(eligible.len());
        for t in 0..k {
            let r = t + rng.below(eligible.len() - t);
            eligible.swap(t, r);
            out.push(Pair::new(*a, *eligible[t]));
        }
    }
    Ok(out)
}

/// Fills `sq_distance` for every pair, embedding each referenced slot once.
/// Returns the number of embeddings computed.
pub fn compute_pair_distances<E: Embedder + ?Sized>(
    pairs: &mut [Pair],
    images: &[Tensor],
    model: &E,
) -> Result<usize> {
    let mut cache: HashMap<usize, Tensor> = HashMap::new();
    for pair in pairs.iter() {
        for r in [pair.anchor, pair.other] {
            if !cache.contains_key(&r.slot) {
                let image = images
                    .get(r.slot)
                    .ok_or_else(|| Error::invalid(format!("image slot {} out of range", r.slot)))?;
                cache.insert(r.slot, model.embed_eval(image)?);
            }
        }
    }
    for pair in pairs.iter_mut() {
        pair.sq_distance = Some(squared_distance(
            &cache[&pair.anchor.slot],
            &cache[&pair.other.slot],
        )?);
    }
    Ok(cache.len())
}

#[inline]
fn clears_constraint(neg_sq: f64, hardest_pos_sq: Option<f64>, m: Margin) -> bool {
    match hardest_pos_sq {
        Some(max_p) => neg_sq > max_p + m.value(),
        None => true,
    }
}

/// Pair constraint for one anchor: every positive is kept; a negative
/// survives iff its squared distance exceeds the largest positive squared
/// distance plus `m`. Without positives every negative survives.
pub fn prune_pair_constraint(
    positives: Vec<Pair>,
    negatives: Vec<Pair>,
    m: Margin,
) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let mut hardest = None::<f64>;
    for p in &positives {
        let sq = p.sq()?;
        hardest = Some(hardest.map_or(sq, |h| h.max(sq)));
    }
    let mut kept = Vec::with_capacity(negatives.len());
    for n in negatives {
        if clears_constraint(n.sq()?, hardest, m) {
            kept.push(n);
        }
    }
    Ok((positives, kept))
}

/// Batch-level pruning. An anchor's positives are the positive pairs that
/// contain it on either side; surviving negatives keep their input order.
pub fn prune_batch(positives: &[Pair], negatives: Vec<Pair>, m: Margin) -> Result<Vec<Pair>> {
    let mut hardest: HashMap<u64, f64> = HashMap::new();
    for p in positives {
        let sq = p.sq()?;
        for id in [p.anchor.id, p.other.id] {
            let h = hardest.entry(id).or_insert(sq);
            *h = h.max(sq);
        }
    }
    let mut kept = Vec::with_capacity(negatives.len());
    for n in negatives {
        if clears_constraint(n.sq()?, hardest.get(&n.anchor.id).copied(), m) {
            kept.push(n);
        }
    }
    Ok(kept)
}

/// `ceil(λ·N)`, tolerant of round-off just above an integer.
pub fn sample_size(lambda: f64, n: usize) -> usize {
    let raw = (lambda * n as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(n)
}

/// Selection weights `(1−λ)/N + λ·softmax(−sq/τ)`.
pub fn hardness_weights(negatives: &[Pair], lambda: f64, temperature: f64) -> Result<Vec<f64>> {
    let n = negatives.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let logits = negatives
        .iter()
        .map(|p| p.sq().map(|sq| -sq / temperature))
        .collect::<Result<Vec<_>>>()?;
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    let uniform = 1.0 / n as f64;
    Ok(exps
        .iter()
        .map(|e| (1.0 - lambda) * uniform + lambda * e / z)
        .collect())
}

/// Draws `ceil(λ·N)` negatives without replacement, each draw proportional
/// to the remaining weights. Returned in draw order; one uniform per draw.
pub fn weighted_negative_sample(
    negatives: &[Pair],
    lambda: f64,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Vec<Pair>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let weights = hardness_weights(negatives, lambda, temperature)?;
    let k = sample_size(lambda, negatives.len());
    let mut taken = vec![false; negatives.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(w, _)| w)
            .sum();
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, (&w, &t)) in weights.iter().zip(&taken).enumerate() {
            if t {
                continue;
            }
            acc += w;
            chosen = Some(i);
            if acc > target {
                break;
            }
        }
        let i = chosen.expect("k <= remaining");
        taken[i] = true;
        out.push(negatives[i]);
    }
    Ok(out)
}

fn curriculum_cmp(a: &(f64, Pair), b: &(f64, Pair)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.anchor.id.cmp(&b.1.anchor.id))
        .then(a.1.other.id.cmp(&b.1.other.id))
}

/// Ascending difficulty (per-pair loss), ties by `(anchor.id, other.id)`.
pub fn curriculum_sort(pairs: Vec<Pair>, m: Margin) -> Result<Vec<Pair>> {
    let mut keyed = pairs
        .into_iter()
        .map(|p| p.difficulty(m).map(|d| (d, p)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(curriculum_cmp);
    Ok(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Counts recorded while mining one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub positives: usize,
    pub negatives_generated: usize,
    pub negatives_surviving: usize,
    pub negatives_sampled: usize,
}

#[derive(Debug, Clone)]
pub struct MinedBatch {
    /// Training pairs in curriculum order.
    pub pairs: Vec<Pair>,
    pub stats: MiningStats,
}

/// The full online mining pass for one mini-batch.
///
/// Random negatives come from `rng.fork("negatives")` and weighted sampling
/// from `rng.fork("sampling")`.
pub fn mine_batch<E: Embedder + ?Sized>(
    batch: &[ImageRef],
    images: &[Tensor],
    state: &MiningState,
    model: &E,
    rng: &Rng,
) -> Result<MinedBatch> {
    let mut positives = generate_positive_pairs(batch);
    let mut negatives = generate_random_negative_pairs(
        batch,
        &mut rng.fork("negatives"),
        state.negatives_per_anchor,
    )?;
    let negatives_generated = negatives.len();
    compute_distances_jointly(&mut positives, &mut negatives, images, model)?;
    let surviving = prune_batch(&positives, negatives, state.margin)?;
    let negatives_surviving = surviving.len();
    let sampled = weighted_negative_sample(
        &surviving,
        state.lambda,
        state.temperature,
        &mut rng.fork("sampling"),
    )?;
    let stats = MiningStats {
        positives: positives.len(),
        negatives_generated,
        negatives_surviving,
        negatives_sampled: sampled.len(),
    };
    positives.extend(sampled);
    Ok(MinedBatch {
        pairs: curriculum_sort(positives, state.margin)?,
        stats,
    })
}

fn compute_distances_jointly<E: Embedder + ?Sized>(
    positives: &mut Vec<Pair>,
    negatives: &mut Vec<Pair>,
    images: &[Tensor],
    model: &E,
) -> Result<()> {
    let split = positives.len();
    let mut all: Vec<Pair> = positives.drain(..).chain(negatives.drain(..)).collect();
    compute_pair_distances(&mut all, images, model)?;
    negatives.extend(all.drain(split..));
    positives.extend(all);
    Ok(())
}

/// Baseline: `count` pairs drawn uniformly (with replacement) from all
/// unordered pairs of distinct batch images, no pruning and no ordering.
pub fn naive_random_pairs(batch: &[ImageRef], rng: &mut Rng, count: usize) -> Result<Vec<Pair>> {
    if class_count(batch) < 2 {
        return Err(Error::invalid(
            "naive pairs need a batch with at least two classes",
        ));
    }
    let n = batch.len();
    Ok((0..count)
        .map(|_| {
            let i = rng.below(n);
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            Pair::new(batch[i], batch[j])
        })
        .collect())
}
