//! wasm-bindgen entry points for `www/index.html`. Every function returns a
//! JSON string so the page needs no glue beyond `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use siamese_core::loss::{contrastive_loss, Margin, PairLabel};
use siamese_core::numerics::Rng;
use siamese_core::pairs::{
    curriculum_sort, hardness_weights, lambda_schedule, sample_size, weighted_negative_sample,
    ImageRef, Pair,
};

fn js_err(e: siamese_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Serialize)]
struct LossCurve {
    d: Vec<f64>,
    similar: Vec<f64>,
    dissimilar: Vec<f64>,
}

pub fn loss_curve_data(margin: f64, d_max: f64, points: usize) -> siamese_core::Result<String> {
    let m = Margin::new(margin)?;
    if !(d_max > 0.0) || points < 2 {
        return Err(siamese_core::Error::InvalidArgument(
            "need d_max > 0 and at least 2 points".into(),
        ));
    }
    let d: Vec<f64> = (0..points)
        .map(|i| d_max * i as f64 / (points - 1) as f64)
        .collect();
    let curve = |y| {
        d.iter()
            .map(|&x| contrastive_loss(x, y, m))
            .collect::<siamese_core::Result<Vec<_>>>()
    };
    Ok(to_json(&LossCurve {
        similar: curve(PairLabel::Similar)?,
        dissimilar: curve(PairLabel::Dissimilar)?,
        d,
    }))
}

/// Loss of a similar and a dissimilar pair over `d` in `[0, d_max]`.
#[wasm_bindgen]
pub fn loss_curve(margin: f64, d_max: f64, points: usize) -> Result<String, JsError> {
    loss_curve_data(margin, d_max, points).map_err(js_err)
}

fn image(id: u64, class_label: usize) -> ImageRef {
    ImageRef {
        id,
        class_label,
        slot: id as usize,
        source: None,
    }
}

/// Negatives of anchor 0 with the given squared distances.
fn negatives(sq: &[f64]) -> Vec<Pair> {
    sq.iter()
        .enumerate()
        .map(|(i, &s)| Pair {
            sq_distance: Some(s),
            ..Pair::new(image(0, 0), image(i as u64 + 1, 1))
        })
        .collect()
}

#[derive(Serialize)]
struct Sampling {
    weights: Vec<f64>,
    k: usize,
    /// Indices into the input, in draw order.
    drawn: Vec<usize>,
}

pub fn sampling_weights_data(
    sq: &[f64],
    lambda: f64,
    temperature: f64,
    seed: u64,
) -> siamese_core::Result<String> {
    let pairs = negatives(sq);
    let drawn = weighted_negative_sample(&pairs, lambda, temperature, &mut Rng::new(seed))?;
    Ok(to_json(&Sampling {
        weights: hardness_weights(&pairs, lambda, temperature)?,
        k: sample_size(lambda, sq.len()),
        drawn: drawn.iter().map(|p| p.other.id as usize - 1).collect(),
    }))
}

/// Selection weights of negatives at squared distances `sq`, and one seeded draw.
#[wasm_bindgen]
pub fn sampling_weights(
    sq: Vec<f64>,
    lambda: f64,
    temperature: f64,
    seed: u64,
) -> Result<String, JsError> {
    sampling_weights_data(&sq, lambda, temperature, seed).map_err(js_err)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    lambda: f64,
    k: usize,
    mean_sampled_sq: f64,
    /// Per-pair loss in training order: positives and sampled negatives.
    order: Vec<OrderedPair>,
}

#[derive(Serialize)]
struct OrderedPair {
    loss: f64,
    positive: bool,
}

/// A toy batch of `n_negatives` negatives and `n_positives` positives with
/// random squared distances, mined once per epoch.
pub fn curriculum_data(
    num_epochs: usize,
    n_positives: usize,
    n_negatives: usize,
    margin: f64,
    seed: u64,
) -> siamese_core::Result<String> {
    let m = Margin::new(margin)?;
    let mut rng = Rng::new(seed);
    let sq_max = 4.0;
    let neg_sq: Vec<f64> = (0..n_negatives).map(|_| rng.uniform() * sq_max).collect();
    let negs = negatives(&neg_sq);
    let pos: Vec<Pair> = (0..n_positives)
        .map(|i| Pair {
            sq_distance: Some(rng.uniform() * sq_max / 4.0),
            ..Pair::new(image(0, 0), image(1000 + i as u64, 0))
        })
        .collect();
    let mut rows = Vec::with_capacity(num_epochs);
    for epoch in 1..=num_epochs {
        let lambda = lambda_schedule(epoch, num_epochs)?;
        let sampled = weighted_negative_sample(
            &negs,
            lambda,
            0.5,
            &mut rng.fork_index("epoch", epoch as u64),
        )?;
        let mean_sampled_sq = if sampled.is_empty() {
            0.0
        } else {
            sampled
                .iter()
                .map(|p| p.sq_distance.unwrap_or(0.0))
                .sum::<f64>()
                / sampled.len() as f64
        };
        let k = sampled.len();
        let mut all = pos.clone();
        all.extend(sampled);
        let order = curriculum_sort(all, m)?
            .iter()
            .map(|p| {
                Ok(OrderedPair {
                    loss: p.difficulty(m)?,
                    positive: p.label == PairLabel::Similar,
                })
            })
            .collect::<siamese_core::Result<Vec<_>>>()?;
        rows.push(EpochRow {
            epoch,
            lambda,
            k,
            mean_sampled_sq,
            order,
        });
    }
    Ok(to_json(&rows))
}

/// λ, sample size and curriculum order per epoch for a toy batch.
#[wasm_bindgen]
pub fn curriculum(
    num_epochs: usize,
    n_positives: usize,
    n_negatives: usize,
    margin: f64,
    seed: u64,
) -> Result<String, JsError> {
    curriculum_data(num_epochs, n_positives, n_negatives, margin, seed).map_err(js_err)
}
