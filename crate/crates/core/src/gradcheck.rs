//! Finite-difference gradient checks over a real model definition.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::loss::{contrastive_loss, contrastive_loss_grad, Margin, PairLabel};
use crate::multiscale::MultiScaleModel;
use crate::network::{LayerSpec, Mode, Network, NetworkConfig, Parameters};
use crate::numerics::{euclidean_distance, max_relative_error, Rng, Tensor};
use crate::pairs::{generate_positive_pairs, generate_random_negative_pairs, ImageRef};
use crate::trainer::pair_loss_and_grad;

pub const EPS: f64 = 1e-6;
/// Coordinates with |gradient| below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Central differences of `f` at the chosen coordinates of `x`.
fn fd_at<F>(mut f: F, x: &mut [f64], coords: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let plus = f(x)?;
            x[i] = orig - EPS;
            let minus = f(x)?;
            x[i] = orig;
            Ok((plus - minus) / (2.0 * EPS))
        })
        .collect()
}

/// All indices below `n`, or `limit` distinct ones drawn at random.
fn pick(n: usize, limit: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if n > limit {
        for t in 0..limit {
            let r = t + rng.below(n - t);
            all.swap(t, r);
        }
        all.truncate(limit);
        all.sort_unstable();
    }
    all
}

fn randn(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.normal()).collect()).expect("sized")
}

/// One layer in isolation on random inputs and parameters, objective
/// `sum(probe * layer(x))`, input and parameter gradients.
pub fn check_layer(
    input_shape: &[usize],
    layer: &LayerSpec,
    limit: usize,
    seed: u64,
) -> Result<GradReport> {
    let net = Network::new(NetworkConfig {
        name: "check".into(),
        input_shape: input_shape.to_vec(),
        layers: vec![layer.clone()],
        frozen: vec![],
    })?;
    let mut rng = Rng::new(seed);
    let mut params = net.init_params(&mut rng)?;
    for e in params.entries_mut() {
        e.value = randn(e.value.shape(), &mut rng, 0.5);
    }
    let x = randn(input_shape, &mut rng, 1.0);
    let probe = randn(net.output_shape(), &mut rng, 1.0);
    let mode = match layer {
        LayerSpec::Dropout { .. } => Mode::Train,
        _ => Mode::Eval,
    };
    let mask = seed ^ 0x6d61_736b;
    let eval = |p: &Parameters, x: &Tensor| -> Result<f64> {
        net.forward(p, x, mode, &mut Rng::new(mask))?.0.dot(&probe)
    };
    let (_, tape) = net.forward(&params, &x, mode, &mut Rng::new(mask))?;
    let mut grads = params.zero_grads();
    let gx = net
        .backward_into(&params, &tape, &probe, &mut grads, true)?
        .expect("input gradient requested");

    let xc = pick(x.len(), limit, &mut rng);
    let mut xd = x.data().to_vec();
    let nx = fd_at(
        |v| eval(&params, &Tensor::from_vec(input_shape, v.to_vec())?),
        &mut xd,
        &xc,
    )?;
    let ax: Vec<f64> = xc.iter().map(|&i| gx.data()[i]).collect();
    let mut err = max_relative_error(&ax, &nx, REL_FLOOR);

    let flat_g = grads.flatten();
    let pc = pick(flat_g.len(), limit, &mut rng);
    let mut flat = params.flatten();
    let mut work = params.clone();
    let np = fd_at(
        |v| {
            work.assign_flat(v)?;
            eval(&work, &x)
        },
        &mut flat,
        &pc,
    )?;
    let ap: Vec<f64> = pc.iter().map(|&i| flat_g[i]).collect();
    err = err.max(max_relative_error(&ap, &np, REL_FLOOR));
    Ok(GradReport {
        name: format!("{} {:?}", layer.kind(), input_shape),
        max_rel_error: err,
        coordinates: xc.len() + pc.len(),
    })
}

/// Every distinct layer of `model`, at the input shape it sees there.
pub fn check_model_layers(
    model: &MultiScaleModel,
    limit: usize,
    seed: u64,
) -> Result<Vec<GradReport>> {
    let mut seen: BTreeMap<String, (Vec<usize>, LayerSpec)> = BTreeMap::new();
    for net in model.branches().iter().chain([model.fusion()]) {
        for (i, layer) in net.layers().iter().enumerate() {
            let shape = net.shape_at(i).to_vec();
            seen.entry(format!("{}{:?}", layer.kind(), shape))
                .or_insert((shape, layer.clone()));
        }
    }
    seen.values()
        .enumerate()
        .map(|(k, (shape, layer))| check_layer(shape, layer, limit, seed + k as u64))
        .collect()
}

pub fn check_contrastive(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::new(seed);
    let m = Margin::default();
    let mut worst: f64 = 0.0;
    for label in [PairLabel::Similar, PairLabel::Dissimilar] {
        let (a, b) = loop {
            let a = randn(&[8], &mut rng, 0.3);
            let b = randn(&[8], &mut rng, 0.3);
            if (euclidean_distance(&a, &b)? - m.value()).abs() > 1e-3 {
                break (a, b);
            }
        };
        let (_, ga, gb) = contrastive_loss_grad(&a, &b, label, m)?;
        let mut joint = [a.data(), b.data()].concat();
        let coords: Vec<usize> = (0..joint.len()).collect();
        let num = fd_at(
            |v| {
                contrastive_loss(
                    euclidean_distance(&Tensor::vector(&v[..8]), &Tensor::vector(&v[8..]))?,
                    label,
                    m,
                )
            },
            &mut joint,
            &coords,
        )?;
        worst = worst.max(max_relative_error(
            &[ga.data(), gb.data()].concat(),
            &num,
            REL_FLOOR,
        ));
    }
    Ok(GradReport {
        name: "contrastive loss".into(),
        max_rel_error: worst,
        coordinates: 32,
    })
}

/// Mean pair loss of a small random batch through the whole shared-weight
/// model, checked at up to `limit` parameter coordinates.
pub fn check_siamese(
    model: &MultiScaleModel,
    images: usize,
    mode: Mode,
    limit: usize,
    seed: u64,
) -> Result<GradReport> {
    let mut rng = Rng::new(seed);
    let mut model = model.clone();
    // Positive biases keep ReLU units away from their kink.
    for e in model
        .params
        .entries_mut()
        .iter_mut()
        .filter(|e| e.name.ends_with("bias"))
    {
        e.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform_range(0.05, 0.15));
    }
    let shape = model.input_shape().to_vec();
    let imgs: Vec<Tensor> = (0..images).map(|_| randn(&shape, &mut rng, 1.0)).collect();
    let refs: Vec<ImageRef> = (0..images)
        .map(|i| ImageRef {
            id: i as u64,
            class_label: i % 2,
            slot: i,
            source: None,
        })
        .collect();
    let mut pairs = generate_positive_pairs(&refs);
    pairs.extend(generate_random_negative_pairs(&refs, &mut rng, 2)?);
    let m = Margin::default();
    let mask = seed ^ 0x7369_616d;
    let (_, grads) = pair_loss_and_grad(&model, &imgs, &pairs, m, mode, &mut Rng::new(mask))?;
    let flat_g = grads.flatten();
    let coords = pick(flat_g.len(), limit, &mut rng);
    let mut flat = model.params.flatten();
    let num = fd_at(
        |v| {
            model.params.assign_flat(v)?;
            pair_loss_and_grad(&model, &imgs, &pairs, m, mode, &mut Rng::new(mask)).map(|r| r.0)
        },
        &mut flat,
        &coords,
    )?;
    let analytic: Vec<f64> = coords.iter().map(|&i| flat_g[i]).collect();
    Ok(GradReport {
        name: format!("siamese pair loss ({mode:?})"),
        max_rel_error: max_relative_error(&analytic, &num, REL_FLOOR),
        coordinates: coords.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiscale::MultiScaleConfig;

    #[test]
    fn desk_model_checks_pass() {
        let model =
            MultiScaleModel::build(MultiScaleConfig::desk(&[3, 16, 16], 4), &mut Rng::new(0))
                .unwrap();
        let layers = check_model_layers(&model, 64, 1).unwrap();
        assert!(layers.len() >= 6);
        for r in layers.iter().chain([&check_contrastive(2).unwrap()]) {
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
        let r = check_siamese(&model, 4, Mode::Train, 64, 3).unwrap();
        assert_eq!(r.coordinates, 64);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn pick_is_exhaustive_below_limit() {
        let mut rng = Rng::new(0);
        assert_eq!(pick(5, 10, &mut rng), vec![0, 1, 2, 3, 4]);
        let p = pick(100, 10, &mut rng);
        assert_eq!(p.len(), 10);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}
