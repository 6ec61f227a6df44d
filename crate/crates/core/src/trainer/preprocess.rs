//! Per-channel standardization with statistics from the training split.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Guard for zero-variance channels.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population standard deviation; division uses `max(std, STD_EPS)`.
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn compute(dataset: &Dataset) -> Result<Self> {
        let shape = dataset
            .image_shape()
            .ok_or_else(|| Error::invalid("cannot compute statistics of an empty dataset"))?;
        let channels = shape[0];
        let plane = shape[1] * shape[2];
        let count = (dataset.len() * plane) as f64;
        let mut mean = vec![0.0; channels];
        for s in &dataset.samples {
            for (c, px) in s.image.data().chunks_exact(plane).enumerate() {
                mean[c] += px.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; channels];
        for s in &dataset.samples {
            for (c, px) in s.image.data().chunks_exact(plane).enumerate() {
                var[c] += px
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>();
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        Ok(NormStats { mean, std })
    }

    pub fn apply_image(&self, image: &Tensor) -> Result<Tensor> {
        let channels = self.mean.len();
        if image.rank() != 3 || image.shape()[0] != channels {
            return Err(Error::Dimension {
                op: "normalize",
                left: image.shape().to_vec(),
                right: vec![channels],
            });
        }
        let plane = image.len() / channels;
        let mut out = image.clone();
        for (c, px) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            let s = self.std[c].max(STD_EPS);
            px.iter_mut().for_each(|v| *v = (*v - self.mean[c]) / s);
        }
        Ok(out)
    }

    /// Normalizes a dataset that has not been normalized yet.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.normalized {
            return Err(Error::invalid(format!(
                "dataset {:?} is already normalized",
                dataset.split
            )));
        }
        let samples = dataset
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id,
                    label: s.label,
                    image: self.apply_image(&s.image)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = dataset.with_samples(samples, dataset.split.clone());
        out.normalized = true;
        Ok(out)
    }
}

/// Standardizes the training split and returns the statistics for reuse on
/// every other split.
pub fn preprocess(train: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::compute(train)?;
    Ok((stats.apply(train)?, stats))
}
