//! Contrastive loss and its gradient with respect to both embeddings.
//!
//! Label convention: `Y = 0` for similar (positive) pairs, `Y = 1` for
//! dissimilar (negative) pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Similar,
    Dissimilar,
}

impl PairLabel {
    /// Numeric `Y` used in the loss.
    pub fn y(self) -> u8 {
        match self {
            PairLabel::Similar => 0,
            PairLabel::Dissimilar => 1,
        }
    }

    pub fn from_y(y: u8) -> Result<Self> {
        match y {
            0 => Ok(PairLabel::Similar),
            1 => Ok(PairLabel::Dissimilar),
            other => Err(Error::invalid(format!(
                "pair label must be 0 or 1, got {other}"
            ))),
        }
    }

    /// Label implied by two class labels.
    pub fn for_classes(a: usize, b: usize) -> Self {
        if a == b {
            PairLabel::Similar
        } else {
            PairLabel::Dissimilar
        }
    }
}

/// Contrastive margin `m > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(m: f64) -> Result<Self> {
        if m > 0.0 && m.is_finite() {
            Ok(Margin(m))
        } else {
            Err(Error::invalid(format!("margin must be > 0, got {m}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Margin(1.0)
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;
    fn try_from(m: f64) -> Result<Self> {
        Margin::new(m)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

/// `(1−Y)·½·d² + Y·½·max(0, m−d)²`.
pub fn contrastive_loss(d: f64, y: PairLabel, m: Margin) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance must be >= 0, got {d}")));
    }
    Ok(match y {
        PairLabel::Similar => 0.5 * d * d,
        PairLabel::Dissimilar => {
            let h = (m.0 - d).max(0.0);
            0.5 * h * h
        }
    })
}

/// Loss from a squared distance, as cached on mined pairs.
pub fn contrastive_loss_sq(sq: f64, y: PairLabel, m: Margin) -> Result<f64> {
    if !(sq >= 0.0) {
        return Err(Error::invalid(format!(
            "squared distance must be >= 0, got {sq}"
        )));
    }
    match y {
        // Avoids a sqrt/square round trip for positives.
        PairLabel::Similar => Ok(0.5 * sq),
        PairLabel::Dissimilar => contrastive_loss(sq.sqrt(), y, m),
    }
}

/// Loss and gradients `(∂L/∂xq, ∂L/∂xo)` for one pair of embeddings.
///
/// At `D = 0` both gradients are zero for either label.
pub fn contrastive_loss_grad(
    xq: &Tensor,
    xo: &Tensor,
    y: PairLabel,
    m: Margin,
) -> Result<(f64, Tensor, Tensor)> {
    let sq = squared_distance(xq, xo)?;
    let d = sq.sqrt();
    let loss = contrastive_loss(d, y, m)?;
    // Coefficient c with grad_xq = c · (xq − xo).
    let c = match y {
        PairLabel::Similar => 1.0,
        PairLabel::Dissimilar if d > 0.0 && d < m.0 => -(m.0 - d) / d,
        PairLabel::Dissimilar => 0.0,
    };
    let mut gq = Tensor::zeros(xq.shape());
    let mut go = Tensor::zeros(xo.shape());
    if c != 0.0 && d > 0.0 {
        for ((q, o), (a, b)) in gq
            .data_mut()
            .iter_mut()
            .zip(go.data_mut())
            .zip(xq.data().iter().zip(xo.data()))
        {
            *q = c * (a - b);
            *o = -*q;
        }
    }
    Ok((loss, gq, go))
}

/// Per-pair losses and their arithmetic mean.
pub fn batch_loss(pairs: &[(&Tensor, &Tensor, PairLabel)], m: Margin) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("batch_loss of an empty batch"));
    }
    let losses = pairs
        .iter()
        .map(|(a, b, y)| contrastive_loss(squared_distance(a, b)?.sqrt(), *y, m))
        .collect::<Result<Vec<_>>>()?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((mean, losses))
}
