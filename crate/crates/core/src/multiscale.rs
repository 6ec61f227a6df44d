//! Three-branch multi-scale embedding model.
//!
//! Branch `i` sees the input average-pooled by `scales[i]` and ends in
//! `Flatten → Dense(branch_dims[i]) → L2Norm`. The normalized branch outputs
//! are concatenated and fused by `Dropout → Dense(joint_dim) → L2Norm`.
//! Every branch and the fusion head draw their weights from one
//! [`Parameters`] set, so both sides of a siamese pair share them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, LayerSpec, Mode, Network, NetworkConfig, Parameters, Tape};
use crate::numerics::{Rng, Tensor};
use crate::pairs::Embedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiScaleConfig {
    /// `[C, H, W]` of the full-resolution input.
    pub input_shape: Vec<usize>,
    pub scales: Vec<usize>,
    /// Layer chain per branch, before the branch's flatten/dense/normalize head.
    pub branch_specs: Vec<Vec<LayerSpec>>,
    pub branch_dims: Vec<usize>,
    pub joint_dim: usize,
    #[serde(default = "default_fusion_dropout")]
    pub fusion_dropout: f64,
}

fn default_fusion_dropout() -> f64 {
    0.5
}

fn conv_blocks(n: usize, channels: usize) -> Vec<LayerSpec> {
    (0..n)
        .flat_map(|_| {
            [
                LayerSpec::conv3x3(channels),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d {
                    window: 2,
                    stride: 2,
                },
            ]
        })
        .collect()
}

impl MultiScaleConfig {
    /// Small from-scratch model: 3/2/1 conv blocks of `channels` filters on
    /// scales 1/2/4, branch widths 64/32/16, joint width 64.
    pub fn desk(input_shape: &[usize], channels: usize) -> Self {
        MultiScaleConfig {
            input_shape: input_shape.to_vec(),
            scales: vec![1, 2, 4],
            branch_specs: vec![
                conv_blocks(3, channels),
                conv_blocks(2, channels),
                conv_blocks(1, channels),
            ],
            branch_dims: vec![64, 32, 16],
            joint_dim: 64,
            fusion_dropout: 0.5,
        }
    }

    /// The desk chains with the full-size widths 4096/1024/512 and a 4096-wide
    /// joint embedding.
    pub fn paper_widths(input_shape: &[usize], channels: usize) -> Self {
        MultiScaleConfig {
            branch_dims: vec![4096, 1024, 512],
            joint_dim: 4096,
            ..Self::desk(input_shape, channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("model: {msg}")));
        if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
            return bad(format!(
                "input_shape must be [C, H, W], got {:?}",
                self.input_shape
            ));
        }
        let n = self.scales.len();
        if n == 0 || self.branch_specs.len() != n || self.branch_dims.len() != n {
            return bad(format!(
                "scales ({n}), branch_specs ({}) and branch_dims ({}) must have equal non-zero length",
                self.branch_specs.len(),
                self.branch_dims.len()
            ));
        }
        if self.scales[0] != 1 || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "scales must start at 1 and strictly increase, got {:?}",
                self.scales
            ));
        }
        if self.branch_dims.contains(&0) || self.joint_dim == 0 {
            return bad("embedding widths must be >= 1".into());
        }
        if self.branch_dims[1..]
            .iter()
            .any(|&d| d > self.branch_dims[0])
        {
            return bad(format!(
                "the full-resolution branch must be the widest, got {:?}",
                self.branch_dims
            ));
        }
        if !(0.0..1.0).contains(&self.fusion_dropout) {
            return bad(format!(
                "fusion_dropout must be in [0, 1), got {}",
                self.fusion_dropout
            ));
        }
        Ok(())
    }

    /// Input shape of branch `i` after padding and pooling.
    pub fn branch_input_shape(&self, i: usize) -> Vec<usize> {
        let f = self.scales[i];
        let (c, h, w) = (
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
        );
        vec![c, h.div_ceil(f), w.div_ceil(f)]
    }

    pub fn fusion_input_dim(&self) -> usize {
        self.branch_dims.iter().sum()
    }
}

fn check_image(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Dimension {
            op: "image",
            left: s.to_vec(),
            right: vec![0, 0, 0],
        }),
    }
}

/// Zero-pads bottom/right so both spatial extents divide `factor`.
pub fn pad_to_multiple(image: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("scale factor must be >= 1"));
    }
    let (c, h, w) = check_image(image)?;
    let (ph, pw) = (h.div_ceil(factor) * factor, w.div_ceil(factor) * factor);
    if (ph, pw) == (h, w) {
        return Ok(image.clone());
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let s = (ch * h + y) * w;
            let d = (ch * ph + y) * pw;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

/// Non-overlapping `factor × factor` average pooling per channel.
pub fn downsample(image: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("scale factor must be >= 1"));
    }
    let (c, h, w) = check_image(image)?;
    if factor == 1 {
        return Ok(image.clone());
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "{h}x{w} image not divisible by factor {factor}; pad first"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let src = image.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            let dst = &mut out[(ch * oh + y / factor) * ow..][..ow];
            for (x, v) in row.iter().enumerate() {
                dst[x / factor] += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Everything [`MultiScaleModel::backward_into`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape {
    branches: Vec<Tape>,
    fusion: Tape,
}

/// The multi-scale model together with its single parameter set.
#[derive(Debug, Clone)]
pub struct MultiScaleModel {
    config: MultiScaleConfig,
    branches: Vec<Network>,
    fusion: Network,
    pub params: Parameters,
}

impl MultiScaleModel {
    fn structure(config: &MultiScaleConfig) -> Result<(Vec<Network>, Network)> {
        config.validate()?;
        let branches = (0..config.scales.len())
            .map(|i| {
                let mut layers = config.branch_specs[i].clone();
                layers.extend([
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        out_dim: config.branch_dims[i],
                    },
                    LayerSpec::L2Norm,
                ]);
                Network::new(NetworkConfig {
                    name: format!("branch{i}"),
                    input_shape: config.branch_input_shape(i),
                    layers,
                    frozen: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = Network::new(NetworkConfig {
            name: "fusion".into(),
            input_shape: vec![config.fusion_input_dim()],
            layers: vec![
                LayerSpec::Dropout {
                    rate: config.fusion_dropout,
                },
                LayerSpec::Dense {
                    out_dim: config.joint_dim,
                },
                LayerSpec::L2Norm,
            ],
            frozen: Vec::new(),
        })?;
        Ok((branches, fusion))
    }

    /// Builds the model with freshly initialized parameters.
    pub fn build(config: MultiScaleConfig, rng: &mut Rng) -> Result<Self> {
        let (branches, fusion) = Self::structure(&config)?;
        let mut params = Parameters::new();
        for (i, b) in branches.iter().enumerate() {
            b.init_into(&mut params, &mut rng.fork_index("branch", i as u64))?;
        }
        fusion.init_into(&mut params, &mut rng.fork("fusion"))?;
        Ok(MultiScaleModel {
            config,
            branches,
            fusion,
            params,
        })
    }

    /// Reassembles a model from a config and previously saved parameters.
    pub fn from_parts(config: MultiScaleConfig, params: Parameters) -> Result<Self> {
        let (branches, fusion) = Self::structure(&config)?;
        for net in branches.iter().chain([&fusion]) {
            net.check_params(&params)?;
        }
        let expected: usize = branches
            .iter()
            .chain([&fusion])
            .map(Network::num_params)
            .sum();
        if expected != params.num_scalars() {
            return Err(Error::Config(format!(
                "parameter set holds {} scalars, model needs {expected}",
                params.num_scalars()
            )));
        }
        Ok(MultiScaleModel {
            config,
            branches,
            fusion,
            params,
        })
    }

    pub fn config(&self) -> &MultiScaleConfig {
        &self.config
    }

    pub fn branches(&self) -> &[Network] {
        &self.branches
    }

    pub fn fusion(&self) -> &Network {
        &self.fusion
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.config.input_shape
    }

    /// The per-branch views of one image.
    pub fn branch_views(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        if image.shape() != self.config.input_shape.as_slice() {
            return Err(Error::Dimension {
                op: "embed",
                left: image.shape().to_vec(),
                right: self.config.input_shape.clone(),
            });
        }
        self.config
            .scales
            .iter()
            .map(|&f| downsample(&pad_to_multiple(image, f)?, f))
            .collect()
    }

    /// Forward from precomputed branch views; also returns the concatenated
    /// branch embeddings.
    pub fn forward_views(
        &self,
        views: &[Tensor],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, Tensor, ModelTape)> {
        if views.len() != self.branches.len() {
            return Err(Error::invalid(format!(
                "expected {} branch views, got {}",
                self.branches.len(),
                views.len()
            )));
        }
        let mut concat = Vec::with_capacity(self.config.fusion_input_dim());
        let mut tapes = Vec::with_capacity(views.len());
        for (net, view) in self.branches.iter().zip(views) {
            let (y, tape) = net.forward(&self.params, view, mode, rng)?;
            concat.extend_from_slice(y.data());
            tapes.push(tape);
        }
        let concat = Tensor::vector(&concat);
        let (e, fusion) = self.fusion.forward(&self.params, &concat, mode, rng)?;
        Ok((
            e,
            concat,
            ModelTape {
                branches: tapes,
                fusion,
            },
        ))
    }

    pub fn forward(
        &self,
        image: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, ModelTape)> {
        let views = self.branch_views(image)?;
        let (e, _, tape) = self.forward_views(&views, mode, rng)?;
        Ok((e, tape))
    }

    /// Unit-norm joint embedding.
    pub fn embed(&self, image: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        self.forward(image, mode, rng).map(|(e, _)| e)
    }

    /// Both images through the same parameters.
    pub fn embed_pair(
        &self,
        a: &Tensor,
        b: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, Tensor)> {
        Ok((self.embed(a, mode, rng)?, self.embed(b, mode, rng)?))
    }

    /// Adds `d(scalar)/d(params)` into `grads` given `d(scalar)/d(embedding)`.
    pub fn backward_into(
        &self,
        tape: &ModelTape,
        grad_embedding: &Tensor,
        grads: &mut Gradients,
    ) -> Result<()> {
        let g_concat = self
            .fusion
            .backward_into(&self.params, &tape.fusion, grad_embedding, grads, true)?
            .expect("input gradient requested");
        let mut offset = 0;
        for ((net, t), &dim) in self
            .branches
            .iter()
            .zip(&tape.branches)
            .zip(&self.config.branch_dims)
        {
            let g = Tensor::vector(&g_concat.data()[offset..offset + dim]);
            net.backward_into(&self.params, t, &g, grads, false)?;
            offset += dim;
        }
        Ok(())
    }
}

impl Embedder for MultiScaleModel {
    fn embed_eval(&self, image: &Tensor) -> Result<Tensor> {
        // Eval mode never consumes randomness.
        self.embed(image, Mode::Eval, &mut Rng::new(0))
    }
}
