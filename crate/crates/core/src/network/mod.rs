//! Layered feed-forward networks with hand-written backward passes.
//!
//! A [`Network`] is a validated chain of [`LayerSpec`]s operating on a single
//! sample (no batch axis). Trainable layers look their weights up by name in a
//! shared [`Parameters`] set, so several networks can live in one parameter
//! set and be updated by one optimizer.

mod checkpoint;
mod optimizer;
mod params;

pub use checkpoint::{
    decode_container, encode_container, load_checkpoint, read_container, save_checkpoint,
    write_container, CONTAINER_VERSION, MAGIC,
};
pub use optimizer::{sgd_step, OptimizerConfig};
pub use params::{Gradients, ParamEntry, Parameters};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm_into, gemm_nt_into, gemm_tn_into, Rng, Tensor, NORM_EPS};

/// One layer of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// `[C, H, W] -> [out_channels, H', W']` with symmetric zero padding.
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    /// `[in] -> [out_dim]`.
    Dense {
        out_dim: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training.
    Dropout {
        rate: f64,
    },
    L2Norm,
    Flatten,
}

impl LayerSpec {
    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::L2Norm => "l2norm",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for `input`, or a message explaining why the input is invalid.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let [_, h, w] = chw(input)?;
                if out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err("out_channels, kernel and stride must be positive".into());
                }
                let oh = conv_out(h, kernel_h, stride, padding)?;
                let ow = conv_out(w, kernel_w, stride, padding)?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Dense { out_dim } => {
                if input.len() != 1 {
                    return Err(format!("dense expects a 1-D input, got {input:?}"));
                }
                if out_dim == 0 {
                    return Err("out_dim must be positive".into());
                }
                Ok(vec![out_dim])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let [c, h, w] = chw(input)?;
                if window == 0 || stride == 0 {
                    return Err("window and stride must be positive".into());
                }
                Ok(vec![
                    c,
                    conv_out(h, window, stride, 0)?,
                    conv_out(w, window, stride, 0)?,
                ])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate must be in [0, 1), got {rate}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::L2Norm => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes for trainable layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                vec![out_channels, input[0], kernel_h, kernel_w],
                vec![out_channels],
            )),
            LayerSpec::Dense { out_dim } => Some((vec![out_dim, input[0]], vec![out_dim])),
            _ => None,
        }
    }

    /// Glorot fan-in and fan-out.
    fn fans(&self, input: &[usize]) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((
                input[0] * kernel_h * kernel_w,
                out_channels * kernel_h * kernel_w,
            )),
            LayerSpec::Dense { out_dim } => Some((input[0], out_dim)),
            _ => None,
        }
    }
}

fn chw(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expects a [C, H, W] input, got {input:?}")),
    }
}

/// `floor((in + 2·pad − kernel) / stride) + 1`.
pub fn conv_out(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> std::result::Result<usize, String> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(format!(
            "kernel {kernel} larger than padded extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Train mode enables dropout; eval mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Serializable description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Prefix of every parameter name owned by this network.
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Indices of trainable layers excluded from optimizer updates.
    #[serde(default)]
    pub frozen: Vec<usize>,
}

/// A validated layer chain with precomputed shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    shapes: Vec<Vec<usize>>,
    param_names: Vec<Option<(String, String)>>,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        if config.input_shape.is_empty() || config.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "network {:?}: invalid input shape {:?}",
                config.name, config.input_shape
            )));
        }
        let mut shapes = vec![config.input_shape.clone()];
        let mut param_names = Vec::with_capacity(config.layers.len());
        for (i, layer) in config.layers.iter().enumerate() {
            let out = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|message| Error::Layer {
                    layer: i,
                    kind: layer.kind(),
                    message,
                })?;
            shapes.push(out);
            param_names.push(layer.is_trainable().then(|| {
                (
                    format!("{}.{i}.weight", config.name),
                    format!("{}.{i}.bias", config.name),
                )
            }));
        }
        for &f in &config.frozen {
            if !config.layers.get(f).is_some_and(LayerSpec::is_trainable) {
                return Err(Error::Config(format!(
                    "network {:?}: frozen index {f} is not a trainable layer",
                    config.name
                )));
            }
        }
        Ok(Network {
            config,
            shapes,
            param_names,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.config.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Shape entering layer `i` (`i == layers.len()` gives the output shape).
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Number of scalar parameters this network owns.
    pub fn num_params(&self) -> usize {
        self.config
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.param_shapes(&self.shapes[i]))
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Glorot-uniform weights, zero biases, appended into `params`.
    pub fn init_into(&self, params: &mut Parameters, rng: &mut Rng) -> Result<()> {
        for (i, layer) in self.config.layers.iter().enumerate() {
            let Some((w_shape, b_shape)) = layer.param_shapes(&self.shapes[i]) else {
                continue;
            };
            let (fan_in, fan_out) = layer.fans(&self.shapes[i]).expect("trainable");
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = w_shape.iter().product();
            let w = Tensor::from_vec(&w_shape, (0..n).map(|_| rng.uniform_range(-a, a)).collect())?;
            let frozen = self.config.frozen.contains(&i);
            let (w_name, b_name) = self.param_names[i].as_ref().expect("trainable");
            params.push(w_name.clone(), w, frozen)?;
            params.push(b_name.clone(), Tensor::zeros(&b_shape), frozen)?;
        }
        Ok(())
    }

    pub fn init_params(&self, rng: &mut Rng) -> Result<Parameters> {
        let mut params = Parameters::new();
        self.init_into(&mut params, rng)?;
        Ok(params)
    }

    /// Checks that `params` holds every tensor this network needs, with matching shapes.
    pub fn check_params(&self, params: &Parameters) -> Result<()> {
        for (i, names) in self.param_names.iter().enumerate() {
            let Some((w, b)) = names else { continue };
            let (ws, bs) = self.config.layers[i]
                .param_shapes(&self.shapes[i])
                .expect("trainable");
            for (name, shape) in [(w, ws), (b, bs)] {
                match params.get(name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Dimension {
                            op: "check_params",
                            left: t.shape().to_vec(),
                            right: shape,
                        })
                    }
                    None => {
                        return Err(Error::invalid(format!("missing parameter {name:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn slots(&self, params: &Parameters, i: usize) -> Result<(usize, usize)> {
        let (w, b) = self.param_names[i].as_ref().expect("trainable");
        match (params.slot(w), params.slot(b)) {
            (Some(ws), Some(bs)) => Ok((ws, bs)),
            _ => Err(Error::Layer {
                layer: i,
                kind: self.config.layers[i].kind(),
                message: format!("parameters {w:?}/{b:?} not found"),
            }),
        }
    }

    /// Runs the chain, recording what backward needs.
    pub fn forward(
        &self,
        params: &Parameters,
        input: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Tensor, Tape)> {
        if input.shape() != self.input_shape() {
            return Err(Error::Layer {
                layer: 0,
                kind: self.config.layers.first().map_or("input", LayerSpec::kind),
                message: format!(
                    "input shape {:?} does not match declared {:?}",
                    input.shape(),
                    self.input_shape()
                ),
            });
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.config.layers.len());
        for (i, layer) in self.config.layers.iter().enumerate() {
            let out_shape = &self.shapes[i + 1];
            let (y, cache) = match *layer {
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                    ..
                } => {
                    let (ws, bs) = self.slots(params, i)?;
                    let geom = ConvGeom::new(
                        &self.shapes[i],
                        out_shape,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                    );
                    let cols = im2col(x.data(), &geom);
                    let weight = &params.entry(ws).value;
                    let bias = &params.entry(bs).value;
                    let positions = geom.out_h * geom.out_w;
                    let mut out = vec![0.0; geom.out_c * positions];
                    for (o, row) in out.chunks_mut(positions).enumerate() {
                        row.fill(bias.data()[o]);
                    }
                    gemm_into(
                        weight.data(),
                        &cols,
                        &mut out,
                        geom.out_c,
                        geom.patch(),
                        positions,
                    );
                    (
                        Tensor::from_vec(out_shape, out)?,
                        LayerCache::Conv { cols, geom },
                    )
                }
                LayerSpec::Dense { out_dim } => {
                    let (ws, bs) = self.slots(params, i)?;
                    let weight = &params.entry(ws).value;
                    let mut out = params.entry(bs).value.data().to_vec();
                    gemm_into(weight.data(), x.data(), &mut out, out_dim, x.len(), 1);
                    let input = x.into_data();
                    (
                        Tensor::from_vec(out_shape, out)?,
                        LayerCache::Dense { input },
                    )
                }
                LayerSpec::Relu => {
                    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    (x, LayerCache::Relu { mask })
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let (out, argmax) =
                        maxpool(x.data(), &self.shapes[i], out_shape, window, stride);
                    (
                        Tensor::from_vec(out_shape, out)?,
                        LayerCache::MaxPool {
                            argmax,
                            input_len: x.len(),
                        },
                    )
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Eval => (x, LayerCache::Dropout { mask: None }),
                    Mode::Train => {
                        let keep = 1.0 - rate;
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                            .collect();
                        x.data_mut()
                            .iter_mut()
                            .zip(&mask)
                            .for_each(|(v, m)| *v *= m);
                        (x, LayerCache::Dropout { mask: Some(mask) })
                    }
                },
                LayerSpec::L2Norm => {
                    let norm = x.norm();
                    if norm > NORM_EPS {
                        x.scale(1.0 / norm);
                    }
                    let output = x.data().to_vec();
                    (x, LayerCache::L2Norm { output, norm })
                }
                LayerSpec::Flatten => {
                    let n = x.len();
                    (x.reshape(&[n])?, LayerCache::Flatten)
                }
            };
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Convenience eval-mode forward without a tape.
    pub fn infer(&self, params: &Parameters, input: &Tensor) -> Result<Tensor> {
        // Eval mode never draws from the rng.
        let mut rng = Rng::new(0);
        self.forward(params, input, Mode::Eval, &mut rng)
            .map(|(y, _)| y)
    }

    /// Fresh gradient set for `d(scalar)/d(params)` given `d(scalar)/d(output)`.
    pub fn backward(
        &self,
        params: &Parameters,
        tape: &Tape,
        grad_output: &Tensor,
    ) -> Result<Gradients> {
        let mut grads = params.zero_grads();
        self.backward_into(params, tape, grad_output, &mut grads, false)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward_into(
        &self,
        params: &Parameters,
        tape: &Tape,
        grad_output: &Tensor,
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let layers = &self.config.layers;
        if tape.caches.len() != layers.len()
            || tape
                .caches
                .iter()
                .zip(layers)
                .any(|(c, l)| c.kind() != l.kind())
        {
            return Err(Error::invalid(format!(
                "tape does not belong to network {:?}",
                self.config.name
            )));
        }
        if grad_output.shape() != self.output_shape() {
            return Err(Error::Dimension {
                op: "backward",
                left: grad_output.shape().to_vec(),
                right: self.output_shape().to_vec(),
            });
        }
        let mut g = grad_output.data().to_vec();
        for i in (0..layers.len()).rev() {
            let need_input = i > 0 || want_input_grad;
            match (&layers[i], &tape.caches[i]) {
                (LayerSpec::Conv2d { .. }, LayerCache::Conv { cols, geom }) => {
                    let (ws, bs) = self.slots(params, i)?;
                    let positions = geom.out_h * geom.out_w;
                    let k = geom.patch();
                    gemm_nt_into(
                        &g,
                        cols,
                        grads.get_mut(ws).data_mut(),
                        geom.out_c,
                        positions,
                        k,
                    );
                    let db = grads.get_mut(bs).data_mut();
                    for (o, row) in g.chunks(positions).enumerate() {
                        db[o] += row.iter().sum::<f64>();
                    }
                    if need_input {
                        let mut dcols = vec![0.0; k * positions];
                        gemm_tn_into(
                            params.entry(ws).value.data(),
                            &g,
                            &mut dcols,
                            geom.out_c,
                            k,
                            positions,
                        );
                        g = col2im(&dcols, geom);
                    }
                }
                (LayerSpec::Dense { out_dim }, LayerCache::Dense { input }) => {
                    let (ws, bs) = self.slots(params, i)?;
                    gemm_into(
                        &g,
                        input,
                        grads.get_mut(ws).data_mut(),
                        *out_dim,
                        1,
                        input.len(),
                    );
                    grads
                        .get_mut(bs)
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(b, gi)| *b += gi);
                    if need_input {
                        let mut dx = vec![0.0; input.len()];
                        gemm_tn_into(
                            params.entry(ws).value.data(),
                            &g,
                            &mut dx,
                            *out_dim,
                            input.len(),
                            1,
                        );
                        g = dx;
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu { mask }) => {
                    g.iter_mut().zip(mask).for_each(|(v, &m)| {
                        if !m {
                            *v = 0.0
                        }
                    });
                }
                (LayerSpec::MaxPool2d { .. }, LayerCache::MaxPool { argmax, input_len }) => {
                    let mut dx = vec![0.0; *input_len];
                    for (&src, gi) in argmax.iter().zip(&g) {
                        dx[src] += gi;
                    }
                    g = dx;
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        g.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                    }
                }
                (LayerSpec::L2Norm, LayerCache::L2Norm { output, norm }) => {
                    if *norm > NORM_EPS {
                        let proj: f64 = output.iter().zip(&g).map(|(y, gi)| y * gi).sum();
                        g.iter_mut()
                            .zip(output)
                            .for_each(|(gi, y)| *gi = (*gi - y * proj) / norm);
                    }
                }
                (LayerSpec::Flatten, LayerCache::Flatten) => {}
                _ => unreachable!("kinds checked above"),
            }
        }
        if want_input_grad {
            Ok(Some(Tensor::from_vec(self.input_shape(), g)?))
        } else {
            Ok(None)
        }
    }
}

/// Per-layer activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv {
        cols: Vec<f64>,
        geom: ConvGeom,
    },
    Dense {
        input: Vec<f64>,
    },
    Relu {
        mask: Vec<bool>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_len: usize,
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
    L2Norm {
        output: Vec<f64>,
        norm: f64,
    },
    Flatten,
}

impl LayerCache {
    fn kind(&self) -> &'static str {
        match self {
            LayerCache::Conv { .. } => "conv2d",
            LayerCache::Dense { .. } => "dense",
            LayerCache::Relu { .. } => "relu",
            LayerCache::MaxPool { .. } => "maxpool2d",
            LayerCache::Dropout { .. } => "dropout",
            LayerCache::L2Norm { .. } => "l2norm",
            LayerCache::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(
        input: &[usize],
        output: &[usize],
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvGeom {
            in_c: input[0],
            in_h: input[1],
            in_w: input[2],
            out_c: output[0],
            out_h: output[1],
            out_w: output[2],
            kh,
            kw,
            stride,
            pad,
        }
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// Input coordinate for output position `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.pad)
            .filter(|&v| v < extent)
    }
}

/// Row `(c, i, j)`, column `(oy, ox)` of the unfolded input.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let positions = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.patch() * positions];
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * positions..][..positions];
                for oy in 0..g.out_h {
                    let Some(y) = g.source(oy, i, g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(xx) = g.source(ox, j, g.in_w) {
                            row[oy * g.out_w + ox] = plane[y * g.in_w + xx];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let positions = g.out_h * g.out_w;
    let mut dx = vec![0.0; g.in_c * g.in_h * g.in_w];
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &dcols[((c * g.kh + i) * g.kw + j) * positions..][..positions];
                for oy in 0..g.out_h {
                    let Some(y) = g.source(oy, i, g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(xx) = g.source(ox, j, g.in_w) {
                            plane[y * g.in_w + xx] += row[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Max pooling; ties resolve to the first maximal element in scan order.
fn maxpool(
    x: &[f64],
    input: &[usize],
    output: &[usize],
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (oh, ow) = (output[1], output[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oy * stride + i) * w + ox * stride + j;
                        if x[idx] > best || best_idx == usize::MAX {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}
