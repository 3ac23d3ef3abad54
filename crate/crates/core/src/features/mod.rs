//! Convolutional feature network with input-gradient backpropagation, and
//! the feature-space losses built on top of it.

mod loss;
mod nstw;

pub use loss::{combined_loss, content_loss, gram, style_loss, ContentParams, LossWeights, StyleParams};
pub use nstw::{decode_nstw, encode_nstw, init_random, load_weights, save_weights, MiniNetSpec};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::GrayImage;

/// Channel-major `(c, h, w)` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::LengthMismatch {
                what: "feature map data",
                left: data.len(),
                right: c * h * w,
            });
        }
        Ok(FeatureMap { c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Spatial positions per channel, `h * w`.
    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    fn ensure_shape(&self, shape: (usize, usize, usize), what: &'static str) -> Result<()> {
        if self.shape() == shape {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what}: shape {:?} does not match {:?}", self.shape(), shape)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        same_pad: bool,
    },
    Relu,
    MaxPool { window: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, k: usize, cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv {
                kh: k,
                kw: k,
                cin,
                cout,
                stride,
                same_pad: true,
            },
        }
    }

    pub fn relu(name: impl Into<String>) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Relu,
        }
    }

    pub fn max_pool(name: impl Into<String>, window: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::MaxPool { window, stride },
        }
    }
}

/// Weights of one conv layer; `weights` is indexed `[co][ci][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNetwork {
    layers: Vec<LayerSpec>,
    /// One entry per layer; `Some` exactly for conv layers.
    params: Vec<Option<ConvWeights>>,
    mean: f64,
    scale: f64,
}

impl FeatureNetwork {
    /// Validates channel chaining, tensor sizes and the stride-1 first conv.
    pub fn new(layers: Vec<LayerSpec>, convs: Vec<ConvWeights>, mean: f64, scale: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        if !(mean.is_finite() && scale.is_finite() && scale != 0.0) {
            return Err(Error::invalid(format!("bad input normalization (mean {mean}, scale {scale})")));
        }
        let mut convs = convs.into_iter();
        let mut params = Vec::with_capacity(layers.len());
        let mut channels: Option<usize> = None;
        let mut seen_conv = false;
        for (idx, layer) in layers.iter().enumerate() {
            if layer.name.is_empty() {
                return Err(Error::invalid(format!("layer {idx} has an empty name")));
            }
            if layers[..idx].iter().any(|l| l.name == layer.name) {
                return Err(Error::invalid(format!("duplicate layer name `{}`", layer.name)));
            }
            match layer.kind {
                LayerKind::Conv {
                    kh,
                    kw,
                    cin,
                    cout,
                    stride,
                    ..
                } => {
                    if kh == 0 || kw == 0 || cin == 0 || cout == 0 || stride == 0 {
                        return Err(Error::invalid(format!("conv `{}` has a zero extent", layer.name)));
                    }
                    if !seen_conv && stride != 1 {
                        return Err(Error::invalid(format!(
                            "first conv `{}` must have stride 1, got {stride}",
                            layer.name
                        )));
                    }
                    seen_conv = true;
                    if let Some(c) = channels {
                        if c != cin {
                            return Err(Error::invalid(format!(
                                "conv `{}` expects {cin} input channels but receives {c}",
                                layer.name
                            )));
                        }
                    }
                    let w = convs
                        .next()
                        .ok_or_else(|| Error::invalid(format!("missing weights for conv `{}`", layer.name)))?;
                    if w.weights.len() != kh * kw * cin * cout || w.bias.len() != cout {
                        return Err(Error::invalid(format!(
                            "conv `{}` weights have {} values and {} biases, expected {} and {cout}",
                            layer.name,
                            w.weights.len(),
                            w.bias.len(),
                            kh * kw * cin * cout
                        )));
                    }
                    channels = Some(cout);
                    params.push(Some(w));
                }
                LayerKind::Relu => {
                    if channels.is_none() {
                        return Err(Error::invalid("network must start with a conv layer"));
                    }
                    params.push(None);
                }
                LayerKind::MaxPool { window, stride } => {
                    if channels.is_none() {
                        return Err(Error::invalid("network must start with a conv layer"));
                    }
                    if window == 0 || stride == 0 {
                        return Err(Error::invalid(format!("pool `{}` has a zero extent", layer.name)));
                    }
                    params.push(None);
                }
            }
        }
        if convs.next().is_some() {
            return Err(Error::invalid("more weight tensors than conv layers"));
        }
        Ok(FeatureNetwork {
            layers,
            params,
            mean,
            scale,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn conv_weights(&self) -> impl Iterator<Item = (&LayerSpec, &ConvWeights)> {
        self.layers
            .iter()
            .zip(&self.params)
            .filter_map(|(l, p)| p.as_ref().map(|p| (l, p)))
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn input_channels(&self) -> usize {
        match self.layers[0].kind {
            LayerKind::Conv { cin, .. } => cin,
            _ => unreachable!("validated in new"),
        }
    }

    /// Index of the activation a loss term named `name` attaches to. A conv
    /// name refers to the output of the relu directly after it, if any.
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        let idx = self
            .layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_owned()))?;
        let follows_relu = matches!(self.layers[idx].kind, LayerKind::Conv { .. })
            && matches!(self.layers.get(idx + 1).map(|l| l.kind), Some(LayerKind::Relu));
        Ok(if follows_relu { idx + 1 } else { idx })
    }

    /// Shapes of every layer output for an `h x w` input image.
    pub fn output_shapes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize, usize)>> {
        self.prefix_shapes(h, w, self.layers.len())
    }

    /// Output shapes of the first `depth` layers only.
    pub fn prefix_shapes(&self, h: usize, w: usize, depth: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = (self.input_channels(), h, w);
        let mut out = Vec::with_capacity(depth);
        for layer in self.layers.iter().take(depth) {
            shape = match layer.kind {
                LayerKind::Conv {
                    kh,
                    kw,
                    cout,
                    stride,
                    same_pad,
                    ..
                } => {
                    if shape.1 < kh || shape.2 < kw {
                        return Err(Error::invalid(format!(
                            "{}x{} input too small for the {kh}x{kw} kernel of `{}`",
                            shape.1, shape.2, layer.name
                        )));
                    }
                    if same_pad {
                        (cout, shape.1.div_ceil(stride), shape.2.div_ceil(stride))
                    } else {
                        (cout, (shape.1 - kh) / stride + 1, (shape.2 - kw) / stride + 1)
                    }
                }
                LayerKind::Relu => shape,
                LayerKind::MaxPool { window, stride } => {
                    if shape.1 < window || shape.2 < window {
                        return Err(Error::invalid(format!(
                            "{}x{} input too small for pool `{}`",
                            shape.1, shape.2, layer.name
                        )));
                    }
                    (shape.0, (shape.1 - window) / stride + 1, (shape.2 - window) / stride + 1)
                }
            };
            out.push(shape);
        }
        Ok(out)
    }
}

/// Every layer output of one forward pass, plus what backward needs.
#[derive(Debug, Clone)]
pub struct Activations {
    input: FeatureMap,
    outputs: Vec<FeatureMap>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Activations {
    pub fn input(&self) -> &FeatureMap {
        &self.input
    }

    pub fn outputs(&self) -> &[FeatureMap] {
        &self.outputs
    }

    pub fn get(&self, idx: usize) -> &FeatureMap {
        &self.outputs[idx]
    }
}

/// Gradient seeds per layer output, indexed like [`FeatureNetwork::layers`].
pub type LayerSeeds = Vec<Option<FeatureMap>>;

/// Replicates the image across input channels, normalizes, and runs every
/// layer in order.
pub fn forward(net: &FeatureNetwork, img: &GrayImage) -> Result<Activations> {
    forward_prefix(net, img, net.layers.len())
}

/// Like [`forward`] but stops after the first `depth` layers.
pub fn forward_prefix(net: &FeatureNetwork, img: &GrayImage, depth: usize) -> Result<Activations> {
    let depth = depth.min(net.layers.len());
    let shapes = net.prefix_shapes(img.height(), img.width(), depth)?;
    let cin = net.input_channels();
    let plane: Vec<f64> = img.data().iter().map(|&v| (v - net.mean) * net.scale).collect();
    let mut data = Vec::with_capacity(cin * plane.len());
    for _ in 0..cin {
        data.extend_from_slice(&plane);
    }
    let input = FeatureMap::from_vec(cin, img.height(), img.width(), data)?;
    let mut outputs: Vec<FeatureMap> = Vec::with_capacity(net.layers.len());
    let mut argmax = Vec::with_capacity(net.layers.len());
    for (idx, layer) in net.layers.iter().enumerate().take(depth) {
        let x = outputs.last().unwrap_or(&input);
        let (y, am) = match layer.kind {
            LayerKind::Conv {
                kh,
                kw,
                stride,
                same_pad,
                ..
            } => {
                let p = net.params[idx].as_ref().expect("conv has weights");
                (conv_forward(x, p, kh, kw, stride, same_pad, shapes[idx]), None)
            }
            LayerKind::Relu => (
                FeatureMap {
                    data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                    ..*x
                },
                None,
            ),
            LayerKind::MaxPool { window, stride } => {
                let (y, am) = pool_forward(x, window, stride, shapes[idx]);
                (y, Some(am))
            }
        };
        outputs.push(y);
        argmax.push(am);
    }
    Ok(Activations { input, outputs, argmax })
}

/// Backpropagates `seeds` (one slot per computed layer) to the input image.
/// Each seed is added to the gradient flowing into its layer output.
pub fn backward(net: &FeatureNetwork, acts: &Activations, seeds: &[Option<FeatureMap>]) -> Result<GrayImage> {
    let depth = acts.outputs.len();
    if depth > net.layers.len() || seeds.len() != depth {
        return Err(Error::StaleTape("activations or seeds do not match the network"));
    }
    let shapes = net.prefix_shapes(acts.input.h, acts.input.w, depth)?;
    for (out, &shape) in acts.outputs.iter().zip(&shapes) {
        if out.shape() != shape {
            return Err(Error::StaleTape("activations were produced by a different network"));
        }
    }
    let mut grad: Option<FeatureMap> = None;
    for idx in (0..depth).rev() {
        if let Some(seed) = &seeds[idx] {
            seed.ensure_shape(shapes[idx], "gradient seed")?;
            match &mut grad {
                Some(g) => g.data.iter_mut().zip(&seed.data).for_each(|(a, b)| *a += b),
                None => grad = Some(seed.clone()),
            }
        }
        let Some(g) = grad.take() else { continue };
        let x = if idx == 0 { &acts.input } else { &acts.outputs[idx - 1] };
        grad = Some(match net.layers[idx].kind {
            LayerKind::Conv {
                kh,
                kw,
                stride,
                same_pad,
                ..
            } => {
                let p = net.params[idx].as_ref().expect("conv has weights");
                conv_backward(&g, p, kh, kw, stride, same_pad, x.shape())
            }
            LayerKind::Relu => FeatureMap {
                data: g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
                ..g
            },
            LayerKind::MaxPool { .. } => {
                let am = acts.argmax[idx].as_ref().expect("pool has argmax");
                let mut gx = FeatureMap::zeros(x.c, x.h, x.w);
                for (&src, &v) in am.iter().zip(&g.data) {
                    gx.data[src] += v;
                }
                gx
            }
        });
    }
    let (h, w) = (acts.input.h, acts.input.w);
    let mut out = GrayImage::zeros(h, w);
    if let Some(g) = grad {
        for ch in 0..g.c {
            for (o, v) in out.data_mut().iter_mut().zip(g.channel(ch)) {
                *o += v;
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v *= net.scale);
    }
    Ok(out)
}

fn pad_of(k: usize, same: bool) -> isize {
    if same {
        (k / 2) as isize
    } else {
        0
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `kk`.
fn tap_range(n_in: usize, n_out: usize, kk: usize, pad: isize, stride: usize) -> (usize, usize) {
    // Need 0 <= o*stride + kk - pad < n_in.
    let off = kk as isize - pad;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
    let hi_excl = n_in as isize - off;
    let hi = if hi_excl <= 0 {
        0
    } else {
        ((hi_excl as usize).div_ceil(stride)).min(n_out)
    };
    (lo, hi.max(lo))
}

fn conv_forward(
    x: &FeatureMap,
    p: &ConvWeights,
    kh: usize,
    kw: usize,
    stride: usize,
    same_pad: bool,
    (cout, oh, ow): (usize, usize, usize),
) -> FeatureMap {
    let (cin, ih, iw) = x.shape();
    let (ph, pw) = (pad_of(kh, same_pad), pad_of(kw, same_pad));
    let mut out = vec![0.0; cout * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(co, plane)| {
        plane.fill(p.bias[co]);
        for ci in 0..cin {
            let src = x.channel(ci);
            for ky in 0..kh {
                let (y0, y1) = tap_range(ih, oh, ky, ph, stride);
                for kx in 0..kw {
                    let wv = p.weights[((co * cin + ci) * kh + ky) * kw + kx];
                    let (x0, x1) = tap_range(iw, ow, kx, pw, stride);
                    for oy in y0..y1 {
                        let iy = (oy * stride + ky) as isize - ph;
                        let row = &src[iy as usize * iw..];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            let ix = ((ox * stride + kx) as isize - pw) as usize;
                            dst[ox] += wv * row[ix];
                        }
                    }
                }
            }
        }
    });
    FeatureMap {
        c: cout,
        h: oh,
        w: ow,
        data: out,
    }
}

fn conv_backward(
    g: &FeatureMap,
    p: &ConvWeights,
    kh: usize,
    kw: usize,
    stride: usize,
    same_pad: bool,
    (cin, ih, iw): (usize, usize, usize),
) -> FeatureMap {
    let (cout, oh, ow) = g.shape();
    let (ph, pw) = (pad_of(kh, same_pad), pad_of(kw, same_pad));
    let mut out = vec![0.0; cin * ih * iw];
    out.par_chunks_mut(ih * iw).enumerate().for_each(|(ci, plane)| {
        for co in 0..cout {
            let src = g.channel(co);
            for ky in 0..kh {
                let (y0, y1) = tap_range(ih, oh, ky, ph, stride);
                for kx in 0..kw {
                    let wv = p.weights[((co * cin + ci) * kh + ky) * kw + kx];
                    let (x0, x1) = tap_range(iw, ow, kx, pw, stride);
                    for oy in y0..y1 {
                        let iy = ((oy * stride + ky) as isize - ph) as usize;
                        let grow = &src[oy * ow..(oy + 1) * ow];
                        let dst = &mut plane[iy * iw..(iy + 1) * iw];
                        for ox in x0..x1 {
                            let ix = ((ox * stride + kx) as isize - pw) as usize;
                            dst[ix] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
    FeatureMap {
        c: cin,
        h: ih,
        w: iw,
        data: out,
    }
}

fn pool_forward(x: &FeatureMap, window: usize, stride: usize, (c, oh, ow): (usize, usize, usize)) -> (FeatureMap, Vec<usize>) {
    let mut data = Vec::with_capacity(c * oh * ow);
    let mut am = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = (ch * x.h + oy * stride + dy) * x.w + ox * stride + dx;
                        // Strict comparison keeps the first maximum in scan order.
                        if x.data[i] > best {
                            best = x.data[i];
                            arg = i;
                        }
                    }
                }
                data.push(best);
                am.push(arg);
            }
        }
    }
    (FeatureMap { c, h: oh, w: ow, data }, am)
}
