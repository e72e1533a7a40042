//! Classifier contract and the reference CNN.
//!
//! A backbone maps an [`ImageBatch`] to logits and exposes the activations
//! of its last convolutional stage ([`FeatureMapStack`]) together with the
//! gradient of any class score with respect to those activations. The
//! reference network is `widths.len()` blocks of 3x3 convolution, rectifier
//! and 2x2 max pooling followed by a [`HeadKind`] classifier.

mod checkpoint;
mod head;
mod layers;
pub(crate) mod linalg;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use head::HeadKind;
pub(crate) use head::HeadTrace;

use crate::error::{arg_err, config_err, Result};
use crate::par;

/// Images in CHW layout, values in `[0, 1]`, plus one class label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pixels: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl ImageBatch {
    pub fn new(
        pixels: Vec<f64>,
        channels: usize,
        height: usize,
        width: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return arg_err(format!(
                "batch of {} labels needs {} pixels, got {}",
                labels.len(),
                per * labels.len(),
                pixels.len()
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return arg_err(format!("pixel value {p} outside [0, 1]"));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return arg_err(format!("label {l} outside [0, {num_classes})"));
        }
        Ok(Self {
            pixels,
            channels,
            height,
            width,
            labels,
        })
    }

    /// Same labels and geometry with new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != self.pixels.len() {
            return arg_err(format!("expected {} pixels, got {}", self.pixels.len(), pixels.len()));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return arg_err("pixel values must be finite and within [0, 1]");
        }
        Ok(Self { pixels, ..self.clone() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(H, W)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let per = self.channels * self.height * self.width;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// Last-stage activations, `batch x d x u x v`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    pub data: Vec<f64>,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureMapStack {
    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.channels * self.height * self.width;
        &self.data[i * per..(i + 1) * per]
    }

    pub fn channel(&self, i: usize, k: usize) -> &[f64] {
        let z = self.height * self.width;
        &self.sample(i)[k * z..(k + 1) * z]
    }

    /// Pooling normaliser `u * v`.
    pub fn z(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
    /// Output channels of each convolution block.
    pub widths: Vec<usize>,
    pub head: HeadKind,
}

impl BackboneConfig {
    /// Three blocks of widths 16/32/64 and a GAP-linear head.
    pub fn reference(input_channels: usize, input_size: usize, num_classes: usize) -> Self {
        Self {
            input_channels,
            input_size,
            num_classes,
            widths: vec![16, 32, 64],
            head: HeadKind::GapLinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.num_classes < 2 {
            return config_err("backbone needs at least one input channel and two classes");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return config_err("backbone needs at least one non-empty convolution block");
        }
        let step = 1usize << self.widths.len();
        if self.input_size == 0 || self.input_size % step != 0 {
            return config_err(format!(
                "input size {} is not divisible by {step} ({} pooling stages)",
                self.input_size,
                self.widths.len()
            ));
        }
        if let HeadKind::Mlp { hidden } = &self.head {
            if hidden.contains(&0) {
                return config_err("MLP head hidden widths must be positive");
            }
        }
        Ok(())
    }

    /// Channel count `d` of the feature map.
    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("validated config has widths")
    }

    /// Spatial side `u = v` of the feature map.
    pub fn feature_size(&self) -> usize {
        self.input_size >> self.widths.len()
    }

    fn feature_len(&self) -> usize {
        self.feature_channels() * self.feature_size() * self.feature_size()
    }
}

/// A named parameter array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameter gradients, index-aligned with [`Backbone::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(backbone: &Backbone) -> Self {
        Self(backbone.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

struct BlockTrace {
    cols: Vec<f64>,
    active: Vec<bool>,
    pool_arg: Vec<u32>,
}

/// Everything one sample's forward pass keeps for backpropagation.
pub(crate) struct SampleTrace {
    blocks: Vec<BlockTrace>,
    pub features: Vec<f64>,
    pub head: HeadTrace,
    pub logits: Vec<f64>,
}

/// Reference CNN.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    params: Vec<Param>,
}

impl Backbone {
    /// Fresh network with seeded uniform fan-in initialization: bound
    /// `sqrt(6 / fan_in)` ahead of rectifiers, `1 / sqrt(fan_in)` for the
    /// output layer, zero biases.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut in_ch = config.input_channels;
        for (l, &out) in config.widths.iter().enumerate() {
            let fan_in = in_ch * layers::TAPS;
            let bound = (6.0 / fan_in as f64).sqrt();
            params.push(Param {
                name: format!("conv{}.weight", l + 1),
                shape: vec![out, in_ch, layers::KERNEL, layers::KERNEL],
                data: (0..out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect(),
            });
            params.push(Param {
                name: format!("conv{}.bias", l + 1),
                shape: vec![out],
                data: vec![0.0; out],
            });
            in_ch = out;
        }
        let fs = config.feature_size();
        let shapes = head::layer_shapes(&config.head, config.feature_channels(), fs * fs, config.num_classes);
        let names = head::layer_names(&config.head);
        let last = shapes.len() - 1;
        for (l, ((out, fan_in), name)) in shapes.into_iter().zip(names).enumerate() {
            let bound = if l == last {
                1.0 / (fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            params.push(Param {
                name: format!("{name}.weight"),
                shape: vec![out, fan_in],
                data: (0..out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect(),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                shape: vec![out],
                data: vec![0.0; out],
            });
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a backbone from a configuration and parameter list, checking
    /// names and shapes against a freshly initialized network.
    pub fn from_params(config: BackboneConfig, params: Vec<Param>) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(crate::CareError::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.shape != p.shape || t.data.len() != p.data.len() {
                return Err(crate::CareError::Checkpoint(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    p.name, p.shape, t.name, t.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    fn head_params(&self) -> &[Param] {
        &self.params[2 * self.config.widths.len()..]
    }

    fn check_batch(&self, batch: &ImageBatch) -> Result<()> {
        let c = &self.config;
        if batch.channels != c.input_channels || batch.height != c.input_size || batch.width != c.input_size {
            return config_err(format!(
                "batch shape {}x{}x{} does not match backbone input {}x{}x{}",
                batch.channels, batch.height, batch.width, c.input_channels, c.input_size, c.input_size
            ));
        }
        Ok(())
    }

    /// Forward pass of one CHW image, keeping what backward needs.
    pub(crate) fn trace(&self, image: &[f64]) -> SampleTrace {
        let c = &self.config;
        let mut x = image.to_vec();
        let mut ch = c.input_channels;
        let mut size = c.input_size;
        let mut blocks = Vec::with_capacity(c.widths.len());
        for (l, &out) in c.widths.iter().enumerate() {
            let cols = layers::im2col(&x, ch, size, size);
            let mut y = layers::conv_forward(&self.params[2 * l].data, &self.params[2 * l + 1].data, &cols, size * size);
            let active: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
            layers::relu_inplace(&mut y);
            let (pooled, pool_arg) = layers::maxpool2(&y, out, size, size);
            blocks.push(BlockTrace { cols, active, pool_arg });
            x = pooled;
            ch = out;
            size /= 2;
        }
        let (logits, head) = head::forward(&c.head, self.head_params(), &x, ch);
        SampleTrace {
            blocks,
            features: x,
            head,
            logits,
        }
    }

    /// Backpropagates `dlogits` (and an optional extra feature gradient)
    /// through the whole network, accumulating into `grads`.
    pub(crate) fn backward(&self, trace: &SampleTrace, dlogits: &[f64], extra_dfeatures: Option<&[f64]>, grads: &mut Gradients) {
        let c = &self.config;
        let nb = c.widths.len();
        let d = c.feature_channels();
        let mut dx = head::backward(self.head_params(), &trace.head, dlogits, trace.features.len(), d, &mut grads.0[2 * nb..]);
        if let Some(extra) = extra_dfeatures {
            for (a, b) in dx.iter_mut().zip(extra) {
                *a += b;
            }
        }
        for l in (0..nb).rev() {
            let out = c.widths[l];
            let size = c.input_size >> l;
            let in_ch = if l == 0 { c.input_channels } else { c.widths[l - 1] };
            let block = &trace.blocks[l];
            let mut dy = layers::maxpool2_backward(&dx, &block.pool_arg, out * size * size);
            for (g, &a) in dy.iter_mut().zip(&block.active) {
                if !a {
                    *g = 0.0;
                }
            }
            let (dw, rest) = grads.0[2 * l..].split_at_mut(1);
            let dcols = layers::conv_backward(&self.params[2 * l].data, &block.cols, &dy, size * size, &mut dw[0], &mut rest[0], l > 0);
            if let Some(dcols) = dcols {
                dx = layers::col2im(&dcols, in_ch, size, size);
            }
        }
    }

    pub(crate) fn trace_score_gradient(&self, trace: &SampleTrace, class: usize) -> Vec<f64> {
        head::score_gradient(self.head_params(), &trace.head, class, trace.features.len(), self.config.feature_channels())
    }

    pub(crate) fn trace_score_gradient_vjp(&self, trace: &SampleTrace, class: usize, dgrad: &[f64], grads: &mut Gradients) {
        let nb = self.config.widths.len();
        head::score_gradient_vjp(
            self.head_params(),
            &trace.head,
            class,
            dgrad,
            self.config.feature_channels(),
            &mut grads.0[2 * nb..],
        );
    }

    /// Logits and last-stage features for every image of the batch.
    pub fn forward(&self, batch: &ImageBatch) -> Result<BackboneOutput<'_>> {
        self.check_batch(batch)?;
        let traces = par::map_indices(batch.len(), |i| {
            let t = self.trace(batch.image(i));
            (t.logits, t.features, t.head)
        });
        let c = &self.config;
        let fs = c.feature_size();
        let mut logits = Vec::with_capacity(batch.len());
        let mut data = Vec::with_capacity(batch.len() * c.feature_len());
        let mut heads = Vec::with_capacity(batch.len());
        for (l, f, h) in traces {
            logits.push(l);
            data.extend_from_slice(&f);
            heads.push(h);
        }
        Ok(BackboneOutput {
            backbone: self,
            logits,
            features: FeatureMapStack {
                data,
                batch: batch.len(),
                channels: c.feature_channels(),
                height: fs,
                width: fs,
            },
            heads,
        })
    }

    /// Convenience: logits only.
    pub fn predict(&self, batch: &ImageBatch) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(batch)?.logits)
    }
}

/// Result of [`Backbone::forward`]: logits, features and enough state to
/// differentiate any class score with respect to the features.
pub struct BackboneOutput<'a> {
    backbone: &'a Backbone,
    pub logits: Vec<Vec<f64>>,
    pub features: FeatureMapStack,
    heads: Vec<HeadTrace>,
}

impl BackboneOutput<'_> {
    pub fn num_classes(&self) -> usize {
        self.backbone.config.num_classes
    }

    pub fn batch_len(&self) -> usize {
        self.logits.len()
    }

    /// `dY^c / dA` for every batch element, laid out like the features.
    pub fn class_score_gradient(&self, class_index: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.features.data.len());
        for i in 0..self.batch_len() {
            out.extend(self.sample_score_gradient(i, class_index)?);
        }
        Ok(out)
    }

    /// `dY^c / dA` for one batch element.
    pub fn sample_score_gradient(&self, sample: usize, class_index: usize) -> Result<Vec<f64>> {
        if class_index >= self.num_classes() {
            return arg_err(format!("class index {class_index} outside [0, {})", self.num_classes()));
        }
        if sample >= self.batch_len() {
            return arg_err(format!("sample index {sample} outside batch of {}", self.batch_len()));
        }
        let b = self.backbone;
        Ok(head::score_gradient(
            b.head_params(),
            &self.heads[sample],
            class_index,
            self.features.sample(sample).len(),
            b.config.feature_channels(),
        ))
    }
}
